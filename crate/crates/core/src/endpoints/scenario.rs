//! One-shot simulated fetches: a server host, one client and the network
//! simulator wired together from a single seed.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::crypto::{CryptoError, DhParams};
use crate::token::AckToken;
use crate::transport::{
    NetConditions, SimError, SimOutcome, Simulator, SplitMix64, DEFAULT_EVENT_BUDGET,
};
use crate::wire::{
    ClientConfig, ClientDriver, ClientSession, FetchReport, MemoryCatalog, Outcome, ServerHost,
    SessionConfig, TokenPolicy,
};

const CONTENT_NAME: &str = "content";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Honest,
    /// Never sends a token.
    NoToken,
    /// Presents tokens captured from its own earlier, separate session.
    Replay,
    /// Presents window 0's token again in the same session.
    ReplayOwn,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "honest" => Ok(Self::Honest),
            "no-token" => Ok(Self::NoToken),
            "replay" => Ok(Self::Replay),
            "replay-own" => Ok(Self::ReplayOwn),
            other => Err(format!(
                "unknown role {other:?} (honest, no-token, replay, replay-own)"
            )),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("client key generation failed: {0}")]
    Keygen(#[from] CryptoError),
    #[error("invalid session config: {0}")]
    Config(#[from] crate::wire::ConfigError),
    #[error("token capture session ended {0}")]
    Capture(Outcome),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub content: Vec<u8>,
    pub conditions: NetConditions,
    pub session: SessionConfig,
    pub client: ClientConfig,
    pub dh: DhParams,
    pub role: Role,
    /// Drives server and client secrets; the network uses `conditions.seed`.
    pub seed: u64,
    pub event_budget: u64,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub sim: SimOutcome,
    /// Bytes the client delivered to its sink.
    pub output: Vec<u8>,
    pub content_sha256: [u8; 32],
    pub captured_tokens: usize,
}

impl ScenarioOutcome {
    pub fn report(&self) -> &FetchReport {
        &self.sim.report
    }

    /// Distinct content bytes that reached the client.
    pub fn leaked_bytes(&self) -> u64 {
        self.sim.report.bytes_received
    }

    pub fn output_matches(&self) -> bool {
        Sha256::digest(&self.output).as_slice() == self.content_sha256
    }
}

impl Scenario {
    /// Honest fetch of `content` over a perfect network, everything seeded
    /// from `seed`.
    pub fn new(content: Vec<u8>, seed: u64) -> Self {
        Self {
            content,
            conditions: NetConditions {
                seed,
                ..NetConditions::default()
            },
            session: SessionConfig::default(),
            client: ClientConfig::default(),
            dh: DhParams::default(),
            role: Role::Honest,
            seed,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }

    pub fn conditions(mut self, conditions: NetConditions) -> Self {
        self.conditions = conditions;
        self
    }

    pub fn session(mut self, session: SessionConfig) -> Self {
        self.session = session;
        self
    }

    pub fn client(mut self, client: ClientConfig) -> Self {
        self.client = client;
        self
    }

    pub fn role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn run(&self) -> Result<ScenarioOutcome, ScenarioError> {
        self.session.validate()?;
        let mut seeds = SplitMix64::new(self.seed);
        let server_seed = seeds.next_u64();
        let client_seed = seeds.next_u64();
        let capture_seed = seeds.next_u64();

        let (policy, captured_tokens) = match self.role {
            Role::Honest => (TokenPolicy::Honest, 0),
            Role::NoToken => (TokenPolicy::Withhold, 0),
            Role::ReplayOwn => (TokenPolicy::ReplayOwn, 0),
            Role::Replay => {
                let tokens = self.capture(capture_seed)?;
                let n = tokens.len();
                (TokenPolicy::Replay(tokens), n)
            }
        };

        let mut host = self.host(server_seed);
        let session = ClientSession::new(
            CONTENT_NAME,
            self.client.clone(),
            self.dh.clone(),
            policy,
            client_seed,
        )?;
        let mut driver = ClientDriver::new(session, Vec::new());
        let sim = Simulator::new(self.conditions.clone())?
            .with_budget(self.event_budget)
            .run(&mut host, &mut driver)?;
        Ok(ScenarioOutcome {
            sim,
            output: driver.into_sink(),
            content_sha256: Sha256::digest(&self.content).into(),
            captured_tokens,
        })
    }

    fn host(&self, seed: u64) -> ServerHost<()> {
        let catalog = MemoryCatalog::new().with(CONTENT_NAME, self.content.clone());
        ServerHost::new(
            self.session.clone(),
            self.dh.clone(),
            Arc::new(catalog),
            seed,
        )
    }

    /// An honest, lossless session of the attacker's own against a separate
    /// server instance; returns every token it was entitled to.
    fn capture(&self, seed: u64) -> Result<Vec<AckToken>, ScenarioError> {
        let mut host = self.host(seed);
        let session = ClientSession::new(
            CONTENT_NAME,
            self.client.clone(),
            self.dh.clone(),
            TokenPolicy::Honest,
            seed ^ 1,
        )?;
        let mut driver = ClientDriver::new(session, std::io::sink());
        let conditions = NetConditions {
            seed,
            ..NetConditions::default()
        };
        let outcome = Simulator::new(conditions)?
            .with_budget(self.event_budget)
            .run(&mut host, &mut driver)?;
        if outcome.report.outcome != Outcome::Done {
            return Err(ScenarioError::Capture(outcome.report.outcome));
        }
        let windows = driver.session().metafile().map_or(0, |m| m.window_count());
        Ok(driver.session().genuine_tokens(windows))
    }
}
