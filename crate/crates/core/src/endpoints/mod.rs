//! Runnable roles: the UDP server, the honest client, the attacker
//! harnesses and their simulated counterparts.

mod client;
mod scenario;
mod server;
mod store;

pub use client::{
    attack_contained, attack_no_token, attack_replay, capture_tokens, fetch, fetch_with,
    run_session, FetchError, FetchOptions,
};
pub use scenario::{Role, Scenario, ScenarioError, ScenarioOutcome};
pub use server::{serve, ServeError, Server, ServerConfig};
pub use store::ContentStore;
