//! Setting lookup across command-line flags, `SVSP_*` environment variables
//! and an optional `key=value` file, in that order of precedence.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const ENV_PREFIX: &str = "SVSP_";

/// Every key accepted in the environment or a config file.
pub const KNOWN_KEYS: &[&str] = &[
    "bind",
    "root",
    "chunk_size",
    "window_size",
    "token_timeout_ms",
    "max_pokes",
    "log",
    "seed",
    "server",
    "name",
    "out",
    "rsa_bits",
    "loss_prob",
    "reorder_prob",
    "duplicate_prob",
    "corrupt_prob",
    "delay_ms",
    "size",
];

#[derive(Debug, Default)]
pub struct Layers {
    env: BTreeMap<String, String>,
    file: BTreeMap<String, String>,
}

impl Layers {
    pub fn load(
        config: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut layers = Self::default();
        for (var, value) in env {
            let Some(key) = var.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("unknown environment setting {var}");
            }
            layers.env.insert(key, value);
        }
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            layers.file =
                parse_file(&text).with_context(|| format!("in config {}", path.display()))?;
        }
        Ok(layers)
    }

    fn raw(&self, key: &str) -> Option<(&str, &'static str)> {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key} missing from KNOWN_KEYS");
        if let Some(v) = self.env.get(key) {
            return Some((v, "environment"));
        }
        self.file.get(key).map(|v| (v.as_str(), "config file"))
    }

    /// `flag` if given, else the environment, else the config file.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.raw(key) {
            None => Ok(None),
            Some((raw, source)) => raw
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("{key} from {source}: invalid value {raw:?}: {e}")),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(flag, key)?.ok_or_else(|| {
            anyhow!(
                "missing {key}: pass --{}, set {ENV_PREFIX}{} or add it to the config file",
                key.replace('_', "-"),
                key.to_ascii_uppercase()
            )
        })
    }
}

fn parse_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value", n + 1))?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            bail!("line {}: unknown key {key:?}", n + 1);
        }
        if out
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            bail!("line {}: {key} set twice", n + 1);
        }
    }
    Ok(out)
}

/// `MIN:MAX` milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayRange(pub u64, pub u64);

impl FromStr for DelayRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s.split_once(':').ok_or("expected MIN:MAX")?;
        let lo: u64 = lo.trim().parse().map_err(|e| format!("min: {e}"))?;
        let hi: u64 = hi.trim().parse().map_err(|e| format!("max: {e}"))?;
        if lo > hi {
            return Err(format!("min {lo} exceeds max {hi}"));
        }
        Ok(Self(lo, hi))
    }
}
