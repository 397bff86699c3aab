//! Deterministic in-process network between one client and a server host.
//!
//! Time is virtual (milliseconds from 0). Every datagram handed to the
//! network draws exactly eight values from a [`SplitMix64`] stream seeded
//! with `NetConditions::seed`, in this order:
//!
//! 1. loss draw (`f64`), dropped when `< loss_prob`
//! 2. base delay, `min + below(max - min + 1)`
//! 3. reorder draw (`f64`), reordered when `< reorder_prob`
//! 4. reorder extra delay, `1 + below(REORDER_EXTRA_MAX_MS)`
//! 5. duplicate draw (`f64`), duplicated when `< duplicate_prob`
//! 6. duplicate copy delay, `min + below(max - min + 1)`
//! 7. corruption draw (`f64`), corrupted when `< corrupt_prob`
//! 8. corrupted bit index, `below(8 * len)`
//!
//! Draws are consumed even when unused so the stream position depends only
//! on the number of datagrams sent. At equal virtual times, deliveries run
//! first (in submission order), then server timers, then client timers.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::fate::SplitMix64;
use crate::wire::{ClientDriver, ClosedSession, FetchReport, ServerHost};

/// Upper bound of the extra delay given to a reordered datagram.
pub const REORDER_EXTRA_MAX_MS: u64 = 50;
pub const DEFAULT_EVENT_BUDGET: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConditions {
    pub loss_prob: f64,
    pub reorder_prob: f64,
    pub duplicate_prob: f64,
    /// Bit-flip injection; off unless set.
    pub corrupt_prob: f64,
    pub delay_ms: (u64, u64),
    pub seed: u64,
}

impl Default for NetConditions {
    fn default() -> Self {
        Self {
            loss_prob: 0.0,
            reorder_prob: 0.0,
            duplicate_prob: 0.0,
            corrupt_prob: 0.0,
            delay_ms: (0, 0),
            seed: 0,
        }
    }
}

impl NetConditions {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, p) in [
            ("loss_prob", self.loss_prob),
            ("reorder_prob", self.reorder_prob),
            ("duplicate_prob", self.duplicate_prob),
            ("corrupt_prob", self.corrupt_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidConditions(format!(
                    "{name} = {p} outside [0, 1]"
                )));
            }
        }
        if self.delay_ms.0 > self.delay_ms.1 {
            return Err(SimError::InvalidConditions(format!(
                "delay range {}:{} has min > max",
                self.delay_ms.0, self.delay_ms.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid network conditions: {0}")]
    InvalidConditions(String),
    #[error("event budget of {0} exhausted before the client finished")]
    BudgetExceeded(u64),
    #[error("simulation stalled at {0} ms with the client unfinished and nothing scheduled")]
    Stalled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "c2s")]
    ClientToServer,
    #[serde(rename = "s2c")]
    ServerToClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    Delivered,
    Dropped,
    Duplicated,
}

/// One line of the trace: a datagram and what the network did with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    /// When the datagram was handed to the network.
    pub virtual_time_ms: u64,
    /// When this copy reaches its destination; absent when dropped.
    pub deliver_at_ms: Option<u64>,
    pub datagram_id: u64,
    pub direction: Direction,
    pub fate: Fate,
    pub corrupted: bool,
    #[serde(with = "hex_bytes")]
    pub datagram: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    pub datagrams: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub duplicated: u64,
    pub corrupted: u64,
    pub events: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: Vec<SimEvent>,
    pub stats: SimStats,
    pub end_time_ms: u64,
    pub report: FetchReport,
    pub server_sessions: Vec<ClosedSession>,
}

impl SimOutcome {
    /// Trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.trace {
            out += &serde_json::to_string(event).expect("trace events serialize");
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct InFlight {
    at: u64,
    order: u64,
    direction: Direction,
    datagram: Vec<u8>,
}

pub struct Simulator {
    conditions: NetConditions,
    rng: SplitMix64,
    queue: BinaryHeap<Reverse<InFlight>>,
    trace: Vec<SimEvent>,
    stats: SimStats,
    next_id: u64,
    next_order: u64,
    budget: u64,
}

impl Simulator {
    pub fn new(conditions: NetConditions) -> Result<Self, SimError> {
        conditions.validate()?;
        Ok(Self {
            rng: SplitMix64::new(conditions.seed),
            conditions,
            queue: BinaryHeap::new(),
            trace: Vec::new(),
            stats: SimStats::default(),
            next_id: 0,
            next_order: 0,
            budget: DEFAULT_EVENT_BUDGET,
        })
    }

    pub fn with_budget(mut self, events: u64) -> Self {
        self.budget = events;
        self
    }

    fn delay(&mut self) -> u64 {
        let (lo, hi) = self.conditions.delay_ms;
        lo + self.rng.below(hi - lo + 1)
    }

    fn submit(&mut self, now: u64, direction: Direction, datagram: Vec<u8>) {
        let id = self.next_id;
        self.next_id += 1;
        self.stats.datagrams += 1;

        let lost = self.rng.next_f64() < self.conditions.loss_prob;
        let mut delay = self.delay();
        let reordered = self.rng.next_f64() < self.conditions.reorder_prob;
        let extra = 1 + self.rng.below(REORDER_EXTRA_MAX_MS);
        let duplicated = self.rng.next_f64() < self.conditions.duplicate_prob;
        let dup_delay = self.delay();
        let corrupted = self.rng.next_f64() < self.conditions.corrupt_prob && !datagram.is_empty();
        let bit = self.rng.below(8 * datagram.len() as u64);

        if lost {
            self.stats.dropped += 1;
            self.trace.push(SimEvent {
                virtual_time_ms: now,
                deliver_at_ms: None,
                datagram_id: id,
                direction,
                fate: Fate::Dropped,
                corrupted: false,
                datagram,
            });
            return;
        }
        if reordered {
            delay += extra;
        }
        let mut copies = vec![(Fate::Delivered, now + delay)];
        if duplicated {
            copies.push((Fate::Duplicated, now + dup_delay));
        }
        for (fate, at) in copies {
            let mut wire = datagram.clone();
            if corrupted {
                wire[(bit / 8) as usize] ^= 1 << (bit % 8);
            }
            match fate {
                Fate::Duplicated => self.stats.duplicated += 1,
                _ => self.stats.delivered += 1,
            }
            if corrupted {
                self.stats.corrupted += 1;
            }
            self.trace.push(SimEvent {
                virtual_time_ms: now,
                deliver_at_ms: Some(at),
                datagram_id: id,
                direction,
                fate,
                corrupted,
                datagram: datagram.clone(),
            });
            let order = self.next_order;
            self.next_order += 1;
            self.queue.push(Reverse(InFlight {
                at,
                order,
                direction,
                datagram: wire,
            }));
        }
    }

    /// Runs until the client reaches a terminal state and the network is
    /// empty.
    pub fn run<W: Write>(
        mut self,
        server: &mut ServerHost<()>,
        client: &mut ClientDriver<W>,
    ) -> Result<SimOutcome, SimError> {
        let mut now = 0u64;
        for datagram in client.start(now) {
            self.submit(now, Direction::ClientToServer, datagram);
        }
        loop {
            if client.is_finished() && self.queue.is_empty() {
                break;
            }
            let next_delivery = self.queue.peek().map(|Reverse(f)| f.at);
            let candidates = [
                next_delivery,
                server.next_deadline(),
                client.next_deadline(),
            ];
            let Some(next) = candidates.iter().flatten().copied().min() else {
                if client.is_finished() {
                    break;
                }
                return Err(SimError::Stalled(now));
            };
            self.stats.events += 1;
            if self.stats.events > self.budget {
                return Err(SimError::BudgetExceeded(self.budget));
            }
            now = now.max(next);
            if next_delivery == Some(next) {
                let Reverse(flight) = self.queue.pop().expect("peeked");
                match flight.direction {
                    Direction::ClientToServer => {
                        for ((), reply) in server.handle_datagram(now, (), &flight.datagram) {
                            self.submit(now, Direction::ServerToClient, reply);
                        }
                    }
                    Direction::ServerToClient => {
                        for reply in client.handle_datagram(now, &flight.datagram) {
                            self.submit(now, Direction::ClientToServer, reply);
                        }
                    }
                }
            } else if server.next_deadline() == Some(next) {
                for ((), out) in server.handle_timeout(now) {
                    self.submit(now, Direction::ServerToClient, out);
                }
            } else {
                for out in client.handle_timeout(now) {
                    self.submit(now, Direction::ClientToServer, out);
                }
            }
        }
        Ok(SimOutcome {
            trace: self.trace,
            stats: self.stats,
            end_time_ms: now,
            report: client.report(),
            server_sessions: server.all_sessions(),
        })
    }
}

/// Runs one client against `server` under `conditions` with the default
/// event budget.
pub fn sim_run<W: Write>(
    server: &mut ServerHost<()>,
    client: &mut ClientDriver<W>,
    conditions: &NetConditions,
) -> Result<SimOutcome, SimError> {
    Simulator::new(conditions.clone())?.run(server, client)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conditions_validated() {
        assert!(NetConditions::default().validate().is_ok());
        for bad in [
            NetConditions {
                loss_prob: 1.5,
                ..NetConditions::default()
            },
            NetConditions {
                reorder_prob: -0.1,
                ..NetConditions::default()
            },
            NetConditions {
                duplicate_prob: f64::NAN,
                ..NetConditions::default()
            },
            NetConditions {
                delay_ms: (5, 4),
                ..NetConditions::default()
            },
        ] {
            assert!(matches!(
                Simulator::new(bad),
                Err(SimError::InvalidConditions(_))
            ));
        }
    }

    #[test]
    fn trace_line_schema() {
        let event = SimEvent {
            virtual_time_ms: 12,
            deliver_at_ms: Some(15),
            datagram_id: 3,
            direction: Direction::ServerToClient,
            fate: Fate::Duplicated,
            corrupted: false,
            datagram: vec![0x53, 0x56, 0x01],
        };
        let line = serde_json::to_string(&event).unwrap();
        assert_eq!(
            line,
            r#"{"virtual_time_ms":12,"deliver_at_ms":15,"datagram_id":3,"direction":"s2c","fate":"duplicated","corrupted":false,"datagram":"535601"}"#
        );
        assert_eq!(serde_json::from_str::<SimEvent>(&line).unwrap(), event);
    }

    #[test]
    fn draws_per_datagram_fixed() {
        // eight draws per datagram whatever the fate
        let mut sim = Simulator::new(NetConditions {
            loss_prob: 0.5,
            seed: 1,
            ..NetConditions::default()
        })
        .unwrap();
        for _ in 0..10 {
            sim.submit(0, Direction::ClientToServer, vec![1, 2, 3]);
        }
        let mut reference = SplitMix64::new(1);
        for _ in 0..80 {
            reference.next_u64();
        }
        assert_eq!(sim.rng, reference);
        assert_eq!(sim.stats.dropped + sim.stats.delivered, 10);
    }

    #[test]
    fn equal_times_deliver_in_submission_order() {
        let mut sim = Simulator::new(NetConditions::default()).unwrap();
        for i in 0..5u8 {
            sim.submit(7, Direction::ClientToServer, vec![i]);
        }
        let order: Vec<u8> =
            std::iter::from_fn(|| sim.queue.pop().map(|Reverse(f)| f.datagram[0])).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }
}
