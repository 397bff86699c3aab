//! Datagram delivery: a deterministic simulator and a UDP socket.

mod fate;
mod sim;
mod udp;

pub use fate::SplitMix64;
pub use sim::{
    sim_run, Direction, Fate, NetConditions, SimError, SimEvent, SimOutcome, SimStats, Simulator,
    DEFAULT_EVENT_BUDGET, REORDER_EXTRA_MAX_MS,
};
pub use udp::{Received, TransportError, UdpEndpoint};
