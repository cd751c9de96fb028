use thiserror::Error;

use crate::simnet::{ClientId, VirtualTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("belief theta must lie in [0, 1], got {0}")]
    InvalidBelief(f64),

    #[error("payoff parameter {name} must be strictly positive, got {value}")]
    InvalidPayoff { name: &'static str, value: f64 },

    #[error("coin probability must lie in [0, 1], got {0}")]
    InvalidCoin(f64),

    #[error("invalid timing: {0}")]
    InvalidTiming(String),

    #[error("delay {delay} exceeds channel bound {bound}")]
    DelayBound { delay: u64, bound: u64 },

    #[error("timer at {fire_at} is in the past (now {now})")]
    TimerInPast { fire_at: VirtualTime, now: VirtualTime },

    #[error("client {client} invoked an operation at {at} while another is in progress")]
    ClientBusy { client: ClientId, at: VirtualTime },

    #[error("livelock: more than {limit} events processed at tick {tick}")]
    Livelock { tick: VirtualTime, limit: usize },

    #[error("scenario rejected: {0}")]
    Scenario(String),

    #[error("trace parse error at line {line}: {reason}")]
    TraceParse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
