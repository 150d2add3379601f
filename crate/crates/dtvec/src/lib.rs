//! Digital-twin vehicular edge computing network simulator and trainer.
//!
//! The crate models a fleet of vehicles that each generate several computing
//! tasks per time slot. A cloud-side digital twin decides, per task, how much
//! work to offload to an edge server over a V2I uplink and how much server
//! capacity to reserve for it; the twin's capacity estimate carries a signed
//! error that biases the resulting edge delay. On top of the slot-level
//! simulator sit a centralized-training/decentralized-execution multi-agent
//! actor-critic trainer, reference policies, and an exact grid-search oracle
//! for the underlying single-slot allocation problem.

pub mod baselines;
pub mod channel;
pub mod config_io;
pub mod delay;
pub mod env;
pub mod error;
pub mod marl;
pub mod oracle;
pub mod scenario;

pub use error::{Error, Result};
