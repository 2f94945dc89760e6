//! Simulation of entanglement-based QKD sessions fed by a multiphoton-absorption
//! (MPA) source that mimics quantum correlations with classical polarized pulses.
//!
//! The crate pairs an exact numerical [`oracle`] with a seeded Monte Carlo
//! [`protocol`] engine, plus Eve's key reconstruction ([`eve`]) and the
//! monitors that can expose the attack ([`countermeasures`]).

pub mod countermeasures;
pub mod detection;
pub mod error;
pub mod eve;
pub mod oracle;
pub mod polarization;
pub mod protocol;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod source;

pub use error::{Error, Result};
pub use oracle::{AttackOrder, ChshAngles, OracleReport};
pub use polarization::{AbsorptionOrder, Angle, Arm, Channel};
pub use protocol::{run_session, Protocol, ProtocolConfig, Session, SessionStats, SessionSummary};
pub use source::{MpaSource, SourceConfig, SourceMode};
