//! Budget-constrained multi-item auctions: valuations, simple per-item
//! auctions and VCG, liquid welfare, and brute-force equilibrium search on
//! bid grids.

pub mod config;
pub mod constructions;
pub mod equilibrium;
pub mod error;
pub mod experiment;
pub mod io;
pub mod mechanism;
pub mod random;
pub mod valuations;
pub mod vcg;
pub mod welfare;

pub use config::{Limits, DEFAULT_ETA};
pub use error::{Error, Result};
pub use mechanism::{
    is_conservative, Allocation, BidMatrix, MechanismSelector, Outcome, PaymentRule, SimpleAuction,
    TieBreak, Utility,
};
pub use valuations::{Budget, Bundle, Instance, PlayerProfile, ValuationFunction, Violation, ViolationKind};
