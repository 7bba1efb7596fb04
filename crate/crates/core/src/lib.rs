//! Simple clock auctions against straightforward bidders: exact demand
//! geometry, discrete and continuous price dynamics, and bidding values.

pub mod error;
pub mod filippov;
pub mod lattice;
pub mod lp;
pub mod rational;
pub mod report;
pub mod scenario;
pub mod semilinear;

pub mod case_study;
pub mod complex;
pub mod demand;
pub mod discrete;
pub mod generate;
pub mod valuation;

pub use error::{AuctionError, Result};
pub use lattice::{AuctionInstance, Bundle, Lattice, Price};
pub use rational::Q;
