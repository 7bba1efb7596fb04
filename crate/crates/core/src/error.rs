use thiserror::Error;

use crate::lattice::{Bundle, Price};

#[derive(Debug, Error)]
pub enum AuctionError {
    #[error("valuation table has no entry for bundle {0}")]
    MissingEntry(Bundle),

    #[error("bundle {bundle} lies outside the lattice with bounds {bounds:?}")]
    OutOfLattice { bundle: Bundle, bounds: Vec<u32> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid valuation: {0}")]
    InvalidValuation(String),

    #[error("price {price} lies on the indifference locus; tied demands {ties:?} (rerun with a generic perturbation of p_min)")]
    Indifference { price: Price, ties: Vec<Bundle> },

    #[error("eligibility violation at round {round}: bid {bid} is larger than previous bid {previous}")]
    Eligibility {
        round: usize,
        previous: Bundle,
        bid: Bundle,
    },

    #[error("auction did not stop within {bound} rounds")]
    RoundBound { bound: usize },

    #[error("forward velocity at {price} is not unique: {detail}")]
    Uniqueness { price: Price, detail: String },

    #[error("interface {from} -> {to} crossed twice")]
    RepeatedCrossing { from: Bundle, to: Bundle },

    #[error("trajectory exceeded its event budget of {budget}")]
    EventBudget { budget: usize },

    #[error("cell for bundle {0} has empty interior; valuation is not strictly concave")]
    EmptyCell(Bundle),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("valuation does not satisfy the substitutes condition: {0}")]
    NotSubstitutes(String),

    #[error("sampling budget exhausted after {attempts} attempts: {detail}")]
    SamplingExhausted { attempts: usize, detail: String },

    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("at sample {coords:?}: {source}")]
    AtSample {
        coords: Vec<usize>,
        #[source]
        source: Box<AuctionError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AuctionError {
    /// Violations of modelling assumptions (ties on the price grid, failed
    /// uniqueness) as opposed to malformed input.
    pub fn is_assumption_violation(&self) -> bool {
        match self {
            AuctionError::Indifference { .. }
            | AuctionError::Uniqueness { .. }
            | AuctionError::RepeatedCrossing { .. }
            | AuctionError::EventBudget { .. } => true,
            AuctionError::AtSample { source, .. } => source.is_assumption_violation(),
            _ => false,
        }
    }
}

pub type Result<T, E = AuctionError> = std::result::Result<T, E>;
