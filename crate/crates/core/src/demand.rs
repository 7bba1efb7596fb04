//! The straightforward-bidding demand oracle.

use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::lattice::{Bundle, Price};
use crate::rational::Q;
use crate::valuation::Valuation;

/// Exact argmax set of `v(δ) − ⟨δ, p⟩`, in lattice order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandSet {
    pub bundles: Vec<Bundle>,
    pub indices: Vec<usize>,
    pub payoff: Q,
}

impl DemandSet {
    pub fn is_singleton(&self) -> bool {
        self.indices.len() == 1
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, k: &[u32]) -> bool {
        self.bundles.iter().any(|b| b.0 == k)
    }

    /// The unique demanded bundle; fails loudly on the indifference locus.
    pub fn single(&self, p: &[Q]) -> Result<&Bundle> {
        if self.is_singleton() {
            Ok(&self.bundles[0])
        } else {
            Err(AuctionError::Indifference {
                price: Price(p.to_vec()),
                ties: self.bundles.clone(),
            })
        }
    }

    pub fn single_index(&self, p: &[Q]) -> Result<usize> {
        self.single(p).map(|_| self.indices[0])
    }
}

pub fn demand(v: &Valuation, p: &[Q]) -> DemandSet {
    let mut best = v.payoff_at(0, p);
    let mut indices = vec![0];
    for i in 1..v.len() {
        let u = v.payoff_at(i, p);
        if u > best {
            best = u;
            indices.clear();
            indices.push(i);
        } else if u == best {
            indices.push(i);
        }
    }
    DemandSet {
        bundles: indices.iter().map(|&i| v.lattice().bundle(i)).collect(),
        indices,
        payoff: best,
    }
}

pub fn on_indifference_locus(v: &Valuation, p: &[Q]) -> bool {
    demand(v, p).len() > 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::valuation::fixtures::*;

    fn qs(x: &[(i128, i128)]) -> Vec<Q> {
        x.iter().map(|&(n, d)| Q::new(n, d)).collect()
    }

    fn labels(d: &DemandSet) -> Vec<String> {
        d.bundles.iter().map(|b| b.to_string()).collect()
    }

    #[test]
    fn demand_examples() {
        let v = v_ex();
        assert_eq!(labels(&demand(&v, &qs(&[(1, 2), (1, 2)]))), ["(1,1)"]);
        assert_eq!(
            labels(&demand(&v, &qs(&[(3, 1), (2, 1)]))),
            ["(0,0)", "(0,1)", "(1,1)"]
        );
        assert_eq!(labels(&demand(&v, &qs(&[(10, 1), (10, 1)]))), ["(0,0)"]);
        assert_eq!(labels(&demand(&v, &qs(&[(31, 10), (9, 5)]))), ["(0,1)"]);
    }

    #[test]
    fn locus_examples() {
        let v = v_ex();
        assert!(on_indifference_locus(&v, &qs(&[(3, 1), (2, 1)])));
        assert!(!on_indifference_locus(&v, &qs(&[(1, 2), (1, 2)])));
        let zero = Valuation::zero(crate::lattice::Lattice::new(vec![2, 2]));
        assert!(!on_indifference_locus(&zero, &qs(&[(1, 3), (5, 1)])));
    }

    #[test]
    fn single_fails_on_ties() {
        let v = v_ex();
        let p = qs(&[(3, 1), (2, 1)]);
        let err = demand(&v, &p).single(&p).unwrap_err();
        assert!(matches!(err, AuctionError::Indifference { ref ties, .. } if ties.len() == 3));
    }
}
