//! Bundles, prices, item lattices and auction instances.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::rational::Q;

/// Integer demand vector, one entry per item category.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Bundle(pub Vec<u32>);

impl Bundle {
    pub fn zero(dim: usize) -> Bundle {
        Bundle(vec![0; dim])
    }

    pub fn unit(dim: usize, j: usize) -> Bundle {
        let mut b = Bundle::zero(dim);
        b.0[j] = 1;
        b
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn l1(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0)
    }

    /// `⟨self, p⟩`.
    pub fn dot(&self, p: &[Q]) -> Q {
        self.0
            .iter()
            .zip(p)
            .filter(|(k, _)| **k != 0)
            .map(|(k, x)| Q::from(*k) * *x)
            .sum()
    }

    /// Componentwise `self - other` as signed integers.
    pub fn diff(&self, other: &Bundle) -> Vec<i64> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| *a as i64 - *b as i64)
            .collect()
    }

    pub fn add(&self, other: &Bundle) -> Bundle {
        Bundle(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn fits_within(&self, bounds: &[u32]) -> bool {
        self.0.iter().zip(bounds).all(|(k, m)| k <= m)
    }
}

impl Deref for Bundle {
    type Target = [u32];
    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl fmt::Debug for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Bundle {
    type Err = String;

    /// Comma-joined integers, optionally parenthesised: `1,0` or `(1,0)`.
    fn from_str(s: &str) -> std::result::Result<Bundle, String> {
        let s = s.trim().trim_start_matches('(').trim_end_matches(')');
        if s.trim().is_empty() {
            return Err("empty bundle".into());
        }
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| format!("bad bundle component `{}`", p.trim()))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Bundle)
    }
}

impl From<Bundle> for String {
    fn from(b: Bundle) -> String {
        b.0.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl TryFrom<String> for Bundle {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Bundle, String> {
        s.parse()
    }
}

impl From<Vec<u32>> for Bundle {
    fn from(v: Vec<u32>) -> Bundle {
        Bundle(v)
    }
}

/// Price vector.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Price(pub Vec<Q>);

impl Price {
    pub fn zero(dim: usize) -> Price {
        Price(vec![Q::ZERO; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|x| !x.is_negative())
    }

    /// Componentwise `self >= other`.
    pub fn dominates(&self, other: &[Q]) -> bool {
        self.0.iter().zip(other).all(|(a, b)| a >= b)
    }

    pub fn plus(&self, other: &[Q]) -> Price {
        Price(self.0.iter().zip(other).map(|(a, b)| *a + *b).collect())
    }

    pub fn axpy(&self, t: Q, dir: &[Q]) -> Price {
        Price(
            self.0
                .iter()
                .zip(dir)
                .map(|(a, d)| if d.is_zero() { *a } else { *a + t * *d })
                .collect(),
        )
    }
}

impl Deref for Price {
    type Target = [Q];
    fn deref(&self) -> &[Q] {
        &self.0
    }
}

impl DerefMut for Price {
    fn deref_mut(&mut self) -> &mut [Q] {
        &mut self.0
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

impl fmt::Debug for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<Vec<Q>> for Price {
    fn from(v: Vec<Q>) -> Price {
        Price(v)
    }
}

/// The finite box `∏_j {0, …, bounds_j}`, enumerated lexicographically
/// (first category most significant).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice {
    bounds: Vec<u32>,
    strides: Vec<usize>,
    len: usize,
}

impl Lattice {
    pub fn new(bounds: Vec<u32>) -> Lattice {
        let mut strides = vec![1usize; bounds.len()];
        for j in (0..bounds.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * (bounds[j + 1] as usize + 1);
        }
        let len = bounds.iter().map(|&b| b as usize + 1).product();
        Lattice {
            bounds,
            strides,
            len,
        }
    }

    pub fn bounds(&self) -> &[u32] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, k: &[u32]) -> bool {
        k.len() == self.dim() && k.iter().zip(&self.bounds).all(|(a, b)| a <= b)
    }

    pub fn index_of(&self, k: &[u32]) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        Some(k.iter().zip(&self.strides).map(|(a, s)| *a as usize * s).sum())
    }

    pub fn bundle(&self, mut idx: usize) -> Bundle {
        debug_assert!(idx < self.len);
        let mut out = vec![0u32; self.dim()];
        for j in 0..self.dim() {
            out[j] = (idx / self.strides[j]) as u32;
            idx %= self.strides[j];
        }
        Bundle(out)
    }

    pub fn component(&self, idx: usize, j: usize) -> u32 {
        ((idx / self.strides[j]) % (self.bounds[j] as usize + 1)) as u32
    }

    pub fn bundles(&self) -> impl Iterator<Item = Bundle> + '_ {
        (0..self.len).map(move |i| self.bundle(i))
    }

    /// Index of `idx + e_j`, if still inside the lattice.
    pub fn step_up(&self, idx: usize, j: usize) -> Option<usize> {
        if self.component(idx, j) < self.bounds[j] {
            Some(idx + self.strides[j])
        } else {
            None
        }
    }
}

/// `(M, m, p_min, ε)`: supply per category, starting price and increments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionInstance {
    pub m: Vec<u32>,
    pub p_min: Price,
    pub eps: Vec<Q>,
}

impl AuctionInstance {
    pub fn new(m: Vec<u32>, p_min: Vec<Q>, eps: Vec<Q>) -> Result<AuctionInstance> {
        let inst = AuctionInstance {
            m,
            p_min: Price(p_min),
            eps,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.m.len();
        if dim == 0 {
            return Err(AuctionError::InvalidInstance("no item categories".into()));
        }
        for (what, len) in [("p_min", self.p_min.dim()), ("eps", self.eps.len())] {
            if len != dim {
                return Err(AuctionError::InvalidInstance(format!(
                    "{what} has length {len}, expected {dim}"
                )));
            }
        }
        if let Some(j) = self.m.iter().position(|&x| x == 0) {
            return Err(AuctionError::InvalidInstance(format!(
                "supply m_{j} must be at least 1"
            )));
        }
        if let Some(j) = self.eps.iter().position(|e| !e.is_positive()) {
            return Err(AuctionError::InvalidInstance(format!(
                "increment eps_{j} must be positive"
            )));
        }
        if !self.p_min.is_nonnegative() {
            return Err(AuctionError::InvalidInstance(
                "p_min must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(self.m.clone())
    }

    pub fn with_start(&self, p_min: Price) -> AuctionInstance {
        AuctionInstance {
            p_min,
            ..self.clone()
        }
    }

    pub fn with_eps(&self, eps: Vec<Q>) -> AuctionInstance {
        AuctionInstance {
            eps,
            ..self.clone()
        }
    }

    /// The deterministic generic shift applied to `p_min` when the price grid
    /// meets the indifference locus: `η·(1, 1/2, …, 1/M)` with `η` one
    /// millionth of the smallest increment.
    pub fn generic_shift(&self) -> Vec<Q> {
        let eta = self.eps.iter().copied().fold(self.eps[0], Q::min) / Q::int(1_000_000);
        (0..self.dim())
            .map(|j| eta / Q::int(j as i128 + 1))
            .collect()
    }

    pub fn perturbed(&self) -> AuctionInstance {
        self.with_start(self.p_min.plus(&self.generic_shift()))
    }

    /// Whether `p` lies on the grid `∏_j (p_min_j + ℤ_{≥0} ε_j)`.
    pub fn on_grid(&self, p: &[Q]) -> bool {
        p.iter()
            .zip(self.p_min.iter())
            .zip(&self.eps)
            .all(|((x, lo), e)| {
                let n = (*x - *lo) / *e;
                !n.is_negative() && n.is_integer()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_indexing_is_lexicographic() {
        let lat = Lattice::new(vec![1, 2]);
        let all: Vec<String> = lat.bundles().map(|b| b.to_string()).collect();
        assert_eq!(
            all,
            ["(0,0)", "(0,1)", "(0,2)", "(1,0)", "(1,1)", "(1,2)"]
        );
        for i in 0..lat.len() {
            assert_eq!(lat.index_of(&lat.bundle(i)), Some(i));
        }
        assert_eq!(lat.index_of(&[2, 0]), None);
        assert_eq!(lat.step_up(lat.index_of(&[0, 2]).unwrap(), 1), None);
        assert_eq!(lat.step_up(0, 0), lat.index_of(&[1, 0]));
    }

    #[test]
    fn bundle_text_encoding() {
        let b: Bundle = "1, 0".parse().unwrap();
        assert_eq!(b, Bundle(vec![1, 0]));
        assert_eq!(String::from(b.clone()), "1,0");
        assert_eq!("(2,3)".parse::<Bundle>().unwrap(), Bundle(vec![2, 3]));
        assert!("a,1".parse::<Bundle>().is_err());
    }

    #[test]
    fn instance_validation() {
        let ok = AuctionInstance::new(vec![1, 1], vec![Q::ZERO; 2], vec![Q::ONE; 2]);
        assert!(ok.is_ok());
        assert!(AuctionInstance::new(vec![0], vec![Q::ZERO], vec![Q::ONE]).is_err());
        assert!(AuctionInstance::new(vec![1], vec![Q::ZERO], vec![Q::ZERO]).is_err());
        assert!(AuctionInstance::new(vec![1], vec![Q::int(-1)], vec![Q::ONE]).is_err());
        assert!(AuctionInstance::new(vec![1, 1], vec![Q::ZERO], vec![Q::ONE; 2]).is_err());
    }

    #[test]
    fn perturbation_shift() {
        let inst = AuctionInstance::new(
            vec![1, 1, 1],
            vec![Q::ZERO; 3],
            vec![Q::new(1, 2), Q::new(1, 4), Q::ONE],
        )
        .unwrap();
        let eta = Q::new(1, 4_000_000);
        assert_eq!(
            inst.generic_shift(),
            vec![eta, eta / Q::int(2), eta / Q::int(3)]
        );
        assert!(inst.on_grid(&[Q::new(3, 2), Q::new(1, 4), Q::int(2)]));
        assert!(!inst.on_grid(&[Q::new(1, 3), Q::ZERO, Q::ZERO]));
    }
}
