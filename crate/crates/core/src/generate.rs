//! Seeded random valuations for test corpora and the case study.
//!
//! Draws come from the family `v(k) = Σ_j f_j(k_j) + h(Σ_j k_j)` with
//! strictly decreasing marginals for every `f_j` and non-increasing
//! marginals for `h`. Such functions are gross substitutes; the draw is still
//! rejection-filtered through the validator, the strict-concavity LP and the
//! facet checker so the postcondition never depends on that fact.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complex::{enumerate_cells, substitutes_check};
use crate::error::{AuctionError, Result};
use crate::lattice::AuctionInstance;
use crate::rational::Q;
use crate::valuation::{strict_concavity_check, validate_valuation, Valuation};

pub const MAX_ATTEMPTS: usize = 1000;

/// Which rejection filter a draw failed, for diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RejectionCounts {
    pub invalid: usize,
    pub not_strictly_concave: usize,
    pub not_substitutes: usize,
}

/// Strictly decreasing positive integer marginals in `1..=hi`.
fn decreasing_marginals(rng: &mut impl Rng, n: usize, hi: i64) -> Vec<i64> {
    let hi = hi.max(n as i64);
    let mut pool: Vec<i64> = (1..=hi).collect();
    pool.shuffle(rng);
    let mut picked = pool[..n].to_vec();
    picked.sort_unstable_by(|a, b| b.cmp(a));
    picked
}

/// One unfiltered draw from the family, integer valued with unit marginals
/// roughly in `1..=scale`.
pub fn draw_family(rng: &mut impl Rng, m: &[u32], scale: i64) -> Vec<i64> {
    let scale = scale.max(2);
    let f: Vec<Vec<i64>> = m
        .iter()
        .map(|&mj| decreasing_marginals(rng, mj as usize, scale))
        .collect();
    let total: usize = m.iter().map(|&x| x as usize).sum();
    let mut h_marg: Vec<i64> = (0..total).map(|_| -rng.gen_range(0..=scale / 2)).collect();
    h_marg.sort_unstable_by(|a, b| b.cmp(a));
    h_marg[0] = 0;

    let lat = crate::lattice::Lattice::new(m.to_vec());
    lat.bundles()
        .map(|k| {
            let sep: i64 = k
                .iter()
                .enumerate()
                .map(|(j, &kj)| f[j][..kj as usize].iter().sum::<i64>())
                .sum();
            let s = k.l1() as usize;
            sep + h_marg[..s].iter().sum::<i64>()
        })
        .collect()
}

/// Accepts a table if it is valid, strictly concave and passes the facet test.
pub fn accept(v: &Valuation, inst: &AuctionInstance, counts: &mut RejectionCounts) -> bool {
    match validate_valuation(v, inst) {
        Ok(r) if r.is_valid() => {}
        _ => {
            counts.invalid += 1;
            return false;
        }
    }
    if !strict_concavity_check(v).holds {
        counts.not_strictly_concave += 1;
        return false;
    }
    match enumerate_cells(v) {
        Ok(cc) if substitutes_check(&cc).holds => true,
        _ => {
            counts.not_substitutes += 1;
            false
        }
    }
}

pub fn random_substitutes_valuation(seed: u64, inst: &AuctionInstance, scale: Q) -> Result<Valuation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_substitutes_with(&mut rng, inst, scale)
}

pub fn random_substitutes_with(
    rng: &mut impl Rng,
    inst: &AuctionInstance,
    scale: Q,
) -> Result<Valuation> {
    let s = scale.floor().max(2) as i64;
    let mut counts = RejectionCounts::default();
    for _ in 0..MAX_ATTEMPTS {
        let vals = draw_family(rng, &inst.m, s);
        let v = Valuation::from_ints(inst.m.clone(), &vals)?;
        if accept(&v, inst, &mut counts) {
            let mut v = v;
            v.flags.monotone_checked = true;
            v.flags.normalized_checked = true;
            v.flags.strictly_concave_checked = true;
            return Ok(v);
        }
    }
    Err(AuctionError::SamplingExhausted {
        attempts: MAX_ATTEMPTS,
        detail: format!("{counts:?}"),
    })
}

/// Arbitrary integer player valuation with `w(0) = 0`, entries in `0..=hi`.
pub fn random_player_valuation(rng: &mut impl Rng, m: &[u32], hi: i64) -> Valuation {
    let lat = crate::lattice::Lattice::new(m.to_vec());
    let vals: Vec<i64> = (0..lat.len())
        .map(|i| if i == 0 { 0 } else { rng.gen_range(0..=hi) })
        .collect();
    Valuation::from_ints(m.to_vec(), &vals)
        .expect("sized")
        .with_nonmonotone_override()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(m: Vec<u32>) -> AuctionInstance {
        let d = m.len();
        AuctionInstance::new(m, vec![Q::ZERO; d], vec![Q::ONE; d]).unwrap()
    }

    #[test]
    fn seed_one_unit_demand() {
        let i = inst(vec![1, 1]);
        let v = random_substitutes_valuation(1, &i, Q::int(10)).unwrap();
        assert!(substitutes_check(&enumerate_cells(&v).unwrap()).holds);
        let again = random_substitutes_valuation(1, &i, Q::int(10)).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn seed_two_has_diminishing_marginals() {
        let i = inst(vec![2, 2]);
        let v = random_substitutes_valuation(2, &i, Q::int(10)).unwrap();
        let lat = v.lattice().clone();
        for idx in 0..lat.len() {
            for j in 0..2 {
                if let Some(up) = lat.step_up(idx, j) {
                    if let Some(up2) = lat.step_up(up, j) {
                        assert!(v.at(up2) - v.at(up) <= v.at(up) - v.at(idx));
                    }
                }
            }
        }
        assert!(validate_valuation(&v, &i).unwrap().is_valid());
    }

    #[test]
    fn different_seeds_differ() {
        let i = inst(vec![2, 2]);
        let a = random_substitutes_valuation(3, &i, Q::int(20)).unwrap();
        let b = random_substitutes_valuation(4, &i, Q::int(20)).unwrap();
        assert_ne!(a, b);
    }
}
