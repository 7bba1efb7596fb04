//! Valuation tables over an item lattice: validation, payoff, strict
//! concavity, the price ceiling `p_max`, and max-plus aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AuctionError, Result};
use crate::lattice::{AuctionInstance, Bundle, Lattice, Price};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::rational::Q;

/// Dense table `bundle -> value` over its own lattice.
///
/// Bidders loaded from a scenario live on the instance lattice `ℳ`; an
/// aggregate of several bidders lives on the Minkowski sum of their lattices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Valuation {
    lattice: Lattice,
    values: Vec<Q>,
    /// Player valuations may be non-monotone when explicitly allowed.
    #[serde(default)]
    pub allow_nonmonotone: bool,
    #[serde(default)]
    pub flags: CheckFlags,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckFlags {
    pub monotone_checked: bool,
    pub normalized_checked: bool,
    pub strictly_concave_checked: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Normalization,
    Monotonicity,
    Nonnegativity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub property: Property,
    /// One bundle for normalization/nonnegativity, the cover pair
    /// `(k, k + e_j)` for monotonicity.
    pub witness: Vec<Bundle>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Monotonicity failures that were waived by `allow_nonmonotone`.
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Valuation {
    pub fn new(lattice: Lattice, values: Vec<Q>) -> Result<Valuation> {
        if values.len() != lattice.len() {
            return Err(AuctionError::Dimension {
                expected: lattice.len(),
                found: values.len(),
            });
        }
        Ok(Valuation {
            lattice,
            values,
            allow_nonmonotone: false,
            flags: CheckFlags::default(),
        })
    }

    /// Builds a table from explicit entries; every lattice point must appear.
    pub fn from_entries(
        lattice: Lattice,
        entries: impl IntoIterator<Item = (Bundle, Q)>,
    ) -> Result<Valuation> {
        let mut slots: Vec<Option<Q>> = vec![None; lattice.len()];
        for (b, q) in entries {
            let idx = lattice.index_of(&b).ok_or_else(|| AuctionError::OutOfLattice {
                bundle: b.clone(),
                bounds: lattice.bounds().to_vec(),
            })?;
            slots[idx] = Some(q);
        }
        let mut values = Vec::with_capacity(slots.len());
        for (i, s) in slots.into_iter().enumerate() {
            values.push(s.ok_or_else(|| AuctionError::MissingEntry(lattice.bundle(i)))?);
        }
        Valuation::new(lattice, values)
    }

    /// Convenience constructor from integer literals in lattice order.
    pub fn from_ints(bounds: Vec<u32>, values: &[i64]) -> Result<Valuation> {
        Valuation::new(
            Lattice::new(bounds),
            values.iter().map(|&v| Q::from(v)).collect(),
        )
    }

    pub fn zero(lattice: Lattice) -> Valuation {
        let n = lattice.len();
        Valuation::new(lattice, vec![Q::ZERO; n]).expect("sized")
    }

    pub fn with_nonmonotone_override(mut self) -> Valuation {
        self.allow_nonmonotone = true;
        self
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Q] {
        &self.values
    }

    pub fn at(&self, idx: usize) -> Q {
        self.values[idx]
    }

    pub fn value(&self, k: &[u32]) -> Result<Q> {
        self.lattice
            .index_of(k)
            .map(|i| self.values[i])
            .ok_or_else(|| AuctionError::OutOfLattice {
                bundle: Bundle(k.to_vec()),
                bounds: self.lattice.bounds().to_vec(),
            })
    }

    pub fn entries(&self) -> BTreeMap<Bundle, Q> {
        self.lattice.bundles().zip(self.values.iter().copied()).collect()
    }

    /// Restriction of the table to the sub-lattice with the given bounds.
    pub fn restrict(&self, bounds: &[u32]) -> Result<Valuation> {
        let lat = Lattice::new(bounds.to_vec());
        let values = lat
            .bundles()
            .map(|b| self.value(&b))
            .collect::<Result<Vec<_>>>()?;
        Valuation::new(lat, values)
    }

    pub fn payoff_at(&self, idx: usize, p: &[Q]) -> Q {
        self.values[idx] - self.lattice.bundle(idx).dot(p)
    }
}

/// `v(k) − ⟨k, p⟩`, exactly.
pub fn payoff(v: &Valuation, k: &[u32], p: &[Q]) -> Result<Q> {
    if p.len() != v.dim() {
        return Err(AuctionError::Dimension {
            expected: v.dim(),
            found: p.len(),
        });
    }
    Ok(v.value(k)? - Bundle(k.to_vec()).dot(p))
}

pub fn validate_valuation(v: &Valuation, inst: &AuctionInstance) -> Result<ValidationReport> {
    if v.dim() != inst.dim() {
        return Err(AuctionError::Dimension {
            expected: inst.dim(),
            found: v.dim(),
        });
    }
    let lat = v.lattice();
    if let Some(j) = (0..inst.dim()).find(|&j| lat.bounds()[j] < inst.m[j]) {
        let mut missing = Bundle::zero(inst.dim());
        missing.0[j] = lat.bounds()[j] + 1;
        return Err(AuctionError::MissingEntry(missing));
    }

    let mut report = ValidationReport::default();
    if !v.at(0).is_zero() {
        report.violations.push(Violation {
            property: Property::Normalization,
            witness: vec![Bundle::zero(v.dim())],
        });
    }
    for i in 0..lat.len() {
        if v.at(i).is_negative() {
            report.violations.push(Violation {
                property: Property::Nonnegativity,
                witness: vec![lat.bundle(i)],
            });
        }
    }
    for i in 0..lat.len() {
        for j in 0..lat.dim() {
            if let Some(up) = lat.step_up(i, j) {
                if v.at(up) < v.at(i) {
                    let viol = Violation {
                        property: Property::Monotonicity,
                        witness: vec![lat.bundle(i), lat.bundle(up)],
                    };
                    if v.allow_nonmonotone {
                        report.warnings.push(viol);
                    } else {
                        report.violations.push(viol);
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Max-margin program for a tie set: maximise `t <= 1` such that every bundle
/// in `tied` earns the same payoff and beats every other bundle by `t`, with
/// `p >= 0`. Variables are `(p_1..p_M, t)`; `extra` rows are appended in
/// those coordinates.
pub(crate) fn tie_margin_lp(
    v: &Valuation,
    tied: &[usize],
    extra: &[(Vec<Q>, Relation, Q)],
) -> LpOutcome {
    let lat = v.lattice();
    let dim = lat.dim();
    let mut lp = LinearProgram::new(dim + 1);
    lp.set_free(dim);
    let mut obj = vec![Q::ZERO; dim + 1];
    obj[dim] = Q::ONE;
    lp.maximize(obj);
    let mut cap = vec![Q::ZERO; dim + 1];
    cap[dim] = Q::ONE;
    lp.constrain(cap, Relation::Le, Q::ONE);

    let base = tied[0];
    let base_b = lat.bundle(base);
    for &d in &tied[1..] {
        let diff = lat.bundle(d).diff(&base_b);
        let mut row: Vec<Q> = diff.iter().map(|&x| Q::from(x)).collect();
        row.push(Q::ZERO);
        lp.constrain(row, Relation::Eq, v.at(d) - v.at(base));
    }
    for k in 0..lat.len() {
        if tied.contains(&k) {
            continue;
        }
        // payoff(base) - payoff(k) >= t  <=>  <k - base, p> - t >= v(k) - v(base)
        let diff = lat.bundle(k).diff(&base_b);
        let mut row: Vec<Q> = diff.iter().map(|&x| Q::from(x)).collect();
        row.push(-Q::ONE);
        lp.constrain(row, Relation::Ge, v.at(k) - v.at(base));
    }
    for (a, rel, b) in extra {
        lp.constrain(a.clone(), *rel, *b);
    }
    lp.solve()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrictConcavity {
    pub holds: bool,
    /// A bundle that is never the unique demand, when `holds` is false.
    pub witness: Option<Bundle>,
    /// For each bundle, a price at which it is the unique demand (if any).
    pub interior_points: Vec<Option<Price>>,
}

/// Every bundle is the unique demand at some nonnegative price.
pub fn strict_concavity_check(v: &Valuation) -> StrictConcavity {
    let lat = v.lattice();
    let mut witness = None;
    let mut interior_points = Vec::with_capacity(lat.len());
    for d in 0..lat.len() {
        match tie_margin_lp(v, &[d], &[]) {
            LpOutcome::Optimal { value, x } if value.is_positive() => {
                interior_points.push(Some(Price(x[..lat.dim()].to_vec())));
            }
            _ => {
                if witness.is_none() {
                    witness = Some(lat.bundle(d));
                }
                interior_points.push(None);
            }
        }
    }
    StrictConcavity {
        holds: witness.is_none(),
        witness,
        interior_points,
    }
}

/// `p_max_j = 1 + max{ v(δ) : δ_j >= 1 }`.
pub fn compute_p_max(v: &Valuation) -> Price {
    let lat = v.lattice();
    Price(
        (0..lat.dim())
            .map(|j| {
                let best = (0..lat.len())
                    .filter(|&i| lat.component(i, j) >= 1)
                    .map(|i| v.at(i))
                    .max()
                    .unwrap_or(Q::ZERO);
                Q::ONE + best
            })
            .collect(),
    )
}

/// Max-plus convolution of straightforward bidders. The result lives on the
/// sum of the input lattices, so the aggregate demand is the sum of the
/// individual demands at generic prices.
pub fn aggregate_valuations(vs: &[Valuation]) -> Result<Valuation> {
    let (first, rest) = vs
        .split_first()
        .ok_or_else(|| AuctionError::InvalidValuation("cannot aggregate an empty list".into()))?;
    let mut acc = first.clone();
    for v in rest {
        if v.dim() != acc.dim() {
            return Err(AuctionError::Dimension {
                expected: acc.dim(),
                found: v.dim(),
            });
        }
        let bounds: Vec<u32> = acc
            .lattice()
            .bounds()
            .iter()
            .zip(v.lattice().bounds())
            .map(|(a, b)| a + b)
            .collect();
        let lat = Lattice::new(bounds);
        let mut best: Vec<Option<Q>> = vec![None; lat.len()];
        for a in 0..acc.len() {
            let ba = acc.lattice().bundle(a);
            for b in 0..v.len() {
                let sum = ba.add(&v.lattice().bundle(b));
                let idx = lat.index_of(&sum).expect("sum lattice");
                let val = acc.at(a) + v.at(b);
                if best[idx].is_none_or(|cur| val > cur) {
                    best[idx] = Some(val);
                }
            }
        }
        acc = Valuation::new(lat, best.into_iter().map(|x| x.expect("covered")).collect())?;
    }
    acc.flags = CheckFlags::default();
    Ok(acc)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn b(x: &[u32]) -> Bundle {
        Bundle(x.to_vec())
    }

    #[test]
    fn reference_valuations_validate() {
        assert!(validate_valuation(&v_sub(), &inst11()).unwrap().is_valid());
        assert!(validate_valuation(&v_ex(), &inst11()).unwrap().is_valid());
    }

    #[test]
    fn normalization_violation_names_zero_bundle() {
        let v = Valuation::from_ints(vec![1, 1], &[1, 3, 4, 6]).unwrap();
        let r = validate_valuation(&v, &inst11()).unwrap();
        assert_eq!(
            r.violations,
            vec![Violation {
                property: Property::Normalization,
                witness: vec![b(&[0, 0])]
            }]
        );
    }

    #[test]
    fn monotonicity_and_override() {
        let v = Valuation::from_ints(vec![1, 1], &[0, 0, 10, 0]).unwrap();
        let r = validate_valuation(&v, &inst11()).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].property, Property::Monotonicity);
        assert_eq!(r.violations[0].witness, vec![b(&[1, 0]), b(&[1, 1])]);

        let r = validate_valuation(&v.with_nonmonotone_override(), &inst11()).unwrap();
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn nonnegativity() {
        let v = Valuation::from_ints(vec![1], &[0, -2]).unwrap();
        let inst = AuctionInstance::new(vec![1], vec![Q::ZERO], vec![Q::ONE]).unwrap();
        let r = validate_valuation(&v, &inst).unwrap();
        assert!(r
            .violations
            .iter()
            .any(|x| x.property == Property::Nonnegativity && x.witness == vec![b(&[1])]));
    }

    #[test]
    fn missing_entries_are_structural_errors() {
        let lat = Lattice::new(vec![1, 1]);
        let err = Valuation::from_entries(
            lat,
            [(b(&[0, 0]), Q::ZERO), (b(&[1, 0]), Q::ONE), (b(&[0, 1]), Q::ONE)],
        )
        .unwrap_err();
        assert!(matches!(err, AuctionError::MissingEntry(ref x) if *x == b(&[1, 1])));

        let small = Valuation::from_ints(vec![1], &[0, 1]).unwrap();
        let inst = AuctionInstance::new(vec![2], vec![Q::ZERO], vec![Q::ONE]).unwrap();
        assert!(matches!(
            validate_valuation(&small, &inst),
            Err(AuctionError::MissingEntry(_))
        ));
    }

    #[test]
    fn payoff_examples() {
        let p = [Q::new(29, 10), Q::new(9, 5)];
        assert_eq!(payoff(&v_ex(), &[1, 1], &p).unwrap(), Q::new(3, 10));
        assert_eq!(payoff(&v_ex(), &[0, 0], &p).unwrap(), Q::ZERO);
        assert_eq!(payoff(&v_sub(), &[1, 0], &[Q::int(4), Q::ZERO]).unwrap(), Q::ZERO);
    }

    #[test]
    fn strict_concavity_examples() {
        let sc = strict_concavity_check(&v_sub());
        assert!(sc.holds);
        // (1,0) is uniquely demanded at (1, 10).
        let v = v_sub();
        let idx10 = v.lattice().index_of(&[1, 0]).unwrap();
        let p = [Q::int(1), Q::int(10)];
        for k in 0..v.len() {
            if k != idx10 {
                assert!(v.payoff_at(idx10, &p) > v.payoff_at(k, &p));
            }
        }
        assert!(strict_concavity_check(&v_ex()).holds);

        let line = Valuation::from_ints(vec![2], &[0, 1, 2]).unwrap();
        let sc = strict_concavity_check(&line);
        assert!(!sc.holds);
        assert_eq!(sc.witness, Some(b(&[1])));
    }

    #[test]
    fn p_max_examples() {
        assert_eq!(compute_p_max(&v_ex()).0, vec![Q::int(6), Q::int(6)]);
        assert_eq!(compute_p_max(&v_sub()).0, vec![Q::int(7), Q::int(7)]);
        let zero = Valuation::zero(Lattice::new(vec![2, 1, 3]));
        assert_eq!(compute_p_max(&zero).0, vec![Q::ONE; 3]);
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_valuations(&[v_sub()]).unwrap(), v_sub());

        let unit = Valuation::from_ints(vec![1], &[0, 10]).unwrap();
        let agg = aggregate_valuations(&[unit.clone(), unit]).unwrap();
        assert_eq!(agg, Valuation::from_ints(vec![2], &[0, 10, 20]).unwrap());

        let agg = aggregate_valuations(&[v_ex(), v_ex()]).unwrap();
        assert_eq!(agg.restrict(&[1, 1]).unwrap(), v_ex());
        assert_eq!(agg.value(&[1, 1]).unwrap(), Q::int(5));
        assert_eq!(agg.value(&[2, 2]).unwrap(), Q::int(10));
        assert_eq!(agg.value(&[1, 2]).unwrap(), Q::int(7));

        assert!(aggregate_valuations(&[]).is_err());
    }

    #[test]
    fn payoff_of_empty_bundle_is_zero() {
        let v = v_ex();
        for p in [[Q::ZERO, Q::ZERO], [Q::new(7, 3), Q::int(100)]] {
            assert_eq!(payoff(&v, &[0, 0], &p).unwrap(), Q::ZERO);
        }
    }
}
