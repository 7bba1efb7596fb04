//! Continuous-time auction: the drift `γ_k`, its Filippov regularisation on
//! the indifference locus, and an exact event-driven tracer.
//!
//! The forward velocity at a tie point is found combinatorially. For every
//! nonempty subset `B` of the tie set `A` we ask for weights on `B` whose
//! velocity keeps the payoffs of `B` equal (tangency) while every bundle of
//! `A \ B` falls strictly behind. A feasible `B` is exactly the label of the
//! motion for small positive time, so the solution is unique iff one `B`
//! admits one velocity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::complex::CellComplex;
use crate::demand::demand;
use crate::discrete::{simulate, ConstantBid};
use crate::error::{AuctionError, Result};
use crate::lattice::{AuctionInstance, Bundle, Price};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::rational::{dot, Q};
use crate::valuation::{payoff, Valuation};

/// `u^δ_j = [k_j + δ_j > m_j]` as a rational 0/1 vector.
pub fn excess_velocity(k: &[u32], delta: &[u32], m: &[u32]) -> Vec<Q> {
    k.iter()
        .zip(delta)
        .zip(m)
        .map(|((a, b), c)| if a + b > *c { Q::ONE } else { Q::ZERO })
        .collect()
}

/// `u^δ` for every maximal cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub bundle: Bundle,
    pub velocities: Vec<(Bundle, Vec<Q>)>,
}

impl VelocityProfile {
    pub fn new(k: &Bundle, cc: &CellComplex, m: &[u32]) -> VelocityProfile {
        VelocityProfile {
            bundle: k.clone(),
            velocities: cc
                .maximal
                .iter()
                .map(|c| (c.label[0].clone(), excess_velocity(k, &c.label[0], m)))
                .collect(),
        }
    }

    /// Adjacent pairs violating the admissible velocity jumps for their
    /// facet vector.
    pub fn violations(&self, cc: &CellComplex) -> Vec<(Bundle, Bundle)> {
        cc.facets
            .iter()
            .filter(|f| {
                let du: Vec<Q> = self.velocities[f.plus_idx]
                    .1
                    .iter()
                    .zip(&self.velocities[f.minus_idx].1)
                    .map(|(a, b)| *a - *b)
                    .collect();
                !jump_allowed(&f.normal, &du)
            })
            .map(|f| (f.minus.clone(), f.plus.clone()))
            .collect()
    }
}

fn unit(dim: usize, i: usize, sign: i64) -> Vec<Q> {
    let mut v = vec![Q::ZERO; dim];
    v[i] = Q::from(sign);
    v
}

/// `d = e_i ⇒ du ∈ {0, e_i}`, `d = −e_j ⇒ du ∈ {0, −e_j}`,
/// `d = e_i − e_j ⇒ du ∈ {0, e_i, e_i − e_j, −e_j}`. Other facet vectors
/// impose nothing.
pub fn jump_allowed(d: &[i64], du: &[Q]) -> bool {
    let dim = d.len();
    let pos: Vec<usize> = (0..dim).filter(|&i| d[i] == 1).collect();
    let neg: Vec<usize> = (0..dim).filter(|&i| d[i] == -1).collect();
    if d.iter().filter(|&&x| x != 0).count() != pos.len() + neg.len() {
        return true;
    }
    let zero = vec![Q::ZERO; dim];
    let mut allowed = vec![zero];
    match (pos.as_slice(), neg.as_slice()) {
        ([i], []) => allowed.push(unit(dim, *i, 1)),
        ([], [j]) => allowed.push(unit(dim, *j, -1)),
        ([i], [j]) => {
            allowed.push(unit(dim, *i, 1));
            allowed.push(unit(dim, *j, -1));
            let mut both = unit(dim, *i, 1);
            both[*j] = -Q::ONE;
            allowed.push(both);
        }
        _ => return true,
    }
    allowed.iter().any(|a| a.as_slice() == du)
}

/// `γ_k(p)` off the indifference locus.
pub fn drift(k: &Bundle, p: &[Q], cc: &CellComplex, m: &[u32]) -> Result<Vec<Q>> {
    let d = demand(&cc.valuation, p);
    let delta = d.single(p)?;
    Ok(excess_velocity(k, delta, m))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Crossing,
    Sliding,
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilippovVelocity {
    pub velocity: Vec<Q>,
    /// `λ^δ` over the tie set (zero outside the motion's label).
    pub weights: Vec<(Bundle, Q)>,
    pub mode: Mode,
    /// Demand label for small positive time.
    pub label: Vec<Bundle>,
    /// More than one forward velocity was admissible and one was picked.
    pub ambiguous: bool,
}

struct Candidate {
    subset: Vec<usize>,
    velocity: Vec<Q>,
    weights: Vec<Q>,
}

/// Maximal strict separation for the subset `sub` of the tie set `ties`
/// (positions into `ties`); `floor` adds `s >= floor`, `objective` replaces
/// the `max s` objective with a velocity component.
fn subset_lp(
    us: &[Vec<Q>],
    bundles: &[Bundle],
    sub: &[usize],
    rest: &[usize],
    floor: Option<Q>,
    objective: Option<(usize, Q)>,
) -> LpOutcome {
    let nb = sub.len();
    let mut lp = LinearProgram::new(nb + 1);
    lp.set_free(nb);
    let mut obj = vec![Q::ZERO; nb + 1];
    match objective {
        None => obj[nb] = Q::ONE,
        Some((j, sign)) => {
            for (col, &b) in sub.iter().enumerate() {
                obj[col] = sign * us[b][j];
            }
        }
    }
    lp.maximize(obj);
    let mut cap = vec![Q::ZERO; nb + 1];
    cap[nb] = Q::ONE;
    lp.constrain(cap.clone(), Relation::Le, Q::ONE);
    if let Some(f) = floor {
        lp.constrain(cap, Relation::Ge, f);
    }
    let mut ones = vec![Q::ONE; nb + 1];
    ones[nb] = Q::ZERO;
    lp.constrain(ones, Relation::Eq, Q::ONE);

    let base = &bundles[sub[0]];
    let row_for = |other: &Bundle| -> Vec<Q> {
        let diff: Vec<Q> = other.diff(base).into_iter().map(Q::from).collect();
        let mut row: Vec<Q> = sub.iter().map(|&b| dot(&diff, &us[b])).collect();
        row.push(Q::ZERO);
        row
    };
    for &b in &sub[1..] {
        lp.constrain(row_for(&bundles[b]), Relation::Eq, Q::ZERO);
    }
    for &r in rest {
        let mut row = row_for(&bundles[r]);
        row[nb] = -Q::ONE;
        lp.constrain(row, Relation::Ge, Q::ZERO);
    }
    lp.solve()
}

fn velocity_of(us: &[Vec<Q>], sub: &[usize], lambda: &[Q]) -> Vec<Q> {
    let dim = us[0].len();
    (0..dim)
        .map(|j| sub.iter().zip(lambda).map(|(&b, l)| *l * us[b][j]).sum())
        .collect()
}

/// Forward velocity of the regularised dynamics at `p`.
///
/// With `best_effort`, several admissible velocities are tolerated (the
/// first in subset order is returned and flagged); otherwise they are a
/// uniqueness error.
pub fn forward_velocity(
    k: &Bundle,
    p: &[Q],
    v: &Valuation,
    m: &[u32],
    best_effort: bool,
) -> Result<FilippovVelocity> {
    let d = demand(v, p);
    let bundles = d.bundles.clone();
    let us: Vec<Vec<Q>> = bundles.iter().map(|b| excess_velocity(k, b, m)).collect();
    let dim = p.len();

    if bundles.len() == 1 {
        let velocity = us[0].clone();
        let mode = if velocity.iter().all(Q::is_zero) {
            Mode::Stationary
        } else {
            Mode::Crossing
        };
        return Ok(FilippovVelocity {
            velocity,
            weights: vec![(bundles[0].clone(), Q::ONE)],
            mode,
            label: bundles,
            ambiguous: false,
        });
    }
    if us.iter().all(|u| u.iter().all(Q::is_zero)) {
        return Ok(FilippovVelocity {
            velocity: vec![Q::ZERO; dim],
            weights: bundles.iter().map(|b| (b.clone(), Q::ZERO)).collect(),
            mode: Mode::Stationary,
            label: bundles,
            ambiguous: false,
        });
    }

    let n = bundles.len();
    let mut found: Vec<Candidate> = Vec::new();
    for mask in 1u64..(1u64 << n) {
        let sub: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let rest: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 0).collect();
        let LpOutcome::Optimal { value: s, x } = subset_lp(&us, &bundles, &sub, &rest, None, None)
        else {
            continue;
        };
        if !s.is_positive() {
            continue;
        }
        let lambda = x[..sub.len()].to_vec();
        let velocity = velocity_of(&us, &sub, &lambda);
        let floor = Some(s / Q::int(2));
        for j in 0..dim {
            let hi = subset_lp(&us, &bundles, &sub, &rest, floor, Some((j, Q::ONE))).value();
            let lo = subset_lp(&us, &bundles, &sub, &rest, floor, Some((j, -Q::ONE))).value();
            if let (Some(hi), Some(lo)) = (hi, lo) {
                if hi != -lo && !best_effort {
                    return Err(AuctionError::Uniqueness {
                        price: Price(p.to_vec()),
                        detail: format!(
                            "velocity component {j} ranges over [{}, {hi}] with label {:?}",
                            -lo,
                            sub.iter().map(|&i| &bundles[i]).collect::<Vec<_>>()
                        ),
                    });
                }
            }
        }
        found.push(Candidate {
            subset: sub,
            velocity,
            weights: lambda,
        });
    }

    if found.is_empty() {
        return Err(AuctionError::Uniqueness {
            price: Price(p.to_vec()),
            detail: "no admissible forward velocity".into(),
        });
    }
    if found.len() > 1 && !best_effort {
        return Err(AuctionError::Uniqueness {
            price: Price(p.to_vec()),
            detail: format!(
                "{} admissible forward velocities: {:?}",
                found.len(),
                found.iter().map(|c| &c.velocity).collect::<Vec<_>>()
            ),
        });
    }
    let ambiguous = found.len() > 1;
    let c = found.swap_remove(0);
    let mut weights: Vec<(Bundle, Q)> = bundles.iter().map(|b| (b.clone(), Q::ZERO)).collect();
    for (&b, l) in c.subset.iter().zip(&c.weights) {
        weights[b].1 = *l;
    }
    // Motion along a lower-dimensional cell is sliding; leaving into one
    // maximal cell, or stopping on the boundary of a clearing cell, is a
    // crossing.
    let mode = if c.subset.len() == 1 || c.velocity.iter().all(Q::is_zero) {
        Mode::Crossing
    } else {
        Mode::Sliding
    };
    Ok(FilippovVelocity {
        velocity: c.velocity,
        weights,
        mode,
        label: c.subset.iter().map(|&b| bundles[b].clone()).collect(),
        ambiguous,
    })
}

pub fn filippov_velocity(k: &Bundle, p: &[Q], cc: &CellComplex, m: &[u32]) -> Result<FilippovVelocity> {
    forward_velocity(k, p, &cc.valuation, m, !cc.is_substitutes())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSegment {
    pub t_start: Q,
    pub t_end: Q,
    pub start: Price,
    pub velocity: Vec<Q>,
    pub label: Vec<Bundle>,
    pub mode: Mode,
}

impl TraceSegment {
    pub fn end(&self) -> Price {
        self.start.axpy(self.t_end - self.t_start, &self.velocity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuousTrajectory {
    pub bundle: Bundle,
    pub start: Price,
    pub segments: Vec<TraceSegment>,
    pub final_price: Price,
    pub total_time: Q,
    /// Uniqueness is not guaranteed (the opponent fails the substitutes test).
    pub best_effort: bool,
    /// Ordered interfaces crossed, `(from, to)`.
    pub crossings: Vec<(Bundle, Bundle)>,
}

impl ContinuousTrajectory {
    pub fn position_at(&self, t: Q) -> Price {
        for s in &self.segments {
            if t <= s.t_end {
                let dt = (t - s.t_start).max(Q::ZERO);
                return s.start.axpy(dt, &s.velocity);
            }
        }
        self.final_price.clone()
    }

    /// Continuity, monotonicity, velocity range and the stationary end.
    pub fn check_invariants(&self, v: &Valuation, m: &[u32]) -> std::result::Result<(), String> {
        let mut at = self.start.clone();
        let mut t = Q::ZERO;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start != at || s.t_start != t {
                return Err(format!("segment {i} is not continuous"));
            }
            if s.t_end <= s.t_start {
                return Err(format!("segment {i} has nonpositive length"));
            }
            if s.velocity.iter().any(|x| x.is_negative() || *x > Q::ONE) {
                return Err(format!("segment {i} velocity outside [0,1]^M"));
            }
            at = s.end();
            t = s.t_end;
        }
        if at != self.final_price || t != self.total_time {
            return Err("final price or time does not match the segments".into());
        }
        let d = demand(v, &self.final_price);
        if !d.bundles.iter().any(|b| crate::discrete::clears(&self.bundle, b, m)) {
            return Err("final point is not in a clearing cell".into());
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,price\n");
        let mut push = |t: Q, p: &Price| {
            s.push_str(&format!(
                "{},\"{}\"\n",
                t,
                p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            ));
        };
        push(Q::ZERO, &self.start);
        for seg in &self.segments {
            push(seg.t_end, &seg.end());
        }
        s
    }
}

/// Events allowed before the tracer gives up: one per ordered interface and
/// one per cell.
pub fn event_budget(cc: &CellComplex) -> usize {
    2 * cc.facets.len() + cc.cells.len()
}

pub fn trace(k: &Bundle, p0: &Price, cc: &CellComplex, inst: &AuctionInstance) -> Result<ContinuousTrajectory> {
    let v = &cc.valuation;
    let m = &inst.m;
    let best_effort = !cc.is_substitutes();
    let budget = event_budget(cc);
    let lat = v.lattice();

    let mut p = p0.clone();
    let mut t = Q::ZERO;
    let mut segments: Vec<TraceSegment> = Vec::new();
    let mut crossings: Vec<(Bundle, Bundle)> = Vec::new();
    let mut crossed: BTreeSet<(Bundle, Bundle)> = BTreeSet::new();

    for _ in 0..=budget {
        let fv = forward_velocity(k, &p, v, m, best_effort)?;
        if fv.velocity.iter().all(Q::is_zero) {
            return Ok(ContinuousTrajectory {
                bundle: k.clone(),
                start: p0.clone(),
                segments,
                final_price: p,
                total_time: t,
                best_effort,
                crossings,
            });
        }
        let w = &fv.velocity;
        let base = &fv.label[0];
        let base_pay = payoff(v, base, &p)?;
        let mut tau: Option<Q> = None;
        for idx in 0..lat.len() {
            let b = lat.bundle(idx);
            if fv.label.contains(&b) {
                continue;
            }
            let rate: Q = base
                .diff(&b)
                .into_iter()
                .zip(w)
                .map(|(d, x)| Q::from(d) * *x)
                .sum();
            if rate.is_positive() {
                let gap = base_pay - v.at(idx) + b.dot(&p);
                let hit = gap / rate;
                if tau.is_none_or(|c| hit < c) {
                    tau = Some(hit);
                }
            }
        }
        let tau = tau.ok_or_else(|| AuctionError::Uniqueness {
            price: p.clone(),
            detail: "nonzero velocity never reaches a new cell".into(),
        })?;

        if let (Some(prev), [now]) = (segments.last(), fv.label.as_slice()) {
            if let [before] = prev.label.as_slice() {
                if before != now {
                    let pair = (before.clone(), now.clone());
                    let u_before = excess_velocity(k, before, m);
                    let u_now = excess_velocity(k, now, m);
                    if u_before != u_now && !crossed.insert(pair.clone()) && !best_effort {
                        return Err(AuctionError::RepeatedCrossing {
                            from: pair.0,
                            to: pair.1,
                        });
                    }
                    crossings.push(pair);
                }
            }
        }

        segments.push(TraceSegment {
            t_start: t,
            t_end: t + tau,
            start: p.clone(),
            velocity: w.clone(),
            label: fv.label.clone(),
            mode: fv.mode,
        });
        p = p.axpy(tau, w);
        t += tau;
    }
    Err(AuctionError::EventBudget { budget })
}

/// Discrete auction with uniform increment `h`, as a polyline in time
/// `t = n·h`.
pub fn euler_trace(
    k: &Bundle,
    p0: &Price,
    h: Q,
    inst: &AuctionInstance,
    v: &Valuation,
) -> Result<Vec<(Q, Price)>> {
    let step = inst.with_start(p0.clone()).with_eps(vec![h; inst.dim()]);
    let traj = simulate(&mut ConstantBid(k.clone()), &step, v)?;
    Ok(traj
        .prices
        .into_iter()
        .enumerate()
        .map(|(n, p)| (h * Q::from(n as i128), p))
        .collect())
}

/// `𝒱(k, p) = w(k) − ⟨k, P_k(p)⟩`.
pub fn value_continuous(
    k: &Bundle,
    p: &Price,
    cc: &CellComplex,
    inst: &AuctionInstance,
    w: &Valuation,
) -> Result<Q> {
    let tr = trace(k, p, cc, inst)?;
    payoff(w, k, &tr.final_price)
}

/// Clearing payoff if some demanded bundle fits next to `k`, otherwise the
/// best `𝒱(l, p)` over `‖l‖₁ <= ‖k‖₁`.
pub fn value_tilde_continuous(
    k: &Bundle,
    p: &Price,
    cc: &CellComplex,
    inst: &AuctionInstance,
    w: &Valuation,
) -> Result<Q> {
    let d = demand(&cc.valuation, p);
    if d.bundles.iter().any(|b| crate::discrete::clears(k, b, &inst.m)) {
        return payoff(w, k, p);
    }
    let mut best: Option<Q> = None;
    for l in inst.lattice().bundles().filter(|l| l.l1() <= k.l1()) {
        let x = value_continuous(&l, p, cc, inst, w)?;
        if best.is_none_or(|b| x > b) {
            best = Some(x);
        }
    }
    Ok(best.expect("zero bundle eligible"))
}
