//! Cells of the indifference locus, their adjacency, and the facet-vector
//! substitutes test.

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::demand;
use crate::error::{AuctionError, Result};
use crate::lattice::{Bundle, Price};
use crate::lp::{rank, LinearProgram, LpOutcome, Relation};
use crate::rational::Q;
use crate::valuation::{compute_p_max, Valuation};

/// `⟨a, p⟩ (= | >=) b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<Q>,
    pub relation: ConstraintKind,
    pub rhs: Q,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Eq,
    Ge,
}

impl Constraint {
    pub fn holds(&self, p: &[Q]) -> bool {
        let lhs: Q = self.coeffs.iter().zip(p).map(|(a, x)| *a * *x).sum();
        match self.relation {
            ConstraintKind::Eq => lhs == self.rhs,
            ConstraintKind::Ge => lhs >= self.rhs,
        }
    }

    fn lp_row(&self, extra: usize) -> (Vec<Q>, Relation, Q) {
        let mut a = self.coeffs.clone();
        a.extend(std::iter::repeat_n(Q::ZERO, extra));
        let rel = match self.relation {
            ConstraintKind::Eq => Relation::Eq,
            ConstraintKind::Ge => Relation::Ge,
        };
        (a, rel, self.rhs)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub label: Vec<Bundle>,
    /// Lattice indices of `label`, ascending.
    pub label_idx: Vec<usize>,
    pub constraints: Vec<Constraint>,
    pub dim: usize,
    /// A point whose exact demand set is `label`.
    pub interior_point: Price,
}

impl Cell {
    pub fn contains(&self, p: &[Q]) -> bool {
        p.iter().all(|x| !x.is_negative()) && self.constraints.iter().all(|c| c.holds(p))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Facet {
    /// Lexicographically larger label.
    pub plus: Bundle,
    pub minus: Bundle,
    pub plus_idx: usize,
    pub minus_idx: usize,
    /// `plus − minus`; the facet lies on `⟨normal, p⟩ = rhs`.
    pub normal: Vec<i64>,
    pub rhs: Q,
    pub class: FacetClass,
    pub interior_point: Price,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetClass {
    /// `±e_i` or `e_i − e_j`.
    Unimodular,
    Other,
}

pub fn classify(d: &[i64]) -> FacetClass {
    let pos: Vec<i64> = d.iter().copied().filter(|&x| x > 0).collect();
    let neg: Vec<i64> = d.iter().copied().filter(|&x| x < 0).collect();
    let ok = pos.len() <= 1
        && neg.len() <= 1
        && pos.iter().chain(&neg).all(|x| x.abs() == 1)
        && !(pos.is_empty() && neg.is_empty());
    if ok {
        FacetClass::Unimodular
    } else {
        FacetClass::Other
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellComplex {
    pub valuation: Valuation,
    /// One maximal cell per lattice point, indexed like the lattice.
    pub maximal: Vec<Cell>,
    /// Every cell of every dimension, maximal ones first.
    pub cells: Vec<Cell>,
    pub facets: Vec<Facet>,
}

impl CellComplex {
    pub fn dim(&self) -> usize {
        self.valuation.dim()
    }

    pub fn is_substitutes(&self) -> bool {
        self.facets.iter().all(|f| f.class == FacetClass::Unimodular)
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.facets
            .iter()
            .any(|f| f.minus_idx == lo && f.plus_idx == hi)
    }

    pub fn facet_between(&self, a: usize, b: usize) -> Option<&Facet> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.facets
            .iter()
            .find(|f| f.minus_idx == lo && f.plus_idx == hi)
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(|c| c.dim == 0)
    }

    /// Line segments of the 1-dimensional cells clipped to `[0, hi]`.
    pub fn segments_2d(&self, hi: &[Q]) -> Result<Vec<Segment>> {
        if self.dim() != 2 {
            return Err(AuctionError::Unsupported(
                "segment export needs two item categories".into(),
            ));
        }
        let mut out = Vec::new();
        for c in self.cells.iter().filter(|c| c.dim == 1) {
            let Some(eq) = c
                .constraints
                .iter()
                .find(|r| r.relation == ConstraintKind::Eq)
            else {
                continue;
            };
            let dir = [-eq.coeffs[1], eq.coeffs[0]];
            let mut ends = Vec::new();
            for sign in [Q::ONE, -Q::ONE] {
                let mut lp = LinearProgram::new(2);
                lp.maximize(vec![sign * dir[0], sign * dir[1]]);
                for r in &c.constraints {
                    let (a, rel, b) = r.lp_row(0);
                    lp.constrain(a, rel, b);
                }
                for (j, h) in hi.iter().enumerate() {
                    let mut a = vec![Q::ZERO; 2];
                    a[j] = Q::ONE;
                    lp.constrain(a, Relation::Le, *h);
                }
                if let LpOutcome::Optimal { x, .. } = lp.solve() {
                    ends.push(Price(x));
                }
            }
            if ends.len() == 2 && ends[0] != ends[1] {
                out.push(Segment {
                    label: c.label.clone(),
                    from: ends[1].clone(),
                    to: ends[0].clone(),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: Vec<Bundle>,
    pub from: Price,
    pub to: Price,
}

/// Rows describing `{p >= 0 : payoffs on `ties` equal, >= every other}` in
/// price coordinates, base bundle first in `ties`.
fn face_rows(v: &Valuation, ties: &[usize]) -> (Vec<Constraint>, Vec<Constraint>) {
    let lat = v.lattice();
    let base = ties[0];
    let bb = lat.bundle(base);
    let mut eqs = Vec::new();
    for &d in &ties[1..] {
        eqs.push(Constraint {
            coeffs: to_q(&lat.bundle(d).diff(&bb)),
            relation: ConstraintKind::Eq,
            rhs: v.at(d) - v.at(base),
        });
    }
    let mut ges = Vec::new();
    for k in 0..lat.len() {
        if !ties.contains(&k) {
            ges.push(Constraint {
                coeffs: to_q(&lat.bundle(k).diff(&bb)),
                relation: ConstraintKind::Ge,
                rhs: v.at(k) - v.at(base),
            });
        }
    }
    (eqs, ges)
}

fn to_q(d: &[i64]) -> Vec<Q> {
    d.iter().map(|&x| Q::from(x)).collect()
}

fn nonneg_row(dim: usize, j: usize) -> Constraint {
    let mut coeffs = vec![Q::ZERO; dim];
    coeffs[j] = Q::ONE;
    Constraint {
        coeffs,
        relation: ConstraintKind::Ge,
        rhs: Q::ZERO,
    }
}

/// Maximise a common slack `t <= 1` over the strict rows, keeping `tight` as
/// equalities. Returns `(t, p)`.
fn margin(dim: usize, tight: &[Constraint], strict: &[Constraint]) -> Option<(Q, Vec<Q>)> {
    let mut lp = LinearProgram::new(dim + 1);
    lp.set_free(dim);
    let mut obj = vec![Q::ZERO; dim + 1];
    obj[dim] = Q::ONE;
    lp.maximize(obj.clone());
    lp.constrain(obj, Relation::Le, Q::ONE);
    for c in tight {
        let (a, _, b) = c.lp_row(1);
        lp.constrain(a, Relation::Eq, b);
    }
    for c in strict {
        let (mut a, _, b) = c.lp_row(1);
        a[dim] = -Q::ONE;
        lp.constrain(a, Relation::Ge, b);
    }
    match lp.solve() {
        LpOutcome::Optimal { value, mut x } => {
            x.truncate(dim);
            Some((value, x))
        }
        _ => None,
    }
}

/// Exact label of the face where `seed` ties, or `None` if that face is empty.
/// Also returns the affine dimension and a relative-interior point.
fn face_of(v: &Valuation, seed: &[usize]) -> Option<(Vec<usize>, Vec<Constraint>, usize, Vec<Q>)> {
    let dim = v.dim();
    let mut ties: Vec<usize> = seed.to_vec();
    ties.sort_unstable();
    let mut zero_axes: Vec<usize> = Vec::new();
    loop {
        let (eqs, ges) = face_rows(v, &ties);
        let mut tight = eqs.clone();
        tight.extend(zero_axes.iter().map(|&j| nonneg_row(dim, j)));
        let mut strict = ges.clone();
        let free_axes: Vec<usize> = (0..dim).filter(|j| !zero_axes.contains(j)).collect();
        strict.extend(free_axes.iter().map(|&j| nonneg_row(dim, j)));
        let (t, x) = margin(dim, &tight, &strict)?;
        if t.is_negative() {
            return None;
        }
        if t.is_positive() {
            let mut rows = eqs;
            rows.extend(zero_axes.iter().map(|&j| Constraint {
                relation: ConstraintKind::Eq,
                ..nonneg_row(dim, j)
            }));
            let r = rank(&rows.iter().map(|c| c.coeffs.clone()).collect::<Vec<_>>());
            rows.extend(prune(dim, &rows.clone(), ges, &free_axes));
            return Some((ties, rows, dim - r, x));
        }
        // Some strict rows are implicit equalities: find them one at a time.
        let mut grew = false;
        let lat = v.lattice();
        for k in 0..lat.len() {
            if ties.contains(&k) {
                continue;
            }
            let (eqs, ges) = face_rows(v, &ties);
            let row = ges
                .iter()
                .find(|c| c.coeffs == to_q(&lat.bundle(k).diff(&lat.bundle(ties[0]))))
                .expect("row for k")
                .clone();
            if implied_equal(dim, &eqs, &zero_axes, &ges, &row) {
                ties.push(k);
                ties.sort_unstable();
                grew = true;
                break;
            }
        }
        if !grew {
            let (eqs, ges) = face_rows(v, &ties);
            let j = free_axes
                .iter()
                .copied()
                .find(|&j| implied_equal(dim, &eqs, &zero_axes, &ges, &nonneg_row(dim, j)))?;
            zero_axes.push(j);
        }
    }
}

/// Whether `row >= rhs` holds with equality on the whole polyhedron.
fn implied_equal(
    dim: usize,
    eqs: &[Constraint],
    zero_axes: &[usize],
    ges: &[Constraint],
    row: &Constraint,
) -> bool {
    let mut lp = LinearProgram::new(dim);
    lp.maximize(row.coeffs.clone());
    for c in eqs {
        let (a, rel, b) = c.lp_row(0);
        lp.constrain(a, rel, b);
    }
    for &j in zero_axes {
        let (a, _, b) = nonneg_row(dim, j).lp_row(0);
        lp.constrain(a, Relation::Eq, b);
    }
    for c in ges {
        let (a, rel, b) = c.lp_row(0);
        lp.constrain(a, rel, b);
    }
    matches!(lp.solve(), LpOutcome::Optimal { value, .. } if value == row.rhs)
}

fn normalized(c: &Constraint) -> (Vec<Q>, Q) {
    let lead = c
        .coeffs
        .iter()
        .find(|x| !x.is_zero())
        .map(|x| x.abs())
        .unwrap_or(Q::ONE);
    (c.coeffs.iter().map(|x| *x / lead).collect(), c.rhs / lead)
}

/// Drops inequality rows that do not define a facet of the face cut out by
/// `tight`. Canonical order: lexicographic in the coefficient row.
fn prune(dim: usize, tight: &[Constraint], ges: Vec<Constraint>, free_axes: &[usize]) -> Vec<Constraint> {
    let mut cand: Vec<Constraint> = ges;
    cand.extend(free_axes.iter().map(|&j| nonneg_row(dim, j)));
    cand.sort_by(|a, b| (&a.coeffs, a.rhs).cmp(&(&b.coeffs, b.rhs)));
    let mut seen = BTreeSet::new();
    cand.retain(|c| seen.insert(normalized(c)));
    let face_dim = dim - rank(&tight.iter().map(|c| c.coeffs.clone()).collect::<Vec<_>>());
    if face_dim == 0 {
        return Vec::new();
    }
    (0..cand.len())
        .filter(|&i| {
            // Rows parallel to the tight subspace are either implied or violated.
            let mut t2 = tight.to_vec();
            t2.push(cand[i].clone());
            let r2 = rank(&t2.iter().map(|c| c.coeffs.clone()).collect::<Vec<_>>());
            if dim - r2 != face_dim - 1 {
                return false;
            }
            let others: Vec<Constraint> = cand
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, c)| c.clone())
                .collect();
            matches!(margin(dim, &t2, &others), Some((t, _)) if t.is_positive())
        })
        .map(|i| cand[i].clone())
        .collect()
}

pub fn enumerate_cells(v: &Valuation) -> Result<CellComplex> {
    let lat = v.lattice().clone();
    let dim = lat.dim();
    let maximal: Vec<Cell> = (0..lat.len())
        .into_par_iter()
        .map(|d| match face_of(v, &[d]) {
            Some((label, constraints, cd, x)) if label == [d] && cd == dim => Ok(Cell {
                label: vec![lat.bundle(d)],
                label_idx: label,
                constraints,
                dim: cd,
                interior_point: Price(x),
            }),
            _ => Err(AuctionError::EmptyCell(lat.bundle(d))),
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..lat.len())
        .flat_map(|a| (a + 1..lat.len()).map(move |b| (a, b)))
        .collect();
    let facets: Vec<Facet> = pairs
        .par_iter()
        .filter_map(|&(a, b)| {
            let (eqs, ges) = face_rows(v, &[a, b]);
            let strict: Vec<Constraint> = ges
                .into_iter()
                .chain((0..dim).map(|j| nonneg_row(dim, j)))
                .collect();
            let (t, x) = margin(dim, &eqs, &strict)?;
            if !t.is_positive() {
                return None;
            }
            let normal = lat.bundle(b).diff(&lat.bundle(a));
            Some(Facet {
                plus: lat.bundle(b),
                minus: lat.bundle(a),
                plus_idx: b,
                minus_idx: a,
                class: classify(&normal),
                rhs: v.at(b) - v.at(a),
                normal,
                interior_point: Price(x),
            })
        })
        .collect();

    // Lower-dimensional cells: close the facet labels under adding one more
    // tied bundle.
    let mut cells = maximal.clone();
    let mut seen: BTreeSet<Vec<usize>> = maximal.iter().map(|c| c.label_idx.clone()).collect();
    let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
    for f in &facets {
        queue.push_back(vec![f.minus_idx, f.plus_idx]);
    }
    while let Some(seed) = queue.pop_front() {
        let Some((label, constraints, cd, x)) = face_of(v, &seed) else {
            continue;
        };
        if !seen.insert(label.clone()) {
            continue;
        }
        for k in 0..lat.len() {
            if !label.contains(&k) {
                let mut next = label.clone();
                next.push(k);
                next.sort_unstable();
                if !seen.contains(&next) {
                    queue.push_back(next);
                }
            }
        }
        cells.push(Cell {
            label: label.iter().map(|&i| lat.bundle(i)).collect(),
            label_idx: label,
            constraints,
            dim: cd,
            interior_point: Price(x),
        });
    }
    cells[maximal.len()..].sort_by(|a, b| b.dim.cmp(&a.dim).then(a.label_idx.cmp(&b.label_idx)));

    Ok(CellComplex {
        valuation: v.clone(),
        maximal,
        cells,
        facets,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetVector {
    pub plus: Bundle,
    pub minus: Bundle,
    pub difference: Vec<i64>,
    pub class: FacetClass,
}

pub fn facet_vectors(cc: &CellComplex) -> Vec<FacetVector> {
    cc.facets
        .iter()
        .map(|f| FacetVector {
            plus: f.plus.clone(),
            minus: f.minus.clone(),
            difference: f.normal.clone(),
            class: f.class,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutesWitness {
    pub facet: FacetVector,
    /// `(p, p̂)` with `p̂ >= p`, `p̂_j = p_j` and `𝒟_j(p̂) < 𝒟_j(p)`.
    pub prices: Option<(Price, Price)>,
    pub category: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubstitutesReport {
    pub holds: bool,
    pub witness: Option<SubstitutesWitness>,
}

pub fn substitutes_check(cc: &CellComplex) -> SubstitutesReport {
    let v = &cc.valuation;
    let mut first = None;
    for f in cc.facets.iter().filter(|f| f.class == FacetClass::Other) {
        let fv = FacetVector {
            plus: f.plus.clone(),
            minus: f.minus.clone(),
            difference: f.normal.clone(),
            class: f.class,
        };
        if let Some((p, ph, j)) = probe_violation(v, f) {
            return SubstitutesReport {
                holds: false,
                witness: Some(SubstitutesWitness {
                    facet: fv,
                    prices: Some((p, ph)),
                    category: Some(j),
                }),
            };
        }
        if first.is_none() {
            first = Some(SubstitutesWitness {
                facet: fv,
                prices: None,
                category: None,
            });
        }
    }
    SubstitutesReport {
        holds: first.is_none(),
        witness: first,
    }
}

/// Crossing the facet along `e_i` changes the demand of `j ≠ i` by `∓d_j`;
/// this reduces it exactly when `d_i` and `d_j` share a sign.
fn probe_violation(v: &Valuation, f: &Facet) -> Option<(Price, Price, usize)> {
    let d = &f.normal;
    let dim = d.len();
    let (i, j) = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .find(|&(i, j)| i != j && d[i] != 0 && d[i].signum() == d[j].signum())?;
    // Moving up in p_i leaves the side whose label has more of good i.
    let (from, to) = if d[i] > 0 {
        (f.plus_idx, f.minus_idx)
    } else {
        (f.minus_idx, f.plus_idx)
    };
    let q = &f.interior_point;
    let mut s = Q::ONE;
    for _ in 0..200 {
        let mut p = q.0.clone();
        p[i] -= s;
        let mut ph = q.0.clone();
        ph[i] += s;
        if !p[i].is_negative() {
            let (a, b) = (demand(v, &p), demand(v, &ph));
            if a.indices == [from] && b.indices == [to] {
                debug_assert!(b.bundles[0][j] < a.bundles[0][j]);
                return Some((Price(p), Price(ph), j));
            }
        }
        s = s / Q::int(2);
    }
    None
}

/// p_max dominates every vertex of the complex.
pub fn p_max_dominates_vertices(cc: &CellComplex) -> bool {
    let pm = compute_p_max(&cc.valuation);
    cc.vertices().all(|c| pm.dominates(&c.interior_point))
}
