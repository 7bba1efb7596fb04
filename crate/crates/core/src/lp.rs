//! Small exact linear programs over [`Q`].
//!
//! Dense two-phase simplex with Bland's anti-cycling rule. The programs built
//! by this crate have a handful of variables and a few dozen rows, so the
//! dense tableau is adequate and every answer is exact.

use crate::rational::Q;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { value: Q, x: Vec<Q> },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<Q> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn point(&self) -> Option<&[Q]> {
        match self {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        !matches!(self, LpOutcome::Infeasible)
    }
}

/// `maximize c·x` subject to linear rows; variables are `>= 0` unless marked
/// free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n: usize,
    free: Vec<bool>,
    objective: Vec<Q>,
    rows: Vec<(Vec<Q>, Relation, Q)>,
}

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        LinearProgram {
            n,
            free: vec![false; n],
            objective: vec![Q::ZERO; n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn set_free(&mut self, j: usize) -> &mut Self {
        self.free[j] = true;
        self
    }

    pub fn maximize(&mut self, c: Vec<Q>) -> &mut Self {
        assert_eq!(c.len(), self.n);
        self.objective = c;
        self
    }

    pub fn constrain(&mut self, a: Vec<Q>, rel: Relation, b: Q) -> &mut Self {
        assert_eq!(a.len(), self.n);
        self.rows.push((a, rel, b));
        self
    }

    pub fn solve(&self) -> LpOutcome {
        // Column layout: one column per nonnegative variable, two per free
        // variable, then one slack/surplus per inequality, then artificials.
        let mut col_of: Vec<(usize, Option<usize>)> = Vec::with_capacity(self.n);
        let mut ncols = 0;
        for j in 0..self.n {
            if self.free[j] {
                col_of.push((ncols, Some(ncols + 1)));
                ncols += 2;
            } else {
                col_of.push((ncols, None));
                ncols += 1;
            }
        }
        let n_struct = ncols;
        let m = self.rows.len();

        let mut rows: Vec<Vec<Q>> = Vec::with_capacity(m);
        let mut rels = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m);
        for (a, rel, b) in &self.rows {
            let mut r = vec![Q::ZERO; n_struct];
            for j in 0..self.n {
                let (pos, neg) = col_of[j];
                r[pos] = a[j];
                if let Some(neg) = neg {
                    r[neg] = -a[j];
                }
            }
            let (mut rel, mut b) = (*rel, *b);
            if b.is_negative() {
                for x in r.iter_mut() {
                    *x = -*x;
                }
                b = -b;
                rel = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
            rows.push(r);
            rels.push(rel);
            rhs.push(b);
        }

        let n_slack = rels.iter().filter(|r| **r != Relation::Eq).count();
        let n_art = rels.iter().filter(|r| **r != Relation::Le).count();
        let total = n_struct + n_slack + n_art;
        let art_start = n_struct + n_slack;

        let mut tab: Vec<Vec<Q>> = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let (mut s_idx, mut a_idx) = (n_struct, art_start);
        for i in 0..m {
            let mut row = vec![Q::ZERO; total + 1];
            row[..n_struct].copy_from_slice(&rows[i]);
            row[total] = rhs[i];
            match rels[i] {
                Relation::Le => {
                    row[s_idx] = Q::ONE;
                    basis.push(s_idx);
                    s_idx += 1;
                }
                Relation::Ge => {
                    row[s_idx] = -Q::ONE;
                    s_idx += 1;
                    row[a_idx] = Q::ONE;
                    basis.push(a_idx);
                    a_idx += 1;
                }
                Relation::Eq => {
                    row[a_idx] = Q::ONE;
                    basis.push(a_idx);
                    a_idx += 1;
                }
            }
            tab.push(row);
        }

        let mut t = Tableau {
            rows: tab,
            basis,
            width: total,
            blocked_from: total,
        };

        if n_art > 0 {
            let mut c1 = vec![Q::ZERO; total];
            for c in c1.iter_mut().skip(art_start) {
                *c = -Q::ONE;
            }
            let mut obj = t.objective_row(&c1);
            if t.run(&mut obj).is_err() {
                unreachable!("phase one is bounded");
            }
            if (-obj[total]).is_negative() {
                return LpOutcome::Infeasible;
            }
            t.expel_artificials(art_start);
            t.blocked_from = art_start;
        }

        let mut c2 = vec![Q::ZERO; total];
        for j in 0..self.n {
            let (pos, neg) = col_of[j];
            c2[pos] = self.objective[j];
            if let Some(neg) = neg {
                c2[neg] = -self.objective[j];
            }
        }
        let mut obj = t.objective_row(&c2);
        if t.run(&mut obj).is_err() {
            return LpOutcome::Unbounded;
        }

        let mut cols = vec![Q::ZERO; total];
        for (i, &b) in t.basis.iter().enumerate() {
            cols[b] = t.rows[i][total];
        }
        let x = (0..self.n)
            .map(|j| {
                let (pos, neg) = col_of[j];
                cols[pos] - neg.map(|c| cols[c]).unwrap_or(Q::ZERO)
            })
            .collect();
        LpOutcome::Optimal {
            value: -obj[total],
            x,
        }
    }
}

struct Tableau {
    rows: Vec<Vec<Q>>,
    basis: Vec<usize>,
    width: usize,
    /// Columns at or beyond this index may never enter the basis.
    blocked_from: usize,
}

struct Unbounded;

impl Tableau {
    /// Reduced-cost row for objective `c`, with `-z` in the last slot.
    fn objective_row(&self, c: &[Q]) -> Vec<Q> {
        let mut obj: Vec<Q> = c.to_vec();
        obj.push(Q::ZERO);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = c[b];
            if !cb.is_zero() {
                for (o, r) in obj.iter_mut().zip(&self.rows[i]) {
                    *o -= cb * *r;
                }
            }
        }
        obj
    }

    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [Q]) {
        let inv = self.rows[pr][pc].recip();
        for x in self.rows[pr].iter_mut() {
            if !x.is_zero() {
                *x *= inv;
            }
        }
        let prow = self.rows[pr].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == pr {
                continue;
            }
            let f = row[pc];
            if f.is_zero() {
                continue;
            }
            for (x, p) in row.iter_mut().zip(&prow) {
                if !p.is_zero() {
                    *x -= f * *p;
                }
            }
        }
        let f = obj[pc];
        if !f.is_zero() {
            for (x, p) in obj.iter_mut().zip(&prow) {
                if !p.is_zero() {
                    *x -= f * *p;
                }
            }
        }
        self.basis[pr] = pc;
    }

    fn run(&mut self, obj: &mut [Q]) -> Result<(), Unbounded> {
        let rhs = self.width;
        loop {
            let Some(pc) = (0..self.blocked_from).find(|&j| obj[j].is_positive()) else {
                return Ok(());
            };
            let mut best: Option<(usize, Q)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[pc];
                if a.is_positive() {
                    let ratio = row[rhs] / a;
                    let better = match best {
                        None => true,
                        Some((bi, br)) => {
                            ratio < br || (ratio == br && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        best = Some((i, ratio));
                    }
                }
            }
            let Some((pr, _)) = best else {
                return Err(Unbounded);
            };
            self.pivot(pr, pc, obj);
        }
    }

    /// After a feasible phase one, pivot zero-level artificials out of the
    /// basis, dropping rows that turn out to be linearly dependent.
    fn expel_artificials(&mut self, art_start: usize) {
        let mut i = 0;
        while i < self.rows.len() {
            if self.basis[i] >= art_start {
                if let Some(pc) = (0..art_start).find(|&j| !self.rows[i][j].is_zero()) {
                    let mut dummy = vec![Q::ZERO; self.width + 1];
                    self.pivot(i, pc, &mut dummy);
                } else {
                    self.rows.remove(i);
                    self.basis.remove(i);
                    continue;
                }
            }
            i += 1;
        }
    }
}

/// Rank of a rational matrix given by rows.
pub fn rank(rows: &[Vec<Q>]) -> usize {
    let mut m: Vec<Vec<Q>> = rows.to_vec();
    let ncols = m.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..ncols {
        let Some(piv) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, piv);
        for i in 0..m.len() {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c] / m[r][c];
                for j in c..ncols {
                    let d = f * m[r][j];
                    m[i][j] -= d;
                }
            }
        }
        r += 1;
        if r == m.len() {
            break;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i128) -> Q {
        Q::int(n)
    }

    #[test]
    fn textbook_maximum() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  36 at (2, 6)
        let mut lp = LinearProgram::new(2);
        lp.maximize(vec![q(3), q(5)])
            .constrain(vec![q(1), q(0)], Relation::Le, q(4))
            .constrain(vec![q(0), q(2)], Relation::Le, q(12))
            .constrain(vec![q(3), q(2)], Relation::Le, q(18));
        assert_eq!(
            lp.solve(),
            LpOutcome::Optimal {
                value: q(36),
                x: vec![q(2), q(6)]
            }
        );
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.constrain(vec![q(1)], Relation::Ge, q(2))
            .constrain(vec![q(1)], Relation::Le, q(1));
        assert_eq!(lp.solve(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::new(2);
        lp.maximize(vec![q(1), q(0)])
            .constrain(vec![q(1), q(-1)], Relation::Ge, q(0));
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn free_variables_and_equalities() {
        // max t, t free, x + t = 1, x >= 3 -> t = -2
        let mut lp = LinearProgram::new(2);
        lp.set_free(1)
            .maximize(vec![q(0), q(1)])
            .constrain(vec![q(1), q(1)], Relation::Eq, q(1))
            .constrain(vec![q(1), q(0)], Relation::Ge, q(3));
        assert_eq!(lp.solve().value(), Some(q(-2)));
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::new(2);
        lp.maximize(vec![q(1), q(1)])
            .constrain(vec![q(1), q(1)], Relation::Eq, q(2))
            .constrain(vec![q(2), q(2)], Relation::Eq, q(4))
            .constrain(vec![q(1), q(0)], Relation::Le, q(1));
        assert_eq!(lp.solve().value(), Some(q(2)));
    }

    #[test]
    fn degenerate_problem_terminates() {
        // Klee-Minty-like degenerate corner at the origin.
        let mut lp = LinearProgram::new(3);
        lp.maximize(vec![q(10), q(-57), q(-9)])
            .constrain(vec![Q::new(1, 2), Q::new(-11, 2), Q::new(-5, 2)], Relation::Le, q(0))
            .constrain(vec![Q::new(1, 2), Q::new(-3, 2), Q::new(-1, 2)], Relation::Le, q(0))
            .constrain(vec![q(1), q(0), q(0)], Relation::Le, q(1));
        assert_eq!(lp.solve().value(), Some(q(1)));
    }

    proptest::proptest! {
        // Optimum of a random box-constrained LP equals the brute-force vertex max.
        #[test]
        fn box_lp_matches_vertex_enumeration(
            c in proptest::collection::vec(-9i128..10, 2),
            hi in proptest::collection::vec(1i128..9, 2),
            cut in 1i128..15,
        ) {
            let mut lp = LinearProgram::new(2);
            lp.maximize(c.iter().map(|&x| q(x)).collect())
                .constrain(vec![q(1), q(0)], Relation::Le, q(hi[0]))
                .constrain(vec![q(0), q(1)], Relation::Le, q(hi[1]))
                .constrain(vec![q(1), q(1)], Relation::Le, q(cut));
            let mut best: Option<Q> = None;
            for x in 0..=hi[0] * 2 {
                for y in 0..=hi[1] * 2 {
                    let (x, y) = (Q::new(x, 2), Q::new(y, 2));
                    if x + y <= q(cut) {
                        let v = q(c[0]) * x + q(c[1]) * y;
                        best = Some(best.map_or(v, |b| b.max(v)));
                    }
                }
            }
            // Every vertex has half-integral coordinates here.
            proptest::prop_assert_eq!(lp.solve().value(), best);
        }
    }
}
