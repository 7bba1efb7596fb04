//! The round-based auction: transition, simulation, and the value functions
//! `V`, `Ṽ` and `W` on the truncated price grid.
//!
//! Table construction moves every price, increment and value onto one
//! integer scale (the lcm of all denominators) so the backward sweeps run
//! in `i128`. Everything is converted back to [`Q`] at the API boundary.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::demand;
use crate::error::{AuctionError, Result};
use crate::lattice::{AuctionInstance, Bundle, Lattice, Price};
use crate::rational::{common_denominator, scaled, Q};
use crate::valuation::{compute_p_max, Valuation};

/// Excess pattern `u_j = [k_j + δ_j > m_j]`.
pub fn excess(k: &[u32], delta: &[u32], m: &[u32]) -> Vec<bool> {
    k.iter()
        .zip(delta)
        .zip(m)
        .map(|((a, b), c)| a + b > *c)
        .collect()
}

pub fn clears(k: &[u32], delta: &[u32], m: &[u32]) -> bool {
    !excess(k, delta, m).into_iter().any(|x| x)
}

/// `T(k, p, ε)`.
pub fn transition(k: &Bundle, p: &[Q], inst: &AuctionInstance, v: &Valuation) -> Result<Price> {
    let d = demand(v, p);
    let delta = d.single(p)?;
    Ok(step(k, delta, p, inst))
}

fn step(k: &[u32], delta: &[u32], p: &[Q], inst: &AuctionInstance) -> Price {
    Price(
        excess(k, delta, &inst.m)
            .into_iter()
            .zip(p)
            .zip(&inst.eps)
            .map(|((u, x), e)| if u { *x + *e } else { *x })
            .collect(),
    )
}

/// `Σ_j ⌈(p_max_j − p_min_j)/ε_j⌉ + 1`.
pub fn round_bound(inst: &AuctionInstance, v: &Valuation) -> usize {
    let pm = compute_p_max(v);
    grid_extent(inst, &pm).iter().sum::<usize>() + 1
}

fn grid_extent(inst: &AuctionInstance, p_max: &[Q]) -> Vec<usize> {
    p_max
        .iter()
        .zip(inst.p_min.iter())
        .zip(&inst.eps)
        .map(|((hi, lo), e)| ((*hi - *lo) / *e).ceil().max(0) as usize)
        .collect()
}

/// Source of player bids.
pub trait BidPolicy {
    fn bid(&mut self, round: usize, price: &Price, previous: Option<&Bundle>) -> Bundle;
}

pub struct ConstantBid(pub Bundle);

impl BidPolicy for ConstantBid {
    fn bid(&mut self, _: usize, _: &Price, _: Option<&Bundle>) -> Bundle {
        self.0.clone()
    }
}

/// Replays a fixed list; the last entry repeats.
pub struct BidSequence(pub Vec<Bundle>);

impl BidPolicy for BidSequence {
    fn bid(&mut self, round: usize, _: &Price, _: Option<&Bundle>) -> Bundle {
        self.0[round.min(self.0.len() - 1)].clone()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteTrajectory {
    pub prices: Vec<Price>,
    pub bids: Vec<Bundle>,
    pub opponent_demands: Vec<Bundle>,
    pub stop_round: usize,
}

impl DiscreteTrajectory {
    pub fn final_price(&self) -> &Price {
        self.prices.last().expect("nonempty")
    }

    pub fn final_bid(&self) -> &Bundle {
        self.bids.last().expect("nonempty")
    }

    pub fn payoff(&self, w: &Valuation) -> Result<Q> {
        crate::valuation::payoff(w, self.final_bid(), self.final_price())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,price,bid,opponent\n");
        for n in 0..self.prices.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                n,
                csv_price(&self.prices[n]),
                csv_bundle(&self.bids[n]),
                csv_bundle(&self.opponent_demands[n])
            ));
        }
        s
    }
}

fn csv_price(p: &[Q]) -> String {
    format!(
        "\"{}\"",
        p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    )
}

fn csv_bundle(b: &[u32]) -> String {
    format!(
        "\"{}\"",
        b.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    )
}

pub fn simulate(
    policy: &mut dyn BidPolicy,
    inst: &AuctionInstance,
    v: &Valuation,
) -> Result<DiscreteTrajectory> {
    let bound = round_bound(inst, v);
    let lat = inst.lattice();
    let mut p = inst.p_min.clone();
    let mut traj = DiscreteTrajectory {
        prices: Vec::new(),
        bids: Vec::new(),
        opponent_demands: Vec::new(),
        stop_round: 0,
    };
    for round in 0..bound {
        let k = policy.bid(round, &p, traj.bids.last());
        if !lat.contains(&k) {
            return Err(AuctionError::OutOfLattice {
                bundle: k,
                bounds: inst.m.clone(),
            });
        }
        if let Some(prev) = traj.bids.last() {
            if k.l1() > prev.l1() {
                return Err(AuctionError::Eligibility {
                    round,
                    previous: prev.clone(),
                    bid: k,
                });
            }
        }
        let d = demand(v, &p);
        let delta = d.single(&p)?.clone();
        let next = step(&k, &delta, &p, inst);
        let done = next == p;
        traj.prices.push(p.clone());
        traj.bids.push(k);
        traj.opponent_demands.push(delta);
        if done {
            traj.stop_round = round;
            return Ok(traj);
        }
        p = next;
    }
    Err(AuctionError::RoundBound { bound })
}

/// `V(k, p)`: payoff of bidding `k` in every round from `p`.
pub fn value_constant(
    k: &Bundle,
    p: &Price,
    inst: &AuctionInstance,
    v: &Valuation,
    w: &Valuation,
) -> Result<Q> {
    let traj = simulate(&mut ConstantBid(k.clone()), &inst.with_start(p.clone()), v)?;
    traj.payoff(w)
}

/// `Ṽ(k, p)`: bid `k` now, then the best constant bid of no larger size.
pub fn value_tilde(
    k: &Bundle,
    p: &Price,
    inst: &AuctionInstance,
    v: &Valuation,
    w: &Valuation,
) -> Result<Q> {
    let d = demand(v, p);
    let delta = d.single(p)?;
    if clears(k, delta, &inst.m) {
        return crate::valuation::payoff(w, k, p);
    }
    let next = step(k, delta, p, inst);
    let lat = inst.lattice();
    let mut best: Option<Q> = None;
    for l in lat.bundles().filter(|l| l.l1() <= k.l1()) {
        let x = value_constant(&l, &next, inst, v, w)?;
        if best.is_none_or(|b| x > b) {
            best = Some(x);
        }
    }
    Ok(best.expect("zero bundle always eligible"))
}

/// `argmax_k V(k, p)`, lexicographically smallest on ties.
pub fn best_constant_bundle(
    p: &Price,
    inst: &AuctionInstance,
    v: &Valuation,
    w: &Valuation,
) -> Result<(Bundle, Q)> {
    let mut best: Option<(Bundle, Q)> = None;
    for k in inst.lattice().bundles() {
        let x = value_constant(&k, p, inst, v, w)?;
        if best.as_ref().is_none_or(|(_, b)| x > *b) {
            best = Some((k, x));
        }
    }
    Ok(best.expect("lattice nonempty"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachableNode {
    pub price: Price,
    pub demand: Bundle,
}

/// Closure of `p_min` under every `T(k, ·, ε)`, `k ∈ ℳ`, in BFS order.
pub fn reachable_prices(inst: &AuctionInstance, v: &Valuation) -> Result<Vec<ReachableNode>> {
    let lat = inst.lattice();
    let mut seen: BTreeSet<Price> = BTreeSet::new();
    let mut out = Vec::new();
    let mut queue = VecDeque::from([inst.p_min.clone()]);
    seen.insert(inst.p_min.clone());
    while let Some(p) = queue.pop_front() {
        let d = demand(v, &p);
        let delta = d.single(&p)?.clone();
        for k in lat.bundles() {
            let next = step(&k, &delta, &p, inst);
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
        out.push(ReachableNode { price: p, demand: delta });
    }
    Ok(out)
}

/// The truncated grid `p_min + ∏_j {0..n_j}·ε_j` with the opponent's demand
/// tabulated on an integer scale.
#[derive(Clone, Debug)]
pub struct PriceGrid {
    pub inst: AuctionInstance,
    pub extent: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    scale: i128,
    p0: Vec<i128>,
    eps: Vec<i128>,
    opp_values: Vec<i128>,
    opp_bundles: Vec<Vec<u32>>,
    opponent: Valuation,
}

const TIE: u32 = u32::MAX;

impl PriceGrid {
    /// `extra` lists further rationals (player values) that must be exact on
    /// the integer scale.
    pub fn new(inst: &AuctionInstance, v: &Valuation, extra: &[Q]) -> PriceGrid {
        let pm = compute_p_max(v);
        let extent = grid_extent(inst, &pm);
        let dims: Vec<usize> = extent.iter().map(|n| n + 1).collect();
        let mut strides = vec![1usize; dims.len()];
        for j in (0..dims.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * dims[j + 1];
        }
        let len = dims.iter().product();
        let scale = common_denominator(
            inst.p_min
                .iter()
                .chain(&inst.eps)
                .chain(v.values())
                .chain(extra),
        );
        PriceGrid {
            inst: inst.clone(),
            extent,
            strides,
            len,
            scale,
            p0: inst.p_min.iter().map(|x| scaled(*x, scale)).collect(),
            eps: inst.eps.iter().map(|x| scaled(*x, scale)).collect(),
            opp_values: v.values().iter().map(|x| scaled(*x, scale)).collect(),
            opp_bundles: v.lattice().bundles().map(|b| b.0).collect(),
            opponent: v.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.extent.len()
    }

    pub fn opponent(&self) -> &Valuation {
        &self.opponent
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let c = idx / s;
                idx %= s;
                c
            })
            .collect()
    }

    pub fn index(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn price(&self, c: &[usize]) -> Price {
        Price(
            c.iter()
                .enumerate()
                .map(|(j, &cj)| self.inst.p_min[j] + self.inst.eps[j] * Q::from(cj as i128))
                .collect(),
        )
    }

    /// Grid coordinates of an exact price, if it lies on the truncated grid.
    pub fn locate(&self, p: &[Q]) -> Option<Vec<usize>> {
        let mut c = Vec::with_capacity(p.len());
        for j in 0..p.len() {
            let n = (p[j] - self.inst.p_min[j]) / self.inst.eps[j];
            if !n.is_integer() || n.is_negative() || n.numer() as usize > self.extent[j] {
                return None;
            }
            c.push(n.numer() as usize);
        }
        Some(c)
    }

    fn scaled_price(&self, c: &[usize], out: &mut [i128]) {
        for j in 0..c.len() {
            out[j] = self.p0[j] + self.eps[j] * c[j] as i128;
        }
    }

    /// Index of the opponent's demanded bundle, or `TIE`.
    fn demand_at(&self, ps: &[i128]) -> u32 {
        let mut best = i128::MIN;
        let mut arg = TIE;
        for (i, b) in self.opp_bundles.iter().enumerate() {
            let mut u = self.opp_values[i];
            for j in 0..ps.len() {
                u -= b[j] as i128 * ps[j];
            }
            if u > best {
                best = u;
                arg = i as u32;
            } else if u == best {
                arg = TIE;
            }
        }
        arg
    }

    fn tie_error(&self, c: &[usize]) -> AuctionError {
        let p = self.price(c);
        let d = demand(&self.opponent, &p);
        AuctionError::Indifference {
            price: p,
            ties: d.bundles,
        }
    }

    pub fn opponent_demand(&self, c: &[usize]) -> Result<Bundle> {
        let mut ps = vec![0; c.len()];
        self.scaled_price(c, &mut ps);
        match self.demand_at(&ps) {
            TIE => Err(self.tie_error(c)),
            i => Ok(Bundle(self.opp_bundles[i as usize].clone())),
        }
    }

    pub fn to_q(&self, x: i128) -> Q {
        Q::new(x, self.scale)
    }

    /// Points of a level `Σ_j c_j = ℓ`, keyed by their first `M − 1`
    /// coordinates (the last one is implied).
    fn prefix_len(&self) -> usize {
        self.extent[..self.dim() - 1].iter().map(|n| n + 1).product()
    }

    fn prefix_coords(&self, mut pos: usize, c: &mut [usize]) {
        let d = self.dim();
        for j in (0..d - 1).rev() {
            let n = self.extent[j] + 1;
            c[j] = pos % n;
            pos /= n;
        }
    }

    fn prefix_pos(&self, c: &[usize]) -> usize {
        let mut pos = 0;
        for j in 0..self.dim() - 1 {
            pos = pos * (self.extent[j] + 1) + c[j];
        }
        pos
    }

    fn top_level(&self) -> usize {
        self.extent.iter().sum()
    }
}

/// Which value function a sweep computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sweep {
    /// `W`: the next bid is re-optimised every round.
    Optimal,
    /// `V` and `Ṽ`: the bid is frozen (from round 1 for `Ṽ`).
    Constant,
}

struct PlayerData {
    lattice: Lattice,
    values: Vec<i128>,
    bundles: Vec<Vec<u32>>,
    sizes: Vec<usize>,
    n_sizes: usize,
}

impl PlayerData {
    fn new(grid: &PriceGrid, w: &Valuation) -> PlayerData {
        let lattice = grid.inst.lattice();
        let bundles: Vec<Vec<u32>> = lattice.bundles().map(|b| b.0).collect();
        let sizes: Vec<usize> = bundles.iter().map(|b| b.iter().sum::<u32>() as usize).collect();
        let n_sizes = grid.inst.m.iter().sum::<u32>() as usize + 1;
        let values = bundles
            .iter()
            .map(|b| scaled(w.value(b).expect("player table covers the instance lattice"), grid.scale))
            .collect();
        PlayerData {
            lattice,
            values,
            bundles,
            sizes,
            n_sizes,
        }
    }
}

/// Per-point output of a sweep.
#[derive(Clone, Debug, Default)]
struct PointValues {
    value: Vec<i128>,
    tilde: Vec<i128>,
    best: Vec<i128>,
    arg: Vec<u16>,
    demand: u32,
}

/// Read access to already computed points.
trait Lookup {
    fn value(&self, c: &[usize], k: usize) -> i128;
    fn best(&self, c: &[usize], s: usize) -> i128;
}

fn eval_point(
    grid: &PriceGrid,
    pl: &PlayerData,
    sweep: Sweep,
    c: &[usize],
    done: &impl Lookup,
) -> Result<PointValues> {
    let dim = c.len();
    let mut ps = vec![0i128; dim];
    grid.scaled_price(c, &mut ps);
    let d = grid.demand_at(&ps);
    if d == TIE {
        return Err(grid.tie_error(c));
    }
    let delta = &grid.opp_bundles[d as usize];
    let m = &grid.inst.m;
    let nk = pl.bundles.len();
    let mut out = PointValues {
        value: vec![0; nk],
        tilde: if sweep == Sweep::Constant { vec![0; nk] } else { Vec::new() },
        best: vec![i128::MIN; pl.n_sizes],
        arg: vec![0; pl.n_sizes],
        demand: d,
    };
    let mut next = vec![0usize; dim];
    for k in 0..nk {
        let kb = &pl.bundles[k];
        let mut moved = false;
        for j in 0..dim {
            let up = kb[j] + delta[j] > m[j];
            next[j] = c[j] + up as usize;
            moved |= up;
        }
        if !moved {
            let mut pay = pl.values[k];
            for j in 0..dim {
                pay -= kb[j] as i128 * ps[j];
            }
            out.value[k] = pay;
            if sweep == Sweep::Constant {
                out.tilde[k] = pay;
            }
            continue;
        }
        debug_assert!((0..dim).all(|j| next[j] <= grid.extent[j]));
        match sweep {
            Sweep::Optimal => out.value[k] = done.best(&next, pl.sizes[k]),
            Sweep::Constant => {
                out.value[k] = done.value(&next, k);
                out.tilde[k] = done.best(&next, pl.sizes[k]);
            }
        }
    }
    // best[s] = max over |l| <= s of value[l]; lowest index wins ties.
    for l in 0..nk {
        let s = pl.sizes[l];
        if out.value[l] > out.best[s] {
            out.best[s] = out.value[l];
            out.arg[s] = l as u16;
        }
    }
    for s in 1..pl.n_sizes {
        if out.best[s - 1] >= out.best[s] {
            let prev_wins = out.best[s - 1] > out.best[s] || out.arg[s - 1] < out.arg[s];
            if prev_wins {
                out.best[s] = out.best[s - 1];
                out.arg[s] = out.arg[s - 1];
            }
        }
    }
    Ok(out)
}

/// Dense table over the whole truncated grid.
#[derive(Clone, Debug)]
pub struct ValueTable {
    pub grid: PriceGrid,
    pub sweep: Sweep,
    player: Valuation,
    lattice: Lattice,
    n_bundles: usize,
    n_sizes: usize,
    sizes: Vec<usize>,
    value: Vec<i128>,
    tilde: Vec<i128>,
    best: Vec<i128>,
    arg: Vec<u16>,
    demand: Vec<u32>,
}

struct TableView<'a> {
    grid: &'a PriceGrid,
    nk: usize,
    ns: usize,
    value: &'a [i128],
    best: &'a [i128],
}

impl Lookup for TableView<'_> {
    fn value(&self, c: &[usize], k: usize) -> i128 {
        self.value[self.grid.index(c) * self.nk + k]
    }
    fn best(&self, c: &[usize], s: usize) -> i128 {
        self.best[self.grid.index(c) * self.ns + s]
    }
}

fn build_table(grid: &PriceGrid, w: &Valuation, sweep: Sweep) -> Result<ValueTable> {
    let pl = PlayerData::new(grid, w);
    let nk = pl.bundles.len();
    let ns = pl.n_sizes;
    let n = grid.len();
    let mut value = vec![0i128; n * nk];
    let mut tilde = if sweep == Sweep::Constant { vec![0i128; n * nk] } else { Vec::new() };
    let mut best = vec![0i128; n * ns];
    let mut arg = vec![0u16; n * ns];
    let mut demand_tab = vec![0u32; n];

    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); grid.top_level() + 1];
    for idx in 0..n {
        levels[grid.coords(idx).iter().sum::<usize>()].push(idx);
    }
    for level in levels.iter().rev() {
        let view = TableView {
            grid,
            nk,
            ns,
            value: &value,
            best: &best,
        };
        let results: Vec<PointValues> = level
            .par_iter()
            .map(|&idx| eval_point(grid, &pl, sweep, &grid.coords(idx), &view))
            .collect::<Result<_>>()?;
        for (&idx, r) in level.iter().zip(results) {
            value[idx * nk..(idx + 1) * nk].copy_from_slice(&r.value);
            if sweep == Sweep::Constant {
                tilde[idx * nk..(idx + 1) * nk].copy_from_slice(&r.tilde);
            }
            best[idx * ns..(idx + 1) * ns].copy_from_slice(&r.best);
            arg[idx * ns..(idx + 1) * ns].copy_from_slice(&r.arg);
            demand_tab[idx] = r.demand;
        }
    }
    Ok(ValueTable {
        grid: grid.clone(),
        sweep,
        player: w.clone(),
        lattice: pl.lattice,
        n_bundles: nk,
        n_sizes: ns,
        sizes: pl.sizes,
        value,
        tilde,
        best,
        arg,
        demand: demand_tab,
    })
}

/// `W` on every grid point and bundle, with next-bid pointers.
pub fn value_dp(inst: &AuctionInstance, v: &Valuation, w: &Valuation) -> Result<ValueTable> {
    let grid = PriceGrid::new(inst, v, w.values());
    build_table(&grid, w, Sweep::Optimal)
}

/// `V` and `Ṽ` on every grid point and bundle.
pub fn constant_values(inst: &AuctionInstance, v: &Valuation, w: &Valuation) -> Result<ValueTable> {
    let grid = PriceGrid::new(inst, v, w.values());
    build_table(&grid, w, Sweep::Constant)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub bundle: Bundle,
    pub price: Price,
    pub value: Q,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilde: Option<Q>,
    /// Next bid under the stored policy; `None` when the auction stops.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_bid: Option<Bundle>,
}

impl ValueTable {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn slot(&self, k: &[u32], c: &[usize]) -> Option<(usize, usize)> {
        let ki = self.lattice.index_of(k)?;
        if c.iter().zip(&self.grid.extent).any(|(a, n)| a > n) {
            return None;
        }
        Some((self.grid.index(c), ki))
    }

    pub fn value_at(&self, k: &[u32], c: &[usize]) -> Option<Q> {
        let (i, ki) = self.slot(k, c)?;
        Some(self.grid.to_q(self.value[i * self.n_bundles + ki]))
    }

    pub fn tilde_at(&self, k: &[u32], c: &[usize]) -> Option<Q> {
        if self.tilde.is_empty() {
            return None;
        }
        let (i, ki) = self.slot(k, c)?;
        Some(self.grid.to_q(self.tilde[i * self.n_bundles + ki]))
    }

    pub fn value(&self, k: &[u32], p: &[Q]) -> Option<Q> {
        self.value_at(k, &self.grid.locate(p)?)
    }

    pub fn tilde(&self, k: &[u32], p: &[Q]) -> Option<Q> {
        self.tilde_at(k, &self.grid.locate(p)?)
    }

    fn next_coords(&self, ki: usize, c: &[usize]) -> Option<Vec<usize>> {
        let i = self.grid.index(c);
        let delta = &self.grid.opp_bundles[self.demand[i] as usize];
        let k = self.lattice.bundle(ki);
        let u = excess(&k, delta, &self.grid.inst.m);
        if !u.iter().any(|&x| x) {
            return None;
        }
        Some(c.iter().zip(u).map(|(a, b)| a + b as usize).collect())
    }

    /// Maximising next bid after bidding `k` at grid point `c`.
    pub fn policy_at(&self, k: &[u32], c: &[usize]) -> Option<Bundle> {
        let (_, ki) = self.slot(k, c)?;
        let next = self.next_coords(ki, c)?;
        let j = self.grid.index(&next);
        let a = self.arg[j * self.n_sizes + self.sizes[ki]];
        Some(self.lattice.bundle(a as usize))
    }

    /// Best round-0 bid at grid point `c` among bundles of size `<= s`.
    pub fn best_at(&self, c: &[usize], s: usize) -> (Bundle, Q) {
        let i = self.grid.index(c) * self.n_sizes + s.min(self.n_sizes - 1);
        (
            self.lattice.bundle(self.arg[i] as usize),
            self.grid.to_q(self.best[i]),
        )
    }

    pub fn opponent_demand_at(&self, c: &[usize]) -> Bundle {
        Bundle(self.grid.opp_bundles[self.demand[self.grid.index(c)] as usize].clone())
    }

    pub fn rows(&self) -> impl Iterator<Item = TableRow> + '_ {
        (0..self.grid.len()).flat_map(move |i| {
            let c = self.grid.coords(i);
            let price = self.grid.price(&c);
            (0..self.n_bundles).map(move |ki| {
                let bundle = self.lattice.bundle(ki);
                TableRow {
                    value: self.grid.to_q(self.value[i * self.n_bundles + ki]),
                    tilde: (!self.tilde.is_empty())
                        .then(|| self.grid.to_q(self.tilde[i * self.n_bundles + ki])),
                    next_bid: match self.sweep {
                        Sweep::Optimal => self.policy_at(&bundle, &c),
                        Sweep::Constant => None,
                    },
                    price: price.clone(),
                    bundle,
                }
            })
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(match self.sweep {
            Sweep::Optimal => "bundle,price,W,next_bid\n",
            Sweep::Constant => "bundle,price,V,V_tilde\n",
        });
        for r in self.rows() {
            let last = match self.sweep {
                Sweep::Optimal => r.next_bid.map(|b| csv_bundle(&b)).unwrap_or_default(),
                Sweep::Constant => r.tilde.map(|q| q.to_string()).unwrap_or_default(),
            };
            s.push_str(&format!(
                "{},{},{},{}\n",
                csv_bundle(&r.bundle),
                csv_price(&r.price),
                r.value,
                last
            ));
        }
        s
    }

    /// Checks the fixed-point equation on every entry; returns the first
    /// offending `(bundle, price)`.
    pub fn verify_equation(&self) -> Option<(Bundle, Price)> {
        for i in 0..self.grid.len() {
            let c = self.grid.coords(i);
            let p = self.grid.price(&c);
            for ki in 0..self.n_bundles {
                let k = self.lattice.bundle(ki);
                let stored = self.grid.to_q(self.value[i * self.n_bundles + ki]);
                let expect = match self.next_coords(ki, &c) {
                    None => crate::valuation::payoff(&self.player, &k, &p).ok(),
                    Some(next) => match self.sweep {
                        Sweep::Optimal => self
                            .lattice
                            .bundles()
                            .filter(|l| l.l1() <= k.l1())
                            .filter_map(|l| self.value_at(&l, &next))
                            .max(),
                        Sweep::Constant => self.value_at(&k, &next),
                    },
                };
                if expect != Some(stored) {
                    return Some((k, p));
                }
            }
        }
        None
    }
}

struct Ring<'a> {
    grid: &'a PriceGrid,
    nk: usize,
    ns: usize,
    value: &'a [Vec<i128>],
    best: &'a [Vec<i128>],
}

impl Lookup for Ring<'_> {
    fn value(&self, c: &[usize], k: usize) -> i128 {
        let b = c.iter().sum::<usize>() % self.value.len();
        self.value[b][self.grid.prefix_pos(c) * self.nk + k]
    }
    fn best(&self, c: &[usize], s: usize) -> i128 {
        let b = c.iter().sum::<usize>() % self.best.len();
        self.best[b][self.grid.prefix_pos(c) * self.ns + s]
    }
}

/// `W(k, p_min)` for every `k`, keeping only the `M + 1` most recent price
/// levels in memory. Used for fine grids where the full table does not fit.
pub fn value_dp_at_start(
    inst: &AuctionInstance,
    v: &Valuation,
    w: &Valuation,
) -> Result<BTreeMap<Bundle, Q>> {
    let grid = PriceGrid::new(inst, v, w.values());
    let pl = PlayerData::new(&grid, w);
    let dim = grid.dim();
    let (nk, ns) = (pl.bundles.len(), pl.n_sizes);
    let width = grid.prefix_len();
    let ring_len = dim + 1;
    let mut value = vec![vec![0i128; width * nk]; ring_len];
    let mut best = vec![vec![0i128; width * ns]; ring_len];
    let last = grid.extent[dim - 1];
    for level in (0..=grid.top_level()).rev() {
        let results: Vec<Option<PointValues>> = {
            let ring = Ring {
                grid: &grid,
                nk,
                ns,
                value: &value,
                best: &best,
            };
            (0..width)
                .into_par_iter()
                .map(|pos| {
                    let mut c = vec![0usize; dim];
                    grid.prefix_coords(pos, &mut c);
                    let head: usize = c[..dim - 1].iter().sum();
                    if head > level || level - head > last {
                        return Ok(None);
                    }
                    c[dim - 1] = level - head;
                    eval_point(&grid, &pl, Sweep::Optimal, &c, &ring).map(Some)
                })
                .collect::<Result<_>>()?
        };
        let b = level % ring_len;
        for (pos, r) in results.into_iter().enumerate() {
            if let Some(r) = r {
                value[b][pos * nk..(pos + 1) * nk].copy_from_slice(&r.value);
                best[b][pos * ns..(pos + 1) * ns].copy_from_slice(&r.best);
            }
        }
    }
    Ok(pl
        .bundles
        .iter()
        .enumerate()
        .map(|(k, b)| (Bundle(b.clone()), grid.to_q(value[0][k])))
        .collect())
}

/// Follows the stored next-bid pointers of a `W` table from a free round-0
/// bid.
pub struct TablePolicy<'a> {
    pub table: &'a ValueTable,
    pub first: Bundle,
    last_price: Option<Price>,
}

impl<'a> TablePolicy<'a> {
    pub fn new(table: &'a ValueTable, first: Bundle) -> Self {
        TablePolicy {
            table,
            first,
            last_price: None,
        }
    }
}

impl BidPolicy for TablePolicy<'_> {
    fn bid(&mut self, round: usize, price: &Price, previous: Option<&Bundle>) -> Bundle {
        let out = match (round, previous, &self.last_price) {
            (0, _, _) | (_, None, _) | (_, _, None) => self.first.clone(),
            (_, Some(k), Some(lp)) => {
                let c = self.table.grid.locate(lp).expect("rollout stays on the grid");
                self.table
                    .policy_at(k, &c)
                    .unwrap_or_else(|| k.clone())
            }
        };
        self.last_price = Some(price.clone());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::q;
    use crate::valuation::fixtures::*;

    fn qv(x: &[(i128, i128)]) -> Vec<Q> {
        x.iter().map(|&(n, d)| Q::new(n, d)).collect()
    }

    fn b(x: &[u32]) -> Bundle {
        Bundle(x.to_vec())
    }

    fn ex_instance() -> AuctionInstance {
        AuctionInstance::new(vec![1, 1], qv(&[(29, 10), (9, 5)]), qv(&[(1, 5), (2, 5)])).unwrap()
    }

    /// w(1,0) = 10, everything else 0 (non-monotone).
    fn w_ex() -> Valuation {
        Valuation::from_ints(vec![1, 1], &[0, 0, 10, 0])
            .unwrap()
            .with_nonmonotone_override()
    }

    #[test]
    fn transition_examples() {
        let inst = ex_instance();
        let v = v_ex();
        assert_eq!(
            transition(&b(&[1, 0]), &inst.p_min, &inst, &v).unwrap().0,
            qv(&[(31, 10), (9, 5)])
        );
        assert_eq!(
            transition(&b(&[0, 1]), &inst.p_min, &inst, &v).unwrap().0,
            qv(&[(29, 10), (11, 5)])
        );
        let far = Price(vec![Q::int(10), Q::int(10)]);
        assert_eq!(transition(&b(&[0, 0]), &far, &inst, &v).unwrap(), far);
        let tie = Price(vec![Q::int(3), Q::int(2)]);
        assert!(matches!(
            transition(&b(&[0, 0]), &tie, &inst, &v),
            Err(AuctionError::Indifference { .. })
        ));
    }

    #[test]
    fn simulate_examples() {
        let inst = ex_instance();
        let t = simulate(&mut ConstantBid(b(&[1, 0])), &inst, &v_ex()).unwrap();
        assert_eq!(t.stop_round, 1);
        assert_eq!(t.final_price().0, qv(&[(31, 10), (9, 5)]));
        assert_eq!(t.opponent_demands[1], b(&[0, 1]));

        let t = simulate(&mut ConstantBid(b(&[0, 0])), &inst, &v_ex()).unwrap();
        assert_eq!(t.stop_round, 0);

        let v = Valuation::from_ints(vec![3], &[0, 10, 18, 24]).unwrap();
        let inst = AuctionInstance::new(vec![3], qv(&[(1, 4)]), qv(&[(1, 2)])).unwrap();
        let t = simulate(&mut ConstantBid(b(&[2])), &inst, &v).unwrap();
        assert_eq!(t.final_price().0, qv(&[(33, 4)]));
        assert_eq!(*t.opponent_demands.last().unwrap(), b(&[1]));
        assert!(t.stop_round < round_bound(&inst, &v));
    }

    #[test]
    fn eligibility_is_enforced() {
        let inst = ex_instance();
        let mut pol = BidSequence(vec![b(&[0, 1]), b(&[1, 1])]);
        assert!(matches!(
            simulate(&mut pol, &inst, &v_ex()),
            Err(AuctionError::Eligibility { round: 1, .. })
        ));
    }

    #[test]
    fn constant_and_tilde_values() {
        let inst = ex_instance();
        let (v, w) = (v_ex(), w_ex());
        let p = inst.p_min.clone();
        assert_eq!(value_constant(&b(&[1, 0]), &p, &inst, &v, &w).unwrap(), q!(69 / 10));
        assert_eq!(value_constant(&b(&[0, 0]), &p, &inst, &v, &w).unwrap(), Q::ZERO);
        assert_eq!(value_tilde(&b(&[0, 1]), &p, &inst, &v, &w).unwrap(), q!(71 / 10));
        assert_eq!(value_tilde(&b(&[0, 0]), &p, &inst, &v, &w).unwrap(), Q::ZERO);
    }

    #[test]
    fn grid_tie_on_the_constant_ray() {
        // From (1,1) with step 1/4 the ray hits the tie p = (3, 1).
        let inst = AuctionInstance::new(vec![1, 1], vec![Q::ONE; 2], vec![q!(1 / 4); 2]).unwrap();
        let w = Valuation::from_ints(vec![1, 1], &[0, 0, 10, 0])
            .unwrap()
            .with_nonmonotone_override();
        let err = value_constant(&b(&[1, 0]), &inst.p_min, &inst, &v_sub(), &w).unwrap_err();
        assert!(matches!(err, AuctionError::Indifference { ref price, .. } if price.0 == vec![Q::int(3), Q::ONE]));

        let pert = inst.perturbed();
        let eta = Q::new(1, 4_000_000);
        assert_eq!(
            value_constant(&b(&[1, 0]), &pert.p_min, &pert, &v_sub(), &w).unwrap(),
            Q::int(7) - eta
        );
    }

    #[test]
    fn best_constant_bundle_examples() {
        let inst = AuctionInstance::new(vec![1, 1], vec![Q::ONE; 2], vec![q!(1 / 4); 2])
            .unwrap()
            .perturbed();
        let w = Valuation::new(
            Lattice::new(vec![1, 1]),
            vec![Q::ZERO, Q::ONE, Q::int(10), q!(21 / 2)],
        )
        .unwrap();
        let (k, _) = best_constant_bundle(&inst.p_min, &inst, &v_sub(), &w).unwrap();
        assert_eq!(k, b(&[1, 0]));

        let zero = Valuation::zero(Lattice::new(vec![1, 1]));
        let (k, x) = best_constant_bundle(&inst.p_min, &inst, &v_sub(), &zero).unwrap();
        assert_eq!((k, x), (b(&[0, 0]), Q::ZERO));
    }

    #[test]
    fn reachable_examples() {
        let inst = ex_instance();
        let r = reachable_prices(&inst, &v_ex()).unwrap();
        let prices: BTreeSet<Vec<Q>> = r.iter().map(|n| n.price.0.clone()).collect();
        for p in [[(31, 10), (9, 5)], [(29, 10), (11, 5)], [(31, 10), (11, 5)]] {
            assert!(prices.contains(&qv(&p)));
        }
        assert!(r.iter().all(|n| n.price.dominates(&inst.p_min)));

        // No competition: the opponent never demands anything.
        let z = Valuation::zero(Lattice::new(vec![1, 1]));
        assert_eq!(reachable_prices(&inst, &z).unwrap().len(), 1);
    }

    #[test]
    fn dp_example_prefers_a_non_constant_strategy() {
        let inst = ex_instance();
        let (v, w) = (v_ex(), w_ex());
        let t = value_dp(&inst, &v, &w).unwrap();
        let origin = vec![0, 0];
        assert_eq!(t.value_at(&[0, 1], &origin), Some(q!(71 / 10)));
        assert_eq!(t.value_at(&[1, 0], &origin), Some(q!(69 / 10)));
        assert_eq!(t.best_at(&origin, 2), (b(&[0, 1]), q!(71 / 10)));
        assert_eq!(t.policy_at(&[0, 1], &origin), Some(b(&[1, 0])));
        assert!(t.verify_equation().is_none());

        let c = constant_values(&inst, &v, &w).unwrap();
        assert_eq!(c.value_at(&[1, 0], &origin), Some(q!(69 / 10)));
        assert_eq!(c.tilde_at(&[0, 1], &origin), Some(q!(71 / 10)));
        assert!(c.verify_equation().is_none());

        // Rolling out the policy from (0,1) realises the table value.
        let traj = simulate(&mut TablePolicy::new(&t, b(&[0, 1])), &inst, &v).unwrap();
        assert_eq!(traj.payoff(&w).unwrap(), q!(71 / 10));
        assert_eq!(traj.bids, vec![b(&[0, 1]), b(&[1, 0])]);

        let rolled = value_dp_at_start(&inst, &v, &w).unwrap();
        for k in inst.lattice().bundles() {
            assert_eq!(Some(rolled[&k]), t.value_at(&k, &origin));
        }
    }

    #[test]
    fn all_clearing_start() {
        let inst = AuctionInstance::new(vec![2, 2], vec![Q::ONE; 2], vec![Q::ONE; 2]).unwrap();
        let v = Valuation::zero(Lattice::new(vec![2, 2]));
        let w = Valuation::from_ints(vec![2, 2], &[0, 1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let t = value_dp(&inst, &v, &w).unwrap();
        for k in inst.lattice().bundles() {
            let pay = crate::valuation::payoff(&w, &k, &inst.p_min).unwrap();
            assert_eq!(t.value_at(&k, &[0, 0]), Some(pay));
        }
    }

    #[test]
    fn tables_agree_with_simulation() {
        let inst = ex_instance();
        let (v, w) = (v_ex(), w_ex());
        let c = constant_values(&inst, &v, &w).unwrap();
        let t = value_dp(&inst, &v, &w).unwrap();
        for i in 0..c.grid.len() {
            let g = c.grid.coords(i);
            let p = c.grid.price(&g);
            for k in inst.lattice().bundles() {
                let vk = c.value_at(&k, &g).unwrap();
                assert_eq!(vk, value_constant(&k, &p, &inst, &v, &w).unwrap());
                assert_eq!(c.tilde_at(&k, &g).unwrap(), value_tilde(&k, &p, &inst, &v, &w).unwrap());
                assert!(t.value_at(&k, &g).unwrap() >= c.tilde_at(&k, &g).unwrap());
                assert!(c.tilde_at(&k, &g).unwrap() >= vk);
            }
        }
    }

    #[test]
    fn csv_rendering() {
        let inst = ex_instance();
        let t = value_dp(&inst, &v_ex(), &w_ex()).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("bundle,price,W,next_bid\n"));
        assert!(csv.contains("\"0,1\",\"29/10,9/5\",71/10,\"1,0\""));
    }
}
