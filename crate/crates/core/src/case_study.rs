//! Two operators bidding for two lots in each of two bands, each facing the
//! other as a straightforward bidder. Money is in thousands of AUD.
//!
//! Valuations are drawn per bidder from the structured substitutes family
//! and kept only if the bidder's demand at the observed final price is its
//! target bundle. The pair is then kept only if the observed final price is
//! reachable in both role assignments: some bid sequence of the player
//! against the straightforward opponent drives the price to at least
//! `p_max_target − ε`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::demand;
use crate::discrete::{reachable_prices, value_constant, value_dp, ValueTable};
use crate::error::{AuctionError, Result};
use crate::generate::{accept, draw_family, RejectionCounts};
use crate::lattice::{AuctionInstance, Bundle, Price};
use crate::rational::Q;
use crate::valuation::Valuation;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStudyConfig {
    pub m: Vec<u32>,
    pub p_min: Vec<Q>,
    pub eps: Vec<Q>,
    pub p_max_target: Vec<Q>,
    pub seed: u64,
    /// Marginal values are drawn in `1..=value_scale`.
    pub value_scale: i64,
    pub max_attempts: usize,
    /// Bundle the first bidder must demand at `p_max_target`.
    pub first_target: Bundle,
    pub second_target: Bundle,
    pub names: (String, String),
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig {
            m: vec![2, 2],
            p_min: vec![Q::int(765), Q::new(1811, 2)],
            eps: vec![Q::int(20), Q::new(5191, 100)],
            p_max_target: vec![Q::int(1165), Q::int(3501)],
            seed: 0,
            value_scale: 6000,
            max_attempts: 20_000,
            first_target: Bundle(vec![2, 0]),
            second_target: Bundle(vec![0, 2]),
            names: ("Vodafone".into(), "TPG".into()),
        }
    }
}

impl CaseStudyConfig {
    pub fn with_seed(seed: u64) -> Self {
        CaseStudyConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn instance(&self) -> Result<AuctionInstance> {
        AuctionInstance::new(self.m.clone(), self.p_min.clone(), self.eps.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStudyRejections {
    pub first_invalid_or_not_substitutes: usize,
    pub first_target_demand: usize,
    pub second_invalid_or_not_substitutes: usize,
    pub second_target_demand: usize,
    pub unreachable: usize,
    /// Pairs dropped because the grid meets an indifference locus even after
    /// the generic perturbation.
    pub tie_on_grid: usize,
}

impl CaseStudyRejections {
    pub fn binding(&self) -> &'static str {
        let all = [
            (self.first_invalid_or_not_substitutes, "first bidder validity/substitutes"),
            (self.first_target_demand, "first bidder demand at p_max"),
            (self.second_invalid_or_not_substitutes, "second bidder validity/substitutes"),
            (self.second_target_demand, "second bidder demand at p_max"),
            (self.unreachable, "p_max reachability"),
            (self.tie_on_grid, "tie on the price grid"),
        ];
        all.iter().max_by_key(|(n, _)| *n).map(|(_, s)| *s).unwrap_or("none")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachablePoint {
    pub price: Price,
    pub opponent_demand: Bundle,
    /// Optimal opening bid and `W` at this price.
    pub best_bundle: Bundle,
    pub value: Q,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleReport {
    pub player: String,
    pub opponent: String,
    /// `V(k, p_min)` for every bundle.
    pub constant_values: BTreeMap<Bundle, Q>,
    /// `argmax_k V(k, p_min)`, lexicographically smallest on ties.
    pub best_bundle: Bundle,
    pub best_value: Q,
    /// `max_k W(k, p_min)`; equals `best_value` under substitutes.
    pub optimal_value: Q,
    pub value_at_p_max: Q,
    /// A reachable price dominating `p_max_target − ε`, if any.
    pub reach_witness: Option<Price>,
    pub reachable: Vec<ReachablePoint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointOutcome {
    pub first_bid: Bundle,
    pub second_bid: Bundle,
    pub total: Bundle,
    pub within_supply: bool,
    pub unsold: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyReport {
    pub config: CaseStudyConfig,
    /// Start price actually used (shifted generically if the grid hit a tie).
    pub p_start: Price,
    pub perturbed: bool,
    pub first: Valuation,
    pub second: Valuation,
    pub attempts: usize,
    pub acceptance_rate: f64,
    pub rejections: CaseStudyRejections,
    /// Player = first bidder against the straightforward second bidder, and
    /// the reverse.
    pub roles: [RoleReport; 2],
    pub joint: JointOutcome,
}

fn demands_target(v: &Valuation, p: &[Q], target: &Bundle) -> bool {
    let d = demand(v, p);
    d.is_singleton() && &d.bundles[0] == target
}

fn draw_one(
    rng: &mut ChaCha8Rng,
    cfg: &CaseStudyConfig,
    inst: &AuctionInstance,
    target: &Bundle,
    invalid: &mut usize,
    off_target: &mut usize,
) -> Result<Valuation> {
    let mut counts = RejectionCounts::default();
    for _ in 0..cfg.max_attempts {
        let v = Valuation::from_ints(cfg.m.clone(), &draw_family(rng, &cfg.m, cfg.value_scale))?;
        if !demands_target(&v, &cfg.p_max_target, target) {
            *off_target += 1;
            continue;
        }
        if !accept(&v, inst, &mut counts) {
            *invalid += 1;
            continue;
        }
        return Ok(v);
    }
    Err(AuctionError::SamplingExhausted {
        attempts: cfg.max_attempts,
        detail: format!("no draw demands {target} at p_max_target"),
    })
}

fn reach_witness(inst: &AuctionInstance, opp: &Valuation, target: &[Q]) -> Result<Option<Price>> {
    let floor: Vec<Q> = target.iter().zip(&inst.eps).map(|(t, e)| *t - *e).collect();
    Ok(reachable_prices(inst, opp)?
        .into_iter()
        .map(|n| n.price)
        .find(|p| p.dominates(&floor)))
}

fn role_report(
    inst: &AuctionInstance,
    names: (&str, &str),
    w: &Valuation,
    opp: &Valuation,
    target: &[Q],
) -> Result<RoleReport> {
    let table: ValueTable = value_dp(inst, opp, w)?;
    let top = inst.m.iter().sum::<u32>() as usize;
    let origin = vec![0; inst.dim()];
    let lat = inst.lattice();
    let mut constant_values = BTreeMap::new();
    let mut best: Option<(Bundle, Q)> = None;
    for k in lat.bundles() {
        let x = value_constant(&k, &inst.p_min, inst, opp, w)?;
        if best.as_ref().is_none_or(|(_, b)| x > *b) {
            best = Some((k.clone(), x));
        }
        constant_values.insert(k, x);
    }
    let (best_bundle, best_value) = best.expect("lattice nonempty");
    let (_, optimal_value) = table.best_at(&origin, top);
    let shifted: Vec<Q> = target
        .iter()
        .zip(inst.p_min.iter())
        .zip(&inst.eps)
        .map(|((t, lo), e)| *lo + *e * ((*t - *lo) / *e).floor().into())
        .collect();
    let c = table
        .grid
        .locate(&shifted)
        .ok_or_else(|| AuctionError::Unsupported("p_max_target outside the value grid".into()))?;
    let (_, value_at_p_max) = table.best_at(&c, top);
    let reachable = reachable_prices(inst, opp)?
        .into_iter()
        .map(|n| {
            let c = table.grid.locate(&n.price).expect("reachable prices lie on the grid");
            let (best_bundle, value) = table.best_at(&c, top);
            ReachablePoint {
                price: n.price,
                opponent_demand: n.demand,
                best_bundle,
                value,
            }
        })
        .collect();
    Ok(RoleReport {
        player: names.0.to_string(),
        opponent: names.1.to_string(),
        constant_values,
        best_bundle,
        best_value,
        optimal_value,
        value_at_p_max,
        reach_witness: reach_witness(inst, opp, target)?,
        reachable,
    })
}

fn both_roles(inst: &AuctionInstance, cfg: &CaseStudyConfig, first: &Valuation, second: &Valuation) -> Result<[RoleReport; 2]> {
    let (a, b) = (cfg.names.0.as_str(), cfg.names.1.as_str());
    Ok([
        role_report(inst, (a, b), first, second, &cfg.p_max_target)?,
        role_report(inst, (b, a), second, first, &cfg.p_max_target)?,
    ])
}

pub fn run_case_study(cfg: &CaseStudyConfig) -> Result<CaseStudyReport> {
    let base = cfg.instance()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rej = CaseStudyRejections::default();
    let exhausted = |rej: &CaseStudyRejections, attempts: usize| AuctionError::SamplingExhausted {
        attempts,
        detail: format!("binding constraint: {}; counts {rej:?}", rej.binding()),
    };
    for attempt in 1..=cfg.max_attempts {
        let first = match draw_one(
            &mut rng,
            cfg,
            &base,
            &cfg.first_target,
            &mut rej.first_invalid_or_not_substitutes,
            &mut rej.first_target_demand,
        ) {
            Ok(v) => v,
            Err(_) => return Err(exhausted(&rej, attempt)),
        };
        let second = match draw_one(
            &mut rng,
            cfg,
            &base,
            &cfg.second_target,
            &mut rej.second_invalid_or_not_substitutes,
            &mut rej.second_target_demand,
        ) {
            Ok(v) => v,
            Err(_) => return Err(exhausted(&rej, attempt)),
        };
        let mut perturbed = false;
        let mut inst = base.clone();
        let mut roles = both_roles(&inst, cfg, &first, &second);
        if matches!(&roles, Err(e) if e.is_assumption_violation()) {
            perturbed = true;
            inst = base.perturbed();
            roles = both_roles(&inst, cfg, &first, &second);
        }
        let [r1, r2] = match roles {
            Ok(r) => r,
            Err(e) if e.is_assumption_violation() => {
                rej.tie_on_grid += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if r1.reach_witness.is_none() || r2.reach_witness.is_none() {
            rej.unreachable += 1;
            continue;
        }
        let total = r1.best_bundle.add(&r2.best_bundle);
        let within_supply = total.fits_within(&cfg.m);
        let unsold = cfg
            .m
            .iter()
            .zip(total.iter())
            .map(|(m, t)| m.saturating_sub(*t))
            .collect();
        let draws = rej.first_invalid_or_not_substitutes
            + rej.first_target_demand
            + rej.second_invalid_or_not_substitutes
            + rej.second_target_demand
            + 2 * attempt;
        return Ok(CaseStudyReport {
            config: cfg.clone(),
            p_start: inst.p_min.clone(),
            perturbed,
            joint: JointOutcome {
                first_bid: r1.best_bundle.clone(),
                second_bid: r2.best_bundle.clone(),
                total,
                within_supply,
                unsold,
            },
            first,
            second,
            attempts: attempt,
            acceptance_rate: 2.0 / draws as f64,
            rejections: rej,
            roles: [r1, r2],
        });
    }
    Err(exhausted(&rej, cfg.max_attempts))
}

impl CaseStudyReport {
    /// `price,opponent_demand,best_bundle,W` rows for one role.
    pub fn reachable_csv(&self, role: usize) -> String {
        let mut s = String::from("p1,p2,opponent_demand,best_bundle,W\n");
        for r in &self.roles[role].reachable {
            s.push_str(&format!(
                "{},\"{}\",\"{}\",{}\n",
                r.price.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                String::from(r.opponent_demand.clone()),
                String::from(r.best_bundle.clone()),
                r.value
            ));
        }
        s
    }
}
