use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use clock_auction::case_study::{run_case_study, CaseStudyConfig};
use clock_auction::complex::{enumerate_cells, substitutes_check, CellComplex};
use clock_auction::discrete::{
    best_constant_bundle, reachable_prices, simulate, value_constant, value_dp, value_tilde, BidSequence,
};
use clock_auction::filippov::{euler_trace, trace};
use clock_auction::report::{emit_report, Format, RunOutput};
use clock_auction::scenario::{load_scenario, Scenario};
use clock_auction::semilinear::{
    decompose_value, decompose_value_tilde, grid_discontinuities, surface_discontinuities, value_map, ValueKind,
};
use clock_auction::valuation::{compute_p_max, strict_concavity_check};
use clock_auction::{AuctionError, AuctionInstance, Bundle, Price, Q};

#[derive(Parser)]
#[command(name = "sca", version, about = "Simple clock auctions against straightforward bidders")]
struct Cli {
    /// Scenario document (JSON).
    #[arg(long, global = true)]
    instance: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write artifacts and a manifest here instead of printing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "json")]
    format: Format,
    /// Bidder to treat as the player (overrides the scenario).
    #[arg(long, global = true)]
    player: Option<String>,
    /// Shift p_min generically off the indifference locus.
    #[arg(long, global = true)]
    perturb: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    W,
    V,
    Vtilde,
}

#[derive(Subcommand)]
enum Verb {
    /// Validate the scenario and report substitutes and concavity status.
    Check,
    /// Run the discrete auction for a bid sequence (the last bid repeats).
    SimulateDiscrete {
        #[arg(long = "bid", required = true)]
        bids: Vec<Bundle>,
    },
    /// Optimal values `W` over the whole price grid.
    ValueDp {
        #[arg(long)]
        bundle: Option<Bundle>,
        #[arg(long, value_parser = parse_price)]
        at: Option<Price>,
    },
    /// `V(k, p)` and `Ṽ(k, p)`.
    ValueConstant {
        #[arg(long)]
        bundle: Bundle,
        #[arg(long, value_parser = parse_price)]
        at: Option<Price>,
    },
    /// Best constant bid at a price.
    BestBundle {
        #[arg(long, value_parser = parse_price)]
        at: Option<Price>,
    },
    /// Prices reachable from p_min under any bids.
    Reachable,
    /// Exact continuous trajectory, or the discrete auction with increment
    /// `--euler` in every category.
    TraceContinuous {
        #[arg(long)]
        bundle: Bundle,
        #[arg(long, value_parser = parse_price)]
        start: Option<Price>,
        #[arg(long, value_parser = parse_q)]
        euler: Option<Q>,
    },
    /// Value function sampled on a regular grid.
    ValueMap {
        #[arg(long, value_enum, default_value = "v")]
        kind: Kind,
        #[arg(long)]
        bundle: Bundle,
        #[arg(long, value_parser = parse_price)]
        lo: Price,
        #[arg(long, value_parser = parse_price)]
        hi: Price,
        #[arg(long, default_value_t = 20)]
        resolution: usize,
    },
    /// Exact piecewise-affine decomposition of `𝒱` (or `𝒱̃`) on a box.
    Decompose {
        #[arg(long)]
        bundle: Bundle,
        #[arg(long, value_parser = parse_price)]
        lo: Price,
        #[arg(long, value_parser = parse_price)]
        hi: Price,
        #[arg(long)]
        tilde: bool,
    },
    /// Two-operator case study with constrained random valuations.
    CaseStudy {
        #[arg(long)]
        attempts: Option<usize>,
    },
}

fn parse_q(s: &str) -> Result<Q, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_price(s: &str) -> Result<Price, String> {
    let s = s.trim().trim_start_matches('(').trim_end_matches(')');
    s.split(',').map(|x| parse_q(x.trim())).collect::<Result<Vec<_>, _>>().map(Price)
}

enum Output {
    Run(RunOutput),
    Text(Value),
}

fn exit_code(e: &AuctionError) -> u8 {
    use AuctionError::*;
    match e {
        SamplingExhausted { .. } => 4,
        _ if e.is_assumption_violation() => 3,
        NotSubstitutes(_) | EmptyCell(_) | Eligibility { .. } | RoundBound { .. } => 3,
        Schema { .. } | InvalidInstance(_) | InvalidValuation(_) | MissingEntry(_) | OutOfLattice { .. }
        | Dimension { .. } | Json(_) => 2,
        AtSample { source, .. } => exit_code(source),
        _ => 1,
    }
}

struct Ctx {
    scenario: Scenario,
    inst: AuctionInstance,
    shift: Option<Vec<Q>>,
}

impl Ctx {
    fn load(cli: &Cli) -> clock_auction::Result<Ctx> {
        let path = cli.instance.as_ref().ok_or_else(|| AuctionError::Schema {
            path: "--instance".into(),
            message: "this verb needs a scenario document".into(),
        })?;
        let mut scenario = load_scenario(path)?;
        if let Some(p) = &cli.player {
            scenario = scenario.with_player(p)?;
        }
        let shift = cli.perturb.then(|| scenario.instance.generic_shift());
        let inst = match &shift {
            Some(d) => scenario.instance.with_start(scenario.instance.p_min.plus(d)),
            None => scenario.instance.clone(),
        };
        Ok(Ctx { scenario, inst, shift })
    }

    /// An explicit price (shifted like `p_min` under `--perturb`), or `p_min`.
    fn price(&self, at: &Option<Price>) -> Price {
        match (at, &self.shift) {
            (Some(p), Some(d)) => p.plus(d),
            (Some(p), None) => p.clone(),
            (None, _) => self.inst.p_min.clone(),
        }
    }

    fn complex(&self) -> clock_auction::Result<CellComplex> {
        enumerate_cells(&self.scenario.opponent)
    }
}

fn run(cli: &Cli) -> clock_auction::Result<Output> {
    if let Verb::CaseStudy { attempts } = &cli.verb {
        let mut cfg = CaseStudyConfig::with_seed(cli.seed);
        if let Some(a) = attempts {
            cfg.max_attempts = *a;
        }
        return Ok(Output::Run(RunOutput::CaseStudy(Box::new(run_case_study(&cfg)?))));
    }
    let ctx = Ctx::load(cli)?;
    let s = &ctx.scenario;
    let inst = &ctx.inst;
    let opp = &s.opponent;
    let out = match &cli.verb {
        Verb::Check => {
            let bidders: serde_json::Map<String, Value> = s
                .bidders
                .iter()
                .map(|(n, v)| {
                    let conc = strict_concavity_check(v);
                    let subs = enumerate_cells(v).ok().map(|cc| substitutes_check(&cc));
                    (
                        n.clone(),
                        json!({
                            "validation": s.reports[n],
                            "strictly_concave": conc.holds,
                            "substitutes": subs,
                            "p_max": compute_p_max(v),
                        }),
                    )
                })
                .collect();
            Output::Text(json!({
                "instance": s.instance,
                "player": s.player,
                "opponents": s.opponents,
                "opponent_substitutes": s.substitutes,
                "opponent_substitutes_report": s.substitutes_report,
                "bidders": bidders,
            }))
        }
        Verb::SimulateDiscrete { bids } => {
            let t = simulate(&mut BidSequence(bids.clone()), inst, opp)?;
            Output::Run(RunOutput::Discrete(t))
        }
        Verb::ValueDp { bundle, at } => {
            let w = s.player_valuation()?;
            let table = value_dp(inst, opp, w)?;
            match (bundle, at) {
                (Some(k), p) => {
                    let p = ctx.price(p);
                    let value = table.value(k, &p).ok_or_else(|| AuctionError::Schema {
                        path: "--at".into(),
                        message: format!("{p} is not a point of the price grid"),
                    })?;
                    Output::Text(json!({"bundle": k, "price": p, "W": value}))
                }
                (None, _) => Output::Run(RunOutput::Table(table)),
            }
        }
        Verb::ValueConstant { bundle, at } => {
            let w = s.player_valuation()?;
            let p = ctx.price(at);
            Output::Text(json!({
                "bundle": bundle,
                "price": p,
                "V": value_constant(bundle, &p, inst, opp, w)?,
                "V_tilde": value_tilde(bundle, &p, inst, opp, w)?,
            }))
        }
        Verb::BestBundle { at } => {
            let w = s.player_valuation()?;
            let p = ctx.price(at);
            let (k, v) = best_constant_bundle(&p, inst, opp, w)?;
            Output::Text(json!({"price": p, "bundle": k, "value": v}))
        }
        Verb::Reachable => Output::Text(serde_json::to_value(reachable_prices(inst, opp)?)?),
        Verb::TraceContinuous { bundle, start, euler } => {
            let p0 = ctx.price(start);
            match euler {
                Some(h) => {
                    let pts = euler_trace(bundle, &p0, *h, inst, opp)?;
                    let rows: Vec<Value> = pts.iter().map(|(t, p)| json!({"t": t, "price": p})).collect();
                    Output::Run(RunOutput::Document {
                        name: "euler".into(),
                        value: Value::Array(rows),
                    })
                }
                None => Output::Run(RunOutput::Trajectory(trace(bundle, &p0, &ctx.complex()?, inst)?)),
            }
        }
        Verb::ValueMap { kind, bundle, lo, hi, resolution } => {
            let w = s.player_valuation()?;
            let kind = match kind {
                Kind::W => ValueKind::WEps,
                Kind::V => ValueKind::V,
                Kind::Vtilde => ValueKind::VTilde,
            };
            let res = vec![*resolution; inst.dim()];
            let g = value_map(kind, bundle, lo, hi, &res, &ctx.complex()?, inst, w)?;
            if cli.out.is_none() && cli.format == Format::Json {
                let flags = grid_discontinuities(&g);
                Output::Text(json!({"grid": g, "flagged_edges": flags}))
            } else {
                Output::Run(RunOutput::ValueMap(g))
            }
        }
        Verb::Decompose { bundle, lo, hi, tilde } => {
            let w = s.player_valuation()?;
            let cc = ctx.complex()?;
            let surf = if *tilde {
                decompose_value_tilde(bundle, lo, hi, &cc, inst, w)?
            } else {
                decompose_value(bundle, lo, hi, &cc, inst, w)?
            };
            if cli.out.is_none() {
                let jumps = surface_discontinuities(&surf);
                Output::Text(json!({"surface": surf, "discontinuities": jumps}))
            } else {
                Output::Run(RunOutput::Surface(surf))
            }
        }
        Verb::CaseStudy { .. } => unreachable!("handled above"),
    };
    Ok(out)
}

fn print(out: Output, format: Format) -> clock_auction::Result<()> {
    let text = match out {
        Output::Text(v) => serde_json::to_string_pretty(&v)?,
        Output::Run(r) => match (r, format) {
            (RunOutput::Discrete(t), Format::Csv) => t.to_csv(),
            (RunOutput::Table(t), Format::Csv) => t.to_csv(),
            (RunOutput::Trajectory(t), Format::Csv) => t.to_csv(),
            (RunOutput::ValueMap(g), Format::Csv) => g.to_csv()?,
            (RunOutput::CaseStudy(r), Format::Csv) => r.reachable_csv(0) + "\n" + &r.reachable_csv(1),
            (RunOutput::Discrete(t), _) => serde_json::to_string_pretty(&t)?,
            (RunOutput::Table(t), _) => serde_json::to_string_pretty(&t.rows().collect::<Vec<_>>())?,
            (RunOutput::Trajectory(t), _) => serde_json::to_string_pretty(&t)?,
            (RunOutput::ValueMap(g), _) => serde_json::to_string_pretty(&g)?,
            (RunOutput::Surface(s), _) => serde_json::to_string_pretty(&s)?,
            (RunOutput::CaseStudy(r), _) => serde_json::to_string_pretty(&r)?,
            (RunOutput::Document { value, .. }, _) => serde_json::to_string_pretty(&value)?,
        },
    };
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = writeln!(std::io::stdout(), "{}", text.trim_end());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli).and_then(|out| match &cli.out {
        Some(dir) => {
            let run = match out {
                Output::Run(r) => r,
                Output::Text(value) => RunOutput::Document {
                    name: verb_name(&cli.verb).into(),
                    value,
                },
            };
            let m = emit_report(&[run], cli.format, dir)?;
            for e in &m.artifacts {
                println!("{}  {}", e.sha256, dir.join(&e.file).display());
            }
            Ok(())
        }
        None => print(out, cli.format),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn verb_name(v: &Verb) -> &'static str {
    match v {
        Verb::Check => "check",
        Verb::SimulateDiscrete { .. } => "simulate_discrete",
        Verb::ValueDp { .. } => "value_dp",
        Verb::ValueConstant { .. } => "value_constant",
        Verb::BestBundle { .. } => "best_bundle",
        Verb::Reachable => "reachable",
        Verb::TraceContinuous { .. } => "trace_continuous",
        Verb::ValueMap { .. } => "value_map",
        Verb::Decompose { .. } => "decompose",
        Verb::CaseStudy { .. } => "case_study",
    }
}
