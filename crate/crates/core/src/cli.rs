//! Command-line front end.
//!
//! Every subcommand runs one verification suite and writes a single document
//! holding a run manifest and one record per check. Exit codes: 0 all checks
//! pass, 1 a check failed, 2 usage or parameter error, 3 inconclusive.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::collision::{
    brownian_collision_expectation, estimate_collision_expectation, poisson_triple_entrance,
    CollisionQuery, ModelKind, Starts,
};
use crate::counting::{b_curve, probability_nonincreasing, ratio_nonincreasing, CountingModel};
use crate::error::Error;
use crate::harness::{agreement_check, one_sided_check, Direction, SummaryStats, Verdict};
use crate::laws::{forest_jump_agreement, increment_law_check};
use crate::lyapunov::{
    estimate_drift, estimate_hit_prob, exact_drift_scheidegger, generator_v_poisson,
    howard_drift_curve, verify_entrance_bound, Chain, HowardGapChain, ScheideggerGapChain,
    SsrwGapChain,
};
use crate::martingale::{
    brownian_fixed_time_check, exact_one_step_drift, stopped_identity_check, ui_bound_check,
    MartingaleKind,
};
use crate::models::lattice::{howard_increment_variance, GapPair};

const CSV_HELP: &str = "CSV output starts with `# manifest: <json>` and has the columns \
name,n,mean,stderr,ci95_low,ci95_high,censored,bound,verdict,detail; \
`detail` is a JSON object with the record's parameters and extra fields.";

#[derive(Parser, Debug)]
#[command(name = "coalesce-bench", version, about = "Verification suites for coalescing path models", after_help = CSV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone, Debug, Serialize)]
struct Common {
    /// Master seed of the run.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo replicates (at least 1).
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    #[serde(skip)]
    format: Format,
    /// Write the document here instead of standard output.
    #[arg(long)]
    #[serde(skip)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    #[serde(skip)]
    threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CollisionModel {
    Ssrw,
    Scheidegger,
    Howard,
    Brownian,
    PoissonTree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ChainModel {
    Scheidegger,
    Ssrw,
    Howard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum NetworkModel {
    Scheidegger,
    Howard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MartingaleModel {
    Ssrw,
    Brownian,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(untagged)]
enum Command {
    /// Mean first collision time of three paths started at 0, g1, g1+g2.
    Collision(CollisionArgs),
    /// Brownian collision time at dt and dt/4 against xy.
    Brownian(BrownianArgs),
    /// Poisson-tree entrance time against 12(v-u)(w-v).
    PoissonTree(StartsArgs),
    /// One-step drift of the gap product.
    Drift(DriftArgs),
    /// Mean entrance time into the coalesced set against V + b/p0.
    Entrance(EntranceArgs),
    /// Product martingale identities.
    Martingale(MartingaleArgs),
    /// Decay of P(eta >= k) along a descending epsilon grid.
    Eta(EtaArgs),
    /// Poisson-tree generator of the gap product, closed form and Monte Carlo.
    Generator(StartsArgs),
    /// First jump read off a sampled Poisson forest against the jump process.
    Forest(StartsArgs),
    /// Empirical Howard increment law against its pmf.
    Pmf(PmfArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Collision(_) => "collision",
            Command::Brownian(_) => "brownian",
            Command::PoissonTree(_) => "poisson-tree",
            Command::Drift(_) => "drift",
            Command::Entrance(_) => "entrance",
            Command::Martingale(_) => "martingale",
            Command::Eta(_) => "eta",
            Command::Generator(_) => "generator",
            Command::Forest(_) => "forest",
            Command::Pmf(_) => "pmf",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Collision(a) => &a.common,
            Command::Brownian(a) => &a.common,
            Command::PoissonTree(a) | Command::Generator(a) | Command::Forest(a) => &a.common,
            Command::Drift(a) => &a.common,
            Command::Entrance(a) => &a.common,
            Command::Martingale(a) => &a.common,
            Command::Eta(a) => &a.common,
            Command::Pmf(a) => &a.common,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct CollisionArgs {
    #[arg(long, value_enum)]
    model: CollisionModel,
    /// Initial gaps g1,g2.
    #[arg(long, default_value = "2,2")]
    gaps: Fixed<f64, 2>,
    /// Stopping horizon (steps or time); defaults to a multiple of g1·g2.
    #[arg(long)]
    horizon: Option<f64>,
    /// Euler step of the Brownian model.
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Open-site probability of Howard's network.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Window of the Howard exceptional set for the bound.
    #[arg(long, default_value_t = 2)]
    r0: i64,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct BrownianArgs {
    /// Initial gaps x,y.
    #[arg(long, default_value = "1,1")]
    gaps: Fixed<f64, 2>,
    #[arg(long, default_value_t = 1e-4)]
    dt: f64,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct StartsArgs {
    /// Branch positions u,v,w.
    #[arg(long, default_value = "0,0.75,2.5")]
    starts: Fixed<f64, 3>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct DriftArgs {
    #[arg(long, value_enum)]
    model: ChainModel,
    #[arg(long, default_value = "2,2")]
    gaps: Fixed<i64, 2>,
    /// Enumerate the one-step law exactly (Scheidegger only).
    #[arg(long)]
    exact: bool,
    /// Howard drift at symmetric gaps (g,g) for each listed g.
    #[arg(long, value_delimiter = ',')]
    curve: Option<Vec<i64>>,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 2)]
    r0: i64,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct EntranceArgs {
    #[arg(long, value_enum)]
    model: ChainModel,
    #[arg(long, default_value = "2,2")]
    gaps: Fixed<i64, 2>,
    /// Step horizon per replicate.
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    /// Also estimate the one-step entrance probability (state must be in M1).
    #[arg(long)]
    hit: bool,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 2)]
    r0: i64,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct MartingaleArgs {
    #[arg(long, value_enum, default_value_t = MartingaleModel::Ssrw)]
    model: MartingaleModel,
    /// Initial gaps (even integers for walks, positive reals for Brownian).
    #[arg(long, default_value = "2,2")]
    gaps: Fixed<f64, 2>,
    /// Step horizon of the stopped walk identities.
    #[arg(long, default_value_t = 50)]
    n: u64,
    /// Fixed time of the Brownian identities.
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Enumerate the one-step drifts exactly instead of simulating.
    #[arg(long)]
    exact: bool,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct EtaArgs {
    #[arg(long, value_enum)]
    model: NetworkModel,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Strictly decreasing interval widths.
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.2, 0.1, 0.05])]
    epsilons: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    n: u64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Threshold, 2 or 3.
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(Args, Debug, Serialize)]
struct PmfArgs {
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    /// Largest |k| compared bin by bin.
    #[arg(long, default_value_t = 5)]
    kmax: i64,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

/// Exactly `N` comma-separated values, e.g. `--gaps 2,4`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Fixed<T, const N: usize>([T; N]);

impl<T, const N: usize> std::str::FromStr for Fixed<T, N>
where
    T: std::str::FromStr + Copy + Default,
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(format!("expected {N} comma-separated values, got {}", parts.len()));
        }
        let mut out = [T::default(); N];
        for (slot, p) in out.iter_mut().zip(parts) {
            *slot = p.parse().map_err(|e| format!("`{p}`: {e}"))?;
        }
        Ok(Fixed(out))
    }
}

impl<T, const N: usize> std::ops::Deref for Fixed<T, N> {
    type Target = [T; N];

    fn deref(&self) -> &[T; N] {
        &self.0
    }
}

impl<T: Serialize, const N: usize> Serialize for Fixed<T, N> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter())
    }
}

/// One check in the output document.
#[derive(Clone, Debug, Serialize)]
struct Record {
    name: String,
    params: Value,
    n: u64,
    mean: f64,
    stderr: f64,
    ci95: [f64; 2],
    censored: u64,
    bound: Option<f64>,
    verdict: Verdict,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

impl Record {
    fn from_stats(name: impl Into<String>, params: Value, s: &SummaryStats, bound: Option<f64>, verdict: Verdict) -> Self {
        Record {
            name: name.into(),
            params,
            n: s.n,
            mean: s.mean,
            stderr: s.stderr,
            ci95: [s.ci95_low, s.ci95_high],
            censored: s.censored,
            bound,
            verdict,
            extra: Map::new(),
        }
    }

    fn exact(name: impl Into<String>, params: Value, n: u64, value: f64, bound: Option<f64>, verdict: Verdict) -> Self {
        Record {
            name: name.into(),
            params,
            n,
            mean: value,
            stderr: 0.0,
            ci95: [value, value],
            censored: 0,
            bound,
            verdict,
            extra: Map::new(),
        }
    }

    fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra
            .insert(key.into(), serde_json::to_value(value).expect("serializable"));
        self
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    subcommand: String,
    params: Value,
    master_seed: u64,
    version: String,
    elapsed_ms: u64,
    verdict: Verdict,
}

#[derive(Debug, Serialize)]
struct Document {
    manifest: Manifest,
    results: Vec<Record>,
}

/// A failure before any verdict: bad parameters or a run that produced no
/// usable data.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Inconclusive(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::AllCensored(_) => Failure::Inconclusive(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

type Outcome = std::result::Result<Vec<Record>, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn integral_gaps(gaps: &[f64]) -> std::result::Result<(i64, i64), Failure> {
    let ok = gaps.iter().all(|g| g.fract() == 0.0 && g.abs() < 1e15);
    if !ok {
        return Err(usage(format!("lattice gaps must be integers, got {gaps:?}")));
    }
    Ok((gaps[0] as i64, gaps[1] as i64))
}

fn verdict_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// The raw mean of τ ∧ H has an infinite-variance tail, so it is reported
/// for diagnostics only: it can flag a clear overshoot of the target (τ ∧ H
/// never exceeds τ) but never makes a run inconclusive.
fn diagnostic(raw: &SummaryStats, target: f64) -> Verdict {
    match one_sided_check(raw, target, Direction::AtMost) {
        Verdict::Fail => Verdict::Fail,
        _ => Verdict::Pass,
    }
}

fn run_collision(a: &CollisionArgs) -> Outcome {
    let c = &a.common;
    let (g1, g2) = (a.gaps[0], a.gaps[1]);
    let (model, starts) = match a.model {
        CollisionModel::Ssrw | CollisionModel::Scheidegger | CollisionModel::Howard => {
            let (i1, i2) = integral_gaps(&a.gaps[..])?;
            let model = match a.model {
                CollisionModel::Ssrw => ModelKind::Ssrw,
                CollisionModel::Scheidegger => ModelKind::Scheidegger,
                _ => ModelKind::Howard { p: a.p },
            };
            (model, Starts::Lattice([0, i1, i1 + i2]))
        }
        CollisionModel::Brownian => (ModelKind::Brownian { dt: a.dt }, Starts::Continuum([0.0, g1, g1 + g2])),
        CollisionModel::PoissonTree => (ModelKind::PoissonTree, Starts::Continuum([0.0, g1, g1 + g2])),
    };
    let mut query = CollisionQuery::new(model, starts, c.reps, c.seed)?;
    if let Some(h) = a.horizon {
        query = query.with_horizon(h)?;
    }
    let report = estimate_collision_expectation(&query)?;
    let params = json!({ "gaps": [g1, g2], "horizon": query.horizon });
    let product = g1 * g2;
    let mut out = Vec::new();
    match a.model {
        CollisionModel::Ssrw | CollisionModel::Brownian => {
            let raw_v = diagnostic(&report.raw, product);
            out.push(Record::from_stats("raw", params.clone(), &report.raw, Some(product), raw_v));
            let cor = report.corrected.expect("martingale model");
            let v = agreement_check(&cor, product, 3.0);
            out.push(Record::from_stats("corrected", params, &cor, Some(product), v));
        }
        CollisionModel::Scheidegger => {
            let v = agreement_check(&report.raw, product, 3.0);
            out.push(Record::from_stats("raw", params, &report.raw, Some(product), v));
        }
        CollisionModel::Howard => {
            let chain = HowardGapChain::new(a.p, a.r0)?;
            let (i1, i2) = integral_gaps(&a.gaps[..])?;
            let k = chain.constants();
            let bound = chain.lyapunov(&GapPair::new(i1, i2)) + k.b / k.p0;
            let v = one_sided_check(&report.raw, bound, Direction::AtMost);
            out.push(Record::from_stats("raw", params, &report.raw, Some(bound), v).with("r0", a.r0));
        }
        CollisionModel::PoissonTree => {
            let bound = 12.0 * product;
            let v = one_sided_check(&report.raw, bound, Direction::AtMost);
            out.push(Record::from_stats("raw", params, &report.raw, Some(bound), v));
        }
    }
    for r in out.iter_mut() {
        r.extra
            .insert("censored_fraction".into(), json!(report.censored_fraction));
    }
    Ok(out)
}

fn run_brownian(a: &BrownianArgs) -> Outcome {
    let c = &a.common;
    let (x, y) = (a.gaps[0], a.gaps[1]);
    let r = brownian_collision_expectation(x, y, a.dt, c.reps, c.seed)?;
    let mut out = Vec::new();
    for row in &r.rows {
        let params = json!({ "gaps": [x, y], "dt": row.dt });
        let raw_v = diagnostic(&row.raw, r.target);
        out.push(
            Record::from_stats("raw", params.clone(), &row.raw, Some(r.target), raw_v)
                .with("horizon", r.raw_horizon),
        );
        let v = agreement_check(&row.corrected, r.target, 3.0);
        out.push(
            Record::from_stats("corrected", params, &row.corrected, Some(r.target), v)
                .with("horizon", r.corrected_horizon),
        );
    }
    let ok = r.refinement_ok();
    let fine = r.fine();
    out.push(
        Record::from_stats(
            "refinement",
            json!({ "gaps": [x, y], "dt": [r.coarse().dt, fine.dt] }),
            &fine.corrected,
            Some(r.target),
            verdict_if(ok),
        )
        .with("closer_within_ci", ok),
    );
    Ok(out)
}

fn run_poisson_tree(a: &StartsArgs) -> Outcome {
    let c = &a.common;
    let [u, v, w] = [a.starts[0], a.starts[1], a.starts[2]];
    let r = poisson_triple_entrance(u, v, w, c.reps, c.seed)?;
    let params = json!({ "starts": r.start, "horizon": r.horizon });
    let mut out = vec![Record::from_stats("entrance", params, &r.tau, Some(r.bound), r.verdict)];
    for t in &r.tail {
        out.push(
            Record::from_stats("tail", json!({ "starts": r.start, "n": t.n }), &t.p_hat, Some(t.bound), t.verdict),
        );
    }
    Ok(out)
}

fn gap_pair(gaps: &[i64]) -> GapPair<i64> {
    GapPair::new(gaps[0], gaps[1])
}

fn run_drift(a: &DriftArgs) -> Outcome {
    let c = &a.common;
    let g = gap_pair(&a.gaps[..]);
    let params = json!({ "gaps": [g.g1, g.g2] });
    if a.exact {
        if a.model != ChainModel::Scheidegger {
            return Err(usage("--exact is only available for the scheidegger model"));
        }
        let d = exact_drift_scheidegger(g.g1, g.g2)?;
        let expected = if g.in_s0() { 0 } else { -1 };
        let value = *d.numer() as f64 / *d.denom() as f64;
        let rec = Record::exact("exact_drift", params, 8, value, Some(expected as f64), verdict_if(d == expected.into()))
            .with("drift", d.to_string())
            .with("exact", true);
        return Ok(vec![rec]);
    }
    if let Some(curve) = &a.curve {
        if a.model != ChainModel::Howard {
            return Err(usage("--curve is only available for the howard model"));
        }
        let r = howard_drift_curve(a.p, curve, c.reps, c.seed)?;
        let cap = 4.0 * r.second_moment;
        let threshold = -r.second_moment / 2.0;
        let mut out: Vec<Record> = r
            .rows
            .iter()
            .map(|row| {
                let v = verdict_if(row.drift.mean <= cap + 3.0 * row.drift.stderr);
                Record::from_stats("drift", json!({ "gaps": [row.gap, row.gap] }), &row.drift, Some(cap), v)
                    .with("threshold", threshold)
            })
            .collect();
        let (value, v) = match r.r0 {
            Some(r0) => (r0 as f64, Verdict::Pass),
            None => (f64::NAN, Verdict::Inconclusive),
        };
        out.push(Record::exact("r0", json!({ "p": a.p }), r.rows.len() as u64, value, None, v).with("r0", r.r0));
        return Ok(out);
    }
    let (stats, bound, verdict) = match a.model {
        ChainModel::Scheidegger | ChainModel::Ssrw => {
            let s = if a.model == ChainModel::Scheidegger {
                estimate_drift(&ScheideggerGapChain, &g, c.reps, c.seed)?
            } else {
                estimate_drift(&SsrwGapChain, &g, c.reps, c.seed)?
            };
            let v = agreement_check(&s, -1.0, 3.0);
            (s, -1.0, v)
        }
        ChainModel::Howard => {
            let chain = HowardGapChain::new(a.p, a.r0)?;
            let s = estimate_drift(&chain, &g, c.reps, c.seed)?;
            let cap = 4.0 * howard_increment_variance(a.p)?;
            let v = verdict_if(s.mean <= cap + 3.0 * s.stderr);
            (s, cap, v)
        }
    };
    Ok(vec![Record::from_stats("drift", params, &stats, Some(bound), verdict)])
}

fn entrance_records<C: Chain<State = GapPair<i64>>>(chain: &C, a: &EntranceArgs) -> Outcome {
    let c = &a.common;
    let g = gap_pair(&a.gaps[..]);
    let params = json!({ "gaps": [g.g1, g.g2], "horizon": a.horizon });
    let r = verify_entrance_bound(chain, &g, c.reps, a.horizon, c.seed)?;
    let mut out = vec![Record::from_stats("entrance", params.clone(), &r.tau, Some(r.bound), r.verdict)];
    if a.hit {
        let s = estimate_hit_prob(chain, &g, c.reps, c.seed.wrapping_add(1))?;
        let p0 = chain.constants().p0;
        let v = verdict_if(s.mean >= p0 - 3.0 * s.stderr);
        out.push(Record::from_stats("hit_probability", params, &s, Some(p0), v));
    }
    Ok(out)
}

fn run_entrance(a: &EntranceArgs) -> Outcome {
    match a.model {
        ChainModel::Scheidegger => entrance_records(&ScheideggerGapChain, a),
        ChainModel::Ssrw => entrance_records(&SsrwGapChain, a),
        ChainModel::Howard => entrance_records(&HowardGapChain::new(a.p, a.r0)?, a),
    }
}

fn run_martingale(a: &MartingaleArgs) -> Outcome {
    let c = &a.common;
    match a.model {
        MartingaleModel::Brownian => {
            if a.exact {
                return Err(usage("--exact applies to the ssrw model"));
            }
            let (x, y) = (a.gaps[0], a.gaps[1]);
            let r = brownian_fixed_time_check(x, y, a.t, c.reps, c.seed)?;
            let params = json!({ "gaps": [x, y], "t": a.t });
            Ok(vec![
                Record::from_stats(
                    "product_plus_time",
                    params.clone(),
                    &r.product_plus_time,
                    Some(r.product_target),
                    agreement_check(&r.product_plus_time, r.product_target, 3.0),
                ),
                Record::from_stats(
                    "triple_product",
                    params,
                    &r.triple_product,
                    Some(r.triple_target),
                    agreement_check(&r.triple_product, r.triple_target, 3.0),
                ),
            ])
        }
        MartingaleModel::Ssrw => {
            let (g1, g2) = integral_gaps(&a.gaps[..])?;
            let params = json!({ "gaps": [g1, g2] });
            if a.exact {
                let mut out = Vec::new();
                for kind in [MartingaleKind::ProductPlusTime, MartingaleKind::TripleProduct] {
                    let d = exact_one_step_drift(kind, g1, g2)?;
                    let value = *d.numer() as f64 / *d.denom() as f64;
                    out.push(
                        Record::exact(kind.name(), params.clone(), 8, value, Some(0.0), verdict_if(d == 0.into()))
                            .with("drift", d.to_string())
                            .with("exact", true),
                    );
                }
                return Ok(out);
            }
            if g1 % 2 != 0 || g2 % 2 != 0 {
                return Err(usage("walk gaps must be even"));
            }
            let (i, j) = (g1 / 2, g2 / 2);
            let params = json!({ "gaps": [g1, g2], "n": a.n });
            let s = stopped_identity_check(i, j, a.n, c.reps, c.seed)?;
            let ui = ui_bound_check(i, j, a.n, c.reps, c.seed.wrapping_add(1))?;
            Ok(vec![
                Record::from_stats(
                    "stopped_product_plus_time",
                    params.clone(),
                    &s.product_plus_time,
                    Some(s.product_target),
                    agreement_check(&s.product_plus_time, s.product_target, 3.0),
                ),
                Record::from_stats(
                    "stopped_triple_product",
                    params.clone(),
                    &s.triple_product,
                    Some(s.triple_target),
                    agreement_check(&s.triple_product, s.triple_target, 3.0),
                ),
                Record::from_stats("uniform_integrability", params, &ui.stats, Some(ui.bound), ui.verdict),
            ])
        }
    }
}

fn run_eta(a: &EtaArgs) -> Outcome {
    let c = &a.common;
    let model = match a.model {
        NetworkModel::Scheidegger => CountingModel::Scheidegger,
        NetworkModel::Howard => CountingModel::Howard { p: a.p },
    };
    let points = b_curve(model, a.k, &a.epsilons, a.n, a.t, c.reps, c.seed)?;
    let mut out: Vec<Record> = points
        .iter()
        .map(|pt| {
            Record::from_stats(
                format!("eta_at_least_{}", a.k),
                json!({ "epsilon": pt.epsilon, "n": a.n, "t": a.t }),
                &pt.p_hat,
                pt.markov_envelope,
                pt.verdict,
            )
            .with("sites", pt.sites)
            .with("ratio", pt.ratio)
            .with("ratio_stderr", pt.ratio_stderr)
        })
        .collect();
    let (name, ok) = if a.k == 3 {
        ("ratio_nonincreasing", ratio_nonincreasing(&points))
    } else {
        ("probability_nonincreasing", probability_nonincreasing(&points))
    };
    out.push(Record::exact(
        name,
        json!({ "epsilons": a.epsilons }),
        points.len() as u64,
        if ok { 1.0 } else { 0.0 },
        None,
        verdict_if(ok),
    ));
    Ok(out)
}

fn run_generator(a: &StartsArgs) -> Outcome {
    let c = &a.common;
    let [u, v, w] = [a.starts[0], a.starts[1], a.starts[2]];
    let r = generator_v_poisson(u, v, w, c.reps, c.seed)?;
    let params = json!({ "starts": r.state });
    let closed = Record::exact(
        "closed_form",
        params.clone(),
        1,
        r.gv_value,
        Some(-r.d),
        verdict_if(r.gv_value <= -r.d + 1e-9),
    )
    .with("cross_terms", [r.cross_terms.0, r.cross_terms.1])
    .with("rate", r.rate);
    let mc = r.mc_estimate.expect("reps is at least 1");
    let v = agreement_check(&mc, r.gv_value, 3.0);
    Ok(vec![closed, Record::from_stats("monte_carlo", params, &mc, Some(r.gv_value), v)])
}

fn run_forest(a: &StartsArgs) -> Outcome {
    let c = &a.common;
    let [u, v, w] = [a.starts[0], a.starts[1], a.starts[2]];
    let alpha = 0.01;
    let r = forest_jump_agreement(u, v, w, c.reps, alpha, c.seed)?;
    let params = json!({ "starts": r.state });
    let rec = |name: &str, ks: &crate::stats::KsResult| {
        Record {
            name: name.into(),
            params: params.clone(),
            n: ks.n1 as u64,
            mean: ks.statistic,
            stderr: 0.0,
            ci95: [ks.statistic, ks.statistic],
            censored: r.censored,
            bound: Some(alpha),
            verdict: verdict_if(ks.p_value > alpha),
            extra: Map::new(),
        }
        .with("p_value", ks.p_value)
        .with("n_jump", ks.n2)
    };
    Ok(vec![
        rec("waiting_time_ks", &r.waiting_time),
        rec("middle_increment_ks", &r.middle_increment),
    ])
}

fn run_pmf(a: &PmfArgs) -> Outcome {
    let c = &a.common;
    let r = increment_law_check(a.p, c.reps, a.kmax, 3.0, 4.0, c.seed)?;
    let mut out = vec![Record::from_stats(
        "second_moment",
        json!({ "p": a.p }),
        &r.second_moment,
        Some(r.target),
        r.variance_verdict,
    )];
    for b in &r.bins {
        out.push(
            Record::from_stats("bin", json!({ "p": a.p, "k": b.k }), &b.frequency, Some(b.expected), b.verdict)
                .with("expected", b.expected),
        );
    }
    Ok(out)
}

fn dispatch(cmd: &Command) -> Outcome {
    match cmd {
        Command::Collision(a) => run_collision(a),
        Command::Brownian(a) => run_brownian(a),
        Command::PoissonTree(a) => run_poisson_tree(a),
        Command::Drift(a) => run_drift(a),
        Command::Entrance(a) => run_entrance(a),
        Command::Martingale(a) => run_martingale(a),
        Command::Eta(a) => run_eta(a),
        Command::Generator(a) => run_generator(a),
        Command::Forest(a) => run_forest(a),
        Command::Pmf(a) => run_pmf(a),
    }
}

fn exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => 0,
        Verdict::Fail => 1,
        Verdict::Inconclusive => 3,
    }
}

fn csv_cell(x: f64) -> String {
    if x.is_finite() {
        serde_json::to_string(&x).expect("finite float")
    } else {
        String::new()
    }
}

fn render_csv(doc: &Document) -> std::result::Result<Vec<u8>, Box<dyn std::error::Error>> {
    let mut buf = Vec::new();
    writeln!(buf, "# manifest: {}", serde_json::to_string(&doc.manifest)?)?;
    let mut w = csv::Writer::from_writer(buf);
    w.write_record([
        "name", "n", "mean", "stderr", "ci95_low", "ci95_high", "censored", "bound", "verdict", "detail",
    ])?;
    for r in &doc.results {
        let mut detail = r.extra.clone();
        detail.insert("params".into(), r.params.clone());
        w.write_record([
            r.name.clone(),
            r.n.to_string(),
            csv_cell(r.mean),
            csv_cell(r.stderr),
            csv_cell(r.ci95[0]),
            csv_cell(r.ci95[1]),
            r.censored.to_string(),
            r.bound.map(csv_cell).unwrap_or_default(),
            r.verdict.as_str().to_string(),
            serde_json::to_string(&detail)?,
        ])?;
    }
    Ok(w.into_inner()?)
}

fn emit(doc: &Document, common: &Common) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let mut bytes = match common.format {
        Format::Json => serde_json::to_vec_pretty(doc)?,
        Format::Csv => render_csv(doc)?,
    };
    if common.format == Format::Json {
        bytes.push(b'\n');
    }
    match &common.out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

/// Parse `args` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cmd = cli.command;
    let common = cmd.common().clone();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(common.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    let start = Instant::now();
    let outcome = pool.install(|| dispatch(&cmd));
    let elapsed_ms = start.elapsed().as_millis() as u64;
    let results = match outcome {
        Ok(r) => r,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `coalesce-bench {} --help` for usage", cmd.name());
            return 2;
        }
        Err(Failure::Inconclusive(msg)) => {
            eprintln!("inconclusive: {msg}");
            return 3;
        }
    };
    let verdict = results
        .iter()
        .fold(Verdict::Pass, |v, r| v.combine(r.verdict));
    let doc = Document {
        manifest: Manifest {
            subcommand: cmd.name().to_string(),
            params: serde_json::to_value(&cmd).expect("serializable arguments"),
            master_seed: common.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            elapsed_ms,
            verdict,
        },
        results,
    };
    if let Err(e) = emit(&doc, &common) {
        eprintln!("error: cannot write output: {e}");
        return 2;
    }
    exit_code(verdict)
}
