//! First collision time of three ordered paths.
//!
//! A replicate starts three paths, steps the chosen model until one of the
//! two adjacent gaps vanishes or the horizon `H` is reached, and records the
//! stopping time together with the gaps at the stop. For independent walks and
//! Brownian motions `gap product + time` is a martingale, so
//! `(n ∧ τ) + g1·g2` at the stop is an unbiased, finite-variance estimator of
//! `E[τ]` for any finite horizon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    one_sided_check, CI95_Z, run_replicates, summarize_int, summarize_real, Direction, RngStream,
    SummaryStats, Verdict,
};
use crate::models::brownian::{brownian_gap_step_detail, ContinuousTriple};
use crate::models::lattice::{
    lattice_step, ssrw_triple_step, DiscreteTriple, GapPair, HowardEnv, LatticeEnv,
    ScheideggerEnv, Site,
};
use crate::models::poisson::{
    poisson_in_m0, poisson_tube_union, tube_jump, validate_poisson_state,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    /// Three independent simple symmetric random walks.
    Ssrw,
    Scheidegger,
    Howard { p: f64 },
    /// Independent Brownian motions, Euler step `dt` with bridge correction.
    Brownian { dt: f64 },
    PoissonTree,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ssrw => "ssrw",
            ModelKind::Scheidegger => "scheidegger",
            ModelKind::Howard { .. } => "howard",
            ModelKind::Brownian { .. } => "brownian",
            ModelKind::PoissonTree => "poisson_tree",
        }
    }

    pub fn is_lattice(&self) -> bool {
        matches!(
            self,
            ModelKind::Ssrw | ModelKind::Scheidegger | ModelKind::Howard { .. }
        )
    }

    /// Models where `g1·g2 + t` is a martingale before collision.
    pub fn has_product_martingale(&self) -> bool {
        matches!(self, ModelKind::Ssrw | ModelKind::Brownian { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Starts {
    Lattice([i64; 3]),
    Continuum([f64; 3]),
}

impl Starts {
    fn gaps_f64(&self) -> (f64, f64) {
        match *self {
            Starts::Lattice([x, y, z]) => ((y - x) as f64, (z - y) as f64),
            Starts::Continuum([x, y, z]) => (y - x, z - y),
        }
    }
}

/// Whether a coincident start counts as a collision at time 0 (`inf t >= 0`)
/// or the clock only checks from the first step on (`inf n >= 1`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeConvention {
    #[default]
    FromZero,
    FromOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionQuery {
    pub model: ModelKind,
    pub starts: Starts,
    pub horizon: f64,
    pub reps: u64,
    pub master_seed: u64,
    pub convention: TimeConvention,
}

impl CollisionQuery {
    /// Query with the default horizon for the model.
    pub fn new(model: ModelKind, starts: Starts, reps: u64, master_seed: u64) -> Result<Self> {
        let horizon = default_horizon(&model, &starts);
        let q = CollisionQuery {
            model,
            starts,
            horizon,
            reps,
            master_seed,
            convention: TimeConvention::FromZero,
        };
        q.validate()?;
        Ok(q)
    }

    /// Independent walks started at `-2i, 0, 2j`.
    pub fn ssrw(i: i64, j: i64, horizon: f64, reps: u64, master_seed: u64) -> Result<Self> {
        if i < 1 || j < 1 {
            return Err(Error::param("gaps", "i and j must be at least 1"));
        }
        let q = CollisionQuery {
            model: ModelKind::Ssrw,
            starts: Starts::Lattice([-2 * i, 0, 2 * j]),
            horizon,
            reps,
            master_seed,
            convention: TimeConvention::FromZero,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        self.horizon = horizon;
        self.validate()?;
        Ok(self)
    }

    pub fn with_convention(mut self, convention: TimeConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::param("horizon", "must be positive and finite"));
        }
        if self.reps < 1 {
            return Err(Error::param("reps", "must be at least 1"));
        }
        match (&self.model, &self.starts) {
            (m, Starts::Lattice([x, y, z])) if m.is_lattice() => {
                if !(x <= y && y <= z) {
                    return Err(Error::param("starts", "need x <= y <= z"));
                }
                match m {
                    ModelKind::Ssrw => {
                        if (y - x) % 2 != 0 || (z - y) % 2 != 0 {
                            return Err(Error::param("starts", "independent walk gaps must be even"));
                        }
                    }
                    ModelKind::Scheidegger => {
                        for &s in &[*x, *y, *z] {
                            if s.rem_euclid(2) != 0 {
                                return Err(Error::Parity { pos: s, time: 0 });
                            }
                        }
                    }
                    ModelKind::Howard { p } => {
                        if !(*p > 0.0 && *p < 1.0) {
                            return Err(Error::param("p", "must lie in (0, 1)"));
                        }
                    }
                    _ => {}
                }
            }
            (ModelKind::Brownian { dt }, Starts::Continuum([x, y, z])) => {
                if !(*dt > 0.0) {
                    return Err(Error::param("dt", "must be positive"));
                }
                if !(x <= y && y <= z) {
                    return Err(Error::param("starts", "need x <= y <= z"));
                }
            }
            (ModelKind::PoissonTree, Starts::Continuum(s)) => {
                validate_poisson_state(&ContinuousTriple::new(s[0], s[1], s[2], 0.0))?;
            }
            (m, _) => {
                return Err(Error::param(
                    "starts",
                    format!("start type does not match model {}", m.name()),
                ))
            }
        }
        Ok(())
    }
}

/// `10^3·g1·g2` for lattice and Brownian runs, `200·g1·g2` for the Poisson
/// tree; at least one step.
pub fn default_horizon(model: &ModelKind, starts: &Starts) -> f64 {
    let (a, b) = starts.gaps_f64();
    let v = (a * b).max(1.0);
    match model {
        ModelKind::PoissonTree => 200.0 * (a * b).max(0.25),
        _ => 1e3 * v,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMet {
    LeftMiddle,
    MiddleRight,
    Both,
    None,
}

impl PairMet {
    fn from_flags(lm: bool, mr: bool) -> Self {
        match (lm, mr) {
            (true, true) => PairMet::Both,
            (true, false) => PairMet::LeftMiddle,
            (false, true) => PairMet::MiddleRight,
            (false, false) => PairMet::None,
        }
    }
}

/// One replicate's stop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionSample {
    pub model: ModelKind,
    /// `τ ∧ H`: steps for lattice models, real time otherwise.
    pub tau: f64,
    /// Lattice steps, Euler steps or jumps taken.
    pub steps: u64,
    pub censored: bool,
    pub stopped_gaps: GapPair<f64>,
    /// Largest gap at the stop.
    pub max_gap: f64,
    pub which_pair_met: PairMet,
}

impl CollisionSample {
    fn stop(model: ModelKind, tau: f64, steps: u64, censored: bool, g1: f64, g2: f64) -> Self {
        let which = if censored {
            PairMet::None
        } else {
            PairMet::from_flags(g1 == 0.0, g2 == 0.0)
        };
        CollisionSample {
            model,
            tau,
            steps,
            censored,
            stopped_gaps: GapPair::new(g1, g2),
            max_gap: g1.max(g2),
            which_pair_met: which,
        }
    }

    /// Integer `τ ∧ H` for lattice samples.
    pub fn tau_steps(&self) -> i64 {
        self.tau as i64
    }
}

fn lattice_run(
    model: ModelKind,
    start: DiscreteTriple,
    horizon: u64,
    check_start: bool,
    mut step: impl FnMut(&DiscreteTriple) -> DiscreteTriple,
) -> CollisionSample {
    let mut tri = start;
    if check_start && tri.gaps().in_s0() {
        let g = tri.gaps();
        return CollisionSample::stop(model, 0.0, 0, false, g.g1 as f64, g.g2 as f64);
    }
    for n in 1..=horizon {
        tri = step(&tri);
        debug_assert!(model == ModelKind::Ssrw || tri.is_ordered());
        let g = tri.gaps();
        if g.in_s0() {
            return CollisionSample::stop(model, n as f64, n, false, g.g1 as f64, g.g2 as f64);
        }
    }
    let g = tri.gaps();
    CollisionSample::stop(model, horizon as f64, horizon, true, g.g1 as f64, g.g2 as f64)
}

fn lattice_env_run<E: LatticeEnv>(
    model: ModelKind,
    start: DiscreteTriple,
    horizon: u64,
    check_start: bool,
    mut env: E,
    rng: &mut RngStream,
) -> CollisionSample {
    lattice_run(model, start, horizon, check_start, |t| lattice_step(t, &mut env, rng))
}

fn brownian_run(
    model: ModelKind,
    dt: f64,
    gaps: (f64, f64),
    horizon: f64,
    check_start: bool,
    rng: &mut RngStream,
) -> CollisionSample {
    if check_start && (gaps.0 == 0.0 || gaps.1 == 0.0) {
        return CollisionSample::stop(model, 0.0, 0, false, gaps.0, gaps.1);
    }
    let max_steps = (horizon / dt).ceil() as u64;
    let mut g = gaps;
    for n in 1..=max_steps {
        let (next, hit) = brownian_gap_step_detail(g, dt, rng);
        if hit[0] || hit[1] {
            let g1 = if hit[0] { 0.0 } else { next.0.max(0.0) };
            let g2 = if hit[1] { 0.0 } else { next.1.max(0.0) };
            return CollisionSample::stop(model, n as f64 * dt, n, false, g1, g2);
        }
        g = next;
    }
    CollisionSample::stop(model, max_steps as f64 * dt, max_steps, true, g.0, g.1)
}

fn poisson_run(
    model: ModelKind,
    start: ContinuousTriple,
    horizon: f64,
    check_start: bool,
    rng: &mut RngStream,
) -> CollisionSample {
    let mut s = start;
    let (a, b) = s.gaps();
    if check_start && poisson_in_m0(&s) {
        return CollisionSample::stop(model, 0.0, 0, false, a, b);
    }
    let mut jumps = 0;
    loop {
        let tubes = poisson_tube_union(&s).expect("jump process stays in its state space");
        let (next, _) = tube_jump(&s, &tubes, rng);
        if next.time > horizon {
            let (a, b) = s.gaps();
            return CollisionSample::stop(model, horizon, jumps, true, a, b);
        }
        jumps += 1;
        s = next;
        if poisson_in_m0(&s) {
            let (a, b) = s.gaps();
            return CollisionSample::stop(model, s.time, jumps, false, a, b);
        }
    }
}

/// Simulate replicate `replicate` of `query` to its first collision.
pub fn run_first_collision(query: &CollisionQuery, replicate: u64) -> Result<CollisionSample> {
    query.validate()?;
    let mut rng = crate::harness::derive_stream(query.master_seed, replicate);
    Ok(run_with_stream(query, &mut rng))
}

fn run_with_stream(query: &CollisionQuery, rng: &mut RngStream) -> CollisionSample {
    let check_start = query.convention == TimeConvention::FromZero;
    let model = query.model;
    match (model, query.starts) {
        (ModelKind::Ssrw, Starts::Lattice([x, y, z])) => {
            let start = DiscreteTriple::new(x, y, z, 0);
            lattice_run(model, start, query.horizon as u64, check_start, |t| {
                ssrw_triple_step(t, rng)
            })
        }
        (ModelKind::Scheidegger, Starts::Lattice([x, y, z])) => {
            let start = DiscreteTriple::new(x, y, z, 0);
            debug_assert!(Site::new(x, 0).is_even());
            lattice_env_run(model, start, query.horizon as u64, check_start, ScheideggerEnv::new(), rng)
        }
        (ModelKind::Howard { p }, Starts::Lattice([x, y, z])) => {
            let start = DiscreteTriple::new(x, y, z, 0);
            let env = HowardEnv::new(p).expect("validated");
            lattice_env_run(model, start, query.horizon as u64, check_start, env, rng)
        }
        (ModelKind::Brownian { dt }, Starts::Continuum([x, y, z])) => {
            brownian_run(model, dt, (y - x, z - y), query.horizon, check_start, rng)
        }
        (ModelKind::PoissonTree, Starts::Continuum([x, y, z])) => {
            poisson_run(model, ContinuousTriple::new(x, y, z, 0.0), query.horizon, check_start, rng)
        }
        _ => unreachable!("validated query"),
    }
}

/// `(n ∧ τ) + g1·g2` at the stop.
pub fn horizon_corrected_tau(sample: &CollisionSample) -> Result<f64> {
    if !sample.model.has_product_martingale() {
        return Err(Error::Unsupported {
            model: sample.model.name().into(),
            reason: "the product-plus-time martingale identity is not available".into(),
        });
    }
    Ok(sample.tau + sample.stopped_gaps.g1 * sample.stopped_gaps.g2)
}

fn all_samples(query: &CollisionQuery) -> Result<Vec<CollisionSample>> {
    query.validate()?;
    Ok(run_replicates(query.master_seed, query.reps, |_, rng| {
        run_with_stream(query, rng)
    }))
}

/// Aggregate of a collision-time experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub query: CollisionQuery,
    /// `τ ∧ H` over every replicate; censored ones contribute `H`.
    pub raw: SummaryStats,
    /// `(τ ∧ H) + g1·g2`, only for models with the product martingale.
    pub corrected: Option<SummaryStats>,
    pub censored_fraction: f64,
}

pub fn summarize_collisions(query: &CollisionQuery, samples: &[CollisionSample]) -> Result<CollisionReport> {
    let censored = samples.iter().filter(|s| s.censored).count() as u64;
    if censored == samples.len() as u64 {
        return Err(Error::AllCensored(censored));
    }
    let lattice = query.model.is_lattice();
    let raw = if lattice {
        summarize_int(&samples.iter().map(|s| s.tau_steps()).collect::<Vec<_>>(), censored)?
    } else {
        summarize_real(&samples.iter().map(|s| s.tau).collect::<Vec<_>>(), censored)?
    };
    let corrected = if query.model.has_product_martingale() {
        Some(if lattice {
            let v: Vec<i64> = samples
                .iter()
                .map(|s| s.tau_steps() + (s.stopped_gaps.g1 * s.stopped_gaps.g2) as i64)
                .collect();
            summarize_int(&v, censored)?
        } else {
            let v: Vec<f64> = samples
                .iter()
                .map(|s| horizon_corrected_tau(s).expect("martingale model"))
                .collect();
            summarize_real(&v, censored)?
        })
    } else {
        None
    };
    Ok(CollisionReport {
        query: *query,
        raw,
        corrected,
        censored_fraction: censored as f64 / samples.len() as f64,
    })
}

pub fn estimate_collision_expectation(query: &CollisionQuery) -> Result<CollisionReport> {
    let samples = all_samples(query)?;
    summarize_collisions(query, &samples)
}

/// Mean of `M` at the first collision of independent walks from
/// `-2i, 0, 2j`, over uncensored replicates.
pub fn max_gap_at_collision(i: i64, j: i64, reps: u64, horizon: f64, seed: u64) -> Result<SummaryStats> {
    let q = CollisionQuery::ssrw(i, j, horizon, reps, seed)?;
    let samples = all_samples(&q)?;
    let censored = samples.iter().filter(|s| s.censored).count() as u64;
    let m: Vec<i64> = samples
        .iter()
        .filter(|s| !s.censored)
        .map(|s| s.max_gap as i64)
        .collect();
    if m.is_empty() {
        return Err(Error::AllCensored(censored));
    }
    summarize_int(&m, censored)
}

/// One row of a Brownian discretization study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub dt: f64,
    /// `τ ∧ H` over all replicates.
    pub raw: SummaryStats,
    /// `(τ ∧ H_c) + D1·D2` at the short horizon `H_c`.
    pub corrected: SummaryStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianReport {
    pub x: f64,
    pub y: f64,
    pub target: f64,
    pub raw_horizon: f64,
    pub corrected_horizon: f64,
    /// Rows at `dt` and `dt / 4`.
    pub rows: Vec<RefinementRow>,
}

impl BrownianReport {
    pub fn coarse(&self) -> &RefinementRow {
        &self.rows[0]
    }

    pub fn fine(&self) -> &RefinementRow {
        &self.rows[1]
    }

    /// `|mean(dt/4) - xy| <= |mean(dt) - xy|` up to the combined 95% interval.
    pub fn refinement_ok(&self) -> bool {
        let (c, f) = (&self.coarse().corrected, &self.fine().corrected);
        let comb = (c.stderr * c.stderr + f.stderr * f.stderr).sqrt();
        (f.mean - self.target).abs() <= (c.mean - self.target).abs() + CI95_Z * comb
    }
}

/// Run one Brownian replicate, recording the corrected estimator at the short
/// horizon on the way to the long one. Returns `(raw τ ∧ H, corrected)`.
fn brownian_dual(
    x: f64,
    y: f64,
    dt: f64,
    raw_horizon: f64,
    corrected_horizon: f64,
    rng: &mut RngStream,
) -> (f64, f64, bool) {
    let max_steps = (raw_horizon / dt).ceil() as u64;
    let short_steps = (corrected_horizon / dt).ceil() as u64;
    let mut g = (x, y);
    let mut corrected = None;
    for n in 1..=max_steps {
        let (next, hit) = brownian_gap_step_detail(g, dt, rng);
        if hit[0] || hit[1] {
            let tau = n as f64 * dt;
            return (tau, corrected.unwrap_or(tau), false);
        }
        g = next;
        if n == short_steps {
            corrected = Some(n as f64 * dt + g.0 * g.1);
        }
    }
    let h = max_steps as f64 * dt;
    (h, corrected.unwrap_or(h + g.0 * g.1), true)
}

/// Estimate `E[τ]` for Brownian motions started at `-x, 0, y` at step `dt`
/// and `dt / 4`.
pub fn brownian_collision_expectation(
    x: f64,
    y: f64,
    dt: f64,
    reps: u64,
    seed: u64,
) -> Result<BrownianReport> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::param("gaps", "x and y must be positive"));
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    if reps < 1 {
        return Err(Error::param("reps", "must be at least 1"));
    }
    let raw_horizon = 1e3 * x * y;
    let corrected_horizon = 10.0 * x * y;
    let mut rows = Vec::with_capacity(2);
    for (k, step) in [dt, dt / 4.0].into_iter().enumerate() {
        let out = run_replicates(seed.wrapping_add(k as u64), reps, |_, rng| {
            brownian_dual(x, y, step, raw_horizon, corrected_horizon, rng)
        });
        let censored = out.iter().filter(|o| o.2).count() as u64;
        let raw: Vec<f64> = out.iter().map(|o| o.0).collect();
        let cor: Vec<f64> = out.iter().map(|o| o.1).collect();
        rows.push(RefinementRow {
            dt: step,
            raw: summarize_real(&raw, censored)?,
            corrected: summarize_real(&cor, 0)?,
        });
    }
    Ok(BrownianReport {
        x,
        y,
        target: x * y,
        raw_horizon,
        corrected_horizon,
        rows,
    })
}

/// Tail probability check `P(τ > n) <= 12 V / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub n: f64,
    pub p_hat: SummaryStats,
    pub bound: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonEntranceReport {
    pub start: [f64; 3],
    pub horizon: f64,
    pub tau: SummaryStats,
    /// `12 (v - u)(w - v)`.
    pub bound: f64,
    pub verdict: Verdict,
    pub tail: Vec<TailCheck>,
}

/// Poisson-tree triple entrance time into the coalesced set, against the
/// Lyapunov bound `12 (v - u)(w - v)`.
pub fn poisson_triple_entrance(u: f64, v: f64, w: f64, reps: u64, seed: u64) -> Result<PoissonEntranceReport> {
    let starts = Starts::Continuum([u, v, w]);
    let query = CollisionQuery::new(ModelKind::PoissonTree, starts, reps, seed)?;
    let samples = all_samples(&query)?;
    let censored = samples.iter().filter(|s| s.censored).count() as u64;
    let taus: Vec<f64> = samples.iter().map(|s| s.tau).collect();
    let tau = summarize_real(&taus, censored)?;
    let v0 = (v - u) * (w - v);
    let bound = 12.0 * v0;
    let verdict = one_sided_check(&tau, bound, Direction::AtMost);
    let mut tail = Vec::new();
    if bound > 0.0 {
        // Levels where the bound is q, keeping at least ~100 expected hits.
        for q in [0.5, 0.2, 0.1, 0.05, 0.02, 0.01] {
            if q * (reps as f64) < 100.0 {
                break;
            }
            let n = bound / q;
            if n > query.horizon {
                break;
            }
            let hits = taus.iter().filter(|&&t| t > n).count() as u64;
            let p_hat = SummaryStats::proportion(hits, reps)?;
            let verdict = one_sided_check(&p_hat, q, Direction::AtMost);
            tail.push(TailCheck {
                n,
                p_hat,
                bound: q,
                verdict,
            });
        }
    }
    Ok(PoissonEntranceReport {
        start: [u, v, w],
        horizon: query.horizon,
        tau,
        bound,
        verdict,
        tail,
    })
}

/// Affine envelope `C1 + C2·g1·g2` for a mean collision time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub c1: f64,
    pub c2: f64,
}

impl Envelope {
    pub fn at(&self, g1: i64, g2: i64) -> f64 {
        self.c1 + self.c2 * (g1 * g2) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub gaps: (i64, i64),
    pub stats: SummaryStats,
    pub envelope: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub envelope: Envelope,
    pub training: Vec<EnvelopeRow>,
    pub validation: Vec<EnvelopeRow>,
}

fn howard_mean(p: f64, g1: i64, g2: i64, reps: u64, seed: u64) -> Result<SummaryStats> {
    let q = CollisionQuery::new(
        ModelKind::Howard { p },
        Starts::Lattice([0, g1, g1 + g2]),
        reps,
        seed,
    )?;
    Ok(estimate_collision_expectation(&q)?.raw)
}

/// Fit the slope of the Howard mean collision time against `g1·g2` on a
/// training grid, lift the intercept until every training point's upper
/// confidence limit lies under the line, then check the resulting envelope
/// one-sided on a disjoint validation grid.
pub fn howard_envelope_check(
    p: f64,
    training: &[(i64, i64)],
    validation: &[(i64, i64)],
    reps: u64,
    seed: u64,
) -> Result<EnvelopeReport> {
    if training.len() < 2 {
        return Err(Error::param("training", "need at least two gap pairs"));
    }
    let train_stats: Vec<SummaryStats> = training
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| howard_mean(p, a, b, reps, seed.wrapping_add(k as u64)))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = training.iter().map(|&(a, b)| (a * b) as f64).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = train_stats.iter().map(|s| s.mean).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::param("training", "gap products must not all be equal"));
    }
    let sxy: f64 = xs
        .iter()
        .zip(&train_stats)
        .map(|(x, s)| (x - mx) * (s.mean - my))
        .sum();
    let c2 = (sxy / sxx).max(0.0);
    let c1 = xs
        .iter()
        .zip(&train_stats)
        .map(|(x, s)| s.ci95_high - c2 * x)
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let envelope = Envelope { c1, c2 };
    let row = |gaps: (i64, i64), stats: SummaryStats| {
        let e = envelope.at(gaps.0, gaps.1);
        EnvelopeRow {
            gaps,
            stats,
            envelope: e,
            verdict: one_sided_check(&stats, e, Direction::AtMost),
        }
    };
    let training_rows = training.iter().copied().zip(train_stats).map(|(g, s)| row(g, s)).collect();
    let offset = training.len() as u64;
    let mut validation_rows = Vec::with_capacity(validation.len());
    for (k, &(a, b)) in validation.iter().enumerate() {
        let s = howard_mean(p, a, b, reps, seed.wrapping_add(offset + k as u64))?;
        validation_rows.push(row((a, b), s));
    }
    Ok(EnvelopeReport {
        envelope,
        training: training_rows,
        validation: validation_rows,
    })
}
