//! Foster–Lyapunov drift checks for the gap chains.
//!
//! A [`Chain`] exposes a sampling kernel, the target set `M0` (coalesced
//! states), an exceptional set `M1` where the drift may be positive, the raw
//! potential `g1·g2` and the constants `(d1, d2, b, p0, r0)`. The Lyapunov
//! function is `V = g1·g2 / d1`; if its drift is at most `-1` off `M1` and
//! every state of `M1` enters `M0` in one step with probability at least
//! `p0`, the mean entrance time into `M0` is bounded by `V + b / p0`.
//!
//! The Poisson tree is a continuous-time jump process; its generator applied
//! to `V(u, v, w) = (v - u)(w - v)` has a closed form evaluated in
//! [`generator_v_poisson`].

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    one_sided_check, run_replicates, summarize_int, summarize_real, Direction, RngStream,
    SummaryStats, Verdict,
};
use crate::models::brownian::ContinuousTriple;
use crate::models::lattice::{
    howard_increment_variance, lattice_step, ssrw_triple_step, DiscreteTriple, GapPair, HowardEnv,
    ScheideggerEnv,
};
use crate::models::poisson::{poisson_in_m0, poisson_triple_jump, poisson_tube_union, HALF_WIDTH};

/// Constants of the drift conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    /// Guaranteed decrease of the raw potential off `M1`.
    pub d1: f64,
    /// Bound on the increase of the raw potential anywhere.
    pub d2: f64,
    /// Drift excess of `V` allowed on `M1`.
    pub b: f64,
    /// One-step entrance probability into `M0` from `M1`.
    pub p0: f64,
    /// Width of `M1` in units of the smaller gap (0 when `M1` is empty).
    pub r0: i64,
}

/// A discrete-time chain with a drift certificate.
pub trait Chain: Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;

    fn name(&self) -> &'static str;

    fn step(&self, state: &Self::State, rng: &mut RngStream) -> Self::State;

    fn in_m0(&self, state: &Self::State) -> bool;

    fn in_m1(&self, state: &Self::State) -> bool;

    /// Raw potential, the gap product.
    fn potential(&self, state: &Self::State) -> i64;

    fn constants(&self) -> DriftConstants;

    /// `V = potential / d1`.
    fn lyapunov(&self, state: &Self::State) -> f64 {
        self.potential(state) as f64 / self.constants().d1
    }
}

/// Gap pair of three Scheidegger paths. One-step drift of `g1·g2` is exactly
/// `-1` before coalescence, so `d1 = 1`, `b = 0` and `M1` is empty.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScheideggerGapChain;

impl Chain for ScheideggerGapChain {
    type State = GapPair<i64>;

    fn name(&self) -> &'static str {
        "scheidegger"
    }

    fn step(&self, state: &GapPair<i64>, rng: &mut RngStream) -> GapPair<i64> {
        let mut env = ScheideggerEnv::new();
        lattice_step(&DiscreteTriple::from_gaps(state.g1, state.g2), &mut env, rng).gaps()
    }

    fn in_m0(&self, state: &GapPair<i64>) -> bool {
        state.in_s0()
    }

    fn in_m1(&self, _: &GapPair<i64>) -> bool {
        false
    }

    fn potential(&self, state: &GapPair<i64>) -> i64 {
        state.product()
    }

    fn constants(&self) -> DriftConstants {
        SCHEIDEGGER_CONSTANTS
    }
}

/// Gap pair of three independent simple random walks; same constants as the
/// Scheidegger chain.
#[derive(Clone, Copy, Debug, Default)]
pub struct SsrwGapChain;

impl Chain for SsrwGapChain {
    type State = GapPair<i64>;

    fn name(&self) -> &'static str {
        "ssrw"
    }

    fn step(&self, state: &GapPair<i64>, rng: &mut RngStream) -> GapPair<i64> {
        ssrw_triple_step(&DiscreteTriple::from_gaps(state.g1, state.g2), rng).gaps()
    }

    fn in_m0(&self, state: &GapPair<i64>) -> bool {
        state.in_s0()
    }

    fn in_m1(&self, _: &GapPair<i64>) -> bool {
        false
    }

    fn potential(&self, state: &GapPair<i64>) -> i64 {
        state.product()
    }

    fn constants(&self) -> DriftConstants {
        SCHEIDEGGER_CONSTANTS
    }
}

const SCHEIDEGGER_CONSTANTS: DriftConstants = DriftConstants {
    d1: 1.0,
    d2: 1.0,
    b: 0.0,
    p0: 1.0,
    r0: 0,
};

/// Gap pair of three paths in Howard's network.
///
/// With `s = E[I^2]`: `d1 = s/2`, `d2 = 4s`, `p0 = (1-p)^(2 r0) p`, and
/// `b = d2 / d1` after rescaling the potential by `d1`. `M1` holds the
/// uncoalesced states whose smaller gap is at most `r0`.
#[derive(Clone, Copy, Debug)]
pub struct HowardGapChain {
    p: f64,
    r0: i64,
    second_moment: f64,
}

impl HowardGapChain {
    pub fn new(p: f64, r0: i64) -> Result<Self> {
        let second_moment = howard_increment_variance(p)?;
        if r0 < 1 {
            return Err(Error::param("r0", format!("must be at least 1, got {r0}")));
        }
        Ok(HowardGapChain {
            p,
            r0,
            second_moment,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn r0(&self) -> i64 {
        self.r0
    }

    /// `E[I^2]` of one increment.
    pub fn increment_second_moment(&self) -> f64 {
        self.second_moment
    }

    /// `(1-p)^(2 r0) p`.
    pub fn p0(&self) -> f64 {
        (1.0 - self.p).powi(2 * self.r0 as i32) * self.p
    }
}

impl Chain for HowardGapChain {
    type State = GapPair<i64>;

    fn name(&self) -> &'static str {
        "howard"
    }

    fn step(&self, state: &GapPair<i64>, rng: &mut RngStream) -> GapPair<i64> {
        let mut env = HowardEnv::new(self.p).expect("validated in constructor");
        lattice_step(&DiscreteTriple::from_gaps(state.g1, state.g2), &mut env, rng).gaps()
    }

    fn in_m0(&self, state: &GapPair<i64>) -> bool {
        state.in_s0()
    }

    fn in_m1(&self, state: &GapPair<i64>) -> bool {
        !state.in_s0() && state.g1.min(state.g2) <= self.r0
    }

    fn potential(&self, state: &GapPair<i64>) -> i64 {
        state.product()
    }

    fn constants(&self) -> DriftConstants {
        let d1 = self.second_moment / 2.0;
        let d2 = 4.0 * self.second_moment;
        DriftConstants {
            d1,
            d2,
            b: d2 / d1,
            p0: self.p0(),
            r0: self.r0,
        }
    }
}

fn check_reps(reps: u64) -> Result<()> {
    if reps < 1 {
        return Err(Error::param("reps", "must be at least 1"));
    }
    Ok(())
}

/// Monte Carlo one-step drift of the raw potential from `state`.
pub fn estimate_drift<C: Chain>(chain: &C, state: &C::State, reps: u64, seed: u64) -> Result<SummaryStats> {
    check_reps(reps)?;
    if chain.in_m0(state) {
        return Err(Error::Absorbed);
    }
    let v0 = chain.potential(state);
    let deltas = run_replicates(seed, reps, |_, rng| chain.potential(&chain.step(state, rng)) - v0);
    summarize_int(&deltas, 0)
}

/// Exact one-step drift of `g1·g2` for Scheidegger gaps, averaging over the
/// eight equally likely arrow triples.
pub fn exact_drift_scheidegger(g1: i64, g2: i64) -> Result<Ratio<i64>> {
    for (name, g) in [("g1", g1), ("g2", g2)] {
        if g < 0 || g % 2 != 0 {
            return Err(Error::param(name, format!("must be a non-negative even integer, got {g}")));
        }
    }
    if g1 == 0 || g2 == 0 {
        return Ok(Ratio::from_integer(0));
    }
    let mut total = 0i64;
    for arrows in 0..8u32 {
        let b: Vec<i64> = (0..3).map(|k| if arrows >> k & 1 == 1 { 1 } else { -1 }).collect();
        let n1 = g1 + b[1] - b[0];
        let n2 = g2 + b[2] - b[1];
        total += n1 * n2 - g1 * g2;
    }
    Ok(Ratio::new(total, 8))
}

/// Frequency of one-step entrance into `M0` from a state of `M1`.
pub fn estimate_hit_prob<C: Chain>(chain: &C, state: &C::State, reps: u64, seed: u64) -> Result<SummaryStats> {
    check_reps(reps)?;
    if !chain.in_m1(state) {
        return Err(Error::InvalidState(format!(
            "{state:?} is not in the exceptional set of the {} chain",
            chain.name()
        )));
    }
    let hits = run_replicates(seed, reps, |_, rng| chain.in_m0(&chain.step(state, rng)));
    SummaryStats::proportion(hits.iter().filter(|&&h| h).count() as u64, reps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntranceReport {
    /// `τ(M0) ∧ H` over all replicates.
    pub tau: SummaryStats,
    /// `V(state) + b / p0`.
    pub bound: f64,
    pub horizon: u64,
    pub verdict: Verdict,
}

/// Entrance time `inf {n >= 1 : Y_n in M0}` against `V + b / p0`.
///
/// Censored replicates contribute `H`, which biases the mean low; the
/// censored count is reported and a fully censored run is inconclusive.
pub fn verify_entrance_bound<C: Chain>(
    chain: &C,
    state: &C::State,
    reps: u64,
    horizon: u64,
    seed: u64,
) -> Result<EntranceReport> {
    check_reps(reps)?;
    if horizon < 1 {
        return Err(Error::param("horizon", "must be at least 1"));
    }
    if chain.in_m0(state) {
        return Err(Error::Absorbed);
    }
    let c = chain.constants();
    let bound = chain.lyapunov(state) + c.b / c.p0;
    let out = run_replicates(seed, reps, |_, rng| {
        let mut s = state.clone();
        for n in 1..=horizon {
            s = chain.step(&s, rng);
            if chain.in_m0(&s) {
                return (n as i64, false);
            }
        }
        (horizon as i64, true)
    });
    let censored = out.iter().filter(|o| o.1).count() as u64;
    let taus: Vec<i64> = out.iter().map(|o| o.0).collect();
    let tau = summarize_int(&taus, censored)?;
    let verdict = if censored == reps {
        Verdict::Inconclusive
    } else {
        one_sided_check(&tau, bound, Direction::AtMost)
    };
    Ok(EntranceReport {
        tau,
        bound,
        horizon,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub gap: i64,
    pub drift: SummaryStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftCurve {
    pub p: f64,
    /// `E[I^2]`.
    pub second_moment: f64,
    pub rows: Vec<DriftRow>,
    /// Smallest `r0` such that every sampled gap above it has drift upper
    /// confidence limit at most `-E[I^2]/2`. `None` when the largest
    /// sampled gap itself fails.
    pub r0: Option<i64>,
}

/// Howard drift of `g1·g2` at symmetric gaps `(g, g)`.
pub fn howard_drift_curve(p: f64, gaps: &[i64], reps: u64, seed: u64) -> Result<DriftCurve> {
    let chain = HowardGapChain::new(p, 1)?;
    let s = chain.increment_second_moment();
    let mut sorted = gaps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.first().is_some_and(|&g| g < 1) {
        return Err(Error::param("gaps", "must be positive"));
    }
    let rows: Vec<DriftRow> = sorted
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            estimate_drift(&chain, &GapPair::new(g, g), reps, seed.wrapping_add(k as u64))
                .map(|drift| DriftRow { gap: g, drift })
        })
        .collect::<Result<_>>()?;
    let threshold = -s / 2.0;
    let last_fail = rows.iter().rposition(|r| r.drift.ci95_high > threshold);
    let r0 = match last_fail {
        None => Some(0),
        Some(i) if i + 1 == rows.len() => None,
        Some(i) => Some(rows[i].gap),
    };
    Ok(DriftCurve {
        p,
        second_moment: s,
        rows,
        r0,
    })
}

/// Closed-form generator of the Poisson-tree product potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub state: [f64; 3],
    /// `GV(u, v, w)`.
    pub gv_value: f64,
    /// The constant `1/12` contributed by the middle branch's own jumps.
    pub d: f64,
    /// `(E[I_u I_v], E[I_v I_w])` for one jump.
    pub cross_terms: (f64, f64),
    /// Length of the tube union, the total jump rate.
    pub rate: f64,
    /// `|A|` times the mean one-jump change of the potential.
    pub mc_estimate: Option<SummaryStats>,
}

/// `∫_lo^hi (s - a)(s - b) ds`, exactly from the antiderivative.
fn overlap_integral(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let f = |s: f64| s * s * s / 3.0 - (a + b) * s * s / 2.0 + a * b * s;
    f(hi) - f(lo)
}

/// Integral of `(s - a)(s - b)` over the intersection of the two tubes.
fn tube_overlap(a: f64, b: f64) -> f64 {
    overlap_integral(a, b, b - HALF_WIDTH, a + HALF_WIDTH)
}

fn generator_state(u: f64, v: f64, w: f64) -> Result<ContinuousTriple> {
    let state = ContinuousTriple::new(u, v, w, 0.0);
    poisson_tube_union(&state)?;
    if poisson_in_m0(&state) {
        return Err(Error::Absorbed);
    }
    Ok(state)
}

/// `GV(u, v, w) = -1/12 + ∫(s-u)(s-v) + ∫(s-v)(s-w)` over the tube overlaps.
///
/// Pass `reps > 0` to attach the Monte Carlo estimate `|A|·mean ΔV` over one
/// sampled jump.
pub fn generator_v_poisson(u: f64, v: f64, w: f64, reps: u64, seed: u64) -> Result<GeneratorReport> {
    let state = generator_state(u, v, w)?;
    let rate = poisson_tube_union(&state)?.length;
    let uv = tube_overlap(u, v);
    let vw = tube_overlap(v, w);
    let d = 1.0 / 12.0;
    let gv_value = -d + uv + vw;
    let mc_estimate = if reps > 0 {
        let v0 = state.gap_product();
        let deltas = run_replicates(seed, reps, |_, rng| {
            let (next, _) = poisson_triple_jump(&state, rng).expect("validated state");
            rate * (next.gap_product() - v0)
        });
        Some(summarize_real(&deltas, 0)?)
    } else {
        None
    };
    Ok(GeneratorReport {
        state: [u, v, w],
        gv_value,
        d,
        cross_terms: (uv / rate, vw / rate),
        rate,
        mc_estimate,
    })
}
