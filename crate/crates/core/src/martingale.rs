//! Product martingales of three independent walks and Brownian motions.
//!
//! Before the first collision, with gaps `D1, D2`, both `D1·D2 + n` and
//! `D1·D2·(D1 + D2)` are martingales. The checks here verify the one-step
//! identities by exhaustive enumeration and the stopped identities by
//! simulation.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    one_sided_check, run_replicates, summarize_real, Direction, IntAccumulator,
    SummaryStats, Verdict,
};
use crate::models::brownian::brownian_triple_at;
use crate::models::lattice::{ssrw_triple_step, DiscreteTriple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MartingaleKind {
    /// `D1·D2 + n`.
    ProductPlusTime,
    /// `D1·D2·(D1 + D2)`.
    TripleProduct,
}

impl MartingaleKind {
    pub fn name(self) -> &'static str {
        match self {
            MartingaleKind::ProductPlusTime => "product_plus_time",
            MartingaleKind::TripleProduct => "triple_product",
        }
    }

    /// Value at gaps `(a, b)` and time `n`.
    fn value(self, a: i64, b: i64, n: i64) -> i64 {
        match self {
            MartingaleKind::ProductPlusTime => a * b + n,
            MartingaleKind::TripleProduct => a * b * (a + b),
        }
    }
}

fn check_positive_even(name: &'static str, g: i64) -> Result<()> {
    if g <= 0 || g % 2 != 0 {
        return Err(Error::param(name, format!("must be a positive even integer, got {g}")));
    }
    Ok(())
}

/// Conditional one-step drift from gaps `(g1, g2)` at time 0, averaged over
/// the eight equally likely increment triples.
pub fn exact_one_step_drift(kind: MartingaleKind, g1: i64, g2: i64) -> Result<Ratio<i64>> {
    check_positive_even("g1", g1)?;
    check_positive_even("g2", g2)?;
    let before = kind.value(g1, g2, 0);
    let mut total = 0i64;
    for signs in 0..8u32 {
        let step = |k: u32| if signs >> k & 1 == 1 { 1 } else { -1 };
        let (l, m, r) = (step(0), step(1), step(2));
        total += kind.value(g1 + m - l, g2 + r - m, 1) - before;
    }
    Ok(Ratio::new(total, 8))
}

fn check_ij(i: i64, j: i64) -> Result<()> {
    if i < 1 || j < 1 {
        return Err(Error::param("gaps", format!("i and j must be at least 1, got ({i}, {j})")));
    }
    Ok(())
}

fn check_reps(reps: u64) -> Result<()> {
    if reps < 1 {
        return Err(Error::param("reps", "must be at least 1"));
    }
    Ok(())
}

/// Run independent walks from `-2i, 0, 2j` until `n ∧ τ`; returns the gaps
/// and the stopping time.
fn stopped_gaps(i: i64, j: i64, n: u64, rng: &mut crate::harness::RngStream) -> (i64, i64, i64) {
    let mut t = DiscreteTriple::new(-2 * i, 0, 2 * j, 0);
    for k in 1..=n {
        t = ssrw_triple_step(&t, rng);
        let g = t.gaps();
        if g.in_s0() {
            return (g.g1, g.g2, k as i64);
        }
    }
    let g = t.gaps();
    (g.g1, g.g2, n as i64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoppedIdentity {
    pub i: i64,
    pub j: i64,
    pub n: u64,
    /// Mean of `D1·D2 + (n ∧ τ)`.
    pub product_plus_time: SummaryStats,
    /// `4ij`.
    pub product_target: f64,
    /// Mean of `D1·D2·(D1 + D2)` at `n ∧ τ`.
    pub triple_product: SummaryStats,
    /// `8ij(i + j)`.
    pub triple_target: f64,
}

impl StoppedIdentity {
    pub fn verdict(&self, k: f64) -> Verdict {
        let ok = self.product_plus_time.within(self.product_target, k)
            && self.triple_product.within(self.triple_target, k);
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Both martingales stopped at `n ∧ τ` for walks from `-2i, 0, 2j`.
pub fn stopped_identity_check(i: i64, j: i64, n: u64, reps: u64, seed: u64) -> Result<StoppedIdentity> {
    check_ij(i, j)?;
    check_reps(reps)?;
    let out = run_replicates(seed, reps, |_, rng| {
        let (a, b, tau) = stopped_gaps(i, j, n, rng);
        (
            MartingaleKind::ProductPlusTime.value(a, b, tau),
            MartingaleKind::TripleProduct.value(a, b, tau),
        )
    });
    let first: IntAccumulator = out.iter().map(|o| o.0).collect();
    let second: IntAccumulator = out.iter().map(|o| o.1).collect();
    Ok(StoppedIdentity {
        i,
        j,
        n,
        product_plus_time: SummaryStats::from_int_accumulator(&first, 0)?,
        product_target: (4 * i * j) as f64,
        triple_product: SummaryStats::from_int_accumulator(&second, 0)?,
        triple_target: (8 * i * j * (i + j)) as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UiBound {
    /// Mean of `(D1·D2)^{3/2}` at `n ∧ τ`.
    pub stats: SummaryStats,
    /// `4ij(i + j)`.
    pub bound: f64,
    pub verdict: Verdict,
}

/// Uniform integrability bound `E[(D1·D2)^{3/2}] <= 4ij(i+j)` at `n ∧ τ`.
pub fn ui_bound_check(i: i64, j: i64, n: u64, reps: u64, seed: u64) -> Result<UiBound> {
    check_ij(i, j)?;
    check_reps(reps)?;
    let v = run_replicates(seed, reps, |_, rng| {
        let (a, b, _) = stopped_gaps(i, j, n, rng);
        ((a * b) as f64).powf(1.5)
    });
    let stats = summarize_real(&v, 0)?;
    let bound = (4 * i * j * (i + j)) as f64;
    let verdict = one_sided_check(&stats, bound, Direction::AtMost);
    Ok(UiBound {
        stats,
        bound,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedTimeCheck {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    /// Mean of `D1·D2 + t`.
    pub product_plus_time: SummaryStats,
    /// `xy`.
    pub product_target: f64,
    /// Mean of `D1·D2·(D1 + D2)`.
    pub triple_product: SummaryStats,
    /// `xy(x + y)`.
    pub triple_target: f64,
}

impl FixedTimeCheck {
    pub fn verdict(&self, k: f64) -> Verdict {
        let ok = self.product_plus_time.within(self.product_target, k)
            && self.triple_product.within(self.triple_target, k);
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Both Brownian martingales at a fixed time `t`, from exact Gaussian
/// samples of the triple started at `(-x, 0, y)`.
pub fn brownian_fixed_time_check(x: f64, y: f64, t: f64, reps: u64, seed: u64) -> Result<FixedTimeCheck> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::param("gaps", "x and y must be positive"));
    }
    if !(t >= 0.0) {
        return Err(Error::param("t", "must be non-negative"));
    }
    check_reps(reps)?;
    let out = run_replicates(seed, reps, |_, rng| {
        let tri = brownian_triple_at(t, x, y, rng).expect("validated time");
        let (a, b) = tri.gaps();
        (a * b + t, a * b * (a + b))
    });
    let first: Vec<f64> = out.iter().map(|o| o.0).collect();
    let second: Vec<f64> = out.iter().map(|o| o.1).collect();
    Ok(FixedTimeCheck {
        x,
        y,
        t,
        product_plus_time: summarize_real(&first, 0)?,
        product_target: x * y,
        triple_product: summarize_real(&second, 0)?,
        triple_target: x * y * (x + y),
    })
}
