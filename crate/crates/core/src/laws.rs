//! Empirical one-step laws checked against closed forms or a second
//! construction: Howard increments against their pmf, and the first jump of
//! three Poisson-tree branches read off a sampled forest against the jump
//! process.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{run_replicates, summarize_int, SummaryStats, Verdict};
use crate::models::brownian::ContinuousTriple;
use crate::models::lattice::{howard_increment_pmf, howard_increment_variance, HowardEnv, LatticeEnv, Site};
use crate::models::poisson::{
    build_poisson_forest, forest_triple_jump, poisson_in_m0, poisson_triple_jump,
    validate_poisson_state, Window,
};
use crate::stats::{ks_two_sample, KsResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCheck {
    pub k: i64,
    pub frequency: SummaryStats,
    pub expected: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementLawReport {
    pub p: f64,
    /// Mean of `I^2`; the increment is symmetric so this is its variance.
    pub second_moment: SummaryStats,
    /// `sigma0(p)^2`.
    pub target: f64,
    pub variance_verdict: Verdict,
    pub bins: Vec<BinCheck>,
}

impl IncrementLawReport {
    pub fn verdict(&self) -> Verdict {
        self.bins
            .iter()
            .fold(self.variance_verdict, |v, b| v.combine(b.verdict))
    }
}

/// Draw `reps` independent Howard increments (the ancestor of the origin in
/// a fresh environment).
pub fn sample_howard_increments(p: f64, reps: u64, seed: u64) -> Result<Vec<i64>> {
    HowardEnv::new(p)?;
    Ok(run_replicates(seed, reps, |_, rng| {
        let mut env = HowardEnv::new(p).expect("validated p");
        env.ancestor(Site::new(0, 0), rng)
    }))
}

/// Variance within `k_var` standard errors of `sigma0^2` and each bin
/// `|k| <= kmax` within `k_bin` binomial standard errors of the pmf.
pub fn increment_law_check(
    p: f64,
    reps: u64,
    kmax: i64,
    k_var: f64,
    k_bin: f64,
    seed: u64,
) -> Result<IncrementLawReport> {
    if reps < 2 {
        return Err(Error::param("reps", "must be at least 2"));
    }
    if kmax < 0 {
        return Err(Error::param("kmax", "must be non-negative"));
    }
    let incs = sample_howard_increments(p, reps, seed)?;
    let squares: Vec<i64> = incs.iter().map(|i| i * i).collect();
    let second_moment = summarize_int(&squares, 0)?;
    let target = howard_increment_variance(p)?;
    let variance_verdict = verdict_within(&second_moment, target, k_var);
    let pmf = howard_increment_pmf(p, kmax.max(1))?;
    let mut bins = Vec::with_capacity((2 * kmax + 1) as usize);
    for k in -kmax..=kmax {
        let count = incs.iter().filter(|&&i| i == k).count() as u64;
        let frequency = SummaryStats::proportion(count, reps)?;
        let expected = pmf.prob(k);
        // Binomial stderr at the hypothesized probability, so an empty bin
        // is not mistaken for an exact match.
        let se = (expected * (1.0 - expected) / reps as f64).sqrt();
        let verdict = if (frequency.mean - expected).abs() <= k_bin * se {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        bins.push(BinCheck {
            k,
            frequency,
            expected,
            verdict,
        });
    }
    Ok(IncrementLawReport {
        p,
        second_moment,
        target,
        variance_verdict,
        bins,
    })
}

fn verdict_within(s: &SummaryStats, target: f64, k: f64) -> Verdict {
    if s.within(target, k) {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestJumpReport {
    pub state: [f64; 3],
    pub n: u64,
    /// Forest replicates discarded because a tube left the window.
    pub censored: u64,
    /// Two-sample test on the waiting time to the first jump.
    pub waiting_time: KsResult,
    /// Two-sample test on the middle branch's increment at that jump.
    pub middle_increment: KsResult,
    pub alpha: f64,
}

impl ForestJumpReport {
    pub fn verdict(&self) -> Verdict {
        if self.waiting_time.p_value > self.alpha && self.middle_increment.p_value > self.alpha {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Height of the forest window above the start; a tube stays empty that long
/// with probability `e^-40`.
const FOREST_HEIGHT: f64 = 40.0;

/// Compare the first jump of the branches from `(u, v, w)` at time 0 between
/// a sampled forest and the tube-union jump process, `n` draws each.
pub fn forest_jump_agreement(u: f64, v: f64, w: f64, n: u64, alpha: f64, seed: u64) -> Result<ForestJumpReport> {
    let state = ContinuousTriple::new(u, v, w, 0.0);
    validate_poisson_state(&state)?;
    if poisson_in_m0(&state) {
        return Err(Error::Absorbed);
    }
    if n < 2 {
        return Err(Error::param("reps", "must be at least 2"));
    }
    let window = Window::new(u - 1.5, w + 1.5, 0.0, FOREST_HEIGHT)?;
    let forest_draws = run_replicates(seed, n, |_, rng| {
        let forest = build_poisson_forest(window, rng);
        forest_triple_jump(&forest, &state).map(|(_, e)| (e.dt, e.increment(1, v)))
    });
    let jump_draws = run_replicates(seed.wrapping_add(1), n, |_, rng| {
        let (_, e) = poisson_triple_jump(&state, rng).expect("validated state");
        (e.dt, e.increment(1, v))
    });
    let censored = forest_draws.iter().filter(|d| d.is_none()).count() as u64;
    let forest: Vec<(f64, f64)> = forest_draws.into_iter().flatten().collect();
    let fdt: Vec<f64> = forest.iter().map(|d| d.0).collect();
    let finc: Vec<f64> = forest.iter().map(|d| d.1).collect();
    let jdt: Vec<f64> = jump_draws.iter().map(|d| d.0).collect();
    let jinc: Vec<f64> = jump_draws.iter().map(|d| d.1).collect();
    Ok(ForestJumpReport {
        state: [u, v, w],
        n,
        censored,
        waiting_time: ks_two_sample(&fdt, &jdt)?,
        middle_increment: ks_two_sample(&finc, &jinc)?,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increment_law_small_sample() {
        let r = increment_law_check(0.5, 50_000, 3, 4.0, 4.0, 1).unwrap();
        assert_eq!(r.bins.len(), 7);
        assert_eq!(r.verdict(), Verdict::Pass, "{r:?}");
        assert!(increment_law_check(0.0, 100, 3, 3.0, 4.0, 1).is_err());
    }

    #[test]
    fn forest_and_jump_process_agree() {
        let r = forest_jump_agreement(0.0, 0.75, 2.0, 2000, 0.01, 3).unwrap();
        assert_eq!(r.censored, 0);
        assert_eq!(r.verdict(), Verdict::Pass, "{r:?}");
    }

    #[test]
    fn forest_check_rejects_coalesced_state() {
        assert_eq!(forest_jump_agreement(0.0, 0.0, 1.0, 10, 0.01, 0), Err(Error::Absorbed));
    }
}
