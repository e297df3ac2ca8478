//! Counting statistic η for the lattice networks.
//!
//! `η(ε; n, t)` is the number of distinct positions at time `⌈nt⌉` of the
//! paths started from every lattice site of `[0, ε√n]` at time 0 in one
//! shared environment. Any path that started earlier passes through one of
//! those sites at time 0, so this count dominates the count over all paths
//! born by time 0. Simulation tracks only the frontier of distinct positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{
    derive_stream, run_replicates, RngStream, SummaryStats, Verdict, CI95_Z,
};
use crate::lyapunov::{Chain, HowardGapChain};
use crate::models::lattice::{GapPair, HowardEnv, LatticeEnv, ScheideggerEnv, Site};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum CountingModel {
    Scheidegger,
    Howard { p: f64 },
}

impl CountingModel {
    pub fn name(&self) -> &'static str {
        match self {
            CountingModel::Scheidegger => "scheidegger",
            CountingModel::Howard { .. } => "howard",
        }
    }

    fn validate(&self) -> Result<()> {
        if let CountingModel::Howard { p } = self {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
            }
        }
        Ok(())
    }

    /// Start sites in `[0, len]`: even integers for Scheidegger, all
    /// integers for Howard.
    pub fn start_sites(&self, len: f64) -> Vec<i64> {
        if !(len >= 0.0) {
            return Vec::new();
        }
        let top = len.floor() as i64;
        let stride = match self {
            CountingModel::Scheidegger => 2,
            CountingModel::Howard { .. } => 1,
        };
        (0..=top).step_by(stride).collect()
    }
}

/// Environment of either model behind one interface.
enum Env {
    Scheidegger(ScheideggerEnv),
    Howard(HowardEnv),
}

impl Env {
    fn new(model: &CountingModel) -> Self {
        match *model {
            CountingModel::Scheidegger => Env::Scheidegger(ScheideggerEnv::new()),
            CountingModel::Howard { p } => Env::Howard(HowardEnv::new(p).expect("validated p")),
        }
    }

    fn ancestor(&mut self, site: Site, rng: &mut RngStream) -> i64 {
        match self {
            Env::Scheidegger(e) => e.ancestor(site, rng),
            Env::Howard(e) => e.ancestor(site, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaQuery {
    pub model: CountingModel,
    pub epsilon: f64,
    pub n: u64,
    pub t: f64,
    pub reps: u64,
    pub master_seed: u64,
}

impl EtaQuery {
    pub fn new(model: CountingModel, epsilon: f64, n: u64, t: f64, reps: u64, master_seed: u64) -> Result<Self> {
        let q = EtaQuery {
            model,
            epsilon,
            n,
            t,
            reps,
            master_seed,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::param("t", "must be positive"));
        }
        if self.n < 1 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if self.reps < 1 {
            return Err(Error::param("reps", "must be at least 1"));
        }
        Ok(())
    }

    /// `ε√n`.
    pub fn interval_length(&self) -> f64 {
        self.epsilon * (self.n as f64).sqrt()
    }

    /// `⌈nt⌉`.
    pub fn steps(&self) -> u64 {
        (self.n as f64 * self.t).ceil() as u64
    }

    pub fn start_sites(&self) -> Vec<i64> {
        self.model.start_sites(self.interval_length())
    }
}

/// Advance the frontier of distinct positions for `steps` steps, stopping
/// early once fewer than `floor` positions remain. Multiplicities record how
/// many start sites share each position.
fn frontier_run(
    model: &CountingModel,
    starts: &[i64],
    steps: u64,
    floor: usize,
    rng: &mut RngStream,
) -> Vec<(i64, u32)> {
    let mut env = Env::new(model);
    let mut frontier: Vec<(i64, u32)> = starts.iter().map(|&x| (x, 1)).collect();
    let mut next: Vec<(i64, u32)> = Vec::with_capacity(frontier.len());
    for t in 0..steps as i64 {
        if frontier.len() < floor {
            break;
        }
        next.clear();
        for &(x, m) in &frontier {
            let y = env.ancestor(Site::new(x, t), rng);
            match next.last_mut() {
                Some(last) if last.0 == y => last.1 += m,
                _ => next.push((y, m)),
            }
        }
        debug_assert!(next.windows(2).all(|w| w[0].0 < w[1].0), "paths crossed");
        std::mem::swap(&mut frontier, &mut next);
    }
    frontier
}

/// η for replicate `replicate` of `query`.
pub fn eta_sample(query: &EtaQuery, replicate: u64) -> Result<usize> {
    query.validate()?;
    let mut rng = derive_stream(query.master_seed, replicate);
    Ok(frontier_run(&query.model, &query.start_sites(), query.steps(), 2, &mut rng).len())
}

/// η by following every start site separately in the same environment and
/// counting distinct final positions. Agrees exactly with [`eta_sample`].
pub fn eta_sample_tracked(query: &EtaQuery, replicate: u64) -> Result<usize> {
    query.validate()?;
    let mut rng = derive_stream(query.master_seed, replicate);
    let paths = lattice_paths(&query.model, &query.start_sites(), query.steps(), &mut rng);
    let mut last: Vec<i64> = paths.iter().filter_map(|p| p.last().copied()).collect();
    last.sort_unstable();
    last.dedup();
    Ok(last.len())
}

/// Full trajectories of paths from `starts` (sorted) at time 0 through one
/// shared environment; each has `steps + 1` positions.
pub fn lattice_paths(model: &CountingModel, starts: &[i64], steps: u64, rng: &mut RngStream) -> Vec<Vec<i64>> {
    let mut env = Env::new(model);
    let mut paths: Vec<Vec<i64>> = starts
        .iter()
        .map(|&x| {
            let mut v = Vec::with_capacity(steps as usize + 1);
            v.push(x);
            v
        })
        .collect();
    for t in 0..steps as i64 {
        for path in paths.iter_mut() {
            let x = *path.last().expect("non-empty path");
            path.push(env.ancestor(Site::new(x, t), rng));
        }
    }
    paths
}

/// One point of a decay curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub k: usize,
    /// Number of start sites in the interval.
    pub sites: usize,
    /// Frequency of `η >= k`.
    pub p_hat: SummaryStats,
    /// `p_hat / ε` and its standard error.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// Markov union bound on `P(η >= 3)`, when an exact collision mean is
    /// available.
    pub markov_envelope: Option<f64>,
    pub verdict: Verdict,
}

/// `Σ_i (s_{i+1} - s_i)(s_m - s_{i+1}) / N` over start sites `s_0 < ... < s_m`.
///
/// `η >= 3` forces some triple `(s_i, s_{i+1}, s_m)` to stay uncollided for
/// `N` steps; for Scheidegger each has mean collision time equal to its gap
/// product, and Markov's inequality bounds each term.
pub fn scheidegger_union_envelope(sites: &[i64], steps: u64) -> f64 {
    let m = sites.len();
    if m < 3 || steps == 0 {
        return if m < 3 { 0.0 } else { 1.0 };
    }
    let last = sites[m - 1];
    let total: i64 = (0..m - 2)
        .map(|i| (sites[i + 1] - sites[i]) * (last - sites[i + 1]))
        .sum();
    (total as f64 / steps as f64).min(1.0)
}

/// Estimate `P(η >= k)` along a descending ε grid.
pub fn b_curve(
    model: CountingModel,
    k: usize,
    epsilons: &[f64],
    n: u64,
    t: f64,
    reps: u64,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if !(k == 2 || k == 3) {
        return Err(Error::param("k", format!("threshold must be 2 or 3, got {k}")));
    }
    if epsilons.is_empty() {
        return Err(Error::param("epsilons", "need at least one value"));
    }
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::param("epsilons", "must be strictly decreasing"));
    }
    let mut points = Vec::with_capacity(epsilons.len());
    for (idx, &epsilon) in epsilons.iter().enumerate() {
        let query = EtaQuery::new(model, epsilon, n, t, reps, seed.wrapping_add(idx as u64))?;
        let sites = query.start_sites();
        let steps = query.steps();
        let hits = run_replicates(query.master_seed, reps, |_, rng| {
            frontier_run(&model, &sites, steps, k, rng).len() >= k
        });
        let count = hits.iter().filter(|&&h| h).count() as u64;
        let p_hat = SummaryStats::proportion(count, reps)?;
        let markov_envelope = match (model, k) {
            (CountingModel::Scheidegger, 3) => Some(scheidegger_union_envelope(&sites, steps)),
            _ => None,
        };
        let verdict = match markov_envelope {
            Some(env) => envelope_verdict(&p_hat, env),
            None => Verdict::Pass,
        };
        points.push(CurvePoint {
            epsilon,
            k,
            sites: sites.len(),
            ratio: p_hat.mean / epsilon,
            ratio_stderr: p_hat.stderr / epsilon,
            p_hat,
            markov_envelope,
            verdict,
        });
    }
    Ok(points)
}

/// Frequency may exceed the envelope by at most three binomial standard
/// errors.
fn envelope_verdict(p_hat: &SummaryStats, envelope: f64) -> Verdict {
    if p_hat.mean <= envelope + 3.0 * p_hat.stderr {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Whether `p_hat / ε` is non-increasing as ε decreases, up to the combined
/// 95% interval of each consecutive pair. Points must be in curve order.
pub fn ratio_nonincreasing(points: &[CurvePoint]) -> bool {
    points.windows(2).all(|w| {
        let (big, small) = (&w[0], &w[1]);
        let slack = CI95_Z * (big.ratio_stderr.powi(2) + small.ratio_stderr.powi(2)).sqrt();
        small.ratio <= big.ratio + slack
    })
}

/// Whether `p_hat` itself is non-increasing as ε decreases, up to the
/// combined 95% interval.
pub fn probability_nonincreasing(points: &[CurvePoint]) -> bool {
    points.windows(2).all(|w| {
        let (a, b) = (&w[0].p_hat, &w[1].p_hat);
        b.mean <= a.mean + CI95_Z * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub starts: [i64; 3],
    pub n: u64,
    /// Frequency of `x < y < z` surviving to step `n`.
    pub p_hat: SummaryStats,
    /// `E[T] / n` from the collision-time mean (exact for Scheidegger, the
    /// Lyapunov bound for Howard).
    pub markov_envelope: f64,
    pub verdict: Verdict,
}

/// Probability that three paths from `x <= y <= z` are still pairwise
/// distinct after `n` steps, against the Markov envelope.
pub fn no_coalescence_probability(
    model: CountingModel,
    starts: [i64; 3],
    n: u64,
    reps: u64,
    seed: u64,
) -> Result<SurvivalPoint> {
    model.validate()?;
    let [x, y, z] = starts;
    if !(x <= y && y <= z) {
        return Err(Error::param("starts", "need x <= y <= z"));
    }
    if model == CountingModel::Scheidegger {
        for s in starts {
            if s.rem_euclid(2) != 0 {
                return Err(Error::Parity { pos: s, time: 0 });
            }
        }
    }
    if reps < 1 {
        return Err(Error::param("reps", "must be at least 1"));
    }
    if n < 1 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let gaps = GapPair::new(y - x, z - y);
    let mean_bound = match model {
        CountingModel::Scheidegger => gaps.product() as f64,
        CountingModel::Howard { p } => {
            let chain = HowardGapChain::new(p, 2)?;
            let c = chain.constants();
            chain.lyapunov(&gaps) + c.b / c.p0
        }
    };
    let markov_envelope = if gaps.in_s0() {
        0.0
    } else {
        (mean_bound / n as f64).min(1.0)
    };
    let distinct: Vec<i64> = {
        let mut v = vec![x, y, z];
        v.dedup();
        v
    };
    let survived = run_replicates(seed, reps, |_, rng| {
        distinct.len() == 3 && frontier_run(&model, &distinct, n, 3, rng).len() == 3
    });
    let count = survived.iter().filter(|&&s| s).count() as u64;
    let p_hat = SummaryStats::proportion(count, reps)?;
    let verdict = envelope_verdict(&p_hat, markov_envelope);
    Ok(SurvivalPoint {
        starts,
        n,
        p_hat,
        markov_envelope,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::check_noncrossing;

    #[test]
    fn start_sites_by_model() {
        assert_eq!(CountingModel::Scheidegger.start_sites(5.0), vec![0, 2, 4]);
        assert_eq!(CountingModel::Howard { p: 0.5 }.start_sites(2.5), vec![0, 1, 2]);
        assert!(CountingModel::Scheidegger.start_sites(-1.0).is_empty());
    }

    #[test]
    fn few_sites_never_reach_three() {
        let pts = b_curve(CountingModel::Scheidegger, 3, &[0.03], 10_000, 1.0, 200, 1).unwrap();
        assert_eq!(pts[0].sites, 2);
        assert_eq!(pts[0].p_hat.mean, 0.0);
        let pts = b_curve(CountingModel::Howard { p: 0.5 }, 2, &[0.001], 10_000, 1.0, 50, 1).unwrap();
        assert_eq!(pts[0].p_hat.mean, 0.0);
    }

    #[test]
    fn frontier_and_tracking_agree() {
        for model in [CountingModel::Scheidegger, CountingModel::Howard { p: 0.4 }] {
            let q = EtaQuery::new(model, 0.5, 400, 1.0, 1, 8).unwrap();
            for rep in 0..200 {
                assert_eq!(eta_sample(&q, rep).unwrap(), eta_sample_tracked(&q, rep).unwrap());
            }
        }
    }

    #[test]
    fn count_is_nonincreasing_in_horizon() {
        let model = CountingModel::Howard { p: 0.5 };
        for rep in 0..50 {
            let mut prev = usize::MAX;
            for t in [0.1, 0.3, 1.0, 3.0] {
                let q = EtaQuery::new(model, 1.0, 100, t, 1, 2).unwrap();
                let eta = eta_sample(&q, rep).unwrap();
                assert!(eta <= prev);
                prev = eta;
            }
        }
    }

    #[test]
    fn shared_paths_do_not_cross() {
        let mut rng = derive_stream(5, 0);
        for model in [CountingModel::Scheidegger, CountingModel::Howard { p: 0.3 }] {
            let starts = model.start_sites(20.0);
            let paths = lattice_paths(&model, &starts, 300, &mut rng);
            for a in 0..paths.len() {
                for b in a + 1..paths.len() {
                    assert!(check_noncrossing(&paths[a], &paths[b]).unwrap());
                }
            }
        }
    }

    #[test]
    fn union_envelope_values() {
        // Sites 0, 2, 4: one triple with gaps (2, 2).
        assert_eq!(scheidegger_union_envelope(&[0, 2, 4], 100), 0.04);
        // Sites 0, 2, 4, 6: gaps (2, 4) and (2, 2).
        assert_eq!(scheidegger_union_envelope(&[0, 2, 4, 6], 100), 0.12);
        assert_eq!(scheidegger_union_envelope(&[0, 2], 100), 0.0);
    }

    #[test]
    fn no_coalescence_examples() {
        let s = no_coalescence_probability(CountingModel::Scheidegger, [0, 2, 4], 100, 20_000, 4).unwrap();
        assert_eq!(s.markov_envelope, 0.04);
        assert!(s.p_hat.mean <= 0.04 + 3.0 * s.p_hat.stderr, "{s:?}");
        let c = no_coalescence_probability(CountingModel::Scheidegger, [0, 0, 4], 100, 100, 4).unwrap();
        assert_eq!(c.p_hat.mean, 0.0);
        assert!(no_coalescence_probability(CountingModel::Scheidegger, [0, 1, 4], 10, 10, 0).is_err());
    }

    #[test]
    fn curve_validation() {
        let m = CountingModel::Scheidegger;
        assert!(b_curve(m, 4, &[0.2], 100, 1.0, 10, 0).is_err());
        assert!(b_curve(m, 3, &[0.1, 0.2], 100, 1.0, 10, 0).is_err());
        assert!(b_curve(m, 3, &[0.2], 100, 1.0, 0, 0).is_err());
        assert!(EtaQuery::new(CountingModel::Howard { p: 0.0 }, 0.2, 100, 1.0, 1, 0).is_err());
    }
}
