//! Reproducible random streams and deterministic Monte Carlo aggregation.
//!
//! Every replicate draws from its own [`RngStream`], keyed by the pair
//! `(master_seed, stream_id)`. The generator is ChaCha8 with the master seed
//! expanded into the key and the replicate index used as the ChaCha stream
//! selector, so distinct replicates never share keystream blocks.
//!
//! Aggregation never depends on scheduling: replicate outputs are collected
//! in replicate order and reduced sequentially, integers exactly in `i128`,
//! reals with Neumaier summation over fixed-size chunks.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier for the two-sided 95% normal interval.
pub const CI95_Z: f64 = 1.96;

/// Chunk length of the real-valued reduction.
const REDUCE_CHUNK: usize = 1024;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One replicate's random number stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

/// Build the stream for replicate `stream_id` under `master_seed`.
pub fn derive_stream(master_seed: u64, stream_id: u64) -> RngStream {
    let mut sm = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut sm).to_le_bytes());
    }
    let mut inner = ChaCha8Rng::from_seed(key);
    inner.set_stream(stream_id);
    RngStream {
        master_seed,
        stream_id,
        inner,
    }
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// ±1 with probability 1/2 each.
    #[inline]
    pub fn rademacher(&mut self) -> i64 {
        if self.inner.next_u32() & 1 == 1 {
            1
        } else {
            -1
        }
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Exponential waiting time with the given rate.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        let e: f64 = Exp1.sample(&mut self.inner);
        e / rate
    }

    /// Poisson count with the given mean.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let d = rand_distr::Poisson::new(mean).expect("positive finite mean");
        let k: f64 = d.sample(&mut self.inner);
        k as u64
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Run `f(stream)` for every replicate in `0..reps` on the current rayon
/// pool and return the outputs in replicate order.
pub fn run_replicates<T, F>(master_seed: u64, reps: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut RngStream) -> T + Sync + Send,
{
    (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derive_stream(master_seed, rep);
            f(rep, &mut rng)
        })
        .collect()
}

/// Exact running aggregate for integer samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntAccumulator {
    pub n: u64,
    pub sum: i128,
    pub sum_sq: i128,
}

impl IntAccumulator {
    pub fn push(&mut self, x: i64) {
        let x = x as i128;
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &IntAccumulator) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }
}

impl FromIterator<i64> for IntAccumulator {
    fn from_iter<I: IntoIterator<Item = i64>>(iter: I) -> Self {
        let mut acc = IntAccumulator::default();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum of `f(x)` over `xs` reduced in fixed chunk order.
fn chunked_sum(xs: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut total = Compensated::default();
    for chunk in xs.chunks(REDUCE_CHUNK) {
        let mut part = Compensated::default();
        for &x in chunk {
            part.add(f(x));
        }
        total.add(part.value());
    }
    total.value()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sums {
    Exact { sum: i128, sum_sq: i128 },
    Compensated { sum: f64, sum_sq: f64 },
}

/// Deterministic Monte Carlo aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: u64,
    pub mean: f64,
    pub stderr: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub median: f64,
    pub censored: u64,
    pub sums: Sums,
}

impl SummaryStats {
    fn from_moments(n: u64, mean: f64, var: f64, median: f64, censored: u64, sums: Sums) -> Self {
        let stderr = if n > 1 {
            (var.max(0.0) / n as f64).sqrt()
        } else {
            0.0
        };
        SummaryStats {
            n,
            mean,
            stderr,
            ci95_low: mean - CI95_Z * stderr,
            ci95_high: mean + CI95_Z * stderr,
            median,
            censored,
            sums,
        }
    }

    /// Aggregate from an exact accumulator. The median is not recoverable from
    /// sums and is reported as NaN.
    pub fn from_int_accumulator(acc: &IntAccumulator, censored: u64) -> Result<Self> {
        if acc.n == 0 {
            return Err(Error::EmptySample);
        }
        let n = acc.n as i128;
        let mean = acc.sum as f64 / acc.n as f64;
        // n^2 * sample variance * (n - 1) / n, kept exact until the division.
        let var = if acc.n > 1 {
            (n * acc.sum_sq - acc.sum * acc.sum) as f64 / (n * (n - 1)) as f64
        } else {
            0.0
        };
        Ok(Self::from_moments(
            acc.n,
            mean,
            var,
            f64::NAN,
            censored,
            Sums::Exact {
                sum: acc.sum,
                sum_sq: acc.sum_sq,
            },
        ))
    }

    /// Binomial proportion with stderr `sqrt(p(1-p)/n)`.
    pub fn proportion(successes: u64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let p = successes as f64 / n as f64;
        let stderr = (p * (1.0 - p) / n as f64).sqrt();
        Ok(SummaryStats {
            n,
            mean: p,
            stderr,
            ci95_low: p - CI95_Z * stderr,
            ci95_high: p + CI95_Z * stderr,
            median: if 2 * successes > n { 1.0 } else { 0.0 },
            censored: 0,
            sums: Sums::Exact {
                sum: successes as i128,
                sum_sq: successes as i128,
            },
        })
    }

    pub fn is_degenerate(&self) -> bool {
        self.stderr == 0.0
    }

    /// Checks `|mean - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Summarize integer samples exactly.
pub fn summarize_int(samples: &[i64], censored: u64) -> Result<SummaryStats> {
    let acc: IntAccumulator = samples.iter().copied().collect();
    let mut s = SummaryStats::from_int_accumulator(&acc, censored)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    s.median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        0.5 * (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64)
    };
    Ok(s)
}

/// Summarize real samples with a fixed-order compensated reduction.
pub fn summarize_real(samples: &[f64], censored: u64) -> Result<SummaryStats> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = samples.len();
    let sum = chunked_sum(samples, |x| x);
    let mean = sum / n as f64;
    let sum_sq = chunked_sum(samples, |x| x * x);
    let var = if n > 1 {
        chunked_sum(samples, |x| (x - mean) * (x - mean)) / (n - 1) as f64
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(SummaryStats::from_moments(
        n as u64,
        mean,
        var,
        median_of_sorted(&sorted),
        censored,
        Sums::Compensated { sum, sum_sq },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// The claim is `mean <= bound`.
    AtMost,
    /// The claim is `mean >= bound`.
    AtLeast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Fail => "fail",
        }
    }

    /// Worst of two verdicts: fail beats inconclusive beats pass.
    pub fn combine(self, other: Verdict) -> Verdict {
        self.max(other)
    }
}

/// Decide a one-sided claim from the 95% interval.
pub fn one_sided_check(stats: &SummaryStats, bound: f64, direction: Direction) -> Verdict {
    match direction {
        Direction::AtMost => {
            if stats.ci95_high <= bound {
                Verdict::Pass
            } else if stats.ci95_low > bound {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            }
        }
        Direction::AtLeast => {
            if stats.ci95_low >= bound {
                Verdict::Pass
            } else if stats.ci95_high < bound {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            }
        }
    }
}

/// Two-sided agreement with a target at `k` standard errors.
pub fn agreement_check(stats: &SummaryStats, target: f64, k: f64) -> Verdict {
    if stats.within(target, k) {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64, stderr: f64) -> SummaryStats {
        SummaryStats {
            n: 100,
            mean,
            stderr,
            ci95_low: mean - CI95_Z * stderr,
            ci95_high: mean + CI95_Z * stderr,
            median: mean,
            censored: 0,
            sums: Sums::Compensated { sum: 0.0, sum_sq: 0.0 },
        }
    }

    #[test]
    fn same_key_same_sequence() {
        let mut a = derive_stream(42, 0);
        let mut b = derive_stream(42, 0);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = derive_stream(42, 0);
        let mut b = derive_stream(42, 1);
        let xs: Vec<f64> = (0..1000).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..1000).map(|_| b.uniform()).collect();
        assert!(xs.iter().zip(&ys).any(|(x, y)| x != y));
    }

    #[test]
    fn uniform_mean_sanity() {
        let mut a = derive_stream(42, 0);
        let n = 1_000_000;
        let m = (0..n).map(|_| a.uniform()).sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 0.002, "mean {m}");
    }

    #[test]
    fn position_advances() {
        let mut a = derive_stream(1, 2);
        let p0 = a.position();
        a.next_u64();
        assert_eq!(a.position(), p0 + 2);
    }

    #[test]
    fn summarize_constant() {
        let s = summarize_int(&[5, 5, 5], 0).unwrap();
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.stderr, 0.0);
        assert_eq!(s.median, 5.0);
    }

    #[test]
    fn summarize_two_point() {
        let s = summarize_int(&[0, 1], 0).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.stderr - 0.5).abs() < 1e-15);
        let r = summarize_real(&[0.0, 1.0], 0).unwrap();
        assert_eq!(r.mean, 0.5);
        assert!((r.stderr - 0.5).abs() < 1e-15);
    }

    #[test]
    fn summarize_empty_is_error() {
        assert_eq!(summarize_int(&[], 0), Err(Error::EmptySample));
        assert_eq!(summarize_real(&[], 3), Err(Error::EmptySample));
    }

    #[test]
    fn one_sided_examples() {
        assert_eq!(one_sided_check(&stats(3.0, 0.1), 4.0, Direction::AtMost), Verdict::Pass);
        assert_eq!(one_sided_check(&stats(5.0, 0.1), 4.0, Direction::AtMost), Verdict::Fail);
        assert_eq!(
            one_sided_check(&stats(3.9, 0.2), 4.0, Direction::AtMost),
            Verdict::Inconclusive
        );
        assert_eq!(one_sided_check(&stats(5.0, 0.1), 4.0, Direction::AtLeast), Verdict::Pass);
        assert_eq!(one_sided_check(&stats(3.0, 0.1), 4.0, Direction::AtLeast), Verdict::Fail);
    }

    #[test]
    fn ci_uses_fixed_multiplier() {
        let s = summarize_real(&[1.0, 2.0, 3.0, 4.0], 0).unwrap();
        assert!((s.ci95_high - s.mean - 1.96 * s.stderr).abs() < 1e-15);
    }

    #[test]
    fn replicates_come_back_in_order() {
        let out = run_replicates(9, 100, |rep, rng| (rep, rng.stream_id()));
        for (i, (rep, sid)) in out.into_iter().enumerate() {
            assert_eq!(rep, i as u64);
            assert_eq!(sid, i as u64);
        }
    }

    #[test]
    fn real_reduction_independent_of_pool_size() {
        let xs: Vec<f64> = {
            let mut r = derive_stream(3, 0);
            (0..50_000).map(|_| r.standard_normal() * 1e3).collect()
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| {
            let v = run_replicates(5, 2000, |_, rng| rng.standard_normal());
            summarize_real(&v, 0).unwrap()
        });
        let b = four.install(|| {
            let v = run_replicates(5, 2000, |_, rng| rng.standard_normal());
            summarize_real(&v, 0).unwrap()
        });
        assert_eq!(a, b);
        assert_eq!(summarize_real(&xs, 0).unwrap(), summarize_real(&xs, 0).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn int_merge_any_grouping(xs in proptest::collection::vec(-1_000_000i64..1_000_000, 1..200), cut in 0usize..200) {
            let cut = cut.min(xs.len());
            let whole: IntAccumulator = xs.iter().copied().collect();
            let mut left: IntAccumulator = xs[..cut].iter().copied().collect();
            let right: IntAccumulator = xs[cut..].iter().copied().collect();
            let mut rl = right;
            rl.merge(&left);
            left.merge(&right);
            proptest::prop_assert_eq!(whole, left);
            proptest::prop_assert_eq!(whole, rl);
            let a = SummaryStats::from_int_accumulator(&whole, 0).unwrap();
            let b = SummaryStats::from_int_accumulator(&rl, 0).unwrap();
            proptest::prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            proptest::prop_assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
        }

        #[test]
        fn stream_is_pure(seed in proptest::prelude::any::<u64>(), id in proptest::prelude::any::<u64>()) {
            let mut a = derive_stream(seed, id);
            let mut b = derive_stream(seed, id);
            for _ in 0..16 {
                proptest::prop_assert_eq!(a.next_u64(), b.next_u64());
            }
        }
    }
}
