//! Independent Brownian triples: exact fixed-time sampling and a discretized
//! gap process with Brownian-bridge crossing correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::RngStream;

/// Three ordered real path positions at a common time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTriple {
    pub pos: [f64; 3],
    pub time: f64,
}

impl ContinuousTriple {
    pub fn new(u: f64, v: f64, w: f64, time: f64) -> Self {
        ContinuousTriple {
            pos: [u, v, w],
            time,
        }
    }

    pub fn gaps(&self) -> (f64, f64) {
        (self.pos[1] - self.pos[0], self.pos[2] - self.pos[1])
    }

    /// `(v - u)(w - v)`.
    pub fn gap_product(&self) -> f64 {
        let (a, b) = self.gaps();
        a * b
    }
}

/// Exact sample of the triple started at `(-x, 0, y)` at time `t`.
pub fn brownian_triple_at(t: f64, x: f64, y: f64, rng: &mut RngStream) -> Result<ContinuousTriple> {
    if !(t >= 0.0) {
        return Err(Error::param("t", format!("time must be non-negative, got {t}")));
    }
    if t == 0.0 {
        return Ok(ContinuousTriple::new(-x, 0.0, y, 0.0));
    }
    let s = t.sqrt();
    let l = -x + s * rng.standard_normal();
    let m = s * rng.standard_normal();
    let r = y + s * rng.standard_normal();
    Ok(ContinuousTriple::new(l, m, r, t))
}

/// Probability that a Brownian bridge with variance rate 2 started at `a > 0`
/// and ending at `b > 0` after `dt` touches zero.
#[inline]
pub fn bridge_crossing_probability(a: f64, b: f64, dt: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        1.0
    } else {
        (-a * b / dt).exp()
    }
}

/// Exponent beyond which the bridge probability is below 1e-21 and no draw
/// is spent on it.
const BRIDGE_CUTOFF: f64 = 48.0;

/// One Euler step of the gap pair `(D1, D2) = (B_M - B_L, B_R - B_M)`.
///
/// The increment has covariance `[[2dt, -dt], [-dt, 2dt]]`. Each gap is then
/// tested independently for an interior zero of its bridge.
pub fn brownian_gap_step(gaps: (f64, f64), dt: f64, rng: &mut RngStream) -> ((f64, f64), bool) {
    let (next, hit) = brownian_gap_step_detail(gaps, dt, rng);
    (next, hit[0] || hit[1])
}

/// Same as [`brownian_gap_step`] but reports which gap crossed. A bridge test
/// is only run while no earlier crossing has been found.
pub fn brownian_gap_step_detail(
    gaps: (f64, f64),
    dt: f64,
    rng: &mut RngStream,
) -> ((f64, f64), [bool; 2]) {
    let (d1, d2) = gaps;
    let z1 = rng.standard_normal();
    let z2 = rng.standard_normal();
    let a = (2.0 * dt).sqrt() * z1;
    let b = -0.5 * a + (1.5 * dt).sqrt() * z2;
    let n1 = d1 + a;
    let n2 = d2 + b;
    let mut hit = [n1 <= 0.0, n2 <= 0.0];
    if hit[0] || hit[1] {
        return ((n1, n2), hit);
    }
    for (k, (s, e)) in [(d1, n1), (d2, n2)].into_iter().enumerate() {
        let expo = s * e / dt;
        if expo < BRIDGE_CUTOFF && rng.uniform() < (-expo).exp() {
            hit[k] = true;
            break;
        }
    }
    ((n1, n2), hit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{derive_stream, summarize_real};

    #[test]
    fn time_zero_is_start() {
        let mut rng = derive_stream(0, 0);
        let t = brownian_triple_at(0.0, 1.5, 2.0, &mut rng).unwrap();
        assert_eq!(t.pos, [-1.5, 0.0, 2.0]);
        assert!(brownian_triple_at(-1.0, 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn gap_moments() {
        let n = 200_000;
        let mut d1 = Vec::with_capacity(n);
        let mut cross = Vec::with_capacity(n);
        for rep in 0..n as u64 {
            let mut rng = derive_stream(77, rep);
            let t = brownian_triple_at(1.5, 1.0, 2.0, &mut rng).unwrap();
            let (a, b) = t.gaps();
            d1.push(a);
            cross.push((a - 1.0) * (b - 2.0));
        }
        let s = summarize_real(&d1, 0).unwrap();
        assert!(s.within(1.0, 4.0));
        let var = s.stderr * s.stderr * n as f64;
        assert!((var - 3.0).abs() < 0.05, "var {var}");
        let c = summarize_real(&cross, 0).unwrap();
        assert!(c.within(-1.5, 4.0), "cov {}", c.mean);
    }

    #[test]
    fn bridge_probability_values() {
        assert!((bridge_crossing_probability(1.0, 1.0, 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(bridge_crossing_probability(-0.1, 1.0, 1.0), 1.0);
        assert!(bridge_crossing_probability(1.0, 1.0, 1e-3) < 1e-300);
    }

    /// Fine-grained simulation of a variance-2 bridge from 1 to 1 over unit
    /// time; the fraction touching zero must approach e^-1 from below.
    #[test]
    fn bridge_formula_against_fine_simulation() {
        let steps = 2000;
        let h = 1.0 / steps as f64;
        let reps = 20_000;
        let mut hits = 0;
        for rep in 0..reps {
            let mut rng = derive_stream(123, rep);
            // Brownian path W with variance 2 per unit time, pinned to end at 1.
            let mut w = vec![0.0; steps + 1];
            for i in 1..=steps {
                w[i] = w[i - 1] + (2.0 * h).sqrt() * rng.standard_normal();
            }
            let end = w[steps];
            let touched = (0..=steps).any(|i| {
                let s = i as f64 * h;
                1.0 + w[i] - s * end <= 0.0
            });
            hits += touched as u32;
        }
        let p = hits as f64 / reps as f64;
        let target = (-1f64).exp();
        // Discrete monitoring undercounts by O(sqrt(h)).
        assert!(p < target + 0.01 && p > target - 0.05, "p {p}");
    }

    #[test]
    fn gap_step_covariance() {
        let n = 200_000;
        let dt = 0.01;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        let mut xy = Vec::with_capacity(n);
        for rep in 0..n as u64 {
            let mut rng = derive_stream(8, rep);
            let ((a, b), _) = brownian_gap_step((10.0, 10.0), dt, &mut rng);
            xs.push(a - 10.0);
            ys.push(b - 10.0);
            xy.push((a - 10.0) * (b - 10.0));
        }
        let sx = summarize_real(&xs.iter().map(|x| x * x).collect::<Vec<_>>(), 0).unwrap();
        let sy = summarize_real(&ys.iter().map(|x| x * x).collect::<Vec<_>>(), 0).unwrap();
        let sxy = summarize_real(&xy, 0).unwrap();
        assert!(sx.within(2.0 * dt, 4.0));
        assert!(sy.within(2.0 * dt, 4.0));
        assert!(sxy.within(-dt, 4.0));
    }

    #[test]
    fn endpoint_below_zero_crosses() {
        for rep in 0..1000 {
            let mut rng = derive_stream(4, rep);
            let ((a, b), crossed) = brownian_gap_step((0.01, 5.0), 0.1, &mut rng);
            if a <= 0.0 || b <= 0.0 {
                assert!(crossed);
            }
        }
    }
}
