//! Poisson tree on a unit-intensity planar Poisson process.
//!
//! Each point's ancestor is the first point above it inside the open vertical
//! tube `|x' - x| < 1/2`. Tracking three càdlàg branches gives a pure jump
//! process: at rate `|A|` (the length of the union of the three tubes) a
//! uniform point `U` of `A` appears and every branch whose tube contains `U`
//! jumps onto it.

use serde::{Deserialize, Serialize};

use super::brownian::ContinuousTriple;
use crate::error::{Error, Result};
use crate::harness::RngStream;

/// Half width of the tube `J = [-1/2, 1/2]`.
pub const HALF_WIDTH: f64 = 0.5;

#[inline]
fn in_tube(s: f64, x: f64) -> bool {
    (x - s).abs() < HALF_WIDTH
}

/// Whether two adjacent branches have met.
pub fn poisson_in_m0(state: &ContinuousTriple) -> bool {
    let [u, v, w] = state.pos;
    u == v || v == w
}

/// Check membership of the state space: ordered, and each gap is either 0
/// or at least 1/2.
pub fn validate_poisson_state(state: &ContinuousTriple) -> Result<()> {
    let [u, v, w] = state.pos;
    if !(u <= v && v <= w) {
        return Err(Error::InvalidState(format!("unordered triple ({u}, {v}, {w})")));
    }
    for g in [v - u, w - v] {
        if g > 0.0 && g < HALF_WIDTH {
            return Err(Error::InvalidState(format!(
                "gap {g} lies strictly between 0 and 1/2"
            )));
        }
    }
    Ok(())
}

/// Union of the three unit tubes around the branch positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeUnion {
    pub half_width: f64,
    /// Sorted, disjoint closed intervals.
    pub intervals: Vec<(f64, f64)>,
    pub length: f64,
}

impl TubeUnion {
    /// Map `r` in `[0, length)` to a point of the union.
    fn locate(&self, mut r: f64) -> f64 {
        for &(lo, hi) in &self.intervals {
            let len = hi - lo;
            if r < len {
                return lo + r;
            }
            r -= len;
        }
        // Rounding at the far end.
        self.intervals.last().map(|&(_, hi)| hi).unwrap_or(0.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }
}

pub fn poisson_tube_union(state: &ContinuousTriple) -> Result<TubeUnion> {
    validate_poisson_state(state)?;
    let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(3);
    for &s in &state.pos {
        let (lo, hi) = (s - HALF_WIDTH, s + HALF_WIDTH);
        match intervals.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => intervals.push((lo, hi)),
        }
    }
    let length = intervals.iter().map(|(lo, hi)| hi - lo).sum();
    Ok(TubeUnion {
        half_width: HALF_WIDTH,
        intervals,
        length,
    })
}

/// One jump of the three-branch process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub u_sample: f64,
    pub dt: f64,
    /// Which of `(L, M, R)` jumped onto `u_sample`.
    pub moved: [bool; 3],
}

impl JumpEvent {
    /// Increment of coordinate `i` given its position before the jump.
    pub fn increment(&self, i: usize, before: f64) -> f64 {
        if self.moved[i] {
            self.u_sample - before
        } else {
            0.0
        }
    }
}

/// Jump from any valid state, coalesced or not.
pub(crate) fn tube_jump(
    state: &ContinuousTriple,
    tubes: &TubeUnion,
    rng: &mut RngStream,
) -> (ContinuousTriple, JumpEvent) {
    let dt = rng.exponential(tubes.length);
    let u = tubes.locate(rng.uniform() * tubes.length);
    let mut next = *state;
    let mut moved = [false; 3];
    for i in 0..3 {
        if in_tube(state.pos[i], u) {
            next.pos[i] = u;
            moved[i] = true;
        }
    }
    next.time += dt;
    (
        next,
        JumpEvent {
            u_sample: u,
            dt,
            moved,
        },
    )
}

/// Advance the uncoalesced triple by one jump.
pub fn poisson_triple_jump(
    state: &ContinuousTriple,
    rng: &mut RngStream,
) -> Result<(ContinuousTriple, JumpEvent)> {
    let tubes = poisson_tube_union(state)?;
    if poisson_in_m0(state) {
        return Err(Error::Absorbed);
    }
    Ok(tube_jump(state, &tubes, rng))
}

/// Axis-aligned space-time rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl Window {
    pub fn new(x_min: f64, x_max: f64, t_min: f64, t_max: f64) -> Result<Self> {
        if !(x_max > x_min && t_max > t_min) {
            return Err(Error::param("window", "must have positive width and height"));
        }
        Ok(Window {
            x_min,
            x_max,
            t_min,
            t_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.t_max - self.t_min)
    }
}

/// Ancestor lookup outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ancestor {
    Point(usize),
    /// The tube leaves the window before meeting a point.
    Censored,
}

/// Poisson points in a window with their first-in-time ancestors.
#[derive(Clone, Debug)]
pub struct PoissonForest {
    pub window: Window,
    /// Points `(x, t)` sorted by time.
    pub points: Vec<(f64, f64)>,
    pub ancestors: Vec<Ancestor>,
    /// Point indices bucketed by unit-width column, each sorted by time.
    columns: Vec<Vec<usize>>,
}

impl PoissonForest {
    fn column_of(&self, x: f64) -> isize {
        (x - self.window.x_min).floor() as isize
    }

    /// First point strictly above `t` inside the tube around `x`.
    pub fn ancestor_of(&self, x: f64, t: f64) -> Ancestor {
        let w = &self.window;
        if x - HALF_WIDTH < w.x_min || x + HALF_WIDTH > w.x_max {
            return Ancestor::Censored;
        }
        let lo = self.column_of(x - HALF_WIDTH).max(0);
        let hi = self
            .column_of(x + HALF_WIDTH)
            .min(self.columns.len() as isize - 1);
        let mut best: Option<usize> = None;
        for c in lo..=hi {
            let col = &self.columns[c as usize];
            let start = col.partition_point(|&i| self.points[i].1 <= t);
            for &i in &col[start..] {
                if let Some(b) = best {
                    if self.points[i].1 >= self.points[b].1 {
                        break;
                    }
                }
                if in_tube(x, self.points[i].0) {
                    best = Some(i);
                    break;
                }
            }
        }
        best.map_or(Ancestor::Censored, Ancestor::Point)
    }

    /// `(child, parent)` index pairs of the uncensored points.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.ancestors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| match a {
                Ancestor::Point(j) => Some((i, *j)),
                Ancestor::Censored => None,
            })
            .collect()
    }

    pub fn censored_count(&self) -> usize {
        self.ancestors
            .iter()
            .filter(|a| matches!(a, Ancestor::Censored))
            .count()
    }
}

/// Sample unit-intensity Poisson points in `window` and link each to its
/// ancestor.
pub fn build_poisson_forest(window: Window, rng: &mut RngStream) -> PoissonForest {
    let n = rng.poisson(window.area()) as usize;
    let mut points: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let x = rng.uniform_in(window.x_min, window.x_max);
            let t = rng.uniform_in(window.t_min, window.t_max);
            (x, t)
        })
        .collect();
    points.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    forest_from_points(window, points)
}

/// Build the forest over explicit points (must lie in the window).
pub fn forest_from_points(window: Window, mut points: Vec<(f64, f64)>) -> PoissonForest {
    points.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let ncols = (window.x_max - window.x_min).ceil().max(1.0) as usize;
    let mut columns = vec![Vec::new(); ncols];
    for (i, &(x, _)) in points.iter().enumerate() {
        let c = ((x - window.x_min).floor() as usize).min(ncols - 1);
        columns[c].push(i);
    }
    let mut forest = PoissonForest {
        window,
        points,
        ancestors: Vec::new(),
        columns,
    };
    forest.ancestors = forest
        .points
        .iter()
        .map(|&(x, t)| forest.ancestor_of(x, t))
        .collect();
    forest
}

/// First jump of three branches started at time `t0` read off a forest.
/// Returns `None` when any branch is censored.
pub fn forest_triple_jump(
    forest: &PoissonForest,
    state: &ContinuousTriple,
) -> Option<(ContinuousTriple, JumpEvent)> {
    let mut anc = [0usize; 3];
    for i in 0..3 {
        match forest.ancestor_of(state.pos[i], state.time) {
            Ancestor::Point(j) => anc[i] = j,
            Ancestor::Censored => return None,
        }
    }
    let first = anc
        .iter()
        .copied()
        .min_by(|&a, &b| forest.points[a].1.total_cmp(&forest.points[b].1))?;
    let (x, t) = forest.points[first];
    let mut next = *state;
    let mut moved = [false; 3];
    for i in 0..3 {
        if anc[i] == first {
            next.pos[i] = x;
            moved[i] = true;
        }
    }
    let dt = t - state.time;
    next.time = t;
    Some((
        next,
        JumpEvent {
            u_sample: x,
            dt,
            moved,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::derive_stream;

    fn triple(u: f64, v: f64, w: f64) -> ContinuousTriple {
        ContinuousTriple::new(u, v, w, 0.0)
    }

    /// Riemann-sum indicator integration of the union.
    fn indicator_length(state: &ContinuousTriple) -> f64 {
        let lo = state.pos[0] - 1.0;
        let hi = state.pos[2] + 1.0;
        let n = 2_000_000;
        let h = (hi - lo) / n as f64;
        (0..n)
            .filter(|&i| {
                let x = lo + (i as f64 + 0.5) * h;
                state.pos.iter().any(|&s| (x - s).abs() <= HALF_WIDTH)
            })
            .count() as f64
            * h
    }

    #[test]
    fn union_examples() {
        assert_eq!(poisson_tube_union(&triple(0.0, 1.5, 3.0)).unwrap().length, 3.0);
        let u = poisson_tube_union(&triple(0.0, 0.5, 2.0)).unwrap();
        assert_eq!(u.length, 2.5);
        assert_eq!(u.intervals, vec![(-0.5, 1.0), (1.5, 2.5)]);
        assert_eq!(poisson_tube_union(&triple(0.0, 0.0, 2.0)).unwrap().length, 2.0);
        assert!(poisson_tube_union(&triple(0.0, 0.3, 2.0)).is_err());
        assert!(poisson_tube_union(&triple(1.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn union_matches_indicator_integration() {
        for s in [
            triple(0.0, 0.75, 2.5),
            triple(0.0, 0.5, 1.0),
            triple(0.0, 1.2, 1.9),
            triple(-1.0, -1.0, 0.6),
        ] {
            let merged = poisson_tube_union(&s).unwrap().length;
            let numeric = indicator_length(&s);
            // Midpoint rule error is bounded by the grid step.
            assert!((merged - numeric).abs() < 1e-5, "{merged} vs {numeric}");
        }
    }

    #[test]
    fn jump_moves_tube_members() {
        let s = triple(0.0, 1.5, 3.0);
        for rep in 0..2000 {
            let mut rng = derive_stream(6, rep);
            let (next, ev) = poisson_triple_jump(&s, &mut rng).unwrap();
            assert!(ev.dt > 0.0);
            assert_eq!(ev.moved.iter().filter(|&&m| m).count(), 1);
            for i in 0..3 {
                if ev.moved[i] {
                    assert!((ev.u_sample - s.pos[i]).abs() < 0.5);
                    assert_eq!(next.pos[i], ev.u_sample);
                } else {
                    assert_eq!(next.pos[i], s.pos[i]);
                }
            }
        }
    }

    #[test]
    fn overlap_jump_coalesces() {
        let s = triple(0.0, 0.75, 2.5);
        let mut seen = false;
        for rep in 0..2000 {
            let mut rng = derive_stream(7, rep);
            let (next, ev) = poisson_triple_jump(&s, &mut rng).unwrap();
            if ev.moved[0] && ev.moved[1] {
                seen = true;
                assert_eq!(next.pos[0], next.pos[1]);
                assert!(ev.u_sample > 0.25 && ev.u_sample < 0.5);
                assert!(poisson_in_m0(&next));
            }
        }
        assert!(seen);
    }

    #[test]
    fn absorbed_state_rejected() {
        let mut rng = derive_stream(0, 0);
        assert_eq!(
            poisson_triple_jump(&triple(0.0, 0.0, 1.0), &mut rng).unwrap_err(),
            Error::Absorbed
        );
    }

    #[test]
    fn forest_single_point_in_tube_is_ancestor() {
        let w = Window::new(0.0, 10.0, 0.0, 10.0).unwrap();
        let f = forest_from_points(w, vec![(5.0, 1.0), (5.2, 3.0), (8.0, 2.0)]);
        // Sorted by time: (5,1), (8,2), (5.2,3).
        assert_eq!(f.points[0], (5.0, 1.0));
        assert_eq!(f.ancestors[0], Ancestor::Point(2));
        assert_eq!(f.ancestors[1], Ancestor::Censored);
        assert_eq!(f.ancestors[2], Ancestor::Censored);
        assert_eq!(f.edges(), vec![(0, 2)]);
        assert_eq!(f.censored_count(), 2);
        // Tube poking out of the window is censored.
        assert_eq!(f.ancestor_of(0.2, 0.0), Ancestor::Censored);
    }

    #[test]
    fn forest_matches_brute_force() {
        let w = Window::new(-3.0, 7.0, 0.0, 20.0).unwrap();
        for rep in 0..20 {
            let mut rng = derive_stream(31, rep);
            let f = build_poisson_forest(w, &mut rng);
            for (i, &(x, t)) in f.points.iter().enumerate() {
                let inside = x - 0.5 >= w.x_min && x + 0.5 <= w.x_max;
                let brute = f
                    .points
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.1 > t && (p.0 - x).abs() < 0.5)
                    .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                    .map(|(j, _)| j);
                let expect = match (inside, brute) {
                    (true, Some(j)) => Ancestor::Point(j),
                    _ => Ancestor::Censored,
                };
                assert_eq!(f.ancestors[i], expect);
            }
        }
    }

    #[test]
    fn forest_point_count_is_poisson() {
        let w = Window::new(0.0, 10.0, 0.0, 10.0).unwrap();
        let counts: Vec<f64> = (0..400)
            .map(|rep| {
                let mut rng = derive_stream(2, rep);
                build_poisson_forest(w, &mut rng).points.len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        assert!((mean - 100.0).abs() < 4.0 * (100.0f64 / 400.0).sqrt());
    }

    proptest::proptest! {
        #[test]
        fn post_jump_state_stays_valid(g1 in 0.5f64..3.0, g2 in 0.5f64..3.0, seed in 0u64..1000) {
            let s = triple(0.0, g1, g1 + g2);
            let mut rng = derive_stream(seed, 0);
            let (next, _) = poisson_triple_jump(&s, &mut rng).unwrap();
            proptest::prop_assert!(validate_poisson_state(&next).is_ok());
        }
    }
}
