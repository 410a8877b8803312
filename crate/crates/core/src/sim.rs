//! Hybrid simulation: fixed-step RK4 on switch-aligned segments, the
//! variational system along a stored trajectory, projected seminorm traces
//! and log-linear rate fits.

use serde::Serialize;
use thiserror::Error;

use crate::model::{Mode, ModeId, ModelError, SwitchedSystem};
use crate::numerics::norm2;
use crate::signals::SwitchingSignal;
use crate::subspaces::{seminorm_eval, Projector};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state diverged at t = {time:.6} in mode {mode}")]
    Diverged { time: f64, mode: ModeId },
    #[error("step must be positive and finite, got {0}")]
    Step(f64),
    #[error("initial state has length {got}, system dimension is {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("non-finite initial state")]
    NonFiniteInitial,
    #[error("signal uses mode {0}, which the system does not define")]
    UnknownMode(ModeId),
    #[error("trajectories use different time grids")]
    GridMismatch,
    #[error("rate fit needs at least 3 points in the window, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Mode active on `[times[i], times[i+1])`.
    pub modes: Vec<ModeId>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory is nonempty")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationalTrace {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Step sizes covering `[a, b]`: full steps of `h`, the last one shortened.
fn segment_times(a: f64, b: f64, h: f64) -> Vec<f64> {
    let n = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
    let mut t: Vec<f64> = (0..n).map(|k| a + k as f64 * h).collect();
    t.push(b);
    t
}

/// `(start, end, mode)` of every constant-mode segment.
fn segments(sig: &SwitchingSignal) -> Vec<(f64, f64, ModeId)> {
    sig.activations().iter().map(|a| (a.start, a.end, a.mode)).collect()
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

fn rk4_step(f: impl Fn(f64, &[f64]) -> Result<Vec<f64>, ModelError>, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>, ModelError> {
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &axpy(x, 0.5 * h, &k1))?;
    let k3 = f(t + 0.5 * h, &axpy(x, 0.5 * h, &k2))?;
    let k4 = f(t + h, &axpy(x, h, &k3))?;
    Ok((0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn check_initial(n: usize, x0: &[f64], step: f64) -> Result<(), SimError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(SimError::Step(step));
    }
    if x0.len() != n {
        return Err(SimError::Dimension {
            got: x0.len(),
            expected: n,
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteInitial);
    }
    Ok(())
}

fn mode_of(sys: &SwitchedSystem, q: ModeId) -> Result<&Mode, SimError> {
    sys.mode(q).ok_or(SimError::UnknownMode(q))
}

/// Classic RK4 on each constant-mode segment of `sig` over `[t0, horizon]`.
pub fn integrate(sys: &SwitchedSystem, sig: &SwitchingSignal, x0: &[f64], step: f64) -> Result<Trajectory, SimError> {
    check_initial(sys.n, x0, step)?;
    let mut times = vec![sig.t0()];
    let mut states = vec![x0.to_vec()];
    let mut modes = Vec::new();
    for (a, b, q) in segments(sig) {
        let mode = mode_of(sys, q)?;
        let grid = segment_times(a, b, step);
        for w in grid.windows(2) {
            let x = states.last().expect("nonempty");
            let diverged = SimError::Diverged { time: w[1], mode: q };
            let next = match rk4_step(|_, x| mode.eval_field(x), w[0], x, w[1] - w[0]) {
                Ok(v) => v,
                Err(ModelError::Eval { .. }) => return Err(diverged),
                Err(e) => return Err(e.into()),
            };
            if next.iter().any(|v| !v.is_finite()) {
                return Err(diverged);
            }
            times.push(w[1]);
            states.push(next);
            modes.push(q);
        }
    }
    Ok(Trajectory { times, states, modes })
}

/// `ẏ = A_σ(x(t)) y` along a stored trajectory, with `x` interpolated
/// linearly inside each step for the RK4 stages.
pub fn integrate_variational(sys: &SwitchedSystem, x: &Trajectory, y0: &[f64]) -> Result<VariationalTrace, SimError> {
    if x.times.len() < 2 {
        return Ok(VariationalTrace {
            times: x.times.clone(),
            states: vec![y0.to_vec()],
        });
    }
    check_initial(sys.n, y0, x.times[1] - x.times[0])?;
    let mut states = vec![y0.to_vec()];
    for i in 0..x.modes.len() {
        let q = x.modes[i];
        let mode = mode_of(sys, q)?;
        let (ta, tb) = (x.times[i], x.times[i + 1]);
        let (xa, xb) = (&x.states[i], &x.states[i + 1]);
        let h = tb - ta;
        let field = |t: f64, y: &[f64]| -> Result<Vec<f64>, ModelError> {
            let s = (t - ta) / h;
            let xi: Vec<f64> = xa.iter().zip(xb).map(|(u, v)| u + s * (v - u)).collect();
            Ok(mode.eval_jacobian(&xi)?.mat_vec(y))
        };
        let diverged = SimError::Diverged { time: tb, mode: q };
        let next = match rk4_step(field, ta, states.last().expect("nonempty"), h) {
            Ok(v) => v,
            Err(ModelError::Eval { .. }) => return Err(diverged),
            Err(e) => return Err(e.into()),
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(diverged);
        }
        states.push(next);
    }
    Ok(VariationalTrace {
        times: x.times.clone(),
        states,
    })
}

/// `‖Π y(t)‖₂` at every sample.
pub fn projected_trace(v: &VariationalTrace, pi: &Projector) -> Vec<f64> {
    v.states.iter().map(|y| seminorm_eval(pi, y)).collect()
}

/// Same as [`projected_trace`] for the difference of two trajectories.
pub fn projected_difference(a: &Trajectory, b: &Trajectory, pi: &Projector) -> Result<Vec<f64>, SimError> {
    same_grid(a, b)?;
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(u, v)| {
            let d: Vec<f64> = u.iter().zip(v).map(|(p, q)| p - q).collect();
            seminorm_eval(pi, &d)
        })
        .collect())
}

fn same_grid(a: &Trajectory, b: &Trajectory) -> Result<(), SimError> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(s, t)| s != t) {
        return Err(SimError::GridMismatch);
    }
    Ok(())
}

/// `‖x_a(t) − x_b(t)‖₂` on a shared grid.
pub fn pair_distance(a: &Trajectory, b: &Trajectory) -> Result<Vec<f64>, SimError> {
    same_grid(a, b)?;
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(u, v)| norm2(&u.iter().zip(v).map(|(p, q)| p - q).collect::<Vec<_>>()))
        .collect())
}

/// Largest state deviation between a run and one at a finer step, over the
/// coarse sample times that the fine grid also contains.
pub fn max_deviation(coarse: &Trajectory, fine: &Trajectory) -> Result<f64, SimError> {
    let mut worst: f64 = 0.0;
    let mut matched = 0;
    let mut j = 0;
    for (t, x) in coarse.times.iter().zip(&coarse.states) {
        let tol = 1e-9 * t.abs().max(1.0);
        while j < fine.times.len() && fine.times[j] < t - tol {
            j += 1;
        }
        if j < fine.times.len() && (fine.times[j] - t).abs() <= tol {
            matched += 1;
            let d: Vec<f64> = x.iter().zip(&fine.states[j]).map(|(p, q)| p - q).collect();
            worst = worst.max(norm2(&d));
        }
    }
    if matched == 0 {
        return Err(SimError::GridMismatch);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// `−slope` of `ln value` against time.
    pub rate: f64,
    pub prefactor: f64,
    pub rmse: f64,
    pub window: (f64, f64),
    pub points: usize,
    /// Values at or below zero, replaced by `1e-300`.
    pub floored: usize,
}

/// Least-squares line through `(t, ln v)` on `[ta, tb]`.
pub fn fit_rate(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<RateFit, SimError> {
    let mut floored = 0;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| {
            if *v <= 1e-300 {
                floored += 1;
            }
            (*t, v.max(1e-300).ln())
        })
        .collect();
    if pts.len() < 3 {
        return Err(SimError::TooFewPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ml - slope * mt;
    let rmse = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(RateFit {
        rate: -slope,
        prefactor: intercept.exp(),
        rmse,
        window,
        points: pts.len(),
        floored,
    })
}

/// Values of `series` at the activation boundaries of `sig` (event times
/// and the horizon).
pub fn boundary_values(times: &[f64], series: &[f64], sig: &SwitchingSignal) -> Vec<f64> {
    let mut marks: Vec<f64> = sig.events().iter().map(|e| e.time).collect();
    marks.push(sig.horizon());
    marks
        .iter()
        .filter_map(|m| {
            let k = times.partition_point(|t| *t < m - 1e-9 * m.abs().max(1.0));
            (k < times.len() && (times[k] - m).abs() <= 1e-9 * m.abs().max(1.0)).then(|| series[k])
        })
        .collect()
}

/// Sliding max over `group` consecutive boundary values.
pub fn envelope(boundary: &[f64], group: usize) -> Vec<f64> {
    let g = group.max(1);
    if boundary.len() < g {
        return boundary.iter().copied().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))).into_iter().collect();
    }
    boundary.windows(g).map(|w| w.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Two trajectories under the same signal and their distance.
#[derive(Debug, Clone, Serialize)]
pub struct PairRun {
    pub a: Trajectory,
    pub b: Trajectory,
    pub distance: Vec<f64>,
}

pub fn run_pair(sys: &SwitchedSystem, sig: &SwitchingSignal, xa: &[f64], xb: &[f64], step: f64) -> Result<PairRun, SimError> {
    let (a, b) = rayon::join(|| integrate(sys, sig, xa, step), || integrate(sys, sig, xb, step));
    let (a, b) = (a?, b?);
    let distance = pair_distance(&a, &b)?;
    Ok(PairRun { a, b, distance })
}
