//! Switching signals, activation statistics and dwell/leave time checks.
//!
//! `N_q(t_a, t_b)` counts activations of `q` that start in `[t_a, t_b)`;
//! `T_q(t_a, t_b)` is the time `q` is active inside the window.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::certificates::DwellBounds;
use crate::model::ModeId;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("signal has no events")]
    Empty,
    #[error("event times must be strictly increasing (event {index})")]
    NotIncreasing { index: usize },
    #[error("event {index} re-enters the active mode {mode}")]
    RepeatedMode { index: usize, mode: ModeId },
    #[error("horizon {horizon} must exceed the last event time {last}")]
    Horizon { horizon: f64, last: f64 },
    #[error("invalid window [{ta}, {tb})")]
    Window { ta: f64, tb: f64 },
    #[error("mode ids are positive integers, got {0}")]
    UnknownMode(ModeId),
    #[error("dwell must be positive and finite, got {0}")]
    NonPositiveDwell(f64),
    #[error("empty mode list")]
    NoModes,
    #[error("mode {mode}: admissible activation interval [{lo}, {hi}] is empty")]
    Infeasible { mode: ModeId, lo: f64, hi: f64 },
    #[error("no dwell bounds for mode {0}")]
    MissingBounds(ModeId),
    #[error("signal CSV line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub mode: ModeId,
}

/// One maximal interval `[start, end)` on which `mode` is active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Activation {
    pub mode: ModeId,
    pub start: f64,
    pub end: f64,
    /// Cut off by the horizon rather than ended by a switch.
    pub truncated: bool,
}

impl Activation {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Right-continuous piecewise-constant schedule on `[t0, horizon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSignal {
    events: Vec<Event>,
    horizon: f64,
}

impl SwitchingSignal {
    pub fn new(events: Vec<Event>, horizon: f64) -> Result<Self, SignalError> {
        let first = events.first().ok_or(SignalError::Empty)?;
        if first.mode == 0 {
            return Err(SignalError::UnknownMode(0));
        }
        for (i, w) in events.windows(2).enumerate() {
            if !(w[1].time > w[0].time) || !w[1].time.is_finite() {
                return Err(SignalError::NotIncreasing { index: i + 1 });
            }
            if w[1].mode == w[0].mode {
                return Err(SignalError::RepeatedMode {
                    index: i + 1,
                    mode: w[1].mode,
                });
            }
            if w[1].mode == 0 {
                return Err(SignalError::UnknownMode(0));
            }
        }
        let last = events.last().map_or(f64::NAN, |e| e.time);
        if !(horizon > last) {
            return Err(SignalError::Horizon { horizon, last });
        }
        Ok(Self { events, horizon })
    }

    pub fn t0(&self) -> f64 {
        self.events[0].time
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Switch instants `t_1, t_2, …` (excluding the initial event).
    pub fn switch_times(&self) -> Vec<f64> {
        self.events[1..].iter().map(|e| e.time).collect()
    }

    pub fn mode_at(&self, t: f64) -> ModeId {
        let k = self.events.partition_point(|e| e.time <= t);
        self.events[k.saturating_sub(1)].mode
    }

    pub fn modes(&self) -> Vec<ModeId> {
        let mut m: Vec<ModeId> = self.events.iter().map(|e| e.mode).collect();
        m.sort_unstable();
        m.dedup();
        m
    }

    pub fn activations(&self) -> Vec<Activation> {
        let n = self.events.len();
        (0..n)
            .map(|k| Activation {
                mode: self.events[k].mode,
                start: self.events[k].time,
                end: if k + 1 < n { self.events[k + 1].time } else { self.horizon },
                truncated: k + 1 == n,
            })
            .collect()
    }

    /// Smallest and largest activation length per mode. The truncated final
    /// activation only contributes to the maximum.
    pub fn activation_extremes(&self) -> BTreeMap<ModeId, (f64, f64)> {
        let mut out: BTreeMap<ModeId, (f64, f64)> = BTreeMap::new();
        for a in self.activations() {
            let e = out.entry(a.mode).or_insert((f64::INFINITY, f64::NEG_INFINITY));
            if !a.truncated {
                e.0 = e.0.min(a.length());
            }
            e.1 = e.1.max(a.length());
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mode\n");
        for e in &self.events {
            let _ = writeln!(s, "{:.16e},{}", e.time, e.mode);
        }
        let _ = writeln!(s, "# horizon {:.16e}", self.horizon);
        s
    }

    /// Parses `time,mode` rows; the horizon comes from a `# horizon` line or
    /// from `horizon` when given (which takes precedence).
    pub fn from_csv(text: &str, horizon: Option<f64>) -> Result<Self, SignalError> {
        let mut events = Vec::new();
        let mut file_horizon = None;
        let mut header_seen = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let csv_err = |msg: String| SignalError::Csv { line: i + 1, msg };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(h) = rest.trim().strip_prefix("horizon") {
                    file_horizon = Some(h.trim().parse::<f64>().map_err(|e| csv_err(e.to_string()))?);
                }
                continue;
            }
            if !header_seen {
                if line.replace(' ', "") != "time,mode" {
                    return Err(csv_err(format!("expected header 'time,mode', got '{line}'")));
                }
                header_seen = true;
                continue;
            }
            let (t, m) = line.split_once(',').ok_or_else(|| csv_err("expected two fields".into()))?;
            events.push(Event {
                time: t.trim().parse().map_err(|e: std::num::ParseFloatError| csv_err(e.to_string()))?,
                mode: m.trim().parse().map_err(|e: std::num::ParseIntError| csv_err(e.to_string()))?,
            });
        }
        let horizon = horizon.or(file_horizon).ok_or(SignalError::Csv {
            line: 0,
            msg: "no horizon given".into(),
        })?;
        Self::new(events, horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DwellStats {
    pub mode: ModeId,
    pub ta: f64,
    pub tb: f64,
    pub count: usize,
    pub time: f64,
}

// Window endpoints absorb event times within rounding distance, so a window
// ending at a computed `6·0.35` does not catch an activation starting there.
fn snap(t: f64) -> f64 {
    t - 1e-12 * t.abs().max(1.0)
}

pub fn dwell_stats(sig: &SwitchingSignal, q: ModeId, ta: f64, tb: f64) -> Result<DwellStats, SignalError> {
    if q == 0 {
        return Err(SignalError::UnknownMode(q));
    }
    if !(ta < tb && ta >= sig.t0() && tb <= sig.horizon) {
        return Err(SignalError::Window { ta, tb });
    }
    let (lo, hi) = (snap(ta), snap(tb));
    let mut count = 0;
    let mut time = 0.0;
    for a in sig.activations().iter().filter(|a| a.mode == q) {
        if a.start >= lo && a.start < hi {
            count += 1;
        }
        let overlap = a.end.min(tb) - a.start.max(ta);
        if overlap > 0.0 {
            time += overlap;
        }
    }
    Ok(DwellStats {
        mode: q,
        ta,
        tb,
        count,
        time,
    })
}

/// Window attaining the extreme of `N_q − T_q/τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub ta: f64,
    pub tb: f64,
    /// `tb` is a right limit `tb⁺`: the activation starting at `tb` counts
    /// but contributes no time.
    pub tb_right_limit: bool,
    pub count: usize,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowVerdict {
    pub pass: bool,
    pub tau: f64,
    pub n: f64,
    /// Tightest `N` for the given `τ`: the sup (MDADT) or inf (MDALT) of
    /// `N_q − T_q/τ` over the enumerated windows.
    pub tightest_n: f64,
    pub worst: Option<Window>,
}

const COUNT_TOL: f64 = 1e-9;

/// Sup of `N_q − T_q/τ` over all windows: starts at activation starts of
/// `q`, ends just after a later (or the same) activation start.
pub fn mdadt_sup(sig: &SwitchingSignal, q: ModeId, tau: f64) -> (f64, Option<Window>) {
    let acts: Vec<Activation> = sig.activations().into_iter().filter(|a| a.mode == q).collect();
    if acts.is_empty() {
        return (0.0, None);
    }
    // f(i, j) = (j − i + 1) − (C_j − C_i)/τ with C_j the q-time before start j
    let mut best = f64::NEG_INFINITY;
    let mut arg = (0, 0);
    let mut c = 0.0;
    let mut min_prefix = f64::INFINITY;
    let mut min_at = 0;
    let mut prefix = Vec::with_capacity(acts.len());
    for (j, a) in acts.iter().enumerate() {
        let g = j as f64 - c / tau;
        if g < min_prefix {
            min_prefix = g;
            min_at = j;
        }
        let f = (j as f64 + 1.0 - c / tau) - min_prefix;
        if f > best {
            best = f;
            arg = (min_at, j);
        }
        prefix.push(c);
        c += a.length();
    }
    let (i, j) = arg;
    (
        best,
        Some(Window {
            ta: acts[i].start,
            tb: acts[j].start,
            tb_right_limit: true,
            count: j - i + 1,
            time: prefix[j] - prefix[i],
        }),
    )
}

/// Inf of `N_q − T_q/τ` over windows whose start is an event time and whose
/// end is a later event time or the horizon.
pub fn mdalt_inf(sig: &SwitchingSignal, q: ModeId, tau: f64) -> (f64, Option<Window>) {
    let acts = sig.activations();
    let mut best = f64::INFINITY;
    let mut worst = None;
    for i in 0..acts.len() {
        let mut count = 0;
        let mut time = 0.0;
        for a in &acts[i..] {
            if a.mode == q {
                count += 1;
                time += a.length();
            }
            let g = count as f64 - time / tau;
            if g < best {
                best = g;
                worst = Some(Window {
                    ta: acts[i].start,
                    tb: a.end,
                    tb_right_limit: false,
                    count,
                    time,
                });
            }
        }
    }
    (best, worst)
}

/// `N_q ≤ N̲ + T_q/τ̲` on every window.
pub fn verify_mdadt(sig: &SwitchingSignal, q: ModeId, tau: f64, n: f64) -> WindowVerdict {
    let (sup, worst) = mdadt_sup(sig, q, tau);
    WindowVerdict {
        pass: sup <= n + COUNT_TOL,
        tau,
        n,
        tightest_n: sup,
        worst,
    }
}

/// `N_q ≥ N̄ + T_q/τ̄` on every window starting at an event time.
pub fn verify_mdalt(sig: &SwitchingSignal, q: ModeId, tau: f64, n: f64) -> WindowVerdict {
    let (inf, worst) = mdalt_inf(sig, q, tau);
    WindowVerdict {
        pass: inf >= n - COUNT_TOL,
        tau,
        n,
        tightest_n: inf,
        worst,
    }
}

// Shrinks [lo, hi] around the point where `pred` changes value.
fn bisect(mut lo: f64, mut hi: f64, pred: impl Fn(f64) -> bool) -> (f64, f64) {
    let at_lo = pred(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pred(mid) == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    (lo, hi)
}

/// Largest `τ̲` for which the signal satisfies MDADT with the given `N̲`;
/// `None` when no dwell time works (`N̲ < 1` with `q` active).
pub fn tightest_mdadt_tau(sig: &SwitchingSignal, q: ModeId, n: f64) -> Option<f64> {
    let ok = |tau: f64| mdadt_sup(sig, q, tau).0 <= n + COUNT_TOL;
    if !ok(1e-300) {
        return None;
    }
    if ok(f64::INFINITY) {
        return Some(f64::INFINITY);
    }
    let mut hi = sig.horizon - sig.t0();
    while ok(hi) {
        hi *= 2.0;
    }
    Some(bisect(0.0, hi, ok).0)
}

/// Smallest `τ̄` for which the signal satisfies MDALT with the given `N̄`.
pub fn tightest_mdalt_tau(sig: &SwitchingSignal, q: ModeId, n: f64) -> Option<f64> {
    let ok = |tau: f64| mdalt_inf(sig, q, tau).0 >= n - COUNT_TOL;
    if ok(1e-300) {
        return Some(0.0);
    }
    if !ok(f64::INFINITY) {
        return None;
    }
    let mut hi = sig.horizon - sig.t0();
    while !ok(hi) {
        hi *= 2.0;
    }
    Some(bisect(1e-300, hi, ok).1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Offense {
    pub mode: ModeId,
    /// Index into the full activation sequence.
    pub activation: usize,
    pub start: f64,
    pub length: f64,
    pub violated: Bound,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bound {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerActivationVerdict {
    pub pass: bool,
    pub first_offense: Option<Offense>,
}

/// Every activation of an S-tagged mode lasts at least `τ̲`, every
/// activation of a U-tagged mode at most `τ̄`. The truncated final activation
/// is only held to `τ̄`.
pub fn verify_per_activation(sig: &SwitchingSignal, bounds: &DwellBounds) -> Result<PerActivationVerdict, SignalError> {
    for (k, a) in sig.activations().iter().enumerate() {
        let b = bounds.get(a.mode).ok_or(SignalError::MissingBounds(a.mode))?;
        let (lo_ok, hi_ok) = b.admits(a.length(), bounds.inclusive);
        let offense = if !lo_ok && !a.truncated {
            Some((Bound::Lower, b.lower.unwrap_or(0.0)))
        } else if !hi_ok {
            Some((Bound::Upper, b.upper.unwrap_or(f64::INFINITY)))
        } else {
            None
        };
        if let Some((violated, bound)) = offense {
            return Ok(PerActivationVerdict {
                pass: false,
                first_offense: Some(Offense {
                    mode: a.mode,
                    activation: k,
                    start: a.start,
                    length: a.length(),
                    violated,
                    bound,
                }),
            });
        }
    }
    Ok(PerActivationVerdict {
        pass: true,
        first_offense: None,
    })
}

/// Activation lengths for a periodic schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Dwell {
    Uniform(f64),
    PerMode(BTreeMap<ModeId, f64>),
}

impl Dwell {
    fn of(&self, q: ModeId) -> Result<f64, SignalError> {
        let d = match self {
            Dwell::Uniform(d) => *d,
            Dwell::PerMode(m) => *m.get(&q).ok_or(SignalError::MissingBounds(q))?,
        };
        if d > 0.0 && d.is_finite() {
            Ok(d)
        } else {
            Err(SignalError::NonPositiveDwell(d))
        }
    }
}

// Event times closer than this to the horizon are dropped.
const HORIZON_EPS: f64 = 1e-9;

/// Cycles through `modes` in order, truncated at `t_end`.
pub fn generate_periodic(modes: &[ModeId], dwell: &Dwell, t0: f64, t_end: f64) -> Result<SwitchingSignal, SignalError> {
    if modes.is_empty() {
        return Err(SignalError::NoModes);
    }
    let lengths = modes.iter().map(|q| dwell.of(*q)).collect::<Result<Vec<_>, _>>()?;
    if !(t_end > t0) {
        return Err(SignalError::Horizon {
            horizon: t_end,
            last: t0,
        });
    }
    let mut events = vec![Event { time: t0, mode: modes[0] }];
    if modes.len() > 1 {
        let period: f64 = lengths.iter().sum();
        let mut k = 1usize;
        loop {
            let (cycle, pos) = (k / modes.len(), k % modes.len());
            let t = t0 + cycle as f64 * period + lengths[..pos].iter().sum::<f64>();
            if t >= t_end - HORIZON_EPS {
                break;
            }
            events.push(Event { time: t, mode: modes[pos] });
            k += 1;
        }
    }
    SwitchingSignal::new(events, t_end)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomSignalOptions {
    /// Absolute distance kept from each dwell/leave bound.
    pub margin: f64,
    /// Longest activation for modes with no upper bound.
    pub max_dwell: f64,
    /// Shortest activation for modes with no lower bound.
    pub min_dwell: f64,
}

impl Default for RandomSignalOptions {
    fn default() -> Self {
        Self {
            margin: 1e-3,
            max_dwell: 2.0,
            min_dwell: 1e-2,
        }
    }
}

/// Admissible per-activation interval for every mode.
pub fn admissible_intervals(
    modes: &[ModeId],
    bounds: &DwellBounds,
    opts: &RandomSignalOptions,
) -> Result<BTreeMap<ModeId, (f64, f64)>, SignalError> {
    let mut out = BTreeMap::new();
    for q in modes {
        let b = bounds.get(*q).ok_or(SignalError::MissingBounds(*q))?;
        let lo = b.lower.map_or(opts.min_dwell, |t| (t + opts.margin).max(opts.min_dwell));
        let hi = b.upper.map_or(opts.max_dwell, |t| t - opts.margin);
        if !(lo < hi) {
            return Err(SignalError::Infeasible { mode: *q, lo, hi });
        }
        out.insert(*q, (lo, hi));
    }
    Ok(out)
}

/// Seeded random schedule whose activations all lie in the admissible
/// intervals; the next mode is drawn uniformly among the other modes.
pub fn generate_random(
    modes: &[ModeId],
    bounds: &DwellBounds,
    t0: f64,
    t_end: f64,
    seed: u64,
    opts: &RandomSignalOptions,
) -> Result<SwitchingSignal, SignalError> {
    if modes.is_empty() {
        return Err(SignalError::NoModes);
    }
    let windows = admissible_intervals(modes, bounds, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = *modes.choose(&mut rng).expect("nonempty");
    let mut t = t0;
    let mut events = Vec::new();
    while t < t_end - HORIZON_EPS {
        events.push(Event { time: t, mode: current });
        let (lo, hi) = windows[&current];
        t += rng.gen_range(lo..hi);
        let others: Vec<ModeId> = modes.iter().copied().filter(|q| *q != current).collect();
        match others.choose(&mut rng) {
            Some(next) => current = *next,
            None => break,
        }
    }
    SwitchingSignal::new(events, t_end)
}
