//! Scalar root finding for monotone maps.
//!
//! Every solver layer in this crate reduces to "find `u` with `f(u) = target`"
//! for a map `f` that is non-increasing in `u`. This module provides:
//!
//! * [`standard_bisection`]: a bracketed solve on `[lo, hi]`.
//! * [`unbounded_bisection`]: a solve on `[0, ∞)` that first expands a probe
//!   until the target is bracketed.
//! * [`search_positive`]: the same expansion idea on `(0, ∞)` with a caller
//!   supplied probe, used for warm-started searches over quantities that span
//!   many decades.
//! * [`positive_root`]: the unique positive root of a strictly decreasing map.
//! * [`lambert_w`] and [`lambert_w_plus_one`]: the principal branch of the
//!   Lambert W function, the latter accurate near the branch point.
//!
//! The bracketed step can run as plain bisection or as ITP
//! (interpolate, truncate, project). ITP keeps the bracket invariant and the
//! worst-case iteration count of bisection plus one, while converging
//! superlinearly on smooth maps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How a bracket `[lo, hi]` is shrunk once the target is enclosed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BracketMethod {
    /// Halve the bracket at every step.
    Bisection,
    /// Interpolate, truncate and project; never slower than bisection plus one step.
    Itp,
    /// Brent's method: inverse quadratic or secant steps with a bisection
    /// fallback, and a final step of one tolerance across the estimate so the
    /// bracket closes as soon as the interpolation has converged.
    Brent,
}

/// Tolerances and caps shared by all bracketing solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionConfig {
    /// Stop once the bracket width is below `rel_tol · max(|lo|, |hi|)`.
    /// For searches carried out on a logarithmic scale this is the width in `ln u`.
    pub rel_tol: f64,
    /// Absolute floor on the bracket width.
    pub abs_tol: f64,
    /// Hard cap on bracket-shrinking iterations.
    pub max_iter: usize,
    /// Maximum number of expansion steps when searching for a bracket.
    pub doubling_cap: u32,
    /// Bracket-shrinking rule.
    pub method: BracketMethod,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-15,
            max_iter: 400,
            doubling_cap: 64,
            method: BracketMethod::Bisection,
        }
    }
}

impl BisectionConfig {
    /// ITP configuration with the given relative tolerance.
    pub fn itp(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            method: BracketMethod::Itp,
            ..Self::default()
        }
    }

    /// Brent configuration with the given relative tolerance.
    pub fn brent(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            method: BracketMethod::Brent,
            ..Self::default()
        }
    }

    /// Same configuration with the relative tolerance divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        Self {
            rel_tol: (self.rel_tol / factor).max(4.0 * f64::EPSILON),
            ..*self
        }
    }

    /// Checks the configuration invariants.
    pub fn validate(&self) -> Result<(), RootError> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(RootError::Config(format!(
                "tolerances must be positive (rel_tol={}, abs_tol={})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.max_iter < 1 || self.doubling_cap < 1 {
            return Err(RootError::Config(format!(
                "caps must be at least 1 (max_iter={}, doubling_cap={})",
                self.max_iter, self.doubling_cap
            )));
        }
        Ok(())
    }
}

/// Failures of the root-finding primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    /// The supplied interval does not enclose the target.
    #[error("target {target} not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
        target: f64,
    },
    /// Expansion hit its cap without enclosing the target; the target is unattainable.
    #[error("no bracket after {steps} expansion steps from probe {probe}: f({last}) = {value}, target {target}")]
    NoBracket {
        probe: f64,
        last: f64,
        value: f64,
        target: f64,
        steps: u32,
    },
    /// Argument outside the domain of the Lambert W principal branch.
    #[error("Lambert W argument {0} is below -1/e")]
    LambertDomain(f64),
    /// The map was observed to break its monotonicity contract.
    #[error("monotonicity contract violated: {0}")]
    Contract(String),
    /// The map returned NaN.
    #[error("map returned NaN at {0}")]
    NotANumber(f64),
    /// Invalid tolerances or caps.
    #[error("invalid bisection configuration: {0}")]
    Config(String),
}

/// Scale on which a bracket is shrunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scale {
    Linear,
    Log,
}

fn eval<F: FnMut(f64) -> f64>(f: &mut F, u: f64) -> Result<f64, RootError> {
    let v = f(u);
    if v.is_nan() {
        Err(RootError::NotANumber(u))
    } else {
        Ok(v)
    }
}

/// Shrinks a bracket `[lo, hi]` with `f(lo) ≥ target ≥ f(hi)` for non-increasing `f`.
///
/// `f_lo` and `f_hi` are the already known end values. On the log scale both
/// ends must be strictly positive and the tolerance applies to `ln u`.
#[allow(clippy::too_many_arguments)]
fn shrink<F: FnMut(f64) -> f64>(
    f: &mut F,
    target: f64,
    lo: f64,
    hi: f64,
    f_lo: f64,
    f_hi: f64,
    cfg: &BisectionConfig,
    scale: Scale,
) -> Result<f64, RootError> {
    shrink_traced(f, target, lo, hi, f_lo, f_hi, cfg, scale, &mut None)
}

/// [`shrink`] that also reports the secant slope of `f` across the final
/// bracket, in the working coordinate (`ln u` on the log scale).
#[allow(clippy::too_many_arguments)]
fn shrink_traced<F: FnMut(f64) -> f64>(
    f: &mut F,
    target: f64,
    lo: f64,
    hi: f64,
    f_lo: f64,
    f_hi: f64,
    cfg: &BisectionConfig,
    scale: Scale,
    slope: &mut Option<f64>,
) -> Result<f64, RootError> {
    if f_lo == target {
        return Ok(lo);
    }
    if f_hi == target {
        return Ok(hi);
    }
    let (to_x, from_x): (fn(f64) -> f64, fn(f64) -> f64) = match scale {
        Scale::Linear => (|u| u, |x| x),
        Scale::Log => (f64::ln, f64::exp),
    };
    let mut a = to_x(lo);
    let mut b = to_x(hi);
    let tol = match scale {
        Scale::Linear => (cfg.rel_tol * lo.abs().max(hi.abs())).max(cfg.abs_tol),
        Scale::Log => cfg.rel_tol,
    };
    if a.is_finite() && b > a {
        *slope = Some((f_hi - f_lo) / (b - a));
    }
    if cfg.method == BracketMethod::Brent {
        return brent(f, target, a, b, target - f_lo, target - f_hi, 0.5 * tol, cfg.max_iter, from_x, slope);
    }
    // Work with the increasing map g = target - f so that g(a) < 0 < g(b).
    let mut ga = target - f_lo;
    let mut gb = target - f_hi;
    let eps = 0.5 * tol;
    let width0 = b - a;
    let n_half = if width0 > 2.0 * eps {
        (width0 / (2.0 * eps)).log2().ceil()
    } else {
        0.0
    };
    let n_max = n_half + 1.0;
    let k1 = 0.2 / width0.max(f64::MIN_POSITIVE);
    let mut j = 0usize;
    while b - a > 2.0 * eps && j < cfg.max_iter {
        let x_half = 0.5 * (a + b);
        let x = match cfg.method {
            BracketMethod::Bisection | BracketMethod::Brent => x_half,
            BracketMethod::Itp => {
                let r = (eps * 2f64.powf(n_max - j as f64) - 0.5 * (b - a)).max(0.0);
                let delta = k1 * (b - a) * (b - a);
                let x_f = if ga.is_finite() && gb.is_finite() && gb != ga {
                    (gb * a - ga * b) / (gb - ga)
                } else {
                    x_half
                };
                let sigma = (x_half - x_f).signum();
                let x_t = if delta <= (x_half - x_f).abs() {
                    x_f + sigma * delta
                } else {
                    x_half
                };
                let x = if (x_t - x_half).abs() <= r {
                    x_t
                } else {
                    x_half - sigma * r
                };
                if x > a && x < b {
                    x
                } else {
                    x_half
                }
            }
        };
        let u = from_x(x);
        let g = target - eval(f, u)?;
        if g > 0.0 {
            b = x;
            gb = g;
        } else if g < 0.0 {
            a = x;
            ga = g;
        } else {
            return Ok(u);
        }
        if b > a {
            *slope = Some(-(gb - ga) / (b - a));
        }
        j += 1;
    }
    Ok(from_x(0.5 * (a + b)))
}

/// Brent's method on `[a, b]` in the working coordinate, for the increasing
/// map `g = target − f(from_x(·))` with `g(a) < 0 < g(b)`.
///
/// Stops once the enclosing bracket is at most `2 · half_tol` wide.
#[allow(clippy::too_many_arguments)]
fn brent<F: FnMut(f64) -> f64>(
    f: &mut F,
    target: f64,
    a0: f64,
    b0: f64,
    ga0: f64,
    gb0: f64,
    half_tol: f64,
    max_iter: usize,
    from_x: fn(f64) -> f64,
    slope: &mut Option<f64>,
) -> Result<f64, RootError> {
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, ga0, gb0);
    let (mut c, mut fc) = (b, fb);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        if b != c {
            *slope = Some(-(fb - fc) / (b - c));
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + half_tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(from_x(b));
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = target - eval(f, from_x(b))?;
    }
    Ok(from_x(b))
}

/// Bracketed root of a non-increasing map.
///
/// Returns `u ∈ [lo, hi]` such that the final bracket around the crossing of
/// `target` is narrower than the configured tolerance. An exact hit returns
/// early. When `f` equals `target` at `lo` the first probe `lo` is returned.
pub fn standard_bisection<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    lo: f64,
    hi: f64,
    cfg: &BisectionConfig,
) -> Result<f64, RootError> {
    cfg.validate()?;
    let f_lo = eval(&mut f, lo)?;
    let f_hi = eval(&mut f, hi)?;
    if !(lo <= hi) || f_lo < target || f_hi > target {
        return Err(RootError::Bracket {
            lo,
            hi,
            f_lo,
            f_hi,
            target,
        });
    }
    shrink(&mut f, target, lo, hi, f_lo, f_hi, cfg, Scale::Linear)
}

/// Bracketed root of a non-increasing map, shrinking on a logarithmic scale.
///
/// Both ends must be strictly positive. The relative tolerance bounds
/// `ln(hi / lo)` of the final bracket.
pub fn log_bisection<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    lo: f64,
    hi: f64,
    cfg: &BisectionConfig,
) -> Result<f64, RootError> {
    cfg.validate()?;
    let f_lo = eval(&mut f, lo)?;
    let f_hi = eval(&mut f, hi)?;
    if !(lo > 0.0) || !(lo <= hi) || f_lo < target || f_hi > target {
        return Err(RootError::Bracket {
            lo,
            hi,
            f_lo,
            f_hi,
            target,
        });
    }
    shrink(&mut f, target, lo, hi, f_lo, f_hi, cfg, Scale::Log)
}

/// Expansion schedule used to enclose a root from a single probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    /// First step, as a factor `e^{step}` applied to the probe.
    pub initial_log_step: f64,
    /// Double the log step after every unsuccessful step instead of keeping it fixed.
    pub accelerate: bool,
    /// Size later steps from a secant through the last two samples (on the
    /// log scale), overshooting slightly so the root is enclosed tightly.
    /// After a step that fails to enclose the root the next one is at least
    /// twice as long. Steps are capped at one hundred times the schedule's
    /// next step plus twice the distance covered, and fall back to the
    /// schedule when the secant slope is flat or has the wrong sign.
    pub predict: bool,
    /// Estimated derivative of the map with respect to `ln u` near the probe.
    /// With `predict` set, a negative hint sizes the first step like a Newton
    /// step, capped at one hundred times `initial_log_step`.
    pub slope_hint: Option<f64>,
}

impl Expansion {
    /// Fixed factor-of-two steps: probe · 2^i.
    pub const DOUBLING: Expansion = Expansion {
        initial_log_step: std::f64::consts::LN_2,
        accelerate: false,
        predict: false,
        slope_hint: None,
    };

    /// Small first step followed by secant-sized steps; suited to warm starts.
    pub fn warm(initial_log_step: f64) -> Self {
        Self {
            initial_log_step,
            accelerate: true,
            predict: true,
            slope_hint: None,
        }
    }

    /// Same schedule with a slope hint for the first step.
    pub fn with_slope(self, slope_hint: Option<f64>) -> Self {
        Self { slope_hint, ..self }
    }
}

/// Result of expanding from a probe.
enum Expanded {
    /// The map equals the target at this point.
    Hit(f64),
    /// `f(lo) ≥ target ≥ f(hi)`.
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    /// A range end or the step cap was reached without enclosing the target.
    Exhausted { up: bool, last: f64, value: f64 },
}

/// Expands from `probe` on the log scale inside `[min, max]` (`min > 0`,
/// `max` possibly infinite) until the target is enclosed.
#[allow(clippy::too_many_arguments)]
fn expand<F: FnMut(f64) -> f64>(
    f: &mut F,
    target: f64,
    probe: f64,
    f_probe: f64,
    min: f64,
    max: f64,
    expansion: Expansion,
    cfg: &BisectionConfig,
) -> Result<Expanded, RootError> {
    if f_probe == target {
        return Ok(Expanded::Hit(probe));
    }
    let up = f_probe > target;
    let dir = if up { 1.0 } else { -1.0 };
    let u0 = probe.ln();
    let (u_min, u_max) = (min.ln(), max.ln());
    let (mut u_prev, mut f_prev) = (u0, f_probe);
    let (mut u_cur, mut f_cur) = (u0, f_probe);
    let mut schedule = expansion.initial_log_step;
    let mut offset = 0.0;
    let min_step = cfg.rel_tol;
    let mut last_step = 0.0;
    for i in 0..cfg.doubling_cap {
        if (up && u_cur >= u_max) || (!up && u_cur <= u_min) {
            break;
        }
        let mut step = schedule;
        if expansion.predict && i == 0 {
            if let Some(slope) = expansion.slope_hint.filter(|v| *v < 0.0 && v.is_finite()) {
                let dist = (f_cur - target).abs() / slope.abs();
                step = (1.05 * dist + min_step).min(100.0 * schedule);
            }
        }
        if expansion.predict && i > 0 {
            let slope = (f_cur - f_prev) / (u_cur - u_prev);
            let gap = (f_cur - target).abs();
            if slope < 0.0 && slope.is_finite() {
                let dist = gap / slope.abs();
                step = (1.05 * dist + min_step)
                    .max(2.0 * last_step)
                    .min(100.0 * schedule + 2.0 * offset);
            }
        }
        last_step = step;
        if expansion.accelerate {
            schedule *= 2.0;
        }
        offset += step;
        let u_next = (u0 + dir * offset).clamp(u_min, u_max);
        let x_next = u_next.exp();
        if !x_next.is_finite() || x_next <= 0.0 {
            break;
        }
        let f_next = eval(f, x_next)?;
        if up && f_next <= target {
            return Ok(Expanded::Bracket {
                lo: u_cur.exp(),
                hi: x_next,
                f_lo: f_cur,
                f_hi: f_next,
            });
        }
        if !up && f_next >= target {
            return Ok(Expanded::Bracket {
                lo: x_next,
                hi: u_cur.exp(),
                f_lo: f_next,
                f_hi: f_cur,
            });
        }
        u_prev = u_cur;
        f_prev = f_cur;
        u_cur = u_next;
        f_cur = f_next;
    }
    Ok(Expanded::Exhausted {
        up,
        last: u_cur.exp(),
        value: f_cur,
    })
}

/// Root of a non-increasing map on `(0, ∞)` found by expanding from `probe`.
///
/// If `f(probe) > target` the search moves up, otherwise down, until the
/// target is enclosed; the bracket is then shrunk on a logarithmic scale.
/// Moving down, if the cap is reached the value at zero is tried, and a root
/// in `[0, smallest probe]` is accepted. Exhausting the cap otherwise yields
/// [`RootError::NoBracket`].
pub fn search_positive<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    probe: f64,
    expansion: Expansion,
    cfg: &BisectionConfig,
) -> Result<f64, RootError> {
    search_impl(&mut f, target, probe, expansion, cfg, Scale::Log, &mut None)
}

/// [`search_positive`] that also returns the slope of `f` with respect to
/// `ln u` across the final bracket, for use as the next search's hint.
pub fn search_positive_traced<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    probe: f64,
    expansion: Expansion,
    cfg: &BisectionConfig,
) -> Result<(f64, Option<f64>), RootError> {
    let mut slope = None;
    let root = search_impl(&mut f, target, probe, expansion, cfg, Scale::Log, &mut slope)?;
    Ok((root, slope))
}

fn search_impl<F: FnMut(f64) -> f64>(
    f: &mut F,
    target: f64,
    probe: f64,
    expansion: Expansion,
    cfg: &BisectionConfig,
    scale: Scale,
    slope: &mut Option<f64>,
) -> Result<f64, RootError> {
    cfg.validate()?;
    if !(probe > 0.0) || !probe.is_finite() {
        return Err(RootError::Config(format!("probe must be positive and finite, got {probe}")));
    }
    let f_probe = eval(f, probe)?;
    match expand(f, target, probe, f_probe, f64::MIN_POSITIVE, f64::INFINITY, expansion, cfg)? {
        Expanded::Hit(x) => Ok(x),
        Expanded::Bracket { lo, hi, f_lo, f_hi } => shrink_traced(f, target, lo, hi, f_lo, f_hi, cfg, scale, slope),
        Expanded::Exhausted { up, last, value } => {
            if !up {
                let f_zero = eval(f, 0.0)?;
                if f_zero >= target {
                    return shrink(f, target, 0.0, last, f_zero, value, cfg, Scale::Linear);
                }
            }
            Err(RootError::NoBracket {
                probe,
                last,
                value,
                target,
                steps: cfg.doubling_cap,
            })
        }
    }
}

/// Outcome of [`search_bounded`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bounded {
    /// Root inside the range.
    Root(f64),
    /// `f(lo) < target`: the crossing lies below the range.
    BelowRange,
    /// `f(hi) > target`: the crossing lies above the range.
    AboveRange,
}

/// Like [`search_positive`] but confined to `[lo, hi]` with `0 < lo ≤ hi`.
///
/// Expansion from `guess` stops at the range ends; if the target is not
/// enclosed by then the side on which the crossing lies is reported.
pub fn search_bounded<F: FnMut(f64) -> f64>(
    f: F,
    target: f64,
    guess: f64,
    lo: f64,
    hi: f64,
    expansion: Expansion,
    cfg: &BisectionConfig,
) -> Result<Bounded, RootError> {
    search_bounded_traced(f, target, guess, lo, hi, expansion, cfg).map(|(b, _)| b)
}

/// [`search_bounded`] that also returns the slope of `f` with respect to
/// `ln u` across the final bracket when a root was found.
pub fn search_bounded_traced<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    guess: f64,
    lo: f64,
    hi: f64,
    expansion: Expansion,
    cfg: &BisectionConfig,
) -> Result<(Bounded, Option<f64>), RootError> {
    cfg.validate()?;
    if !(lo > 0.0) || !(hi >= lo) {
        return Err(RootError::Config(format!("invalid range [{lo}, {hi}]")));
    }
    let g = if guess.is_finite() && guess > 0.0 { guess.clamp(lo, hi) } else { (lo * hi).sqrt() };
    let f_g = eval(&mut f, g)?;
    match expand(&mut f, target, g, f_g, lo, hi, expansion, cfg)? {
        Expanded::Hit(x) => Ok((Bounded::Root(x), None)),
        Expanded::Bracket { lo, hi, f_lo, f_hi } => {
            let mut slope = None;
            let root = shrink_traced(&mut f, target, lo, hi, f_lo, f_hi, cfg, Scale::Log, &mut slope)?;
            Ok((Bounded::Root(root), slope))
        }
        Expanded::Exhausted { up, last, value } => {
            let at_end = if up { last >= hi * (1.0 - 1e-15) } else { last <= lo * (1.0 + 1e-15) };
            if at_end {
                Ok((if up { Bounded::AboveRange } else { Bounded::BelowRange }, None))
            } else {
                Err(RootError::NoBracket {
                    probe: g,
                    last,
                    value,
                    target,
                    steps: cfg.doubling_cap,
                })
            }
        }
    }
}

/// Root in `[0, ∞)` of a non-increasing map with unknown upper bound.
///
/// The probe starts at `1` in the quantity's natural unit and is doubled (or
/// halved) until `f(u·2^{i+1}) ≤ target ≤ f(u·2^i)`, then the bracket is shrunk
/// with the configured method. A target above `f(0)` gives
/// [`RootError::NoBracket`].
pub fn unbounded_bisection<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    cfg: &BisectionConfig,
) -> Result<f64, RootError> {
    search_impl(&mut f, target, 1.0, Expansion::DOUBLING, cfg, Scale::Linear, &mut None)
}

/// Unique `x > 0` with `v(x) = level` for a strictly decreasing `v` that tends
/// to `+∞` at `0⁺` and to `-∞` at `+∞`.
///
/// Samples taken while expanding from `x = 1` are checked for monotonicity; a
/// violation yields [`RootError::Contract`].
pub fn positive_root<V: FnMut(f64) -> f64>(
    mut v: V,
    level: f64,
    cfg: &BisectionConfig,
) -> Result<f64, RootError> {
    let mut last: Option<(f64, f64)> = None;
    let mut violation: Option<String> = None;
    let mut checked = |x: f64| {
        let value = v(x);
        if violation.is_none() {
            if let Some((px, pv)) = last {
                let bad = (x > px && value > pv) || (x < px && value < pv);
                if bad {
                    violation = Some(format!(
                        "v({px}) = {pv} but v({x}) = {value}; map is not decreasing"
                    ));
                }
            }
        }
        last = Some((x, value));
        value
    };
    let expansion = Expansion::DOUBLING;
    let result = search_impl(&mut checked, level, 1.0, expansion, cfg, Scale::Log, &mut None);
    if let Some(msg) = violation {
        return Err(RootError::Contract(msg));
    }
    result
}

/// Positive root of `c_num / x² − c_lin · x = level` for `c_num > 0`, `c_lin ≥ 0`, `level ≥ 0`.
///
/// The root at `level = 0` is the cube root `∛(c_num / c_lin)` and bounds the
/// root from above; `√(c_num / (level + c_lin · x₀))` bounds it from below.
/// The enclosed root is refined by the configured bracket method. Returns
/// `0` when `c_num = 0`.
pub fn inverse_square_minus_linear_root(
    c_num: f64,
    c_lin: f64,
    level: f64,
    cfg: &BisectionConfig,
) -> Result<f64, RootError> {
    if c_num <= 0.0 {
        return Ok(0.0);
    }
    if level == 0.0 && c_lin > 0.0 {
        return Ok((c_num / c_lin).cbrt());
    }
    let v = |x: f64| c_num / (x * x) - c_lin * x;
    if c_lin <= 0.0 {
        if level > 0.0 {
            return Ok((c_num / level).sqrt());
        }
        return Err(RootError::Contract(format!(
            "no positive root of {c_num}/x² = {level}"
        )));
    }
    let hi = if level >= 0.0 {
        (c_num / c_lin).cbrt()
    } else {
        // Negative levels push the root past the cube root; expand.
        return search_positive(v, level, (c_num / c_lin).cbrt(), Expansion::DOUBLING, cfg);
    };
    // Widened by a few ulps: when `c_lin · hi` is negligible against `level`
    // the rounded lower bound can land just past the root.
    let lo = ((c_num / (level + c_lin * hi)).sqrt() * (1.0 - 8.0 * f64::EPSILON)).min(hi);
    log_bisection(v, level, lo, hi, cfg)
}

const INV_E: f64 = 1.0 / std::f64::consts::E;

/// Principal branch `W₀(a)` of the Lambert W function, `W e^W = a`, `W ≥ −1`.
///
/// Halley iteration started from a branch-point series near `−1/e`, a
/// logarithmic-ratio guess at moderate arguments and the asymptotic expansion
/// for large arguments. Arguments below `−1/e` by more than rounding error are
/// rejected.
pub fn lambert_w(a: f64) -> Result<f64, RootError> {
    if a.is_nan() {
        return Err(RootError::LambertDomain(a));
    }
    if a < -INV_E {
        if a > -INV_E - 4.0 * f64::EPSILON {
            return Ok(-1.0);
        }
        return Err(RootError::LambertDomain(a));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    if a == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut w = if a < -0.25 {
        let p = (2.0 * (std::f64::consts::E * a + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if a < 3.0 {
        let l = a.ln_1p();
        l * (1.0 - l.ln_1p() / (2.0 + l))
    } else {
        let l1 = a.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - a;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        if wp1 <= 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let dw = f / denom;
        let next = (w - dw).max(-1.0);
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs());
        w = next;
        if done {
            break;
        }
    }
    Ok(w)
}

/// `(v − 1)e^v + 1` evaluated without cancellation for small `v`.
fn branch_map(v: f64) -> f64 {
    if v.abs() < 0.1 {
        // Σ_{j≥2} (j − 1)/j! · v^j
        let mut term = v; // v^j / j! for j = 1
        let mut sum = 0.0;
        for j in 2..=14 {
            term *= v / j as f64;
            sum += (j as f64 - 1.0) * term;
        }
        sum
    } else {
        1.0 + (v - 1.0) * v.exp()
    }
}

/// `1 + W₀((k − 1)/e)` for `k ≥ 0`, accurate as `k → 0` where `W₀ → −1`.
///
/// The value `v` solves `(v − 1)e^v + 1 = k`, the form in which the Lambert
/// argument appears when inverting `(1 + x) ln(1 + x) − x = k`. For small `k`
/// it is computed by Halley iteration on that equation directly, avoiding the
/// loss of precision in forming `(k − 1)/e` and adding one afterwards.
pub fn lambert_w_plus_one(k: f64) -> Result<f64, RootError> {
    if k.is_nan() || k < -4.0 * f64::EPSILON {
        return Err(RootError::LambertDomain((k - 1.0) * INV_E));
    }
    if k <= 0.0 {
        return Ok(0.0);
    }
    if k == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if k > 2.0 {
        return Ok(1.0 + lambert_w((k - 1.0) * INV_E)?);
    }
    let t = (2.0 * k).sqrt();
    let mut v = (t - t * t / 3.0).max(0.5 * t);
    for _ in 0..64 {
        let ev = v.exp();
        let f = branch_map(v) - k;
        if f == 0.0 {
            break;
        }
        let d1 = v * ev;
        let d2 = (v + 1.0) * ev;
        let denom = 2.0 * d1 * d1 - f * d2;
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let dv = 2.0 * f * d1 / denom;
        let next = if v - dv > 0.0 { v - dv } else { 0.5 * v };
        let done = (next - v).abs() <= 4.0 * f64::EPSILON * next;
        v = next;
        if done {
            break;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn itp() -> BisectionConfig {
        BisectionConfig::itp(1e-13)
    }

    #[test]
    fn bisection_linear_map() {
        let u = standard_bisection(|u| -u, -2.0, 0.0, 10.0, &BisectionConfig::default()).unwrap();
        assert!((u - 2.0).abs() < 1e-8);
        let u = standard_bisection(|u| -u, -2.0, 0.0, 10.0, &itp()).unwrap();
        assert!((u - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_reciprocal_map() {
        for cfg in [BisectionConfig::default(), itp()] {
            let u = standard_bisection(|u| 1.0 / u, 0.5, 0.1, 10.0, &cfg).unwrap();
            assert!((u - 2.0).abs() < 1e-8, "{u}");
        }
    }

    #[test]
    fn bisection_constant_map_returns_first_probe() {
        let u = standard_bisection(|_| 3.0, 3.0, 1.0, 5.0, &BisectionConfig::default()).unwrap();
        assert_eq!(u, 1.0);
    }

    #[test]
    fn bisection_rejects_unbracketed_target() {
        let err = standard_bisection(|u| -u, 5.0, 0.0, 10.0, &BisectionConfig::default()).unwrap_err();
        match err {
            RootError::Bracket { f_lo, f_hi, .. } => {
                assert_eq!(f_lo, 0.0);
                assert_eq!(f_hi, -10.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unbounded_linear_map() {
        let u = unbounded_bisection(|u| 10.0 - u, 3.0, &BisectionConfig::default()).unwrap();
        assert!((u - 7.0).abs() < 1e-7);
    }

    #[test]
    fn unbounded_exponential_map() {
        let u = unbounded_bisection(|u| (-u).exp(), 0.5, &BisectionConfig::default()).unwrap();
        // Oracle: ln 2 from the closed form, bracket tolerance 1e-9 relative.
        assert!((u - std::f64::consts::LN_2).abs() < 1e-8);
    }

    #[test]
    fn unbounded_infeasible_target() {
        let err = unbounded_bisection(|u| 10.0 - u, 11.0, &BisectionConfig::default()).unwrap_err();
        assert!(matches!(err, RootError::NoBracket { .. }));
    }

    #[test]
    fn unbounded_root_at_zero() {
        let u = unbounded_bisection(|u| -u, 0.0, &BisectionConfig::default()).unwrap();
        assert!(u.abs() < 1e-15);
    }

    #[test]
    fn warm_search_matches_cold_search() {
        let f = |u: f64| 1.0 / (1.0 + u * u);
        let cold = search_positive(f, 0.2, 1.0, Expansion::DOUBLING, &itp()).unwrap();
        let warm = search_positive(f, 0.2, 1.99, Expansion::warm(1e-4), &itp()).unwrap();
        assert!((cold - 2.0).abs() < 1e-11);
        assert!((warm - 2.0).abs() < 1e-11);
    }

    #[test]
    fn bounded_search_reports_side() {
        let cfg = itp();
        let f = |u: f64| 10.0 / u;
        match search_bounded(f, 2.0, 1.0, 0.5, 100.0, Expansion::warm(1e-3), &cfg).unwrap() {
            Bounded::Root(u) => assert!((u - 5.0).abs() < 1e-10),
            other => panic!("{other:?}"),
        }
        assert_eq!(search_bounded(f, 0.01, 1.0, 0.5, 100.0, Expansion::warm(1e-3), &cfg).unwrap(), Bounded::AboveRange);
        assert_eq!(search_bounded(f, 50.0, 1.0, 0.5, 100.0, Expansion::warm(1e-3), &cfg).unwrap(), Bounded::BelowRange);
    }

    #[test]
    fn positive_root_unit_cube() {
        let x = positive_root(|x| 2.0 / (x * x) - 2.0 * x, 0.0, &BisectionConfig::default()).unwrap();
        assert!((x - 1.0).abs() < 1e-8);
    }

    #[test]
    fn positive_root_cube_root_closed_form() {
        let (za, c) = (7.3, 0.4);
        let x = positive_root(|x| za / (x * x) - c * x, 0.0, &itp()).unwrap();
        assert!((x - (za / c).cbrt()).abs() < 1e-10);
        let fast = inverse_square_minus_linear_root(za, c, 0.0, &itp()).unwrap();
        assert!((fast - (za / c).cbrt()).abs() < 1e-12);
    }

    #[test]
    fn positive_root_against_grid_scan() {
        // Oracle: dense scan for the sign change of 8/x² − x − 4, refined by
        // linear interpolation between the two straddling grid points.
        let g = |x: f64| 8.0 / (x * x) - x - 4.0;
        let mut oracle = f64::NAN;
        let n = 2_000_000;
        let (a, b) = (0.5, 3.0);
        let h = (b - a) / n as f64;
        for i in 0..n {
            let x0 = a + h * i as f64;
            let x1 = x0 + h;
            if g(x0) >= 0.0 && g(x1) < 0.0 {
                oracle = x0 + h * g(x0) / (g(x0) - g(x1));
                break;
            }
        }
        let x = positive_root(|x| 8.0 / (x * x) - x, 4.0, &itp()).unwrap();
        assert!((x - oracle).abs() < 1e-9, "{x} vs {oracle}");
        let fast = inverse_square_minus_linear_root(8.0, 1.0, 4.0, &itp()).unwrap();
        assert!((fast - oracle).abs() < 1e-9);
    }

    #[test]
    fn positive_root_detects_non_monotone_map() {
        let err = positive_root(|x| (x - 3.0).powi(2) - 1.0 / x, -100.0, &BisectionConfig::default()).unwrap_err();
        assert!(matches!(err, RootError::Contract(_)), "{err:?}");
    }

    #[test]
    fn lambert_w_reference_values() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert!((lambert_w(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        // Oracle: Newton iteration on w e^w = 1 from 0.5 to residual below 1e-14.
        let mut w: f64 = 0.5;
        for _ in 0..100 {
            let r = w * w.exp() - 1.0;
            if r.abs() < 1e-14 {
                break;
            }
            w -= r / ((w + 1.0) * w.exp());
        }
        assert!((lambert_w(1.0).unwrap() - w).abs() < 1e-14);
        assert!((w - 0.5671432904).abs() < 1e-10);
        assert_eq!(lambert_w(-INV_E).unwrap(), -1.0);
    }

    #[test]
    fn lambert_w_domain_error() {
        assert!(matches!(lambert_w(-0.5), Err(RootError::LambertDomain(_))));
        assert!(lambert_w(f64::NAN).is_err());
    }

    #[test]
    fn lambert_w_plus_one_matches_principal_branch() {
        for &k in &[0.5, 1.0, 1.5, 2.0, 3.0, 10.0, 1e3] {
            let direct = 1.0 + lambert_w((k - 1.0) * INV_E).unwrap();
            let shifted = lambert_w_plus_one(k).unwrap();
            assert!((direct - shifted).abs() < 1e-12 * (1.0 + direct), "k={k}");
        }
        assert!((lambert_w_plus_one(1.0).unwrap() - 1.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((lambert_w_plus_one(1.0 + e * e).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lambert_w_plus_one_small_arguments_keep_relative_accuracy() {
        for &k in &[1e-30, 1e-20, 1e-12, 1e-6, 1e-3, 0.05] {
            let v = lambert_w_plus_one(k).unwrap();
            let back = branch_map(v);
            assert!((back - k).abs() <= 1e-13 * k, "k={k} v={v} back={back}");
        }
    }

    proptest! {
        #[test]
        fn lambert_w_residual_on_positive_axis(a in 1e-8f64..1e8) {
            let w = lambert_w(a).unwrap();
            prop_assert!((w * w.exp() - a).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn lambert_w_residual_near_branch(t in 1e-14f64..0.36) {
            let a = -INV_E + t;
            let w = lambert_w(a).unwrap();
            prop_assert!(w >= -1.0);
            prop_assert!((w * w.exp() - a).abs() <= 1e-12);
        }

        #[test]
        fn bracketed_root_within_oscillation(c in 0.1f64..50.0, target in 0.05f64..0.95) {
            // f(u) = 1/(1 + c u) is decreasing; the returned point must lie in
            // a bracket no wider than the tolerance around the exact root.
            let exact = (1.0 / target - 1.0) / c;
            for cfg in [BisectionConfig::default(), BisectionConfig::itp(1e-12)] {
                let u = standard_bisection(|u| 1.0 / (1.0 + c * u), target, 0.0, 100.0, &cfg).unwrap();
                prop_assert!((u - exact).abs() <= cfg.rel_tol * 100.0 + 1e-15);
            }
        }

        #[test]
        fn search_positive_locates_power_law_root(k in -6.0f64..6.0, probe_exp in -8.0f64..8.0) {
            let root = 10f64.powf(k);
            let u = search_positive(|u| -(u / root).ln(), 0.0, 10f64.powf(probe_exp), Expansion::warm(1e-3), &BisectionConfig::itp(1e-12)).unwrap();
            prop_assert!(((u / root).ln()).abs() < 1e-11);
        }

        #[test]
        fn positive_root_residual(za in 0.01f64..100.0, c in 0.01f64..100.0, level in 0.0f64..100.0) {
            let x = inverse_square_minus_linear_root(za, c, level, &BisectionConfig::itp(1e-13)).unwrap();
            prop_assert!(x > 0.0);
            let v = za / (x * x) - c * x;
            let scale = za / (x * x) + c * x;
            prop_assert!((v - level).abs() <= 1e-11 * scale);
        }
    }
}
