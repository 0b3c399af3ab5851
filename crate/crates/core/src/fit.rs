//! Fitting of logarithmic utilities `κ ln(1 + l_s s + l_r r)` to
//! (rate, resolution, score) ratings.
//!
//! Internally rates are measured in units of 10⁸ bit/s and resolutions in
//! units of 10⁶ pixels; reported coefficients are in raw units. The fit is a
//! damped Gauss–Newton (Levenberg–Marquardt) least-squares solve started from
//! eight fixed log-spaced seeds for the two weights, with `κ` at each seed set
//! by the closed-form conditional least-squares solution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LogUtility;

/// Rate unit of the internal fit, in bit/s.
pub const RATE_UNIT: f64 = 1e8;
/// Resolution unit of the internal fit, in pixels.
pub const RESOLUTION_UNIT: f64 = 1e6;

/// One rating: a score observed at a rate and a resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingPoint {
    /// Rate in bit/s.
    #[serde(rename = "rate_bps")]
    pub rate: f64,
    /// Resolution in pixels.
    #[serde(rename = "resolution_pixels")]
    pub resolution: f64,
    pub score: f64,
}

/// Errors of [`fit_log_utility`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("at least 4 rating points are needed, got {0}")]
    InsufficientData(usize),
    #[error("rating point {index} is invalid: {reason}")]
    InvalidPoint { index: usize, reason: String },
    #[error("the rating points are collinear in the (resolution, rate) plane")]
    Collinear,
}

/// Fitted utility with goodness-of-fit figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub utility: LogUtility,
    /// Residual sum of squares.
    pub rss: f64,
    /// Coefficient of determination, clipped to `[0, 1]`.
    pub r_squared: f64,
    /// Largest rate among the points, in bit/s.
    pub rate_max: f64,
    /// Largest resolution among the points, in pixels.
    pub resolution_max: f64,
    /// `l_r · rate_max + l_s · resolution_max`.
    pub normalization: f64,
    /// Set when the scores carry no signal and `κ = 0` was returned.
    pub degenerate: bool,
    /// Gauss–Newton iterations of the winning start.
    pub iterations: usize,
    pub warnings: Vec<String>,
}

/// Settings of the least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Iteration cap per start.
    pub max_iter: usize,
    /// Stop once the relative decrease of the residual sum of squares is below this.
    pub rss_rel_tol: f64,
    /// Stop once every relative parameter step is below this.
    pub step_rel_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rss_rel_tol: 1e-16,
            step_rel_tol: 1e-13,
        }
    }
}

/// Scaled point: resolution and rate in internal units.
#[derive(Clone, Copy)]
struct Scaled {
    s: f64,
    r: f64,
    y: f64,
}

/// Parameters in internal units: `[κ, a, c]` with `a = l_s · 10⁶`, `c = l_r · 10⁸`.
type Params = [f64; 3];

fn basis(p: &Params, pt: &Scaled) -> f64 {
    (p[1] * pt.s + p[2] * pt.r).ln_1p()
}

fn rss(p: &Params, pts: &[Scaled]) -> f64 {
    pts.iter().map(|pt| (pt.y - p[0] * basis(p, pt)).powi(2)).sum()
}

/// Least-squares `κ ≥ 0` for fixed weights.
fn conditional_kappa(a: f64, c: f64, pts: &[Scaled]) -> f64 {
    let p = [1.0, a, c];
    let (num, den) = pts.iter().fold((0.0, 0.0), |(n, d), pt| {
        let phi = basis(&p, pt);
        (n + pt.y * phi, d + phi * phi)
    });
    if den > 0.0 {
        (num / den).max(0.0)
    } else {
        0.0
    }
}

/// Solves the 3×3 system `m x = v` by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if !(m[pivot][col].abs() > 0.0) {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in col + 1..3 {
            let factor = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= factor * m[col][k];
            }
            v[row] -= factor * v[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (v[row] - tail) / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct Run {
    params: Params,
    rss: f64,
    iterations: usize,
    converged: bool,
}

fn levenberg_marquardt(start: Params, pts: &[Scaled], cfg: &FitConfig) -> Run {
    let mut p = start;
    let mut cur = rss(&p, pts);
    let mut damping = 1e-3;
    for it in 0..cfg.max_iter {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for pt in pts {
            let inner = 1.0 + p[1] * pt.s + p[2] * pt.r;
            let phi = inner.ln();
            let grad = [phi, p[0] * pt.s / inner, p[0] * pt.r / inner];
            let resid = pt.y - p[0] * phi;
            for i in 0..3 {
                jtr[i] += grad[i] * resid;
                for j in 0..3 {
                    jtj[i][j] += grad[i] * grad[j];
                }
            }
        }
        let mut accepted = None;
        while damping < 1e16 {
            let mut m = jtj;
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += damping * jtj[i][i].max(1e-300);
            }
            if let Some(step) = solve3(m, jtr) {
                let trial = [
                    (p[0] + step[0]).max(0.0),
                    (p[1] + step[1]).max(0.0),
                    (p[2] + step[2]).max(0.0),
                ];
                let value = rss(&trial, pts);
                if value <= cur {
                    accepted = Some((trial, value));
                    break;
                }
            }
            damping *= 10.0;
        }
        let Some((next, value)) = accepted else {
            return Run {
                params: p,
                rss: cur,
                iterations: it,
                converged: true,
            };
        };
        let small_step = (0..3).all(|i| (next[i] - p[i]).abs() <= cfg.step_rel_tol * next[i].abs().max(1e-300));
        let small_gain = cur - value <= cfg.rss_rel_tol * cur;
        p = next;
        cur = value;
        damping = (damping / 10.0).max(1e-12);
        if small_step || small_gain || cur == 0.0 {
            return Run {
                params: p,
                rss: cur,
                iterations: it + 1,
                converged: true,
            };
        }
    }
    Run {
        params: p,
        rss: cur,
        iterations: cfg.max_iter,
        converged: false,
    }
}

fn collinear(pts: &[Scaled]) -> bool {
    let scale = pts
        .iter()
        .map(|p| p.s.abs().max(p.r.abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let o = pts[0];
    let Some(far) = pts
        .iter()
        .copied()
        .max_by(|x, y| ((x.s - o.s).hypot(x.r - o.r)).total_cmp(&(y.s - o.s).hypot(y.r - o.r)))
    else {
        return true;
    };
    let (dx, dy) = (far.s - o.s, far.r - o.r);
    let len = dx.hypot(dy);
    if len <= 1e-12 * scale {
        return true;
    }
    pts.iter()
        .all(|p| ((p.s - o.s) * dy - (p.r - o.r) * dx).abs() / len <= 1e-12 * scale)
}

/// The eight starting weights `(a, c)` in internal units.
pub fn seed_weights() -> [(f64, f64); 8] {
    let mut out = [(0.0, 0.0); 8];
    for (k, slot) in out.iter_mut().enumerate() {
        let a = 10f64.powf(-2.0 + (k / 2) as f64 * 4.0 / 3.0);
        let c = if k % 2 == 0 { 1e-2 } else { 1.0 };
        *slot = (a, c);
    }
    out
}

/// Fits `score ≈ κ ln(1 + l_s s + l_r r)` with non-negative coefficients.
pub fn fit_log_utility(points: &[RatingPoint]) -> Result<FitResult, FitError> {
    fit_log_utility_with(points, &FitConfig::default())
}

/// [`fit_log_utility`] with explicit solver settings.
pub fn fit_log_utility_with(points: &[RatingPoint], cfg: &FitConfig) -> Result<FitResult, FitError> {
    if points.len() < 4 {
        return Err(FitError::InsufficientData(points.len()));
    }
    for (index, p) in points.iter().enumerate() {
        let reason = if !(p.rate >= 0.0) || !p.rate.is_finite() {
            Some(format!("rate must be non-negative, got {}", p.rate))
        } else if !(p.resolution > 0.0) || !p.resolution.is_finite() {
            Some(format!("resolution must be positive, got {}", p.resolution))
        } else if !(p.score >= 0.0) || !p.score.is_finite() {
            Some(format!("score must be non-negative, got {}", p.score))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(FitError::InvalidPoint { index, reason });
        }
    }
    let pts: Vec<Scaled> = points
        .iter()
        .map(|p| Scaled {
            s: p.resolution / RESOLUTION_UNIT,
            r: p.rate / RATE_UNIT,
            y: p.score,
        })
        .collect();
    if collinear(&pts) {
        return Err(FitError::Collinear);
    }
    let rate_max = points.iter().map(|p| p.rate).fold(0.0, f64::max);
    let resolution_max = points.iter().map(|p| p.resolution).fold(0.0, f64::max);
    let mean = pts.iter().map(|p| p.y).sum::<f64>() / pts.len() as f64;
    let total: f64 = pts.iter().map(|p| (p.y - mean).powi(2)).sum();
    if total <= 1e-24 * mean.powi(2).max(f64::MIN_POSITIVE) * pts.len() as f64 {
        let zero = LogUtility {
            kappa: 0.0,
            ls: 0.0,
            lr: 0.0,
        };
        return Ok(FitResult {
            utility: zero,
            rss: pts.iter().map(|p| p.y * p.y).sum(),
            r_squared: 0.0,
            rate_max,
            resolution_max,
            normalization: 0.0,
            degenerate: true,
            iterations: 0,
            warnings: vec!["scores are constant; no utility curve can be identified".to_string()],
        });
    }
    let mut best: Option<Run> = None;
    for (a, c) in seed_weights() {
        let start = [conditional_kappa(a, c, &pts), a, c];
        let run = levenberg_marquardt(start, &pts, cfg);
        if best.as_ref().is_none_or(|b| run.rss < b.rss) {
            best = Some(run);
        }
    }
    let best = best.expect("eight starts always run");
    let mut warnings = Vec::new();
    if !best.converged {
        warnings.push(format!(
            "least-squares solve hit its cap of {} iterations; returning the best candidate",
            cfg.max_iter
        ));
    }
    let [kappa, a, c] = best.params;
    let utility = LogUtility {
        kappa,
        ls: a / RESOLUTION_UNIT,
        lr: c / RATE_UNIT,
    };
    let degenerate = !(kappa > 0.0);
    if degenerate {
        warnings.push("fitted scale is zero".to_string());
    }
    Ok(FitResult {
        utility,
        rss: best.rss,
        r_squared: (1.0 - best.rss / total).clamp(0.0, 1.0),
        rate_max,
        resolution_max,
        normalization: utility.lr * rate_max + utility.ls * resolution_max,
        degenerate,
        iterations: best.iterations,
        warnings,
    })
}

/// Normalized one-dimensional curve `κ ln(1 + α x)` with `α` the fit's normalization.
pub fn rescaled_curve(fit: &FitResult, x: f64) -> f64 {
    fit.utility.kappa * (fit.normalization * x).ln_1p()
}

/// `(rate, resolution)` at which the utility equals [`rescaled_curve`] at `x`.
pub fn curve_preimage(fit: &FitResult, x: f64) -> (f64, f64) {
    (x * fit.rate_max, x * fit.resolution_max)
}

/// Named utility preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preset {
    pub name: &'static str,
    pub utility: LogUtility,
}

const PRESET_UNIT: f64 = 1e-8;

const fn preset(name: &'static str, kappa: f64, ls: f64, lr: f64) -> Preset {
    Preset {
        name,
        utility: LogUtility {
            kappa,
            ls: ls * PRESET_UNIT,
            lr: lr * PRESET_UNIT,
        },
    }
}

/// Utility presets for rating-style curves on a 0–5 and a 0–100 score scale.
/// Weights are per pixel and per bit/s.
pub const PRESETS: [Preset; 8] = [
    preset("ssv-seated-formation", 1.7031, 57.2059, 0.0131),
    preset("ssv-standing-formation", 1.7134, 37.0186, 0.0085),
    preset("ssv-seated-alcatraz", 1.0210, 232.9612, 0.0532),
    preset("ssv-user2-seated-formation", 1.0210, 232.9612, 0.0532),
    preset("netflix-bigbuckbunny", 31.9725, 3745.8765, 218.4595),
    preset("netflix-elfuente1", 33.1874, 2210.8196, 128.935),
    preset("netflix-birdincage", 27.6723, 6692.7040, 390.3185),
    preset("netflix-crowdrun", 33.1931, 808.8521, 67.2965),
];

/// Preset by name.
pub fn preset_by_name(name: &str) -> Option<Preset> {
    PRESETS.iter().copied().find(|p| p.name == name)
}

/// Noiseless ratings of `utility` on a rate × resolution grid.
pub fn synthetic_ratings(utility: &LogUtility, rates: &[f64], resolutions: &[f64]) -> Vec<RatingPoint> {
    let mut out = Vec::with_capacity(rates.len() * resolutions.len());
    for &s in resolutions {
        for &r in rates {
            out.push(RatingPoint {
                rate: r,
                resolution: s,
                score: utility.value(r, s),
            });
        }
    }
    out
}

/// Rates from 1 Mbit/s to 200 Mbit/s, log-spaced.
pub fn standard_rates() -> Vec<f64> {
    [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0]
        .iter()
        .map(|m| m * 1e6)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResolutionDomain;

    fn grid() -> Vec<f64> {
        match ResolutionDomain::standard_grid() {
            ResolutionDomain::Grid(g) => g,
            ResolutionDomain::Interval { .. } => unreachable!(),
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let pts = vec![
            RatingPoint {
                rate: 1.0,
                resolution: 1.0,
                score: 1.0
            };
            3
        ];
        assert_eq!(fit_log_utility(&pts), Err(FitError::InsufficientData(3)));
    }

    #[test]
    fn collinear_points_rejected() {
        let pts: Vec<_> = (1..6)
            .map(|i| RatingPoint {
                rate: 1e6 * i as f64,
                resolution: 2e5 * i as f64,
                score: i as f64,
            })
            .collect();
        assert_eq!(fit_log_utility(&pts), Err(FitError::Collinear));
    }

    #[test]
    fn constant_scores_give_flagged_zero_fit() {
        let u = LogUtility {
            kappa: 1.0,
            ls: 0.0,
            lr: 0.0,
        };
        let mut pts = synthetic_ratings(&u, &standard_rates(), &grid());
        for p in &mut pts {
            p.score = 3.0;
        }
        let fit = fit_log_utility(&pts).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.utility.kappa, 0.0);
        assert_eq!((fit.utility.ls, fit.utility.lr), (0.0, 0.0));
    }

    #[test]
    fn presets_are_recovered_from_their_own_curves() {
        for p in PRESETS {
            let pts = synthetic_ratings(&p.utility, &standard_rates(), &grid());
            let fit = fit_log_utility(&pts).unwrap();
            for (got, want) in [
                (fit.utility.kappa, p.utility.kappa),
                (fit.utility.ls, p.utility.ls),
                (fit.utility.lr, p.utility.lr),
            ] {
                assert!((got - want).abs() <= 1e-2 * want, "{}: {got} vs {want}", p.name);
            }
        }
    }

    #[test]
    fn rescaled_curve_endpoints() {
        let p = PRESETS[0];
        let fit = fit_log_utility(&synthetic_ratings(&p.utility, &standard_rates(), &grid())).unwrap();
        assert_eq!(rescaled_curve(&fit, 0.0), 0.0);
        let x = (std::f64::consts::E - 1.0) / fit.normalization;
        assert!((rescaled_curve(&fit, x) - fit.utility.kappa).abs() <= 1e-12 * fit.utility.kappa);
        let (r, s) = curve_preimage(&fit, 0.37);
        assert!((rescaled_curve(&fit, 0.37) - fit.utility.value(r, s)).abs() <= 1e-12);
    }
}
