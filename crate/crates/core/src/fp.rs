//! Quadratic-transform engine for minimizing a sum of ratios.
//!
//! The target is `H(x) = G(x) + Σₙ Aₙ(x)/Bₙ(x)` with `Aₙ ≥ 0` and `Bₙ > 0`.
//! Each ratio is replaced by `Kₙ(x, yₙ) = Aₙ(x)² yₙ + 1 / (4 Bₙ(x)² yₙ)`,
//! which is convex in `yₙ > 0` and minimized at `yₙ = 1 / (2 Aₙ Bₙ)` where it
//! equals `Aₙ/Bₙ`. The surrogate `W(x, y) = G(x) + Σₙ Kₙ(x, yₙ)` is then
//! minimized by alternating exact updates of `y` with a caller supplied
//! minimization over `x`. At `y = y#(x)` the gradient of `W` in `x` coincides
//! with the gradient of `H`, so fixed points of the alternation are
//! stationary points of `H`.

use thiserror::Error;

/// A sum-of-ratios minimization problem.
pub trait RatioProblem {
    /// Dimension of `x`.
    fn dim(&self) -> usize;
    /// Number of ratio terms.
    fn n_ratios(&self) -> usize;
    /// The ratio-free part `G(x)`.
    fn base(&self, x: &[f64]) -> f64;
    /// Numerator `Aₙ(x) ≥ 0`.
    fn numerator(&self, x: &[f64], n: usize) -> f64;
    /// Denominator `Bₙ(x) > 0`.
    fn denominator(&self, x: &[f64], n: usize) -> f64;
    /// Membership in the feasible set.
    fn contains(&self, x: &[f64]) -> bool;
    /// Minimizes `W(·, y)` over the feasible set, starting from `x_start`.
    fn minimize_surrogate(&self, y: &[f64], x_start: &[f64]) -> Result<Vec<f64>, String>;
}

/// Errors of the transform engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FpError {
    /// An auxiliary variable was not strictly positive.
    #[error("auxiliary y[{index}] = {value} must be positive")]
    NonPositiveAux { index: usize, value: f64 },
    /// A numerator or denominator left its admissible range.
    #[error("ratio {index} is invalid at the current point: numerator {numerator}, denominator {denominator}")]
    InvalidRatio {
        index: usize,
        numerator: f64,
        denominator: f64,
    },
    /// The subproblem solver failed.
    #[error("subproblem failed at iteration {iteration}: {message}")]
    Subproblem { iteration: usize, message: String },
    /// The surrogate increased, which exact alternation cannot do.
    #[error("surrogate increased at iteration {iteration}: {before} -> {after}")]
    NonMonotone {
        iteration: usize,
        before: f64,
        after: f64,
    },
    /// A point outside the feasible set was supplied or returned.
    #[error("point is outside the feasible set")]
    Infeasible,
}

/// Settings of the transform engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpConfig {
    /// Value substituted for `yₙ` when `Aₙ = 0` makes the optimal `yₙ` unbounded.
    pub y_ceiling: f64,
    /// Stop when the relative decrease of the surrogate is at most this value.
    pub tol: f64,
    /// Iteration cap of the alternation.
    pub max_iters: usize,
    /// Relative increase of the surrogate tolerated before reporting a contract violation.
    pub monotone_slack: f64,
    /// Finite-difference step factor; the step is `fd_step · (1 + |xᵢ|)`.
    pub fd_step: f64,
}

impl Default for FpConfig {
    fn default() -> Self {
        Self {
            y_ceiling: 1e18,
            tol: 1e-3,
            max_iters: 200,
            monotone_slack: 1e-9,
            fd_step: 1e-6,
        }
    }
}

/// Result of [`aux_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuxUpdate {
    /// Optimal auxiliaries `1 / (2 Aₙ Bₙ)`.
    pub y: Vec<f64>,
    /// Indices whose numerator was zero and whose auxiliary was set to the ceiling.
    pub clamped: Vec<usize>,
}

/// Optimal auxiliary for a single ratio, `1 / (2 A B)`.
pub fn optimal_aux(numerator: f64, denominator: f64) -> f64 {
    1.0 / (2.0 * numerator * denominator)
}

/// `A² y + 1 / (4 B² y)`.
pub fn quadratic_term(numerator: f64, denominator: f64, y: f64) -> f64 {
    numerator * numerator * y + 1.0 / (4.0 * denominator * denominator * y)
}

fn ratio_parts<P: RatioProblem + ?Sized>(p: &P, x: &[f64], n: usize) -> Result<(f64, f64), FpError> {
    let a = p.numerator(x, n);
    let b = p.denominator(x, n);
    if !(a >= 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(FpError::InvalidRatio {
            index: n,
            numerator: a,
            denominator: b,
        });
    }
    Ok((a, b))
}

/// Optimal auxiliaries at `x`.
pub fn aux_update<P: RatioProblem + ?Sized>(p: &P, x: &[f64], cfg: &FpConfig) -> Result<AuxUpdate, FpError> {
    let mut y = Vec::with_capacity(p.n_ratios());
    let mut clamped = Vec::new();
    for n in 0..p.n_ratios() {
        let (a, b) = ratio_parts(p, x, n)?;
        if a == 0.0 {
            y.push(cfg.y_ceiling);
            clamped.push(n);
        } else {
            y.push(optimal_aux(a, b).min(cfg.y_ceiling));
        }
    }
    Ok(AuxUpdate { y, clamped })
}

/// Surrogate `W(x, y) = G(x) + Σₙ Kₙ(x, yₙ)`.
pub fn surrogate_value<P: RatioProblem + ?Sized>(p: &P, x: &[f64], y: &[f64]) -> Result<f64, FpError> {
    let mut sum = p.base(x);
    for n in 0..p.n_ratios() {
        if !(y[n] > 0.0) {
            return Err(FpError::NonPositiveAux { index: n, value: y[n] });
        }
        let (a, b) = ratio_parts(p, x, n)?;
        sum += quadratic_term(a, b, y[n]);
    }
    Ok(sum)
}

/// Original objective `H(x) = G(x) + Σₙ Aₙ/Bₙ`.
pub fn objective<P: RatioProblem + ?Sized>(p: &P, x: &[f64]) -> Result<f64, FpError> {
    let mut sum = p.base(x);
    for n in 0..p.n_ratios() {
        let (a, b) = ratio_parts(p, x, n)?;
        sum += a / b;
    }
    Ok(sum)
}

/// Outcome of [`ao_minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct AoOutcome {
    /// Final point.
    pub x: Vec<f64>,
    /// Auxiliaries optimal for the final point.
    pub y: Vec<f64>,
    /// Objective `H` (equal to the surrogate at refreshed auxiliaries) after each iteration,
    /// starting with the value at the initial point.
    pub trace: Vec<f64>,
    /// Number of subproblem solves.
    pub iterations: usize,
    /// Whether the tolerance was met before the iteration cap.
    pub converged: bool,
}

/// Alternating minimization of the surrogate from the feasible point `x0`.
///
/// Each iteration refreshes `y` at the current point, then calls the
/// subproblem solver. Stops when the relative decrease of the surrogate is at
/// most `cfg.tol`. With no ratio terms a single subproblem call is made.
pub fn ao_minimize<P: RatioProblem + ?Sized>(p: &P, x0: &[f64], cfg: &FpConfig) -> Result<AoOutcome, FpError> {
    if !p.contains(x0) {
        return Err(FpError::Infeasible);
    }
    let mut x = x0.to_vec();
    let mut current = objective(p, &x)?;
    let mut trace = vec![current];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let aux = aux_update(p, &x, cfg)?;
        let before = surrogate_value(p, &x, &aux.y)?;
        let next = p
            .minimize_surrogate(&aux.y, &x)
            .map_err(|message| FpError::Subproblem {
                iteration: iterations,
                message,
            })?;
        iterations += 1;
        if !p.contains(&next) {
            return Err(FpError::Infeasible);
        }
        let after = surrogate_value(p, &next, &aux.y)?;
        let slack = cfg.monotone_slack * before.abs().max(f64::MIN_POSITIVE);
        if after > before + slack {
            return Err(FpError::NonMonotone {
                iteration: iterations,
                before,
                after,
            });
        }
        let value = objective(p, &next)?;
        if value > current + cfg.monotone_slack * current.abs().max(f64::MIN_POSITIVE) {
            return Err(FpError::NonMonotone {
                iteration: iterations,
                before: current,
                after: value,
            });
        }
        x = next;
        trace.push(value);
        let decrease = (current - value) / current.abs().max(f64::MIN_POSITIVE);
        current = value;
        if p.n_ratios() == 0 || decrease <= cfg.tol {
            converged = true;
            break;
        }
    }
    let y = aux_update(p, &x, cfg)?.y;
    Ok(AoOutcome {
        x,
        y,
        trace,
        iterations,
        converged,
    })
}

/// Outcome of [`stationarity_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    /// Largest `|∂W/∂xᵢ − ∂H/∂xᵢ|` divided by `max(‖∇H‖∞, |H|, 1e-300)`.
    pub max_mismatch: f64,
    /// Largest absolute mismatch.
    pub max_abs_mismatch: f64,
    /// Gradient of `W(·, y#(x))` by finite differences.
    pub grad_surrogate: Vec<f64>,
    /// Gradient of `H` by finite differences.
    pub grad_objective: Vec<f64>,
    /// Coordinates where a one-sided difference was used because the point is on the boundary.
    pub one_sided: Vec<usize>,
}

/// Compares the gradient of the surrogate at `y = y#(x)` with the gradient of `H`.
///
/// Both gradients are central finite differences with step
/// `cfg.fd_step · (1 + |xᵢ|)`; a coordinate whose centered stencil leaves
/// the feasible set uses a one-sided stencil and is listed in `one_sided`.
pub fn stationarity_check<P: RatioProblem + ?Sized>(
    p: &P,
    x: &[f64],
    cfg: &FpConfig,
) -> Result<StationarityReport, FpError> {
    let y = aux_update(p, x, cfg)?.y;
    let d = p.dim();
    let mut gw = vec![0.0; d];
    let mut gh = vec![0.0; d];
    let mut one_sided = Vec::new();
    let h_val = objective(p, x)?;
    for i in 0..d {
        let h = cfg.fd_step * (1.0 + x[i].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let (up, down) = (p.contains(&xp), p.contains(&xm));
        match (down, up) {
            (true, true) => {
                gw[i] = (surrogate_value(p, &xp, &y)? - surrogate_value(p, &xm, &y)?) / (2.0 * h);
                gh[i] = (objective(p, &xp)? - objective(p, &xm)?) / (2.0 * h);
            }
            (false, false) => return Err(FpError::Infeasible),
            (down, _) => {
                // Second-order one-sided stencil (-3 f0 + 4 f1 - f2) / (2h) pointing inward.
                one_sided.push(i);
                let dir = if down { -1.0 } else { 1.0 };
                let mut x1 = x.to_vec();
                let mut x2 = x.to_vec();
                x1[i] += dir * h;
                x2[i] += dir * 2.0 * h;
                if !p.contains(&x2) {
                    return Err(FpError::Infeasible);
                }
                let stencil = |f0: f64, f1: f64, f2: f64| dir * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
                gw[i] = stencil(
                    surrogate_value(p, x, &y)?,
                    surrogate_value(p, &x1, &y)?,
                    surrogate_value(p, &x2, &y)?,
                );
                gh[i] = stencil(objective(p, x)?, objective(p, &x1)?, objective(p, &x2)?);
            }
        }
    }
    let scale = gh
        .iter()
        .fold(h_val.abs(), |m, v| m.max(v.abs()))
        .max(1e-300);
    let max_abs = gw
        .iter()
        .zip(&gh)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(StationarityReport {
        max_mismatch: max_abs / scale,
        max_abs_mismatch: max_abs,
        grad_surrogate: gw,
        grad_objective: gh,
        one_sided,
    })
}

/// Minimizer of a unimodal function on `[lo, hi]` by golden-section search.
pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let tol = rel_tol * (lo.abs().max(hi.abs())).max(f64::MIN_POSITIVE);
    for _ in 0..400 {
        if b - a <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    let (fa, fb) = (f(lo), f(hi));
    if fa < fm && fa <= fb {
        lo
    } else if fb < fm {
        hi
    } else {
        mid
    }
}

/// Test problem family: quadratic numerators over affine denominators on a box.
///
/// `Aₙ(x) = xᵀ Qₙ x + cₙᵀ x + dₙ` with `Qₙ = Lₙ Lₙᵀ` and `dₙ > 0`,
/// `Bₙ(x) = aₙᵀ x + bₙ`, and `G(x) = ½ Σᵢ gᵢ xᵢ² + hᵢ xᵢ`. The subproblem
/// is solved by cyclic coordinate golden-section search, which converges
/// because the surrogate is convex when every `Aₙ` is convex and
/// non-negative and every `Bₙ` is affine and positive on the box.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticOverAffine {
    /// Lower corner of the box.
    pub lower: Vec<f64>,
    /// Upper corner of the box.
    pub upper: Vec<f64>,
    /// Diagonal curvature `gᵢ ≥ 0` of `G`.
    pub base_quad: Vec<f64>,
    /// Linear coefficients `hᵢ` of `G`.
    pub base_lin: Vec<f64>,
    /// Factors `Lₙ` (row-major, `dim × dim`) of the numerator Hessians.
    pub num_factor: Vec<Vec<f64>>,
    /// Linear numerator coefficients `cₙ`.
    pub num_lin: Vec<Vec<f64>>,
    /// Numerator constants `dₙ`.
    pub num_const: Vec<f64>,
    /// Denominator slopes `aₙ`.
    pub den_lin: Vec<Vec<f64>>,
    /// Denominator constants `bₙ`.
    pub den_const: Vec<f64>,
    /// Coordinate sweeps per subproblem solve.
    pub sweeps: usize,
}

impl QuadraticOverAffine {
    fn quad_form(&self, n: usize, x: &[f64]) -> f64 {
        let d = self.dim();
        let l = &self.num_factor[n];
        let mut sum = 0.0;
        for j in 0..d {
            // (Lᵀ x)_j
            let mut v = 0.0;
            for i in 0..d {
                v += l[i * d + j] * x[i];
            }
            sum += v * v;
        }
        sum
    }
}

impl RatioProblem for QuadraticOverAffine {
    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn n_ratios(&self) -> usize {
        self.num_const.len()
    }

    fn base(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &xi)| 0.5 * self.base_quad[i] * xi * xi + self.base_lin[i] * xi)
            .sum()
    }

    fn numerator(&self, x: &[f64], n: usize) -> f64 {
        let lin: f64 = self.num_lin[n].iter().zip(x).map(|(c, v)| c * v).sum();
        self.quad_form(n, x) + lin + self.num_const[n]
    }

    fn denominator(&self, x: &[f64], n: usize) -> f64 {
        let lin: f64 = self.den_lin[n].iter().zip(x).map(|(c, v)| c * v).sum();
        lin + self.den_const[n]
    }

    fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    fn minimize_surrogate(&self, y: &[f64], x_start: &[f64]) -> Result<Vec<f64>, String> {
        let mut x = x_start.to_vec();
        for _ in 0..self.sweeps {
            for i in 0..self.dim() {
                let mut trial = x.clone();
                let best = golden_section_min(
                    |v| {
                        trial[i] = v;
                        surrogate_value(self, &trial, y).unwrap_or(f64::INFINITY)
                    },
                    self.lower[i],
                    self.upper[i],
                    1e-12,
                );
                let current = surrogate_value(self, &x, y).map_err(|e| e.to_string())?;
                let mut cand = x.clone();
                cand[i] = best;
                if surrogate_value(self, &cand, y).map_err(|e| e.to_string())? <= current {
                    x = cand;
                }
            }
        }
        Ok(x)
    }
}
