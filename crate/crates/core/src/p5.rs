//! Global solver for the inner convex problem via a KKT decomposition.
//!
//! For fixed fractional-programming auxiliaries `z`, ratio `y` and
//! resolutions `s`, the inner problem maximizes
//!
//! ```text
//! Σₙ Uₙ(rₙ) − y [c_e Σₙ (κ_ms Fₙ (f_ms,ₙ)² + κₙ Gₙ (f_vu,ₙ)²) + c_t T]
//!           − y c_e Σₙ [ (pₙ + p_cir,ₙ)² qₙ² zₙ + 1 / (4 (rₙ νₙ)² zₙ) ]
//! ```
//!
//! over bandwidth, power, server and user CPU frequencies and the delay bound
//! `T`, subject to the bandwidth, power and server budgets, the user CPU caps
//! and `tₙ ≤ T`. Here `qₙ = sₙ μₙ Λₙ` is the raw bit count of a session.
//!
//! The solution is assembled from nested one-dimensional searches, each over
//! a multiplier whose defining sum is monotone:
//!
//! 1. For prices `(α, β)` and delay prices `ζ`, each user's power solves a
//!    scalar stationarity equation ([`P5Solver::solve_p_tilde`]) and the
//!    matching bandwidth follows in closed form through the Lambert W
//!    function ([`P5Solver::compute_psi`]).
//! 2. `α` is chosen so the bandwidths fill the budget
//!    ([`P5Solver::solve_alpha_breve`]), then `β` so the powers respect theirs
//!    ([`P5Solver::solve_beta_acute`]).
//! 3. CPU frequencies follow from cube-root rules, with a server price `γ`
//!    found when the server budget binds ([`P5Solver::solve_f_acute`]).
//! 4. For a delay bound `T`, the delay prices `ζ` solve a complementarity
//!    system `h(ζ | T) = 0` by Gauss–Seidel coordinate searches
//!    ([`P5Solver::solve_zeta_grave`]), each coordinate searched inside the
//!    sign-conditioned box `[0, ζₙ^upper]`.
//! 5. `T` is chosen so that `Σₙ ζₙ = y c_t` ([`P5Solver::solve_t_sharp`]).
//!
//! Searches are warm-started from the previous root of the same level, which
//! leaves every search a bracketed monotone solve while cutting the number of
//! map evaluations by an order of magnitude in the nested setting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Allocation, LogUtility, ModelError, Multipliers, SystemParams};
use crate::rootfind::{
    inverse_square_minus_linear_root, lambert_w_plus_one, search_bounded_traced, search_positive_traced,
    standard_bisection, BisectionConfig, Bounded, Expansion, RootError,
};

const LN2: f64 = std::f64::consts::LN_2;

/// Errors of the inner solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum P5Error {
    /// A scalar search failed; `level` names the searched quantity.
    #[error("{level} search failed: {source}")]
    Root {
        level: &'static str,
        #[source]
        source: RootError,
    },
    /// A model evaluation failed.
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Invalid inputs to a closed form.
    #[error("domain error: {0}")]
    Domain(String),
    /// No delay price brings user `user` down to the bound.
    #[error("delay bound {bound} is unattainable for user {user} (best delay {best})")]
    Unattainable { user: usize, bound: f64, best: f64 },
    /// Coordinate sweeps stopped reducing the complementarity residual.
    #[error("coordinate sweeps stagnated after {sweeps} sweeps at residual {residual}")]
    Stagnation { sweeps: usize, residual: f64 },
    /// The assembled solution failed the KKT audit.
    #[error("KKT audit failed: max normalized residual {}", .0.max_residual())]
    Audit(Box<KktReport>),
}

fn root_err(level: &'static str) -> impl Fn(RootError) -> P5Error {
    move |source| P5Error::Root { level, source }
}

/// How bandwidth and power are treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    /// Optimized through the price searches.
    Optimize,
    /// Held at the given values.
    Fixed { bandwidth: Vec<f64>, power: Vec<f64> },
}

/// How CPU frequencies are treated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeMode {
    /// Optimized through the cube-root rules.
    Optimize,
    /// Held at the given values.
    Fixed {
        server_freq: Vec<f64>,
        user_freq: Vec<f64>,
    },
}

/// Inputs of one inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct P5Instance {
    pub params: SystemParams,
    pub utilities: Vec<LogUtility>,
    /// Fractional-programming auxiliaries, one per user, all positive.
    pub z: Vec<f64>,
    /// Utility-per-cost ratio `y > 0`.
    pub ratio: f64,
    /// Resolutions in pixels.
    pub resolution: Vec<f64>,
    pub comm: CommMode,
    pub compute: ComputeMode,
}

/// Optimal auxiliary of the transmission-energy ratio,
/// `1 / (2 (p + p_cir) q · r ν)`.
pub fn transmission_aux(params: &SystemParams, alloc: &Allocation, n: usize) -> Result<f64, ModelError> {
    let u = &params.users[n];
    let r = u.rate(alloc.bandwidth[n], alloc.power[n])?;
    let num = (alloc.power[n] + u.circuit_power) * u.raw_bits(alloc.resolution[n]);
    let den = r * u.compression_ratio;
    if !(num > 0.0) || !(den > 0.0) {
        return Err(ModelError::DivideByZero {
            component: "transmission",
            user: n,
        });
    }
    Ok(crate::fp::optimal_aux(num, den))
}

impl P5Instance {
    /// Instance with both resource groups optimized and `z` refreshed at `alloc`.
    pub fn at_allocation(
        params: &SystemParams,
        utilities: &[LogUtility],
        alloc: &Allocation,
        ratio: f64,
    ) -> Result<Self, ModelError> {
        let z = (0..params.n_users())
            .map(|n| transmission_aux(params, alloc, n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            params: params.clone(),
            utilities: utilities.to_vec(),
            z,
            ratio,
            resolution: alloc.resolution.clone(),
            comm: CommMode::Optimize,
            compute: ComputeMode::Optimize,
        })
    }

    /// Checks lengths and signs.
    pub fn validate(&self) -> Result<(), P5Error> {
        self.params.validate()?;
        let n = self.params.n_users();
        for (what, len) in [
            ("utilities", self.utilities.len()),
            ("z", self.z.len()),
            ("resolution", self.resolution.len()),
        ] {
            if len != n {
                return Err(ModelError::Length { what, got: len, expected: n }.into());
            }
        }
        for u in &self.utilities {
            u.validate()?;
        }
        if let Some(bad) = self.z.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(P5Error::Domain(format!("z must be positive, got {bad}")));
        }
        if !(self.ratio > 0.0) || !self.ratio.is_finite() {
            return Err(P5Error::Domain(format!("ratio must be positive, got {}", self.ratio)));
        }
        if let Some(bad) = self.resolution.iter().find(|v| !(**v > 0.0)) {
            return Err(P5Error::Domain(format!("resolution must be positive, got {bad}")));
        }
        if let CommMode::Fixed { bandwidth, power } = &self.comm {
            if bandwidth.len() != n || power.len() != n {
                return Err(P5Error::Domain("fixed bandwidth/power must have one entry per user".into()));
            }
        }
        if let ComputeMode::Fixed { server_freq, user_freq } = &self.compute {
            if server_freq.len() != n || user_freq.len() != n {
                return Err(P5Error::Domain("fixed frequencies must have one entry per user".into()));
            }
        }
        Ok(())
    }

    /// Inner objective at `(b, p, f_ms, f_vu, T)` with the instance's `s`.
    pub fn objective(&self, alloc: &Allocation) -> Result<f64, ModelError> {
        let p = &self.params;
        let y = self.ratio;
        let mut value = -y * p.delay_weight * alloc.delay_bound;
        for n in 0..p.n_users() {
            let u = &p.users[n];
            let s = self.resolution[n];
            let cycles = p.workload.energy_cycles(s, u.frames);
            let r = u.rate(alloc.bandwidth[n], alloc.power[n])?;
            if !(r > 0.0) {
                return Err(ModelError::DivideByZero {
                    component: "transmission",
                    user: n,
                });
            }
            let a = (alloc.power[n] + u.circuit_power) * u.raw_bits(s);
            let b = r * u.compression_ratio;
            value += self.utilities[n].value(r, s);
            value -= y
                * p.energy_weight
                * (p.server_capacitance * cycles * alloc.server_freq[n].powi(2)
                    + u.capacitance * cycles * alloc.user_freq[n].powi(2));
            value -= y * p.energy_weight * crate::fp::quadratic_term(a, b, self.z[n]);
        }
        Ok(value)
    }
}

/// Tolerances and switches of the inner solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P5Config {
    /// Shared bracketing settings; per-level tolerances below override `rel_tol`.
    pub bracket: BisectionConfig,
    /// Log-scale tolerance of the power search.
    pub power_tol: f64,
    /// Log-scale tolerance of the bandwidth-price search.
    pub alpha_tol: f64,
    /// Log-scale tolerance of the power-price search.
    pub beta_tol: f64,
    /// Log-scale tolerance of the server-price search.
    pub gamma_tol: f64,
    /// Log-scale tolerance of each delay-price coordinate search.
    pub zeta_tol: f64,
    /// Log-scale tolerance of the delay-bound search.
    pub delay_bound_tol: f64,
    /// Relative miss of `Σ ζₙ = y c_t` that triggers a refined delay-bound search.
    pub price_sum_tol: f64,
    /// Stop coordinate sweeps once the normalized complementarity residual is below this.
    pub complementarity_tol: f64,
    /// Sweeps allowed without a 10% residual decrease before reporting stagnation.
    pub stagnation_sweeps: usize,
    /// First log step of warm-started expansions.
    pub warm_step: f64,
    /// Frequencies are floored at this fraction of their maximum.
    pub freq_floor: f64,
    /// Normalized residual accepted by the KKT audit.
    pub kkt_tol: f64,
    /// Fail the solve when the audit exceeds `kkt_tol`.
    pub enforce_audit: bool,
    /// Record every completed search in the diagnostics.
    pub record_trace: bool,
}

impl Default for P5Config {
    fn default() -> Self {
        Self {
            bracket: BisectionConfig::brent(1e-12),
            power_tol: 1e-14,
            alpha_tol: 1e-13,
            beta_tol: 1e-12,
            gamma_tol: 1e-13,
            zeta_tol: 1e-11,
            delay_bound_tol: 1e-9,
            price_sum_tol: 1e-8,
            complementarity_tol: 1e-9,
            stagnation_sweeps: 50,
            warm_step: 1e-3,
            freq_floor: 1e-9,
            kkt_tol: 1e-6,
            enforce_audit: true,
            record_trace: false,
        }
    }
}

/// One completed scalar search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub level: String,
    pub root: f64,
    pub evaluations: usize,
}

/// Evaluation counters and optional search log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct P5Diagnostics {
    pub power_evals: usize,
    pub alpha_evals: usize,
    pub beta_evals: usize,
    pub gamma_evals: usize,
    pub zeta_evals: usize,
    pub delay_bound_evals: usize,
    pub power_searches: usize,
    pub alpha_searches: usize,
    pub beta_searches: usize,
    pub zeta_searches: usize,
    pub assembles: usize,
    pub sweeps: usize,
    pub searches: Vec<SearchRecord>,
}

/// Allocation and multipliers produced for given delay prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acute {
    pub bandwidth: Vec<f64>,
    pub power: Vec<f64>,
    pub server_freq: Vec<f64>,
    pub user_freq: Vec<f64>,
    pub rates: Vec<f64>,
    pub delays: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: Vec<f64>,
}

/// Full inner solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P5Solution {
    pub allocation: Allocation,
    pub multipliers: Multipliers,
    /// Inner objective at the solution.
    pub objective: f64,
    pub audit: KktReport,
    pub diagnostics: P5Diagnostics,
}

/// Per-user constants of an instance.
#[derive(Debug, Clone, Copy)]
struct UserConsts {
    snr: f64,
    raw_bits: f64,
    nu: f64,
    circuit: f64,
    delay_cycles: f64,
    energy_cycles: f64,
    user_cap: f64,
    user_kappa: f64,
    s: f64,
    z: f64,
    util: LogUtility,
}

/// Stateful inner solver holding warm-start caches for one instance.
#[derive(Debug, Clone)]
pub struct P5Solver {
    inst: P5Instance,
    cfg: P5Config,
    users: Vec<UserConsts>,
    warm: WarmStart,
    diag: P5Diagnostics,
}

/// Last root of one search level and the slope of its map there, used to
/// start the next search of the same level.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Warm {
    pub root: Option<f64>,
    /// Derivative of the searched map with respect to the log of its argument.
    pub slope: Option<f64>,
}

impl Warm {
    fn store(&mut self, root: f64, slope: Option<f64>) {
        self.root = Some(root);
        if slope.is_some() {
            self.slope = slope;
        }
    }
}

/// Warm starts for every search level; may be carried between solves of
/// nearby instances with the same number of users.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarmStart {
    pub power: Vec<Warm>,
    /// Bandwidth price while the power price is positive.
    pub alpha: Warm,
    /// Bandwidth price at zero power price.
    pub alpha_free: Warm,
    pub beta: Warm,
    pub gamma: Warm,
    pub zeta: Vec<Warm>,
    /// Last delay-price vector returned by the coordinate sweeps.
    pub zeta_vector: Option<Vec<f64>>,
    pub bound: Warm,
}

impl WarmStart {
    /// Empty warm starts for `n` users.
    pub fn cold(n: usize) -> Self {
        Self {
            power: vec![Warm::default(); n],
            zeta: vec![Warm::default(); n],
            ..Self::default()
        }
    }
}

/// `[ln(1 + ψ) − ψ/(1 + ψ)] / ln 2`, the derivative of the rate in bandwidth at SNR ratio `ψ`.
pub fn bandwidth_slope(psi: f64) -> f64 {
    if psi < 1e-2 {
        // Σ_{k≥2} (−1)^k (k − 1)/k ψ^k
        let mut sum = 0.0;
        let mut pow = psi;
        for k in 2..=16 {
            pow *= psi;
            let term = (k as f64 - 1.0) / k as f64 * pow;
            sum += if k % 2 == 0 { term } else { -term };
        }
        sum / LN2
    } else {
        (psi.ln_1p() - psi / (1.0 + psi)) / LN2
    }
}

/// `(1 + ψ) ln(1 + ψ) − ψ`, the inverse of [`psi_from_ratio`].
pub fn snr_ratio_inverse(psi: f64) -> f64 {
    if psi < 1e-2 {
        // Σ_{k≥2} (−1)^k ψ^k / (k (k − 1))
        let mut sum = 0.0;
        let mut pow = psi;
        for k in 2..=16 {
            pow *= psi;
            let term = pow / (k * (k - 1)) as f64;
            sum += if k % 2 == 0 { term } else { -term };
        }
        sum
    } else {
        (1.0 + psi) * psi.ln_1p() - psi
    }
}

/// `ln(1 + ψ)/ψ`, continuous at `ψ = 0`.
fn log1p_over(psi: f64) -> f64 {
    if psi < 1e-8 {
        1.0 - 0.5 * psi
    } else {
        psi.ln_1p() / psi
    }
}

impl P5Solver {
    /// Prepares a solver; fails on invalid instances.
    pub fn new(inst: P5Instance, cfg: P5Config) -> Result<Self, P5Error> {
        inst.validate()?;
        let p = &inst.params;
        let users = (0..p.n_users())
            .map(|n| {
                let u = &p.users[n];
                let s = inst.resolution[n];
                UserConsts {
                    snr: u.snr_coeff(),
                    raw_bits: u.raw_bits(s),
                    nu: u.compression_ratio,
                    circuit: u.circuit_power,
                    delay_cycles: p.workload.delay_cycles(s, u.frames),
                    energy_cycles: p.workload.energy_cycles(s, u.frames),
                    user_cap: u.freq_max,
                    user_kappa: u.capacitance,
                    s,
                    z: inst.z[n],
                    util: inst.utilities[n],
                }
            })
            .collect();
        let n = p.n_users();
        Ok(Self {
            inst,
            cfg,
            users,
            warm: WarmStart::cold(n),
            diag: P5Diagnostics::default(),
        })
    }

    /// Replaces the warm starts; ignored when the user count differs.
    pub fn set_warm_start(&mut self, warm: WarmStart) {
        if warm.power.len() == self.n() && warm.zeta.len() == self.n() {
            self.warm = warm;
        }
    }

    /// Current warm starts.
    pub fn warm_start(&self) -> &WarmStart {
        &self.warm
    }

    /// The instance being solved.
    pub fn instance(&self) -> &P5Instance {
        &self.inst
    }

    /// Evaluation counters so far.
    pub fn diagnostics(&self) -> &P5Diagnostics {
        &self.diag
    }

    fn n(&self) -> usize {
        self.users.len()
    }

    fn y(&self) -> f64 {
        self.inst.ratio
    }

    fn ce(&self) -> f64 {
        self.inst.params.energy_weight
    }

    fn ct(&self) -> f64 {
        self.inst.params.delay_weight
    }

    fn record(&mut self, level: &str, root: f64, evaluations: usize) {
        if self.cfg.record_trace {
            self.diag.searches.push(SearchRecord {
                level: level.to_string(),
                root,
                evaluations,
            });
        }
    }

    fn cfg_with(&self, tol: f64) -> BisectionConfig {
        BisectionConfig {
            rel_tol: tol,
            ..self.cfg.bracket
        }
    }

    /// Expansion for a level: small steps with the stored slope when warm,
    /// otherwise `cold_step`.
    fn expansion(&self, warm: &Warm, cold_step: f64) -> Expansion {
        if warm.root.is_some() {
            Expansion::warm(self.cfg.warm_step).with_slope(warm.slope)
        } else {
            Expansion::warm(cold_step)
        }
    }

    // ----- closed forms of the communication block -----

    /// Power-dependent part of the power price, `β + 2 (p + p_cir) y c_e z q²`.
    fn power_price(&self, p: f64, beta: f64, n: usize) -> f64 {
        let u = &self.users[n];
        beta + 2.0 * (p + u.circuit) * self.y() * self.ce() * u.z * u.raw_bits * u.raw_bits
    }

    /// Optimal SNR ratio `ψₙ = exp{1 + W((1/e)(g α / (D σ²) − 1))} − 1` where `D` is the power price.
    pub fn compute_psi(&self, p: f64, alpha: f64, beta: f64, n: usize) -> Result<f64, P5Error> {
        let d = self.power_price(p, beta, n);
        if !(d > 0.0) {
            return Err(P5Error::Domain(format!(
                "power price {d} must be positive for user {n}"
            )));
        }
        if !(alpha > 0.0) {
            return Err(P5Error::Domain(format!("bandwidth price {alpha} must be positive")));
        }
        psi_from_ratio(self.users[n].snr * alpha / d)
    }

    /// Rate reached at power `p` with the bandwidth implied by `ψ`, `g p log₂(1 + ψ)/(σ² ψ)`.
    pub fn rate_bar(&self, p: f64, alpha: f64, beta: f64, n: usize) -> Result<f64, P5Error> {
        let psi = self.compute_psi(p, alpha, beta, n)?;
        Ok(self.users[n].snr * p * log1p_over(psi) / LN2)
    }

    /// Marginal value of rate: utility slope plus the energy and delay terms.
    fn marginal(&self, r: f64, zeta_n: f64, n: usize) -> f64 {
        let u = &self.users[n];
        u.util.rate_derivative(r, u.s)
            + self.y() * self.ce() / (2.0 * u.z * r * r * r * u.nu * u.nu)
            + zeta_n * u.raw_bits / (r * r * u.nu)
    }

    /// Left-hand side of the power stationarity equation, decreasing in `p`.
    pub fn power_stationarity_lhs(&self, p: f64, alpha: f64, beta: f64, zeta_n: f64, n: usize) -> Result<f64, P5Error> {
        let psi = self.compute_psi(p, alpha, beta, n)?;
        let r = self.users[n].snr * p * log1p_over(psi) / LN2;
        Ok(self.marginal(r, zeta_n, n) * bandwidth_slope(psi))
    }

    fn power_range(&self) -> (f64, f64) {
        let pmax = self.inst.params.power_max;
        (1e-12 * pmax, self.n() as f64 * pmax)
    }

    /// Power solving the stationarity equation, searched on `(10⁻¹² p_max, N p_max]`.
    ///
    /// Fails with a bracket error when `α` is not attained on that range.
    pub fn solve_p_tilde(&mut self, alpha: f64, beta: f64, zeta_n: f64, n: usize) -> Result<f64, P5Error> {
        let (lo, hi) = self.power_range();
        let cfg = self.cfg_with(self.cfg.power_tol);
        let mut evals = 0;
        let this = &*self;
        let mut lhs = |p: f64| {
            evals += 1;
            this.power_stationarity_lhs(p, alpha, beta, zeta_n, n).unwrap_or(f64::NAN)
        };
        let r = crate::rootfind::log_bisection(&mut lhs, alpha, lo, hi, &cfg).map_err(root_err("power"))?;
        self.diag.power_evals += evals;
        Ok(r)
    }

    /// Power search clamped to the range; keeps sums monotone when the root
    /// leaves it. Returns `(p̃, ψ(p̃))`.
    fn p_tilde_clamped(&mut self, alpha: f64, beta: f64, zeta_n: f64, n: usize) -> Result<(f64, f64), P5Error> {
        let (lo, hi) = self.power_range();
        let guess = self.warm.power[n].root.unwrap_or(self.inst.params.power_max / self.n() as f64);
        let cfg = self.cfg_with(self.cfg.power_tol);
        let warm = self.expansion(&self.warm.power[n], 0.5);
        let mut evals = 0;
        let this = &*self;
        let mut lhs = |p: f64| {
            evals += 1;
            this.power_stationarity_lhs(p, alpha, beta, zeta_n, n).unwrap_or(f64::NAN)
        };
        let (out, slope) =
            search_bounded_traced(&mut lhs, alpha, guess, lo, hi, warm, &cfg).map_err(root_err("power"))?;
        self.diag.power_evals += evals;
        self.diag.power_searches += 1;
        let p = match out {
            Bounded::Root(p) => p,
            Bounded::BelowRange => lo,
            Bounded::AboveRange => hi,
        };
        self.warm.power[n].store(p, slope);
        Ok((p, self.compute_psi(p, alpha, beta, n)?))
    }

    /// Bandwidth paired with [`Self::solve_p_tilde`], `g p̃ / (σ² ψ(p̃))`.
    /// Returns `(b̃, p̃)`.
    pub fn solve_b_tilde(&mut self, alpha: f64, beta: f64, zeta_n: f64, n: usize) -> Result<(f64, f64), P5Error> {
        let (p, psi) = self.p_tilde_clamped(alpha, beta, zeta_n, n)?;
        Ok((self.users[n].snr * p / psi, p))
    }

    fn comm_given(&mut self, alpha: f64, beta: f64, zeta: &[f64]) -> Result<(Vec<f64>, Vec<f64>), P5Error> {
        let n = self.n();
        let mut b = Vec::with_capacity(n);
        let mut p = Vec::with_capacity(n);
        for i in 0..n {
            let (bi, pi) = self.solve_b_tilde(alpha, beta, zeta[i], i)?;
            b.push(bi);
            p.push(pi);
        }
        Ok((b, p))
    }

    fn alpha_scale(&self, zeta: &[f64]) -> f64 {
        let n = self.n() as f64;
        let b0 = self.inst.params.bandwidth_max / n;
        let p0 = self.inst.params.power_max / n;
        let mut sum = 0.0;
        for i in 0..self.n() {
            let psi = self.users[i].snr * p0 / b0;
            let r = b0 * psi.ln_1p() / LN2;
            sum += self.marginal(r, zeta[i], i) * bandwidth_slope(psi);
        }
        (sum / n).max(f64::MIN_POSITIVE)
    }

    /// Bandwidth price making the bandwidths fill the budget at power price `β`.
    pub fn solve_alpha_breve(&mut self, beta: f64, zeta: &[f64]) -> Result<f64, P5Error> {
        let target = self.inst.params.bandwidth_max;
        // Separate warm starts for the slack-power branch and the priced branch.
        let cached = if beta == 0.0 || self.warm.alpha.root.is_none() { self.warm.alpha_free } else { self.warm.alpha };
        let guess = match cached.root {
            Some(a) => a,
            None => self.alpha_scale(zeta),
        };
        let expansion = self.expansion(&cached, 0.5);
        let cfg = self.cfg_with(self.cfg.alpha_tol);
        let mut evals = 0;
        let mut failure: Option<P5Error> = None;
        let result = {
            let mut total_b = |alpha: f64| {
                evals += 1;
                match self.comm_given(alpha, beta, zeta) {
                    Ok((b, _)) => b.iter().sum::<f64>(),
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            search_positive_traced(&mut total_b, target, guess, expansion, &cfg)
        };
        self.diag.alpha_evals += evals;
        self.diag.alpha_searches += 1;
        if let Some(e) = failure {
            return Err(e);
        }
        let (alpha, slope) = result.map_err(root_err("bandwidth price"))?;
        if beta == 0.0 {
            self.warm.alpha_free.store(alpha, slope);
        } else {
            self.warm.alpha.store(alpha, slope);
        }
        self.record("alpha", alpha, evals);
        Ok(alpha)
    }

    fn total_power_at(&mut self, beta: f64, zeta: &[f64]) -> Result<(f64, f64), P5Error> {
        let alpha = self.solve_alpha_breve(beta, zeta)?;
        let (_, p) = self.comm_given(alpha, beta, zeta)?;
        Ok((p.iter().sum(), alpha))
    }

    fn beta_scale(&self, zeta: &[f64]) -> f64 {
        let n = self.n() as f64;
        let b0 = self.inst.params.bandwidth_max / n;
        let p0 = self.inst.params.power_max / n;
        let mut sum = 0.0;
        for i in 0..self.n() {
            let psi = self.users[i].snr * p0 / b0;
            let r = b0 * psi.ln_1p() / LN2;
            sum += self.marginal(r, zeta[i], i) * self.users[i].snr / ((1.0 + psi) * LN2);
        }
        (sum / n).max(f64::MIN_POSITIVE)
    }

    /// Power price: zero when the powers at `β = 0` fit the budget, otherwise
    /// the price making them sum to `p_max`. Returns `(β, α)`.
    pub fn solve_beta_acute(&mut self, zeta: &[f64]) -> Result<(f64, f64), P5Error> {
        let pmax = self.inst.params.power_max;
        let (sum0, alpha0) = self.total_power_at(0.0, zeta)?;
        if sum0 <= pmax {
            return Ok((0.0, alpha0));
        }
        let guess = self.warm.beta.root.unwrap_or_else(|| self.beta_scale(zeta));
        let expansion = self.expansion(&self.warm.beta, 0.5);
        let cfg = self.cfg_with(self.cfg.beta_tol);
        let mut evals = 0;
        let mut failure: Option<P5Error> = None;
        let result = {
            let mut total_p = |beta: f64| {
                evals += 1;
                match self.total_power_at(beta, zeta) {
                    Ok((s, _)) => s,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            search_positive_traced(&mut total_p, pmax, guess, expansion, &cfg)
        };
        self.diag.beta_evals += evals;
        self.diag.beta_searches += 1;
        if let Some(e) = failure {
            return Err(e);
        }
        let (beta, slope) = result.map_err(root_err("power price"))?;
        self.warm.beta.store(beta, slope);
        self.record("beta", beta, evals);
        let alpha = self.solve_alpha_breve(beta, zeta)?;
        Ok((beta, alpha))
    }

    // ----- compute block -----

    fn server_coeff(&self, n: usize) -> f64 {
        2.0 * self.y() * self.ce() * self.inst.params.server_capacitance * self.users[n].energy_cycles
    }

    fn user_coeff(&self, n: usize) -> f64 {
        2.0 * self.y() * self.ce() * self.users[n].user_kappa * self.users[n].energy_cycles
    }

    fn server_floor(&self) -> f64 {
        self.cfg.freq_floor * self.inst.params.server_freq_max
    }

    fn server_freq_at(&self, gamma: f64, zeta_n: f64, n: usize, cfg: &BisectionConfig) -> Result<f64, P5Error> {
        let c_num = zeta_n * self.users[n].delay_cycles;
        let f = inverse_square_minus_linear_root(c_num, self.server_coeff(n), gamma, cfg)
            .map_err(root_err("server frequency"))?;
        Ok(f.max(self.server_floor()))
    }

    /// CPU frequencies and their prices for delay prices `ζ`.
    ///
    /// User side: `min{cap, ∛(ζ B / (2 G y c_e κ))}` with `δ` from stationarity
    /// at the cap. Server side: the same cube root when the sum fits the
    /// budget (`γ = 0`), otherwise `γ > 0` is searched so that the positive
    /// roots of `ζ A / x² − 2 y c_e κ F x = γ` sum to the budget. Frequencies are
    /// floored at a tiny fraction of their maximum so delays stay finite when
    /// `ζₙ = 0`.
    pub fn solve_f_acute(&mut self, zeta: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>), P5Error> {
        let n = self.n();
        let mut f_vu = Vec::with_capacity(n);
        let mut delta = Vec::with_capacity(n);
        for i in 0..n {
            let u = &self.users[i];
            let c = self.user_coeff(i);
            let raw = (zeta[i] * u.delay_cycles / c).cbrt();
            if raw >= u.user_cap {
                f_vu.push(u.user_cap);
                let d = zeta[i] * u.delay_cycles / (u.user_cap * u.user_cap) - c * u.user_cap;
                delta.push(d.max(0.0));
            } else {
                f_vu.push(raw.max(self.cfg.freq_floor * u.user_cap));
                delta.push(0.0);
            }
        }
        let fmax = self.inst.params.server_freq_max;
        let cfg = self.cfg_with(self.cfg.gamma_tol);
        let free: Vec<f64> = (0..n)
            .map(|i| self.server_freq_at(0.0, zeta[i], i, &cfg))
            .collect::<Result<_, _>>()?;
        if free.iter().sum::<f64>() <= fmax {
            return Ok((free, f_vu, 0.0, delta));
        }
        let guess = self.warm.gamma.root.unwrap_or_else(|| {
            (0..n).map(|i| self.server_coeff(i)).sum::<f64>() / n as f64 * fmax / n as f64
        });
        let expansion = self.expansion(&self.warm.gamma, 0.5);
        let mut evals = 0;
        let mut failure = None;
        let result = {
            let this = &*self;
            let mut total = |gamma: f64| {
                evals += 1;
                let mut sum = 0.0;
                for i in 0..n {
                    match this.server_freq_at(gamma, zeta[i], i, &cfg) {
                        Ok(f) => sum += f,
                        Err(e) => {
                            failure.get_or_insert(e);
                            return f64::NAN;
                        }
                    }
                }
                sum
            };
            search_positive_traced(&mut total, fmax, guess, expansion, &cfg)
        };
        self.diag.gamma_evals += evals;
        if let Some(e) = failure {
            return Err(e);
        }
        let (gamma, slope) = result.map_err(root_err("server price"))?;
        self.warm.gamma.store(gamma, slope);
        self.record("gamma", gamma, evals);
        let f_ms = (0..n)
            .map(|i| self.server_freq_at(gamma, zeta[i], i, &cfg))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((f_ms, f_vu, gamma, delta))
    }

    fn delays_of(&self, b: &[f64], p: &[f64], f_ms: &[f64], f_vu: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut rates = Vec::with_capacity(self.n());
        let mut delays = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let u = &self.users[i];
            let r = crate::model::rate_from_snr_coeff(b[i], p[i], u.snr).unwrap_or(0.0);
            rates.push(r);
            delays.push(u.delay_cycles / f_ms[i] + u.raw_bits / (r * u.nu) + u.delay_cycles / f_vu[i]);
        }
        (rates, delays)
    }

    /// Allocation and prices for delay prices `ζ`: power price, bandwidth
    /// price, per-user bandwidth and power, then CPU frequencies.
    pub fn assemble_acute(&mut self, zeta: &[f64]) -> Result<Acute, P5Error> {
        self.diag.assembles += 1;
        let (b, p, alpha, beta) = match self.inst.comm.clone() {
            CommMode::Optimize => {
                let (beta, alpha) = self.solve_beta_acute(zeta)?;
                let (b, p) = self.comm_given(alpha, beta, zeta)?;
                (b, p, alpha, beta)
            }
            CommMode::Fixed { bandwidth, power } => (bandwidth, power, 0.0, 0.0),
        };
        let (f_ms, f_vu, gamma, delta) = match self.inst.compute.clone() {
            ComputeMode::Optimize => self.solve_f_acute(zeta)?,
            ComputeMode::Fixed { server_freq, user_freq } => {
                let n = self.n();
                (server_freq, user_freq, 0.0, vec![0.0; n])
            }
        };
        let (rates, delays) = self.delays_of(&b, &p, &f_ms, &f_vu);
        Ok(Acute {
            bandwidth: b,
            power: p,
            server_freq: f_ms,
            user_freq: f_vu,
            rates,
            delays,
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    /// Lower bound on user `n`'s delay when its delay price is zero, if one is
    /// available without a solve (both frequencies sit at their floors).
    fn zero_price_delay_floor(&self, n: usize) -> Option<f64> {
        match self.inst.compute {
            ComputeMode::Optimize => {
                let u = &self.users[n];
                Some(u.delay_cycles / self.server_floor() + u.delay_cycles / (self.cfg.freq_floor * u.user_cap))
            }
            ComputeMode::Fixed { .. } => None,
        }
    }

    /// Infimum of user `n`'s delay over the feasible set: all bandwidth and
    /// power, full CPU frequencies, or the fixed values where a group is fixed.
    fn attainable_delay_floor(&self, n: usize) -> f64 {
        let u = &self.users[n];
        let params = &self.inst.params;
        let rate = match &self.inst.comm {
            CommMode::Optimize => crate::model::rate_from_snr_coeff(params.bandwidth_max, params.power_max, u.snr),
            CommMode::Fixed { bandwidth, power } => crate::model::rate_from_snr_coeff(bandwidth[n], power[n], u.snr),
        }
        .unwrap_or(f64::INFINITY);
        let (f_ms, f_vu) = match &self.inst.compute {
            ComputeMode::Optimize => (params.server_freq_max, u.user_cap),
            ComputeMode::Fixed { server_freq, user_freq } => (server_freq[n], user_freq[n]),
        };
        u.delay_cycles / f_ms + u.raw_bits / (rate * u.nu) + u.delay_cycles / f_vu
    }

    /// Delay of user `n` when its own price is zeroed.
    fn delay_with_zeroed(&mut self, zeta: &[f64], n: usize) -> Result<f64, P5Error> {
        let mut z0 = zeta.to_vec();
        z0[n] = 0.0;
        Ok(self.assemble_acute(&z0)?.delays[n])
    }

    fn zeroed_meets_bound(&mut self, zeta: &[f64], n: usize, bound: f64) -> Result<bool, P5Error> {
        if let Some(floor) = self.zero_price_delay_floor(n) {
            if floor > bound {
                return Ok(false);
            }
        }
        Ok(self.delay_with_zeroed(zeta, n)? <= bound)
    }

    /// Complementarity map: `hₙ = −ζₙ` when user `n` meets the bound with its
    /// price zeroed, otherwise `tₙ(ζ) − T`.
    pub fn h_vector(&mut self, zeta: &[f64], bound: f64) -> Result<Vec<f64>, P5Error> {
        let acute = self.assemble_acute(zeta)?;
        let mut h = Vec::with_capacity(self.n());
        for n in 0..self.n() {
            if self.zeroed_meets_bound(zeta, n, bound)? {
                h.push(-zeta[n]);
            } else {
                h.push(acute.delays[n] - bound);
            }
        }
        Ok(h)
    }

    fn h_normalized(&mut self, zeta: &[f64], bound: f64) -> Result<Vec<f64>, P5Error> {
        let acute = self.assemble_acute(zeta)?;
        let scale = self.y() * self.ct();
        let mut h = Vec::with_capacity(self.n());
        for n in 0..self.n() {
            if zeta[n] == 0.0 || self.zeroed_meets_bound(zeta, n, bound)? {
                if zeta[n] == 0.0 && acute.delays[n] > bound {
                    h.push((acute.delays[n] - bound) / bound);
                } else {
                    h.push(-zeta[n] / scale);
                }
            } else {
                h.push((acute.delays[n] - bound) / bound);
            }
        }
        Ok(h)
    }

    /// Root in `ζₙ` of `tₙ(ζ) = T` with the other prices fixed; zero when the
    /// bound is met with a zero price.
    fn solve_coordinate(&mut self, zeta: &mut [f64], n: usize, bound: f64, guess: f64) -> Result<f64, P5Error> {
        let floor = self.attainable_delay_floor(n);
        if bound <= floor {
            return Err(P5Error::Unattainable { user: n, bound, best: floor });
        }
        if self.zeroed_meets_bound(zeta, n, bound)? {
            zeta[n] = 0.0;
            return Ok(0.0);
        }
        let cfg = self.cfg_with(self.cfg.zeta_tol);
        let expansion = if guess > 0.0 {
            Expansion::warm(self.cfg.warm_step).with_slope(self.warm.zeta[n].slope)
        } else {
            Expansion::warm(0.5)
        };
        let probe = if guess > 0.0 { guess } else { self.y() * self.ct() / self.n() as f64 };
        let mut evals = 0;
        let mut failure = None;
        let mut best = f64::INFINITY;
        let result = {
            let mut work = zeta.to_vec();
            let mut delay = |v: f64| {
                evals += 1;
                work[n] = v;
                match self.assemble_acute(&work) {
                    Ok(a) => {
                        best = best.min(a.delays[n]);
                        a.delays[n]
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            search_positive_traced(&mut delay, bound, probe, expansion, &cfg)
        };
        self.diag.zeta_evals += evals;
        self.diag.zeta_searches += 1;
        if let Some(e) = failure {
            return Err(e);
        }
        match result {
            Ok((v, slope)) => {
                zeta[n] = v;
                self.warm.zeta[n].store(v, slope);
                self.record("zeta", v, evals);
                Ok(v)
            }
            Err(RootError::NoBracket { .. }) => Err(P5Error::Unattainable { user: n, bound, best }),
            Err(e) => Err(root_err("delay price")(e)),
        }
    }

    /// Largest useful price for user `n` alone: the root of `hₙ` along
    /// `[0, …, ζ, …, 0]`, or zero when the bound already holds at zero price.
    pub fn zeta_upper(&mut self, n: usize, bound: f64) -> Result<f64, P5Error> {
        let mut zeta = vec![0.0; self.n()];
        let guess = self.y() * self.ct();
        self.solve_coordinate(&mut zeta, n, bound, guess)
    }

    /// Delay prices solving `h(ζ | T) = 0` by Gauss–Seidel coordinate sweeps.
    pub fn solve_zeta_grave(&mut self, bound: f64) -> Result<Vec<f64>, P5Error> {
        let n = self.n();
        let mut zeta = self
            .warm
            .zeta_vector
            .clone()
            .unwrap_or_else(|| vec![self.y() * self.ct() / n as f64; n]);
        let mut best_residual = f64::INFINITY;
        let mut since_progress = 0;
        let mut sweeps = 0;
        loop {
            for i in 0..n {
                let guess = zeta[i];
                self.solve_coordinate(&mut zeta, i, bound, guess)?;
            }
            sweeps += 1;
            self.diag.sweeps += 1;
            let h = self.h_normalized(&zeta, bound)?;
            let residual = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            if residual <= self.cfg.complementarity_tol {
                break;
            }
            if residual < 0.9 * best_residual {
                best_residual = residual;
                since_progress = 0;
            } else {
                since_progress += 1;
                if since_progress >= self.cfg.stagnation_sweeps {
                    return Err(P5Error::Stagnation { sweeps, residual });
                }
            }
        }
        self.warm.zeta_vector = Some(zeta.clone());
        Ok(zeta)
    }

    fn bound_probe(&mut self) -> Result<f64, P5Error> {
        if let Some(t) = self.warm.bound.root {
            return Ok(t);
        }
        let n = self.n();
        let zeta = vec![self.y() * self.ct() / n as f64; n];
        let a = self.assemble_acute(&zeta)?;
        Ok(a.delays.iter().cloned().fold(0.0, f64::max))
    }

    /// Sum of delay prices at bound `T`, `+∞` when the bound is unattainable.
    pub fn zeta_sum(&mut self, bound: f64) -> Result<f64, P5Error> {
        match self.solve_zeta_grave(bound) {
            Ok(z) => Ok(z.iter().sum()),
            Err(P5Error::Unattainable { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }

    /// Delay bound with `Σₙ ζₙ(T) = y c_t`, the full allocation there and its KKT audit.
    fn search_bound(&mut self, probe: f64, expansion: Expansion, tol: f64) -> Result<(f64, Option<f64>), P5Error> {
        let target = self.y() * self.ct();
        let cfg = self.cfg_with(tol);
        let mut evals = 0;
        let mut failure = None;
        let result = {
            let mut sum = |t: f64| {
                evals += 1;
                match self.zeta_sum(t) {
                    Ok(s) => s,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            };
            search_positive_traced(&mut sum, target, probe, expansion, &cfg)
        };
        self.diag.delay_bound_evals += evals;
        if let Some(e) = failure {
            return Err(e);
        }
        let (bound, slope) = result.map_err(root_err("delay bound"))?;
        self.record("delay_bound", bound, evals);
        Ok((bound, slope))
    }

    /// Prices at the bound where `Σ ζₙ = y c_t` when no representable bound
    /// hits the target: the prices at `bound` and at the nearest bound on the
    /// other side of the target, a few units in the last place away, are
    /// combined linearly so that their sum equals the target.
    fn interpolate_prices(&mut self, bound: f64, zeta: Vec<f64>, target: f64) -> Result<(f64, Vec<f64>), P5Error> {
        let sum_a: f64 = zeta.iter().sum();
        let up = sum_a > target;
        let ulp = bound.next_up() - bound;
        let mut step = ulp;
        for _ in 0..24 {
            let other = if up { bound + step } else { bound - step };
            let zeta_b = match self.solve_zeta_grave(other) {
                Ok(z) => z,
                Err(P5Error::Unattainable { .. }) => break,
                Err(e) => return Err(e),
            };
            let sum_b: f64 = zeta_b.iter().sum();
            if (sum_b - target) * (sum_a - target) <= 0.0 {
                let w = (sum_a - target) / (sum_a - sum_b);
                let mixed = zeta.iter().zip(&zeta_b).map(|(a, b)| a + w * (b - a)).collect();
                self.warm.zeta_vector = Some(zeta);
                return Ok((bound + w * (other - bound), mixed));
            }
            step *= 2.0;
        }
        Ok((bound, zeta))
    }

    /// Delay bound `T#` with `Σ ζₙ(T#) = y c_t`, then the allocation and
    /// prices at that bound, audited against every KKT condition.
    ///
    /// When the price sum is very steep in `T` the first search can stop at a
    /// bound whose price sum misses the target; the search is then repeated
    /// from that bound down to floating-point resolution.
    pub fn solve_t_sharp(&mut self) -> Result<P5Solution, P5Error> {
        let target = self.y() * self.ct();
        let probe = self.bound_probe()?;
        let expansion = self.expansion(&self.warm.bound, 0.1);
        let (mut bound, mut slope) = self.search_bound(probe, expansion, self.cfg.delay_bound_tol)?;
        let mut zeta = self.solve_zeta_grave(bound)?;
        let miss = |z: &[f64]| (z.iter().sum::<f64>() - target).abs() / target;
        if miss(&zeta) > self.cfg.price_sum_tol {
            let expansion = Expansion::warm(self.cfg.delay_bound_tol).with_slope(slope);
            (bound, slope) = self.search_bound(bound, expansion, 4.0 * f64::EPSILON)?;
            zeta = self.solve_zeta_grave(bound)?;
        }
        if miss(&zeta) > self.cfg.price_sum_tol {
            (bound, zeta) = self.interpolate_prices(bound, zeta, target)?;
        }
        self.warm.bound.store(bound, slope);
        let acute = self.assemble_acute(&zeta)?;
        let max_delay = acute.delays.iter().cloned().fold(0.0, f64::max);
        let allocation = Allocation {
            bandwidth: acute.bandwidth.clone(),
            power: acute.power.clone(),
            resolution: self.inst.resolution.clone(),
            server_freq: acute.server_freq.clone(),
            user_freq: acute.user_freq.clone(),
            delay_bound: bound.max(max_delay),
        };
        let multipliers = Multipliers {
            bandwidth: acute.alpha,
            power: acute.beta,
            server_compute: acute.gamma,
            user_compute: acute.delta.clone(),
            delay: zeta,
        };
        let audit = kkt_audit(&self.inst, &allocation, &multipliers)?;
        if self.cfg.enforce_audit && audit.max_residual() > self.cfg.kkt_tol {
            return Err(P5Error::Audit(Box::new(audit)));
        }
        let objective = self.inst.objective(&allocation)?;
        Ok(P5Solution {
            allocation,
            multipliers,
            objective,
            audit,
            diagnostics: self.diag.clone(),
        })
    }
}

/// `ψ` from `k = g α / (D σ²)`: the root of `(1 + ψ) ln(1 + ψ) − ψ = k`.
pub fn psi_from_ratio(k: f64) -> Result<f64, P5Error> {
    let v = lambert_w_plus_one(k).map_err(root_err("lambert"))?;
    Ok(v.exp_m1())
}

/// Maximum normalized KKT residual per category.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    /// Bandwidth stationarity, relative to `α`; `None` when bandwidth is fixed.
    pub stationarity_bandwidth: Option<f64>,
    /// Power stationarity, relative to the larger side; `None` when power is fixed.
    pub stationarity_power: Option<f64>,
    /// Server-frequency stationarity; `None` when frequencies are fixed.
    pub stationarity_server_freq: Option<f64>,
    /// User-frequency stationarity; `None` when frequencies are fixed.
    pub stationarity_user_freq: Option<f64>,
    /// `|Σ ζ − y c_t| / (y c_t)`.
    pub stationarity_delay_bound: f64,
    /// Slack of each constraint whose price is positive, relative to its bound.
    pub complementary_slackness: f64,
    /// Constraint excess relative to its bound.
    pub primal_feasibility: f64,
    /// Negative part of the multipliers; any negativity counts as 1.
    pub dual_feasibility: f64,
}

impl KktReport {
    /// Largest residual over all categories.
    pub fn max_residual(&self) -> f64 {
        [
            self.stationarity_bandwidth.unwrap_or(0.0),
            self.stationarity_power.unwrap_or(0.0),
            self.stationarity_server_freq.unwrap_or(0.0),
            self.stationarity_user_freq.unwrap_or(0.0),
            self.stationarity_delay_bound,
            self.complementary_slackness,
            self.primal_feasibility,
            self.dual_feasibility,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Evaluates every KKT condition of the inner problem at a candidate solution.
pub fn kkt_audit(inst: &P5Instance, alloc: &Allocation, mult: &Multipliers) -> Result<KktReport, P5Error> {
    let p = &inst.params;
    let y = inst.ratio;
    let (ce, ct) = (p.energy_weight, p.delay_weight);
    let n_users = p.n_users();
    alloc.check_len(n_users)?;
    let mut rep = KktReport::default();
    let comm_free = matches!(inst.comm, CommMode::Optimize);
    let compute_free = matches!(inst.compute, ComputeMode::Optimize);
    let mut st_b: f64 = 0.0;
    let mut st_p: f64 = 0.0;
    let mut st_fms: f64 = 0.0;
    let mut st_fvu: f64 = 0.0;
    let mut cs: f64 = 0.0;
    let mut primal: f64 = 0.0;
    let t_bound = alloc.delay_bound;
    for n in 0..n_users {
        let u = &p.users[n];
        let s = inst.resolution[n];
        let q = u.raw_bits(s);
        let nu = u.compression_ratio;
        let z = inst.z[n];
        let b = alloc.bandwidth[n];
        let pw = alloc.power[n];
        let r = u.rate(b, pw)?;
        let theta = u.snr_coeff() * pw / b;
        let zeta = mult.delay[n];
        let marginal = inst.utilities[n].rate_derivative(r, s)
            + y * ce / (2.0 * z * r * r * r * nu * nu)
            + zeta * q / (r * r * nu);
        if comm_free {
            let lhs_b = marginal * bandwidth_slope(theta);
            st_b = st_b.max(rel_gap(lhs_b, mult.bandwidth));
            let lhs_p = marginal * u.snr_coeff() / ((1.0 + theta) * LN2);
            let rhs_p = mult.power + 2.0 * (pw + u.circuit_power) * y * ce * z * q * q;
            st_p = st_p.max(rel_gap(lhs_p, rhs_p));
        }
        let a_cyc = p.workload.delay_cycles(s, u.frames);
        let f_cyc = p.workload.energy_cycles(s, u.frames);
        let fms = alloc.server_freq[n];
        let fvu = alloc.user_freq[n];
        if compute_free {
            let lhs = 2.0 * y * ce * p.server_capacitance * f_cyc * fms + mult.server_compute;
            st_fms = st_fms.max(rel_gap(lhs, zeta * a_cyc / (fms * fms)));
            let lhs = 2.0 * y * ce * u.capacitance * f_cyc * fvu + mult.user_compute[n];
            st_fvu = st_fvu.max(rel_gap(lhs, zeta * a_cyc / (fvu * fvu)));
        }
        let t = a_cyc / fms + q / (r * nu) + a_cyc / fvu;
        if zeta > 0.0 {
            cs = cs.max((t / t_bound - 1.0).abs());
        }
        if compute_free && mult.user_compute[n] > 0.0 {
            cs = cs.max((fvu / u.freq_max - 1.0).abs());
        }
        primal = primal.max(t / t_bound - 1.0).max(fvu / u.freq_max - 1.0);
    }
    let sum_b: f64 = alloc.bandwidth.iter().sum();
    let sum_p: f64 = alloc.power.iter().sum();
    let sum_f: f64 = alloc.server_freq.iter().sum();
    if comm_free {
        if mult.bandwidth > 0.0 {
            cs = cs.max((sum_b / p.bandwidth_max - 1.0).abs());
        }
        if mult.power > 0.0 {
            cs = cs.max((sum_p / p.power_max - 1.0).abs());
        }
    }
    if compute_free && mult.server_compute > 0.0 {
        cs = cs.max((sum_f / p.server_freq_max - 1.0).abs());
    }
    primal = primal
        .max(sum_b / p.bandwidth_max - 1.0)
        .max(sum_p / p.power_max - 1.0)
        .max(sum_f / p.server_freq_max - 1.0)
        .max(0.0);
    let sum_zeta: f64 = mult.delay.iter().sum();
    rep.stationarity_delay_bound = (sum_zeta - y * ct).abs() / (y * ct);
    let negative = mult.bandwidth < 0.0
        || mult.power < 0.0
        || mult.server_compute < 0.0
        || mult.user_compute.iter().any(|v| *v < 0.0)
        || mult.delay.iter().any(|v| *v < 0.0);
    rep.dual_feasibility = if negative { 1.0 } else { 0.0 };
    if comm_free {
        rep.stationarity_bandwidth = Some(st_b);
        rep.stationarity_power = Some(st_p);
        if !(mult.bandwidth > 0.0) {
            rep.dual_feasibility = 1.0;
        }
    }
    if compute_free {
        rep.stationarity_server_freq = Some(st_fms);
        rep.stationarity_user_freq = Some(st_fvu);
    }
    rep.complementary_slackness = cs;
    rep.primal_feasibility = primal;
    Ok(rep)
}

/// Solves an instance with a fresh solver.
pub fn solve(inst: P5Instance, cfg: P5Config) -> Result<P5Solution, P5Error> {
    P5Solver::new(inst, cfg)?.solve_t_sharp()
}

/// A plain bisection on `[lo, hi]`, exposed for callers that need a strict bracket.
pub fn bracketed<F: FnMut(f64) -> f64>(f: F, target: f64, lo: f64, hi: f64, cfg: &BisectionConfig) -> Result<f64, RootError> {
    standard_bisection(f, target, lo, hi, cfg)
}
