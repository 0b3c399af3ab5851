//! System model: parameters, decision variables, and the evaluation of rate,
//! delay, energy, cost, utility and utility-cost ratio.
//!
//! Units are fixed throughout: Hz, W, bits, pixels (total pixel count per
//! frame), seconds and Joules. CPU work is counted in cycles, so a cycle count
//! divided by a frequency in Hz gives seconds. Cost is a dimensionless
//! weighted sum of energy and delay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by model evaluation and validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// A quantity that must be non-negative (or positive) was not.
    #[error("domain error: {what} = {value}")]
    Domain { what: String, value: f64 },
    /// A delay or energy term divides by a zero rate or frequency.
    #[error("division by zero in the {component} term of user {user}")]
    DivideByZero { component: &'static str, user: usize },
    /// Vectors of different lengths were combined.
    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    /// An operation that needs at least one user received none.
    #[error("the user set is empty")]
    NoUsers,
    /// Cost is zero, so the ratio is undefined.
    #[error("system cost is zero; the utility-cost ratio is undefined")]
    ZeroCost,
    /// A parameter violates its invariant.
    #[error("invalid parameter {field}: {reason}")]
    InvalidParam { field: String, reason: String },
}

fn domain(what: impl Into<String>, value: f64) -> ModelError {
    ModelError::Domain {
        what: what.into(),
        value,
    }
}

/// Per-frame computation load and its mapping to CPU cycles.
///
/// Per-frame work is `w(s) = coeff · s^{3/2} + offset` tera-FLOPs for a frame
/// of `s` pixels. A session of `frames` frames then needs
/// `frames · w(s) · 10¹² · cycles_per_flop` cycles of full rendering, and a
/// `1 / prep_divisor` share of that for the delay-critical preparation step on
/// each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadModel {
    /// Coefficient of `s^{3/2}` in tera-FLOPs.
    pub coeff: f64,
    /// Constant per-frame term in tera-FLOPs.
    pub offset: f64,
    /// Divisor mapping full work to the delay-critical preparation work.
    pub prep_divisor: f64,
    /// CPU cycles needed per floating-point operation.
    pub cycles_per_flop: f64,
}

impl Default for WorkloadModel {
    fn default() -> Self {
        Self {
            coeff: 7e-10,
            offset: 0.083,
            prep_divisor: 30.0,
            cycles_per_flop: 1.0,
        }
    }
}

const TERA: f64 = 1e12;

impl WorkloadModel {
    /// Per-frame work in tera-FLOPs.
    pub fn tflops(&self, s: f64) -> f64 {
        self.coeff * s.powf(1.5) + self.offset
    }

    /// Derivative of [`Self::tflops`] with respect to `s`.
    pub fn tflops_ds(&self, s: f64) -> f64 {
        1.5 * self.coeff * s.sqrt()
    }

    /// Cycles whose execution time enters the delay (server and user side alike).
    pub fn delay_cycles(&self, s: f64, frames: f64) -> f64 {
        frames * self.tflops(s) * TERA * self.cycles_per_flop / self.prep_divisor
    }

    /// Derivative of [`Self::delay_cycles`] with respect to `s`.
    pub fn delay_cycles_ds(&self, s: f64, frames: f64) -> f64 {
        frames * self.tflops_ds(s) * TERA * self.cycles_per_flop / self.prep_divisor
    }

    /// Cycles whose execution energy is charged (server and user side alike).
    pub fn energy_cycles(&self, s: f64, frames: f64) -> f64 {
        frames * self.tflops(s) * TERA * self.cycles_per_flop
    }

    /// Derivative of [`Self::energy_cycles`] with respect to `s`.
    pub fn energy_cycles_ds(&self, s: f64, frames: f64) -> f64 {
        frames * self.tflops_ds(s) * TERA * self.cycles_per_flop
    }

    fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("workload.coeff", self.coeff),
            ("workload.prep_divisor", self.prep_divisor),
            ("workload.cycles_per_flop", self.cycles_per_flop),
        ];
        for (field, v) in checks {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParam {
                    field: field.into(),
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        if !(self.offset >= 0.0) {
            return Err(ModelError::InvalidParam {
                field: "workload.offset".into(),
                reason: format!("must be non-negative, got {}", self.offset),
            });
        }
        Ok(())
    }
}

/// Admissible per-frame pixel counts for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionDomain {
    /// Any pixel count in `[min, max]`.
    Interval { min: f64, max: f64 },
    /// A finite ascending set of pixel counts.
    Grid(Vec<f64>),
}

impl ResolutionDomain {
    /// The five standard frame sizes 1280×720, 1920×1080, 2048×1080, 3072×1620 and 4096×2160.
    pub fn standard_grid() -> Self {
        ResolutionDomain::Grid(STANDARD_RESOLUTIONS.to_vec())
    }

    /// Smallest admissible pixel count.
    pub fn min(&self) -> f64 {
        match self {
            ResolutionDomain::Interval { min, .. } => *min,
            ResolutionDomain::Grid(g) => g[0],
        }
    }

    /// Largest admissible pixel count.
    pub fn max(&self) -> f64 {
        match self {
            ResolutionDomain::Interval { max, .. } => *max,
            ResolutionDomain::Grid(g) => g[g.len() - 1],
        }
    }

    /// Whether the domain has a single admissible value.
    pub fn is_singleton(&self) -> bool {
        match self {
            ResolutionDomain::Interval { min, max } => min == max,
            ResolutionDomain::Grid(g) => g.len() == 1,
        }
    }

    /// Starting resolution: the interval midpoint or the middle grid entry.
    pub fn midpoint(&self) -> f64 {
        match self {
            ResolutionDomain::Interval { min, max } => 0.5 * (min + max),
            ResolutionDomain::Grid(g) => g[(g.len() - 1) / 2],
        }
    }

    /// Membership test with relative tolerance `rel_tol`.
    pub fn contains(&self, s: f64, rel_tol: f64) -> bool {
        match self {
            ResolutionDomain::Interval { min, max } => {
                s >= min * (1.0 - rel_tol) && s <= max * (1.0 + rel_tol)
            }
            ResolutionDomain::Grid(g) => g.iter().any(|&v| (s - v).abs() <= rel_tol * v),
        }
    }

    /// Admissible value closest to `s`.
    pub fn nearest(&self, s: f64) -> f64 {
        match self {
            ResolutionDomain::Interval { min, max } => s.clamp(*min, *max),
            ResolutionDomain::Grid(g) => g
                .iter()
                .copied()
                .min_by(|a, b| (a - s).abs().total_cmp(&(b - s).abs()))
                .unwrap_or(s),
        }
    }

    fn validate(&self, user: usize) -> Result<(), ModelError> {
        let field = format!("users[{user}].resolution");
        match self {
            ResolutionDomain::Interval { min, max } => {
                if !(*min > 0.0) || !(max >= min) || !max.is_finite() {
                    return Err(ModelError::InvalidParam {
                        field,
                        reason: format!("interval [{min}, {max}] must satisfy 0 < min <= max < inf"),
                    });
                }
            }
            ResolutionDomain::Grid(g) => {
                if g.is_empty() {
                    return Err(ModelError::InvalidParam {
                        field,
                        reason: "grid must have at least one element".into(),
                    });
                }
                if g.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                    return Err(ModelError::InvalidParam {
                        field,
                        reason: "grid entries must be positive and finite".into(),
                    });
                }
                if g.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(ModelError::InvalidParam {
                        field,
                        reason: "grid must be strictly ascending".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// The five standard frame sizes in ascending pixel count.
pub const STANDARD_RESOLUTIONS: [f64; 5] = [
    1280.0 * 720.0,
    1920.0 * 1080.0,
    2048.0 * 1080.0,
    3072.0 * 1620.0,
    4096.0 * 2160.0,
];

/// Link, content and device parameters of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    /// Channel power gain from the server to this user (dimensionless).
    pub gain: f64,
    /// Noise power spectral density in W/Hz.
    pub noise_psd: f64,
    /// Bits per pixel before compression.
    pub bits_per_pixel: f64,
    /// Compression ratio, greater than one.
    pub compression_ratio: f64,
    /// Frames per session.
    pub frames: f64,
    /// Circuit power drawn while transmitting, in W.
    pub circuit_power: f64,
    /// Switched capacitance of the user device.
    pub capacitance: f64,
    /// Maximum CPU frequency of the user device in Hz.
    pub freq_max: f64,
    /// Admissible resolutions.
    pub resolution: ResolutionDomain,
}

/// All physical constants, budgets and per-user parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Per-user parameters; the user count is `users.len()`.
    pub users: Vec<UserParams>,
    /// Switched capacitance of the server.
    pub server_capacitance: f64,
    /// Total bandwidth budget in Hz.
    pub bandwidth_max: f64,
    /// Total transmit power budget in W.
    pub power_max: f64,
    /// Total server CPU frequency in Hz.
    pub server_freq_max: f64,
    /// Weight of energy in the cost.
    pub energy_weight: f64,
    /// Weight of delay in the cost.
    pub delay_weight: f64,
    /// Workload model shared by all users.
    pub workload: WorkloadModel,
}

/// Noise power spectral density of −174 dBm/Hz expressed in W/Hz.
pub fn thermal_noise_psd() -> f64 {
    10f64.powf((-174.0 - 30.0) / 10.0)
}

impl UserParams {
    /// Default user with the given channel gain: 16 bits per pixel,
    /// compression ratio 100, 90 frames, 0.1 W circuit power, capacitance
    /// 10⁻²⁷, 50 GHz CPU and the standard resolution grid.
    pub fn with_gain(gain: f64) -> Self {
        Self {
            gain,
            noise_psd: thermal_noise_psd(),
            bits_per_pixel: 16.0,
            compression_ratio: 100.0,
            frames: 90.0,
            circuit_power: 0.1,
            capacitance: 1e-27,
            freq_max: 50e9,
            resolution: ResolutionDomain::standard_grid(),
        }
    }

    /// Signal-to-noise coefficient `g / σ²` in 1/(W/Hz).
    pub fn snr_coeff(&self) -> f64 {
        self.gain / self.noise_psd
    }

    /// Achievable rate `b log₂(1 + g p / (σ² b))` in bit/s, zero when `b = 0`.
    pub fn rate(&self, b: f64, p: f64) -> Result<f64, ModelError> {
        rate_from_snr_coeff(b, p, self.snr_coeff())
    }

    /// Bits sent per session before compression, `s · μ · Λ`.
    pub fn raw_bits(&self, s: f64) -> f64 {
        s * self.bits_per_pixel * self.frames
    }
}

/// Rate `b log₂(1 + c p / b)` with `c = g/σ²`; zero when `b = 0` by continuity.
pub fn rate_from_snr_coeff(b: f64, p: f64, snr_coeff: f64) -> Result<f64, ModelError> {
    if !(b >= 0.0) {
        return Err(domain("bandwidth", b));
    }
    if !(p >= 0.0) {
        return Err(domain("power", p));
    }
    if b == 0.0 {
        return Ok(0.0);
    }
    Ok(b * (snr_coeff * p / b).ln_1p() / std::f64::consts::LN_2)
}

impl SystemParams {
    /// Default parameters for the given channel gains: 20 GHz bandwidth,
    /// 30 W power, 300 GHz server CPU, capacitance 10⁻²⁷ and equal cost weights 0.5.
    pub fn with_gains(gains: &[f64]) -> Self {
        Self {
            users: gains.iter().map(|&g| UserParams::with_gain(g)).collect(),
            server_capacitance: 1e-27,
            bandwidth_max: 20e9,
            power_max: 30.0,
            server_freq_max: 300e9,
            energy_weight: 0.5,
            delay_weight: 0.5,
            workload: WorkloadModel::default(),
        }
    }

    /// Number of users.
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Checks all parameter invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.users.is_empty() {
            return Err(ModelError::NoUsers);
        }
        let positive = [
            ("server_capacitance", self.server_capacitance),
            ("bandwidth_max", self.bandwidth_max),
            ("power_max", self.power_max),
            ("server_freq_max", self.server_freq_max),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParam {
                    field: field.into(),
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        for (field, v) in [("energy_weight", self.energy_weight), ("delay_weight", self.delay_weight)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidParam {
                    field: field.into(),
                    reason: format!("must be non-negative and finite, got {v}"),
                });
            }
        }
        if self.energy_weight + self.delay_weight <= 0.0 {
            return Err(ModelError::InvalidParam {
                field: "energy_weight".into(),
                reason: "energy and delay weights cannot both be zero".into(),
            });
        }
        self.workload.validate()?;
        for (n, u) in self.users.iter().enumerate() {
            let positive = [
                ("gain", u.gain),
                ("noise_psd", u.noise_psd),
                ("bits_per_pixel", u.bits_per_pixel),
                ("frames", u.frames),
                ("capacitance", u.capacitance),
                ("freq_max", u.freq_max),
            ];
            for (field, v) in positive {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(ModelError::InvalidParam {
                        field: format!("users[{n}].{field}"),
                        reason: format!("must be positive and finite, got {v}"),
                    });
                }
            }
            if !(u.compression_ratio > 1.0) {
                return Err(ModelError::InvalidParam {
                    field: format!("users[{n}].compression_ratio"),
                    reason: format!("must exceed 1, got {}", u.compression_ratio),
                });
            }
            if !(u.circuit_power >= 0.0) {
                return Err(ModelError::InvalidParam {
                    field: format!("users[{n}].circuit_power"),
                    reason: format!("must be non-negative, got {}", u.circuit_power),
                });
            }
            u.resolution.validate(n)?;
        }
        Ok(())
    }
}

/// Decision vector: per-user bandwidth, power, resolution, server CPU share,
/// user CPU frequency, and the common delay bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Bandwidth per user in Hz.
    pub bandwidth: Vec<f64>,
    /// Transmit power per user in W.
    pub power: Vec<f64>,
    /// Pixels per frame per user.
    pub resolution: Vec<f64>,
    /// Server CPU frequency assigned to each user in Hz.
    pub server_freq: Vec<f64>,
    /// User CPU frequency in Hz.
    pub user_freq: Vec<f64>,
    /// Upper bound on every user's delay in s.
    pub delay_bound: f64,
}

impl Allocation {
    /// Number of users.
    pub fn n_users(&self) -> usize {
        self.bandwidth.len()
    }

    /// Checks that every vector has length `n`.
    pub fn check_len(&self, n: usize) -> Result<(), ModelError> {
        let fields: [(&'static str, usize); 5] = [
            ("bandwidth", self.bandwidth.len()),
            ("power", self.power.len()),
            ("resolution", self.resolution.len()),
            ("server_freq", self.server_freq.len()),
            ("user_freq", self.user_freq.len()),
        ];
        for (what, got) in fields {
            if got != n {
                return Err(ModelError::Length {
                    what,
                    got,
                    expected: n,
                });
            }
        }
        Ok(())
    }

    /// Equal split of bandwidth, power and server CPU; full user CPU; the
    /// given resolutions; delay bound set to the resulting maximum delay.
    pub fn equal_split(params: &SystemParams, resolution: Vec<f64>) -> Result<Self, ModelError> {
        let n = params.n_users();
        if n == 0 {
            return Err(ModelError::NoUsers);
        }
        let nf = n as f64;
        let mut alloc = Allocation {
            bandwidth: vec![params.bandwidth_max / nf; n],
            power: vec![params.power_max / nf; n],
            resolution,
            server_freq: vec![params.server_freq_max / nf; n],
            user_freq: params.users.iter().map(|u| u.freq_max).collect(),
            delay_bound: 0.0,
        };
        alloc.delay_bound = system_delay(&alloc, params)?;
        Ok(alloc)
    }
}

/// Dual variables of the inner convex problem.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    /// Price of the bandwidth budget.
    pub bandwidth: f64,
    /// Price of the power budget.
    pub power: f64,
    /// Price of the server CPU budget.
    pub server_compute: f64,
    /// Per-user price of the user CPU cap.
    pub user_compute: Vec<f64>,
    /// Per-user price of the delay bound.
    pub delay: Vec<f64>,
}

/// Logarithmic utility `κ ln(1 + l_s s + l_r r)` of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogUtility {
    /// Score scale `κ`.
    pub kappa: f64,
    /// Weight per pixel `l_s`.
    pub ls: f64,
    /// Weight per bit/s `l_r`.
    pub lr: f64,
}

impl LogUtility {
    /// Checks `κ > 0` and non-negative weights.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(domain("utility kappa", self.kappa));
        }
        if !(self.ls >= 0.0) || !self.ls.is_finite() {
            return Err(domain("utility ls", self.ls));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(domain("utility lr", self.lr));
        }
        Ok(())
    }

    /// Utility at rate `r` (bit/s) and resolution `s` (pixels).
    pub fn value(&self, r: f64, s: f64) -> f64 {
        self.kappa * (self.ls * s + self.lr * r).ln_1p()
    }

    /// Partial derivative with respect to the rate, `κ l_r / (1 + l_s s + l_r r)`.
    pub fn rate_derivative(&self, r: f64, s: f64) -> f64 {
        self.kappa * self.lr / (1.0 + self.ls * s + self.lr * r)
    }

    /// Partial derivative with respect to the resolution, `κ l_s / (1 + l_s s + l_r r)`.
    pub fn resolution_derivative(&self, r: f64, s: f64) -> f64 {
        self.kappa * self.ls / (1.0 + self.ls * s + self.lr * r)
    }
}

/// `κ l_r / (1 + l_s s + l_r r)`.
pub fn utility_rate_derivative(r: f64, s: f64, u: &LogUtility) -> f64 {
    u.rate_derivative(r, s)
}

/// Fractional-programming auxiliaries and the outer utility-per-cost ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxState {
    /// Per-user auxiliary of the transmission-energy ratio.
    pub z: Vec<f64>,
    /// Current utility-per-cost ratio.
    pub ratio: f64,
}

/// Per-user delay split into its three stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBreakdown {
    /// Server-side preparation time.
    pub server: f64,
    /// Transmission time.
    pub transmission: f64,
    /// User-side rendering time.
    pub user: f64,
}

impl DelayBreakdown {
    /// Sum of the three stages.
    pub fn total(&self) -> f64 {
        self.server + self.transmission + self.user
    }
}

/// Achievable rate of user `n` at bandwidth `b` and power `p`.
pub fn rate(b: f64, p: f64, params: &SystemParams, n: usize) -> Result<f64, ModelError> {
    params.users[n].rate(b, p)
}

/// Delay stages of user `n`.
pub fn user_delay_breakdown(
    alloc: &Allocation,
    params: &SystemParams,
    n: usize,
) -> Result<DelayBreakdown, ModelError> {
    let u = &params.users[n];
    let s = alloc.resolution[n];
    let wl = &params.workload;
    let f_ms = alloc.server_freq[n];
    let f_vu = alloc.user_freq[n];
    if !(f_ms > 0.0) {
        return Err(ModelError::DivideByZero {
            component: "server-compute",
            user: n,
        });
    }
    if !(f_vu > 0.0) {
        return Err(ModelError::DivideByZero {
            component: "user-compute",
            user: n,
        });
    }
    let r = u.rate(alloc.bandwidth[n], alloc.power[n])?;
    if !(r > 0.0) {
        return Err(ModelError::DivideByZero {
            component: "transmission",
            user: n,
        });
    }
    let cycles = wl.delay_cycles(s, u.frames);
    Ok(DelayBreakdown {
        server: cycles / f_ms,
        transmission: u.raw_bits(s) / (r * u.compression_ratio),
        user: cycles / f_vu,
    })
}

/// Delay of user `n`: server preparation, transmission and user rendering.
pub fn user_delay(alloc: &Allocation, params: &SystemParams, n: usize) -> Result<f64, ModelError> {
    Ok(user_delay_breakdown(alloc, params, n)?.total())
}

/// Delays of all users.
pub fn user_delays(alloc: &Allocation, params: &SystemParams) -> Result<Vec<f64>, ModelError> {
    (0..params.n_users()).map(|n| user_delay(alloc, params, n)).collect()
}

/// Largest per-user delay.
pub fn system_delay(alloc: &Allocation, params: &SystemParams) -> Result<f64, ModelError> {
    if params.n_users() == 0 {
        return Err(ModelError::NoUsers);
    }
    alloc.check_len(params.n_users())?;
    let delays = user_delays(alloc, params)?;
    Ok(delays.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Energy of user `n` split into server compute, transmission and user compute.
pub fn user_energy_breakdown(
    alloc: &Allocation,
    params: &SystemParams,
    n: usize,
) -> Result<[f64; 3], ModelError> {
    let u = &params.users[n];
    let s = alloc.resolution[n];
    let wl = &params.workload;
    let cycles = wl.energy_cycles(s, u.frames);
    let r = u.rate(alloc.bandwidth[n], alloc.power[n])?;
    if !(r > 0.0) {
        return Err(ModelError::DivideByZero {
            component: "transmission",
            user: n,
        });
    }
    let f_ms = alloc.server_freq[n];
    let f_vu = alloc.user_freq[n];
    Ok([
        params.server_capacitance * cycles * f_ms * f_ms,
        (alloc.power[n] + u.circuit_power) * u.raw_bits(s) / (r * u.compression_ratio),
        u.capacitance * cycles * f_vu * f_vu,
    ])
}

/// Total energy in J over all users.
pub fn total_energy(alloc: &Allocation, params: &SystemParams) -> Result<f64, ModelError> {
    alloc.check_len(params.n_users())?;
    let mut sum = 0.0;
    for n in 0..params.n_users() {
        sum += user_energy_breakdown(alloc, params, n)?.iter().sum::<f64>();
    }
    Ok(sum)
}

/// `c_e · energy + c_t · delay`.
pub fn cost_from_parts(params: &SystemParams, energy: f64, delay: f64) -> f64 {
    params.energy_weight * energy + params.delay_weight * delay
}

/// Weighted cost of an allocation, with delay taken as the largest user delay.
pub fn system_cost(alloc: &Allocation, params: &SystemParams) -> Result<f64, ModelError> {
    Ok(cost_from_parts(
        params,
        total_energy(alloc, params)?,
        system_delay(alloc, params)?,
    ))
}

/// Sum of user utilities at the rates implied by the allocation.
pub fn total_utility(
    alloc: &Allocation,
    params: &SystemParams,
    utilities: &[LogUtility],
) -> Result<f64, ModelError> {
    alloc.check_len(params.n_users())?;
    if utilities.len() != params.n_users() {
        return Err(ModelError::Length {
            what: "utilities",
            got: utilities.len(),
            expected: params.n_users(),
        });
    }
    let mut sum = 0.0;
    for (n, u) in utilities.iter().enumerate() {
        let r = rate(alloc.bandwidth[n], alloc.power[n], params, n)?;
        sum += u.value(r, alloc.resolution[n]);
    }
    Ok(sum)
}

/// `utility / cost`, failing when the cost is zero.
pub fn ratio(utility: f64, cost: f64) -> Result<f64, ModelError> {
    if cost == 0.0 {
        return Err(ModelError::ZeroCost);
    }
    Ok(utility / cost)
}

/// Utility-cost ratio of an allocation.
pub fn ucr(
    alloc: &Allocation,
    params: &SystemParams,
    utilities: &[LogUtility],
) -> Result<f64, ModelError> {
    ratio(total_utility(alloc, params, utilities)?, system_cost(alloc, params)?)
}

/// Identifier of a violated constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintId {
    #[serde(rename = "positivity")]
    Positivity,
    #[serde(rename = "bandwidth-sum")]
    BandwidthSum,
    #[serde(rename = "power-sum")]
    PowerSum,
    #[serde(rename = "resolution-domain")]
    ResolutionDomain,
    #[serde(rename = "server-compute-sum")]
    ServerComputeSum,
    #[serde(rename = "user-compute-cap")]
    UserComputeCap,
    #[serde(rename = "delay-epigraph")]
    DelayEpigraph,
}

impl ConstraintId {
    /// Stable textual id.
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintId::Positivity => "positivity",
            ConstraintId::BandwidthSum => "bandwidth-sum",
            ConstraintId::PowerSum => "power-sum",
            ConstraintId::ResolutionDomain => "resolution-domain",
            ConstraintId::ServerComputeSum => "server-compute-sum",
            ConstraintId::UserComputeCap => "user-compute-cap",
            ConstraintId::DelayEpigraph => "delay-epigraph",
        }
    }
}

/// One violated constraint with the amount by which it is exceeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintId,
    /// Offending user for per-user constraints.
    pub user: Option<usize>,
    /// Left-hand side minus bound; positive means violated.
    pub excess: f64,
}

/// Relative slack granted to every budget comparison in [`check_feasibility`].
///
/// Solver outputs meet budgets to bisection tolerance, so a comparison in
/// exact arithmetic would flag rounding-level excesses.
pub const FEASIBILITY_REL_TOL: f64 = 1e-9;

/// All violated constraints of an allocation (empty when feasible).
pub fn check_feasibility(alloc: &Allocation, params: &SystemParams) -> Result<Vec<Violation>, ModelError> {
    check_feasibility_with_tol(alloc, params, FEASIBILITY_REL_TOL)
}

/// [`check_feasibility`] with an explicit relative tolerance.
pub fn check_feasibility_with_tol(
    alloc: &Allocation,
    params: &SystemParams,
    rel_tol: f64,
) -> Result<Vec<Violation>, ModelError> {
    let n_users = params.n_users();
    alloc.check_len(n_users)?;
    let mut out = Vec::new();
    let mut positive = true;
    for n in 0..n_users {
        let vals = [
            alloc.bandwidth[n],
            alloc.power[n],
            alloc.resolution[n],
            alloc.server_freq[n],
            alloc.user_freq[n],
        ];
        if let Some(v) = vals.iter().find(|v| !(**v > 0.0)) {
            positive = false;
            out.push(Violation {
                constraint: ConstraintId::Positivity,
                user: Some(n),
                excess: -v,
            });
        }
    }
    let mut budget = |id, total: f64, cap: f64| {
        if total > cap * (1.0 + rel_tol) {
            out.push(Violation {
                constraint: id,
                user: None,
                excess: total - cap,
            });
        }
    };
    budget(ConstraintId::BandwidthSum, alloc.bandwidth.iter().sum(), params.bandwidth_max);
    budget(ConstraintId::PowerSum, alloc.power.iter().sum(), params.power_max);
    budget(
        ConstraintId::ServerComputeSum,
        alloc.server_freq.iter().sum(),
        params.server_freq_max,
    );
    for (n, u) in params.users.iter().enumerate() {
        if !u.resolution.contains(alloc.resolution[n], rel_tol) {
            out.push(Violation {
                constraint: ConstraintId::ResolutionDomain,
                user: Some(n),
                excess: (alloc.resolution[n] - u.resolution.nearest(alloc.resolution[n])).abs(),
            });
        }
        if alloc.user_freq[n] > u.freq_max * (1.0 + rel_tol) {
            out.push(Violation {
                constraint: ConstraintId::UserComputeCap,
                user: Some(n),
                excess: alloc.user_freq[n] - u.freq_max,
            });
        }
        if positive {
            let t = user_delay(alloc, params, n)?;
            if t > alloc.delay_bound * (1.0 + rel_tol) {
                out.push(Violation {
                    constraint: ConstraintId::DelayEpigraph,
                    user: Some(n),
                    excess: t - alloc.delay_bound,
                });
            }
        }
    }
    Ok(out)
}
