//! Full solver for the utility-cost ratio problem.
//!
//! Three nested loops:
//!
//! * Dinkelbach (outer): for the current ratio `y`, maximize
//!   `U − y (c_e E + c_t T)` and update `y` to the ratio of the result.
//! * Alternating optimization (mid): alternate between the continuous
//!   variables with resolutions fixed ([`solve_p4`]) and the resolutions with
//!   everything else fixed ([`optimize_resolution`]).
//! * Fractional programming (inner): refresh the auxiliaries `z` of the
//!   transmission-energy ratios at the current point, then solve the inner
//!   convex problem globally with [`crate::p5`].
//!
//! Every loop starts from the previous loop's allocation, so the ratio and
//! the mid-level objective are non-decreasing up to solver tolerance; both are
//! checked at run time.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fp::golden_section_min;
use crate::model::{
    self, Allocation, LogUtility, ModelError, ResolutionDomain, SystemParams,
};
use crate::p5::{CommMode, ComputeMode, KktReport, P5Config, P5Error, P5Instance, P5Solver, WarmStart};
use crate::rootfind::{standard_bisection, BisectionConfig};

/// Errors of the full solver.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    /// Invalid configuration.
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    /// Model evaluation failed.
    #[error(transparent)]
    Model(#[from] ModelError),
    /// The inner solver failed; the loop position is attached.
    #[error("inner solve failed at outer iteration {outer}, mid iteration {mid}, inner iteration {inner}: {source}")]
    Inner {
        outer: usize,
        mid: usize,
        inner: usize,
        #[source]
        source: P5Error,
    },
    /// A sequence that must not decrease did.
    #[error("{level} decreased from {before} to {after}")]
    Monotonicity {
        level: &'static str,
        before: f64,
        after: f64,
    },
}

/// How resolutions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionMode {
    /// Follow each user's domain: intervals are continuous, grids discrete.
    FromDomain,
    /// Treat every grid as the interval between its smallest and largest entry.
    Relaxed,
}

/// Which variable groups are optimized; the others stay at the equal-split
/// starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    /// Bandwidth and power.
    pub comm: bool,
    /// Server and user CPU frequencies.
    pub compute: bool,
    /// Resolutions.
    pub resolution: bool,
}

impl Scope {
    /// Everything optimized.
    pub const FULL: Scope = Scope {
        comm: true,
        compute: true,
        resolution: true,
    };
}

/// Tolerances, caps and switches of the full solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Stop the outer loop once the ratio changes by at most this fraction.
    pub dinkelbach_tol: f64,
    /// Stop the mid loop once the objective changes by at most this fraction of the utility.
    pub ao_tol: f64,
    /// Stop the inner loop once the inner optimum changes by at most this fraction of the utility.
    pub fp_tol: f64,
    pub max_outer: usize,
    pub max_mid: usize,
    pub max_inner: usize,
    pub resolution_mode: ResolutionMode,
    pub scope: Scope,
    /// Relative slack allowed when checking that sequences do not decrease.
    pub monotone_slack: f64,
    /// Relative tolerance of the golden-section search over a resolution.
    pub golden_tol: f64,
    /// Relative tolerance of the resolution at which a delay meets the bound.
    pub delay_match_tol: f64,
    /// Inner solver settings.
    pub p5: P5Config,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            dinkelbach_tol: 1e-3,
            ao_tol: 1e-3,
            fp_tol: 1e-3,
            max_outer: 50,
            max_mid: 50,
            max_inner: 100,
            resolution_mode: ResolutionMode::FromDomain,
            scope: Scope::FULL,
            monotone_slack: 1e-9,
            golden_tol: 1e-10,
            delay_match_tol: 1e-12,
            p5: P5Config::default(),
        }
    }
}

impl OptimizerConfig {
    /// Checks that tolerances are positive and caps at least one.
    pub fn validate(&self) -> Result<(), OptimizerError> {
        for (name, v) in [
            ("dinkelbach_tol", self.dinkelbach_tol),
            ("ao_tol", self.ao_tol),
            ("fp_tol", self.fp_tol),
            ("golden_tol", self.golden_tol),
            ("delay_match_tol", self.delay_match_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(OptimizerError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.monotone_slack >= 0.0) {
            return Err(OptimizerError::Config(format!(
                "monotone_slack must be non-negative, got {}",
                self.monotone_slack
            )));
        }
        for (name, v) in [
            ("max_outer", self.max_outer),
            ("max_mid", self.max_mid),
            ("max_inner", self.max_inner),
        ] {
            if v < 1 {
                return Err(OptimizerError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Values recorded while solving.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// Ratio at the start and after every outer iteration.
    pub ratios: Vec<f64>,
    /// Mid-level objective after every half step, one list per outer iteration.
    /// The first entry of each list is the objective at the starting point.
    pub mid_objectives: Vec<Vec<f64>>,
    /// Inner optima, one list per inner loop, in execution order.
    pub inner_values: Vec<Vec<f64>>,
    /// Mid iterations per outer iteration.
    pub mid_iterations: Vec<usize>,
    /// Wall-clock seconds spent in the whole solve.
    pub total_seconds: f64,
    /// Wall-clock seconds spent in inner convex solves.
    pub inner_seconds: f64,
    /// Wall-clock seconds spent in resolution updates.
    pub resolution_seconds: f64,
    /// Number of inner convex solves.
    pub inner_solves: usize,
}

/// Result of [`dinkelbach_solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solved {
    pub allocation: Allocation,
    /// Utility-cost ratio of `allocation`, with the delay taken as the largest user delay.
    pub ucr: f64,
    pub utility: f64,
    pub energy: f64,
    /// Largest user delay.
    pub delay: f64,
    /// KKT audit of the last inner solve.
    pub audit: Option<KktReport>,
    /// Whether the outer loop met its tolerance before the cap.
    pub converged: bool,
    pub warnings: Vec<String>,
    pub trace: SolveTrace,
}

/// Result of [`optimize_resolution`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResolutionStep {
    pub resolution: Vec<f64>,
    /// Users for which no admissible resolution meets the delay bound; they
    /// are given their smallest resolution.
    pub conflicts: Vec<usize>,
}

/// `U − y (c_e E + c_t T)` with `T` the allocation's delay bound.
pub fn p3_objective(
    alloc: &Allocation,
    params: &SystemParams,
    utilities: &[LogUtility],
    y: f64,
) -> Result<f64, ModelError> {
    let u = model::total_utility(alloc, params, utilities)?;
    let e = model::total_energy(alloc, params)?;
    Ok(u - y * model::cost_from_parts(params, e, alloc.delay_bound))
}

fn relaxed(params: &SystemParams, mode: ResolutionMode) -> SystemParams {
    let mut p = params.clone();
    if mode == ResolutionMode::Relaxed {
        for u in &mut p.users {
            u.resolution = ResolutionDomain::Interval {
                min: u.resolution.min(),
                max: u.resolution.max(),
            };
        }
    }
    p
}

/// Resolution-dependent part of the mid-level objective for user `n`,
/// `Uₙ(rₙ, s) − y c_e (κ_ms F(s) f_ms² + (p + p_cir) s μ Λ / (r ν) + κ G(s) f_vu²)`.
fn resolution_value(
    s: f64,
    n: usize,
    alloc: &Allocation,
    params: &SystemParams,
    util: &LogUtility,
    y: f64,
    rate: f64,
) -> f64 {
    let u = &params.users[n];
    let cycles = params.workload.energy_cycles(s, u.frames);
    let energy = params.server_capacitance * cycles * alloc.server_freq[n].powi(2)
        + (alloc.power[n] + u.circuit_power) * u.raw_bits(s) / (rate * u.compression_ratio)
        + u.capacitance * cycles * alloc.user_freq[n].powi(2);
    util.value(rate, s) - y * params.energy_weight * energy
}

fn delay_at(s: f64, n: usize, alloc: &Allocation, params: &SystemParams, rate: f64) -> f64 {
    let u = &params.users[n];
    let cycles = params.workload.delay_cycles(s, u.frames);
    cycles / alloc.server_freq[n] + u.raw_bits(s) / (rate * u.compression_ratio) + cycles / alloc.user_freq[n]
}

/// Resolution update with bandwidth, power, frequencies and `T` fixed.
///
/// Each user's resolution maximizes its concave value subject to its delay
/// staying within `T`: the unconstrained maximizer over `(0, 2 s_max]` is
/// clamped to `[s_min, min{s_max, v}]`, where `v` is the resolution at which
/// the delay reaches `T`. On a grid the better of the two neighbouring grid
/// points that meet the bound is taken; the current resolution is kept when
/// it is at least as good.
pub fn optimize_resolution(
    alloc: &Allocation,
    y: f64,
    params: &SystemParams,
    utilities: &[LogUtility],
    cfg: &OptimizerConfig,
) -> Result<ResolutionStep, OptimizerError> {
    let n_users = params.n_users();
    alloc.check_len(n_users)?;
    let bound = alloc.delay_bound;
    let bis = BisectionConfig {
        rel_tol: cfg.delay_match_tol,
        ..BisectionConfig::brent(cfg.delay_match_tol)
    };
    let mut out = Vec::with_capacity(n_users);
    let mut conflicts = Vec::new();
    for n in 0..n_users {
        let domain = &params.users[n].resolution;
        let (s_min, s_max) = (domain.min(), domain.max());
        let rate = params.users[n].rate(alloc.bandwidth[n], alloc.power[n])?;
        if !(rate > 0.0) {
            return Err(ModelError::DivideByZero {
                component: "transmission",
                user: n,
            }
            .into());
        }
        let value = |s: f64| resolution_value(s, n, alloc, params, &utilities[n], y, rate);
        let delay = |s: f64| delay_at(s, n, alloc, params, rate);
        let meets = |s: f64| delay(s) <= bound * (1.0 + 1e-12);
        if !meets(s_min) {
            conflicts.push(n);
            out.push(s_min);
            continue;
        }
        let s_cap = if meets(s_max) {
            s_max
        } else {
            standard_bisection(|s| -delay(s), -bound, s_min, s_max, &bis)
                .map_err(|e| OptimizerError::Config(format!("delay-matching resolution search failed: {e}")))?
        };
        let s_sharp = golden_section_min(|s| -value(s), 1e-9 * s_max, 2.0 * s_max, cfg.golden_tol);
        let s_tilde = s_sharp.clamp(s_min, s_cap.max(s_min));
        let current = alloc.resolution[n];
        let chosen = match domain {
            ResolutionDomain::Interval { .. } => s_tilde,
            ResolutionDomain::Grid(grid) => {
                let below = grid.iter().copied().rfind(|&g| g <= s_tilde);
                let above = grid.iter().copied().find(|&g| g >= s_tilde);
                let mut best: Option<(f64, f64)> = None;
                for cand in [below, above].into_iter().flatten() {
                    if meets(cand) {
                        let v = value(cand);
                        if best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((cand, v));
                        }
                    }
                }
                match best {
                    Some((s, _)) => s,
                    None => {
                        conflicts.push(n);
                        grid[0]
                    }
                }
            }
        };
        let keep_current = domain.contains(current, 1e-12) && meets(current) && value(current) > value(chosen);
        out.push(if keep_current { current } else { chosen });
    }
    Ok(ResolutionStep {
        resolution: out,
        conflicts,
    })
}

/// Mutable state threaded through the loops.
struct State<'a> {
    params: &'a SystemParams,
    utilities: &'a [LogUtility],
    cfg: &'a OptimizerConfig,
    warm: Option<WarmStart>,
    trace: SolveTrace,
    audit: Option<KktReport>,
    outer: usize,
    mid: usize,
    fixed_comm: (Vec<f64>, Vec<f64>),
    fixed_compute: (Vec<f64>, Vec<f64>),
}

/// Fails when `after` falls below `before` by more than `slack` times the
/// largest of `|before|`, `|after|` and `scale`.
fn non_decreasing(level: &'static str, before: f64, after: f64, slack: f64, scale: f64) -> Result<(), OptimizerError> {
    if after < before - slack * before.abs().max(after.abs()).max(scale) {
        return Err(OptimizerError::Monotonicity { level, before, after });
    }
    Ok(())
}

impl State<'_> {
    fn p5_instance(&self, alloc: &Allocation, y: f64) -> Result<P5Instance, ModelError> {
        let mut inst = P5Instance::at_allocation(self.params, self.utilities, alloc, y)?;
        if !self.cfg.scope.comm {
            inst.comm = CommMode::Fixed {
                bandwidth: self.fixed_comm.0.clone(),
                power: self.fixed_comm.1.clone(),
            };
        }
        if !self.cfg.scope.compute {
            inst.compute = ComputeMode::Fixed {
                server_freq: self.fixed_compute.0.clone(),
                user_freq: self.fixed_compute.1.clone(),
            };
        }
        Ok(inst)
    }

    /// Inner loop: refresh `z`, solve the convex problem, repeat until its
    /// optimum settles.
    fn solve_p4(&mut self, y: f64, start: &Allocation) -> Result<Allocation, OptimizerError> {
        let scale = model::total_utility(start, self.params, self.utilities)?.abs().max(f64::MIN_POSITIVE);
        let mut alloc = start.clone();
        let mut values = Vec::new();
        for inner in 0..self.cfg.max_inner {
            let inst = self.p5_instance(&alloc, y)?;
            let t0 = Instant::now();
            let wrap = |source| OptimizerError::Inner {
                outer: self.outer,
                mid: self.mid,
                inner,
                source,
            };
            let mut solver = P5Solver::new(inst, self.cfg.p5.clone()).map_err(wrap)?;
            if let Some(w) = self.warm.take() {
                solver.set_warm_start(w);
            }
            let sol = solver.solve_t_sharp().map_err(wrap)?;
            self.warm = Some(solver.warm_start().clone());
            self.trace.inner_seconds += t0.elapsed().as_secs_f64();
            self.trace.inner_solves += 1;
            self.audit = Some(sol.audit.clone());
            alloc = sol.allocation;
            if let Some(&prev) = values.last() {
                non_decreasing("inner optimum", prev, sol.objective, self.cfg.monotone_slack, scale)?;
            }
            let done = values
                .last()
                .is_some_and(|&prev: &f64| (sol.objective - prev).abs() <= self.cfg.fp_tol * scale.max(prev.abs()));
            values.push(sol.objective);
            if done {
                break;
            }
        }
        self.trace.inner_values.push(values);
        Ok(alloc)
    }

    /// Mid loop: alternate the continuous block and the resolutions.
    fn solve_p3(&mut self, y: f64, start: &Allocation) -> Result<Allocation, OptimizerError> {
        let mut alloc = start.clone();
        let mut objectives = vec![p3_objective(&alloc, self.params, self.utilities, y)?];
        let scale = model::total_utility(&alloc, self.params, self.utilities)?.abs();
        let fixed_resolution =
            !self.cfg.scope.resolution || self.params.users.iter().all(|u| u.resolution.is_singleton());
        let mut iterations = 0;
        for mid in 0..self.cfg.max_mid {
            self.mid = mid;
            iterations = mid + 1;
            let before = *objectives.last().unwrap_or(&f64::NEG_INFINITY);
            alloc = self.solve_p4(y, &alloc)?;
            let after_p4 = p3_objective(&alloc, self.params, self.utilities, y)?;
            non_decreasing("mid-level objective", before, after_p4, self.cfg.monotone_slack, scale)?;
            objectives.push(after_p4);
            if fixed_resolution {
                break;
            }
            let t0 = Instant::now();
            let step = optimize_resolution(&alloc, y, self.params, self.utilities, self.cfg)?;
            self.trace.resolution_seconds += t0.elapsed().as_secs_f64();
            alloc.resolution = step.resolution;
            let after_p6 = p3_objective(&alloc, self.params, self.utilities, y)?;
            non_decreasing("mid-level objective", after_p4, after_p6, self.cfg.monotone_slack, scale)?;
            objectives.push(after_p6);
            let scale = scale.max(model::total_utility(&alloc, self.params, self.utilities)?.abs());
            if (after_p6 - before).abs() <= self.cfg.ao_tol * scale.max(before.abs()) {
                break;
            }
        }
        self.trace.mid_objectives.push(objectives);
        self.trace.mid_iterations.push(iterations);
        Ok(alloc)
    }
}

/// Starting point: equal splits, middle resolution, full user CPU and the
/// resulting largest delay as the bound.
pub fn initial_allocation(params: &SystemParams) -> Result<Allocation, ModelError> {
    let res = params.users.iter().map(|u| u.resolution.midpoint()).collect();
    Allocation::equal_split(params, res)
}

/// Maximizes the utility-cost ratio from the equal-split starting point.
pub fn dinkelbach_solve(
    params: &SystemParams,
    utilities: &[LogUtility],
    cfg: &OptimizerConfig,
) -> Result<Solved, OptimizerError> {
    let start = initial_allocation(params)?;
    dinkelbach_solve_from(params, utilities, cfg, start)
}

/// Maximizes the utility-cost ratio from a given feasible allocation.
///
/// Groups excluded by the configured scope keep their values from `start`.
pub fn dinkelbach_solve_from(
    params: &SystemParams,
    utilities: &[LogUtility],
    cfg: &OptimizerConfig,
    start: Allocation,
) -> Result<Solved, OptimizerError> {
    let t_start = Instant::now();
    cfg.validate()?;
    params.validate()?;
    if utilities.len() != params.n_users() {
        return Err(ModelError::Length {
            what: "utilities",
            got: utilities.len(),
            expected: params.n_users(),
        }
        .into());
    }
    let params = relaxed(params, cfg.resolution_mode);
    start.check_len(params.n_users())?;
    let mut alloc = start;
    alloc.delay_bound = alloc.delay_bound.max(model::system_delay(&alloc, &params)?);
    let mut state = State {
        params: &params,
        utilities,
        cfg,
        warm: None,
        trace: SolveTrace::default(),
        audit: None,
        outer: 0,
        mid: 0,
        fixed_comm: (alloc.bandwidth.clone(), alloc.power.clone()),
        fixed_compute: (alloc.server_freq.clone(), alloc.user_freq.clone()),
    };
    let mut y = model::ucr(&alloc, &params, utilities)?;
    state.trace.ratios.push(y);
    let mut converged = false;
    let mut warnings = Vec::new();
    for outer in 0..cfg.max_outer {
        state.outer = outer;
        alloc = state.solve_p3(y, &alloc)?;
        let y_next = model::ucr(&alloc, &params, utilities)?;
        non_decreasing("ratio", y, y_next, cfg.monotone_slack, 0.0)?;
        state.trace.ratios.push(y_next);
        let change = (y_next - y).abs() / y.abs().max(f64::MIN_POSITIVE);
        y = y_next;
        if change <= cfg.dinkelbach_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!(
            "outer loop reached its cap of {} iterations; returning the best allocation found",
            cfg.max_outer
        ));
    }
    let utility = model::total_utility(&alloc, &params, utilities)?;
    let energy = model::total_energy(&alloc, &params)?;
    let delay = model::system_delay(&alloc, &params)?;
    let mut trace = state.trace;
    trace.total_seconds = t_start.elapsed().as_secs_f64();
    Ok(Solved {
        ucr: y,
        utility,
        energy,
        delay,
        audit: state.audit,
        converged,
        warnings,
        trace,
        allocation: alloc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gain_at(d_km: f64) -> f64 {
        10f64.powf(-(128.1 + 37.6 * d_km.log10()) / 10.0)
    }

    fn scenario(n: usize) -> (SystemParams, Vec<LogUtility>) {
        let gains: Vec<f64> = (0..n).map(|i| gain_at(0.05 + 0.4 * i as f64 / n as f64)).collect();
        let util = LogUtility {
            kappa: 1.7031,
            ls: 57.2059e-8,
            lr: 0.0131e-8,
        };
        (SystemParams::with_gains(&gains), vec![util; n])
    }

    #[test]
    fn default_solve_is_monotone_and_feasible() {
        let (params, utils) = scenario(4);
        let out = dinkelbach_solve(&params, &utils, &OptimizerConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.trace.ratios.windows(2).all(|w| w[1] >= w[0]));
        assert!(model::check_feasibility(&out.allocation, &params).unwrap().is_empty());
        let start = initial_allocation(&params).unwrap();
        assert!(out.ucr > model::ucr(&start, &params, &utils).unwrap());
    }

    #[test]
    fn resolution_step_respects_grid_and_bound() {
        let (params, utils) = scenario(3);
        let alloc = initial_allocation(&params).unwrap();
        let y = model::ucr(&alloc, &params, &utils).unwrap();
        let step = optimize_resolution(&alloc, y, &params, &utils, &OptimizerConfig::default()).unwrap();
        assert!(step.conflicts.is_empty());
        for (n, &s) in step.resolution.iter().enumerate() {
            assert!(params.users[n].resolution.contains(s, 0.0));
            let mut a = alloc.clone();
            a.resolution[n] = s;
            assert!(model::user_delay(&a, &params, n).unwrap() <= alloc.delay_bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = OptimizerConfig {
            fp_tol: 0.0,
            ..OptimizerConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(OptimizerError::Config(_))));
    }
}
