//! The full solver and the three baseline policies behind one interface.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use ucr_core::model::{self, Allocation, ModelError, ResolutionDomain, SystemParams};
use ucr_core::optimizer::{dinkelbach_solve_from, OptimizerConfig, OptimizerError, Scope, SolveTrace};
use ucr_core::p5::KktReport;

use crate::scenario::Scenario;

/// Pixel count used by the average policy.
pub const AVERAGE_RESOLUTION: f64 = 2048.0 * 1080.0;

/// Allocation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Every variable optimized.
    Full,
    /// Equal splits, fixed resolution, full user CPU.
    Average,
    /// Bandwidth, power and resolution optimized; CPU as in `Average`.
    OptBps,
    /// CPU frequencies optimized; bandwidth, power and resolution as in `Average`.
    OptF,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Full, Policy::Average, Policy::OptBps, Policy::OptF];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Full => "full",
            Policy::Average => "average",
            Policy::OptBps => "opt-bps",
            Policy::OptF => "opt-f",
        }
    }

    fn scope(self) -> Option<Scope> {
        match self {
            Policy::Full => Some(Scope::FULL),
            Policy::Average => None,
            Policy::OptBps => Some(Scope {
                comm: true,
                compute: false,
                resolution: true,
            }),
            Policy::OptF => Some(Scope {
                comm: false,
                compute: true,
                resolution: false,
            }),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy {0:?}; expected one of full, average, opt-bps, opt-f")]
pub struct UnknownPolicy(pub String);

impl FromStr for Policy {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

/// Errors of [`run_policy`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] OptimizerError),
}

/// Result of running one policy on one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub policy: Policy,
    pub allocation: Allocation,
    pub ucr: f64,
    pub utility: f64,
    pub energy: f64,
    /// Largest user delay.
    pub delay: f64,
    /// KKT audit of the last inner solve; absent for the average policy.
    pub audit: Option<KktReport>,
    pub feasible: bool,
    pub converged: bool,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<SolveTrace>,
}

impl Outcome {
    pub fn kkt_max_residual(&self) -> Option<f64> {
        self.audit.as_ref().map(KktReport::max_residual)
    }
}

/// Admissible resolution closest to the average policy's pixel count.
fn average_resolution(domain: &ResolutionDomain) -> f64 {
    domain.nearest(AVERAGE_RESOLUTION)
}

/// The average policy's allocation, which is also the starting point of
/// every optimizing policy.
pub fn average_allocation(params: &SystemParams) -> Result<Allocation, ModelError> {
    let res = params.users.iter().map(|u| average_resolution(&u.resolution)).collect();
    Allocation::equal_split(params, res)
}

/// Runs `policy` on the scenario.
pub fn run_policy(policy: Policy, scenario: &Scenario, cfg: &OptimizerConfig) -> Result<Outcome, PolicyError> {
    let params = &scenario.params;
    let utilities = &scenario.utilities;
    let start = average_allocation(params)?;
    let feasible = |a: &Allocation| -> Result<bool, ModelError> { Ok(model::check_feasibility(a, params)?.is_empty()) };
    match policy.scope() {
        None => Ok(Outcome {
            policy,
            ucr: model::ucr(&start, params, utilities)?,
            utility: model::total_utility(&start, params, utilities)?,
            energy: model::total_energy(&start, params)?,
            delay: model::system_delay(&start, params)?,
            audit: None,
            feasible: feasible(&start)?,
            converged: true,
            warnings: Vec::new(),
            trace: None,
            allocation: start,
        }),
        Some(scope) => {
            let cfg = OptimizerConfig { scope, ..cfg.clone() };
            let solved = dinkelbach_solve_from(params, utilities, &cfg, start)?;
            Ok(Outcome {
                policy,
                ucr: solved.ucr,
                utility: solved.utility,
                energy: solved.energy,
                delay: solved.delay,
                feasible: feasible(&solved.allocation)?,
                audit: solved.audit,
                converged: solved.converged,
                warnings: solved.warnings,
                trace: Some(solved.trace),
                allocation: solved.allocation,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::default_scenario;

    #[test]
    fn average_splits_budgets_equally() {
        let s = default_scenario();
        let out = run_policy(Policy::Average, &s, &OptimizerConfig::default()).unwrap();
        for b in &out.allocation.bandwidth {
            assert_eq!(*b, 4e9);
        }
        assert!(out.feasible);
        assert_eq!(out.allocation.resolution, vec![AVERAGE_RESOLUTION; 5]);
    }

    #[test]
    fn names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>(), Ok(p));
        }
        assert!("best".parse::<Policy>().is_err());
    }
}
