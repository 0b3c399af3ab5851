//! Parameter sweeps over seeded scenarios and policies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ucr_core::optimizer::OptimizerConfig;

use crate::policy::{run_policy, Outcome, Policy};
use crate::scenario::{gen_scenario, Overrides, DEFAULT_USERS};

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Total bandwidth in Hz.
    BandwidthMax,
    /// Total transmit power in W.
    PowerMax,
    /// Total server CPU frequency in Hz.
    ServerFreqMax,
    /// Per-user CPU frequency cap in Hz.
    UserFreqMax,
    /// Energy weight `c_e`, with the delay weight set to `1 − c_e`.
    EnergyWeight,
    /// Number of users.
    NUsers,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::BandwidthMax => "bandwidth_max",
            SweepParam::PowerMax => "power_max",
            SweepParam::ServerFreqMax => "server_freq_max",
            SweepParam::UserFreqMax => "user_freq_max",
            SweepParam::EnergyWeight => "energy_weight",
            SweepParam::NUsers => "n_users",
        }
    }
}

/// Sweep description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Scenario seeds; every value is run on every seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_users")]
    pub n_users: usize,
    #[serde(default = "default_policies")]
    pub policies: Vec<Policy>,
    #[serde(default)]
    pub overrides: Overrides,
    /// Factor applied to the bandwidth, power and server CPU budgets.
    #[serde(default = "one")]
    pub budget_scale: f64,
    /// Worker threads; zero uses all cores.
    #[serde(default)]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_users() -> usize {
    DEFAULT_USERS
}

fn default_policies() -> Vec<Policy> {
    Policy::ALL.to_vec()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("a sweep needs at least one value")]
    NoValues,
    #[error("a sweep needs at least one seed")]
    NoSeeds,
    #[error("a sweep needs at least one policy")]
    NoPolicies,
    #[error("invalid value {value} for {param}")]
    BadValue { param: &'static str, value: f64 },
    #[error("budget_scale must be positive, got {0}")]
    BadScale(f64),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl SweepSpec {
    /// Bandwidth from 1 GHz to 20 GHz.
    pub fn bandwidth() -> Self {
        Self::with_values(SweepParam::BandwidthMax, vec![1e9, 2e9, 5e9, 10e9, 15e9, 20e9])
    }

    /// Transmit power from 0.03 W to 100 W.
    pub fn power() -> Self {
        Self::with_values(SweepParam::PowerMax, vec![0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0])
    }

    /// User CPU cap from 0.5 GHz to 60 GHz.
    pub fn user_freq() -> Self {
        Self::with_values(SweepParam::UserFreqMax, vec![0.5e9, 1e9, 5e9, 10e9, 20e9, 40e9, 60e9])
    }

    /// Users from 5 to 160 with budgets amplified ten times.
    pub fn users() -> Self {
        Self {
            budget_scale: 10.0,
            ..Self::with_values(SweepParam::NUsers, vec![5.0, 10.0, 20.0, 40.0, 80.0, 160.0])
        }
    }

    pub fn with_values(param: SweepParam, values: Vec<f64>) -> Self {
        Self {
            param,
            values,
            seeds: default_seeds(),
            n_users: DEFAULT_USERS,
            policies: default_policies(),
            overrides: Overrides::default(),
            budget_scale: 1.0,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.is_empty() {
            return Err(SweepError::NoValues);
        }
        if self.seeds.is_empty() {
            return Err(SweepError::NoSeeds);
        }
        if self.policies.is_empty() {
            return Err(SweepError::NoPolicies);
        }
        if !(self.budget_scale > 0.0) || !self.budget_scale.is_finite() {
            return Err(SweepError::BadScale(self.budget_scale));
        }
        for &value in &self.values {
            let ok = match self.param {
                SweepParam::EnergyWeight => (0.0..=1.0).contains(&value),
                SweepParam::NUsers => value >= 1.0 && value.fract() == 0.0,
                _ => value > 0.0 && value.is_finite(),
            };
            if !ok {
                return Err(SweepError::BadValue {
                    param: self.param.name(),
                    value,
                });
            }
        }
        Ok(())
    }

    /// Overrides and user count at one sweep value.
    fn point(&self, value: f64) -> (Overrides, usize) {
        let mut o = self.overrides.clone();
        let mut n = self.n_users;
        match self.param {
            SweepParam::BandwidthMax => o.bandwidth_max = Some(value),
            SweepParam::PowerMax => o.power_max = Some(value),
            SweepParam::ServerFreqMax => o.server_freq_max = Some(value),
            SweepParam::UserFreqMax => o.user_freq_max = Some(value),
            SweepParam::EnergyWeight => {
                o.energy_weight = Some(value);
                o.delay_weight = Some(1.0 - value);
            }
            SweepParam::NUsers => n = value as usize,
        }
        if self.budget_scale != 1.0 {
            let base = ucr_core::model::SystemParams::with_gains(&[]);
            let scale = |v: Option<f64>, d: f64| Some(v.unwrap_or(d) * self.budget_scale);
            o.bandwidth_max = scale(o.bandwidth_max, base.bandwidth_max);
            o.power_max = scale(o.power_max, base.power_max);
            o.server_freq_max = scale(o.server_freq_max, base.server_freq_max);
        }
        (o, n)
    }
}

/// One result row. Failed runs keep their position and carry the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub seed: u64,
    pub policy: String,
    pub ucr: Option<f64>,
    #[serde(rename = "energy_J")]
    pub energy: Option<f64>,
    #[serde(rename = "delay_s")]
    pub delay: Option<f64>,
    pub utility: Option<f64>,
    pub kkt_max_residual: Option<f64>,
    pub feasible: Option<bool>,
    pub converged: Option<bool>,
    pub mean_bandwidth_hz: Option<f64>,
    pub mean_power_w: Option<f64>,
    pub mean_server_freq_hz: Option<f64>,
    pub mean_user_freq_hz: Option<f64>,
    pub mean_resolution_px: Option<f64>,
    pub error: Option<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl SweepRow {
    fn new(param: SweepParam, value: f64, seed: u64, policy: Policy, result: Result<Outcome, String>) -> Self {
        let mut row = SweepRow {
            sweep_param: param.name().to_string(),
            sweep_value: value,
            seed,
            policy: policy.name().to_string(),
            ucr: None,
            energy: None,
            delay: None,
            utility: None,
            kkt_max_residual: None,
            feasible: None,
            converged: None,
            mean_bandwidth_hz: None,
            mean_power_w: None,
            mean_server_freq_hz: None,
            mean_user_freq_hz: None,
            mean_resolution_px: None,
            error: None,
        };
        match result {
            Ok(o) => {
                let a = &o.allocation;
                row.ucr = Some(o.ucr);
                row.energy = Some(o.energy);
                row.delay = Some(o.delay);
                row.utility = Some(o.utility);
                row.kkt_max_residual = o.kkt_max_residual();
                row.feasible = Some(o.feasible);
                row.converged = Some(o.converged);
                row.mean_bandwidth_hz = Some(mean(&a.bandwidth));
                row.mean_power_w = Some(mean(&a.power));
                row.mean_server_freq_hz = Some(mean(&a.server_freq));
                row.mean_user_freq_hz = Some(mean(&a.user_freq));
                row.mean_resolution_px = Some(mean(&a.resolution));
            }
            Err(e) => row.error = Some(e),
        }
        row
    }
}

/// Runs every value × seed × policy combination and returns the rows in
/// that nesting order, whatever order the workers finish in.
pub fn run_sweep(spec: &SweepSpec, cfg: &OptimizerConfig) -> Result<Vec<SweepRow>, SweepError> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &value in &spec.values {
        for &seed in &spec.seeds {
            for &policy in &spec.policies {
                jobs.push((value, seed, policy));
            }
        }
    }
    let run = |&(value, seed, policy): &(f64, u64, Policy)| {
        let (overrides, n) = spec.point(value);
        let result = gen_scenario(seed, n, &overrides)
            .map_err(|e| e.to_string())
            .and_then(|s| run_policy(policy, &s, cfg).map_err(|e| e.to_string()));
        SweepRow::new(spec.param, value, seed, policy, result)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| SweepError::Pool(e.to_string()))?;
    Ok(pool.install(|| jobs.par_iter().map(run).collect()))
}

/// Writes rows as CSV with a header line.
pub fn rows_to_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    w.flush()?;
    Ok(())
}

/// Column names of [`rows_to_csv`].
pub const CSV_HEADER: [&str; 17] = [
    "sweep_param",
    "sweep_value",
    "seed",
    "policy",
    "ucr",
    "energy_J",
    "delay_s",
    "utility",
    "kkt_max_residual",
    "feasible",
    "converged",
    "mean_bandwidth_hz",
    "mean_power_w",
    "mean_server_freq_hz",
    "mean_user_freq_hz",
    "mean_resolution_px",
    "error",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_matches_row_fields() {
        let row = SweepRow::new(SweepParam::PowerMax, 1.0, 3, Policy::Average, Err("x".into()));
        let mut buf = Vec::new();
        rows_to_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    }

    #[test]
    fn singleton_sweep_is_one_solve() {
        let spec = SweepSpec {
            policies: vec![Policy::Average],
            ..SweepSpec::with_values(SweepParam::BandwidthMax, vec![20e9])
        };
        let rows = run_sweep(&spec, &OptimizerConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_none());
    }
}
