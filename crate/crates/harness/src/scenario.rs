//! Seeded urban scenarios and their JSON form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use ucr_core::fit::{preset_by_name, PRESETS};
use ucr_core::model::{
    thermal_noise_psd, LogUtility, ModelError, ResolutionDomain, SystemParams, UserParams, WorkloadModel,
};

/// Users are placed at distances in `(MIN_DISTANCE_KM, CELL_RADIUS_KM]`.
pub const MIN_DISTANCE_KM: f64 = 0.01;
pub const CELL_RADIUS_KM: f64 = 0.5;
/// Standard deviation of log-normal shadowing in dB.
pub const SHADOWING_STD_DB: f64 = 8.0;
/// Seed of the bundled default scenario.
pub const DEFAULT_SEED: u64 = 1;
/// User count of the bundled default scenario.
pub const DEFAULT_USERS: usize = 5;

/// Errors of scenario construction and loading.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("user count must be at least 1")]
    NoUsers,
    #[error("unknown utility preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid scenario field {path}: {message}")]
    Field { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Channel gain `10^{−(128.1 + 37.6 log₁₀ d + X)/10}` at distance `d` km with shadowing `X` dB.
pub fn path_gain(distance_km: f64, shadowing_db: f64) -> f64 {
    10f64.powf(-(128.1 + 37.6 * distance_km.log10() + shadowing_db) / 10.0)
}

/// Budget and weight overrides applied on top of the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    /// Total bandwidth in Hz.
    pub bandwidth_max: Option<f64>,
    /// Total transmit power in W.
    pub power_max: Option<f64>,
    /// Total server CPU frequency in Hz.
    pub server_freq_max: Option<f64>,
    /// Per-user CPU frequency cap in Hz.
    pub user_freq_max: Option<f64>,
    pub energy_weight: Option<f64>,
    pub delay_weight: Option<f64>,
    /// Draw log-normal shadowing for every user.
    pub shadowing: bool,
    /// Utility presets assigned round-robin; empty means all presets.
    pub presets: Vec<String>,
}

impl Overrides {
    fn apply(&self, params: &mut SystemParams) {
        if let Some(v) = self.bandwidth_max {
            params.bandwidth_max = v;
        }
        if let Some(v) = self.power_max {
            params.power_max = v;
        }
        if let Some(v) = self.server_freq_max {
            params.server_freq_max = v;
        }
        if let Some(v) = self.user_freq_max {
            for u in &mut params.users {
                u.freq_max = v;
            }
        }
        if let Some(v) = self.energy_weight {
            params.energy_weight = v;
        }
        if let Some(v) = self.delay_weight {
            params.delay_weight = v;
        }
    }
}

/// A generated or loaded problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    /// Distances in km; empty when the scenario was loaded from gains.
    pub distances_km: Vec<f64>,
    /// Shadowing draws in dB; empty when the scenario was loaded from gains.
    pub shadowing_db: Vec<f64>,
    pub params: SystemParams,
    pub utilities: Vec<LogUtility>,
}

impl Scenario {
    pub fn n_users(&self) -> usize {
        self.params.n_users()
    }
}

/// Draws user positions uniformly over the annulus between the minimum
/// distance and the cell radius, derives gains and assigns utility presets.
pub fn gen_scenario(seed: u64, n_users: usize, overrides: &Overrides) -> Result<Scenario, ScenarioError> {
    if n_users < 1 {
        return Err(ScenarioError::NoUsers);
    }
    let presets: Vec<LogUtility> = if overrides.presets.is_empty() {
        PRESETS.iter().map(|p| p.utility).collect()
    } else {
        overrides
            .presets
            .iter()
            .map(|name| {
                preset_by_name(name)
                    .map(|p| p.utility)
                    .ok_or_else(|| ScenarioError::UnknownPreset(name.clone()))
            })
            .collect::<Result<_, _>>()?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inner, outer) = (MIN_DISTANCE_KM.powi(2), CELL_RADIUS_KM.powi(2));
    let distances_km: Vec<f64> = (0..n_users)
        .map(|_| {
            let u: f64 = rng.random();
            // `1 − u` lies in (0, 1], so the distance lies in (d_min, R].
            (inner + (1.0 - u) * (outer - inner)).sqrt().max(MIN_DISTANCE_KM.next_up())
        })
        .collect();
    let shadowing_db: Vec<f64> = if overrides.shadowing {
        let normal = Normal::new(0.0, SHADOWING_STD_DB).expect("finite standard deviation");
        (0..n_users).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; n_users]
    };
    let gains: Vec<f64> = distances_km
        .iter()
        .zip(&shadowing_db)
        .map(|(&d, &x)| path_gain(d, x))
        .collect();
    let mut params = SystemParams::with_gains(&gains);
    overrides.apply(&mut params);
    params.validate()?;
    let utilities = (0..n_users).map(|n| presets[n % presets.len()]).collect();
    Ok(Scenario {
        seed,
        distances_km,
        shadowing_db,
        params,
        utilities,
    })
}

/// The bundled default scenario: seed 1, five users, no shadowing.
pub fn default_scenario() -> Scenario {
    gen_scenario(DEFAULT_SEED, DEFAULT_USERS, &Overrides::default()).expect("defaults are valid")
}

/// Parameters shared by every user in the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserDefaults {
    pub noise_psd: f64,
    pub bits_per_pixel: f64,
    pub compression_ratio: f64,
    pub frames: f64,
    pub circuit_power: f64,
    pub capacitance: f64,
    pub freq_max: f64,
    pub resolution: ResolutionDomain,
}

impl Default for UserDefaults {
    fn default() -> Self {
        let u = UserParams::with_gain(1.0);
        Self {
            noise_psd: thermal_noise_psd(),
            bits_per_pixel: u.bits_per_pixel,
            compression_ratio: u.compression_ratio,
            frames: u.frames,
            circuit_power: u.circuit_power,
            capacitance: u.capacitance,
            freq_max: u.freq_max,
            resolution: u.resolution,
        }
    }
}

/// System-wide parameters in the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsFile {
    pub bandwidth_max: f64,
    pub power_max: f64,
    pub server_freq_max: f64,
    pub server_capacitance: f64,
    pub energy_weight: f64,
    pub delay_weight: f64,
    pub workload: WorkloadModel,
    pub user_defaults: UserDefaults,
}

impl Default for ParamsFile {
    fn default() -> Self {
        let p = SystemParams::with_gains(&[]);
        Self {
            bandwidth_max: p.bandwidth_max,
            power_max: p.power_max,
            server_freq_max: p.server_freq_max,
            server_capacitance: p.server_capacitance,
            energy_weight: p.energy_weight,
            delay_weight: p.delay_weight,
            workload: p.workload,
            user_defaults: UserDefaults::default(),
        }
    }
}

/// One user in the JSON form. Fields other than `g` and `utility` override
/// the shared defaults for this user only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserFile {
    /// Channel power gain.
    pub g: f64,
    pub utility: LogUtility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadowing_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freq_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<ResolutionDomain>,
}

/// Scenario file `{seed, n_users, params, users: [{g, utility}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub seed: u64,
    pub n_users: usize,
    #[serde(default)]
    pub params: ParamsFile,
    pub users: Vec<UserFile>,
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        let p = &s.params;
        let first = &p.users[0];
        let user_defaults = UserDefaults {
            noise_psd: first.noise_psd,
            bits_per_pixel: first.bits_per_pixel,
            compression_ratio: first.compression_ratio,
            frames: first.frames,
            circuit_power: first.circuit_power,
            capacitance: first.capacitance,
            freq_max: first.freq_max,
            resolution: first.resolution.clone(),
        };
        let users = p
            .users
            .iter()
            .enumerate()
            .map(|(n, u)| UserFile {
                g: u.gain,
                utility: s.utilities[n],
                distance_km: s.distances_km.get(n).copied(),
                shadowing_db: s.shadowing_db.get(n).copied(),
                freq_max: (u.freq_max != user_defaults.freq_max).then_some(u.freq_max),
                resolution: (u.resolution != user_defaults.resolution).then(|| u.resolution.clone()),
            })
            .collect();
        ScenarioFile {
            seed: s.seed,
            n_users: p.n_users(),
            params: ParamsFile {
                bandwidth_max: p.bandwidth_max,
                power_max: p.power_max,
                server_freq_max: p.server_freq_max,
                server_capacitance: p.server_capacitance,
                energy_weight: p.energy_weight,
                delay_weight: p.delay_weight,
                workload: p.workload,
                user_defaults,
            },
            users,
        }
    }
}

impl ScenarioFile {
    /// Builds and validates the scenario.
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        if self.users.len() != self.n_users {
            return Err(ScenarioError::Field {
                path: "users".into(),
                message: format!("has {} entries but n_users is {}", self.users.len(), self.n_users),
            });
        }
        if self.n_users == 0 {
            return Err(ScenarioError::NoUsers);
        }
        let d = &self.params.user_defaults;
        let mut users = Vec::with_capacity(self.n_users);
        let mut utilities = Vec::with_capacity(self.n_users);
        for (n, u) in self.users.iter().enumerate() {
            u.utility.validate().map_err(|e| ScenarioError::Field {
                path: format!("users[{n}].utility"),
                message: e.to_string(),
            })?;
            users.push(UserParams {
                gain: u.g,
                noise_psd: d.noise_psd,
                bits_per_pixel: d.bits_per_pixel,
                compression_ratio: d.compression_ratio,
                frames: d.frames,
                circuit_power: d.circuit_power,
                capacitance: d.capacitance,
                freq_max: u.freq_max.unwrap_or(d.freq_max),
                resolution: u.resolution.clone().unwrap_or_else(|| d.resolution.clone()),
            });
            utilities.push(u.utility);
        }
        let params = SystemParams {
            users,
            server_capacitance: self.params.server_capacitance,
            bandwidth_max: self.params.bandwidth_max,
            power_max: self.params.power_max,
            server_freq_max: self.params.server_freq_max,
            energy_weight: self.params.energy_weight,
            delay_weight: self.params.delay_weight,
            workload: self.params.workload,
        };
        params.validate()?;
        let all = |f: fn(&UserFile) -> Option<f64>| -> Vec<f64> {
            let v: Vec<Option<f64>> = self.users.iter().map(f).collect();
            if v.iter().all(Option::is_some) {
                v.into_iter().flatten().collect()
            } else {
                Vec::new()
            }
        };
        Ok(Scenario {
            seed: self.seed,
            distances_km: all(|u| u.distance_km),
            shadowing_db: all(|u| u.shadowing_db),
            params,
            utilities,
        })
    }
}

/// Parses a scenario from JSON, reporting the path of a malformed field.
pub fn scenario_from_json(text: &str) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Field {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    file.into_scenario()
}

/// Serializes a scenario to pretty JSON.
pub fn scenario_to_json(s: &Scenario) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from(s)).expect("scenario serializes")
}
