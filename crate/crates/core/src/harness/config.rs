use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ddpg::DdpgConfig;
use crate::dynamics::VehicleParams;
use crate::error::{Error, Result};
use crate::exogenous::GaussianInputConfig;
use crate::kl::QuantizationScheme;
use crate::problems::{PlatoonModel, ProblemId, RewardParams, TwoVehicleModel};

pub const CONFIG_FORMAT: &str = "platoon-experiment/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    TwoVehicle,
    Platoon,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::TwoVehicle => "two_vehicle",
            Scenario::Platoon => "platoon",
        }
    }

    pub fn default_problems(self) -> Vec<ProblemId> {
        match self {
            Scenario::TwoVehicle => ProblemId::TWO_VEHICLE.to_vec(),
            Scenario::Platoon => ProblemId::PLATOON.to_vec(),
        }
    }
}

/// Constants shared by every vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleDefaults {
    pub time_gap: f64,
    /// Symmetric bound on control and acceleration.
    pub limit: f64,
}

impl VehicleDefaults {
    pub fn params(&self, tau: f64) -> VehicleParams<f64> {
        VehicleParams {
            h: self.time_gap,
            u_min: -self.limit,
            u_max: self.limit,
            acc_min: -self.limit,
            acc_max: self.limit,
            ..VehicleParams::with_tau(tau)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoVehicleSetup {
    pub predecessor_tau: f64,
    pub ego_tau: f64,
    pub initial: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSetup {
    /// Leader first.
    pub taus: Vec<f64>,
    pub ego: usize,
    /// Initial `e_p, e_v, acc` of every follower.
    pub initial: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSetup {
    pub episodes: usize,
    pub q_scatter_episodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlRange {
    pub error: [f64; 2],
    pub acc: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSetup {
    pub bins: usize,
    pub range: KlRange,
    pub episodes: usize,
    pub min_samples: usize,
    /// Steps treated as the initial transient when summarizing curves.
    pub transient: usize,
}

impl KlSetup {
    pub fn scheme(&self) -> QuantizationScheme {
        QuantizationScheme {
            bins: self.bins,
            error_range: self.range.error,
            acc_range: self.range.acc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremSetup {
    pub instances: usize,
    pub seed: u64,
}

/// Everything a run depends on. The output directory is not part of it, so
/// the same configuration written elsewhere yields identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format: String,
    pub scenario: Scenario,
    pub problems: Vec<ProblemId>,
    pub seeds: Vec<u64>,
    pub horizon: usize,
    pub dt: f64,
    pub vehicle: VehicleDefaults,
    pub reward: RewardParams,
    pub two_vehicle: TwoVehicleSetup,
    pub platoon: PlatoonSetup,
    pub exo: GaussianInputConfig,
    pub trainer: DdpgConfig,
    pub eval: EvalSetup,
    pub kl: KlSetup,
    pub theorems: TheoremSetup,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::new(Scenario::TwoVehicle)
    }
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            format: CONFIG_FORMAT.into(),
            scenario,
            problems: scenario.default_problems(),
            seeds: (0..5).collect(),
            horizon: 100,
            dt: 0.1,
            vehicle: VehicleDefaults { time_gap: 0.3, limit: 2.6 },
            reward: RewardParams::default(),
            two_vehicle: TwoVehicleSetup {
                predecessor_tau: 0.45,
                ego_tau: 0.5,
                initial: [2.5, 2.5, 0.0],
            },
            platoon: PlatoonSetup {
                taus: vec![0.45, 0.5, 0.25, 0.2, 0.1, 0.3],
                ego: 4,
                initial: [1.5, -1.0, 0.0],
            },
            exo: GaussianInputConfig::default(),
            trainer: DdpgConfig::default(),
            eval: EvalSetup {
                episodes: 200,
                q_scatter_episodes: 5,
            },
            kl: KlSetup {
                bins: 8,
                range: KlRange {
                    error: [-3.0, 3.0],
                    acc: [-2.6, 2.6],
                },
                episodes: 200,
                min_samples: 50,
                transient: 10,
            },
            theorems: TheoremSetup { instances: 50, seed: 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CONFIG_FORMAT {
            return Err(Error::Format(format!("unsupported config format {:?}", self.format)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.horizon == 0 || !(self.dt > 0.0) {
            return Err(Error::Config("horizon and dt must be positive".into()));
        }
        self.reward.validate()?;
        self.exo.validate()?;
        self.trainer.validate()?;
        self.kl.scheme().validate()?;
        if self.trainer.reward_scale != self.reward.scale {
            return Err(Error::Config(format!(
                "trainer.reward_scale {} differs from reward.scale {}",
                self.trainer.reward_scale, self.reward.scale
            )));
        }
        if self.eval.episodes == 0 || self.kl.episodes == 0 || self.theorems.instances == 0 {
            return Err(Error::Config("episode and instance counts must be positive".into()));
        }
        for p in &self.problems {
            let ok = match self.scenario {
                Scenario::TwoVehicle => p.is_two_vehicle(),
                Scenario::Platoon => !p.is_two_vehicle(),
            };
            if !ok {
                return Err(Error::Config(format!("{p} does not belong to the {} scenario", self.scenario.tag())));
            }
        }
        let n = self.platoon.taus.len();
        if self.platoon.ego < 2 || self.platoon.ego >= n {
            return Err(Error::Config(format!("platoon ego {} needs 2 <= ego < {n}", self.platoon.ego)));
        }
        if self.problems.contains(&ProblemId::P6) && self.platoon.ego + 1 >= n {
            return Err(Error::Config("P6 needs at least one follower behind the ego".into()));
        }
        for &t in self.platoon.taus.iter().chain([&self.two_vehicle.ego_tau, &self.two_vehicle.predecessor_tau]) {
            self.vehicle.params(t).validate()?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        crate::ddpg::hex_digest(text.as_bytes())
    }

    pub fn two_vehicle_model(&self) -> TwoVehicleModel {
        TwoVehicleModel {
            ego: self.vehicle.params(self.two_vehicle.ego_tau),
            predecessor: self.vehicle.params(self.two_vehicle.predecessor_tau),
            dt: self.dt,
            reward: self.reward,
        }
    }

    /// Leader plus followers `1..n`.
    pub fn platoon_model(&self, n: usize) -> PlatoonModel {
        PlatoonModel {
            params: self.platoon.taus[..n].iter().map(|&t| self.vehicle.params(t)).collect(),
            dt: self.dt,
            reward: self.reward,
        }
    }

    /// Sets a dotted key such as `exo.std` or `kl.range.error`. Values are
    /// parsed as JSON, falling back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("bad value {value:?} for {key}: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` pairs in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, pairs: &[S]) -> Result<()> {
        for p in pairs {
            let (k, v) = p
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", p.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Reads the configuration embedded in a run manifest.
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        let m: super::output::Manifest = serde_json::from_str(&text)?;
        if m.format != super::output::MANIFEST_FORMAT {
            return Err(Error::Format(format!("unsupported manifest format {:?}", m.format)));
        }
        if m.config.digest() != m.digest {
            return Err(Error::Format(format!("{}: config does not match its digest", path.display())));
        }
        m.config.validate()?;
        Ok(m.config)
    }
}
