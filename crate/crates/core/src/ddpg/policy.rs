use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Mlp, OptimizerKind};
use crate::problems::{Controller, PlatoonSnapshot, ProblemId, StateLayout};
use crate::scalar::Scalar;

const FORMAT: &str = "platoon-policy/1";
const MANIFEST: &str = "manifest.json";

/// Per-step actors and critics from one training run.
#[derive(Clone, Debug)]
pub struct TrainedPolicy<T> {
    pub problem: ProblemId,
    pub actors: Vec<Mlp<T>>,
    pub critics: Vec<Mlp<T>>,
    /// Digest of the configuration that produced the policy.
    pub digest: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    problem: ProblemId,
    horizon: usize,
    digest: String,
    seed: u64,
    /// File name -> SHA-256 of its bytes.
    files: BTreeMap<String, String>,
}

fn file_name(step: usize, role: &str) -> String {
    format!("step{step:03}_{role}.json")
}

/// SHA-256 over the bit patterns of a network's flat parameters.
pub fn network_digest<T: Scalar>(mlp: &Mlp<T>) -> String {
    let mut h = Sha256::new();
    for v in mlp.to_flat() {
        h.update(v.as_f64().to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn hex_digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl<T: Scalar> TrainedPolicy<T> {
    pub fn horizon(&self) -> usize {
        self.actors.len()
    }

    pub fn state_dim(&self) -> usize {
        self.actors[0].spec().input_dim
    }

    /// Deterministic action of `actor_step`.
    pub fn act(&self, step: usize, state: &[f64]) -> Result<f64> {
        let actor = self.actors.get(step).ok_or_else(|| {
            Error::InvalidInput(format!("step {step} outside horizon {}", self.actors.len()))
        })?;
        let input: Vec<T> = state.iter().map(|&v| T::lit(v)).collect();
        Ok(actor.predict(&input, None)?[0].as_f64())
    }

    /// Critic estimate in training (scaled) units.
    pub fn q(&self, step: usize, state: &[f64], action: f64) -> Result<f64> {
        let critic = self.critics.get(step).ok_or_else(|| {
            Error::InvalidInput(format!("step {step} outside horizon {}", self.critics.len()))
        })?;
        let input: Vec<T> = state.iter().map(|&v| T::lit(v)).collect();
        Ok(critic.predict(&input, Some(T::lit(action)))?[0].as_f64())
    }

    /// One file per (step, role) plus a manifest with digests.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = BTreeMap::new();
        for (k, (a, c)) in self.actors.iter().zip(&self.critics).enumerate() {
            for (role, net) in [("actor", a), ("critic", c)] {
                let name = file_name(k, role);
                let text = serde_json::to_string(&Checkpoint::from_mlp(net, self.seed))?;
                files.insert(name.clone(), hex(&Sha256::digest(text.as_bytes())));
                fs::write(dir.join(name), text)?;
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            problem: self.problem,
            horizon: self.horizon(),
            digest: self.digest.clone(),
            seed: self.seed,
            files,
        };
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, optimizer: OptimizerKind) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!("unknown policy format {:?}", manifest.format)));
        }
        let mut actors = Vec::with_capacity(manifest.horizon);
        let mut critics = Vec::with_capacity(manifest.horizon);
        for k in 0..manifest.horizon {
            for role in ["actor", "critic"] {
                let name = file_name(k, role);
                let p = dir.join(&name);
                let text = fs::read_to_string(&p).map_err(|e| Error::MissingArtifact(format!("{}: {e}", p.display())))?;
                if manifest.files.get(&name) != Some(&hex(&Sha256::digest(text.as_bytes()))) {
                    return Err(Error::Format(format!("{} does not match the manifest digest", p.display())));
                }
                let ck: Checkpoint = serde_json::from_str(&text)?;
                let net = ck.to_mlp(optimizer)?;
                if role == "actor" {
                    actors.push(net);
                } else {
                    critics.push(net);
                }
            }
        }
        if actors.is_empty() {
            return Err(Error::Format("policy with zero steps".into()));
        }
        Ok(Self {
            problem: manifest.problem,
            actors,
            critics,
            digest: manifest.digest,
            seed: manifest.seed,
        })
    }
}

/// Frozen platoon followers, each reading its own layout.
///
/// Steps past a policy's horizon reuse its last actor; that only happens
/// when building the state after the final step.
pub struct FrozenFollowers<T> {
    members: BTreeMap<usize, (TrainedPolicy<T>, StateLayout)>,
}

impl<T: Scalar> FrozenFollowers<T> {
    pub fn new() -> Self {
        Self { members: BTreeMap::new() }
    }

    pub fn insert(&mut self, vehicle: usize, policy: TrainedPolicy<T>, layout: StateLayout) -> Result<()> {
        if layout.ego != vehicle {
            return Err(Error::Config(format!("layout for vehicle {} given to vehicle {vehicle}", layout.ego)));
        }
        if policy.state_dim() != layout.dim() {
            return Err(Error::Dimension {
                what: "follower policy input",
                expected: layout.dim(),
                got: policy.state_dim(),
            });
        }
        self.members.insert(vehicle, (policy, layout));
        Ok(())
    }

    pub fn contains(&self, vehicle: usize) -> bool {
        self.members.contains_key(&vehicle)
    }
}

impl<T: Scalar> Default for FrozenFollowers<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Controller for FrozenFollowers<T> {
    fn control(&self, vehicle: usize, step: usize, snapshot: &PlatoonSnapshot) -> Result<f64> {
        let (policy, layout) = self
            .members
            .get(&vehicle)
            .ok_or_else(|| Error::MissingArtifact(format!("no trained policy for vehicle {vehicle}")))?;
        let s = layout.extract(snapshot)?;
        policy.act(step.min(policy.horizon() - 1), &s)
    }
}
