//! Uncontrolled control inputs: the predecessor in the two-vehicle case,
//! the leader in the platoon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Configuration of an i.i.d. clipped Gaussian input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianInputConfig {
    pub mean: f64,
    pub std: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub seed: u64,
}

impl Default for GaussianInputConfig {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 0.3,
            clip_lo: -2.6,
            clip_hi: 2.6,
            seed: 0,
        }
    }
}

impl GaussianInputConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.std >= 0.0 && self.std.is_finite()) {
            return Err(Error::Config(format!("exogenous std must be >= 0, got {}", self.std)));
        }
        if !(self.clip_lo <= self.clip_hi) || !self.mean.is_finite() {
            return Err(Error::Config("exogenous clip range must satisfy lo <= hi and mean must be finite".into()));
        }
        Ok(())
    }

    /// One clipped draw from an external generator.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        (self.mean + self.std * rng::standard_normal(rng)).clamp(self.clip_lo, self.clip_hi)
    }
}

/// Stateful sampler; owns its generator.
#[derive(Clone, Debug)]
pub struct GaussianInputProcess {
    config: GaussianInputConfig,
    rng: StreamRng,
}

impl GaussianInputProcess {
    pub fn new(config: GaussianInputConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            rng: rng::stream(config.seed, rng::streams::EXOGENOUS),
            config,
        })
    }

    /// Same distribution on an explicit stream, used when one experiment
    /// needs several independent exogenous sequences.
    pub fn with_rng(config: GaussianInputConfig, rng: StreamRng) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &GaussianInputConfig {
        &self.config
    }

    pub fn sample(&mut self) -> f64 {
        self.config.draw(&mut self.rng)
    }
}

/// `k_steps` draws from a fresh process seeded by `config.seed`.
pub fn sample_sequence(config: &GaussianInputConfig, k_steps: usize) -> Result<Vec<f64>> {
    if k_steps == 0 {
        return Err(Error::Config("k_steps must be at least 1".into()));
    }
    let mut process = GaussianInputProcess::new(*config)?;
    Ok((0..k_steps).map(|_| process.sample()).collect())
}
