use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::standard_normal;

/// Ornstein-Uhlenbeck parameters in per-step units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuConfig {
    pub theta: f64,
    pub sigma: f64,
    /// Shrink sigma linearly to zero over each stage's episodes.
    #[serde(default)]
    pub anneal: bool,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma: 0.5,
            anneal: false,
        }
    }
}

impl OuConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 2.0) || !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("OU needs 0 < theta < 2 and sigma >= 0, got {self:?}")));
        }
        Ok(())
    }

    /// `sigma^2 / (2 theta - theta^2)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.theta - self.theta * self.theta)
    }
}

/// Discrete OU process `x <- x - theta x + sigma N(0,1)`, reverting to zero.
#[derive(Clone, Debug)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    x: f64,
}

impl OuNoise {
    pub fn new(config: &OuConfig) -> Self {
        Self {
            theta: config.theta,
            sigma: config.sigma,
            x: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.x = 0.0;
    }

    pub fn state(&self) -> f64 {
        self.x
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.x += -self.theta * self.x + self.sigma * standard_normal(rng);
        self.x
    }
}
