//! Longitudinal vehicle model in error coordinates and its forward-Euler
//! discretization.
//!
//! A follower carries `x = [e_p, e_v, acc]` and evolves as
//! `x' = A x + B u + C acc_pred` with
//!
//! ```text
//!     | 0  1  -h    |        | 0     |        | 0 |
//! A = | 0  0  -1    |,   B = | 0     |,   C = | 1 |
//!     | 0  0  -1/tau|        | 1/tau |        | 0 |
//! ```
//!
//! The leader only carries its acceleration (its errors are zero by
//! definition). After every Euler step the acceleration is clamped to
//! `[acc_min, acc_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{clamp, Scalar};

/// Physical constants of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams<T> {
    /// Driveline time constant (s).
    pub tau: T,
    /// Desired time gap (s).
    pub h: T,
    /// Standstill distance (m). Only used to reconstruct absolute gaps.
    pub r: T,
    /// Vehicle length (m). Only used to reconstruct absolute gaps.
    pub length: T,
    pub u_min: T,
    pub u_max: T,
    pub acc_min: T,
    pub acc_max: T,
}

impl<T: Scalar> VehicleParams<T> {
    /// Table-I style vehicle with the given driveline constant: `h = 0.3 s`,
    /// control and acceleration limits of `±2.6 m/s²`.
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau: T::lit(tau),
            h: T::lit(0.3),
            r: T::lit(2.0),
            length: T::lit(4.0),
            u_min: T::lit(-2.6),
            u_max: T::lit(2.6),
            acc_min: T::lit(-2.6),
            acc_max: T::lit(2.6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.tau, self.h, self.r, self.length, self.u_min, self.u_max, self.acc_min, self.acc_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("vehicle parameters must be finite".into()));
        }
        if self.tau <= T::zero() {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.h < T::zero() {
            return Err(Error::Config(format!("time gap must be non-negative, got {}", self.h)));
        }
        if self.u_min >= self.u_max {
            return Err(Error::Config("u_min must be below u_max".into()));
        }
        if self.acc_min >= self.acc_max {
            return Err(Error::Config("acc_min must be below acc_max".into()));
        }
        Ok(())
    }

    /// Desired bumper-to-bumper gap under the constant time-headway policy.
    pub fn desired_gap(&self, speed: T) -> T {
        self.r + self.h * speed
    }
}

/// `[e_p, e_v, acc]` of one follower.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalState<T> {
    pub e_p: T,
    pub e_v: T,
    pub acc: T,
}

impl<T: Scalar> LocalState<T> {
    pub fn new(e_p: T, e_v: T, acc: T) -> Self {
        Self { e_p, e_v, acc }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn to_array(self) -> [T; 3] {
        [self.e_p, self.e_v, self.acc]
    }

    fn check_finite(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("non-finite local state {self:?}")))
        }
    }
}

/// Leader acceleration; its position and velocity errors are identically zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeaderState<T> {
    pub acc: T,
}

/// Discretization interval and episode length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub horizon: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { dt: 0.1, horizon: 100 }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        Ok(())
    }
}

pub fn clamp_control<T: Scalar>(u: T, params: &VehicleParams<T>) -> T {
    clamp(u, params.u_min, params.u_max)
}

/// Continuous-time derivative `A x + B u + C acc_pred`.
pub fn follower_rates<T: Scalar>(x: &LocalState<T>, u: T, acc_pred: T, params: &VehicleParams<T>) -> [T; 3] {
    [
        x.e_v - params.h * x.acc,
        -x.acc + acc_pred,
        (-x.acc + u) / params.tau,
    ]
}

/// Euler step without acceleration saturation; linear in `(x, u, acc_pred)`.
pub fn euler_step_follower_linear<T: Scalar>(
    x: &LocalState<T>,
    u: T,
    acc_pred: T,
    params: &VehicleParams<T>,
    dt: T,
) -> LocalState<T> {
    let [de_p, de_v, dacc] = follower_rates(x, u, acc_pred, params);
    LocalState::new(x.e_p + dt * de_p, x.e_v + dt * de_v, x.acc + dt * dacc)
}

pub fn euler_step_follower<T: Scalar>(
    x: &LocalState<T>,
    u: T,
    acc_pred: T,
    params: &VehicleParams<T>,
    dt: T,
) -> Result<LocalState<T>> {
    x.check_finite()?;
    if !(u.is_finite() && acc_pred.is_finite() && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite follower input u={u}, acc_pred={acc_pred}, dt={dt}"
        )));
    }
    let mut next = euler_step_follower_linear(x, u, acc_pred, params, dt);
    next.acc = clamp(next.acc, params.acc_min, params.acc_max);
    Ok(next)
}

pub fn euler_step_leader<T: Scalar>(s: &LeaderState<T>, u0: T, params: &VehicleParams<T>, dt: T) -> Result<LeaderState<T>> {
    if !(s.acc.is_finite() && u0.is_finite() && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite leader input acc={}, u0={u0}, dt={dt}",
            s.acc
        )));
    }
    let acc = s.acc + dt * (-s.acc + u0) / params.tau;
    Ok(LeaderState {
        acc: clamp(acc, params.acc_min, params.acc_max),
    })
}

/// Leader plus followers `1..N-1`, in index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatoonState<T> {
    pub leader: LeaderState<T>,
    pub followers: Vec<LocalState<T>>,
}

impl<T: Scalar> PlatoonState<T> {
    pub fn at_rest(n_vehicles: usize) -> Self {
        Self {
            leader: LeaderState::default(),
            followers: vec![LocalState::zero(); n_vehicles.saturating_sub(1)],
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.followers.len() + 1
    }

    pub fn acc(&self, vehicle: usize) -> T {
        if vehicle == 0 {
            self.leader.acc
        } else {
            self.followers[vehicle - 1].acc
        }
    }

    /// `[e_p, e_v, acc]` of any vehicle; the leader reports zero errors.
    pub fn local(&self, vehicle: usize) -> LocalState<T> {
        if vehicle == 0 {
            LocalState::new(T::zero(), T::zero(), self.leader.acc)
        } else {
            self.followers[vehicle - 1]
        }
    }
}

/// Advances every vehicle by one step from a common snapshot.
///
/// `controls` and `params` are ordered leader first. Each follower reads
/// its predecessor's acceleration from the pre-step state.
pub fn platoon_step<T: Scalar>(
    states: &PlatoonState<T>,
    controls: &[T],
    params: &[VehicleParams<T>],
    dt: T,
) -> Result<PlatoonState<T>> {
    let n = states.n_vehicles();
    if n < 2 {
        return Err(Error::Config(format!("a platoon needs at least two vehicles, got {n}")));
    }
    if controls.len() != n || params.len() != n {
        return Err(Error::Config(format!(
            "platoon of {n} vehicles given {} controls and {} parameter sets",
            controls.len(),
            params.len()
        )));
    }
    let leader = euler_step_leader(&states.leader, controls[0], &params[0], dt)?;
    let followers = states
        .followers
        .iter()
        .enumerate()
        .map(|(idx, x)| {
            let vehicle = idx + 1;
            euler_step_follower(x, controls[vehicle], states.acc(vehicle - 1), &params[vehicle], dt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlatoonState { leader, followers })
}
