//! The decision problems: which quantities enter the ego vehicle's state
//! under each V2X information set, the local reward, and the one-step
//! transitions.
//!
//! Two-vehicle problems (ego `i`, predecessor `i-1` driven by an i.i.d.
//! input):
//!
//! | tag | state |
//! |-----|-------|
//! | P1  | `e_p, e_v, acc` |
//! | P2  | P1 + `acc[i-1]` |
//! | P3  | P2 + `u[i-1]` |
//!
//! Platoon problems (leader input i.i.d., predecessors run frozen policies
//! and decide before the ego within each step):
//!
//! | tag  | V2X information added to the ego's own `e_p, e_v, acc` |
//! |------|------|
//! | P4   | `acc[i-1], u[i-1]` |
//! | PF2  | P4 + `e_p[i-1], e_v[i-1]` |
//! | PLF  | P4 + `acc[0], u[0]` |
//! | TPF  | P4 + `e_p[i-2], e_v[i-2], acc[i-2], u[i-2]` |
//! | TPLF | TPF + `acc[0], u[0]` |
//! | P5   | every predecessor's `[e_p, e_v, acc]` and `u` |
//! | P6   | P5 + every follower's `[e_p, e_v, acc]` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{clamp_control, euler_step_follower, euler_step_leader, platoon_step, LeaderState, LocalState, PlatoonState, VehicleParams};
use crate::error::{ensure_finite, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemId {
    P1,
    P2,
    P3,
    P4,
    PF2,
    PLF,
    TPF,
    TPLF,
    P5,
    P6,
}

impl ProblemId {
    pub const ALL: [ProblemId; 10] = [
        ProblemId::P1,
        ProblemId::P2,
        ProblemId::P3,
        ProblemId::P4,
        ProblemId::PF2,
        ProblemId::PLF,
        ProblemId::TPF,
        ProblemId::TPLF,
        ProblemId::P5,
        ProblemId::P6,
    ];

    pub const TWO_VEHICLE: [ProblemId; 3] = [ProblemId::P1, ProblemId::P2, ProblemId::P3];

    /// Ego problems of the platoon study.
    pub const PLATOON: [ProblemId; 7] = [
        ProblemId::P4,
        ProblemId::PF2,
        ProblemId::PLF,
        ProblemId::TPF,
        ProblemId::TPLF,
        ProblemId::P5,
        ProblemId::P6,
    ];

    /// Reduced information sets compared against P5 for value of information.
    pub const KL_REDUCED: [ProblemId; 5] = [ProblemId::P4, ProblemId::PF2, ProblemId::PLF, ProblemId::TPF, ProblemId::TPLF];

    pub fn tag(self) -> &'static str {
        match self {
            ProblemId::P1 => "P1",
            ProblemId::P2 => "P2",
            ProblemId::P3 => "P3",
            ProblemId::P4 => "P4",
            ProblemId::PF2 => "PF2",
            ProblemId::PLF => "PLF",
            ProblemId::TPF => "TPF",
            ProblemId::TPLF => "TPLF",
            ProblemId::P5 => "P5",
            ProblemId::P6 => "P6",
        }
    }

    pub fn is_two_vehicle(self) -> bool {
        matches!(self, ProblemId::P1 | ProblemId::P2 | ProblemId::P3)
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['_', '-'], "");
        let norm = norm.strip_prefix("PP").map(|rest| format!("P{rest}")).unwrap_or(norm);
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.tag() == norm || format!("P{}", p.tag()) == norm)
            .ok_or_else(|| Error::Config(format!("unknown problem tag '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    Ep,
    Ev,
    Acc,
    Control,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Component {
    pub kind: Kind,
    pub vehicle: usize,
}

impl Component {
    pub const fn new(kind: Kind, vehicle: usize) -> Self {
        Self { kind, vehicle }
    }

    pub fn name(&self) -> String {
        let k = match self.kind {
            Kind::Ep => "e_p",
            Kind::Ev => "e_v",
            Kind::Acc => "acc",
            Kind::Control => "u",
        };
        format!("{k}[{}]", self.vehicle)
    }

    /// Measured on board by `ego` without any V2X message.
    pub fn is_local_to(&self, ego: usize) -> bool {
        self.vehicle == ego && self.kind != Kind::Control
    }
}

/// Whether the leader's identically-zero `e_p, e_v` appear in layouts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeaderComponents {
    #[default]
    Drop,
    Include,
}

/// Ordered composition of one problem's state vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub problem: ProblemId,
    pub ego: usize,
    pub n_vehicles: usize,
    pub components: Vec<Component>,
}

impl StateLayout {
    pub fn new(problem: ProblemId, ego: usize, n_vehicles: usize, leader: LeaderComponents) -> Result<Self> {
        if ego == 0 || ego >= n_vehicles {
            return Err(Error::Config(format!("ego {ego} must be a follower of a {n_vehicles}-vehicle platoon")));
        }
        let min_ego = match problem {
            ProblemId::PF2 | ProblemId::PLF | ProblemId::TPF => 2,
            ProblemId::TPLF => 3,
            _ => 1,
        };
        if ego < min_ego {
            return Err(Error::Config(format!("{problem} needs ego index >= {min_ego}, got {ego}")));
        }
        let local = |j: usize, out: &mut Vec<Component>| {
            if j > 0 || leader == LeaderComponents::Include {
                out.push(Component::new(Kind::Ep, j));
                out.push(Component::new(Kind::Ev, j));
            }
            out.push(Component::new(Kind::Acc, j));
        };
        let mut c = Vec::new();
        let i = ego;
        match problem {
            ProblemId::P5 | ProblemId::P6 => {
                for j in 0..=i {
                    local(j, &mut c);
                }
                c.extend((0..i).map(|j| Component::new(Kind::Control, j)));
                if problem == ProblemId::P6 {
                    for j in i + 1..n_vehicles {
                        local(j, &mut c);
                    }
                }
            }
            _ => {
                local(i, &mut c);
                if problem != ProblemId::P1 {
                    c.push(Component::new(Kind::Acc, i - 1));
                }
                if !matches!(problem, ProblemId::P1 | ProblemId::P2) {
                    c.push(Component::new(Kind::Control, i - 1));
                }
                match problem {
                    ProblemId::PF2 => {
                        c.push(Component::new(Kind::Ep, i - 1));
                        c.push(Component::new(Kind::Ev, i - 1));
                    }
                    ProblemId::PLF => {
                        c.push(Component::new(Kind::Acc, 0));
                        c.push(Component::new(Kind::Control, 0));
                    }
                    ProblemId::TPF | ProblemId::TPLF => {
                        local(i - 2, &mut c);
                        c.push(Component::new(Kind::Control, i - 2));
                        if problem == ProblemId::TPLF {
                            c.push(Component::new(Kind::Acc, 0));
                            c.push(Component::new(Kind::Control, 0));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(Self {
            problem,
            ego,
            n_vehicles,
            components: c,
        })
    }

    /// Two-vehicle problems: predecessor 0, ego 1.
    pub fn two_vehicle(problem: ProblemId) -> Result<Self> {
        Self::new(problem, 1, 2, LeaderComponents::Drop)
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.components.iter().map(Component::name).collect()
    }

    pub fn position(&self, component: Component) -> Option<usize> {
        self.components.iter().position(|&c| c == component)
    }

    /// Reads this layout's state vector from a snapshot.
    pub fn extract(&self, snapshot: &PlatoonSnapshot) -> Result<Vec<f64>> {
        if snapshot.state.n_vehicles() < self.n_vehicles {
            return Err(Error::Config(format!(
                "snapshot covers {} vehicles but {} layout needs {}",
                snapshot.state.n_vehicles(),
                self.problem,
                self.n_vehicles
            )));
        }
        self.components
            .iter()
            .map(|c| {
                let local = snapshot.state.local(c.vehicle);
                Ok(match c.kind {
                    Kind::Ep => local.e_p,
                    Kind::Ev => local.e_v,
                    Kind::Acc => local.acc,
                    Kind::Control => snapshot.controls[c.vehicle].ok_or_else(|| {
                        Error::Sequencing(format!(
                            "{} state needs u[{}] for this step before vehicle {} decides",
                            self.problem, c.vehicle, self.ego
                        ))
                    })?,
                })
            })
            .collect()
    }
}

/// Scalars per step that must reach the ego over V2X, counting the
/// leader's zero errors as if they were transmitted.
pub fn info_bytes(problem: ProblemId, ego: usize, n_vehicles: usize) -> Result<usize> {
    let layout = StateLayout::new(problem, ego, n_vehicles, LeaderComponents::Include)?;
    Ok(layout.components.iter().filter(|c| !c.is_local_to(ego)).count())
}

/// Weights of the quadratic tracking reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    /// Multiplier applied to rewards while training; reported returns use it too.
    pub scale: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            scale: 5e-3,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.scale > 0.0) {
            return Err(Error::Config("reward alpha, beta and scale must be positive".into()));
        }
        Ok(())
    }
}

/// `-(e_p^2 + alpha e_v^2 + beta u^2)`.
pub fn reward<T: Scalar>(e_p: T, e_v: T, u: T, params: &RewardParams) -> T {
    -(e_p * e_p + T::lit(params.alpha) * e_v * e_v + T::lit(params.beta) * u * u)
}

/// Full platoon state plus the controls decided so far in the current step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatoonSnapshot {
    pub state: PlatoonState<f64>,
    pub controls: Vec<Option<f64>>,
}

impl PlatoonSnapshot {
    pub fn new(state: PlatoonState<f64>) -> Self {
        let n = state.n_vehicles();
        Self {
            state,
            controls: vec![None; n],
        }
    }
}

pub fn build_state(problem: ProblemId, snapshot: &PlatoonSnapshot, ego: usize) -> Result<Vec<f64>> {
    StateLayout::new(problem, ego, snapshot.state.n_vehicles(), LeaderComponents::Drop)?.extract(snapshot)
}

/// Decides the control of a non-ego follower from the current snapshot.
pub trait Controller {
    fn control(&self, vehicle: usize, step: usize, snapshot: &PlatoonSnapshot) -> Result<f64>;
}

impl<F> Controller for F
where
    F: Fn(usize, usize, &PlatoonSnapshot) -> Result<f64>,
{
    fn control(&self, vehicle: usize, step: usize, snapshot: &PlatoonSnapshot) -> Result<f64> {
        self(vehicle, step, snapshot)
    }
}

/// Two-vehicle model operating directly on P1/P2/P3 state vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoVehicleModel {
    pub ego: VehicleParams<f64>,
    pub predecessor: VehicleParams<f64>,
    pub dt: f64,
    pub reward: RewardParams,
}

impl TwoVehicleModel {
    /// One step of P1, P2 or P3.
    ///
    /// `exogenous` is the quantity the problem cannot see when deciding:
    /// `acc[i-1, k]` for P1, `u[i-1, k]` for P2 and `u[i-1, k+1]` for P3.
    /// The reward uses the pre-step errors and the applied control.
    pub fn transition(&self, problem: ProblemId, state: &[f64], u: f64, exogenous: f64) -> Result<(Vec<f64>, f64)> {
        let dim = match problem {
            ProblemId::P1 => 3,
            ProblemId::P2 => 4,
            ProblemId::P3 => 5,
            other => return Err(Error::Config(format!("{other} is not a two-vehicle problem"))),
        };
        if state.len() != dim {
            return Err(Error::Dimension {
                what: "two-vehicle state",
                expected: dim,
                got: state.len(),
            });
        }
        ensure_finite("state", state)?;
        ensure_finite("exogenous input", &[exogenous])?;
        let u = clamp_control(u, &self.ego);
        let x = LocalState::new(state[0], state[1], state[2]);
        let r = reward(x.e_p, x.e_v, u, &self.reward);
        let (acc_pred, pred_input) = match problem {
            ProblemId::P1 => (exogenous, None),
            ProblemId::P2 => (state[3], Some(exogenous)),
            _ => (state[3], Some(state[4])),
        };
        let next = euler_step_follower(&x, u, acc_pred, &self.ego, self.dt)?;
        let mut out = next.to_array().to_vec();
        if let Some(u_pred) = pred_input {
            let u_pred = clamp_control(u_pred, &self.predecessor);
            out.push(euler_step_leader(&LeaderState { acc: acc_pred }, u_pred, &self.predecessor, self.dt)?.acc);
        }
        if problem == ProblemId::P3 {
            out.push(clamp_control(exogenous, &self.predecessor));
        }
        Ok((out, r))
    }
}

/// Platoon model for the ego-vehicle problems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatoonModel {
    /// Leader first.
    pub params: Vec<VehicleParams<f64>>,
    pub dt: f64,
    pub reward: RewardParams,
}

impl PlatoonModel {
    pub fn n_vehicles(&self) -> usize {
        self.params.len()
    }

    /// Lets vehicles `1..ego` decide in index order, each seeing the
    /// decisions already taken ahead of it. The leader's control must be set.
    pub fn decide_predecessors(&self, snapshot: &mut PlatoonSnapshot, ego: usize, step: usize, others: &dyn Controller) -> Result<()> {
        if snapshot.controls[0].is_none() {
            return Err(Error::Sequencing("leader control must be drawn before followers decide".into()));
        }
        for j in 1..ego {
            let u = others.control(j, step, snapshot)?;
            snapshot.controls[j] = Some(clamp_control(u, &self.params[j]));
        }
        Ok(())
    }

    /// One step of the ego problem described by `layout`.
    ///
    /// `snapshot` must already hold this step's controls of vehicles
    /// `0..ego`. Followers behind the ego decide after it. The leader's next
    /// input is `leader_next`; predecessors then decide for step `step + 1`.
    pub fn transition(
        &self,
        layout: &StateLayout,
        snapshot: &PlatoonSnapshot,
        ego_action: f64,
        leader_next: f64,
        step: usize,
        others: &dyn Controller,
    ) -> Result<(PlatoonSnapshot, Vec<f64>, f64)> {
        let ego = layout.ego;
        let n = self.n_vehicles();
        if snapshot.state.n_vehicles() != n {
            return Err(Error::Config(format!(
                "snapshot has {} vehicles, model has {n}",
                snapshot.state.n_vehicles()
            )));
        }
        if let Some(j) = (0..ego).find(|&j| snapshot.controls[j].is_none()) {
            return Err(Error::Sequencing(format!("u[{j}] missing before ego {ego} acts")));
        }
        let mut current = snapshot.clone();
        let u_ego = clamp_control(ego_action, &self.params[ego]);
        current.controls[ego] = Some(u_ego);
        for j in ego + 1..n {
            if current.controls[j].is_none() {
                let u = others.control(j, step, &current)?;
                current.controls[j] = Some(clamp_control(u, &self.params[j]));
            }
        }
        let x = current.state.local(ego);
        let r = reward(x.e_p, x.e_v, u_ego, &self.reward);
        let controls: Vec<f64> = current.controls.iter().map(|c| c.expect("all controls decided")).collect();
        let next_state = platoon_step(&current.state, &controls, &self.params, self.dt)?;
        let mut next = PlatoonSnapshot::new(next_state);
        next.controls[0] = Some(clamp_control(leader_next, &self.params[0]));
        self.decide_predecessors(&mut next, ego, step + 1, others)?;
        let vector = layout.extract(&next)?;
        Ok((next, vector, r))
    }
}
