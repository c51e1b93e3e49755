//! Value of V2X information as a conditional KL divergence between the
//! predecessor-control predictions made from two information sets.
//!
//! The plug-in estimate over quantized samples is
//! `mean over samples of log p(t | a) - log p(t | b)`, i.e. `H(T | B) - H(T | A)`
//! of the empirical joint.

use std::collections::HashMap;
use serde::{Deserialize, Serialize};

use crate::dynamics::{LeaderState, LocalState, PlatoonState};
use crate::error::{Error, Result};
use crate::exogenous::GaussianInputConfig;
use crate::problems::{Component, Controller, Kind, LeaderComponents, PlatoonModel, PlatoonSnapshot, ProblemId, StateLayout};
use crate::rng::{self, streams};

/// Histogram bins for the two physical variable families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizationScheme {
    pub bins: usize,
    /// Range for position and speed errors.
    pub error_range: [f64; 2],
    /// Range for accelerations and controls.
    pub acc_range: [f64; 2],
}

impl Default for QuantizationScheme {
    fn default() -> Self {
        Self {
            bins: 8,
            error_range: [-3.0, 3.0],
            acc_range: [-2.6, 2.6],
        }
    }
}

impl QuantizationScheme {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || self.bins > u16::MAX as usize {
            return Err(Error::Config(format!("kl bins must be in 1..={}", u16::MAX)));
        }
        for r in [self.error_range, self.acc_range] {
            if !(r[0] < r[1]) {
                return Err(Error::Config(format!("kl range {r:?} is empty")));
            }
        }
        Ok(())
    }

    pub fn range(&self, kind: Kind) -> [f64; 2] {
        match kind {
            Kind::Ep | Kind::Ev => self.error_range,
            Kind::Acc | Kind::Control => self.acc_range,
        }
    }

    /// Equal-width bin; values outside the range land in the end bins.
    pub fn bin(&self, kind: Kind, value: f64) -> usize {
        let [lo, hi] = self.range(kind);
        let t = ((value - lo) / (hi - lo) * self.bins as f64).floor();
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }

    /// Inner bin edges for one variable family.
    pub fn edges(&self, kind: Kind) -> Vec<f64> {
        let [lo, hi] = self.range(kind);
        (1..self.bins).map(|b| lo + (hi - lo) * b as f64 / self.bins as f64).collect()
    }
}

/// Per-step records of the vehicles ahead of the ego.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutDataset {
    /// Vehicles `0..n_vehicles` are recorded.
    pub n_vehicles: usize,
    pub horizon: usize,
    pub episodes: usize,
    /// `values[(episode * horizon + step) * n_vehicles + j] = [e_p, e_v, acc, u]`.
    values: Vec<[f64; 4]>,
}

impl RolloutDataset {
    /// `values[(episode * horizon + step) * n_vehicles + j] = [e_p, e_v, acc, u]`.
    pub fn from_records(n_vehicles: usize, horizon: usize, episodes: usize, values: Vec<[f64; 4]>) -> Result<Self> {
        if values.len() != n_vehicles * horizon * episodes {
            return Err(Error::Dimension {
                what: "rollout records",
                expected: n_vehicles * horizon * episodes,
                got: values.len(),
            });
        }
        Ok(Self {
            n_vehicles,
            horizon,
            episodes,
            values,
        })
    }

    pub fn record(&self, episode: usize, step: usize, vehicle: usize) -> [f64; 4] {
        self.values[(episode * self.horizon + step) * self.n_vehicles + vehicle]
    }

    pub fn value(&self, episode: usize, step: usize, c: Component) -> f64 {
        let r = self.record(episode, step, c.vehicle);
        match c.kind {
            Kind::Ep => r[0],
            Kind::Ev => r[1],
            Kind::Acc => r[2],
            Kind::Control => r[3],
        }
    }

    /// Number of records per vehicle.
    pub fn records_per_vehicle(&self) -> usize {
        self.episodes * self.horizon
    }
}

/// Simulates the leader and followers `1..n` (the model's vehicles) under
/// `followers` and records every vehicle's local state and control.
pub fn collect_rollouts(
    model: &PlatoonModel,
    followers: &dyn Controller,
    leader: &GaussianInputConfig,
    initial: LocalState<f64>,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<RolloutDataset> {
    leader.validate()?;
    let n = model.n_vehicles();
    let mut values = Vec::with_capacity(episodes * horizon * n);
    for e in 0..episodes {
        let mut r = rng::stream(rng::derive_seed(seed, e as u64), streams::ROLLOUT);
        let mut state = PlatoonState {
            leader: LeaderState { acc: 0.0 },
            followers: vec![initial; n - 1],
        };
        for k in 0..horizon {
            let mut snap = PlatoonSnapshot::new(state);
            snap.controls[0] = Some(leader.draw(&mut r));
            // Every vehicle is a predecessor of a virtual ego behind the platoon.
            model.decide_predecessors(&mut snap, n, k, followers)?;
            let controls: Vec<f64> = snap.controls.iter().map(|c| c.expect("decided")).collect();
            for (j, &u) in controls.iter().enumerate() {
                let l = snap.state.local(j);
                values.push([l.e_p, l.e_v, l.acc, u]);
            }
            state = crate::dynamics::platoon_step(&snap.state, &controls, &model.params, model.dt)?;
        }
    }
    Ok(RolloutDataset {
        n_vehicles: n,
        horizon,
        episodes,
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub nats: f64,
    pub samples: usize,
    /// Fewer samples than the configured minimum.
    pub low_confidence: bool,
}

/// Plug-in estimate at `step` of `E[log p(target | A) - log p(target | B)]`
/// where `target` is read at `step + 1`. `b` must be a subset of `a`.
pub fn estimate_conditional_kl(
    data: &RolloutDataset,
    a: &[Component],
    b: &[Component],
    target: Component,
    quant: &QuantizationScheme,
    step: usize,
    min_samples: usize,
) -> Result<KlEstimate> {
    quant.validate()?;
    if let Some(c) = b.iter().find(|c| !a.contains(c)) {
        return Err(Error::NotSubset(format!("{} is in B but not in A", c.name())));
    }
    if step + 1 >= data.horizon {
        return Err(Error::InvalidInput(format!("step {step} has no successor within horizon {}", data.horizon)));
    }
    if let Some(c) = a.iter().chain([&target]).find(|c| c.vehicle >= data.n_vehicles) {
        return Err(Error::InvalidInput(format!("{} is not recorded", c.name())));
    }
    let n = data.episodes;
    let key = |vars: &[Component], e: usize| -> Vec<u16> { vars.iter().map(|&c| quant.bin(c.kind, data.value(e, step, c)) as u16).collect() };
    let t_bin = |e: usize| quant.bin(target.kind, data.value(e, step + 1, target)) as u16;

    // log p(t | x) for each sample under conditioning set `vars`.
    let log_cond = |vars: &[Component]| -> Vec<f64> {
        let mut joint: HashMap<(Vec<u16>, u16), usize> = HashMap::new();
        let mut marg: HashMap<Vec<u16>, usize> = HashMap::new();
        let keys: Vec<(Vec<u16>, u16)> = (0..n).map(|e| (key(vars, e), t_bin(e))).collect();
        for (x, t) in &keys {
            *joint.entry((x.clone(), *t)).or_default() += 1;
            *marg.entry(x.clone()).or_default() += 1;
        }
        keys.iter()
            .map(|(x, t)| (joint[&(x.clone(), *t)] as f64 / marg[x] as f64).ln())
            .collect()
    };
    let nats = if a.len() == b.len() {
        // Same variable set: the two conditionals are identical.
        0.0
    } else {
        let la = log_cond(a);
        let lb = log_cond(b);
        la.iter().zip(&lb).map(|(x, y)| x - y).sum::<f64>() / n as f64
    };
    Ok(KlEstimate {
        nats,
        samples: n,
        low_confidence: n < min_samples,
    })
}

/// Components of `problem`'s state that describe vehicles ahead of `ego`.
pub fn predecessor_information(problem: ProblemId, ego: usize, n_vehicles: usize) -> Result<Vec<Component>> {
    let layout = StateLayout::new(problem, ego, n_vehicles, LeaderComponents::Drop)?;
    Ok(layout.components.into_iter().filter(|c| c.vehicle < ego).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlCurve {
    pub problem: ProblemId,
    /// One estimate per step `0..horizon - 1`.
    pub points: Vec<KlEstimate>,
    pub episodes: usize,
}

/// KL of each reduced information set against P5's for the control of
/// the ego's immediate predecessor one step ahead.
pub fn kl_ranking(
    data: &RolloutDataset,
    ego: usize,
    n_vehicles: usize,
    problems: &[ProblemId],
    quant: &QuantizationScheme,
    min_samples: usize,
) -> Result<Vec<KlCurve>> {
    if data.n_vehicles < ego {
        return Err(Error::InvalidInput(format!("data covers {} vehicles, ego is {ego}", data.n_vehicles)));
    }
    let a = predecessor_information(ProblemId::P5, ego, n_vehicles)?;
    let target = Component::new(Kind::Control, ego - 1);
    problems
        .iter()
        .map(|&p| {
            let b = predecessor_information(p, ego, n_vehicles)?;
            let points = (0..data.horizon - 1)
                .map(|k| estimate_conditional_kl(data, &a, &b, target, quant, k, min_samples))
                .collect::<Result<Vec<_>>>()?;
            Ok(KlCurve {
                problem: p,
                points,
                episodes: data.episodes,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VehicleParams;
    use crate::problems::RewardParams;
    use rand::Rng;

    fn synthetic(n: usize, f: impl Fn(&mut rng::StreamRng) -> [[f64; 4]; 2]) -> RolloutDataset {
        // Two recorded "vehicles", two steps; the target lives at step 1.
        let mut r = rng::stream(17, streams::ROLLOUT);
        let mut values = Vec::new();
        for _ in 0..n {
            let [s0, s1] = f(&mut r);
            values.extend([s0, [0.0; 4], s1, [0.0; 4]]);
        }
        RolloutDataset {
            n_vehicles: 2,
            horizon: 2,
            episodes: n,
            values,
        }
    }

    const X: Component = Component::new(Kind::Acc, 0);
    const Y: Component = Component::new(Kind::Ep, 0);
    const T: Component = Component::new(Kind::Control, 0);

    #[test]
    fn identical_sets_give_exactly_zero() {
        let d = synthetic(500, |r| [[r.gen(), 0.0, r.gen(), 0.0], [0.0, 0.0, 0.0, r.gen()]]);
        let e = estimate_conditional_kl(&d, &[X, Y], &[Y, X], T, &QuantizationScheme::default(), 0, 10).unwrap();
        assert_eq!(e.nats, 0.0);
        assert!(!e.low_confidence);
    }

    #[test]
    fn independent_target_is_near_zero() {
        let q = QuantizationScheme::default();
        let d = synthetic(10_000, |r| {
            let x = rng::uniform(r, -2.6, 2.6);
            let t = rng::uniform(r, -2.6, 2.6);
            [[0.0, 0.0, x, 0.0], [0.0, 0.0, 0.0, t]]
        });
        let e = estimate_conditional_kl(&d, &[X], &[], T, &q, 0, 100).unwrap();
        // Plug-in bias is about (8 - 1) * (8 - 1) / (2 n) = 0.0025.
        assert!(e.nats.abs() < 0.02, "{}", e.nats);
    }

    #[test]
    fn deterministic_target_recovers_entropy() {
        // Binary bins; T copies X, X ~ Bernoulli(0.3) on the two halves.
        let q = QuantizationScheme { bins: 2, ..Default::default() };
        let p: f64 = 0.3;
        let d = synthetic(10_000, |r| {
            let x = if r.gen::<f64>() < p { 1.0 } else { -1.0 };
            [[0.0, 0.0, x, 0.0], [0.0, 0.0, 0.0, x]]
        });
        let e = estimate_conditional_kl(&d, &[X], &[], T, &q, 0, 100).unwrap();
        let h = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((e.nats - h).abs() < 0.05 * h, "{} vs {h}", e.nats);
    }

    #[test]
    fn finer_reduced_set_never_has_larger_divergence() {
        let q = QuantizationScheme::default();
        let d = synthetic(2000, |r| {
            let x = rng::uniform(r, -2.6, 2.6);
            let y = rng::uniform(r, -3.0, 3.0);
            let t = (0.5 * x + 0.3 * y + 0.2 * rng::standard_normal(r)).clamp(-2.6, 2.6);
            [[y, 0.0, x, 0.0], [0.0, 0.0, 0.0, t]]
        });
        let coarse = estimate_conditional_kl(&d, &[X, Y], &[], T, &q, 0, 10).unwrap().nats;
        let fine = estimate_conditional_kl(&d, &[X, Y], &[Y], T, &q, 0, 10).unwrap().nats;
        assert!(coarse >= fine - 1e-12);
        assert!(fine >= -1e-12);
    }

    #[test]
    fn misuse_is_rejected() {
        let d = synthetic(10, |_| [[0.0; 4]; 2]);
        let q = QuantizationScheme::default();
        assert!(matches!(estimate_conditional_kl(&d, &[X], &[Y], T, &q, 0, 1), Err(Error::NotSubset(_))));
        assert!(estimate_conditional_kl(&d, &[X], &[], T, &q, 1, 1).is_err());
        assert!(estimate_conditional_kl(&d, &[X], &[], T, &q, 0, 50).unwrap().low_confidence);
        assert!(QuantizationScheme { bins: 0, ..q }.validate().is_err());
    }

    #[test]
    fn binning_clips_to_end_bins() {
        let q = QuantizationScheme::default();
        assert_eq!(q.bin(Kind::Ep, -10.0), 0);
        assert_eq!(q.bin(Kind::Ep, 10.0), 7);
        assert_eq!(q.bin(Kind::Ep, 0.0), 4);
        assert_eq!(q.bin(Kind::Acc, 2.6), 7);
        assert_eq!(q.edges(Kind::Ep).len(), 7);
    }

    fn platoon() -> PlatoonModel {
        PlatoonModel {
            params: [0.45, 0.5, 0.25, 0.2].iter().map(|&t| VehicleParams::with_tau(t)).collect(),
            dt: 0.1,
            reward: RewardParams::default(),
        }
    }

    #[test]
    fn rollouts_have_one_record_per_step_and_are_reproducible() {
        let ctl = |_: usize, _: usize, s: &PlatoonSnapshot| Ok(0.5 * s.state.followers[0].e_p);
        let leader = GaussianInputConfig::default();
        let start = LocalState::new(1.5, -1.0, 0.0);
        let a = collect_rollouts(&platoon(), &ctl, &leader, start, 100, 1, 3).unwrap();
        assert_eq!(a.records_per_vehicle(), 100);
        assert_eq!(a.values.len(), 100 * 4);
        let b = collect_rollouts(&platoon(), &ctl, &leader, start, 100, 1, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quiet_leader_at_equilibrium_stays_there() {
        let ctl = |_: usize, _: usize, s: &PlatoonSnapshot| Ok(s.state.followers[0].e_p);
        let leader = GaussianInputConfig { std: 0.0, ..Default::default() };
        let d = collect_rollouts(&platoon(), &ctl, &leader, LocalState::zero(), 20, 2, 0).unwrap();
        assert!(d.values.iter().all(|v| *v == [0.0; 4]));
    }

    #[test]
    fn ranking_covers_each_problem_and_p5_is_zero() {
        let ctl = |j: usize, _: usize, s: &PlatoonSnapshot| {
            let l = s.state.local(j);
            Ok(l.e_p + 0.8 * l.e_v + 0.5 * s.controls[j - 1].unwrap())
        };
        let leader = GaussianInputConfig::default();
        let d = collect_rollouts(&platoon(), &ctl, &leader, LocalState::new(1.5, -1.0, 0.0), 30, 200, 1).unwrap();
        let q = QuantizationScheme::default();
        let mut problems = ProblemId::KL_REDUCED.to_vec();
        problems.push(ProblemId::P5);
        let curves = kl_ranking(&d, 4, 6, &problems, &q, 50).unwrap();
        assert_eq!(curves.len(), 6);
        assert!(curves.iter().all(|c| c.points.len() == 29));
        assert!(curves[5].points.iter().all(|p| p.nats == 0.0));
        for (p4, tpf) in curves[0].points.iter().zip(&curves[3].points) {
            assert!(p4.nats >= tpf.nats - 1e-12);
        }
    }
}
