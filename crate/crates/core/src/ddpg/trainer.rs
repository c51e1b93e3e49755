use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddpg::noise::{OuConfig, OuNoise};
use crate::ddpg::policy::{network_digest, TrainedPolicy};
use crate::ddpg::replay::{ReplayBuffer, TransitionRecord};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, OptimizerKind};
use crate::problems::ProblemId;
use crate::rng::{self, streams, StreamRng};
use crate::scalar::Scalar;

/// Trainer settings. Defaults are the desk-scale budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdpgConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub episodes_per_stage: usize,
    pub updates_per_episode: usize,
    pub noise: OuConfig,
    /// Test the composite policy every this many training episodes.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub reward_scale: f64,
    pub optimizer: OptimizerKind,
    /// Share of episodes whose step-`k` state has the ego-controlled part
    /// redrawn from `start_box` after the roll-in.
    pub redraw_fraction: f64,
    /// Half-widths for `e_p, e_v, acc`.
    pub start_box: [f64; 3],
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![64, 48],
            critic_hidden: vec![64, 48],
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            batch_size: 128,
            buffer_capacity: 20_000,
            episodes_per_stage: 500,
            updates_per_episode: 1,
            noise: OuConfig::default(),
            eval_every: 100,
            eval_episodes: 10,
            reward_scale: 5e-3,
            optimizer: OptimizerKind::default(),
            redraw_fraction: 1.0,
            start_box: [3.0, 3.0, 2.6],
        }
    }
}

impl DdpgConfig {
    /// Network sizes and learning rates of the full-scale setting.
    pub fn full_scale() -> Self {
        Self {
            actor_hidden: MlpSpec::DEFAULT_HIDDEN.to_vec(),
            critic_hidden: MlpSpec::DEFAULT_HIDDEN.to_vec(),
            actor_lr: 1e-5,
            critic_lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(Error::Config("need 0 < batch_size <= buffer_capacity".into()));
        }
        if self.episodes_per_stage == 0 {
            return Err(Error::Config("episodes_per_stage must be positive".into()));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.reward_scale > 0.0) {
            return Err(Error::Config("learning rates and reward scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.redraw_fraction) || self.start_box.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::Config("redraw_fraction must lie in [0, 1] and start_box be non-negative".into()));
        }
        if self.eval_every > 0 && self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive when evaluating".into()));
        }
        Ok(())
    }
}

/// Mean and std of test returns (reward-scaled) after `episode` training episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub stage: usize,
    pub mean_return: f64,
    pub std: f64,
}

pub struct TrainOutcome<T> {
    pub policy: TrainedPolicy<T>,
    pub curve: Vec<CurvePoint>,
    /// `network_digest` of (actor, critic) when each stage finished.
    pub stage_digests: Vec<(String, String)>,
}

fn batch<T: Scalar>(rows: &[&[f64]]) -> Array2<T> {
    let cols = rows.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| T::lit(rows[i][j]))
}

fn divergence(stage: usize, e: Error) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { stage, detail },
        other => other,
    }
}

/// One MSE step of `critic` towards `targets`; returns the pre-step loss.
pub fn critic_update<T: Scalar>(
    critic: &mut Mlp<T>,
    states: &Array2<T>,
    actions: &Array1<T>,
    targets: &Array1<T>,
    lr: f64,
) -> Result<f64> {
    let (q, cache) = critic.forward(states.view(), Some(actions.view()))?;
    let n = T::lit(states.nrows() as f64);
    let mut diff = q.column(0).to_owned() - targets;
    let loss = diff.iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>() / states.nrows() as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            stage: usize::MAX,
            detail: format!("critic loss {loss}"),
        });
    }
    diff.mapv_inplace(|d| T::lit(2.0) * d / n);
    let grad = diff.insert_axis(ndarray::Axis(1));
    let back = critic.backward(&cache, grad.view())?;
    critic.apply_gradients(&back.params, lr)?;
    Ok(loss)
}

/// One ascent step of `actor` on the critic's mean Q; returns that mean.
pub fn actor_update<T: Scalar>(actor: &mut Mlp<T>, critic: &Mlp<T>, states: &Array2<T>, lr: f64) -> Result<f64> {
    let (mu, a_cache) = actor.forward(states.view(), None)?;
    let actions = mu.column(0).to_owned();
    let (q, c_cache) = critic.forward(states.view(), Some(actions.view()))?;
    let n = states.nrows();
    let mean_q = q.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
    let d_out = Array2::from_elem((n, 1), T::lit(-1.0 / n as f64));
    let c_back = critic.backward(&c_cache, d_out.view())?;
    let da = c_back.action.expect("critic takes an action").insert_axis(ndarray::Axis(1));
    let a_back = actor.backward(&a_cache, da.view())?;
    actor.apply_gradients(&a_back.params, lr)?;
    Ok(mean_q)
}

struct Stage<'a, T> {
    next: Option<(&'a Mlp<T>, &'a Mlp<T>)>,
    scale: f64,
}

impl<T: Scalar> Stage<'_, T> {
    fn targets(&self, records: &[&TransitionRecord]) -> Result<Vec<f64>> {
        let base: Vec<f64> = records.iter().map(|r| self.scale * r.reward).collect();
        let Some((actor, critic)) = self.next else {
            return Ok(base);
        };
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(1024) {
            let rows: Vec<&[f64]> = chunk.iter().map(|r| r.next.as_slice()).collect();
            let s = batch::<T>(&rows);
            let (mu, _) = actor.forward(s.view(), None)?;
            let a = mu.column(0).to_owned();
            let (q, _) = critic.forward(s.view(), Some(a.view()))?;
            out.extend(q.column(0).iter().map(|v| v.as_f64()));
        }
        Ok(out.into_iter().zip(base).map(|(q, r)| r + q).collect())
    }
}

fn clamp_action(a: f64, (lo, hi): (f64, f64)) -> f64 {
    a.clamp(lo, hi)
}

/// Composite test policy: `current` for steps up to `stage`, trained actors after.
fn test_curve_point<T: Scalar>(
    env: &mut dyn Env,
    current: &Mlp<T>,
    trained: &[Option<Mlp<T>>],
    stage: usize,
    episodes: usize,
    seed: u64,
    scale: f64,
) -> Result<(f64, f64)> {
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let mut r = rng::stream(rng::derive_seed(seed, e as u64), streams::EVAL);
        let mut s = env.reset(&mut r)?;
        let mut total = 0.0;
        for k in 0..env.horizon() {
            let net = if k <= stage {
                current
            } else {
                trained[k].as_ref().expect("later stages are trained")
            };
            let input: Vec<T> = s.iter().map(|&v| T::lit(v)).collect();
            let a = net.predict(&input, None)?[0].as_f64();
            let (n, rew) = env.step(a, &mut r)?;
            total += rew;
            s = n;
        }
        returns.push(scale * total);
    }
    Ok(mean_std(&returns))
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Finite-horizon DDPG: one actor/critic per step, trained from the last
/// step backwards with the next step's pair frozen as the target.
///
/// Stage `k` runs `episodes_per_stage` episodes. Each rolls in to step `k`
/// with the stage's current actor plus exploration noise and stores only
/// the step-`k` transition. The replay buffer is shared across stages (the
/// dynamics do not depend on `k`); stored targets are recomputed against the
/// new frozen pair when a stage starts. Stage `k` starts from a copy of
/// stage `k+1`'s networks with fresh optimizer state.
pub fn train<T: Scalar>(
    env: &mut dyn Env,
    problem: ProblemId,
    config: &DdpgConfig,
    seed: u64,
    digest: &str,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let horizon = env.horizon();
    if horizon == 0 {
        return Err(Error::Config("environment horizon is zero".into()));
    }
    let dim = env.state_dim();
    let bounds = env.action_bounds();
    let mut init_rng = rng::stream(seed, streams::INIT);
    let mut noise_rng = rng::stream(seed, streams::EXPLORATION);
    let mut replay_rng = rng::stream(seed, streams::REPLAY);
    let exo_seed = rng::derive_seed(seed, streams::EXOGENOUS);
    let eval_seed = rng::derive_seed(seed, streams::EVAL);

    let mut actors: Vec<Option<Mlp<T>>> = (0..horizon).map(|_| None).collect();
    let mut critics: Vec<Option<Mlp<T>>> = (0..horizon).map(|_| None).collect();
    let mut digests = vec![(String::new(), String::new()); horizon];
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut targets: Vec<f64>;
    let mut noise = OuNoise::new(&config.noise);
    let mut curve = Vec::new();
    let mut episode = 0usize;

    for k in (0..horizon).rev() {
        let (mut actor, mut critic) = if k + 1 < horizon {
            let a = actors[k + 1].clone().expect("trained");
            let c = critics[k + 1].clone().expect("trained");
            (a, c)
        } else {
            let a = Mlp::new(
                MlpSpec::actor(dim, &config.actor_hidden, bounds.0, bounds.1),
                config.optimizer,
                &mut init_rng,
            )?;
            let c = Mlp::new(MlpSpec::critic(dim, &config.critic_hidden), config.optimizer, &mut init_rng)?;
            (a, c)
        };
        actor.reset_optimizer();
        critic.reset_optimizer();

        let stage = Stage {
            next: if k + 1 < horizon {
                Some((actors[k + 1].as_ref().expect("trained"), critics[k + 1].as_ref().expect("trained")))
            } else {
                None
            },
            scale: config.reward_scale,
        };
        let all: Vec<&TransitionRecord> = buffer.slots().map(|i| buffer.get(i)).collect();
        targets = stage.targets(&all).map_err(|e| divergence(k, e))?;

        for e in 0..config.episodes_per_stage {
            if config.noise.anneal {
                noise.sigma = config.noise.sigma * (1.0 - e as f64 / config.episodes_per_stage as f64);
            }
            let mut exo: StreamRng = rng::stream(rng::derive_seed(exo_seed, episode as u64), streams::EXOGENOUS);
            noise.reset();
            let mut s = env.reset(&mut exo)?;
            let redraw = env.supports_redraw() && config.redraw_fraction > 0.0 && noise_rng.gen::<f64>() < config.redraw_fraction;
            for _ in 0..k {
                // A redrawn episode only needs the exogenous part of the roll-in.
                let a = if redraw {
                    0.0
                } else {
                    let input: Vec<T> = s.iter().map(|&v| T::lit(v)).collect();
                    actor.predict(&input, None)?[0].as_f64() + noise.sample(&mut noise_rng)
                };
                s = env.step(clamp_action(a, bounds), &mut exo)?.0;
            }
            if redraw {
                s = env.redraw_controlled(config.start_box, &mut noise_rng)?;
            }
            let input: Vec<T> = s.iter().map(|&v| T::lit(v)).collect();
            let a = clamp_action(actor.predict(&input, None)?[0].as_f64() + noise.sample(&mut noise_rng), bounds);
            let (next, reward) = env.step(a, &mut exo)?;
            let record = TransitionRecord {
                state: s,
                action: a,
                reward,
                next,
                step: k,
            };
            let y = stage.targets(&[&record]).map_err(|e| divergence(k, e))?[0];
            let slot = buffer.push(record);
            if slot == targets.len() {
                targets.push(y);
            } else {
                targets[slot] = y;
            }

            for _ in 0..config.updates_per_episode {
                let Some(idx) = buffer.sample(config.batch_size, &mut replay_rng) else {
                    break;
                };
                let rows: Vec<&[f64]> = idx.iter().map(|&i| buffer.get(i).state.as_slice()).collect();
                let states = batch::<T>(&rows);
                let acts = Array1::from_iter(idx.iter().map(|&i| T::lit(buffer.get(i).action)));
                let ys = Array1::from_iter(idx.iter().map(|&i| T::lit(targets[i])));
                critic_update(&mut critic, &states, &acts, &ys, config.critic_lr).map_err(|e| divergence(k, e))?;
                actor_update(&mut actor, &critic, &states, config.actor_lr).map_err(|e| divergence(k, e))?;
            }

            episode += 1;
            if config.eval_every > 0 && episode % config.eval_every == 0 {
                let (mean, std) = test_curve_point(
                    env,
                    &actor,
                    &actors,
                    k,
                    config.eval_episodes,
                    eval_seed,
                    config.reward_scale,
                )?;
                curve.push(CurvePoint {
                    episode,
                    stage: k,
                    mean_return: mean,
                    std,
                });
            }
        }
        drop(stage);
        digests[k] = (network_digest(&actor), network_digest(&critic));
        actors[k] = Some(actor);
        critics[k] = Some(critic);
    }

    Ok(TrainOutcome {
        policy: TrainedPolicy {
            problem,
            actors: actors.into_iter().map(|a| a.expect("trained")).collect(),
            critics: critics.into_iter().map(|c| c.expect("trained")).collect(),
            digest: digest.to_string(),
            seed,
        },
        curve,
        stage_digests: digests,
    })
}
