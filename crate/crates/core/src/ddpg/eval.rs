use serde::{Deserialize, Serialize};

use crate::ddpg::policy::TrainedPolicy;
use crate::env::Env;
use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::scalar::Scalar;

/// Ego `e_p, e_v, acc` before the step and the applied action.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub e_p: f64,
    pub e_v: f64,
    pub acc: f64,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    /// Sum of unscaled rewards.
    pub raw_return: f64,
    pub trace: Vec<TracePoint>,
}

/// Critic estimate against the realized return-to-go, both unscaled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QRecord {
    pub episode: usize,
    pub step: usize,
    pub estimate: f64,
    pub observed: f64,
}

fn check_horizon<T: Scalar>(policy: &TrainedPolicy<T>, env: &dyn Env) -> Result<()> {
    if policy.horizon() != env.horizon() {
        return Err(Error::Config(format!(
            "policy horizon {} != environment horizon {}",
            policy.horizon(),
            env.horizon()
        )));
    }
    if policy.state_dim() != env.state_dim() {
        return Err(Error::Dimension {
            what: "policy input",
            expected: env.state_dim(),
            got: policy.state_dim(),
        });
    }
    Ok(())
}

/// Episode `e` of a seed uses its own stream, so problems that consume the
/// same draws per step see the same disturbances.
pub fn episode_rng(seed: u64, episode: usize) -> rng::StreamRng {
    rng::stream(rng::derive_seed(seed, episode as u64), streams::EVAL)
}

fn run_episode<T: Scalar>(
    policy: &TrainedPolicy<T>,
    env: &mut dyn Env,
    seed: u64,
    episode: usize,
    mut visit: impl FnMut(usize, &[f64], f64, f64) -> Result<()>,
) -> Result<EpisodeResult> {
    let mut r = episode_rng(seed, episode);
    let mut s = env.reset(&mut r)?;
    let mut total = 0.0;
    let mut trace = Vec::with_capacity(env.horizon());
    for k in 0..env.horizon() {
        let u = policy.act(k, &s)?;
        let [e_p, e_v, acc] = env.ego_local();
        trace.push(TracePoint { e_p, e_v, acc, u });
        let (next, rew) = env.step(u, &mut r)?;
        visit(k, &s, u, rew)?;
        total += rew;
        s = next;
    }
    Ok(EpisodeResult { raw_return: total, trace })
}

/// Noise-free rollouts of the policy.
pub fn evaluate<T: Scalar>(policy: &TrainedPolicy<T>, env: &mut dyn Env, episodes: usize, seed: u64) -> Result<Vec<EpisodeResult>> {
    check_horizon(policy, env)?;
    (0..episodes)
        .map(|e| run_episode(policy, env, seed, e, |_, _, _, _| Ok(())))
        .collect()
}

/// One record per visited (episode, step); `scale` converts critic
/// outputs back to reward units.
pub fn q_scatter<T: Scalar>(
    policy: &TrainedPolicy<T>,
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
    scale: f64,
) -> Result<Vec<QRecord>> {
    check_horizon(policy, env)?;
    let mut out = Vec::with_capacity(episodes * env.horizon());
    for e in 0..episodes {
        let mut estimates = Vec::with_capacity(env.horizon());
        let mut rewards = Vec::with_capacity(env.horizon());
        run_episode(policy, env, seed, e, |k, s, u, r| {
            estimates.push(policy.q(k, s, u)? / scale);
            rewards.push(r);
            Ok(())
        })?;
        let mut to_go = 0.0;
        let mut tail = vec![0.0; rewards.len()];
        for k in (0..rewards.len()).rev() {
            to_go += rewards[k];
            tail[k] = to_go;
        }
        for (k, (&estimate, &observed)) in estimates.iter().zip(&tail).enumerate() {
            out.push(QRecord {
                episode: e,
                step: k,
                estimate,
                observed,
            });
        }
    }
    Ok(out)
}
