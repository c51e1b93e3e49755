//! Finite-horizon DDPG: exploration noise, replay, per-step actor/critic
//! training by backward induction, evaluation.

mod eval;
mod noise;
mod policy;
mod replay;
mod trainer;

pub use eval::{episode_rng, evaluate, q_scatter, EpisodeResult, QRecord, TracePoint};
pub use noise::{OuConfig, OuNoise};
pub use policy::{hex_digest, network_digest, FrozenFollowers, TrainedPolicy};
pub use replay::{ReplayBuffer, TransitionRecord};
pub use trainer::{actor_update, critic_update, mean_std, train, CurvePoint, DdpgConfig, TrainOutcome};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VehicleParams;
    use crate::env::{Env, TrackingBandit, TwoVehicleEnv};
    use crate::error::Error;
    use crate::exogenous::GaussianInputConfig;
    use crate::nn::{Mlp, MlpSpec, OptimizerKind};
    use crate::problems::{ProblemId, RewardParams, TwoVehicleModel};
    use crate::rng;
    use ndarray::{Array1, Array2};

    fn two_vehicle(problem: ProblemId, std: f64, initial: [f64; 3], horizon: usize) -> TwoVehicleEnv {
        let model = TwoVehicleModel {
            ego: VehicleParams::with_tau(0.5),
            predecessor: VehicleParams::with_tau(0.45),
            dt: 0.1,
            reward: RewardParams::default(),
        };
        let exo = GaussianInputConfig { std, ..Default::default() };
        TwoVehicleEnv::new(problem, model, exo, initial, horizon).unwrap()
    }

    fn small_config(episodes: usize) -> DdpgConfig {
        DdpgConfig {
            actor_hidden: vec![16, 16],
            critic_hidden: vec![16, 16],
            batch_size: 32,
            buffer_capacity: 2000,
            episodes_per_stage: episodes,
            eval_every: 50,
            eval_episodes: 3,
            ..DdpgConfig::default()
        }
    }

    fn zero_policy(dim: usize, horizon: usize) -> TrainedPolicy<f64> {
        let a = MlpSpec::actor(dim, &[4], -2.6, 2.6);
        let c = MlpSpec::critic(dim, &[4]);
        let za = Mlp::from_flat(a.clone(), OptimizerKind::default(), &vec![0.0; a.num_params()]).unwrap();
        let zc = Mlp::from_flat(c.clone(), OptimizerKind::default(), &vec![0.0; c.num_params()]).unwrap();
        TrainedPolicy {
            problem: ProblemId::P1,
            actors: vec![za; horizon],
            critics: vec![zc; horizon],
            digest: "test".into(),
            seed: 0,
        }
    }

    #[test]
    fn ou_stationary_variance() {
        let cfg = OuConfig::default();
        let mut n = OuNoise::new(&cfg);
        let mut r = rng::stream(1, rng::streams::EXPLORATION);
        for _ in 0..1000 {
            n.sample(&mut r);
        }
        let m = 200_000;
        let xs: Vec<f64> = (0..m).map(|_| n.sample(&mut r)).collect();
        let (_, sd) = mean_std(&xs);
        let expected = cfg.stationary_variance();
        assert!((expected - 0.9009).abs() < 1e-4);
        assert!((sd * sd - expected).abs() < 0.1 * expected, "{} vs {expected}", sd * sd);
    }

    #[test]
    fn ou_is_reproducible_and_resets() {
        let cfg = OuConfig::default();
        let draw = |seed| {
            let mut n = OuNoise::new(&cfg);
            let mut r = rng::stream(seed, rng::streams::EXPLORATION);
            (0..50).map(|_| n.sample(&mut r)).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
        let mut n = OuNoise::new(&cfg);
        n.sample(&mut rng::stream(0, 2));
        n.reset();
        assert_eq!(n.state(), 0.0);
    }

    fn record(i: usize) -> TransitionRecord {
        TransitionRecord {
            state: vec![i as f64],
            action: 0.0,
            reward: 0.0,
            next: vec![],
            step: 0,
        }
    }

    #[test]
    fn replay_keeps_the_newest() {
        let (cap, m) = (10, 7);
        let mut b = ReplayBuffer::new(cap).unwrap();
        for i in 0..cap + m {
            b.push(record(i));
        }
        assert_eq!(b.len(), cap);
        let held: Vec<usize> = b.iter_ordered().map(|r| r.state[0] as usize).collect();
        assert_eq!(held, (m..cap + m).collect::<Vec<_>>());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn replay_sampling_is_distinct_and_waits_for_data() {
        let mut b = ReplayBuffer::new(100).unwrap();
        let mut r = rng::stream(0, rng::streams::REPLAY);
        for i in 0..20 {
            b.push(record(i));
        }
        assert!(b.sample(21, &mut r).is_none());
        let mut idx = b.sample(20, &mut r).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn critic_regression_mostly_decreases() {
        let mut r = rng::stream(7, rng::streams::INIT);
        let mut critic: Mlp<f64> = Mlp::new(MlpSpec::critic(3, &[32, 32]), OptimizerKind::default(), &mut r).unwrap();
        let states = Array2::from_shape_fn((64, 3), |_| rng::uniform(&mut r, -1.0, 1.0));
        let actions = Array1::from_shape_fn(64, |_| rng::uniform(&mut r, -1.0, 1.0));
        let targets = Array1::from_shape_fn(64, |i| -states.row(i).dot(&states.row(i)) - 0.1 * actions[i] * actions[i]);
        let losses: Vec<f64> = (0..300)
            .map(|_| critic_update(&mut critic, &states, &actions, &targets, 1e-3).unwrap())
            .collect();
        let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(down as f64 >= 0.9 * (losses.len() - 1) as f64, "{down} of {}", losses.len() - 1);
        assert!(losses[losses.len() - 1] < 0.2 * losses[0]);
    }

    #[test]
    fn one_step_problem_learns_the_analytic_action() {
        // tau = dt, so acc' = u and u* = target / (1 + beta). A ReLU critic is
        // piecewise linear in u and the actor settles on a kink; the critic
        // must be wide enough for the kinks to sit closer than the tolerance.
        let mut env = TrackingBandit::new(0.1, 0.1, 0.1, 2.6, [0.4, -0.6]);
        let cfg = DdpgConfig {
            actor_hidden: vec![32, 32],
            critic_hidden: vec![128, 128],
            actor_lr: 1e-3,
            critic_lr: 3e-3,
            batch_size: 64,
            episodes_per_stage: 1500,
            reward_scale: 1.0,
            eval_every: 0,
            ..DdpgConfig::default()
        };
        let out = train::<f64>(&mut env, ProblemId::P1, &cfg, 5, "bandit").unwrap();
        let s = env.reset(&mut rng::stream(0, 1)).unwrap();
        let expected = -0.6 / 1.1;
        assert!((env.optimal_action(&s) - expected).abs() < 1e-12);
        let got = out.policy.act(0, &s).unwrap();
        assert!((got - expected).abs() < 0.05, "{got} vs {expected}");
    }

    #[test]
    fn equilibrium_is_held_without_disturbance() {
        let horizon = 30;
        let mut env = two_vehicle(ProblemId::P1, 0.0, [0.0; 3], horizon);
        // Starts drawn near the equilibrium this test is about.
        let cfg = DdpgConfig {
            episodes_per_stage: 300,
            eval_every: 0,
            start_box: [0.3, 0.3, 0.3],
            ..DdpgConfig::default()
        };
        let out = train::<f64>(&mut env, ProblemId::P1, &cfg, 1, "eq").unwrap();
        let ep = &evaluate(&out.policy, &mut env, 1, 0).unwrap()[0];
        for p in &ep.trace {
            assert!(p.e_p.abs() < 0.05 && p.e_v.abs() < 0.05, "{p:?}");
        }
    }

    #[test]
    fn zero_policy_zero_disturbance_scores_zero() {
        let mut env = two_vehicle(ProblemId::P2, 0.0, [0.0; 3], 100);
        let p = zero_policy(4, 100);
        let eps = evaluate(&p, &mut env, 3, 0).unwrap();
        assert!(eps.iter().all(|e| e.raw_return == 0.0));
        let q = q_scatter(&p, &mut env, 3, 0, 5e-3).unwrap();
        assert_eq!(q.len(), 300);
        assert!(q.iter().all(|r| r.observed == 0.0));
    }

    #[test]
    fn evaluation_is_deterministic_and_checks_shapes() {
        let mut env = two_vehicle(ProblemId::P1, 0.3, [2.5, 2.5, 0.0], 100);
        let p = zero_policy(3, 100);
        let a = evaluate(&p, &mut env, 4, 11).unwrap();
        let b = evaluate(&p, &mut env, 4, 11).unwrap();
        assert_eq!(a, b);
        assert!(evaluate(&zero_policy(4, 100), &mut env, 1, 0).is_err());
        assert!(evaluate(&zero_policy(3, 50), &mut env, 1, 0).is_err());
    }

    #[test]
    fn training_is_deterministic_and_stages_stay_frozen() {
        let run = || {
            let mut env = two_vehicle(ProblemId::P3, 0.3, [2.5, 2.5, 0.0], 5);
            train::<f64>(&mut env, ProblemId::P3, &small_config(60), 2, "det").unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.stage_digests, b.stage_digests);
        for (k, (actor, critic)) in a.stage_digests.iter().enumerate() {
            assert_eq!(actor, &network_digest(&a.policy.actors[k]));
            assert_eq!(critic, &network_digest(&a.policy.critics[k]));
        }
        // 5 stages x 60 episodes, one point per 50.
        assert_eq!(a.curve.len(), 6);
        assert_eq!(a.curve[0].stage, 4);
    }

    #[test]
    fn policy_directory_round_trip() {
        let mut env = two_vehicle(ProblemId::P2, 0.3, [2.5, 2.5, 0.0], 3);
        let out = train::<f64>(&mut env, ProblemId::P2, &small_config(40), 3, "rt").unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.policy.save(dir.path()).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2 * 3 + 1);
        let back = TrainedPolicy::<f64>::load(dir.path(), OptimizerKind::default()).unwrap();
        for k in 0..3 {
            assert_eq!(out.policy.actors[k].to_flat(), back.actors[k].to_flat());
            assert_eq!(out.policy.critics[k].to_flat(), back.critics[k].to_flat());
        }
        assert_eq!(back.problem, ProblemId::P2);
        assert_eq!(back.digest, "rt");

        let f = dir.path().join("step001_critic.json");
        let text = std::fs::read_to_string(&f).unwrap();
        std::fs::write(&f, text.replacen("[", "[ ", 1)).unwrap();
        assert!(matches!(TrainedPolicy::<f64>::load(dir.path(), OptimizerKind::default()), Err(Error::Format(_))));
        std::fs::remove_file(&f).unwrap();
        assert!(matches!(
            TrainedPolicy::<f64>::load(dir.path(), OptimizerKind::default()),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut env = two_vehicle(ProblemId::P1, 0.3, [0.0; 3], 2);
        for cfg in [
            DdpgConfig { batch_size: 0, ..small_config(5) },
            DdpgConfig { episodes_per_stage: 0, ..small_config(5) },
            DdpgConfig { critic_lr: -1.0, ..small_config(5) },
        ] {
            assert!(matches!(train::<f64>(&mut env, ProblemId::P1, &cfg, 0, ""), Err(Error::Config(_))));
        }
    }

    #[test]
    fn divergence_names_the_stage() {
        let mut env = two_vehicle(ProblemId::P1, 0.3, [2.5, 2.5, 0.0], 3);
        let cfg = DdpgConfig { critic_lr: 1e300, actor_lr: 1e300, ..small_config(80) };
        match train::<f64>(&mut env, ProblemId::P1, &cfg, 0, "") {
            Err(Error::Divergence { stage, .. }) => assert_eq!(stage, 2),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.curve)),
        }
    }
}
