use std::fs;
use std::path::Path;

use platoon_core::harness::*;
use platoon_core::problems::{LeaderComponents, ProblemId, StateLayout};
use platoon_core::Error;

fn tiny(scenario: Scenario) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(scenario);
    c.horizon = 6;
    c.seeds = vec![0, 1];
    c.trainer.episodes_per_stage = 12;
    c.trainer.batch_size = 8;
    c.trainer.eval_every = 24;
    c.trainer.eval_episodes = 2;
    c.trainer.actor_hidden = vec![8];
    c.trainer.critic_hidden = vec![8];
    c.eval.episodes = 7;
    c.eval.q_scatter_episodes = 2;
    c.kl.episodes = 30;
    c.kl.min_samples = 10;
    c.theorems.instances = 2;
    c
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn defaults_validate_and_overrides_apply() {
    let mut c = ExperimentConfig::default();
    c.validate().unwrap();
    let d0 = c.digest();
    c.apply_overrides(&["exo.std=1.0", "exo.seed=9", "kl.bins=4", "kl.range.error=[-2,2]", "kl.episodes=50"])
        .unwrap();
    assert_eq!(c.exo.std, 1.0);
    assert_eq!(c.exo.seed, 9);
    assert_eq!(c.kl.scheme().bins, 4);
    assert_eq!(c.kl.range.error, [-2.0, 2.0]);
    assert_ne!(c.digest(), d0);
    c.set("scenario", "platoon").unwrap();
    assert_eq!(c.scenario, Scenario::Platoon);
    assert!(matches!(c.set("exo.nope", "1"), Err(Error::Config(_))));
    assert!(matches!(c.set("kl.bins", "many"), Err(Error::Config(_))));
    assert!(c.apply_overrides(&["exo.std"]).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = ExperimentConfig::default();
    c.problems = vec![ProblemId::P5];
    assert!(c.validate().is_err());
    let mut c = ExperimentConfig::default();
    c.reward.scale = 1.0;
    assert!(c.validate().is_err());
    let mut c = ExperimentConfig::new(Scenario::Platoon);
    c.platoon.taus.truncate(5);
    assert!(c.validate().is_err());
    let mut c = ExperimentConfig::default();
    c.format = "platoon-experiment/0".into();
    assert!(matches!(c.validate(), Err(Error::Format(_))));
}

#[test]
fn statistics_match_direct_formulas() {
    let means = [-1.9, -1.8, -2.0, -1.85, -1.95];
    let (mean, best, se) = run_statistics(&means);
    let m = means.iter().sum::<f64>() / 5.0;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
    assert!((mean - m).abs() < 1e-15);
    assert_eq!(best, -1.8);
    assert!((se - (var / 5.0).sqrt()).abs() < 1e-15);
}

#[test]
fn dry_run_plan_counts_trainings() {
    let c = ExperimentConfig::default();
    let w = plan(&c).unwrap();
    assert_eq!(w.trainings, 15);
    assert_eq!(w.training_episodes, 15 * 100 * 500);
    assert_eq!(w.eval_episodes, 15 * 200);
    // Followers 1-3, the ego under P4, vehicle 5 for P6, six other ego problems.
    let p = plan(&ExperimentConfig::new(Scenario::Platoon)).unwrap();
    assert_eq!(p.trainings, 5 * (3 + 1 + 1 + 6));
}

#[test]
fn two_vehicle_run_is_reproducible_and_consistent() {
    let c = tiny(Scenario::TwoVehicle);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_two_vehicle(&c, a.path()).unwrap();
    assert_eq!(ra.len(), 3);
    assert!(ra.iter().all(|r| r.complete && r.runs.len() == 2 && r.trace_file.is_some()));

    // Rerun from the manifest alone into another directory.
    let m = ExperimentConfig::from_manifest(&a.path().join("two_vehicle").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m, c);
    run_two_vehicle(&m, b.path()).unwrap();
    let fa = csv_files(a.path());
    assert!(fa.len() >= 3 * 2 * 3 + 3 + 2);
    assert_eq!(fa, csv_files(b.path()));

    let digest = c.digest();
    for (name, bytes) in &fa {
        let first = String::from_utf8_lossy(bytes).lines().next().unwrap().to_string();
        assert!(first.contains(&format!("digest={digest}")), "{name}");
    }
    for row in recompute_report(&a.path().join("two_vehicle")).unwrap() {
        let (m, best, se) = row.stored;
        assert!((row.mean - m).abs() <= 1e-12 && (row.best - best).abs() <= 1e-12 && (row.std_error - se).abs() <= 1e-12);
    }
}

#[test]
fn quiet_equilibrium_scores_near_zero() {
    let mut c = tiny(Scenario::TwoVehicle);
    c.exo.std = 0.0;
    c.two_vehicle.initial = [0.0; 3];
    c.trainer.start_box = [0.3; 3];
    let dir = tempfile::tempdir().unwrap();
    for r in run_two_vehicle(&c, dir.path()).unwrap() {
        assert!(r.mean.abs() < 0.05, "{}: {}", r.problem, r.mean);
    }
}

#[test]
fn train_then_eval_matches_combined_run() {
    let mut c = tiny(Scenario::TwoVehicle);
    c.problems = vec![ProblemId::P2];
    c.seeds = vec![3];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let e = eval_problems(&c, a.path()).unwrap_err();
    assert!(e.to_string().contains("platoon train"), "{e}");
    train_problems(&c, a.path()).unwrap();
    let split = eval_problems(&c, a.path()).unwrap();
    let joint = run_scenario(&c, b.path()).unwrap();
    assert_eq!(split[0].runs, joint[0].runs);
    assert!(a.path().join("two_vehicle").join(manifest_name("train")).exists());
}

#[test]
fn platoon_pipeline_caches_followers_and_feeds_kl() {
    let mut c = tiny(Scenario::Platoon);
    c.problems = vec![ProblemId::P4, ProblemId::PF2, ProblemId::P6];
    c.seeds = vec![0];
    let out = tempfile::tempdir().unwrap();

    let missing = run_kl(&c, out.path()).unwrap_err();
    assert!(matches!(missing, Error::MissingArtifact(_)));
    assert!(missing.to_string().contains("platoon platoon"), "{missing}");

    let first = run_platoon(&c, out.path()).unwrap();
    assert_eq!(first.len(), 3);
    let p6 = StateLayout::new(ProblemId::P6, 4, 6, LeaderComponents::Drop).unwrap();
    // Leader acc, four full followers, u[0..4], one follower behind.
    assert_eq!(p6.dim(), 1 + 4 * 3 + 4 + 3);
    assert!(first.iter().all(|r| r.complete));
    assert!(first[2].info_bytes > first[0].info_bytes);
    let followers = out.path().join("platoon/followers/seed0");
    for v in 1..=5 {
        assert!(followers.join(format!("v{v}/manifest.json")).exists(), "v{v}");
    }
    let before = csv_files(&out.path().join("platoon"));
    // The second run loads every follower from the cache.
    let stamp = fs::metadata(followers.join("v1/manifest.json")).unwrap().modified().unwrap();
    let second = run_platoon(&c, out.path()).unwrap();
    assert_eq!(fs::metadata(followers.join("v1/manifest.json")).unwrap().modified().unwrap(), stamp);
    assert_eq!(first.iter().map(|r| r.mean).collect::<Vec<_>>(), second.iter().map(|r| r.mean).collect::<Vec<_>>());
    assert_eq!(before, csv_files(&out.path().join("platoon")));

    let curves = run_kl(&c, out.path()).unwrap();
    assert_eq!(curves.len(), 5);
    assert!(curves.iter().all(|k| k.points.len() == c.horizon - 1));
    let text = fs::read_to_string(out.path().join("kl/kl.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap() == "problem,step,kl_nats,samples,bins");
    assert!(text.lines().next().unwrap().contains("error_range=-3:3"));
}

#[test]
fn theorem_suite_writes_one_row_per_family() {
    let c = tiny(Scenario::TwoVehicle);
    let out = tempfile::tempdir().unwrap();
    let rows = run_theorem_suite(&c, out.path()).unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.passed()));
    let (_, parsed) = read_csv(&out.path().join(THEOREMS_DIR).join("theorems.csv")).unwrap();
    assert_eq!(parsed.len(), 7);
}
