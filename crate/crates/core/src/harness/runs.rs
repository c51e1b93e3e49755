use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario};
use super::output::{field, num, read_csv, ResultWriter};
use crate::ddpg::{self, hex_digest, CurvePoint, FrozenFollowers, TrainOutcome, TrainedPolicy};
use crate::dp::{check_theorems, Family, TheoremRow};
use crate::dynamics::LocalState;
use crate::env::{Env, PlatoonEnv, TwoVehicleEnv};
use crate::error::{Error, Result};
use crate::kl::{collect_rollouts, kl_ranking, KlCurve};
use crate::problems::{info_bytes, LeaderComponents, ProblemId, StateLayout};
use crate::rng;

pub const THEOREMS_DIR: &str = "theorems";
pub const KL_DIR: &str = "kl";
const DIVERGED_FILE: &str = "diverged.json";
const CURVE_FILE: &str = "curve.json";

/// Outcome of one seed of one problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    Diverged { stage: usize, detail: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub status: RunStatus,
    /// Scaled mean test return; NaN when the seed did not complete.
    pub mean_return: f64,
    pub raw_mean_return: f64,
    pub returns_file: Option<String>,
}

/// Per-problem summary over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub problem: ProblemId,
    pub runs: Vec<SeedResult>,
    /// Statistics over completed runs.
    pub mean: f64,
    pub best: f64,
    pub std_error: f64,
    pub complete: bool,
    pub info_bytes: usize,
    pub q_scatter_files: Vec<String>,
    pub trace_file: Option<String>,
}

/// Mean, maximum and `sample std / sqrt(n)`.
pub fn run_statistics(means: &[f64]) -> (f64, f64, f64) {
    if means.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let (mean, std) = ddpg::mean_std(means);
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let se = if means.len() > 1 { std / (means.len() as f64).sqrt() } else { f64::NAN };
    (mean, best, se)
}

pub fn scenario_of(problem: ProblemId) -> Scenario {
    if problem.is_two_vehicle() {
        Scenario::TwoVehicle
    } else {
        Scenario::Platoon
    }
}

fn policy_dir(root: &Path, problem: ProblemId, seed: u64) -> PathBuf {
    root.join("policies").join(format!("{problem}_seed{seed}"))
}

fn follower_dir(out: &Path, seed: u64, vehicle: usize) -> PathBuf {
    out.join(Scenario::Platoon.tag()).join("followers").join(format!("seed{seed}")).join(format!("v{vehicle}"))
}

/// Seed passed to the trainer for `vehicle` in run `seed`.
pub fn train_seed(seed: u64, vehicle: usize) -> u64 {
    rng::derive_seed(seed, 1000 + vehicle as u64)
}

/// Digest of everything a trained follower depends on.
pub fn follower_digest(config: &ExperimentConfig, seed: u64) -> String {
    let key = serde_json::json!({
        "horizon": config.horizon,
        "dt": config.dt,
        "vehicle": config.vehicle,
        "reward": config.reward,
        "platoon": config.platoon,
        "exo": config.exo,
        "trainer": config.trainer,
        "seed": seed,
    });
    hex_digest(key.to_string().as_bytes())
}

fn save_extras(dir: &Path, curve: &[CurvePoint]) -> Result<()> {
    fs::write(dir.join(CURVE_FILE), serde_json::to_string(curve)?)?;
    Ok(())
}

fn load_curve(dir: &Path) -> Result<Vec<CurvePoint>> {
    let p = dir.join(CURVE_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::MissingArtifact(format!("{}: {e}", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize, Deserialize)]
struct DivergedMarker {
    digest: String,
    status: RunStatus,
}

fn mark_diverged(dir: &Path, digest: &str, status: &RunStatus) -> Result<()> {
    fs::create_dir_all(dir)?;
    let m = DivergedMarker {
        digest: digest.into(),
        status: status.clone(),
    };
    fs::write(dir.join(DIVERGED_FILE), serde_json::to_string(&m)?)?;
    Ok(())
}

/// Divergence recorded in `dir`; with `digest`, only if it matches.
fn read_diverged(dir: &Path, digest: Option<&str>) -> Result<Option<RunStatus>> {
    match fs::read_to_string(dir.join(DIVERGED_FILE)) {
        Ok(t) => {
            let m: DivergedMarker = serde_json::from_str(&t)?;
            Ok((digest.is_none() || digest == Some(m.digest.as_str())).then_some(m.status))
        }
        Err(_) => Ok(None),
    }
}

fn as_status(e: Error) -> Result<RunStatus> {
    match e {
        Error::Divergence { stage, detail } => Ok(RunStatus::Diverged { stage, detail }),
        other => Err(other),
    }
}

/// Trained platoon followers of one seed, loaded from or written to the
/// cache under `<out>/platoon/followers`.
struct FollowerCache<'a> {
    config: &'a ExperimentConfig,
    out: &'a Path,
    seed: u64,
    digest: String,
    allow_training: bool,
    policies: BTreeMap<usize, TrainedPolicy<f64>>,
}

impl<'a> FollowerCache<'a> {
    fn new(config: &'a ExperimentConfig, out: &'a Path, seed: u64, allow_training: bool) -> Self {
        Self {
            config,
            out,
            seed,
            digest: follower_digest(config, seed),
            allow_training,
            policies: BTreeMap::new(),
        }
    }

    fn layout(&self, vehicle: usize) -> Result<StateLayout> {
        StateLayout::new(ProblemId::P4, vehicle, vehicle + 1, LeaderComponents::Drop)
    }

    fn frozen(&self, vehicles: impl IntoIterator<Item = usize>) -> Result<FrozenFollowers<f64>> {
        let mut f = FrozenFollowers::new();
        for j in vehicles {
            let p = self
                .policies
                .get(&j)
                .ok_or_else(|| Error::MissingArtifact(format!("follower {j} not loaded")))?;
            f.insert(j, p.clone(), self.layout(j)?)?;
        }
        Ok(f)
    }

    /// Trains (or loads) followers `1..=vehicle` under P4; `Ok(Err(status))`
    /// when one of them diverged.
    fn ensure(&mut self, vehicle: usize) -> Result<Result<(), RunStatus>> {
        for j in 1..=vehicle {
            if self.policies.contains_key(&j) {
                continue;
            }
            let dir = follower_dir(self.out, self.seed, j);
            if let Some(status) = read_diverged(&dir, Some(&self.digest))? {
                return Ok(Err(status));
            }
            match TrainedPolicy::<f64>::load(&dir, self.config.trainer.optimizer) {
                Ok(p) if p.digest == self.digest => {
                    self.policies.insert(j, p);
                    continue;
                }
                _ if !self.allow_training => {
                    return Err(Error::MissingArtifact(format!(
                        "no trained follower {j} for seed {} in {}; run `platoon platoon --out {}` (or `platoon train`) first",
                        self.seed,
                        dir.display(),
                        self.out.display()
                    )))
                }
                _ => {}
            }
            let mut env = self.env(ProblemId::P4, j, j + 1)?;
            match ddpg::train::<f64>(&mut env, ProblemId::P4, &self.config.trainer, train_seed(self.seed, j), &self.digest) {
                Ok(outcome) => {
                    if dir.exists() {
                        fs::remove_dir_all(&dir)?;
                    }
                    outcome.policy.save(&dir)?;
                    save_extras(&dir, &outcome.curve)?;
                    self.policies.insert(j, outcome.policy);
                }
                Err(e) => {
                    let status = match as_status(e)? {
                        RunStatus::Diverged { stage, detail } => RunStatus::Diverged {
                            stage,
                            detail: format!("follower {j}: {detail}"),
                        },
                        s => s,
                    };
                    if dir.exists() {
                        fs::remove_dir_all(&dir)?;
                    }
                    mark_diverged(&dir, &self.digest, &status)?;
                    return Ok(Err(status));
                }
            }
        }
        Ok(Ok(()))
    }

    /// Environment for `ego` solving `problem` in an `n`-vehicle model with
    /// every other follower frozen.
    fn env(&self, problem: ProblemId, ego: usize, n: usize) -> Result<PlatoonEnv> {
        let c = self.config;
        let others = self.frozen((1..n).filter(|&j| j != ego))?;
        let layout = StateLayout::new(problem, ego, n, LeaderComponents::Drop)?;
        let [e_p, e_v, acc] = c.platoon.initial;
        PlatoonEnv::new(
            c.platoon_model(n),
            layout,
            c.exo,
            LocalState::new(e_p, e_v, acc),
            c.horizon,
            Arc::new(others),
        )
    }
}

/// Model size used for an ego problem.
fn ego_vehicles(config: &ExperimentConfig, problem: ProblemId) -> usize {
    if problem == ProblemId::P6 {
        config.platoon.taus.len()
    } else {
        config.platoon.ego + 1
    }
}

/// Everything a platoon ego problem needs besides its own policy.
fn prepare_platoon(cache: &mut FollowerCache, problem: ProblemId) -> Result<Result<(), RunStatus>> {
    let ego = cache.config.platoon.ego;
    // Followers behind the ego are trained behind its P4 policy.
    let needed = match problem {
        ProblemId::P4 => ego,
        ProblemId::P6 => ego_vehicles(cache.config, problem) - 1,
        _ => ego - 1,
    };
    cache.ensure(needed)
}

fn ego_env(config: &ExperimentConfig, cache: Option<&FollowerCache>, problem: ProblemId) -> Result<Box<dyn Env>> {
    match scenario_of(problem) {
        Scenario::TwoVehicle => Ok(Box::new(TwoVehicleEnv::new(
            problem,
            config.two_vehicle_model(),
            config.exo,
            config.two_vehicle.initial,
            config.horizon,
        )?)),
        Scenario::Platoon => {
            let cache = cache.expect("platoon problems need followers");
            Ok(Box::new(cache.env(problem, config.platoon.ego, ego_vehicles(config, problem))?))
        }
    }
}

/// Trains one (problem, seed) and stores the policy and its curve.
fn train_one(config: &ExperimentConfig, out: &Path, problem: ProblemId, seed: u64, cache: Option<&mut FollowerCache>) -> Result<RunStatus> {
    let root = out.join(scenario_of(problem).tag());
    let dir = policy_dir(&root, problem, seed);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    let digest = config.digest();
    let outcome: std::result::Result<TrainOutcome<f64>, Error> = match cache {
        None => {
            let mut env = ego_env(config, None, problem)?;
            ddpg::train(env.as_mut(), problem, &config.trainer, seed, &digest)
        }
        Some(cache) => {
            if let Err(status) = prepare_platoon(cache, problem)? {
                mark_diverged(&dir, &digest, &status)?;
                return Ok(status);
            }
            let ego = config.platoon.ego;
            if problem == ProblemId::P4 {
                // The ego's P4 policy is the cached follower.
                let fdir = follower_dir(out, seed, ego);
                let p = cache.policies[&ego].clone();
                Ok(TrainOutcome {
                    curve: load_curve(&fdir)?,
                    stage_digests: Vec::new(),
                    policy: p,
                })
            } else {
                let mut env = ego_env(config, Some(cache), problem)?;
                ddpg::train(env.as_mut(), problem, &config.trainer, train_seed(seed, ego), &digest)
            }
        }
    };
    match outcome {
        Ok(o) => {
            o.policy.save(&dir)?;
            save_extras(&dir, &o.curve)?;
            Ok(RunStatus::Completed)
        }
        Err(e) => {
            let status = as_status(e)?;
            mark_diverged(&dir, &digest, &status)?;
            Ok(status)
        }
    }
}

fn curve_rows(curve: &[CurvePoint]) -> Vec<Vec<String>> {
    curve.iter().map(|p| vec![p.episode.to_string(), num(p.mean_return), num(p.std)]).collect()
}

/// `train` command: trains every configured (problem, seed) and writes the
/// training curves.
pub fn train_problems(config: &ExperimentConfig, out: &Path) -> Result<Vec<(ProblemId, u64, RunStatus)>> {
    config.validate()?;
    let mut w = ResultWriter::new(&out.join(config.scenario.tag()), config)?;
    let results = train_into(config, out, &mut w)?;
    w.finish("train", config)?;
    Ok(results)
}

fn train_into(config: &ExperimentConfig, out: &Path, w: &mut ResultWriter) -> Result<Vec<(ProblemId, u64, RunStatus)>> {
    let root = out.join(config.scenario.tag());
    let mut results = Vec::new();
    for &seed in &config.seeds {
        let mut cache = FollowerCache::new(config, out, seed, true);
        for &p in &config.problems {
            let status = match config.scenario {
                Scenario::TwoVehicle => train_one(config, out, p, seed, None)?,
                Scenario::Platoon => train_one(config, out, p, seed, Some(&mut cache))?,
            };
            if status == RunStatus::Completed {
                let curve = load_curve(&policy_dir(&root, p, seed))?;
                w.csv(
                    &format!("curves/{p}_seed{seed}.csv"),
                    &[],
                    &["episode", "mean_test_return", "std"],
                    &curve_rows(&curve),
                )?;
            }
            results.push((p, seed, status));
        }
    }
    Ok(results)
}

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::Diverged { stage, detail } => format!("diverged at stage {stage}: {detail}"),
    }
}

/// `eval` command: evaluates stored policies and writes per-episode
/// returns, critic scatter, one trace per problem and the summaries.
pub fn eval_problems(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunReport>> {
    config.validate()?;
    let root = out.join(config.scenario.tag());
    let mut w = ResultWriter::new(&root, config)?;
    let reports = evaluate_into(config, out, &mut w)?;
    w.finish("eval", config)?;
    Ok(reports)
}

fn evaluate_into(config: &ExperimentConfig, out: &Path, w: &mut ResultWriter) -> Result<Vec<RunReport>> {
    let root = out.join(config.scenario.tag());
    let scale = config.reward.scale;
    let mut reports: Vec<RunReport> = Vec::new();
    let mut caches: BTreeMap<u64, FollowerCache> = BTreeMap::new();
    for &p in &config.problems {
        let (ego, n) = match config.scenario {
            Scenario::TwoVehicle => (1, 2),
            Scenario::Platoon => (config.platoon.ego, config.platoon.taus.len()),
        };
        let mut report = RunReport {
            problem: p,
            runs: Vec::new(),
            mean: f64::NAN,
            best: f64::NAN,
            std_error: f64::NAN,
            complete: true,
            info_bytes: info_bytes(p, ego, n)?,
            q_scatter_files: Vec::new(),
            trace_file: None,
        };
        for (si, &seed) in config.seeds.iter().enumerate() {
            let dir = policy_dir(&root, p, seed);
            if let Some(status) = read_diverged(&dir, None)? {
                report.complete = false;
                report.runs.push(SeedResult {
                    seed,
                    status,
                    mean_return: f64::NAN,
                    raw_mean_return: f64::NAN,
                    returns_file: None,
                });
                continue;
            }
            let policy = TrainedPolicy::<f64>::load(&dir, config.trainer.optimizer).map_err(|e| match e {
                Error::MissingArtifact(m) => Error::MissingArtifact(format!("{m}; run `platoon train` for {p} first")),
                other => other,
            })?;
            let mut env = match config.scenario {
                Scenario::TwoVehicle => ego_env(config, None, p)?,
                Scenario::Platoon => {
                    let cache = caches.entry(seed).or_insert_with(|| FollowerCache::new(config, out, seed, false));
                    if let Err(status) = prepare_platoon(cache, p)? {
                        return Err(Error::InvalidInput(format!("stored policy for {p} seed {seed} but {}", status_text(&status))));
                    }
                    ego_env(config, Some(cache), p)?
                }
            };
            let episodes = ddpg::evaluate(&policy, env.as_mut(), config.eval.episodes, config.exo.seed)?;
            let rows: Vec<Vec<String>> = episodes
                .iter()
                .enumerate()
                .map(|(e, r)| vec![e.to_string(), num(scale * r.raw_return), num(r.raw_return)])
                .collect();
            let rel = format!("returns/{p}_seed{seed}.csv");
            w.csv(&rel, &[], &["episode", "return", "raw_return"], &rows)?;
            let raw: Vec<f64> = episodes.iter().map(|r| r.raw_return).collect();
            let raw_mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let scaled: Vec<f64> = raw.iter().map(|r| scale * r).collect();
            let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;

            let q = ddpg::q_scatter(&policy, env.as_mut(), config.eval.q_scatter_episodes, config.exo.seed, scale)?;
            let q_rows: Vec<Vec<String>> = q
                .iter()
                .map(|r| vec![r.episode.to_string(), r.step.to_string(), num(r.estimate), num(r.observed)])
                .collect();
            let q_rel = format!("qscatter/{p}_seed{seed}.csv");
            w.csv(&q_rel, &[], &["episode", "step", "estimate", "observed"], &q_rows)?;
            report.q_scatter_files.push(q_rel);

            if si == 0 {
                let t_rows: Vec<Vec<String>> = episodes[0]
                    .trace
                    .iter()
                    .enumerate()
                    .map(|(k, t)| vec![k.to_string(), num(t.e_p), num(t.e_v), num(t.acc), num(t.u)])
                    .collect();
                let t_rel = format!("traces/{p}.csv");
                w.csv(&t_rel, &[("seed", seed.to_string())], &["step", "e_p", "e_v", "acc", "u"], &t_rows)?;
                report.trace_file = Some(t_rel);
            }
            report.runs.push(SeedResult {
                seed,
                status: RunStatus::Completed,
                mean_return: mean,
                raw_mean_return: raw_mean,
                returns_file: Some(rel),
            });
        }
        let means: Vec<f64> = report.runs.iter().filter(|r| r.status == RunStatus::Completed).map(|r| r.mean_return).collect();
        (report.mean, report.best, report.std_error) = run_statistics(&means);
        reports.push(report);
    }
    write_summaries(w, &reports)?;
    Ok(reports)
}

fn write_summaries(w: &mut ResultWriter, reports: &[RunReport]) -> Result<()> {
    let mut runs = Vec::new();
    for r in reports {
        for s in &r.runs {
            runs.push(vec![
                r.problem.to_string(),
                s.seed.to_string(),
                status_text(&s.status),
                num(s.mean_return),
                num(s.raw_mean_return),
                s.returns_file.clone().unwrap_or_default(),
            ]);
        }
    }
    w.csv("runs.csv", &[], &["problem", "seed", "status", "mean_return", "raw_mean_return", "returns_file"], &runs)?;
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.problem.to_string(),
                r.runs.len().to_string(),
                r.runs.iter().filter(|s| s.status == RunStatus::Completed).count().to_string(),
                num(r.mean),
                num(r.best),
                num(r.std_error),
                r.complete.to_string(),
                r.info_bytes.to_string(),
            ]
        })
        .collect();
    w.csv(
        "summary.csv",
        &[],
        &["problem", "runs", "completed", "mean", "best", "std_error", "complete", "info_bytes"],
        &rows,
    )?;
    Ok(())
}

/// `two-vehicle` / `platoon` commands: train, then evaluate.
pub fn run_scenario(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunReport>> {
    config.validate()?;
    let mut w = ResultWriter::new(&out.join(config.scenario.tag()), config)?;
    train_into(config, out, &mut w)?;
    let reports = evaluate_into(config, out, &mut w)?;
    w.finish(config.scenario.tag(), config)?;
    Ok(reports)
}

pub fn run_two_vehicle(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunReport>> {
    let mut c = config.clone();
    if c.scenario != Scenario::TwoVehicle {
        c.scenario = Scenario::TwoVehicle;
        c.problems = Scenario::TwoVehicle.default_problems();
    }
    run_scenario(&c, out)
}

pub fn run_platoon(config: &ExperimentConfig, out: &Path) -> Result<Vec<RunReport>> {
    let mut c = config.clone();
    if c.scenario != Scenario::Platoon {
        c.scenario = Scenario::Platoon;
        c.problems = Scenario::Platoon.default_problems();
    }
    run_scenario(&c, out)
}

/// `check-theorems` command.
pub fn run_theorem_suite(config: &ExperimentConfig, out: &Path) -> Result<Vec<TheoremRow>> {
    config.validate()?;
    let rows = Family::ALL
        .iter()
        .map(|&f| check_theorems(f, config.theorems.instances, config.theorems.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut w = ResultWriter::new(&out.join(THEOREMS_DIR), config)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.family.to_string(),
                r.theorem.clone(),
                format!("{:?}", r.relation),
                r.instances.to_string(),
                r.violations.to_string(),
                num(r.max_gap),
                num(r.min_gap),
                r.strict_witnesses.to_string(),
                r.jensen_violations.to_string(),
                r.passed().to_string(),
            ]
        })
        .collect();
    w.csv(
        "theorems.csv",
        &[],
        &[
            "family",
            "theorem",
            "relation",
            "instances",
            "violations",
            "max_gap",
            "min_gap",
            "strict_witnesses",
            "jensen_violations",
            "passed",
        ],
        &csv_rows,
    )?;
    w.finish("check-theorems", config)?;
    Ok(rows)
}

/// `kl` command: value-of-information curves from the cached followers of
/// the first seed.
pub fn run_kl(config: &ExperimentConfig, out: &Path) -> Result<Vec<KlCurve>> {
    config.validate()?;
    let ego = config.platoon.ego;
    let seed = config.seeds[0];
    let mut cache = FollowerCache::new(config, out, seed, false);
    if let Err(status) = cache.ensure(ego - 1)? {
        return Err(Error::MissingArtifact(format!("followers of seed {seed} {}", status_text(&status))));
    }
    let followers = cache.frozen(1..ego)?;
    let [e_p, e_v, acc] = config.platoon.initial;
    let data = collect_rollouts(
        &config.platoon_model(ego),
        &followers,
        &config.exo,
        LocalState::new(e_p, e_v, acc),
        config.horizon,
        config.kl.episodes,
        config.exo.seed,
    )?;
    let quant = config.kl.scheme();
    let curves = kl_ranking(&data, ego, ego + 1, &ProblemId::KL_REDUCED, &quant, config.kl.min_samples)?;
    let mut w = ResultWriter::new(&out.join(KL_DIR), config)?;
    let mut rows = Vec::new();
    for c in &curves {
        for (k, p) in c.points.iter().enumerate() {
            rows.push(vec![
                c.problem.to_string(),
                k.to_string(),
                num(p.nats),
                p.samples.to_string(),
                quant.bins.to_string(),
            ]);
        }
    }
    let scheme = [
        ("error_range", format!("{}:{}", quant.error_range[0], quant.error_range[1])),
        ("acc_range", format!("{}:{}", quant.acc_range[0], quant.acc_range[1])),
        ("episodes", config.kl.episodes.to_string()),
        ("seed", seed.to_string()),
    ];
    w.csv("kl.csv", &scheme, &["problem", "step", "kl_nats", "samples", "bins"], &rows)?;
    w.finish("kl", config)?;
    Ok(curves)
}

/// Statistics of one problem recomputed from the per-episode files.
#[derive(Clone, Debug, PartialEq)]
pub struct RecomputedRow {
    pub problem: ProblemId,
    pub run_means: Vec<f64>,
    pub mean: f64,
    pub best: f64,
    pub std_error: f64,
    /// Statistics as stored in `summary.csv`.
    pub stored: (f64, f64, f64),
}

/// `report` command: re-derives the summary of a scenario directory from its
/// raw return files.
pub fn recompute_report(scenario_dir: &Path) -> Result<Vec<RecomputedRow>> {
    let (digest, runs) = read_csv(&scenario_dir.join("runs.csv"))?;
    let (sdigest, summary) = read_csv(&scenario_dir.join("summary.csv"))?;
    if digest != sdigest {
        return Err(Error::Format("runs.csv and summary.csv come from different configurations".into()));
    }
    let mut out = Vec::new();
    for s in &summary {
        let problem: ProblemId = s.get("problem").map(|v| v.parse()).transpose()?.ok_or_else(|| Error::Format("problem column".into()))?;
        let mut run_means = Vec::new();
        for r in runs.iter().filter(|r| r.get("problem").map(String::as_str) == Some(problem.tag())) {
            let file = r.get("returns_file").cloned().unwrap_or_default();
            if file.is_empty() {
                continue;
            }
            let (d, rows) = read_csv(&scenario_dir.join(&file))?;
            if d != digest {
                return Err(Error::Format(format!("{file} comes from a different configuration")));
            }
            let vals = rows.iter().map(|row| field::<f64>(row, "return")).collect::<Result<Vec<_>>>()?;
            run_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
        let (mean, best, std_error) = run_statistics(&run_means);
        out.push(RecomputedRow {
            problem,
            run_means,
            mean,
            best,
            std_error,
            stored: (field(s, "mean")?, field(s, "best")?, field(s, "std_error")?),
        });
    }
    Ok(out)
}

/// Rough size of a run, for `--dry-run`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Workload {
    pub trainings: usize,
    pub training_episodes: u64,
    pub eval_episodes: u64,
    pub estimated_seconds: f64,
}

/// Seconds per training episode measured for the desk networks on one core.
const TWO_VEHICLE_EPISODE_S: f64 = 7e-4;
const PLATOON_EPISODE_S: f64 = 1.5e-3;

pub fn plan(config: &ExperimentConfig) -> Result<Workload> {
    config.validate()?;
    let per_training = (config.horizon * config.trainer.episodes_per_stage) as u64;
    let seeds = config.seeds.len();
    let (trainings, cost) = match config.scenario {
        Scenario::TwoVehicle => (config.problems.len() * seeds, TWO_VEHICLE_EPISODE_S),
        Scenario::Platoon => {
            let ego = config.platoon.ego;
            let behind = if config.problems.contains(&ProblemId::P6) {
                config.platoon.taus.len() - 1 - ego
            } else {
                0
            };
            let ego_p4 = usize::from(config.problems.iter().any(|p| matches!(p, ProblemId::P4 | ProblemId::P6)));
            let others = config.problems.iter().filter(|&&p| p != ProblemId::P4).count();
            ((ego - 1 + ego_p4 + behind + others) * seeds, PLATOON_EPISODE_S)
        }
    };
    let training_episodes = trainings as u64 * per_training;
    let weights = config.trainer.actor_hidden.iter().chain(&config.trainer.critic_hidden).sum::<usize>() as f64 / 224.0;
    Ok(Workload {
        trainings,
        training_episodes,
        eval_episodes: (config.problems.len() * seeds * config.eval.episodes) as u64,
        estimated_seconds: training_episodes as f64 * cost * weights.max(1.0),
    })
}
