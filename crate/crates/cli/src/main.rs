use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use platoon_core::ddpg::DdpgConfig;
use platoon_core::harness::{self, ExperimentConfig, RunReport, Scenario};
use platoon_core::problems::ProblemId;

#[derive(Parser)]
#[command(name = "platoon", version, about = "Train and evaluate platoon controllers under different information topologies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train policies for the selected problems and seeds.
    Train(Common),
    /// Evaluate stored policies.
    Eval(Common),
    /// Two-vehicle study (P1, P2, P3): train and evaluate.
    TwoVehicle(Common),
    /// Platoon study for the ego vehicle: train and evaluate.
    Platoon(Common),
    /// Exact DP checks of the information-ordering results.
    CheckTheorems(Common),
    /// Value-of-information curves from trained platoon followers.
    Kl(Common),
    /// Recompute summaries from per-episode return files.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Output root.
    #[arg(long, env = "PLATOON_OUT", default_value = "results")]
    out: PathBuf,
    /// Take the configuration from a run manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Take the configuration from a JSON file.
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Problem tags, comma separated.
    #[arg(long, value_delimiter = ',')]
    problem: Vec<String>,
    /// Number of seeds, or an explicit comma-separated list (`4,` for just seed 4).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    episodes_per_stage: Option<usize>,
    /// Larger networks and smaller learning rates.
    #[arg(long)]
    full_scale: bool,
    /// Override a config key, e.g. `--set exo.std=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the configuration and estimated workload without running.
    #[arg(long)]
    dry_run: bool,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if s.contains(',') {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad seed {t:?}")))
            .collect()
    } else {
        let n: u64 = s.trim().parse().with_context(|| format!("bad seed count {s:?}"))?;
        Ok((0..n).collect())
    }
}

impl Common {
    /// `scenario` is fixed by the command, or inferred from `--problem`.
    fn config(&self, scenario: Option<Scenario>) -> Result<ExperimentConfig> {
        let problems: Vec<ProblemId> = self.problem.iter().map(|p| p.parse()).collect::<Result<_, _>>()?;
        let inferred = match problems.first() {
            Some(p) => Some(harness::scenario_of(*p)),
            None => scenario,
        };
        let mut c = if let Some(m) = &self.manifest {
            ExperimentConfig::from_manifest(m)?
        } else if let Some(f) = &self.config {
            let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            ExperimentConfig::from_json(&text)?
        } else {
            ExperimentConfig::new(inferred.unwrap_or(Scenario::TwoVehicle))
        };
        if let Some(s) = scenario.or(inferred) {
            if c.scenario != s {
                c.scenario = s;
                c.problems = s.default_problems();
            }
        }
        if !problems.is_empty() {
            if problems.iter().any(|p| harness::scenario_of(*p) != c.scenario) {
                bail!("--problem mixes two-vehicle and platoon problems");
            }
            c.problems = problems;
        }
        if self.full_scale {
            c.trainer = DdpgConfig {
                episodes_per_stage: c.trainer.episodes_per_stage,
                reward_scale: c.trainer.reward_scale,
                ..DdpgConfig::full_scale()
            };
        }
        if let Some(s) = &self.seeds {
            c.seeds = parse_seeds(s)?;
        }
        if let Some(e) = self.episodes_per_stage {
            c.trainer.episodes_per_stage = e;
        }
        c.apply_overrides(&self.set)?;
        c.validate()?;
        Ok(c)
    }
}

fn dry_run(c: &ExperimentConfig) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(c)?);
    println!("digest: {}", c.digest());
    let w = harness::plan(c)?;
    println!(
        "workload: {} trainings, {} training episodes, {} test episodes, roughly {:.0} s on one core",
        w.trainings, w.training_episodes, w.eval_episodes, w.estimated_seconds
    );
    Ok(())
}

fn print_reports(reports: &[RunReport]) {
    println!("{:<6} {:>10} {:>10} {:>10} {:>6} {:>10}", "problem", "mean", "best", "std_err", "runs", "info");
    for r in reports {
        let done = r.runs.iter().filter(|s| s.status == harness::RunStatus::Completed).count();
        println!(
            "{:<6} {:>10.4} {:>10.4} {:>10.4} {:>3}/{:<2} {:>10}{}",
            r.problem.tag(),
            r.mean,
            r.best,
            r.std_error,
            done,
            r.runs.len(),
            r.info_bytes,
            if r.complete { "" } else { "  incomplete" }
        );
    }
}

fn report(out: &Path) -> Result<()> {
    let mut found = false;
    for s in [Scenario::TwoVehicle, Scenario::Platoon] {
        let dir = out.join(s.tag());
        if !dir.join("summary.csv").exists() {
            continue;
        }
        found = true;
        println!("[{}]", s.tag());
        for row in harness::recompute_report(&dir)? {
            let (m, b, se) = row.stored;
            let ok = [(row.mean, m), (row.best, b), (row.std_error, se)]
                .iter()
                .all(|(x, y)| (x - y).abs() <= 1e-12 || (x.is_nan() && y.is_nan()));
            println!(
                "{:<6} mean {:>9.4} best {:>9.4} std_err {:>8.4} runs {} {}",
                row.problem.tag(),
                row.mean,
                row.best,
                row.std_error,
                row.run_means.len(),
                if ok { "ok" } else { "MISMATCH with summary.csv" }
            );
            if !ok {
                bail!("summary.csv for {} does not match its return files", row.problem);
            }
        }
    }
    if !found {
        bail!("no summaries under {}; run `platoon two-vehicle` or `platoon platoon` first", out.display());
    }
    Ok(())
}

fn main() -> std::process::ExitCode {
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (common, scenario) = match &cli.command {
        Command::Train(c) | Command::Eval(c) | Command::CheckTheorems(c) | Command::Report(c) => (c, None),
        Command::TwoVehicle(c) => (c, Some(Scenario::TwoVehicle)),
        Command::Platoon(c) | Command::Kl(c) => (c, Some(Scenario::Platoon)),
    };
    if let Command::Report(c) = &cli.command {
        return report(&c.out);
    }
    let config = common.config(scenario)?;
    if common.dry_run {
        return dry_run(&config);
    }
    let out = &common.out;
    match &cli.command {
        Command::Train(_) => {
            for (p, seed, status) in harness::train_problems(&config, out)? {
                println!("{p} seed {seed}: {status:?}");
            }
        }
        Command::Eval(_) => print_reports(&harness::eval_problems(&config, out)?),
        Command::TwoVehicle(_) | Command::Platoon(_) => print_reports(&harness::run_scenario(&config, out)?),
        Command::CheckTheorems(_) => {
            let rows = harness::run_theorem_suite(&config, out)?;
            for r in &rows {
                println!(
                    "{:<9} {:<10} {:?} instances {} violations {} strict {} gap [{:.3e}, {:.3e}] {}",
                    r.family.tag(),
                    r.theorem,
                    r.relation,
                    r.instances,
                    r.violations,
                    r.strict_witnesses,
                    r.min_gap,
                    r.max_gap,
                    if r.passed() { "pass" } else { "FAIL" }
                );
            }
            if rows.iter().any(|r| !r.passed()) {
                bail!("theorem checks failed");
            }
        }
        Command::Kl(_) => {
            let skip = config.kl.transient;
            for k in harness::run_kl(&config, out)? {
                let post: Vec<f64> = k.points.iter().skip(skip).map(|p| p.nats).collect();
                let mean = post.iter().sum::<f64>() / post.len().max(1) as f64;
                println!("{:<5} mean KL after step {skip}: {mean:.4} nats", k.problem.tag());
            }
        }
        Command::Report(_) => unreachable!(),
    }
    Ok(())
}
