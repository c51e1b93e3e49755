use std::process::Command;

fn platoon() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_platoon"));
    c.env_remove("PLATOON_OUT");
    c
}

const TINY: [&str; 14] = [
    "--seeds",
    "2",
    "--episodes-per-stage",
    "10",
    "--set",
    "horizon=5",
    "--set",
    "eval.episodes=4",
    "--set",
    "trainer.batch_size=8",
    "--set",
    "trainer.actor_hidden=[8]",
    "--set",
    "trainer.critic_hidden=[8]",
];

#[test]
fn dry_run_echoes_config_and_workload() {
    let o = platoon()
        .args(["two-vehicle", "--dry-run", "--seeds", "3", "--set", "exo.std=0.5"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("\"std\": 0.5"));
    assert!(text.contains("workload: 9 trainings"));
}

#[test]
fn bad_flags_fail_cleanly() {
    let o = platoon().args(["train", "--problem", "P1,P5", "--dry-run"]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("mixes"));
    let o = platoon().args(["eval", "--set", "exo.sigma=1", "--dry-run"]).output().unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown config key"));
}

#[test]
fn kl_without_followers_names_the_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon().args(["kl"]).env("PLATOON_OUT", dir.path()).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("platoon platoon"));
}

#[test]
fn run_then_report_and_rerun_from_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let o = platoon().args(["two-vehicle", "--out"]).arg(a.path()).args(TINY).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("P3"));

    let o = platoon().args(["report", "--out"]).arg(a.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches(" ok").count(), 3);

    let manifest = a.path().join("two_vehicle/manifest.json");
    let o = platoon().args(["two-vehicle", "--manifest"]).arg(&manifest).env("PLATOON_OUT", b.path()).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = |d: &std::path::Path| std::fs::read(d.join("two_vehicle/summary.csv")).unwrap();
    assert_eq!(summary(a.path()), summary(b.path()));
}

#[test]
fn theorem_checks_pass_on_small_families() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon()
        .args(["check-theorems", "--set", "theorems.instances=2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("pass").count(), 7);
    assert!(dir.path().join("theorems/theorems.csv").exists());
}
