//! End-to-end tests of the command-line surface: exit codes, artifacts,
//! sweep aggregation and the record/replay/profile loop.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sketchtile"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sketchtile-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

/// Small, reuse-heavy config used across the CLI tests.
fn write_base_config(dir: &Path) -> PathBuf {
    let path = dir.join("base.cfg");
    std::fs::write(
        &path,
        "# nine-tile regional test configuration\n\
         seed = 11\n\
         frames = 2\n\
         channels = 2\n\
         low.height = 36\n\
         low.width = 48\n\
         target.height = 144\n\
         target.width = 192\n\
         tile.height = 48\n\
         tile.width = 64\n\
         sampling.steps = 30\n\
         renoise.steps = 24\n\
         shift.every = 0\n\
         backend = drift\n\
         drift.amplitude = 0.12\n\
         scene.blob = 0.5,0.5,0.0004,0.0004,0.1,0.8\n\
         scene.blob = 0.8333,0.8333,-0.0004,-0.0004,0.1,0.8\n",
    )
    .unwrap();
    path
}

fn digest_of(out_dir: &Path) -> String {
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    report["output_digest"].as_str().unwrap().to_string()
}

#[test]
fn run_without_cache_reports_zero_skips() {
    let dir = tmp("nocache");
    let cfg = write_base_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args([
            "--set",
            "cache.enabled=false",
            "--set",
            "dump.pgm=true",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["totals"]["skipped_tiles"], 0);
    assert!(out_dir.join("final.sgtn").exists());
    assert!(out_dir.join("sched_log.jsonl").exists());
    assert!(out_dir.join("frames/frame000_ch00.pgm").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn run_rebalanced_nine_tiles_caps_makespan() {
    let dir = tmp("rebalance");
    let cfg = write_base_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--set", "workers=4", "--set", "rebalance=true", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    let steps = report["steps"].as_array().unwrap();
    assert!(!steps.is_empty());
    let mut saw_two = false;
    for step in steps {
        let makespan = step["makespan_units"].as_f64().unwrap();
        assert!(
            makespan <= 3.0,
            "9 tiles / 4 workers can never exceed 3 units"
        );
        if makespan <= 2.0 && step["skipped"].as_u64().unwrap() > 0 {
            saw_two = true;
        }
    }
    assert!(
        saw_two,
        "at least one skip-bearing step should rebalance to 2 units"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let out = bin()
        .args(["run", "--config", "/nonexistent/sketchtile.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("/nonexistent/sketchtile.cfg"),
        "stderr must name the path: {err}"
    );
}

#[test]
fn unknown_sweep_axis_exits_2() {
    let dir = tmp("badaxis");
    let cfg = write_base_config(&dir);
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "cache.bogus", "--values", "1,2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_identical_dumps_is_bit_exact() {
    let dir = tmp("compare");
    let cfg = write_base_config(&dir);
    let out_dir = dir.join("out");
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let dump = out_dir.join("final.sgtn");
    let out = bin().arg("compare").arg(&dump).arg(&dump).output().unwrap();
    assert!(out.status.success());
    let fidelity: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(fidelity["bit_exact"], true);
    assert_eq!(fidelity["psnr_db"].as_f64().unwrap(), 99.0);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_tau_skip_counts_non_decreasing() {
    let dir = tmp("sweeptau");
    let cfg = write_base_config(&dir);
    let csv_path = dir.join("sweep.csv");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "cache.tau", "--values", "0,0.05,0.09", "--out"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("axis_value,output_digest,predictor_calls,skipped_tiles"));
    let skips: Vec<u64> = lines
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(skips.len(), 3);
    assert_eq!(skips[0], 0, "tau=0 must not skip");
    assert!(skips.windows(2).all(|w| w[0] <= w[1]), "skips {skips:?}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_workers_outputs_identical_digests() {
    let dir = tmp("sweepworkers");
    let cfg = write_base_config(&dir);
    let csv_path = dir.join("sweep.csv");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "workers", "--values", "1,2,4", "--out"])
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let digests: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(digests.len(), 3);
    assert!(
        digests.iter().all(|&d| d == digests[0]),
        "digests {digests:?}"
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn record_replay_and_profile_roundtrip() {
    let dir = tmp("replay");
    let cfg = write_base_config(&dir);
    let trace = dir.join("run.trace");
    let rec_out = dir.join("rec");
    // Record with cache off so the trace is gap-free for profiling.
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--set", "cache.enabled=false", "--set"])
        .arg(format!("trace.record={}", trace.display()))
        .arg("--out")
        .arg(&rec_out)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(trace.exists());

    let rep_out = dir.join("rep");
    let out = bin()
        .args(["replay", "--config"])
        .arg(&cfg)
        .args(["--set", "cache.enabled=false"])
        .arg("--trace")
        .arg(&trace)
        .arg("--out")
        .arg(&rep_out)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(digest_of(&rec_out), digest_of(&rep_out));

    let profile_csv = dir.join("profile.csv");
    let out = bin()
        .args(["profile", "--config"])
        .arg(&cfg)
        .args(["--set", "cache.enabled=false"])
        .arg("--trace")
        .arg(&trace)
        .arg("--out")
        .arg(&profile_csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&profile_csv).unwrap();
    assert!(csv.starts_with("step,relL1_O,cos_O,relL1_delta,cos_delta,k\n"));
    // Stage 1 has 30 steps and stage 2 has 24; each contributes pairs.
    assert!(
        csv.lines().count() > 40,
        "profile rows: {}",
        csv.lines().count()
    );

    // Every column is finite, and the profile shows the end-of-run
    // instability: the final step's output change dwarfs the mid-run's.
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.iter().flatten().all(|v| v.is_finite()));
    let steps: Vec<usize> = rows.iter().map(|r| r[0] as usize).collect();
    let stage2_start = (1..steps.len())
        .find(|&i| steps[i] <= steps[i - 1])
        .unwrap();
    let stage2 = &rows[stage2_start..];
    let last_rel = stage2.last().unwrap()[1];
    let mid_rel = stage2[stage2.len() / 2][1];
    assert!(
        last_rel > mid_rel,
        "final-step relL1 {last_rel} should exceed mid-run {mid_rel}"
    );
    std::fs::remove_dir_all(&dir).ok();
}
