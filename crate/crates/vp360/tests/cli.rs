//! End-to-end tests of the `vp360` binary: outputs, determinism, exit codes
//! and checkpoint resume.

use std::path::Path;
use std::process::{Command, Output};

fn vp360(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vp360"))
        .args(args)
        .output()
        .expect("failed to launch vp360")
}

fn assert_ok(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

fn simulate_args(dir: &Path) -> Vec<String> {
    let set = |kv: &str| vec!["--set".to_string(), kv.to_string()];
    let mut args = vec!["simulate".to_string()];
    args.extend(set(&format!("output_dir=\"{}\"", dir.display())));
    args.extend(set("seed=1"));
    args.extend(set("synth.chunks=6"));
    args.extend(set("synth.sessions=1"));
    args.extend(set("session.ratio=4"));
    args.extend(set("sweep.bandwidth_mbps=700"));
    args
}

#[test]
fn simulate_writes_session_summary_and_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let args = simulate_args(dir.path());
    let out = vp360(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_ok(&out, "simulate");

    for file in ["session_lr_cba_synthetic_0.csv", "summary.csv", "plotdata.csv"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let rows = data_lines(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 1, "one sweep combination, one summary row");
    assert!(rows[0].starts_with("lr,cba,synthetic,"));
    // Session log has one row per chunk.
    assert_eq!(
        data_lines(&dir.path().join("session_lr_cba_synthetic_0.csv")).len(),
        6
    );
}

#[test]
fn simulate_is_deterministic_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        let args = simulate_args(dir);
        assert_ok(&vp360(&args.iter().map(String::as_str).collect::<Vec<_>>()), "simulate");
    }
    for file in ["summary.csv", "session_lr_cba_synthetic_0.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn sweep_fans_out_over_predictors_and_abrs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = simulate_args(dir.path());
    args.push("--set".into());
    args.push("sweep.predictors=[\"lr\",\"oracle\"]".into());
    args.push("--set".into());
    args.push("sweep.abrs=[\"cba\",\"pba\"]".into());
    args.push("--workers".into());
    args.push("2".into());
    let out = vp360(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_ok(&out, "sweep");

    let rows = data_lines(&dir.path().join("summary.csv"));
    assert_eq!(rows.len(), 4);
    // Merged in deterministic combination order regardless of worker count.
    let combos: Vec<String> = rows
        .iter()
        .map(|r| r.split(',').take(2).collect::<Vec<_>>().join("+"))
        .collect();
    assert_eq!(combos, ["lr+cba", "lr+pba", "oracle+cba", "oracle+pba"]);
    // 4 algorithms x 7 metrics in the long-format plot data.
    assert_eq!(data_lines(&dir.path().join("plotdata.csv")).len(), 28);
}

#[test]
fn exit_codes_distinguish_config_data_and_infeasible() {
    // Unknown config key: exit 1.
    let dir = tempfile::tempdir().unwrap();
    let out = vp360(&["simulate", "--set", "nosuch.key=1"]);
    assert_eq!(out.status.code(), Some(1), "config error must exit 1");

    // Missing input data: exit 2.
    let missing = dir.path().join("missing.csv");
    let dest = dir.path().join("out.csv");
    let out = vp360(&[
        "convert-trace",
        missing.to_str().unwrap(),
        dest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "data error must exit 2");

    // Prediction slower than the chunk at every sample rate: exit 3.
    let sf_csv = dir.path().join("sf.csv");
    std::fs::write(&sf_csv, "sf,time_ms\n1,5000\n2,6000\n4,8000\n8,12000\n").unwrap();
    let ratio_csv = dir.path().join("ratio.csv");
    std::fs::write(&ratio_csv, "ratio,time_ms\n16,5000\n64,5000\n144,5000\n").unwrap();
    let out = vp360(&[
        "plan",
        "--sf-csv",
        sf_csv.to_str().unwrap(),
        "--ratio-csv",
        ratio_csv.to_str().unwrap(),
        "--set",
        &format!("output_dir=\"{}\"", dir.path().display()),
    ]);
    assert_eq!(out.status.code(), Some(3), "infeasible plan must exit 3");
}

#[test]
fn plan_writes_the_chosen_overheads() {
    let dir = tempfile::tempdir().unwrap();
    let sf_csv = dir.path().join("sf.csv");
    std::fs::write(&sf_csv, "sf,time_ms\n1,20\n2,30\n4,50\n8,90\n16,170\n").unwrap();
    let ratio_csv = dir.path().join("ratio.csv");
    std::fs::write(&ratio_csv, "ratio,time_ms\n16,40\n64,45\n144,50\n").unwrap();
    let out = vp360(&[
        "plan",
        "--sf-csv",
        sf_csv.to_str().unwrap(),
        "--ratio-csv",
        ratio_csv.to_str().unwrap(),
        "--set",
        &format!("output_dir=\"{}\"", dir.path().display()),
    ]);
    assert_ok(&out, "plan");
    let rows = data_lines(&dir.path().join("plan.csv"));
    assert_eq!(rows.len(), 1);
    let fields: Vec<&str> = rows[0].split(',').collect();
    let sf: f64 = fields[0].parse().unwrap();
    let time: f64 = fields[2].parse().unwrap();
    assert!(sf >= 1.0 && time < 1.0, "sf {sf} time {time}");
}

#[test]
fn meta_train_resume_reproduces_a_straight_run() {
    let straight = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    let run = |dir: &Path, iters: usize, resume: Option<&Path>| {
        let out_dir = format!("output_dir=\"{}\"", dir.display());
        let iters = format!("meta.meta_iterations={iters}");
        let mut args = vec![
            "meta-train",
            "--set",
            &out_dir,
            "--set",
            &iters,
            "--set",
            "seed=9",
        ];
        let ck;
        if let Some(path) = resume {
            ck = path.to_str().unwrap().to_string();
            args.push("--resume");
            args.push(&ck);
        }
        assert_ok(&vp360(&args), "meta-train");
    };
    run(straight.path(), 6, None);
    run(resumed.path(), 3, None);
    run(resumed.path(), 6, Some(&resumed.path().join("meta.ck")));

    assert_eq!(
        std::fs::read(straight.path().join("meta.ck")).unwrap(),
        std::fs::read(resumed.path().join("meta.ck")).unwrap(),
        "resumed checkpoint differs from the straight run"
    );
    // The resumed curve holds only the continued iterations.
    let rows = data_lines(&resumed.path().join("meta_curve.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("4,"));
}

#[test]
fn finetune_records_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = format!("output_dir=\"{}\"", dir.path().display());
    assert_ok(
        &vp360(&[
            "meta-train",
            "--set",
            &out_dir,
            "--set",
            "meta.meta_iterations=4",
        ]),
        "meta-train",
    );
    assert_ok(
        &vp360(&["finetune", "--set", &out_dir, "--set", "finetune.epochs=10"]),
        "finetune",
    );
    assert!(dir.path().join("finetuned.ck").exists());
    let rows = data_lines(&dir.path().join("finetune_curve.csv"));
    assert_eq!(rows.len(), 10);
    let first: f64 = rows[0].split(',').nth(2).unwrap().parse().unwrap();
    let last: f64 = rows[9].split(',').nth(2).unwrap().parse().unwrap();
    assert!(last <= first, "query loss should not regress: {first} -> {last}");
}

#[test]
fn convert_trace_roundtrips_through_the_simulator_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cellular = dir.path().join("cellular.csv");
    std::fs::write(
        &cellular,
        "t_ms,bytes,ms_since_last\n1000,1250000,1000\n2000,2500000,1000\n",
    )
    .unwrap();
    let converted = dir.path().join("trace.csv");
    let out = vp360(&[
        "convert-trace",
        cellular.to_str().unwrap(),
        converted.to_str().unwrap(),
        "--scale",
        "2",
    ]);
    assert_ok(&out, "convert-trace");
    let text = std::fs::read_to_string(&converted).unwrap();
    // 1.25 MB in 1 s is 10 Mbps, doubled by the scale factor.
    assert_eq!(text, "t_s,mbps\n0,20\n1,40\n");
}
