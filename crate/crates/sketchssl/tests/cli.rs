mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use sketchssl::cli::{run, EXIT_RUNTIME, EXIT_USAGE};
use sketchssl::metrics::{read_log, without_wall_time};
use sketchssl::run_dir::RunState;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sketchssl"));
    c.env("RUST_LOG", "warn");
    c
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("sketchssl").chain(args.iter().copied()))
}

fn tiny(cmd: &str, out: &Path, extra: &[&str]) -> i32 {
    let conf = common::tiny_conf();
    let mut args = vec![
        cmd,
        "--config",
        conf.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cli(&args)
}

fn state(dir: &Path) -> RunState {
    serde_json::from_str(&fs::read_to_string(dir.join("state.json")).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(
        bin().arg("frobnicate").status().unwrap().code(),
        Some(EXIT_USAGE)
    );
    assert_eq!(
        bin()
            .args(["train", "--bogus-flag"])
            .status()
            .unwrap()
            .code(),
        Some(EXIT_USAGE)
    );
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        tiny("pretrain", &out, &["--set", "no_such_key=1"]),
        EXIT_USAGE
    );
    assert_eq!(
        tiny("pretrain", &out, &["--set", "hidden=lots"]),
        EXIT_USAGE
    );
    // training needs pre-trained checkpoints
    assert_eq!(tiny("train", &out, &[]), EXIT_USAGE);
    assert_eq!(cli(&["pretrain"]), EXIT_USAGE);
    let status = bin()
        .args(["gen-data", "--out"])
        .arg(dir.path().join("d"))
        .env("SKETCHSSL_HIDDEN", "x")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_USAGE));
}

#[test]
fn gen_data_prints_corpus_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let conf = common::tiny_conf();
    let out = bin()
        .args(["gen-data", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("N_L=12") && text.contains("N_U=12") && text.contains("offset_std="),
        "{text}"
    );
    // a second run refuses to overwrite without --force
    assert_eq!(tiny("gen-data", dir.path(), &[]), EXIT_USAGE);
    assert_eq!(tiny("gen-data", dir.path(), &["--force"]), 0);
}

#[test]
fn plotting_an_empty_log_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("metrics.ndjson"), "").unwrap();
    assert_eq!(
        cli(&["plot", "--out", dir.path().to_str().unwrap()]),
        EXIT_RUNTIME
    );
    assert_eq!(
        cli(&[
            "plot",
            "--out",
            dir.path().join("missing").to_str().unwrap()
        ]),
        EXIT_RUNTIME
    );
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(tiny("pretrain", d, &[]), 0);
    }
    assert_eq!(tiny("train", &a, &["--cycles", "1"]), 0);
    assert_eq!(state(&a).cycle, 1);
    assert_eq!(tiny("train", &a, &["--cycles", "3"]), 0);
    assert_eq!(tiny("train", &b, &["--cycles", "3"]), 0);
    let (sa, sb) = (state(&a), state(&b));
    assert_eq!(sa, sb);
    assert_eq!(sa.cycle, 3);
    assert_eq!((sa.ret_steps, sa.disc_steps, sa.gen_steps), (6, 6, 6));
    let la = without_wall_time(&read_log(&a.join("metrics.ndjson")).unwrap());
    let lb = without_wall_time(&read_log(&b.join("metrics.ndjson")).unwrap());
    assert_eq!(la, lb);
    for rel in [
        &sa.latest.generator,
        &sa.latest.retrieval,
        sa.latest.discriminator.as_ref().unwrap(),
    ] {
        assert_eq!(
            fs::read(a.join(rel)).unwrap(),
            fs::read(b.join(rel)).unwrap(),
            "{rel}"
        );
    }
    // rerunning at the target cycle is a no-op
    assert_eq!(tiny("train", &a, &["--cycles", "3"]), 0);
    assert_eq!(state(&a), sa);
}

#[test]
fn interrupted_cycle_is_discarded_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(tiny("pretrain", d, &[]), 0);
    }
    assert_eq!(tiny("train", &a, &["--cycles", "1"]), 0);
    // simulate a crash part-way through cycle 2: stray log lines after the checkpoint
    let mut log = fs::read_to_string(a.join("metrics.ndjson")).unwrap();
    log.push_str(
        "{\"phase\":\"retrieval\",\"step\":99,\"cycle\":1,\"values\":{},\"wall_time\":0.0}\n",
    );
    fs::write(a.join("metrics.ndjson"), log).unwrap();
    assert_eq!(tiny("train", &a, &["--cycles", "2"]), 0);
    assert_eq!(tiny("train", &b, &["--cycles", "2"]), 0);
    let la = without_wall_time(&read_log(&a.join("metrics.ndjson")).unwrap());
    let lb = without_wall_time(&read_log(&b.join("metrics.ndjson")).unwrap());
    assert_eq!(la, lb);
    let csv = |d: &Path| {
        fs::read_to_string(d.join("metrics.csv"))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(csv(&a), csv(&b));
}

#[test]
fn run_layout_eval_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(tiny("pretrain", &out, &["--seed", "4"]), 0);
    for f in [
        "config.txt",
        "version.txt",
        "state.json",
        "metrics.ndjson",
        "metrics.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let s = state(&out);
    assert_eq!(
        s.latest.generator,
        format!("gen/step-{}/model.ckpt", s.pretrain_gen_steps)
    );
    assert_eq!(s.latest.teacher, "teacher/step-3/model.ckpt");
    assert!(fs::read_to_string(out.join("config.txt"))
        .unwrap()
        .contains("seed = 4"));
    // eval works before joint training, without a consistency table
    assert_eq!(tiny("eval", &out, &[]), 0);
    assert!(out.join("eval.json").exists() && !out.join("consistency.csv").exists());
    // changing a pre-training setting of an existing run is refused
    assert_eq!(tiny("train", &out, &["--set", "hidden=6"]), EXIT_USAGE);
    assert_eq!(
        tiny(
            "train",
            &out,
            &[
                "--no-iw",
                "--set",
                "checkpoint_every=2",
                "--set",
                "keep_checkpoints=1"
            ]
        ),
        0
    );
    assert!(fs::read_to_string(out.join("config.txt"))
        .unwrap()
        .contains("iw = false"));
    // only the newest training checkpoint is kept next to the pre-training one
    let steps = |m: &str| fs::read_dir(out.join(m)).unwrap().count();
    assert_eq!(steps("gen"), 2);
    assert_eq!(steps("disc"), 1);
    assert_eq!(
        tiny("train", &out, &["--cycles", "4", "--no-tr"]),
        EXIT_USAGE
    );
    assert_eq!(tiny("eval", &out, &[]), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert!(report["retrieval"]["acc1"].is_number());
    assert_eq!(report["consistency"]["pairs"], 12);
    assert!(fs::read_to_string(out.join("consistency.csv"))
        .unwrap()
        .starts_with("bin,lo,hi,count,mean_arp"));
    assert_eq!(cli(&["plot", "--out", out.to_str().unwrap()]), 0);
    let svg = fs::read_to_string(out.join("plots/retrieval_total.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn version_stamp_is_recorded() {
    let out = bin().arg("--version").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains(env!("CARGO_PKG_VERSION")));
    assert!(sketchssl::version_stamp().starts_with("sketchssl "));
}
