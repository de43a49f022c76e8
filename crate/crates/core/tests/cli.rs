use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "data.slots = 672\ndata.nodes = 3\ndata.channels = 2\ndata.slot_minutes = 60\n\
                    model.hidden = 4\nmodel.order = 1\nmodel.input_len = 4\nmodel.horizon = 4\n\
                    model.memory_width = 4\nmodel.spatial_embed = 3\nmodel.slots = 3\n\
                    train.max_epochs = 2\ntrain.patience = 2\ntrain.stride = 4\n\
                    gradcheck.probes = 8\n";

fn eastnet(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    Command::new(env!("CARGO_BIN_EXE_eastnet"))
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .env("EASTNET_THREADS", "1")
        .output()
        .unwrap()
}

fn out_arg(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn train_then_eval_and_report_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = out_arg(d, "run");
    let train = eastnet(d, &["--out", &run, "train"]);
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    for f in [
        "model.eanw",
        "memory.eamb",
        "metrics.csv",
        "run.json",
        "timings.json",
    ] {
        assert!(d.join("run").join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert!(csv.starts_with("variant,rmse,mae,mape\n"));
    assert!(csv.contains("EAST-Net,") && csv.contains("HA,") && csv.contains("NF,"));

    let ckpt = format!("paths.checkpoint={run}/model.eanw");
    let eval = eastnet(d, &["--out", &out_arg(d, "eval"), "--set", &ckpt, "eval"]);
    assert!(
        eval.status.success(),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let again = std::fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    let east = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("EAST-Net,"))
            .map(str::to_owned)
    };
    assert_eq!(east(&csv), east(&again));

    let report = eastnet(
        d,
        &["--out", &out_arg(d, "charts"), "--set", &ckpt, "report"],
    );
    assert!(
        report.status.success(),
        "{}",
        String::from_utf8_lossy(&report.stderr)
    );
    for f in ["timeseries.svg", "attention.svg"] {
        assert!(d.join("charts").join(f).exists(), "missing {f}");
    }
}

#[test]
fn gradcheck_passes_at_tiny_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = eastnet(
        dir.path(),
        &[
            "--out",
            &out_arg(dir.path(), "g"),
            "gradcheck",
            "--variant",
            "hminet",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = out_arg(d, "x");
    assert_eq!(
        eastnet(d, &["--out", &out, "--set", "model.colour=red", "train"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(eastnet(d, &["--out", &out, "eval"]).status.code(), Some(2));
    let missing = format!("paths.dataset={}", d.join("none.mmt").display());
    assert_eq!(
        eastnet(d, &["--out", &out, "--set", &missing, "train"])
            .status
            .code(),
        Some(3)
    );
    let strict = [
        "--out",
        &out,
        "--set",
        "gradcheck.tolerance=0",
        "gradcheck",
        "--variant",
        "st-net",
    ];
    assert_eq!(eastnet(d, &strict).status.code(), Some(4));
}
