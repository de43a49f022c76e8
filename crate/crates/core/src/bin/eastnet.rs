use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use eastnet::config::RunConfig;
use eastnet::data::{write_dataset, Prepared};
use eastnet::experiment::{
    ablate, baseline_rows, gradcheck_variant, load_or_generate, prepare, train_variant, transfer,
    write_charts, write_run_files, RunRecord,
};
use eastnet::memory::export_memory;
use eastnet::models::{load_checkpoint, save_checkpoint, Model, VariantKind};
use eastnet::report::{metrics_csv, write_json, write_text};
use eastnet::train::{evaluate, Metrics};
use eastnet::{Error, Result};

/// Event-aware multimodal mobility nowcasting experiments.
#[derive(Parser)]
#[command(name = "eastnet", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run seed (model initialization and shuffling).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as an MMT1 file.
    Generate,
    /// Train `model.variant`; writes a checkpoint and metrics.
    Train,
    /// Score `paths.checkpoint` on the test split.
    Eval,
    /// Compare backpropagated and finite-difference gradients.
    Gradcheck {
        /// Variant name, or `all`.
        #[arg(long, default_value = "all")]
        variant: String,
    },
    /// Reuse the memory of `paths.source` in freeze and retrain modes.
    Transfer,
    /// Draw forecast and attention charts for `paths.checkpoint`.
    Report,
    /// Train all five variants with shared data and seed, plus baselines.
    Ablate,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("EASTNET_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "EASTNET_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &common.set {
        cfg.apply_override(s)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_path();
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::Generate => generate(&cfg, out),
        Command::Train => train_cmd(&cfg, out),
        Command::Eval => eval_cmd(&cfg, out),
        Command::Gradcheck { variant } => gradcheck_cmd(&cfg, &variant),
        Command::Transfer => transfer_cmd(&cfg, out),
        Command::Report => report_cmd(&cfg, out),
        Command::Ablate => ablate_cmd(&cfg, out),
    }
}

fn record<'a>(
    command: &'a str,
    cfg: &'a RunConfig,
    reports: Vec<&'a eastnet::train::TrainReport>,
) -> RunRecord<'a> {
    RunRecord {
        command,
        config: cfg,
        seed: cfg.seed,
        data_seed: cfg.data.seed,
        reports,
        extra: BTreeMap::new(),
    }
}

fn print_rows(rows: &[(String, Metrics)]) {
    print!("{}", metrics_csv(rows));
}

fn generate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_or_generate(cfg)?;
    let path = out.join("dataset.mmt");
    write_dataset(&path, &data)?;
    println!(
        "wrote {} ({} slots, {} regions, {} channels)",
        path.display(),
        data.tensor.slots(),
        data.tensor.nodes(),
        data.tensor.channels()
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_or_generate(cfg)?;
    let prep = prepare(cfg, &data)?;
    let run = train_variant(cfg, cfg.model.variant, &prep)?;
    let ckpt = out.join("model.eanw");
    save_checkpoint(&run.model, &ckpt)?;
    if let Some(bank) = run.model.memory_bank() {
        export_memory(run.model.store(), bank, &out.join("memory.eamb"))?;
    }
    let mut rows = vec![(run.report.variant.clone(), run.test.metrics)];
    rows.extend(baseline_rows(&prep)?);
    write_run_files(
        out,
        &rows,
        &record("train", cfg, vec![&run.report]),
        "metrics.csv",
    )?;
    print_rows(&rows);
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

/// Load the checkpoint and the data it was trained on, windowed with the
/// checkpoint's own lengths.
fn checkpoint_and_data(cfg: &RunConfig) -> Result<(Model, Prepared)> {
    let path = cfg.require_path("paths.checkpoint", &cfg.paths.checkpoint)?;
    let model = load_checkpoint(path)?;
    let data = load_or_generate(cfg)?;
    let s = model.spec();
    let prep = Prepared::new(&data, s.input_len, s.horizon)?;
    if (prep.nodes(), prep.channels(), prep.covariates.width())
        != (s.nodes, s.channels, s.cov_width)
    {
        return Err(Error::Config(format!(
            "checkpoint expects {} regions, {} channels and {} calendar features; data has {}, {} and {}",
            s.nodes,
            s.channels,
            s.cov_width,
            prep.nodes(),
            prep.channels(),
            prep.covariates.width()
        )));
    }
    Ok((model, prep))
}

fn eval_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, prep) = checkpoint_and_data(cfg)?;
    let eval = evaluate(&model, &prep, &prep.test)?;
    let rows = vec![(model.kind().name().to_string(), eval.metrics)];
    write_text(&out.join("metrics.csv"), &metrics_csv(&rows))?;
    write_json(
        &out.join("eval.json"),
        &json!({ "variant": model.kind().name(), "test": eval.metrics, "test_per_horizon": eval.per_horizon }),
    )?;
    print_rows(&rows);
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, which: &str) -> Result<()> {
    let kinds: Vec<VariantKind> = if which.eq_ignore_ascii_case("all") {
        VariantKind::ALL.to_vec()
    } else {
        vec![which.parse()?]
    };
    let spd = 1440 / cfg.data.slot_minutes.max(1);
    let mut worst = 0.0f64;
    for kind in kinds {
        let r = gradcheck_variant(cfg, kind, cfg.data.nodes, cfg.data.channels, spd)?;
        println!(
            "{kind}: max relative error {:.3e} over {} probes",
            r.max_rel_error, r.probes
        );
        worst = worst.max(r.max_rel_error);
    }
    if !(worst <= cfg.gradcheck.tolerance) {
        return Err(Error::Numeric(format!(
            "gradient check failed: {worst:.3e} exceeds {:.1e}",
            cfg.gradcheck.tolerance
        )));
    }
    Ok(())
}

fn transfer_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let source = load_checkpoint(cfg.require_path("paths.source", &cfg.paths.source)?)?;
    let data = load_or_generate(cfg)?;
    let prep = prepare(cfg, &data)?;
    let outcomes = transfer(cfg, &source, &prep)?;
    let rows: Vec<(String, Metrics)> = outcomes
        .iter()
        .map(|o| (o.mode.clone(), o.test))
        .collect();
    write_text(&out.join("transfer.csv"), &metrics_csv(&rows))?;
    let mut rec = record("transfer", cfg, Vec::new());
    rec.extra
        .insert("source_variant".into(), json!(source.kind().name()));
    rec.extra.insert("outcomes".into(), json!(outcomes));
    write_json(&out.join("run.json"), &rec)?;
    print_rows(&rows);
    Ok(())
}

fn report_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, prep) = checkpoint_and_data(cfg)?;
    let eval = evaluate(&model, &prep, &prep.test)?;
    let script = cfg
        .paths
        .dataset
        .is_none()
        .then(|| cfg.synthetic_config())
        .transpose()?;
    let (files, probe) = write_charts(
        cfg,
        &model,
        &prep,
        &eval,
        script.as_ref().map(|s| &s.script),
        out,
    )?;
    for f in files {
        println!("wrote {}", f.display());
    }
    if let Some(p) = probe {
        println!(
            "attention L1 distance, event vs calm windows: {:.4} ({} event, {} calm)",
            p.l1, p.event_windows, p.calm_windows
        );
        write_json(&out.join("attention.json"), &p)?;
    }
    Ok(())
}

fn ablate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_or_generate(cfg)?;
    let prep = prepare(cfg, &data)?;
    let result = ablate(cfg, &prep)?;
    let rows = result.rows();
    let reports = result.runs.iter().map(|r| &r.report).collect();
    let mut rec = record("ablate", cfg, reports);
    if let Some(east) = result.run(VariantKind::EastNet) {
        let script = cfg
            .paths
            .dataset
            .is_none()
            .then(|| cfg.synthetic_config())
            .transpose()?;
        let (_, probe) = write_charts(
            cfg,
            &east.model,
            &prep,
            &east.test,
            script.as_ref().map(|s| &s.script),
            out,
        )?;
        if let Some(p) = probe {
            rec.extra.insert("attention_probe".into(), json!(p));
        }
    }
    write_run_files(out, &rows, &rec, "ablation.csv")?;
    print_rows(&rows);
    Ok(())
}
