//! End-to-end workflows shared by the command-line front end and the
//! acceptance suite.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{generate_synthetic, read_dataset, Dataset, EventScript, Prepared, Window};
use crate::error::{Error, Result};
use crate::memory::{apply_memory, decode_memory, encode_memory, TransferMode};
use crate::models::{build_variant, gradient_check, Model, VariantKind};
use crate::report::{
    attention_svg, citywide_panels, metrics_csv, pool_attention, timeseries_svg, write_text,
};
use crate::tensor::{GradCheckReport, Tensor};
use crate::train::{
    baseline_ha, baseline_nf, evaluate, metrics, train, Evaluation, Metrics, TrainReport, MAPE_EPS,
};

/// Read `paths.dataset` when set, otherwise generate from the data keys.
pub fn load_or_generate(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.paths.dataset {
        Some(p) => read_dataset(p),
        None => generate_synthetic(&cfg.synthetic_config()?),
    }
}

/// Split, normalize and window a dataset with the configured lengths.
pub fn prepare(cfg: &RunConfig, data: &Dataset) -> Result<Prepared> {
    Prepared::new(data, cfg.model.input_len, cfg.model.horizon)
}

pub fn build_for(cfg: &RunConfig, kind: VariantKind, prep: &Prepared) -> Result<Model> {
    build_variant(cfg.variant_spec(
        kind,
        prep.nodes(),
        prep.channels(),
        prep.covariates.slots_per_day,
    ))
}

pub struct VariantRun {
    pub model: Model,
    pub report: TrainReport,
    pub test: Evaluation,
}

pub fn train_variant(cfg: &RunConfig, kind: VariantKind, prep: &Prepared) -> Result<VariantRun> {
    let mut model = build_for(cfg, kind, prep)?;
    let (report, test) = fit(cfg, &mut model, prep)?;
    Ok(VariantRun {
        model,
        report,
        test,
    })
}

fn fit(cfg: &RunConfig, model: &mut Model, prep: &Prepared) -> Result<(TrainReport, Evaluation)> {
    let report = train(model, prep, &cfg.train_config())?;
    let test = evaluate(model, prep, &prep.test)?;
    Ok((report, test))
}

/// Historical-average and naive-forecast scores on the test windows.
pub fn baseline_rows(prep: &Prepared) -> Result<Vec<(String, Metrics)>> {
    let target = prep.raw_targets(&prep.test)?;
    let ha = baseline_ha(
        &prep.raw,
        &prep.covariates,
        prep.splits.train.clone(),
        &prep.test,
    )?;
    let nf = baseline_nf(&prep.raw, &prep.test)?;
    Ok(vec![
        ("HA".into(), metrics(ha.data(), target.data(), MAPE_EPS)?),
        ("NF".into(), metrics(nf.data(), target.data(), MAPE_EPS)?),
    ])
}

pub struct Ablation {
    pub runs: Vec<VariantRun>,
    pub baselines: Vec<(String, Metrics)>,
}

impl Ablation {
    /// Variant rows in ladder order, then the baselines.
    pub fn rows(&self) -> Vec<(String, Metrics)> {
        self.runs
            .iter()
            .map(|r| (r.report.variant.clone(), r.test.metrics))
            .chain(self.baselines.iter().cloned())
            .collect()
    }

    pub fn run(&self, kind: VariantKind) -> Option<&VariantRun> {
        self.runs.iter().find(|r| r.model.kind() == kind)
    }
}

/// Train every variant on shared data and seed. Variants run in parallel;
/// results come back in ladder order.
pub fn ablate(cfg: &RunConfig, prep: &Prepared) -> Result<Ablation> {
    let runs = VariantKind::ALL
        .par_iter()
        .map(|&kind| train_variant(cfg, kind, prep))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ablation {
        runs,
        baselines: baseline_rows(prep)?,
    })
}

/// Windows whose forecast horizon touches a non-holiday event.
pub fn event_windows(script: &EventScript, windows: &[Window]) -> Vec<bool> {
    windows
        .iter()
        .map(|w| w.targets().any(|t| script.is_event(t)))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AttentionProbe {
    pub event_windows: usize,
    pub calm_windows: usize,
    pub event_mean: Vec<f64>,
    pub calm_mean: Vec<f64>,
    /// L1 distance between the two mean attention vectors.
    pub l1: f64,
}

/// Compare mean attention over marked and unmarked rows of `[W, m]`.
pub fn attention_probe(attention: &Tensor, marked: &[bool]) -> Result<AttentionProbe> {
    if attention.ndim() != 2 || attention.shape()[0] != marked.len() {
        return Err(Error::contract(
            "attention rows and window marks differ in length",
        ));
    }
    let m = attention.shape()[1];
    let mean = |want: bool| -> (usize, Vec<f64>) {
        let rows: Vec<usize> = (0..marked.len()).filter(|&i| marked[i] == want).collect();
        let mut acc = vec![0.0; m];
        for &i in &rows {
            for (j, a) in acc.iter_mut().enumerate() {
                *a += attention.at(&[i, j]);
            }
        }
        let n = rows.len().max(1) as f64;
        (rows.len(), acc.into_iter().map(|v| v / n).collect())
    };
    let (event_windows, event_mean) = mean(true);
    let (calm_windows, calm_mean) = mean(false);
    if event_windows == 0 || calm_windows == 0 {
        return Err(Error::contract(format!(
            "attention probe needs both event ({event_windows}) and calm ({calm_windows}) windows"
        )));
    }
    let l1 = event_mean
        .iter()
        .zip(&calm_mean)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(AttentionProbe {
        event_windows,
        calm_windows,
        event_mean,
        calm_mean,
        l1,
    })
}

/// Gradient check of `kind` at the configured dimensions on a random
/// two-window batch.
pub fn gradcheck_variant(
    cfg: &RunConfig,
    kind: VariantKind,
    nodes: usize,
    channels: usize,
    slots_per_day: usize,
) -> Result<GradCheckReport> {
    let model = build_variant(cfg.variant_spec(kind, nodes, channels, slots_per_day))?;
    let s = *model.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(17));
    let inputs = Tensor::uniform(&[2, s.input_len, s.nodes, s.channels], 1.0, &mut rng);
    let covs = Tensor::uniform(&[2, s.input_len + s.horizon, s.cov_width], 1.0, &mut rng);
    gradient_check(
        &model,
        &inputs,
        &covs,
        cfg.gradcheck.probes,
        cfg.gradcheck.step,
        cfg.seed,
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferOutcome {
    pub mode: String,
    pub test: Metrics,
    pub best_epoch: usize,
    /// Whether the memory snapshot tensors are unchanged after training.
    pub memory_unchanged: bool,
}

/// Train a fresh model of the source's kind on `prep` starting from the
/// source memory, once frozen and once retrained.
pub fn transfer(cfg: &RunConfig, source: &Model, prep: &Prepared) -> Result<Vec<TransferOutcome>> {
    let bank = source.memory_bank().ok_or_else(|| {
        Error::Config(format!("{} has no memory bank to transfer", source.kind()))
    })?;
    let bytes = encode_memory(source.store(), bank);
    [TransferMode::Freeze, TransferMode::Retrain]
        .into_iter()
        .map(|mode| {
            let mut model = build_for(cfg, source.kind(), prep)?;
            let target_bank = model.memory_bank().cloned().expect("same kind has memory");
            apply_memory(
                model.store_mut(),
                &target_bank,
                decode_memory(&bytes)?,
                mode,
            )?;
            let before: Vec<Tensor> = target_bank
                .snapshot_ids()
                .iter()
                .map(|&id| model.store().value(id).clone())
                .collect();
            let (report, test) = fit(cfg, &mut model, prep)?;
            let memory_unchanged = target_bank
                .snapshot_ids()
                .iter()
                .zip(&before)
                .all(|(&id, b)| model.store().value(id) == b);
            Ok(TransferOutcome {
                mode: format!("{mode:?}").to_lowercase(),
                test: test.metrics,
                best_epoch: report.best_epoch,
                memory_unchanged,
            })
        })
        .collect()
}

fn channel_names(channels: usize) -> Vec<String> {
    (0..channels)
        .map(|c| {
            format!(
                "mode {} {}",
                c / 2,
                if c % 2 == 0 { "demand" } else { "supply" }
            )
        })
        .collect()
}

/// Write `timeseries.svg` and, for memory variants, `attention.svg`.
/// Returns the written paths and the attention probe when one applies.
pub fn write_charts(
    cfg: &RunConfig,
    model: &Model,
    prep: &Prepared,
    eval: &Evaluation,
    script: Option<&EventScript>,
    out: &Path,
) -> Result<(Vec<PathBuf>, Option<AttentionProbe>)> {
    let truth = prep.raw_targets(&prep.test)?;
    let panels = citywide_panels(
        &eval.predictions,
        &truth,
        cfg.report.step,
        &channel_names(prep.channels()),
    )?;
    let marks = script
        .map(|s| event_windows(s, &prep.test))
        .unwrap_or_default();
    let spans = spans_of(&marks);
    let title = format!(
        "{}: citywide test series, step {}",
        model.kind(),
        cfg.report.step + 1
    );
    let ts_path = out.join("timeseries.svg");
    write_text(&ts_path, &timeseries_svg(&title, &panels, &spans))?;
    let mut written = vec![ts_path];
    let mut probe = None;
    if let Some(att) = &eval.attention {
        let (pooled, ranges) = pool_attention(att, cfg.report.max_columns)?;
        let col_marks: Vec<bool> = if marks.is_empty() {
            Vec::new()
        } else {
            ranges
                .iter()
                .map(|r| marks[r.clone()].iter().any(|&b| b))
                .collect()
        };
        let path = out.join("attention.svg");
        let title = format!("{}: memory attention over test windows", model.kind());
        write_text(&path, &attention_svg(&title, &pooled, &col_marks)?)?;
        written.push(path);
        if marks.iter().any(|&b| b) && marks.iter().any(|&b| !b) {
            probe = Some(attention_probe(att, &marks)?);
        }
    }
    Ok((written, probe))
}

fn spans_of(marks: &[bool]) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &b) in marks.iter().chain(std::iter::once(&false)).enumerate() {
        match (b, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    spans
}

/// Deterministic record of a run; wall-clock times live in a separate file.
#[derive(Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub seed: u64,
    pub data_seed: u64,
    pub reports: Vec<&'a TrainReport>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Write `metrics.csv`, `run.json` and `timings.json` into `out`.
pub fn write_run_files(
    out: &Path,
    rows: &[(String, Metrics)],
    record: &RunRecord,
    csv_name: &str,
) -> Result<()> {
    write_text(&out.join(csv_name), &metrics_csv(rows))?;
    crate::report::write_json(&out.join("run.json"), record)?;
    let timings: BTreeMap<&str, f64> = record
        .reports
        .iter()
        .map(|r| (r.variant.as_str(), r.seconds))
        .collect();
    crate::report::write_json(&out.join("timings.json"), &timings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_cover_marked_runs() {
        assert_eq!(
            spans_of(&[false, true, true, false, true]),
            vec![1..3, 4..5]
        );
        assert!(spans_of(&[]).is_empty());
    }

    #[test]
    fn probe_distances() {
        let att = Tensor::new(&[4, 2], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.5, 0.5]).unwrap();
        let p = attention_probe(&att, &[false, false, true, true]).unwrap();
        assert_eq!(p.event_mean, vec![0.25, 0.75]);
        assert_eq!(p.calm_mean, vec![1.0, 0.0]);
        assert_eq!(p.l1, 1.5);
        assert!(attention_probe(&att, &[false; 4]).is_err());
    }
}
