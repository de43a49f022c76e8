//! `key = value` run configuration shared by every CLI subcommand.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are rejected.
//! Scripted events use `event.<name> = <kind> start=.. duration=.. ...`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime};
use serde::Serialize;

use crate::data::{standard_script, Event, SyntheticConfig, TemporalCovariates};
use crate::error::{Error, Result};
use crate::models::{VariantKind, VariantSpec};
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptChoice {
    Standard,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataConfig {
    pub seed: u64,
    pub slots: usize,
    pub nodes: usize,
    pub channels: usize,
    pub slot_minutes: usize,
    pub noise: f64,
    pub start: NaiveDateTime,
    pub script: ScriptChoice,
    /// Extra events keyed by name, rendered in event text form.
    pub events: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub variant: VariantKind,
    pub input_len: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub order: usize,
    pub layers: usize,
    pub slots: usize,
    pub memory_width: usize,
    pub spatial_embed: usize,
    pub modal_embed: usize,
    pub cov_embed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PathConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub source: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportConfig {
    pub max_columns: usize,
    /// Horizon step plotted in the time-series chart.
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    /// Seeds model initialization and batch shuffling.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: PathConfig,
    pub gradcheck: GradcheckConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let std = SyntheticConfig::standard(0);
        let spec = VariantSpec::new(VariantKind::EastNet, 1, 1, 1);
        RunConfig {
            seed: 0,
            data: DataConfig {
                seed: 0,
                slots: std.slots,
                nodes: std.nodes,
                channels: std.channels,
                slot_minutes: std.slot_minutes,
                noise: std.noise,
                start: std.start,
                script: ScriptChoice::Standard,
                events: BTreeMap::new(),
            },
            model: ModelConfig {
                variant: spec.kind,
                input_len: spec.input_len,
                horizon: spec.horizon,
                hidden: spec.hidden,
                order: spec.order,
                layers: spec.layers,
                slots: spec.slots,
                memory_width: spec.memory_width,
                spatial_embed: spec.spatial_embed,
                modal_embed: spec.modal_embed,
                cov_embed: spec.cov_embed,
            },
            train: TrainConfig::default(),
            paths: PathConfig::default(),
            gradcheck: GradcheckConfig {
                probes: 64,
                step: 1e-5,
                tolerance: 1e-4,
            },
            report: ReportConfig {
                max_columns: 400,
                step: 0,
            },
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_start(value: &str) -> Result<NaiveDateTime> {
    if let Ok(dt) = NaiveDateTime::parse_from_str(value, "%Y-%m-%dT%H:%M") {
        return Ok(dt);
    }
    NaiveDate::parse_from_str(value, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .ok_or_else(|| {
            Error::Config(format!(
                "invalid start '{value}', expected YYYY-MM-DD[THH:MM]"
            ))
        })
}

impl RunConfig {
    /// Parse config text on top of the defaults. Repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}'",
                    n + 1
                )));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.data;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "data.seed" => d.seed = parse(key, value)?,
            "data.slots" => d.slots = parse(key, value)?,
            "data.nodes" => d.nodes = parse(key, value)?,
            "data.channels" => d.channels = parse(key, value)?,
            "data.slot_minutes" => d.slot_minutes = parse(key, value)?,
            "data.noise" => d.noise = parse(key, value)?,
            "data.start" => d.start = parse_start(value)?,
            "data.script" => {
                d.script = match value {
                    "standard" => ScriptChoice::Standard,
                    "none" => ScriptChoice::None,
                    _ => {
                        return Err(Error::Config(format!(
                            "data.script must be standard or none, got '{value}'"
                        )))
                    }
                }
            }
            "model.variant" => m.variant = value.parse()?,
            "model.input_len" => m.input_len = parse(key, value)?,
            "model.horizon" => m.horizon = parse(key, value)?,
            "model.hidden" => m.hidden = parse(key, value)?,
            "model.order" => m.order = parse(key, value)?,
            "model.layers" => m.layers = parse(key, value)?,
            "model.slots" => m.slots = parse(key, value)?,
            "model.memory_width" => m.memory_width = parse(key, value)?,
            "model.spatial_embed" => m.spatial_embed = parse(key, value)?,
            "model.modal_embed" => m.modal_embed = parse(key, value)?,
            "model.cov_embed" => m.cov_embed = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.patience" => t.patience = parse(key, value)?,
            "train.stride" => t.train_stride = parse(key, value)?,
            "paths.dataset" => self.paths.dataset = Some(value.into()),
            "paths.checkpoint" => self.paths.checkpoint = Some(value.into()),
            "paths.source" => self.paths.source = Some(value.into()),
            "gradcheck.probes" => self.gradcheck.probes = parse(key, value)?,
            "gradcheck.step" => self.gradcheck.step = parse(key, value)?,
            "gradcheck.tolerance" => self.gradcheck.tolerance = parse(key, value)?,
            "report.max_columns" => self.report.max_columns = parse(key, value)?,
            "report.step" => self.report.step = parse(key, value)?,
            _ => match key.strip_prefix("event.") {
                Some(name) if !name.is_empty() => {
                    let event: Event = value.parse()?;
                    d.events.insert(name.to_string(), event.to_string());
                }
                _ => return Err(Error::Config(format!("unknown key '{key}'"))),
            },
        }
        Ok(())
    }

    /// Generator settings, with the standard script (if chosen) followed by
    /// configured events in name order.
    pub fn synthetic_config(&self) -> Result<SyntheticConfig> {
        let d = &self.data;
        if d.slot_minutes == 0 || 1440 % d.slot_minutes != 0 {
            return Err(Error::Config(format!(
                "data.slot_minutes {} must divide a day",
                d.slot_minutes
            )));
        }
        let mut script = match d.script {
            ScriptChoice::Standard => standard_script(d.slots, d.channels, d.slot_minutes),
            ScriptChoice::None => Default::default(),
        };
        for text in d.events.values() {
            script.events.push(text.parse()?);
        }
        Ok(SyntheticConfig {
            seed: d.seed,
            slots: d.slots,
            nodes: d.nodes,
            channels: d.channels,
            slot_minutes: d.slot_minutes,
            start: d.start,
            noise: d.noise,
            script,
        })
    }

    /// Architecture for `kind` on data with the given dimensions.
    pub fn variant_spec(
        &self,
        kind: VariantKind,
        nodes: usize,
        channels: usize,
        slots_per_day: usize,
    ) -> VariantSpec {
        let m = &self.model;
        VariantSpec {
            kind,
            input_len: m.input_len,
            horizon: m.horizon,
            hidden: m.hidden,
            order: m.order,
            layers: m.layers,
            slots: m.slots,
            memory_width: m.memory_width,
            spatial_embed: m.spatial_embed,
            modal_embed: m.modal_embed,
            cov_embed: m.cov_embed,
            seed: self.seed,
            ..VariantSpec::new(
                kind,
                nodes,
                channels,
                TemporalCovariates::width_for(slots_per_day),
            )
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// A path key that the subcommand cannot run without.
    pub fn require_path<'a>(&self, key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
