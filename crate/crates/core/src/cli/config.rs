//! Run settings and the `key = value` config file.
//!
//! ```text
//! # comments run to end of line
//! seed = 1, 2, 3
//! [loss]
//! beta = 10
//! [benchmark]
//! classes = 10
//! ```
//!
//! A key may appear at top level or under its own section. Layering is
//! config file, then `KRD_SEED` / `KRD_OUT`, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KrdError, Result};
use crate::losses::LrdMode;
use crate::trainer::{BenchmarkSpec, GroupRule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GenData,
    Pretrain,
    Distill,
    Evaluate,
    Ablate,
    Sweep,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Distill => "distill",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    Alpha,
    Tau,
    ProjectorLayers,
}

impl SweepParam {
    pub const ALLOWED: &'static str = "beta, alpha, tau, projector_layers";

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Alpha => "alpha",
            SweepParam::Tau => "tau",
            SweepParam::ProjectorLayers => "projector_layers",
        }
    }

    pub fn default_value(self) -> f64 {
        let d = TrainConfig::default();
        match self {
            SweepParam::Beta => d.loss.beta,
            SweepParam::Alpha => d.loss.alpha,
            SweepParam::Tau => d.loss.tau,
            SweepParam::ProjectorLayers => d.projector_layers as f64,
        }
    }

    /// Rejects values the parameter cannot take, before anything runs.
    pub fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            SweepParam::Beta => v >= 0.0 && v.is_finite(),
            SweepParam::Alpha => v > 0.0 && v < 1.0,
            SweepParam::Tau => v > 0.0 && v.is_finite(),
            SweepParam::ProjectorLayers => v >= 0.0 && v.fract() == 0.0 && v <= 64.0,
        };
        if ok {
            Ok(())
        } else {
            let range = match self {
                SweepParam::Beta => "a finite value >= 0",
                SweepParam::Alpha => "a value in (0, 1)",
                SweepParam::Tau => "a finite value > 0",
                SweepParam::ProjectorLayers => "a whole number of layers",
            };
            Err(KrdError::invalid(format!(
                "sweep value {v} for {} must be {range}",
                self.name()
            )))
        }
    }

    pub fn apply(self, config: &mut TrainConfig, v: f64) {
        match self {
            SweepParam::Beta => config.loss.beta = v,
            SweepParam::Alpha => config.loss.alpha = v,
            SweepParam::Tau => config.loss.tau = v,
            SweepParam::ProjectorLayers => config.projector_layers = v as usize,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = KrdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepParam::Beta),
            "alpha" => Ok(SweepParam::Alpha),
            "tau" => Ok(SweepParam::Tau),
            "projector_layers" => Ok(SweepParam::ProjectorLayers),
            other => Err(KrdError::invalid(format!(
                "unknown sweep parameter `{other}` (allowed: {})",
                SweepParam::ALLOWED
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

/// Everything a command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub command: Command,
    pub data: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    /// Model evaluated by `evaluate`; falls back to `teacher`.
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub parallel: usize,
    pub per_class: bool,
    pub train: TrainConfig,
    pub benchmark: BenchmarkSpec,
    pub sweep_param: Option<SweepParam>,
    pub sweep_values: Vec<f64>,
}

impl RunSpec {
    pub fn new(command: Command) -> Self {
        RunSpec {
            command,
            data: None,
            teacher: None,
            model: None,
            out: PathBuf::from("runs"),
            seeds: vec![1],
            parallel: 1,
            per_class: false,
            train: TrainConfig::default(),
            benchmark: BenchmarkSpec::default(),
            sweep_param: None,
            sweep_values: Vec::new(),
        }
    }

    pub fn sweep(&self) -> Result<SweepSpec> {
        let param = self.sweep_param.ok_or_else(|| KrdError::Config {
            key: "param".into(),
            line: None,
            message: format!("sweep needs a parameter (one of {})", SweepParam::ALLOWED),
        })?;
        if self.sweep_values.is_empty() {
            return Err(KrdError::Config {
                key: "values".into(),
                line: None,
                message: "sweep needs at least one value".into(),
            });
        }
        for &v in &self.sweep_values {
            param.check(v)?;
        }
        Ok(SweepSpec {
            param,
            values: self.sweep_values.clone(),
        })
    }

    /// Cross-field checks after all layers are merged.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(KrdError::Config {
                key: "seed".into(),
                line: None,
                message: "at least one seed is required".into(),
            });
        }
        if self.parallel == 0 {
            return Err(KrdError::Config {
                key: "parallel".into(),
                line: None,
                message: "must be at least 1".into(),
            });
        }
        for p in [&self.data, &self.teacher, &self.model].into_iter().flatten() {
            if !p.exists() {
                return Err(KrdError::invalid(format!("{} does not exist", p.display())));
            }
        }
        if self.command == Command::Sweep {
            self.sweep()?;
        }
        Ok(())
    }
}

const SECTIONS: &[&str] = &["run", "benchmark", "train", "loss", "sweep"];

fn home_section(key: &str) -> Option<&'static str> {
    Some(match key {
        "data" | "teacher" | "model" | "out" | "seed" | "parallel" | "per_class" => "run",
        "classes" | "dim" | "n_max" | "rho" | "eval_per_class" | "spread" | "sigma" => "benchmark",
        "epochs" | "teacher_epochs" | "batch_size" | "base_lr" | "momentum" | "weight_decay"
        | "teacher_hidden" | "student_hidden" | "projector_layers" | "variant" | "ideal_steps"
        | "ideal_step_size" | "group_rule" | "head_above" | "tail_below" | "force_unit_weights"
        | "bypass_rectification" => "train",
        "beta" | "alpha" | "tau" | "tau_squared_scaling" | "lrd_mode" => "loss",
        "param" | "values" => "sweep",
        _ => return None,
    })
}

fn parse_scalar<T: FromStr>(raw: &str, what: &str) -> std::result::Result<T, String> {
    raw.parse()
        .map_err(|_| format!("expected {what}, got `{raw}`"))
}

fn parse_list<T: FromStr>(raw: &str, what: &str) -> std::result::Result<Vec<T>, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_scalar(s, what))
        .collect()
}

fn parse_bool(raw: &str) -> std::result::Result<bool, String> {
    match raw {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{raw}`")),
    }
}

fn unquote(raw: &str) -> &str {
    raw.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(raw)
}

/// Assigns one key. The error string is the message only; callers attach
/// the key and line.
pub fn set_key(spec: &mut RunSpec, key: &str, raw: &str) -> std::result::Result<(), String> {
    let raw = unquote(raw.trim());
    let t = &mut spec.train;
    let b = &mut spec.benchmark;
    match key {
        "data" => spec.data = Some(PathBuf::from(raw)),
        "teacher" => spec.teacher = Some(PathBuf::from(raw)),
        "model" => spec.model = Some(PathBuf::from(raw)),
        "out" => spec.out = PathBuf::from(raw),
        "seed" => spec.seeds = parse_list(raw, "a list of non-negative integers")?,
        "parallel" => spec.parallel = parse_scalar(raw, "a positive integer")?,
        "per_class" => spec.per_class = parse_bool(raw)?,
        "classes" => b.classes = parse_scalar(raw, "a positive integer")?,
        "dim" => b.dim = parse_scalar(raw, "a positive integer")?,
        "n_max" => b.n_max = parse_scalar(raw, "a positive integer")?,
        "rho" => b.rho = parse_scalar(raw, "a number")?,
        "eval_per_class" => b.eval_per_class = parse_scalar(raw, "a positive integer")?,
        "spread" => b.spread = parse_scalar(raw, "a number")?,
        "sigma" => b.sigma = parse_scalar(raw, "a number")?,
        "epochs" => t.epochs = parse_scalar(raw, "a positive integer")?,
        "teacher_epochs" => t.teacher_epochs = parse_scalar(raw, "a positive integer")?,
        "batch_size" => t.batch_size = parse_scalar(raw, "a positive integer")?,
        "base_lr" => t.base_lr = parse_scalar(raw, "a number")?,
        "momentum" => t.momentum = parse_scalar(raw, "a number")?,
        "weight_decay" => t.weight_decay = parse_scalar(raw, "a number")?,
        "teacher_hidden" => t.teacher_hidden = parse_list(raw, "a list of layer widths")?,
        "student_hidden" => t.student_hidden = parse_list(raw, "a list of layer widths")?,
        "projector_layers" => t.projector_layers = parse_scalar(raw, "a non-negative integer")?,
        "variant" => t.variant = raw.parse().map_err(|e: KrdError| e.to_string())?,
        "ideal_steps" => t.ideal_steps = parse_scalar(raw, "a non-negative integer")?,
        "ideal_step_size" => t.ideal_step_size = parse_scalar(raw, "a number")?,
        "group_rule" => {
            t.group_rule = match raw {
                "thirds" => GroupRule::Thirds,
                "thresholds" => match t.group_rule {
                    GroupRule::Thresholds { .. } => t.group_rule.clone(),
                    GroupRule::Thirds => GroupRule::Thresholds {
                        head_above: 100,
                        tail_below: 20,
                    },
                },
                _ => return Err(format!("expected `thirds` or `thresholds`, got `{raw}`")),
            }
        }
        "head_above" | "tail_below" => {
            let v: usize = parse_scalar(raw, "a non-negative integer")?;
            let (mut h, mut l) = match t.group_rule {
                GroupRule::Thresholds {
                    head_above,
                    tail_below,
                } => (head_above, tail_below),
                GroupRule::Thirds => (100, 20),
            };
            if key == "head_above" {
                h = v;
            } else {
                l = v;
            }
            t.group_rule = GroupRule::Thresholds {
                head_above: h,
                tail_below: l,
            };
        }
        "force_unit_weights" => t.force_unit_weights = parse_bool(raw)?,
        "bypass_rectification" => t.bypass_rectification = parse_bool(raw)?,
        "beta" => t.loss.beta = parse_scalar(raw, "a number")?,
        "alpha" => t.loss.alpha = parse_scalar(raw, "a number")?,
        "tau" => t.loss.tau = parse_scalar(raw, "a number")?,
        "tau_squared_scaling" => t.loss.tau_squared_scaling = parse_bool(raw)?,
        "lrd_mode" => t.loss.lrd_mode = raw.parse::<LrdMode>().map_err(|e| e.to_string())?,
        "param" => spec.sweep_param = Some(raw.parse().map_err(|e: KrdError| e.to_string())?),
        "values" => spec.sweep_values = parse_list(raw, "a list of numbers")?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Applies config-file text to `spec`. `path` is used in messages only.
pub fn apply_config_str(spec: &mut RunSpec, text: &str, path: &Path) -> Result<()> {
    let mut section: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(KrdError::Config {
                    key: format!("[{name}]"),
                    line: Some(n),
                    message: format!(
                        "unknown section in {} (sections: {})",
                        path.display(),
                        SECTIONS.join(", ")
                    ),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(KrdError::Config {
                key: line.to_string(),
                line: Some(n),
                message: format!("expected `key = value` in {}", path.display()),
            });
        };
        let key = key.trim();
        let err = |message: String| KrdError::Config {
            key: key.to_string(),
            line: Some(n),
            message,
        };
        match (home_section(key), section.as_deref()) {
            (None, _) => return Err(err(format!("unknown key in {}", path.display()))),
            (Some(home), Some(s)) if home != s => {
                return Err(err(format!("belongs in [{home}], found in [{s}]")))
            }
            _ => {}
        }
        set_key(spec, key, value).map_err(err)?;
    }
    Ok(())
}

pub fn parse_config(path: &Path, command: Command) -> Result<RunSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| KrdError::io(path, e))?;
    let mut spec = RunSpec::new(command);
    apply_config_str(&mut spec, &text, path)?;
    Ok(spec)
}

/// `KRD_SEED` and `KRD_OUT`, given as a lookup so tests need not touch the
/// process environment.
pub fn apply_env(spec: &mut RunSpec, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
    for (var, key) in [("KRD_SEED", "seed"), ("KRD_OUT", "out")] {
        if let Some(v) = lookup(var) {
            set_key(spec, key, &v).map_err(|message| KrdError::Config {
                key: var.to_string(),
                line: None,
                message,
            })?;
        }
    }
    Ok(())
}
