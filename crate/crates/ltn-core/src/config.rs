//! Experiment configuration: a flat `key = value` file with loud failures
//! on unknown keys, plus the four named ablation presets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset `{0}` (expected plain, alpha, bg, or bg_alpha)")]
    UnknownPreset(String),
}

/// The four ablation variants: with or without class weighting, with or
/// without a trained background predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Alpha,
    Bg,
    BgAlpha,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "plain" => Some(Self::Plain),
            "alpha" => Some(Self::Alpha),
            "bg" => Some(Self::Bg),
            "bg_alpha" => Some(Self::BgAlpha),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::Alpha => "alpha",
            Self::Bg => "bg",
            Self::BgAlpha => "bg_alpha",
        }
    }

    pub fn use_alpha(self) -> bool {
        matches!(self, Self::Alpha | Self::BgAlpha)
    }

    pub fn include_bg(self) -> bool {
        matches!(self, Self::Bg | Self::BgAlpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub gamma: f64,
    pub beta: f64,
    pub lambda_l2: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_after_drop: f64,
    pub epochs: usize,
    pub batch_fg: usize,
    pub batch_bg: usize,
    /// Foreground fraction assumed by the class-weight formulas.
    pub fg_fraction: f64,
    pub kernels: usize,
    pub seed: u64,
    pub mutual_exclusion: bool,
    pub mereology: bool,
    /// Add part-of literals from box geometry to the example theory.
    pub partof_expl: bool,
    pub partof_pos_ir: f64,
    pub partof_neg_ir: f64,
    pub dataset: String,
    pub classes: String,
    /// Empty string: no ontology.
    pub ontology: String,
    /// Extra prior axioms appended to the generated ones; empty: none.
    pub axioms: String,
    /// Where to write the composed prior theory; empty: skip.
    pub axioms_out: String,
    pub checkpoint_out: String,
    pub metrics_out: String,
}

impl Default for ExperimentConfig {
    /// Full-scale training defaults; desk-scale runs override the schedule.
    fn default() -> Self {
        Self {
            variant: Variant::Plain,
            gamma: 2.0,
            beta: 0.999,
            lambda_l2: 5e-4,
            weight_decay: 5e-4,
            lr: 1e-5,
            lr_drop_epoch: 60,
            lr_after_drop: 1e-6,
            epochs: 150,
            batch_fg: 32,
            batch_bg: 96,
            fg_fraction: 0.5,
            kernels: 6,
            seed: 7,
            mutual_exclusion: true,
            mereology: true,
            partof_expl: false,
            partof_pos_ir: 0.7,
            partof_neg_ir: 0.1,
            dataset: "train.tsv".to_string(),
            classes: "classes.txt".to_string(),
            ontology: String::new(),
            axioms: String::new(),
            axioms_out: String::new(),
            checkpoint_out: "model.ltnw".to_string(),
            metrics_out: "metrics.tsv".to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda_l2", self.lambda_l2),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.lr > 0.0) || !(self.lr_after_drop > 0.0) {
            return fail("learning rates must be positive".to_string());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.epochs > 0 && self.lr_drop_epoch >= self.epochs {
            return fail(format!(
                "lr_drop_epoch {} must be smaller than epochs {}",
                self.lr_drop_epoch, self.epochs
            ));
        }
        if self.batch_fg == 0 {
            return fail("batch_fg must be positive".to_string());
        }
        if (self.batch_fg + self.batch_bg) % 2 != 0 {
            return fail("batch size (batch_fg + batch_bg) must be even".to_string());
        }
        if !(self.fg_fraction > 0.0 && self.fg_fraction < 1.0) {
            return fail(format!(
                "fg_fraction must lie in (0, 1), got {}",
                self.fg_fraction
            ));
        }
        if self.kernels == 0 {
            return fail("kernels must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.partof_neg_ir)
            || !(0.0..=1.0).contains(&self.partof_pos_ir)
            || self.partof_neg_ir >= self.partof_pos_ir
        {
            return fail(format!(
                "part-of thresholds need 0 <= negative < positive <= 1, got {} and {}",
                self.partof_neg_ir, self.partof_pos_ir
            ));
        }
        if self.dataset.is_empty() || self.classes.is_empty() {
            return fail("dataset and classes paths are required".to_string());
        }
        if self.checkpoint_out.is_empty() || self.metrics_out.is_empty() {
            return fail("checkpoint_out and metrics_out paths are required".to_string());
        }
        if self.mereology && self.ontology.is_empty() {
            return fail("mereology needs an ontology path".to_string());
        }
        if self.partof_expl && self.ontology.is_empty() {
            return fail("partof_expl needs an ontology path".to_string());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        // Paths have no sensible defaults; require them in the file.
        let mut saw_dataset = false;
        let mut saw_classes = false;
        let mut saw_mereology = false;
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: lineno,
                message: "expected `key = value`".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| ConfigError::Parse {
                line: lineno,
                message: format!("bad {what} value `{value}`"),
            };
            let parse_bool = |value: &str| match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(bad("boolean")),
            };
            match key {
                "variant" => {
                    cfg.variant = Variant::parse(value).ok_or_else(|| ConfigError::Parse {
                        line: lineno,
                        message: format!(
                            "unknown variant `{value}` (expected plain, alpha, bg, or bg_alpha)"
                        ),
                    })?
                }
                "gamma" => cfg.gamma = value.parse().map_err(|_| bad("number"))?,
                "beta" => cfg.beta = value.parse().map_err(|_| bad("number"))?,
                "lambda_l2" => cfg.lambda_l2 = value.parse().map_err(|_| bad("number"))?,
                "weight_decay" => cfg.weight_decay = value.parse().map_err(|_| bad("number"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("number"))?,
                "lr_drop_epoch" => {
                    cfg.lr_drop_epoch = value.parse().map_err(|_| bad("integer"))?
                }
                "lr_after_drop" => cfg.lr_after_drop = value.parse().map_err(|_| bad("number"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("integer"))?,
                "batch_fg" => cfg.batch_fg = value.parse().map_err(|_| bad("integer"))?,
                "batch_bg" => cfg.batch_bg = value.parse().map_err(|_| bad("integer"))?,
                "fg_fraction" => cfg.fg_fraction = value.parse().map_err(|_| bad("number"))?,
                "kernels" => cfg.kernels = value.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "mutual_exclusion" => cfg.mutual_exclusion = parse_bool(value)?,
                "mereology" => {
                    cfg.mereology = parse_bool(value)?;
                    saw_mereology = true;
                }
                "partof_expl" => cfg.partof_expl = parse_bool(value)?,
                "partof_pos_ir" => cfg.partof_pos_ir = value.parse().map_err(|_| bad("number"))?,
                "partof_neg_ir" => cfg.partof_neg_ir = value.parse().map_err(|_| bad("number"))?,
                "dataset" => {
                    cfg.dataset = value.to_string();
                    saw_dataset = true;
                }
                "classes" => {
                    cfg.classes = value.to_string();
                    saw_classes = true;
                }
                "ontology" => cfg.ontology = value.to_string(),
                "axioms" => cfg.axioms = value.to_string(),
                "axioms_out" => cfg.axioms_out = value.to_string(),
                "checkpoint_out" => cfg.checkpoint_out = value.to_string(),
                "metrics_out" => cfg.metrics_out = value.to_string(),
                other => {
                    return Err(ConfigError::Parse {
                        line: lineno,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        if !saw_dataset || !saw_classes {
            return Err(ConfigError::Invalid(
                "config must set `dataset` and `classes`".to_string(),
            ));
        }
        // An ontology-free config cannot keep the mereology default on;
        // an explicit `mereology = true` without an ontology still fails.
        if cfg.ontology.is_empty() && !saw_mereology {
            cfg.mereology = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "variant = {}", self.variant.name()).unwrap();
        writeln!(out, "gamma = {}", self.gamma).unwrap();
        writeln!(out, "beta = {}", self.beta).unwrap();
        writeln!(out, "lambda_l2 = {}", self.lambda_l2).unwrap();
        writeln!(out, "weight_decay = {}", self.weight_decay).unwrap();
        writeln!(out, "lr = {}", self.lr).unwrap();
        writeln!(out, "lr_drop_epoch = {}", self.lr_drop_epoch).unwrap();
        writeln!(out, "lr_after_drop = {}", self.lr_after_drop).unwrap();
        writeln!(out, "epochs = {}", self.epochs).unwrap();
        writeln!(out, "batch_fg = {}", self.batch_fg).unwrap();
        writeln!(out, "batch_bg = {}", self.batch_bg).unwrap();
        writeln!(out, "fg_fraction = {}", self.fg_fraction).unwrap();
        writeln!(out, "kernels = {}", self.kernels).unwrap();
        writeln!(out, "seed = {}", self.seed).unwrap();
        writeln!(out, "mutual_exclusion = {}", self.mutual_exclusion).unwrap();
        writeln!(out, "mereology = {}", self.mereology).unwrap();
        writeln!(out, "partof_expl = {}", self.partof_expl).unwrap();
        writeln!(out, "partof_pos_ir = {}", self.partof_pos_ir).unwrap();
        writeln!(out, "partof_neg_ir = {}", self.partof_neg_ir).unwrap();
        writeln!(out, "dataset = {}", self.dataset).unwrap();
        writeln!(out, "classes = {}", self.classes).unwrap();
        if !self.ontology.is_empty() {
            writeln!(out, "ontology = {}", self.ontology).unwrap();
        }
        if !self.axioms.is_empty() {
            writeln!(out, "axioms = {}", self.axioms).unwrap();
        }
        if !self.axioms_out.is_empty() {
            writeln!(out, "axioms_out = {}", self.axioms_out).unwrap();
        }
        writeln!(out, "checkpoint_out = {}", self.checkpoint_out).unwrap();
        writeln!(out, "metrics_out = {}", self.metrics_out).unwrap();
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(&path).map_err(|e| {
            ConfigError::Invalid(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }
}

/// The named ablation preset: full-scale schedule with the variant's
/// weighting and background switches set.
pub fn run_preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let variant =
        Variant::parse(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    Ok(ExperimentConfig {
        variant,
        ..ExperimentConfig::default()
    })
}
