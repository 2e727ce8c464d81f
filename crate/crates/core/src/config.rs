//! Run configuration: a flat `key = value` text file with validated
//! defaults, overridable field by field from CLI flags. Unknown keys
//! are rejected so typos never pass silently.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::train::{OptimizerKind, SchedulerKind};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub image_size: usize,
    pub optimizer: OptimizerKind,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub test_frac: f64,
    /// share of the non-test remainder held out for validation
    /// (0.15 of 85% = 12.75% of the whole set)
    pub val_frac: f64,
    pub sharpen: bool,
    pub augment: bool,
    pub balance_threshold: f64,
    pub dropout: f64,
    /// class-name remapping applied while scanning a dataset tree
    /// (e.g. folding two source labels into one)
    pub merge: IndexMap<String, String>,
    pub cam_method: String,
    pub cam_eta: f64,
    pub cam_top_k: usize,
    pub cam_alpha: f64,
    pub cam_capture: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-4,
            factor: 0.7,
            patience: 7,
            min_lr: 1e-6,
            image_size: 128,
            optimizer: OptimizerKind::Adam,
            scheduler: SchedulerKind::Plateau,
            seed: 43,
            test_frac: 0.15,
            val_frac: 0.15,
            sharpen: true,
            augment: true,
            balance_threshold: 10.0,
            dropout: 0.3,
            merge: IndexMap::new(),
            cam_method: "gradcam".to_string(),
            cam_eta: 0.0,
            cam_top_k: 8,
            cam_alpha: 0.5,
            cam_capture: crate::model::DEFAULT_CAPTURE.to_string(),
        }
    }
}

const CAM_METHODS: &[&str] = &["gradcam", "xgradcam", "scorecam", "faster-scorecam"];

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0 < self.factor && self.factor < 1.0) {
            return bad(format!("factor must lie in (0,1), got {}", self.factor));
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.learning_rate) {
            return bad(format!(
                "min_lr must lie in (0, learning_rate], got {}",
                self.min_lr
            ));
        }
        if self.image_size < 8 {
            return bad(format!("image_size too small: {}", self.image_size));
        }
        if !(self.test_frac > 0.0 && self.val_frac > 0.0 && self.test_frac + self.val_frac < 1.0) {
            return bad(format!(
                "split fractions invalid: test {} + val {} must stay below 1",
                self.test_frac, self.val_frac
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0,1), got {}", self.dropout));
        }
        if !(self.balance_threshold > 0.0) {
            return bad("balance_threshold must be positive".into());
        }
        if !CAM_METHODS.contains(&self.cam_method.as_str()) {
            return bad(format!(
                "unknown cam_method {:?}; expected one of {CAM_METHODS:?}",
                self.cam_method
            ));
        }
        if !(0.0..=1.0).contains(&self.cam_alpha) {
            return bad(format!("cam_alpha must lie in [0,1], got {}", self.cam_alpha));
        }
        if self.cam_top_k == 0 {
            return bad("cam_top_k must be positive".into());
        }
        Ok(())
    }

    /// Apply one `key = value` assignment; keys match the field names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("cannot parse {value:?} as a value for {key}"))
            })
        }
        fn parse_bool(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!(
                    "cannot parse {value:?} as a boolean for {key}"
                ))),
            }
        }
        if let Some(from) = key.strip_prefix("merge.") {
            if from.is_empty() || value.is_empty() {
                return Err(Error::Config(format!("empty class name in merge rule {key:?}")));
            }
            self.merge.insert(from.to_string(), value.to_string());
            return Ok(());
        }
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "factor" => self.factor = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "min_lr" => self.min_lr = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "optimizer" => self.optimizer = OptimizerKind::parse(value)?,
            "scheduler" => self.scheduler = SchedulerKind::parse(value)?,
            "seed" => self.seed = parse(key, value)?,
            "test_frac" => self.test_frac = parse(key, value)?,
            "val_frac" => self.val_frac = parse(key, value)?,
            "sharpen" => self.sharpen = parse_bool(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "balance_threshold" => self.balance_threshold = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "cam_method" => self.cam_method = value.to_string(),
            "cam_eta" => self.cam_eta = parse(key, value)?,
            "cam_top_k" => self.cam_top_k = parse(key, value)?,
            "cam_alpha" => self.cam_alpha = parse(key, value)?,
            "cam_capture" => self.cam_capture = value.to_string(),
            _ => {
                return Err(Error::Config(format!(
                    "unknown configuration key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parse a flat `key = value` file. Blank lines and `#` comments
    /// are ignored; every other line must be an assignment.
    pub fn parse_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Serialize back to the flat text form (used for the sidecar
    /// written next to trained weights).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("factor", self.factor.to_string());
        push("patience", self.patience.to_string());
        push("min_lr", self.min_lr.to_string());
        push("image_size", self.image_size.to_string());
        push("optimizer", self.optimizer.name().to_string());
        push("scheduler", self.scheduler.name().to_string());
        push("seed", self.seed.to_string());
        push("test_frac", self.test_frac.to_string());
        push("val_frac", self.val_frac.to_string());
        push("sharpen", self.sharpen.to_string());
        push("augment", self.augment.to_string());
        push("balance_threshold", self.balance_threshold.to_string());
        push("dropout", self.dropout.to_string());
        for (from, to) in &self.merge {
            push(&format!("merge.{from}"), to.clone());
        }
        push("cam_method", self.cam_method.clone());
        push("cam_eta", self.cam_eta.to_string());
        push("cam_top_k", self.cam_top_k.to_string());
        push("cam_alpha", self.cam_alpha.to_string());
        push("cam_capture", self.cam_capture.clone());
        s
    }
}
