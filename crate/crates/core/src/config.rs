//! Experiment files: one `key = value` per line, `#` starts a comment.
//!
//! ```text
//! name = extreme_beta
//! beta = 0.5
//! gamma = 0
//! lr_s = 0.001
//! ```
//!
//! Unknown or repeated keys are errors. Anything not set keeps its default.
//! Relative data paths are taken relative to the working directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::net::Architecture;
use crate::trainer::TrainConfig;

pub const KEYS: &[&str] = &[
    "name",
    "epochs",
    "batch_size",
    "lr_theta",
    "seed",
    "alpha",
    "beta",
    "gamma",
    "eta",
    "lr_s",
    "epsilon",
    "benefit_mode",
    "benefit_gradient",
    "s_update_every",
    "hidden",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "out_dir",
];

/// Optional explicit data files; unset ones fall back to a data directory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataFiles {
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub data: DataFiles,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".to_owned(),
            hidden: Architecture::mnist().hidden,
            train: TrainConfig::default(),
            data: DataFiles::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config {
                    line: line_no,
                    msg: format!("duplicate key {key:?}"),
                });
            }
            cfg.set(key, value.trim()).map_err(|msg| Error::Config { line: line_no, msg })?;
            seen.push(key.to_owned());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads either a `key = value` file or a `summary.json` written by a
    /// previous run, whose `experiment` object holds the same keys.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let doc: serde_json::Value = serde_json::from_str(&text)?;
            let obj = doc
                .get("experiment")
                .and_then(|v| v.as_object())
                .ok_or_else(|| Error::invalid(format!("{}: no `experiment` object", path.display())))?;
            let mut cfg = ExperimentConfig::default();
            for (k, v) in obj {
                let v = v
                    .as_str()
                    .ok_or_else(|| Error::invalid(format!("{}: `{k}` is not a string", path.display())))?;
                cfg.set(k, v).map_err(Error::InvalidArgument)?;
            }
            cfg.validate()?;
            return Ok(cfg);
        }
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        match key {
            "name" => {
                if value.is_empty() || value.contains(['/', '\\']) {
                    return Err(format!("name must be a non-empty file name, got {value:?}"));
                }
                self.name = value.to_owned();
            }
            "epochs" => t.epochs = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "lr_theta" => t.lr_theta = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "alpha" => t.game.alpha = parse_num(key, value)?,
            "beta" => t.game.beta = parse_num(key, value)?,
            "gamma" => t.game.gamma = parse_num(key, value)?,
            "eta" => t.game.eta = parse_num(key, value)?,
            "lr_s" => t.game.lr_s = parse_num(key, value)?,
            "epsilon" => t.game.epsilon = parse_num(key, value)?,
            "benefit_mode" => t.benefit_mode = parse_num(key, value)?,
            "benefit_gradient" => t.benefit_gradient = parse_num(key, value)?,
            "s_update_every" => t.s_update_every = parse_num(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|w| parse_num::<usize>(key, w.trim()))
                    .collect::<Result<_, _>>()?;
            }
            "train_images" => self.data.train_images = opt_path(value),
            "train_labels" => self.data.train_labels = opt_path(value),
            "test_images" => self.data.test_images = opt_path(value),
            "test_labels" => self.data.test_labels = opt_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(format!(
                    "unknown key {other:?} (known: {})",
                    KEYS.join(", ")
                ))
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::new(784, self.hidden.clone(), 10)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        self.train.validate()
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let g = &t.game;
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        vec![
            ("name", self.name.clone()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr_theta", t.lr_theta.to_string()),
            ("seed", t.seed.to_string()),
            ("alpha", g.alpha.to_string()),
            ("beta", g.beta.to_string()),
            ("gamma", g.gamma.to_string()),
            ("eta", g.eta.to_string()),
            ("lr_s", g.lr_s.to_string()),
            ("epsilon", g.epsilon.to_string()),
            ("benefit_mode", t.benefit_mode.to_string()),
            ("benefit_gradient", t.benefit_gradient.to_string()),
            ("s_update_every", t.s_update_every.to_string()),
            ("hidden", hidden.join(",")),
            ("train_images", show_path(&self.data.train_images)),
            ("train_labels", show_path(&self.data.train_labels)),
            ("test_images", show_path(&self.data.test_images)),
            ("test_labels", show_path(&self.data.test_labels)),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    /// The resolved configuration in file syntax; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
