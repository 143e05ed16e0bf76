//! Running configured experiments and laying out their outputs:
//!
//! ```text
//! <out_dir>/<name>/metrics.csv
//!                  summary.json
//!                  participation.csv
//!                  checkpoint.bin
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::game::BenefitMode;
use crate::mnist::{Dataset, MnistPaths};
use crate::net::ParticipatingNet;
use crate::numkit::Rng;
use crate::trainer::{
    compute_sparsity, middle_mass, participation_histogram, train_with_progress, EpochMetrics,
    Histogram, RunSummary, TrainOutcome, SUMMARY_HISTOGRAM_BINS,
};

/// Environment variable naming the default MNIST directory.
pub const DATA_DIR_ENV: &str = "EQPRUNE_DATA_DIR";

pub const METRICS_HEADER: &str =
    "epoch,train_loss,test_accuracy,sparsity,mean_participation,active_neurons,equilibrium_residual";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let file = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// C `%g`: six significant digits, trailing zeros dropped.
pub fn format_g6(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_owned();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_owned();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0" } else { "0" }.to_owned();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    } else {
        strip_zeros(&format!("{v:.*}", (5 - exp) as usize)).to_owned()
    }
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            m.epoch,
            format_g6(m.train_loss),
            format_g6(m.test_accuracy),
            format_g6(m.sparsity),
            format_g6(m.mean_participation),
            m.active_neurons,
            format_g6(m.equilibrium_residual)
        );
    }
    out
}

/// `player_id,layer,neuron,s` with gates printed losslessly.
pub fn participation_csv(net: &ParticipatingNet) -> String {
    let mut out = String::from("player_id,layer,neuron,s\n");
    let mut pid = 0;
    for (l, layer) in net.hidden.iter().enumerate() {
        for (i, s) in layer.participation.iter().enumerate() {
            let _ = writeln!(out, "{pid},{l},{i},{s:?}");
            pid += 1;
        }
    }
    out
}

/// Fills unset data paths from `data_dir`, or from `$EQPRUNE_DATA_DIR` when
/// that is unset too.
pub fn resolve_data(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<MnistPaths> {
    let d = &cfg.data;
    let explicit = [&d.train_images, &d.train_labels, &d.test_images, &d.test_labels];
    if explicit.iter().all(|p| p.is_some()) {
        return Ok(MnistPaths {
            train_images: d.train_images.clone().unwrap(),
            train_labels: d.train_labels.clone().unwrap(),
            test_images: d.test_images.clone().unwrap(),
            test_labels: d.test_labels.clone().unwrap(),
        });
    }
    let dir = match data_dir {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::invalid(format!(
                "no MNIST location: pass all four data paths, a data directory, or set {DATA_DIR_ENV}"
            ))
        })?,
    };
    let base = MnistPaths::in_dir(dir);
    Ok(MnistPaths {
        train_images: d.train_images.clone().unwrap_or(base.train_images),
        train_labels: d.train_labels.clone().unwrap_or(base.train_labels),
        test_images: d.test_images.clone().unwrap_or(base.test_images),
        test_labels: d.test_labels.clone().unwrap_or(base.test_labels),
    })
}

/// Thresholds one table row must meet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min_accuracy: f64,
    pub min_sparsity: f64,
    pub max_sparsity: f64,
}

impl Band {
    pub fn contains(&self, accuracy: f64, sparsity: f64) -> bool {
        accuracy >= self.min_accuracy && sparsity >= self.min_sparsity && sparsity < self.max_sparsity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    pub band: Band,
    pub passed: bool,
}

/// A reference configuration, its reference result and the band a rerun must hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub name: &'static str,
    pub beta: f64,
    pub gamma: f64,
    pub reported_accuracy: f64,
    pub reported_sparsity: f64,
    pub band: Band,
}

pub const TABLE: [TableRow; 4] = [
    TableRow {
        name: "very_high_beta",
        beta: 0.1,
        gamma: 0.0,
        reported_accuracy: 0.9664,
        reported_sparsity: 0.0,
        band: Band { min_accuracy: 0.95, min_sparsity: 0.0, max_sparsity: 0.02 },
    },
    TableRow {
        name: "extreme_beta",
        beta: 0.5,
        gamma: 0.0,
        reported_accuracy: 0.9115,
        reported_sparsity: 0.9518,
        band: Band { min_accuracy: 0.88, min_sparsity: 0.90, max_sparsity: f64::INFINITY },
    },
    TableRow {
        name: "l1_sparsity_strong",
        beta: 0.001,
        gamma: 0.1,
        reported_accuracy: 0.8957,
        reported_sparsity: 0.9831,
        band: Band { min_accuracy: 0.85, min_sparsity: 0.95, max_sparsity: f64::INFINITY },
    },
    TableRow {
        name: "l1_l2_combined",
        beta: 0.05,
        gamma: 0.05,
        reported_accuracy: 0.9154,
        reported_sparsity: 0.9805,
        band: Band { min_accuracy: 0.88, min_sparsity: 0.95, max_sparsity: f64::INFINITY },
    },
];

impl TableRow {
    /// `base` with this row's name and costs applied.
    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.name = self.name.to_owned();
        cfg.train.game.alpha = 1.0;
        cfg.train.game.beta = self.beta;
        cfg.train.game.gamma = self.gamma;
        cfg.train.game.lr_s = 0.001;
        cfg
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub name: String,
    /// Resolved configuration; `--config summary.json` replays it.
    pub experiment: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<BandCheck>,
    #[serde(flatten)]
    pub run: RunSummary,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub outcome: TrainOutcome,
    pub summary: SummaryFile,
}

impl RunArtifacts {
    pub fn diverged(&self) -> bool {
        self.outcome.summary.divergence.is_some()
    }
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join(&cfg.name)
}

/// Trains `cfg` from its seed and writes the four output files. A diverged
/// run still writes what it has and is reported through
/// [`RunArtifacts::diverged`].
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    band: Option<Band>,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunArtifacts> {
    cfg.validate()?;
    let arch = cfg.architecture();
    if train_set.images.cols() != arch.inputs {
        return Err(Error::invalid(format!(
            "images have {} pixels, network expects {}",
            train_set.images.cols(),
            arch.inputs
        )));
    }
    let net = ParticipatingNet::new(&arch, &mut Rng::new(cfg.train.seed))?;
    let outcome = train_with_progress(net, train_set, test_set, &cfg.train, on_epoch)?;

    let dir = run_dir(cfg);
    let config_text = cfg.to_text();
    let summary = SummaryFile {
        name: cfg.name.clone(),
        experiment: cfg
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect(),
        band: band.map(|b| BandCheck {
            band: b,
            passed: outcome.summary.divergence.is_none()
                && b.contains(outcome.summary.test_accuracy, outcome.summary.sparsity),
        }),
        run: outcome.summary.clone(),
    };
    write_atomic(&dir.join("metrics.csv"), metrics_csv(&outcome.metrics).as_bytes())?;
    write_atomic(&dir.join("participation.csv"), participation_csv(&outcome.net).as_bytes())?;
    checkpoint::save(dir.join("checkpoint.bin"), &outcome.net, &config_text)?;
    let json = serde_json::to_string_pretty(&summary)?;
    write_atomic(&dir.join("summary.json"), json.as_bytes())?;
    Ok(RunArtifacts {
        dir,
        outcome,
        summary,
    })
}

#[derive(Debug, Clone)]
pub struct TableEntry {
    pub row: TableRow,
    pub mode: BenefitMode,
    pub accuracy: f64,
    pub sparsity: f64,
    pub neurons_kept: usize,
    pub in_band: bool,
    /// Every run made for this row, default mode first.
    pub runs: Vec<RunArtifacts>,
}

impl TableEntry {
    /// The run the row reports.
    pub fn chosen(&self) -> &RunArtifacts {
        self.runs
            .iter()
            .find(|r| r.outcome.summary.config.benefit_mode == self.mode)
            .expect("chosen run present")
    }
}

/// Runs every [`TABLE`] row on top of `base`. With `fallback`, a row whose
/// run misses its band under the configured benefit mode is rerun in the
/// other mode (into `<name>_<mode>`) and reported with whichever passes.
pub fn reproduce_table(
    base: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    fallback: bool,
    mut on_epoch: impl FnMut(&str, &EpochMetrics),
) -> Result<Vec<TableEntry>> {
    let mut entries = Vec::new();
    for row in TABLE {
        let cfg = row.config(base);
        let first = run_experiment(&cfg, train_set, test_set, Some(row.band), |m| on_epoch(&cfg.name, m))?;
        let mut runs = vec![first];
        let mut chosen = 0;
        if fallback && !runs[0].summary.band.is_some_and(|b| b.passed) {
            let mut alt = cfg.clone();
            alt.train.benefit_mode = match cfg.train.benefit_mode {
                BenefitMode::Signed => BenefitMode::Abs,
                BenefitMode::Abs => BenefitMode::Signed,
            };
            alt.name = format!("{}_{}", row.name, alt.train.benefit_mode);
            let second = run_experiment(&alt, train_set, test_set, Some(row.band), |m| on_epoch(&alt.name, m))?;
            if second.summary.band.is_some_and(|b| b.passed) {
                chosen = 1;
            }
            runs.push(second);
        }
        let s = &runs[chosen].outcome.summary;
        entries.push(TableEntry {
            row,
            mode: s.config.benefit_mode,
            accuracy: s.test_accuracy,
            sparsity: s.sparsity,
            neurons_kept: s.active_neurons,
            in_band: runs[chosen].summary.band.is_some_and(|b| b.passed),
            runs,
        });
    }
    Ok(entries)
}

pub fn table_csv(entries: &[TableEntry]) -> String {
    let mut out = String::from("name,accuracy,sparsity,neurons_kept\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.row.name,
            format_g6(e.accuracy),
            format_g6(e.sparsity),
            e.neurons_kept
        );
    }
    out
}

pub fn table_text(entries: &[TableEntry]) -> String {
    let mut out = format!(
        "{:<20} {:>9} {:>9} {:>6} {:>7} {:>10} {:>10} {:>7}\n",
        "name", "accuracy", "sparsity", "kept", "mode", "reported", "reported", "band"
    );
    let _ = writeln!(out, "{:<20} {:>9} {:>9} {:>6} {:>7} {:>10} {:>10}", "", "", "", "", "", "acc", "sparsity");
    for e in entries {
        let _ = writeln!(
            out,
            "{:<20} {:>8.2}% {:>8.2}% {:>6} {:>7} {:>9.2}% {:>9.2}% {:>7}",
            e.row.name,
            100.0 * e.accuracy,
            100.0 * e.sparsity,
            e.neurons_kept,
            e.mode.to_string(),
            100.0 * e.row.reported_accuracy,
            100.0 * e.row.reported_sparsity,
            if e.in_band { "ok" } else { "MISS" }
        );
    }
    out
}

pub fn write_table(out_dir: &Path, entries: &[TableEntry]) -> Result<()> {
    write_atomic(&out_dir.join("table.csv"), table_csv(entries).as_bytes())?;
    write_atomic(&out_dir.join("table.txt"), table_text(entries).as_bytes())
}

#[derive(Debug, Clone)]
pub struct LayerReport {
    pub layer: usize,
    pub width: usize,
    pub active: usize,
    pub mean_participation: f64,
}

#[derive(Debug, Clone)]
pub struct InspectReport {
    pub config_text: String,
    pub layers: Vec<LayerReport>,
    pub sparsity: f64,
    pub active: usize,
    pub middle_mass: f64,
    pub histogram: Histogram,
}

impl std::fmt::Display for InspectReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "players: {} active, sparsity {:.2}%", self.active, 100.0 * self.sparsity)?;
        for l in &self.layers {
            writeln!(
                f,
                "  layer {}: {}/{} active, mean s {:.4}",
                l.layer, l.active, l.width, l.mean_participation
            )?;
        }
        writeln!(f, "fraction of gates in (0.05, 0.95): {:.4}", self.middle_mass)?;
        writeln!(f, "histogram ({} bins on [0, 1]): {:?}", self.histogram.counts.len(), self.histogram.counts)
    }
}

/// Summarizes a checkpoint and writes its `participation.csv` to `csv_out`.
pub fn inspect(checkpoint_path: &Path, csv_out: &Path) -> Result<InspectReport> {
    let ck = checkpoint::load(checkpoint_path)?;
    let epsilon = ExperimentConfig::parse(&ck.config_text)
        .map(|c| c.train.game.epsilon)
        .unwrap_or(crate::game::GameConfig::default().epsilon);
    let layers = ck
        .net
        .hidden
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let (_, active) = compute_sparsity(&layer.participation, epsilon);
            LayerReport {
                layer: l,
                width: layer.width(),
                active,
                mean_participation: layer.participation.iter().sum::<f64>() / layer.width() as f64,
            }
        })
        .collect();
    let s = ck.net.participation();
    let (sparsity, active) = compute_sparsity(&s, epsilon);
    write_atomic(csv_out, participation_csv(&ck.net).as_bytes())?;
    Ok(InspectReport {
        config_text: ck.config_text,
        layers,
        sparsity,
        active,
        middle_mass: middle_mass(&s, 0.05, 0.95),
        histogram: participation_histogram(&s, SUMMARY_HISTOGRAM_BINS)?,
    })
}
