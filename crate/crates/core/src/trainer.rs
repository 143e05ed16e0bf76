//! Joint training loop: per mini-batch, one SGD step on the weights followed
//! by one synchronous projected-ascent step on the participation gates. After
//! the last epoch every gate below `epsilon` is closed for good.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    equilibrium_residual, update_participation, BenefitMode, GameConfig, ParticipationState,
    PlayerStat, PlayerStats,
};
use crate::mnist::{next_batch, BatchPlan, Dataset};
use crate::net::{BenefitGradient, GradientBundle, ParticipatingNet};
use crate::numkit::{dot, Rng};

/// Losses beyond this magnitude are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Bins of the participation histogram written to `summary.json`.
pub const SUMMARY_HISTOGRAM_BINS: usize = 32;

/// Salt mixed into the seed for the batch-order stream so it does not
/// replay the initialization stream.
const BATCH_STREAM_SALT: u64 = 0xB47C_5EED_0000_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_theta: f64,
    pub seed: u64,
    pub game: GameConfig,
    pub benefit_mode: BenefitMode,
    pub benefit_gradient: BenefitGradient,
    /// Batches between participation updates.
    pub s_update_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            lr_theta: 0.1,
            seed: 42,
            game: GameConfig::default(),
            benefit_mode: BenefitMode::Signed,
            benefit_gradient: BenefitGradient::Raw,
            s_update_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.lr_theta > 0.0 && self.lr_theta.is_finite()) {
            return Err(Error::invalid(format!(
                "lr_theta must be positive and finite, got {}",
                self.lr_theta
            )));
        }
        if self.s_update_every == 0 {
            return Err(Error::invalid("s_update_every must be at least 1"));
        }
        self.game.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub sparsity: f64,
    pub mean_participation: f64,
    pub active_neurons: usize,
    /// Best-response gap at the end of the epoch, measured against the
    /// statistics of the epoch's last mini-batch.
    pub equilibrium_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` uniformly spaced edges from 0 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Where training stopped when the loss blew up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: TrainConfig,
    pub activation: String,
    pub final_metrics: Option<EpochMetrics>,
    /// Test accuracy of the pruned network, i.e. the delivered model.
    pub test_accuracy: f64,
    pub test_accuracy_before_prune: f64,
    pub sparsity: f64,
    pub active_neurons: usize,
    pub histogram: Histogram,
    pub pruned_players: Vec<usize>,
    pub wall_clock_seconds: f64,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ParticipatingNet,
    pub metrics: Vec<EpochMetrics>,
    pub summary: RunSummary,
}

/// Per-player statistics from the current parameters and one gradient.
pub fn collect_stats(
    net: &ParticipatingNet,
    grads: &GradientBundle,
    game: &GameConfig,
    mode: BenefitMode,
    gradient: BenefitGradient,
) -> PlayerStats {
    let benefit = grads.benefit(gradient);
    let mut players = Vec::with_capacity(benefit.len());
    let mut pid = 0;
    for layer in &net.hidden {
        let width = layer.width();
        // sum_j s_j theta_j, used for the competition term.
        let pooled = (game.eta != 0.0).then(|| {
            let mut w = vec![0.0; layer.weights.cols()];
            let mut b = 0.0;
            for j in 0..width {
                let s = layer.participation[j];
                for (acc, v) in w.iter_mut().zip(layer.weights.row(j)) {
                    *acc += s * v;
                }
                b += s * layer.biases[j];
            }
            (w, b)
        });
        for i in 0..width {
            let norm_sq = layer.group_norm_sq(i);
            let competition = pooled.as_ref().map_or(0.0, |(w, b)| {
                dot(layer.weights.row(i), w) + layer.biases[i] * b
                    - layer.participation[i] * norm_sq
            });
            players.push(PlayerStat::new(mode.apply(benefit[pid]), norm_sq, competition));
            pid += 1;
        }
    }
    PlayerStats::new(players)
}

/// `(#{s_i < eps} / N, N - #{s_i < eps})`.
pub fn compute_sparsity(s: &[f64], epsilon: f64) -> (f64, usize) {
    if s.is_empty() {
        return (0.0, 0);
    }
    let pruned = s.iter().filter(|&&v| v < epsilon).count();
    (pruned as f64 / s.len() as f64, s.len() - pruned)
}

/// Uniform bins on `[0, 1]`; the value 1 falls in the last bin.
pub fn participation_histogram(s: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::invalid("histogram needs at least 2 bins"));
    }
    let edges = (0..=bins).map(|k| k as f64 / bins as f64).collect();
    let mut counts = vec![0; bins];
    for &v in s {
        let b = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Fraction of gates strictly inside `(lo, hi)`.
pub fn middle_mass(s: &[f64], lo: f64, hi: f64) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    s.iter().filter(|&&v| v > lo && v < hi).count() as f64 / s.len() as f64
}

/// Closes every gate below `epsilon` and zeroes that neuron's incoming row
/// and bias. Returns the pruned player ids.
pub fn finalize_prune(net: &mut ParticipatingNet, epsilon: f64) -> Vec<usize> {
    let mut pruned = Vec::new();
    let mut pid = 0;
    for layer in &mut net.hidden {
        for i in 0..layer.width() {
            if layer.participation[i] < epsilon {
                layer.participation[i] = 0.0;
                layer.weights.row_mut(i).fill(0.0);
                layer.biases[i] = 0.0;
                pruned.push(pid);
            }
            pid += 1;
        }
    }
    pruned
}

pub fn train(
    net: ParticipatingNet,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(net, train_set, test_set, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with_progress(
    mut net: ParticipatingNet,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let arch = net.architecture();
    let mut rng = Rng::new(cfg.seed ^ BATCH_STREAM_SALT);
    let mut plan = BatchPlan::new(train_set.len(), cfg.batch_size, &mut rng)?;
    let mut state = ParticipationState::new(net.participation(), arch.players())?;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut divergence = None;
    let mut step = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut last_stats = None;
        let batches = plan.batches_per_epoch();
        for b in 0..batches {
            let batch = next_batch(train_set, &mut plan, &mut rng)?;
            let (loss, grads) = match net.loss_and_backward(&batch.images, &batch.labels) {
                Ok(v) => v,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    divergence = Some(Divergence {
                        epoch,
                        batch: b,
                        message: e.to_string(),
                    });
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if loss.abs() > DIVERGENCE_LOSS {
                divergence = Some(Divergence {
                    epoch,
                    batch: b,
                    message: format!("loss {loss:e} exceeds {DIVERGENCE_LOSS:e}"),
                });
                break 'epochs;
            }
            loss_sum += loss;

            let stats = collect_stats(
                &net,
                &grads,
                &cfg.game,
                cfg.benefit_mode,
                cfg.benefit_gradient,
            );
            net.sgd_step(&grads, cfg.lr_theta);
            step += 1;
            if step.is_multiple_of(cfg.s_update_every) {
                state = update_participation(&state, &stats, &cfg.game)?;
                net.set_participation(state.values())?;
            }
            last_stats = Some(stats);
        }

        let s = state.values();
        let (sparsity, active) = compute_sparsity(s, cfg.game.epsilon);
        let residual = match &last_stats {
            Some(stats) => equilibrium_residual(&state, stats, &cfg.game)?,
            None => 0.0,
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            test_accuracy: net.accuracy(test_set)?,
            sparsity,
            mean_participation: s.iter().sum::<f64>() / s.len() as f64,
            active_neurons: active,
            equilibrium_residual: residual,
        };
        on_epoch(&m);
        metrics.push(m);
    }

    let test_accuracy_before_prune = net.accuracy(test_set)?;
    let pruned_players = finalize_prune(&mut net, cfg.game.epsilon);
    let final_s = net.participation();
    let (sparsity, active_neurons) = compute_sparsity(&final_s, cfg.game.epsilon);
    let summary = RunSummary {
        config: cfg.clone(),
        activation: "relu".to_owned(),
        final_metrics: metrics.last().cloned(),
        test_accuracy: net.accuracy(test_set)?,
        test_accuracy_before_prune,
        sparsity,
        active_neurons,
        histogram: participation_histogram(&final_s, SUMMARY_HISTOGRAM_BINS)?,
        pruned_players,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        divergence,
    };
    Ok(TrainOutcome {
        net,
        metrics,
        summary,
    })
}
