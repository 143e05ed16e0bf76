//! Independent oracles for the analytic code in [`crate::game`] and
//! [`crate::net`].
//!
//! Nothing here calls the routines it checks: utilities are re-evaluated
//! from the formula, the network is re-run with per-sample loops, and
//! gradients come from central differences. Intended for toy sizes only
//! (nets of at most a few thousand parameters, games of a few dozen players).

pub mod suite;

use crate::error::{Error, Result};
use crate::game::{GameConfig, ParticipationState, PlayerStat, PlayerStats};
use crate::net::{GradientBundle, LayerGrads, ParticipatingNet};
use crate::numkit::Matrix;

/// Grid resolution on `[0, 1]` and finite-difference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 10_001,
            step: 1e-5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points < 101 {
            return Err(Error::invalid(format!(
                "grid needs at least 101 points, got {}",
                self.points
            )));
        }
        if !(self.step > 1e-8 && self.step < 1e-3) {
            return Err(Error::invalid(format!(
                "finite-difference step must lie in (1e-8, 1e-3), got {}",
                self.step
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.points - 1) as f64
    }
}

fn oracle_utility(s: f64, g: f64, norm_sq: f64, competition: f64, cfg: &GameConfig) -> f64 {
    let benefit = cfg.alpha * s * g;
    let l2 = cfg.beta * norm_sq * s * s;
    let l1 = cfg.gamma * s.abs();
    let comp = cfg.eta * s * competition;
    benefit - l2 - l1 - comp
}

/// The grid point maximizing player `i`'s utility; ties go to the smaller
/// gate value.
pub fn grid_argmax_utility(
    i: usize,
    s: &[f64],
    stats: &PlayerStats,
    cfg: &GameConfig,
    grid: &GridSpec,
) -> Result<f64> {
    grid.validate()?;
    if s.len() != stats.len() || i >= s.len() {
        return Err(Error::invalid(format!(
            "player {i} out of range for {} gates / {} stats",
            s.len(),
            stats.len()
        )));
    }
    let st = stats.players[i];
    let mut best_s = 0.0;
    let mut best_u = f64::NEG_INFINITY;
    for k in 0..grid.points {
        let x = k as f64 / (grid.points - 1) as f64;
        let u = oracle_utility(x, st.benefit, st.norm_sq, st.competition, cfg);
        if u > best_u {
            best_u = u;
            best_s = x;
        }
    }
    Ok(best_s)
}

/// Exhaustive 2-D check of strict dominance of `s = 0` over the grid of
/// positive gate values and `c_points` competition levels spanning the range.
pub fn grid_dominance(
    stat: &PlayerStat,
    cfg: &GameConfig,
    competition_range: (f64, f64),
    s_points: usize,
    c_points: usize,
) -> bool {
    let (lo, hi) = competition_range;
    for ci in 0..c_points {
        let c = if c_points == 1 {
            lo
        } else {
            lo + (hi - lo) * ci as f64 / (c_points - 1) as f64
        };
        let at_zero = oracle_utility(0.0, stat.benefit, stat.norm_sq, c, cfg);
        for k in 1..s_points {
            let x = k as f64 / (s_points - 1) as f64;
            if oracle_utility(x, stat.benefit, stat.norm_sq, c, cfg) >= at_zero {
                return false;
            }
        }
    }
    true
}

/// Exact equilibrium of a game without competition: every player's closed
/// form, clamped to `[0, 1]`.
pub fn solve_decoupled_game(stats: &PlayerStats, cfg: &GameConfig) -> Result<ParticipationState> {
    if cfg.eta != 0.0 {
        return Err(Error::invalid(format!(
            "decoupled solver requires eta = 0, got {}",
            cfg.eta
        )));
    }
    let s = stats
        .players
        .iter()
        .map(|st| {
            let numerator = cfg.alpha * st.benefit - cfg.gamma;
            let denominator = 2.0 * cfg.beta * st.norm_sq;
            if numerator <= 0.0 {
                0.0
            } else if denominator == 0.0 {
                1.0
            } else {
                f64::min(1.0, numerator / denominator)
            }
        })
        .collect();
    ParticipationState::single_layer(s)
}

/// Mean cross-entropy of the gated network, evaluated one sample at a time.
pub fn reference_loss(net: &ParticipatingNet, batch: &Matrix, labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for r in 0..batch.rows() {
        let mut act: Vec<f64> = batch.row(r).to_vec();
        for layer in &net.hidden {
            let mut next = Vec::with_capacity(layer.width());
            for i in 0..layer.width() {
                let mut z = layer.biases[i];
                for (k, a) in act.iter().enumerate() {
                    z += layer.weights.get(i, k) * a;
                }
                let gated = layer.participation[i] * z;
                next.push(if gated > 0.0 { gated } else { 0.0 });
            }
            act = next;
        }
        let classes = net.output.biases.len();
        let mut logits = Vec::with_capacity(classes);
        for c in 0..classes {
            let mut v = net.output.biases[c];
            for (k, a) in act.iter().enumerate() {
                v += net.output.weights.get(c, k) * a;
            }
            logits.push(v);
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - logits[labels[r] as usize];
    }
    total / batch.rows() as f64
}

/// Central differences of [`reference_loss`] for every weight and bias, the
/// raw-group directional derivatives `d/dc L(c * theta_i)` and the gate
/// derivatives `dL/ds_i`.
pub fn finite_diff_loss_grad(
    net: &ParticipatingNet,
    batch: &Matrix,
    labels: &[u8],
    step: f64,
) -> GradientBundle {
    let h = step;
    let central = |perturb: &dyn Fn(&mut ParticipatingNet, f64)| {
        let mut plus = net.clone();
        perturb(&mut plus, h);
        let mut minus = net.clone();
        perturb(&mut minus, -h);
        (reference_loss(&plus, batch, labels) - reference_loss(&minus, batch, labels)) / (2.0 * h)
    };

    let mut hidden = Vec::new();
    let mut raw_benefit = Vec::new();
    let mut effective_benefit = Vec::new();
    for l in 0..net.hidden.len() {
        let (rows, cols) = net.hidden[l].weights.shape();
        let mut gw = Matrix::zeros(rows, cols);
        let mut gb = vec![0.0; rows];
        for i in 0..rows {
            for k in 0..cols {
                gw.set(i, k, central(&|n, d| {
                    let v = n.hidden[l].weights.get(i, k);
                    n.hidden[l].weights.set(i, k, v + d);
                }));
            }
            gb[i] = central(&|n, d| n.hidden[l].biases[i] += d);
            raw_benefit.push(central(&|n, d| {
                n.hidden[l].weights.row_mut(i).iter_mut().for_each(|w| *w *= 1.0 + d);
                n.hidden[l].biases[i] *= 1.0 + d;
            }));
            effective_benefit.push(central(&|n, d| n.hidden[l].participation[i] += d));
        }
        hidden.push(LayerGrads {
            weights: gw,
            biases: gb,
        });
    }

    let (rows, cols) = net.output.weights.shape();
    let mut gw = Matrix::zeros(rows, cols);
    let mut gb = vec![0.0; rows];
    for c in 0..rows {
        for k in 0..cols {
            gw.set(c, k, central(&|n, d| {
                let v = n.output.weights.get(c, k);
                n.output.weights.set(c, k, v + d);
            }));
        }
        gb[c] = central(&|n, d| n.output.biases[c] += d);
    }

    GradientBundle {
        hidden,
        output: LayerGrads {
            weights: gw,
            biases: gb,
        },
        raw_benefit,
        effective_benefit,
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between two gradient bundles of equal shape, with
/// the name of the worst entry.
pub fn max_relative_error(
    analytic: &GradientBundle,
    numeric: &GradientBundle,
    floor: f64,
) -> (f64, String) {
    let mut worst = (0.0, String::from("none"));
    let mut visit = |name: String, a: &[f64], b: &[f64]| {
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            let e = relative_error(*x, *y, floor);
            if e > worst.0 || e.is_nan() {
                worst = (e, format!("{name}[{k}]: analytic {x:e} vs numeric {y:e}"));
            }
        }
    };
    for (l, (a, b)) in analytic.hidden.iter().zip(&numeric.hidden).enumerate() {
        visit(format!("hidden{l}.weights"), a.weights.data(), b.weights.data());
        visit(format!("hidden{l}.biases"), &a.biases, &b.biases);
    }
    visit(
        "output.weights".into(),
        analytic.output.weights.data(),
        numeric.output.weights.data(),
    );
    visit("output.biases".into(), &analytic.output.biases, &numeric.output.biases);
    visit("raw_benefit".into(), &analytic.raw_benefit, &numeric.raw_benefit);
    visit(
        "effective_benefit".into(),
        &analytic.effective_benefit,
        &numeric.effective_benefit,
    );
    worst
}
