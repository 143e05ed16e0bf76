//! Self-contained check suites behind `eqprune verify`.
//!
//! Each check draws its instances from a seeded [`Rng`], so a failure can be
//! replayed from the seed and the instance index printed in its detail line.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use super::{
    finite_diff_loss_grad, grid_argmax_utility, grid_dominance, max_relative_error,
    relative_error, solve_decoupled_game, GridSpec,
};
use crate::error::{Error, Result};
use crate::game::{
    best_response_step, dominance_check, equilibrium_residual, GameConfig, ParticipationState,
    PlayerStat, PlayerStats,
};
use crate::mnist::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels};
use crate::mnist::{BatchPlan, NUM_CLASSES};
use crate::net::{Architecture, ParticipatingNet};
use crate::numkit::{Matrix, Rng};

/// Gradient checks must agree to this relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;
/// Magnitudes below this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const GRAD_TIME_LIMIT_SECS: f64 = 10.0;
pub const BEST_RESPONSE_TOLERANCE: f64 = 2e-4;
pub const BEST_RESPONSE_INSTANCES: usize = 1_000;
pub const DECOUPLED_INSTANCES: usize = 100;
pub const DECOUPLED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Grad,
    Game,
    Data,
    All,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Scope::Grad),
            "game" => Ok(Scope::Game),
            "data" => Ok(Scope::Data),
            "all" => Ok(Scope::All),
            other => Err(Error::invalid(format!(
                "unknown verify scope {other:?} (expected grad, game, data or all)"
            ))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Grad => "grad",
            Scope::Game => "game",
            Scope::Data => "data",
            Scope::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_owned(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run(scope: Scope, seed: u64) -> SuiteReport {
    let mut checks = Vec::new();
    if matches!(scope, Scope::Grad | Scope::All) {
        checks.push(gradient_check(&Architecture::new(6, vec![4], 3), seed, "grad/toy-6-4-3"));
        checks.push(gradient_check(&Architecture::new(5, vec![4, 3], 3), seed, "grad/toy-5-4-3-3"));
    }
    if matches!(scope, Scope::Game | Scope::All) {
        checks.push(best_response_vs_grid(seed));
        checks.push(pruning_condition(seed));
        checks.push(decoupled_convergence(seed));
        checks.push(utility_gradient_fd(seed));
        checks.push(dominance_vs_grid(seed));
    }
    if matches!(scope, Scope::Data | Scope::All) {
        checks.push(idx_round_trip(seed));
        checks.push(idx_rejects_corruption());
        checks.push(batch_coverage(seed));
    }
    SuiteReport { checks }
}

/// A small net with random biases and gates so that no gradient path is
/// trivially zero.
pub fn toy_problem(arch: &Architecture, seed: u64, batch: usize) -> Result<(ParticipatingNet, Matrix, Vec<u8>)> {
    let mut rng = Rng::new(seed);
    let mut net = ParticipatingNet::new(arch, &mut rng)?;
    for layer in &mut net.hidden {
        for b in &mut layer.biases {
            *b = rng.uniform(-0.5, 0.5)?;
        }
        for s in &mut layer.participation {
            *s = rng.uniform(0.2, 1.0)?;
        }
    }
    for b in &mut net.output.biases {
        *b = rng.uniform(-0.5, 0.5)?;
    }
    let mut x = Matrix::zeros(batch, arch.inputs);
    for v in x.data_mut() {
        *v = rng.uniform(-1.0, 1.0)?;
    }
    let labels = (0..batch).map(|_| rng.below(arch.classes as u64) as u8).collect();
    Ok((net, x, labels))
}

fn gradient_check(arch: &Architecture, seed: u64, name: &str) -> CheckResult {
    let started = Instant::now();
    let outcome = (|| -> Result<(f64, String)> {
        let (net, x, labels) = toy_problem(arch, seed, 8)?;
        let (_, analytic) = net.loss_and_backward(&x, &labels)?;
        let numeric = finite_diff_loss_grad(&net, &x, &labels, GridSpec::default().step);
        Ok(max_relative_error(&analytic, &numeric, GRAD_FLOOR))
    })();
    let secs = started.elapsed().as_secs_f64();
    match outcome {
        Ok((err, worst)) => CheckResult::new(
            name,
            err < GRAD_TOLERANCE && secs < GRAD_TIME_LIMIT_SECS,
            format!("max relative error {err:.3e} (limit {GRAD_TOLERANCE:e}) in {secs:.2}s, worst {worst}, seed {seed}"),
        ),
        Err(e) => CheckResult::new(name, false, format!("error: {e}")),
    }
}

/// Random game instance covering interior optima, the corners and the
/// zero-curvature case.
fn random_instance(rng: &mut Rng) -> (PlayerStat, GameConfig) {
    let u = |rng: &mut Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
    let cfg = GameConfig {
        alpha: u(rng, 0.5, 2.0),
        beta: if rng.below(10) == 0 { 0.0 } else { u(rng, 0.0, 1.0) },
        gamma: if rng.below(4) == 0 { 0.0 } else { u(rng, 0.0, 0.5) },
        ..GameConfig::default()
    };
    let stat = PlayerStat::new(u(rng, -1.0, 2.0), u(rng, 0.0, 4.0), 0.0);
    (stat, cfg)
}

fn best_response_vs_grid(seed: u64) -> CheckResult {
    let name = "game/best-response-grid";
    let mut rng = Rng::new(seed);
    let grid = GridSpec::default();
    let mut worst = (0.0f64, String::from("none"));
    for k in 0..BEST_RESPONSE_INSTANCES {
        let (stat, cfg) = random_instance(&mut rng);
        let stats = PlayerStats::new(vec![stat]);
        let oracle = match grid_argmax_utility(0, &[0.5], &stats, &cfg, &grid) {
            Ok(v) => v,
            Err(e) => return CheckResult::new(name, false, format!("instance {k}: {e}")),
        };
        let err = (stat.best_response(&cfg) - oracle).abs();
        if err > worst.0 {
            worst = (err, format!("instance {k}: {stat:?} {cfg:?}"));
        }
    }
    CheckResult::new(
        name,
        worst.0 <= BEST_RESPONSE_TOLERANCE,
        format!(
            "{BEST_RESPONSE_INSTANCES} instances, max |BR - grid| {:.3e} (limit {BEST_RESPONSE_TOLERANCE:e}), worst {}, seed {seed}",
            worst.0, worst.1
        ),
    )
}

fn pruning_condition(seed: u64) -> CheckResult {
    let name = "game/pruning-condition";
    let mut rng = Rng::new(seed.wrapping_add(1));
    let mut checked = 0;
    for k in 0..BEST_RESPONSE_INSTANCES {
        let (stat, cfg) = random_instance(&mut rng);
        if cfg.beta * stat.norm_sq <= 0.0 {
            continue;
        }
        checked += 1;
        let pruned = stat.is_pruned_at_equilibrium(&cfg);
        let zero = stat.best_response(&cfg) == 0.0;
        if pruned != zero {
            return CheckResult::new(
                name,
                false,
                format!("instance {k}: pruned={pruned} but BR==0 is {zero}; {stat:?} {cfg:?}, seed {seed}"),
            );
        }
    }
    CheckResult::new(name, true, format!("{checked} instances with positive curvature agree, seed {seed}"))
}

fn decoupled_convergence(seed: u64) -> CheckResult {
    let name = "game/decoupled-convergence";
    let mut rng = Rng::new(seed.wrapping_add(2));
    let mut worst = 0.0f64;
    for k in 0..DECOUPLED_INSTANCES {
        let n = 1 + rng.below(50) as usize;
        let (_, cfg) = random_instance(&mut rng);
        let players: Vec<PlayerStat> = (0..n).map(|_| random_instance(&mut rng).0).collect();
        let stats = PlayerStats::new(players);
        let s0: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let run = || -> Result<(f64, f64)> {
            let mut state = ParticipationState::single_layer(s0.clone())?;
            for _ in 0..2 {
                state = best_response_step(&state, &stats, &cfg)?;
            }
            let residual = equilibrium_residual(&state, &stats, &cfg)?;
            let exact = solve_decoupled_game(&stats, &cfg)?;
            let gap = state
                .values()
                .iter()
                .zip(exact.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok((residual, gap))
        };
        match run() {
            Ok((residual, gap)) => {
                worst = worst.max(residual).max(gap);
                if residual >= DECOUPLED_TOLERANCE || gap >= DECOUPLED_TOLERANCE {
                    return CheckResult::new(
                        name,
                        false,
                        format!("instance {k}: residual {residual:e}, gap to exact {gap:e}, seed {seed}"),
                    );
                }
            }
            Err(e) => return CheckResult::new(name, false, format!("instance {k}: {e}")),
        }
    }
    CheckResult::new(
        name,
        true,
        format!("{DECOUPLED_INSTANCES} games at the exact equilibrium after 2 sweeps, max deviation {worst:.1e}, seed {seed}"),
    )
}

fn utility_gradient_fd(seed: u64) -> CheckResult {
    let name = "game/utility-gradient";
    let mut rng = Rng::new(seed.wrapping_add(3));
    let h = GridSpec::default().step;
    let mut worst = 0.0f64;
    for k in 0..BEST_RESPONSE_INSTANCES {
        let (mut stat, mut cfg) = random_instance(&mut rng);
        stat.competition = rng.next_f64();
        cfg.eta = rng.next_f64();
        let s = 0.01 + 0.98 * rng.next_f64();
        let fd = (stat.utility(s + h, &cfg) - stat.utility(s - h, &cfg)) / (2.0 * h);
        let err = relative_error(stat.utility_gradient(s, &cfg), fd, 1.0);
        worst = worst.max(err);
        if err > 1e-8 {
            return CheckResult::new(name, false, format!("instance {k} at s={s}: error {err:e}, seed {seed}"));
        }
    }
    CheckResult::new(name, true, format!("max error {worst:.1e} against central differences, seed {seed}"))
}

fn dominance_vs_grid(seed: u64) -> CheckResult {
    let name = "game/dominance";
    let mut rng = Rng::new(seed.wrapping_add(4));
    let mut dominated = 0;
    for k in 0..100 {
        let (stat, mut cfg) = random_instance(&mut rng);
        cfg.eta = rng.next_f64();
        let lo = rng.next_f64() * 2.0 - 1.0;
        let range = (lo, lo + rng.next_f64());
        let fast = match dominance_check(&stat, &cfg, range, 1001) {
            Ok(v) => v,
            Err(e) => return CheckResult::new(name, false, format!("instance {k}: {e}")),
        };
        let slow = grid_dominance(&stat, &cfg, range, 1001, 21);
        if fast != slow {
            return CheckResult::new(
                name,
                false,
                format!("instance {k}: check says {fast}, 2-D grid says {slow}; {stat:?} {cfg:?} {range:?}"),
            );
        }
        dominated += usize::from(fast);
    }
    CheckResult::new(name, true, format!("100 instances agree ({dominated} dominated), seed {seed}"))
}

fn idx_round_trip(seed: u64) -> CheckResult {
    let name = "data/idx-round-trip";
    let mut rng = Rng::new(seed);
    let (n, rows, cols) = (17, 5, 3);
    let pixels: Vec<f64> = (0..n * rows * cols).map(|_| rng.below(256) as f64 / 255.0).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.below(NUM_CLASSES as u64) as u8).collect();
    let result = (|| -> Result<bool> {
        let images = Matrix::from_vec(n, rows * cols, pixels)?;
        let bytes = encode_idx_images(&images, rows as u32, cols as u32)?;
        let back = parse_idx_images(&bytes)?;
        let lab = parse_idx_labels(&encode_idx_labels(&labels))?;
        Ok(back == images && lab == labels)
    })();
    match result {
        Ok(ok) => CheckResult::new(name, ok, format!("{n} images of {rows}x{cols}, seed {seed}")),
        Err(e) => CheckResult::new(name, false, format!("error: {e}")),
    }
}

fn idx_rejects_corruption() -> CheckResult {
    let name = "data/idx-corruption";
    let good = encode_idx_labels(&[1, 2, 3]);
    let mut bad_magic = good.clone();
    bad_magic[3] = 0x03;
    let mut bad_label = good.clone();
    bad_label[9] = 10;
    let truncated = &good[..good.len() - 1];
    let rejected = [
        parse_idx_labels(&bad_magic).is_err(),
        parse_idx_labels(&bad_label).is_err(),
        parse_idx_labels(truncated).is_err(),
        parse_idx_images(&good).is_err(),
    ];
    CheckResult::new(
        name,
        rejected.iter().all(|&r| r),
        format!("rejections (magic, label, truncation, wrong kind): {rejected:?}"),
    )
}

fn batch_coverage(seed: u64) -> CheckResult {
    let name = "data/batch-coverage";
    let mut rng = Rng::new(seed);
    let (len, bs) = (1_000, 128);
    let mut plan = match BatchPlan::new(len, bs, &mut rng) {
        Ok(p) => p,
        Err(e) => return CheckResult::new(name, false, format!("error: {e}")),
    };
    for epoch in 0..3 {
        let mut seen = vec![0u32; len];
        for _ in 0..plan.batches_per_epoch() {
            for i in plan.next_indices(&mut rng) {
                seen[i] += 1;
            }
        }
        if seen.iter().any(|&c| c != 1) {
            return CheckResult::new(name, false, format!("epoch {epoch} did not visit every sample once, seed {seed}"));
        }
    }
    CheckResult::new(name, true, format!("3 epochs of {len} samples in batches of {bs}, seed {seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_parsing() {
        assert_eq!("grad".parse::<Scope>().unwrap(), Scope::Grad);
        assert_eq!("all".parse::<Scope>().unwrap().to_string(), "all");
        assert!("everything".parse::<Scope>().is_err());
    }

    #[test]
    fn full_suite_passes() {
        let report = run(Scope::All, 7);
        for c in &report.checks {
            println!("{c}");
        }
        assert_eq!(report.checks.len(), 10);
        assert!(report.passed());
    }
}
