//! The participation game: each hidden neuron chooses a gate `s_i in [0, 1]`
//! to maximize
//!
//! ```text
//! U_i = alpha * s_i * g_i - (beta * |theta_i|^2 * s_i^2 + gamma * |s_i| + eta * s_i * c_i)
//! ```
//!
//! where `g_i = <grad_theta_i L, theta_i>` and `c_i = sum_{j != i} s_j <theta_i, theta_j>`
//! over players of the same layer. Everything here is a pure function of the
//! gate vector and per-player statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::PlayerId;

/// Coefficients of the utility and the participation step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub alpha: f64,
    /// L2 (redundancy) cost.
    pub beta: f64,
    /// L1 (sparsity) cost.
    pub gamma: f64,
    /// Competition cost.
    pub eta: f64,
    pub lr_s: f64,
    /// Gates below this value count as pruned.
    pub epsilon: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            eta: 0.0,
            lr_s: 0.001,
            epsilon: 0.01,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
            ("lr_s", self.lr_s),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// How the benefit inner product enters the utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenefitMode {
    /// `g_i` as computed, sign included.
    #[default]
    Signed,
    /// `|g_i|`.
    Abs,
}

impl std::str::FromStr for BenefitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signed" => Ok(BenefitMode::Signed),
            "abs" => Ok(BenefitMode::Abs),
            other => Err(Error::invalid(format!(
                "benefit_mode must be signed|abs, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for BenefitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenefitMode::Signed => "signed",
            BenefitMode::Abs => "abs",
        })
    }
}

impl BenefitMode {
    pub fn apply(self, g: f64) -> f64 {
        match self {
            BenefitMode::Signed => g,
            BenefitMode::Abs => g.abs(),
        }
    }
}

/// Statistics of one player at the current parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlayerStat {
    /// `<grad L, theta_i>` (after the benefit mode has been applied).
    pub benefit: f64,
    /// `|theta_i|^2`.
    pub norm_sq: f64,
    /// `sum_{j != i} s_j <theta_i, theta_j>`; left at zero when `eta == 0`.
    pub competition: f64,
}

impl PlayerStat {
    pub fn new(benefit: f64, norm_sq: f64, competition: f64) -> Self {
        PlayerStat {
            benefit,
            norm_sq,
            competition,
        }
    }

    /// `U_i` at gate value `s`.
    pub fn utility(&self, s: f64, cfg: &GameConfig) -> f64 {
        cfg.alpha * s * self.benefit
            - (cfg.beta * self.norm_sq * s * s + cfg.gamma * s.abs() + cfg.eta * s * self.competition)
    }

    /// `dU_i/ds_i`. At `s = 0` the L1 term is not differentiable; the
    /// smallest-magnitude element of the superdifferential is returned, which
    /// is `0` whenever `|alpha*g - eta*c| <= gamma`. A zero gate is then held
    /// in place exactly when zero is its best response.
    pub fn utility_gradient(&self, s: f64, cfg: &GameConfig) -> f64 {
        let smooth = cfg.alpha * self.benefit - 2.0 * cfg.beta * self.norm_sq * s
            - cfg.eta * self.competition;
        if s > 0.0 {
            smooth - cfg.gamma
        } else if s < 0.0 {
            smooth + cfg.gamma
        } else if smooth > cfg.gamma {
            smooth - cfg.gamma
        } else if smooth < -cfg.gamma {
            smooth + cfg.gamma
        } else {
            0.0
        }
    }

    /// Net marginal benefit of opening the gate: `alpha*g - gamma - eta*c`.
    pub fn net_benefit(&self, cfg: &GameConfig) -> f64 {
        cfg.alpha * self.benefit - cfg.gamma - cfg.eta * self.competition
    }

    /// Maximizer of the utility over `[0, 1]`: the soft-thresholded vertex
    /// when the quadratic cost is positive, otherwise all-or-nothing.
    pub fn best_response(&self, cfg: &GameConfig) -> f64 {
        let curvature = cfg.beta * self.norm_sq;
        let numerator = self.net_benefit(cfg);
        if numerator <= 0.0 {
            return 0.0;
        }
        if curvature > 0.0 {
            (numerator / (2.0 * curvature)).min(1.0)
        } else {
            1.0
        }
    }

    /// Costs dominate benefits, so zero participation is optimal. Equality
    /// counts as pruned so the condition matches `best_response == 0`.
    pub fn is_pruned_at_equilibrium(&self, cfg: &GameConfig) -> bool {
        cfg.alpha * self.benefit <= cfg.gamma + cfg.eta * self.competition
    }
}

/// Per-player statistics, indexed by player id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlayerStats {
    pub players: Vec<PlayerStat>,
}

impl PlayerStats {
    pub fn new(players: Vec<PlayerStat>) -> Self {
        PlayerStats { players }
    }

    pub fn len(&self) -> usize {
        self.players.len()
    }

    pub fn is_empty(&self) -> bool {
        self.players.is_empty()
    }
}

/// Gate values plus the player -> (layer, neuron) map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipationState {
    s: Vec<f64>,
    players: Vec<PlayerId>,
}

impl ParticipationState {
    /// All gates open.
    pub fn full(players: Vec<PlayerId>) -> Self {
        ParticipationState {
            s: vec![1.0; players.len()],
            players,
        }
    }

    pub fn new(s: Vec<f64>, players: Vec<PlayerId>) -> Result<Self> {
        if s.len() != players.len() {
            return Err(Error::invalid(format!(
                "{} gate values for {} players",
                s.len(),
                players.len()
            )));
        }
        if let Some(v) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("gate value {v} outside [0, 1]")));
        }
        Ok(ParticipationState { s, players })
    }

    /// Players numbered `0..n` in a single layer; handy for standalone games.
    pub fn single_layer(s: Vec<f64>) -> Result<Self> {
        let players = (0..s.len()).map(|neuron| PlayerId { layer: 0, neuron }).collect();
        ParticipationState::new(s, players)
    }

    pub fn values(&self) -> &[f64] {
        &self.s
    }

    pub fn players(&self) -> &[PlayerId] {
        &self.players
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.s
    }
}

fn check_lengths(n_s: usize, stats: &PlayerStats) -> Result<()> {
    if n_s != stats.len() {
        return Err(Error::invalid(format!(
            "{n_s} gate values but {} player statistics",
            stats.len()
        )));
    }
    Ok(())
}

fn stat_at(i: usize, s: &[f64], stats: &PlayerStats) -> Result<(f64, PlayerStat)> {
    check_lengths(s.len(), stats)?;
    match (s.get(i), stats.players.get(i)) {
        (Some(&si), Some(&st)) => Ok((si, st)),
        _ => Err(Error::Index {
            op: "player",
            index: i,
            len: s.len(),
        }),
    }
}

pub fn utility(i: usize, s: &[f64], stats: &PlayerStats, cfg: &GameConfig) -> Result<f64> {
    let (si, st) = stat_at(i, s, stats)?;
    Ok(st.utility(si, cfg))
}

pub fn utility_gradient(i: usize, s: &[f64], stats: &PlayerStats, cfg: &GameConfig) -> Result<f64> {
    let (si, st) = stat_at(i, s, stats)?;
    Ok(st.utility_gradient(si, cfg))
}

/// Player `i`'s best response. Competition in `stats` already reflects the
/// other players' gates, so `s_i` itself is not consulted.
pub fn best_response(i: usize, s: &[f64], stats: &PlayerStats, cfg: &GameConfig) -> Result<f64> {
    let (_, st) = stat_at(i, s, stats)?;
    Ok(st.best_response(cfg))
}

pub fn is_pruned_at_equilibrium(
    i: usize,
    s: &[f64],
    stats: &PlayerStats,
    cfg: &GameConfig,
) -> Result<bool> {
    let (_, st) = stat_at(i, s, stats)?;
    Ok(st.is_pruned_at_equilibrium(cfg))
}

/// One synchronous projected gradient-ascent step on every player's utility.
pub fn update_participation(
    state: &ParticipationState,
    stats: &PlayerStats,
    cfg: &GameConfig,
) -> Result<ParticipationState> {
    check_lengths(state.len(), stats)?;
    let s = state
        .s
        .iter()
        .zip(&stats.players)
        .map(|(&si, st)| project_unit(si + cfg.lr_s * st.utility_gradient(si, cfg)))
        .collect();
    Ok(ParticipationState {
        s,
        players: state.players.clone(),
    })
}

/// Every player moved to its best response against the same statistics.
pub fn best_response_step(
    state: &ParticipationState,
    stats: &PlayerStats,
    cfg: &GameConfig,
) -> Result<ParticipationState> {
    check_lengths(state.len(), stats)?;
    Ok(ParticipationState {
        s: stats.players.iter().map(|st| st.best_response(cfg)).collect(),
        players: state.players.clone(),
    })
}

/// `max_i |s_i - BR_i(s)|`: zero exactly at a best-response fixed point.
pub fn equilibrium_residual(
    state: &ParticipationState,
    stats: &PlayerStats,
    cfg: &GameConfig,
) -> Result<f64> {
    check_lengths(state.len(), stats)?;
    Ok(state
        .s
        .iter()
        .zip(&stats.players)
        .map(|(&si, st)| (si - st.best_response(cfg)).abs())
        .fold(0.0, f64::max))
}

/// Sampled test that `s_i = 0` strictly beats every positive gate value for
/// every competition level in `[c_min, c_max]`.
///
/// `points` grid values are placed on `[0, 1]`; all except `0` are checked.
/// The competition term is linear in `c` with a nonpositive slope, so the
/// binding case is `c_min` and only that column needs evaluating.
pub fn dominance_check(
    stat: &PlayerStat,
    cfg: &GameConfig,
    competition_range: (f64, f64),
    points: usize,
) -> Result<bool> {
    let (c_min, c_max) = competition_range;
    if !(c_min.is_finite() && c_max.is_finite() && c_min <= c_max) {
        return Err(Error::invalid(format!(
            "competition range must be finite with min <= max, got [{c_min}, {c_max}]"
        )));
    }
    if points < 2 {
        return Err(Error::invalid("dominance grid needs at least 2 points"));
    }
    let worst = PlayerStat {
        competition: c_min,
        ..*stat
    };
    let zero = worst.utility(0.0, cfg);
    let step = 1.0 / (points - 1) as f64;
    Ok((1..points).all(|k| worst.utility(k as f64 * step, cfg) < zero))
}

#[inline]
pub fn project_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(alpha: f64, beta: f64, gamma: f64, eta: f64) -> GameConfig {
        GameConfig {
            alpha,
            beta,
            gamma,
            eta,
            ..GameConfig::default()
        }
    }

    #[test]
    fn utility_examples() {
        let st = PlayerStat::new(2.0, 1.0, 0.0);
        assert_eq!(st.utility(1.0, &cfg(1.0, 1.0, 0.0, 0.0)), 1.0);
        assert_eq!(st.utility(0.0, &cfg(3.0, 2.0, 0.5, 0.7)), 0.0);
        let l1 = PlayerStat::new(0.0, 0.0, 0.0);
        assert!((l1.utility(0.5, &cfg(0.0, 0.0, 0.1, 0.0)) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn utility_gradient_examples() {
        let st = PlayerStat::new(1.0, 2.0, 0.0);
        assert_eq!(st.utility_gradient(0.25, &cfg(1.0, 0.5, 0.0, 0.0)), 0.5);
        let flat = PlayerStat::new(0.0, 1.0, 0.0);
        let c = cfg(1.0, 0.3, 0.2, 0.0);
        assert_eq!(flat.utility_gradient(0.0, &c), 0.0);
        assert!(flat.utility(1e-4, &c) < flat.utility(0.0, &c));
        // Benefit below the L1 threshold: still held at zero.
        assert_eq!(PlayerStat::new(0.15, 1.0, 0.0).utility_gradient(0.0, &c), 0.0);
        // Above it: the right derivative.
        assert!((PlayerStat::new(0.5, 1.0, 0.0).utility_gradient(0.0, &c) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn best_response_examples() {
        let c = cfg(1.0, 0.4, 0.2, 0.0);
        assert_eq!(PlayerStat::new(1.0, 1.0, 0.0).best_response(&c), 1.0);
        assert_eq!(PlayerStat::new(0.1, 1.0, 0.0).best_response(&c), 0.0);
        // Degenerate norm: all-or-nothing.
        assert_eq!(PlayerStat::new(0.3, 0.0, 0.0).best_response(&c), 1.0);
        assert_eq!(PlayerStat::new(0.2, 0.0, 0.0).best_response(&c), 0.0);
        let interior = PlayerStat::new(0.8, 1.0, 0.0).best_response(&cfg(1.0, 1.0, 0.0, 0.0));
        assert!((interior - 0.4).abs() < 1e-15);
    }

    #[test]
    fn pruning_condition_examples() {
        assert!(PlayerStat::new(0.0, 1.0, 0.0).is_pruned_at_equilibrium(&cfg(1.0, 0.0, 0.1, 0.0)));
        assert!(!PlayerStat::new(1.0, 1.0, 0.0).is_pruned_at_equilibrium(&cfg(1.0, 0.0, 0.0, 0.0)));
        // Competition can tip the balance.
        let st = PlayerStat::new(0.5, 1.0, 2.0);
        assert!(st.is_pruned_at_equilibrium(&cfg(1.0, 0.1, 0.0, 0.3)));
        assert!(!st.is_pruned_at_equilibrium(&cfg(1.0, 0.1, 0.0, 0.2)));
    }

    #[test]
    fn update_examples() {
        let c = GameConfig {
            lr_s: 0.001,
            ..cfg(1.0, 0.0, 0.0, 0.0)
        };
        let zero = PlayerStats::new(vec![PlayerStat::default(); 3]);
        let st = ParticipationState::single_layer(vec![0.0, 0.3, 1.0]).unwrap();
        assert_eq!(update_participation(&st, &zero, &c).unwrap(), st);

        let down = PlayerStats::new(vec![PlayerStat::new(-1.0, 0.0, 0.0)]);
        let st = ParticipationState::single_layer(vec![0.0005]).unwrap();
        assert_eq!(update_participation(&st, &down, &c).unwrap().values(), &[0.0]);

        let up = PlayerStats::new(vec![PlayerStat::new(5.0, 0.0, 0.0)]);
        let st = ParticipationState::single_layer(vec![1.0]).unwrap();
        assert_eq!(update_participation(&st, &up, &c).unwrap().values(), &[1.0]);
    }

    #[test]
    fn residual_examples() {
        let c = cfg(1.0, 0.5, 0.1, 0.0);
        let stats = PlayerStats::new(vec![PlayerStat::new(0.0, 1.0, 0.0); 4]);
        let ones = ParticipationState::single_layer(vec![1.0; 4]).unwrap();
        assert_eq!(equilibrium_residual(&ones, &stats, &c).unwrap(), 1.0);
        let fixed = best_response_step(&ones, &stats, &c).unwrap();
        assert_eq!(equilibrium_residual(&fixed, &stats, &c).unwrap(), 0.0);
    }

    #[test]
    fn dominance_examples() {
        let c = cfg(1.0, 0.0, 0.1, 0.0);
        assert!(dominance_check(&PlayerStat::new(-0.3, 1.0, 0.0), &c, (0.0, 0.0), 101).unwrap());
        assert!(dominance_check(&PlayerStat::new(0.0, 1.0, 0.0), &c, (-1.0, 1.0), 11).unwrap());
        let cheap = cfg(1.0, 1e-6, 1e-6, 0.0);
        assert!(!dominance_check(&PlayerStat::new(10.0, 1.0, 0.0), &cheap, (0.0, 1.0), 101).unwrap());
        assert!(dominance_check(&PlayerStat::default(), &c, (1.0, 0.0), 11).is_err());
        assert!(dominance_check(&PlayerStat::default(), &c, (0.0, 1.0), 1).is_err());
    }

    #[test]
    fn length_and_index_errors() {
        let stats = PlayerStats::new(vec![PlayerStat::default(); 2]);
        let c = GameConfig::default();
        assert!(utility(0, &[1.0], &stats, &c).is_err());
        assert!(utility(2, &[1.0, 1.0], &stats, &c).is_err());
        let st = ParticipationState::single_layer(vec![1.0; 3]).unwrap();
        assert!(update_participation(&st, &stats, &c).is_err());
        assert!(ParticipationState::single_layer(vec![1.2]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GameConfig::default().validate().is_ok());
        assert!(GameConfig { beta: -1.0, ..GameConfig::default() }.validate().is_err());
        assert!(GameConfig { gamma: f64::NAN, ..GameConfig::default() }.validate().is_err());
        assert!(GameConfig { epsilon: 1.0, ..GameConfig::default() }.validate().is_err());
        assert!(GameConfig { lr_s: 0.0, ..GameConfig::default() }.validate().is_ok());
    }

    fn arb_case() -> impl Strategy<Value = (PlayerStat, GameConfig, f64)> {
        (
            -2.0f64..2.0,
            0.0f64..4.0,
            -1.0f64..1.0,
            (0.0f64..1.0, 0.0f64..1.0, 0.0f64..0.5, 0.0f64..0.5),
            0.0f64..1.0,
        )
            .prop_map(|(g, n, c, (a, b, gm, e), s)| {
                (PlayerStat::new(g, n, c), cfg(a, b, gm, e), s)
            })
    }

    proptest! {
        #[test]
        fn gradient_matches_central_difference((st, c, s) in arb_case()) {
            let s = 0.01 + 0.98 * s;
            let h = 1e-6;
            let fd = (st.utility(s + h, &c) - st.utility(s - h, &c)) / (2.0 * h);
            prop_assert!((fd - st.utility_gradient(s, &c)).abs() < 1e-8);
        }

        #[test]
        fn soft_threshold_consistency((st, c, _s) in arb_case()) {
            prop_assume!(c.beta * st.norm_sq > 0.0);
            let br = st.best_response(&c);
            prop_assert_eq!(br > 0.0, st.net_benefit(&c) > 0.0);
            prop_assert_eq!(br == 0.0, st.is_pruned_at_equilibrium(&c));
        }

        #[test]
        fn projection_keeps_gates_in_unit_interval(
            gs in proptest::collection::vec(-50.0f64..50.0, 1..20),
            steps in 1usize..50,
            lr in 0.0f64..0.5,
        ) {
            let c = GameConfig { lr_s: lr, ..cfg(1.0, 0.2, 0.1, 0.0) };
            let stats = PlayerStats::new(gs.iter().map(|&g| PlayerStat::new(g, 1.0, 0.0)).collect());
            let mut st = ParticipationState::single_layer(vec![1.0; gs.len()]).unwrap();
            for _ in 0..steps {
                st = update_participation(&st, &stats, &c).unwrap();
                prop_assert!(st.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn fixed_point_is_stationary_under_update((st, c, _s) in arb_case()) {
            let c = GameConfig { eta: 0.0, lr_s: 0.01, ..c };
            let stats = PlayerStats::new(vec![st]);
            let start = ParticipationState::single_layer(vec![1.0]).unwrap();
            let fixed = best_response_step(&start, &stats, &c).unwrap();
            prop_assert_eq!(equilibrium_residual(&fixed, &stats, &c).unwrap(), 0.0);
            let moved = update_participation(&fixed, &stats, &c).unwrap();
            let v = fixed.values()[0];
            // Interior optimum: zero gradient. Boundary optimum: projection holds it.
            prop_assert!((moved.values()[0] - v).abs() <= 1e-12);
        }
    }
}
