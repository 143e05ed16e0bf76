use eqprune::checkpoint;
use eqprune::experiment::metrics_csv;
use eqprune::game::update_participation;
use eqprune::numkit::Matrix;
use eqprune::trainer::{compute_sparsity, finalize_prune, participation_histogram, train};
use eqprune::{
    Architecture, Dataset, GameConfig, ParticipatingNet, ParticipationState, PlayerStat, PlayerStats,
    Rng, TrainConfig,
};

/// Three fixed Gaussian blobs in 12 dimensions, clipped to [0, 1]; `seed`
/// only changes which points are drawn.
fn blobs(n: usize, seed: u64) -> Dataset {
    let mut centers_rng = Rng::new(99);
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..12).map(|_| centers_rng.next_f64()).collect())
        .collect();
    let mut rng = Rng::new(seed);
    let mut x = Matrix::zeros(n, 12);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let c = rng.below(3) as usize;
        for k in 0..12 {
            x.set(r, k, (centers[c][k] + 0.1 * rng.normal()).clamp(0.0, 1.0));
        }
        y.push(c as u8);
    }
    Dataset::new(x, y).unwrap()
}

fn arch() -> Architecture {
    Architecture::new(12, vec![16, 8], 3)
}

fn small_cfg(seed: u64, game: GameConfig) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 32,
        lr_theta: 0.1,
        seed,
        game,
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig) -> eqprune::TrainOutcome {
    let net = ParticipatingNet::new(&arch(), &mut Rng::new(cfg.seed)).unwrap();
    train(net, &blobs(600, 1), &blobs(300, 2), cfg).unwrap()
}

#[test]
fn inert_gates_stay_open() {
    let game = GameConfig {
        lr_s: 0.0,
        ..GameConfig::default()
    };
    let out = run(&small_cfg(5, game));
    assert!(out.net.participation().iter().all(|&s| s == 1.0));
    assert!(out.metrics.iter().all(|m| m.sparsity == 0.0 && m.mean_participation == 1.0));
    assert!(out.summary.test_accuracy > 0.9, "{}", out.summary.test_accuracy);
}

#[test]
fn identical_seeds_give_identical_metrics() {
    let game = GameConfig {
        beta: 0.05,
        gamma: 0.05,
        ..GameConfig::default()
    };
    let a = run(&small_cfg(42, game));
    let b = run(&small_cfg(42, game));
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.net, b.net);
    let c = run(&small_cfg(43, game));
    assert_ne!(metrics_csv(&a.metrics), metrics_csv(&c.metrics));
}

#[test]
fn sparsity_and_active_count_agree() {
    let game = GameConfig {
        beta: 0.5,
        gamma: 0.1,
        lr_s: 0.05,
        ..GameConfig::default()
    };
    let out = run(&small_cfg(7, game));
    let n = arch().player_count() as f64;
    for m in &out.metrics {
        assert!((m.sparsity + m.active_neurons as f64 / n - 1.0).abs() < 1e-12);
    }
    assert_eq!(out.summary.histogram.total(), arch().player_count());
    assert_eq!(
        out.summary.pruned_players.len() + out.summary.active_neurons,
        arch().player_count()
    );
}

#[test]
fn checkpoint_round_trip_preserves_accuracy() {
    let game = GameConfig {
        beta: 0.05,
        gamma: 0.05,
        lr_s: 0.01,
        ..GameConfig::default()
    };
    let out = run(&small_cfg(3, game));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.bin");
    checkpoint::save(&path, &out.net, "seed = 3\n").unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.net, out.net);
    assert_eq!(back.config_text, "seed = 3\n");
    let test = blobs(300, 2);
    assert_eq!(back.net.accuracy(&test).unwrap(), out.summary.test_accuracy);
}

#[test]
fn divergence_is_reported() {
    let mut cfg = small_cfg(1, GameConfig::default());
    cfg.lr_theta = 1e12;
    let out = run(&cfg);
    let d = out.summary.divergence.expect("diverged");
    assert_eq!(d.epoch, 1);
    assert!(out.metrics.is_empty());
}

#[test]
fn l1_collapse_is_linear_in_exact_arithmetic() {
    // Dyadic step: lr_s * gamma = 2^-14, s0 = 3/4, so every iterate is exact.
    let cfg = GameConfig {
        gamma: 0.0625,
        lr_s: 0.0009765625,
        ..GameConfig::default()
    };
    let stats = PlayerStats::new(vec![PlayerStat::new(0.0, 1.0, 0.0); 4]);
    let mut st = ParticipationState::single_layer(vec![0.75; 4]).unwrap();
    let step = cfg.lr_s * cfg.gamma;
    let expected = (0.75 / step).ceil() as usize;
    let mut prev = 0.75;
    for k in 1..=expected + 100 {
        st = update_participation(&st, &stats, &cfg).unwrap();
        let s = st.values()[0];
        if k < expected {
            assert_eq!(prev - s, step, "update {k}");
        } else {
            assert_eq!(s, 0.0, "update {k}");
        }
        prev = s;
    }
    assert_eq!(expected, 12_288);
}

#[test]
fn finalize_prune_threshold() {
    let mut net = ParticipatingNet::new(&Architecture::new(3, vec![2], 2), &mut Rng::new(0)).unwrap();
    net.hidden[0].participation = vec![0.009, 0.011];
    let untouched = net.clone();
    let pruned = finalize_prune(&mut net, 0.01);
    assert_eq!(pruned, vec![0]);
    assert_eq!(net.hidden[0].participation, vec![0.0, 0.011]);
    assert!(net.hidden[0].weights.row(0).iter().all(|&w| w == 0.0));
    assert_eq!(net.hidden[0].weights.row(1), untouched.hidden[0].weights.row(1));

    let mut open = untouched.clone();
    open.hidden[0].participation = vec![0.5, 1.0];
    let before = open.clone();
    assert!(finalize_prune(&mut open, 0.01).is_empty());
    assert_eq!(open, before);
}

#[test]
fn uniform_histogram_within_three_sigma() {
    let mut rng = Rng::new(11);
    let n = 10_000;
    let s: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
    let h = participation_histogram(&s, 4).unwrap();
    let mean = n as f64 / 4.0;
    let sigma = (n as f64 * 0.25 * 0.75).sqrt();
    for c in h.counts {
        assert!((c as f64 - mean).abs() < 3.0 * sigma, "{c}");
    }
}

#[test]
fn untrained_net_is_at_chance() {
    let mut rng = Rng::new(5);
    let mut x = Matrix::zeros(10_000, 784);
    for v in x.data_mut() {
        *v = rng.next_f64();
    }
    let y: Vec<u8> = (0..10_000).map(|_| rng.below(10) as u8).collect();
    let data = Dataset::new(x, y).unwrap();
    let net = ParticipatingNet::new(&Architecture::mnist(), &mut rng).unwrap();
    let acc = net.accuracy(&data).unwrap();
    assert!((acc - 0.1).abs() < 0.05, "{acc}");
    let (sparsity, active) = compute_sparsity(&net.participation(), 0.01);
    assert_eq!((sparsity, active), (0.0, 768));
}
