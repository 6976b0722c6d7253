mod common;

use std::collections::BTreeMap;

use common::{fitted, sets, CHANNELS};
use grasp_core::datasets::{build_windows, fit_norm_stats, Direction, GraspSet, WindowConfig};
use grasp_core::evaluation::{cross_condition_matrix, CrossConfig};
use grasp_core::evaluation::{run_experiment, ExperimentConfig, ExperimentMode};
use grasp_core::model::TrainConfig;
use grasp_core::registry::{ModelSpec, Registry};
use grasp_core::signal::SensorTrace;
use grasp_core::stream::{replay, FrameClock, ReplayOptions, StepLabel};

#[test]
fn trained_model_flags_slips_and_not_constant_grip() {
    let data = sets(41, 60);
    let c = fitted("data-stft-lstm", &data, 16, 8);
    let held_out = sets(42, 12);

    for set in &held_out {
        let clock = FrameClock::new(set.freq_hz, 1).unwrap();
        let level = set.channels[CHANNELS[0]][200];
        let flat = SensorTrace {
            samples: vec![level; set.len()],
            ..set.trace(CHANNELS[0]).unwrap()
        };
        let events = replay(&[flat], c.as_ref(), &clock, ReplayOptions::default()).unwrap();
        let flagged = events
            .iter()
            .filter(|e| e.label == StepLabel::Unstable)
            .count();
        assert_eq!(flagged, 0, "constant {level} on {}", set.id);

        let Some(s) = set.slip_onset else { continue };
        for &ch in &CHANNELS {
            let events = replay(
                &[set.trace(ch).unwrap()],
                c.as_ref(),
                &clock,
                ReplayOptions::default(),
            )
            .unwrap();
            let hit = events
                .iter()
                .any(|e| e.label == StepLabel::Unstable && (s..=s + 160).contains(&e.step));
            assert!(hit, "{} channel {ch}: slip at {s} not flagged", set.id);
        }
    }
}

/// Scales every recording of a direction so the conditions sit at clearly
/// different force levels.
fn regimes(seed: u64, n: usize) -> Vec<GraspSet> {
    let mut out = sets(seed, n);
    for s in &mut out {
        let gain = match s.direction.unwrap() {
            Direction::Back => 0.4,
            Direction::Right => 1.0,
            Direction::Top => 2.5,
        };
        for ch in &mut s.channels {
            for v in ch.iter_mut() {
                *v = (*v * gain).round();
            }
        }
    }
    out
}

#[test]
fn cross_matrix_diagonal_dominates() {
    let data = regimes(43, 48);
    let registry = Registry::with_defaults();
    let cfg = CrossConfig {
        ratio: 0.75,
        seed: 0,
        channels: CHANNELS.to_vec(),
        window: WindowConfig::default(),
    };
    let m = cross_condition_matrix(&data, &cfg, |train| {
        let mut spec = ModelSpec::new(fit_norm_stats(train, &CHANNELS)?);
        spec.train = TrainConfig {
            lstm_units: 8,
            epochs: 6,
            patience: None,
            ..TrainConfig::default()
        };
        let mut model = registry.build("lstm", &spec)?;
        let w = build_windows(train, &CHANNELS, model.featurizer(), &cfg.window)?;
        model.fit(&w, &[])?;
        Ok(model)
    })
    .unwrap();
    assert_eq!(m.conditions, ["back", "right", "top"]);
    assert!(m.errors.is_empty(), "{:?}", m.errors);
    let rate = |r: usize, c: usize| m.cells[r][c].as_ref().unwrap().success_rate;
    let n = m.conditions.len();
    let diag: f64 = (0..n).map(|i| rate(i, i)).sum::<f64>() / n as f64;
    let off: f64 = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| rate(i, j))
        .sum::<f64>()
        / (n * (n - 1)) as f64;
    assert!(
        diag >= off,
        "diagonal {diag} vs off-diagonal {off}\n{}",
        m.to_text()
    );
    assert_eq!(m.to_csv().lines().count(), 1 + n * n);
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        models: vec!["lstm".into(), "nb".into()],
        seeds: vec![0, 1, 2],
        channels: CHANNELS.to_vec(),
        mode: ExperimentMode::PerDirection,
        train: TrainConfig {
            lstm_units: 4,
            epochs: 2,
            patience: None,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn experiment_is_deterministic_and_aggregates_seed_tables() {
    let data = sets(44, 30);
    let registry = Registry::with_defaults();
    let a = run_experiment(&small_config(), &data, &registry).unwrap();
    let b = run_experiment(&small_config(), &data, &registry).unwrap();
    assert_eq!(a.aggregate_csv(), b.aggregate_csv());
    for s in [0, 1, 2] {
        assert_eq!(a.seed_csv(s), b.seed_csv(s));
    }
    assert!(a.rows.iter().all(|r| r.error.is_none()), "{:?}", a.rows);

    // Average the per-seed tables by hand.
    let mut sums: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
    for s in [0, 1, 2] {
        let csv = a.seed_csv(s);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            let e = sums
                .entry((f[col("model")].into(), f[col("condition")].into()))
                .or_default();
            e.0 += f[col("success_rate")].parse::<f64>().unwrap();
            e.1 += f[col("window_success_rate")].parse::<f64>().unwrap();
            e.2 += 1;
        }
    }
    let agg = a.aggregate_csv();
    let mut lines = agg.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut seen = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (sr, wsr, n) = sums[&(f[col("model")].to_string(), f[col("condition")].to_string())];
        assert_eq!(n, 3);
        assert!(
            (f[col("success_rate")].parse::<f64>().unwrap() - sr / 3.0).abs() < 2e-6,
            "{line}"
        );
        assert!(
            (f[col("window_success_rate")].parse::<f64>().unwrap() - wsr / 3.0).abs() < 2e-6,
            "{line}"
        );
        seen += 1;
    }
    assert_eq!(seen, sums.len());
    assert_eq!(seen, 2 * 3);

    let dir = tempfile::tempdir().unwrap();
    let files = a.write(dir.path()).unwrap();
    assert!(files.iter().all(|p| p.exists()));
    assert_eq!(
        std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap(),
        agg
    );
}

#[test]
fn experiment_records_failing_cells() {
    let data = sets(45, 8);
    let mut cfg = small_config();
    cfg.seeds = vec![0];
    cfg.mode = ExperimentMode::Pooled;
    cfg.train.lr = -1.0;
    let r = run_experiment(&cfg, &data, &Registry::with_defaults()).unwrap();
    let lstm = r.rows.iter().find(|r| r.model == "lstm").unwrap();
    assert!(lstm.error.is_some() && lstm.report.is_none());
    let nb = r.rows.iter().find(|r| r.model == "nb").unwrap();
    assert!(nb.report.is_some());
    assert!(r
        .aggregate
        .iter()
        .any(|a| a.model == "lstm" && a.failed_seeds == [0]));
    cfg.models = vec!["nope".into()];
    assert!(run_experiment(&cfg, &data, &Registry::with_defaults()).is_err());
}
