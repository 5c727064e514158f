use std::sync::Arc;

use chrono::NaiveDate;
use cirt::data::{
    compute_stats, synth_generate, write_synthetic_dataset, Sample, Split, SplitData, SynthConfig, VarStats,
};
use cirt::geometry::{make_graticule, WeatherState};
use cirt::model::checkpoint::{load_checkpoint, save_checkpoint};
use cirt::model::{Cirt, ForecastPair, InputShape, ModelConfig, OutputKind, Parameters, PatchingMode};
use cirt::training::{
    evaluate_loss, rollout, rollout_batch, rollout_window_means, run_ablation_matrix, run_mode_comparison,
    s2s_loss, train, train_on, window_loss, ExperimentData, TrainConfig, TrainMode, BEST_CHECKPOINT,
    CHECKPOINT_DIR, HISTORY_FILE, ROLLOUT_DAYS,
};
use cirt::Error;
use ndarray::{Array3, ArrayView3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_simple_fn(dim, || rng.random_range(-3.0..3.0))
}

#[test]
fn loss_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let dim = (rng.random_range(1..6), rng.random_range(1..7), rng.random_range(1..4));
        let p: Vec<Array3<f64>> = (0..2).map(|_| random_field(&mut rng, dim)).collect();
        let t: Vec<Array3<f64>> = (0..2).map(|_| random_field(&mut rng, dim)).collect();
        let mut sum = 0.0;
        for w in 0..2 {
            for i in 0..dim.0 {
                for j in 0..dim.1 {
                    for k in 0..dim.2 {
                        sum += (p[w][[i, j, k]] - t[w][[i, j, k]]).powi(2);
                    }
                }
            }
        }
        let want = sum / (2 * dim.0 * dim.1 * dim.2) as f64;
        let (got, _) = window_loss(
            &[p[0].view(), p[1].view()],
            &[t[0].view(), t[1].view()],
            None,
        )
        .unwrap();
        assert!((got - want).abs() < 1e-12 * want.max(1.0));
    }
}

#[test]
fn loss_gradient_matches_formula_and_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dim = (3, 4, 2);
    let khw = (dim.0 * dim.1 * dim.2) as f64;
    let p: Vec<Array3<f64>> = (0..2).map(|_| random_field(&mut rng, dim)).collect();
    let t: Vec<Array3<f64>> = (0..2).map(|_| random_field(&mut rng, dim)).collect();
    let loss = |p: &[Array3<f64>]| {
        window_loss(&[p[0].view(), p[1].view()], &[t[0].view(), t[1].view()], None)
            .unwrap()
            .0
    };
    let (_, g) = window_loss(&[p[0].view(), p[1].view()], &[t[0].view(), t[1].view()], None).unwrap();
    let h = 1e-5;
    for w in 0..2 {
        for ((idx, gv), (pv, tv)) in g[w].indexed_iter().zip(p[w].iter().zip(t[w].iter())) {
            assert!((gv - (pv - tv) / khw).abs() < 1e-9);
            let mut up = p.clone();
            up[w][idx] += h;
            let mut down = p.clone();
            down[w][idx] -= h;
            let fd = (loss(&up) - loss(&down)) / (2.0 * h);
            assert!((fd - gv).abs() < 1e-9, "fd {fd} vs {gv}");
        }
    }
}

proptest! {
    #[test]
    fn constant_offset_gives_its_square(c in -50.0f64..50.0, h in 1usize..5, w in 1usize..6, k in 1usize..3, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_field(&mut rng, (h, w, k));
        let p = &t + c;
        let (l, _) = window_loss(&[p.view(), p.view()], &[t.view(), t.view()], None).unwrap();
        prop_assert!((l - c * c).abs() <= 1e-9 * c * c + 1e-12);
    }
}

#[test]
fn s2s_loss_on_samples() {
    let days = synth_generate(&make_graticule(30.0, 30.0).unwrap(), 2, 50, 1);
    let sample = cirt::data::build_targets(&days, 0).unwrap();
    let perfect = ForecastPair {
        weeks34: sample.target34.clone(),
        weeks56: sample.target56.clone(),
    };
    assert_eq!(s2s_loss(&perfect, &sample).unwrap(), 0.0);
    let shifted = ForecastPair {
        weeks34: &sample.target34 + 0.5,
        weeks56: &sample.target56 + 0.5,
    };
    assert!((s2s_loss(&shifted, &sample).unwrap() - 0.25).abs() < 1e-3);
    let bad = Sample {
        target56: Array3::zeros((2, 2, 2)),
        ..sample.clone()
    };
    assert!(matches!(s2s_loss(&perfect, &bad), Err(Error::Structural(_))));
}

fn toy_model() -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        num_layers: 1,
        num_heads: 2,
        grid_patch_deg: 60.0,
        ..ModelConfig::default()
    }
}

/// 49 consecutive days: eight direct samples at stride 1.
fn toy_split() -> SplitData {
    let days = synth_generate(&make_graticule(30.0, 30.0).unwrap(), 2, 49, 3);
    let names = days[0].var_names.to_vec();
    let stats = compute_stats(days.iter().map(|d| d.values.view()), &names).unwrap();
    SplitData::from_states(&days, &stats.stats, 1).unwrap()
}

#[test]
fn tiny_set_overfits() {
    let split = toy_split();
    assert_eq!(split.num_samples(), 8);
    let cfg = TrainConfig {
        batch_size: 8,
        learning_rate: 0.003,
        epochs: 300,
        ..TrainConfig::default()
    };
    let out = train_on(&split, None, &toy_model(), &cfg, None).unwrap();
    let last = out.final_loss(Split::Train).unwrap();
    assert!(
        last < 0.01 * out.initial_train_loss,
        "final {last} vs initial {}",
        out.initial_train_loss
    );
    assert_eq!(out.history.len(), 300);
    // Without validation data the retained model is the last one.
    assert_eq!(out.best_epoch, 300);
    let again = evaluate_loss(&out.model, &split, &cfg).unwrap();
    assert!(again < 0.01 * out.initial_train_loss);
}

#[test]
fn zero_epochs_returns_initialization() {
    let split = toy_split();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let out = train_on(&split, None, &toy_model(), &cfg, Some(dir.path())).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.best_epoch, 0);
    let fresh = Cirt::<f32>::new(
        toy_model(),
        InputShape {
            lat_res_deg: 30.0,
            lon_res_deg: 30.0,
            num_vars: 2,
        },
    )
    .unwrap();
    for ((_, a), (_, b)) in out.best.tensors().iter().zip(fresh.tensors().iter()) {
        assert_eq!(a, b);
    }
    assert!(dir.path().join(CHECKPOINT_DIR).join(BEST_CHECKPOINT).exists());
    assert_eq!(std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap(), "");
}

#[test]
fn seeds_control_the_history() {
    let split = toy_split();
    let cfg = TrainConfig {
        batch_size: 3,
        epochs: 3,
        ..TrainConfig::default()
    };
    let a = train_on(&split, Some(&split), &toy_model(), &cfg, None).unwrap();
    let b = train_on(&split, Some(&split), &toy_model(), &cfg, None).unwrap();
    let bits = |h: &[cirt::training::HistoryEntry]| h.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.history), bits(&b.history));
    let c = train_on(
        &split,
        Some(&split),
        &toy_model(),
        &TrainConfig { seed: 1, ..cfg.clone() },
        None,
    )
    .unwrap();
    assert_ne!(bits(&a.history), bits(&c.history));
    assert_eq!(a.history.len(), 6);
    assert_eq!(a.history[0].split, "train");
    assert_eq!(a.history[1].split, "val");
}

#[test]
fn history_log_and_best_checkpoint() {
    let split = toy_split();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 4,
        checkpoint_every: 2,
        ..TrainConfig::default()
    };
    let out = train_on(&split, Some(&split), &toy_model(), &cfg, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    let lines: Vec<String> = out.history.iter().map(|e| e.to_line()).collect();
    assert_eq!(log.lines().collect::<Vec<_>>(), lines);
    let best_val = out
        .history
        .iter()
        .filter(|e| e.split == "val")
        .min_by(|a, b| a.loss.total_cmp(&b.loss))
        .unwrap();
    assert_eq!(best_val.epoch, out.best_epoch);

    let ckpts = dir.path().join(CHECKPOINT_DIR);
    assert!(ckpts.join("epoch_002.ckpt").exists() && ckpts.join("epoch_004.ckpt").exists());
    let loaded = load_checkpoint(ckpts.join(BEST_CHECKPOINT)).unwrap();
    let x = [split.input(0)];
    let (a, b) = (out.best.predict(&x).unwrap(), loaded.predict(&x).unwrap());
    assert!(a[0][0].iter().zip(b[0][0].iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn checkpoint_roundtrip_after_training() {
    let split = toy_split();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = train_on(&split, None, &toy_model(), &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&out.model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let state = split.sample(2).input;
    assert_eq!(out.model.forward(&state).unwrap(), back.forward(&state).unwrap());
}

#[test]
fn overflow_is_a_training_failure() {
    let days = synth_generate(&make_graticule(30.0, 30.0).unwrap(), 2, 49, 3);
    let stats = vec![
        VarStats {
            name: "z500".into(),
            mean: 0.0,
            std: 1e-36,
        },
        VarStats {
            name: "t850".into(),
            mean: 0.0,
            std: 1e-36,
        },
    ];
    let split = SplitData::from_states(&days, &stats, 1).unwrap();
    let err = train_on(&split, None, &toy_model(), &TrainConfig::default(), None).unwrap_err();
    assert!(matches!(err, Error::TrainingFailure { step: 0 }), "{err:?}");
}

#[test]
fn autoregressive_mode_trains_next_day_head() {
    let split = toy_split();
    let cfg = TrainConfig {
        epochs: 2,
        mode: TrainMode::Autoregressive,
        ..TrainConfig::default()
    };
    let out = train_on(&split, Some(&split), &toy_model(), &cfg, None).unwrap();
    assert_eq!(out.model.config().output, OutputKind::NextDay);
    let seq = rollout(&out.model, &split.sample(0).input, ROLLOUT_DAYS).unwrap();
    assert_eq!(seq.len(), 42);
    assert_eq!(seq[41].valid_time, split.init_date(0) + chrono::Duration::days(42));
    let direct_cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let direct = train_on(&split, None, &toy_model(), &direct_cfg, None).unwrap();
    assert!(matches!(
        rollout(&direct.model, &split.sample(0).input, 3),
        Err(Error::Config(_))
    ));
}

fn identity(states: &[ArrayView3<'_, f32>]) -> cirt::Result<Vec<Array3<f32>>> {
    Ok(states.iter().map(|s| s.to_owned()).collect())
}

#[test]
fn identity_rollout_is_constant() {
    let grid = Arc::new(make_graticule(45.0, 90.0).unwrap());
    let names = Arc::new(vec!["a".to_string()]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values = Array3::from_shape_simple_fn((5, 4, 1), || rng.random_range(-1.0f32..1.0));
    let state = WeatherState::new(grid, values.clone(), names, NaiveDate::from_ymd_opt(2001, 3, 1).unwrap()).unwrap();
    let seq = rollout(&identity, &state, ROLLOUT_DAYS).unwrap();
    assert_eq!(seq.len(), 42);
    assert!(seq.iter().all(|s| s.values == values));
    let views: Vec<_> = seq.iter().map(|s| s.values.view()).collect();
    let means = rollout_window_means(&views).unwrap();
    for (a, b) in means.weeks34.iter().chain(means.weeks56.iter()).zip(values.iter().cycle()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn non_finite_rollout_reports_step() {
    let blowup = |states: &[ArrayView3<'_, f32>]| -> cirt::Result<Vec<Array3<f32>>> {
        Ok(states.iter().map(|s| s.mapv(|v| v * 1e20)).collect())
    };
    let init = Array3::from_elem((2, 2, 1), 1.0f32);
    let err = rollout_batch(&blowup, &[init.view()], 10).unwrap_err();
    // 1e20, 1e40 → inf at the second step.
    assert!(matches!(err, Error::RolloutFailure { step: 2 }), "{err:?}");
}

fn fixture(dir: &std::path::Path) -> ExperimentData {
    let m = write_synthetic_dataset(dir, &SynthConfig::default()).unwrap();
    ExperimentData::load(&m).unwrap()
}

#[test]
fn ablation_matrix_smoke_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(&dir.path().join("data"));
    let base = ModelConfig {
        hidden_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ..toy_model()
    };
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let out = dir.path().join("ablate");
    let report = run_ablation_matrix(&data, &base, &cfg, &[4], Some(&out)).unwrap();
    assert_eq!(report.labels(), vec!["grid", "grid+fourier", "circular", "circular+fourier"]);
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows.iter().all(|r| r.seed == 4 && r.epochs == 1));
    assert_eq!(report.rows[0].patching_mode, PatchingMode::Grid);
    assert!(report.rows[3].use_fourier);
    for r in &report.rows {
        assert_eq!(r.metrics.len(), 4);
        assert!(r.rmse("z500", cirt::metrics::Window::Weeks34).unwrap() > 0.0);
    }
    let table = report.to_table();
    assert!(table.contains("circular+fourier") && table.contains("z500 weeks34"));

    let again = run_ablation_matrix(&data, &base, &cfg, &[4], Some(&out)).unwrap();
    assert_eq!(again, report);
    let parsed: cirt::training::ExperimentReport = toml::from_str(&report.to_toml().unwrap()).unwrap();
    assert_eq!(parsed, report);
}

#[test]
fn mode_comparison_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_synthetic_dataset(dir.path(), &SynthConfig::default()).unwrap();
    let data = ExperimentData::load(&m).unwrap();
    let base = ModelConfig {
        hidden_dim: 8,
        num_layers: 1,
        num_heads: 2,
        ..toy_model()
    };
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let report = run_mode_comparison(&data, &base, &cfg, &[0, 1], None).unwrap();
    assert_eq!(report.labels(), vec!["direct", "autoregressive"]);
    assert_eq!(report.seeds(), vec![0, 1]);
    assert_eq!(report.rows[2].mode, TrainMode::Autoregressive);
    let (mean, spread) = report.summary("direct", "t850", cirt::metrics::Window::Weeks56).unwrap();
    assert!(mean > 0.0 && spread >= 0.0);

    // Training straight from the manifest agrees with training on its splits.
    let a = train(&m, &base, &cfg, None).unwrap();
    let b = train_on(&data.train, Some(&data.val), &base, &cfg, None).unwrap();
    assert_eq!(a.history, b.history);
}

#[test]
fn train_config_defaults_and_toml() {
    let d = TrainConfig::default();
    assert_eq!((d.batch_size, d.learning_rate, d.epochs), (16, 0.01, 20));
    assert_eq!(d.mode, TrainMode::Direct);
    assert!(!d.weighted_loss);
    let text = toml::to_string(&d).unwrap();
    assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), d);
    let partial: TrainConfig = toml::from_str("epochs = 3\nmode = \"autoregressive\"").unwrap();
    assert_eq!(partial.epochs, 3);
    assert_eq!(partial.batch_size, 16);
    assert!(toml::from_str::<TrainConfig>("epoch = 3").is_err());
    assert!(TrainConfig { batch_size: 0, ..d.clone() }.validate().is_err());
}
