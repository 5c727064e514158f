use std::f64::consts::PI;

use cirt::geometry::{make_graticule, RowPadding, WeatherState};
use cirt::model::checkpoint::{load_checkpoint, load_checkpoint_matching, read_checkpoint, save_checkpoint};
use cirt::model::{
    embed, frequency_attention, standard_attention, Cirt, FrequencyAttentionBlock, HeadDimMode, InputShape,
    ModelConfig, OutputKind, Parameters, PatchingMode, ScoreScale, LAYER_NORM_EPS,
};
use cirt::spectral::{naive_dft, naive_idft, Spectrum};
use cirt::Error;
use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

fn randomize<P: Parameters<f64>>(p: &mut P, rng: &mut ChaCha8Rng, scale: f64) {
    for (name, mut t) in p.tensors_mut() {
        let center = if name.ends_with("gamma") { 1.0 } else { 0.0 };
        t.mapv_inplace(|_| center + rng.random_range(-scale..scale));
    }
}

fn toy_config(fourier: bool, heads: HeadDimMode) -> ModelConfig {
    ModelConfig {
        hidden_dim: 8,
        num_layers: 1,
        num_heads: 2,
        use_fourier: fourier,
        head_dim_mode: heads,
        ..ModelConfig::default()
    }
}

/// Relative error between two gradient vectors, measured on their norms.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central-difference gradient of `loss` with respect to every tensor of `model`.
fn numeric_grads<P: Parameters<f64> + Clone>(model: &P, loss: impl Fn(&P) -> f64) -> Vec<(String, Vec<f64>)> {
    let h = 1e-5;
    let names: Vec<(String, usize)> = model.tensors().iter().map(|(n, t)| (n.clone(), t.len())).collect();
    names
        .into_iter()
        .enumerate()
        .map(|(ti, (name, len))| {
            let g = (0..len)
                .map(|i| {
                    let mut plus = model.clone();
                    *plus.tensors_mut()[ti].1.iter_mut().nth(i).unwrap() += h;
                    let mut minus = model.clone();
                    *minus.tensors_mut()[ti].1.iter_mut().nth(i).unwrap() -= h;
                    (loss(&plus) - loss(&minus)) / (2.0 * h)
                })
                .collect();
            (name, g)
        })
        .collect()
}

fn assert_grads_match<P: Parameters<f64>>(analytic: &P, numeric: &[(String, Vec<f64>)], tol: f64) {
    let analytic = analytic.tensors();
    assert_eq!(analytic.len(), numeric.len());
    for ((name, a), (nname, n)) in analytic.iter().zip(numeric) {
        assert_eq!(name, nname);
        let a: Vec<f64> = a.iter().copied().collect();
        let err = rel_err(&a, n);
        assert!(err <= tol, "{name}: relative error {err:e}");
        assert!(n.iter().any(|v| v.abs() > 1e-8), "{name}: gradient is identically zero");
    }
}

fn block_gradient_check(cfg: &ModelConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut block = FrequencyAttentionBlock::<f64>::new(cfg, &mut rng).unwrap();
    randomize(&mut block, &mut rng, 0.5);
    let tokens = 4;
    let x = uniform2(&mut rng, 2 * tokens, cfg.hidden_dim, 1.0);
    let r = uniform2(&mut rng, 2 * tokens, cfg.hidden_dim, 1.0);
    let loss = |b: &FrequencyAttentionBlock<f64>, x: ArrayView2<f64>| {
        let (out, _) = b.forward(x, tokens).unwrap();
        (&out * &r).sum()
    };

    let (_, cache) = block.forward(x.view(), tokens).unwrap();
    let mut grad = block.zeros_like();
    let dx = block.backward(&cache, r.view(), &mut grad);

    let numeric = numeric_grads(&block, |b| loss(b, x.view()));
    assert_grads_match(&grad, &numeric, 1e-6);

    let h = 1e-5;
    let mut fd = Vec::new();
    for i in 0..x.len() {
        let mut xp = x.clone();
        *xp.iter_mut().nth(i).unwrap() += h;
        let mut xm = x.clone();
        *xm.iter_mut().nth(i).unwrap() -= h;
        fd.push((loss(&block, xp.view()) - loss(&block, xm.view())) / (2.0 * h));
    }
    let analytic: Vec<f64> = dx.iter().copied().collect();
    assert!(rel_err(&analytic, &fd) <= 1e-6);
}

#[test]
fn block_gradients_fourier_split() {
    block_gradient_check(&toy_config(true, HeadDimMode::Split));
}

#[test]
fn block_gradients_fourier_literal() {
    block_gradient_check(&toy_config(true, HeadDimMode::PaperLiteral));
}

#[test]
fn block_gradients_standard() {
    block_gradient_check(&toy_config(false, HeadDimMode::Split));
    block_gradient_check(&toy_config(false, HeadDimMode::PaperLiteral));
}

#[test]
fn block_gradients_hidden_dim_scale() {
    block_gradient_check(&ModelConfig {
        score_scale: ScoreScale::HiddenDim,
        ..toy_config(true, HeadDimMode::Split)
    });
}

fn layer_norm(x: ArrayView1<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array1<f64> {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.mapv(|v| (v - mean) / (var + LAYER_NORM_EPS).sqrt()) * gamma + beta
}

fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Hand-composed block output for a single token, where attention reduces
/// to the value projection.
fn single_token_oracle(block: &FrequencyAttentionBlock<f64>, e: ArrayView1<f64>) -> Array1<f64> {
    let dims = block.dims();
    let n = layer_norm(e, &block.norm1.gamma, &block.norm1.beta);
    let c: Array1<f64> = if dims.fourier {
        let spec = naive_dft(n.view()).unwrap();
        ndarray::concatenate![Axis(0), spec.real, spec.imag]
    } else {
        n
    };
    let v = c.dot(&block.value);
    let mut u = Vec::new();
    for m in 0..dims.heads {
        let head = v.slice(s![m * dims.head_width..(m + 1) * dims.head_width]);
        if dims.fourier {
            let half = dims.head_width / 2;
            let spec = Spectrum {
                real: head.slice(s![..half]).to_owned(),
                imag: head.slice(s![half..]).to_owned(),
            };
            u.extend(naive_idft(&spec).unwrap());
        } else {
            u.extend(head.iter().copied());
        }
    }
    let u = Array1::from(u);
    let mlp = |z: &Array1<f64>| {
        let nz = layer_norm(z.view(), &block.norm2.gamma, &block.norm2.beta);
        let hidden = (nz.dot(&block.mlp_hidden.weight) + block.mlp_hidden.bias.as_ref().unwrap()).mapv(gelu_tanh);
        hidden.dot(&block.mlp_out.weight) + block.mlp_out.bias.as_ref().unwrap()
    };
    if u.len() == e.len() {
        let z = &e + &u;
        &z + &mlp(&z)
    } else {
        &e + &mlp(&u)
    }
}

#[test]
fn single_token_matches_composed_oracle() {
    for (fourier, heads) in [
        (true, HeadDimMode::Split),
        (true, HeadDimMode::PaperLiteral),
        (false, HeadDimMode::Split),
        (false, HeadDimMode::PaperLiteral),
    ] {
        let cfg = ModelConfig {
            hidden_dim: 12,
            num_heads: 3,
            ..toy_config(fourier, heads)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut block = FrequencyAttentionBlock::<f64>::new(&cfg, &mut rng).unwrap();
        randomize(&mut block, &mut rng, 0.4);
        let e = uniform2(&mut rng, 1, 12, 2.0);
        let got = if fourier {
            frequency_attention(e.view(), &block).unwrap()
        } else {
            standard_attention(e.view(), &block).unwrap()
        };
        let want = single_token_oracle(&block, e.row(0));
        assert_eq!(got.dim(), (1, 12));
        for (a, b) in got.row(0).iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "fourier={fourier} {heads:?}: {a} vs {b}");
        }
    }
}

#[test]
fn attention_variant_must_match_block() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let block = FrequencyAttentionBlock::<f64>::new(&toy_config(true, HeadDimMode::Split), &mut rng).unwrap();
    let e = Array2::zeros((3, 8));
    assert!(matches!(standard_attention(e.view(), &block), Err(Error::Config(_))));
}

#[test]
fn single_token_mixing_is_linear_sandwich() {
    let cfg = toy_config(true, HeadDimMode::Split);
    let d = cfg.hidden_dim;
    let dims = cfg.block_dims().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut block = FrequencyAttentionBlock::<f64>::new(&cfg, &mut rng).unwrap();
    randomize(&mut block, &mut rng, 0.5);
    let e = uniform2(&mut rng, 1, d, 1.0);

    let mut fwd = Array2::zeros((d, 2 * d));
    for n in 0..d {
        for k in 0..d {
            let a = 2.0 * PI * (k * n) as f64 / d as f64;
            fwd[[n, k]] = a.cos();
            fwd[[n, d + k]] = a.sin();
        }
    }
    let p = dims.head_out;
    let mut inv = Array2::zeros((dims.qkv_width(), dims.concat_width()));
    for m in 0..dims.heads {
        for k in 0..p {
            for n in 0..p {
                let a = 2.0 * PI * (k * n) as f64 / p as f64;
                inv[[m * dims.head_width + k, m * p + n]] = a.cos() / p as f64;
                inv[[m * dims.head_width + p + k, m * p + n]] = a.sin() / p as f64;
            }
        }
    }
    let linear = fwd.dot(&block.value).dot(&inv);
    let normed = layer_norm(e.row(0), &block.norm1.gamma, &block.norm1.beta);
    let want = normed.dot(&linear);

    let (_, cache) = block.forward(e.view(), 1).unwrap();
    let got = block.mixed(&cache);
    for (a, b) in got.row(0).iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn attention_is_permutation_equivariant() {
    for fourier in [true, false] {
        let cfg = toy_config(fourier, HeadDimMode::Split);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut block = FrequencyAttentionBlock::<f64>::new(&cfg, &mut rng).unwrap();
        randomize(&mut block, &mut rng, 0.5);
        let e = uniform2(&mut rng, 5, 8, 1.0);
        let perm = [3, 0, 4, 1, 2];
        let permuted = e.select(Axis(0), &perm);
        let (out, _) = block.forward(e.view(), 5).unwrap();
        let (pout, _) = block.forward(permuted.view(), 5).unwrap();
        let expect = out.select(Axis(0), &perm);
        assert!(pout.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn batched_rows_do_not_interact() {
    let cfg = toy_config(true, HeadDimMode::Split);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut block = FrequencyAttentionBlock::<f64>::new(&cfg, &mut rng).unwrap();
    randomize(&mut block, &mut rng, 0.5);
    let x = uniform2(&mut rng, 6, 8, 1.0);
    let (joint, _) = block.forward(x.view(), 3).unwrap();
    let (first, _) = block.forward(x.slice(s![..3, ..]), 3).unwrap();
    let (second, _) = block.forward(x.slice(s![3.., ..]), 3).unwrap();
    assert_eq!(joint.slice(s![..3, ..]), first);
    assert_eq!(joint.slice(s![3.., ..]), second);
}

#[test]
fn nan_input_reports_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let block = FrequencyAttentionBlock::<f64>::new(&toy_config(true, HeadDimMode::Split), &mut rng).unwrap();
    let mut x = Array2::zeros((2, 8));
    x[[1, 3]] = f64::NAN;
    match block.forward(x.view(), 2) {
        Err(Error::NumericalFailure { stage }) => assert_eq!(stage, "dft"),
        other => panic!("unexpected {other:?}"),
    }
}

fn toy_shape() -> InputShape {
    InputShape {
        lat_res_deg: 30.0,
        lon_res_deg: 60.0,
        num_vars: 2,
    }
}

fn toy_model_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 16,
        num_layers: 2,
        num_heads: 2,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn toy_state(seed: u64) -> WeatherState {
    let grid = make_graticule(30.0, 60.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array3::from_shape_simple_fn((7, 6, 2), || rng.random_range(-1.0f32..1.0));
    WeatherState::new(
        grid.into(),
        values,
        vec!["a".into(), "b".into()].into(),
        chrono::NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
    )
    .unwrap()
}

#[test]
fn toy_model_runs_end_to_end() {
    let model = Cirt::<f32>::new(toy_model_config(), toy_shape()).unwrap();
    assert_eq!(model.num_tokens(), 7);
    let state = toy_state(1);
    let out = model.forward(&state).unwrap();
    assert_eq!(out.weeks34.dim(), (7, 6, 2));
    assert_eq!(out.weeks56.dim(), (7, 6, 2));
    assert!(out.weeks34.iter().chain(out.weeks56.iter()).all(|v| v.is_finite()));
    assert_ne!(out.weeks34, out.weeks56);
}

#[test]
fn forward_is_deterministic() {
    let a = Cirt::<f32>::new(toy_model_config(), toy_shape()).unwrap();
    let b = Cirt::<f32>::new(toy_model_config(), toy_shape()).unwrap();
    let state = toy_state(4);
    assert_eq!(a.forward(&state).unwrap(), b.forward(&state).unwrap());
    assert_eq!(a.forward(&state).unwrap(), a.forward(&state).unwrap());
    let c = Cirt::<f32>::new(
        ModelConfig {
            seed: 4,
            ..toy_model_config()
        },
        toy_shape(),
    )
    .unwrap();
    assert_ne!(a.forward(&state).unwrap(), c.forward(&state).unwrap());
}

#[test]
fn forward_rejects_mismatched_state() {
    let model = Cirt::<f32>::new(
        toy_model_config(),
        InputShape {
            num_vars: 3,
            ..toy_shape()
        },
    )
    .unwrap();
    assert!(matches!(model.forward(&toy_state(1)), Err(Error::Config(_))));
    let next_day = Cirt::<f32>::new(
        ModelConfig {
            output: OutputKind::NextDay,
            ..toy_model_config()
        },
        toy_shape(),
    )
    .unwrap();
    assert!(next_day.forward(&toy_state(1)).is_err());
    assert_eq!(next_day.predict(&[toy_state(1).values.view()]).unwrap()[0].len(), 1);
}

#[test]
fn embedding_contract() {
    let model = Cirt::<f32>::new(toy_model_config(), toy_shape()).unwrap();
    let mut emb = model.embedding.clone();
    let zero = cirt::geometry::circular_patch(&WeatherState {
        values: Array3::zeros((7, 6, 2)),
        ..toy_state(1)
    })
    .unwrap();
    assert!(embed(&zero, &emb).unwrap().iter().all(|v| *v == 0.0));
    emb.position.mapv_inplace(|_| 0.25);
    emb.position[[3, 5]] = -2.0;
    assert_eq!(embed(&zero, &emb).unwrap(), emb.position);

    let patches = cirt::geometry::circular_patch(&toy_state(2)).unwrap();
    let e = embed(&patches, &emb).unwrap();
    let flat = patches.flat.mapv(|v| v);
    let want = flat.dot(&emb.projection) + &emb.position;
    assert_eq!(e, want);

    let other = Cirt::<f32>::new(
        toy_model_config(),
        InputShape {
            num_vars: 3,
            ..toy_shape()
        },
    )
    .unwrap();
    assert!(matches!(embed(&patches, &other.embedding), Err(Error::Structural(_))));
}

fn model_gradient_check(cfg: ModelConfig) {
    let mut model = Cirt::<f64>::new(cfg, toy_shape()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    randomize(&mut model, &mut rng, 0.3);
    let inputs: Vec<Array3<f64>> = (0..2)
        .map(|_| Array3::from_shape_simple_fn((7, 6, 2), || rng.random_range(-1.0..1.0)))
        .collect();
    let views: Vec<_> = inputs.iter().map(|a| a.view()).collect();
    let targets: Vec<Vec<Array3<f64>>> = (0..2)
        .map(|_| {
            (0..model.windows())
                .map(|_| Array3::from_shape_simple_fn((7, 6, 2), || rng.random_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    let loss = |m: &Cirt<f64>| {
        let preds = m.predict(&views).unwrap();
        preds
            .iter()
            .zip(&targets)
            .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a * b).sum()))
            .sum::<f64>()
    };
    let x = model.encode_batch(&views).unwrap();
    let (_, cache) = model.forward_tokens(x.view()).unwrap();
    let dy = model.encode_output_grad(&targets).unwrap();
    let grad = model.backward_tokens(&cache, dy.view());
    let numeric = numeric_grads(&model, loss);
    assert_grads_match(&grad, &numeric, 1e-6);
}

#[test]
fn model_gradients_circular() {
    model_gradient_check(ModelConfig {
        hidden_dim: 8,
        ..toy_model_config()
    });
}

#[test]
fn model_gradients_grid_with_padding() {
    // 60° patches on a 30° grid: 7 rows pad to 8.
    model_gradient_check(ModelConfig {
        hidden_dim: 8,
        patching_mode: PatchingMode::Grid,
        grid_patch_deg: 60.0,
        output: OutputKind::NextDay,
        ..toy_model_config()
    });
}

#[test]
fn head_output_survives_unpatch_repatch() {
    let model = Cirt::<f32>::new(toy_model_config(), toy_shape()).unwrap();
    let state = toy_state(6);
    let x = model.encode_batch(&[state.values.view()]).unwrap();
    let (y, _) = model.forward_tokens(x.view()).unwrap();
    let fields = model.decode_batch(y.view()).unwrap();
    let width = model.tokenizer().token_width();
    for (w, field) in fields[0].iter().enumerate() {
        let again = model.tokenizer().patch(field.view(), RowPadding::Replicate).unwrap();
        assert_eq!(again, y.slice(s![.., w * width..(w + 1) * width]));
    }
}

#[test]
fn default_configuration_structure() {
    let shape = InputShape {
        lat_res_deg: 1.5,
        lon_res_deg: 1.5,
        num_vars: 63,
    };
    let model = Cirt::<f32>::new(ModelConfig::default(), shape).unwrap();
    assert_eq!(model.num_tokens(), 121);
    assert_eq!(model.embedding.projection.dim(), (15120, 256));
    assert_eq!(model.embedding.position.dim(), (121, 256));

    let (d, wk) = (256usize, 15120usize);
    let block = 2 * d + 3 * (2 * d) * (2 * d) + 2 * d + 2 * (d * d + d);
    let expected = wk * d + 121 * d + 8 * block + 2 * d + d * d + d + d * 2 * wk + 2 * wk;
    assert_eq!(model.num_parameters(), expected);
    let ratio = expected as f64 / 16e6;
    assert!((0.8..=1.2).contains(&ratio), "ratio {ratio}");

    let grid = ModelConfig {
        patching_mode: PatchingMode::Grid,
        ..ModelConfig::default()
    };
    let grid_model = Cirt::<f32>::new(grid, shape).unwrap();
    assert_eq!(grid_model.num_tokens(), 61 * 120);
}

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let cfg = ModelConfig {
        patching_mode: PatchingMode::Grid,
        grid_patch_deg: 60.0,
        ..toy_model_config()
    };
    let model = Cirt::<f32>::new(cfg.clone(), toy_shape()).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    for ((n1, a), (n2, b)) in model.tensors().iter().zip(loaded.tensors().iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a, b);
    }
    let state = toy_state(3);
    let p1 = model.predict(&[state.values.view()]).unwrap();
    let p2 = loaded.predict(&[state.values.view()]).unwrap();
    assert!(p1[0]
        .iter()
        .flatten()
        .zip(p2[0].iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    let names: Vec<String> = read_checkpoint(&path).unwrap().tensors.into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"blocks.1.attn.query".to_string()));
    assert!(names.contains(&"head.out.bias".to_string()));

    let other = ModelConfig { num_heads: 4, ..cfg.clone() };
    match load_checkpoint_matching(&path, &other, &toy_shape()) {
        Err(Error::CheckpointMismatch { key, expected, found }) => {
            assert_eq!(key, "model.num_heads");
            assert_eq!((expected.as_str(), found.as_str()), ("4", "2"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(load_checkpoint_matching(&path, &cfg, &toy_shape()).is_ok());

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Parse { .. })));
}
