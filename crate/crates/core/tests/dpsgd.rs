use hybrid_ad::compile::Matrix;
use hybrid_ad::dpsgd::{
    build_loss_graph, precompute_kernels, sample_lot, train, two_blobs, Activation, DataError, Dataset, DpsgdError,
    LossKind, ModelSpec, Sampling, TrainConfig, TrainMode,
};
use hybrid_ad::{grad, print_expr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BASE: &str = r#"
mode = "precomputed-k"
learning_rate = 0.5
noise_multiplier = 1.0
lot_size = 40
steps = 60
sampling = "poisson"
seed = 17

[model]
layers = [2, 4, 1]
activation = "tanh"
loss = "logistic"
init_seed = 3

[bounds]
x1 = [-3.0, 3.0]
x2 = [-3.0, 3.0]
y = [0.0, 1.0]

[precomputed-k]
weight_radius = 1.0

[per-step-k]
weight_radius = 1.0
budget = 2000

[clip-baseline]
clip_norm = 1.0

[lipschitz]
budget = 2000
"#;

fn config(edit: impl FnOnce(&mut TrainConfig)) -> TrainConfig {
    let mut c = TrainConfig::from_toml(BASE).unwrap();
    edit(&mut c);
    c
}

#[test]
fn linear_mse_model_has_three_parameters() {
    let m = build_loss_graph(&ModelSpec::new(&[2, 1], Activation::Linear, LossKind::Mse)).unwrap();
    assert_eq!(m.param_names(), ["w_1_1_1", "w_1_2_1", "b_1_1"]);
    assert_eq!(print_expr(&m.graph, m.loss), "(w_1_1_1*x1 + w_1_2_1*x2 + b_1_1 - y)^2");
}

#[test]
fn tanh_2_4_1_has_seventeen_parameters() {
    let spec = ModelSpec::new(&[2, 4, 1], Activation::Tanh, LossKind::Logistic);
    assert_eq!(spec.parameter_count(), 17);
    assert_eq!(build_loss_graph(&spec).unwrap().params.len(), 17);
}

#[test]
fn unsupported_models_are_rejected() {
    for spec in [
        ModelSpec::new(&[2], Activation::Tanh, LossKind::Mse),
        ModelSpec::new(&[2, 3], Activation::Tanh, LossKind::Mse),
        ModelSpec::new(&[2, 0, 1], Activation::Tanh, LossKind::Mse),
        ModelSpec::new(&[2, 3, 1], Activation::Linear, LossKind::Mse),
    ] {
        assert!(matches!(build_loss_graph(&spec), Err(DpsgdError::Model(_))));
    }
}

#[test]
fn loss_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (act, loss) in [
        (Activation::Tanh, LossKind::Logistic),
        (Activation::Sigmoid, LossKind::Mse),
        (Activation::Tanh, LossKind::Mse),
    ] {
        let m = build_loss_graph(&ModelSpec::new(&[2, 4, 1], act, loss)).unwrap();
        let mut g = m.graph.clone();
        let b = grad(&mut g, m.loss, &m.params).unwrap();
        for _ in 0..5 {
            let point: Vec<f64> = (0..g.vars().len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
            for (k, p) in m.params.iter().enumerate() {
                let sym = g.evaluate_dense(b.partials[k], &point).unwrap();
                let h = 1e-6;
                let mut up = point.clone();
                up[p.index()] += h;
                let mut dn = point.clone();
                dn[p.index()] -= h;
                let fd = (g.evaluate_dense(m.loss, &up).unwrap() - g.evaluate_dense(m.loss, &dn).unwrap()) / (2.0 * h);
                assert!((sym - fd).abs() <= 1e-5 * fd.abs().max(1.0), "{sym} vs {fd}");
            }
        }
    }
}

#[test]
fn kernels_agree_with_the_graph() {
    let m = build_loss_graph(&ModelSpec::new(&[2, 4, 1], Activation::Tanh, LossKind::Logistic)).unwrap();
    let k = precompute_kernels(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f64>> = (0..100).map(|_| (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let batch = Matrix::from_rows(20, &rows).unwrap();
    let grads = k.grad_kernel.execute(&batch).unwrap();
    let norms = k.norm_kernel.execute(&batch).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let g = &grads.data[i * 17..(i + 1) * 17];
        let euclid = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norms.data[i] - euclid).abs() <= 1e-12 * euclid);
        for (j, p) in k.partials.iter().enumerate() {
            assert_eq!(g[j].to_bits(), k.graph.evaluate_dense(*p, row).unwrap().to_bits());
        }
    }
    assert!(k.joint_instructions() < k.separate_naive_instructions());
}

#[test]
fn poisson_lot_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, l) = (200, 20);
    let draws = 10_000;
    let total: usize = (0..draws).map(|_| sample_lot(n, l, Sampling::Poisson, &mut rng).unwrap().len()).sum();
    let mean = total as f64 / draws as f64;
    let p = l as f64 / n as f64;
    let se = (n as f64 * p * (1.0 - p) / draws as f64).sqrt();
    assert!((mean - l as f64).abs() <= 3.0 * se, "{mean}");
}

#[test]
fn uniform_lots() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let lot = sample_lot(50, 7, Sampling::Uniform, &mut rng).unwrap();
        assert_eq!(lot.len(), 7);
        assert!(lot.windows(2).all(|w| w[0] < w[1]));
    }
    let a = sample_lot(50, 7, Sampling::Poisson, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = sample_lot(50, 7, Sampling::Poisson, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        sample_lot(5, 7, Sampling::Uniform, &mut ChaCha8Rng::seed_from_u64(4)),
        Err(DpsgdError::LotTooLarge { .. })
    ));
}

#[test]
fn precomputed_mode_never_clips() {
    let data = two_blobs(200, 0.6, 3.0, 5);
    let report = train(&config(|_| {}), &data).unwrap();
    let k = report.summary.k_precomputed.unwrap();
    assert!(report.steps.iter().all(|s| s.clipped == 0 && s.k == k));
    assert!(report.steps.iter().filter_map(|s| s.max_norm).all(|n| n <= k));
    assert!(report.summary.final_weights.iter().all(|w| w.abs() <= 1.0));
    assert_eq!(report.summary.ledger.events.len(), 60);
    let per_step = 8.0 / 2.0;
    let eps8 = report.summary.ledger.rdp.iter().find(|p| p.alpha == 8.0).unwrap().epsilon;
    assert!((eps8 - 60.0 * per_step).abs() < 1e-9);
}

#[test]
fn per_step_constant_is_never_looser() {
    let data = two_blobs(200, 0.6, 3.0, 5);
    let pre = train(&config(|_| {}), &data).unwrap();
    let step = train(&config(|c| c.mode = TrainMode::PerStepK), &data).unwrap();
    let k = pre.summary.k_precomputed.unwrap();
    assert!(step.steps.iter().all(|s| s.k <= k && s.clipped == 0));
    assert!(step.steps.iter().any(|s| s.k < k));
}

#[test]
fn per_step_clips_no_more_than_half_k_baseline() {
    let data = two_blobs(200, 0.6, 3.0, 5);
    let step = train(&config(|c| c.mode = TrainMode::PerStepK), &data).unwrap();
    let k = step.summary.k_precomputed.unwrap();
    let clip = train(
        &config(|c| {
            c.mode = TrainMode::ClipBaseline;
            c.clip_baseline.as_mut().unwrap().clip_norm = k / 2.0;
        }),
        &data,
    )
    .unwrap();
    let fraction = |r: &hybrid_ad::dpsgd::TrainReport| {
        r.summary.total_clipped as f64 / r.steps.iter().map(|s| s.lot_size).sum::<usize>() as f64
    };
    assert!(fraction(&step) <= fraction(&clip));
}

#[test]
fn noise_free_training_separates_blobs() {
    let data = two_blobs(200, 0.5, 3.0, 6);
    let c = config(|c| {
        c.mode = TrainMode::ClipBaseline;
        c.noise_multiplier = 0.0;
        c.clip_baseline.as_mut().unwrap().clip_norm = 1e6;
        c.model = ModelSpec::new(&[2, 1], Activation::Linear, LossKind::Logistic);
        c.steps = 200;
    });
    let report = train(&c, &data).unwrap();
    assert!(report.summary.train_accuracy >= 0.95, "{}", report.summary.train_accuracy);
    assert!(!report.summary.private && report.summary.ledger.events.is_empty());
}

#[test]
fn clip_baseline_counts_clipping() {
    let data = two_blobs(200, 0.6, 3.0, 5);
    let report = train(
        &config(|c| {
            c.mode = TrainMode::ClipBaseline;
            c.clip_baseline.as_mut().unwrap().clip_norm = 0.05;
        }),
        &data,
    )
    .unwrap();
    assert!(report.summary.total_clipped > 0);
}

#[test]
fn identical_runs_are_byte_identical() {
    let data = two_blobs(100, 0.6, 3.0, 5);
    let c = config(|c| c.steps = 20);
    assert_eq!(train(&c, &data).unwrap().to_jsonl(), train(&c, &data).unwrap().to_jsonl());
    let parallel = config(|c| {
        c.steps = 20;
        c.workers = 4;
    });
    assert_eq!(train(&c, &data).unwrap().steps, train(&parallel, &data).unwrap().steps);
}

#[test]
fn zero_steps_gives_an_empty_report() {
    let data = two_blobs(100, 0.6, 3.0, 5);
    let r = train(&config(|c| c.steps = 0), &data).unwrap();
    assert!(r.steps.is_empty());
    let conv = &r.summary.ledger.conversions[0];
    assert_eq!((conv.alpha, conv.epsilon), (64.0, (1e5f64).ln() / 63.0));
    assert_eq!(r.to_jsonl().lines().count(), 1);
}

#[test]
fn out_of_box_rows_are_rejected() {
    let mut data = two_blobs(50, 0.6, 3.0, 5);
    data.features[7][0] = 4.0;
    data.targets[9] = 2.0;
    let err = train(&config(|_| {}), &data).unwrap_err();
    assert_eq!(err, DpsgdError::Data(DataError::OutOfBox(vec![7, 9])));
    assert!(err.is_data_error());
    let empty = Dataset { columns: data.columns.clone(), features: vec![], targets: vec![] };
    assert_eq!(train(&config(|_| {}), &empty).unwrap_err(), DpsgdError::Data(DataError::Empty));
}

#[test]
fn config_requires_mode_fields() {
    let without = BASE.replace("[precomputed-k]\nweight_radius = 1.0\n", "");
    assert!(matches!(TrainConfig::from_toml(&without), Err(DpsgdError::Config(_))));
    let clip_only = BASE
        .replace("mode = \"precomputed-k\"", "mode = \"clip-baseline\"")
        .replace("[precomputed-k]\nweight_radius = 1.0\n", "");
    assert!(TrainConfig::from_toml(&clip_only).is_ok());
    let no_bounds = BASE.replace("y = [0.0, 1.0]\n", "");
    assert!(matches!(TrainConfig::from_toml(&no_bounds), Err(DpsgdError::Config(m)) if m.contains("y")));
    let c = TrainConfig::from_toml(BASE).unwrap();
    assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
}
