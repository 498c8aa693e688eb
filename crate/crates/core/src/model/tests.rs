use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gradcheck::grad_check;

fn tiny(dropout: f64) -> ModelConfig {
    ModelConfig {
        pathcnn: PathCnnConfig {
            k: 8,
            d: 4,
            channels: vec![2, 3],
            kernel: 3,
            lambda: 5,
            dropout,
        },
        temporal: TemporalConfig {
            s_max: 4,
            channels: vec![3],
            kernel: 3,
            head_dims: vec![4, 1],
            subpath_hidden: 3,
        },
        output_scale_s: 2.0,
        subpath_scale_s: 0.5,
    }
}

fn random_images(n: usize, k: usize, d: usize, seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Tensor::from_vec(
                &[k, k, d],
                (0..k * k * d).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect()
}

/// Randomizes biases so ReLUs are not all sitting on zero.
fn jitter_biases(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params.iter_mut().filter(|p| p.name.ends_with("bias")) {
        for v in p.value.data_mut() {
            *v += rng.gen_range(0.05..0.3);
        }
    }
}

#[test]
fn default_extent_chain() {
    let cfg = PathCnnConfig::default();
    assert_eq!(cfg.extents(), vec![100, 50, 25, 12, 6]);
    assert_eq!(cfg.flatten_dim(), 9216);
    assert_eq!(TemporalConfig::default().flatten_dim(), 12288);
}

#[test]
fn first_default_layer_shape() {
    let cfg = ModelConfig {
        pathcnn: PathCnnConfig {
            lambda: 4,
            ..PathCnnConfig::default()
        },
        temporal: TemporalConfig {
            channels: vec![2],
            head_dims: vec![1],
            subpath_hidden: 2,
            ..TemporalConfig::default()
        },
        ..ModelConfig::default()
    };
    let model = Model::<f32>::new(cfg, 0).unwrap();
    let img = Tensor::filled(&[100, 100, 4], 0.5f32);
    let (out, _) = model.maxavg_layer(0, &img).unwrap();
    assert_eq!(out.shape(), &[50, 50, 32]);
    let mut x = img;
    for m in 0..4 {
        x = model.maxavg_layer(m, &x).unwrap().0;
    }
    assert_eq!(x.shape(), &[6, 6, 256]);
    assert_eq!(
        model
            .pathcnn_forward(&[&Tensor::zeros(&[100, 100, 4])], Mode::Inference)
            .unwrap()
            .shape(),
        &[1, 4]
    );
}

#[test]
fn minimal_input_and_identity_branches() {
    let mut cfg = tiny(0.0);
    cfg.pathcnn.k = 2;
    cfg.pathcnn.channels = vec![3];
    let mut model = Model::<f64>::new(cfg, 1).unwrap();
    let x = Tensor::filled(&[2, 2, 4], 0.7);
    assert_eq!(model.maxavg_layer(0, &x).unwrap().0.shape(), &[1, 1, 6]);

    // identity on input channel 0 for every filter of both branches
    for name in ["pathcnn.0.max.kernel", "pathcnn.0.avg.kernel"] {
        let p = model.params.iter_mut().find(|p| p.name == name).unwrap();
        p.value.fill(0.0);
        for f in 0..3 {
            p.value[(4 * 4) * 3 + f] = 1.0;
        }
    }
    let out = model.maxavg_layer(0, &x).unwrap().0;
    assert_eq!(&out.data()[..3], &out.data()[3..]);
    assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
}

#[test]
fn shape_mismatch_is_an_error() {
    let model = Model::<f64>::new(tiny(0.0), 0).unwrap();
    let bad = Tensor::zeros(&[9, 9, 4]);
    assert!(model.pathcnn_forward(&[&bad], Mode::Inference).is_err());
    assert!(model
        .temporal_forward(&Tensor::zeros(&[5, 5]), Mode::Inference)
        .is_err());
    assert!(model.maxavg_layer(1, &Tensor::zeros(&[1, 1, 4])).is_err());
}

#[test]
fn zero_inputs_with_zero_biases() {
    let mut model = Model::<f64>::new(tiny(0.0), 3).unwrap();
    for p in model.params.iter_mut().filter(|p| p.name.ends_with("bias")) {
        p.value.fill(0.0);
    }
    let rows = model
        .pathcnn_forward(&[&Tensor::zeros(&[8, 8, 4])], Mode::Inference)
        .unwrap();
    assert!(rows.data().iter().all(|&v| v == 0.0));
    assert_eq!(
        model
            .temporal_forward(&Tensor::zeros(&[4, 5]), Mode::Inference)
            .unwrap(),
        0.0
    );
    assert_eq!(
        model
            .subpath_heads(&Tensor::zeros(&[1, 5]), Mode::Inference)
            .unwrap(),
        vec![0.0]
    );
}

#[test]
fn subpath_heads_share_weights() {
    let model = Model::<f64>::new(tiny(0.0), 4).unwrap();
    let row = [0.3, -0.2, 0.9, 0.1, 0.4];
    let rows = Tensor::from_vec(
        &[3, 5],
        row.iter().chain(&row).chain(&row).copied().collect(),
    )
    .unwrap();
    let est = model.subpath_heads(&rows, Mode::Inference).unwrap();
    assert_eq!(est.len(), 3);
    assert_eq!(est[0], est[1]);
    assert_eq!(est[1], est[2]);
}

#[test]
fn temporal_conv_is_order_sensitive() {
    let model = Model::<f64>::new(tiny(0.0), 5).unwrap();
    let l = model.layout.conv1d[0];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut b = a.clone();
    for j in 0..5 {
        b.swap(j, 5 + j);
    }
    let sa = Tensor::from_vec(&[4, 5], a).unwrap();
    let sb = Tensor::from_vec(&[4, 5], b).unwrap();
    let ya = conv1d_same(&sa, model.w(l.w), model.w(l.b)).unwrap();
    let yb = conv1d_same(&sb, model.w(l.w), model.w(l.b)).unwrap();
    assert_ne!(ya, yb);
}

#[test]
fn inference_is_deterministic_and_truncates() {
    let model = Model::<f64>::new(tiny(0.5), 6).unwrap();
    let imgs = random_images(6, 8, 4, 2);
    let refs: Vec<&Tensor<f64>> = imgs.iter().collect();
    let a = model.forward_path(&refs, Mode::Inference).unwrap();
    let b = model.forward_path(&refs, Mode::Inference).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.subpath_estimates, b.subpath_estimates);
    assert_eq!(a.subpath_estimates.len(), 4);
    let first4 = model.forward_path(&refs[..4], Mode::Inference).unwrap();
    assert_eq!(first4.estimate, a.estimate);

    let single = model.forward_path(&refs[..1], Mode::Inference).unwrap();
    assert_eq!(single.features.shape(), &[1, 5]);

    let t1 = model
        .forward_path(&refs, Mode::Training { seed: 1 })
        .unwrap();
    let t1b = model
        .forward_path(&refs, Mode::Training { seed: 1 })
        .unwrap();
    let t2 = model
        .forward_path(&refs, Mode::Training { seed: 2 })
        .unwrap();
    assert_eq!(t1.estimate, t1b.estimate);
    assert_ne!(t1.features, t2.features);
}

#[test]
fn checkpoint_params_round_trip_through_from_params() {
    let model = Model::<f64>::new(tiny(0.0), 7).unwrap();
    let again = Model::from_params(tiny(0.0), model.params.clone()).unwrap();
    assert_eq!(again.params, model.params);
    let mut other = tiny(0.0);
    other.pathcnn.lambda = 6;
    assert!(Model::from_params(other, model.params.clone()).is_err());
}

#[test]
fn final_biases_start_at_one() {
    let model = Model::<f64>::new(tiny(0.0), 0).unwrap();
    let get = |n: &str| {
        model
            .params
            .iter()
            .find(|p| p.name == n)
            .unwrap()
            .value
            .data()
            .to_vec()
    };
    assert_eq!(get("temporal.head1.bias"), vec![1.0]);
    assert_eq!(get("subpath.head1.bias"), vec![1.0]);
    assert!(get("pathcnn.fc.bias").iter().all(|&v| v == 0.0));
}

/// Scalar objective used by the gradient checks: a fixed linear functional of
/// all outputs plus the weighted penalties.
fn objective(model: &Model<f64>, images: &[Tensor<f64>], mode: Mode, cfg: &LossConfig) -> f64 {
    let refs: Vec<&Tensor<f64>> = images.iter().collect();
    let pass = model.forward_path(&refs, mode).unwrap();
    let sub: f64 = pass
        .subpath_estimates
        .iter()
        .enumerate()
        .map(|(i, v)| (i as f64 + 1.0) * 0.3 * v)
        .sum();
    0.7 * pass.estimate + sub + model.penalties().weighted(cfg)
}

fn check_model_gradients(dropout_rate: f64, mode: Mode) {
    let mut model = Model::<f64>::new(tiny(dropout_rate), 11).unwrap();
    jitter_biases(&mut model, 12);
    let images = random_images(3, 8, 4, 13);
    let cfg = LossConfig::default();
    let refs: Vec<&Tensor<f64>> = images.iter().collect();
    let pass = model.forward_path(&refs, mode).unwrap();
    let d_sub: Vec<f64> = (0..pass.subpath_estimates.len())
        .map(|i| (i as f64 + 1.0) * 0.3)
        .collect();
    let mut grads = model.zero_grads();
    model.backward_path(&pass, 0.7, &d_sub, &mut grads).unwrap();
    model.penalties_backward(&cfg, &mut grads);

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut total_probes = 0;
    for (i, grad) in grads.iter().enumerate() {
        let x = model.params[i].value.data().to_vec();
        let analytic = grad.data().to_vec();
        let probes: Vec<usize> = (0..x.len().min(12))
            .map(|_| rng.gen_range(0..x.len()))
            .collect();
        total_probes += probes.len();
        let mut probe_model = model.clone();
        let err = grad_check(
            |v| {
                probe_model.params[i].value.data_mut().copy_from_slice(v);
                objective(&probe_model, &images, mode, &cfg)
            },
            &x,
            &analytic,
            &probes,
        );
        assert!(err < 1e-4, "{}: relative error {err}", model.params[i].name);
    }
    assert!(total_probes >= 100);
}

#[test]
fn model_gradients_match_finite_differences() {
    check_model_gradients(0.0, Mode::Inference);
}

#[test]
fn model_gradients_with_dropout_masks() {
    check_model_gradients(0.5, Mode::Training { seed: 99 });
}

#[test]
fn penalty_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [3, 3, 2, 4];
    let x: Vec<f64> = (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cfg = LossConfig::default();
    let k = Tensor::from_vec(&shape, x.clone()).unwrap();
    let mut g = Tensor::zeros(&shape);
    line_penalties_backward(&k, &cfg, &mut g);
    let f = |v: &[f64]| {
        line_penalties(&[&Tensor::from_vec(&shape, v.to_vec()).unwrap()]).weighted(&cfg)
    };
    let probes: Vec<usize> = (0..72).collect();
    assert!(grad_check(f, &x, g.data(), &probes) < 1e-4);
}
