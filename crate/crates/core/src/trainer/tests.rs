use super::*;
use crate::geometry::{Pose, Quat};
use crate::synthdata::{primitive, render_sample, Primitive};

fn tiny_model(level: u32) -> ModelConfig {
    ModelConfig {
        icosphere_level: level,
        encoder_input: 8,
        texture_features: 16,
        shape_features: 8,
        selector_hidden: 8,
        deformer_hidden: 16,
        pose_hidden: 8,
        texture_size: 8,
        ..ModelConfig::default()
    }
}

fn tiny_config(level: u32) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 2,
        lr: 1e-3,
        checkpoint_every: 2,
        render: RenderConfig {
            sigma: 1e-3,
            gamma: 1e-2,
            ..RenderConfig::with_size(16)
        },
        model: tiny_model(level),
        ..TrainConfig::default()
    }
}

fn samples(n: usize, size: usize) -> Vec<TrainSample> {
    let mesh = primitive(&Primitive::Ellipsoid { axes: [1.0, 0.6, 0.5] }, 3).unwrap();
    (0..n)
        .map(|i| {
            let pose = Pose::new(0.8, [0.0, 0.0], Quat::from_euler(0.4 * i as f64, 0.1, 0.0)).unwrap();
            render_sample(&mesh, &pose, size, [0.8, 0.4, 0.2], [0.3, 0.5, 1.0], 0.4)
        })
        .collect()
}

fn flat(params: &ModelParams) -> Vec<f64> {
    params
        .named_tensors()
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .collect()
}

#[test]
fn first_adam_step_moves_each_coordinate_by_lr() {
    let config = tiny_config(1);
    let mut params = ModelParams::init(&config.model).unwrap();
    let before = flat(&params);
    let mut state = AdamState::new(&params);
    let grads: Vec<(String, Tensor)> = params
        .named_tensors()
        .iter()
        .enumerate()
        .map(|(i, (n, t))| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            (n.clone(), Tensor::full(t.shape(), sign * 0.3))
        })
        .collect();
    adam_step(&mut params, &grads, &mut state, 1e-3, &config).unwrap();
    for (a, b) in flat(&params).iter().zip(&before) {
        assert!(((a - b).abs() - 1e-3).abs() < 1e-9, "{}", (a - b).abs());
    }
    assert_eq!(state.step, 1);
}

#[test]
fn zero_gradient_keeps_parameters_and_decays_moments() {
    let config = tiny_config(1);
    let mut params = ModelParams::init(&config.model).unwrap();
    let mut state = AdamState::new(&params);
    for t in state.m.values_mut().chain(state.v.values_mut()) {
        *t = Tensor::full(t.shape(), 1e-30);
    }
    let before = flat(&params);
    let grads: Vec<(String, Tensor)> =
        params.named_tensors().iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
    let m0 = state.m["enc.fc1.bias"].data()[0];
    adam_step(&mut params, &grads, &mut state, 1e-3, &config).unwrap();
    assert!(state.m["enc.fc1.bias"].data()[0] < m0);
    // The tiny moments move each coordinate by far less than its ulp.
    for (a, b) in flat(&params).iter().zip(&before) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }

    let mut fresh = AdamState::new(&params);
    let before = flat(&params);
    adam_step(&mut params, &grads, &mut fresh, 1e-3, &config).unwrap();
    assert_eq!(flat(&params), before);
}

#[test]
fn non_finite_gradient_names_the_tensor() {
    let config = tiny_config(1);
    let mut params = ModelParams::init(&config.model).unwrap();
    let mut state = AdamState::new(&params);
    let before = flat(&params);
    let mut grads: Vec<(String, Tensor)> =
        params.named_tensors().iter().map(|(n, t)| (n.clone(), Tensor::ones(t.shape()))).collect();
    let i = grads.iter().position(|(n, _)| n == "pose.out.weight").unwrap();
    grads[i].1.data_mut()[3] = f64::NAN;
    let err = adam_step(&mut params, &grads, &mut state, 1e-3, &config).unwrap_err();
    assert!(matches!(&err, TrainError::NonFiniteGradient { name } if name == "pose.out.weight"));
    assert_eq!(flat(&params), before, "failed step must not move anything");
    assert_eq!(state.step, 0);
}

#[test]
fn clipping_bounds_the_global_norm() {
    let mut g = vec![("a".to_string(), Tensor::full(&[4], 3.0)), ("b".to_string(), Tensor::full(&[1], 4.0))];
    let norm = clip_global_norm(&mut g, 1.0);
    assert!((norm - 52f64.sqrt()).abs() < 1e-12);
    let after: f64 = g.iter().flat_map(|(_, t)| t.data().to_vec()).map(|x| x * x).sum::<f64>().sqrt();
    assert!((after - 1.0).abs() < 1e-12);
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let mut config = tiny_config(1);
    config.weights = LossWeights::zero();
    let mut params = ModelParams::init(&config.model).unwrap();
    let mut state = AdamState::new(&params);
    let before = flat(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = train_step(&samples(2, 16), &mut params, &mut state, &config, 1e-3, &mut rng).unwrap();
    assert_eq!(report.total, 0.0);
    assert_eq!(flat(&params), before);
}

#[test]
fn training_is_bit_reproducible() {
    let config = tiny_config(1);
    let data = samples(2, 16);
    let go = || {
        let mut params = ModelParams::init(&config.model).unwrap();
        let mut state = AdamState::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for _ in 0..10 {
            train_step(&data, &mut params, &mut state, &config, 1e-3, &mut rng).unwrap();
        }
        flat(&params)
    };
    assert_eq!(go(), go());
}

#[test]
fn single_sample_overfit_decreases_the_loss() {
    let mut config = tiny_config(2);
    config.symmetry_probability = 0.0;
    config.model.deformer_dropout = 0.0;
    config.model.pose_dropout = 0.0;
    let data = samples(1, 16);
    let mut params = ModelParams::init(&config.model).unwrap();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let losses: Vec<f64> = (0..51)
        .map(|_| train_step(&data, &mut params, &mut state, &config, 1e-3, &mut rng).unwrap().total)
        .collect();
    let down = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(down >= 45, "{down}/50 decreasing: {losses:?}");
}

#[test]
fn config_validation_and_files() {
    assert!(TrainConfig::default().validate().is_ok());
    assert_eq!(TrainConfig::default().subdivision_epoch(), 140);
    let bad = TrainConfig {
        subdivision_epoch: Some(0),
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        lr: 0.0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());

    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("train.toml");
    fs::write(&toml_path, "epochs = 10\nbatch_size = 2\n[weights]\nmask = 50.0\n[model]\nnum_meanshapes = 3\n").unwrap();
    let c = TrainConfig::load(&toml_path).unwrap();
    assert_eq!((c.epochs, c.batch_size, c.weights.mask, c.model.num_meanshapes), (10, 2, 50.0, 3));
    assert_eq!(c.weights.pose, 20.0);
    let json_path = dir.path().join("train.json");
    fs::write(&json_path, serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(TrainConfig::load(&json_path).unwrap(), c);
}

#[test]
fn run_subdivides_logs_and_resumes_exactly() {
    let mut config = tiny_config(3);
    config.subdivision_epoch = Some(2);
    let data = samples(3, 16);
    let dir = tempfile::tempdir().unwrap();

    let full = run_on_samples(&config, &data, &dir.path().join("full"), None).unwrap();
    assert_eq!(full.params.bank.num_vertices(), 642);
    assert_eq!(full.params.bank.faces().len(), 1280);
    let init = ModelParams::init(&config.model).unwrap();
    assert_eq!(init.bank.num_vertices(), 162);
    assert_eq!(init.network_parameter_count(), full.params.network_parameter_count());
    // 3 samples in batches of 2: two steps per epoch.
    assert_eq!(full.steps, 8);
    let log = fs::read_to_string(&full.log).unwrap();
    assert_eq!(log.lines().count(), 1 + 8);
    assert!(log.starts_with("step,mask,"));

    // The epoch-2 checkpoint precedes the subdivision.
    let mid = dir.path().join("full").join(checkpoint_name(2));
    let (ckpt, _) = load_checkpoint_with(&mid).unwrap();
    assert_eq!(ckpt.params.bank.num_vertices(), 162);

    let part = dir.path().join("part");
    fs::create_dir_all(&part).unwrap();
    fs::copy(dir.path().join("full").join(LOG_FILE), part.join(LOG_FILE)).unwrap();
    let resumed = run_on_samples(&config, &data, &part, Some(&mid)).unwrap();
    assert_eq!(flat(&resumed.params), flat(&full.params));
    assert_eq!(fs::read_to_string(part.join(LOG_FILE)).unwrap(), log);
    assert_eq!(
        fs::read(part.join(FINAL_CHECKPOINT)).unwrap(),
        fs::read(dir.path().join("full").join(FINAL_CHECKPOINT)).unwrap()
    );

    // A schedule that would already have subdivided by epoch 2 rejects it.
    let mut other = config.clone();
    other.subdivision_epoch = Some(1);
    let err = run_on_samples(&other, &data, &dir.path().join("bad"), Some(&mid)).unwrap_err();
    assert!(matches!(err, TrainError::Resume(_)), "{err}");
}

#[test]
fn mismatched_render_size_is_reported() {
    let config = tiny_config(1);
    let mut params = ModelParams::init(&config.model).unwrap();
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_step(&samples(1, 20), &mut params, &mut state, &config, 1e-3, &mut rng).unwrap_err();
    assert!(matches!(err, TrainError::Config(_)));
}
