use super::*;
use crate::diff::{finite_difference_check_many, FdOptions, Tape, Var};

fn small_config(n: usize) -> ModelConfig {
    ModelConfig {
        num_meanshapes: n,
        icosphere_level: 1,
        encoder_input: 8,
        texture_features: 16,
        shape_features: 8,
        selector_hidden: 8,
        deformer_hidden: 8,
        pose_hidden: 8,
        texture_size: 4,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn image(seed: u64, size: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[3, size, size], (0..3 * size * size).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// Gives the last deformer layer random weights so ΔV is not identically 0.
fn wake_deformer(params: &mut ModelParams) {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    for name in ["def.out.weight", "def.out.bias"] {
        for v in params.tensor_mut(name).unwrap().data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
}

#[test]
fn init_is_finite_and_seeded() {
    let a = ModelParams::init(&small_config(2)).unwrap();
    let b = ModelParams::init(&small_config(2)).unwrap();
    assert!(a.all_finite());
    for ((na, ta), (nb, tb)) in a.named_tensors().iter().zip(b.named_tensors()) {
        assert_eq!(na, &nb);
        assert_eq!(**ta, *tb);
    }
    assert_eq!(a.bank.num_vertices(), 12);
    let expected: usize = small_config(2).layers().iter().map(|(_, i, o)| i * o + o).sum();
    assert_eq!(a.network_parameter_count(), expected);
}

#[test]
fn default_bank_is_the_162_vertex_sphere() {
    let p = ModelParams::init(&ModelConfig::default()).unwrap();
    assert_eq!(p.bank.len(), 2);
    assert_eq!(p.bank.num_vertices(), 162);
    assert_eq!(p.bank.faces().len(), 320);
    assert_eq!(p.bank.vertices[0], p.bank.vertices[1]);
}

#[test]
fn invalid_config_is_rejected() {
    let mut c = small_config(2);
    c.num_meanshapes = 0;
    assert!(matches!(ModelParams::init(&c), Err(ModelError::EmptyBank)));
    let mut c = small_config(2);
    c.deformer_dropout = 1.0;
    assert!(ModelParams::init(&c).is_err());
}

#[test]
fn encoder_examples() {
    let p = ModelParams::init(&small_config(2)).unwrap();
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    let zero = m.encode(&Tensor::zeros(&[3, 16, 16])).unwrap();
    assert!(zero.shape.value().all_finite() && zero.texture.value().all_finite());
    assert_eq!(zero.shape.shape(), vec![1, 8]);
    assert_eq!(zero.texture.shape(), vec![1, 16]);

    let img = image(1, 16);
    let a = m.encode(&img).unwrap().shape.value();
    let b = m.encode(&img).unwrap().shape.value();
    assert_eq!(*a, *b);

    let mut poked = img.clone();
    poked.data_mut()[5] += 1e-3;
    let c = m.encode(&poked).unwrap().shape.value();
    assert!(a.max_abs_diff(&c) > 0.0);

    assert!(matches!(m.encode(&Tensor::zeros(&[1, 16, 16])), Err(ModelError::ImageShape(_))));
}

#[test]
fn downsample_averages_pixel_pairs() {
    let img = Tensor::new(&[3, 2, 2], (0..12).map(|v| v as f64).collect()).unwrap();
    let small = downsample(&img, 1).unwrap();
    assert_eq!(small.data(), &[1.5, 5.5, 9.5]);
}

#[test]
fn single_meanshape_is_selected_with_weight_one() {
    let p = ModelParams::init(&small_config(1)).unwrap();
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    let f = m.encode(&image(2, 8)).unwrap();
    let (w, v) = m.select_shape(f.shape).unwrap();
    assert_eq!(w.value().data(), &[1.0]);
    assert_eq!(*v.value(), *p.bank.vertices[0]);
}

#[test]
fn weights_are_a_simplex_and_blend_is_linear() {
    let mut p = ModelParams::init(&small_config(3)).unwrap();
    for (i, v) in p.bank.vertices.iter_mut().enumerate() {
        Arc::make_mut(v).scale_assign(1.0 + i as f64);
    }
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    for s in 0..5 {
        let f = m.encode(&image(s, 8)).unwrap();
        let (w, _) = m.select_shape(f.shape).unwrap();
        let w = w.value();
        assert!((w.sum() - 1.0).abs() < 1e-12);
        assert!(w.data().iter().all(|&x| x > 0.0));
    }
    let half = tape.constant(Tensor::new(&[1, 3], vec![0.5, 0.5, 0.0]).unwrap());
    let mixed = m.blend(half).unwrap().value();
    let expected = p.bank.vertices[0].zip_map(&p.bank.vertices[1], |a, b| 0.5 * (a + b));
    assert!(mixed.max_abs_diff(&expected) < 1e-15);
}

#[test]
fn blend_is_permutation_equivariant() {
    let mut p = ModelParams::init(&small_config(3)).unwrap();
    for (i, v) in p.bank.vertices.iter_mut().enumerate() {
        Arc::make_mut(v).scale_assign(0.5 + i as f64);
    }
    let w = [0.2, 0.5, 0.3];
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    let a = m.blend(tape.constant(Tensor::new(&[1, 3], w.to_vec()).unwrap())).unwrap().value();

    let perm = [2, 0, 1];
    let mut q = p.clone();
    q.bank.vertices = perm.iter().map(|&i| p.bank.vertices[i].clone()).collect();
    let wp: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
    let m2 = q.bind_frozen(&tape);
    let b = m2.blend(tape.constant(Tensor::new(&[1, 3], wp).unwrap())).unwrap().value();
    assert!(a.max_abs_diff(&b) < 1e-15);
}

#[test]
fn fresh_deformer_outputs_zero() {
    let p = ModelParams::init(&small_config(2)).unwrap();
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    let f = m.encode(&image(4, 8)).unwrap();
    let out = m.predict_shape(f.shape, false, &mut rng()).unwrap();
    assert!(out.deformation.value().data().iter().all(|&d| d == 0.0));
    assert_eq!(*out.vertices.value(), *out.meanshape.value());
}

#[test]
fn deformation_is_bounded_and_per_vertex() {
    let mut p = ModelParams::init(&small_config(2)).unwrap();
    wake_deformer(&mut p);
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    let f = m.encode(&image(5, 8)).unwrap();
    let out = m.predict_shape(f.shape, false, &mut rng()).unwrap();
    let dv = out.deformation.value();
    assert!(dv.data().iter().any(|&d| d != 0.0));
    assert!(dv.data().iter().all(|&d| d > -1.0 && d < 1.0));
    for r in 0..dv.shape()[0] {
        let n: f64 = dv.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n <= 3f64.sqrt());
    }

    // Shuffling rows shuffles the output rows identically.
    let k = p.bank.num_vertices();
    let perm: Vec<usize> = (0..k).rev().collect();
    let shuffled = out.meanshape.gather(&perm).unwrap();
    let dv2 = m.deform(f.shape, out.weights, shuffled, false, &mut rng()).unwrap().value();
    for (i, &j) in perm.iter().enumerate() {
        assert_eq!(dv2.row(i), dv.row(j));
    }

    // Subdividing only appends rows; the original rows keep their output.
    let (sub, _) = p.bank.subdivided().unwrap();
    let mut q = p.clone();
    q.bank = sub;
    let m2 = q.bind_frozen(&tape);
    let out2 = m2.deform(f.shape, out.weights, m2.blend(out.weights).unwrap(), false, &mut rng()).unwrap().value();
    assert_eq!(out2.shape()[0], 42);
    for r in 0..k {
        assert_eq!(out2.row(r), dv.row(r));
    }
}

#[test]
fn pose_from_zero_output() {
    let tape = Tape::new();
    let raw = tape.constant(Tensor::zeros(&[1, 7]));
    let pose = pose_from_raw(raw).unwrap();
    assert_eq!(pose.scale.item(), 1.0);
    assert_eq!(pose.translation.value().data(), &[0.0, 0.0]);
    assert_eq!(pose.raw_rotation.value().data(), &[0.0; 4]);
    assert!(pose.degenerate);
    assert_eq!(pose.rotation.value().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn regressed_pose_is_normalized() {
    let p = ModelParams::init(&small_config(2)).unwrap();
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    for s in 0..4 {
        let f = m.encode(&image(s, 8)).unwrap();
        let pose = m.regress_pose(f.shape, false, &mut rng()).unwrap();
        let q = pose.rotation.value();
        assert!((q.norm() - 1.0).abs() < 1e-9);
        assert!(pose.scale.item() > 0.0);
    }
}

#[test]
fn scale_gradient_matches_finite_differences() {
    let x = Tensor::new(&[1, 7], vec![0.3, 0.1, -0.2, 0.9, 0.1, -0.3, 0.2]).unwrap();
    let err = finite_difference_check_many(
        |_, v| {
            let p = pose_from_raw(v[0]).map_err(|e| match e {
                ModelError::Diff(d) => d,
                other => panic!("{other}"),
            })?;
            Ok(p.scale.sum().add(p.rotation.slice(0, 1, 1)?.sum())?)
        },
        &[x],
        &FdOptions::default(),
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn texture_is_bounded_and_deterministic() {
    let p = ModelParams::init(&small_config(2)).unwrap();
    let tape = Tape::new();
    let m = p.bind_frozen(&tape);
    let f = m.encode(&image(7, 8)).unwrap();
    let t = m.decode_texture(f.texture).unwrap().value();
    assert_eq!(t.shape(), &[3, 4, 4]);
    assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let t2 = m.decode_texture(m.encode(&image(7, 8)).unwrap().texture).unwrap().value();
    assert_eq!(*t, *t2);
}

fn as_diff(e: ModelError) -> crate::diff::DiffError {
    match e {
        ModelError::Diff(d) => d,
        other => panic!("{other}"),
    }
}

#[test]
fn shape_gradient_reaches_bank_scaled_by_weights() {
    let mut p = ModelParams::init(&small_config(2)).unwrap();
    let img = image(8, 8);
    let tape = Tape::new();
    let m = p.bind(&tape);
    let f = m.encode(&img).unwrap();
    let out = m.predict_shape(f.shape, false, &mut rng()).unwrap();
    let w = out.weights.value();
    let grads = tape.backward(out.vertices.sum()).unwrap();
    for i in 0..2 {
        let g = grads.wrt(m.bank[i]);
        assert!(g.data().iter().all(|&x| (x - w.data()[i]).abs() < 1e-12));
    }

    wake_deformer(&mut p);
    let inputs: Vec<Tensor> = p.named_tensors().iter().map(|(_, t)| (**t).clone()).collect();
    let err = finite_difference_check_many(
        |_, vars: &[Var]| {
            let m = p.bind_vars(vars).map_err(as_diff)?;
            let f = m.encode(&img).map_err(as_diff)?;
            let out = m.predict_shape(f.shape, false, &mut rng()).map_err(as_diff)?;
            Ok(out.vertices.square().sum())
        },
        &inputs,
        &FdOptions {
            max_coords: Some(6),
            ..FdOptions::default()
        },
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn bank_subdivision() {
    let mut bank = MeanshapeBank::spheres(2, 3).unwrap();
    Arc::make_mut(&mut bank.vertices[1]).scale_assign(0.5);
    let (sub, plan) = bank.subdivided().unwrap();
    assert_eq!(sub.num_vertices(), 642);
    assert_eq!(sub.faces().len(), 1280);
    assert_eq!(plan.num_new_vertices(), 480);
    assert_eq!(sub.splits, 1);
    for i in 0..2 {
        assert_eq!(sub.vertices[i].shape(), &[642, 3]);
        assert_eq!(&sub.vertices[i].data()[..162 * 3], bank.vertices[i].data());
    }
    // Subdivision commutes with blending for fixed weights.
    let w = [0.3, 0.7];
    let a = subdivide_bank(&bank).unwrap().weighted_mesh(&w).unwrap();
    let blended = Tensor::from_rows(&bank.weighted_mesh(&w).unwrap().vertices);
    let b = plan.apply_tensor(&blended).unwrap();
    assert!(Tensor::from_rows(&a.vertices).max_abs_diff(&b) < 1e-15);
    assert!(sub.template().uv.is_some());
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let mut p = ModelParams::init(&small_config(2)).unwrap();
    wake_deformer(&mut p);
    let (sub, _) = p.bank.subdivided().unwrap();
    p.bank = sub;
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    save_checkpoint(&p, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap().params;
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.bank.splits, 1);
    assert_eq!(loaded.bank.faces(), p.bank.faces());
    assert_eq!(loaded.config, p.config);
    for ((n1, t1), (n2, t2)) in p.named_tensors().iter().zip(loaded.named_tensors()) {
        assert_eq!(n1, &n2);
        assert_eq!(t1.data(), t2.data());
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let p = ModelParams::init(&small_config(1)).unwrap();
    let bytes = encode_checkpoint(&p, None, &[]).unwrap();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("magic"));
    let mut bad = bytes.clone();
    bad[4] = 99;
    assert!(decode_checkpoint(&bad).unwrap_err().to_string().contains("version"));
    assert!(load_checkpoint(std::path::Path::new("/nonexistent/ckpt")).is_err());
}

#[test]
fn extra_tensors_survive_the_round_trip() {
    let p = ModelParams::init(&small_config(1)).unwrap();
    let extra = vec![("adam.m/bank.0".to_string(), Arc::new(Tensor::ones(&[12, 3])))];
    let meta = serde_json::json!({"epoch": 3});
    let bytes = encode_checkpoint(&p, Some(&meta), &extra).unwrap();
    let (ck, more) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(ck.trainer, Some(meta));
    assert_eq!(more.len(), 1);
    assert_eq!(more[0].0, "adam.m/bank.0");
    assert_eq!(more[0].1, Tensor::ones(&[12, 3]));
}
