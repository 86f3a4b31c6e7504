use super::*;
use crate::geometry::icosphere;
use crate::model::ModelConfig;
use crate::synthdata::{generate_dataset, DatasetConfig};
use proptest::prelude::*;

fn scaled(mesh: &Mesh, s: f64, shift: [f64; 3]) -> Mesh {
    mesh.with_vertices(
        mesh.vertices
            .iter()
            .map(|v| [s * v[0] + shift[0], s * v[1] + shift[1], s * v[2] + shift[2]])
            .collect(),
    )
    .unwrap()
}

#[test]
fn mask_iou_examples() {
    let a = [true, true, false, false];
    assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
    assert_eq!(mask_iou(&a, &[false, false, true, true]).unwrap(), 0.0);
    // Equal areas overlapping by half: a / 3a.
    let a = [true, true, false];
    let b = [false, true, true];
    assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(mask_iou(&[false; 4], &[false; 4]).unwrap(), 1.0);
    assert!(matches!(mask_iou(&[true], &[true, false]), Err(EvalError::Shape(..))));
}

#[test]
fn voxel_iou_examples() {
    let sphere = icosphere(4).unwrap();
    assert_eq!(voxel_3d_iou(&sphere, &sphere, 32).unwrap(), 1.0);
    let half = scaled(&sphere, 0.5, [0.0; 3]);
    let v32 = voxel_3d_iou(&sphere, &half, 32).unwrap();
    assert!((v32 - 0.125).abs() < 0.02, "{v32}");
    let v64 = voxel_3d_iou(&sphere, &half, 64).unwrap();
    assert!((v32 - v64).abs() < 0.03, "{v32} vs {v64}");
    let far = scaled(&sphere, 1.0, [3.0, 0.0, 0.0]);
    assert_eq!(voxel_3d_iou(&sphere, &far, 32).unwrap(), 0.0);

    let mut open = sphere.clone();
    open.faces.pop();
    assert!(matches!(voxel_3d_iou(&open, &sphere, 8), Err(EvalError::NotWatertight)));
}

#[test]
fn voxelized_sphere_fills_its_volume() {
    let sphere = icosphere(4).unwrap();
    let n = 40;
    let occ = voxelize(&sphere, [-1.0; 3], [1.0; 3], n).unwrap();
    let frac = occ.iter().filter(|&&o| o).count() as f64 / occ.len() as f64;
    // Inscribed polyhedron is a little smaller than π/6 of the cube.
    assert!((frac - std::f64::consts::PI / 6.0).abs() < 0.02, "{frac}");
}

fn constant(shape: &[usize], v: f64) -> Tensor {
    Tensor::full(shape, v)
}

#[test]
fn l1_and_ssim_examples() {
    let mut img = Tensor::zeros(&[3, 16, 16]);
    for (i, v) in img.data_mut().iter_mut().enumerate() {
        *v = ((i * 7919) % 13) as f64 / 12.0;
    }
    assert_eq!(l1_metric(&img, &img).unwrap(), 0.0);
    assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);

    let mut bin = Tensor::zeros(&[3, 12, 12]);
    for (i, v) in bin.data_mut().iter_mut().enumerate() {
        *v = (i % 2) as f64;
    }
    let mut inv = bin.clone();
    for v in inv.data_mut() {
        *v = 1.0 - *v;
    }
    assert_eq!(l1_metric(&bin, &inv).unwrap(), 1.0);

    let (a, b) = (0.4, 0.5);
    let x = constant(&[3, 16, 16], a);
    let y = constant(&[3, 16, 16], b);
    assert!((l1_metric(&x, &y).unwrap() - 0.1).abs() < 1e-12);
    // Flat patches have zero variance, so only the luminance term survives.
    let c1 = 0.01f64.powi(2);
    let expected = (2.0 * a * b + c1) / (a * a + b * b + c1);
    assert!((ssim(&x, &y).unwrap() - expected).abs() < 1e-9);

    assert!(matches!(l1_metric(&x, &constant(&[3, 8, 8], a)), Err(EvalError::Shape(..))));
    assert!(ssim(&constant(&[3, 8, 8], a), &constant(&[3, 8, 8], a)).is_err());
}

#[test]
fn selection_accuracy_examples() {
    let one: Vec<(usize, usize)> = vec![(0, 0); 10];
    assert_eq!(selection_accuracy(&one, &one, 1, 1), 1.0);
    // Labels swapped relative to indices still score perfectly.
    let swapped = [(1, 0), (1, 0), (0, 1)];
    assert_eq!(selection_accuracy(&swapped, &swapped, 2, 2), 1.0);
    // Fewer meanshapes than classes: both classes land on meanshape 0 and count as one.
    let merged = [(0, 0), (0, 1), (0, 2)];
    assert_eq!(selection_accuracy(&merged, &merged, 1, 3), 1.0);
}

#[test]
fn untrained_model_selects_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let data = DatasetConfig {
        samples_per_class: 40,
        image_size: 16,
        mesh_level: 2,
        ..DatasetConfig::default()
    };
    generate_dataset(&data, dir.path()).unwrap();
    let manifest = Manifest::load(dir.path()).unwrap();
    let params = ModelParams::init(&ModelConfig {
        encoder_input: 8,
        texture_features: 16,
        shape_features: 8,
        selector_hidden: 8,
        deformer_hidden: 16,
        pose_hidden: 8,
        texture_size: 8,
        icosphere_level: 2,
        ..ModelConfig::default()
    })
    .unwrap();
    let picks: Vec<(usize, usize)> = manifest
        .records
        .iter()
        .map(|r| {
            let s = load_sample(&manifest.root, r).unwrap();
            (predict(&params, &s.image).unwrap().selected(), r.label)
        })
        .collect();
    // Interleave so fit and score halves are both balanced.
    let fit: Vec<_> = picks.iter().copied().step_by(2).collect();
    let score: Vec<_> = picks.iter().copied().skip(1).step_by(2).collect();
    let acc = selection_accuracy(&fit, &score, 2, 2);
    let sd = (0.25 / score.len() as f64).sqrt();
    assert!((acc - 0.5).abs() <= 3.0 * sd, "{acc}");

    let report = evaluate(
        &params,
        &manifest,
        Split::Test,
        &EvalConfig {
            voxel_resolution: 8,
            gt_mesh_level: 2,
            ..EvalConfig::default()
        },
    )
    .unwrap();
    assert_eq!(report.samples, 8);
    for v in [report.mask_iou_pred_cam, report.mask_iou_gt_cam, report.voxel_iou_3d.unwrap()] {
        assert!((0.0..=1.0).contains(&v), "{v}");
    }
    assert!((-1.0..=1.0).contains(&report.ssim));
    assert_eq!(report.per_class.values().map(|c| c.samples).sum::<usize>(), 8);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json.get("mask_iou_pred_cam").is_some() && json.get("mask_iou_gt_cam").is_some());
    assert!(json["fid"].is_null());
}

proptest! {
    #[test]
    fn mask_iou_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 1..64), seed in any::<u64>()) {
        let b: Vec<bool> = a.iter().enumerate().map(|(i, &x)| x ^ ((seed >> (i % 64)) & 1 == 1)).collect();
        let ab = mask_iou(&a, &b).unwrap();
        prop_assert_eq!(ab, mask_iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.iter().any(|&x| x) {
            prop_assert_eq!(ab == 1.0, a == b);
        }
    }

    #[test]
    fn ssim_is_bounded(vals in prop::collection::vec(0.0f64..1.0, 2 * 3 * 12 * 12)) {
        let (x, y) = vals.split_at(3 * 12 * 12);
        let x = Tensor::new(&[3, 12, 12], x.to_vec()).unwrap();
        let y = Tensor::new(&[3, 12, 12], y.to_vec()).unwrap();
        let s = ssim(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
