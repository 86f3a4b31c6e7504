use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcmr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mcmr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const DATA_TOML: &str = "samples_per_class = 10\nimage_size = 16\nmesh_level = 2\n";

const TRAIN_TOML: &str = r#"
epochs = 2
batch_size = 4
checkpoint_every = 1
[render]
image_size = 16
sigma = 1e-3
[model]
icosphere_level = 2
encoder_input = 8
texture_features = 16
shape_features = 8
selector_hidden = 8
deformer_hidden = 16
pose_hidden = 8
texture_size = 8
"#;

#[test]
fn commands_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("data.toml"), DATA_TOML).unwrap();
    fs::write(d.join("train.toml"), TRAIN_TOML).unwrap();
    let data = d.join("data");
    ok(&["gen-data", "--config", s(&d.join("data.toml")), "--out", s(&data), "--seed", "3"]);
    assert_eq!(fs::read_dir(data.join("images")).unwrap().count(), 20);

    // Same inputs, same bytes.
    let again = d.join("again");
    ok(&["gen-data", "--config", s(&d.join("data.toml")), "--out", s(&again), "--seed", "3"]);
    for f in ["manifest.jsonl", "images/00007.png", "masks/00013.png"] {
        assert_eq!(fs::read(data.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }

    let run = d.join("run");
    ok(&["train", "--config", s(&d.join("train.toml")), "--dataset", s(&data), "--out", s(&run), "--seed", "1"]);
    let ckpt = run.join("final.mcmr");
    assert!(ckpt.exists() && run.join("epoch-0001.mcmr").exists());
    // 16 train samples in batches of 4, two epochs.
    assert_eq!(fs::read_to_string(run.join("log.csv")).unwrap().lines().count(), 1 + 8);

    let json = ok(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--resolution", "8"]);
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["mask_iou_pred_cam", "mask_iou_gt_cam", "l1", "ssim", "voxel_iou_3d", "selection_accuracy"] {
        assert!(report[key].is_number(), "{key}: {report}");
    }
    assert!(report["fid"].is_null());

    let views = d.join("views");
    ok(&["render", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&views), "--turntable"]);
    for deg in [0, 60, 120, 180, 240, 300] {
        assert!(views.join(format!("turntable_{deg:03}.png")).exists());
    }
    let pngs = fs::read_dir(&views).unwrap().count();
    assert_eq!(pngs, 2 * (2 + 6));

    let meshes = d.join("meshes");
    ok(&["export-mesh", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--out", s(&meshes)]);
    for f in ["meanshape.obj", "shape.obj"] {
        let m = mcmr::geometry::import_obj(&meshes.join(f)).unwrap();
        // Level 2 subdivided once at epoch 1.
        assert_eq!((m.num_vertices(), m.num_faces()), (162, 320), "{f}");
    }
}

#[test]
fn failures_exit_nonzero_without_leftovers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = d.join("tiny");
    let r = mcmr(&["gen-data", "--out", s(&out), "--resolution", "2"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("image_size"));
    assert!(!out.exists());

    let run = d.join("run");
    let r = mcmr(&["train", "--dataset", s(&d.join("missing")), "--out", s(&run)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!run.exists());

    let r = mcmr(&["eval", "--checkpoint", s(&d.join("none.mcmr")), "--dataset", s(d)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(r.stdout.is_empty());

    fs::write(d.join("bad.toml"), "epochs = \"many\"").unwrap();
    let r = mcmr(&["train", "--config", s(&d.join("bad.toml")), "--dataset", s(d), "--out", s(&run)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!run.exists());

    assert_ne!(mcmr(&["render"]).status.code(), Some(0));
}
