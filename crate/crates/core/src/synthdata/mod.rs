//! Synthetic supervision: primitive meshes hard-rendered under random weak
//! perspective cameras, saved as PNG image/mask pairs with a JSON-lines
//! manifest. The class label is stored for evaluation only; the training
//! interface ([`TrainSample`]) has no field for it.

mod hard;

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::geometry::{icosphere, GeometryError, Mesh, Pose, Quat};
use crate::imageio::{load_mask_png, load_rgb_png, save_mask_png, save_rgb_png, write_atomic, ImageIoError};

pub use hard::{rasterize_hard, HardRender};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{path}, line {line}: {message}")]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One training example as the model sees it: no label.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    /// `3×H×W` in `[0,1]`.
    pub image: Tensor,
    /// `H×W` in `{0,1}`.
    pub mask: Tensor,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere,
    Ellipsoid { axes: [f64; 3] },
    /// Axis-aligned box with the given half extents.
    Box { half_extents: [f64; 3] },
    /// Capsule along `y`: hemispheres of `radius` joined by a cylinder of
    /// half length `half_length`.
    Capsule { radius: f64, half_length: f64 },
}

fn positive(name: &str, v: f64) -> Result<(), SynthError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SynthError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

/// Projection of a sphere point onto the surface of the box
/// `[-1,1]³` along its ray: max-norm becomes exactly 1.
pub(crate) fn to_unit_cube(v: [f64; 3]) -> [f64; 3] {
    let m = v.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    v.map(|c| c / m)
}

/// The primitive as a deformed icosphere, rescaled so its farthest vertex
/// lies on the unit sphere.
pub fn primitive(kind: &Primitive, level: u32) -> Result<Mesh, SynthError> {
    let sphere = icosphere(level)?;
    let vertices: Vec<[f64; 3]> = match *kind {
        Primitive::Sphere => sphere.vertices.clone(),
        Primitive::Ellipsoid { axes } => {
            for (i, a) in axes.iter().enumerate() {
                positive(&format!("ellipsoid axis {i}"), *a)?;
            }
            sphere.vertices.iter().map(|v| [v[0] * axes[0], v[1] * axes[1], v[2] * axes[2]]).collect()
        }
        Primitive::Box { half_extents: h } => {
            for (i, a) in h.iter().enumerate() {
                positive(&format!("box half extent {i}"), *a)?;
            }
            sphere
                .vertices
                .iter()
                .map(|&v| {
                    let c = to_unit_cube(v);
                    [c[0] * h[0], c[1] * h[1], c[2] * h[2]]
                })
                .collect()
        }
        Primitive::Capsule { radius, half_length } => {
            positive("capsule radius", radius)?;
            if !(half_length >= 0.0 && half_length.is_finite()) {
                return Err(SynthError::InvalidParameter(format!(
                    "capsule half length must be non-negative, got {half_length}"
                )));
            }
            sphere
                .vertices
                .iter()
                .map(|v| {
                    let shift = if v[1] > 0.0 {
                        half_length
                    } else if v[1] < 0.0 {
                        -half_length
                    } else {
                        0.0
                    };
                    [v[0] * radius, v[1] * radius + shift, v[2] * radius]
                })
                .collect()
        }
    };
    Ok(sphere.with_vertices(vertices)?.normalized_to_unit_sphere())
}

/// Per-sample shape variation within one class. Ranges are inclusive
/// `[lo, hi]` per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeFamily {
    Sphere,
    Ellipsoid { lo: [f64; 3], hi: [f64; 3] },
    Box { lo: [f64; 3], hi: [f64; 3] },
    Capsule { radius: [f64; 2], half_length: [f64; 2] },
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

impl ShapeFamily {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Primitive {
        let draw3 = |rng: &mut ChaCha8Rng, lo: &[f64; 3], hi: &[f64; 3]| -> [f64; 3] {
            std::array::from_fn(|i| uniform(rng, lo[i], hi[i]))
        };
        match self {
            ShapeFamily::Sphere => Primitive::Sphere,
            ShapeFamily::Ellipsoid { lo, hi } => Primitive::Ellipsoid { axes: draw3(rng, lo, hi) },
            ShapeFamily::Box { lo, hi } => Primitive::Box {
                half_extents: draw3(rng, lo, hi),
            },
            ShapeFamily::Capsule { radius, half_length } => Primitive::Capsule {
                radius: uniform(rng, radius[0], radius[1]),
                half_length: uniform(rng, half_length[0], half_length[1]),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeFamily,
    /// Base color in `[0,1]`.
    pub albedo: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseDistribution {
    /// Azimuth range in radians, sampled as `[lo, hi)`.
    pub azimuth: [f64; 2],
    pub elevation: [f64; 2],
    pub scale: [f64; 2],
    /// Each translation component is uniform in `[-t, t]`.
    pub translation: f64,
}

impl Default for PoseDistribution {
    fn default() -> Self {
        Self {
            azimuth: [0.0, 2.0 * PI],
            elevation: [-PI / 6.0, PI / 6.0],
            scale: [0.7, 1.1],
            translation: 0.1,
        }
    }
}

impl PoseDistribution {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Pose {
        let azimuth = if self.azimuth[1] > self.azimuth[0] {
            rng.gen_range(self.azimuth[0]..self.azimuth[1])
        } else {
            self.azimuth[0]
        };
        let elevation = uniform(rng, self.elevation[0], self.elevation[1]);
        let scale = uniform(rng, self.scale[0], self.scale[1]);
        let t = self.translation;
        let translation = [uniform(rng, -t, t), uniform(rng, -t, t)];
        Pose {
            scale,
            translation,
            rotation: Quat::from_euler(azimuth, elevation, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub classes: Vec<ClassSpec>,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Icosphere level of the generating meshes.
    pub mesh_level: u32,
    pub pose: PoseDistribution,
    /// Direction towards the light in camera coordinates (`+z` faces the
    /// viewer).
    pub light: [f64; 3],
    pub ambient: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: vec![
                ClassSpec {
                    name: "ellipsoid".into(),
                    shape: ShapeFamily::Ellipsoid {
                        lo: [0.95, 0.45, 0.45],
                        hi: [1.05, 0.6, 0.6],
                    },
                    albedo: [0.85, 0.35, 0.25],
                },
                ClassSpec {
                    name: "box".into(),
                    shape: ShapeFamily::Box {
                        lo: [0.75, 0.75, 0.75],
                        hi: [0.9, 0.9, 0.9],
                    },
                    albedo: [0.25, 0.5, 0.85],
                },
            ],
            samples_per_class: 100,
            image_size: 64,
            mesh_level: 4,
            pose: PoseDistribution::default(),
            light: [0.4, 0.6, 1.0],
            ambient: 0.35,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParameter(m));
        if self.classes.is_empty() {
            return bad("at least one class is required".into());
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        if self.image_size < 8 {
            return bad(format!("image_size must be at least 8, got {}", self.image_size));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return bad(format!("ambient must be in [0, 1], got {}", self.ambient));
        }
        if self.light.iter().all(|&c| c == 0.0) {
            return bad("light direction must be nonzero".into());
        }
        let p = &self.pose;
        if !(p.scale[0] > 0.0 && p.scale[1] >= p.scale[0]) {
            return bad(format!("scale range {:?} must be positive and ordered", p.scale));
        }
        if p.azimuth[1] < p.azimuth[0] || p.elevation[1] < p.elevation[0] || p.translation < 0.0 {
            return bad("pose ranges must be ordered".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 by position within a class.
    pub fn of(index: usize, count: usize) -> Split {
        let train = count * 8 / 10;
        let val = count / 10;
        if index < train {
            Split::Train
        } else if index < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (train, val, test)")),
        }
    }
}

/// One manifest line. Paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: String,
    pub mask: String,
    /// `[s, t_x, t_y, q_w, q_x, q_y, q_z]`.
    pub pose: [f64; 7],
    pub label: usize,
    pub split: Split,
    /// The generating primitive, for 3-D evaluation.
    pub shape: Primitive,
}

impl SampleRecord {
    pub fn pose(&self) -> Result<Pose, GeometryError> {
        Pose::from_array(self.pose)
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    /// Reads `manifest.jsonl` from a dataset directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let reader = BufReader::new(fs::File::open(&file).map_err(io_err(&file))?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err(&file))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SampleRecord = serde_json::from_str(&line).map_err(|e| SynthError::Manifest {
                path: file.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            Pose::from_array(record.pose).map_err(|e| SynthError::Manifest {
                path: file.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Ok(Self { root, records })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> + '_ {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn num_classes(&self) -> usize {
        self.records.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    /// All samples of a split, decoded, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<TrainSample>, SynthError> {
        self.split(split).map(|r| load_sample(&self.root, r)).collect()
    }
}

/// Decodes one record: image scaled to `[0,1]`, mask thresholded to
/// `{0,1}`.
pub fn load_sample(root: &Path, record: &SampleRecord) -> Result<TrainSample, SynthError> {
    let image = load_rgb_png(&root.join(&record.image))?;
    let mut mask = load_mask_png(&root.join(&record.mask))?;
    for v in mask.data_mut() {
        *v = if *v >= 0.5 { 1.0 } else { 0.0 };
    }
    if image.shape()[1..] != *mask.shape() {
        return Err(SynthError::InvalidParameter(format!(
            "{}: image {:?} and mask {:?} sizes differ",
            record.image,
            image.shape(),
            mask.shape()
        )));
    }
    let pose = record.pose().map_err(|e| SynthError::InvalidParameter(format!("{}: {e}", record.image)))?;
    Ok(TrainSample { image, mask, pose })
}

/// Hard mask and flat-shaded Lambertian image of `mesh` under `pose`,
/// on a black background.
pub fn render_sample(mesh: &Mesh, pose: &Pose, size: usize, albedo: [f64; 3], light: [f64; 3], ambient: f64) -> TrainSample {
    let hard = rasterize_hard(mesh, pose, size);
    let ln = (light.iter().map(|c| c * c).sum::<f64>()).sqrt();
    let l = light.map(|c| c / ln);
    let shade: Vec<f64> = (0..mesh.num_faces())
        .map(|f| {
            let n = pose.rotation.rotate(mesh.face_normal(f));
            let nn = (n.iter().map(|c| c * c).sum::<f64>()).sqrt();
            let cos = if nn > 0.0 { (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]) / nn } else { 0.0 };
            ambient + (1.0 - ambient) * cos.max(0.0)
        })
        .collect();
    let n = size * size;
    let mut image = vec![0.0; 3 * n];
    let mut mask = vec![0.0; n];
    for (p, f) in hard.face.iter().enumerate() {
        if let Some(f) = *f {
            mask[p] = 1.0;
            for c in 0..3 {
                image[c * n + p] = albedo[c] * shade[f];
            }
        }
    }
    TrainSample {
        image: Tensor::new(&[3, size, size], image).unwrap(),
        mask: Tensor::new(&[size, size], mask).unwrap(),
        pose: *pose,
    }
}

/// Writes `images/`, `masks/`, `manifest.jsonl` and `dataset.json` under
/// `out`. Sample `k` draws from its own ChaCha stream `k` of `config.seed`,
/// so the output depends only on the config.
pub fn generate_dataset(config: &DatasetConfig, out: &Path) -> Result<Manifest, SynthError> {
    config.validate()?;
    for dir in [out.to_path_buf(), out.join("images"), out.join("masks")] {
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut records = Vec::with_capacity(config.classes.len() * config.samples_per_class);
    let mut index = 0u64;
    for (label, class) in config.classes.iter().enumerate() {
        for i in 0..config.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(index);
            let shape = class.shape.sample(&mut rng);
            let pose = config.pose.sample(&mut rng);
            let mesh = primitive(&shape, config.mesh_level)?;
            let sample = render_sample(&mesh, &pose, config.image_size, class.albedo, config.light, config.ambient);
            let image = format!("images/{index:05}.png");
            let mask = format!("masks/{index:05}.png");
            save_rgb_png(&out.join(&image), &sample.image)?;
            save_mask_png(&out.join(&mask), &sample.mask)?;
            records.push(SampleRecord {
                image,
                mask,
                pose: pose.to_array(),
                label,
                split: Split::of(i, config.samples_per_class),
                shape,
            });
            index += 1;
        }
    }
    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r).expect("record serializes"));
        lines.push('\n');
    }
    let manifest = out.join(MANIFEST_FILE);
    write_atomic(&manifest, lines.as_bytes()).map_err(io_err(&manifest))?;
    let cfg = out.join(CONFIG_FILE);
    let json = serde_json::to_vec_pretty(config).expect("config serializes");
    write_atomic(&cfg, &json).map_err(io_err(&cfg))?;
    Ok(Manifest {
        root: out.to_path_buf(),
        records,
    })
}
