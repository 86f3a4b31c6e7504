use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use mcmr::eval::{evaluate, predict, EvalConfig};
use mcmr::geometry::{export_obj, Pose, Quat};
use mcmr::imageio::{save_mask_png, save_rgb_png, write_atomic};
use mcmr::model::load_checkpoint;
use mcmr::softrender::{render_color, RenderConfig};
use mcmr::synthdata::{generate_dataset, load_sample, DatasetConfig, Manifest, Split};
use mcmr::trainer::{run, TrainConfig};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "mcmr", version, about = "Multi-category mesh reconstruction on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        /// Dataset config (JSON or TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Image side in pixels.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Train a model; writes checkpoints and log.csv under --out.
    Train {
        /// Training config (JSON or TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print evaluation metrics as JSON.
    Eval {
        #[command(flatten)]
        input: Input,
        /// Eval config (JSON or TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Voxel grid side for 3-D IoU; 0 skips it.
        #[arg(long)]
        resolution: Option<usize>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the prediction for one sample at the predicted and true pose.
    Render {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        pick: Pick,
        #[arg(long)]
        out: PathBuf,
        /// Output side in pixels; defaults to the sample size.
        #[arg(long)]
        resolution: Option<usize>,
        /// Also render six views at 60° steps about the vertical axis.
        #[arg(long)]
        turntable: bool,
    },
    /// Write the weighted meanshape and the deformed shape of one sample as OBJ.
    ExportMesh {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        pick: Pick,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct Pick {
    #[arg(long, default_value = "test")]
    split: Split,
    /// Index within the split.
    #[arg(long, default_value_t = 0)]
    sample: usize,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    } else {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    };
    Ok(value)
}

fn files_under(dir: &Path, into: &mut BTreeSet<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            into.insert(p.clone());
            files_under(&p, into);
        } else {
            into.insert(p);
        }
    }
}

/// Removes whatever a failed command created under `out`.
struct Cleanup {
    out: PathBuf,
    existed: bool,
    before: BTreeSet<PathBuf>,
}

impl Cleanup {
    fn new(out: &Path) -> Self {
        let mut before = BTreeSet::new();
        files_under(out, &mut before);
        Self {
            out: out.to_path_buf(),
            existed: out.exists(),
            before,
        }
    }

    fn rollback(&self) {
        if !self.existed {
            let _ = fs::remove_dir_all(&self.out);
            return;
        }
        let mut after = BTreeSet::new();
        files_under(&self.out, &mut after);
        // Reverse order visits children before their directories.
        let created: Vec<_> = after.difference(&self.before).collect();
        for p in created.into_iter().rev() {
            let _ = if p.is_dir() { fs::remove_dir(p) } else { fs::remove_file(p) };
        }
    }
}

fn pick_sample(manifest: &Manifest, pick: &Pick) -> Result<mcmr::synthdata::TrainSample> {
    let record = manifest.split(pick.split).nth(pick.sample).ok_or_else(|| {
        format!(
            "split {:?} has {} samples, index {} requested",
            pick.split,
            manifest.split(pick.split).count(),
            pick.sample
        )
    })?;
    Ok(load_sample(&manifest.root, record)?)
}

fn turntable_pose(pose: &Pose, degrees: f64) -> Pose {
    let spin = Quat::from_axis_angle([0.0, 1.0, 0.0], degrees.to_radians());
    Pose {
        rotation: pose.rotation.mul(spin),
        ..*pose
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            config,
            out,
            seed,
            resolution,
        } => {
            let mut cfg: DatasetConfig = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = resolution {
                cfg.image_size = r;
            }
            cfg.validate()?;
            let guard = Cleanup::new(&out);
            let manifest = generate_dataset(&cfg, &out).inspect_err(|_| guard.rollback())?;
            log::info!("wrote {} samples to {}", manifest.records.len(), out.display());
        }
        Command::Train {
            config,
            dataset,
            out,
            seed,
            checkpoint,
        } => {
            let mut cfg: TrainConfig = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.model.seed = s;
            }
            cfg.validate()?;
            let manifest = Manifest::load(&dataset)?;
            let guard = Cleanup::new(&out);
            let summary = run(&cfg, &manifest, &out, checkpoint.as_deref()).inspect_err(|_| guard.rollback())?;
            log::info!("{} steps, final checkpoint {}", summary.steps, summary.checkpoint.display());
        }
        Command::Eval {
            input,
            config,
            split,
            resolution,
            out,
        } => {
            let mut cfg: EvalConfig = load_config(config.as_deref())?;
            if let Some(r) = resolution {
                cfg.voxel_resolution = r;
            }
            let params = load_checkpoint(&input.checkpoint)?.params;
            let manifest = Manifest::load(&input.dataset)?;
            let report = evaluate(&params, &manifest, split, &cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(path) = out {
                write_atomic(&path, json.as_bytes()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            println!("{json}");
        }
        Command::Render {
            input,
            pick,
            out,
            resolution,
            turntable,
        } => {
            let params = load_checkpoint(&input.checkpoint)?.params;
            let manifest = Manifest::load(&input.dataset)?;
            let sample = pick_sample(&manifest, &pick)?;
            let pred = predict(&params, &sample.image)?;
            let cfg = RenderConfig::with_size(resolution.unwrap_or(sample.mask.shape()[0]));
            let mut views = vec![("pred".to_string(), pred.pose), ("gt".to_string(), sample.pose)];
            if turntable {
                for k in 0..6 {
                    let deg = 60.0 * k as f64;
                    views.push((format!("turntable_{:03}", deg as u32), turntable_pose(&pred.pose, deg)));
                }
            }
            let renders = views
                .iter()
                .map(|(name, pose)| Ok((name, render_color(&pred.shape, &pred.texture, pose, &cfg)?)))
                .collect::<Result<Vec<_>>>()?;
            let guard = Cleanup::new(&out);
            let write = || -> Result<()> {
                fs::create_dir_all(&out)?;
                for (name, r) in &renders {
                    save_rgb_png(&out.join(format!("{name}.png")), &r.rgb)?;
                    save_mask_png(&out.join(format!("{name}_mask.png")), &r.mask)?;
                }
                Ok(())
            };
            write().inspect_err(|_| guard.rollback())?;
        }
        Command::ExportMesh { input, pick, out } => {
            let params = load_checkpoint(&input.checkpoint)?.params;
            let manifest = Manifest::load(&input.dataset)?;
            let sample = pick_sample(&manifest, &pick)?;
            let pred = predict(&params, &sample.image)?;
            let guard = Cleanup::new(&out);
            let write = || -> Result<()> {
                fs::create_dir_all(&out)?;
                export_obj(&pred.meanshape, &out.join("meanshape.obj"))?;
                export_obj(&pred.shape, &out.join("shape.obj"))?;
                Ok(())
            };
            write().inspect_err(|_| guard.rollback())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
