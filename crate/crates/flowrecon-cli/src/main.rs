//! Command-line surface of the velocity reconstruction toolkit.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numerical
//! failure. Diagnostics go to standard error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowrecon::grid::{Field, ScalarGrid, ScalarSequence, VectorSequence};
use flowrecon::io::{self, FieldPayload, LockGuard, RunConfig};
use flowrecon::losses::AblationVariant;
use flowrecon::metrics;
use flowrecon::recon::{self, CoarseParams, FineParams};
use flowrecon::render::{self, SliceAxis};
use flowrecon::sim::{self, SceneConfig};
use flowrecon::tracer;
use flowrecon::{Error, Result};

#[derive(Parser)]
#[command(
    name = "flowrecon",
    version,
    about = "Reconstructs time-varying 3D velocity fields from density sequences"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic ground-truth scene (density, velocity, SDF).
    Gen {
        /// Scene kind: plume or cylinder.
        #[arg(long)]
        scene: String,
        /// Cells per axis.
        #[arg(long)]
        res: usize,
        /// Recorded frames.
        #[arg(long)]
        frames: usize,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Optimize coarse and fine velocity fields against a density sequence.
    Reconstruct {
        /// Dataset directory (density.fvf, sdf.fvf, scene.json).
        #[arg(long)]
        data: PathBuf,
        /// JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Advect the first density frame through a velocity sequence.
    Resim {
        #[arg(long)]
        velocity: PathBuf,
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seed tracer particles on a plane and advect them.
    Trace {
        #[arg(long)]
        velocity: PathBuf,
        /// Plane selector, e.g. axis=y,coord=0.1
        #[arg(long)]
        plane: String,
        #[arg(long)]
        count: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Metric suite against a ground-truth dataset.
    Eval {
        /// Reconstruction directory (full.fvf) or dataset directory.
        #[arg(long)]
        recon: PathBuf,
        /// Ground-truth dataset directory.
        #[arg(long)]
        gt: PathBuf,
        /// Output metrics CSV.
        #[arg(long)]
        out: PathBuf,
        /// Run one ablation variant: short-u, short-w, long-u or long-w.
        #[arg(long)]
        ablation: Option<String>,
        /// Comma-separated density thresholds for the masking study.
        #[arg(long)]
        mask_sweep: Option<String>,
    },
    /// Render one slice of a field file to PNG.
    Render {
        #[arg(long)]
        field: PathBuf,
        /// Slice axis: x, y or z.
        #[arg(long)]
        axis: String,
        /// Slice index or "mid".
        #[arg(long)]
        index: String,
        /// Frame number.
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::NonFinite(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { scene, res, frames, out, seed } => cmd_gen(&scene, res, frames, &out, seed),
        Cmd::Reconstruct { data, config, out } => cmd_reconstruct(&data, &config, &out),
        Cmd::Resim { velocity, density, out } => cmd_resim(&velocity, &density, &out),
        Cmd::Trace { velocity, plane, count, out } => cmd_trace(&velocity, &plane, count, &out),
        Cmd::Eval { recon, gt, out, ablation, mask_sweep } => {
            cmd_eval(&recon, &gt, &out, ablation.as_deref(), mask_sweep.as_deref())
        }
        Cmd::Render { field, axis, index, frame, out } => {
            cmd_render(&field, &axis, &index, frame, &out)
        }
    }
}

fn cmd_gen(scene: &str, res: usize, frames: usize, out: &Path, seed: u64) -> Result<()> {
    let cfg = match scene {
        "plume" => SceneConfig::plume(res, frames, seed),
        "cylinder" => SceneConfig::cylinder(res, frames, seed),
        other => return Err(Error::Config(format!("unknown scene '{other}'"))),
    };
    let _lock = LockGuard::acquire(out)?;
    let (rho, u, sdf) = sim::generate::<f64>(&cfg)?;
    io::write_dataset(out, &rho, &u, &sdf, &cfg)?;
    eprintln!(
        "generated {scene} scene: {res}^3, {frames} frames -> {}",
        out.display()
    );
    Ok(())
}

fn has_solid(sdf: &ScalarGrid<f64>) -> bool {
    sdf.data().iter().any(|v| *v <= 0.0)
}

fn cmd_reconstruct(data: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::from_file(config)?;
    let rho: ScalarSequence<f64> = io::read_scalar_sequence(&data.join(io::DENSITY_FILE))?;
    let sdf: ScalarGrid<f64> = io::read_scalar_grid(&data.join(io::SDF_FILE))?;
    let sdf_opt = has_solid(&sdf).then_some(&sdf);
    let _lock = LockGuard::acquire(out)?;
    let dt = rho.dt();

    let ckpt_dir = out.join("checkpoints");
    let every = cfg.checkpoint_every;
    if every > 0 {
        std::fs::create_dir_all(&ckpt_dir)?;
    }

    let coarse_cfg = cfg.coarse_stage();
    let (coarse, coarse_history) = recon::run_coarse_stage_observed(
        &rho,
        sdf_opt,
        &coarse_cfg,
        None,
        |iter, params| {
            if every > 0 && (iter + 1) % every == 0 {
                io::write_vector_frames(
                    &ckpt_dir.join(format!("coarse_{:06}.fvf", iter + 1)),
                    params.frames(),
                    dt,
                )?;
            }
            Ok(())
        },
    )?;
    let u_c_full = recon::upsample_coarse(&coarse, rho.spec())?;

    let fine_cfg = cfg.fine_stage();
    let (fine, fine_history) = recon::run_fine_stage_observed(
        &rho,
        &u_c_full,
        sdf_opt,
        &fine_cfg,
        None,
        |iter, params| {
            if every > 0 && (iter + 1) % every == 0 {
                io::write_vector_frames(
                    &ckpt_dir.join(format!("fine_{:06}.fvf", iter + 1)),
                    params.frames(),
                    dt,
                )?;
            }
            Ok(())
        },
    )?;
    let full = recon::combine(&u_c_full, &fine.velocity)?;

    write_outputs(out, &coarse, &fine, &full, dt)?;
    io::write_loss_history(
        &out.join("loss_history.csv"),
        &[("coarse", &coarse_history[..]), ("fine", &fine_history[..])],
    )?;
    let effective = serde_json::json!({
        "preset": cfg.preset,
        "weights": cfg.effective_weights(),
        "coarse": cfg.coarse,
        "fine": cfg.fine,
        "coarse_factor": cfg.coarse_factor,
        "substeps": cfg.substeps,
        "poisson": cfg.poisson,
        "checkpoint_every": cfg.checkpoint_every,
    });
    io::write_run_meta(
        &out.join("run_meta.json"),
        &effective,
        "coarse.fvf holds coarse-resolution parameters; fine.fvf and full.fvf are full resolution",
    )?;
    eprintln!(
        "reconstruction done: coarse loss {:.3e} -> {:.3e}, fine loss {:.3e} -> {:.3e}",
        coarse_history.first().map_or(f64::NAN, |r| r.total),
        coarse_history.last().map_or(f64::NAN, |r| r.total),
        fine_history.first().map_or(f64::NAN, |r| r.total),
        fine_history.last().map_or(f64::NAN, |r| r.total),
    );
    Ok(())
}

fn write_outputs(
    out: &Path,
    coarse: &CoarseParams<f64>,
    fine: &FineParams<f64>,
    full: &VectorSequence<f64>,
    dt: f64,
) -> Result<()> {
    io::write_vector_frames(&out.join(io::COARSE_FILE), coarse.velocity.frames(), dt)?;
    io::write_vector_frames(&out.join(io::FINE_FILE), fine.velocity.frames(), dt)?;
    io::write_vector_frames(&out.join(io::FULL_FILE), full.frames(), dt)?;
    Ok(())
}

fn cmd_resim(velocity: &Path, density: &Path, out: &Path) -> Result<()> {
    let u: VectorSequence<f64> = io::read_vector_sequence(velocity)?;
    let rho: ScalarSequence<f64> = io::read_scalar_sequence(density)?;
    let resim = metrics::resimulate(rho.frame(0), &u)?;
    io::write_scalar_frames(out, resim.frames(), u.dt())?;
    Ok(())
}

fn parse_plane(plane: &str) -> Result<(usize, f64)> {
    let mut axis = None;
    let mut coord = None;
    for part in plane.split(',') {
        match part.split_once('=') {
            Some(("axis", v)) => {
                axis = Some(v.parse::<SliceAxis>()?.index());
            }
            Some(("coord", v)) => {
                coord = Some(v.parse::<f64>().map_err(|_| {
                    Error::Config(format!("plane coordinate '{v}' is not a number"))
                })?);
            }
            _ => {
                return Err(Error::Config(format!(
                    "plane selector part '{part}' not understood; expected axis=..,coord=.."
                )))
            }
        }
    }
    match (axis, coord) {
        (Some(a), Some(c)) => Ok((a, c)),
        _ => Err(Error::Config("plane selector needs both axis= and coord=".into())),
    }
}

fn cmd_trace(velocity: &Path, plane: &str, count: usize, out: &Path) -> Result<()> {
    let u: VectorSequence<f64> = io::read_vector_sequence(velocity)?;
    let (axis, coord) = parse_plane(plane)?;
    let seeded = tracer::seed_plane(axis, coord, count, 0, u.spec())?;
    let advected = tracer::advect_particles(&seeded, &u);
    io::write_tracer_csv(out, &advected)?;
    Ok(())
}

fn cmd_eval(
    recon_dir: &Path,
    gt: &Path,
    out: &Path,
    ablation: Option<&str>,
    mask_sweep: Option<&str>,
) -> Result<()> {
    let ds = io::read_dataset::<f64>(gt)?;
    if let Some(variant) = ablation {
        let variant: AblationVariant = variant.parse()?;
        let base = recon::StageConfig { iters: 400, ..recon::StageConfig::default() };
        let sdf_opt = has_solid(&ds.sdf).then_some(&ds.sdf);
        let result = metrics::ablation_run(&ds.rho, &ds.velocity, sdf_opt, variant, &base)?;
        let row = metrics::MetricsRow {
            frame: 0,
            divergence_l2: result.summary.divergence_l2,
            velocity_l2: result.summary.velocity_l2,
            vorticity_l2: result.summary.vorticity_l2,
            psnr: result.summary.psnr,
            ssim: result.summary.ssim,
        };
        io::write_metrics_csv(out, std::slice::from_ref(&row), &result.summary)?;
        io::write_ablation_curve_csv(
            &out.with_extension("ablation_curve.csv"),
            variant.name(),
            &result.div_curve,
        )?;
        io::write_run_meta(
            &out.with_extension("meta.json"),
            &serde_json::json!({ "ablation_variant": variant.name() }),
            "ablation run: summary metrics over the coarse-stage reconstruction",
        )?;
        return Ok(());
    }

    // prefer a reconstruction output; fall back to a dataset's own velocity
    let full_path = recon_dir.join(io::FULL_FILE);
    let vel_path = recon_dir.join(io::VELOCITY_FILE);
    let recon_u: VectorSequence<f64> = if full_path.exists() {
        io::read_vector_sequence(&full_path)?
    } else if vel_path.exists() {
        io::read_vector_sequence(&vel_path)?
    } else {
        return Err(Error::Config(format!(
            "no {} or {} under {}",
            io::FULL_FILE,
            io::VELOCITY_FILE,
            recon_dir.display()
        )));
    };
    let (rows, summary) = metrics::evaluate(&recon_u, &ds.velocity, &ds.rho)?;
    io::write_metrics_csv(out, &rows, &summary)?;
    io::write_run_meta(
        &out.with_extension("meta.json"),
        &serde_json::json!({ "recon": recon_dir.display().to_string() }),
        "per-frame metrics plus mean row",
    )?;
    if let Some(taus) = mask_sweep {
        let taus: Vec<f64> = taus
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| {
                    Error::Config(format!("mask sweep threshold '{t}' is not a number"))
                })
            })
            .collect::<Result<_>>()?;
        let rows = metrics::threshold_mask_study(&recon_u, &ds.velocity, &ds.rho, &taus)?;
        io::write_mask_sweep_csv(&out.with_extension("mask_sweep.csv"), &rows)?;
    }
    Ok(())
}

fn cmd_render(field: &Path, axis: &str, index: &str, frame: usize, out: &Path) -> Result<()> {
    let axis: SliceAxis = axis.parse()?;
    let payload: FieldPayload<f64> = io::read_field(field)?;
    let dims = |spec: &flowrecon::grid::GridSpec<f64>| spec.dims(axis.index());
    match payload {
        FieldPayload::Scalar { frames, .. } => {
            let g = frames.get(frame).ok_or_else(|| {
                Error::Config(format!("frame {frame} out of range ({} frames)", frames.len()))
            })?;
            let idx = parse_index(index, dims(g.spec()))?;
            render::render_scalar_slice(g, axis, idx, out)
        }
        FieldPayload::Vector { frames, .. } => {
            let g = frames.get(frame).ok_or_else(|| {
                Error::Config(format!("frame {frame} out of range ({} frames)", frames.len()))
            })?;
            let idx = parse_index(index, dims(g.spec()))?;
            render::render_vector_slice(g, axis, idx, out)
        }
    }
}

fn parse_index(index: &str, dim: usize) -> Result<usize> {
    if index == "mid" {
        return Ok(dim / 2);
    }
    index
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("slice index '{index}' is neither a number nor 'mid'")))
}
