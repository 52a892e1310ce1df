//! On-disk interfaces: the FVF binary field format (bit-exact, f32 payload),
//! the strict JSON run configuration, dataset directory layout, CSV schemas,
//! run metadata, and the output-directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec, ScalarGrid, ScalarSequence, VectorGrid, VectorSequence};
use crate::losses::{LossReport, LossWeights};
use crate::metrics::{MaskStudyRow, MetricsRow, MetricsSummary};
use crate::projection::PoissonConfig;
use crate::recon::{Stage, StageConfig};
use crate::sim::SceneConfig;
use crate::tracer::ParticleSet;
use crate::util::fnv1a64;
use crate::vec3::Vec3;
use crate::{lit, Error, Real, Result};

const MAGIC: &[u8; 4] = b"FVF1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 44;

/// Parsed FVF header.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldFileHeader {
    pub nx: u32,
    pub ny: u32,
    pub nz: u32,
    pub components: u32,
    pub frames: u32,
    pub dx: f32,
    pub dt: f32,
}

impl FieldFileHeader {
    fn payload_values(&self) -> usize {
        self.frames as usize
            * self.nx as usize
            * self.ny as usize
            * self.nz as usize
            * self.components as usize
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(MAGIC);
        buf[4..8].copy_from_slice(&VERSION.to_le_bytes());
        buf[8..12].copy_from_slice(&self.nx.to_le_bytes());
        buf[12..16].copy_from_slice(&self.ny.to_le_bytes());
        buf[16..20].copy_from_slice(&self.nz.to_le_bytes());
        buf[20..24].copy_from_slice(&self.components.to_le_bytes());
        buf[24..28].copy_from_slice(&self.frames.to_le_bytes());
        buf[28..32].copy_from_slice(&self.dx.to_le_bytes());
        buf[32..36].copy_from_slice(&self.dt.to_le_bytes());
        // bytes 36..44 reserved, zero
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN]) -> Result<Self> {
        if &buf[0..4] != MAGIC {
            return Err(Error::Format("bad magic, not an FVF file".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported FVF version {version}")));
        }
        let h = Self {
            nx: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
            ny: u32::from_le_bytes(buf[12..16].try_into().unwrap()),
            nz: u32::from_le_bytes(buf[16..20].try_into().unwrap()),
            components: u32::from_le_bytes(buf[20..24].try_into().unwrap()),
            frames: u32::from_le_bytes(buf[24..28].try_into().unwrap()),
            dx: f32::from_le_bytes(buf[28..32].try_into().unwrap()),
            dt: f32::from_le_bytes(buf[32..36].try_into().unwrap()),
        };
        if h.components != 1 && h.components != 3 {
            return Err(Error::Format(format!("components must be 1 or 3, got {}", h.components)));
        }
        if h.frames == 0 {
            return Err(Error::Format("field file holds zero frames".into()));
        }
        if !h.dx.is_finite() || h.dx <= 0.0 || !h.dt.is_finite() {
            return Err(Error::Format("non-finite or non-positive header floats".into()));
        }
        Ok(h)
    }
}

/// Frames read from an FVF file, scalar or vector.
#[derive(Debug)]
pub enum FieldPayload<T: Real> {
    Scalar { frames: Vec<ScalarGrid<T>>, dt: f64 },
    Vector { frames: Vec<VectorGrid<T>>, dt: f64 },
}

fn spec_of<T: Real>(h: &FieldFileHeader) -> Result<GridSpec<T>> {
    GridSpec::new(h.nx as usize, h.ny as usize, h.nz as usize, lit(h.dx as f64))
}

/// Write scalar frames; payload is f32 little-endian, x-fastest.
pub fn write_scalar_frames<T: Real>(
    path: &Path,
    frames: &[ScalarGrid<T>],
    dt: f64,
) -> Result<()> {
    assert!(!frames.is_empty());
    let s = *frames[0].spec();
    let header = FieldFileHeader {
        nx: s.nx as u32,
        ny: s.ny as u32,
        nz: s.nz as u32,
        components: 1,
        frames: frames.len() as u32,
        dx: s.dx.to_f64().unwrap() as f32,
        dt: dt as f32,
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.encode())?;
    for f in frames {
        for v in f.data() {
            w.write_all(&(v.to_f64().unwrap() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write vector frames; components interleaved per cell.
pub fn write_vector_frames<T: Real>(
    path: &Path,
    frames: &[VectorGrid<T>],
    dt: f64,
) -> Result<()> {
    assert!(!frames.is_empty());
    let s = *frames[0].spec();
    let header = FieldFileHeader {
        nx: s.nx as u32,
        ny: s.ny as u32,
        nz: s.nz as u32,
        components: 3,
        frames: frames.len() as u32,
        dx: s.dx.to_f64().unwrap() as f32,
        dt: dt as f32,
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.encode())?;
    for f in frames {
        for v in f.data() {
            for c in 0..3 {
                w.write_all(&(v[c].to_f64().unwrap() as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read any FVF file; validates header, length and finiteness.
pub fn read_field<T: Real>(path: &Path) -> Result<FieldPayload<T>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hbuf = [0u8; HEADER_LEN];
    r.read_exact(&mut hbuf)
        .map_err(|_| Error::Format("file too short for an FVF header".into()))?;
    let header = FieldFileHeader::decode(&hbuf)?;
    let spec = spec_of::<T>(&header)?;
    let n_values = header.payload_values();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n_values * 4 {
        return Err(Error::Format(format!(
            "payload length {} does not match header ({} values expected)",
            bytes.len(),
            n_values
        )));
    }
    let mut values = Vec::with_capacity(n_values);
    for chunk in bytes.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite("field file payload".into()));
        }
        values.push(v);
    }
    let cells = spec.cells();
    let dt = header.dt as f64;
    match header.components {
        1 => {
            let mut frames = Vec::with_capacity(header.frames as usize);
            for f in 0..header.frames as usize {
                let start = f * cells;
                let data: Vec<T> =
                    values[start..start + cells].iter().map(|v| lit(*v as f64)).collect();
                frames.push(ScalarGrid::from_data(spec, data)?);
            }
            Ok(FieldPayload::Scalar { frames, dt })
        }
        _ => {
            let mut frames = Vec::with_capacity(header.frames as usize);
            for f in 0..header.frames as usize {
                let start = f * cells * 3;
                let mut data = Vec::with_capacity(cells);
                for c in 0..cells {
                    let o = start + 3 * c;
                    data.push(Vec3::new(
                        lit::<T>(values[o] as f64),
                        lit::<T>(values[o + 1] as f64),
                        lit::<T>(values[o + 2] as f64),
                    ));
                }
                frames.push(VectorGrid::from_data(spec, data)?);
            }
            Ok(FieldPayload::Vector { frames, dt })
        }
    }
}

pub fn read_scalar_sequence<T: Real>(path: &Path) -> Result<ScalarSequence<T>> {
    match read_field::<T>(path)? {
        FieldPayload::Scalar { frames, dt } => ScalarSequence::new(frames, lit(dt)),
        FieldPayload::Vector { .. } => {
            Err(Error::Format(format!("{} holds a vector field, expected scalar", path.display())))
        }
    }
}

pub fn read_vector_sequence<T: Real>(path: &Path) -> Result<VectorSequence<T>> {
    match read_field::<T>(path)? {
        FieldPayload::Vector { frames, dt } => VectorSequence::new(frames, lit(dt)),
        FieldPayload::Scalar { .. } => {
            Err(Error::Format(format!("{} holds a scalar field, expected vector", path.display())))
        }
    }
}

pub fn read_scalar_grid<T: Real>(path: &Path) -> Result<ScalarGrid<T>> {
    match read_field::<T>(path)? {
        FieldPayload::Scalar { frames, .. } => Ok(frames.into_iter().next().unwrap()),
        FieldPayload::Vector { .. } => {
            Err(Error::Format(format!("{} holds a vector field, expected scalar", path.display())))
        }
    }
}

// ---------------------------------------------------------------------------
// Run configuration

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSection {
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for StageSection {
    fn default() -> Self {
        Self { iters: 1500, lr: 1e-3, seed: 0 }
    }
}

/// Strict JSON configuration of a reconstruction run. Unknown keys are
/// rejected at every level; all defaults follow the presets.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Weight preset: "plume" or "cylinder". Explicit `weights` override it.
    pub preset: String,
    pub weights: Option<LossWeights>,
    pub coarse: StageSection,
    pub fine: StageSection,
    pub coarse_factor: usize,
    /// MacCormack sub-steps per frame gap in the transport loss.
    pub substeps: usize,
    pub poisson: PoissonConfig,
    /// Write parameter checkpoints every N iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: "plume".into(),
            weights: None,
            coarse: StageSection::default(),
            fine: StageSection { iters: 400, lr: 1e-3, seed: 0 },
            coarse_factor: 4,
            substeps: 1,
            poisson: PoissonConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.preset != "plume" && self.preset != "cylinder" {
            return Err(Error::Config(format!(
                "preset must be 'plume' or 'cylinder', got '{}'",
                self.preset
            )));
        }
        self.effective_weights().validate()?;
        self.poisson.validate()?;
        if self.coarse_factor == 0 || self.substeps == 0 {
            return Err(Error::Config("coarse_factor and substeps must be positive".into()));
        }
        for (name, s) in [("coarse", &self.coarse), ("fine", &self.fine)] {
            if !(s.lr > 0.0) || !s.lr.is_finite() {
                return Err(Error::Config(format!("{name}.lr must be positive")));
            }
        }
        Ok(())
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.weights.unwrap_or_else(|| {
            if self.preset == "cylinder" {
                LossWeights::cylinder()
            } else {
                LossWeights::default()
            }
        })
    }

    pub fn coarse_stage(&self) -> StageConfig {
        StageConfig {
            stage: Stage::Coarse,
            iters: self.coarse.iters,
            lr: self.coarse.lr,
            weights: self.effective_weights(),
            seed: self.coarse.seed,
            coarse_factor: self.coarse_factor,
            substeps: self.substeps,
            poisson: self.poisson,
            ..StageConfig::default()
        }
    }

    pub fn fine_stage(&self) -> StageConfig {
        StageConfig {
            stage: Stage::Fine,
            iters: self.fine.iters,
            lr: self.fine.lr,
            weights: self.effective_weights(),
            seed: self.fine.seed,
            coarse_factor: self.coarse_factor,
            substeps: self.substeps,
            poisson: self.poisson,
            ..StageConfig::default()
        }
    }
}

/// Convention note recorded with every metrics output.
pub const MASK_CONVENTION: &str =
    "masked metrics use strict rho > 0 on ground-truth density; velocity, vorticity and divergence are all masked";

/// Reproducibility metadata written next to run outputs.
pub fn write_run_meta(path: &Path, effective: &serde_json::Value, extra: &str) -> Result<()> {
    let canonical = serde_json::to_string(effective)?;
    let meta = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_hash": format!("{:016x}", fnv1a64(canonical.as_bytes())),
        "effective_config": effective,
        "mask_convention": MASK_CONVENTION,
        "notes": extra,
    });
    fs::write(path, serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset directory layout

pub const DENSITY_FILE: &str = "density.fvf";
pub const VELOCITY_FILE: &str = "velocity.fvf";
pub const SDF_FILE: &str = "sdf.fvf";
pub const SCENE_FILE: &str = "scene.json";
pub const COARSE_FILE: &str = "coarse.fvf";
pub const FINE_FILE: &str = "fine.fvf";
pub const FULL_FILE: &str = "full.fvf";

pub struct Dataset<T: Real> {
    pub rho: ScalarSequence<T>,
    pub velocity: VectorSequence<T>,
    pub sdf: ScalarGrid<T>,
    pub scene: SceneConfig,
}

pub fn write_dataset<T: Real>(
    dir: &Path,
    rho: &ScalarSequence<T>,
    velocity: &VectorSequence<T>,
    sdf: &ScalarGrid<T>,
    scene: &SceneConfig,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let dt = rho.dt().to_f64().unwrap();
    write_scalar_frames(&dir.join(DENSITY_FILE), rho.frames(), dt)?;
    write_vector_frames(&dir.join(VELOCITY_FILE), velocity.frames(), dt)?;
    write_scalar_frames(&dir.join(SDF_FILE), std::slice::from_ref(sdf), dt)?;
    fs::write(dir.join(SCENE_FILE), serde_json::to_string_pretty(scene)?)?;
    Ok(())
}

pub fn read_dataset<T: Real>(dir: &Path) -> Result<Dataset<T>> {
    let rho = read_scalar_sequence(&dir.join(DENSITY_FILE))?;
    let velocity = read_vector_sequence(&dir.join(VELOCITY_FILE))?;
    let sdf = read_scalar_grid(&dir.join(SDF_FILE))?;
    let scene: SceneConfig = serde_json::from_str(&fs::read_to_string(dir.join(SCENE_FILE))?)?;
    Ok(Dataset { rho, velocity, sdf, scene })
}

// ---------------------------------------------------------------------------
// CSV writers

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

/// Loss histories of both stages into one CSV with a union header.
pub fn write_loss_history(
    path: &Path,
    stages: &[(&str, &[LossReport])],
) -> Result<()> {
    let mut term_names: Vec<String> = Vec::new();
    for (_, reports) in stages {
        if let Some(first) = reports.first() {
            for t in &first.terms {
                if !term_names.contains(&t.name) {
                    term_names.push(t.name.clone());
                }
            }
        }
    }
    let mut out = String::new();
    out.push_str("stage,step");
    for n in &term_names {
        out.push_str(&format!(",{n}_raw,{n}_weighted"));
    }
    out.push_str(",total\n");
    for (stage, reports) in stages {
        for r in *reports {
            out.push_str(&format!("{stage},{}", r.step));
            for n in &term_names {
                match r.terms.iter().find(|t| &t.name == n) {
                    Some(t) => out.push_str(&format!(",{},{}", fmt(t.raw), fmt(t.weighted))),
                    None => out.push_str(",,"),
                }
            }
            out.push_str(&format!(",{}\n", fmt(r.total)));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Per-frame metric rows plus a mean summary row.
pub fn write_metrics_csv(
    path: &Path,
    rows: &[MetricsRow],
    summary: &MetricsSummary,
) -> Result<()> {
    let mut out = String::from("frame,divergence_l2,velocity_l2,vorticity_l2,psnr,ssim\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.frame,
            fmt(r.divergence_l2),
            fmt(r.velocity_l2),
            fmt(r.vorticity_l2),
            fmt(r.psnr),
            fmt(r.ssim)
        ));
    }
    out.push_str(&format!(
        "mean,{},{},{},{},{}\n",
        fmt(summary.divergence_l2),
        fmt(summary.velocity_l2),
        fmt(summary.vorticity_l2),
        fmt(summary.psnr),
        fmt(summary.ssim)
    ));
    fs::write(path, out)?;
    Ok(())
}

pub fn write_mask_sweep_csv(path: &Path, rows: &[MaskStudyRow]) -> Result<()> {
    let mut out = String::from("tau,masked_velocity_l2,unmasked_velocity_l2\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.tau, fmt(r.masked_l2), fmt(r.unmasked_l2)));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_ablation_curve_csv(path: &Path, variant: &str, curve: &[f64]) -> Result<()> {
    let mut out = String::from("iteration,div_raw\n");
    for (i, v) in curve.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt(*v)));
    }
    // variant recorded in the sibling metadata as well
    let _ = variant;
    fs::write(path, out)?;
    Ok(())
}

/// Tracer CSV: frame, particle id, position, alive flag.
pub fn write_tracer_csv<T: Real>(path: &Path, p: &ParticleSet<T>) -> Result<()> {
    let mut out = String::from("frame,particle,x,y,z,alive\n");
    for (t, (frame, alive)) in p.positions.iter().zip(&p.alive).enumerate() {
        for (i, (pos, a)) in frame.iter().zip(alive).enumerate() {
            out.push_str(&format!(
                "{t},{i},{},{},{},{}\n",
                fmt(pos.x.to_f64().unwrap()),
                fmt(pos.y.to_f64().unwrap()),
                fmt(pos.z.to_f64().unwrap()),
                if *a { 1 } else { 0 }
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Output-directory lock

/// Exclusive advisory lock on an output directory, released on drop.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(
                format!("output directory {} is locked by another writer", dir.display()),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
