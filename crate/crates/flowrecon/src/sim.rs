//! Ground-truth scene generation: a small operator-split buoyant-smoke
//! solver producing frame-aligned density/velocity sequences plus an
//! obstacle signed distance field.
//!
//! The stored sequences satisfy rho[t+1] = maccormack(rho[t], u[t]) up to the
//! density injected at the source, so reconstruction error is not confounded
//! by advection-scheme mismatch.

use serde::{Deserialize, Serialize};

use crate::fields;
use crate::grid::{GridSpec, ScalarGrid, ScalarSequence, VectorGrid, VectorSequence};
use crate::projection::{project, PoissonConfig};
use crate::transport::advect_maccormack;
use crate::util::SplitMix64;
use crate::vec3::Vec3;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    /// Buoyant plume rising from a bottom inflow disk in an open box.
    Plume,
    /// Side-wall inflow past a solid cylinder.
    Cylinder,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub scene: SceneKind,
    pub resolution: usize,
    pub frames: usize,
    pub dt: f64,
    pub buoyancy: f64,
    /// Density added per unit time inside the inflow region.
    pub inflow_rate: f64,
    /// Speed imposed in the inflow region before projection.
    pub inflow_velocity: f64,
    /// Radius of the plume inflow disk / cylinder smoke nozzle (domain units).
    pub inflow_radius: f64,
    /// Cylinder obstacle radius (cylinder scene only).
    pub obstacle_radius: f64,
    /// Densities below this value are truncated to exactly zero after each
    /// step, keeping an honest zero-density background for masked metrics.
    pub density_floor: f64,
    /// Simulation steps with density injection before recording starts.
    pub warmup: usize,
    /// Keep injecting density while recording. Off by default so recorded
    /// pairs satisfy rho[t+1] = maccormack(rho[t], u[t]) exactly; the inflow
    /// velocity condition stays active either way.
    pub inflow_during_capture: bool,
    pub seed: u64,
    pub poisson: PoissonConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            scene: SceneKind::Plume,
            resolution: 32,
            frames: 20,
            dt: 0.05,
            buoyancy: 1.2,
            inflow_rate: 8.0,
            inflow_velocity: 0.5,
            inflow_radius: 0.12,
            obstacle_radius: 0.08,
            density_floor: 1e-6,
            warmup: 12,
            inflow_during_capture: false,
            seed: 0,
            poisson: PoissonConfig::default(),
        }
    }
}

impl SceneConfig {
    pub fn plume(resolution: usize, frames: usize, seed: u64) -> Self {
        Self { scene: SceneKind::Plume, resolution, frames, seed, ..Self::default() }
    }

    pub fn cylinder(resolution: usize, frames: usize, seed: u64) -> Self {
        Self {
            scene: SceneKind::Cylinder,
            resolution,
            frames,
            seed,
            buoyancy: 0.0,
            inflow_velocity: 0.8,
            inflow_radius: 0.16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config("a scene needs at least 2 frames".into()));
        }
        if self.resolution < 4 {
            return Err(Error::Config("scene resolution must be at least 4".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("scene dt must be positive".into()));
        }
        if self.buoyancy < 0.0 {
            return Err(Error::Config("buoyancy must be nonnegative".into()));
        }
        self.poisson.validate()
    }

    pub fn grid_spec<T: Real>(&self) -> Result<GridSpec<T>> {
        GridSpec::cube(self.resolution)
    }

    /// Obstacle SDF: a cylinder along z for the cylinder scene, the
    /// large-positive sentinel otherwise.
    pub fn sdf<T: Real>(&self) -> Result<ScalarGrid<T>> {
        let spec = self.grid_spec::<T>()?;
        Ok(match self.scene {
            SceneKind::Plume => fields::no_obstacle_sdf(&spec),
            SceneKind::Cylinder => fields::cylinder_sdf(
                &spec,
                2,
                Vec3::new(crate::lit(0.35), crate::lit(0.5), crate::lit(0.5)),
                crate::lit(self.obstacle_radius),
            ),
        })
    }
}

/// Density and velocity carried between simulation steps.
#[derive(Clone, Debug)]
pub struct SimState<T: Real> {
    pub rho: ScalarGrid<T>,
    pub u: VectorGrid<T>,
}

impl<T: Real> SimState<T> {
    pub fn zeros(spec: GridSpec<T>) -> Self {
        Self { rho: ScalarGrid::new(spec), u: VectorGrid::new(spec) }
    }
}

fn inflow_cells<T: Real>(spec: &GridSpec<T>, cfg: &SceneConfig) -> Vec<usize> {
    let mut cells = Vec::new();
    let r2 = cfg.inflow_radius * cfg.inflow_radius;
    for k in 0..spec.nz {
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let p = spec.cell_center(i, j, k).to_f64();
                let inside = match cfg.scene {
                    SceneKind::Plume => {
                        let dx = p.x - 0.5;
                        let dz = p.z - 0.5;
                        p.y > 0.04 && p.y < 0.13 && dx * dx + dz * dz <= r2
                    }
                    SceneKind::Cylinder => {
                        let dy = p.y - 0.5;
                        let dz = p.z - 0.5;
                        p.x > 0.04 && p.x < 0.13 && dy * dy + dz * dz <= r2
                    }
                };
                if inside {
                    cells.push(spec.index(i, j, k));
                }
            }
        }
    }
    cells
}

/// Per-step inflow velocity with a small seeded jitter that destabilizes the
/// plume symmetrically to the seed.
fn inflow_velocity_vector<T: Real>(cfg: &SceneConfig, rng: &mut SplitMix64) -> Vec3<T> {
    let jitter = 0.08 * cfg.inflow_velocity;
    let (a, b) = (rng.range_f64(-jitter, jitter), rng.range_f64(-jitter, jitter));
    match cfg.scene {
        SceneKind::Plume => {
            Vec3::new(crate::lit(a), crate::lit(cfg.inflow_velocity), crate::lit(b))
        }
        SceneKind::Cylinder => {
            Vec3::new(crate::lit(cfg.inflow_velocity), crate::lit(a), crate::lit(b))
        }
    }
}

/// One operator-split step: self-advect velocity, apply buoyancy, impose the
/// inflow band, project to divergence-free, zero solids, then advect density
/// with the new velocity and inject the source.
pub fn sim_step<T: Real>(
    state: &SimState<T>,
    cfg: &SceneConfig,
    sdf: Option<&ScalarGrid<T>>,
    inflow: &[usize],
    inflow_vel: Vec3<T>,
    inject: bool,
) -> Result<SimState<T>> {
    let dt = crate::lit::<T>(cfg.dt);
    // velocity step
    let mut u_star = advect_maccormack(&state.u, &state.u, dt);
    let buoy = crate::lit::<T>(cfg.buoyancy) * dt;
    for (v, r) in u_star.data_mut().iter_mut().zip(state.rho.data()) {
        v.y += buoy * *r;
    }
    for &idx in inflow {
        u_star.data_mut()[idx] = inflow_vel;
    }
    let (u_new, _solve) = project(&u_star, sdf, &cfg.poisson)?;
    // density step
    let mut rho_new = advect_maccormack(&state.rho, &u_new, dt);
    if inject {
        let add = crate::lit::<T>(cfg.inflow_rate) * dt;
        let one = T::one();
        for &idx in inflow {
            let v = rho_new.data()[idx];
            rho_new.data_mut()[idx] = (v + add).min(one);
        }
    }
    let floor = crate::lit::<T>(cfg.density_floor);
    for v in rho_new.data_mut() {
        if *v < floor {
            *v = T::zero();
        }
    }
    Ok(SimState { rho: rho_new, u: u_new })
}

/// Generate a full scene: frame-aligned density and velocity sequences plus
/// the obstacle SDF. Deterministic per seed.
pub fn generate<T: Real>(
    cfg: &SceneConfig,
) -> Result<(ScalarSequence<T>, VectorSequence<T>, ScalarGrid<T>)> {
    cfg.validate()?;
    let spec = cfg.grid_spec::<T>()?;
    let sdf = cfg.sdf::<T>()?;
    let has_obstacle = matches!(cfg.scene, SceneKind::Cylinder);
    let sdf_opt = has_obstacle.then_some(&sdf);
    let inflow = inflow_cells(&spec, cfg);
    let mut rng = SplitMix64::new(cfg.seed);

    let mut state = SimState::zeros(spec);
    // seed the first frame with one injection so frame 0 is not empty
    let add = crate::lit::<T>(cfg.inflow_rate * cfg.dt);
    for &idx in &inflow {
        state.rho.data_mut()[idx] = add.min(T::one());
    }

    for _ in 0..cfg.warmup {
        let inflow_vel = inflow_velocity_vector::<T>(cfg, &mut rng);
        state = sim_step(&state, cfg, sdf_opt, &inflow, inflow_vel, true)?;
    }

    let mut rho_frames = Vec::with_capacity(cfg.frames);
    let mut u_frames = Vec::with_capacity(cfg.frames);
    for _ in 0..cfg.frames {
        let inflow_vel = inflow_velocity_vector::<T>(cfg, &mut rng);
        let next = sim_step(&state, cfg, sdf_opt, &inflow, inflow_vel, cfg.inflow_during_capture)?;
        rho_frames.push(state.rho.clone());
        u_frames.push(next.u.clone());
        state = next;
    }
    let dt = crate::lit::<T>(cfg.dt);
    Ok((
        ScalarSequence::new(rho_frames, dt)?,
        VectorSequence::new(u_frames, dt)?,
        sdf,
    ))
}
