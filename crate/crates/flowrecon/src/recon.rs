//! Optimizable coarse/fine velocity parameterization, the Adam optimizer,
//! the staged training loop, and the gated coarse+fine combination.

use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec, ScalarGrid, ScalarSequence, VectorGrid, VectorSequence};
use crate::losses::grad::{coarse_total_with_grad, fine_total_with_grad};
use crate::losses::{CoarseInputs, FineInputs, LossReport, LossWeights, PhysicsMode, TemporalMode};
use crate::ops::resample_adjoint;
use crate::projection::PoissonConfig;
use crate::{lit, Error, Real, Result};

/// Per-frame velocity grids at coarse resolution (full resolution divided by
/// `factor` per axis).
#[derive(Clone, Debug)]
pub struct CoarseParams<T: Real> {
    pub velocity: VectorSequence<T>,
    pub factor: usize,
}

/// Per-frame velocity grids at full resolution.
#[derive(Clone, Debug)]
pub struct FineParams<T: Real> {
    pub velocity: VectorSequence<T>,
}

/// Which stage a configuration drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Coarse,
    Fine,
}

/// Configuration of one optimization stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub stage: Stage,
    pub iters: usize,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Coarse-grid reduction per axis (coarse stage only).
    pub coarse_factor: usize,
    pub temporal: TemporalMode,
    pub physics: PhysicsMode,
    /// MacCormack sub-steps per frame gap in the transport loss.
    pub substeps: usize,
    /// Poisson settings for the projection loss (fine stage only).
    pub poisson: PoissonConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Coarse,
            iters: 600,
            lr: 1e-3,
            weights: LossWeights::default(),
            seed: 0,
            coarse_factor: 4,
            temporal: TemporalMode::Long,
            physics: PhysicsMode::Vorticity,
            substeps: 1,
            poisson: PoissonConfig::default(),
        }
    }
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.coarse_factor == 0 {
            return Err(Error::Config("coarse_factor must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be at least 1".into()));
        }
        self.weights.validate()?;
        self.poisson.validate()
    }
}

/// Adam optimizer state for a sequence of velocity grids.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    m: Vec<VectorGrid<T>>,
    v: Vec<VectorGrid<T>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(spec: GridSpec<T>, frames: usize) -> Self {
        Self {
            m: (0..frames).map(|_| VectorGrid::new(spec)).collect(),
            v: (0..frames).map(|_| VectorGrid::new(spec)).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with bias correction. Moment shapes must match `params`.
pub fn adam_step<T: Real>(
    params: &mut [VectorGrid<T>],
    grads: &[VectorGrid<T>],
    state: &mut AdamState<T>,
    lr: T,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let b1 = lit::<T>(state.beta1);
    let b2 = lit::<T>(state.beta2);
    let eps = lit::<T>(state.eps);
    let one = T::one();
    let bc1 = one - b1.powi(state.step as i32);
    let bc2 = one - b2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let gd = g.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for idx in 0..pd.len() {
            for c in 0..3 {
                let grad = gd[idx][c];
                md[idx][c] = b1 * md[idx][c] + (one - b1) * grad;
                vd[idx][c] = b2 * vd[idx][c] + (one - b2) * grad * grad;
                let m_hat = md[idx][c] / bc1;
                let v_hat = vd[idx][c] / bc2;
                pd[idx][c] = pd[idx][c] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Realize coarse parameters at the target resolution via trilinear
/// resampling.
pub fn upsample_coarse<T: Real>(
    p: &CoarseParams<T>,
    target: &GridSpec<T>,
) -> Result<VectorSequence<T>> {
    VectorSequence::new(
        p.velocity.frames().iter().map(|f| f.resample(target)).collect(),
        p.velocity.dt(),
    )
}

/// Per-frame gate reference: twice the mean coarse speed over all cells.
pub fn combine_gate<T: Real>(u_c_frame: &VectorGrid<T>) -> T {
    let n = lit::<T>(u_c_frame.data().len() as f64);
    let mean = u_c_frame.data().iter().map(|v| v.norm()).fold(T::zero(), |a, b| a + b) / n;
    lit::<T>(2.0) * mean
}

/// The spatially varying blend factor alpha = min((|u_c|/m)^5, 1) for one
/// frame; a zero gate reference yields alpha = 0 everywhere.
pub fn alpha_frame<T: Real>(u_c_frame: &VectorGrid<T>) -> ScalarGrid<T> {
    let m = combine_gate(u_c_frame);
    let spec = *u_c_frame.spec();
    let mut out = ScalarGrid::new(spec);
    if m <= T::zero() {
        return out;
    }
    for (o, v) in out.data_mut().iter_mut().zip(u_c_frame.data()) {
        let ratio = v.norm() / m;
        *o = ratio.powi(5).min(T::one());
    }
    out
}

/// Combine coarse and fine velocity into the full field:
/// u_full = u_c + alpha * u_f with the local gate alpha.
pub fn combine<T: Real>(
    u_c: &VectorSequence<T>,
    u_f: &VectorSequence<T>,
) -> Result<VectorSequence<T>> {
    if u_c.spec() != u_f.spec() || u_c.len() != u_f.len() {
        return Err(Error::SpecMismatch(
            "combine: coarse and fine sequences must share shape".into(),
        ));
    }
    let mut frames = Vec::with_capacity(u_c.len());
    for (cf, ff) in u_c.frames().iter().zip(u_f.frames()) {
        let alpha = alpha_frame(cf);
        let mut out = cf.clone();
        for ((o, f), a) in out.data_mut().iter_mut().zip(ff.data()).zip(alpha.data()) {
            *o += f.scale(*a);
        }
        frames.push(out);
    }
    VectorSequence::new(frames, u_c.dt())
}

fn non_finite_diagnostic(report: &LossReport, iter: usize) -> Error {
    let terms: Vec<String> =
        report.terms.iter().map(|t| format!("{}={:e}", t.name, t.raw)).collect();
    Error::NonFinite(format!("loss at iteration {iter} (terms: {})", terms.join(", ")))
}

/// Optimize the coarse velocity parameters against the coarse aggregate loss.
///
/// Parameters start at zero (the kinetic prior's minimizer) unless `init`
/// provides a warm start. Returns the final parameters and the per-iteration
/// loss history.
pub fn run_coarse_stage<T: Real>(
    rho: &ScalarSequence<T>,
    sdf: Option<&ScalarGrid<T>>,
    cfg: &StageConfig,
    init: Option<CoarseParams<T>>,
) -> Result<(CoarseParams<T>, Vec<LossReport>)> {
    run_coarse_stage_observed(rho, sdf, cfg, init, |_, _| Ok(()))
}

/// [`run_coarse_stage`] with a per-iteration observer (checkpointing hook).
pub fn run_coarse_stage_observed<T: Real>(
    rho: &ScalarSequence<T>,
    sdf: Option<&ScalarGrid<T>>,
    cfg: &StageConfig,
    init: Option<CoarseParams<T>>,
    mut observer: impl FnMut(usize, &VectorSequence<T>) -> Result<()>,
) -> Result<(CoarseParams<T>, Vec<LossReport>)> {
    cfg.validate()?;
    let fine_spec = *rho.spec();
    let coarse_spec = fine_spec.coarsen(cfg.coarse_factor)?;
    let mut params = match init {
        Some(p) => {
            if p.velocity.spec() != &coarse_spec || p.velocity.len() != rho.len() {
                return Err(Error::SpecMismatch(
                    "initial coarse parameters do not match the configured shape".into(),
                ));
            }
            p
        }
        None => CoarseParams {
            velocity: VectorSequence::zeros(coarse_spec, rho.len(), rho.dt())?,
            factor: cfg.coarse_factor,
        },
    };
    let inputs = CoarseInputs {
        rho,
        sdf,
        weights: &cfg.weights,
        temporal: cfg.temporal,
        physics: cfg.physics,
        substeps: cfg.substeps,
    };
    let mut adam = AdamState::new(coarse_spec, rho.len());
    let mut history = Vec::with_capacity(cfg.iters);
    let lr = lit::<T>(cfg.lr);
    for iter in 0..cfg.iters {
        let ups = upsample_coarse(&params, &fine_spec)?;
        let (report, fine_grads) = coarse_total_with_grad(&inputs, &ups, iter as u64)?;
        if !report.total.is_finite() {
            return Err(non_finite_diagnostic(&report, iter));
        }
        let grads: Vec<VectorGrid<T>> =
            fine_grads.iter().map(|g| resample_adjoint(g, &coarse_spec)).collect();
        let mut frames = params.velocity.into_frames();
        adam_step(&mut frames, &grads, &mut adam, lr);
        params.velocity = VectorSequence::new(frames, rho.dt())?;
        observer(iter, &params.velocity)?;
        history.push(report);
    }
    Ok((params, history))
}

/// Optimize the fine velocity against the fine aggregate loss with the
/// coarse velocity frozen (already upsampled to full resolution).
pub fn run_fine_stage<T: Real>(
    rho: &ScalarSequence<T>,
    u_c: &VectorSequence<T>,
    sdf: Option<&ScalarGrid<T>>,
    cfg: &StageConfig,
    init: Option<FineParams<T>>,
) -> Result<(FineParams<T>, Vec<LossReport>)> {
    run_fine_stage_observed(rho, u_c, sdf, cfg, init, |_, _| Ok(()))
}

/// [`run_fine_stage`] with a per-iteration observer (checkpointing hook).
pub fn run_fine_stage_observed<T: Real>(
    rho: &ScalarSequence<T>,
    u_c: &VectorSequence<T>,
    sdf: Option<&ScalarGrid<T>>,
    cfg: &StageConfig,
    init: Option<FineParams<T>>,
    mut observer: impl FnMut(usize, &VectorSequence<T>) -> Result<()>,
) -> Result<(FineParams<T>, Vec<LossReport>)> {
    cfg.validate()?;
    let spec = *rho.spec();
    let mut params = match init {
        Some(p) => {
            if p.velocity.spec() != &spec || p.velocity.len() != rho.len() {
                return Err(Error::SpecMismatch(
                    "initial fine parameters do not match the density grid".into(),
                ));
            }
            p
        }
        None => FineParams { velocity: VectorSequence::zeros(spec, rho.len(), rho.dt())? },
    };
    let inputs = FineInputs {
        rho,
        u_c,
        sdf,
        weights: &cfg.weights,
        poisson: &cfg.poisson,
    };
    let mut adam = AdamState::new(spec, rho.len());
    let mut history = Vec::with_capacity(cfg.iters);
    let lr = lit::<T>(cfg.lr);
    for iter in 0..cfg.iters {
        let (report, grads) = fine_total_with_grad(&inputs, &params.velocity, iter as u64)?;
        if !report.total.is_finite() {
            return Err(non_finite_diagnostic(&report, iter));
        }
        let mut frames = params.velocity.into_frames();
        adam_step(&mut frames, &grads, &mut adam, lr);
        params.velocity = VectorSequence::new(frames, rho.dt())?;
        observer(iter, &params.velocity)?;
        history.push(report);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields;
    use crate::vec3::Vec3;

    #[test]
    fn alpha_gate_properties() {
        let s = GridSpec::<f64>::cube(8).unwrap();
        // uniform speed: every cell has |u_c| = m/2 and alpha = 0.5^5
        // exactly (power-of-two speed keeps the mean exact in binary)
        let uniform = VectorGrid::constant(s, Vec3::new(0.25, 0.0, 0.0));
        let alpha = alpha_frame(&uniform);
        for a in alpha.data() {
            assert_eq!(*a, 0.03125);
        }
        // zero field: gate reference is zero, alpha stays zero
        let zero = VectorGrid::new(s);
        let alpha = alpha_frame(&zero);
        for a in alpha.data() {
            assert_eq!(*a, 0.0);
        }
    }

    #[test]
    fn combine_examples() {
        let s = GridSpec::<f64>::cube(8).unwrap();
        // one strong cell in a weak background: strong cell saturates at
        // alpha = 1, exact-zero cells keep alpha = 0
        let mut coarse = VectorGrid::new(s);
        coarse.data_mut()[0] = Vec3::new(10.0, 0.0, 0.0);
        let m = combine_gate(&coarse);
        assert!(10.0 >= m);
        let fine = VectorGrid::constant(s, Vec3::new(0.0, 1.0, 0.0));
        let u_c = VectorSequence::new(vec![coarse; 2], 0.1).unwrap();
        let u_f = VectorSequence::new(vec![fine; 2], 0.1).unwrap();
        let full = combine(&u_c, &u_f).unwrap();
        // saturated cell: u_full = u_c + u_f
        assert_eq!(full.frame(0).data()[0], Vec3::new(10.0, 1.0, 0.0));
        // zero-coarse cell: fine contribution suppressed entirely
        assert_eq!(full.frame(0).data()[1], Vec3::new(0.0, 0.0, 0.0));
        // alpha within [0,1] everywhere
        let alpha = alpha_frame(u_c.frame(0));
        for a in alpha.data() {
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let s = GridSpec::<f64>::cube(4).unwrap();
        let mut params = vec![fields::band_limited_vector(&s, 3, 1, 1.0)];
        let before = params[0].clone();
        let grads = vec![VectorGrid::new(s)];
        let mut state = AdamState::new(s, 1);
        adam_step(&mut params, &grads, &mut state, 1e-3);
        assert_eq!(params[0].data(), before.data());
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let s = GridSpec::<f64>::cube(4).unwrap();
        let mut params = vec![VectorGrid::new(s)];
        let grads = vec![VectorGrid::constant(s, Vec3::new(0.37, -2.0, 5.0e3))];
        let mut state = AdamState::new(s, 1);
        let lr = 1e-3;
        let mut last_delta = Vec3::new(0.0, 0.0, 0.0);
        for _ in 0..1000 {
            let prev = params[0].data()[0];
            adam_step(&mut params, &grads, &mut state, lr);
            last_delta = params[0].data()[0] - prev;
        }
        for c in 0..3 {
            let mag = last_delta[c].abs();
            assert!(
                mag >= 0.9 * lr && mag <= 1.0 * lr + 1e-12,
                "per-coordinate Adam step {mag} should approach lr {lr}"
            );
        }
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let s = GridSpec::<f64>::cube(8).unwrap();
        let v = VectorSequence::new(
            vec![fields::band_limited_vector(&s, 9, 2, 1.0); 2],
            0.1,
        )
        .unwrap();
        let p = CoarseParams { velocity: v.clone(), factor: 1 };
        let up = upsample_coarse(&p, &s).unwrap();
        for (a, b) in up.frames().iter().zip(v.frames()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let s = GridSpec::<f64>::cube(8).unwrap();
        let rho = ScalarSequence::new(
            vec![fields::gaussian_blob(&s, Vec3::new(0.5, 0.5, 0.5), 0.2); 3],
            0.1,
        )
        .unwrap();
        let cfg = StageConfig {
            iters: 0,
            coarse_factor: 2,
            weights: LossWeights { k: 2, ..LossWeights::default() },
            ..StageConfig::default()
        };
        let (params, history) = run_coarse_stage(&rho, None, &cfg, None).unwrap();
        assert!(history.is_empty());
        for f in params.velocity.frames() {
            for v in f.data() {
                assert_eq!(v.norm(), 0.0);
            }
        }
    }

    #[test]
    fn static_density_drives_velocity_to_zero() {
        // with a static density the kinetic term dominates and random
        // initial parameters must decay by two orders of magnitude
        let s = GridSpec::<f64>::cube(16).unwrap();
        let rho = ScalarSequence::new(
            vec![fields::gaussian_blob(&s, Vec3::new(0.5, 0.5, 0.5), 0.25); 3],
            0.1,
        )
        .unwrap();
        let coarse_spec = s.coarsen(4).unwrap();
        let init_vel = VectorSequence::new(
            (0..3)
                .map(|t| fields::band_limited_vector(&coarse_spec, 100 + t as u64, 1, 0.5))
                .collect(),
            0.1,
        )
        .unwrap();
        let mean_speed = |v: &VectorSequence<f64>| -> f64 {
            let mut acc = 0.0;
            let mut n = 0usize;
            for f in v.frames() {
                for x in f.data() {
                    acc += x.norm();
                    n += 1;
                }
            }
            acc / n as f64
        };
        let initial = mean_speed(&init_vel);
        let cfg = StageConfig {
            iters: 2000,
            lr: 1.5e-3,
            coarse_factor: 4,
            weights: LossWeights { k: 2, ..LossWeights::default() },
            ..StageConfig::default()
        };
        let init = CoarseParams { velocity: init_vel, factor: 4 };
        let (params, history) = run_coarse_stage(&rho, None, &cfg, Some(init)).unwrap();
        let final_speed = mean_speed(&params.velocity);
        assert!(
            final_speed <= 1e-2 * initial,
            "mean speed {final_speed} vs initial {initial} (loss {} -> {})",
            history.first().unwrap().total,
            history.last().unwrap().total
        );
    }

    #[test]
    fn optimization_is_deterministic() {
        let s = GridSpec::<f64>::cube(8).unwrap();
        let rho = ScalarSequence::new(
            (0..3)
                .map(|t| {
                    fields::gaussian_blob(&s, Vec3::new(0.4 + 0.05 * t as f64, 0.5, 0.5), 0.2)
                })
                .collect(),
            0.1,
        )
        .unwrap();
        let cfg = StageConfig {
            iters: 5,
            coarse_factor: 2,
            weights: LossWeights { k: 2, ..LossWeights::default() },
            ..StageConfig::default()
        };
        let (p1, h1) = run_coarse_stage(&rho, None, &cfg, None).unwrap();
        let (p2, h2) = run_coarse_stage(&rho, None, &cfg, None).unwrap();
        for (a, b) in p1.velocity.frames().iter().zip(p2.velocity.frames()) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in h1.iter().zip(h2.iter()) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
    }
}
