//! The differentiable-evaluation contract: every loss exposes value plus
//! gradient with respect to its velocity parameters, and a central
//! finite-difference harness verifies the hand-derived adjoints.

use crate::grid::{GridSpec, ScalarGrid, ScalarSequence, VectorGrid, VectorSequence};
use crate::losses::grad as lgrad;
use crate::losses::{CoarseInputs, FineInputs, LossWeights, PhysicsMode, TemporalMode};
use crate::ops::resample_adjoint;
use crate::projection::PoissonConfig;
use crate::util::SplitMix64;
use crate::{lit, Error, Real, Result};

/// Identifier of a registered differentiable loss. Parsing an unknown name
/// fails, which is the rejection path for non-differentiable requests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossId {
    Kinetic,
    Boundary,
    Divergence,
    Vorticity,
    Velocity,
    Transport,
    Advection,
    Warp,
    Projection,
    CoarseTotal,
    FineTotal,
}

impl std::str::FromStr for LossId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "kinetic" => LossId::Kinetic,
            "boundary" => LossId::Boundary,
            "divergence" => LossId::Divergence,
            "vorticity" => LossId::Vorticity,
            "velocity" => LossId::Velocity,
            "transport" => LossId::Transport,
            "advection" => LossId::Advection,
            "warp" => LossId::Warp,
            "projection" => LossId::Projection,
            "coarse_total" => LossId::CoarseTotal,
            "fine_total" => LossId::FineTotal,
            other => return Err(Error::UnknownLoss(other.to_string())),
        })
    }
}

/// A loss with frozen side inputs, differentiable in a velocity sequence.
pub trait DifferentiableLoss<T: Real> {
    fn name(&self) -> &'static str;
    fn value(&self, params: &VectorSequence<T>) -> Result<T>;
    fn value_and_grad(&self, params: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)>;
}

/// Evaluate a loss together with its gradient; the gradient grids have
/// exactly the shape of `params`.
pub fn eval_with_grad<T: Real>(
    loss: &dyn DifferentiableLoss<T>,
    params: &VectorSequence<T>,
) -> Result<(T, Vec<VectorGrid<T>>)> {
    if !params.all_finite() {
        return Err(Error::NonFinite(format!("parameters of loss '{}'", loss.name())));
    }
    let (value, grads) = loss.value_and_grad(params)?;
    debug_assert_eq!(grads.len(), params.len());
    Ok((value, grads))
}

/// Outcome of a finite-difference gradient verification.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat coordinate (frame-major, then cell, then component) of the
    /// worst probe.
    pub worst_coordinate: usize,
    pub eps: f64,
}

/// Central finite differences at randomly probed coordinates against the
/// analytic gradient. Relative error uses max(|fd|, |analytic|, 1e-8) as the
/// denominator.
pub fn fd_check<T: Real>(
    loss: &dyn DifferentiableLoss<T>,
    params: &VectorSequence<T>,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Config("fd_check eps must be positive".into()));
    }
    let (_, grads) = eval_with_grad(loss, params)?;
    let cells = params.spec().cells();
    let total = params.len() * cells * 3;
    let mut rng = SplitMix64::new(seed);
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for _ in 0..samples {
        let coord = rng.below(total);
        let frame = coord / (cells * 3);
        let cell = (coord / 3) % cells;
        let comp = coord % 3;
        let probe = |delta: f64| -> Result<f64> {
            let mut frames = params.frames().to_vec();
            frames[frame].data_mut()[cell][comp] += lit::<T>(delta);
            let p = VectorSequence::new(frames, params.dt())?;
            Ok(loss.value(&p)?.to_f64().unwrap())
        };
        let fp = probe(eps)?;
        let fm = probe(-eps)?;
        let fd = (fp - fm) / (2.0 * eps);
        let an = grads[frame].data()[cell][comp].to_f64().unwrap();
        let denom = fd.abs().max(an.abs()).max(1e-8);
        let rel = (fd - an).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
            worst = coord;
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, worst_coordinate: worst, eps })
}

// ---------------------------------------------------------------------------
// Registered loss objects

pub struct KineticLoss;

impl<T: Real> DifferentiableLoss<T> for KineticLoss {
    fn name(&self) -> &'static str {
        "kinetic"
    }
    fn value(&self, u: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::kinetic_with_grad(u).0)
    }
    fn value_and_grad(&self, u: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        Ok(lgrad::kinetic_with_grad(u))
    }
}

pub struct BoundaryLoss<T: Real> {
    pub sdf: ScalarGrid<T>,
}

impl<T: Real> DifferentiableLoss<T> for BoundaryLoss<T> {
    fn name(&self) -> &'static str {
        "boundary"
    }
    fn value(&self, u: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::boundary_with_grad(u, &self.sdf)?.0)
    }
    fn value_and_grad(&self, u: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        lgrad::boundary_with_grad(u, &self.sdf)
    }
}

pub struct DivergenceLoss;

impl<T: Real> DifferentiableLoss<T> for DivergenceLoss {
    fn name(&self) -> &'static str {
        "divergence"
    }
    fn value(&self, u: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::divergence_with_grad(u).0)
    }
    fn value_and_grad(&self, u: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        Ok(lgrad::divergence_with_grad(u))
    }
}

pub struct VorticityLoss;

impl<T: Real> DifferentiableLoss<T> for VorticityLoss {
    fn name(&self) -> &'static str {
        "vorticity"
    }
    fn value(&self, u: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::vorticity_with_grad(u).0)
    }
    fn value_and_grad(&self, u: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        Ok(lgrad::vorticity_with_grad(u))
    }
}

pub struct VelocityLoss;

impl<T: Real> DifferentiableLoss<T> for VelocityLoss {
    fn name(&self) -> &'static str {
        "velocity"
    }
    fn value(&self, u: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::velocity_with_grad(u).0)
    }
    fn value_and_grad(&self, u: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        Ok(lgrad::velocity_with_grad(u))
    }
}

pub struct TransportLoss<T: Real> {
    pub rho: ScalarSequence<T>,
    pub k: usize,
    pub beta: f64,
    pub substeps: usize,
}

impl<T: Real> DifferentiableLoss<T> for TransportLoss<T> {
    fn name(&self) -> &'static str {
        "transport"
    }
    fn value(&self, u: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::transport_with_grad(&self.rho, u, self.k, lit(self.beta), self.substeps)?.0)
    }
    fn value_and_grad(&self, u: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        lgrad::transport_with_grad(&self.rho, u, self.k, lit(self.beta), self.substeps)
    }
}

pub struct AdvectionLoss<T: Real> {
    pub rho: ScalarSequence<T>,
}

impl<T: Real> DifferentiableLoss<T> for AdvectionLoss<T> {
    fn name(&self) -> &'static str {
        "advection"
    }
    fn value(&self, u: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::advection_with_grad(&self.rho, u)?.0)
    }
    fn value_and_grad(&self, u: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        lgrad::advection_with_grad(&self.rho, u)
    }
}

pub struct WarpLoss<T: Real> {
    pub u_c: VectorSequence<T>,
}

impl<T: Real> DifferentiableLoss<T> for WarpLoss<T> {
    fn name(&self) -> &'static str {
        "warp"
    }
    fn value(&self, u_f: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::warp_with_grad(u_f, &self.u_c)?.0)
    }
    fn value_and_grad(&self, u_f: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        lgrad::warp_with_grad(u_f, &self.u_c)
    }
}

pub struct ProjectionLoss<T: Real> {
    pub sdf: Option<ScalarGrid<T>>,
    pub poisson: PoissonConfig,
}

impl<T: Real> DifferentiableLoss<T> for ProjectionLoss<T> {
    fn name(&self) -> &'static str {
        "projection"
    }
    fn value(&self, u_f: &VectorSequence<T>) -> Result<T> {
        Ok(lgrad::projection_with_grad(u_f, self.sdf.as_ref(), &self.poisson)?.0)
    }
    fn value_and_grad(&self, u_f: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        lgrad::projection_with_grad(u_f, self.sdf.as_ref(), &self.poisson)
    }
}

/// The full coarse aggregate as a function of coarse-resolution parameters:
/// parameters are upsampled to the density grid, the losses evaluated there,
/// and gradients pulled back through the trilinear resampling.
pub struct CoarseTotalLoss<T: Real> {
    pub rho: ScalarSequence<T>,
    pub sdf: Option<ScalarGrid<T>>,
    pub weights: LossWeights,
    pub temporal: TemporalMode,
    pub physics: PhysicsMode,
    pub substeps: usize,
    /// Grid spec of the parameters (coarse resolution).
    pub param_spec: GridSpec<T>,
}

impl<T: Real> CoarseTotalLoss<T> {
    fn inputs(&self) -> CoarseInputs<'_, T> {
        CoarseInputs {
            rho: &self.rho,
            sdf: self.sdf.as_ref(),
            weights: &self.weights,
            temporal: self.temporal,
            physics: self.physics,
            substeps: self.substeps,
        }
    }

    fn upsample(&self, params: &VectorSequence<T>) -> Result<VectorSequence<T>> {
        if params.spec() != &self.param_spec {
            return Err(Error::SpecMismatch(
                "coarse parameters do not match the declared parameter spec".into(),
            ));
        }
        let fine = *self.rho.spec();
        VectorSequence::new(
            params.frames().iter().map(|f| f.resample(&fine)).collect(),
            params.dt(),
        )
    }
}

impl<T: Real> DifferentiableLoss<T> for CoarseTotalLoss<T> {
    fn name(&self) -> &'static str {
        "coarse_total"
    }
    fn value(&self, params: &VectorSequence<T>) -> Result<T> {
        let ups = self.upsample(params)?;
        let report = crate::losses::coarse_total(&self.inputs(), &ups, 0)?;
        Ok(lit(report.total))
    }
    fn value_and_grad(&self, params: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        let ups = self.upsample(params)?;
        let (report, fine_grads) = lgrad::coarse_total_with_grad(&self.inputs(), &ups, 0)?;
        let grads = fine_grads
            .iter()
            .map(|g| resample_adjoint(g, &self.param_spec))
            .collect();
        Ok((lit(report.total), grads))
    }
}

/// The full fine aggregate as a function of full-resolution parameters.
pub struct FineTotalLoss<T: Real> {
    pub rho: ScalarSequence<T>,
    pub u_c: VectorSequence<T>,
    pub sdf: Option<ScalarGrid<T>>,
    pub weights: LossWeights,
    pub poisson: PoissonConfig,
}

impl<T: Real> FineTotalLoss<T> {
    fn inputs(&self) -> FineInputs<'_, T> {
        FineInputs {
            rho: &self.rho,
            u_c: &self.u_c,
            sdf: self.sdf.as_ref(),
            weights: &self.weights,
            poisson: &self.poisson,
        }
    }
}

impl<T: Real> DifferentiableLoss<T> for FineTotalLoss<T> {
    fn name(&self) -> &'static str {
        "fine_total"
    }
    fn value(&self, u_f: &VectorSequence<T>) -> Result<T> {
        let report = crate::losses::fine_total(&self.inputs(), u_f, 0)?;
        Ok(lit(report.total))
    }
    fn value_and_grad(&self, u_f: &VectorSequence<T>) -> Result<(T, Vec<VectorGrid<T>>)> {
        let (report, grads) = lgrad::fine_total_with_grad(&self.inputs(), u_f, 0)?;
        Ok((lit(report.total), grads))
    }
}
