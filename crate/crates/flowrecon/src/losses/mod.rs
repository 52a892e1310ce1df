//! The physics losses: long-term transport, vorticity-form momentum residual,
//! divergence, kinetic energy and boundary suppression at the coarse level;
//! advection, warp and projection residuals at the fine level; plus the
//! self-advection velocity residual kept for the ablation harness.
//!
//! Every squared norm is a per-cell mean (resolution-independent weights).
//! PDE residual losses are restricted to interior cells, where the central
//! stencils hold; plain magnitude penalties (kinetic, boundary, transport
//! mismatch) run over all cells.

pub mod grad;

use serde::{Deserialize, Serialize};

use crate::grid::{Field, ScalarGrid, ScalarSequence, VectorGrid, VectorSequence};
use crate::ops::{curl, divergence, interior_mean_sq, time_derivative, vec_dot_grad};
use crate::projection::{project, PoissonConfig, PressureSolve};
use crate::transport::transport_chain_substeps;
use crate::{lit, Error, Real, Result};

/// Loss weights and transport-loss shape. Defaults are the plume presets;
/// [`LossWeights::cylinder`] switches to the weak-flow preset.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_vor: f64,
    pub lambda_div: f64,
    pub lambda_kine: f64,
    pub lambda_bnd: f64,
    pub lambda_warp: f64,
    pub lambda_proj: f64,
    /// Discount factor of the recursive transport loss, in (0, 1].
    pub beta: f64,
    /// Recursive advection depth of the transport loss.
    pub k: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_vor: 1e-5,
            lambda_div: 5e-3,
            lambda_kine: 10.0,
            lambda_bnd: 1000.0,
            lambda_warp: 1.0,
            lambda_proj: 1e6,
            beta: 0.95,
            k: 5,
        }
    }
}

impl LossWeights {
    /// Preset for scenes with weak flow past obstacles: lighter kinetic and
    /// boundary suppression so the velocity field is not crushed.
    pub fn cylinder() -> Self {
        Self { lambda_kine: 1.0, lambda_bnd: 100.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.k < 1 {
            return Err(Error::Config("transport depth k must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda_vor", self.lambda_vor),
            ("lambda_div", self.lambda_div),
            ("lambda_kine", self.lambda_kine),
            ("lambda_bnd", self.lambda_bnd),
            ("lambda_warp", self.lambda_warp),
            ("lambda_proj", self.lambda_proj),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Temporal supervision used by the coarse stage: the recursive multi-step
/// transport loss, or its single-step advection-residual ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    Long,
    Short,
}

/// Physics constraint used by the coarse stage: the vorticity-form residual,
/// or the self-advection velocity residual ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhysicsMode {
    Vorticity,
    Velocity,
}

/// The four coarse-stage configurations of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "short-u")]
    ShortU,
    #[serde(rename = "short-w")]
    ShortW,
    #[serde(rename = "long-u")]
    LongU,
    #[serde(rename = "long-w")]
    LongW,
}

impl AblationVariant {
    pub fn modes(self) -> (TemporalMode, PhysicsMode) {
        match self {
            AblationVariant::ShortU => (TemporalMode::Short, PhysicsMode::Velocity),
            AblationVariant::ShortW => (TemporalMode::Short, PhysicsMode::Vorticity),
            AblationVariant::LongU => (TemporalMode::Long, PhysicsMode::Velocity),
            AblationVariant::LongW => (TemporalMode::Long, PhysicsMode::Vorticity),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::ShortU => "short-u",
            AblationVariant::ShortW => "short-w",
            AblationVariant::LongU => "long-u",
            AblationVariant::LongW => "long-w",
        }
    }

    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::ShortU,
        AblationVariant::ShortW,
        AblationVariant::LongU,
        AblationVariant::LongW,
    ];
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "short-u" => Ok(AblationVariant::ShortU),
            "short-w" => Ok(AblationVariant::ShortW),
            "long-u" => Ok(AblationVariant::LongU),
            "long-w" => Ok(AblationVariant::LongW),
            other => Err(Error::Config(format!("unknown ablation variant '{other}'"))),
        }
    }
}

/// One loss term of a report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossTermValue {
    pub name: String,
    pub raw: f64,
    pub weight: f64,
    pub weighted: f64,
}

/// Per-term loss values for one optimizer step; the audit trail of training.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub terms: Vec<LossTermValue>,
    pub total: f64,
}

impl LossReport {
    pub fn new(step: u64, terms: Vec<(&str, f64, f64)>) -> Self {
        let terms: Vec<LossTermValue> = terms
            .into_iter()
            .map(|(name, raw, weight)| LossTermValue {
                name: name.to_string(),
                raw,
                weight,
                weighted: raw * weight,
            })
            .collect();
        let total = terms.iter().map(|t| t.weighted).sum();
        Self { step, terms, total }
    }

    pub fn raw(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.raw)
    }

    /// CSV header matching [`LossReport::csv_row`].
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["step".to_string()];
        for t in &self.terms {
            cols.push(format!("{}_raw", t.name));
            cols.push(format!("{}_weighted", t.name));
        }
        cols.push("total".to_string());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.step.to_string()];
        for t in &self.terms {
            cols.push(format!("{:e}", t.raw));
            cols.push(format!("{:e}", t.weighted));
        }
        cols.push(format!("{:e}", self.total));
        cols.join(",")
    }
}

fn check_frame(len: usize, t: usize) -> Result<()> {
    if t >= len {
        return Err(Error::Config(format!("frame index {t} out of range for {len} frames")));
    }
    Ok(())
}

/// Long-term transport loss at start frame `t`: advect rho_t recursively
/// through u_t .. u_{t+k-1} and sum the discounted per-step mismatches.
pub fn loss_trans<T: Real>(
    rho: &ScalarSequence<T>,
    u: &VectorSequence<T>,
    t: usize,
    k: usize,
    beta: T,
    substeps: usize,
) -> Result<T> {
    if t + k >= rho.len() + 1 || t + k > u.len() {
        return Err(Error::Config(format!(
            "transport window t={t}, k={k} exceeds {} density / {} velocity frames",
            rho.len(),
            u.len()
        )));
    }
    if t + k > rho.len() - 1 {
        return Err(Error::Config(format!(
            "transport window t={t}, k={k} needs density frame {}",
            t + k
        )));
    }
    let hats = transport_chain_substeps(
        rho.frame(t),
        &u.frames()[t..t + k],
        rho.dt(),
        substeps,
    );
    let mut acc = T::zero();
    let mut discount = T::one();
    for (i, hat) in hats.iter().enumerate() {
        let mut diff = hat.clone();
        diff.axpy(-T::one(), rho.frame(t + i + 1));
        acc += discount * diff.mean_sq();
        discount *= beta;
    }
    Ok(acc)
}

/// Vorticity-form momentum residual at frame `t`:
/// d(omega)/dt + (u . grad) omega - (omega . grad) u, interior mean square.
pub fn loss_vor<T: Real>(u: &VectorSequence<T>, t: usize) -> Result<T> {
    check_frame(u.len(), t)?;
    let omegas: Vec<VectorGrid<T>> = u.frames().iter().map(curl).collect();
    let domega_dt = time_derivative(&omegas, t, u.dt());
    let mut r = domega_dt;
    r.axpy(T::one(), &vec_dot_grad(u.frame(t), &omegas[t]));
    r.axpy(-T::one(), &vec_dot_grad(&omegas[t], u.frame(t)));
    Ok(interior_mean_sq(&r).0)
}

/// Self-advection velocity residual (ablation baseline):
/// du/dt + (u . grad) u, interior mean square.
pub fn loss_vel<T: Real>(u: &VectorSequence<T>, t: usize) -> Result<T> {
    check_frame(u.len(), t)?;
    let mut r = time_derivative(u.frames(), t, u.dt());
    r.axpy(T::one(), &vec_dot_grad(u.frame(t), u.frame(t)));
    Ok(interior_mean_sq(&r).0)
}

/// Divergence loss: interior mean square of the velocity divergence.
pub fn loss_div<T: Real>(u: &VectorGrid<T>) -> T {
    interior_mean_sq(&divergence(u)).0
}

/// Kinetic energy loss: mean squared speed over all cells.
pub fn loss_kine<T: Real>(u: &VectorGrid<T>) -> T {
    u.mean_sq()
}

/// Boundary loss: squared speed summed over solid cells (sdf <= 0),
/// normalized by the total cell count.
pub fn loss_bnd<T: Real>(u: &VectorGrid<T>, sdf: &ScalarGrid<T>) -> Result<T> {
    if u.spec() != sdf.spec() {
        return Err(Error::SpecMismatch("boundary loss: sdf and velocity grids differ".into()));
    }
    let n = lit::<T>(u.data().len() as f64);
    let mut acc = T::zero();
    for (v, s) in u.data().iter().zip(sdf.data()) {
        if *s <= T::zero() {
            acc += v.norm_sq();
        }
    }
    Ok(acc / n)
}

/// Short-term advection residual at frame `t` with the combined velocity:
/// d(rho)/dt + (u_c + u_f) . grad(rho), interior mean square.
pub fn loss_adv<T: Real>(
    rho: &ScalarSequence<T>,
    u_c: &VectorSequence<T>,
    u_f: &VectorSequence<T>,
    t: usize,
) -> Result<T> {
    check_frame(rho.len(), t)?;
    check_frame(u_c.len(), t)?;
    check_frame(u_f.len(), t)?;
    let mut u_total = u_c.frame(t).clone();
    u_total.axpy(T::one(), u_f.frame(t));
    let mut r = time_derivative(rho.frames(), t, rho.dt());
    r.axpy(T::one(), &vec_dot_grad(&u_total, rho.frame(t)));
    Ok(interior_mean_sq(&r).0)
}

/// Warp loss at frame `t`: the fine velocity passively transported by the
/// coarse flow, d(u_f)/dt + (u_c . grad) u_f, interior mean square.
pub fn loss_warp<T: Real>(
    u_f: &VectorSequence<T>,
    u_c: &VectorSequence<T>,
    t: usize,
) -> Result<T> {
    check_frame(u_f.len(), t)?;
    check_frame(u_c.len(), t)?;
    let mut r = time_derivative(u_f.frames(), t, u_f.dt());
    r.axpy(T::one(), &vec_dot_grad(u_c.frame(t), u_f.frame(t)));
    Ok(interior_mean_sq(&r).0)
}

/// Projection loss: mean squared difference between u_f and its pressure
/// projection. The projected field acts as a constant target per evaluation.
pub fn loss_proj<T: Real>(
    u_f: &VectorGrid<T>,
    sdf: Option<&ScalarGrid<T>>,
    cfg: &PoissonConfig,
) -> Result<(T, PressureSolve<T>)> {
    let (u_p, solve) = project(u_f, sdf, cfg)?;
    let mut diff = u_f.clone();
    diff.axpy(-T::one(), &u_p);
    Ok((diff.mean_sq(), solve))
}

/// Inputs shared by the coarse-stage aggregate loss.
pub struct CoarseInputs<'a, T: Real> {
    pub rho: &'a ScalarSequence<T>,
    pub sdf: Option<&'a ScalarGrid<T>>,
    pub weights: &'a LossWeights,
    pub temporal: TemporalMode,
    pub physics: PhysicsMode,
    pub substeps: usize,
}

impl<'a, T: Real> CoarseInputs<'a, T> {
    pub fn standard(
        rho: &'a ScalarSequence<T>,
        sdf: Option<&'a ScalarGrid<T>>,
        weights: &'a LossWeights,
    ) -> Self {
        Self {
            rho,
            sdf,
            weights,
            temporal: TemporalMode::Long,
            physics: PhysicsMode::Vorticity,
            substeps: 1,
        }
    }
}

/// Weighted coarse-level aggregate over all valid frames.
pub fn coarse_total<T: Real>(
    inp: &CoarseInputs<'_, T>,
    u: &VectorSequence<T>,
    step: u64,
) -> Result<LossReport> {
    let (report, _) = grad::coarse_total_with_grad_impl(inp, u, step, false)?;
    Ok(report)
}

/// Inputs shared by the fine-stage aggregate loss.
pub struct FineInputs<'a, T: Real> {
    pub rho: &'a ScalarSequence<T>,
    /// Frozen coarse velocity, already at evaluation resolution.
    pub u_c: &'a VectorSequence<T>,
    pub sdf: Option<&'a ScalarGrid<T>>,
    pub weights: &'a LossWeights,
    pub poisson: &'a PoissonConfig,
}

/// Weighted fine-level aggregate over all frames.
pub fn fine_total<T: Real>(
    inp: &FineInputs<'_, T>,
    u_f: &VectorSequence<T>,
    step: u64,
) -> Result<LossReport> {
    let (report, _) = grad::fine_total_with_grad_impl(inp, u_f, step, false)?;
    Ok(report)
}
