//! Quantitative evaluation: masked L2 metrics, grid-space PSNR/SSIM,
//! re-simulation and prediction harnesses, the density-threshold masking
//! study, and the four-way ablation driver.
//!
//! Masked metrics follow the strict rho > 0 convention on the ground-truth
//! density; all three field metrics (velocity, vorticity, divergence) use
//! the same mask, and the convention is recorded in run metadata.

use serde::{Deserialize, Serialize};

use crate::grid::{Field, FieldValue, ScalarGrid, ScalarSequence, VectorGrid, VectorSequence};
use crate::losses::{AblationVariant, LossReport};
use crate::ops::{curl, divergence};
use crate::recon::{run_coarse_stage, upsample_coarse, StageConfig};
use crate::sim::{sim_step, SceneConfig, SimState};
use crate::transport::advect_maccormack;
use crate::vec3::Vec3;
use crate::{lit, Error, Real, Result};

/// Per-frame metric values; the columns of the evaluation CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub frame: usize,
    pub divergence_l2: f64,
    pub velocity_l2: f64,
    pub vorticity_l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Mean metrics over all frames.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub divergence_l2: f64,
    pub velocity_l2: f64,
    pub vorticity_l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Root mean square of the per-cell difference magnitude over cells where
/// the mask exceeds `tau`.
pub fn masked_l2<T: Real, F: Field<T>>(
    field: &F,
    gt_field: &F,
    mask: &ScalarGrid<T>,
    tau: T,
) -> Result<T> {
    if field.spec() != gt_field.spec() || field.spec() != mask.spec() {
        return Err(Error::SpecMismatch("masked_l2: grids must share a spec".into()));
    }
    let mut acc = T::zero();
    let mut n = 0usize;
    for ((a, b), m) in field.values().iter().zip(gt_field.values()).zip(mask.data()) {
        if *m > tau {
            let d = FieldValue::<T>::sub(*a, *b);
            acc += d.dot(d);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((acc / lit::<T>(n as f64)).sqrt())
}

/// RMS divergence over the masked region (toward zero).
pub fn divergence_metric<T: Real>(
    u: &VectorGrid<T>,
    mask: &ScalarGrid<T>,
    tau: T,
) -> Result<T> {
    let zero = ScalarGrid::new(*u.spec());
    masked_l2(&divergence(u), &zero, mask, tau)
}

/// RMS vorticity difference against ground truth over the masked region.
pub fn vorticity_metric<T: Real>(
    u: &VectorGrid<T>,
    gt_u: &VectorGrid<T>,
    mask: &ScalarGrid<T>,
    tau: T,
) -> Result<T> {
    masked_l2(&curl(u), &curl(gt_u), mask, tau)
}

/// Advect the first-frame density through the velocity sequence with
/// MacCormack steps. Output frame t corresponds to input frame t.
pub fn resimulate<T: Real>(
    rho0: &ScalarGrid<T>,
    u: &VectorSequence<T>,
) -> Result<ScalarSequence<T>> {
    if rho0.spec() != u.spec() {
        return Err(Error::SpecMismatch("resimulate: density and velocity grids differ".into()));
    }
    let mut frames = Vec::with_capacity(u.len());
    frames.push(rho0.clone());
    for t in 0..u.len() - 1 {
        let next = advect_maccormack(frames.last().unwrap(), u.frame(t), u.dt());
        frames.push(next);
    }
    ScalarSequence::new(frames, u.dt())
}

/// Evolve one reconstructed frame forward with the simulator step, without
/// any inflow. Returns `steps + 1` density grids (the input first).
pub fn predict<T: Real>(
    rho_t: &ScalarGrid<T>,
    u_t: &VectorGrid<T>,
    steps: usize,
    cfg: &SceneConfig,
) -> Result<Vec<ScalarGrid<T>>> {
    if rho_t.spec() != u_t.spec() {
        return Err(Error::SpecMismatch("predict: density and velocity grids differ".into()));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(rho_t.clone());
    let mut state = SimState { rho: rho_t.clone(), u: u_t.clone() };
    let sdf = cfg.sdf::<T>()?;
    let sdf_opt = matches!(cfg.scene, crate::sim::SceneKind::Cylinder).then_some(&sdf);
    for _ in 0..steps {
        state = sim_step(&state, cfg, sdf_opt, &[], Vec3::zero(), false)?;
        out.push(state.rho.clone());
    }
    Ok(out)
}

/// Peak signal-to-noise ratio in dB, capped at 99.
pub fn psnr<T: Real>(a: &ScalarGrid<T>, b: &ScalarGrid<T>, peak: f64) -> f64 {
    let mut mse = 0.0f64;
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x.to_f64().unwrap() - y.to_f64().unwrap();
        mse += d * d;
    }
    mse /= a.data().len() as f64;
    if mse == 0.0 {
        return 99.0;
    }
    (10.0 * (peak * peak / mse).log10()).min(99.0)
}

fn slice2d<T: Real>(g: &ScalarGrid<T>, axis: usize) -> (usize, usize, Vec<f64>) {
    let s = *g.spec();
    let (nu, nv) = match axis {
        0 => (s.ny, s.nz),
        1 => (s.nx, s.nz),
        _ => (s.nx, s.ny),
    };
    let mid = s.dims(axis) / 2;
    let mut data = Vec::with_capacity(nu * nv);
    for v in 0..nv {
        for u in 0..nu {
            let (i, j, k) = match axis {
                0 => (mid, u, v),
                1 => (u, mid, v),
                _ => (u, v, mid),
            };
            data.push(g.at(i, j, k).to_f64().unwrap());
        }
    }
    (nu, nv, data)
}

fn ssim2d(nu: usize, nv: usize, a: &[f64], b: &[f64]) -> f64 {
    let range = {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in a.iter().chain(b.iter()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        hi - lo
    };
    if range == 0.0 {
        return 1.0;
    }
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    // 11x11 Gaussian window, sigma 1.5, truncated and renormalized at borders
    let half = 5i64;
    let sigma = 1.5f64;
    let mut kernel = [0.0f64; 11];
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *k = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in 0..nv as i64 {
        for cx in 0..nu as i64 {
            let mut wsum = 0.0;
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in -half..=half {
                let y = cy + dy;
                if y < 0 || y >= nv as i64 {
                    continue;
                }
                for dx in -half..=half {
                    let x = cx + dx;
                    if x < 0 || x >= nu as i64 {
                        continue;
                    }
                    let w = kernel[(dy + half) as usize] * kernel[(dx + half) as usize];
                    let idx = (y as usize) * nu + x as usize;
                    wsum += w;
                    ma += w * a[idx];
                    mb += w * b[idx];
                }
            }
            ma /= wsum;
            mb /= wsum;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in -half..=half {
                let y = cy + dy;
                if y < 0 || y >= nv as i64 {
                    continue;
                }
                for dx in -half..=half {
                    let x = cx + dx;
                    if x < 0 || x >= nu as i64 {
                        continue;
                    }
                    let w = kernel[(dy + half) as usize] * kernel[(dx + half) as usize];
                    let idx = (y as usize) * nu + x as usize;
                    va += w * (a[idx] - ma) * (a[idx] - ma);
                    vb += w * (b[idx] - mb) * (b[idx] - mb);
                    cov += w * (a[idx] - ma) * (b[idx] - mb);
                }
            }
            va /= wsum;
            vb /= wsum;
            cov /= wsum;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    total / count as f64
}

/// Structural similarity, computed on the three axis-aligned mid-slices and
/// averaged.
pub fn ssim<T: Real>(a: &ScalarGrid<T>, b: &ScalarGrid<T>) -> f64 {
    let mut acc = 0.0;
    for axis in 0..3 {
        let (nu, nv, sa) = slice2d(a, axis);
        let (_, _, sb) = slice2d(b, axis);
        acc += ssim2d(nu, nv, &sa, &sb);
    }
    acc / 3.0
}

/// Full per-frame metric table for a reconstructed velocity sequence against
/// ground truth, including re-simulation PSNR/SSIM of the density.
pub fn evaluate<T: Real>(
    recon_u: &VectorSequence<T>,
    gt_u: &VectorSequence<T>,
    gt_rho: &ScalarSequence<T>,
) -> Result<(Vec<MetricsRow>, MetricsSummary)> {
    if recon_u.len() != gt_u.len() || recon_u.len() != gt_rho.len() {
        return Err(Error::SpecMismatch("evaluate: sequences must share frame count".into()));
    }
    let peak = gt_rho
        .frames()
        .iter()
        .flat_map(|f| f.data().iter())
        .map(|v| v.to_f64().unwrap())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let resim = resimulate(gt_rho.frame(0), recon_u)?;
    let tau = T::zero();
    let mut rows = Vec::with_capacity(recon_u.len());
    for t in 0..recon_u.len() {
        let mask = gt_rho.frame(t);
        let div = divergence_metric(recon_u.frame(t), mask, tau)?.to_f64().unwrap();
        let vel = masked_l2(recon_u.frame(t), gt_u.frame(t), mask, tau)?.to_f64().unwrap();
        let vor = vorticity_metric(recon_u.frame(t), gt_u.frame(t), mask, tau)?
            .to_f64()
            .unwrap();
        rows.push(MetricsRow {
            frame: t,
            divergence_l2: div,
            velocity_l2: vel,
            vorticity_l2: vor,
            psnr: psnr(resim.frame(t), gt_rho.frame(t), peak),
            ssim: ssim(resim.frame(t), gt_rho.frame(t)),
        });
    }
    let n = rows.len() as f64;
    let summary = MetricsSummary {
        divergence_l2: rows.iter().map(|r| r.divergence_l2).sum::<f64>() / n,
        velocity_l2: rows.iter().map(|r| r.velocity_l2).sum::<f64>() / n,
        vorticity_l2: rows.iter().map(|r| r.vorticity_l2).sum::<f64>() / n,
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    };
    Ok((rows, summary))
}

/// One row of the density-threshold masking study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskStudyRow {
    pub tau: f64,
    /// Velocity error of the tau-masked field inside the standard rho > 0
    /// region.
    pub masked_l2: f64,
    /// Velocity error of the tau-masked field over all cells.
    pub unmasked_l2: f64,
}

/// Zero the velocity outside `{rho_gt > tau}` for each tau and report the
/// resulting velocity errors; reproduces the threshold-sensitivity trend.
pub fn threshold_mask_study<T: Real>(
    u: &VectorSequence<T>,
    gt_u: &VectorSequence<T>,
    rho_gt: &ScalarSequence<T>,
    taus: &[f64],
) -> Result<Vec<MaskStudyRow>> {
    if u.len() != gt_u.len() || u.len() != rho_gt.len() {
        return Err(Error::SpecMismatch("mask study: sequences must share frame count".into()));
    }
    let spec = *u.spec();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let tau_t = lit::<T>(tau);
        let mut masked_acc = 0.0;
        let mut unmasked_acc = 0.0;
        for t in 0..u.len() {
            let mut zeroed = u.frame(t).clone();
            for (v, r) in zeroed.data_mut().iter_mut().zip(rho_gt.frame(t).data()) {
                if !(*r > tau_t) {
                    *v = Vec3::zero();
                }
            }
            let masked =
                masked_l2(&zeroed, gt_u.frame(t), rho_gt.frame(t), T::zero())?.to_f64().unwrap();
            // unmasked: plain RMS difference over all cells
            let ones = ScalarGrid::constant(spec, T::one());
            let unmasked =
                masked_l2(&zeroed, gt_u.frame(t), &ones, T::zero())?.to_f64().unwrap();
            masked_acc += masked;
            unmasked_acc += unmasked;
        }
        rows.push(MaskStudyRow {
            tau,
            masked_l2: masked_acc / u.len() as f64,
            unmasked_l2: unmasked_acc / u.len() as f64,
        });
    }
    Ok(rows)
}

/// Result of one ablation-variant reconstruction.
#[derive(Clone, Debug)]
pub struct AblationResult {
    pub variant: AblationVariant,
    pub summary: MetricsSummary,
    /// Raw divergence-loss value per optimizer iteration.
    pub div_curve: Vec<f64>,
    pub history: Vec<LossReport>,
}

/// Run the coarse stage under one ablation variant and evaluate it.
pub fn ablation_run<T: Real>(
    rho: &ScalarSequence<T>,
    gt_u: &VectorSequence<T>,
    sdf: Option<&ScalarGrid<T>>,
    variant: AblationVariant,
    base_cfg: &StageConfig,
) -> Result<AblationResult> {
    let (temporal, physics) = variant.modes();
    let cfg = StageConfig { temporal, physics, ..base_cfg.clone() };
    let (params, history) = run_coarse_stage(rho, sdf, &cfg, None)?;
    let u_full_res = upsample_coarse(&params, rho.spec())?;
    let (_, summary) = evaluate(&u_full_res, gt_u, rho)?;
    let div_curve = history
        .iter()
        .map(|r| r.raw("div").unwrap_or(f64::NAN))
        .collect();
    Ok(AblationResult { variant, summary, div_curve, history })
}
