//! Central-difference differential operators and their adjoints.
//!
//! Interior cells use second-order central differences; boundary cells fall
//! back to first-order one-sided differences. Every operator is linear, and
//! each has an explicit adjoint built from the same stencil enumeration so
//! that reverse-mode gradients stay consistent with the forward maps.

use crate::grid::{Field, FieldValue, GridSpec, ScalarGrid, VectorGrid};
use crate::vec3::Vec3;
use crate::{lit, Real};

/// Partial derivative of a field along `axis`.
pub fn deriv_axis<T: Real, F: Field<T>>(f: &F, axis: usize) -> F {
    let spec = *f.spec();
    let inv_dx = T::one() / spec.dx;
    let inv_2dx = inv_dx * lit::<T>(0.5);
    let n = spec.dims(axis);
    let stride = [1usize, spec.nx, spec.nx * spec.ny][axis];
    let mut out = F::zeros(spec);
    let src = f.values();
    let dst = out.values_mut();
    let mut idx = 0usize;
    for k in 0..spec.nz {
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let pos = [i, j, k][axis];
                dst[idx] = if pos == 0 {
                    src[idx + stride].sub(src[idx]).scale(inv_dx)
                } else if pos + 1 == n {
                    src[idx].sub(src[idx - stride]).scale(inv_dx)
                } else {
                    src[idx + stride].sub(src[idx - stride]).scale(inv_2dx)
                };
                idx += 1;
            }
        }
    }
    out
}

/// Adjoint of [`deriv_axis`]: accumulates into `out`.
pub fn deriv_axis_adjoint_into<T: Real, F: Field<T>>(cot: &F, axis: usize, out: &mut F) {
    let spec = *cot.spec();
    debug_assert_eq!(&spec, out.spec());
    let inv_dx = T::one() / spec.dx;
    let inv_2dx = inv_dx * lit::<T>(0.5);
    let n = spec.dims(axis);
    let stride = [1usize, spec.nx, spec.nx * spec.ny][axis];
    let src = cot.values();
    let dst = out.values_mut();
    let mut idx = 0usize;
    for k in 0..spec.nz {
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let pos = [i, j, k][axis];
                let w = src[idx];
                if pos == 0 {
                    dst[idx + stride] = dst[idx + stride].add(w.scale(inv_dx));
                    dst[idx] = dst[idx].sub(w.scale(inv_dx));
                } else if pos + 1 == n {
                    dst[idx] = dst[idx].add(w.scale(inv_dx));
                    dst[idx - stride] = dst[idx - stride].sub(w.scale(inv_dx));
                } else {
                    dst[idx + stride] = dst[idx + stride].add(w.scale(inv_2dx));
                    dst[idx - stride] = dst[idx - stride].sub(w.scale(inv_2dx));
                }
                idx += 1;
            }
        }
    }
}

/// ∇f of a scalar field.
pub fn gradient<T: Real>(f: &ScalarGrid<T>) -> VectorGrid<T> {
    let spec = *f.spec();
    let mut out = VectorGrid::new(spec);
    for axis in 0..3 {
        let d = deriv_axis(f, axis);
        for (o, v) in out.data_mut().iter_mut().zip(d.data()) {
            o[axis] = *v;
        }
    }
    out
}

/// Adjoint of [`gradient`].
pub fn gradient_adjoint<T: Real>(cot: &VectorGrid<T>) -> ScalarGrid<T> {
    let spec = *cot.spec();
    let mut out = ScalarGrid::new(spec);
    for axis in 0..3 {
        let comp = cot.component_grid(axis);
        deriv_axis_adjoint_into(&comp, axis, &mut out);
    }
    out
}

/// ∇·u of a vector field.
pub fn divergence<T: Real>(u: &VectorGrid<T>) -> ScalarGrid<T> {
    let spec = *u.spec();
    let mut out = ScalarGrid::new(spec);
    for axis in 0..3 {
        let comp = u.component_grid(axis);
        let d = deriv_axis(&comp, axis);
        for (o, v) in out.data_mut().iter_mut().zip(d.data()) {
            *o += *v;
        }
    }
    out
}

/// Adjoint of [`divergence`].
pub fn divergence_adjoint<T: Real>(cot: &ScalarGrid<T>) -> VectorGrid<T> {
    let spec = *cot.spec();
    let mut out = VectorGrid::new(spec);
    for axis in 0..3 {
        let mut comp = ScalarGrid::new(spec);
        deriv_axis_adjoint_into(cot, axis, &mut comp);
        for (o, v) in out.data_mut().iter_mut().zip(comp.data()) {
            o[axis] = *v;
        }
    }
    out
}

/// ∇×u of a vector field.
pub fn curl<T: Real>(u: &VectorGrid<T>) -> VectorGrid<T> {
    let spec = *u.spec();
    // d[j][i] = d(u_i)/d(x_j) for the needed off-diagonal pairs
    let ux = u.component_grid(0);
    let uy = u.component_grid(1);
    let uz = u.component_grid(2);
    let duz_dy = deriv_axis(&uz, 1);
    let duy_dz = deriv_axis(&uy, 2);
    let dux_dz = deriv_axis(&ux, 2);
    let duz_dx = deriv_axis(&uz, 0);
    let duy_dx = deriv_axis(&uy, 0);
    let dux_dy = deriv_axis(&ux, 1);
    let mut out = VectorGrid::new(spec);
    for idx in 0..spec.cells() {
        out.data_mut()[idx] = Vec3::new(
            duz_dy.data()[idx] - duy_dz.data()[idx],
            dux_dz.data()[idx] - duz_dx.data()[idx],
            duy_dx.data()[idx] - dux_dy.data()[idx],
        );
    }
    out
}

/// Adjoint of [`curl`].
pub fn curl_adjoint<T: Real>(cot: &VectorGrid<T>) -> VectorGrid<T> {
    let spec = *cot.spec();
    let cx = cot.component_grid(0);
    let cy = cot.component_grid(1);
    let cz = cot.component_grid(2);
    // forward: out_x = D_y u_z - D_z u_y, out_y = D_z u_x - D_x u_z,
    //          out_z = D_x u_y - D_y u_x
    // adjoint per input component:
    //   u_x += D_z^T c_y - D_y^T c_z
    //   u_y += D_x^T c_z - D_z^T c_x
    //   u_z += D_y^T c_x - D_x^T c_y
    let mut comps = [ScalarGrid::new(spec), ScalarGrid::new(spec), ScalarGrid::new(spec)];
    deriv_axis_adjoint_into(&cy, 2, &mut comps[0]);
    let mut neg = ScalarGrid::new(spec);
    deriv_axis_adjoint_into(&cz, 1, &mut neg);
    for (a, b) in comps[0].data_mut().iter_mut().zip(neg.data()) {
        *a -= *b;
    }

    deriv_axis_adjoint_into(&cz, 0, &mut comps[1]);
    let mut neg = ScalarGrid::new(spec);
    deriv_axis_adjoint_into(&cx, 2, &mut neg);
    for (a, b) in comps[1].data_mut().iter_mut().zip(neg.data()) {
        *a -= *b;
    }

    deriv_axis_adjoint_into(&cx, 1, &mut comps[2]);
    let mut neg = ScalarGrid::new(spec);
    deriv_axis_adjoint_into(&cy, 0, &mut neg);
    for (a, b) in comps[2].data_mut().iter_mut().zip(neg.data()) {
        *a -= *b;
    }

    let mut out = VectorGrid::new(spec);
    for idx in 0..spec.cells() {
        out.data_mut()[idx] =
            Vec3::new(comps[0].data()[idx], comps[1].data()[idx], comps[2].data()[idx]);
    }
    out
}

/// (w·∇)f — the convective derivative of `f` along `w`, componentwise.
pub fn vec_dot_grad<T: Real, F: Field<T>>(w: &VectorGrid<T>, f: &F) -> F {
    let spec = *f.spec();
    debug_assert_eq!(&spec, w.spec());
    let mut out = F::zeros(spec);
    for axis in 0..3 {
        let d = deriv_axis(f, axis);
        let dst = out.values_mut();
        for idx in 0..spec.cells() {
            let wj = w.data()[idx][axis];
            dst[idx] = dst[idx].add(d.values()[idx].scale(wj));
        }
    }
    out
}

/// Adjoint of [`vec_dot_grad`] with respect to `f` (for fixed `w`).
pub fn vec_dot_grad_adjoint_f<T: Real, F: Field<T>>(w: &VectorGrid<T>, cot: &F) -> F {
    let spec = *cot.spec();
    let mut out = F::zeros(spec);
    for axis in 0..3 {
        // adjoint of (pointwise multiply by w_axis) then D_axis^T
        let mut weighted = F::zeros(spec);
        {
            let wv = weighted.values_mut();
            for idx in 0..spec.cells() {
                wv[idx] = cot.values()[idx].scale(w.data()[idx][axis]);
            }
        }
        deriv_axis_adjoint_into(&weighted, axis, &mut out);
    }
    out
}

/// Gradient of (w·∇)f with respect to `w` (for fixed `f`), contracted with a
/// cotangent: result_j = Σ_i cot_i ∂f_i/∂x_j, evaluated pointwise.
pub fn vec_dot_grad_grad_w<T: Real, F: Field<T>>(f: &F, cot: &F) -> VectorGrid<T> {
    let spec = *f.spec();
    let mut out = VectorGrid::new(spec);
    for axis in 0..3 {
        let d = deriv_axis(f, axis);
        for idx in 0..spec.cells() {
            out.data_mut()[idx][axis] = cot.values()[idx].dot(d.values()[idx]);
        }
    }
    out
}

/// Discrete time derivative of a frame sequence at frame `t`:
/// central differences at interior frames, one-sided at the ends.
pub fn time_derivative<T: Real, F: Field<T>>(frames: &[F], t: usize, dt: T) -> F {
    assert!(t < frames.len(), "frame index {t} out of range");
    assert!(frames.len() >= 2);
    let spec = *frames[0].spec();
    let mut out = F::zeros(spec);
    let (a, b, scale) = if t == 0 {
        (0, 1, T::one() / dt)
    } else if t + 1 == frames.len() {
        (frames.len() - 2, frames.len() - 1, T::one() / dt)
    } else {
        (t - 1, t + 1, T::one() / (lit::<T>(2.0) * dt))
    };
    let fa = frames[a].values();
    let fb = frames[b].values();
    let dst = out.values_mut();
    for idx in 0..spec.cells() {
        dst[idx] = fb[idx].sub(fa[idx]).scale(scale);
    }
    out
}

/// Adjoint of [`time_derivative`]: accumulate the cotangent of the derivative
/// at frame `t` into the per-frame gradient accumulators.
pub fn time_derivative_adjoint<T: Real, F: Field<T>>(
    grads: &mut [F],
    t: usize,
    cot: &F,
    dt: T,
) {
    let n = grads.len();
    let (a, b, scale) = if t == 0 {
        (0, 1, T::one() / dt)
    } else if t + 1 == n {
        (n - 2, n - 1, T::one() / dt)
    } else {
        (t - 1, t + 1, T::one() / (lit::<T>(2.0) * dt))
    };
    grads[b].axpy(scale, cot);
    grads[a].axpy(-scale, cot);
}

/// Mean of squared magnitudes over interior cells, with the cotangent field
/// d(mean)/d(residual) (zero at boundary cells).
pub fn interior_mean_sq<T: Real, F: Field<T>>(r: &F) -> (T, F) {
    let spec = *r.spec();
    let n_int = lit::<T>(spec.interior_count() as f64);
    let mut acc = T::zero();
    let mut cot = F::zeros(spec);
    let two_over_n = lit::<T>(2.0) / n_int;
    let src = r.values();
    let dst = cot.values_mut();
    for k in 1..spec.nz - 1 {
        for j in 1..spec.ny - 1 {
            let row = spec.index(1, j, k);
            for idx in row..row + spec.nx - 2 {
                let v = src[idx];
                acc += v.dot(v);
                dst[idx] = v.scale(two_over_n);
            }
        }
    }
    (acc / n_int, cot)
}

/// Mean of squared magnitudes over all cells, with its cotangent field.
pub fn mean_sq_with_cot<T: Real, F: Field<T>>(r: &F) -> (T, F) {
    let n = lit::<T>(r.values().len() as f64);
    let mut acc = T::zero();
    let mut cot = F::zeros(*r.spec());
    let two = lit::<T>(2.0);
    for (c, v) in cot.values_mut().iter_mut().zip(r.values()) {
        acc += v.dot(*v);
        *c = v.scale(two / n);
    }
    (acc / n, cot)
}

/// exactly `resample` on a grid, as the adjoint-bearing operator pair used by
/// the coarse-parameter chain: scatter the fine-grid cotangent back through
/// the trilinear weights into a source-shaped accumulator.
pub fn resample_adjoint<T: Real, F: Field<T>>(cot: &F, source: &GridSpec<T>) -> F {
    let target = *cot.spec();
    let mut out = F::zeros(*source);
    for k in 0..target.nz {
        for j in 0..target.ny {
            for i in 0..target.nx {
                let x = target.cell_center(i, j, k);
                let st = source.stencil(source.world_to_grid(x));
                out.scatter(&st, cot.values()[target.index(i, j, k)]);
            }
        }
    }
    out
}
