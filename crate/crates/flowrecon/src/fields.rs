//! Analytic and randomized field constructors shared by tests, oracles and
//! the acceptance suite.

use crate::grid::{GridSpec, ScalarGrid, VectorGrid};
use crate::util::SplitMix64;
use crate::vec3::Vec3;
use crate::{lit, Real};

/// Rigid rotation about the domain center axis: u = (-y', x', 0) with
/// (x', y') measured from the center of the xy cross-section.
pub fn rigid_rotation<T: Real>(spec: &GridSpec<T>) -> VectorGrid<T> {
    let c = center(spec);
    VectorGrid::from_world_fn(*spec, |p| Vec3::new(-(p.y - c.y), p.x - c.x, T::zero()))
}

/// Domain center in world coordinates.
pub fn center<T: Real>(spec: &GridSpec<T>) -> Vec3<T> {
    (spec.domain_min() + spec.domain_max()).scale(lit(0.5))
}

/// Isotropic Gaussian blob with the given center and standard deviation.
pub fn gaussian_blob<T: Real>(spec: &GridSpec<T>, blob_center: Vec3<T>, sigma: T) -> ScalarGrid<T> {
    let half = lit::<T>(0.5);
    ScalarGrid::from_world_fn(*spec, |p| {
        let d = p - blob_center;
        (-(d.norm_sq()) / (sigma * sigma) * half).exp()
    })
}

/// Band-limited random scalar field: a seeded sum of low-wavenumber sine and
/// cosine products over the unit-normalized domain.
pub fn band_limited_scalar<T: Real>(
    spec: &GridSpec<T>,
    seed: u64,
    max_mode: usize,
    amplitude: T,
) -> ScalarGrid<T> {
    let mut rng = SplitMix64::new(seed);
    let modes = mode_table(&mut rng, max_mode);
    let lo = spec.domain_min();
    let ext = spec.domain_max() - lo;
    ScalarGrid::from_world_fn(*spec, |p| {
        let sx = (p.x - lo.x) / ext.x;
        let sy = (p.y - lo.y) / ext.y;
        let sz = (p.z - lo.z) / ext.z;
        let mut acc = T::zero();
        for m in &modes {
            acc += eval_mode(m, sx, sy, sz);
        }
        acc * amplitude
    })
}

/// Band-limited random vector field, one independent scalar field per component.
pub fn band_limited_vector<T: Real>(
    spec: &GridSpec<T>,
    seed: u64,
    max_mode: usize,
    amplitude: T,
) -> VectorGrid<T> {
    let comps = [
        band_limited_scalar(spec, seed, max_mode, amplitude),
        band_limited_scalar(spec, seed.wrapping_add(0x9e37), max_mode, amplitude),
        band_limited_scalar(spec, seed.wrapping_add(0x79b9), max_mode, amplitude),
    ];
    VectorGrid::from_fn(*spec, |i, j, k| {
        Vec3::new(comps[0].at(i, j, k), comps[1].at(i, j, k), comps[2].at(i, j, k))
    })
}

struct Mode<T> {
    coef: T,
    k: [usize; 3],
    phase: [bool; 3],
}

fn mode_table<T: Real>(rng: &mut SplitMix64, max_mode: usize) -> Vec<Mode<T>> {
    let mut modes = Vec::new();
    for kx in 0..=max_mode {
        for ky in 0..=max_mode {
            for kz in 0..=max_mode {
                if kx + ky + kz == 0 {
                    continue;
                }
                modes.push(Mode {
                    coef: lit(rng.range_f64(-1.0, 1.0)),
                    k: [kx, ky, kz],
                    phase: [rng.next_u64() & 1 == 0, rng.next_u64() & 1 == 0, rng.next_u64() & 1 == 0],
                });
            }
        }
    }
    modes
}

fn eval_mode<T: Real>(m: &Mode<T>, sx: T, sy: T, sz: T) -> T {
    let tau = lit::<T>(2.0) * T::PI();
    let f = |s: T, k: usize, cos_phase: bool| -> T {
        if k == 0 {
            return T::one();
        }
        let arg = tau * lit::<T>(k as f64) * s;
        if cos_phase {
            arg.cos()
        } else {
            arg.sin()
        }
    };
    m.coef * f(sx, m.k[0], m.phase[0]) * f(sy, m.k[1], m.phase[1]) * f(sz, m.k[2], m.phase[2])
}

/// Signed distance field of a sphere (negative inside).
pub fn sphere_sdf<T: Real>(spec: &GridSpec<T>, sphere_center: Vec3<T>, radius: T) -> ScalarGrid<T> {
    ScalarGrid::from_world_fn(*spec, |p| (p - sphere_center).norm() - radius)
}

/// Signed distance field of an infinite cylinder along `axis` (negative inside).
pub fn cylinder_sdf<T: Real>(
    spec: &GridSpec<T>,
    axis: usize,
    axis_point: Vec3<T>,
    radius: T,
) -> ScalarGrid<T> {
    ScalarGrid::from_world_fn(*spec, |p| {
        let mut d = p - axis_point;
        d[axis] = T::zero();
        d.norm() - radius
    })
}

/// Sentinel SDF for scenes without obstacles: a large positive constant that
/// still round-trips through the single-precision file format.
pub const SDF_NONE: f64 = 1.0e30;

pub fn no_obstacle_sdf<T: Real>(spec: &GridSpec<T>) -> ScalarGrid<T> {
    ScalarGrid::constant(*spec, lit(SDF_NONE))
}
