//! Uniform cell-centered 3D grid containers and trilinear sampling.
//!
//! All fields live at cell centers (collocated layout, x-fastest storage).
//! Sampling outside the cell-center hull clamps to the hull, which keeps
//! evaluation total and behaves like an open (Neumann-like) boundary.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::vec3::Vec3;
use crate::{lit, Error, Real, Result};

/// Geometry of a uniform cell-centered grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec<T> {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Uniform cell size in domain units.
    pub dx: T,
    /// Position of the domain corner (cell (0,0,0) is centered at origin + dx/2).
    pub origin: Vec3<T>,
}

impl<T: Real> GridSpec<T> {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: T) -> Result<Self> {
        Self::with_origin(nx, ny, nz, dx, Vec3::zero())
    }

    pub fn with_origin(nx: usize, ny: usize, nz: usize, dx: T, origin: Vec3<T>) -> Result<Self> {
        if nx < 4 || ny < 4 || nz < 4 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be at least 4 per axis, got {nx}x{ny}x{nz}"
            )));
        }
        if !(dx > T::zero()) || !dx.is_finite() {
            return Err(Error::InvalidGrid(format!("cell size must be positive, got {dx}")));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { nx, ny, nz, dx, origin })
    }

    /// Cube grid with unit domain extent along x.
    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n, T::one() / lit(n as f64))
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    #[inline]
    pub fn dims(&self, axis: usize) -> usize {
        match axis {
            0 => self.nx,
            1 => self.ny,
            2 => self.nz,
            _ => panic!("axis out of range: {axis}"),
        }
    }

    /// World position of the center of cell (i, j, k).
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let half = lit::<T>(0.5);
        Vec3::new(
            self.origin.x + (lit::<T>(i as f64) + half) * self.dx,
            self.origin.y + (lit::<T>(j as f64) + half) * self.dx,
            self.origin.z + (lit::<T>(k as f64) + half) * self.dx,
        )
    }

    /// True for cells with a full central-difference stencil on every axis.
    #[inline]
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        i >= 1 && j >= 1 && k >= 1 && i + 1 < self.nx && j + 1 < self.ny && k + 1 < self.nz
    }

    pub fn interior_count(&self) -> usize {
        (self.nx - 2) * (self.ny - 2) * (self.nz - 2)
    }

    /// Domain bounds (cell faces, not cell centers).
    pub fn domain_min(&self) -> Vec3<T> {
        self.origin
    }

    pub fn domain_max(&self) -> Vec3<T> {
        self.origin
            + Vec3::new(
                lit::<T>(self.nx as f64) * self.dx,
                lit::<T>(self.ny as f64) * self.dx,
                lit::<T>(self.nz as f64) * self.dx,
            )
    }

    /// World position -> continuous grid (cell-center) coordinates.
    #[inline]
    pub fn world_to_grid(&self, x: Vec3<T>) -> Vec3<T> {
        let half = lit::<T>(0.5);
        Vec3::new(
            (x.x - self.origin.x) / self.dx - half,
            (x.y - self.origin.y) / self.dx - half,
            (x.z - self.origin.z) / self.dx - half,
        )
    }

    /// Spec with `factor`-times fewer cells per axis; requires exact divisibility.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidGrid("coarsening factor must be positive".into()));
        }
        if self.nx % factor != 0 || self.ny % factor != 0 || self.nz % factor != 0 {
            return Err(Error::InvalidGrid(format!(
                "coarsening factor {factor} does not divide {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        Self::with_origin(
            self.nx / factor,
            self.ny / factor,
            self.nz / factor,
            self.dx * lit(factor as f64),
            self.origin,
        )
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self == other
    }

    /// Trilinear stencil for a position given in grid coordinates.
    #[inline]
    pub fn stencil(&self, g: Vec3<T>) -> TriStencil<T> {
        let one = T::one();
        let clamp_axis = |v: T, n: usize| -> (usize, T, bool) {
            let max = lit::<T>((n - 1) as f64);
            let clamped = v < T::zero() || v > max;
            let v = v.max(T::zero()).min(max);
            let mut base = v.floor();
            // keep the 8-corner cube inside the grid
            if base > lit::<T>((n - 2) as f64) {
                base = lit::<T>((n - 2) as f64);
            }
            let frac = v - base;
            (base.to_usize().unwrap(), frac, clamped)
        };
        let (i0, fx, cx) = clamp_axis(g.x, self.nx);
        let (j0, fy, cy) = clamp_axis(g.y, self.ny);
        let (k0, fz, cz) = clamp_axis(g.z, self.nz);
        let _ = one;
        TriStencil {
            base: [i0, j0, k0],
            frac: Vec3::new(fx, fy, fz),
            clamped: [cx, cy, cz],
            sx: 1,
            sy: self.nx,
            sz: self.nx * self.ny,
        }
    }
}

/// The 8-corner interpolation cell for one sample position.
#[derive(Clone, Copy, Debug)]
pub struct TriStencil<T> {
    pub base: [usize; 3],
    pub frac: Vec3<T>,
    /// Per axis: the query position lay outside the cell-center hull.
    pub clamped: [bool; 3],
    sx: usize,
    sy: usize,
    sz: usize,
}

impl<T: Real> TriStencil<T> {
    /// Flat index of corner (a, b, c) with a,b,c in {0,1}.
    #[inline]
    pub fn corner(&self, a: usize, b: usize, c: usize) -> usize {
        (self.base[0] + a) * self.sx + (self.base[1] + b) * self.sy + (self.base[2] + c) * self.sz
    }

    /// (y, z) strides of the underlying grid.
    #[inline]
    pub fn strides(&self) -> (usize, usize) {
        (self.sy, self.sz)
    }

    /// Interpolation weight of corner (a, b, c).
    #[inline]
    pub fn weight(&self, a: usize, b: usize, c: usize) -> T {
        let one = T::one();
        let wx = if a == 0 { one - self.frac.x } else { self.frac.x };
        let wy = if b == 0 { one - self.frac.y } else { self.frac.y };
        let wz = if c == 0 { one - self.frac.z } else { self.frac.z };
        wx * wy * wz
    }
}

/// Per-cell value stored in a grid: a scalar or a 3-vector.
pub trait FieldValue<T: Real>: Copy + PartialEq + std::fmt::Debug + Send + Sync {
    const COMPONENTS: usize;
    fn zero() -> Self;
    fn add(self, o: Self) -> Self;
    fn sub(self, o: Self) -> Self;
    fn scale(self, s: T) -> Self;
    fn min_with(self, o: Self) -> Self;
    fn max_with(self, o: Self) -> Self;
    fn within(self, lo: Self, hi: Self) -> bool;
    /// Inner product; for scalars the plain product.
    fn dot(self, o: Self) -> T;
    fn magnitude(self) -> T;
    fn is_finite(self) -> bool;
    fn component(self, c: usize) -> T;
    fn set_component(&mut self, c: usize, v: T);
    /// Contract a cotangent with per-axis position-derivatives of a sample.
    fn pos_grad_dot(cot: Self, grads: &[Self; 3]) -> Vec3<T>;
}

impl<T: Real> FieldValue<T> for T {
    const COMPONENTS: usize = 1;
    #[inline]
    fn zero() -> Self {
        T::zero()
    }
    #[inline]
    fn add(self, o: Self) -> Self {
        self + o
    }
    #[inline]
    fn sub(self, o: Self) -> Self {
        self - o
    }
    #[inline]
    fn scale(self, s: T) -> Self {
        self * s
    }
    #[inline]
    fn min_with(self, o: Self) -> Self {
        self.min(o)
    }
    #[inline]
    fn max_with(self, o: Self) -> Self {
        self.max(o)
    }
    #[inline]
    fn within(self, lo: Self, hi: Self) -> bool {
        self >= lo && self <= hi
    }
    #[inline]
    fn dot(self, o: Self) -> T {
        self * o
    }
    #[inline]
    fn magnitude(self) -> T {
        self.abs()
    }
    #[inline]
    fn is_finite(self) -> bool {
        Float::is_finite(self)
    }
    #[inline]
    fn component(self, _c: usize) -> T {
        self
    }
    #[inline]
    fn set_component(&mut self, _c: usize, v: T) {
        *self = v;
    }
    #[inline]
    fn pos_grad_dot(cot: Self, grads: &[Self; 3]) -> Vec3<T> {
        Vec3::new(cot * grads[0], cot * grads[1], cot * grads[2])
    }
}

impl<T: Real> FieldValue<T> for Vec3<T> {
    const COMPONENTS: usize = 3;
    #[inline]
    fn zero() -> Self {
        Vec3::zero()
    }
    #[inline]
    fn add(self, o: Self) -> Self {
        self + o
    }
    #[inline]
    fn sub(self, o: Self) -> Self {
        self - o
    }
    #[inline]
    fn scale(self, s: T) -> Self {
        Vec3::scale(self, s)
    }
    #[inline]
    fn min_with(self, o: Self) -> Self {
        Vec3::min_with(self, o)
    }
    #[inline]
    fn max_with(self, o: Self) -> Self {
        Vec3::max_with(self, o)
    }
    #[inline]
    fn within(self, lo: Self, hi: Self) -> bool {
        self.x >= lo.x && self.x <= hi.x
            && self.y >= lo.y && self.y <= hi.y
            && self.z >= lo.z && self.z <= hi.z
    }
    #[inline]
    fn dot(self, o: Self) -> T {
        Vec3::dot(self, o)
    }
    #[inline]
    fn magnitude(self) -> T {
        self.norm()
    }
    #[inline]
    fn is_finite(self) -> bool {
        Vec3::is_finite(self)
    }
    #[inline]
    fn component(self, c: usize) -> T {
        self[c]
    }
    #[inline]
    fn set_component(&mut self, c: usize, v: T) {
        self[c] = v;
    }
    #[inline]
    fn pos_grad_dot(cot: Self, grads: &[Self; 3]) -> Vec3<T> {
        Vec3::new(cot.dot(grads[0]), cot.dot(grads[1]), cot.dot(grads[2]))
    }
}

/// Common interface of [`ScalarGrid`] and [`VectorGrid`].
pub trait Field<T: Real>: Clone + Send + Sync {
    type Value: FieldValue<T>;

    fn spec(&self) -> &GridSpec<T>;
    fn values(&self) -> &[Self::Value];
    fn values_mut(&mut self) -> &mut [Self::Value];
    fn zeros(spec: GridSpec<T>) -> Self;

    /// Trilinear sample at grid coordinates (cell (i,j,k) sits at g = (i,j,k)).
    #[inline]
    fn sample_gc(&self, g: Vec3<T>) -> Self::Value {
        let st = self.spec().stencil(g);
        self.gather(&st)
    }

    /// Trilinear sample at a world position, clamped to the cell-center hull.
    #[inline]
    fn sample(&self, x: Vec3<T>) -> Self::Value {
        self.sample_gc(self.spec().world_to_grid(x))
    }

    /// The 8 corner values of a stencil, x-fastest order.
    #[inline]
    fn corner_values(&self, st: &TriStencil<T>) -> [Self::Value; 8] {
        let v = self.values();
        let i = st.corner(0, 0, 0);
        let (sy, sz) = st.strides();
        debug_assert!(i + sz + sy + 1 < v.len());
        // stencil bases are clamped to n-2 per axis, so all 8 corners are
        // in bounds
        unsafe {
            [
                *v.get_unchecked(i),
                *v.get_unchecked(i + 1),
                *v.get_unchecked(i + sy),
                *v.get_unchecked(i + sy + 1),
                *v.get_unchecked(i + sz),
                *v.get_unchecked(i + sz + 1),
                *v.get_unchecked(i + sz + sy),
                *v.get_unchecked(i + sz + sy + 1),
            ]
        }
    }

    #[inline]
    fn gather(&self, st: &TriStencil<T>) -> Self::Value {
        let c = self.corner_values(st);
        let one = T::one();
        // two-sided form: bitwise-exact at frac 0 and 1 (cell centers and
        // clamped boundary cells)
        let lerp = |a: Self::Value, b: Self::Value, f: T| a.scale(one - f).add(b.scale(f));
        let (fx, fy, fz) = (st.frac.x, st.frac.y, st.frac.z);
        let a0 = lerp(c[0], c[1], fx);
        let a1 = lerp(c[2], c[3], fx);
        let a2 = lerp(c[4], c[5], fx);
        let a3 = lerp(c[6], c[7], fx);
        let b0 = lerp(a0, a1, fy);
        let b1 = lerp(a2, a3, fy);
        lerp(b0, b1, fz)
    }

    /// Sample and its derivative with respect to the grid-coordinate position.
    /// Clamped axes report a zero derivative (the sample no longer moves).
    #[inline]
    fn gather_with_pos_grad(&self, st: &TriStencil<T>) -> (Self::Value, [Self::Value; 3]) {
        let c = self.corner_values(st);
        let one = T::one();
        let lerp = |a: Self::Value, b: Self::Value, f: T| a.scale(one - f).add(b.scale(f));
        let (fx, fy, fz) = (st.frac.x, st.frac.y, st.frac.z);
        let a0 = lerp(c[0], c[1], fx);
        let a1 = lerp(c[2], c[3], fx);
        let a2 = lerp(c[4], c[5], fx);
        let a3 = lerp(c[6], c[7], fx);
        let b0 = lerp(a0, a1, fy);
        let b1 = lerp(a2, a3, fy);
        let val = lerp(b0, b1, fz);
        let mut gx = Self::Value::zero();
        let mut gy = Self::Value::zero();
        let mut gz = Self::Value::zero();
        if !st.clamped[0] {
            let d0 = lerp(c[1].sub(c[0]), c[3].sub(c[2]), fy);
            let d1 = lerp(c[5].sub(c[4]), c[7].sub(c[6]), fy);
            gx = lerp(d0, d1, fz);
        }
        if !st.clamped[1] {
            gy = lerp(a1.sub(a0), a3.sub(a2), fz);
        }
        if !st.clamped[2] {
            gz = b1.sub(b0);
        }
        (val, [gx, gy, gz])
    }

    /// Adjoint of [`Field::gather`]: accumulate `v` into the stencil corners.
    #[inline]
    fn scatter(&mut self, st: &TriStencil<T>, v: Self::Value) {
        let one = T::one();
        let (fx, fy, fz) = (st.frac.x, st.frac.y, st.frac.z);
        let (gx, gy, gz) = (one - fx, one - fy, one - fz);
        let i = st.corner(0, 0, 0);
        let (sy, sz) = st.strides();
        let vals = self.values_mut();
        debug_assert!(i + sz + sy + 1 < vals.len());
        let w0 = gz * gy;
        let w1 = gz * fy;
        let w2 = fz * gy;
        let w3 = fz * fy;
        // same in-bounds argument as corner_values
        unsafe {
            let p = vals.as_mut_ptr();
            let acc = |off: usize, w: T| {
                let slot = p.add(off);
                *slot = (*slot).add(v.scale(w));
            };
            acc(i, w0 * gx);
            acc(i + 1, w0 * fx);
            acc(i + sy, w1 * gx);
            acc(i + sy + 1, w1 * fx);
            acc(i + sz, w2 * gx);
            acc(i + sz + 1, w2 * fx);
            acc(i + sz + sy, w3 * gx);
            acc(i + sz + sy + 1, w3 * fx);
        }
    }

    /// Min and max of the 8 stencil corner values (componentwise for vectors).
    #[inline]
    fn stencil_minmax(&self, st: &TriStencil<T>) -> (Self::Value, Self::Value) {
        let c = self.corner_values(st);
        let mut lo = c[0];
        let mut hi = c[0];
        for x in &c[1..] {
            lo = lo.min_with(*x);
            hi = hi.max_with(*x);
        }
        (lo, hi)
    }

    fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Mean of squared magnitudes over all cells.
    fn mean_sq(&self) -> T {
        let n = lit::<T>(self.values().len() as f64);
        let mut acc = T::zero();
        for v in self.values() {
            acc += v.dot(*v);
        }
        acc / n
    }

    fn scale_in_place(&mut self, s: T) {
        for v in self.values_mut() {
            *v = v.scale(s);
        }
    }

    /// self += a * other
    fn axpy(&mut self, a: T, other: &Self) {
        debug_assert_eq!(self.values().len(), other.values().len());
        let o = other.values();
        for (v, ov) in self.values_mut().iter_mut().zip(o.iter()) {
            *v = v.add(ov.scale(a));
        }
    }
}

/// Scalar samples at cell centers: density, pressure, signed distance.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid<T> {
    spec: GridSpec<T>,
    data: Vec<T>,
}

/// 3-vector samples at cell centers: velocity, vorticity.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorGrid<T> {
    spec: GridSpec<T>,
    data: Vec<Vec3<T>>,
}

macro_rules! grid_common {
    ($name:ident, $value:ty) => {
        impl<T: Real> $name<T> {
            pub fn new(spec: GridSpec<T>) -> Self {
                let n = spec.cells();
                Self { spec, data: vec![<$value as FieldValue<T>>::zero(); n] }
            }

            pub fn from_data(spec: GridSpec<T>, data: Vec<$value>) -> Result<Self> {
                if data.len() != spec.cells() {
                    return Err(Error::InvalidGrid(format!(
                        "data length {} does not match {}x{}x{} grid",
                        data.len(),
                        spec.nx,
                        spec.ny,
                        spec.nz
                    )));
                }
                if !data.iter().all(|v| FieldValue::<T>::is_finite(*v)) {
                    return Err(Error::NonFinite("grid data".into()));
                }
                Ok(Self { spec, data })
            }

            pub fn from_fn(spec: GridSpec<T>, mut f: impl FnMut(usize, usize, usize) -> $value) -> Self {
                let mut data = Vec::with_capacity(spec.cells());
                for k in 0..spec.nz {
                    for j in 0..spec.ny {
                        for i in 0..spec.nx {
                            data.push(f(i, j, k));
                        }
                    }
                }
                Self { spec, data }
            }

            /// Evaluate a function of the world-space cell-center position.
            pub fn from_world_fn(spec: GridSpec<T>, mut f: impl FnMut(Vec3<T>) -> $value) -> Self {
                Self::from_fn(spec, |i, j, k| f(spec.cell_center(i, j, k)))
            }

            #[inline]
            pub fn at(&self, i: usize, j: usize, k: usize) -> $value {
                self.data[self.spec.index(i, j, k)]
            }

            #[inline]
            pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut $value {
                let idx = self.spec.index(i, j, k);
                &mut self.data[idx]
            }

            pub fn data(&self) -> &[$value] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$value] {
                &mut self.data
            }

            pub fn map(&self, f: impl Fn($value) -> $value) -> Self {
                Self {
                    spec: self.spec,
                    data: self.data.iter().map(|v| f(*v)).collect(),
                }
            }

            /// Resample onto a new geometry by trilinear interpolation of the source.
            pub fn resample(&self, target: &GridSpec<T>) -> Self {
                Self::from_fn(*target, |i, j, k| self.sample(target.cell_center(i, j, k)))
            }
        }

        impl<T: Real> Field<T> for $name<T> {
            type Value = $value;

            #[inline]
            fn spec(&self) -> &GridSpec<T> {
                &self.spec
            }

            #[inline]
            fn values(&self) -> &[$value] {
                &self.data
            }

            #[inline]
            fn values_mut(&mut self) -> &mut [$value] {
                &mut self.data
            }

            fn zeros(spec: GridSpec<T>) -> Self {
                Self::new(spec)
            }
        }
    };
}

grid_common!(ScalarGrid, T);
grid_common!(VectorGrid, Vec3<T>);

impl<T: Real> ScalarGrid<T> {
    pub fn constant(spec: GridSpec<T>, v: T) -> Self {
        Self { spec, data: vec![v; spec.cells()] }
    }
}

impl<T: Real> VectorGrid<T> {
    pub fn constant(spec: GridSpec<T>, v: Vec3<T>) -> Self {
        Self { spec, data: vec![v; spec.cells()] }
    }

    /// One component as a scalar grid.
    pub fn component_grid(&self, c: usize) -> ScalarGrid<T> {
        ScalarGrid {
            spec: self.spec,
            data: self.data.iter().map(|v| v[c]).collect(),
        }
    }
}

macro_rules! sequence_type {
    ($name:ident, $grid:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Clone, Debug)]
        pub struct $name<T: Real> {
            frames: Vec<$grid<T>>,
            dt: T,
        }

        impl<T: Real> $name<T> {
            pub fn new(frames: Vec<$grid<T>>, dt: T) -> Result<Self> {
                if frames.len() < 2 {
                    return Err(Error::InvalidGrid(format!(
                        "a field sequence needs at least 2 frames, got {}",
                        frames.len()
                    )));
                }
                if !(dt > T::zero()) || !dt.is_finite() {
                    return Err(Error::InvalidGrid(format!("time step must be positive, got {dt}")));
                }
                let spec = *frames[0].spec();
                for (t, f) in frames.iter().enumerate() {
                    if *f.spec() != spec {
                        return Err(Error::SpecMismatch(format!(
                            "frame {t} does not share the sequence grid spec"
                        )));
                    }
                }
                Ok(Self { frames, dt })
            }

            pub fn zeros(spec: GridSpec<T>, frames: usize, dt: T) -> Result<Self> {
                Self::new((0..frames).map(|_| $grid::new(spec)).collect(), dt)
            }

            #[inline]
            pub fn dt(&self) -> T {
                self.dt
            }

            #[inline]
            pub fn len(&self) -> usize {
                self.frames.len()
            }

            #[inline]
            pub fn is_empty(&self) -> bool {
                self.frames.is_empty()
            }

            #[inline]
            pub fn spec(&self) -> &GridSpec<T> {
                self.frames[0].spec()
            }

            #[inline]
            pub fn frame(&self, t: usize) -> &$grid<T> {
                &self.frames[t]
            }

            #[inline]
            pub fn frame_mut(&mut self, t: usize) -> &mut $grid<T> {
                &mut self.frames[t]
            }

            #[inline]
            pub fn frames(&self) -> &[$grid<T>] {
                &self.frames
            }

            pub fn into_frames(self) -> Vec<$grid<T>> {
                self.frames
            }

            pub fn all_finite(&self) -> bool {
                self.frames.iter().all(|f| f.all_finite())
            }
        }
    };
}

sequence_type!(ScalarSequence, ScalarGrid, "Time-indexed scalar fields with a fixed time step.");
sequence_type!(VectorSequence, VectorGrid, "Time-indexed vector fields with a fixed time step.");
