//! Passive tracer advection: massless markers seeded on a plane and carried
//! by the reconstructed velocity field, with a displacement report that
//! quantifies how still the quiescent regions stay.

use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec, VectorSequence};
use crate::util::SplitMix64;
use crate::vec3::Vec3;
use crate::{lit, Error, Real, Result};

/// Tracer particle positions over time. `positions[frame][particle]`; dead
/// particles stay frozen at their last in-domain position.
#[derive(Clone, Debug)]
pub struct ParticleSet<T> {
    pub positions: Vec<Vec<Vec3<T>>>,
    pub alive: Vec<Vec<bool>>,
}

impl<T: Real> ParticleSet<T> {
    pub fn count(&self) -> usize {
        self.positions.first().map_or(0, |f| f.len())
    }

    pub fn frames(&self) -> usize {
        self.positions.len()
    }
}

/// Jittered uniform particle seeding on an axis-aligned plane: stratified
/// over the two transverse axes, deterministic per seed.
pub fn seed_plane<T: Real>(
    axis: usize,
    coordinate: f64,
    count: usize,
    seed: u64,
    domain: &GridSpec<T>,
) -> Result<ParticleSet<T>> {
    if axis > 2 {
        return Err(Error::Config(format!("plane axis must be 0, 1 or 2, got {axis}")));
    }
    let lo = domain.domain_min().to_f64();
    let hi = domain.domain_max().to_f64();
    let lo_a = [lo.x, lo.y, lo.z];
    let hi_a = [hi.x, hi.y, hi.z];
    if !(coordinate >= lo_a[axis] && coordinate <= hi_a[axis]) {
        return Err(Error::Config(format!(
            "plane coordinate {coordinate} lies outside the domain [{}, {}]",
            lo_a[axis], hi_a[axis]
        )));
    }
    let (u_axis, v_axis) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut rng = SplitMix64::new(seed);
    let strata = (count as f64).sqrt().ceil() as usize;
    let mut pts = Vec::with_capacity(count);
    'outer: for sv in 0..strata.max(1) {
        for su in 0..strata.max(1) {
            if pts.len() == count {
                break 'outer;
            }
            let fu = (su as f64 + rng.next_f64()) / strata as f64;
            let fv = (sv as f64 + rng.next_f64()) / strata as f64;
            let mut p = [0.0f64; 3];
            p[axis] = coordinate;
            p[u_axis] = lo_a[u_axis] + fu * (hi_a[u_axis] - lo_a[u_axis]);
            p[v_axis] = lo_a[v_axis] + fv * (hi_a[v_axis] - lo_a[v_axis]);
            pts.push(Vec3::new(lit::<T>(p[0]), lit::<T>(p[1]), lit::<T>(p[2])));
        }
    }
    Ok(ParticleSet { alive: vec![vec![true; pts.len()]], positions: vec![pts] })
}

/// Advect the particle set through every frame of the velocity sequence with
/// RK2 midpoint steps (velocity trilinear in space, frame-constant in time).
/// Particles leaving the domain are marked dead and frozen.
pub fn advect_particles<T: Real>(
    p: &ParticleSet<T>,
    u_seq: &VectorSequence<T>,
) -> ParticleSet<T> {
    let mut out = p.clone();
    let dt = u_seq.dt();
    let half = lit::<T>(0.5);
    let lo = u_seq.spec().domain_min();
    let hi = u_seq.spec().domain_max();
    let inside = |x: Vec3<T>| -> bool {
        x.x >= lo.x && x.x <= hi.x && x.y >= lo.y && x.y <= hi.y && x.z >= lo.z && x.z <= hi.z
    };
    for t in 0..u_seq.len() {
        let u = u_seq.frame(t);
        let cur = out.positions.last().unwrap().clone();
        let cur_alive = out.alive.last().unwrap().clone();
        let mut next = Vec::with_capacity(cur.len());
        let mut next_alive = Vec::with_capacity(cur.len());
        for (x, alive) in cur.iter().zip(cur_alive.iter()) {
            if !alive {
                next.push(*x);
                next_alive.push(false);
                continue;
            }
            let mid = *x + u.sample(*x).scale(half * dt);
            let moved = *x + u.sample(mid).scale(dt);
            if inside(moved) {
                next.push(moved);
                next_alive.push(true);
            } else {
                next.push(*x);
                next_alive.push(false);
            }
        }
        out.positions.push(next);
        out.alive.push(next_alive);
    }
    out
}

/// Net displacement of one particle over the recorded frames.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticleDisplacement {
    pub particle: usize,
    pub displacement: f64,
    pub alive: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DisplacementSummary {
    pub mean: f64,
    pub max: f64,
    pub alive_fraction: f64,
}

/// Per-particle total displacement (final minus initial position) plus a
/// region summary.
pub fn displacement_report<T: Real>(
    p: &ParticleSet<T>,
) -> (Vec<ParticleDisplacement>, DisplacementSummary) {
    let first = &p.positions[0];
    let last = p.positions.last().unwrap();
    let alive = p.alive.last().unwrap();
    let mut rows = Vec::with_capacity(first.len());
    let mut mean = 0.0;
    let mut max = 0.0f64;
    let mut alive_n = 0usize;
    for i in 0..first.len() {
        let d = (last[i] - first[i]).norm().to_f64().unwrap();
        mean += d;
        max = max.max(d);
        if alive[i] {
            alive_n += 1;
        }
        rows.push(ParticleDisplacement { particle: i, displacement: d, alive: alive[i] });
    }
    let n = first.len().max(1) as f64;
    (
        rows,
        DisplacementSummary { mean: mean / n, max, alive_fraction: alive_n as f64 / n },
    )
}
