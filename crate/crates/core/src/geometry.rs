//! Particle storage, bounding boxes and Morton keys.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};

/// Deepest admissible tree level. `3 * MAX_LEVEL` bits fill a 63-bit key.
pub const MAX_LEVEL: u32 = 21;

/// Bodies in structure-of-arrays layout.
///
/// Positions and charges are inputs; `phi` and `fx/fy/fz` accumulate the
/// potential and the force `f = -grad(phi)` with `phi(x) = sum q / |x - x_j|`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParticleSet {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub fz: Vec<f64>,
}

impl ParticleSet {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            phi: Vec::with_capacity(n),
            fx: Vec::with_capacity(n),
            fy: Vec::with_capacity(n),
            fz: Vec::with_capacity(n),
        }
    }

    /// Builds a set from positions and charges with zeroed accumulators.
    pub fn from_points(points: &[[f64; 3]], charges: &[f64]) -> Self {
        assert_eq!(points.len(), charges.len(), "one charge per point");
        let mut ps = Self::with_capacity(points.len());
        for (p, &q) in points.iter().zip(charges) {
            ps.push(*p, q);
        }
        ps
    }

    pub fn push(&mut self, pos: [f64; 3], q: f64) {
        self.x.push(pos[0]);
        self.y.push(pos[1]);
        self.z.push(pos[2]);
        self.q.push(q);
        self.phi.push(0.0);
        self.fx.push(0.0);
        self.fy.push(0.0);
        self.fz.push(0.0);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        [self.x[i], self.y[i], self.z[i]]
    }

    pub fn force(&self, i: usize) -> [f64; 3] {
        [self.fx[i], self.fy[i], self.fz[i]]
    }

    pub fn clear_accumulators(&mut self) {
        self.phi.fill(0.0);
        self.fx.fill(0.0);
        self.fy.fill(0.0);
        self.fz.fill(0.0);
    }

    /// Returns a new set holding bodies `order[0], order[1], ...`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            x: pick(&self.x),
            y: pick(&self.y),
            z: pick(&self.z),
            q: pick(&self.q),
            phi: pick(&self.phi),
            fx: pick(&self.fx),
            fy: pick(&self.fy),
            fz: pick(&self.fz),
        }
    }

    /// Copies of the bodies at `indices`, accumulators included.
    pub fn subset(&self, indices: &[usize]) -> Self {
        self.permuted(indices)
    }

    pub fn total_charge(&self) -> f64 {
        self.q.iter().sum()
    }

    pub(crate) fn check_consistent(&self) {
        let n = self.x.len();
        debug_assert!(
            [&self.y, &self.z, &self.q, &self.phi, &self.fx, &self.fy, &self.fz]
                .iter()
                .all(|v| v.len() == n),
            "particle arrays must share one length"
        );
    }
}

/// Axis-aligned box with `min[d] <= max[d]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        debug_assert!((0..3).all(|d| min[d] <= max[d]));
        Self { min, max }
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|d| self.min[d] <= p[d] && p[d] <= self.max[d])
    }

    /// Distance from `p` to the farthest of the eight corners.
    pub fn farthest_corner_distance(&self, p: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for d in 0..3 {
            let a = (p[d] - self.min[d]).abs().max((self.max[d] - p[d]).abs());
            s += a * a;
        }
        s.sqrt()
    }

    /// Smallest cube sharing this box's center that contains it.
    pub fn bounding_cube(&self) -> Aabb {
        let c = self.center();
        let e = self.extent();
        let half = 0.5 * e[0].max(e[1]).max(e[2]);
        Aabb::new(
            [c[0] - half, c[1] - half, c[2] - half],
            [c[0] + half, c[1] + half, c[2] + half],
        )
    }
}

/// Tight bounding box of all bodies.
pub fn compute_bounds(ps: &ParticleSet) -> Result<Aabb> {
    bounds_of_range(ps, 0..ps.len())
}

pub(crate) fn bounds_of_range(ps: &ParticleSet, range: std::ops::Range<usize>) -> Result<Aabb> {
    if range.is_empty() {
        return Err(FmmError::EmptyParticleSet);
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for i in range {
        let p = ps.position(i);
        for d in 0..3 {
            min[d] = min[d].min(p[d]);
            max[d] = max[d].max(p[d]);
        }
    }
    Ok(Aabb::new(min, max))
}

/// A cell index on the `2^level` grid, bit-interleaved with x in the lowest bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MortonKey {
    pub key: u64,
    pub level: u32,
}

// Spreads the low 21 bits of `v` so that bit b lands on bit 3b.
fn spread(v: u64) -> u64 {
    let mut x = v & 0x1f_ffff;
    x = (x | x << 32) & 0x001f_0000_0000_ffff;
    x = (x | x << 16) & 0x001f_0000_ff00_00ff;
    x = (x | x << 8) & 0x100f_00f0_0f00_f00f;
    x = (x | x << 4) & 0x10c3_0c30_c30c_30c3;
    x = (x | x << 2) & 0x1249_2492_4924_9249;
    x
}

fn compact(v: u64) -> u64 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | x >> 2) & 0x10c3_0c30_c30c_30c3;
    x = (x | x >> 4) & 0x100f_00f0_0f00_f00f;
    x = (x | x >> 8) & 0x001f_0000_ff00_00ff;
    x = (x | x >> 16) & 0x001f_0000_0000_ffff;
    x = (x | x >> 32) & 0x1f_ffff;
    x
}

impl MortonKey {
    /// Interleaves a grid index at `level`. Each component must fit the
    /// level's grid (and always 21 bits).
    pub fn encode(index: [u32; 3], level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(FmmError::MaxDepthExceeded);
        }
        let limit = 1u64 << level;
        if index.iter().any(|&c| c as u64 >= limit) {
            return Err(FmmError::IndexOverflow);
        }
        let key = spread(index[0] as u64) | spread(index[1] as u64) << 1 | spread(index[2] as u64) << 2;
        Ok(Self { key, level })
    }

    /// Encodes at the finest level.
    pub fn from_index(index: [u32; 3]) -> Result<Self> {
        Self::encode(index, MAX_LEVEL)
    }

    pub fn decode(&self) -> [u32; 3] {
        [
            compact(self.key) as u32,
            compact(self.key >> 1) as u32,
            compact(self.key >> 2) as u32,
        ]
    }

    pub fn parent(&self) -> Option<Self> {
        (self.level > 0).then(|| Self { key: self.key >> 3, level: self.level - 1 })
    }

    pub fn child(&self, octant: u8) -> Option<Self> {
        (self.level < MAX_LEVEL && octant < 8).then(|| Self {
            key: self.key << 3 | octant as u64,
            level: self.level + 1,
        })
    }

    /// Octant of this key within its parent.
    pub fn octant(&self) -> u8 {
        (self.key & 7) as u8
    }

    /// The cell offset by `delta`, or `None` when it falls off the grid.
    pub fn neighbor(&self, delta: [i32; 3]) -> Option<Self> {
        let idx = self.decode();
        let size = 1i64 << self.level;
        let mut out = [0u32; 3];
        for d in 0..3 {
            let v = idx[d] as i64 + delta[d] as i64;
            if v < 0 || v >= size {
                return None;
            }
            out[d] = v as u32;
        }
        Self::encode(out, self.level).ok()
    }

    /// True when the two same-level cells share a face, edge or corner.
    pub fn is_adjacent(&self, other: &Self) -> bool {
        debug_assert_eq!(self.level, other.level);
        let a = self.decode();
        let b = other.decode();
        self != other && (0..3).all(|d| (a[d] as i64 - b[d] as i64).abs() <= 1)
    }
}

/// See [`MortonKey::neighbor`].
pub fn neighbor_key(k: MortonKey, delta: [i32; 3]) -> Option<MortonKey> {
    k.neighbor(delta)
}

/// All 26 non-zero offsets in {-1,0,1}^3.
pub fn neighbor_offsets() -> impl Iterator<Item = [i32; 3]> {
    (-1..=1).flat_map(move |i| {
        (-1..=1).flat_map(move |j| (-1..=1).map(move |k| [i, j, k]))
    })
    .filter(|d| *d != [0, 0, 0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Cube,
}

/// Uniform random bodies in the unit cube with charge `1/n` each.
pub fn generate_distribution(kind: Distribution, n: usize, seed: u64) -> Result<ParticleSet> {
    if n == 0 {
        return Err(FmmError::EmptyParticleSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParticleSet::with_capacity(n);
    let q = 1.0 / n as f64;
    match kind {
        Distribution::Cube => {
            for _ in 0..n {
                let p = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                ps.push(p, q);
            }
        }
    }
    Ok(ps)
}
