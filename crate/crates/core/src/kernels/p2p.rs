//! Direct particle-particle kernel.
//!
//! Targets are processed in batches of `LANES` contiguous SoA entries so the
//! source loop runs once per batch with independent per-lane accumulators,
//! which the compiler lowers to packed arithmetic without reassociation.

use serde::{Deserialize, Serialize};

use crate::geometry::ParticleSet;

use super::stats::KernelStats;

pub const LANES: usize = 8;

/// Flops charged per evaluated pair (potential and force).
pub const FLOPS_PER_PAIR: u64 = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum P2pMode {
    /// Double precision `1/sqrt`. Reference path.
    #[default]
    Exact,
    /// Single-precision approximate reciprocal square root.
    FastRsqrt,
}

/// Read-only source bodies.
#[derive(Clone, Copy)]
pub struct Sources<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub q: &'a [f64],
}

impl<'a> Sources<'a> {
    pub fn from_set(ps: &'a ParticleSet) -> Self {
        Self { x: &ps.x, y: &ps.y, z: &ps.z, q: &ps.q }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn slice(&self, r: std::ops::Range<usize>) -> Sources<'a> {
        Sources {
            x: &self.x[r.clone()],
            y: &self.y[r.clone()],
            z: &self.z[r.clone()],
            q: &self.q[r],
        }
    }
}

/// Target bodies with writable accumulators.
pub struct Targets<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    pub phi: &'a mut [f64],
    pub fx: &'a mut [f64],
    pub fy: &'a mut [f64],
    pub fz: &'a mut [f64],
}

impl<'a> Targets<'a> {
    pub fn from_set(ps: &'a mut ParticleSet) -> Self {
        Self {
            x: &ps.x,
            y: &ps.y,
            z: &ps.z,
            phi: &mut ps.phi,
            fx: &mut ps.fx,
            fy: &mut ps.fy,
            fz: &mut ps.fz,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Reborrows a sub-range.
    pub fn slice(&mut self, r: std::ops::Range<usize>) -> Targets<'_> {
        Targets {
            x: &self.x[r.clone()],
            y: &self.y[r.clone()],
            z: &self.z[r.clone()],
            phi: &mut self.phi[r.clone()],
            fx: &mut self.fx[r.clone()],
            fy: &mut self.fy[r.clone()],
            fz: &mut self.fz[r],
        }
    }

    /// Splits into `[0, mid)` and `[mid, len)`.
    pub fn split_at(self, mid: usize) -> (Targets<'a>, Targets<'a>) {
        let (x0, x1) = self.x.split_at(mid);
        let (y0, y1) = self.y.split_at(mid);
        let (z0, z1) = self.z.split_at(mid);
        let (p0, p1) = self.phi.split_at_mut(mid);
        let (a0, a1) = self.fx.split_at_mut(mid);
        let (b0, b1) = self.fy.split_at_mut(mid);
        let (c0, c1) = self.fz.split_at_mut(mid);
        (
            Targets { x: x0, y: y0, z: z0, phi: p0, fx: a0, fy: b0, fz: c0 },
            Targets { x: x1, y: y1, z: z1, phi: p1, fx: a1, fy: b1, fz: c1 },
        )
    }

    pub fn as_sources<'b>(&'b self, q: &'b [f64]) -> Sources<'b> {
        Sources { x: self.x, y: self.y, z: self.z, q }
    }
}

/// Read-only source view and writable target view of the same bodies.
pub(crate) fn views(ps: &mut ParticleSet) -> (Sources<'_>, Targets<'_>) {
    let ParticleSet { x, y, z, q, phi, fx, fy, fz } = ps;
    (
        Sources { x, y, z, q },
        Targets { x, y, z, phi, fx, fy, fz },
    )
}

/// `1/sqrt(x)` from a bit-level initial guess and two Newton steps in `f32`.
/// Relative error stays below 5e-6 for normal inputs.
#[inline(always)]
pub fn rsqrt_approx(x: f32) -> f32 {
    let y = f32::from_bits(0x5f37_5a86u32.wrapping_sub(x.to_bits() >> 1));
    let y = y * (1.5 - 0.5 * x * y * y);
    y * (1.5 - 0.5 * x * y * y)
}

#[inline(always)]
fn inv_sqrt<const FAST: bool>(r2: f64) -> f64 {
    if FAST {
        rsqrt_approx(r2 as f32) as f64
    } else {
        1.0 / r2.sqrt()
    }
}

/// Accumulates into `t` the field of `s`; returns (pairs evaluated, zero-distance pairs).
#[inline(always)]
fn p2p_lanes<const FAST: bool>(t: &mut Targets<'_>, s: &Sources<'_>) -> (u64, u64) {
    let nt = t.len();
    let ns = s.len();
    let mut zero = 0u64;
    let mut i0 = 0;
    while i0 < nt {
        let w = LANES.min(nt - i0);
        let mut xi = [0.0f64; LANES];
        let mut yi = [0.0f64; LANES];
        let mut zi = [0.0f64; LANES];
        for l in 0..w {
            xi[l] = t.x[i0 + l];
            yi[l] = t.y[i0 + l];
            zi[l] = t.z[i0 + l];
        }
        let mut valid = [false; LANES];
        valid[..w].fill(true);
        let mut phi = [0.0f64; LANES];
        let mut ax = [0.0f64; LANES];
        let mut ay = [0.0f64; LANES];
        let mut az = [0.0f64; LANES];
        let mut zc = [0u32; LANES];
        for j in 0..ns {
            let (sx, sy, sz, sq) = (s.x[j], s.y[j], s.z[j], s.q[j]);
            for l in 0..LANES {
                let dx = xi[l] - sx;
                let dy = yi[l] - sy;
                let dz = zi[l] - sz;
                let r2 = dx * dx + dy * dy + dz * dz;
                let is_zero = r2 == 0.0;
                // padding lanes and coincident pairs contribute nothing
                let inv = if is_zero || !valid[l] { 0.0 } else { inv_sqrt::<FAST>(r2) };
                zc[l] += (is_zero && valid[l]) as u32;
                let qinv = sq * inv;
                let qinv3 = qinv * inv * inv;
                phi[l] += qinv;
                ax[l] += dx * qinv3;
                ay[l] += dy * qinv3;
                az[l] += dz * qinv3;
            }
        }
        for l in 0..w {
            t.phi[i0 + l] += phi[l];
            t.fx[i0 + l] += ax[l];
            t.fy[i0 + l] += ay[l];
            t.fz[i0 + l] += az[l];
            zero += zc[l] as u64;
        }
        i0 += w;
    }
    ((nt * ns) as u64 - zero, zero)
}

// Wider registers only; no FMA, so every path rounds identically.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn p2p_avx512<const FAST: bool>(t: &mut Targets<'_>, s: &Sources<'_>) -> (u64, u64) {
    p2p_lanes::<FAST>(t, s)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn p2p_avx2<const FAST: bool>(t: &mut Targets<'_>, s: &Sources<'_>) -> (u64, u64) {
    p2p_lanes::<FAST>(t, s)
}

fn p2p_best<const FAST: bool>(t: &mut Targets<'_>, s: &Sources<'_>) -> (u64, u64) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at run time.
            return unsafe { p2p_avx512::<FAST>(t, s) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { p2p_avx2::<FAST>(t, s) };
        }
    }
    p2p_lanes::<FAST>(t, s)
}

fn dispatch(t: &mut Targets<'_>, s: &Sources<'_>, mode: P2pMode) -> (u64, u64) {
    match mode {
        P2pMode::Exact => p2p_best::<false>(t, s),
        P2pMode::FastRsqrt => p2p_best::<true>(t, s),
    }
}

/// One-sided P2P from disjoint `sources` into `targets`.
pub fn p2p(t: &mut Targets<'_>, s: &Sources<'_>, mode: P2pMode, stats: &mut KernelStats) {
    let (pairs, zero) = dispatch(t, s, mode);
    stats.record_p2p(pairs, zero);
}

/// One-sided P2P of a body range onto itself; the diagonal is skipped.
pub fn p2p_self(t: &mut Targets<'_>, q: &[f64], mode: P2pMode, stats: &mut KernelStats) {
    let n = t.len() as u64;
    let x = t.x;
    let y = t.y;
    let z = t.z;
    let s = Sources { x, y, z, q };
    let (pairs, zero) = dispatch(t, &s, mode);
    // the n diagonal pairs land in `zero`
    stats.record_p2p(pairs, zero - n);
}

/// Symmetric P2P between two disjoint groups: each pair is evaluated once and
/// applied to both sides.
pub fn p2p_mutual(
    a: &mut Targets<'_>,
    qa: &[f64],
    b: &mut Targets<'_>,
    qb: &[f64],
    mode: P2pMode,
    stats: &mut KernelStats,
) {
    match mode {
        P2pMode::Exact => mutual_best::<false>(a, qa, b, qb, stats),
        P2pMode::FastRsqrt => mutual_best::<true>(a, qa, b, qb, stats),
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn mutual_avx512<const FAST: bool>(a: &mut Targets<'_>, qa: &[f64], b: &mut Targets<'_>, qb: &[f64], stats: &mut KernelStats) {
    mutual_lanes::<FAST>(a, qa, b, qb, stats)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn mutual_avx2<const FAST: bool>(a: &mut Targets<'_>, qa: &[f64], b: &mut Targets<'_>, qb: &[f64], stats: &mut KernelStats) {
    mutual_lanes::<FAST>(a, qa, b, qb, stats)
}

fn mutual_best<const FAST: bool>(a: &mut Targets<'_>, qa: &[f64], b: &mut Targets<'_>, qb: &[f64], stats: &mut KernelStats) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at run time.
            return unsafe { mutual_avx512::<FAST>(a, qa, b, qb, stats) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { mutual_avx2::<FAST>(a, qa, b, qb, stats) };
        }
    }
    mutual_lanes::<FAST>(a, qa, b, qb, stats)
}

#[inline(always)]
fn mutual_lanes<const FAST: bool>(
    a: &mut Targets<'_>,
    qa: &[f64],
    b: &mut Targets<'_>,
    qb: &[f64],
    stats: &mut KernelStats,
) {
    let na = a.len();
    let nb = b.len();
    let mut zero = 0u64;
    let mut i0 = 0;
    while i0 < na {
        let w = LANES.min(na - i0);
        let mut xi = [0.0f64; LANES];
        let mut yi = [0.0f64; LANES];
        let mut zi = [0.0f64; LANES];
        let mut qi = [0.0f64; LANES];
        let mut valid = [false; LANES];
        valid[..w].fill(true);
        for l in 0..w {
            xi[l] = a.x[i0 + l];
            yi[l] = a.y[i0 + l];
            zi[l] = a.z[i0 + l];
            qi[l] = qa[i0 + l];
        }
        let mut phi = [0.0f64; LANES];
        let mut ax = [0.0f64; LANES];
        let mut ay = [0.0f64; LANES];
        let mut az = [0.0f64; LANES];
        let mut zc = [0u32; LANES];
        for j in 0..nb {
            let (sx, sy, sz, sq) = (b.x[j], b.y[j], b.z[j], qb[j]);
            let mut bphi = [0.0f64; LANES];
            let mut bx = [0.0f64; LANES];
            let mut by = [0.0f64; LANES];
            let mut bz = [0.0f64; LANES];
            for l in 0..LANES {
                let dx = xi[l] - sx;
                let dy = yi[l] - sy;
                let dz = zi[l] - sz;
                let r2 = dx * dx + dy * dy + dz * dz;
                let is_zero = r2 == 0.0;
                // padding lanes and coincident pairs contribute nothing
                let inv = if is_zero || !valid[l] { 0.0 } else { inv_sqrt::<FAST>(r2) };
                zc[l] += (is_zero && valid[l]) as u32;
                let inv3 = inv * inv * inv;
                phi[l] += sq * inv;
                ax[l] += dx * sq * inv3;
                ay[l] += dy * sq * inv3;
                az[l] += dz * sq * inv3;
                bphi[l] = qi[l] * inv;
                bx[l] = dx * qi[l] * inv3;
                by[l] = dy * qi[l] * inv3;
                bz[l] = dz * qi[l] * inv3;
            }
            b.phi[j] += bphi.iter().sum::<f64>();
            b.fx[j] -= bx.iter().sum::<f64>();
            b.fy[j] -= by.iter().sum::<f64>();
            b.fz[j] -= bz.iter().sum::<f64>();
        }
        for l in 0..w {
            a.phi[i0 + l] += phi[l];
            a.fx[i0 + l] += ax[l];
            a.fy[i0 + l] += ay[l];
            a.fz[i0 + l] += az[l];
            zero += zc[l] as u64;
        }
        i0 += w;
    }
    stats.record_p2p((na * nb) as u64 - zero, zero);
}

/// Symmetric P2P within one group, visiting each unordered pair once.
pub fn p2p_self_mutual(t: &mut Targets<'_>, q: &[f64], mode: P2pMode, stats: &mut KernelStats) {
    let n = t.len();
    let mut zero = 0u64;
    for i in 0..n {
        let (xi, yi, zi, qi) = (t.x[i], t.y[i], t.z[i], q[i]);
        let (mut phi, mut ax, mut ay, mut az) = (0.0, 0.0, 0.0, 0.0);
        for j in i + 1..n {
            let dx = xi - t.x[j];
            let dy = yi - t.y[j];
            let dz = zi - t.z[j];
            let r2 = dx * dx + dy * dy + dz * dz;
            if r2 == 0.0 {
                zero += 1;
                continue;
            }
            let inv = match mode {
                P2pMode::Exact => inv_sqrt::<false>(r2),
                P2pMode::FastRsqrt => inv_sqrt::<true>(r2),
            };
            let inv3 = inv * inv * inv;
            phi += q[j] * inv;
            ax += dx * q[j] * inv3;
            ay += dy * q[j] * inv3;
            az += dz * q[j] * inv3;
            t.phi[j] += qi * inv;
            t.fx[j] -= dx * qi * inv3;
            t.fy[j] -= dy * qi * inv3;
            t.fz[j] -= dz * qi * inv3;
        }
        t.phi[i] += phi;
        t.fx[i] += ax;
        t.fy[i] += ay;
        t.fz[i] += az;
    }
    let all = (n * n.saturating_sub(1) / 2) as u64;
    stats.record_p2p(all - zero, zero);
}

/// O(N^2) reference: adds the field of every source into every target using
/// the exact scalar path in a fixed order. Zero-distance pairs (including a
/// target that is itself one of the sources) are skipped.
pub fn direct(targets: &mut ParticleSet, sources: &ParticleSet) {
    let mut t = Targets::from_set(targets);
    let s = Sources::from_set(sources);
    p2p_best::<false>(&mut t, &s);
}

/// [`direct`] of a set onto itself.
pub fn direct_self(ps: &mut ParticleSet) {
    let q = ps.q.clone();
    let mut t = Targets::from_set(ps);
    p2p_self(&mut t, &q, P2pMode::Exact, &mut KernelStats::default());
}
