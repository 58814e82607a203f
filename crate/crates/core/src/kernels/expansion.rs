//! Cartesian Taylor expansions of the Laplace kernel `1/|r|`.
//!
//! Conventions, with `d = x_j - center` for a source body and `y = x - center`
//! for an evaluation point:
//!
//! * multipole: `M_m = sum_j q_j d^m / m!`
//! * local:     `phi(center + y) = sum_n L_n y^n`
//! * `D_k(r) = d^k/dr^k (1/|r|)`, built by recurrence at call time.
//!
//! A multipole of order `p` holds degrees `< p`. M2L produces locals of order
//! `p + 1` (degrees `<= p`), so the force from L2P keeps an `O(theta^p)` error.

use crate::error::{FmmError, Result};
use crate::geometry::ParticleSet;

use super::multi_index::{deriv_steps, m2l_plan, pair_plan, powers, scaled_powers, table, term_count, MAX_ORDER};
use super::p2p::{Sources, Targets};

fn check_expansion_order(order: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER + 1 {
        Err(FmmError::InvalidOrder(order))
    } else {
        Ok(())
    }
}

/// Dense coefficient block for multi-indices of degree `< order`.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    order: usize,
    coeffs: Vec<f64>,
}

pub(crate) fn check_order(p: usize) -> Result<()> {
    if p == 0 || p > MAX_ORDER {
        Err(FmmError::InvalidOrder(p))
    } else {
        Ok(())
    }
}

impl Expansion {
    pub fn zeros(order: usize) -> Result<Self> {
        check_expansion_order(order)?;
        Ok(Self { order, coeffs: vec![0.0; term_count(order)] })
    }

    pub fn from_coeffs(order: usize, coeffs: Vec<f64>) -> Result<Self> {
        check_expansion_order(order)?;
        if coeffs.len() != term_count(order) {
            return Err(FmmError::InvalidConfig(format!(
                "order {order} needs {} coefficients, got {}",
                term_count(order),
                coeffs.len()
            )));
        }
        Ok(Self { order, coeffs })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// Coefficient of multi-index `m`; zero outside the retained degrees.
    pub fn get(&self, m: [usize; 3]) -> f64 {
        self.coeffs
            .get(super::multi_index::index_of(m))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, m: [usize; 3], v: f64) {
        let i = super::multi_index::index_of(m);
        self.coeffs[i] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Potential and gradient of the local polynomial at offset `y`.
    pub fn eval_local(&self, y: [f64; 3]) -> (f64, [f64; 3]) {
        let mut scratch = Scratch::new();
        eval_local_at(&self.coeffs, self.order, y, &mut scratch)
    }

    /// Potential and gradient of the multipole field at offset `r` from its center.
    pub fn eval_multipole(&self, r: [f64; 3]) -> Result<(f64, [f64; 3])> {
        if r == [0.0; 3] {
            return Err(FmmError::CoincidentBody);
        }
        let mut scratch = Scratch::new();
        Ok(eval_multipole_at(&self.coeffs, self.order, r, &mut scratch))
    }

    fn same_order(&self, other: &Self) -> Result<()> {
        if self.order != other.order {
            Err(FmmError::OrderMismatch { left: self.order, right: other.order })
        } else {
            Ok(())
        }
    }
}

/// Reusable work buffers for one thread of kernel calls.
pub struct Scratch {
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) c: Vec<f64>,
}

impl Scratch {
    pub fn new() -> Self {
        let n = term_count(MAX_ORDER + 1);
        Self { a: vec![0.0; n], b: vec![0.0; n], c: vec![0.0; n] }
    }
}

impl Default for Scratch {
    fn default() -> Self {
        Self::new()
    }
}

/// Fills `out[k] = D_k(r)` for `|k| <= max_degree`.
///
/// Uses `|k| r^2 D_k = -(2|k|-1) sum_i k_i r_i D_{k-e_i} - (|k|-1) sum_i k_i (k_i-1) D_{k-2e_i}`.
pub fn laplace_derivatives(r: [f64; 3], max_degree: usize, out: &mut [f64]) {
    let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let inv_r2 = 1.0 / r2;
    let n = term_count(max_degree + 1);
    out[0] = inv_r2.sqrt();
    for (k, st) in (1..n).zip(deriv_steps()) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for d in 0..3 {
            s1 += st.m[d] * r[st.axis[d] as usize] * out[st.lo[d] as usize];
            s2 += st.mm[d] * out[st.lo2[d] as usize];
        }
        out[k] = (st.c1 * s1 + st.c2 * s2) * inv_r2;
    }
}

/// Adds the moments of `bodies` about `center` into `out`.
pub(crate) fn p2m_into(bodies: &Sources<'_>, center: [f64; 3], p: usize, out: &mut [f64], s: &mut Scratch) {
    let nt = term_count(p);
    for j in 0..bodies.len() {
        let d = [bodies.x[j] - center[0], bodies.y[j] - center[1], bodies.z[j] - center[2]];
        scaled_powers(d, p - 1, &mut s.a);
        let q = bodies.q[j];
        for (o, &w) in out[..nt].iter_mut().zip(&s.a[..nt]) {
            *o += q * w;
        }
    }
}

/// Adds `child` re-centered by `shift = new_center - old_center` into `out`.
pub(crate) fn m2m_into(child: &[f64], shift: [f64; 3], p: usize, out: &mut [f64], s: &mut Scratch) {
    scaled_powers([-shift[0], -shift[1], -shift[2]], p - 1, &mut s.a);
    for &(k, j, m) in pair_plan(p) {
        out[m as usize] += child[k as usize] * s.a[j as usize];
    }
}

/// Adds the order `p + 1` local expansion induced by the order `p` multipole
/// `m` at offset `r = target_center - source_center` into `out`.
pub(crate) fn m2l_into(m: &[f64], r: [f64; 3], p: usize, out: &mut [f64], s: &mut Scratch) {
    let t = table();
    let nl = term_count(p + 1);
    laplace_derivatives(r, p, &mut s.a);
    signed_moments(m, term_count(p), &mut s.b);
    let acc = &mut s.c[..nl];
    acc.fill(0.0);
    for &(n, mi, k) in m2l_plan(p) {
        acc[n as usize] += s.b[mi as usize] * s.a[k as usize];
    }
    for n in 0..nl {
        out[n] += acc[n] * t.inv_fact[n];
    }
}

/// M2L in both directions for one cell pair sharing a derivative tensor.
/// `r = center_a - center_b`; `la` receives the field of `mb` and vice versa.
pub(crate) fn m2l_mutual(
    ma: &[f64],
    mb: &[f64],
    r: [f64; 3],
    p: usize,
    la: &mut [f64],
    lb: &mut [f64],
    s: &mut Scratch,
) {
    let t = table();
    let nl = term_count(p + 1);
    laplace_derivatives(r, p, &mut s.a);
    // Into a: signed moments of b against D(r).
    signed_moments(mb, term_count(p), &mut s.b);
    let acc = &mut s.c[..nl];
    acc.fill(0.0);
    for &(n, mi, k) in m2l_plan(p) {
        acc[n as usize] += s.b[mi as usize] * s.a[k as usize];
    }
    for n in 0..nl {
        la[n] += acc[n] * t.inv_fact[n];
    }
    // Into b: D(-r) = (-1)^|k| D(r), so the signs fold into (-1)^|n| on plain moments.
    let acc = &mut s.c[..nl];
    acc.fill(0.0);
    for &(n, mi, k) in m2l_plan(p) {
        acc[n as usize] += ma[mi as usize] * s.a[k as usize];
    }
    for n in 0..nl {
        let sign = if t.degree[n] % 2 == 0 { 1.0 } else { -1.0 };
        lb[n] += sign * acc[n] * t.inv_fact[n];
    }
}

fn signed_moments(m: &[f64], nt: usize, out: &mut [f64]) {
    let t = table();
    for i in 0..nt {
        out[i] = if t.degree[i] % 2 == 0 { m[i] } else { -m[i] };
    }
}

/// Adds `parent` re-centered by `shift = child_center - parent_center` into `out`.
pub(crate) fn l2l_into(parent: &[f64], shift: [f64; 3], p: usize, out: &mut [f64], s: &mut Scratch) {
    let t = table();
    let nt = term_count(p);
    scaled_powers(shift, p - 1, &mut s.a);
    let acc = &mut s.c[..nt];
    acc.fill(0.0);
    // L'_k = (1/k!) sum_j (k+j)! L_{k+j} s^j/j!
    for &(k, j, n) in pair_plan(p) {
        acc[k as usize] += t.fact[n as usize] * parent[n as usize] * s.a[j as usize];
    }
    for k in 0..nt {
        out[k] += acc[k] * t.inv_fact[k];
    }
}

pub(crate) fn eval_local_at(local: &[f64], p: usize, y: [f64; 3], s: &mut Scratch) -> (f64, [f64; 3]) {
    let t = table();
    let nt = term_count(p);
    powers(y, p - 1, &mut s.a);
    let mut phi = 0.0;
    let mut grad = [0.0; 3];
    for n in 0..nt {
        let l = local[n];
        phi += l * s.a[n];
        for d in 0..3 {
            if let Some(lo) = t.lower[n][d] {
                grad[d] += t.idx[n][d] as f64 * l * s.a[lo as usize];
            }
        }
    }
    (phi, grad)
}

/// Adds potential and force of the local expansion to every target body.
pub(crate) fn l2p_into(local: &[f64], center: [f64; 3], p: usize, targets: &mut Targets<'_>, s: &mut Scratch) {
    for i in 0..targets.len() {
        let y = [targets.x[i] - center[0], targets.y[i] - center[1], targets.z[i] - center[2]];
        let (phi, g) = eval_local_at(local, p, y, s);
        targets.phi[i] += phi;
        targets.fx[i] -= g[0];
        targets.fy[i] -= g[1];
        targets.fz[i] -= g[2];
    }
}

pub(crate) fn eval_multipole_at(m: &[f64], p: usize, r: [f64; 3], s: &mut Scratch) -> (f64, [f64; 3]) {
    let t = table();
    let nt = term_count(p);
    laplace_derivatives(r, p, &mut s.a);
    let mut phi = 0.0;
    let mut grad = [0.0; 3];
    for k in 0..nt {
        let mk = if t.degree[k] % 2 == 0 { m[k] } else { -m[k] };
        phi += mk * s.a[k];
        let mi = t.idx[k];
        for d in 0..3 {
            let mut up = mi;
            up[d] += 1;
            grad[d] += mk * s.a[super::multi_index::index_of(up)];
        }
    }
    (phi, grad)
}

/// Evaluates the multipole directly at every target body.
pub(crate) fn m2p_into(m: &[f64], center: [f64; 3], p: usize, targets: &mut Targets<'_>, s: &mut Scratch) -> Result<()> {
    for i in 0..targets.len() {
        let r = [targets.x[i] - center[0], targets.y[i] - center[1], targets.z[i] - center[2]];
        if r == [0.0; 3] {
            return Err(FmmError::CoincidentBody);
        }
    }
    for i in 0..targets.len() {
        let r = [targets.x[i] - center[0], targets.y[i] - center[1], targets.z[i] - center[2]];
        let (phi, g) = eval_multipole_at(m, p, r, s);
        targets.phi[i] += phi;
        targets.fx[i] -= g[0];
        targets.fy[i] -= g[1];
        targets.fz[i] -= g[2];
    }
    Ok(())
}

/// Multipole moments of all bodies of `ps` about `center`.
pub fn p2m(ps: &ParticleSet, center: [f64; 3], p: usize) -> Result<Expansion> {
    let mut e = Expansion::zeros(p)?;
    let mut s = Scratch::new();
    p2m_into(&Sources::from_set(ps), center, p, &mut e.coeffs, &mut s);
    Ok(e)
}

/// Moves a multipole expansion to `old_center + shift`.
pub fn m2m(child: &Expansion, shift: [f64; 3]) -> Expansion {
    if shift == [0.0; 3] {
        return child.clone();
    }
    let mut out = Expansion { order: child.order, coeffs: vec![0.0; child.coeffs.len()] };
    m2m_into(&child.coeffs, shift, child.order, &mut out.coeffs, &mut Scratch::new());
    out
}

/// Adds the shifted `child` into `parent`, which must have the same order.
pub fn m2m_accumulate(child: &Expansion, shift: [f64; 3], parent: &mut Expansion) -> Result<()> {
    child.same_order(parent)?;
    m2m_into(&child.coeffs, shift, child.order, &mut parent.coeffs, &mut Scratch::new());
    Ok(())
}

/// Local expansion about the target center of the multipole `m`,
/// with `r = target_center - source_center`. The result has order `m.order() + 1`.
pub fn m2l(m: &Expansion, r: [f64; 3]) -> Result<Expansion> {
    if r == [0.0; 3] {
        return Err(FmmError::CoincidentCenters);
    }
    let mut out = Expansion { order: m.order + 1, coeffs: vec![0.0; term_count(m.order + 1)] };
    m2l_into(&m.coeffs, r, m.order, &mut out.coeffs, &mut Scratch::new());
    Ok(out)
}

/// Moves a local expansion to `old_center + shift`.
pub fn l2l(parent: &Expansion, shift: [f64; 3]) -> Expansion {
    if shift == [0.0; 3] {
        return parent.clone();
    }
    let mut out = Expansion { order: parent.order, coeffs: vec![0.0; parent.coeffs.len()] };
    l2l_into(&parent.coeffs, shift, parent.order, &mut out.coeffs, &mut Scratch::new());
    out
}

pub fn l2l_accumulate(parent: &Expansion, shift: [f64; 3], child: &mut Expansion) -> Result<()> {
    parent.same_order(child)?;
    l2l_into(&parent.coeffs, shift, parent.order, &mut child.coeffs, &mut Scratch::new());
    Ok(())
}

/// Adds the local field to the accumulators of every body in `ps`.
pub fn l2p(local: &Expansion, center: [f64; 3], ps: &mut ParticleSet) {
    let mut t = Targets::from_set(ps);
    l2p_into(&local.coeffs, center, local.order, &mut t, &mut Scratch::new());
}

/// Adds the multipole field to every body of `ps`; fails if a body sits on the center.
pub fn m2p(m: &Expansion, center: [f64; 3], ps: &mut ParticleSet) -> Result<()> {
    let mut t = Targets::from_set(ps);
    m2p_into(&m.coeffs, center, m.order, &mut t, &mut Scratch::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::multi_index::index_of;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cluster(n: usize, center: [f64; 3], radius: f64, seed: u64) -> ParticleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParticleSet::with_capacity(n);
        for _ in 0..n {
            let p = [
                center[0] + radius * rng.gen_range(-1.0..1.0) / 3f64.sqrt(),
                center[1] + radius * rng.gen_range(-1.0..1.0) / 3f64.sqrt(),
                center[2] + radius * rng.gen_range(-1.0..1.0) / 3f64.sqrt(),
            ];
            ps.push(p, rng.gen_range(0.1..1.0));
        }
        ps
    }

    // Independent oracle: plain double loop over sources.
    fn direct_at(src: &ParticleSet, x: [f64; 3]) -> (f64, [f64; 3]) {
        let mut phi = 0.0;
        let mut f = [0.0; 3];
        for j in 0..src.len() {
            let d = [x[0] - src.x[j], x[1] - src.y[j], x[2] - src.z[j]];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            phi += src.q[j] / r;
            for k in 0..3 {
                f[k] += src.q[j] * d[k] / (r * r * r);
            }
        }
        (phi, f)
    }

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    fn random_expansion(p: usize, rng: &mut ChaCha8Rng) -> Expansion {
        let c = (0..term_count(p)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Expansion::from_coeffs(p, c).unwrap()
    }

    #[test]
    fn derivatives_match_closed_forms() {
        let r = [0.3, -0.7, 1.1];
        let mut d = vec![0.0; term_count(4)];
        laplace_derivatives(r, 3, &mut d);
        let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        assert!((d[0] - 1.0 / rn).abs() < 1e-15);
        assert!((d[index_of([1, 0, 0])] + r[0] / rn.powi(3)).abs() < 1e-15);
        let dxy = 3.0 * r[0] * r[1] / rn.powi(5);
        assert!((d[index_of([1, 1, 0])] - dxy).abs() < 1e-14);
        let dzz = 3.0 * r[2] * r[2] / rn.powi(5) - 1.0 / rn.powi(3);
        assert!((d[index_of([0, 0, 2])] - dzz).abs() < 1e-14);
        let dxyz = -15.0 * r[0] * r[1] * r[2] / rn.powi(7);
        assert!((d[index_of([1, 1, 1])] - dxyz).abs() < 1e-13);
    }

    #[test]
    fn derivatives_are_harmonic() {
        // Laplacian of 1/r vanishes: D_{k+2e_x} + D_{k+2e_y} + D_{k+2e_z} = 0.
        let mut d = vec![0.0; term_count(9)];
        laplace_derivatives([0.4, 0.9, -0.5], 8, &mut d);
        for k in table().idx[..term_count(7)].iter() {
            let s: f64 = (0..3)
                .map(|a| {
                    let mut m = *k;
                    m[a] += 2;
                    d[index_of(m)]
                })
                .sum();
            assert!(s.abs() < 1e-10, "{k:?}: {s}");
        }
    }

    #[test]
    fn p2m_unit_charge_at_center() {
        let ps = ParticleSet::from_points(&[[0.5, 0.5, 0.5]], &[1.0]);
        for p in 1..=6 {
            let e = p2m(&ps, [0.5, 0.5, 0.5], p).unwrap();
            assert_eq!(e.coeffs()[0], 1.0);
            assert!(e.coeffs()[1..].iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn p2m_offset_charge() {
        let (q, d) = (2.5, 0.3);
        let ps = ParticleSet::from_points(&[[d, 0.0, 0.0]], &[q]);
        let e = p2m(&ps, [0.0; 3], 2).unwrap();
        assert_eq!(e.coeffs().len(), 4);
        assert_eq!(e.get([0, 0, 0]), q);
        assert_eq!(e.get([1, 0, 0]), q * d);
        assert_eq!(e.get([0, 1, 0]), 0.0);
    }

    #[test]
    fn p2m_far_field_converges_as_theta_pow_p() {
        let src = random_cluster(50, [0.0; 3], 1.0, 3);
        let p = 4;
        let m = p2m(&src, [0.0; 3], p).unwrap();
        let b = (0..50).map(|i| {
            let x = src.position(i);
            (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
        }).fold(0.0, f64::max);
        let dir = [0.48, 0.6, 0.64];
        let mut worst = 0.0f64;
        for &dist in &[3.0, 4.0, 6.0, 8.0, 12.0] {
            let x = [dir[0] * dist, dir[1] * dist, dir[2] * dist];
            let (phi, _) = m.eval_multipole(x).unwrap();
            let (ref_phi, _) = direct_at(&src, x);
            let theta = b / dist;
            let rel = ((phi - ref_phi) / ref_phi).abs();
            // Legendre tail bound for positive charges: theta^p (1 + theta) / (1 - theta).
            let bound = theta.powi(p as i32) * (1.0 + theta) / (1.0 - theta);
            assert!(rel <= bound, "R={dist} rel={rel}");
            worst = worst.max(rel / theta.powi(p as i32));
        }
        assert!(worst > 0.0);
    }

    #[test]
    fn m2m_zero_shift_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_expansion(6, &mut rng);
        let out = m2m(&e, [0.0; 3]);
        assert!(out.coeffs().iter().zip(e.coeffs()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn m2m_round_trip_and_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in 1..=10 {
            let e = random_expansion(p, &mut rng);
            let s = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let back = m2m(&m2m(&e, s), [-s[0], -s[1], -s[2]]);
            assert!(max_rel(back.coeffs(), e.coeffs()) < 1e-12);

            let src = random_cluster(20, [0.2, 0.1, -0.1], 0.5, p as u64);
            let c1 = [0.1, 0.0, 0.05];
            let c2 = [0.4, -0.2, 0.1];
            let moved = m2m(&p2m(&src, c1, p).unwrap(), [c2[0] - c1[0], c2[1] - c1[1], c2[2] - c1[2]]);
            let direct = p2m(&src, c2, p).unwrap();
            assert!(max_rel(moved.coeffs(), direct.coeffs()) < 1e-12, "p={p}");
        }
    }

    #[test]
    fn m2m_order_mismatch_errors() {
        let a = Expansion::zeros(3).unwrap();
        let mut b = Expansion::zeros(4).unwrap();
        assert!(matches!(
            m2m_accumulate(&a, [0.1, 0.0, 0.0], &mut b),
            Err(FmmError::OrderMismatch { .. })
        ));
        assert!(matches!(
            l2l_accumulate(&a, [0.1, 0.0, 0.0], &mut b),
            Err(FmmError::OrderMismatch { .. })
        ));
    }

    #[test]
    fn m2l_monopole_gives_coulomb() {
        let mut m = Expansion::zeros(4).unwrap();
        m.set([0, 0, 0], 2.0);
        let r = [1.0, 2.0, 2.0];
        let l = m2l(&m, r).unwrap();
        assert!((l.get([0, 0, 0]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn m2l_of_zero_is_zero() {
        let m = Expansion::zeros(5).unwrap();
        assert!(m2l(&m, [1.0, 0.5, 0.2]).unwrap().is_zero());
    }

    #[test]
    fn m2l_rejects_coincident_centers() {
        let m = Expansion::zeros(3).unwrap();
        assert!(matches!(m2l(&m, [0.0; 3]), Err(FmmError::CoincidentCenters)));
    }

    #[test]
    fn m2l_chain_error_slope() {
        // Unit-radius clusters on both sides; error must fall at least as fast as (a+b)/R to the p.
        let p = 4;
        let src = random_cluster(40, [0.0; 3], 0.25, 9);
        let mut errs = Vec::new();
        let mut thetas = Vec::new();
        for &dist in &[1.6, 2.0, 2.5, 3.2, 4.0] {
            let tc = [dist * 0.6, dist * 0.8, 0.0];
            let tgt = random_cluster(30, tc, 0.25, 10);
            let m = p2m(&src, [0.0; 3], p).unwrap();
            let l = m2l(&m, tc).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..tgt.len() {
                let x = tgt.position(i);
                let (phi, _) = l.eval_local([x[0] - tc[0], x[1] - tc[1], x[2] - tc[2]]);
                let (rp, _) = direct_at(&src, x);
                num += (phi - rp).powi(2);
                den += rp * rp;
            }
            errs.push((num / den).sqrt());
            thetas.push(0.5 / dist);
        }
        let n = errs.len() as f64;
        let lx: Vec<f64> = thetas.iter().map(|t| t.ln()).collect();
        let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!(slope >= p as f64 - 0.5, "slope {slope}");
    }

    #[test]
    fn m2l_mutual_matches_two_one_sided_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = 5;
        let ma = random_expansion(p, &mut rng);
        let mb = random_expansion(p, &mut rng);
        let r = [1.5, -0.4, 0.9];
        let mut la = vec![0.0; term_count(p + 1)];
        let mut lb = vec![0.0; term_count(p + 1)];
        m2l_mutual(ma.coeffs(), mb.coeffs(), r, p, &mut la, &mut lb, &mut Scratch::new());
        let la_ref = m2l(&mb, r).unwrap();
        let lb_ref = m2l(&ma, [-r[0], -r[1], -r[2]]).unwrap();
        assert!(max_rel(&la, la_ref.coeffs()) < 1e-14);
        assert!(max_rel(&lb, lb_ref.coeffs()) < 1e-14);
    }

    #[test]
    fn l2l_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_expansion(5, &mut rng);
        assert_eq!(l2l(&e, [0.0; 3]), e);

        let mut c = Expansion::zeros(5).unwrap();
        c.set([0, 0, 0], 3.25);
        assert_eq!(l2l(&c, [0.3, -1.0, 2.0]), c);
    }

    #[test]
    fn l2l_preserves_polynomial_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in 1..=10 {
            let e = random_expansion(p, &mut rng);
            let s = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let moved = l2l(&e, s);
            let back = l2l(&moved, [-s[0], -s[1], -s[2]]);
            assert!(max_rel(back.coeffs(), e.coeffs()) < 1e-12, "p={p}");
            for _ in 0..5 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let (v0, _) = e.eval_local(x);
                let (v1, _) = moved.eval_local([x[0] - s[0], x[1] - s[1], x[2] - s[2]]);
                assert!((v0 - v1).abs() <= 1e-12 * v0.abs().max(1.0));
            }
        }
    }

    #[test]
    fn l2p_constant_and_linear_terms() {
        let mut ps = ParticleSet::from_points(&[[0.1, 0.2, 0.3], [-1.0, 4.0, 2.0]], &[1.0, 1.0]);
        let mut l = Expansion::zeros(3).unwrap();
        l.set([0, 0, 0], 0.75);
        l2p(&l, [0.0; 3], &mut ps);
        assert_eq!(ps.phi, vec![0.75, 0.75]);
        assert_eq!(ps.fx, vec![0.0, 0.0]);

        ps.clear_accumulators();
        let mut l = Expansion::zeros(3).unwrap();
        l.set([1, 0, 0], 2.0);
        l2p(&l, [0.0; 3], &mut ps);
        assert_eq!(ps.fx, vec![-2.0, -2.0]);
        assert_eq!(ps.fy, vec![0.0, 0.0]);
    }

    #[test]
    fn l2p_force_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = random_expansion(6, &mut rng);
        let x = [0.21, -0.33, 0.17];
        let mut ps = ParticleSet::from_points(&[x], &[1.0]);
        l2p(&l, [0.0; 3], &mut ps);
        let h = 1e-5;
        for d in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let fd = -(l.eval_local(xp).0 - l.eval_local(xm).0) / (2.0 * h);
            let f = ps.force(0)[d];
            assert!((f - fd).abs() <= 1e-6 * f.abs().max(1.0), "axis {d}: {f} vs {fd}");
        }
    }

    #[test]
    fn m2p_monopole_and_zero() {
        let mut m = Expansion::zeros(4).unwrap();
        m.set([0, 0, 0], 3.0);
        let mut ps = ParticleSet::from_points(&[[0.0, 0.0, 2.0]], &[1.0]);
        m2p(&m, [0.0; 3], &mut ps).unwrap();
        assert!((ps.phi[0] - 1.5).abs() < 1e-15);
        assert!((ps.fz[0] - 0.75).abs() < 1e-15);

        let mut ps = ParticleSet::from_points(&[[0.0, 0.0, 2.0]], &[1.0]);
        m2p(&Expansion::zeros(4).unwrap(), [0.0; 3], &mut ps).unwrap();
        assert_eq!(ps.phi[0], 0.0);
        assert_eq!(ps.force(0), [0.0; 3]);
    }

    #[test]
    fn m2p_rejects_coincident_body() {
        let m = Expansion::zeros(3).unwrap();
        let mut ps = ParticleSet::from_points(&[[1.0, 1.0, 1.0]], &[1.0]);
        assert!(matches!(m2p(&m, [1.0, 1.0, 1.0], &mut ps), Err(FmmError::CoincidentBody)));
    }

    #[test]
    fn m2p_matches_direct_at_ten_radii() {
        let src = random_cluster(20, [0.0; 3], 1.0, 12);
        let m = p2m(&src, [0.0; 3], 5).unwrap();
        let x = [6.0, 0.0, 8.0];
        let mut ps = ParticleSet::from_points(&[x], &[1.0]);
        m2p(&m, [0.0; 3], &mut ps).unwrap();
        let (rp, rf) = direct_at(&src, x);
        assert!(((ps.phi[0] - rp) / rp).abs() <= 1e-5);
        let fnorm = (rf[0] * rf[0] + rf[1] * rf[1] + rf[2] * rf[2]).sqrt();
        for d in 0..3 {
            assert!((ps.force(0)[d] - rf[d]).abs() <= 1e-5 * fnorm);
        }
    }

    #[test]
    fn m2p_force_matches_finite_difference() {
        let src = random_cluster(10, [0.0; 3], 1.0, 13);
        let m = p2m(&src, [0.0; 3], 6).unwrap();
        let x = [2.0, -1.5, 1.0];
        let (_, g) = m.eval_multipole(x).unwrap();
        let h = 1e-5;
        for d in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[d] += h;
            xm[d] -= h;
            let fd = (m.eval_multipole(xp).unwrap().0 - m.eval_multipole(xm).unwrap().0) / (2.0 * h);
            assert!((g[d] - fd).abs() <= 1e-5 * g[d].abs().max(1e-3), "axis {d}");
        }
    }

    #[test]
    fn invalid_orders_rejected() {
        assert!(Expansion::zeros(0).is_err());
        assert!(Expansion::zeros(MAX_ORDER + 2).is_err());
        assert!(m2l(&Expansion::zeros(MAX_ORDER).unwrap(), [1.0, 0.0, 0.0]).unwrap().order() == MAX_ORDER + 1);
        assert_eq!(Expansion::zeros(3).unwrap().coeffs().len(), 10);
    }
}
