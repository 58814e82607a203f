//! Graded-lexicographic multi-index tables shared by every expansion order.
//!
//! Index of `(mx, my, mz)` with `d = mx + my + mz` and `a = my + mz` is
//! `d(d+1)(d+2)/6 + a(a+1)/2 + mz`, so indices for degree `< p` occupy the
//! prefix `0..p(p+1)(p+2)/6` regardless of `p`.

use std::sync::OnceLock;

/// Largest expansion order accepted by the kernels.
pub const MAX_ORDER: usize = 20;
/// Tables extend one degree past `MAX_ORDER - 1` for force derivatives.
pub(crate) const MAX_DEGREE: usize = MAX_ORDER;

pub const fn term_count(p: usize) -> usize {
    p * (p + 1) * (p + 2) / 6
}

pub const fn index_of(m: [usize; 3]) -> usize {
    let d = m[0] + m[1] + m[2];
    let a = m[1] + m[2];
    d * (d + 1) * (d + 2) / 6 + a * (a + 1) / 2 + m[2]
}

pub(crate) struct Table {
    pub idx: Vec<[usize; 3]>,
    pub degree: Vec<usize>,
    /// `lower[i][d]` is the index of `m - e_d`, when `m[d] > 0`.
    pub lower: Vec<[Option<u32>; 3]>,
    /// First axis with a non-zero component, used by power recurrences.
    pub first_axis: Vec<usize>,
    /// `m!` as a product over axes.
    pub fact: Vec<f64>,
    pub inv_fact: Vec<f64>,
}

pub(crate) fn table() -> &'static Table {
    static TABLE: OnceLock<Table> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = term_count(MAX_DEGREE + 1);
        let mut idx = Vec::with_capacity(n);
        for d in 0..=MAX_DEGREE {
            for mx in (0..=d).rev() {
                for my in (0..=d - mx).rev() {
                    idx.push([mx, my, d - mx - my]);
                }
            }
        }
        let factorial = |k: usize| (1..=k).fold(1.0f64, |a, b| a * b as f64);
        let mut degree = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        let mut first_axis = Vec::with_capacity(n);
        let mut fact = Vec::with_capacity(n);
        for (i, m) in idx.iter().enumerate() {
            debug_assert_eq!(index_of(*m), i);
            degree.push(m[0] + m[1] + m[2]);
            let mut lo = [None; 3];
            for d in 0..3 {
                if m[d] > 0 {
                    let mut k = *m;
                    k[d] -= 1;
                    lo[d] = Some(index_of(k) as u32);
                }
            }
            lower.push(lo);
            first_axis.push((0..3).find(|&d| m[d] > 0).unwrap_or(0));
            fact.push(factorial(m[0]) * factorial(m[1]) * factorial(m[2]));
        }
        let inv_fact = fact.iter().map(|f| 1.0 / f).collect();
        Table { idx, degree, lower, first_axis, fact, inv_fact }
    })
}

/// All `(a, b, a+b)` index triples with `|a| + |b| < p`, grouped by `a`.
pub(crate) fn pair_plan(p: usize) -> &'static [(u32, u32, u32)] {
    static PLANS: [OnceLock<Vec<(u32, u32, u32)>>; MAX_ORDER + 2] =
        [const { OnceLock::new() }; MAX_ORDER + 2];
    PLANS[p].get_or_init(|| {
        let t = table();
        let mut v = Vec::new();
        for a in 0..term_count(p) {
            let ma = t.idx[a];
            for b in 0..term_count(p - t.degree[a]) {
                let mb = t.idx[b];
                let s = index_of([ma[0] + mb[0], ma[1] + mb[1], ma[2] + mb[2]]);
                v.push((a as u32, b as u32, s as u32));
            }
        }
        v
    })
}

/// Triples `(n, m, n + m)` for M2L from a multipole of order `p` into a local
/// of order `p + 1`: `|m| < p` and `|m| + |n| <= p`. Grouped by `m`, so each
/// output still sums in increasing `m` while neighbouring entries write
/// different outputs.
pub(crate) fn m2l_plan(p: usize) -> &'static [(u32, u32, u32)] {
    static PLANS: [OnceLock<Vec<(u32, u32, u32)>>; MAX_ORDER + 1] =
        [const { OnceLock::new() }; MAX_ORDER + 1];
    PLANS[p].get_or_init(|| {
        let t = table();
        let mut v = Vec::new();
        for m in 0..term_count(p) {
            let mm = t.idx[m];
            for n in 0..term_count(p + 1 - t.degree[m]) {
                let mn = t.idx[n];
                let s = index_of([mn[0] + mm[0], mn[1] + mm[1], mn[2] + mm[2]]);
                v.push((n as u32, m as u32, s as u32));
            }
        }
        v
    })
}

/// One step of the derivative recurrence for multi-index `k`. Unused slots
/// carry a zero coefficient and point at index 0.
pub(crate) struct DerivStep {
    pub axis: [u8; 3],
    pub lo: [u32; 3],
    pub m: [f64; 3],
    pub lo2: [u32; 3],
    pub mm: [f64; 3],
    /// `-(2|k| - 1) / |k|` and `-(|k| - 1) / |k|`.
    pub c1: f64,
    pub c2: f64,
}

/// Recurrence steps for every index `1..term_count(MAX_DEGREE + 1)`; entry `k - 1` is index `k`.
pub(crate) fn deriv_steps() -> &'static [DerivStep] {
    static STEPS: OnceLock<Vec<DerivStep>> = OnceLock::new();
    STEPS.get_or_init(|| {
        let t = table();
        (1..term_count(MAX_DEGREE + 1))
            .map(|k| {
                let m = t.idx[k];
                let deg = t.degree[k] as f64;
                let mut step = DerivStep {
                    axis: [0; 3],
                    lo: [0; 3],
                    m: [0.0; 3],
                    lo2: [0; 3],
                    mm: [0.0; 3],
                    c1: -(2.0 * deg - 1.0) / deg,
                    c2: -(deg - 1.0) / deg,
                };
                for d in 0..3 {
                    if let Some(lo) = t.lower[k][d] {
                        step.axis[d] = d as u8;
                        step.lo[d] = lo;
                        step.m[d] = m[d] as f64;
                        if m[d] >= 2 {
                            step.lo2[d] = t.lower[lo as usize][d].unwrap();
                            step.mm[d] = (m[d] * (m[d] - 1)) as f64;
                        }
                    }
                }
                step
            })
            .collect()
    })
}

/// Fills `out[k] = y^k / k!` for every `|k| <= max_degree`.
pub(crate) fn scaled_powers(y: [f64; 3], max_degree: usize, out: &mut [f64]) {
    let t = table();
    let n = term_count(max_degree + 1);
    out[0] = 1.0;
    for k in 1..n {
        let d = t.first_axis[k];
        let lo = t.lower[k][d].unwrap() as usize;
        out[k] = out[lo] * y[d] / t.idx[k][d] as f64;
    }
}

/// Fills `out[k] = y^k` for every `|k| <= max_degree`.
pub(crate) fn powers(y: [f64; 3], max_degree: usize, out: &mut [f64]) {
    let t = table();
    let n = term_count(max_degree + 1);
    out[0] = 1.0;
    for k in 1..n {
        let d = t.first_axis[k];
        let lo = t.lower[k][d].unwrap() as usize;
        out[k] = out[lo] * y[d];
    }
}
