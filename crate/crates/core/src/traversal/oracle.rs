use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalReport, TaskOut};
use crate::geometry::ParticleSet;
use crate::kernels::{direct, p2p, views, KernelStats, P2pMode};

/// Relative L2 errors `sqrt(sum |x - x_ref|^2 / sum |x_ref|^2)` over sampled bodies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub force_error: f64,
    pub potential_error: f64,
    pub samples: usize,
}

const CHUNK: usize = 64;

/// `count` distinct sorted indices below `n` drawn with `seed`; all of them
/// when `count >= n`.
pub fn sample_indices(n: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = rand::seq::index::sample(&mut rng, n, count).into_vec();
    v.sort_unstable();
    v
}

/// Direct-sum potential and force at the bodies `indices` of `ps`, due to all
/// of `ps`. Returned in the order of `indices`.
pub fn direct_reference(ps: &ParticleSet, indices: &[usize]) -> ParticleSet {
    let parts: Vec<ParticleSet> = indices
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut t = ps.subset(idx);
            t.clear_accumulators();
            direct(&mut t, ps);
            t
        })
        .collect();
    let mut out = ParticleSet::with_capacity(indices.len());
    for part in parts {
        out.x.extend(part.x);
        out.y.extend(part.y);
        out.z.extend(part.z);
        out.q.extend(part.q);
        out.phi.extend(part.phi);
        out.fx.extend(part.fx);
        out.fy.extend(part.fy);
        out.fz.extend(part.fz);
    }
    out
}

/// Compares `result` at `indices` against `reference` (as from [`direct_reference`]).
pub fn relative_errors(result: &ParticleSet, indices: &[usize], reference: &ParticleSet) -> AccuracyReport {
    let (mut df, mut nf, mut dp, mut np) = (0.0, 0.0, 0.0, 0.0);
    for (k, &i) in indices.iter().enumerate() {
        let f = result.force(i);
        let g = reference.force(k);
        for d in 0..3 {
            df += (f[d] - g[d]) * (f[d] - g[d]);
            nf += g[d] * g[d];
        }
        dp += (result.phi[i] - reference.phi[k]).powi(2);
        np += reference.phi[k].powi(2);
    }
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { (num / den).sqrt() };
    AccuracyReport {
        force_error: ratio(df, nf),
        potential_error: ratio(dp, np),
        samples: indices.len(),
    }
}

/// Error of an evaluated set against direct summation on `samples` bodies.
pub fn verify(result: &ParticleSet, samples: usize, seed: u64) -> AccuracyReport {
    let idx = sample_indices(result.len(), samples, seed);
    let reference = direct_reference(result, &idx);
    relative_errors(result, &idx, &reference)
}

/// Direct summation of a set onto itself, parallel over target chunks.
pub fn evaluate_direct(ps: &mut ParticleSet) -> EvalReport {
    let start = Instant::now();
    let n = ps.len();
    let (src, mut rest) = views(ps);
    let mut chunks = Vec::new();
    while rest.len() > CHUNK {
        let (head, tail) = rest.split_at(CHUNK);
        chunks.push(head);
        rest = tail;
    }
    chunks.push(rest);
    let outs: Vec<KernelStats> = chunks
        .into_par_iter()
        .map(|mut t| {
            let mut stats = KernelStats::default();
            p2p(&mut t, &src, P2pMode::Exact, &mut stats);
            stats
        })
        .collect();
    let mut all = TaskOut::default();
    for s in outs {
        all.stats.merge(&s);
    }
    // every body meets itself once
    all.stats.coincident_pairs -= n as u64;
    let mut report = EvalReport { stats: all.stats, ..Default::default() };
    report.phases.traversal = start.elapsed().as_secs_f64();
    report.total = report.phases.traversal;
    report
}
