use std::time::Instant;

use rayon::prelude::*;

use super::{require_order, EvalConfig, EvalReport, InteractionKind, TaskOut, TraceEntry};
use crate::error::Result;
use crate::kernels::{m2p_into, p2p, p2p_self, term_count, views, Scratch, Sources, Targets};
use crate::mac::accept;
use crate::tree::{split_leaf_targets, Cell, CellId, Tree};

/// Cell-to-body traversal: every target leaf descends the tree on its own,
/// taking P2P at source leaves and M2P at accepted cells.
pub fn evaluate_treecode(tree: &mut Tree, cfg: &EvalConfig) -> Result<EvalReport> {
    require_order(tree, cfg)?;
    tree.reset_evaluation();
    let start = Instant::now();
    let nt = term_count(cfg.p);
    let leaves: Vec<CellId> = tree.leaves().collect();
    let Tree { cells, bodies, multipoles, .. } = tree;
    let (src, targets) = views(bodies);
    let cells: &[Cell] = cells;
    let multipoles: &[f64] = multipoles;
    let outs: Vec<TaskOut> = split_leaf_targets(cells, &leaves, targets)
        .into_par_iter()
        .map_init(Scratch::new, |s, (leaf, mut t)| {
            let mut out = TaskOut::default();
            descend(cells, &src, multipoles, nt, cfg, leaf, &mut t, s, &mut out);
            out
        })
        .collect();
    let mut all = TaskOut::default();
    for o in outs {
        all.merge(o);
    }
    let mut report = EvalReport { stats: all.stats, trace: all.trace, ..Default::default() };
    report.phases.traversal = start.elapsed().as_secs_f64();
    report.total = report.phases.traversal;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn descend(
    cells: &[Cell],
    src: &Sources<'_>,
    multipoles: &[f64],
    nt: usize,
    cfg: &EvalConfig,
    leaf: CellId,
    t: &mut Targets<'_>,
    s: &mut Scratch,
    out: &mut TaskOut,
) {
    let target = &cells[leaf];
    let interact_p2p = |c: CellId, t: &mut Targets<'_>, out: &mut TaskOut| {
        let clock = Instant::now();
        if c == leaf {
            p2p_self(t, &src.q[target.body_range.clone()], cfg.p2p_mode, &mut out.stats);
        } else {
            p2p(t, &src.slice(cells[c].body_range.clone()), cfg.p2p_mode, &mut out.stats);
        }
        out.stats.p2p_time += clock.elapsed().as_secs_f64();
        if cfg.trace {
            out.trace.push(TraceEntry { kind: InteractionKind::P2P, target: leaf, source: c });
        }
    };
    if cells[0].is_leaf() {
        interact_p2p(0, t, out);
        return;
    }
    let mut stack = vec![0];
    while let Some(c) = stack.pop() {
        for &child in cells[c].children.iter().rev() {
            let cell = &cells[child];
            if cell.is_leaf() {
                interact_p2p(child, t, out);
                continue;
            }
            let contains_target = cell.body_range.start <= target.body_range.start
                && target.body_range.end <= cell.body_range.end;
            if !contains_target && accept(&cfg.mac, target, cell) {
                let clock = Instant::now();
                let m = &multipoles[child * nt..(child + 1) * nt];
                if m2p_into(m, cell.center, cfg.p, t, s).is_ok() {
                    out.stats.m2p_calls += 1;
                    out.stats.m2p_time += clock.elapsed().as_secs_f64();
                    if cfg.trace {
                        out.trace.push(TraceEntry { kind: InteractionKind::M2P, target: leaf, source: child });
                    }
                } else {
                    // A body sits on the expansion center.
                    interact_p2p(child, t, out);
                }
                continue;
            }
            stack.push(child);
        }
    }
}
