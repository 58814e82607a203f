use std::ops::Range;
use std::time::Instant;

use rayon::prelude::*;

use super::{require_order, EvalConfig, EvalReport, InteractionKind, TaskOut, TraceEntry};
use crate::error::Result;
use crate::kernels::{
    views,
    m2l_into, m2l_mutual, p2p, p2p_mutual, p2p_self, p2p_self_mutual, term_count, Scratch, Sources, Targets,
};
use crate::mac::accept;
use crate::tree::{sub, Cell, CellId, Tree};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Spawn {
    Task,
    Inline,
}

/// Whether splitting `cell` should hand each child to its own task. Only
/// target splits of non-mutual pairs qualify, so sibling tasks write to
/// disjoint subtrees.
pub fn spawn_policy(cell: &Cell, splits_target: bool, mutual: bool, task_grain: usize) -> Spawn {
    if splits_target && !mutual && !cell.is_leaf() && cell.body_count() >= task_grain {
        Spawn::Task
    } else {
        Spawn::Inline
    }
}

/// Dual tree traversal of a tree against itself, followed by the downward pass.
pub fn evaluate_dual_tree(tree: &mut Tree, cfg: &EvalConfig) -> Result<EvalReport> {
    require_order(tree, cfg)?;
    tree.reset_evaluation();
    let start = Instant::now();
    let nt = term_count(cfg.p + 1);
    let Tree { cells, bodies, multipoles, locals, .. } = tree;
    let (src, t) = views(bodies);
    let ctx = Ctx {
        tcells: cells,
        scells: cells,
        src,
        multipoles,
        same: true,
        cfg,
        nm: term_count(cfg.p),
        nt,
    };
    let region = Region { cell_lo: 0, body_lo: 0, locals, t };
    let out = run_task(&ctx, region, vec![Pair { t: 0, s: 0, mutual: cfg.mutual }]);
    finish(tree, out, start)
}

/// Dual tree traversal of `target`'s bodies against a separate `source` tree.
/// Both trees need an upward pass of order `cfg.p`. Mutual mode is ignored.
pub fn evaluate_dual_tree_between(target: &mut Tree, source: &Tree, cfg: &EvalConfig) -> Result<EvalReport> {
    require_order(target, cfg)?;
    require_order(source, cfg)?;
    target.reset_evaluation();
    let start = Instant::now();
    let nt = term_count(cfg.p + 1);
    let Tree { cells, bodies, locals, .. } = target;
    let ctx = Ctx {
        tcells: cells,
        scells: &source.cells,
        src: Sources::from_set(&source.bodies),
        multipoles: &source.multipoles,
        same: false,
        cfg,
        nm: term_count(cfg.p),
        nt,
    };
    let region = Region {
        cell_lo: 0,
        body_lo: 0,
        locals,
        t: Targets::from_set(bodies),
    };
    let out = run_task(&ctx, region, vec![Pair { t: 0, s: 0, mutual: false }]);
    finish(target, out, start)
}

fn finish(tree: &mut Tree, out: TaskOut, start: Instant) -> Result<EvalReport> {
    let traversal = start.elapsed().as_secs_f64();
    let down = Instant::now();
    let mut stats = out.stats;
    stats.merge(&tree.downward_pass()?);
    let mut report = EvalReport { stats, trace: out.trace, ..Default::default() };
    report.phases.traversal = traversal;
    report.phases.downward = down.elapsed().as_secs_f64();
    report.total = start.elapsed().as_secs_f64();
    Ok(report)
}

struct Ctx<'a> {
    tcells: &'a [Cell],
    scells: &'a [Cell],
    src: Sources<'a>,
    multipoles: &'a [f64],
    /// Target and source are one tree, so `(A, A)` is a self pair.
    same: bool,
    cfg: &'a EvalConfig,
    /// Coefficients per multipole.
    nm: usize,
    /// Coefficients per local.
    nt: usize,
}

#[derive(Clone, Copy, Debug)]
struct Pair {
    t: CellId,
    s: CellId,
    mutual: bool,
}

/// The writable state owned by one task: a target subtree's locals and bodies.
struct Region<'a> {
    cell_lo: CellId,
    body_lo: usize,
    locals: &'a mut [f64],
    t: Targets<'a>,
}

impl Region<'_> {
    fn local(&mut self, c: CellId, nt: usize) -> &mut [f64] {
        let i = c - self.cell_lo;
        &mut self.locals[i * nt..(i + 1) * nt]
    }

    fn two_locals(&mut self, a: CellId, b: CellId, nt: usize) -> (&mut [f64], &mut [f64]) {
        let (i, j) = (a - self.cell_lo, b - self.cell_lo);
        if i < j {
            let (lo, hi) = self.locals.split_at_mut(j * nt);
            (&mut lo[i * nt..(i + 1) * nt], &mut hi[..nt])
        } else {
            let (lo, hi) = self.locals.split_at_mut(i * nt);
            (&mut hi[..nt], &mut lo[j * nt..(j + 1) * nt])
        }
    }

    fn targets(&mut self, r: &Range<usize>) -> Targets<'_> {
        self.t.slice(r.start - self.body_lo..r.end - self.body_lo)
    }

    fn two_targets(&mut self, a: &Range<usize>, b: &Range<usize>) -> (Targets<'_>, Targets<'_>) {
        let swap = a.start > b.start;
        let (lo, hi) = if swap { (b, a) } else { (a, b) };
        let base = self.body_lo;
        let span = self.t.slice(lo.start - base..hi.end - base);
        let (first, second) = span.split_at(hi.start - lo.start);
        let (first, _) = first.split_at(lo.len());
        if swap {
            (second, first)
        } else {
            (first, second)
        }
    }

    /// One region per child of `c`, which must lie inside this region.
    fn children(&mut self, cells: &[Cell], c: CellId, nt: usize) -> Vec<(CellId, Region<'_>)> {
        let cell = &cells[c];
        let first = cell.children[0];
        let mut locals = &mut self.locals[(first - self.cell_lo) * nt..(cell.subtree_end - self.cell_lo) * nt];
        let mut t = self.t.slice(cell.body_range.start - self.body_lo..cell.body_range.end - self.body_lo);
        let mut out = Vec::with_capacity(cell.children.len());
        for &ch in &cell.children {
            let child = &cells[ch];
            let (l, rest) = std::mem::take(&mut locals).split_at_mut((child.subtree_end - ch) * nt);
            locals = rest;
            let (tc, trest) = t.split_at(child.body_count());
            t = trest;
            out.push((ch, Region { cell_lo: ch, body_lo: child.body_range.start, locals: l, t: tc }));
        }
        out
    }
}

fn run_task(ctx: &Ctx<'_>, mut region: Region<'_>, init: Vec<Pair>) -> TaskOut {
    let mut out = TaskOut::default();
    let mut stack = init;
    stack.reverse();
    let mut scratch = Scratch::new();
    let cfg = ctx.cfg;
    while let Some(pair) = stack.pop() {
        let a = &ctx.tcells[pair.t];
        let b = &ctx.scells[pair.s];
        if ctx.same && pair.t == pair.s {
            if a.is_leaf() {
                self_p2p(ctx, &mut region, pair, &mut out);
                continue;
            }
            let kids = &a.children;
            if a.body_count() >= cfg.task_grain {
                let tasks: Vec<_> = region
                    .children(ctx.tcells, pair.t, ctx.nt)
                    .into_iter()
                    .map(|(ci, sub)| {
                        let mut init = vec![Pair { t: ci, s: ci, mutual: pair.mutual }];
                        init.extend(kids.iter().filter(|&&cj| cj != ci).map(|&cj| Pair { t: ci, s: cj, mutual: false }));
                        (sub, init)
                    })
                    .collect();
                spawn_all(ctx, tasks, &mut out);
            } else {
                let mut next = Vec::new();
                for (i, &ci) in kids.iter().enumerate() {
                    for (j, &cj) in kids.iter().enumerate() {
                        if !pair.mutual || j >= i {
                            next.push(Pair { t: ci, s: cj, mutual: pair.mutual });
                        }
                    }
                }
                push_in_order(&mut stack, next);
            }
            continue;
        }
        if a.is_leaf() && b.is_leaf() {
            pair_p2p(ctx, &mut region, pair, &mut out);
            continue;
        }
        if accept(&cfg.mac, a, b) {
            pair_m2l(ctx, &mut region, pair, &mut out, &mut scratch);
            continue;
        }
        let split_target = if b.is_leaf() {
            true
        } else if a.is_leaf() {
            false
        } else {
            a.rmax >= b.rmax
        };
        if split_target {
            if spawn_policy(a, true, pair.mutual, cfg.task_grain) == Spawn::Task {
                let tasks: Vec<_> = region
                    .children(ctx.tcells, pair.t, ctx.nt)
                    .into_iter()
                    .map(|(ci, sub)| (sub, vec![Pair { t: ci, s: pair.s, mutual: false }]))
                    .collect();
                spawn_all(ctx, tasks, &mut out);
            } else {
                let next = a.children.iter().map(|&c| Pair { t: c, ..pair }).collect();
                push_in_order(&mut stack, next);
            }
        } else {
            let next = b.children.iter().map(|&c| Pair { s: c, ..pair }).collect();
            push_in_order(&mut stack, next);
        }
    }
    out
}

fn push_in_order(stack: &mut Vec<Pair>, mut next: Vec<Pair>) {
    next.reverse();
    stack.extend(next);
}

fn spawn_all(ctx: &Ctx<'_>, tasks: Vec<(Region<'_>, Vec<Pair>)>, out: &mut TaskOut) {
    let outs: Vec<TaskOut> = tasks.into_par_iter().map(|(sub, init)| run_task(ctx, sub, init)).collect();
    for o in outs {
        out.merge(o);
    }
}

fn trace(ctx: &Ctx<'_>, out: &mut TaskOut, kind: InteractionKind, pair: Pair) {
    if ctx.cfg.trace {
        out.trace.push(TraceEntry { kind, target: pair.t, source: pair.s });
    }
}

fn self_p2p(ctx: &Ctx<'_>, region: &mut Region<'_>, pair: Pair, out: &mut TaskOut) {
    let r = ctx.tcells[pair.t].body_range.clone();
    let q = &ctx.src.q[r.clone()];
    let mut t = region.targets(&r);
    let clock = Instant::now();
    if pair.mutual {
        p2p_self_mutual(&mut t, q, ctx.cfg.p2p_mode, &mut out.stats);
    } else {
        p2p_self(&mut t, q, ctx.cfg.p2p_mode, &mut out.stats);
    }
    out.stats.p2p_time += clock.elapsed().as_secs_f64();
    let kind = if pair.mutual { InteractionKind::P2PMutual } else { InteractionKind::P2P };
    trace(ctx, out, kind, pair);
}

fn pair_p2p(ctx: &Ctx<'_>, region: &mut Region<'_>, pair: Pair, out: &mut TaskOut) {
    let ra = ctx.tcells[pair.t].body_range.clone();
    let rb = ctx.scells[pair.s].body_range.clone();
    let clock = Instant::now();
    if pair.mutual {
        let (qa, qb) = (&ctx.src.q[ra.clone()], &ctx.src.q[rb.clone()]);
        let (mut ta, mut tb) = region.two_targets(&ra, &rb);
        p2p_mutual(&mut ta, qa, &mut tb, qb, ctx.cfg.p2p_mode, &mut out.stats);
    } else {
        let s = ctx.src.slice(rb);
        let mut t = region.targets(&ra);
        p2p(&mut t, &s, ctx.cfg.p2p_mode, &mut out.stats);
    }
    out.stats.p2p_time += clock.elapsed().as_secs_f64();
    let kind = if pair.mutual { InteractionKind::P2PMutual } else { InteractionKind::P2P };
    trace(ctx, out, kind, pair);
}

fn pair_m2l(ctx: &Ctx<'_>, region: &mut Region<'_>, pair: Pair, out: &mut TaskOut, s: &mut Scratch) {
    let (nm, nt) = (ctx.nm, ctx.nt);
    let p = ctx.cfg.p;
    let a = &ctx.tcells[pair.t];
    let b = &ctx.scells[pair.s];
    let r = sub(a.center, b.center);
    let mb = &ctx.multipoles[pair.s * nm..(pair.s + 1) * nm];
    let clock = Instant::now();
    if pair.mutual {
        let ma = &ctx.multipoles[pair.t * nm..(pair.t + 1) * nm];
        let (la, lb) = region.two_locals(pair.t, pair.s, nt);
        m2l_mutual(ma, mb, r, p, la, lb, s);
        out.stats.m2l_calls += 2;
    } else {
        m2l_into(mb, r, p, region.local(pair.t, nt), s);
        out.stats.m2l_calls += 1;
    }
    out.stats.m2l_time += clock.elapsed().as_secs_f64();
    let kind = if pair.mutual { InteractionKind::M2LMutual } else { InteractionKind::M2L };
    trace(ctx, out, kind, pair);
}
