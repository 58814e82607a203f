use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use super::{require_order, EvalConfig, EvalReport, InteractionKind, TaskOut, TraceEntry};
use crate::error::{FmmError, Result};
use crate::geometry::{neighbor_offsets, MortonKey};
use crate::kernels::{m2l_into, p2p, p2p_self, term_count, views, Scratch};
use crate::tree::{split_leaf_targets, sub, Cell, CellId, CellShape, Tree};

/// Interaction lists of one cell under the parent-neighbor rule.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionLists {
    /// Children of the parent's neighbors that do not touch the cell: M2L sources.
    pub well_separated: Vec<CellId>,
    /// Coarser leaves in the parent's neighborhood that do not touch the cell;
    /// they have no children to translate, so their bodies act directly.
    pub far_leaves: Vec<CellId>,
    /// For leaves: the cells covering the 26 surrounding positions, P2P sources.
    pub neighbors: Vec<CellId>,
}

struct KeyIndex<'a> {
    cells: &'a [Cell],
    map: HashMap<MortonKey, CellId>,
}

impl<'a> KeyIndex<'a> {
    fn new(cells: &'a [Cell]) -> Self {
        let map = cells.iter().enumerate().map(|(i, c)| (c.key, i)).collect();
        Self { cells, map }
    }

    /// The cell at `key`, or the coarser leaf whose box contains it. `None` if
    /// the region holds no bodies.
    fn covering(&self, key: MortonKey) -> Option<CellId> {
        let mut k = key;
        loop {
            if let Some(&c) = self.map.get(&k) {
                return (k == key || self.cells[c].is_leaf()).then_some(c);
            }
            k = k.parent()?;
        }
    }
}

/// True when the two boxes share a face, edge or corner, or overlap.
fn touches(a: MortonKey, b: MortonKey) -> bool {
    let level = a.level.max(b.level);
    let (ia, ib) = (a.decode(), b.decode());
    let (sa, sb) = (level - a.level, level - b.level);
    (0..3).all(|d| {
        let (alo, ahi) = ((ia[d] as u64) << sa, (ia[d] as u64 + 1) << sa);
        let (blo, bhi) = ((ib[d] as u64) << sb, (ib[d] as u64 + 1) << sb);
        alo <= bhi && blo <= ahi
    })
}

fn lists(index: &KeyIndex<'_>, c: CellId, with_neighbors: bool) -> InteractionLists {
    let cells = index.cells;
    let cell = &cells[c];
    let mut out = InteractionLists::default();
    if let Some(parent) = cell.key.parent() {
        let around = std::iter::once(Some(parent)).chain(neighbor_offsets().map(|d| parent.neighbor(d)));
        for key in around.flatten() {
            let Some(y) = index.covering(key) else { continue };
            let ycell = &cells[y];
            if ycell.is_leaf() {
                if !touches(ycell.key, cell.key) && !out.far_leaves.contains(&y) {
                    out.far_leaves.push(y);
                }
            } else {
                for &ch in &ycell.children {
                    if !touches(cells[ch].key, cell.key) {
                        out.well_separated.push(ch);
                    }
                }
            }
        }
    }
    if with_neighbors && cell.is_leaf() {
        for key in neighbor_offsets().filter_map(|d| cell.key.neighbor(d)) {
            if let Some(y) = index.covering(key) {
                if !out.neighbors.contains(&y) {
                    out.neighbors.push(y);
                }
            }
        }
    }
    out
}

/// Interaction lists of `cell`. Requires a cubic tree.
pub fn interaction_lists(tree: &Tree, cell: CellId) -> Result<InteractionLists> {
    if tree.options().shape != CellShape::Cubic {
        return Err(FmmError::ListFmmRequiresCubic);
    }
    Ok(lists(&KeyIndex::new(tree.cells()), cell, true))
}

/// M2L over each cell's well-separated list, P2P over leaf neighbor lists,
/// then the downward pass. The MAC in `cfg` is not used.
pub fn evaluate_list_fmm(tree: &mut Tree, cfg: &EvalConfig) -> Result<EvalReport> {
    if tree.options().shape != CellShape::Cubic {
        return Err(FmmError::ListFmmRequiresCubic);
    }
    require_order(tree, cfg)?;
    tree.reset_evaluation();
    let start = Instant::now();
    let nm = term_count(cfg.p);
    let nl = term_count(cfg.p + 1);
    let p = cfg.p;
    let leaves: Vec<CellId> = tree.leaves().collect();
    let Tree { cells, bodies, multipoles, locals, .. } = tree;
    let cells: &[Cell] = cells;
    let multipoles: &[f64] = multipoles;
    let index = KeyIndex::new(cells);

    let per_cell: Vec<(TaskOut, Vec<CellId>)> = locals
        .par_chunks_mut(nl)
        .enumerate()
        .map_init(Scratch::new, |s, (c, local)| {
            let mut out = TaskOut::default();
            let l = lists(&index, c, false);
            let clock = Instant::now();
            for &y in &l.well_separated {
                let r = sub(cells[c].center, cells[y].center);
                m2l_into(&multipoles[y * nm..(y + 1) * nm], r, p, local, s);
                if cfg.trace {
                    out.trace.push(TraceEntry { kind: InteractionKind::M2L, target: c, source: y });
                }
            }
            out.stats.m2l_calls += l.well_separated.len() as u64;
            out.stats.m2l_time += clock.elapsed().as_secs_f64();
            (out, l.far_leaves)
        })
        .collect();
    let mut all = TaskOut::default();
    let mut far = Vec::with_capacity(per_cell.len());
    for (o, f) in per_cell {
        all.merge(o);
        far.push(f);
    }

    let (src, targets) = views(bodies);
    let far = &far;
    let outs: Vec<TaskOut> = split_leaf_targets(cells, &leaves, targets)
        .into_par_iter()
        .map(|(leaf, mut t)| {
            let mut out = TaskOut::default();
            let mut sources = Vec::new();
            let mut c = Some(leaf);
            while let Some(a) = c {
                sources.extend(far[a].iter().rev());
                c = cells[a].parent;
            }
            sources.reverse();
            sources.push(leaf);
            sources.extend(lists(&index, leaf, true).neighbors);
            let clock = Instant::now();
            for &y in &sources {
                if y == leaf {
                    p2p_self(&mut t, &src.q[cells[leaf].body_range.clone()], cfg.p2p_mode, &mut out.stats);
                } else {
                    p2p(&mut t, &src.slice(cells[y].body_range.clone()), cfg.p2p_mode, &mut out.stats);
                }
                if cfg.trace {
                    out.trace.push(TraceEntry { kind: InteractionKind::P2P, target: leaf, source: y });
                }
            }
            out.stats.p2p_time += clock.elapsed().as_secs_f64();
            out
        })
        .collect();
    for o in outs {
        all.merge(o);
    }
    let traversal = start.elapsed().as_secs_f64();
    let down = Instant::now();
    all.stats.merge(&tree.downward_pass()?);
    let mut report = EvalReport { stats: all.stats, trace: all.trace, ..Default::default() };
    report.phases.traversal = traversal;
    report.phases.downward = down.elapsed().as_secs_f64();
    report.total = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(idx: [u32; 3], level: u32) -> MortonKey {
        MortonKey::encode(idx, level).unwrap()
    }

    #[test]
    fn touching_boxes() {
        assert!(touches(key([1, 1, 1], 2), key([2, 2, 2], 2)));
        assert!(!touches(key([0, 0, 0], 2), key([2, 0, 0], 2)));
        assert!(touches(key([1, 1, 1], 2), key([1, 1, 1], 2)));
        // level-1 box [2,4) at level 2 touches index 1 but not 0
        assert!(touches(key([1, 0, 0], 1), key([1, 0, 0], 2)));
        assert!(!touches(key([1, 0, 0], 1), key([0, 0, 0], 2)));
        assert!(touches(key([0, 0, 0], 0), key([3, 3, 3], 2)));
    }
}
