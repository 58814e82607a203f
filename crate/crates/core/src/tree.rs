//! Adaptive octree over Morton-sorted bodies, with per-cell expansion storage
//! and the upward (P2M, M2M) and downward (L2L, L2P) passes.

use std::ops::Range;

use arrayvec::ArrayVec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::{bounds_of_range, compute_bounds, Aabb, MortonKey, ParticleSet, MAX_LEVEL};
use crate::kernels::{
    check_order, l2l_into, l2p_into, m2m_into, p2m_into, term_count, Expansion, KernelStats, Scratch,
    Sources, Targets,
};

pub type CellId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellShape {
    /// Octant cubes as produced by the split.
    Cubic,
    /// Each cell's box is squeezed to the bounding box of its bodies.
    Rectangular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    Geometric,
    /// Weighted by `|q|`, so mixed-sign charges still give a point inside the cell.
    CenterOfMass,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub ncrit: usize,
    pub shape: CellShape,
    pub center: CenterMode,
    /// Keep more than `ncrit` bodies in a depth-21 leaf instead of failing.
    pub allow_oversized_leaves: bool,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            ncrit: 30,
            shape: CellShape::Cubic,
            center: CenterMode::CenterOfMass,
            allow_oversized_leaves: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub key: MortonKey,
    /// Untightened octant cube.
    pub cube: Aabb,
    /// Cell box: the cube, or the tight box of the bodies for rectangular trees.
    pub bounds: Aabb,
    /// Center of expansion.
    pub center: [f64; 3],
    /// Largest center-to-body distance.
    pub bmax: f64,
    /// Center to farthest corner of `bounds`.
    pub rmax: f64,
    pub parent: Option<CellId>,
    pub children: ArrayVec<CellId, 8>,
    pub body_range: Range<usize>,
    /// Cells are stored in pre-order; this cell's subtree is `id..subtree_end`.
    pub subtree_end: CellId,
}

impl Cell {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn level(&self) -> u32 {
        self.key.level
    }

    pub fn body_count(&self) -> usize {
        self.body_range.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TreeStats {
    pub bodies: usize,
    pub cells: usize,
    pub leaves: usize,
    pub depth: u32,
    /// `leaf_occupancy[k]` is the number of leaves holding exactly `k` bodies.
    pub leaf_occupancy: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Tree {
    pub(crate) cells: Vec<Cell>,
    pub(crate) bodies: ParticleSet,
    /// `bodies[i]` is body `permutation[i]` of the input set.
    pub(crate) permutation: Vec<usize>,
    pub(crate) options: TreeOptions,
    pub(crate) root_cube: Aabb,
    pub(crate) order: usize,
    pub(crate) multipoles: Vec<f64>,
    pub(crate) locals: Vec<f64>,
}

/// Builds the octree. Bodies are copied and sorted by level-21 Morton key.
pub fn build_tree(ps: &ParticleSet, options: TreeOptions) -> Result<Tree> {
    ps.check_consistent();
    if options.ncrit == 0 {
        return Err(FmmError::InvalidConfig("ncrit must be at least 1".into()));
    }
    let bounds = compute_bounds(ps)?;
    let mut root_cube = bounds.bounding_cube();
    if root_cube.extent()[0] == 0.0 {
        let c = root_cube.center();
        root_cube = Aabb::new([c[0] - 0.5, c[1] - 0.5, c[2] - 0.5], [c[0] + 0.5, c[1] + 0.5, c[2] + 0.5]);
    }
    let size = root_cube.extent()[0];
    let grid = (1u64 << MAX_LEVEL) as f64;
    let max_index = (1u32 << MAX_LEVEL) - 1;
    let keys: Vec<u64> = (0..ps.len())
        .map(|i| {
            let p = ps.position(i);
            let mut idx = [0u32; 3];
            for d in 0..3 {
                let v = ((p[d] - root_cube.min[d]) / size * grid).floor();
                idx[d] = (v.max(0.0) as u64).min(max_index as u64) as u32;
            }
            MortonKey::from_index(idx).map(|k| k.key)
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..ps.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    let sorted_keys: Vec<u64> = order.iter().map(|&i| keys[i]).collect();
    let bodies = ps.permuted(&order);

    let mut builder = Builder {
        cells: Vec::new(),
        keys: &sorted_keys,
        bodies: &bodies,
        options,
        root_cube,
    };
    builder.build(0..ps.len(), MortonKey { key: 0, level: 0 }, None)?;
    let cells = builder.cells;
    Ok(Tree {
        cells,
        bodies,
        permutation: order,
        options,
        root_cube,
        order: 0,
        multipoles: Vec::new(),
        locals: Vec::new(),
    })
}

struct Builder<'a> {
    cells: Vec<Cell>,
    keys: &'a [u64],
    bodies: &'a ParticleSet,
    options: TreeOptions,
    root_cube: Aabb,
}

impl Builder<'_> {
    fn build(&mut self, range: Range<usize>, key: MortonKey, parent: Option<CellId>) -> Result<CellId> {
        let id = self.cells.len();
        let cube = self.cube_of(key);
        let (bounds, center, bmax, rmax) = self.geometry(&range, cube)?;
        self.cells.push(Cell {
            key,
            cube,
            bounds,
            center,
            bmax,
            rmax,
            parent,
            children: ArrayVec::new(),
            body_range: range.clone(),
            subtree_end: id + 1,
        });
        let split = if range.len() <= self.options.ncrit {
            false
        } else if key.level == MAX_LEVEL {
            if !self.options.allow_oversized_leaves {
                return Err(FmmError::MaxDepthExceeded);
            }
            false
        } else {
            true
        };
        if split {
            let shift = 3 * (MAX_LEVEL - key.level - 1);
            let keys = &self.keys[range.clone()];
            let mut start = 0;
            for octant in 0..8u64 {
                let end = start + keys[start..].partition_point(|k| (k >> shift) & 7 <= octant);
                if end > start {
                    let child_key = key.child(octant as u8).expect("level below MAX_LEVEL");
                    let child = self.build(range.start + start..range.start + end, child_key, Some(id))?;
                    self.cells[id].children.push(child);
                }
                start = end;
            }
        }
        self.cells[id].subtree_end = self.cells.len();
        Ok(id)
    }

    fn cube_of(&self, key: MortonKey) -> Aabb {
        let size = self.root_cube.extent()[0] / (1u64 << key.level) as f64;
        let idx = key.decode();
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for d in 0..3 {
            min[d] = self.root_cube.min[d] + idx[d] as f64 * size;
            max[d] = min[d] + size;
        }
        Aabb::new(min, max)
    }

    fn geometry(&self, range: &Range<usize>, cube: Aabb) -> Result<(Aabb, [f64; 3], f64, f64)> {
        let ps = self.bodies;
        let bounds = match self.options.shape {
            CellShape::Cubic => cube,
            CellShape::Rectangular => bounds_of_range(ps, range.clone())?,
        };
        let center = match self.options.center {
            CenterMode::Geometric => bounds.center(),
            CenterMode::CenterOfMass => {
                let mut w = 0.0;
                let mut c = [0.0; 3];
                for i in range.clone() {
                    let a = ps.q[i].abs();
                    w += a;
                    c[0] += a * ps.x[i];
                    c[1] += a * ps.y[i];
                    c[2] += a * ps.z[i];
                }
                if w > 0.0 {
                    // clamp guards against rounding just outside a degenerate box
                    let mut out = [c[0] / w, c[1] / w, c[2] / w];
                    for d in 0..3 {
                        out[d] = out[d].clamp(bounds.min[d], bounds.max[d]);
                    }
                    out
                } else {
                    bounds.center()
                }
            }
        };
        let bmax = range
            .clone()
            .map(|i| distance(ps.position(i), center))
            .fold(0.0, f64::max);
        let rmax = bounds.farthest_corner_distance(center);
        Ok((bounds, center, bmax, rmax))
    }
}

pub(crate) fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

impl Tree {
    pub fn root(&self) -> CellId {
        0
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    /// Bodies in tree (Morton) order.
    pub fn bodies(&self) -> &ParticleSet {
        &self.bodies
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn options(&self) -> &TreeOptions {
        &self.options
    }

    pub fn root_cube(&self) -> Aabb {
        self.root_cube
    }

    /// Expansion order of the stored multipoles, 0 before the upward pass.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn leaves(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.cells.len()).filter(|&c| self.cells[c].is_leaf())
    }

    pub(crate) fn nterms(&self) -> usize {
        term_count(self.order)
    }

    /// Coefficients per local expansion; locals carry one degree more than multipoles.
    pub(crate) fn local_terms(&self) -> usize {
        term_count(self.order + 1)
    }

    pub(crate) fn multipole_slice(&self, c: CellId) -> &[f64] {
        let nt = self.nterms();
        &self.multipoles[c * nt..(c + 1) * nt]
    }

    pub fn multipole(&self, c: CellId) -> Option<Expansion> {
        (self.order > 0).then(|| Expansion::from_coeffs(self.order, self.multipole_slice(c).to_vec()).unwrap())
    }

    /// Local expansion of order `p + 1` after an upward pass of order `p`.
    pub fn local(&self, c: CellId) -> Option<Expansion> {
        let nt = self.local_terms();
        (self.order > 0)
            .then(|| Expansion::from_coeffs(self.order + 1, self.locals[c * nt..(c + 1) * nt].to_vec()).unwrap())
    }

    pub fn set_local(&mut self, c: CellId, e: &Expansion) -> Result<()> {
        if e.order() != self.order + 1 {
            return Err(FmmError::OrderMismatch { left: e.order(), right: self.order + 1 });
        }
        let nt = self.local_terms();
        self.locals[c * nt..(c + 1) * nt].copy_from_slice(e.coeffs());
        Ok(())
    }

    /// Zeroes local expansions and body accumulators.
    pub fn reset_evaluation(&mut self) {
        self.locals.fill(0.0);
        self.bodies.clear_accumulators();
    }

    /// Accumulators scattered back to the caller's body order.
    pub fn results_in_input_order(&self) -> ParticleSet {
        let n = self.bodies.len();
        let mut out = ParticleSet {
            x: vec![0.0; n],
            y: vec![0.0; n],
            z: vec![0.0; n],
            q: vec![0.0; n],
            phi: vec![0.0; n],
            fx: vec![0.0; n],
            fy: vec![0.0; n],
            fz: vec![0.0; n],
        };
        for (i, &o) in self.permutation.iter().enumerate() {
            out.x[o] = self.bodies.x[i];
            out.y[o] = self.bodies.y[i];
            out.z[o] = self.bodies.z[i];
            out.q[o] = self.bodies.q[i];
            out.phi[o] = self.bodies.phi[i];
            out.fx[o] = self.bodies.fx[i];
            out.fy[o] = self.bodies.fy[i];
            out.fz[o] = self.bodies.fz[i];
        }
        out
    }

    pub fn stats(&self) -> TreeStats {
        let mut occupancy = Vec::new();
        let mut leaves = 0;
        for c in self.cells.iter().filter(|c| c.is_leaf()) {
            leaves += 1;
            let k = c.body_count();
            if occupancy.len() <= k {
                occupancy.resize(k + 1, 0);
            }
            occupancy[k] += 1;
        }
        TreeStats {
            bodies: self.bodies.len(),
            cells: self.cells.len(),
            leaves,
            depth: self.cells.iter().map(|c| c.level()).max().unwrap_or(0),
            leaf_occupancy: occupancy,
        }
    }

    /// P2M at every leaf, then M2M from children to parents.
    pub fn upward_pass(&mut self, p: usize) -> Result<KernelStats> {
        check_order(p)?;
        self.order = p;
        let nt = term_count(p);
        let ncells = self.cells.len();
        self.multipoles = vec![0.0; ncells * nt];
        self.locals = vec![0.0; ncells * term_count(p + 1)];
        let cells = &self.cells;
        let src = Sources::from_set(&self.bodies);
        self.multipoles
            .par_chunks_mut(nt)
            .enumerate()
            .filter(|(c, _)| cells[*c].is_leaf())
            .for_each_init(Scratch::new, |s, (c, out)| {
                let cell = &cells[c];
                p2m_into(&src.slice(cell.body_range.clone()), cell.center, p, out, s);
            });
        let mut stats = KernelStats {
            p2m_calls: self.leaves().count() as u64,
            ..Default::default()
        };
        let mut scratch = Scratch::new();
        // Reverse pre-order visits every child before its parent.
        for c in (0..ncells).rev() {
            let cell = &self.cells[c];
            if cell.is_leaf() {
                continue;
            }
            for &child in &cell.children {
                let (lo, hi) = self.multipoles.split_at_mut(child * nt);
                let shift = sub(cell.center, self.cells[child].center);
                m2m_into(&hi[..nt], shift, p, &mut lo[c * nt..(c + 1) * nt], &mut scratch);
                stats.m2m_calls += 1;
            }
        }
        Ok(stats)
    }

    /// L2L from parents to children, then L2P at every leaf.
    pub fn downward_pass(&mut self) -> Result<KernelStats> {
        check_order(self.order)?;
        let p = self.order + 1;
        let nt = term_count(p);
        let mut stats = KernelStats::default();
        let mut scratch = Scratch::new();
        for c in 0..self.cells.len() {
            let cell = &self.cells[c];
            for &child in &cell.children {
                let (lo, hi) = self.locals.split_at_mut(child * nt);
                let shift = sub(self.cells[child].center, cell.center);
                l2l_into(&lo[c * nt..(c + 1) * nt], shift, p, &mut hi[..nt], &mut scratch);
                stats.l2l_calls += 1;
            }
        }
        let leaves: Vec<CellId> = self.leaves().collect();
        stats.l2p_calls = leaves.len() as u64;
        let cells = &self.cells;
        let locals = &self.locals;
        let targets = split_leaf_targets(cells, &leaves, Targets::from_set(&mut self.bodies));
        targets.into_par_iter().for_each_init(Scratch::new, |s, (c, mut t)| {
            l2p_into(&locals[c * nt..(c + 1) * nt], cells[c].center, p, &mut t, s);
        });
        Ok(stats)
    }
}

/// Splits the accumulators into one disjoint view per leaf. `leaves` must be
/// in pre-order, whose body ranges tile `0..n` in increasing order.
pub(crate) fn split_leaf_targets<'a>(
    cells: &[Cell],
    leaves: &[CellId],
    mut rest: Targets<'a>,
) -> Vec<(CellId, Targets<'a>)> {
    let mut out = Vec::with_capacity(leaves.len());
    let mut offset = 0;
    for &c in leaves {
        let r = &cells[c].body_range;
        debug_assert_eq!(r.start, offset);
        let (head, tail) = rest.split_at(r.len());
        out.push((c, head));
        rest = tail;
        offset = r.end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_distribution, Distribution};
    use crate::kernels::{direct_self, m2p, p2m};

    fn opts(ncrit: usize, shape: CellShape, center: CenterMode) -> TreeOptions {
        TreeOptions { ncrit, shape, center, allow_oversized_leaves: false }
    }

    fn octant_bodies() -> ParticleSet {
        let mut pts = Vec::new();
        for &x in &[0.25, 0.75] {
            for &y in &[0.25, 0.75] {
                for &z in &[0.25, 0.75] {
                    pts.push([x, y, z]);
                }
            }
        }
        // Pin the root cube to the unit cube.
        pts[0] = [0.0, 0.0, 0.0];
        pts[7] = [1.0, 1.0, 1.0];
        ParticleSet::from_points(&pts, &[1.0; 8])
    }

    #[test]
    fn one_body_per_octant() {
        let t = build_tree(&octant_bodies(), opts(1, CellShape::Cubic, CenterMode::Geometric)).unwrap();
        let root = t.cell(t.root());
        assert_eq!(root.children.len(), 8);
        for &c in &root.children {
            assert!(t.cell(c).is_leaf());
            assert_eq!(t.cell(c).body_count(), 1);
        }
        assert_eq!(t.cells().len(), 9);
    }

    #[test]
    fn ncrit_boundary_keeps_single_leaf() {
        let ps = generate_distribution(Distribution::Cube, 30, 1).unwrap();
        let t = build_tree(&ps, opts(30, CellShape::Rectangular, CenterMode::CenterOfMass)).unwrap();
        assert_eq!(t.cells().len(), 1);
        assert!(t.cell(0).is_leaf());
    }

    #[test]
    fn large_tree_partitions_bodies() {
        let ps = generate_distribution(Distribution::Cube, 100_000, 2).unwrap();
        let t = build_tree(&ps, TreeOptions::default()).unwrap();
        let mut total = 0;
        let mut seen = vec![false; ps.len()];
        for c in t.leaves() {
            let cell = t.cell(c);
            assert!(cell.body_count() <= 30);
            total += cell.body_count();
            for i in cell.body_range.clone() {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert_eq!(total, 100_000);
    }

    #[test]
    fn children_partition_parent_range() {
        let ps = generate_distribution(Distribution::Cube, 5000, 3).unwrap();
        let t = build_tree(&ps, opts(16, CellShape::Cubic, CenterMode::Geometric)).unwrap();
        for (id, cell) in t.cells().iter().enumerate() {
            if cell.is_leaf() {
                continue;
            }
            let mut next = cell.body_range.start;
            for &c in &cell.children {
                let child = t.cell(c);
                assert_eq!(child.body_range.start, next);
                assert_eq!(child.parent, Some(id));
                assert!(child.body_range.len() > 0);
                assert!(c > id && child.subtree_end <= cell.subtree_end);
                next = child.body_range.end;
            }
            assert_eq!(next, cell.body_range.end);
        }
    }

    #[test]
    fn bodies_lie_in_their_cells() {
        let ps = generate_distribution(Distribution::Cube, 3000, 4).unwrap();
        for shape in [CellShape::Cubic, CellShape::Rectangular] {
            let t = build_tree(&ps, opts(10, shape, CenterMode::Geometric)).unwrap();
            for cell in t.cells() {
                for i in cell.body_range.clone() {
                    let p = t.bodies().position(i);
                    let e = 1e-12;
                    for b in [cell.bounds, cell.cube] {
                        assert!((0..3).all(|d| p[d] >= b.min[d] - e && p[d] <= b.max[d] + e));
                    }
                }
                let bmax = cell
                    .body_range
                    .clone()
                    .map(|i| distance(t.bodies().position(i), cell.center))
                    .fold(0.0, f64::max);
                assert_eq!(bmax, cell.bmax);
            }
        }
    }

    #[test]
    fn permutation_recovers_input() {
        let ps = generate_distribution(Distribution::Cube, 2000, 5).unwrap();
        let t = build_tree(&ps, TreeOptions::default()).unwrap();
        let back = t.results_in_input_order();
        assert_eq!(back.x, ps.x);
        assert_eq!(back.y, ps.y);
        assert_eq!(back.q, ps.q);
        let mut sorted = t.permutation().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..2000).collect::<Vec<_>>());
    }

    #[test]
    fn single_body_cell_has_zero_bmax() {
        let ps = ParticleSet::from_points(&[[0.3, 0.4, 0.5]], &[1.0]);
        for center in [CenterMode::Geometric, CenterMode::CenterOfMass] {
            let t = build_tree(&ps, opts(1, CellShape::Rectangular, center)).unwrap();
            assert_eq!(t.cell(0).bmax, 0.0);
            assert_eq!(t.cell(0).center, [0.3, 0.4, 0.5]);
        }
    }

    #[test]
    fn rmax_is_farthest_corner() {
        let ps = generate_distribution(Distribution::Cube, 500, 6).unwrap();
        let t = build_tree(&ps, opts(20, CellShape::Cubic, CenterMode::CenterOfMass)).unwrap();
        for cell in t.cells() {
            let mut best = 0.0f64;
            for corner in 0..8 {
                let p = [
                    if corner & 1 == 0 { cell.bounds.min[0] } else { cell.bounds.max[0] },
                    if corner & 2 == 0 { cell.bounds.min[1] } else { cell.bounds.max[1] },
                    if corner & 4 == 0 { cell.bounds.min[2] } else { cell.bounds.max[2] },
                ];
                best = best.max(distance(p, cell.center));
            }
            assert!((best - cell.rmax).abs() < 1e-15);
            assert!(cell.rmax >= cell.bmax);
        }
    }

    #[test]
    fn tightening_never_grows_bmax_with_com_centers() {
        let ps = generate_distribution(Distribution::Cube, 4000, 7).unwrap();
        let cubic = build_tree(&ps, opts(25, CellShape::Cubic, CenterMode::CenterOfMass)).unwrap();
        let rect = build_tree(&ps, opts(25, CellShape::Rectangular, CenterMode::CenterOfMass)).unwrap();
        assert_eq!(cubic.cells().len(), rect.cells().len());
        for (a, b) in cubic.cells().iter().zip(rect.cells()) {
            assert_eq!(a.body_range, b.body_range);
            assert!(b.bmax <= a.bmax);
            assert!(b.rmax <= a.rmax);
        }
    }

    #[test]
    fn coincident_points_exceed_depth() {
        let pts = vec![[0.5, 0.5, 0.5]; 31];
        let mut ps = ParticleSet::from_points(&pts, &[1.0; 31]);
        ps.push([0.0, 0.0, 0.0], 1.0);
        let err = build_tree(&ps, opts(30, CellShape::Cubic, CenterMode::Geometric)).unwrap_err();
        assert!(matches!(err, FmmError::MaxDepthExceeded));

        let mut o = opts(30, CellShape::Cubic, CenterMode::Geometric);
        o.allow_oversized_leaves = true;
        let t = build_tree(&ps, o).unwrap();
        assert_eq!(t.stats().depth, MAX_LEVEL);
        assert!(t.leaves().any(|c| t.cell(c).body_count() == 31));
    }

    #[test]
    fn empty_input_and_zero_ncrit_rejected() {
        assert!(matches!(
            build_tree(&ParticleSet::default(), TreeOptions::default()),
            Err(FmmError::EmptyParticleSet)
        ));
        let ps = generate_distribution(Distribution::Cube, 4, 0).unwrap();
        let mut o = TreeOptions::default();
        o.ncrit = 0;
        assert!(build_tree(&ps, o).is_err());
    }

    #[test]
    fn stats_summarize_leaves() {
        let ps = generate_distribution(Distribution::Cube, 1000, 8).unwrap();
        let t = build_tree(&ps, TreeOptions::default()).unwrap();
        let s = t.stats();
        assert_eq!(s.bodies, 1000);
        assert_eq!(s.leaf_occupancy.iter().sum::<usize>(), s.leaves);
        assert_eq!(
            s.leaf_occupancy.iter().enumerate().map(|(k, n)| k * n).sum::<usize>(),
            1000
        );
        assert!(s.depth >= 2);
    }

    #[test]
    fn upward_single_charge_at_center() {
        let ps = ParticleSet::from_points(&[[0.2, 0.2, 0.2]], &[1.0]);
        let mut t = build_tree(&ps, TreeOptions::default()).unwrap();
        t.upward_pass(5).unwrap();
        let m = t.multipole(0).unwrap();
        assert_eq!(m.coeffs()[0], 1.0);
        assert!(m.coeffs()[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn monopole_conservation_is_exact() {
        // Integer charges make every partial sum exact.
        let mut ps = generate_distribution(Distribution::Cube, 3000, 9).unwrap();
        for (i, q) in ps.q.iter_mut().enumerate() {
            *q = (i % 7) as f64 + 1.0;
        }
        let mut t = build_tree(&ps, TreeOptions::default()).unwrap();
        t.upward_pass(4).unwrap();
        assert_eq!(t.multipole(0).unwrap().coeffs()[0], ps.total_charge());
    }

    #[test]
    fn m2m_aggregate_matches_children_far_away() {
        let ps = generate_distribution(Distribution::Cube, 2000, 10).unwrap();
        let mut t = build_tree(&ps, TreeOptions { ncrit: 40, ..Default::default() }).unwrap();
        let p = 6;
        t.upward_pass(p).unwrap();
        let x = [12.0, -7.0, 9.0];
        for (id, cell) in t.cells().iter().enumerate().filter(|(_, c)| !c.is_leaf()) {
            let own = t.multipole(id).unwrap();
            let r = sub(x, cell.center);
            let (phi_parent, _) = own.eval_multipole(r).unwrap();
            let mut rebuilt = Expansion::zeros(p).unwrap();
            for &c in &cell.children {
                let child = t.multipole(c).unwrap();
                crate::kernels::m2m_accumulate(&child, sub(cell.center, t.cell(c).center), &mut rebuilt).unwrap();
            }
            let (phi_rebuilt, _) = rebuilt.eval_multipole(r).unwrap();
            assert!((phi_parent - phi_rebuilt).abs() <= 1e-14 * phi_parent.abs());
            // and the parent's own moments equal a fresh P2M about its center
            let direct = p2m(&t.bodies().subset(&cell.body_range.clone().collect::<Vec<_>>()), cell.center, p).unwrap();
            let scale = direct.coeffs().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in own.coeffs().iter().zip(direct.coeffs()) {
                assert!((a - b).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn root_multipole_matches_direct_far_away() {
        let ps = generate_distribution(Distribution::Cube, 64, 11).unwrap();
        let mut t = build_tree(&ps, TreeOptions { ncrit: 8, ..Default::default() }).unwrap();
        let p = 4;
        t.upward_pass(p).unwrap();
        let root = t.cell(0).clone();
        let m = t.multipole(0).unwrap();
        for &dist in &[3.0, 5.0, 8.0] {
            let x = [root.center[0] + dist, root.center[1] + 0.3 * dist, root.center[2]];
            let mut probe = ParticleSet::from_points(&[x], &[0.0]);
            m2p(&m, root.center, &mut probe).unwrap();
            let mut all = ps.clone();
            all.push(x, 0.0);
            direct_self(&mut all);
            let reference = all.phi[64];
            let theta = root.bmax / distance(x, root.center);
            let rel = ((probe.phi[0] - reference) / reference).abs();
            assert!(rel <= theta.powi(p as i32) * (1.0 + theta) / (1.0 - theta), "dist {dist}: {rel}");
        }
    }

    #[test]
    fn downward_zero_locals_leave_accumulators() {
        let ps = generate_distribution(Distribution::Cube, 500, 12).unwrap();
        let mut t = build_tree(&ps, TreeOptions::default()).unwrap();
        t.upward_pass(4).unwrap();
        t.bodies.phi.iter_mut().for_each(|v| *v = 0.5);
        t.downward_pass().unwrap();
        assert!(t.bodies().phi.iter().all(|&v| v == 0.5));
        assert!(t.bodies().fx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn downward_constant_root_local() {
        let ps = generate_distribution(Distribution::Cube, 500, 13).unwrap();
        let mut t = build_tree(&ps, TreeOptions::default()).unwrap();
        t.upward_pass(5).unwrap();
        let mut l = Expansion::zeros(6).unwrap();
        l.set([0, 0, 0], 0.125);
        assert!(t.set_local(0, &Expansion::zeros(5).unwrap()).is_err());
        t.set_local(0, &l).unwrap();
        t.downward_pass().unwrap();
        assert!(t.bodies().phi.iter().all(|&v| v == 0.125));
        assert!(t.bodies().fx.iter().chain(&t.bodies().fy).chain(&t.bodies().fz).all(|&v| v == 0.0));
    }

    #[test]
    fn passes_require_valid_order() {
        let ps = generate_distribution(Distribution::Cube, 10, 14).unwrap();
        let mut t = build_tree(&ps, TreeOptions::default()).unwrap();
        assert!(t.downward_pass().is_err());
        assert!(t.upward_pass(0).is_err());
    }
}
