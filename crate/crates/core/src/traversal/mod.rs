//! Evaluation strategies over a built tree: treecode, list-based FMM and dual
//! tree traversal, plus the direct-sum oracle used to measure their error.

mod dual;
mod list;
mod oracle;
mod treecode;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::ParticleSet;
use crate::kernels::{check_order, KernelStats, P2pMode};
use crate::mac::{MacConfig, MacKind};
use crate::tree::{build_tree, CellId, Tree, TreeOptions, TreeStats};

pub use dual::{evaluate_dual_tree, evaluate_dual_tree_between, spawn_policy, Spawn};
pub use list::{evaluate_list_fmm, interaction_lists, InteractionLists};
pub use oracle::{direct_reference, evaluate_direct, relative_errors, sample_indices, verify, AccuracyReport};
pub use treecode::evaluate_treecode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Treecode,
    ListFmm,
    DualTree,
    /// O(N^2) summation, no tree.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub strategy: Strategy,
    pub mac: MacConfig,
    pub p: usize,
    /// Apply each P2P/M2L pair in both directions (dual tree on one tree only).
    pub mutual: bool,
    /// Smallest body count of a split target cell that gets its own task.
    pub task_grain: usize,
    pub p2p_mode: P2pMode,
    /// Record every kernel call as a [`TraceEntry`].
    pub trace: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::DualTree,
            mac: MacConfig { kind: MacKind::RmaxMac, theta: 0.8 },
            p: 4,
            mutual: false,
            task_grain: 1000,
            p2p_mode: P2pMode::Exact,
            trace: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        check_order(self.p)?;
        MacConfig::new(self.mac.kind, self.mac.theta)?;
        if self.task_grain == 0 {
            return Err(FmmError::InvalidConfig("task_grain must be at least 1".into()));
        }
        Ok(())
    }
}

/// Wall-clock seconds per phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub tree_build: f64,
    pub upward: f64,
    pub traversal: f64,
    pub downward: f64,
}

impl PhaseTimes {
    pub fn sum(&self) -> f64 {
        self.tree_build + self.upward + self.traversal + self.downward
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub stats: KernelStats,
    pub phases: PhaseTimes,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InteractionKind {
    P2P,
    P2PMutual,
    M2L,
    M2LMutual,
    M2P,
}

/// One kernel call: the bodies of `target` receive the field of the bodies of
/// `source`, and vice versa for the mutual kinds. A P2P entry with
/// `target == source` covers all ordered pairs except the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEntry {
    #[serde(rename = "type")]
    pub kind: InteractionKind,
    #[serde(rename = "targetCell")]
    pub target: CellId,
    #[serde(rename = "sourceCell")]
    pub source: CellId,
}

pub fn write_trace_csv<W: Write>(w: W, trace: &[TraceEntry]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for e in trace {
        out.serialize(e)?;
    }
    out.flush()?;
    Ok(())
}

/// How many times each (target body, source body) pair is covered by `trace`,
/// row-major `n_t x n_s` in tree order. Meant for small trees. Pass the same
/// tree twice for a self-evaluation.
pub fn coverage_counts(target: &Tree, source: &Tree, trace: &[TraceEntry]) -> Vec<u32> {
    let nt = target.bodies().len();
    let ns = source.bodies().len();
    let same = std::ptr::eq(target, source);
    let mut m = vec![0u32; nt * ns];
    for e in trace {
        let a = target.cell(e.target).body_range.clone();
        let b = source.cell(e.source).body_range.clone();
        let mutual = matches!(e.kind, InteractionKind::P2PMutual | InteractionKind::M2LMutual);
        let diagonal = same && e.target == e.source;
        for i in a.clone() {
            for j in b.clone() {
                if diagonal && i == j {
                    continue;
                }
                m[i * ns + j] += 1;
                if mutual && !diagonal {
                    m[j * ns + i] += 1;
                }
            }
        }
    }
    m
}

/// Builds a tree and runs the configured strategy end to end. The returned
/// bodies carry potential and force in the input order.
pub fn evaluate(ps: &ParticleSet, tree_opts: TreeOptions, cfg: &EvalConfig) -> Result<(ParticleSet, EvalReport)> {
    cfg.validate()?;
    if ps.is_empty() {
        return Err(FmmError::EmptyParticleSet);
    }
    let start = Instant::now();
    if cfg.strategy == Strategy::Direct {
        let mut out = ps.clone();
        out.clear_accumulators();
        let mut report = evaluate_direct(&mut out);
        report.total = start.elapsed().as_secs_f64();
        return Ok((out, report));
    }
    if cfg.strategy == Strategy::ListFmm && tree_opts.shape != crate::tree::CellShape::Cubic {
        return Err(FmmError::ListFmmRequiresCubic);
    }
    let mut tree = build_tree(ps, tree_opts)?;
    let build = start.elapsed().as_secs_f64();
    let mut report = evaluate_tree(&mut tree, cfg)?;
    report.phases.tree_build = build;
    report.total = start.elapsed().as_secs_f64();
    report.tree = Some(tree.stats());
    Ok((tree.results_in_input_order(), report))
}

/// Upward pass, traversal and downward pass on an existing tree.
pub fn evaluate_tree(tree: &mut Tree, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let start = Instant::now();
    let up_stats = tree.upward_pass(cfg.p)?;
    let upward = start.elapsed().as_secs_f64();
    let mut report = match cfg.strategy {
        Strategy::Treecode => evaluate_treecode(tree, cfg)?,
        Strategy::ListFmm => evaluate_list_fmm(tree, cfg)?,
        Strategy::DualTree => evaluate_dual_tree(tree, cfg)?,
        Strategy::Direct => return Err(FmmError::InvalidConfig("direct summation does not use a tree".into())),
    };
    report.stats.merge(&up_stats);
    report.phases.upward = upward;
    report.total = start.elapsed().as_secs_f64();
    Ok(report)
}

pub(crate) fn require_order(tree: &Tree, cfg: &EvalConfig) -> Result<()> {
    cfg.validate()?;
    if tree.order() != cfg.p {
        return Err(FmmError::OrderMismatch { left: tree.order(), right: cfg.p });
    }
    Ok(())
}

/// Per-task output, merged in a fixed order.
#[derive(Default)]
pub(crate) struct TaskOut {
    pub stats: KernelStats,
    pub trace: Vec<TraceEntry>,
}

impl TaskOut {
    pub fn merge(&mut self, o: TaskOut) {
        self.stats.merge(&o.stats);
        self.trace.extend(o.trace);
    }
}
