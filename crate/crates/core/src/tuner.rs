//! Search for the (p, θ) pair that reaches a force error target in the least
//! traversal time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::geometry::ParticleSet;
use crate::mac::{MacConfig, MacKind};
use crate::traversal::{direct_reference, evaluate_tree, relative_errors, sample_indices, EvalConfig, Strategy};
use crate::tree::Tree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerOptions {
    /// Oracle sample size.
    pub samples: usize,
    pub seed: u64,
    /// θ grid spacing.
    pub resolution: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub mac: MacKind,
    /// Timed runs per candidate; the median is kept.
    pub reps: usize,
    pub task_grain: usize,
}

impl Default for TunerOptions {
    fn default() -> Self {
        Self {
            samples: 1000,
            seed: 0,
            resolution: 0.01,
            theta_min: 0.05,
            theta_max: 2.0,
            mac: MacKind::RmaxMac,
            reps: 3,
            task_grain: EvalConfig::default().task_grain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub p: usize,
    pub theta: f64,
    /// Median dual tree traversal seconds.
    pub time: f64,
    pub error: f64,
}

/// Holds a tree and its oracle sample across many evaluations.
pub struct Tuner<'a> {
    tree: &'a mut Tree,
    indices: Vec<usize>,
    reference: ParticleSet,
    opts: TunerOptions,
}

impl<'a> Tuner<'a> {
    pub fn new(tree: &'a mut Tree, opts: TunerOptions) -> Result<Self> {
        let range_ok = opts.theta_min > 0.0 && opts.theta_min < opts.theta_max && opts.theta_max <= 2.0;
        if !range_ok {
            return Err(FmmError::InvalidConfig(format!(
                "theta range ({}, {}] must lie in (0, 2]",
                opts.theta_min, opts.theta_max
            )));
        }
        if !(opts.resolution > 0.0) || opts.reps == 0 || opts.samples == 0 {
            return Err(FmmError::InvalidConfig("resolution, reps and samples must be positive".into()));
        }
        let indices = sample_indices(tree.bodies().len(), opts.samples, opts.seed);
        let reference = direct_reference(tree.bodies(), &indices);
        Ok(Self { tree, indices, reference, opts })
    }

    fn config(&self, p: usize, theta: f64) -> EvalConfig {
        EvalConfig {
            strategy: Strategy::DualTree,
            mac: MacConfig { kind: self.opts.mac, theta },
            p,
            task_grain: self.opts.task_grain,
            ..Default::default()
        }
    }

    /// Relative L2 force error on the oracle sample.
    pub fn error_at(&mut self, p: usize, theta: f64) -> Result<f64> {
        let cfg = self.config(p, theta);
        evaluate_tree(self.tree, &cfg)?;
        Ok(relative_errors(self.tree.bodies(), &self.indices, &self.reference).force_error)
    }

    /// Median traversal seconds over the configured repetitions.
    pub fn time_at(&mut self, p: usize, theta: f64) -> Result<f64> {
        let cfg = self.config(p, theta);
        let mut times = Vec::with_capacity(self.opts.reps);
        for _ in 0..self.opts.reps {
            times.push(evaluate_tree(self.tree, &cfg)?.phases.traversal);
        }
        Ok(median(&mut times))
    }

    fn theta_of(&self, k: i64) -> f64 {
        let steps = (1.0 / self.opts.resolution).round();
        k as f64 / steps
    }

    /// Largest θ on the grid whose error stays within `target`, assuming the
    /// error grows with θ.
    pub fn max_theta_for_error(&mut self, p: usize, target: f64) -> Result<f64> {
        if !(target > 0.0) {
            return Err(FmmError::InvalidConfig(format!("target error must be positive, got {target}")));
        }
        let steps = (1.0 / self.opts.resolution).round();
        let mut lo = (self.opts.theta_min * steps - 1e-9).ceil() as i64;
        let mut hi = (self.opts.theta_max * steps + 1e-9).floor() as i64;
        if self.error_at(p, self.theta_of(hi))? <= target {
            return Ok(self.theta_of(hi));
        }
        let mut lo_checked = false;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.error_at(p, self.theta_of(mid))? <= target {
                lo = mid;
                lo_checked = true;
            } else {
                hi = mid;
            }
        }
        if !lo_checked && self.error_at(p, self.theta_of(lo))? > target {
            return Err(FmmError::TargetUnreachable { p });
        }
        Ok(self.theta_of(lo))
    }

    /// The reachable order with the shortest traversal at its largest θ.
    /// Equal times go to the smaller order.
    pub fn select_p_theta(&mut self, target: f64, ps: &[usize]) -> Result<Choice> {
        let row = self.row(target, ps)?;
        row.best.map(|i| row.cells[i].unwrap()).ok_or(FmmError::AllCandidatesUnreachable)
    }

    /// One table row: every candidate order, reachable or not.
    pub fn row(&mut self, target: f64, ps: &[usize]) -> Result<TuneRow> {
        if ps.is_empty() {
            return Err(FmmError::InvalidConfig("no candidate orders".into()));
        }
        let mut ps = ps.to_vec();
        ps.sort_unstable();
        ps.dedup();
        let mut cells = Vec::with_capacity(ps.len());
        for &p in &ps {
            let cell = match self.max_theta_for_error(p, target) {
                Ok(theta) => {
                    let error = self.error_at(p, theta)?;
                    Some(Choice { p, theta, time: self.time_at(p, theta)?, error })
                }
                Err(FmmError::TargetUnreachable { .. }) => None,
                Err(e) => return Err(e),
            };
            cells.push(cell);
        }
        let mut best: Option<usize> = None;
        for (i, c) in cells.iter().enumerate() {
            if let Some(c) = c {
                if best.map_or(true, |b| c.time < cells[b].unwrap().time) {
                    best = Some(i);
                }
            }
        }
        Ok(TuneRow { target, ps, cells, best })
    }

    pub fn table(&mut self, targets: &[f64], ps: &[usize]) -> Result<Vec<TuneRow>> {
        targets.iter().map(|&t| self.row(t, ps)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub target: f64,
    pub ps: Vec<usize>,
    /// `None` where the target is out of reach at that order.
    pub cells: Vec<Option<Choice>>,
    /// Index into `cells` of the fastest reachable candidate.
    pub best: Option<usize>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rows are targets and columns are orders. A cell reads `theta;seconds`, the
/// fastest cell of a row is marked `*` and unreachable cells are `-`.
pub fn write_table_csv<W: Write>(w: W, rows: &[TuneRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if let Some(first) = rows.first() {
        let mut header = vec!["target".to_string()];
        header.extend(first.ps.iter().map(|p| format!("p={p}")));
        out.write_record(&header)?;
    }
    for row in rows {
        let mut rec = vec![format!("{:e}", row.target)];
        for (i, c) in row.cells.iter().enumerate() {
            rec.push(match c {
                Some(c) => {
                    let mark = if row.best == Some(i) { "*" } else { "" };
                    format!("{:.2};{:.4}{mark}", c.theta, c.time)
                }
                None => "-".into(),
            });
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// [`Tuner::max_theta_for_error`] over `theta_range` with default options.
pub fn max_theta_for_error(tree: &mut Tree, p: usize, target: f64, theta_range: (f64, f64)) -> Result<f64> {
    let opts = TunerOptions { theta_min: theta_range.0, theta_max: theta_range.1, ..Default::default() };
    Tuner::new(tree, opts)?.max_theta_for_error(p, target)
}

/// [`Tuner::select_p_theta`] with default options.
pub fn select_p_theta(tree: &mut Tree, target: f64, ps: &[usize]) -> Result<Choice> {
    Tuner::new(tree, TunerOptions::default())?.select_p_theta(target, ps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_distribution, Distribution};
    use crate::tree::{build_tree, TreeOptions};

    fn tree(n: usize, seed: u64) -> Tree {
        let ps = generate_distribution(Distribution::Cube, n, seed).unwrap();
        build_tree(&ps, TreeOptions::default()).unwrap()
    }

    fn quick() -> TunerOptions {
        TunerOptions { samples: 300, reps: 1, ..Default::default() }
    }

    #[test]
    fn loose_target_returns_range_end() {
        let mut t = tree(2000, 1);
        assert_eq!(max_theta_for_error(&mut t, 3, 1.0, (0.1, 1.5)).unwrap(), 1.5);
    }

    #[test]
    fn tighter_target_gives_smaller_theta() {
        let mut t = tree(4000, 2);
        let mut tuner = Tuner::new(&mut t, quick()).unwrap();
        let loose = tuner.max_theta_for_error(4, 1e-3).unwrap();
        let tight = tuner.max_theta_for_error(4, 1e-4).unwrap();
        assert!(tight < loose, "{tight} vs {loose}");
        assert!(tuner.error_at(4, loose).unwrap() <= 1e-3);
        assert!(tuner.error_at(4, loose + 0.01).unwrap() > 1e-3);
        assert!(((loose * 100.0).round() - loose * 100.0).abs() < 1e-9);
    }

    #[test]
    fn unreachable_target() {
        let mut t = tree(5000, 3);
        let mut tuner = Tuner::new(&mut t, TunerOptions { theta_min: 0.9, ..quick() }).unwrap();
        assert!(matches!(tuner.max_theta_for_error(2, 1e-12), Err(FmmError::TargetUnreachable { p: 2 })));
        assert!(matches!(tuner.select_p_theta(1e-12, &[2]), Err(FmmError::AllCandidatesUnreachable)));
        assert!(tuner.max_theta_for_error(2, 0.0).is_err());
        assert!(tuner.select_p_theta(1e-3, &[]).is_err());
    }

    #[test]
    fn invalid_ranges() {
        let mut t = tree(100, 4);
        for (lo, hi) in [(0.0, 1.0), (0.5, 2.5), (1.0, 0.5)] {
            assert!(Tuner::new(&mut t, TunerOptions { theta_min: lo, theta_max: hi, ..quick() }).is_err());
        }
    }

    #[test]
    fn single_candidate_is_returned() {
        let mut t = tree(2000, 5);
        let mut tuner = Tuner::new(&mut t, quick()).unwrap();
        let c = tuner.select_p_theta(1e-2, &[4]).unwrap();
        assert_eq!(c.p, 4);
        assert_eq!(c.theta, tuner.max_theta_for_error(4, 1e-2).unwrap());
        assert!(c.error <= 1e-2);
    }

    #[test]
    fn table_csv_shape() {
        let rows = vec![TuneRow {
            target: 1e-3,
            ps: vec![3, 4],
            cells: vec![None, Some(Choice { p: 4, theta: 0.78, time: 0.027, error: 9e-4 })],
            best: Some(1),
        }];
        let mut buf = Vec::new();
        write_table_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "target,p=3,p=4\n1e-3,-,0.78;0.0270*\n");
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
