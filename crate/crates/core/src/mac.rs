//! Multipole acceptance criteria over cell pairs.

use serde::{Deserialize, Serialize};

use crate::error::{FmmError, Result};
use crate::tree::{distance, Cell};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacKind {
    /// `2 rmax_s / R < theta` for a point target; between cells the larger of
    /// the two radii is used.
    BarnesHut,
    /// `bmax_s / R < theta` for a point target; between cells the larger of
    /// the two radii is used.
    BmaxMac,
    /// `(bmax_t + bmax_s) / R < theta`.
    FmmMac,
    /// `(rmax_t + rmax_s) / R < theta`: radii reach the far corner of each
    /// cell box from its expansion center.
    RmaxMac,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacConfig {
    pub kind: MacKind,
    pub theta: f64,
}

impl MacConfig {
    pub fn new(kind: MacKind, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 10.0) {
            return Err(FmmError::InvalidConfig(format!("theta must lie in (0, 10), got {theta}")));
        }
        Ok(Self { kind, theta })
    }

    fn ratio_from(&self, r: f64, bmax_t: f64, rmax_t: f64, bmax_s: f64, rmax_s: f64) -> f64 {
        match self.kind {
            MacKind::BarnesHut => 2.0 * rmax_t.max(rmax_s) / r,
            MacKind::BmaxMac => bmax_t.max(bmax_s) / r,
            MacKind::FmmMac => (bmax_t + bmax_s) / r,
            MacKind::RmaxMac => (rmax_t + rmax_s) / r,
        }
    }
}

/// Whether `source` may be approximated by its expansion as seen from `target`.
pub fn accept(cfg: &MacConfig, target: &Cell, source: &Cell) -> bool {
    let r = distance(target.center, source.center);
    if r == 0.0 {
        return false;
    }
    cfg.ratio_from(r, target.bmax, target.rmax, source.bmax, source.rmax) < cfg.theta
}

/// Same test for a point target at `x`.
pub fn accept_point(cfg: &MacConfig, x: [f64; 3], source: &Cell) -> bool {
    let r = distance(x, source.center);
    r > 0.0 && cfg.ratio_from(r, 0.0, 0.0, source.bmax, source.rmax) < cfg.theta
}

/// Leading-order relative error scale of an accepted interaction. Infinite at `R = 0`.
pub fn error_bound(cfg: &MacConfig, p: usize, target: &Cell, source: &Cell) -> f64 {
    let r = distance(target.center, source.center);
    if r == 0.0 {
        return f64::INFINITY;
    }
    let ratio = match cfg.kind {
        MacKind::BarnesHut => source.bmax / r,
        MacKind::BmaxMac | MacKind::FmmMac => (target.bmax + source.bmax) / r,
        MacKind::RmaxMac => (target.rmax + source.rmax) / r,
    };
    ratio.powi(p as i32)
}
