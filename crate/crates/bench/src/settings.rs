//! Flag and config-file resolution. Flags win over `key=value` lines in the
//! config file, which win over built-in defaults.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use fmm_core::{CellShape, CenterMode, EvalConfig, MacConfig, MacKind, Strategy, TreeOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MacArg {
    Bh,
    Bmax,
    Fmm,
    Rmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Treecode,
    Listfmm,
    Dualtree,
    /// Plain direct summation, the same code as the oracle.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeArg {
    Cubic,
    Rect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterArg {
    Com,
    Geometric,
}

const KEYS: &[&str] = &[
    "n", "ncrit", "p", "theta", "mac", "strategy", "shape", "center", "threads", "mutual", "seed", "grain", "reps",
    "tol", "samples", "targets", "p-range", "n-min", "n-max", "steps-per-decade", "theta-min", "theta-max",
];

/// Parsed `key=value` file. Blank lines and `#` comments are skipped.
#[derive(Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
            let k = k.trim().replace('_', "-");
            if !KEYS.contains(&k.as_str()) {
                bail!("config line {}: unknown key `{k}`", i + 1);
            }
            values.insert(k, v.trim().to_string());
        }
        Ok(Self { values })
    }

    /// The flag value, else the file value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(s) => s.parse().map_err(|_| anyhow!("config: bad value `{s}` for `{key}`")),
            None => Ok(default),
        }
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|s| s.parse().map_err(|_| anyhow!("config: bad value `{s}` for `{key}`")))
            .transpose()
    }

    pub fn pick_enum<T: ValueEnum>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(s) => T::from_str(s, true).map_err(|_| anyhow!("config: bad value `{s}` for `{key}`")),
            None => Ok(default),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Everything one evaluation needs, after resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Settings {
    pub n: usize,
    pub ncrit: usize,
    pub p: usize,
    pub theta: f64,
    pub mac: MacArg,
    pub strategy: StrategyArg,
    pub shape: ShapeArg,
    pub center: CenterArg,
    pub threads: Option<usize>,
    pub mutual: bool,
    pub seed: u64,
    pub grain: usize,
    pub reps: usize,
}

impl Settings {
    pub fn tree_options(&self) -> TreeOptions {
        TreeOptions {
            ncrit: self.ncrit,
            shape: match self.shape {
                ShapeArg::Cubic => CellShape::Cubic,
                ShapeArg::Rect => CellShape::Rectangular,
            },
            center: match self.center {
                CenterArg::Com => CenterMode::CenterOfMass,
                CenterArg::Geometric => CenterMode::Geometric,
            },
            ..Default::default()
        }
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        let kind = match self.mac {
            MacArg::Bh => MacKind::BarnesHut,
            MacArg::Bmax => MacKind::BmaxMac,
            MacArg::Fmm => MacKind::FmmMac,
            MacArg::Rmax => MacKind::RmaxMac,
        };
        let strategy = match self.strategy {
            StrategyArg::Treecode => Strategy::Treecode,
            StrategyArg::Listfmm => Strategy::ListFmm,
            StrategyArg::Dualtree => Strategy::DualTree,
            StrategyArg::Direct => Strategy::Direct,
        };
        let cfg = EvalConfig {
            strategy,
            mac: MacConfig::new(kind, self.theta)?,
            p: self.p,
            mutual: self.mutual,
            task_grain: self.grain,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.strategy == StrategyArg::Listfmm && self.shape == ShapeArg::Rect {
            bail!("--strategy listfmm needs --shape cubic");
        }
        if self.n == 0 || self.ncrit == 0 || self.reps == 0 || self.threads == Some(0) {
            bail!("--n, --ncrit, --reps and --threads must be positive");
        }
        self.eval_config()?;
        Ok(())
    }
}

/// Inclusive `a..b`. Empty ranges are rejected.
pub fn parse_p_range(s: &str) -> Result<Vec<usize>> {
    let (a, b) = s.split_once("..").ok_or_else(|| anyhow!("--p-range: expected a..b, got `{s}`"))?;
    let a: usize = a.trim().parse().with_context(|| format!("--p-range `{s}`"))?;
    let b: usize = b.trim().trim_start_matches('=').parse().with_context(|| format!("--p-range `{s}`"))?;
    if a > b {
        bail!("--p-range `{s}` is empty");
    }
    Ok((a..=b).collect())
}

pub fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| anyhow!("{what}: bad value `{v}`")))
        .collect()
}
