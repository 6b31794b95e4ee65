//! Run configuration: a JSON document describing the problem and what to
//! emit. See `configs/` for the shipped examples.

use std::path::{Path, PathBuf};

use hjreach::control::SimulationConfig;
use hjreach::grid::MIN_NODES;
use hjreach::problem::Problem;
use hjreach::{Axis, QueryAxis, SolveOptions, Subsystem, TargetSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: Vec<Subsystem>,
    /// One list of axes per subsystem.
    pub grids: Vec<Vec<Axis>>,
    /// Terms of the target; the full target is their union.
    pub target: Vec<TargetSpec>,
    #[serde(default)]
    pub solve: SolveOptions,
    #[serde(default)]
    pub query: Vec<Slice>,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub error: Option<ErrorStudy>,
    #[serde(default)]
    pub bench: Option<BenchPlan>,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub memory_budget: Option<u64>,
}

/// A named region of the full state to reconstruct on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Slice {
    pub name: String,
    pub axes: Vec<QueryAxis>,
    /// Reconstruct down to this time; defaults to `-horizon`.
    #[serde(default)]
    pub time: Option<f64>,
}

/// Convergence study against the dynamic-programming oracle. Range axes of
/// each slice are resampled at the resolution under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorStudy {
    pub resolutions: Vec<usize>,
    pub reference_nodes: usize,
    pub slices: Vec<Vec<QueryAxis>>,
    /// Reference points closer than this to a slice edge are dropped.
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_samples")]
    pub control_samples: usize,
}

fn default_margin() -> f64 {
    1.0
}

fn default_samples() -> usize {
    41
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchPlan {
    pub full: Vec<usize>,
    pub decoupled: Vec<usize>,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
}

fn default_reps() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    pub dir: PathBuf,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        let hash = cfg.hash();
        Ok((cfg, hash))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn problem(&self) -> Problem {
        Problem { subsystems: self.system.clone(), grids: self.grids.clone(), targets: self.target.clone(), solve: self.solve }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.grids.len() != self.system.len() {
            return bad(format!("grids: {} entries for {} subsystems", self.grids.len(), self.system.len()));
        }
        for (i, (axes, sub)) in self.grids.iter().zip(&self.system).enumerate() {
            let dim = hjreach::Dynamics::state_dim(sub);
            if axes.len() != dim {
                return bad(format!("grids[{i}]: {} axes, subsystem {i} has {dim} states", axes.len()));
            }
            for (d, a) in axes.iter().enumerate() {
                if a.count < MIN_NODES {
                    return bad(format!("grids[{i}][{d}].count: {} is below the minimum of {MIN_NODES}", a.count));
                }
                if !(a.upper > a.lower) {
                    return bad(format!("grids[{i}][{d}]: upper {} must exceed lower {}", a.upper, a.lower));
                }
            }
        }
        self.problem().validate().map_err(|e| CliError::Config(format!("problem: {e}")))?;
        let full_dim: usize = self.grids.iter().map(Vec::len).sum();
        for (q, s) in self.query.iter().enumerate() {
            if s.axes.len() != full_dim {
                return bad(format!("query[{q}] ({}): {} axes for a {full_dim}-dimensional state", s.name, s.axes.len()));
            }
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return bad(format!("query[{q}].name: {:?} must be non-empty [A-Za-z0-9_-]", s.name));
            }
        }
        for (i, a) in self.query.iter().enumerate() {
            if self.query[..i].iter().any(|b| b.name == a.name) {
                return bad(format!("query[{i}].name: duplicate {:?}", a.name));
            }
        }
        if let Some(e) = &self.error {
            if e.slices.iter().any(|s| s.len() != full_dim) {
                return bad(format!("error.slices: every slice needs {full_dim} axes"));
            }
            if e.slices.iter().any(|s| s.iter().filter(|a| matches!(a, QueryAxis::Range(_))).count() != 2) {
                return bad("error.slices: every slice needs exactly two range axes".into());
            }
            if e.reference_nodes < MIN_NODES || e.resolutions.iter().any(|&k| k < MIN_NODES) {
                return bad(format!("error: resolutions must be at least {MIN_NODES}"));
            }
        }
        if self.threads == Some(0) {
            return bad("threads: must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        let p = Problem::quad4d(11);
        RunConfig {
            system: p.subsystems,
            grids: p.grids,
            target: p.targets,
            solve: p.solve,
            query: vec![],
            simulation: None,
            error: None,
            bench: None,
            output: Output::default(),
            threads: None,
            memory_budget: None,
        }
    }

    #[test]
    fn json_round_trip_keeps_hash() {
        let c = sample();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut other = c.clone();
        other.solve.horizon = 1.0;
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn validation_names_fields() {
        let mut c = sample();
        c.grids[1][0].count = 5;
        let e = c.validate().unwrap_err().to_string();
        assert!(e.contains("grids[1][0].count"), "{e}");
        let mut c = sample();
        c.query.push(Slice { name: "a b".into(), axes: vec![QueryAxis::Fixed(0.0); 4], time: None });
        assert!(c.validate().unwrap_err().to_string().contains("query[0].name"));
    }
}
