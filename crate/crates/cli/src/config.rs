//! TOML run configuration.
//!
//! ```toml
//! [system]
//! lambda = [1.0, 2.0]
//! mu = [1.0, 2.0]
//! sigma_pp = [[1.0, 0.0], [0.0, 1.0]]
//! sigma_pm = [[1.0, 0.0], [0.0, 1.0]]
//! sigma_mp = [[1.0, 1.0], [1.0, 0.0]]
//! sigma_mm = [[0.0, 1.0], [1.0, 0.0]]
//! q0 = [[1.0, 0.0], [0.0, 0.0]]
//! r1 = [[0.0, 0.0], [0.0, 0.0]]
//!
//! [grid]            # optional, defaults shown
//! nx = 400
//! cfl = 0.9
//! kernel_nx = 129
//! picard_tol = 1e-10
//! picard_max_iter = 200
//!
//! [controller]      # optional
//! mode = "full_state"   # open_loop | full_state | output_feedback
//! observer = true       # also synthesise observer kernels and gains
//! ic = "sine"           # "sine", "zero" or { u = [..], v = [..] }
//! # delta, l: Lyapunov weights; chosen automatically when absent
//!
//! [run]             # optional
//! t_end = 3.0
//! snapshot_times = [0.0, 1.0, 2.0, 3.0]
//! # out = "results"
//! ```

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use hypstab_core::{GridSpec, HyperbolicSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub controller: ControllerBlock,
    #[serde(default)]
    pub run: RunBlock,
}

/// Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma_pp: Vec<Vec<f64>>,
    pub sigma_pm: Vec<Vec<f64>>,
    pub sigma_mp: Vec<Vec<f64>>,
    pub sigma_mm: Vec<Vec<f64>>,
    pub q0: Vec<Vec<f64>>,
    pub r1: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub nx: usize,
    pub cfl: f64,
    pub kernel_nx: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        let g = GridSpec::default();
        GridBlock {
            nx: g.nx,
            cfl: g.cfl,
            kernel_nx: g.kernel_nx,
            picard_tol: g.picard_tol,
            picard_max_iter: g.picard_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoop,
    FullState,
    OutputFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// sin(πx) in every component
    Sine,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    Preset(Preset),
    /// Per-component amplitudes of sin(πx).
    Amplitudes { u: Vec<f64>, v: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerBlock {
    pub mode: Mode,
    pub observer: bool,
    pub ic: InitialCondition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

impl Default for ControllerBlock {
    fn default() -> Self {
        ControllerBlock {
            mode: Mode::FullState,
            observer: true,
            ic: InitialCondition::Preset(Preset::Sine),
            delta: None,
            l: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunBlock {
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            t_end: 3.0,
            snapshot_times: Vec::new(),
            out: None,
        }
    }
}

/// Configuration problem, anchored to a line of the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of `key = ...` inside `[section]`.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (k, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == section && key.is_empty() {
                return Some(k + 1);
            }
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    None
}

fn matrix(name: &str, rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Result<DMatrix<f64>, String> {
    if rows.len() != n_rows || rows.iter().any(|r| r.len() != n_cols) {
        return Err(format!(
            "{name} shape: expected {n_rows}x{n_cols}, got {} rows of lengths {:?}",
            rows.len(),
            rows.iter().map(Vec::len).collect::<Vec<_>>()
        ));
    }
    Ok(DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

/// Validated objects built from a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub system: HyperbolicSystem,
    pub grid: GridSpec,
}

impl RunConfig {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError {
            line: e.span().map(|s| source[..s.start].matches('\n').count() + 1),
            message: e.message().trim().to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serialisable")
    }

    /// Builds and validates the system and grid; `source` is used to anchor
    /// messages to lines.
    pub fn resolve(&self, source: &str) -> Result<Resolved, ConfigError> {
        let s = &self.system;
        let (n, m) = (s.lambda.len(), s.mu.len());
        let at = |section: &str, key: &str, message: String| ConfigError {
            line: locate(source, section, key),
            message,
        };
        let mat = |name: &str, rows: &[Vec<f64>], r, c| {
            matrix(name, rows, r, c).map_err(|msg| at("system", name, msg))
        };
        let system = HyperbolicSystem {
            lambda: s.lambda.clone(),
            mu: s.mu.clone(),
            sigma_pp: mat("sigma_pp", &s.sigma_pp, n, n)?,
            sigma_pm: mat("sigma_pm", &s.sigma_pm, n, m)?,
            sigma_mp: mat("sigma_mp", &s.sigma_mp, m, n)?,
            sigma_mm: mat("sigma_mm", &s.sigma_mm, m, m)?,
            q0: mat("q0", &s.q0, n, m)?,
            r1: mat("r1", &s.r1, m, n)?,
        };
        let report = system.validate();
        if let Some(first) = report.violations.first() {
            let key = match first.split_whitespace().next().unwrap_or("") {
                "n" => "lambda",
                "m" => "mu",
                k => k,
            };
            return Err(at("system", key, report.violations.join("; ")));
        }
        let g = &self.grid;
        let grid = GridSpec {
            nx: g.nx,
            cfl: g.cfl,
            kernel_nx: g.kernel_nx,
            picard_tol: g.picard_tol,
            picard_max_iter: g.picard_max_iter,
        };
        if let Err(e) = grid.validate() {
            let msg = e.to_string();
            let key = msg
                .trim_start_matches("invalid grid: ")
                .split_whitespace()
                .next()
                .unwrap_or("")
                .to_string();
            return Err(at("grid", &key, msg));
        }
        let c = &self.controller;
        for (key, v) in [("delta", c.delta), ("l", c.l)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(at("controller", key, format!("{key} must be positive")));
                }
            }
        }
        if let InitialCondition::Amplitudes { u, v } = &c.ic {
            if u.len() != n || v.len() != m {
                return Err(at(
                    "controller",
                    "ic",
                    format!("ic needs {n} u and {m} v amplitudes, got {} and {}", u.len(), v.len()),
                ));
            }
        }
        let r = &self.run;
        if !(r.t_end >= 0.0 && r.t_end.is_finite()) {
            return Err(at("run", "t_end", "t_end must be finite and non-negative".into()));
        }
        if r.snapshot_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(at("run", "snapshot_times", "snapshot times must be finite and non-negative".into()));
        }
        Ok(Resolved { system, grid })
    }

    /// The benchmark plant with default settings.
    #[cfg(test)]
    pub fn benchmark() -> Self {
        let sys = HyperbolicSystem::benchmark_2x2();
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect()
        };
        RunConfig {
            system: SystemBlock {
                lambda: sys.lambda.clone(),
                mu: sys.mu.clone(),
                sigma_pp: rows(&sys.sigma_pp),
                sigma_pm: rows(&sys.sigma_pm),
                sigma_mp: rows(&sys.sigma_mp),
                sigma_mm: rows(&sys.sigma_mm),
                q0: rows(&sys.q0),
                r1: rows(&sys.r1),
            },
            grid: GridBlock::default(),
            controller: ControllerBlock::default(),
            run: RunBlock::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_round_trips() {
        let cfg = RunConfig::benchmark();
        let text = cfg.to_toml();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        let r = back.resolve(&text).unwrap();
        assert_eq!(r.system, HyperbolicSystem::benchmark_2x2());
        assert_eq!(r.grid, GridSpec::default());
    }

    #[test]
    fn amplitudes_round_trip() {
        let mut cfg = RunConfig::benchmark();
        cfg.controller.ic = InitialCondition::Amplitudes {
            u: vec![1.0, 0.5],
            v: vec![0.0, -2.0],
        };
        cfg.controller.delta = Some(8.0);
        cfg.run.snapshot_times = vec![0.0, 0.1];
        let text = cfg.to_toml();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn validation_message_points_at_line() {
        let mut text = RunConfig::benchmark().to_toml();
        text = text.replace("mu = [1.0, 2.0]", "mu = [2.0, 2.0]");
        let cfg = RunConfig::parse(&text).unwrap();
        let err = cfg.resolve(&text).unwrap_err();
        assert!(err.message.contains("mu must be strictly increasing"));
        let line = err.line.unwrap();
        assert!(text.lines().nth(line - 1).unwrap().starts_with("mu ="));
    }

    #[test]
    fn syntax_error_has_line() {
        let text = "[system]\nlambda = [1.0,\n";
        let err = RunConfig::parse(text).unwrap_err();
        assert!(err.line.is_some());
        let unknown = "[system]\nlambda=[1.0]\nmu=[1.0]\nsigma_pp=[[0.0]]\nsigma_pm=[[0.0]]\nsigma_mp=[[0.0]]\nsigma_mm=[[0.0]]\nq0=[[0.0]]\nr1=[[0.0]]\nbogus=1\n";
        let err = RunConfig::parse(unknown).unwrap_err();
        assert_eq!(err.line, Some(10), "{err}");
    }

    #[test]
    fn ragged_matrix_rejected() {
        let mut cfg = RunConfig::benchmark();
        cfg.system.q0 = vec![vec![1.0, 0.0], vec![0.0]];
        let text = cfg.to_toml();
        let err = cfg.resolve(&text).unwrap_err();
        assert!(err.message.starts_with("q0 shape"), "{err}");
    }
}
