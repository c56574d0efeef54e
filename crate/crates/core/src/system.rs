//! Plant description: speeds, in-domain couplings and boundary matrices of
//!
//! ```text
//! u_t + Λ⁺ u_x = Σ⁺⁺ u + Σ⁺⁻ v
//! v_t − Λ⁻ v_x = Σ⁻⁺ u + Σ⁻⁻ v
//! u(t,0) = Q₀ v(t,0),   v(t,1) = R₁ u(t,1) + U(t)
//! ```
//!
//! with `n` rightward states `u` and `m` leftward states `v`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Linear heterodirectional hyperbolic system with constant coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicSystem {
    /// Rightward speeds λ₁ ≤ … ≤ λₙ.
    pub lambda: Vec<f64>,
    /// Leftward speeds μ₁ < … < μₘ.
    pub mu: Vec<f64>,
    /// Σ⁺⁺, n×n.
    pub sigma_pp: DMatrix<f64>,
    /// Σ⁺⁻, n×m.
    pub sigma_pm: DMatrix<f64>,
    /// Σ⁻⁺, m×n.
    pub sigma_mp: DMatrix<f64>,
    /// Σ⁻⁻, m×m.
    pub sigma_mm: DMatrix<f64>,
    /// Q₀, n×m (left boundary reflection).
    pub q0: DMatrix<f64>,
    /// R₁, m×n (right boundary reflection).
    pub r1: DMatrix<f64>,
}

/// Outcome of [`HyperbolicSystem::validate`]: empty when the system is admissible.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidSystem(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "OK")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

impl HyperbolicSystem {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    pub fn m(&self) -> usize {
        self.mu.len()
    }

    /// The 2+2 benchmark plant: λ = μ = (1, 2), R₁ = 0.
    pub fn benchmark_2x2() -> Self {
        let id = DMatrix::identity(2, 2);
        HyperbolicSystem {
            lambda: vec![1.0, 2.0],
            mu: vec![1.0, 2.0],
            sigma_pp: id.clone(),
            sigma_pm: id,
            sigma_mp: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0]),
            sigma_mm: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            q0: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            r1: DMatrix::zeros(2, 2),
        }
    }

    /// Same speeds and boundary matrices, all four coupling blocks zeroed.
    pub fn without_coupling(&self) -> Self {
        let (n, m) = (self.n(), self.m());
        HyperbolicSystem {
            sigma_pp: DMatrix::zeros(n, n),
            sigma_pm: DMatrix::zeros(n, m),
            sigma_mp: DMatrix::zeros(m, n),
            sigma_mm: DMatrix::zeros(m, m),
            ..self.clone()
        }
    }

    /// Checks every structural assumption and reports all violations at once.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let (n, m) = (self.n(), self.m());
        if n == 0 {
            v.push("n must be at least 1".to_string());
        }
        if m == 0 {
            v.push("m must be at least 1".to_string());
        }
        if self.lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            v.push("lambda entries must be positive and finite".to_string());
        }
        if self.mu.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            v.push("mu entries must be positive and finite".to_string());
        }
        if self.lambda.windows(2).any(|w| w[1] < w[0]) {
            v.push("lambda must be sorted non-decreasing".to_string());
        }
        if self.mu.windows(2).any(|w| !(w[1] > w[0])) {
            v.push("mu must be strictly increasing".to_string());
        }
        let shapes = [
            ("sigma_pp", &self.sigma_pp, (n, n)),
            ("sigma_pm", &self.sigma_pm, (n, m)),
            ("sigma_mp", &self.sigma_mp, (m, n)),
            ("sigma_mm", &self.sigma_mm, (m, m)),
            ("q0", &self.q0, (n, m)),
            ("r1", &self.r1, (m, n)),
        ];
        for (name, mat, (r, c)) in shapes {
            if mat.shape() != (r, c) {
                v.push(format!(
                    "{name} shape: expected {r}x{c}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                ));
            } else if mat.iter().any(|x| !x.is_finite()) {
                v.push(format!("{name} has non-finite entries"));
            }
        }
        ValidationReport { violations: v }
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        self.validate().into_result()
    }

    /// Minimum control time 1/μ₁ + 1/λ₁.
    pub fn min_control_time(&self) -> f64 {
        1.0 / self.mu[0] + 1.0 / self.lambda[0]
    }

    /// Largest transport speed, which bounds the explicit time step.
    pub fn max_speed(&self) -> f64 {
        self.lambda
            .iter()
            .chain(self.mu.iter())
            .fold(0.0_f64, |a, &b| a.max(b))
    }
}

/// Discretisation parameters shared by the kernel solvers and the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Number of simulation cells on [0, 1].
    pub nx: usize,
    /// Courant number of the explicit scheme.
    pub cfl: f64,
    /// Points per axis of the kernel lattice on the triangle.
    pub kernel_nx: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 400,
            cfl: 0.9,
            kernel_nx: 129,
            picard_tol: 1e-10,
            picard_max_iter: 200,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.nx < 2 {
            v.push("nx must be at least 2");
        }
        if self.kernel_nx < 2 {
            v.push("kernel_nx must be at least 2");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            v.push("cfl must lie in (0, 1]");
        }
        if !(self.picard_tol > 0.0) {
            v.push("picard_tol must be positive");
        }
        if self.picard_max_iter == 0 {
            v.push("picard_max_iter must be positive");
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGrid(v.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_is_valid() {
        let sys = HyperbolicSystem::benchmark_2x2();
        assert!(sys.validate().is_ok());
        assert_eq!(sys.min_control_time(), 2.0);
    }

    #[test]
    fn equal_mu_rejected() {
        let mut sys = HyperbolicSystem::benchmark_2x2();
        sys.mu = vec![2.0, 2.0];
        let report = sys.validate();
        assert!(report
            .violations
            .iter()
            .any(|v| v == "mu must be strictly increasing"));
    }

    #[test]
    fn lambda_ties_allowed() {
        let mut sys = HyperbolicSystem::benchmark_2x2();
        sys.lambda = vec![1.5, 1.5];
        assert!(sys.validate().is_ok());
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut sys = HyperbolicSystem::benchmark_2x2();
        sys.mu = vec![1.0, 2.0, 3.0];
        sys.sigma_mm = DMatrix::zeros(3, 3);
        sys.r1 = DMatrix::zeros(3, 2);
        sys.q0 = DMatrix::zeros(2, 3);
        sys.sigma_mp = DMatrix::zeros(3, 2);
        // sigma_pm left as 2x2 while n != m
        let report = sys.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.violations[0].starts_with("sigma_pm shape"));
    }

    #[test]
    fn reports_every_violation() {
        let mut sys = HyperbolicSystem::benchmark_2x2();
        sys.lambda = vec![2.0, -1.0];
        sys.mu = vec![3.0, 1.0];
        let report = sys.validate();
        assert_eq!(report.violations.len(), 3, "{report}");
    }

    #[test]
    fn min_time_examples() {
        let mut sys = HyperbolicSystem::benchmark_2x2();
        sys.lambda = vec![1.0, 5.0];
        sys.mu = vec![1.0, 7.0];
        assert_eq!(sys.min_control_time(), 2.0);

        let single = HyperbolicSystem {
            lambda: vec![2.0],
            mu: vec![4.0],
            sigma_pp: DMatrix::zeros(1, 1),
            sigma_pm: DMatrix::zeros(1, 1),
            sigma_mp: DMatrix::zeros(1, 1),
            sigma_mm: DMatrix::zeros(1, 1),
            q0: DMatrix::zeros(1, 1),
            r1: DMatrix::zeros(1, 1),
        };
        assert!(single.validate().is_ok());
        assert_eq!(single.min_control_time(), 0.75);
    }

    #[test]
    fn min_time_ignores_other_entries() {
        let base = HyperbolicSystem::benchmark_2x2();
        let mut other = base.clone();
        other.lambda[1] = 17.0;
        other.mu[1] = 3.3;
        other.sigma_mm[(0, 1)] = -4.0;
        other.q0[(1, 1)] = 0.7;
        assert_eq!(
            base.min_control_time().to_bits(),
            other.min_control_time().to_bits()
        );
    }

    #[test]
    fn grid_defaults_valid() {
        assert!(GridSpec::default().validate().is_ok());
        let bad = GridSpec {
            cfl: 1.5,
            ..GridSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
