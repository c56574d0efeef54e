//! Boundary observer kernels M (n×m), N (m×m), the observer-side coupling
//! Ω̄ and the output-injection gains P⁺, P⁻.
//!
//! The error ũ = u − û, ṽ = v − v̂ is mapped to a finite-time stable target by
//!
//! ```text
//! ũ(x) = α̃(x) − ∫₀ˣ M(x,ξ) β̃(ξ) dξ,     ṽ(x) = β̃(x) − ∫₀ˣ N(x,ξ) β̃(ξ) dξ
//! ```
//!
//! which requires
//!
//! ```text
//! λᵢ ∂ₓM_ij − μⱼ ∂ξ M_ij = Σₖ σ⁺⁺_ik M_kj + Σₚ σ⁺⁻_ip N_pj − Σₚ M_ip ω̄_pj(ξ)
//! μᵢ ∂ₓN_ij + μⱼ ∂ξ N_ij = Σₚ N_ip ω̄_pj(ξ) − Σₖ σ⁻⁺_ik M_kj − Σₖ σ⁻⁻_ik N_kj
//! M_ij(x,x) = −σ⁺⁻_ij/(λᵢ+μⱼ),   N_ij(x,x) = −σ⁻⁻_ij/(μⱼ−μᵢ) for i < j,
//! N(1,ξ) = R₁ M(1,ξ),   ω̄_ij = (μⱼ−μᵢ) N_ij(x,x) + σ⁻⁻_ij for i ≥ j,
//! P⁺(x) = −M(x,0) Λ⁻,   P⁻(x) = −N(x,0) Λ⁻.
//! ```
//!
//! Ω̄ is lower triangular: N then has data on exactly one boundary along
//! every characteristic. After the reflection (χ, y) = (1 − ξ, 1 − x) and a
//! transposition of indices the system is a control-kernel problem for a dual
//! plant, so the control solver is reused unchanged.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{interp_1d, SectorMap, TriField, TriangleGrid};
use crate::kernels::{solve_control_kernels, KernelSolution};
use crate::system::{GridSpec, HyperbolicSystem};
use crate::volterra::{explicit_product, solve_volterra, FieldMatrix, UnknownSide};

#[derive(Debug, Clone)]
pub struct ObserverSolution {
    dual: KernelSolution,
    /// `m_kernel[i][j]`, i < n, j < m.
    pub m_kernel: Vec<Vec<TriField>>,
    /// `n_kernel[i][j]`, i, j < m.
    pub n_kernel: Vec<Vec<TriField>>,
    /// `omega_bar[i][j][a]` = ω̄_ij(x_a); zero for i < j.
    pub omega_bar: Vec<Vec<Vec<f64>>>,
    /// `p_plus[i][j][a]` = p⁺_ij(x_a), n×m.
    pub p_plus: Vec<Vec<Vec<f64>>>,
    /// `p_minus[i][j][a]` = p⁻_ij(x_a), m×m.
    pub p_minus: Vec<Vec<Vec<f64>>>,
}

/// Plant whose control kernels are the reflected, transposed observer kernels.
pub fn dual_system(system: &HyperbolicSystem) -> HyperbolicSystem {
    let (n, m) = (system.n(), system.m());
    let q = DMatrix::from_fn(n, m, |k, j| system.mu[j] * system.r1[(j, k)] / system.lambda[k]);
    HyperbolicSystem {
        lambda: system.lambda.clone(),
        mu: system.mu.clone(),
        sigma_pp: system.sigma_pp.transpose(),
        sigma_pm: system.sigma_mp.transpose(),
        sigma_mp: system.sigma_pm.transpose(),
        sigma_mm: system.sigma_mm.transpose(),
        q0: q,
        r1: DMatrix::zeros(m, n),
    }
}

/// f̄(a, b) = f(N−1−b, N−1−a): the map (x, ξ) ↦ (1 − ξ, 1 − x) on lattice
/// nodes. It is an involution.
pub fn reflect(f: &TriField) -> TriField {
    let g = f.grid();
    let last = g.points() - 1;
    let data = g.nodes().map(|(a, b)| f.get(last - b, last - a)).collect();
    TriField::from_vec(g, data).expect("same grid")
}

/// Gains P⁺ = −M(x,0)Λ⁻ and P⁻ = −N(x,0)Λ⁻ sampled at the lattice abscissae.
#[allow(clippy::type_complexity)]
pub fn gains_from_kernels(
    system: &HyperbolicSystem,
    m_kernel: &[Vec<TriField>],
    n_kernel: &[Vec<TriField>],
) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
    let gain = |rows: &[Vec<TriField>]| -> Vec<Vec<Vec<f64>>> {
        rows.iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(j, f)| f.bottom_edge().iter().map(|v| -system.mu[j] * v).collect())
                    .collect()
            })
            .collect()
    };
    (gain(m_kernel), gain(n_kernel))
}

impl ObserverSolution {
    fn from_dual(system: &HyperbolicSystem, dual: KernelSolution) -> Self {
        let (n, m) = (system.n(), system.m());
        let last = dual.grid().points() - 1;
        let m_kernel: Vec<Vec<TriField>> = (0..n)
            .map(|i| (0..m).map(|j| reflect(&dual.k[j][i])).collect())
            .collect();
        let n_kernel: Vec<Vec<TriField>> = (0..m)
            .map(|i| (0..m).map(|j| reflect(&dual.l[j][i])).collect())
            .collect();
        let omega_bar = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| (0..=last).map(|a| dual.omega[j][i][last - a]).collect())
                    .collect()
            })
            .collect();
        let (p_plus, p_minus) = gains_from_kernels(system, &m_kernel, &n_kernel);
        ObserverSolution {
            dual,
            m_kernel,
            n_kernel,
            omega_bar,
            p_plus,
            p_minus,
        }
    }

    /// Rebuilds a solution from M and N given in original coordinates.
    pub fn from_fields(
        system: &HyperbolicSystem,
        m_kernel: Vec<Vec<TriField>>,
        n_kernel: Vec<Vec<TriField>>,
    ) -> Result<Self> {
        let (n, m) = (system.n(), system.m());
        if m_kernel.len() != n || m_kernel.iter().any(|r| r.len() != m) {
            return Err(Error::GridMismatch("M kernel shape".into()));
        }
        if n_kernel.len() != m || n_kernel.iter().any(|r| r.len() != m) {
            return Err(Error::GridMismatch("N kernel shape".into()));
        }
        let k: Vec<Vec<TriField>> = (0..m)
            .map(|j| (0..n).map(|i| reflect(&m_kernel[i][j])).collect())
            .collect();
        let l: Vec<Vec<TriField>> = (0..m)
            .map(|j| (0..m).map(|i| reflect(&n_kernel[i][j])).collect())
            .collect();
        let dual = KernelSolution::from_fields(&dual_system(system), k, l)?;
        Ok(Self::from_dual(system, dual))
    }

    pub fn grid(&self) -> TriangleGrid {
        self.dual.grid()
    }

    /// Solution of the dual control problem, in reflected coordinates.
    pub fn dual(&self) -> &KernelSolution {
        &self.dual
    }

    /// Discontinuity sectors, in reflected coordinates.
    pub fn dual_sectors(&self) -> &SectorMap {
        self.dual.sectors()
    }

    pub fn histories(&self) -> &[Vec<f64>] {
        &self.dual.histories
    }

    pub fn iterations_used(&self) -> usize {
        self.dual.iterations_used
    }

    pub fn final_increment(&self) -> f64 {
        self.dual.final_increment
    }

    pub fn eval_m(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        self.dual.eval_k(j, i, 1.0 - xi, 1.0 - x)
    }

    pub fn eval_n(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        self.dual.eval_l(j, i, 1.0 - xi, 1.0 - x)
    }

    pub fn eval_p_plus(&self, i: usize, j: usize, x: f64) -> f64 {
        interp_1d(self.grid(), &self.p_plus[i][j], x)
    }

    pub fn eval_p_minus(&self, i: usize, j: usize, x: f64) -> f64 {
        interp_1d(self.grid(), &self.p_minus[i][j], x)
    }

    pub fn eval_omega_bar(&self, i: usize, j: usize, x: f64) -> f64 {
        interp_1d(self.grid(), &self.omega_bar[i][j], x)
    }
}

pub fn solve_observer_kernels(system: &HyperbolicSystem, spec: &GridSpec) -> Result<ObserverSolution> {
    system.ensure_valid()?;
    let dual = solve_control_kernels(&dual_system(system), spec).map_err(|e| match e {
        Error::NonConvergence {
            row,
            tol,
            last,
            history,
            ..
        } => Error::NonConvergence {
            stage: "observer kernels",
            row,
            tol,
            last,
            history,
        },
        other => other,
    })?;
    Ok(ObserverSolution::from_dual(system, dual))
}

/// Couplings of the observer-error target system.
#[derive(Debug, Clone)]
pub struct ObserverCouplings {
    /// D⁺, n×n.
    pub d_plus: FieldMatrix,
    /// D⁻, m×n.
    pub d_minus: FieldMatrix,
    pub history: Vec<f64>,
}

/// D⁻ = N Σ⁻⁺ + ∫_ξ^x N(x,s) D⁻(s,ξ) ds, then D⁺ = M Σ⁻⁺ + ∫_ξ^x M(x,s) D⁻(s,ξ) ds.
pub fn target_couplings_observer(
    obs: &ObserverSolution,
    system: &HyperbolicSystem,
    spec: &GridSpec,
) -> Result<ObserverCouplings> {
    let mk = FieldMatrix::from_nested(&obs.m_kernel)?;
    let nk = FieldMatrix::from_nested(&obs.n_kernel)?;
    let forcing = nk.times_const(&system.sigma_mp);
    let sol = solve_volterra(
        &forcing,
        &nk,
        UnknownSide::Right,
        spec.picard_tol,
        spec.picard_max_iter,
        "observer coupling D-",
    )?;
    let base = mk.times_const(&system.sigma_mp);
    let d_plus = explicit_product(&base, &mk, &sol.value);
    Ok(ObserverCouplings {
        d_plus,
        d_minus: sol.value,
        history: sol.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(nx: usize) -> GridSpec {
        GridSpec {
            kernel_nx: nx,
            ..GridSpec::default()
        }
    }

    #[test]
    fn reflection_is_involution() {
        let g = TriangleGrid::new(9).unwrap();
        let f = TriField::from_fn(g, |x, xi| x * 3.0 + xi * xi);
        let r = reflect(&f);
        assert_eq!(reflect(&r), f);
        // (x, ξ) = (0.75, 0.25) ↦ (0.75, 0.25); (1, 0) ↦ (1, 0); (0.5, 0) ↦ (1, 0.5)
        assert_eq!(r.get(8, 4), f.get(4, 0));
    }

    #[test]
    fn zero_data_gives_zero_observer() {
        let mut sys = HyperbolicSystem::benchmark_2x2();
        sys.sigma_pm.fill(0.0);
        sys.sigma_mm.fill(0.0);
        sys.r1.fill(0.0);
        let obs = solve_observer_kernels(&sys, &spec(17)).unwrap();
        for f in obs.m_kernel.iter().chain(&obs.n_kernel).flatten() {
            assert_eq!(f.max_abs(), 0.0);
        }
        for g in obs.p_plus.iter().chain(&obs.p_minus).chain(&obs.omega_bar).flatten() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn benchmark_diagonals_and_structure() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let obs = solve_observer_kernels(&sys, &spec(33)).unwrap();
        for v in obs.m_kernel[0][0].diagonal() {
            assert!((v + 0.5).abs() < 1e-12);
        }
        // N_12(x,x) = −σ⁻⁻_12/(μ₂ − μ₁) = −1
        for v in obs.n_kernel[0][1].diagonal() {
            assert!((v + 1.0).abs() < 1e-12);
        }
        // Ω̄ lower triangular, constant diagonal
        assert!(obs.omega_bar[0][1].iter().all(|&w| w == 0.0));
        assert!(obs.omega_bar[1][1].iter().all(|&w| w == 0.0));
        // R₁ = 0 ⇒ N(1, ξ) = 0; the corner (1, 1) carries diagonal data
        for row in &obs.n_kernel {
            for f in row {
                let edge = f.right_edge();
                assert!(edge[..edge.len() - 1].iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn gains_recomputed_bit_exactly() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let obs = solve_observer_kernels(&sys, &spec(17)).unwrap();
        let (pp, pm) = gains_from_kernels(&sys, &obs.m_kernel, &obs.n_kernel);
        assert_eq!(pp, obs.p_plus);
        assert_eq!(pm, obs.p_minus);
        let rebuilt =
            ObserverSolution::from_fields(&sys, obs.m_kernel.clone(), obs.n_kernel.clone()).unwrap();
        assert_eq!(rebuilt.p_plus, obs.p_plus);
        assert_eq!(rebuilt.omega_bar, obs.omega_bar);
    }

    #[test]
    fn reflection_reproduces_dual_nodes() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let obs = solve_observer_kernels(&sys, &spec(17)).unwrap();
        let g = obs.grid();
        let last = g.points() - 1;
        for (a, b) in g.nodes() {
            assert_eq!(
                obs.m_kernel[1][0].get(a, b),
                obs.dual().k[0][1].get(last - b, last - a)
            );
        }
    }

    #[test]
    fn zero_sigma_mp_gives_zero_d() {
        let mut sys = HyperbolicSystem::benchmark_2x2();
        sys.sigma_mp.fill(0.0);
        let s = spec(17);
        let obs = solve_observer_kernels(&sys, &s).unwrap();
        let d = target_couplings_observer(&obs, &sys, &s).unwrap();
        assert_eq!(d.d_plus.max_abs(), 0.0);
        assert_eq!(d.d_minus.max_abs(), 0.0);
    }
}
