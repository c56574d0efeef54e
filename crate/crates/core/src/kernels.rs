//! Control kernels K (m×n), L (m×m) and the coupling matrix Ω(x).
//!
//! The kernel equations are
//!
//! ```text
//! μᵢ ∂ₓK_ij − λⱼ ∂ξ K_ij = Σₖ σ⁺⁺_kj K_ik + Σₚ σ⁻⁺_pj L_ip − Σ_{p≥i} ω_ip(x) K_pj
//! μᵢ ∂ₓL_ij + μⱼ ∂ξ L_ij = Σₖ σ⁻⁻_kj L_ik + Σₚ σ⁺⁻_pj K_ip − Σ_{p≥i} ω_ip(x) L_pj
//! ```
//!
//! with K_ij(x,x) = −σ⁻⁺_ij/(μᵢ+λⱼ), L_ij(x,x) = −σ⁻⁻_ij/(μᵢ−μⱼ) for j < i,
//! μⱼ L_ij(x,0) = Σₖ λₖ K_ik(x,0) q_kj, and
//! ω_ij = (μᵢ−μⱼ) L_ij(x,x) + σ⁻⁻_ij above the diagonal.
//!
//! Integrating along characteristics turns them into fixed-point equations.
//! Row i only involves rows p ≥ i, so rows are solved from the last one
//! upwards, each by successive approximations started from zero.

use rayon::prelude::*;

use crate::characteristics::{k_path, l_path};
use crate::error::{Error, Result};
use crate::grid::{discontinuity_rays, SectorMap, TriField, TriangleGrid};
use crate::system::{GridSpec, HyperbolicSystem};

/// One solved row i: K_i· (n fields), L_i· (m fields) and the Picard history.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub k: Vec<TriField>,
    pub l: Vec<TriField>,
    /// Sup-norm increment of every sweep, starting with the first iterate.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KernelSolution {
    sectors: SectorMap,
    /// `k[i][j]`, i < m, j < n.
    pub k: Vec<Vec<TriField>>,
    /// `l[i][j]`, i, j < m.
    pub l: Vec<Vec<TriField>>,
    /// `omega[i][j][a]` = ω_ij(x_a); zero for i > j.
    pub omega: Vec<Vec<Vec<f64>>>,
    /// Increment history of each row.
    pub histories: Vec<Vec<f64>>,
    /// Largest number of sweeps over all rows.
    pub iterations_used: usize,
    /// Largest final increment over all rows.
    pub final_increment: f64,
}

impl KernelSolution {
    pub fn grid(&self) -> TriangleGrid {
        self.sectors.grid()
    }

    pub fn sectors(&self) -> &SectorMap {
        &self.sectors
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn n(&self) -> usize {
        self.k.first().map_or(0, Vec::len)
    }

    /// K_ij at an arbitrary point of T.
    pub fn eval_k(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        let s = self.sectors.sector(x, xi);
        self.sectors.interp(&self.k[i][j], x, xi, s)
    }

    pub fn eval_l(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        let s = self.sectors.sector(x, xi);
        self.sectors.interp(&self.l[i][j], x, xi, s)
    }

    pub fn eval_omega(&self, i: usize, j: usize, x: f64) -> f64 {
        crate::grid::interp_1d(self.grid(), &self.omega[i][j], x)
    }

    /// Assembles a solution from externally supplied fields (e.g. a dump),
    /// recomputing Ω from L.
    pub fn from_fields(
        system: &HyperbolicSystem,
        k: Vec<Vec<TriField>>,
        l: Vec<Vec<TriField>>,
    ) -> Result<Self> {
        let (n, m) = (system.n(), system.m());
        if k.len() != m || k.iter().any(|r| r.len() != n) || l.len() != m
            || l.iter().any(|r| r.len() != m)
        {
            return Err(Error::GridMismatch("kernel array shape".into()));
        }
        let grid = l[0][0].grid();
        if k.iter().chain(&l).flatten().any(|f| f.grid() != grid) {
            return Err(Error::GridMismatch("kernels on different grids".into()));
        }
        let omega = omega_from_l(&l, system);
        Ok(KernelSolution {
            sectors: SectorMap::new(grid, discontinuity_rays(&system.mu)),
            k,
            l,
            omega,
            histories: vec![Vec::new(); m],
            iterations_used: 0,
            final_increment: 0.0,
        })
    }
}

/// ω_ij(x) = (μᵢ − μⱼ) L_ij(x,x) + σ⁻⁻_ij for i ≤ j, zero below the diagonal.
pub fn omega_from_l(l: &[Vec<TriField>], system: &HyperbolicSystem) -> Vec<Vec<Vec<f64>>> {
    let m = system.m();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let diag = l[i][j].diagonal();
                    if i > j {
                        vec![0.0; diag.len()]
                    } else if i == j {
                        vec![system.sigma_mm[(i, i)]; diag.len()]
                    } else {
                        let c = system.mu[i] - system.mu[j];
                        diag.iter().map(|d| c * d + system.sigma_mm[(i, j)]).collect()
                    }
                })
                .collect()
        })
        .collect()
}

/// Row-by-row solver. Rows must be solved from the last one upwards; a row
/// may be re-solved at any time from the rows below it in the cascade.
pub struct KernelCascade<'a> {
    system: &'a HyperbolicSystem,
    spec: GridSpec,
    sectors: SectorMap,
    rows: Vec<Option<KernelRow>>,
}

impl<'a> KernelCascade<'a> {
    pub fn new(system: &'a HyperbolicSystem, spec: &GridSpec) -> Result<Self> {
        system.ensure_valid()?;
        spec.validate()?;
        let grid = TriangleGrid::new(spec.kernel_nx)?;
        Ok(KernelCascade {
            system,
            spec: *spec,
            sectors: SectorMap::new(grid, discontinuity_rays(&system.mu)),
            rows: vec![None; system.m()],
        })
    }

    pub fn row(&self, i: usize) -> Option<&KernelRow> {
        self.rows.get(i).and_then(Option::as_ref)
    }

    pub fn row_mut(&mut self, i: usize) -> Option<&mut KernelRow> {
        self.rows.get_mut(i).and_then(Option::as_mut)
    }

    pub fn solve_all(&mut self) -> Result<()> {
        for i in (0..self.system.m()).rev() {
            self.solve_row(i)?;
        }
        Ok(())
    }

    /// Solves row `i`; every row p > i must already be available.
    pub fn solve_row(&mut self, i: usize) -> Result<()> {
        let m = self.system.m();
        if i >= m {
            return Err(Error::Index(format!("row {i} of {m}")));
        }
        if let Some(p) = (i + 1..m).find(|&p| self.rows[p].is_none()) {
            return Err(Error::Parameter(format!(
                "row {i} needs row {p} to be solved first"
            )));
        }
        let row = self.picard_row(i)?;
        self.rows[i] = Some(row);
        Ok(())
    }

    pub fn finish(self) -> Result<KernelSolution> {
        let m = self.system.m();
        let mut k = Vec::with_capacity(m);
        let mut l = Vec::with_capacity(m);
        let mut histories = Vec::with_capacity(m);
        for (i, r) in self.rows.into_iter().enumerate() {
            let r = r.ok_or_else(|| Error::Parameter(format!("row {i} not solved")))?;
            k.push(r.k);
            l.push(r.l);
            histories.push(r.history);
        }
        let omega = omega_from_l(&l, self.system);
        let iterations_used = histories.iter().map(Vec::len).max().unwrap_or(0);
        let final_increment = histories
            .iter()
            .filter_map(|h| h.last().copied())
            .fold(0.0, f64::max);
        Ok(KernelSolution {
            sectors: self.sectors,
            k,
            l,
            omega,
            histories,
            iterations_used,
            final_increment,
        })
    }

    /// One application of the row-i integral operator to (k_cur, l_cur).
    fn sweep(&self, i: usize, k_cur: &[TriField], l_cur: &[TriField]) -> (Vec<TriField>, Vec<TriField>) {
        let sys = self.system;
        let (n, m) = (sys.n(), sys.m());
        let grid = self.sectors.grid();
        let sectors = &self.sectors;
        let mu_i = sys.mu[i];

        let lower: Vec<&KernelRow> = (0..m)
            .map(|p| if p > i { self.rows[p].as_ref() } else { None })
            .map(|r| r.unwrap_or(&EMPTY_ROW))
            .collect();

        let k_diag: Vec<f64> = (0..n)
            .map(|j| -sys.sigma_mp[(i, j)] / (mu_i + sys.lambda[j]))
            .collect();
        let l_diag: Vec<f64> = (0..m)
            .map(|j| {
                if j < i {
                    -sys.sigma_mm[(i, j)] / (mu_i - sys.mu[j])
                } else {
                    0.0
                }
            })
            .collect();
        // L(x,0) = K(x,0) G with G_kj = λ_k q_kj / μ_j
        let edge: Vec<Vec<(usize, f64)>> = (0..m)
            .map(|j| {
                (0..n)
                    .filter(|&k| sys.q0[(k, j)] != 0.0)
                    .map(|k| (k, sys.lambda[k] * sys.q0[(k, j)] / sys.mu[j]))
                    .collect()
            })
            .collect();

        // ω_ip(x_a) for p ≥ i from the current iterate
        let omega: Vec<Vec<f64>> = (0..m)
            .map(|p| {
                if p < i {
                    Vec::new()
                } else if p == i {
                    vec![sys.sigma_mm[(i, i)]; grid.points()]
                } else {
                    let c = mu_i - sys.mu[p];
                    l_cur[p]
                        .diagonal()
                        .iter()
                        .map(|d| c * d + sys.sigma_mm[(i, p)])
                        .collect()
                }
            })
            .collect();
        let k_row = |p: usize| -> &[TriField] { if p == i { k_cur } else { &lower[p].k } };
        let l_row = |p: usize| -> &[TriField] { if p == i { l_cur } else { &lower[p].l } };

        let fk: Vec<TriField> = (0..n)
            .map(|j| {
                let data = (0..grid.len())
                    .into_par_iter()
                    .map(|idx| {
                        let (a, b) = grid.node(idx);
                        let mut s = 0.0;
                        for kk in 0..n {
                            s += sys.sigma_pp[(kk, j)] * k_cur[kk].get(a, b);
                        }
                        for p in 0..m {
                            s += sys.sigma_mp[(p, j)] * l_cur[p].get(a, b);
                        }
                        for p in i..m {
                            s -= omega[p][a] * k_row(p)[j].get(a, b);
                        }
                        s
                    })
                    .collect();
                TriField::from_vec(grid, data).expect("grid size")
            })
            .collect();
        let fl: Vec<TriField> = (0..m)
            .map(|j| {
                let data = (0..grid.len())
                    .into_par_iter()
                    .map(|idx| {
                        let (a, b) = grid.node(idx);
                        let mut s = 0.0;
                        for kk in 0..m {
                            s += sys.sigma_mm[(kk, j)] * l_cur[kk].get(a, b);
                        }
                        for p in 0..n {
                            s += sys.sigma_pm[(p, j)] * k_cur[p].get(a, b);
                        }
                        for p in i..m {
                            s -= omega[p][a] * l_row(p)[j].get(a, b);
                        }
                        s
                    })
                    .collect();
                TriField::from_vec(grid, data).expect("grid size")
            })
            .collect();

        let k_next: Vec<TriField> = (0..n)
            .map(|j| {
                let lam = sys.lambda[j];
                let data = (0..grid.len())
                    .into_par_iter()
                    .map(|idx| {
                        let (a, b) = grid.node(idx);
                        let (x, xi) = (grid.coord(a), grid.coord(b));
                        let p = k_path(mu_i, lam, x, xi);
                        k_diag[j] + sectors.line_integral(&fk[j], p.start, p.velocity, p.s_final)
                    })
                    .collect();
                TriField::from_vec(grid, data).expect("grid size")
            })
            .collect();
        let l_next: Vec<TriField> = (0..m)
            .map(|j| {
                let mu_j = sys.mu[j];
                let data = (0..grid.len())
                    .into_par_iter()
                    .map(|idx| {
                        let (a, b) = grid.node(idx);
                        let (x, xi) = (grid.coord(a), grid.coord(b));
                        let p = l_path(mu_i, mu_j, j < i, x, xi);
                        let along = sectors.line_integral(&fl[j], p.start, p.velocity, p.nu_final);
                        if p.hits_diagonal {
                            l_diag[j] + along
                        } else {
                            let chi = p.end.0;
                            let mut start_val = 0.0;
                            for &(kk, g) in &edge[j] {
                                let kp = k_path(mu_i, sys.lambda[kk], chi, 0.0);
                                start_val += g
                                    * (k_diag[kk]
                                        + sectors.line_integral(
                                            &fk[kk],
                                            kp.start,
                                            kp.velocity,
                                            kp.s_final,
                                        ));
                            }
                            start_val + along
                        }
                    })
                    .collect();
                TriField::from_vec(grid, data).expect("grid size")
            })
            .collect();
        (k_next, l_next)
    }

    fn picard_row(&self, i: usize) -> Result<KernelRow> {
        let (n, m) = (self.system.n(), self.system.m());
        let grid = self.sectors.grid();
        let mut k_cur = vec![TriField::zeros(grid); n];
        let mut l_cur = vec![TriField::zeros(grid); m];
        let mut history = Vec::new();

        for _ in 0..self.spec.picard_max_iter {
            let (k_next, l_next) = self.sweep(i, &k_cur, &l_cur);
            let inc = k_next
                .iter()
                .zip(&k_cur)
                .chain(l_next.iter().zip(&l_cur))
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            if !inc.is_finite() {
                return Err(Error::NonFinite(format!("kernel row {i}")));
            }
            k_cur = k_next;
            l_cur = l_next;
            history.push(inc);
            if inc < self.spec.picard_tol {
                return Ok(KernelRow {
                    k: k_cur,
                    l: l_cur,
                    history,
                });
            }
        }
        Err(Error::NonConvergence {
            stage: "control kernels",
            row: Some(i),
            tol: self.spec.picard_tol,
            last: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }
}

static EMPTY_ROW: KernelRow = KernelRow {
    k: Vec::new(),
    l: Vec::new(),
    history: Vec::new(),
};

/// Solves all kernel rows in cascade order.
pub fn solve_control_kernels(system: &HyperbolicSystem, spec: &GridSpec) -> Result<KernelSolution> {
    let mut cascade = KernelCascade::new(system, spec)?;
    cascade.solve_all()?;
    cascade.finish()
}

/// Sup-norm change produced by one sweep of the integral operators applied
/// to given kernels: zero (up to the Picard tolerance) for a solved set,
/// large for corrupted data.
pub fn fixed_point_residual(system: &HyperbolicSystem, sol: &KernelSolution) -> Result<f64> {
    let spec = GridSpec {
        kernel_nx: sol.grid().points(),
        ..GridSpec::default()
    };
    let mut cascade = KernelCascade::new(system, &spec)?;
    if sol.m() != system.m() || sol.n() != system.n() {
        return Err(Error::GridMismatch("kernel array shape".into()));
    }
    for i in 0..system.m() {
        cascade.rows[i] = Some(KernelRow {
            k: sol.k[i].clone(),
            l: sol.l[i].clone(),
            history: Vec::new(),
        });
    }
    let mut worst: f64 = 0.0;
    for i in 0..system.m() {
        let (k, l) = cascade.sweep(i, &sol.k[i], &sol.l[i]);
        let d = k
            .iter()
            .zip(&sol.k[i])
            .chain(l.iter().zip(&sol.l[i]))
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        worst = worst.max(d);
    }
    Ok(worst)
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
    fn zero_coupling_gives_zero_kernels_in_one_sweep() {
        let sys = HyperbolicSystem::benchmark_2x2().without_coupling();
        let sol = solve_control_kernels(&sys, &spec(17)).unwrap();
        assert_eq!(sol.iterations_used, 1);
        assert_eq!(sol.final_increment, 0.0);
        for f in sol.k.iter().chain(&sol.l).flatten() {
            assert_eq!(f.max_abs(), 0.0);
        }
        for row in &sol.omega {
            for w in row {
                assert!(w.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn benchmark_diagonal_values() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let sol = solve_control_kernels(&sys, &spec(33)).unwrap();
        for v in sol.k[1][0].diagonal() {
            assert!((v + 1.0 / 3.0).abs() < 1e-12);
        }
        for v in sol.l[1][0].diagonal() {
            assert!((v + 1.0).abs() < 1e-12, "{v}");
        }
        // ω_11 = σ⁻⁻_11, ω_21 = 0, ω_12 = 1 − L_12(x,x)
        assert!(sol.omega[0][0].iter().all(|&w| w == 0.0));
        assert!(sol.omega[1][0].iter().all(|&w| w == 0.0));
        for (w, d) in sol.omega[0][1].iter().zip(sol.l[0][1].diagonal()) {
            assert_eq!(*w, 1.0 - d);
        }
        assert!(sol.final_increment < 1e-10);
    }

    #[test]
    fn omega_of_zero_l_is_upper_part_of_sigma() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let g = TriangleGrid::new(9).unwrap();
        let l = vec![vec![TriField::zeros(g); 2]; 2];
        let w = omega_from_l(&l, &sys);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i <= j { sys.sigma_mm[(i, j)] } else { 0.0 };
                assert!(w[i][j].iter().all(|&v| v == want));
            }
        }
    }

    #[test]
    fn edge_condition_holds() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let sol = solve_control_kernels(&sys, &spec(33)).unwrap();
        let g = sol.grid();
        for i in 0..2 {
            // the origin belongs to the diagonal data of L_21
            for a in 1..g.points() {
                // μ_j L_ij(x,0) = Σ_k λ_k K_ik(x,0) q_kj, only q_11 ≠ 0
                let lhs = sys.mu[0] * sol.l[i][0].get(a, 0);
                let rhs = sys.lambda[0] * sol.k[i][0].get(a, 0);
                assert!((lhs - rhs).abs() < 1e-12);
                assert!(sol.l[i][1].get(a, 0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_must_be_solved_bottom_up() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let mut c = KernelCascade::new(&sys, &spec(9)).unwrap();
        assert!(c.solve_row(0).is_err());
        c.solve_row(1).unwrap();
        c.solve_row(0).unwrap();
        assert!(c.finish().is_ok());
    }

    #[test]
    fn fixed_point_residual_detects_corruption() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let sol = solve_control_kernels(&sys, &spec(33)).unwrap();
        assert!(fixed_point_residual(&sys, &sol).unwrap() < 1e-9);
        let mut k = sol.k.clone();
        let old = k[1][0].get(20, 5);
        k[1][0].set(20, 5, old + 0.1);
        let bad = KernelSolution::from_fields(&sys, k, sol.l.clone()).unwrap();
        assert!(fixed_point_residual(&sys, &bad).unwrap() > 1e-3);
    }

    #[test]
    fn non_convergence_carries_history() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let s = GridSpec {
            kernel_nx: 9,
            picard_max_iter: 3,
            ..GridSpec::default()
        };
        match solve_control_kernels(&sys, &s) {
            Err(Error::NonConvergence { history, row, .. }) => {
                assert_eq!(history.len(), 3);
                assert_eq!(row, Some(1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
