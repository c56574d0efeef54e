//! Finite-difference residuals of the kernel PDEs on solved grids.
//!
//! One-sided differences are taken in the upwind direction of each
//! characteristic family, so every stencil lies inside T. Stencils that
//! straddle a discontinuity ray are skipped: the fields are only piecewise
//! smooth there and a difference quotient carries no information.

use crate::grid::{SectorMap, TriField};
use crate::kernels::KernelSolution;
use crate::observer::ObserverSolution;
use crate::system::HyperbolicSystem;

/// Sup-norm residuals, per kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelResidual {
    /// K (or M on the observer side).
    pub first: f64,
    /// L (or N on the observer side).
    pub second: f64,
}

impl KernelResidual {
    pub fn max(&self) -> f64 {
        self.first.max(self.second)
    }
}

fn same_sector(map: &SectorMap, nodes: &[(usize, usize)]) -> bool {
    let s = map.node_sector(nodes[0].0, nodes[0].1);
    nodes.iter().all(|&(a, b)| map.node_sector(a, b) == s)
}

/// Residual of the control kernel equations.
pub fn control_residual(system: &HyperbolicSystem, sol: &KernelSolution) -> KernelResidual {
    let (n, m) = (system.n(), system.m());
    let grid = sol.grid();
    let h = grid.h();
    let map = sol.sectors();
    let mut res = KernelResidual::default();

    let rhs_k = |i: usize, j: usize, a: usize, b: usize| {
        let mut s = 0.0;
        for k in 0..n {
            s += system.sigma_pp[(k, j)] * sol.k[i][k].get(a, b);
        }
        for p in 0..m {
            s += system.sigma_mp[(p, j)] * sol.l[i][p].get(a, b);
        }
        for p in i..m {
            s -= sol.omega[i][p][a] * sol.k[p][j].get(a, b);
        }
        s
    };
    let rhs_l = |i: usize, j: usize, a: usize, b: usize| {
        let mut s = 0.0;
        for k in 0..m {
            s += system.sigma_mm[(k, j)] * sol.l[i][k].get(a, b);
        }
        for p in 0..n {
            s += system.sigma_pm[(p, j)] * sol.k[i][p].get(a, b);
        }
        for p in i..m {
            s -= sol.omega[i][p][a] * sol.l[p][j].get(a, b);
        }
        s
    };

    for (a, b) in grid.nodes() {
        if b >= a {
            continue;
        }
        // K: backward in x, forward in ξ
        if same_sector(map, &[(a, b), (a - 1, b), (a, b + 1)]) {
            for i in 0..m {
                for j in 0..n {
                    let f = &sol.k[i][j];
                    let dx = (f.get(a, b) - f.get(a - 1, b)) / h;
                    let dxi = (f.get(a, b + 1) - f.get(a, b)) / h;
                    let r = system.mu[i] * dx - system.lambda[j] * dxi - rhs_k(i, j, a, b);
                    res.first = res.first.max(r.abs());
                }
            }
        }
        // L: backward in both
        if b >= 1 && same_sector(map, &[(a, b), (a - 1, b), (a, b - 1)]) {
            for i in 0..m {
                for j in 0..m {
                    let f = &sol.l[i][j];
                    let dx = (f.get(a, b) - f.get(a - 1, b)) / h;
                    let dxi = (f.get(a, b) - f.get(a, b - 1)) / h;
                    let r = system.mu[i] * dx + system.mu[j] * dxi - rhs_l(i, j, a, b);
                    res.second = res.second.max(r.abs());
                }
            }
        }
    }
    res
}

/// Residual of the observer kernel equations, evaluated in the original
/// coordinates (x, ξ).
pub fn observer_residual(system: &HyperbolicSystem, obs: &ObserverSolution) -> KernelResidual {
    let (n, m) = (system.n(), system.m());
    let grid = obs.grid();
    let h = grid.h();
    let last = grid.points() - 1;
    let map = obs.dual_sectors();
    let mk = &obs.m_kernel;
    let nk = &obs.n_kernel;
    let wb = &obs.omega_bar;
    // sectors live in reflected coordinates
    let same = |nodes: &[(usize, usize)]| {
        let mapped: Vec<(usize, usize)> = nodes.iter().map(|&(a, b)| (last - b, last - a)).collect();
        same_sector(map, &mapped)
    };
    let mut res = KernelResidual::default();

    for (a, b) in grid.nodes() {
        if b >= a {
            continue;
        }
        // M: backward in x, forward in ξ
        if same(&[(a, b), (a - 1, b), (a, b + 1)]) {
            for i in 0..n {
                for j in 0..m {
                    let f = &mk[i][j];
                    let dx = (f.get(a, b) - f.get(a - 1, b)) / h;
                    let dxi = (f.get(a, b + 1) - f.get(a, b)) / h;
                    let mut rhs = 0.0;
                    for k in 0..n {
                        rhs += system.sigma_pp[(i, k)] * mk[k][j].get(a, b);
                    }
                    for p in 0..m {
                        rhs += system.sigma_pm[(i, p)] * nk[p][j].get(a, b);
                        rhs -= mk[i][p].get(a, b) * wb[p][j][b];
                    }
                    let r = system.lambda[i] * dx - system.mu[j] * dxi - rhs;
                    res.first = res.first.max(r.abs());
                }
            }
        }
        // N: forward in both
        if a < last && same(&[(a, b), (a + 1, b), (a, b + 1)]) {
            for i in 0..m {
                for j in 0..m {
                    let f = &nk[i][j];
                    let dx = (f.get(a + 1, b) - f.get(a, b)) / h;
                    let dxi = (f.get(a, b + 1) - f.get(a, b)) / h;
                    let mut rhs = 0.0;
                    for p in 0..m {
                        rhs += nk[i][p].get(a, b) * wb[p][j][b];
                        rhs -= system.sigma_mm[(i, p)] * nk[p][j].get(a, b);
                    }
                    for k in 0..n {
                        rhs -= system.sigma_mp[(i, k)] * mk[k][j].get(a, b);
                    }
                    let r = system.mu[i] * dx + system.mu[j] * dxi - rhs;
                    res.second = res.second.max(r.abs());
                }
            }
        }
    }
    res
}

/// Largest deviation of a diagonal from a constant.
pub fn diagonal_error(f: &TriField, value: f64) -> f64 {
    f.diagonal()
        .iter()
        .fold(0.0, |m, v| m.max((v - value).abs()))
}
