//! Observer-error target system
//!
//! ```text
//! α̃_t + Λ⁺α̃_x = Σ⁺⁺α̃ + ∫₀ˣ D⁺(x,ξ)α̃(ξ) dξ
//! β̃_t − Λ⁻β̃_x = Σ⁻⁺α̃ + Ω̄(x)β̃ + ∫₀ˣ D⁻(x,ξ)α̃(ξ) dξ
//! α̃(t,0) = 0,   β̃(t,1) = R₁α̃(t,1)
//! ```
//!
//! related to the estimation error by ũ = α̃ − ∫₀ˣ M β̃, ṽ = β̃ − ∫₀ˣ N β̃.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::control::{cumulative, sample_triangle};
use super::{advect, mat_vec, time_steps, SimGrid, SimState, Trajectory, BLOW_UP};
use crate::error::{Error, Result};
use crate::observer::{reflect, ObserverCouplings, ObserverSolution};
use crate::system::{GridSpec, HyperbolicSystem};
use crate::volterra::FieldMatrix;

/// Observer kernels and error-system couplings sampled on cells. Triangle
/// samples are packed as `c(c+1)/2 + d` for d ≤ c.
#[derive(Debug, Clone)]
pub struct ObserverErrorModel {
    grid: SimGrid,
    m_kernel: Vec<Vec<Vec<f64>>>,
    n_kernel: Vec<Vec<Vec<f64>>>,
    omega_bar: Vec<Vec<Vec<f64>>>,
    d_plus: Vec<Vec<Vec<f64>>>,
    d_minus: Vec<Vec<Vec<f64>>>,
}

impl ObserverErrorModel {
    pub fn new(obs: &ObserverSolution, couplings: &ObserverCouplings, grid: SimGrid) -> Self {
        let n = obs.m_kernel.len();
        let m = obs.n_kernel.len();
        let tri = |rows: usize, cols: usize, f: &(dyn Fn(usize, usize, f64, f64) -> f64 + Sync)| {
            (0..rows)
                .map(|i| {
                    (0..cols)
                        .map(|j| sample_triangle(grid, |x, xi| f(i, j, x, xi)))
                        .collect()
                })
                .collect()
        };
        // D± carry the observer's discontinuities, which live on reflected rays
        let sectors = obs.dual_sectors();
        let reflected = |fm: &FieldMatrix| -> Vec<Vec<crate::grid::TriField>> {
            (0..fm.rows())
                .map(|i| (0..fm.cols()).map(|j| reflect(fm.get(i, j))).collect())
                .collect()
        };
        let dp = reflected(&couplings.d_plus);
        let dm = reflected(&couplings.d_minus);
        let at = |f: &crate::grid::TriField, x: f64, xi: f64| {
            let (rx, rxi) = (1.0 - xi, 1.0 - x);
            sectors.interp(f, rx, rxi, sectors.sector(rx, rxi))
        };
        let xs = grid.centres();
        ObserverErrorModel {
            grid,
            m_kernel: tri(n, m, &|i, j, x, xi| obs.eval_m(i, j, x, xi)),
            n_kernel: tri(m, m, &|i, j, x, xi| obs.eval_n(i, j, x, xi)),
            omega_bar: (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| xs.iter().map(|&x| obs.eval_omega_bar(i, j, x)).collect())
                        .collect()
                })
                .collect(),
            d_plus: tri(n, n, &|i, j, x, xi| at(&dp[i][j], x, xi)),
            d_minus: tri(m, n, &|i, j, x, xi| at(&dm[i][j], x, xi)),
        }
    }

    fn integral(&self, kernel: &[Vec<Vec<f64>>], f: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let dx = self.grid.dx();
        kernel
            .iter()
            .map(|row| {
                (0..self.grid.nx)
                    .into_par_iter()
                    .map(|c| {
                        let base = c * (c + 1) / 2;
                        row.iter()
                            .zip(f)
                            .map(|(k, fj)| cumulative(&k[base..=base + c], &fj[..=c]))
                            .sum::<f64>()
                            * dx
                    })
                    .collect()
            })
            .collect()
    }

    /// (α̃, β̃) ↦ (ũ, ṽ).
    pub fn to_error(&self, alpha: &[Vec<f64>], beta: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let im = self.integral(&self.m_kernel, beta);
        let inn = self.integral(&self.n_kernel, beta);
        (super::diff(alpha, &im), super::diff(beta, &inn))
    }

    /// (ũ, ṽ) ↦ (α̃, β̃), the exact inverse of [`Self::to_error`] on cells.
    pub fn from_error(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let m = v.len();
        let nx = self.grid.nx;
        let dx = self.grid.dx();
        let mut beta = vec![vec![0.0; nx]; m];
        for c in 0..nx {
            let base = c * (c + 1) / 2;
            // (I − ½dx N(x_c,x_c)) β_c = ṽ_c + dx Σ_{d<c} N(x_c,x_d) β_d
            let a = DMatrix::from_fn(m, m, |i, j| {
                let d = if i == j { 1.0 } else { 0.0 };
                d - 0.5 * dx * self.n_kernel[i][j][base + c]
            });
            let rhs = DVector::from_fn(m, |i, _| {
                let mut s = v[i][c];
                for j in 0..m {
                    for d in 0..c {
                        s += dx * self.n_kernel[i][j][base + d] * beta[j][d];
                    }
                }
                s
            });
            let sol = a.lu().solve(&rhs).expect("I − O(dx) is invertible");
            for i in 0..m {
                beta[i][c] = sol[i];
            }
        }
        let im = self.integral(&self.m_kernel, &beta);
        let alpha = u
            .iter()
            .zip(&im)
            .map(|(ui, ii)| ui.iter().zip(ii).map(|(a, b)| a + b).collect())
            .collect();
        (alpha, beta)
    }

    fn sources(&self, system: &HyperbolicSystem, alpha: &[Vec<f64>], beta: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nx = self.grid.nx;
        let (n, m) = (system.n(), system.m());
        let ip = self.integral(&self.d_plus, alpha);
        let im = self.integral(&self.d_minus, alpha);
        let sa = (0..n)
            .map(|i| {
                (0..nx)
                    .map(|c| {
                        ip[i][c] + (0..n).map(|k| system.sigma_pp[(i, k)] * alpha[k][c]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let sb = (0..m)
            .map(|i| {
                (0..nx)
                    .map(|c| {
                        let mut s = im[i][c];
                        for k in 0..n {
                            s += system.sigma_mp[(i, k)] * alpha[k][c];
                        }
                        for j in 0..m {
                            s += self.omega_bar[i][j][c] * beta[j][c];
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        (sa, sb)
    }
}

/// Simulates the observer-error target system from `initial` (α̃ in `u`,
/// β̃ in `v`).
pub fn simulate_observer_target(
    system: &HyperbolicSystem,
    model: &ObserverErrorModel,
    spec: &GridSpec,
    initial: &SimState,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    system.ensure_valid()?;
    if initial.nx() != model.grid.nx || spec.nx != model.grid.nx {
        return Err(Error::GridMismatch("error model and state use different cells".into()));
    }
    let grid = model.grid;
    let nx = grid.nx;
    let (steps, dt) = time_steps(system, grid, spec.cfl, t_end);
    let mut state = initial.clone();
    state.t = 0.0;
    state.hat_u = None;
    state.hat_v = None;
    let mut traj = Trajectory::default();
    let mut pending = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    let zero_u = vec![0.0; system.n()];
    for k in 0..=steps {
        traj.times.push(state.t);
        traj.l2.push(state.l2());
        traj.controls.push(vec![0.0; system.m()]);
        while next_snap < pending.len() && pending[next_snap] <= state.t + 0.5 * dt {
            traj.snapshots.push(state.clone());
            next_snap += 1;
        }
        if k == steps {
            break;
        }
        if state.sup_norm() > BLOW_UP {
            traj.truncated = true;
            break;
        }
        let a1: Vec<f64> = state.u.iter().map(|c| c[nx - 1]).collect();
        let ghost_b = mat_vec(&system.r1, &a1);
        let (sa, sb) = model.sources(system, &state.u, &state.v);
        let (u, v) = advect(
            &system.lambda,
            &system.mu,
            &state.u,
            &state.v,
            &zero_u,
            &ghost_b,
            &sa,
            &sb,
            dt,
            grid.dx(),
        );
        state = SimState {
            t: (k + 1) as f64 * dt,
            u,
            v,
            hat_u: None,
            hat_v: None,
        };
    }
    Ok(traj)
}
