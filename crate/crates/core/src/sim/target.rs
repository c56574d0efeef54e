//! Target system
//!
//! ```text
//! α_t + Λ⁺α_x = Σ⁺⁺α + Σ⁺⁻β + ∫₀ˣ C⁺(x,ξ)α(ξ) + C⁻(x,ξ)β(ξ) dξ
//! β_t − Λ⁻β_x = Ω(x)β
//! α(t,0) = Q₀β(t,0),   β(t,1) = 0
//! ```
//!
//! and the weighted energy used to monitor it.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::control::{cumulative, sample_triangle};
use super::{advect, mat_vec, time_steps, SimGrid, SimState, Trajectory, BLOW_UP};
use crate::error::{Error, Result};
use crate::kernels::KernelSolution;
use crate::system::{GridSpec, HyperbolicSystem};
use crate::volterra::{FieldMatrix, TargetCouplings};

/// Target-system coefficients sampled on cells.
#[derive(Debug, Clone)]
pub struct TargetModel {
    grid: SimGrid,
    /// `omega[i][j][c]` = ω_ij(x_c).
    omega: Vec<Vec<Vec<f64>>>,
    /// packed lower triangles, as in the cell transform
    c_plus: Vec<Vec<Vec<f64>>>,
    c_minus: Vec<Vec<Vec<f64>>>,
}

impl TargetModel {
    pub fn new(kernels: &KernelSolution, couplings: &TargetCouplings, grid: SimGrid) -> Self {
        let xs = grid.centres();
        let m = kernels.m();
        let omega = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| xs.iter().map(|&x| kernels.eval_omega(i, j, x)).collect())
                    .collect()
            })
            .collect();
        let sectors = kernels.sectors();
        let sample = |fm: &FieldMatrix| -> Vec<Vec<Vec<f64>>> {
            (0..fm.rows())
                .map(|i| {
                    (0..fm.cols())
                        .map(|j| {
                            let f = fm.get(i, j);
                            sample_triangle(grid, |x, xi| {
                                sectors.interp(f, x, xi, sectors.sector(x, xi))
                            })
                        })
                        .collect()
                })
                .collect()
        };
        TargetModel {
            grid,
            omega,
            c_plus: sample(&couplings.c_plus),
            c_minus: sample(&couplings.c_minus),
        }
    }

    fn sources(
        &self,
        system: &HyperbolicSystem,
        alpha: &[Vec<f64>],
        beta: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nx = self.grid.nx;
        let dx = self.grid.dx();
        let (n, m) = (system.n(), system.m());
        let sa = (0..n)
            .map(|i| {
                (0..nx)
                    .into_par_iter()
                    .map(|c| {
                        let base = c * (c + 1) / 2;
                        let mut s = 0.0;
                        for k in 0..n {
                            s += system.sigma_pp[(i, k)] * alpha[k][c];
                            s += dx * cumulative(&self.c_plus[i][k][base..=base + c], &alpha[k][..=c]);
                        }
                        for k in 0..m {
                            s += system.sigma_pm[(i, k)] * beta[k][c];
                            s += dx * cumulative(&self.c_minus[i][k][base..=base + c], &beta[k][..=c]);
                        }
                        s
                    })
                    .collect()
            })
            .collect();
        let sb = (0..m)
            .map(|i| {
                (0..nx)
                    .map(|c| (0..m).map(|j| self.omega[i][j][c] * beta[j][c]).sum())
                    .collect()
            })
            .collect();
        (sa, sb)
    }
}

/// Simulates the target system from `initial` (α in `u`, β in `v`).
pub fn simulate_target(
    system: &HyperbolicSystem,
    model: &TargetModel,
    spec: &GridSpec,
    initial: &SimState,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    system.ensure_valid()?;
    if initial.nx() != model.grid.nx || spec.nx != model.grid.nx {
        return Err(Error::GridMismatch("target model and state use different cells".into()));
    }
    let grid = model.grid;
    let (steps, dt) = time_steps(system, grid, spec.cfl, t_end);
    let mut state = initial.clone();
    state.t = 0.0;
    state.hat_u = None;
    state.hat_v = None;
    let mut traj = Trajectory::default();
    let mut pending = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    let zero_in = vec![0.0; system.m()];
    for k in 0..=steps {
        traj.times.push(state.t);
        traj.l2.push(state.l2());
        traj.controls.push(zero_in.clone());
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
        let b0: Vec<f64> = state.v.iter().map(|c| c[0]).collect();
        let ghost_a = mat_vec(&system.q0, &b0);
        let (sa, sb) = model.sources(system, &state.u, &state.v);
        let (u, v) = advect(
            &system.lambda,
            &system.mu,
            &state.u,
            &state.v,
            &ghost_a,
            &zero_in,
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

/// Parameters of V = ∫ e^{−δx} Σ αᵢ²/λᵢ + l e^{δx} Σ βᵢ²/μᵢ dx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovWeights {
    pub delta: f64,
    pub l: f64,
}

pub fn lyapunov_value(
    alpha: &[Vec<f64>],
    beta: &[Vec<f64>],
    system: &HyperbolicSystem,
    w: LyapunovWeights,
) -> Result<f64> {
    if !(w.delta > 0.0) || !(w.l > 0.0) {
        return Err(Error::Parameter("delta and l must be positive".into()));
    }
    let nx = alpha.first().or(beta.first()).map_or(0, Vec::len);
    let grid = SimGrid::new(nx)?;
    let mut v = 0.0;
    for c in 0..nx {
        let x = grid.centre(c);
        let a: f64 = alpha
            .iter()
            .zip(&system.lambda)
            .map(|(ai, l)| ai[c] * ai[c] / l)
            .sum();
        let b: f64 = beta.iter().zip(&system.mu).map(|(bi, m)| bi[c] * bi[c] / m).sum();
        v += (-w.delta * x).exp() * a + w.l * (w.delta * x).exp() * b;
    }
    Ok(v * grid.dx())
}

fn min_sym_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.min()
}

/// Smallest δ = 2^k, k ≥ 0, for which the matrices
///
/// ```text
/// P    = (δ − 2mM/ε − nM/ε − nM/(δε)) I − 2(Λ⁺)⁻¹Σ⁺⁺
/// Q(x) = (δ − (mnM/(lε) + nM/(lδε)) e^{−δx}) I − 2(Λ⁻)⁻¹Ω(x)
/// ```
///
/// are positive definite on the lattice, where M bounds |Σ⁺⁺|, |Σ⁺⁻|, |C±|,
/// |Ω| entrywise and ε = min(λ₁, μ₁)/2 is below every speed.
pub fn select_lyapunov_delta(
    system: &HyperbolicSystem,
    kernels: &KernelSolution,
    couplings: &TargetCouplings,
    l: f64,
) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::Parameter("l must be positive".into()));
    }
    let (n, m) = (system.n() as f64, system.m() as f64);
    let big_m = [
        system.sigma_pp.amax(),
        system.sigma_pm.amax(),
        couplings.c_plus.max_abs(),
        couplings.c_minus.max_abs(),
        kernels
            .omega
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |a: f64, b| a.max(b.abs())),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let eps = 0.5 * system.lambda[0].min(system.mu[0]);
    let inv_lp = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        system.n(),
        system.lambda.iter().map(|x| 1.0 / x),
    ));
    let inv_lm = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        system.m(),
        system.mu.iter().map(|x| 1.0 / x),
    ));
    let grid = kernels.grid();
    let mut delta = 1.0;
    for _ in 0..=40 {
        let p_shift = delta - 2.0 * m * big_m / eps - n * big_m / eps - n * big_m / (delta * eps);
        let p = DMatrix::identity(system.n(), system.n()) * p_shift
            - &inv_lp * &system.sigma_pp * 2.0;
        let mut ok = min_sym_eigenvalue(&p) > 0.0;
        if ok {
            for a in 0..grid.points() {
                let x = grid.coord(a);
                let om = DMatrix::from_fn(system.m(), system.m(), |i, j| kernels.omega[i][j][a]);
                let shift = delta
                    - (m * n * big_m / (l * eps) + n * big_m / (l * delta * eps)) * (-delta * x).exp();
                let q = DMatrix::identity(system.m(), system.m()) * shift - &inv_lm * om * 2.0;
                if min_sym_eigenvalue(&q) <= 0.0 {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(delta);
        }
        delta *= 2.0;
    }
    Err(Error::Parameter("no admissible delta below 2^40".into()))
}
