//! Feedback laws and the forward transformation evaluated on cells.

use rayon::prelude::*;

use super::{mat_vec, SimGrid, SimState};
use crate::error::{Error, Result};
use crate::kernels::KernelSolution;
use crate::system::HyperbolicSystem;

/// U = −R₁u(1) + ∫₀¹ K(1,ξ)u(ξ) + L(1,ξ)v(ξ) dξ, with K(1,·), L(1,·)
/// sampled at cell centres once.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    r1: nalgebra::DMatrix<f64>,
    /// `k[i][j][c]` = K_ij(1, x_c).
    pub k: Vec<Vec<Vec<f64>>>,
    /// `l[i][j][c]` = L_ij(1, x_c).
    pub l: Vec<Vec<Vec<f64>>>,
    dx: f64,
}

impl FeedbackLaw {
    pub fn new(kernels: &KernelSolution, system: &HyperbolicSystem, grid: SimGrid) -> Self {
        let xs = grid.centres();
        let (n, m) = (kernels.n(), kernels.m());
        let k = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| xs.iter().map(|&x| kernels.eval_k(i, j, 1.0, x)).collect())
                    .collect()
            })
            .collect();
        let l = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| xs.iter().map(|&x| kernels.eval_l(i, j, 1.0, x)).collect())
                    .collect()
            })
            .collect();
        FeedbackLaw {
            r1: system.r1.clone(),
            k,
            l,
            dx: grid.dx(),
        }
    }

    /// Integral part ∫₀¹ K(1,ξ)u + L(1,ξ)v dξ.
    pub fn integral(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<f64> {
        self.k
            .iter()
            .zip(&self.l)
            .map(|(krow, lrow)| {
                let mut s = 0.0;
                for (kij, uj) in krow.iter().zip(u) {
                    s += kij.iter().zip(uj).map(|(a, b)| a * b).sum::<f64>();
                }
                for (lij, vj) in lrow.iter().zip(v) {
                    s += lij.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                }
                s * self.dx
            })
            .collect()
    }

    pub fn control(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<f64> {
        let u1: Vec<f64> = u.iter().map(|c| *c.last().expect("non-empty")).collect();
        let reflected = mat_vec(&self.r1, &u1);
        self.integral(u, v)
            .iter()
            .zip(reflected)
            .map(|(a, b)| a - b)
            .collect()
    }
}

pub fn full_state_control(state: &SimState, law: &FeedbackLaw) -> Vec<f64> {
    law.control(&state.u, &state.v)
}

/// Same law applied to the observer estimate.
pub fn output_feedback_control(state: &SimState, law: &FeedbackLaw) -> Result<Vec<f64>> {
    match (&state.hat_u, &state.hat_v) {
        (Some(hu), Some(hv)) => Ok(law.control(hu, hv)),
        _ => Err(Error::Parameter("output feedback needs an observer state".into())),
    }
}

/// K and L sampled on the lower triangle of cell-centre pairs.
#[derive(Debug, Clone)]
pub struct CellTransform {
    nx: usize,
    /// `k[i][j][c(c+1)/2 + c']` = K_ij(x_c, x_c'), c' ≤ c.
    k: Vec<Vec<Vec<f64>>>,
    l: Vec<Vec<Vec<f64>>>,
    law: FeedbackLawEdge,
}

/// Right-edge samples used for the boundary value β(t, 1).
#[derive(Debug, Clone)]
struct FeedbackLawEdge {
    k: Vec<Vec<Vec<f64>>>,
    l: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn sample_triangle(
    grid: SimGrid,
    f: impl Fn(f64, f64) -> f64 + Sync,
) -> Vec<f64> {
    let xs = grid.centres();
    (0..grid.nx)
        .into_par_iter()
        .flat_map_iter(|c| {
            let xc = xs[c];
            let xs = &xs;
            let f = &f;
            (0..=c).map(move |d| f(xc, xs[d]))
        })
        .collect()
}

impl CellTransform {
    pub fn new(kernels: &KernelSolution, grid: SimGrid) -> Self {
        let (n, m) = (kernels.n(), kernels.m());
        let xs = grid.centres();
        let k = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| sample_triangle(grid, |x, xi| kernels.eval_k(i, j, x, xi)))
                    .collect()
            })
            .collect();
        let l = (0..m)
            .map(|i| {
                (0..m)
                    .map(|j| sample_triangle(grid, |x, xi| kernels.eval_l(i, j, x, xi)))
                    .collect()
            })
            .collect();
        let edge = FeedbackLawEdge {
            k: (0..m)
                .map(|i| {
                    (0..n)
                        .map(|j| xs.iter().map(|&x| kernels.eval_k(i, j, 1.0, x)).collect())
                        .collect()
                })
                .collect(),
            l: (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| xs.iter().map(|&x| kernels.eval_l(i, j, 1.0, x)).collect())
                        .collect()
                })
                .collect(),
        };
        CellTransform {
            nx: grid.nx,
            k,
            l,
            law: edge,
        }
    }

    /// α = u, β = v − ∫₀ˣ K u + L v dξ at cell centres.
    pub fn forward(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let nx = self.nx;
        let dx = 1.0 / nx as f64;
        let beta = self
            .k
            .iter()
            .zip(&self.l)
            .zip(v)
            .map(|((krow, lrow), vi)| {
                (0..nx)
                    .into_par_iter()
                    .map(|c| {
                        let base = c * (c + 1) / 2;
                        let mut s = 0.0;
                        for (kij, uj) in krow.iter().zip(u) {
                            s += cumulative(&kij[base..=base + c], &uj[..=c]);
                        }
                        for (lij, vj) in lrow.iter().zip(v) {
                            s += cumulative(&lij[base..=base + c], &vj[..=c]);
                        }
                        vi[c] - s * dx
                    })
                    .collect()
            })
            .collect();
        (u.to_vec(), beta)
    }

    /// β(t, 1) = v(t, 1) − ∫₀¹ K(1,ξ)u + L(1,ξ)v dξ, with the boundary trace
    /// v(t, 1) = R₁u(t, 1) + U.
    pub fn boundary_beta(&self, state: &SimState, control: &[f64], system: &HyperbolicSystem) -> Vec<f64> {
        let dx = 1.0 / self.nx as f64;
        let u1: Vec<f64> = state.u.iter().map(|c| c[self.nx - 1]).collect();
        let trace = mat_vec(&system.r1, &u1);
        (0..system.m())
            .map(|i| {
                let mut s = 0.0;
                for (kij, uj) in self.law.k[i].iter().zip(&state.u) {
                    s += kij.iter().zip(uj).map(|(a, b)| a * b).sum::<f64>();
                }
                for (lij, vj) in self.law.l[i].iter().zip(&state.v) {
                    s += lij.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                }
                trace[i] + control[i] - s * dx
            })
            .collect()
    }
}

/// Σ_{d<c} w_d f_d + ½ w_c f_c for row slices of length c + 1.
#[inline]
pub(crate) fn cumulative(w: &[f64], f: &[f64]) -> f64 {
    let c = w.len() - 1;
    let mut s = 0.5 * w[c] * f[c];
    for d in 0..c {
        s += w[d] * f[d];
    }
    s
}

/// Forward transformation of a plant state: α = u, β = v − ∫₀ˣ K u + L v.
pub fn transform_to_target(state: &SimState, transform: &CellTransform) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    transform.forward(&state.u, &state.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::solve_control_kernels;
    use crate::system::GridSpec;

    fn kernels(sys: &HyperbolicSystem) -> KernelSolution {
        solve_control_kernels(
            sys,
            &GridSpec {
                kernel_nx: 33,
                ..GridSpec::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_state_gives_zero_control() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let g = SimGrid::new(40).unwrap();
        let law = FeedbackLaw::new(&kernels(&sys), &sys, g);
        let s = SimState::zeros(&sys, g);
        assert_eq!(full_state_control(&s, &law), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_kernels_reduce_to_reflection() {
        let mut sys = HyperbolicSystem::benchmark_2x2().without_coupling();
        sys.r1 = nalgebra::DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 1.0, -1.0]);
        let g = SimGrid::new(40).unwrap();
        let law = FeedbackLaw::new(&kernels(&sys), &sys, g);
        let s = SimState::from_fn(&sys, g, |i, x| (i + 1) as f64 * x, |_, x| x * x);
        let u1 = [s.u[0][39], s.u[1][39]];
        let got = full_state_control(&s, &law);
        assert_eq!(got, vec![-0.5 * u1[0], -(u1[0] - u1[1])]);
    }

    #[test]
    fn output_feedback_matches_full_state_on_exact_estimate() {
        let sys = HyperbolicSystem::benchmark_2x2();
        let g = SimGrid::new(40).unwrap();
        let law = FeedbackLaw::new(&kernels(&sys), &sys, g);
        let mut s = SimState::default_ic(&sys, g);
        s.hat_u = Some(s.u.clone());
        s.hat_v = Some(s.v.clone());
        assert_eq!(output_feedback_control(&s, &law).unwrap(), full_state_control(&s, &law));
        let z = SimState::default_ic(&sys, g).with_zero_observer();
        assert_eq!(output_feedback_control(&z, &law).unwrap(), vec![0.0, 0.0]);
        assert!(output_feedback_control(&SimState::default_ic(&sys, g), &law).is_err());
    }

    #[test]
    fn transform_identity_without_kernels() {
        let sys = HyperbolicSystem::benchmark_2x2().without_coupling();
        let g = SimGrid::new(30).unwrap();
        let tr = CellTransform::new(&kernels(&sys), g);
        let s = SimState::default_ic(&sys, g);
        let (a, b) = transform_to_target(&s, &tr);
        assert_eq!(a, s.u);
        assert_eq!(b, s.v);
    }

    #[test]
    fn cumulative_weights() {
        assert_eq!(cumulative(&[1.0, 1.0, 1.0], &[2.0, 4.0, 6.0]), 2.0 + 4.0 + 3.0);
        assert_eq!(cumulative(&[3.0], &[2.0]), 3.0);
    }
}
