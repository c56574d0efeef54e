//! Self-checks run by `hypstab verify`: kernel boundary data, PDE residual
//! orders, fixed-point residuals, and closed-loop properties.

use std::fmt;

use crate::error::Result;
use crate::grid::TriField;
use crate::kernels::{fixed_point_residual, KernelSolution};
use crate::observer::{gains_from_kernels, target_couplings_observer, ObserverSolution};
use crate::residual::{control_residual, observer_residual, diagonal_error};
use crate::sim::{
    select_lyapunov_delta, simulate, simulate_observer_target, simulate_target, CellTransform,
    ControllerSpec, LyapunovWeights, ObserverErrorModel, SimGrid, SimOptions, SimState,
    TargetModel,
};
use crate::system::{GridSpec, HyperbolicSystem};
use crate::volterra::{
    inverse_transform_on_lattice, inverse_transform_resolvent, solve_target_couplings,
    transform_on_lattice,
};

/// Residuals below this are treated as exact zeros.
const ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Between(f64, f64),
}

impl Bound {
    fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
            Bound::Between(lo, hi) => v >= lo && v <= hi,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b:e}"),
            Bound::AtLeast(b) => write!(f, ">= {b:e}"),
            Bound::Between(lo, hi) => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, measured: f64, bound: Bound) -> Self {
        Check {
            name: name.to_string(),
            measured,
            passed: measured.is_finite() && bound.holds(measured),
            bound,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{:e},{},{}",
            self.name,
            self.measured,
            self.bound,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Kernels to check; anything not supplied is solved from the system.
#[derive(Debug, Clone, Default)]
pub struct Supplied {
    pub kernels: Option<KernelSolution>,
    pub observer: Option<ObserverSolution>,
}

/// Largest deviation of the diagonal data from the closed-form values.
pub fn control_diagonal_error(system: &HyperbolicSystem, k: &KernelSolution) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..system.m() {
        for j in 0..system.n() {
            let exact = -system.sigma_mp[(i, j)] / (system.mu[i] + system.lambda[j]);
            err = err.max(diagonal_error(&k.k[i][j], exact));
        }
        for j in 0..i {
            let exact = -system.sigma_mm[(i, j)] / (system.mu[i] - system.mu[j]);
            err = err.max(diagonal_error(&k.l[i][j], exact));
        }
    }
    err
}

pub fn observer_diagonal_error(system: &HyperbolicSystem, o: &ObserverSolution) -> f64 {
    let mut err: f64 = 0.0;
    for i in 0..system.n() {
        for j in 0..system.m() {
            let exact = -system.sigma_pm[(i, j)] / (system.lambda[i] + system.mu[j]);
            err = err.max(diagonal_error(&o.m_kernel[i][j], exact));
        }
    }
    for i in 0..system.m() {
        for j in i + 1..system.m() {
            let exact = -system.sigma_mm[(i, j)] / (system.mu[j] - system.mu[i]);
            err = err.max(diagonal_error(&o.n_kernel[i][j], exact));
        }
    }
    err
}

fn restrict_all(fields: &[Vec<TriField>], to: crate::grid::TriangleGrid) -> Result<Vec<Vec<TriField>>> {
    fields
        .iter()
        .map(|row| row.iter().map(|f| f.restrict(to)).collect())
        .collect()
}

/// Ratio of the finite-difference residual on the lattice restricted to
/// every second node to the residual on the full lattice.
fn residual_order(fine: f64, coarse: f64) -> f64 {
    if fine <= ZERO && coarse <= ZERO {
        // an exact solution: report the trivially admissible ratio
        2.0
    } else {
        coarse / fine
    }
}

/// Largest d_{q+1}/d_q for q ≥ 10 over all rows (0 when too few sweeps).
pub fn late_increment_ratio(histories: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for h in histories {
        for q in 10..h.len().saturating_sub(1) {
            if h[q] > 0.0 {
                worst = worst.max(h[q + 1] / h[q]);
            }
        }
    }
    worst
}

/// Runs every check on `system`.
pub fn run_checks(system: &HyperbolicSystem, spec: &GridSpec, supplied: Supplied) -> Result<Vec<Check>> {
    use Bound::*;
    system.ensure_valid()?;
    spec.validate()?;
    let fresh_kernels = supplied.kernels.is_none();
    let kernels = match supplied.kernels {
        Some(k) => k,
        None => crate::kernels::solve_control_kernels(system, spec)?,
    };
    let fresh_observer = supplied.observer.is_none();
    let observer = match supplied.observer {
        Some(o) => o,
        None => crate::observer::solve_observer_kernels(system, spec)?,
    };
    let kspec = GridSpec {
        kernel_nx: kernels.grid().points(),
        ..*spec
    };
    let h = kernels.grid().h();
    let mut out = Vec::new();

    out.push(Check::new("control_kernel_diagonal", control_diagonal_error(system, &kernels), AtMost(1e-12)));
    out.push(Check::new("observer_kernel_diagonal", observer_diagonal_error(system, &observer), AtMost(1e-12)));
    out.push(Check::new(
        "control_fixed_point_residual",
        fixed_point_residual(system, &kernels)?,
        AtMost(10.0 * spec.picard_tol),
    ));
    out.push(Check::new(
        "observer_fixed_point_residual",
        fixed_point_residual(&crate::observer::dual_system(system), observer.dual())?,
        AtMost(10.0 * spec.picard_tol),
    ));

    if let Some(coarse) = kernels.grid().coarsened() {
        let kc = KernelSolution::from_fields(
            system,
            restrict_all(&kernels.k, coarse)?,
            restrict_all(&kernels.l, coarse)?,
        )?;
        let (rf, rc) = (control_residual(system, &kernels).max(), control_residual(system, &kc).max());
        out.push(Check::new("control_residual_order", residual_order(rf, rc), Between(1.6, 2.6)));
        let oc = ObserverSolution::from_fields(
            system,
            restrict_all(&observer.m_kernel, coarse)?,
            restrict_all(&observer.n_kernel, coarse)?,
        )?;
        let (rf, rc) = (observer_residual(system, &observer).max(), observer_residual(system, &oc).max());
        out.push(Check::new("observer_residual_order", residual_order(rf, rc), Between(1.6, 2.6)));
    }

    let (pp, pm) = gains_from_kernels(system, &observer.m_kernel, &observer.n_kernel);
    let gain_diff = pp
        .iter()
        .flatten()
        .flatten()
        .zip(observer.p_plus.iter().flatten().flatten())
        .chain(pm.iter().flatten().flatten().zip(observer.p_minus.iter().flatten().flatten()))
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs()));
    out.push(Check::new("observer_gain_consistency", gain_diff, AtMost(0.0)));

    if fresh_kernels {
        out.push(Check::new("control_picard_decay", late_increment_ratio(&kernels.histories), AtMost(0.5)));
    }
    if fresh_observer {
        out.push(Check::new("observer_picard_decay", late_increment_ratio(observer.histories()), AtMost(0.5)));
    }

    // round trip through the inverse transformation
    let resolvent = inverse_transform_resolvent(&kernels, &kspec)?;
    let g = kernels.grid();
    let profile = |k: usize| -> Vec<f64> {
        (0..g.points())
            .map(|a| {
                let x = g.coord(a);
                ((k + 1) as f64 * std::f64::consts::PI * x).sin() + 0.5 * x * x
            })
            .collect()
    };
    let u: Vec<Vec<f64>> = (0..system.n()).map(profile).collect();
    let v: Vec<Vec<f64>> = (0..system.m()).map(|k| profile(k + system.n())).collect();
    let (a, b) = transform_on_lattice(&kernels, &u, &v)?;
    let (u2, v2) = inverse_transform_on_lattice(&resolvent, &a, &b)?;
    let rt = sup_diff(&u, &u2).max(sup_diff(&v, &v2));
    out.push(Check::new("inverse_round_trip", rt, AtMost(5.0 * h)));

    // closed loop
    let tf = system.min_control_time();
    let grid = SimGrid::new(spec.nx)?;
    let dx = grid.dx();
    let ic = SimState::default_ic(system, grid);
    let sup0 = ic.sup_norm();
    let couplings = solve_target_couplings(&kernels, system, &kspec)?;
    let l = default_lyapunov_l(system);
    let delta = select_lyapunov_delta(system, &kernels, &couplings, l)?;
    let t_end = tf + 1.0;
    let samples: Vec<f64> = (0..=8).map(|k| k as f64 * t_end / 8.0).collect();
    let closed = simulate(
        system,
        spec,
        ControllerSpec::FullState(&kernels),
        &ic,
        t_end,
        &samples,
        SimOptions {
            lyapunov: Some(LyapunovWeights { delta, l }),
            target_boundary: true,
        },
    )?;
    let l0 = closed.l2[0];
    let ratio = |v: Option<f64>| if l0 > 0.0 { v.unwrap_or(f64::NAN) / l0 } else { 0.0 };
    out.push(Check::new("closed_loop_l2_ratio", ratio(closed.l2_at(tf + 0.25)), AtMost(0.05)));
    let beta1 = closed
        .target_boundary
        .as_ref()
        .map_or(f64::NAN, |b| b.iter().fold(0.0, |m: f64, v| m.max(*v)));
    out.push(Check::new("target_boundary_condition", beta1, AtMost(5.0 * dx * sup0)));

    let transform = CellTransform::new(&kernels, grid);
    let model = TargetModel::new(&kernels, &couplings, grid);
    let (a0, b0) = transform.forward(&ic.u, &ic.v);
    let target_ic = SimState {
        t: 0.0,
        u: a0,
        v: b0,
        hat_u: None,
        hat_v: None,
    };
    let target = simulate_target(system, &model, spec, &target_ic, t_end, &samples)?;
    let consistency = closed
        .snapshots
        .iter()
        .zip(&target.snapshots)
        .map(|(p, t)| {
            let (a, b) = transform.forward(&p.u, &p.v);
            sup_diff(&a, &t.u).max(sup_diff(&b, &t.v))
        })
        .fold(0.0, f64::max);
    out.push(Check::new("transformation_consistency", consistency, AtMost(5.0 * dx * sup0)));

    let vs = closed.lyapunov.as_deref().unwrap_or(&[]);
    let growth = vs
        .windows(2)
        .skip(1)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0] - 1.0)
        .fold(0.0, f64::max);
    out.push(Check::new("lyapunov_monotone", growth, AtMost(10.0 * dx)));

    // output feedback, with the observer error checked against its target system
    let of_samples: Vec<f64> = (0..=8).map(|k| k as f64 * (tf + 1.0) / 8.0).collect();
    let of = simulate(
        system,
        spec,
        ControllerSpec::OutputFeedback {
            kernels: &kernels,
            observer: &observer,
        },
        &ic.clone().with_zero_observer(),
        2.0 * tf + 0.5,
        &of_samples,
        SimOptions::default(),
    )?;
    let d = target_couplings_observer(&observer, system, &kspec)?;
    let model = ObserverErrorModel::new(&observer, &d, grid);
    let (eu, ev) = of.snapshots[0].estimation_error().expect("observer state");
    let err_sup0 = eu.iter().chain(&ev).flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let (a0, b0) = model.from_error(&eu, &ev);
    let error_ic = SimState {
        t: 0.0,
        u: a0,
        v: b0,
        hat_u: None,
        hat_v: None,
    };
    let error_target = simulate_observer_target(system, &model, spec, &error_ic, tf + 1.0, &of_samples)?;
    let obs_consistency = of
        .snapshots
        .iter()
        .zip(&error_target.snapshots)
        .map(|(p, t)| {
            let (eu, ev) = p.estimation_error().expect("observer state");
            let (mu, mv) = model.to_error(&t.u, &t.v);
            sup_diff(&eu, &mu).max(sup_diff(&ev, &mv))
        })
        .fold(0.0, f64::max);
    out.push(Check::new(
        "observer_error_consistency",
        obs_consistency,
        AtMost(5.0 * dx.max(h) * err_sup0),
    ));
    let e0 = of.observer_error.as_ref().map_or(0.0, |e| e[0]);
    let obs_ratio = if e0 > 0.0 {
        of.observer_error_at(tf + 0.25).unwrap_or(f64::NAN) / e0
    } else {
        0.0
    };
    out.push(Check::new("observer_error_ratio", obs_ratio, AtMost(0.05)));
    out.push(Check::new("output_feedback_l2_ratio", ratio(of.l2_at(2.0 * tf + 0.5)), AtMost(0.05)));
    Ok(out)
}

/// l = 2m·max|Q₀|, or 1 when Q₀ = 0 (any positive l is admissible then).
pub fn default_lyapunov_l(system: &HyperbolicSystem) -> f64 {
    let l = 2.0 * system.m() as f64 * system.q0.amax();
    if l > 0.0 {
        l
    } else {
        1.0
    }
}

fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}
