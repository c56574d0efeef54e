//! Acceptance criteria 1–11. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use hypstab_core::grid::TriangleGrid;
use hypstab_core::observer::target_couplings_observer;
use hypstab_core::residual::{control_residual, observer_residual};
use hypstab_core::sim::{
    select_lyapunov_delta, simulate, simulate_observer_target, simulate_target, CellTransform, ControllerSpec,
    LyapunovWeights, ObserverErrorModel, SimGrid, SimOptions, SimState, TargetModel, Trajectory,
};
use hypstab_core::verify::{control_diagonal_error, default_lyapunov_l, late_increment_ratio, observer_diagonal_error};
use hypstab_core::volterra::{
    inverse_transform_on_lattice, inverse_transform_resolvent, solve_target_couplings, transform_on_lattice,
};
use hypstab_core::{solve_control_kernels, solve_observer_kernels, GridSpec, HyperbolicSystem, KernelSolution, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_system, smooth_profile, sup, sup_diff};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn spec(nx: usize, kernel_nx: usize) -> GridSpec {
    GridSpec {
        nx,
        kernel_nx,
        ..GridSpec::default()
    }
}

fn closed_loop(
    sys: &HyperbolicSystem,
    kernels: &KernelSolution,
    nx: usize,
    t_end: f64,
    samples: &[f64],
    options: SimOptions,
) -> Result<(Trajectory, SimState)> {
    let s = spec(nx, kernels.grid().points());
    let ic = SimState::default_ic(sys, SimGrid::new(nx)?);
    let traj = simulate(sys, &s, ControllerSpec::FullState(kernels), &ic, t_end, samples, options)?;
    Ok((traj, ic))
}

fn ratio_at(traj: &Trajectory, t: f64) -> f64 {
    traj.l2_at(t).unwrap_or(f64::NAN) / traj.l2[0]
}

fn closed_loop_reproduction(sys: &HyperbolicSystem, kernels: &KernelSolution) -> Result<Outcome> {
    let (coarse, _) = closed_loop(sys, kernels, 400, 3.0, &[], SimOptions::default())?;
    let (fine, _) = closed_loop(sys, kernels, 800, 2.25, &[], SimOptions::default())?;
    let (r225, r3, r225_fine) = (ratio_at(&coarse, 2.25), ratio_at(&coarse, 3.0), ratio_at(&fine, 2.25));
    Ok(outcome(
        r225 <= 0.05 && r3 <= 0.01 && r225_fine < r225,
        format!("L2(2.25)/L2(0)={r225:.3e} (≤0.05), L2(3)/L2(0)={r3:.3e} (≤0.01), nx=800: {r225_fine:.3e} (<nx=400)"),
    ))
}

fn open_loop_divergence(sys: &HyperbolicSystem) -> Result<Outcome> {
    let s = spec(400, 129);
    let ic = SimState::default_ic(sys, SimGrid::new(400)?);
    let traj = simulate(sys, &s, ControllerSpec::OpenLoop, &ic, 4.0, &[], SimOptions::default())?;
    let (l1, l4) = (traj.l2_at(1.0).unwrap_or(f64::NAN), traj.l2_at(4.0).unwrap_or(f64::NAN));
    Ok(outcome(l4 > 10.0 * l1, format!("L2(4)/L2(1)={:.3e} (>10)", l4 / l1)))
}

fn boundary_exactness(sys: &HyperbolicSystem, kernels: &KernelSolution) -> Result<Outcome> {
    let observer = solve_observer_kernels(sys, &spec(400, 129))?;
    let ce = control_diagonal_error(sys, kernels);
    let oe = observer_diagonal_error(sys, &observer);
    let spot = kernels.k[1][0]
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max((v + 1.0 / 3.0).abs()));
    Ok(outcome(
        ce <= 1e-12 && oe <= 1e-12 && spot <= 1e-12,
        format!("K,L diag err={ce:.2e}, M,N diag err={oe:.2e}, |K21(x,x)+1/3|={spot:.2e} (all ≤1e-12)"),
    ))
}

fn residual_orders(sys: &HyperbolicSystem) -> Result<(f64, f64)> {
    let mut res = Vec::new();
    for kn in [65, 129] {
        let s = spec(400, kn);
        let k = solve_control_kernels(sys, &s)?;
        let o = solve_observer_kernels(sys, &s)?;
        res.push((control_residual(sys, &k).max(), observer_residual(sys, &o).max()));
    }
    Ok((res[0].0 / res[1].0, res[0].1 / res[1].1))
}

fn kernel_residuals(bench: &HyperbolicSystem) -> Result<Outcome> {
    let mut systems = vec![("benchmark".to_string(), bench.clone())];
    for seed in [1, 2, 3] {
        let sys = random_system(seed);
        systems.push((format!("seed{seed}({}+{})", sys.n(), sys.m()), sys));
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, sys) in &systems {
        let (c, o) = residual_orders(sys)?;
        ok &= (1.6..=2.6).contains(&c) && (1.6..=2.6).contains(&o);
        parts.push(format!("{name}: {c:.3}/{o:.3}"));
    }
    Ok(outcome(ok, format!("residual ratio h→h/2 control/observer in [1.6,2.6]: {}", parts.join(", "))))
}

fn picard_decay(sys: &HyperbolicSystem, kernels: &KernelSolution) -> Result<Outcome> {
    let observer = solve_observer_kernels(sys, &spec(400, 129))?;
    let c = late_increment_ratio(&kernels.histories);
    let o = late_increment_ratio(observer.histories());
    Ok(outcome(
        c <= 0.5 && o <= 0.5,
        format!("max d_(q+1)/d_q for q≥10: control={c:.3e}, observer={o:.3e} (≤0.5)"),
    ))
}

/// Criteria 6, 7 and 11 share one closed-loop run.
fn target_checks(sys: &HyperbolicSystem, kernels: &KernelSolution) -> Result<[Outcome; 3]> {
    let nx = 400;
    let grid = SimGrid::new(nx)?;
    let h = grid.dx();
    let s = spec(nx, kernels.grid().points());
    let couplings = solve_target_couplings(kernels, sys, &s)?;
    let l = default_lyapunov_l(sys);
    let delta = select_lyapunov_delta(sys, kernels, &couplings, l)?;
    let t_end = 3.0;
    let samples: Vec<f64> = (0..=24).map(|k| k as f64 * t_end / 24.0).collect();
    let (traj, ic) = closed_loop(
        sys,
        kernels,
        nx,
        t_end,
        &samples,
        SimOptions {
            lyapunov: Some(LyapunovWeights { delta, l }),
            target_boundary: true,
        },
    )?;
    let sup0 = ic.sup_norm();

    let transform = CellTransform::new(kernels, grid);
    let model = TargetModel::new(kernels, &couplings, grid);
    let (a0, b0) = transform.forward(&ic.u, &ic.v);
    let target_ic = SimState {
        t: 0.0,
        u: a0,
        v: b0,
        hat_u: None,
        hat_v: None,
    };
    let target = simulate_target(sys, &model, &s, &target_ic, t_end, &samples)?;
    let consistency = traj
        .snapshots
        .iter()
        .zip(&target.snapshots)
        .map(|(p, t)| {
            let (a, b) = transform.forward(&p.u, &p.v);
            sup_diff(&a, &t.u).max(sup_diff(&b, &t.v))
        })
        .fold(0.0, f64::max);
    let bound = 5.0 * h * sup0;
    let c6 = outcome(
        consistency <= bound && traj.snapshots.len() == samples.len(),
        format!(
            "max over {} samples of |T[plant] − target|={consistency:.3e} (≤{bound:.3e})",
            traj.snapshots.len()
        ),
    );

    let beta1 = traj.target_boundary.as_deref().unwrap_or(&[]).iter().fold(0.0f64, |m, v| m.max(*v));
    let c7 = outcome(beta1 <= bound, format!("max_t |β(t,1)|={beta1:.3e} (≤{bound:.3e})"));

    let vs = traj.lyapunov.as_deref().unwrap_or(&[]);
    let worst = vs
        .windows(2)
        .skip(1)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .fold(0.0, f64::max);
    let c11 = outcome(
        !vs.is_empty() && worst <= 1.0 + 10.0 * h,
        format!("δ={delta}, l={l}: max V(t_k+1)/V(t_k)={worst:.6} (≤{:.6})", 1.0 + 10.0 * h),
    );
    Ok([c6, c11, c7])
}

fn round_trip(sys: &HyperbolicSystem, kernels: &KernelSolution) -> Result<Outcome> {
    let resolvent = inverse_transform_resolvent(kernels, &spec(400, kernels.grid().points()))?;
    let g: TriangleGrid = kernels.grid();
    let xs: Vec<f64> = (0..g.points()).map(|a| g.coord(a)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u: Vec<Vec<f64>> = (0..sys.n()).map(|_| smooth_profile(&mut rng, &xs)).collect();
        let v: Vec<Vec<f64>> = (0..sys.m()).map(|_| smooth_profile(&mut rng, &xs)).collect();
        let (a, b) = transform_on_lattice(kernels, &u, &v)?;
        let (u2, v2) = inverse_transform_on_lattice(&resolvent, &a, &b)?;
        worst = worst.max(sup_diff(&u, &u2).max(sup_diff(&v, &v2)));
    }
    let bound = 5.0 * g.h();
    Ok(outcome(worst <= bound, format!("20 states, max sup error={worst:.3e} (≤{bound:.3e})")))
}

/// Criteria 9 and 10 share one output-feedback run.
fn output_feedback(sys: &HyperbolicSystem, kernels: &KernelSolution) -> Result<[Outcome; 2]> {
    let s = spec(400, 129);
    let observer = solve_observer_kernels(sys, &s)?;
    let ic = SimState::default_ic(sys, SimGrid::new(400)?).with_zero_observer();
    let traj = simulate(
        sys,
        &s,
        ControllerSpec::OutputFeedback {
            kernels,
            observer: &observer,
        },
        &ic,
        4.5,
        &[],
        SimOptions::default(),
    )?;
    let e = traj.observer_error.as_deref().unwrap_or(&[]);
    let er = traj.observer_error_at(2.25).unwrap_or(f64::NAN) / e.first().copied().unwrap_or(f64::NAN);
    let lr = ratio_at(&traj, 4.5);
    Ok([
        outcome(er <= 0.05, format!("‖(ũ,ṽ)‖(2.25)/‖(ũ,ṽ)‖(0)={er:.3e} (≤0.05)")),
        outcome(lr <= 0.05, format!("L2(4.5)/L2(0)={lr:.3e} (≤0.05)")),
    ])
}

/// Not a numbered criterion: the estimation error tracks its target system.
fn observer_error_consistency(sys: &HyperbolicSystem) -> Result<Outcome> {
    let s = spec(400, 129);
    let grid = SimGrid::new(400)?;
    let kernels = solve_control_kernels(sys, &s)?;
    let observer = solve_observer_kernels(sys, &s)?;
    let samples: Vec<f64> = (0..=12).map(|k| k as f64 * 0.25).collect();
    let ic = SimState::default_ic(sys, grid).with_zero_observer();
    let traj = simulate(
        sys,
        &s,
        ControllerSpec::OutputFeedback {
            kernels: &kernels,
            observer: &observer,
        },
        &ic,
        3.0,
        &samples,
        SimOptions::default(),
    )?;
    let d = target_couplings_observer(&observer, sys, &s)?;
    let model = ObserverErrorModel::new(&observer, &d, grid);
    let (eu, ev) = traj.snapshots[0].estimation_error().expect("observer state");
    let e0 = sup(&eu).max(sup(&ev));
    let (a, b) = model.from_error(&eu, &ev);
    let init = SimState {
        t: 0.0,
        u: a,
        v: b,
        hat_u: None,
        hat_v: None,
    };
    let target = simulate_observer_target(sys, &model, &s, &init, 3.0, &samples)?;
    let worst = traj
        .snapshots
        .iter()
        .zip(&target.snapshots)
        .map(|(p, t)| {
            let (eu, ev) = p.estimation_error().expect("observer state");
            let (mu, mv) = model.to_error(&t.u, &t.v);
            sup_diff(&eu, &mu).max(sup_diff(&ev, &mv))
        })
        .fold(0.0, f64::max);
    let bound = 5.0 * grid.dx().max(kernels.grid().h()) * e0;
    Ok(outcome(worst <= bound, format!("max |error − mapped target|={worst:.3e} (≤{bound:.3e})")))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let sys = HyperbolicSystem::benchmark_2x2();
    let kernels = solve_control_kernels(&sys, &spec(400, 129)).expect("benchmark kernels");
    let mut results: Vec<(String, std::result::Result<Outcome, String>)> = Vec::new();
    let mut push = |name: &str, r: std::result::Result<Outcome, String>| results.push((name.to_string(), r));

    push("1 closed-loop reproduction", closed_loop_reproduction(&sys, &kernels).map_err(|e| e.to_string()));
    push("2 open-loop divergence", open_loop_divergence(&sys).map_err(|e| e.to_string()));
    push("3 kernel boundary exactness", boundary_exactness(&sys, &kernels).map_err(|e| e.to_string()));
    push("4 kernel PDE residual order", kernel_residuals(&sys).map_err(|e| e.to_string()));
    push("5 Picard increment decay", picard_decay(&sys, &kernels).map_err(|e| e.to_string()));
    match target_checks(&sys, &kernels) {
        Ok([c6, c11, c7]) => {
            push("6 transformation consistency", Ok(c6));
            push("7 target boundary condition", Ok(c7));
            push("11 Lyapunov monotonicity", Ok(c11));
        }
        Err(e) => {
            for name in ["6 transformation consistency", "7 target boundary condition", "11 Lyapunov monotonicity"] {
                push(name, Err(e.to_string()));
            }
        }
    }
    push("8 inverse round trip", round_trip(&sys, &kernels).map_err(|e| e.to_string()));
    match output_feedback(&sys, &kernels) {
        Ok([c9, c10]) => {
            push("9 observer convergence", Ok(c9));
            push("10 output feedback", Ok(c10));
        }
        Err(e) => {
            push("9 observer convergence", Err(e.to_string()));
            push("10 output feedback", Err(e.to_string()));
        }
    }
    push("observer error consistency", observer_error_consistency(&sys).map_err(|e| e.to_string()));

    results.sort_by_key(|(name, _)| name.split(' ').next().and_then(|n| n.parse::<u32>().ok()).unwrap_or(u32::MAX));
    let mut failed = 0;
    for (name, r) in &results {
        let (passed, detail) = match r {
            Ok(o) => (o.passed, o.detail.clone()),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!("{} criterion {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed in {:.1?}", results.len() - failed, start.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
