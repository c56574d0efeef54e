//! Explicit finite-volume simulation of the plant, the observer and the
//! target systems.
//!
//! Cells are uniform on [0, 1]; transport is first-order upwind with a shared
//! time step, sources are explicit, and inflow boundaries are imposed through
//! ghost cells. Spatial integrals use the midpoint rule on cells; the
//! cumulative integral ∫₀^{x_c} takes half of the current cell.

mod control;
mod observer_target;
mod target;

pub use control::{
    full_state_control, output_feedback_control, transform_to_target, CellTransform, FeedbackLaw,
};
pub use observer_target::{simulate_observer_target, ObserverErrorModel};
pub use target::{
    lyapunov_value, select_lyapunov_delta, simulate_target, LyapunovWeights, TargetModel,
};

use crate::error::{Error, Result};
use crate::kernels::KernelSolution;
use crate::observer::ObserverSolution;
use crate::system::{GridSpec, HyperbolicSystem};

/// Entries above this magnitude stop a run.
pub const BLOW_UP: f64 = 1e12;

/// Uniform cells on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    pub nx: usize,
}

impl SimGrid {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < 2 {
            return Err(Error::InvalidGrid("nx must be at least 2".into()));
        }
        Ok(SimGrid { nx })
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn centre(&self, c: usize) -> f64 {
        (c as f64 + 0.5) / self.nx as f64
    }

    pub fn centres(&self) -> Vec<f64> {
        (0..self.nx).map(|c| self.centre(c)).collect()
    }
}

/// Sampled state. `u[i][c]` is component i in cell c.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub hat_u: Option<Vec<Vec<f64>>>,
    pub hat_v: Option<Vec<Vec<f64>>>,
}

impl SimState {
    pub fn zeros(system: &HyperbolicSystem, grid: SimGrid) -> Self {
        SimState {
            t: 0.0,
            u: vec![vec![0.0; grid.nx]; system.n()],
            v: vec![vec![0.0; grid.nx]; system.m()],
            hat_u: None,
            hat_v: None,
        }
    }

    /// Every component equal to its amplitude times sin(πx).
    pub fn sine(system: &HyperbolicSystem, grid: SimGrid, amp_u: &[f64], amp_v: &[f64]) -> Result<Self> {
        if amp_u.len() != system.n() || amp_v.len() != system.m() {
            return Err(Error::Parameter(format!(
                "expected {} + {} amplitudes, got {} + {}",
                system.n(),
                system.m(),
                amp_u.len(),
                amp_v.len()
            )));
        }
        let profile: Vec<f64> = grid
            .centres()
            .iter()
            .map(|x| (std::f64::consts::PI * x).sin())
            .collect();
        let scale = |a: f64| profile.iter().map(|p| a * p).collect::<Vec<_>>();
        Ok(SimState {
            t: 0.0,
            u: amp_u.iter().map(|&a| scale(a)).collect(),
            v: amp_v.iter().map(|&a| scale(a)).collect(),
            hat_u: None,
            hat_v: None,
        })
    }

    /// Unit-amplitude sin(πx) in every component.
    pub fn default_ic(system: &HyperbolicSystem, grid: SimGrid) -> Self {
        Self::sine(system, grid, &vec![1.0; system.n()], &vec![1.0; system.m()]).expect("shapes")
    }

    pub fn from_fn(
        system: &HyperbolicSystem,
        grid: SimGrid,
        fu: impl Fn(usize, f64) -> f64,
        fv: impl Fn(usize, f64) -> f64,
    ) -> Self {
        let xs = grid.centres();
        SimState {
            t: 0.0,
            u: (0..system.n()).map(|i| xs.iter().map(|&x| fu(i, x)).collect()).collect(),
            v: (0..system.m()).map(|i| xs.iter().map(|&x| fv(i, x)).collect()).collect(),
            hat_u: None,
            hat_v: None,
        }
    }

    /// Adds a zero observer state.
    pub fn with_zero_observer(mut self) -> Self {
        self.hat_u = Some(self.u.iter().map(|c| vec![0.0; c.len()]).collect());
        self.hat_v = Some(self.v.iter().map(|c| vec![0.0; c.len()]).collect());
        self
    }

    pub fn nx(&self) -> usize {
        self.u.first().or(self.v.first()).map_or(0, Vec::len)
    }

    pub fn grid(&self) -> SimGrid {
        SimGrid { nx: self.nx() }
    }

    pub fn l2(&self) -> f64 {
        l2_norm(&self.u, &self.v)
    }

    /// (u − û, v − v̂), when an observer runs.
    #[allow(clippy::type_complexity)]
    pub fn estimation_error(&self) -> Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (hu, hv) = (self.hat_u.as_ref()?, self.hat_v.as_ref()?);
        Some((diff(&self.u, hu), diff(&self.v, hv)))
    }

    pub fn observer_error_l2(&self) -> Option<f64> {
        let (eu, ev) = self.estimation_error()?;
        Some(l2_norm(&eu, &ev))
    }

    pub fn sup_norm(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .flatten()
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    fn check_shape(&self, system: &HyperbolicSystem) -> Result<()> {
        let nx = self.nx();
        let ok = self.u.len() == system.n()
            && self.v.len() == system.m()
            && self.u.iter().chain(&self.v).all(|c| c.len() == nx)
            && match (&self.hat_u, &self.hat_v) {
                (None, None) => true,
                (Some(hu), Some(hv)) => {
                    hu.len() == system.n()
                        && hv.len() == system.m()
                        && hu.iter().chain(hv).all(|c| c.len() == nx)
                }
                _ => false,
            };
        if ok && nx >= 2 {
            Ok(())
        } else {
            Err(Error::GridMismatch("state shape does not match the system".into()))
        }
    }
}

pub(crate) fn diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect()
}

pub(crate) fn l2_norm(u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
    let nx = u.first().or(v.first()).map_or(1, Vec::len);
    let dx = 1.0 / nx as f64;
    let s: f64 = u.iter().chain(v).flatten().map(|x| x * x).sum();
    (s * dx).sqrt()
}

/// Largest stable time step for the given cells.
pub fn max_time_step(system: &HyperbolicSystem, grid: SimGrid, cfl: f64) -> f64 {
    cfl * grid.dx() / system.max_speed()
}

/// One upwind step of u_t + Λ⁺u_x = S_u, v_t − Λ⁻v_x = S_v with the given
/// ghost values at the inflow boundaries and precomputed source rates.
#[allow(clippy::too_many_arguments)]
pub(crate) fn advect(
    lambda: &[f64],
    mu: &[f64],
    u: &[Vec<f64>],
    v: &[Vec<f64>],
    ghost_u: &[f64],
    ghost_v: &[f64],
    src_u: &[Vec<f64>],
    src_v: &[Vec<f64>],
    dt: f64,
    dx: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let nu: Vec<Vec<f64>> = u
        .iter()
        .enumerate()
        .map(|(i, ui)| {
            let r = lambda[i] * dt / dx;
            (0..ui.len())
                .map(|c| {
                    let left = if c == 0 { ghost_u[i] } else { ui[c - 1] };
                    ui[c] - r * (ui[c] - left) + dt * src_u[i][c]
                })
                .collect()
        })
        .collect();
    let nv: Vec<Vec<f64>> = v
        .iter()
        .enumerate()
        .map(|(i, vi)| {
            let r = mu[i] * dt / dx;
            let nx = vi.len();
            (0..nx)
                .map(|c| {
                    let right = if c + 1 == nx { ghost_v[i] } else { vi[c + 1] };
                    vi[c] + r * (right - vi[c]) + dt * src_v[i][c]
                })
                .collect()
        })
        .collect();
    (nu, nv)
}

/// In-domain coupling rates Σ⁺⁺u + Σ⁺⁻v and Σ⁻⁺u + Σ⁻⁻v.
pub(crate) fn coupling_sources(
    system: &HyperbolicSystem,
    u: &[Vec<f64>],
    v: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let nx = u[0].len();
    let mix = |a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>, rows: usize| {
        (0..rows)
            .map(|i| {
                (0..nx)
                    .map(|c| {
                        let mut s = 0.0;
                        for (k, uk) in u.iter().enumerate() {
                            s += a[(i, k)] * uk[c];
                        }
                        for (k, vk) in v.iter().enumerate() {
                            s += b[(i, k)] * vk[c];
                        }
                        s
                    })
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
    };
    (
        mix(&system.sigma_pp, &system.sigma_pm, system.n()),
        mix(&system.sigma_mp, &system.sigma_mm, system.m()),
    )
}

fn check_step(system: &HyperbolicSystem, grid: SimGrid, dt: f64, cfl_max: f64) -> Result<()> {
    let max_dt = max_time_step(system, grid, cfl_max);
    if !(dt > 0.0) || dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, max_dt });
    }
    Ok(())
}

fn check_finite(fields: &[Vec<f64>], what: &str) -> Result<()> {
    if fields.iter().flatten().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Advances the plant by one step with boundary input `control`.
/// The observer part of the state, if any, is carried over unchanged.
pub fn step_plant(
    state: &SimState,
    system: &HyperbolicSystem,
    control: &[f64],
    dt: f64,
) -> Result<SimState> {
    state.check_shape(system)?;
    let grid = state.grid();
    check_step(system, grid, dt, 1.0)?;
    if control.len() != system.m() || control.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("control must be a finite m-vector".into()));
    }
    let nx = grid.nx;
    let v0: Vec<f64> = state.v.iter().map(|c| c[0]).collect();
    let u1: Vec<f64> = state.u.iter().map(|c| c[nx - 1]).collect();
    let ghost_u = mat_vec(&system.q0, &v0);
    let mut ghost_v = mat_vec(&system.r1, &u1);
    for (g, c) in ghost_v.iter_mut().zip(control) {
        *g += c;
    }
    let (su, sv) = coupling_sources(system, &state.u, &state.v);
    let (u, v) = advect(
        &system.lambda,
        &system.mu,
        &state.u,
        &state.v,
        &ghost_u,
        &ghost_v,
        &su,
        &sv,
        dt,
        grid.dx(),
    );
    check_finite(&u, "plant state")?;
    check_finite(&v, "plant state")?;
    Ok(SimState {
        t: state.t + dt,
        u,
        v,
        hat_u: state.hat_u.clone(),
        hat_v: state.hat_v.clone(),
    })
}

/// Output-injection gains sampled at cell centres.
#[derive(Debug, Clone)]
pub struct CellGains {
    /// `plus[i][j][c]`, n×m.
    pub plus: Vec<Vec<Vec<f64>>>,
    /// `minus[i][j][c]`, m×m.
    pub minus: Vec<Vec<Vec<f64>>>,
}

impl CellGains {
    pub fn new(obs: &ObserverSolution, grid: SimGrid) -> Self {
        let xs = grid.centres();
        let sample = |rows: usize, cols: usize, f: &dyn Fn(usize, usize, f64) -> f64| {
            (0..rows)
                .map(|i| {
                    (0..cols)
                        .map(|j| xs.iter().map(|&x| f(i, j, x)).collect())
                        .collect()
                })
                .collect()
        };
        let n = obs.m_kernel.len();
        let m = obs.n_kernel.len();
        CellGains {
            plus: sample(n, m, &|i, j, x| obs.eval_p_plus(i, j, x)),
            minus: sample(m, m, &|i, j, x| obs.eval_p_minus(i, j, x)),
        }
    }

    pub fn zeros(system: &HyperbolicSystem, grid: SimGrid) -> Self {
        let (n, m) = (system.n(), system.m());
        CellGains {
            plus: vec![vec![vec![0.0; grid.nx]; m]; n],
            minus: vec![vec![vec![0.0; grid.nx]; m]; m],
        }
    }
}

/// Advances the observer by one step, given the measurement y = v(t, 0).
/// The plant part of the state is carried over unchanged.
pub fn step_observer(
    state: &SimState,
    measurement: &[f64],
    system: &HyperbolicSystem,
    gains: &CellGains,
    control: &[f64],
    dt: f64,
) -> Result<SimState> {
    state.check_shape(system)?;
    let (hu, hv) = match (&state.hat_u, &state.hat_v) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Parameter("state carries no observer".into())),
    };
    let grid = state.grid();
    check_step(system, grid, dt, 1.0)?;
    if measurement.len() != system.m() || measurement.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("measurement".into()));
    }
    if control.len() != system.m() || control.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("control must be a finite m-vector".into()));
    }
    let nx = grid.nx;
    let innovation: Vec<f64> = hv.iter().zip(measurement).map(|(c, y)| c[0] - y).collect();
    let ghost_u = mat_vec(&system.q0, measurement);
    let hu1: Vec<f64> = hu.iter().map(|c| c[nx - 1]).collect();
    let mut ghost_v = mat_vec(&system.r1, &hu1);
    for (g, c) in ghost_v.iter_mut().zip(control) {
        *g += c;
    }
    let (mut su, mut sv) = coupling_sources(system, hu, hv);
    for (i, row) in su.iter_mut().enumerate() {
        for (j, e) in innovation.iter().enumerate() {
            for (c, s) in row.iter_mut().enumerate() {
                *s -= gains.plus[i][j][c] * e;
            }
        }
    }
    for (i, row) in sv.iter_mut().enumerate() {
        for (j, e) in innovation.iter().enumerate() {
            for (c, s) in row.iter_mut().enumerate() {
                *s -= gains.minus[i][j][c] * e;
            }
        }
    }
    let (u, v) = advect(
        &system.lambda,
        &system.mu,
        hu,
        hv,
        &ghost_u,
        &ghost_v,
        &su,
        &sv,
        dt,
        grid.dx(),
    );
    check_finite(&u, "observer state")?;
    check_finite(&v, "observer state")?;
    Ok(SimState {
        t: state.t + dt,
        u: state.u.clone(),
        v: state.v.clone(),
        hat_u: Some(u),
        hat_v: Some(v),
    })
}

pub(crate) fn mat_vec(a: &nalgebra::DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|i| (0..a.ncols()).map(|k| a[(i, k)] * x[k]).sum())
        .collect()
}

/// Which boundary input drives the plant.
#[derive(Debug, Clone, Copy)]
pub enum ControllerSpec<'a> {
    OpenLoop,
    FullState(&'a KernelSolution),
    OutputFeedback {
        kernels: &'a KernelSolution,
        observer: &'a ObserverSolution,
    },
}

impl ControllerSpec<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerSpec::OpenLoop => "open_loop",
            ControllerSpec::FullState(_) => "full_state",
            ControllerSpec::OutputFeedback { .. } => "output_feedback",
        }
    }
}

/// Optional diagnostics of [`simulate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SimOptions {
    /// Record the Lyapunov functional of the transformed state; needs
    /// control kernels.
    pub lyapunov: Option<LyapunovWeights>,
    /// Record max_i |β_i(t, 1)| of the transformed state; needs control
    /// kernels.
    pub target_boundary: bool,
}

/// Time series produced by a run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub lyapunov: Option<Vec<f64>>,
    /// Boundary input applied from each sample time on.
    pub controls: Vec<Vec<f64>>,
    /// L2 norm of the observer error, when an observer runs.
    pub observer_error: Option<Vec<f64>>,
    /// max_i |β_i(t, 1)|, when requested.
    pub target_boundary: Option<Vec<f64>>,
    pub snapshots: Vec<SimState>,
    /// Set when the run stopped early on blow-up.
    pub truncated: bool,
}

impl Trajectory {
    /// L2 norm at time `t`, linearly interpolated between samples.
    pub fn l2_at(&self, t: f64) -> Option<f64> {
        interp_series(&self.times, &self.l2, t)
    }

    pub fn observer_error_at(&self, t: f64) -> Option<f64> {
        interp_series(&self.times, self.observer_error.as_ref()?, t)
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

fn interp_series(times: &[f64], vals: &[f64], t: f64) -> Option<f64> {
    let last = *times.last()?;
    if t < times[0] || t > last + 1e-12 {
        return None;
    }
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        return Some(vals[0]);
    }
    if k >= times.len() {
        return Some(vals[times.len() - 1]);
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    Some((1.0 - w) * vals[k - 1] + w * vals[k])
}

/// Time-step count and step size so that the last step lands on `t_end`.
pub fn time_steps(system: &HyperbolicSystem, grid: SimGrid, cfl: f64, t_end: f64) -> (usize, f64) {
    if t_end <= 0.0 {
        return (0, 0.0);
    }
    let dt_max = max_time_step(system, grid, cfl);
    let steps = (t_end / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (steps, t_end / steps as f64)
}

/// Runs the plant (and observer, in output-feedback mode) from `initial` to
/// `t_end`. Snapshots are taken at the first sample at or after each
/// requested time.
pub fn simulate(
    system: &HyperbolicSystem,
    spec: &GridSpec,
    controller: ControllerSpec<'_>,
    initial: &SimState,
    t_end: f64,
    snapshot_times: &[f64],
    options: SimOptions,
) -> Result<Trajectory> {
    system.ensure_valid()?;
    spec.validate()?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::Parameter("t_end must be finite and non-negative".into()));
    }
    let grid = SimGrid::new(spec.nx)?;
    if initial.nx() != spec.nx {
        return Err(Error::GridMismatch(format!(
            "initial condition has {} cells, grid has {}",
            initial.nx(),
            spec.nx
        )));
    }
    initial.check_shape(system)?;

    let mut state = initial.clone();
    state.t = 0.0;
    let (law, gains) = match controller {
        ControllerSpec::OpenLoop => (None, None),
        ControllerSpec::FullState(k) => (Some(FeedbackLaw::new(k, system, grid)), None),
        ControllerSpec::OutputFeedback { kernels, observer } => {
            if state.hat_u.is_none() {
                state = state.with_zero_observer();
            }
            (
                Some(FeedbackLaw::new(kernels, system, grid)),
                Some(CellGains::new(observer, grid)),
            )
        }
    };
    let wants_transform = options.lyapunov.is_some() || options.target_boundary;
    let transform = match controller {
        _ if !wants_transform => None,
        ControllerSpec::FullState(k) | ControllerSpec::OutputFeedback { kernels: k, .. } => {
            Some(CellTransform::new(k, grid))
        }
        ControllerSpec::OpenLoop => {
            return Err(Error::Parameter(
                "target-state diagnostics need control kernels".into(),
            ))
        }
    };

    let control_of = |s: &SimState| -> Result<Vec<f64>> {
        match (&law, controller) {
            (None, _) => Ok(vec![0.0; system.m()]),
            (Some(l), ControllerSpec::OutputFeedback { .. }) => output_feedback_control(s, l),
            (Some(l), _) => Ok(full_state_control(s, l)),
        }
    };

    let (steps, dt) = time_steps(system, grid, spec.cfl, t_end);
    let mut traj = Trajectory {
        lyapunov: options.lyapunov.map(|_| Vec::with_capacity(steps + 1)),
        observer_error: gains.as_ref().map(|_| Vec::with_capacity(steps + 1)),
        target_boundary: options.target_boundary.then(|| Vec::with_capacity(steps + 1)),
        ..Trajectory::default()
    };
    let mut pending: Vec<f64> = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let mut next_snap = 0;

    for k in 0..=steps {
        let control = control_of(&state)?;
        traj.times.push(state.t);
        traj.l2.push(state.l2());
        if let (Some(w), Some(tr), Some(vs)) = (options.lyapunov, &transform, traj.lyapunov.as_mut()) {
            let (a, b) = tr.forward(&state.u, &state.v);
            vs.push(lyapunov_value(&a, &b, system, w)?);
        }
        if let (Some(tr), Some(bs)) = (&transform, traj.target_boundary.as_mut()) {
            let beta1 = tr.boundary_beta(&state, &control, system);
            bs.push(beta1.iter().fold(0.0, |m: f64, b| m.max(b.abs())));
        }
        if let Some(e) = traj.observer_error.as_mut() {
            e.push(state.observer_error_l2().unwrap_or(0.0));
        }
        traj.controls.push(control.clone());
        while next_snap < pending.len() && pending[next_snap] <= state.t + 0.5 * dt.max(0.0) {
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
        let y: Vec<f64> = state.v.iter().map(|c| c[0]).collect();
        let mut next = step_plant(&state, system, &control, dt)?;
        if let Some(g) = &gains {
            let obs = step_observer(&state, &y, system, g, &control, dt)?;
            next.hat_u = obs.hat_u;
            next.hat_v = obs.hat_v;
        }
        // keep sample times exact multiples of dt
        next.t = (k + 1) as f64 * dt;
        state = next;
    }
    Ok(traj)
}
