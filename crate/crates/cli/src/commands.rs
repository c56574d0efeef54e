use std::fs;
use std::path::Path;

use hypstab_core::grid::{TriField, TriangleGrid};
use hypstab_core::io::{
    fields_from_records, read_dump, write_convergence, write_snapshots, write_trajectory,
    ConvergenceEntry, DumpWriter, KernelRecord, ProfileAxis,
};
use hypstab_core::sim::{
    select_lyapunov_delta, simulate, ControllerSpec, LyapunovWeights, SimGrid, SimOptions,
    SimState,
};
use hypstab_core::verify::{
    control_diagonal_error, default_lyapunov_l, observer_diagonal_error, run_checks, Bound,
    Check, Supplied,
};
use hypstab_core::volterra::solve_target_couplings;
use hypstab_core::{
    solve_control_kernels, solve_observer_kernels, Error, HyperbolicSystem, KernelSolution,
    ObserverSolution,
};

use crate::config::{InitialCondition, Mode, Preset, Resolved, RunConfig};

/// Command failure, carrying the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    NonConvergence(String),
    Verification(usize),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::NonConvergence(_) => 3,
            Failure::Verification(_) => 4,
            Failure::Io(_) => 5,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::NonConvergence(m) => write!(f, "{m}"),
            Failure::Verification(k) => write!(f, "{k} verification check(s) failed"),
            Failure::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NonConvergence { .. } | Error::NonFinite(_) | Error::Cfl { .. } => {
                Failure::NonConvergence(msg)
            }
            Error::Io(_) | Error::Format(_) => Failure::Io(msg),
            _ => Failure::Config(msg),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Files are rendered in memory first so a failing run leaves no partial
/// output behind.
fn write_all(out: &Path, files: &[(String, Vec<u8>)]) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for (name, data) in files {
        let p = out.join(name);
        fs::write(&p, data).map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

fn dump(f: impl FnOnce(&mut DumpWriter<&mut Vec<u8>>) -> hypstab_core::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    let mut w = DumpWriter::new(&mut buf)?;
    f(&mut w)?;
    w.finish()?;
    Ok(buf)
}

pub const K_FILE: &str = "K.csv";
pub const L_FILE: &str = "L.csv";
pub const M_FILE: &str = "M.csv";
pub const N_FILE: &str = "N.csv";
pub const GAINS_FILE: &str = "observer_gains.csv";

pub fn cmd_kernels(cfg: &RunConfig, r: &Resolved, out: &Path) -> Result<(), Failure> {
    let sys = &r.system;
    let kernels = solve_control_kernels(sys, &r.grid)?;
    let couplings = solve_target_couplings(&kernels, sys, &r.grid)?;
    let observer = if cfg.controller.observer {
        Some(solve_observer_kernels(sys, &r.grid)?)
    } else {
        None
    };
    let grid = kernels.grid();

    let mut files = vec![
        (K_FILE.to_string(), dump(|w| w.fields("K", &kernels.k))?),
        (L_FILE.to_string(), dump(|w| w.fields("L", &kernels.l))?),
        ("Omega.csv".to_string(), dump(|w| w.profiles("Omega", grid, ProfileAxis::Diagonal, &kernels.omega))?),
        ("Cplus.csv".to_string(), dump(|w| w.fields("Cplus", &couplings.c_plus.to_nested()))?),
        ("Cminus.csv".to_string(), dump(|w| w.fields("Cminus", &couplings.c_minus.to_nested()))?),
    ];
    let mut report: Vec<ConvergenceEntry> = kernels
        .histories
        .iter()
        .enumerate()
        .map(|(i, h)| ConvergenceEntry {
            stage: "control kernels".into(),
            row: Some(i),
            history: h.clone(),
        })
        .collect();
    report.push(ConvergenceEntry {
        stage: "target couplings".into(),
        row: None,
        history: couplings.history.clone(),
    });
    if let Some(o) = &observer {
        files.push((M_FILE.to_string(), dump(|w| w.fields("M", &o.m_kernel))?));
        files.push((N_FILE.to_string(), dump(|w| w.fields("N", &o.n_kernel))?));
        files.push((
            GAINS_FILE.to_string(),
            dump(|w| {
                w.profiles("Pplus", grid, ProfileAxis::Edge, &o.p_plus)?;
                w.profiles("Pminus", grid, ProfileAxis::Edge, &o.p_minus)
            })?,
        ));
        // observer rows are numbered by the column of N they determine
        report.extend(o.histories().iter().enumerate().map(|(i, h)| ConvergenceEntry {
            stage: "observer kernels".into(),
            row: Some(i),
            history: h.clone(),
        }));
    }
    let mut conv = Vec::new();
    write_convergence(&mut conv, &report)?;
    files.push(("convergence.csv".to_string(), conv));
    write_all(out, &files)?;

    println!(
        "control kernels: {} sweeps, final increment {:e}",
        kernels.iterations_used, kernels.final_increment
    );
    if let Some(o) = &observer {
        println!(
            "observer kernels: {} sweeps, final increment {:e}",
            o.iterations_used(),
            o.final_increment()
        );
    }
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn read_records(path: &Path) -> Result<Option<Vec<KernelRecord>>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_dump(file).map(Some).map_err(|e| io_err(path, e))
}

fn load_fields(dir: &Path, file: &str, name: &str, rows: usize, cols: usize) -> Result<Option<Vec<Vec<TriField>>>, Failure> {
    let path = dir.join(file);
    match read_records(&path)? {
        None => Ok(None),
        Some(recs) => fields_from_records(&recs, name, rows, cols)
            .map(Some)
            .map_err(|e| io_err(&path, e)),
    }
}

pub fn load_control(dir: &Path, sys: &HyperbolicSystem) -> Result<Option<KernelSolution>, Failure> {
    let (n, m) = (sys.n(), sys.m());
    match (load_fields(dir, K_FILE, "K", m, n)?, load_fields(dir, L_FILE, "L", m, m)?) {
        (Some(k), Some(l)) => Ok(Some(KernelSolution::from_fields(sys, k, l)?)),
        _ => Ok(None),
    }
}

pub fn load_observer(dir: &Path, sys: &HyperbolicSystem) -> Result<Option<ObserverSolution>, Failure> {
    let (n, m) = (sys.n(), sys.m());
    match (load_fields(dir, M_FILE, "M", n, m)?, load_fields(dir, N_FILE, "N", m, m)?) {
        (Some(mk), Some(nk)) => Ok(Some(ObserverSolution::from_fields(sys, mk, nk)?)),
        _ => Ok(None),
    }
}

/// Dumps are reused only when they sit on the configured lattice and carry
/// this system's boundary data; anything else is re-solved.
fn matches_config(grid: TriangleGrid, r: &Resolved, diag_err: f64) -> bool {
    grid.points() == r.grid.kernel_nx && diag_err <= 1e-12
}

fn control_for(dir: &Path, r: &Resolved) -> Result<KernelSolution, Failure> {
    if let Some(k) = load_control(dir, &r.system)? {
        if matches_config(k.grid(), r, control_diagonal_error(&r.system, &k)) {
            return Ok(k);
        }
        eprintln!("control kernel dumps do not match the configuration; solving");
    }
    Ok(solve_control_kernels(&r.system, &r.grid)?)
}

fn observer_for(dir: &Path, r: &Resolved) -> Result<ObserverSolution, Failure> {
    if let Some(o) = load_observer(dir, &r.system)? {
        if matches_config(o.grid(), r, observer_diagonal_error(&r.system, &o)) {
            return Ok(o);
        }
        eprintln!("observer kernel dumps do not match the configuration; solving");
    }
    Ok(solve_observer_kernels(&r.system, &r.grid)?)
}

pub fn initial_state(cfg: &RunConfig, r: &Resolved) -> Result<SimState, Failure> {
    let grid = SimGrid::new(r.grid.nx)?;
    Ok(match &cfg.controller.ic {
        InitialCondition::Preset(Preset::Sine) => SimState::default_ic(&r.system, grid),
        InitialCondition::Preset(Preset::Zero) => SimState::zeros(&r.system, grid),
        InitialCondition::Amplitudes { u, v } => SimState::sine(&r.system, grid, u, v)?,
    })
}

pub fn cmd_simulate(cfg: &RunConfig, r: &Resolved, out: &Path) -> Result<(), Failure> {
    let sys = &r.system;
    let ic = initial_state(cfg, r)?;
    let kernels = match cfg.controller.mode {
        Mode::OpenLoop => None,
        _ => Some(control_for(out, r)?),
    };
    let observer = match cfg.controller.mode {
        Mode::OutputFeedback => Some(observer_for(out, r)?),
        _ => None,
    };
    let controller = match (cfg.controller.mode, &kernels, &observer) {
        (Mode::FullState, Some(k), _) => ControllerSpec::FullState(k),
        (Mode::OutputFeedback, Some(k), Some(o)) => ControllerSpec::OutputFeedback {
            kernels: k,
            observer: o,
        },
        _ => ControllerSpec::OpenLoop,
    };
    let lyapunov = match &kernels {
        None => None,
        Some(k) => {
            let l = cfg.controller.l.unwrap_or_else(|| default_lyapunov_l(sys));
            let delta = match cfg.controller.delta {
                Some(d) => d,
                None => {
                    let c = solve_target_couplings(k, sys, &r.grid)?;
                    select_lyapunov_delta(sys, k, &c, l)?
                }
            };
            Some(LyapunovWeights { delta, l })
        }
    };
    let traj = simulate(
        sys,
        &r.grid,
        controller,
        &ic,
        cfg.run.t_end,
        &cfg.run.snapshot_times,
        SimOptions {
            lyapunov,
            target_boundary: false,
        },
    )?;

    let mut tbuf = Vec::new();
    write_trajectory(&mut tbuf, &traj, sys.m())?;
    let mut sbuf = Vec::new();
    write_snapshots(&mut sbuf, &traj.snapshots, sys.n(), sys.m())?;
    write_all(
        out,
        &[
            ("trajectory.csv".to_string(), tbuf),
            ("snapshots.csv".to_string(), sbuf),
        ],
    )?;
    let last = traj.l2.last().copied().unwrap_or(0.0);
    println!(
        "{}: L2 {:e} at t = 0, {:e} at t = {}{}",
        controller.name(),
        traj.l2[0],
        last,
        traj.final_time(),
        if traj.truncated { " (truncated on blow-up)" } else { "" }
    );
    if let Some(w) = lyapunov {
        println!("Lyapunov weights: delta = {}, l = {}", w.delta, w.l);
    }
    Ok(())
}

pub fn cmd_verify(r: &Resolved, out: &Path) -> Result<(), Failure> {
    let sys = &r.system;
    let kernels = load_control(out, sys)?;
    let observer = load_observer(out, sys)?;
    let mut extra = Vec::new();
    if let Some(o) = &observer {
        let path = out.join(GAINS_FILE);
        if let Some(recs) = read_records(&path)? {
            let (n, m) = (sys.n(), sys.m());
            let diff = |name: &str, rows: usize, stored: &[Vec<Vec<f64>>]| -> Result<f64, Failure> {
                let mut worst: f64 = 0.0;
                let mut count = 0;
                for rec in recs.iter().filter(|rec| rec.kernel == name) {
                    let (i, j) = (rec.i.wrapping_sub(1), rec.j.wrapping_sub(1));
                    let a = (rec.x * (o.grid().points() - 1) as f64).round() as usize;
                    let v = stored
                        .get(i)
                        .and_then(|row| row.get(j))
                        .and_then(|p| p.get(a))
                        .ok_or_else(|| io_err(&path, format!("{name} record out of range")))?;
                    worst = worst.max((v - rec.value).abs());
                    count += 1;
                }
                if count != rows * m * o.grid().points() {
                    return Err(io_err(&path, format!("{name}: incomplete gain table")));
                }
                Ok(worst)
            };
            let d = diff("Pplus", n, &o.p_plus)?.max(diff("Pminus", m, &o.p_minus)?);
            extra.push(Check::new("observer_gain_dump_consistency", d, Bound::AtMost(0.0)));
        }
    }
    let mut checks = run_checks(sys, &r.grid, Supplied { kernels, observer })?;
    checks.extend(extra);

    let mut report = String::from("check,measured,bound,status\n");
    for c in &checks {
        report.push_str(&c.to_string());
        report.push('\n');
    }
    print!("{report}");
    write_all(out, &[("verify.csv".to_string(), report.into_bytes())])?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}
