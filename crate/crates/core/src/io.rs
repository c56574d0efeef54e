//! CSV artifacts: kernel dumps, convergence reports, trajectories and
//! snapshots. Floats are written in Rust's shortest round-trip form.
//!
//! Kernel dumps hold one record per lattice node, `i,j,x,xi,value,kernel`,
//! with 1-based component indices. Functions of x alone (Ω, observer gains)
//! are written with `xi = x` for diagonal quantities and `xi = 0` for
//! quantities taken on the edge ξ = 0.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::{TriField, TriangleGrid};
use crate::sim::{SimState, Trajectory};

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Format(format!("{other:?}")),
        }
    } else {
        Error::Format(e.to_string())
    }
}

/// Where a one-dimensional profile lives in the (x, ξ) triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileAxis {
    /// ξ = x
    Diagonal,
    /// ξ = 0
    Edge,
}

pub const DUMP_HEADER: [&str; 6] = ["i", "j", "x", "xi", "value", "kernel"];

/// Streams kernel records into one CSV table.
pub struct DumpWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(DUMP_HEADER).map_err(csv_err)?;
        Ok(DumpWriter { inner })
    }

    pub fn fields(&mut self, name: &str, fields: &[Vec<TriField>]) -> Result<()> {
        for (i, row) in fields.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                let g = f.grid();
                for (a, b) in g.nodes() {
                    self.record(i, j, g.coord(a), g.coord(b), f.get(a, b), name)?;
                }
            }
        }
        Ok(())
    }

    /// `values[i][j][a]` sampled at the lattice coordinates of `grid`.
    pub fn profiles(
        &mut self,
        name: &str,
        grid: TriangleGrid,
        axis: ProfileAxis,
        values: &[Vec<Vec<f64>>],
    ) -> Result<()> {
        for (i, row) in values.iter().enumerate() {
            for (j, vals) in row.iter().enumerate() {
                if vals.len() != grid.points() {
                    return Err(Error::GridMismatch(format!("{name} profile length")));
                }
                for (a, &v) in vals.iter().enumerate() {
                    let x = grid.coord(a);
                    let xi = match axis {
                        ProfileAxis::Diagonal => x,
                        ProfileAxis::Edge => 0.0,
                    };
                    self.record(i, j, x, xi, v, name)?;
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, i: usize, j: usize, x: f64, xi: f64, v: f64, name: &str) -> Result<()> {
        self.inner
            .write_record([
                (i + 1).to_string(),
                (j + 1).to_string(),
                fmt(x),
                fmt(xi),
                fmt(v),
                name.to_string(),
            ])
            .map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRecord {
    /// 1-based
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub xi: f64,
    pub value: f64,
    pub kernel: String,
}

pub fn read_dump<R: Read>(r: R) -> Result<Vec<KernelRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(DUMP_HEADER) {
        return Err(Error::Format(format!(
            "unexpected dump header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| Error::Format(format!("record {}: bad {what}", line + 1));
        let int = |k: usize, what: &str| rec[k].parse::<usize>().map_err(|_| bad(what));
        let num = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(what));
        out.push(KernelRecord {
            i: int(0, "i")?,
            j: int(1, "j")?,
            x: num(2, "x")?,
            xi: num(3, "xi")?,
            value: num(4, "value")?,
            kernel: rec[5].to_string(),
        });
    }
    Ok(out)
}

/// Rebuilds a `rows × cols` array of lattice fields named `name`; every node
/// of every entry must appear exactly once.
pub fn fields_from_records(
    records: &[KernelRecord],
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<Vec<Vec<TriField>>> {
    let mine: Vec<&KernelRecord> = records.iter().filter(|r| r.kernel == name).collect();
    let per_entry = mine.iter().filter(|r| r.i == 1 && r.j == 1).count();
    // N(N+1)/2 = per_entry
    let points = ((((8 * per_entry + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if points * (points + 1) / 2 != per_entry || mine.len() != per_entry * rows * cols {
        return Err(Error::Format(format!(
            "{name}: {} records do not fill a {rows}x{cols} lattice",
            mine.len()
        )));
    }
    let grid = TriangleGrid::new(points)?;
    let mut seen = vec![false; mine.len()];
    let mut out = vec![vec![TriField::zeros(grid); cols]; rows];
    let scale = (points - 1) as f64;
    for r in mine {
        if r.i == 0 || r.j == 0 || r.i > rows || r.j > cols {
            return Err(Error::Format(format!("{name}: index ({}, {}) out of range", r.i, r.j)));
        }
        let (a, b) = ((r.x * scale).round(), (r.xi * scale).round());
        if (a - r.x * scale).abs() > 1e-6 || (b - r.xi * scale).abs() > 1e-6 || b > a || a < 0.0 || b < 0.0 {
            return Err(Error::Format(format!("{name}: ({}, {}) is not a lattice node", r.x, r.xi)));
        }
        let (a, b) = (a as usize, b as usize);
        let slot = ((r.i - 1) * cols + r.j - 1) * grid.len() + grid.index(a, b);
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::Format(format!("{name}: duplicate node ({}, {})", r.x, r.xi)));
        }
        out[r.i - 1][r.j - 1].set(a, b, r.value);
    }
    Ok(out)
}

/// One row of the convergence report.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceEntry {
    pub stage: String,
    /// 0-based kernel row, when the stage is solved row by row.
    pub row: Option<usize>,
    pub history: Vec<f64>,
}

pub fn write_convergence<W: Write>(w: W, entries: &[ConvergenceEntry]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["stage", "row", "iterations", "final_increment"])
        .map_err(csv_err)?;
    for e in entries {
        wr.write_record([
            e.stage.clone(),
            e.row.map(|r| (r + 1).to_string()).unwrap_or_default(),
            e.history.len().to_string(),
            e.history.last().map(|&v| fmt(v)).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Header `t,l2,V,U_1..U_m`; V is left empty when not recorded.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory, m: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "l2".into(), "V".into()];
    header.extend((1..=m).map(|i| format!("U_{i}")));
    wr.write_record(&header).map_err(csv_err)?;
    for (k, &t) in traj.times.iter().enumerate() {
        let mut rec = vec![fmt(t), fmt(traj.l2[k])];
        rec.push(traj.lyapunov.as_ref().map(|v| fmt(v[k])).unwrap_or_default());
        let u = &traj.controls[k];
        if u.len() != m {
            return Err(Error::GridMismatch("control history width".into()));
        }
        rec.extend(u.iter().map(|&x| fmt(x)));
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Parsed trajectory table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryTable {
    pub times: Vec<f64>,
    pub l2: Vec<f64>,
    pub lyapunov: Vec<Option<f64>>,
    pub controls: Vec<Vec<f64>>,
}

pub fn read_trajectory<R: Read>(r: R) -> Result<TrajectoryTable> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || &header[0] != "t" || &header[1] != "l2" || &header[2] != "V" {
        return Err(Error::Format("trajectory header must start with t,l2,V".into()));
    }
    let mut out = TrajectoryTable::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: bad number {s:?}", line + 1)))
        };
        out.times.push(num(&rec[0])?);
        out.l2.push(num(&rec[1])?);
        out.lyapunov.push(if rec[2].is_empty() { None } else { Some(num(&rec[2])?) });
        out.controls
            .push(rec.iter().skip(3).map(num).collect::<Result<Vec<_>>>()?);
    }
    Ok(out)
}

/// Header `t,x,u_1..u_n,v_1..v_m`, one row per cell and snapshot.
pub fn write_snapshots<W: Write>(w: W, snapshots: &[SimState], n: usize, m: usize) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), "x".into()];
    header.extend((1..=n).map(|i| format!("u_{i}")));
    header.extend((1..=m).map(|i| format!("v_{i}")));
    wr.write_record(&header).map_err(csv_err)?;
    for s in snapshots {
        if s.u.len() != n || s.v.len() != m {
            return Err(Error::GridMismatch("snapshot component count".into()));
        }
        let grid = s.grid();
        for c in 0..s.nx() {
            let mut rec = vec![fmt(s.t), fmt(grid.centre(c))];
            rec.extend(s.u.iter().map(|f| fmt(f[c])));
            rec.extend(s.v.iter().map(|f| fmt(f[c])));
            wr.write_record(&rec).map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}
