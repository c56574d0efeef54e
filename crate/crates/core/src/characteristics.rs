//! Straight characteristic lines of the kernel equations on T.
//!
//! Indices are zero-based: `i` is a row of K / L (leftward state), `j` a
//! column (rightward state for K, leftward state for L).

use crate::error::{Error, Result};
use crate::grid::on_or_above;
use crate::system::HyperbolicSystem;

/// Line (x − μᵢ s, ξ + λⱼ s) running from (x, ξ) to the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KPath {
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    /// Parameter value where the path meets the diagonal.
    pub s_final: f64,
    /// x-coordinate (= ξ-coordinate) of the end point.
    pub x_final: f64,
}

impl KPath {
    pub fn point(&self, s: f64) -> (f64, f64) {
        (
            self.start.0 + self.velocity.0 * s,
            self.start.1 + self.velocity.1 * s,
        )
    }
}

/// Line (x − μᵢ ν, ξ − μⱼ ν) running from (x, ξ) to either the diagonal or
/// the edge ξ = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LPath {
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    pub nu_final: f64,
    pub end: (f64, f64),
    pub hits_diagonal: bool,
}

impl LPath {
    pub fn point(&self, nu: f64) -> (f64, f64) {
        (
            self.start.0 + self.velocity.0 * nu,
            self.start.1 + self.velocity.1 * nu,
        )
    }
}

fn check_point(x: f64, xi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=x).contains(&xi) {
        return Err(Error::OutsideDomain { x, xi });
    }
    Ok(())
}

pub fn trace_characteristic_k(
    system: &HyperbolicSystem,
    i: usize,
    j: usize,
    x: f64,
    xi: f64,
) -> Result<KPath> {
    check_point(x, xi)?;
    let (mi, lj) = match (system.mu.get(i), system.lambda.get(j)) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::Index(format!("K entry ({i}, {j})"))),
    };
    Ok(k_path(mi, lj, x, xi))
}

pub(crate) fn k_path(mu_i: f64, lambda_j: f64, x: f64, xi: f64) -> KPath {
    let s_final = (x - xi) / (mu_i + lambda_j);
    let x_final = if s_final == 0.0 { x } else { x - mu_i * s_final };
    KPath {
        start: (x, xi),
        velocity: (-mu_i, lambda_j),
        s_final,
        x_final,
    }
}

pub fn trace_characteristic_l(
    system: &HyperbolicSystem,
    i: usize,
    j: usize,
    x: f64,
    xi: f64,
) -> Result<LPath> {
    check_point(x, xi)?;
    if i >= system.m() || j >= system.m() {
        return Err(Error::Index(format!("L entry ({i}, {j})")));
    }
    Ok(l_path(system.mu[i], system.mu[j], j < i, x, xi))
}

pub(crate) fn l_path(mu_i: f64, mu_j: f64, lower: bool, x: f64, xi: f64) -> LPath {
    if lower && on_or_above(mu_i, mu_j, x, xi) {
        let nu_final = (x - xi) / (mu_i - mu_j);
        let d = x - mu_i * nu_final;
        LPath {
            start: (x, xi),
            velocity: (-mu_i, -mu_j),
            nu_final,
            end: (d, d),
            hits_diagonal: true,
        }
    } else {
        let nu_final = xi / mu_j;
        LPath {
            start: (x, xi),
            velocity: (-mu_i, -mu_j),
            nu_final,
            end: (x - mu_i * nu_final, 0.0),
            hits_diagonal: false,
        }
    }
}
