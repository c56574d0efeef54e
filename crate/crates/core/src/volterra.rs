//! Second-kind Volterra equations on T, solved on lattice nodes by
//! successive approximations with trapezoid quadrature in the inner variable.
//!
//! Used for the target-system couplings C⁻, C⁺ (control side), D⁻, D⁺
//! (observer side) and for the kernel S of the inverse transformation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{TriField, TriangleGrid};
use crate::kernels::KernelSolution;
use crate::system::{GridSpec, HyperbolicSystem};

/// Row-major matrix of fields on a common lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMatrix {
    rows: usize,
    cols: usize,
    fields: Vec<TriField>,
}

impl FieldMatrix {
    pub fn zeros(grid: TriangleGrid, rows: usize, cols: usize) -> Self {
        FieldMatrix {
            rows,
            cols,
            fields: vec![TriField::zeros(grid); rows * cols],
        }
    }

    pub fn from_nested(nested: &[Vec<TriField>]) -> Result<Self> {
        let rows = nested.len();
        let cols = nested.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || nested.iter().any(|r| r.len() != cols) {
            return Err(Error::GridMismatch("ragged field matrix".into()));
        }
        let fields: Vec<TriField> = nested.iter().flatten().cloned().collect();
        let g = fields[0].grid();
        if fields.iter().any(|f| f.grid() != g) {
            return Err(Error::GridMismatch("fields on different grids".into()));
        }
        Ok(FieldMatrix { rows, cols, fields })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn grid(&self) -> TriangleGrid {
        self.fields[0].grid()
    }

    pub fn get(&self, r: usize, c: usize) -> &TriField {
        &self.fields[r * self.cols + c]
    }

    pub fn get_mut(&mut self, r: usize, c: usize) -> &mut TriField {
        &mut self.fields[r * self.cols + c]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, a: usize, b: usize) -> f64 {
        self.fields[r * self.cols + c].get(a, b)
    }

    pub fn max_abs(&self) -> f64 {
        self.fields.iter().map(TriField::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &FieldMatrix) -> f64 {
        self.fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn to_nested(&self) -> Vec<Vec<TriField>> {
        self.fields.chunks(self.cols).map(<[TriField]>::to_vec).collect()
    }

    /// Pointwise product `self(x,ξ) · rhs` with a constant matrix on the right.
    pub fn times_const(&self, rhs: &nalgebra::DMatrix<f64>) -> FieldMatrix {
        let grid = self.grid();
        let mut out = FieldMatrix::zeros(grid, self.rows, rhs.ncols());
        for r in 0..self.rows {
            for c in 0..rhs.ncols() {
                let vals = out.get_mut(r, c).values_mut();
                for k in 0..self.cols {
                    let w = rhs[(k, c)];
                    if w == 0.0 {
                        continue;
                    }
                    for (v, s) in vals.iter_mut().zip(self.get(r, k).values()) {
                        *v += s * w;
                    }
                }
            }
        }
        out
    }

    /// Pointwise product `lhs · self(x,ξ)` with a constant matrix on the left.
    pub fn const_times(lhs: &nalgebra::DMatrix<f64>, rhs: &FieldMatrix) -> FieldMatrix {
        let grid = rhs.grid();
        let mut out = FieldMatrix::zeros(grid, lhs.nrows(), rhs.cols);
        for r in 0..lhs.nrows() {
            for c in 0..rhs.cols {
                let vals = out.get_mut(r, c).values_mut();
                for k in 0..rhs.rows {
                    let w = lhs[(r, k)];
                    if w == 0.0 {
                        continue;
                    }
                    for (v, s) in vals.iter_mut().zip(rhs.get(k, c).values()) {
                        *v += w * s;
                    }
                }
            }
        }
        out
    }
}

/// Position of the unknown inside the integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnknownSide {
    /// X(x,ξ) = F(x,ξ) + ∫_ξ^x X(x,s) A(s,ξ) ds
    Left,
    /// X(x,ξ) = F(x,ξ) + ∫_ξ^x A(x,s) X(s,ξ) ds
    Right,
}

/// Trapezoid value of the integral term at node (a, b) for entry (r, c).
fn integral_term(
    side: UnknownSide,
    x: &FieldMatrix,
    a_mat: &FieldMatrix,
    r: usize,
    c: usize,
    a: usize,
    b: usize,
    h: f64,
) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut acc = 0.0;
    for s in b..=a {
        let w = if s == b || s == a { 0.5 } else { 1.0 };
        let mut v = 0.0;
        match side {
            UnknownSide::Left => {
                for k in 0..x.cols {
                    v += x.at(r, k, a, s) * a_mat.at(k, c, s, b);
                }
            }
            UnknownSide::Right => {
                for k in 0..a_mat.cols {
                    v += a_mat.at(r, k, a, s) * x.at(k, c, s, b);
                }
            }
        }
        acc += w * v;
    }
    acc * h
}

/// Result of [`solve_volterra`].
#[derive(Debug, Clone)]
pub struct VolterraSolution {
    pub value: FieldMatrix,
    pub history: Vec<f64>,
}

pub fn solve_volterra(
    forcing: &FieldMatrix,
    coeff: &FieldMatrix,
    side: UnknownSide,
    tol: f64,
    max_iter: usize,
    stage: &'static str,
) -> Result<VolterraSolution> {
    let grid = forcing.grid();
    if coeff.grid() != grid {
        return Err(Error::GridMismatch(format!("{stage}: coefficient grid")));
    }
    let inner_ok = match side {
        UnknownSide::Left => coeff.rows == forcing.cols && coeff.cols == forcing.cols,
        UnknownSide::Right => coeff.cols == forcing.rows && coeff.rows == forcing.rows,
    };
    if !inner_ok {
        return Err(Error::GridMismatch(format!("{stage}: incompatible shapes")));
    }
    let h = grid.h();
    let (rows, cols) = (forcing.rows, forcing.cols);
    let mut cur = FieldMatrix::zeros(grid, rows, cols);
    let mut history = Vec::new();
    for _ in 0..max_iter {
        let per_node: Vec<Vec<f64>> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let (a, b) = grid.node(idx);
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        out.push(
                            forcing.at(r, c, a, b) + integral_term(side, &cur, coeff, r, c, a, b, h),
                        );
                    }
                }
                out
            })
            .collect();
        let mut next = FieldMatrix::zeros(grid, rows, cols);
        for (idx, vals) in per_node.iter().enumerate() {
            for (e, v) in vals.iter().enumerate() {
                next.fields[e].values_mut()[idx] = *v;
            }
        }
        let inc = next.max_abs_diff(&cur);
        if !inc.is_finite() {
            return Err(Error::NonFinite(stage.to_string()));
        }
        cur = next;
        history.push(inc);
        if inc < tol {
            return Ok(VolterraSolution {
                value: cur,
                history,
            });
        }
    }
    Err(Error::NonConvergence {
        stage,
        row: None,
        tol,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// sup |X − F − ∫ …| evaluated by one direct quadrature pass.
pub fn volterra_residual(
    value: &FieldMatrix,
    forcing: &FieldMatrix,
    coeff: &FieldMatrix,
    side: UnknownSide,
) -> f64 {
    let grid = value.grid();
    let h = grid.h();
    let mut worst: f64 = 0.0;
    for (a, b) in grid.nodes() {
        for r in 0..value.rows {
            for c in 0..value.cols {
                let mut integral = 0.0;
                if a > b {
                    for s in b..=a {
                        let w = if s == b || s == a { 0.5 * h } else { h };
                        let prod: f64 = match side {
                            UnknownSide::Left => (0..value.cols)
                                .map(|k| value.at(r, k, a, s) * coeff.at(k, c, s, b))
                                .sum(),
                            UnknownSide::Right => (0..coeff.cols)
                                .map(|k| coeff.at(r, k, a, s) * value.at(k, c, s, b))
                                .sum(),
                        };
                        integral += w * prod;
                    }
                }
                let res = value.at(r, c, a, b) - forcing.at(r, c, a, b) - integral;
                worst = worst.max(res.abs());
            }
        }
    }
    worst
}

/// Couplings of the control target system.
#[derive(Debug, Clone)]
pub struct TargetCouplings {
    /// C⁻, n×m.
    pub c_minus: FieldMatrix,
    /// C⁺, n×n.
    pub c_plus: FieldMatrix,
    pub history: Vec<f64>,
}

/// C⁻ = Σ⁺⁻L + ∫_ξ^x C⁻(x,s) L(s,ξ) ds, then C⁺ = Σ⁺⁻K + ∫_ξ^x C⁻(x,s) K(s,ξ) ds.
pub fn solve_target_couplings(
    kernels: &KernelSolution,
    system: &HyperbolicSystem,
    spec: &GridSpec,
) -> Result<TargetCouplings> {
    let k = FieldMatrix::from_nested(&kernels.k)?;
    let l = FieldMatrix::from_nested(&kernels.l)?;
    let forcing = FieldMatrix::const_times(&system.sigma_pm, &l);
    let sol = solve_volterra(
        &forcing,
        &l,
        UnknownSide::Left,
        spec.picard_tol,
        spec.picard_max_iter,
        "target coupling C-",
    )?;
    let c_minus = sol.value;
    let base = FieldMatrix::const_times(&system.sigma_pm, &k);
    let c_plus = explicit_product(&base, &c_minus, &k);
    Ok(TargetCouplings {
        c_minus,
        c_plus,
        history: sol.history,
    })
}

/// base(x,ξ) + ∫_ξ^x left(x,s) right(s,ξ) ds at every node.
pub(crate) fn explicit_product(base: &FieldMatrix, left: &FieldMatrix, right: &FieldMatrix) -> FieldMatrix {
    let grid = base.grid();
    let h = grid.h();
    let (rows, cols) = (base.rows, base.cols);
    let per_node: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (a, b) = grid.node(idx);
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for c in 0..cols {
                    let mut acc = 0.0;
                    if a > b {
                        for s in b..=a {
                            let w = if s == b || s == a { 0.5 } else { 1.0 };
                            let mut v = 0.0;
                            for k in 0..left.cols {
                                v += left.at(r, k, a, s) * right.at(k, c, s, b);
                            }
                            acc += w * v;
                        }
                    }
                    out.push(base.at(r, c, a, b) + acc * h);
                }
            }
            out
        })
        .collect();
    let mut out = FieldMatrix::zeros(grid, rows, cols);
    for (idx, vals) in per_node.iter().enumerate() {
        for (e, v) in vals.iter().enumerate() {
            out.fields[e].values_mut()[idx] = *v;
        }
    }
    out
}

/// Kernel S of the inverse transformation,
/// (u, v)(x) = (α, β)(x) − ∫_0^x S(x,ξ) (α, β)(ξ) dξ.
#[derive(Debug, Clone)]
pub struct Resolvent {
    /// (n+m)×(n+m); the first n rows are identically zero.
    pub s: FieldMatrix,
    pub history: Vec<f64>,
}

/// The forward map is (α, β) = (I − F)(u, v) with F = [[0, 0], [K, L]].
/// Its inverse is I + R with R = F + ∫ F R, whose top block vanishes, so
/// only the bottom rows R_b = [K L] + ∫_ξ^x L(x,s) R_b(s,ξ) ds are iterated.
pub fn inverse_transform_resolvent(kernels: &KernelSolution, spec: &GridSpec) -> Result<Resolvent> {
    let (n, m) = (kernels.n(), kernels.m());
    let grid = kernels.grid();
    let l = FieldMatrix::from_nested(&kernels.l)?;
    let mut forcing = FieldMatrix::zeros(grid, m, n + m);
    for i in 0..m {
        for j in 0..n {
            *forcing.get_mut(i, j) = kernels.k[i][j].clone();
        }
        for j in 0..m {
            *forcing.get_mut(i, n + j) = kernels.l[i][j].clone();
        }
    }
    let sol = solve_volterra(
        &forcing,
        &l,
        UnknownSide::Right,
        spec.picard_tol,
        spec.picard_max_iter,
        "inverse transformation",
    )?;
    let mut s = FieldMatrix::zeros(grid, n + m, n + m);
    for i in 0..m {
        for j in 0..n + m {
            let mut f = sol.value.get(i, j).clone();
            f.values_mut().iter_mut().for_each(|v| *v = -*v);
            *s.get_mut(n + i, j) = f;
        }
    }
    Ok(Resolvent {
        s,
        history: sol.history,
    })
}

/// ∫_0^{x_a} Σ_j f_j(x_a, ξ) w_j(ξ) dξ by the trapezoid rule on lattice nodes.
fn trapezoid_row(fields: &[&TriField], values: &[&[f64]], a: usize, h: f64) -> f64 {
    let mut s = 0.0;
    for (f, w) in fields.iter().zip(values) {
        for b in 0..=a {
            let wt = if b == 0 || b == a { 0.5 } else { 1.0 };
            s += wt * f.get(a, b) * w[b];
        }
    }
    s * h
}

fn check_lattice(grid: TriangleGrid, states: &[Vec<f64>]) -> Result<()> {
    if states.iter().any(|c| c.len() != grid.points()) {
        return Err(Error::GridMismatch(format!(
            "state must have one value per lattice node ({})",
            grid.points()
        )));
    }
    Ok(())
}

/// Forward transformation on the kernel lattice: α = u,
/// β = v − ∫_0^x K u + L v dξ.
pub fn transform_on_lattice(
    kernels: &KernelSolution,
    u: &[Vec<f64>],
    v: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let grid = kernels.grid();
    check_lattice(grid, u)?;
    check_lattice(grid, v)?;
    let mut values: Vec<&[f64]> = u.iter().map(Vec::as_slice).collect();
    values.extend(v.iter().map(Vec::as_slice));
    let beta = (0..kernels.m())
        .map(|i| {
            let mut fields: Vec<&TriField> = kernels.k[i].iter().collect();
            fields.extend(kernels.l[i].iter());
            (0..grid.points())
                .map(|a| v[i][a] - trapezoid_row(&fields, &values, a, grid.h()))
                .collect()
        })
        .collect();
    Ok((u.to_vec(), beta))
}

/// Inverse transformation on the lattice: (u, v) = (α, β) − ∫_0^x S (α, β) dξ.
pub fn inverse_transform_on_lattice(
    resolvent: &Resolvent,
    alpha: &[Vec<f64>],
    beta: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let grid = resolvent.s.grid();
    check_lattice(grid, alpha)?;
    check_lattice(grid, beta)?;
    let n = alpha.len();
    if n + beta.len() != resolvent.s.rows() {
        return Err(Error::GridMismatch("state size does not match the resolvent".into()));
    }
    let mut values: Vec<&[f64]> = alpha.iter().map(Vec::as_slice).collect();
    values.extend(beta.iter().map(Vec::as_slice));
    let out: Vec<Vec<f64>> = (0..resolvent.s.rows())
        .map(|i| {
            let fields: Vec<&TriField> = (0..resolvent.s.cols()).map(|j| resolvent.s.get(i, j)).collect();
            (0..grid.points())
                .map(|a| values[i][a] - trapezoid_row(&fields, &values, a, grid.h()))
                .collect()
        })
        .collect();
    let (u, v) = out.split_at(n);
    Ok((u.to_vec(), v.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn grid(n: usize) -> TriangleGrid {
        TriangleGrid::new(n).unwrap()
    }

    #[test]
    fn scalar_left_equation_matches_closed_form() {
        // X = 1 + ∫_ξ^x X(x,s)·1 ds  ⇒  X = e^{x−ξ}
        let g = grid(129);
        let f = FieldMatrix::from_nested(&[vec![TriField::from_fn(g, |_, _| 1.0)]]).unwrap();
        let a = f.clone();
        let sol = solve_volterra(&f, &a, UnknownSide::Left, 1e-12, 100, "test").unwrap();
        let exact = TriField::from_fn(g, |x, xi| (x - xi).exp());
        let err = sol.value.get(0, 0).max_abs_diff(&exact);
        assert!(err < 1e-4, "{err}");
        assert!(volterra_residual(&sol.value, &f, &a, UnknownSide::Left) < 1e-11);
    }

    #[test]
    fn right_equation_with_variable_coefficient() {
        // X(x,ξ) = x + ∫_ξ^x ξ-independent... check against a refined solve
        let coarse = grid(33);
        let fine = grid(65);
        let build = |g| {
            let f = FieldMatrix::from_nested(&[vec![TriField::from_fn(g, |x, xi| x - 2.0 * xi)]])
                .unwrap();
            let a = FieldMatrix::from_nested(&[vec![TriField::from_fn(g, |x, s| (x + s).sin())]])
                .unwrap();
            solve_volterra(&f, &a, UnknownSide::Right, 1e-13, 100, "test").unwrap().value
        };
        let c = build(coarse);
        let f = build(fine);
        let diff = f.get(0, 0).restrict(coarse).unwrap().max_abs_diff(c.get(0, 0));
        assert!(diff < 1e-3, "{diff}");
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let g = grid(17);
        let f = FieldMatrix::zeros(g, 2, 3);
        let a = FieldMatrix::from_nested(&vec![vec![TriField::from_fn(g, |x, _| x); 3]; 3]).unwrap();
        let sol = solve_volterra(&f, &a, UnknownSide::Left, 1e-10, 10, "test").unwrap();
        assert_eq!(sol.value.max_abs(), 0.0);
        assert_eq!(sol.history, vec![0.0]);
    }

    #[test]
    fn const_products() {
        let g = grid(5);
        let one = TriField::from_fn(g, |_, _| 1.0);
        let two = TriField::from_fn(g, |_, _| 2.0);
        let fm = FieldMatrix::from_nested(&[vec![one.clone(), two.clone()]]).unwrap();
        let c = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let p = fm.times_const(&c);
        assert!(p.get(0, 0).values().iter().all(|&v| v == 11.0));
        let l = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let col = FieldMatrix::from_nested(&[vec![two]]).unwrap();
        let q = FieldMatrix::const_times(&l, &col);
        assert_eq!(q.rows(), 2);
        assert!(q.get(1, 0).values().iter().all(|&v| v == -2.0));
    }
}
