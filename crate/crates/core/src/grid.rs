//! Uniform lattice on the triangle T = {0 ≤ ξ ≤ x ≤ 1}, scalar fields stored
//! on it, and quadrature along straight lines through T.
//!
//! Kernel fields are only piecewise smooth: some of them jump across rays
//! ξ = c·x issued from the origin. [`SectorMap`] records those rays so that
//! interpolation never mixes values from two sides of a ray, and
//! [`SectorMap::line_integral`] splits the quadrature at every crossing.

use crate::error::{Error, Result};

/// Relative tolerance used to decide on which side of a ray a point lies.
const SIDE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriangleGrid {
    points: usize,
}

impl TriangleGrid {
    pub fn new(kernel_nx: usize) -> Result<Self> {
        if kernel_nx < 2 {
            return Err(Error::InvalidGrid("kernel_nx must be at least 2".into()));
        }
        Ok(TriangleGrid { points: kernel_nx })
    }

    /// Points per axis.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.points - 1) as f64
    }

    /// Number of stored nodes (lower triangle including the diagonal).
    pub fn len(&self) -> usize {
        self.points * (self.points + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize) -> usize {
        debug_assert!(b <= a && a < self.points);
        a * (a + 1) / 2 + b
    }

    /// Inverse of [`index`](Self::index).
    pub fn node(&self, idx: usize) -> (usize, usize) {
        let a = ((((8 * idx + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
        // guard against rounding in the square root
        let a = if a * (a + 1) / 2 > idx {
            a - 1
        } else if (a + 1) * (a + 2) / 2 <= idx {
            a + 1
        } else {
            a
        };
        (a, idx - a * (a + 1) / 2)
    }

    /// Coordinate of lattice line `a`; exact at both ends.
    #[inline]
    pub fn coord(&self, a: usize) -> f64 {
        a as f64 / (self.points - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> {
        let n = self.points;
        (0..n).flat_map(|a| (0..=a).map(move |b| (a, b)))
    }

    /// Coarser lattice sharing every second node, when the size allows it.
    pub fn coarsened(&self) -> Option<TriangleGrid> {
        if self.points >= 3 && (self.points - 1).is_multiple_of(2) {
            Some(TriangleGrid {
                points: (self.points - 1) / 2 + 1,
            })
        } else {
            None
        }
    }

    pub fn refined(&self) -> TriangleGrid {
        TriangleGrid {
            points: 2 * self.points - 1,
        }
    }
}

/// Scalar field sampled on a [`TriangleGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct TriField {
    grid: TriangleGrid,
    data: Vec<f64>,
}

impl TriField {
    pub fn zeros(grid: TriangleGrid) -> Self {
        TriField {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: TriangleGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = grid
            .nodes()
            .map(|(a, b)| f(grid.coord(a), grid.coord(b)))
            .collect();
        TriField { grid, data }
    }

    pub fn from_vec(grid: TriangleGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} node values, got {}",
                grid.len(),
                data.len()
            )));
        }
        Ok(TriField { grid, data })
    }

    pub fn grid(&self) -> TriangleGrid {
        self.grid
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[self.grid.index(a, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        let i = self.grid.index(a, b);
        self.data[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &TriField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Values along the diagonal x = ξ.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.grid.points).map(|a| self.get(a, a)).collect()
    }

    /// Values on the edge ξ = 0, indexed by x.
    pub fn bottom_edge(&self) -> Vec<f64> {
        (0..self.grid.points).map(|a| self.get(a, 0)).collect()
    }

    /// Values on the edge x = 1, indexed by ξ.
    pub fn right_edge(&self) -> Vec<f64> {
        let last = self.grid.points - 1;
        (0..self.grid.points).map(|b| self.get(last, b)).collect()
    }

    /// Restriction to a coarser lattice whose nodes are a subset of ours.
    pub fn restrict(&self, coarse: TriangleGrid) -> Result<TriField> {
        let fine = self.grid.points - 1;
        let c = coarse.points - 1;
        if c == 0 || !fine.is_multiple_of(c) {
            return Err(Error::GridMismatch(format!(
                "cannot restrict {} points to {}",
                self.grid.points, coarse.points
            )));
        }
        let r = fine / c;
        let data = coarse.nodes().map(|(a, b)| self.get(a * r, b * r)).collect();
        Ok(TriField { grid: coarse, data })
    }
}

/// Ray ξ = (num/den)·x through the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub num: f64,
    pub den: f64,
}

impl Ray {
    /// Normalised signed distance-like quantity; non-negative on or above the ray.
    #[inline]
    pub fn side(&self, x: f64, xi: f64) -> f64 {
        (self.den * xi - self.num * x) / (self.den + self.num)
    }

    #[inline]
    pub fn on_or_above(&self, x: f64, xi: f64) -> bool {
        self.side(x, xi) >= -SIDE_EPS
    }

    pub fn slope(&self) -> f64 {
        self.num / self.den
    }
}

/// `true` when `mu_i ξ − mu_j x ≥ 0`, using the same tolerance as [`Ray`].
#[inline]
pub fn on_or_above(mu_i: f64, mu_j: f64, x: f64, xi: f64) -> bool {
    Ray {
        num: mu_j,
        den: mu_i,
    }
    .on_or_above(x, xi)
}

/// The rays ξ = (μ_k/μ_p)·x, k < p, across which kernel fields may jump.
pub fn discontinuity_rays(mu: &[f64]) -> Vec<Ray> {
    let mut rays: Vec<Ray> = Vec::new();
    for p in 0..mu.len() {
        for k in 0..p {
            let r = Ray {
                num: mu[k],
                den: mu[p],
            };
            let s = r.slope();
            if s > 0.0
                && s < 1.0
                && !rays.iter().any(|q| (q.slope() - s).abs() <= 1e-12 * s)
            {
                rays.push(r);
            }
        }
    }
    rays.sort_by(|a, b| a.slope().total_cmp(&b.slope()));
    rays
}

/// Partition of the lattice into the sectors cut out by a set of rays.
#[derive(Debug, Clone)]
pub struct SectorMap {
    grid: TriangleGrid,
    rays: Vec<Ray>,
    node_sector: Vec<u8>,
}

impl SectorMap {
    pub fn new(grid: TriangleGrid, rays: Vec<Ray>) -> Self {
        let node_sector = grid
            .nodes()
            .map(|(a, b)| sector_of(&rays, grid.coord(a), grid.coord(b)))
            .collect();
        SectorMap {
            grid,
            rays,
            node_sector,
        }
    }

    pub fn grid(&self) -> TriangleGrid {
        self.grid
    }

    pub fn rays(&self) -> &[Ray] {
        &self.rays
    }

    pub fn sector(&self, x: f64, xi: f64) -> u8 {
        sector_of(&self.rays, x, xi)
    }

    #[inline]
    pub fn node_sector(&self, a: usize, b: usize) -> u8 {
        self.node_sector[self.grid.index(a, b)]
    }

    /// Interpolates `field` at (x, ξ) using only nodes of sector `sector`.
    ///
    /// Cells entirely inside the sector use bilinear interpolation (linear on
    /// the half cells along the diagonal). Cells cut by a ray fall back to a
    /// least-squares plane through nearby same-sector nodes.
    pub fn interp(&self, field: &TriField, x: f64, xi: f64, sector: u8) -> f64 {
        let n = self.grid.points;
        let scale = (n - 1) as f64;
        let x = x.clamp(0.0, 1.0);
        let xi = xi.clamp(0.0, x);
        let fx = x * scale;
        let fxi = xi * scale;
        let a0 = (fx.floor() as usize).min(n - 2);
        let b0 = (fxi.floor() as usize).min(a0);
        let tx = fx - a0 as f64;
        let txi = fxi - b0 as f64;

        let diag_cell = b0 == a0;
        let uniform = if self.rays.is_empty() {
            true
        } else if diag_cell {
            [(a0, a0), (a0 + 1, a0), (a0 + 1, a0 + 1)]
                .iter()
                .all(|&(a, b)| self.node_sector(a, b) == sector)
        } else {
            [(a0, b0), (a0 + 1, b0), (a0, b0 + 1), (a0 + 1, b0 + 1)]
                .iter()
                .all(|&(a, b)| self.node_sector(a, b) == sector)
        };

        if uniform {
            if diag_cell {
                let txi = txi.min(tx);
                (1.0 - tx) * field.get(a0, a0)
                    + (tx - txi) * field.get(a0 + 1, a0)
                    + txi * field.get(a0 + 1, a0 + 1)
            } else {
                let f00 = field.get(a0, b0);
                let f10 = field.get(a0 + 1, b0);
                let f01 = field.get(a0, b0 + 1);
                let f11 = field.get(a0 + 1, b0 + 1);
                (1.0 - tx) * ((1.0 - txi) * f00 + txi * f01) + tx * ((1.0 - txi) * f10 + txi * f11)
            }
        } else {
            self.plane_fit(field, fx, fxi, a0, b0, sector)
                .unwrap_or_else(|| self.nearest_in_sector(field, fx, fxi, a0, b0, sector))
        }
    }

    fn plane_fit(
        &self,
        field: &TriField,
        fx: f64,
        fxi: f64,
        a0: usize,
        b0: usize,
        sector: u8,
    ) -> Option<f64> {
        let n = self.grid.points as isize;
        for radius in 1..=3isize {
            // normal equations for v ≈ c0 + c1 (a - fx) + c2 (b - fxi)
            let mut ata = [[0.0f64; 3]; 3];
            let mut atb = [0.0f64; 3];
            let mut count = 0;
            for a in (a0 as isize - radius + 1)..=(a0 as isize + radius) {
                if a < 0 || a >= n {
                    continue;
                }
                for b in (b0 as isize - radius + 1)..=(b0 as isize + radius) {
                    if b < 0 || b > a {
                        continue;
                    }
                    let (au, bu) = (a as usize, b as usize);
                    if self.node_sector(au, bu) != sector {
                        continue;
                    }
                    let row = [1.0, a as f64 - fx, b as f64 - fxi];
                    let v = field.get(au, bu);
                    for r in 0..3 {
                        for c in 0..3 {
                            ata[r][c] += row[r] * row[c];
                        }
                        atb[r] += row[r] * v;
                    }
                    count += 1;
                }
            }
            if count < 3 {
                continue;
            }
            if let Some(c) = solve3(ata, atb) {
                return Some(c[0]);
            }
        }
        None
    }

    fn nearest_in_sector(
        &self,
        field: &TriField,
        fx: f64,
        fxi: f64,
        a0: usize,
        b0: usize,
        sector: u8,
    ) -> f64 {
        let n = self.grid.points as isize;
        let mut best: Option<(f64, f64)> = None;
        for radius in 1..=4isize {
            for a in (a0 as isize - radius + 1)..=(a0 as isize + radius) {
                if a < 0 || a >= n {
                    continue;
                }
                for b in (b0 as isize - radius + 1)..=(b0 as isize + radius) {
                    if b < 0 || b > a || self.node_sector(a as usize, b as usize) != sector {
                        continue;
                    }
                    let d = (a as f64 - fx).powi(2) + (b as f64 - fxi).powi(2);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, field.get(a as usize, b as usize)));
                    }
                }
            }
            if let Some((_, v)) = best {
                return v;
            }
        }
        // no node of that sector nearby: ignore the sector split
        let plain = SectorMap {
            grid: self.grid,
            rays: Vec::new(),
            node_sector: Vec::new(),
        };
        let scale = (self.grid.points - 1) as f64;
        plain.interp(field, fx / scale, fxi / scale, 0)
    }

    /// Composite trapezoid rule for ∫₀^{s_end} f(x₀ + vₓ s, ξ₀ + v_ξ s) ds.
    ///
    /// The path is split wherever it crosses a ray; each piece is integrated
    /// with steps no longer than the lattice spacing, using values from the
    /// sector the piece lies in.
    pub fn line_integral(
        &self,
        field: &TriField,
        start: (f64, f64),
        vel: (f64, f64),
        s_end: f64,
    ) -> f64 {
        if !(s_end > 0.0) {
            return 0.0;
        }
        let speed = (vel.0 * vel.0 + vel.1 * vel.1).sqrt();
        let h = self.grid.h();
        let mut cuts: Vec<f64> = Vec::with_capacity(self.rays.len() + 2);
        cuts.push(0.0);
        let tol = 1e-12 * s_end;
        for r in &self.rays {
            let g0 = r.den * start.1 - r.num * start.0;
            let gv = r.den * vel.1 - r.num * vel.0;
            if gv != 0.0 {
                let s = -g0 / gv;
                if s > tol && s < s_end - tol {
                    cuts.push(s);
                }
            }
        }
        cuts.push(s_end);
        cuts.sort_by(f64::total_cmp);

        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (sa, sb) = (w[0], w[1]);
            let len = sb - sa;
            if len <= 0.0 {
                continue;
            }
            let mid = 0.5 * (sa + sb);
            let sector = self.sector(start.0 + vel.0 * mid, start.1 + vel.1 * mid);
            let pieces = ((len * speed / h).ceil() as usize).max(1);
            let ds = len / pieces as f64;
            let mut acc = 0.0;
            for k in 0..=pieces {
                let s = sa + ds * k as f64;
                let v = self.interp(field, start.0 + vel.0 * s, start.1 + vel.1 * s, sector);
                acc += if k == 0 || k == pieces { 0.5 * v } else { v };
            }
            total += acc * ds;
        }
        total
    }
}

fn sector_of(rays: &[Ray], x: f64, xi: f64) -> u8 {
    rays.iter().filter(|r| r.on_or_above(x, xi)).count() as u8
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let scale = m[0][0] * m[1][1] * m[2][2];
    if !(det.abs() > 1e-9 * scale.abs().max(1e-300)) {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        let d = mc[0][0] * (mc[1][1] * mc[2][2] - mc[1][2] * mc[2][1])
            - mc[0][1] * (mc[1][0] * mc[2][2] - mc[1][2] * mc[2][0])
            + mc[0][2] * (mc[1][0] * mc[2][1] - mc[1][1] * mc[2][0]);
        *o = d / det;
    }
    Some(out)
}

/// Piecewise-linear interpolation of samples `values` taken on the uniform
/// lattice of `grid` along one axis.
pub fn interp_1d(grid: TriangleGrid, values: &[f64], x: f64) -> f64 {
    let n = grid.points();
    let scale = (n - 1) as f64;
    let fx = x.clamp(0.0, 1.0) * scale;
    let a0 = (fx.floor() as usize).min(n - 2);
    let t = fx - a0 as f64;
    (1.0 - t) * values[a0] + t * values[a0 + 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TriangleGrid {
        TriangleGrid::new(n).unwrap()
    }

    #[test]
    fn index_roundtrip() {
        let g = grid(17);
        for (k, (a, b)) in g.nodes().enumerate() {
            assert_eq!(g.index(a, b), k);
            assert_eq!(g.node(k), (a, b));
        }
        assert_eq!(g.len(), 17 * 18 / 2);
    }

    #[test]
    fn nodes_inside_triangle_and_diagonal_present() {
        let g = grid(9);
        for (a, b) in g.nodes() {
            assert!(g.coord(b) <= g.coord(a));
        }
        assert_eq!(g.coord(8), 1.0);
        assert!(g.nodes().any(|(a, b)| a == b && a == 5));
    }

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let g = grid(11);
        let f = TriField::from_fn(g, |x, xi| 1.0 + 2.0 * x - 3.0 * xi + 0.5 * x * xi);
        let map = SectorMap::new(g, Vec::new());
        for &(x, xi) in &[(0.33, 0.12), (0.97, 0.5), (0.5, 0.49), (0.051, 0.05)] {
            let exact = 1.0 + 2.0 * x - 3.0 * xi + 0.5 * x * xi;
            let v = map.interp(&f, x, xi, 0);
            // diagonal half cells are only linear
            assert!((v - exact).abs() < 0.01, "{x} {xi}: {v} vs {exact}");
        }
        let lin = TriField::from_fn(g, |x, xi| 1.0 + 2.0 * x - 3.0 * xi);
        for &(x, xi) in &[(0.33, 0.12), (0.5, 0.49), (0.051, 0.05)] {
            let v = map.interp(&lin, x, xi, 0);
            assert!((v - (1.0 + 2.0 * x - 3.0 * xi)).abs() < 1e-12);
        }
    }

    #[test]
    fn sector_interpolation_keeps_sides_apart() {
        let g = grid(33);
        let rays = discontinuity_rays(&[1.0, 2.0]);
        assert_eq!(rays.len(), 1);
        let map = SectorMap::new(g, rays);
        // jump across ξ = x/2: 1 above, linear function below
        let f = TriField::from_fn(g, |x, xi| if 2.0 * xi >= x { 1.0 } else { x + xi });
        let x = 0.6;
        let below = 0.3 - 1e-3;
        let above = 0.3 + 1e-3;
        let vb = map.interp(&f, x, below, map.sector(x, below));
        let va = map.interp(&f, x, above, map.sector(x, above));
        assert!((vb - (x + below)).abs() < 1e-10, "{vb}");
        assert!((va - 1.0).abs() < 1e-10, "{va}");
    }

    #[test]
    fn line_integral_of_linear_field_is_exact() {
        let g = grid(21);
        let map = SectorMap::new(g, discontinuity_rays(&[1.0, 3.0]));
        let f = TriField::from_fn(g, |x, xi| 2.0 - x + 4.0 * xi);
        // from (0.9, 0.1) moving (-1, 1) to the diagonal
        let s_end = 0.4;
        let got = map.line_integral(&f, (0.9, 0.1), (-1.0, 1.0), s_end);
        let exact: f64 = {
            // integrand 2 - (0.9 - s) + 4(0.1 + s) = 1.5 + 5 s
            1.5 * s_end + 2.5 * s_end * s_end
        };
        assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn line_integral_handles_jump_exactly_for_piecewise_constant() {
        let g = grid(17);
        let map = SectorMap::new(g, discontinuity_rays(&[1.0, 2.0]));
        let f = TriField::from_fn(g, |x, xi| if 2.0 * xi >= x { 3.0 } else { -1.0 });
        // horizontal path from (1, 0.3) leftwards crosses ξ = x/2 at x = 0.6
        let got = map.line_integral(&f, (1.0, 0.3), (-1.0, 0.0), 0.7);
        let exact = -1.0 * 0.4 + 3.0 * 0.3;
        assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn restrict_picks_shared_nodes() {
        let fine = grid(9);
        let coarse = fine.coarsened().unwrap();
        assert_eq!(coarse.points(), 5);
        let f = TriField::from_fn(fine, |x, xi| x * 10.0 + xi);
        let r = f.restrict(coarse).unwrap();
        assert_eq!(r, TriField::from_fn(coarse, |x, xi| x * 10.0 + xi));
    }
}
