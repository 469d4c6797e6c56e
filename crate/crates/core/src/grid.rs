//! Box discretization with homogeneous Dirichlet boundary, discrete calculus
//! and the norms used throughout the solver.
//!
//! A [`Grid`] stores only interior nodes of `[-L, L]^dim`; boundary values are
//! implicitly zero. Two-dimensional fields are stored row-major, the second
//! axis running fastest.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of interior nodes on `[-L, L]^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    extent: f64,
}

impl Grid {
    pub const MIN_POINTS: usize = 8;

    pub fn new(dim: usize, n: usize, extent: f64) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < Self::MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {} points per axis, got {n}",
                Self::MIN_POINTS
            )));
        }
        if !(extent.is_finite() && extent > 0.0) {
            return Err(Error::InvalidGrid(format!("half-width must be positive, got {extent}")));
        }
        Ok(Grid { dim, n, extent })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Interior points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Half-width `L` of the box.
    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.extent / (self.n as f64 + 1.0)
    }

    /// Total number of degrees of freedom, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinate of the `k`-th interior node along one axis.
    pub fn axis_coord(&self, k: usize) -> f64 {
        -self.extent + (k as f64 + 1.0) * self.spacing()
    }

    /// Coordinates of node `idx`; the unused second slot is zero in 1D.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.axis_coord(idx), 0.0],
            _ => [self.axis_coord(idx / self.n), self.axis_coord(idx % self.n)],
        }
    }

    /// Whether node `idx` touches the boundary (has a Dirichlet ghost neighbour).
    pub fn is_boundary_adjacent(&self, idx: usize) -> bool {
        let edge = |k: usize| k == 0 || k + 1 == self.n;
        match self.dim {
            1 => edge(idx),
            _ => edge(idx / self.n) || edge(idx % self.n),
        }
    }
}

/// Scalar types a field can carry.
pub trait FieldValue:
    Copy
    + Default
    + PartialEq
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<f64, Output = Self>
    + Send
    + Sync
{
    fn norm_sqr(self) -> f64;
    /// `Re(conj(self) * other)`.
    fn re_dot(self, other: Self) -> f64;
    fn is_finite(self) -> bool;
}

impl FieldValue for f64 {
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn re_dot(self, other: Self) -> f64 {
        self * other
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl FieldValue for Complex64 {
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn re_dot(self, other: Self) -> f64 {
        self.re * other.re + self.im * other.im
    }
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

/// Nodal values on the interior of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    grid: Grid,
    values: Vec<T>,
}

pub type RealField = Field<f64>;
pub type ComplexField = Field<Complex64>;

impl<T: FieldValue> Field<T> {
    pub fn new(grid: Grid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {k}")));
        }
        Ok(Field { grid, values })
    }

    /// Skips the finiteness scan; for values produced by trusted arithmetic.
    pub(crate) fn from_vec(grid: Grid, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![T::default(); grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> T) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Field::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Field::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b * c)
                .collect(),
        ))
    }

    /// Second-order centred Laplacian with zero ghost values.
    pub fn laplacian(&self) -> Self {
        Field::from_vec(self.grid, laplacian_values(&self.grid, &self.values))
    }

    /// `∫ |f|^2`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    /// `⟨-Δf, f⟩`, the discrete Dirichlet energy `∫|∇f|^2`.
    pub fn dirichlet_energy(&self) -> f64 {
        let lap = laplacian_values(&self.grid, &self.values);
        -self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&lap)
                .map(|(&f, &l)| f.re_dot(l))
                .sum::<f64>()
    }

    /// `∫ V |f|^2`.
    pub fn potential_energy(&self, v: &RealField) -> Result<f64> {
        same_grid(&self.grid, &v.grid)?;
        Ok(self.grid.cell_volume()
            * self
                .values
                .iter()
                .zip(&v.values)
                .map(|(f, w)| w * f.norm_sqr())
                .sum::<f64>())
    }

    /// `∫ (|∇f|^2 + V|f|^2)` with the gradient term taken as `⟨-Δf, f⟩`.
    pub fn h_energy(&self, v: &RealField) -> Result<f64> {
        Ok(self.dirichlet_energy() + self.potential_energy(v)?)
    }

    /// Pointwise `|f|^2`.
    pub fn modulus_sq(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr().sqrt()).fold(0.0, f64::max)
    }

    /// `L²` distance `‖self - other‖`.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        let s: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).norm_sqr())
            .sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }
}

impl RealField {
    /// Real `L²` inner product.
    pub fn dot(&self, other: &RealField) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        Ok(self.grid.cell_volume() * dot(&self.values, &other.values))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn abs(&self) -> RealField {
        self.map(f64::abs)
    }

    pub fn to_complex(&self) -> ComplexField {
        Field::from_vec(
            self.grid,
            self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }
}

impl ComplexField {
    pub fn from_parts(re: &RealField, im: &RealField) -> Result<ComplexField> {
        same_grid(&re.grid, &im.grid)?;
        Ok(Field::from_vec(
            re.grid,
            re.values
                .iter()
                .zip(&im.values)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        ))
    }

    pub fn re(&self) -> RealField {
        Field::from_vec(self.grid, self.values.iter().map(|v| v.re).collect())
    }

    pub fn im(&self) -> RealField {
        Field::from_vec(self.grid, self.values.iter().map(|v| v.im).collect())
    }

    pub fn times(&self, c: Complex64) -> ComplexField {
        Field::from_vec(self.grid, self.values.iter().map(|&v| v * c).collect())
    }

    /// `self + c * other` with a complex coefficient.
    pub fn add_scaled_complex(&self, c: Complex64, other: &ComplexField) -> Result<ComplexField> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Field::from_vec(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| a + c * b).collect(),
        ))
    }
}

/// Two fields on one grid: `(u₁, u₂)` or `(Ψ₁, Ψ₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair<T> {
    pub first: Field<T>,
    pub second: Field<T>,
}

pub type RealPair = Pair<f64>;
pub type ComplexPair = Pair<Complex64>;

impl<T: FieldValue> Pair<T> {
    pub fn new(first: Field<T>, second: Field<T>) -> Result<Self> {
        same_grid(&first.grid, &second.grid)?;
        Ok(Pair { first, second })
    }

    pub fn zeros(grid: Grid) -> Self {
        Pair {
            first: Field::zeros(grid),
            second: Field::zeros(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.first.grid
    }

    /// Component `i ∈ {0, 1}`.
    pub fn component(&self, i: usize) -> &Field<T> {
        match i {
            0 => &self.first,
            _ => &self.second,
        }
    }

    pub fn components(&self) -> [&Field<T>; 2] {
        [&self.first, &self.second]
    }

    pub fn map(&self, f: impl Fn(&Field<T>) -> Field<T>) -> Self {
        Pair {
            first: f(&self.first),
            second: f(&self.second),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|f| f.scaled(c))
    }

    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        Ok(Pair {
            first: self.first.add_scaled(c, &other.first)?,
            second: self.second.add_scaled(c, &other.second)?,
        })
    }

    pub fn masses(&self) -> [f64; 2] {
        [self.first.mass(), self.second.mass()]
    }

    /// `L²` distance of the stacked pair.
    pub fn l2_distance(&self, other: &Self) -> Result<f64> {
        let a = self.first.l2_distance(&other.first)?;
        let b = self.second.l2_distance(&other.second)?;
        Ok(a.hypot(b))
    }
}

impl RealPair {
    pub fn abs(&self) -> RealPair {
        self.map(RealField::abs)
    }

    pub fn to_complex(&self) -> ComplexPair {
        self.map_to(|f| f.to_complex())
    }

    fn map_to(&self, f: impl Fn(&RealField) -> ComplexField) -> ComplexPair {
        Pair {
            first: f(&self.first),
            second: f(&self.second),
        }
    }

    /// Stacked real `L²` inner product.
    pub fn dot(&self, other: &RealPair) -> Result<f64> {
        Ok(self.first.dot(&other.first)? + self.second.dot(&other.second)?)
    }
}

impl ComplexPair {
    pub fn modulus(&self) -> RealPair {
        Pair {
            first: modulus_field(&self.first),
            second: modulus_field(&self.second),
        }
    }
}

pub(crate) fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::MismatchedGrid)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Discrete Dirichlet Laplacian on raw nodal values.
pub(crate) fn laplacian_values<T: FieldValue>(grid: &Grid, f: &[T]) -> Vec<T> {
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let zero = T::default();
    let mut out = vec![zero; f.len()];
    match grid.dim() {
        1 => {
            for i in 0..n {
                let l = if i > 0 { f[i - 1] } else { zero };
                let r = if i + 1 < n { f[i + 1] } else { zero };
                out[i] = (l + r - f[i] * 2.0) * inv_h2;
            }
        }
        _ => {
            for i in 0..n {
                for j in 0..n {
                    let k = i * n + j;
                    let up = if i > 0 { f[k - n] } else { zero };
                    let down = if i + 1 < n { f[k + n] } else { zero };
                    let left = if j > 0 { f[k - 1] } else { zero };
                    let right = if j + 1 < n { f[k + 1] } else { zero };
                    out[k] = (up + down + left + right - f[k] * 4.0) * inv_h2;
                }
            }
        }
    }
    out
}

/// Applies the discrete Laplacian.
pub fn laplacian_apply<T: FieldValue>(f: &Field<T>) -> Field<T> {
    f.laplacian()
}

/// Interior-node quadrature `Σ f h^dim`.
pub fn integrate(f: &RealField) -> f64 {
    f.grid.cell_volume() * f.values.iter().sum::<f64>()
}

/// `Σᵢ ∫ (|∇uᵢ|² + Vᵢ|uᵢ|²)`.
pub fn h_norm_sq<T: FieldValue>(p: &Pair<T>, v1: &RealField, v2: &RealField) -> Result<f64> {
    Ok(p.first.h_energy(v1)? + p.second.h_energy(v2)?)
}

/// `∫ f g` for complex `f` and real `g`.
pub fn l2_inner(f: &ComplexField, g: &RealField) -> Result<Complex64> {
    same_grid(&f.grid, &g.grid)?;
    let s: Complex64 = f.values.iter().zip(&g.values).map(|(&a, &b)| a * b).sum();
    Ok(s * f.grid.cell_volume())
}

/// Pointwise modulus `|f|`.
pub fn modulus_field(f: &ComplexField) -> RealField {
    Field::from_vec(f.grid, f.values.iter().map(|v| v.norm()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize, l: f64) -> Grid {
        Grid::new(1, n, l).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(3, 16, 1.0).is_err());
        assert!(Grid::new(1, 7, 1.0).is_err());
        assert!(Grid::new(2, 16, 0.0).is_err());
        let g = Grid::new(2, 16, 2.0).unwrap();
        assert_eq!(g.len(), 256);
        assert!((g.spacing() - 4.0 / 17.0).abs() < 1e-15);
    }

    #[test]
    fn laplacian_of_zero_and_affine() {
        let g = line(32, 1.0);
        let z = RealField::zeros(g).laplacian();
        assert!(z.values().iter().all(|&v| v == 0.0));

        let f = RealField::from_fn(g, |x| x[0]);
        let lap = f.laplacian();
        let h = g.spacing();
        for k in 1..31 {
            assert!(lap.values()[k].abs() < 1e-9, "node {k}: {}", lap.values()[k]);
        }
        // Ghosts are zero: at the left node the stencil sees (0 - 2x₀ + x₁)/h².
        let x0 = g.axis_coord(0);
        let expect = (0.0 - 2.0 * x0 + g.axis_coord(1)) / (h * h);
        assert!((lap.values()[0] - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn laplacian_of_sine_converges_at_second_order() {
        let l = PI / 2.0;
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [31, 63, 127, 255] {
            let g = line(n, l);
            let f = RealField::from_fn(g, |x| (PI * (x[0] + l) / (2.0 * l)).sin());
            let lap = f.laplacian();
            // -d²/dx² of sin(π(x+L)/2L) = (π/2L)² sin = sin when L = π/2.
            let err = f
                .values()
                .iter()
                .zip(lap.values())
                .map(|(a, b)| (a + b).abs())
                .fold(0.0, f64::max);
            errs.push(err);
            hs.push(g.spacing());
        }
        let slope = (errs[0].ln() - errs[3].ln()) / (hs[0].ln() - hs[3].ln());
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn quadrature_examples() {
        let g = line(999, 5.0);
        let one = RealField::from_fn(g, |_| 1.0);
        assert!((integrate(&one) - 9.99).abs() < 1e-12);

        let g = line(1023, 10.0);
        let gauss = RealField::from_fn(g, |x| PI.powf(-0.5) * (-x[0] * x[0]).exp());
        assert!((integrate(&gauss) - 1.0).abs() < 1e-8);

        let odd = RealField::from_fn(g, |x| x[0]);
        assert!(integrate(&odd).abs() < 1e-12);
    }

    #[test]
    fn h_norm_is_quadratic() {
        let g = line(64, 4.0);
        let v = RealField::from_fn(g, |x| x[0] * x[0]);
        let p = Pair::new(
            RealField::from_fn(g, |x| (-x[0] * x[0]).exp()),
            RealField::from_fn(g, |x| x[0] * (-x[0] * x[0]).exp()),
        )
        .unwrap();
        let base = h_norm_sq(&p, &v, &v).unwrap();
        let tripled = h_norm_sq(&p.scaled(3.0), &v, &v).unwrap();
        assert!((tripled - 9.0 * base).abs() < 1e-12 * tripled);
        assert_eq!(h_norm_sq(&RealPair::zeros(g), &v, &v).unwrap(), 0.0);
    }

    #[test]
    fn inner_products_and_modulus() {
        let g = line(511, 10.0);
        let gauss = RealField::from_fn(g, |x| PI.powf(-0.25) * (-x[0] * x[0] / 2.0).exp());
        let c = gauss.to_complex();
        assert!((l2_inner(&c, &gauss).unwrap() - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        let ic = c.times(Complex64::i());
        assert!((l2_inner(&ic, &gauss).unwrap() - Complex64::i()).norm() < 1e-10);

        let rotated = c.times(Complex64::from_polar(1.0, 0.7));
        let m = modulus_field(&rotated);
        for (a, b) in m.values().iter().zip(gauss.values()) {
            assert!((a - b).abs() <= 1e-15 * b.max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = RealField::zeros(line(16, 1.0));
        let b = RealField::zeros(line(17, 1.0));
        assert!(matches!(a.dot(&b), Err(Error::MismatchedGrid)));
        assert!(matches!(Pair::new(a, b), Err(Error::MismatchedGrid)));
    }

    #[test]
    fn two_dimensional_stencil_is_separable() {
        let g = Grid::new(2, 20, 1.5).unwrap();
        let fx = |x: f64| (PI * (x + 1.5) / 3.0).sin();
        let f = RealField::from_fn(g, |p| fx(p[0]) * fx(p[1]));
        // Discrete sine modes are exact eigenvectors of the stencil.
        let h = g.spacing();
        let mu = 4.0 / (h * h) * (PI * h / 6.0).sin().powi(2);
        let lap = f.laplacian();
        for (a, b) in lap.values().iter().zip(f.values()) {
            assert!((a + 2.0 * mu * b).abs() < 1e-10);
        }
    }
}
