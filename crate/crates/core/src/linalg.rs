//! Small linear-algebra kernels: conjugate gradients, tridiagonal solves and
//! the Schrödinger operator `-Δ + V` on a grid.

use std::ops::{Add, Div, Mul, Sub};

use crate::error::{Error, Result};
use crate::grid::{dot, laplacian_values, Grid, RealField};

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final `‖b - Ax‖ / ‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive (semi)definite operator.
///
/// `x` holds the initial guess on entry. When `project` is given the
/// iteration runs on the range of that projector, which must commute with
/// the operator; the residual and search direction are re-projected every
/// step.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
    project: Option<&dyn Fn(&mut [f64])>,
) -> CgOutcome {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    if let Some(p) = project {
        p(x);
    }
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    if let Some(p) = project {
        p(&mut r);
    }
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while it < max_iter {
        if rr.sqrt() <= rel_tol * bnorm {
            break;
        }
        apply(&d, &mut ap);
        if let Some(p) = project {
            p(&mut ap);
        }
        let dad = dot(&d, &ap);
        if dad <= 0.0 {
            break;
        }
        let step = rr / dad;
        for k in 0..n {
            x[k] += step * d[k];
            r[k] -= step * ap[k];
        }
        if let Some(p) = project {
            p(&mut r);
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            d[k] = r[k] + beta * d[k];
        }
        it += 1;
    }
    // Recompute the true residual; the recurrence drifts on long runs.
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    if let Some(p) = project {
        p(&mut r);
    }
    let residual = dot(&r, &r).sqrt() / bnorm;
    CgOutcome {
        iterations: it,
        residual,
        converged: residual <= rel_tol * 10.0,
    }
}

/// Thomas algorithm for a tridiagonal system with constant off-diagonals.
///
/// `diag[k] x[k] + off (x[k-1] + x[k+1]) = rhs[k]`.
pub fn solve_tridiagonal<T>(diag: &[T], off: T, rhs: &[T]) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<Output = T> + Div<Output = T>,
{
    let n = diag.len();
    let mut c = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut denom = diag[0];
    c.push(off / denom);
    d.push(rhs[0] / denom);
    for k in 1..n {
        denom = diag[k] - off * c[k - 1];
        c.push(off / denom);
        d.push((rhs[k] - off * d[k - 1]) / denom);
    }
    let mut x = d;
    for k in (0..n - 1).rev() {
        let next = x[k + 1];
        x[k] = x[k] - c[k] * next;
    }
    x
}

/// `-Δ + V + shift` with Dirichlet boundary.
#[derive(Debug, Clone)]
pub struct SchrodingerOperator {
    grid: Grid,
    diag_potential: Vec<f64>,
}

impl SchrodingerOperator {
    pub fn new(v: &RealField) -> Self {
        Self::shifted(v, 0.0)
    }

    pub fn shifted(v: &RealField, shift: f64) -> Self {
        SchrodingerOperator {
            grid: *v.grid(),
            diag_potential: v.values().iter().map(|x| x + shift).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let lap = laplacian_values(&self.grid, f);
        for k in 0..f.len() {
            out[k] = -lap[k] + self.diag_potential[k] * f[k];
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out);
        out
    }

    /// CG solve of `A x = b` from a zero initial guess.
    pub fn solve_cg(&self, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let mut x = vec![0.0; b.len()];
        let out = conjugate_gradient(|f, o| self.apply_into(f, o), b, &mut x, rel_tol, max_iter, None);
        if !out.converged {
            return Err(Error::LinearSolveFailure(format!(
                "CG stalled at relative residual {:e} after {} iterations",
                out.residual, out.iterations
            )));
        }
        Ok(x)
    }

    /// Solve `A x = b`: direct in 1D, CG in 2D. Requires `A` positive definite.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self.grid.dim() {
            1 => {
                let h2 = self.grid.spacing().powi(2);
                let diag: Vec<f64> = self.diag_potential.iter().map(|v| 2.0 / h2 + v).collect();
                Ok(solve_tridiagonal(&diag, -1.0 / h2, b))
            }
            _ => self.solve_cg(b, 1e-14, 20 * b.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn tridiagonal_matches_direct_product() {
        let diag: Vec<f64> = vec![4.0, 5.0, 6.0, 7.0, 3.0];
        let off = -1.0;
        let x: Vec<f64> = vec![1.0, -2.0, 0.5, 3.0, 2.0];
        let mut b = vec![0.0; 5];
        for k in 0..5 {
            b[k] = diag[k] * x[k];
            if k > 0 {
                b[k] += off * x[k - 1];
            }
            if k < 4 {
                b[k] += off * x[k + 1];
            }
        }
        let y = solve_tridiagonal(&diag, off, &b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn complex_tridiagonal() {
        let diag = vec![Complex64::new(1.0, 2.0); 6];
        let off = Complex64::new(0.0, -1.0);
        let x: Vec<Complex64> = (0..6).map(|k| Complex64::new(k as f64, 1.0 - k as f64)).collect();
        let mut b = vec![Complex64::new(0.0, 0.0); 6];
        for k in 0..6 {
            b[k] = diag[k] * x[k];
            if k > 0 {
                b[k] += off * x[k - 1];
            }
            if k < 5 {
                b[k] += off * x[k + 1];
            }
        }
        let y = solve_tridiagonal(&diag, off, &b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn cg_agrees_with_direct_solve() {
        let g = Grid::new(1, 200, 5.0).unwrap();
        let v = RealField::from_fn(g, |x| x[0] * x[0]);
        let op = SchrodingerOperator::new(&v);
        let b: Vec<f64> = (0..200).map(|k| ((k as f64) * 0.1).sin()).collect();
        let direct = op.solve(&b).unwrap();
        let iter = op.solve_cg(&b, 1e-13, 5000).unwrap();
        let err = direct
            .iter()
            .zip(&iter)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}
