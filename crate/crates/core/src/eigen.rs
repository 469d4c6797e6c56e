//! Principal eigenpair of the discrete `-Δ + V` by inverse power iteration.

use crate::error::{Error, Result};
use crate::grid::{dot, RealField};
use crate::linalg::{conjugate_gradient, SchrodingerOperator};

pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;

const MAX_OUTER: usize = 2000;
const INNER_TOL: f64 = 1e-14;

/// Ground state `(λ_V, φ_V)` with `∫φ² = 1`, `φ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub lambda: f64,
    pub phi: RealField,
    /// `‖(-Δ + V)φ − λφ‖_{L²}`.
    pub residual: f64,
    pub iterations: usize,
}

/// Inverse iteration with shift 0; each step solves `(-Δ + V) y = x` by CG.
pub fn principal_eigenpair(v: &RealField, tol: f64) -> Result<Eigenpair> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("eigen tolerance must be positive, got {tol}")));
    }
    if v.values().iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidParameter("potential must be nonnegative".into()));
    }
    let grid = *v.grid();
    let w = grid.cell_volume();
    let op = SchrodingerOperator::new(v);
    let n = grid.len();
    let inner_max = 50 * n.max(100);

    let l2_normalize = |x: &mut [f64]| {
        let s = (w * dot(x, x)).sqrt();
        x.iter_mut().for_each(|a| *a /= s);
    };

    let mut x = vec![1.0; n];
    l2_normalize(&mut x);
    let mut lambda = w * dot(&op.apply(&x), &x);
    let mut residual = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut ax = vec![0.0; n];

    for it in 1..=MAX_OUTER {
        // Warm start: y ≈ x / λ once the iteration settles.
        let mut y: Vec<f64> = x.iter().map(|a| a / lambda).collect();
        conjugate_gradient(|f, o| op.apply_into(f, o), &x, &mut y, INNER_TOL, inner_max, None);
        l2_normalize(&mut y);
        x = y;
        op.apply_into(&x, &mut ax);
        lambda = w * dot(&ax, &x);
        residual = (w * ax
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>())
        .sqrt();
        if residual <= tol {
            return finish(grid, x, lambda, residual, it);
        }
        if residual < 0.5 * best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > 50 {
                return Err(Error::NoConvergence {
                    what: "principal eigenpair".into(),
                    iterations: it,
                    residual,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        what: "principal eigenpair".into(),
        iterations: MAX_OUTER,
        residual,
    })
}

fn finish(
    grid: crate::grid::Grid,
    mut x: Vec<f64>,
    lambda: f64,
    residual: f64,
    iterations: usize,
) -> Result<Eigenpair> {
    let (mut kmax, mut vmax) = (0, 0.0);
    for (k, v) in x.iter().enumerate() {
        if v.abs() > vmax {
            vmax = v.abs();
            kmax = k;
        }
    }
    if x[kmax] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    // Deep in the tails the ground state sits below the solver's absolute
    // accuracy; anything more negative than that is not a ground state.
    let floor = 1e-9 * vmax;
    if let Some(k) = x.iter().position(|&v| v < -floor) {
        return Err(Error::NoConvergence {
            what: format!("ground state sign check (node {k} = {:e})", x[k]),
            iterations,
            residual,
        });
    }
    x.iter_mut().for_each(|v| *v = v.abs());
    Ok(Eigenpair {
        lambda,
        phi: RealField::new(grid, x)?,
        residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    #[test]
    fn harmonic_oscillator_1d() {
        let g = Grid::new(1, 1024, 10.0).unwrap();
        let v = RealField::from_fn(g, |x| x[0] * x[0]);
        let e = principal_eigenpair(&v, DEFAULT_EIGEN_TOL).unwrap();
        assert!((e.lambda - 1.0).abs() < 1e-4, "{}", e.lambda);
        assert!(e.residual <= DEFAULT_EIGEN_TOL);
        let exact = RealField::from_fn(g, |x| PI.powf(-0.25) * (-x[0] * x[0] / 2.0).exp());
        assert!(e.phi.l2_distance(&exact).unwrap() < 1e-3);
        assert!((e.phi.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_box_without_potential() {
        let l = 1.5;
        let g = Grid::new(1, 200, l).unwrap();
        let e = principal_eigenpair(&RealField::zeros(g), DEFAULT_EIGEN_TOL).unwrap();
        let exact = (PI / (2.0 * l)).powi(2);
        assert!((e.lambda - exact).abs() < 10.0 * g.spacing().powi(2), "{}", e.lambda);
        assert!(e.phi.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn rejects_negative_potential() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let v = RealField::from_fn(g, |x| x[0]);
        assert!(principal_eigenpair(&v, 1e-10).is_err());
    }
}
