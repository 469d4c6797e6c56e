//! Physical data of the coupled system: trapping potentials, scattering
//! lengths, constraint targets, and the functionals `F`, `E_γ` and the action.

use std::path::PathBuf;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::eigen::{principal_eigenpair, Eigenpair, DEFAULT_EIGEN_TOL};
use crate::error::{Error, Result};
use crate::fielddump;
use crate::grid::{same_grid, FieldValue, Field, Grid, Pair, RealField, RealPair};
use crate::linalg::SchrodingerOperator;

/// Trapping potential catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialSpec {
    /// `|x|²`
    Harmonic,
    /// `Σ aᵢ xᵢ²`
    AnisotropicHarmonic { coeffs: Vec<f64> },
    /// `|x|⁴`
    Quartic,
    /// Tabulated values from a `gpfield v1` dump on the same grid.
    CustomFile { path: PathBuf },
}

impl PotentialSpec {
    pub fn evaluate(&self, grid: &Grid) -> Result<RealField> {
        let field = match self {
            PotentialSpec::Harmonic => RealField::from_fn(*grid, |x| x[0] * x[0] + x[1] * x[1]),
            PotentialSpec::AnisotropicHarmonic { coeffs } => {
                if coeffs.len() != grid.dim() {
                    return Err(Error::InvalidParameter(format!(
                        "anisotropic potential needs {} coefficients, got {}",
                        grid.dim(),
                        coeffs.len()
                    )));
                }
                let a = [coeffs[0], coeffs.get(1).copied().unwrap_or(0.0)];
                RealField::from_fn(*grid, |x| a[0] * x[0] * x[0] + a[1] * x[1] * x[1])
            }
            PotentialSpec::Quartic => RealField::from_fn(*grid, |x| (x[0] * x[0] + x[1] * x[1]).powi(2)),
            PotentialSpec::CustomFile { path } => {
                let f = fielddump::load(path)?.into_real()?;
                same_grid(f.grid(), grid)?;
                f
            }
        };
        check_potential(&field)?;
        Ok(field)
    }
}

fn check_potential(v: &RealField) -> Result<()> {
    match v.values().iter().position(|&x| !(x.is_finite() && x >= 0.0)) {
        Some(k) => Err(Error::InvalidParameter(format!(
            "potential must be finite and nonnegative, node {k} has {}",
            v.values()[k]
        ))),
        None => Ok(()),
    }
}

/// Scattering lengths `(μ₁, μ₂, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringParams {
    pub mu1: f64,
    pub mu2: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeLabel {
    MixedSign,
    FocusingCoopOrComp,
    Defocusing,
    DefocusingWeakInteraction,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regime {
    pub nondeg: bool,
    pub label: RegimeLabel,
}

// Relative slack when comparing β against ±√(μ₁μ₂).
const DEGENERACY_TOL: f64 = 1e-12;

impl ScatteringParams {
    pub fn new(mu1: f64, mu2: f64, beta: f64) -> Self {
        ScatteringParams { mu1, mu2, beta }
    }

    pub fn classify(&self) -> Regime {
        classify(self)
    }

    /// Errors with the violated nondegeneracy clause when degenerate.
    pub fn require_nondegenerate(&self) -> Result<Regime> {
        let r = classify(self);
        if r.nondeg {
            return Ok(r);
        }
        let ScatteringParams { mu1, mu2, beta } = *self;
        let clause = if mu1 == 0.0 && mu2 == 0.0 {
            "mu1 and mu2 both vanish".to_string()
        } else if mu1 >= 0.0 && mu2 >= 0.0 {
            format!("beta = -sqrt(mu1*mu2) = {}", -(mu1 * mu2).sqrt())
        } else {
            format!("beta = sqrt(mu1*mu2) = {}", (mu1 * mu2).sqrt())
        };
        Err(Error::DegenerateRegime {
            mu1,
            mu2,
            beta,
            clause,
        })
    }

    /// `(μᵢ, β)` for component `i`.
    pub(crate) fn self_and_cross(&self, i: usize) -> (f64, f64) {
        match i {
            0 => (self.mu1, self.beta),
            _ => (self.mu2, self.beta),
        }
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= DEGENERACY_TOL * a.abs().max(b.abs()).max(1.0)
}

pub fn classify(s: &ScatteringParams) -> Regime {
    let ScatteringParams { mu1, mu2, beta } = *s;
    let not_both_zero = !(mu1 == 0.0 && mu2 == 0.0);
    let label = if mu1 * mu2 < 0.0 {
        RegimeLabel::MixedSign
    } else if mu1 >= 0.0 && mu2 >= 0.0 && not_both_zero && !near(beta, -(mu1 * mu2).sqrt()) {
        RegimeLabel::FocusingCoopOrComp
    } else if mu1 <= 0.0 && mu2 <= 0.0 && not_both_zero && !near(beta, (mu1 * mu2).sqrt()) {
        if mu1 < 0.0 && mu2 < 0.0 && beta * beta < mu1 * mu2 {
            RegimeLabel::DefocusingWeakInteraction
        } else {
            RegimeLabel::Defocusing
        }
    } else {
        RegimeLabel::Degenerate
    };
    Regime {
        nondeg: label != RegimeLabel::Degenerate,
        label,
    }
}

/// Target data `(α, ρ₁, ρ₂)` of the constrained problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub alpha: f64,
    pub rho1: f64,
    pub rho2: f64,
}

impl ConstraintSpec {
    pub fn new(alpha: f64, rho1: f64, rho2: f64) -> Result<Self> {
        if !(rho1 > 0.0 && rho2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "masses must be positive, got rho1={rho1}, rho2={rho2}"
            )));
        }
        if !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be finite, got {alpha}")));
        }
        Ok(ConstraintSpec { alpha, rho1, rho2 })
    }

    pub fn rho(&self, i: usize) -> f64 {
        if i == 0 {
            self.rho1
        } else {
            self.rho2
        }
    }
}

/// Grid, evaluated potentials and scattering lengths, with cached
/// principal eigenpairs.
#[derive(Debug)]
pub struct ModelParams {
    grid: Grid,
    v: [RealField; 2],
    ops: [SchrodingerOperator; 2],
    scattering: ScatteringParams,
    eigen: [OnceLock<Eigenpair>; 2],
}

impl Clone for ModelParams {
    fn clone(&self) -> Self {
        let m = ModelParams::new(self.v[0].clone(), self.v[1].clone(), self.scattering)
            .expect("validated on construction");
        for i in 0..2 {
            if let Some(e) = self.eigen[i].get() {
                let _ = m.eigen[i].set(e.clone());
            }
        }
        m
    }
}

impl ModelParams {
    pub fn new(v1: RealField, v2: RealField, scattering: ScatteringParams) -> Result<Self> {
        same_grid(v1.grid(), v2.grid())?;
        check_potential(&v1)?;
        check_potential(&v2)?;
        for x in [scattering.mu1, scattering.mu2, scattering.beta] {
            if !x.is_finite() {
                return Err(Error::InvalidParameter("scattering lengths must be finite".into()));
            }
        }
        Ok(ModelParams {
            grid: *v1.grid(),
            ops: [SchrodingerOperator::new(&v1), SchrodingerOperator::new(&v2)],
            v: [v1, v2],
            scattering,
            eigen: [OnceLock::new(), OnceLock::new()],
        })
    }

    pub fn from_specs(grid: Grid, p1: &PotentialSpec, p2: &PotentialSpec, s: ScatteringParams) -> Result<Self> {
        ModelParams::new(p1.evaluate(&grid)?, p2.evaluate(&grid)?, s)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self, i: usize) -> &RealField {
        &self.v[i]
    }

    pub fn operator(&self, i: usize) -> &SchrodingerOperator {
        &self.ops[i]
    }

    pub fn scattering(&self) -> &ScatteringParams {
        &self.scattering
    }

    pub fn with_scattering(&self, scattering: ScatteringParams) -> ModelParams {
        let mut m = self.clone();
        m.scattering = scattering;
        m
    }

    /// Smallest potential value on boundary-adjacent nodes.
    pub fn boundary_potential(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for k in 0..self.grid.len() {
            if self.grid.is_boundary_adjacent(k) {
                lo = lo.min(self.v[0].values()[k]).min(self.v[1].values()[k]);
            }
        }
        lo
    }

    /// Checks the box is large enough to stand in for the whole space.
    pub fn check_confinement(&self, floor: f64) -> Result<()> {
        let b = self.boundary_potential();
        if b < floor {
            return Err(Error::InvalidParameter(format!(
                "potential at the box boundary is {b}, below the confinement floor {floor}"
            )));
        }
        Ok(())
    }

    /// Principal eigenpair of `-Δ + Vᵢ`, computed once.
    pub fn eigenpair(&self, i: usize) -> Result<&Eigenpair> {
        if let Some(e) = self.eigen[i].get() {
            return Ok(e);
        }
        let e = principal_eigenpair(&self.v[i], DEFAULT_EIGEN_TOL)?;
        let _ = self.eigen[i].set(e);
        Ok(self.eigen[i].get().expect("just set"))
    }

    pub fn lambdas(&self) -> Result<[f64; 2]> {
        Ok([self.eigenpair(0)?.lambda, self.eigenpair(1)?.lambda])
    }

    /// `λ_{V₁}ρ₁ + λ_{V₂}ρ₂`.
    pub fn feasibility_threshold(&self, rho1: f64, rho2: f64) -> Result<f64> {
        feasibility_threshold(self, rho1, rho2)
    }
}

/// `λ_{V₁}ρ₁ + λ_{V₂}ρ₂`, below which the constraint set is empty.
pub fn feasibility_threshold(m: &ModelParams, rho1: f64, rho2: f64) -> Result<f64> {
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "masses must be positive, got rho1={rho1}, rho2={rho2}"
        )));
    }
    let [l1, l2] = m.lambdas()?;
    Ok(l1 * rho1 + l2 * rho2)
}

/// `F = ¼∫(μ₁|Φ₁|⁴ + 2β|Φ₁|²|Φ₂|² + μ₂|Φ₂|⁴)`.
pub fn eval_f<T: FieldValue>(p: &Pair<T>, s: &ScatteringParams) -> f64 {
    let a = p.first.modulus_sq();
    let b = p.second.modulus_sq();
    let sum: f64 = a
        .iter()
        .zip(&b)
        .map(|(x, y)| s.mu1 * x * x + 2.0 * s.beta * x * y + s.mu2 * y * y)
        .sum();
    0.25 * p.grid().cell_volume() * sum
}

/// Same quadrature as [`eval_f`] with absolute coefficients; the natural
/// scale for rounding in `F`.
pub(crate) fn eval_f_abs<T: FieldValue>(p: &Pair<T>, s: &ScatteringParams) -> f64 {
    eval_f(
        p,
        &ScatteringParams::new(s.mu1.abs(), s.mu2.abs(), s.beta.abs()),
    )
}

/// `E_γ = ½‖Ψ‖²_H − γF`.
pub fn eval_energy<T: FieldValue>(p: &Pair<T>, m: &ModelParams, gamma: f64) -> Result<f64> {
    same_grid(p.grid(), m.grid())?;
    let h = crate::grid::h_norm_sq(p, m.potential(0), m.potential(1))?;
    Ok(0.5 * h - gamma * eval_f(p, m.scattering()))
}

/// `½‖u‖²_H − γF + (ω₁/2)Q(u₁) + (ω₂/2)Q(u₂)`.
pub fn eval_action(p: &RealPair, m: &ModelParams, omega1: f64, omega2: f64, gamma: f64) -> Result<f64> {
    let [q1, q2] = p.masses();
    Ok(eval_energy(p, m, gamma)? + 0.5 * omega1 * q1 + 0.5 * omega2 * q2)
}

/// `L²` gradient of `F`: `(μ₁u₁³ + βu₁u₂², μ₂u₂³ + βu₂u₁²)`.
pub fn nonlinearity_gradient(p: &RealPair, s: &ScatteringParams) -> [Vec<f64>; 2] {
    let u = p.first.values();
    let w = p.second.values();
    let g1 = u
        .iter()
        .zip(w)
        .map(|(a, b)| s.mu1 * a * a * a + s.beta * a * b * b)
        .collect();
    let g2 = u
        .iter()
        .zip(w)
        .map(|(a, b)| s.mu2 * b * b * b + s.beta * b * a * a)
        .collect();
    [g1, g2]
}

/// Gradient of the action: `(-Δ + Vᵢ + ωᵢ)uᵢ − γ(μᵢuᵢ³ + βuᵢu_j²)`.
pub fn euler_lagrange_residual(
    p: &RealPair,
    m: &ModelParams,
    omega: [f64; 2],
    gamma: f64,
) -> Result<RealPair> {
    same_grid(p.grid(), m.grid())?;
    let zeta = nonlinearity_gradient(p, m.scattering());
    let comp = |i: usize| {
        let u = p.component(i).values();
        let au = m.operator(i).apply(u);
        let r = au
            .iter()
            .zip(u)
            .zip(&zeta[i])
            .map(|((a, x), z)| a + omega[i] * x - gamma * z)
            .collect();
        Field::from_vec(*p.grid(), r)
    };
    Ok(Pair {
        first: comp(0),
        second: comp(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn regime_examples() {
        let r = classify(&ScatteringParams::new(1.0, -1.0, 0.7));
        assert!(r.nondeg);
        assert_eq!(r.label, RegimeLabel::MixedSign);

        let r = classify(&ScatteringParams::new(1.0, 1.0, -1.0));
        assert!(!r.nondeg);
        assert_eq!(r.label, RegimeLabel::Degenerate);

        let r = classify(&ScatteringParams::new(-2.0, -2.0, 1.0));
        assert!(r.nondeg);
        assert_eq!(r.label, RegimeLabel::DefocusingWeakInteraction);
    }

    #[test]
    fn regime_edge_cases() {
        assert!(!classify(&ScatteringParams::new(0.0, 0.0, 0.3)).nondeg);
        assert!(!classify(&ScatteringParams::new(-1.0, -4.0, 2.0)).nondeg);
        assert_eq!(
            classify(&ScatteringParams::new(-1.0, -4.0, -2.0)).label,
            RegimeLabel::Defocusing
        );
        assert_eq!(
            classify(&ScatteringParams::new(-1.0, -1.0, 3.0)).label,
            RegimeLabel::Defocusing
        );
        assert_eq!(
            classify(&ScatteringParams::new(0.0, 2.0, 0.1)).label,
            RegimeLabel::FocusingCoopOrComp
        );
        assert!(!classify(&ScatteringParams::new(0.0, 2.0, 0.0)).nondeg);
        let err = ScatteringParams::new(1.0, 1.0, -1.0).require_nondegenerate().unwrap_err();
        assert!(err.to_string().contains("beta = -sqrt"), "{err}");
    }

    #[test]
    fn quartic_functional_of_gaussian_pair() {
        let g = Grid::new(1, 1023, 10.0).unwrap();
        let phi = RealField::from_fn(g, |x| PI.powf(-0.25) * (-x[0] * x[0] / 2.0).exp());
        let p = Pair::new(phi.clone(), phi).unwrap();
        let f = eval_f(&p, &ScatteringParams::new(-1.0, -1.0, 0.0));
        let expect = -0.5 / (2.0 * PI).sqrt();
        assert!((f - expect).abs() < 1e-4, "{f} vs {expect}");
        assert_eq!(eval_f(&RealPair::zeros(g), &ScatteringParams::new(1.0, 2.0, 3.0)), 0.0);
    }

    #[test]
    fn potential_catalog() {
        let g = Grid::new(2, 16, 2.0).unwrap();
        let v = PotentialSpec::AnisotropicHarmonic { coeffs: vec![1.0, 4.0] }
            .evaluate(&g)
            .unwrap();
        let x = g.point(37);
        assert!((v.values()[37] - (x[0] * x[0] + 4.0 * x[1] * x[1])).abs() < 1e-14);
        assert!(PotentialSpec::AnisotropicHarmonic { coeffs: vec![1.0] }
            .evaluate(&g)
            .is_err());
        assert!(PotentialSpec::AnisotropicHarmonic { coeffs: vec![1.0, -1.0] }
            .evaluate(&g)
            .is_err());
        let q = PotentialSpec::Quartic.evaluate(&g).unwrap();
        assert!((q.values()[0] - (2.0 * x_sq(&g, 0)).powi(2)).abs() < 1e-12);
    }

    fn x_sq(g: &Grid, k: usize) -> f64 {
        g.axis_coord(k).powi(2)
    }

    #[test]
    fn confinement_floor() {
        let g = Grid::new(1, 64, 10.0).unwrap();
        let m = ModelParams::from_specs(
            g,
            &PotentialSpec::Harmonic,
            &PotentialSpec::Harmonic,
            ScatteringParams::new(-1.0, -1.0, 0.5),
        )
        .unwrap();
        assert!(m.check_confinement(50.0).is_ok());
        assert!(m.check_confinement(200.0).is_err());
    }
}
