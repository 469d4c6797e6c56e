//! Diagnostics at the eigenfunction branch
//! `x̄(θ) = (cosθ/√λ₁ φ₁, sinθ/√λ₂ φ₂, −λ₁, −λ₂, 0)`, where the solution
//! branch leaves the threshold: the kernel direction of the linearized
//! Euler–Lagrange map, its nondegeneracy, and the `√ε` growth of `γ`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, Pair, RealField, RealPair};
use crate::linalg::{conjugate_gradient, SchrodingerOperator};
use crate::maximizer::{maximize, SolveOptions};
use crate::model::{nonlinearity_gradient, ConstraintSpec, ModelParams};

/// Relative tolerance of the projected solves for `ψᵢ`.
const PSI_TOL: f64 = 1e-12;

/// Allowed `|⟨rhsᵢ, φᵢ⟩| / ‖rhsᵢ‖` before the solve is refused.
const SOLVABILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPoint {
    pub theta: f64,
    pub rho_bar1: f64,
    pub rho_bar2: f64,
    pub u_bar: RealPair,
}

impl ThetaPoint {
    pub fn new(m: &ModelParams, theta: f64) -> Result<ThetaPoint> {
        if !(theta > 0.0 && theta < FRAC_PI_2) {
            return Err(Error::ThetaDegenerate(theta));
        }
        let [l1, l2] = m.lambdas()?;
        let (c, s) = (theta.cos(), theta.sin());
        Ok(ThetaPoint {
            theta,
            rho_bar1: c * c / l1,
            rho_bar2: s * s / l2,
            u_bar: Pair::new(
                m.eigenpair(0)?.phi.scaled(c / l1.sqrt()),
                m.eigenpair(1)?.phi.scaled(s / l2.sqrt()),
            )?,
        })
    }

    pub fn rho_bar(&self) -> [f64; 2] {
        [self.rho_bar1, self.rho_bar2]
    }
}

/// `(ψ₁, ψ₂, o₁, o₂, 1)` spanning the kernel of the linearization at `x̄(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelElement {
    pub theta: f64,
    pub psi1: RealField,
    pub psi2: RealField,
    pub o1: f64,
    pub o2: f64,
    /// `2 Σ (‖ψᵢ‖²_{Hᵢ} − λᵢ ∫ψᵢ²)`.
    pub nondeg_value: f64,
}

impl KernelElement {
    pub fn psi(&self) -> Result<RealPair> {
        Pair::new(self.psi1.clone(), self.psi2.clone())
    }

    /// Limit of `γ/√ε` along the bifurcating branch, `√(2/nondeg)`.
    pub fn predicted_ratio(&self) -> f64 {
        (2.0 / self.nondeg_value).sqrt()
    }
}

fn project_out(phi: &[f64], w: f64) -> impl Fn(&mut [f64]) + '_ {
    move |x: &mut [f64]| {
        let c = w * dot(x, phi);
        x.iter_mut().zip(phi).for_each(|(a, p)| *a -= c * p);
    }
}

pub fn kernel_element(m: &ModelParams, theta: f64) -> Result<KernelElement> {
    let tp = ThetaPoint::new(m, theta)?;
    let grid = *m.grid();
    let w = grid.cell_volume();
    let lambdas = m.lambdas()?;
    let zeta = nonlinearity_gradient(&tp.u_bar, m.scattering());
    let rho = tp.rho_bar();
    let mut o = [0.0; 2];
    let mut psi = Vec::with_capacity(2);
    let mut nondeg = 0.0;
    for i in 0..2 {
        let ubar = tp.u_bar.component(i).values();
        // ∫(μᵢūᵢ² + βū_j²)ūᵢ² = ∫ζᵢūᵢ.
        o[i] = w * dot(&zeta[i], ubar) / rho[i];
        let rhs: Vec<f64> = zeta[i].iter().zip(ubar).map(|(z, u)| z - o[i] * u).collect();
        let phi = m.eigenpair(i)?.phi.values();
        let rnorm = (w * dot(&rhs, &rhs)).sqrt();
        let overlap = w * dot(&rhs, phi);
        if rnorm > 0.0 && overlap.abs() > SOLVABILITY_TOL * rnorm {
            return Err(Error::RhsNotOrthogonal(overlap / rnorm));
        }
        let op = SchrodingerOperator::shifted(m.potential(i), -lambdas[i]);
        let proj = project_out(phi, w);
        let mut x = vec![0.0; rhs.len()];
        let out = conjugate_gradient(
            |f, o| op.apply_into(f, o),
            &rhs,
            &mut x,
            PSI_TOL,
            50 * rhs.len().max(100),
            Some(&proj),
        );
        if !out.converged {
            return Err(Error::LinearSolveFailure(format!(
                "projected solve for psi{} stalled at {:e}",
                i + 1,
                out.residual
            )));
        }
        // Orthogonal to ūᵢ, which is parallel to φᵢ.
        proj(&mut x);
        let ax = m.operator(i).apply(&x);
        nondeg += 2.0 * w * (dot(&ax, &x) - lambdas[i] * dot(&x, &x));
        psi.push(RealField::new(grid, x)?);
    }
    let psi2 = psi.pop().expect("two components");
    let psi1 = psi.pop().expect("two components");
    Ok(KernelElement {
        theta,
        psi1,
        psi2,
        o1: o[0],
        o2: o[1],
        nondeg_value: nondeg,
    })
}

/// Image of a direction `(v₁, v₂, o₁, o₂, g)` under the linearization at
/// `x̄(θ)` of `(uᵢ, ωᵢ, γ) ↦ ((-Δ+Vᵢ+ωᵢ)uᵢ − γζᵢ(u), ∫uᵢ², Σ‖uᵢ‖²_{Hᵢ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedImage {
    pub field: RealPair,
    /// `2∫ūᵢvᵢ`.
    pub mass_rows: [f64; 2],
    /// `2Σ⟨(-Δ+Vᵢ)ūᵢ, vᵢ⟩`.
    pub h_row: f64,
}

pub fn linearized_apply(m: &ModelParams, tp: &ThetaPoint, v: &RealPair, o: [f64; 2], g: f64) -> Result<LinearizedImage> {
    let grid = *m.grid();
    let w = grid.cell_volume();
    let lambdas = m.lambdas()?;
    let zeta = nonlinearity_gradient(&tp.u_bar, m.scattering());
    let mut fields = Vec::with_capacity(2);
    let mut mass_rows = [0.0; 2];
    let mut h_row = 0.0;
    for i in 0..2 {
        let vi = v.component(i).values();
        let ubar = tp.u_bar.component(i).values();
        let av = m.operator(i).apply(vi);
        let aubar = m.operator(i).apply(ubar);
        let f: Vec<f64> = (0..vi.len())
            .map(|k| av[k] - lambdas[i] * vi[k] + o[i] * ubar[k] - g * zeta[i][k])
            .collect();
        fields.push(RealField::new(grid, f)?);
        mass_rows[i] = 2.0 * w * dot(ubar, vi);
        h_row += 2.0 * w * dot(&aubar, vi);
    }
    let second = fields.pop().expect("two components");
    let first = fields.pop().expect("two components");
    Ok(LinearizedImage {
        field: Pair::new(first, second)?,
        mass_rows,
        h_row,
    })
}

/// Largest relative residual of the kernel element under the linearization:
/// field rows against `‖ζ(ū)‖`, scalar rows against `‖ū‖‖ψ‖` in `H`.
pub fn kernel_residual(m: &ModelParams, k: &KernelElement) -> Result<f64> {
    let tp = ThetaPoint::new(m, k.theta)?;
    let psi = k.psi()?;
    let img = linearized_apply(m, &tp, &psi, [k.o1, k.o2], 1.0)?;
    let w = m.grid().cell_volume();
    let zeta = nonlinearity_gradient(&tp.u_bar, m.scattering());
    let zscale = (w * (dot(&zeta[0], &zeta[0]) + dot(&zeta[1], &zeta[1]))).sqrt();
    let field = (img.field.first.mass() + img.field.second.mass()).sqrt() / zscale;
    let hu = crate::grid::h_norm_sq(&tp.u_bar, m.potential(0), m.potential(1))?.sqrt();
    let hp = crate::grid::h_norm_sq(&psi, m.potential(0), m.potential(1))?.sqrt();
    let scale = (hu * hp).max(f64::MIN_POSITIVE);
    let scalars = img.mass_rows[0].abs().max(img.mass_rows[1].abs()).max(img.h_row.abs()) / scale;
    Ok(field.max(scalars))
}

/// One `ε` of a small-mass run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub eps: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub ratio_gamma_sqrt_eps: f64,
    pub l2_dist_to_anchor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub theta: f64,
    /// Least-squares slope of `log γ` against `log ε`.
    pub slope: f64,
    pub intercept: f64,
    pub samples: Vec<ScalingSample>,
    /// `γ/√ε` at the smallest `ε`: an empirical value of the branch
    /// coefficient.
    pub empirical_ratio: f64,
}

/// Maximizes at `(α, ρ̄₁(θ), ρ̄₂(θ))` with `α = T(1 + ε)`, `T` the threshold
/// (which is 1 for these masses), for each `ε`, and fits `log γ` vs `log ε`.
pub fn small_mass_scaling(m: &ModelParams, theta: f64, eps_grid: &[f64], opts: &SolveOptions) -> Result<ScalingReport> {
    if eps_grid.len() < 2 || eps_grid.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::InvalidParameter("need at least two positive eps values".into()));
    }
    let tp = ThetaPoint::new(m, theta)?;
    let threshold = m.feasibility_threshold(tp.rho_bar1, tp.rho_bar2)?;
    let samples: Vec<ScalingSample> = eps_grid
        .par_iter()
        .map(|&eps| {
            let alpha = threshold * (1.0 + eps);
            let c = ConstraintSpec::new(alpha, tp.rho_bar1, tp.rho_bar2)?;
            let s = maximize(m, &c, None, opts).map_err(|e| e.at_alpha(alpha))?;
            Ok(ScalingSample {
                eps,
                alpha,
                gamma: s.gamma,
                ratio_gamma_sqrt_eps: s.gamma / eps.sqrt(),
                l2_dist_to_anchor: s.pair.l2_distance(&tp.u_bar)?,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(s) = samples.iter().find(|s| !(s.gamma > 0.0)) {
        return Err(Error::NonpositiveGamma(s.gamma));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.eps.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.gamma.ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    let smallest = samples
        .iter()
        .min_by(|a, b| a.eps.total_cmp(&b.eps))
        .expect("nonempty grid");
    Ok(ScalingReport {
        theta,
        slope,
        intercept,
        empirical_ratio: smallest.ratio_gamma_sqrt_eps,
        samples,
    })
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// CSV with columns `eps,alpha,gamma,ratio_gamma_sqrt_eps,l2_dist_to_anchor`.
pub fn write_scaling_csv<W: Write>(r: &ScalingReport, mut out: W) -> Result<()> {
    writeln!(out, "eps,alpha,gamma,ratio_gamma_sqrt_eps,l2_dist_to_anchor")?;
    for s in &r.samples {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e}",
            s.eps, s.alpha, s.gamma, s.ratio_gamma_sqrt_eps, s.l2_dist_to_anchor
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassWindow {
    pub theta_minus: f64,
    pub theta_plus: f64,
    /// `min_θ (ρ̄₁ + ρ̄₂) √γ(ε, θ)` over the sample.
    pub m_bar: f64,
    /// `(θ, γ(ε, θ))` at each sampled angle.
    pub samples: Vec<(f64, f64)>,
}

/// Angles `θ₋ = arctan√(λ₂/(kλ₁))`, `θ₊ = arctan√(kλ₂/λ₁)` covering mass
/// ratios in `[1/k, k]`.
pub fn theta_window(m: &ModelParams, k: f64) -> Result<(f64, f64)> {
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::InvalidParameter(format!("mass ratio bound must be >= 1, got {k}")));
    }
    let [l1, l2] = m.lambdas()?;
    Ok(((l2 / (k * l1)).sqrt().atan(), (k * l2 / l1).sqrt().atan()))
}

pub fn mass_window(m: &ModelParams, k: f64, eps: f64, samples: usize, opts: &SolveOptions) -> Result<MassWindow> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let (lo, hi) = theta_window(m, k)?;
    let n = if hi > lo { samples.max(2) } else { 1 };
    let thetas: Vec<f64> = (0..n)
        .map(|j| if n == 1 { lo } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 })
        .collect();
    let results: Vec<(f64, f64, f64)> = thetas
        .par_iter()
        .map(|&theta| {
            let tp = ThetaPoint::new(m, theta)?;
            let t = m.feasibility_threshold(tp.rho_bar1, tp.rho_bar2)?;
            let alpha = t * (1.0 + eps);
            let c = ConstraintSpec::new(alpha, tp.rho_bar1, tp.rho_bar2)?;
            let s = maximize(m, &c, None, opts).map_err(|e| e.at_alpha(alpha))?;
            if !(s.gamma > 0.0) {
                return Err(Error::NonpositiveGamma(s.gamma));
            }
            Ok((theta, s.gamma, (tp.rho_bar1 + tp.rho_bar2) * s.gamma.sqrt()))
        })
        .collect::<Result<_>>()?;
    let m_bar = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    Ok(MassWindow {
        theta_minus: lo,
        theta_plus: hi,
        m_bar,
        samples: results.iter().map(|r| (r.0, r.1)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{PotentialSpec, ScatteringParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn harmonic(mu1: f64, mu2: f64, beta: f64, n: usize) -> ModelParams {
        let g = Grid::new(1, n, 10.0).unwrap();
        ModelParams::from_specs(
            g,
            &PotentialSpec::Harmonic,
            &PotentialSpec::Harmonic,
            ScatteringParams::new(mu1, mu2, beta),
        )
        .unwrap()
    }

    /// `½∫φ⁴` for the harmonic ground state, `1/(2√(2π))`.
    fn half_phi4() -> f64 {
        0.5 / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn symmetric_point_values() {
        let m = harmonic(1.0, 1.0, 0.0, 1023);
        let k = kernel_element(&m, FRAC_PI_4).unwrap();
        assert!((k.o1 - half_phi4()).abs() < 1e-4, "{}", k.o1);
        assert!((k.o2 - half_phi4()).abs() < 1e-4, "{}", k.o2);
        assert!(k.nondeg_value > 0.0);
        assert!(kernel_residual(&m, &k).unwrap() < 1e-6);
    }

    #[test]
    fn o_is_linear_in_beta_at_the_symmetric_point() {
        for beta in [-0.5, 0.3, 0.8] {
            let m = harmonic(1.0, 1.0, beta, 511);
            let k = kernel_element(&m, FRAC_PI_4).unwrap();
            let expected = (1.0 + beta) * half_phi4();
            assert!((k.o1 - expected).abs() < 2e-4, "{beta}: {}", k.o1);
        }
    }

    #[test]
    fn kernel_is_orthogonal_and_nondegenerate_across_theta() {
        let m = harmonic(1.0, -1.0, 0.3, 511);
        for theta in [0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3, 1.5] {
            let k = kernel_element(&m, theta).unwrap();
            let tp = ThetaPoint::new(&m, theta).unwrap();
            assert!(k.psi1.dot(&tp.u_bar.first).unwrap().abs() < 1e-12);
            assert!(k.psi2.dot(&tp.u_bar.second).unwrap().abs() < 1e-12);
            assert!(k.nondeg_value > 0.0, "{theta}");
            assert!(kernel_residual(&m, &k).unwrap() < 1e-6, "{theta}");
        }
    }

    #[test]
    fn theta_point_masses() {
        let m = harmonic(1.0, 1.0, 0.2, 255);
        let tp = ThetaPoint::new(&m, 0.4).unwrap();
        let [q1, q2] = tp.u_bar.masses();
        assert!((q1 - tp.rho_bar1).abs() < 1e-12 && (q2 - tp.rho_bar2).abs() < 1e-12);
        assert!((m.feasibility_threshold(tp.rho_bar1, tp.rho_bar2).unwrap() - 1.0).abs() < 1e-12);
        for bad in [0.0, FRAC_PI_2, -0.1, 2.0] {
            assert!(matches!(ThetaPoint::new(&m, bad), Err(Error::ThetaDegenerate(_))));
        }
    }

    #[test]
    fn range_satisfies_the_scalar_relation() {
        let m = harmonic(1.0, 1.0, 0.2, 255);
        let tp = ThetaPoint::new(&m, 0.6).unwrap();
        let l = m.lambdas().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let v = Pair::new(
                crate::maximizer::random_smooth_field(&m.eigenpair(0).unwrap().phi, &mut rng),
                crate::maximizer::random_smooth_field(&m.eigenpair(1).unwrap().phi, &mut rng),
            )
            .unwrap();
            let o = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let img = linearized_apply(&m, &tp, &v, o, rng.gen_range(-1.0..1.0)).unwrap();
            let k = l[0] * img.mass_rows[0] + l[1] * img.mass_rows[1];
            assert!((img.h_row - k).abs() < 1e-9 * (1.0 + k.abs()), "{} vs {k}", img.h_row);
        }
    }

    #[test]
    fn scaling_follows_the_square_root_law() {
        let m = harmonic(1.0, 1.0, 0.2, 511);
        let eps = log_grid(1e-4, 1e-2, 5);
        let r = small_mass_scaling(&m, FRAC_PI_4, &eps, &SolveOptions::default()).unwrap();
        assert!((r.slope - 0.5).abs() < 0.05, "{}", r.slope);
        let k = kernel_element(&m, FRAC_PI_4).unwrap();
        assert!((r.empirical_ratio / k.predicted_ratio() - 1.0).abs() < 0.05);
        assert!(r.samples[0].l2_dist_to_anchor < 1e-2);
        let g: Vec<f64> = r.samples.iter().map(|s| s.gamma).collect();
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn theta_window_closed_forms() {
        let m = harmonic(1.0, 1.0, 0.2, 255);
        let l = m.lambdas().unwrap();
        let (lo, hi) = theta_window(&m, 1.0).unwrap();
        let quarter = (l[1] / l[0]).sqrt().atan();
        assert!((lo - quarter).abs() < 1e-15 && (hi - quarter).abs() < 1e-15);
        // λ₁ = λ₂ here, so k = 4 gives arctan(½) and arctan(2).
        let (lo, hi) = theta_window(&m, 4.0).unwrap();
        assert!((lo - 0.5f64.atan()).abs() < 1e-12 && (hi - 2.0f64.atan()).abs() < 1e-12);
        assert!(theta_window(&m, 0.5).is_err());
        let w = mass_window(&m, 4.0, 1e-2, 5, &SolveOptions::default()).unwrap();
        assert!(w.m_bar > 0.0);
        assert_eq!(w.samples.len(), 5);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-4, 1e-2, 8);
        assert_eq!(g.len(), 8);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[7] - 1e-2).abs() < 1e-15);
    }
}
