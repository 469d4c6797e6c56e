//! Constrained maximization of `F` over
//! `{‖u‖²_H = α, ∫u₁² = ρ₁, ∫u₂² = ρ₂}` and extraction of the multipliers
//! `(ω₁, ω₂, γ)` of the Euler–Lagrange system
//!
//! ```text
//! -Δuᵢ + (Vᵢ + ωᵢ)uᵢ = γ(μᵢuᵢ³ + βuᵢu_j²)
//! ```
//!
//! The ascent is a Riemannian gradient method in the `H` metric: the `L²`
//! gradient of `F` is preconditioned by `(-Δ + Vᵢ)⁻¹`, projected onto the
//! tangent space of the three constraints, and each trial point is mapped
//! back onto the constraint set by [`retract`]. The `H` metric makes the
//! curvature of the constraint manifold uniform across frequencies, so the
//! iteration count does not grow with grid refinement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, same_grid, Field, Pair, RealField, RealPair};
use crate::model::{
    eval_f, eval_f_abs, euler_lagrange_residual, nonlinearity_gradient, ConstraintSpec, ModelParams,
};

/// Solver tolerances and iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Tangent-gradient norm (in `H`) at which the ascent stops.
    pub gtol: f64,
    /// Relative constraint tolerance.
    pub ctol: f64,
    /// Relative Euler–Lagrange residual a solution must meet.
    pub rtol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    /// Relative `L²` size of the random perturbation of the initial guess;
    /// zero means the deterministic anchor.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gtol: 1e-8,
            ctol: 1e-10,
            rtol: 1e-6,
            max_iter: 20_000,
            armijo: 1e-4,
            perturbation: 0.0,
            seed: 0,
        }
    }
}

/// One point `(u₁, u₂, ω₁, ω₂, γ)` on the solution set, with its data.
#[derive(Debug, Clone, PartialEq)]
pub struct SolitarySolution {
    pub pair: RealPair,
    pub omega1: f64,
    pub omega2: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Attained value of `F`, i.e. `M(α, ρ₁, ρ₂)`.
    pub m_value: f64,
    /// Relative `L²` Euler–Lagrange residual.
    pub residual: f64,
    pub iterations: usize,
    /// Final tangent-gradient norm.
    pub grad_norm: f64,
    /// Largest relative constraint violation.
    pub constraint_violation: f64,
}

impl SolitarySolution {
    pub fn omega(&self) -> [f64; 2] {
        [self.omega1, self.omega2]
    }

    pub fn constraint(&self) -> ConstraintSpec {
        ConstraintSpec {
            alpha: self.alpha,
            rho1: self.rho1,
            rho2: self.rho2,
        }
    }
}

/// Solitary wave of the physical system, `Uᵢ = √γ uᵢ`, masses `mᵢ = γρᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalWave {
    pub pair: RealPair,
    pub omega1: f64,
    pub omega2: f64,
    pub m1: f64,
    pub m2: f64,
}

/// Per-component scalars needed by the retraction; all quadratic forms of
/// `span{uᵢ, φᵢ}`.
struct Moments {
    q: f64,
    h: f64,
    u_phi: f64,
    au_phi: f64,
    phi_h: f64,
}

fn moments(m: &ModelParams, u: &RealField, i: usize) -> Result<Moments> {
    let phi = &m.eigenpair(i)?.phi;
    let w = u.grid().cell_volume();
    let op = m.operator(i);
    let au = op.apply(u.values());
    let aphi = op.apply(phi.values());
    Ok(Moments {
        q: u.mass(),
        h: w * dot(&au, u.values()),
        u_phi: w * dot(u.values(), phi.values()),
        au_phi: w * dot(&au, phi.values()),
        phi_h: w * dot(&aphi, phi.values()),
    })
}

/// `max(|Qᵢ − ρᵢ|/ρᵢ, |‖u‖²_H − α|/α)`.
pub fn constraint_violation(p: &RealPair, m: &ModelParams, c: &ConstraintSpec) -> Result<f64> {
    let [q1, q2] = p.masses();
    let h = crate::grid::h_norm_sq(p, m.potential(0), m.potential(1))?;
    Ok(((q1 - c.rho1).abs() / c.rho1)
        .max((q2 - c.rho2).abs() / c.rho2)
        .max((h - c.alpha).abs() / c.alpha.abs().max(f64::MIN_POSITIVE)))
}

fn solve3(j: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    if !det.is_finite() || det == 0.0 {
        return None;
    }
    let col = |k: usize| {
        let mut a = j;
        for row in 0..3 {
            a[row][k] = r[row];
        }
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    Some([col(0) / det, col(1) / det, col(2) / det])
}

/// Newton solve for `(a, b, c)` with component `i` adjusted as
/// `(1+a)uᵢ + bφᵢ` and component `j` rescaled by `1+c`.
fn retract_coefficients(mi: &Moments, mj: &Moments, rho_i: f64, rho_j: f64, alpha: f64, ctol: f64) -> Option<[f64; 3]> {
    let resid = |z: [f64; 3]| {
        let s = 1.0 + z[0];
        let b = z[1];
        let t = 1.0 + z[2];
        [
            (s * s * mi.q + 2.0 * s * b * mi.u_phi + b * b - rho_i) / rho_i,
            (t * t * mj.q - rho_j) / rho_j,
            (s * s * mi.h + 2.0 * s * b * mi.au_phi + b * b * mi.phi_h + t * t * mj.h - alpha) / alpha,
        ]
    };
    let norm = |r: [f64; 3]| r.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut z = [(rho_i / mi.q).sqrt() - 1.0, 0.0, (rho_j / mj.q).sqrt() - 1.0];
    let mut r = resid(z);
    // Iterate down to rounding: constraint errors feed straight into the
    // values of F that the line search compares.
    let floor = 4.0 * f64::EPSILON;
    let target = 1e-3 * ctol;
    for _ in 0..100 {
        if norm(r) <= floor {
            break;
        }
        let s = 1.0 + z[0];
        let b = z[1];
        let t = 1.0 + z[2];
        let jac = [
            [(2.0 * s * mi.q + 2.0 * b * mi.u_phi) / rho_i, (2.0 * s * mi.u_phi + 2.0 * b) / rho_i, 0.0],
            [0.0, 0.0, 2.0 * t * mj.q / rho_j],
            [
                (2.0 * s * mi.h + 2.0 * b * mi.au_phi) / alpha,
                (2.0 * s * mi.au_phi + 2.0 * b * mi.phi_h) / alpha,
                2.0 * t * mj.h / alpha,
            ],
        ];
        let Some(dz) = solve3(jac, r) else { break };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = [z[0] - step * dz[0], z[1] - step * dz[1], z[2] - step * dz[2]];
            let rt = resid(trial);
            if norm(rt) < norm(r) {
                z = trial;
                r = rt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (norm(r) <= target).then_some(z)
}

/// Maps a pair onto the constraint set by
/// `w₁ = (1+a)u₁ + bφ_{V₁}`, `w₂ = (1+c)u₂` (roles swapped when only the
/// second component carries energy above its eigen-level).
pub fn retract(p: &RealPair, m: &ModelParams, c: &ConstraintSpec) -> Result<RealPair> {
    retract_with_tol(p, m, c, SolveOptions::default().ctol)
}

pub fn retract_with_tol(p: &RealPair, m: &ModelParams, c: &ConstraintSpec, ctol: f64) -> Result<RealPair> {
    same_grid(p.grid(), m.grid())?;
    let threshold = m.feasibility_threshold(c.rho1, c.rho2)?;
    if c.alpha < threshold * (1.0 - ctol) {
        return Err(Error::InfeasibleConstraint {
            alpha: c.alpha,
            threshold,
        });
    }
    let mom = [moments(m, &p.first, 0)?, moments(m, &p.second, 1)?];
    if mom[0].q == 0.0 || mom[1].q == 0.0 {
        return Err(Error::RetractFailure("both components must be nontrivial".into()));
    }
    if constraint_violation(p, m, c)? <= 16.0 * f64::EPSILON {
        return Ok(p.clone());
    }

    let lambdas = m.lambdas()?;
    let excess = [mom[0].h / mom[0].q - lambdas[0], mom[1].h / mom[1].q - lambdas[1]];
    let order = if excess[0] >= excess[1] { [0, 1] } else { [1, 0] };
    for &i in &order {
        let j = 1 - i;
        if excess[i] <= 1e-12 * lambdas[i] {
            continue;
        }
        let Some(z) = retract_coefficients(&mom[i], &mom[j], c.rho(i), c.rho(j), c.alpha, ctol) else {
            continue;
        };
        let phi = &m.eigenpair(i)?.phi;
        let wi = p.component(i).scaled(1.0 + z[0]).add_scaled(z[1], phi)?;
        let wj = p.component(j).scaled(1.0 + z[2]);
        let w = if i == 0 {
            Pair { first: wi, second: wj }
        } else {
            Pair { first: wj, second: wi }
        };
        if constraint_violation(&w, m, c)? <= ctol {
            return Ok(w);
        }
    }
    // At the threshold both components sit on their eigen-levels and only
    // the rescaling is left.
    let scale = [(c.rho1 / mom[0].q).sqrt(), (c.rho2 / mom[1].q).sqrt()];
    let rescaled = Pair {
        first: p.first.scaled(scale[0]),
        second: p.second.scaled(scale[1]),
    };
    if constraint_violation(&rescaled, m, c)? <= ctol {
        return Ok(rescaled);
    }
    Err(Error::RetractFailure(format!(
        "no component admits a correction (Rayleigh excess {:.3e}, {:.3e})",
        excess[0], excess[1]
    )))
}

/// Least-squares fit of `(ω₁, ω₂, γ)` and the relative residual
/// `√Σ‖rᵢ‖² / √Σ‖(-Δ+Vᵢ)uᵢ‖²`.
pub fn extract_multipliers(pair: &RealPair, m: &ModelParams) -> Result<(f64, f64, f64, f64)> {
    same_grid(pair.grid(), m.grid())?;
    if pair.first.mass() == 0.0 || pair.second.mass() == 0.0 {
        return Err(Error::SingularFit("a component vanishes".into()));
    }
    let n = pair.grid().len();
    let zeta = nonlinearity_gradient(pair, m.scattering());
    let au = [
        m.operator(0).apply(pair.first.values()),
        m.operator(1).apply(pair.second.values()),
    ];
    // Stacked columns of length 2n for the unknowns (ω₁, ω₂, γ).
    let mut cols: [Vec<f64>; 3] = [vec![0.0; 2 * n], vec![0.0; 2 * n], vec![0.0; 2 * n]];
    cols[0][..n].copy_from_slice(pair.first.values());
    cols[1][n..].copy_from_slice(pair.second.values());
    for k in 0..n {
        cols[2][k] = -zeta[0][k];
        cols[2][n + k] = -zeta[1][k];
    }
    let mut rhs = vec![0.0; 2 * n];
    for k in 0..n {
        rhs[k] = -au[0][k];
        rhs[n + k] = -au[1][k];
    }

    // Modified Gram–Schmidt QR.
    let mut q = cols.clone();
    let mut r = [[0.0; 3]; 3];
    for k in 0..3 {
        let orig = dot(&cols[k], &cols[k]).sqrt();
        for j in 0..k {
            let rjk = dot(&q[j], &q[k]);
            r[j][k] = rjk;
            let (head, tail) = q.split_at_mut(k);
            for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                *a -= rjk * b;
            }
        }
        let nk = dot(&q[k], &q[k]).sqrt();
        if orig == 0.0 || nk <= 1e-10 * orig {
            let what = ["omega1", "omega2", "gamma"][k];
            return Err(Error::SingularFit(format!(
                "column for {what} is (numerically) in the span of the others"
            )));
        }
        r[k][k] = nk;
        q[k].iter_mut().for_each(|v| *v /= nk);
    }
    let qtb = [dot(&q[0], &rhs), dot(&q[1], &rhs), dot(&q[2], &rhs)];
    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let mut s = qtb[k];
        for j in k + 1..3 {
            s -= r[k][j] * x[j];
        }
        x[k] = s / r[k][k];
    }
    let [omega1, omega2, gamma] = x;

    let mut res2 = 0.0;
    for k in 0..2 * n {
        let fit = cols[0][k] * omega1 + cols[1][k] * omega2 + cols[2][k] * gamma - rhs[k];
        res2 += fit * fit;
    }
    let scale = dot(&au[0], &au[0]) + dot(&au[1], &au[1]);
    Ok((omega1, omega2, gamma, (res2 / scale).sqrt()))
}

/// `(√γ u₁, √γ u₂, ω₁, ω₂)` with masses `γρᵢ`.
pub fn to_physical(s: &SolitarySolution) -> Result<PhysicalWave> {
    if !(s.gamma > 0.0) {
        return Err(Error::NonpositiveGamma(s.gamma));
    }
    let k = s.gamma.sqrt();
    Ok(PhysicalWave {
        pair: s.pair.scaled(k),
        omega1: s.omega1,
        omega2: s.omega2,
        m1: s.gamma * s.rho1,
        m2: s.gamma * s.rho2,
    })
}

/// The trivial solution at `α = λ₁ρ₁ + λ₂ρ₂`: scaled eigenfunctions with
/// `ωᵢ = -λᵢ`, `γ = 0`.
pub fn threshold_solution(m: &ModelParams, c: &ConstraintSpec) -> Result<SolitarySolution> {
    let e = [m.eigenpair(0)?, m.eigenpair(1)?];
    let pair = Pair {
        first: e[0].phi.scaled(c.rho1.sqrt()),
        second: e[1].phi.scaled(c.rho2.sqrt()),
    };
    let omega = [-e[0].lambda, -e[1].lambda];
    let res = euler_lagrange_residual(&pair, m, omega, 0.0)?;
    let residual = ((res.first.mass() + res.second.mass()) / l2_norm_sq_of_au(m, &pair)?).sqrt();
    let constraint_violation = constraint_violation(&pair, m, c)?;
    Ok(SolitarySolution {
        m_value: eval_f(&pair, m.scattering()),
        pair,
        omega1: omega[0],
        omega2: omega[1],
        gamma: 0.0,
        alpha: c.alpha,
        rho1: c.rho1,
        rho2: c.rho2,
        residual,
        iterations: 0,
        grad_norm: 0.0,
        constraint_violation,
    })
}

fn l2_norm_sq_of_au(m: &ModelParams, p: &RealPair) -> Result<f64> {
    let w = p.grid().cell_volume();
    let a0 = m.operator(0).apply(p.first.values());
    let a1 = m.operator(1).apply(p.second.values());
    Ok(w * (dot(&a0, &a0) + dot(&a1, &a1)))
}

/// Smooth random field `e(x) Σₖ aₖ cos(κₖ·x + θₖ)` under an envelope `e`.
pub fn random_smooth_field(envelope: &RealField, rng: &mut impl Rng) -> RealField {
    let grid = *envelope.grid();
    let modes: Vec<(f64, [f64; 2], f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let e = envelope.values();
    let values = (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            let s: f64 = modes
                .iter()
                .map(|(a, kk, th)| a * (kk[0] * x[0] + kk[1] * x[1] + th).cos())
                .sum();
            e[k] * s
        })
        .collect();
    Field::from_vec(grid, values)
}

/// Anchor `(√ρ₁φ₁, √ρ₂φ₂)` pushed off the eigenfunctions along the
/// preconditioned ascent direction of `F`, so that it can be retracted onto
/// the `α`-sphere; optionally randomly perturbed.
pub fn initial_guess(m: &ModelParams, c: &ConstraintSpec, opts: &SolveOptions) -> Result<RealPair> {
    let grid = *m.grid();
    let e = [m.eigenpair(0)?, m.eigenpair(1)?];
    let anchor = Pair {
        first: e[0].phi.scaled(c.rho1.sqrt()),
        second: e[1].phi.scaled(c.rho2.sqrt()),
    };
    let threshold = m.feasibility_threshold(c.rho1, c.rho2)?;
    let zeta = nonlinearity_gradient(&anchor, m.scattering());
    let mut dirs = Vec::with_capacity(2);
    for i in 0..2 {
        let phi = &e[i].phi;
        let mut d = RealField::new(grid, m.operator(i).solve(&zeta[i])?)?;
        let proj = d.dot(phi)?;
        d = d.add_scaled(-proj, phi)?;
        if d.mass().sqrt() < 1e-8 * anchor.component(i).mass().sqrt() {
            // F is flat to first order in this component; bend it with |x|².
            let bent = RealField::from_fn(grid, |x| x[0] * x[0] + x[1] * x[1]);
            let bent = Field::from_vec(
                grid,
                bent.values().iter().zip(phi.values()).map(|(a, b)| a * b).collect(),
            );
            let proj = bent.dot(phi)?;
            d = bent.add_scaled(-proj, phi)?;
        }
        dirs.push(d);
    }
    let mut curvature = 0.0;
    for i in 0..2 {
        let d = &dirs[i];
        curvature += d.h_energy(m.potential(i))? - e[i].lambda * d.mass();
    }
    let kappa = if c.alpha > threshold && curvature > 0.0 {
        ((c.alpha - threshold) / curvature).sqrt()
    } else {
        0.0
    };
    let p = anchor.add_scaled(kappa, &Pair::new(dirs[0].clone(), dirs[1].clone())?)?;
    if opts.perturbation <= 0.0 {
        return retract_with_tol(&p, m, c, opts.ctol);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r = Pair::new(
        random_smooth_field(&e[0].phi, &mut rng),
        random_smooth_field(&e[1].phi, &mut rng),
    )?;
    let size = [
        r.first.mass().sqrt().max(f64::MIN_POSITIVE),
        r.second.mass().sqrt().max(f64::MIN_POSITIVE),
    ];
    // A perturbation carrying more energy than the budget above threshold
    // cannot be retracted; shrink it until it fits.
    let mut amp = opts.perturbation;
    for _ in 0..30 {
        let trial = Pair::new(
            p.first.add_scaled(amp * c.rho1.sqrt() / size[0], &r.first)?,
            p.second.add_scaled(amp * c.rho2.sqrt() / size[1], &r.second)?,
        )?
        .abs();
        match retract_with_tol(&trial, m, c, opts.ctol) {
            Ok(w) => return Ok(w),
            Err(Error::RetractFailure(_)) => amp *= 0.5,
            Err(e) => return Err(e),
        }
    }
    retract_with_tol(&p, m, c, opts.ctol)
}

/// State at one iterate: tangent gradient and cached products.
struct Ascent {
    u: RealPair,
    au: [Vec<f64>; 2],
    f: f64,
    /// Tangent gradient in the `H` metric.
    g: [Vec<f64>; 2],
    gnorm2: f64,
}

fn ascent_state(m: &ModelParams, u: RealPair) -> Result<Ascent> {
    let w = u.grid().cell_volume();
    let s = m.scattering();
    let zeta = nonlinearity_gradient(&u, s);
    let uv = [u.first.values(), u.second.values()];
    let au = [m.operator(0).apply(uv[0]), m.operator(1).apply(uv[1])];
    let grad = [m.operator(0).solve(&zeta[0])?, m.operator(1).solve(&zeta[1])?];
    let ainv_u = [m.operator(0).solve(uv[0])?, m.operator(1).solve(uv[1])?];

    // H-Gram matrix of the constraint normals (A₁⁻¹u₁, 0), (0, A₂⁻¹u₂), u.
    let q = [w * dot(uv[0], uv[0]), w * dot(uv[1], uv[1])];
    let hn = w * (dot(&au[0], uv[0]) + dot(&au[1], uv[1]));
    let gram = [
        [w * dot(uv[0], &ainv_u[0]), 0.0, q[0]],
        [0.0, w * dot(uv[1], &ainv_u[1]), q[1]],
        [q[0], q[1], hn],
    ];
    let rhs = [
        w * dot(&zeta[0], &ainv_u[0]),
        w * dot(&zeta[1], &ainv_u[1]),
        w * (dot(&zeta[0], uv[0]) + dot(&zeta[1], uv[1])),
    ];
    let c = solve3(gram, rhs).ok_or_else(|| Error::RetractFailure("constraint normals are dependent".into()))?;

    let mut g = [vec![0.0; uv[0].len()], vec![0.0; uv[1].len()]];
    let mut ag = g.clone();
    let mut gnorm2 = 0.0;
    for i in 0..2 {
        for k in 0..g[i].len() {
            g[i][k] = grad[i][k] - c[i] * ainv_u[i][k] - c[2] * uv[i][k];
            ag[i][k] = zeta[i][k] - c[i] * uv[i][k] - c[2] * au[i][k];
        }
        gnorm2 += w * dot(&ag[i], &g[i]);
    }
    let f = eval_f(&u, s);
    Ok(Ascent {
        u,
        au,
        f,
        g,
        gnorm2: gnorm2.max(0.0),
    })
}

/// Solves `M(α, ρ₁, ρ₂)` from `init` (or the default anchor) and certifies
/// the result through the multiplier fit.
pub fn maximize(
    m: &ModelParams,
    c: &ConstraintSpec,
    init: Option<&RealPair>,
    opts: &SolveOptions,
) -> Result<SolitarySolution> {
    m.scattering().require_nondegenerate()?;
    let threshold = m.feasibility_threshold(c.rho1, c.rho2)?;
    if c.alpha < threshold * (1.0 - opts.ctol) {
        return Err(Error::InfeasibleConstraint {
            alpha: c.alpha,
            threshold,
        });
    }
    if c.alpha <= threshold * (1.0 + opts.ctol) {
        return threshold_solution(m, c);
    }

    let start = match init {
        Some(p) => {
            same_grid(p.grid(), m.grid())?;
            retract_with_tol(&p.abs(), m, c, opts.ctol)?
        }
        None => initial_guess(m, c, opts)?,
    };
    let fscale = eval_f_abs(&start, m.scattering()).max(f64::MIN_POSITIVE);
    let slack = 64.0 * f64::EPSILON * fscale;

    let mut state = ascent_state(m, start)?;
    let mut prev: Option<Ascent> = None;
    let mut tau = 1.0;
    let mut iterations = 0;
    while state.gnorm2.sqrt() > opts.gtol {
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                what: "constrained ascent".into(),
                iterations,
                residual: state.gnorm2.sqrt(),
            });
        }
        iterations += 1;

        // Barzilai–Borwein trial step in the H metric.
        if let Some(p) = &prev {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..2 {
                let u_new = state.u.component(i).values();
                let u_old = p.u.component(i).values();
                for k in 0..u_new.len() {
                    let a_s = state.au[i][k] - p.au[i][k];
                    ss += a_s * (u_new[k] - u_old[k]);
                    sy += a_s * (state.g[i][k] - p.g[i][k]);
                }
            }
            if sy < 0.0 && ss > 0.0 {
                tau = ss / -sy;
            } else {
                tau *= 2.0;
            }
        }

        let mut accepted = None;
        for _ in 0..60 {
            let trial = Pair {
                first: step_field(&state.u.first, &state.g[0], tau),
                second: step_field(&state.u.second, &state.g[1], tau),
            };
            match retract_with_tol(&trial, m, c, opts.ctol) {
                Ok(next) => {
                    let fnext = eval_f(&next, m.scattering());
                    if fnext - state.f >= opts.armijo * tau * state.gnorm2 - slack {
                        accepted = Some(next);
                        break;
                    }
                }
                Err(Error::RetractFailure(_)) => {}
                Err(e) => return Err(e),
            }
            tau *= 0.5;
        }
        let Some(next) = accepted else {
            // Stagnation: F no longer resolves the step. Near the threshold
            // re-retracting the iterate itself moves F by more than the slack,
            // so accept the point if it passes the multiplier certificate.
            let grad_norm = state.gnorm2.sqrt();
            return finish(m, c, state.u, iterations, grad_norm, opts).map_err(|_| Error::NoConvergence {
                what: "constrained ascent line search".into(),
                iterations,
                residual: grad_norm,
            });
        };
        let new_state = ascent_state(m, next)?;
        prev = Some(std::mem::replace(&mut state, new_state));
    }
    finish(m, c, state.u, iterations, state.gnorm2.sqrt(), opts)
}

fn step_field(u: &RealField, g: &[f64], tau: f64) -> RealField {
    Field::from_vec(
        *u.grid(),
        u.values().iter().zip(g).map(|(a, b)| (a + tau * b).abs()).collect(),
    )
}

fn finish(
    m: &ModelParams,
    c: &ConstraintSpec,
    pair: RealPair,
    iterations: usize,
    grad_norm: f64,
    opts: &SolveOptions,
) -> Result<SolitarySolution> {
    let (omega1, omega2, gamma, residual) = extract_multipliers(&pair, m)?;
    let violation = constraint_violation(&pair, m, c)?;
    if residual > opts.rtol {
        return Err(Error::NoConvergence {
            what: format!("Euler-Lagrange certification (rtol {:e})", opts.rtol),
            iterations,
            residual,
        });
    }
    Ok(SolitarySolution {
        m_value: eval_f(&pair, m.scattering()),
        pair,
        omega1,
        omega2,
        gamma,
        alpha: c.alpha,
        rho1: c.rho1,
        rho2: c.rho2,
        residual,
        iterations,
        grad_norm,
        constraint_violation: violation,
    })
}

/// All runs of a multi-start solve.
#[derive(Debug, Clone)]
pub struct MultiStart {
    /// Best `F`, ties broken by start index.
    pub best: SolitarySolution,
    /// Converged runs by start index.
    pub runs: Vec<(usize, SolitarySolution)>,
    /// Start indices whose solve failed, with the error message.
    pub failures: Vec<(usize, String)>,
    /// Representatives of pairwise-distinct solutions (`L²` distance > 1e-3).
    pub distinct: Vec<SolitarySolution>,
    /// Largest `L²` distance of any converged run from the best.
    pub max_spread: f64,
}

pub const DISTINCT_L2: f64 = 1e-3;

/// Independent solves from `starts` perturbed initial guesses; start `k`
/// uses seed `opts.seed + k`.
pub fn maximize_multistart(
    m: &ModelParams,
    c: &ConstraintSpec,
    opts: &SolveOptions,
    starts: usize,
    amplitude: f64,
) -> Result<MultiStart> {
    let results: Vec<(usize, Result<SolitarySolution>)> = (0..starts.max(1))
        .into_par_iter()
        .map(|k| {
            let o = SolveOptions {
                seed: opts.seed.wrapping_add(k as u64),
                perturbation: amplitude,
                ..*opts
            };
            (k, maximize(m, c, None, &o))
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    for (k, r) in results {
        match r {
            Ok(s) => runs.push((k, s)),
            Err(e) => {
                failures.push((k, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    let Some(best_idx) = (0..runs.len()).max_by(|&a, &b| {
        runs[a]
            .1
            .m_value
            .total_cmp(&runs[b].1.m_value)
            .then(runs[b].0.cmp(&runs[a].0))
    }) else {
        return Err(first_err.expect("no runs and no errors"));
    };
    let best = runs[best_idx].1.clone();
    let mut distinct: Vec<SolitarySolution> = vec![best.clone()];
    let mut max_spread: f64 = 0.0;
    for (_, s) in &runs {
        let d = s.pair.l2_distance(&best.pair)?;
        max_spread = max_spread.max(d);
        let mut new = true;
        for rep in &distinct {
            if s.pair.l2_distance(&rep.pair)? <= DISTINCT_L2 {
                new = false;
                break;
            }
        }
        if new {
            distinct.push(s.clone());
        }
    }
    Ok(MultiStart {
        best,
        runs,
        failures,
        distinct,
        max_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{eval_action, PotentialSpec, ScatteringParams};

    fn model(mu1: f64, mu2: f64, beta: f64) -> ModelParams {
        let g = Grid::new(1, 255, 8.0).unwrap();
        ModelParams::from_specs(
            g,
            &PotentialSpec::Harmonic,
            &PotentialSpec::AnisotropicHarmonic { coeffs: vec![2.0] },
            ScatteringParams::new(mu1, mu2, beta),
        )
        .unwrap()
    }

    fn anchor(m: &ModelParams, rho: [f64; 2]) -> RealPair {
        Pair::new(
            m.eigenpair(0).unwrap().phi.scaled(rho[0].sqrt()),
            m.eigenpair(1).unwrap().phi.scaled(rho[1].sqrt()),
        )
        .unwrap()
    }

    #[test]
    fn stagnation_near_threshold_is_certified() {
        // At n=1024 the line search runs out of resolution in F before the
        // gradient tolerance is met.
        let g = Grid::new(1, 1024, 10.0).unwrap();
        let m = ModelParams::from_specs(
            g,
            &PotentialSpec::Harmonic,
            &PotentialSpec::Harmonic,
            ScatteringParams::new(1.0, -1.0, 0.3),
        )
        .unwrap();
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t + 1e-3, 1.0, 1.0).unwrap();
        let s = maximize(&m, &c, None, &SolveOptions::default()).unwrap();
        assert!(s.residual < 1e-6, "{}", s.residual);
        assert!(s.gamma > 0.0);
        let strict = SolveOptions {
            rtol: 1e-12,
            ..SolveOptions::default()
        };
        assert!(matches!(maximize(&m, &c, None, &strict), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn retract_leaves_feasible_points_alone() {
        let m = model(1.0, 1.0, 0.2);
        let t = m.feasibility_threshold(1.0, 0.5).unwrap();
        let c = ConstraintSpec::new(t + 0.3, 1.0, 0.5).unwrap();
        let s = maximize(&m, &c, None, &SolveOptions::default()).unwrap();
        let again = retract(&s.pair, &m, &c).unwrap();
        assert_eq!(again, s.pair);
    }

    #[test]
    fn retract_at_threshold_rescales_eigenfunctions() {
        let m = model(1.0, 1.0, 0.2);
        let rho = [0.7, 1.3];
        let t = m.feasibility_threshold(rho[0], rho[1]).unwrap();
        let c = ConstraintSpec::new(t, rho[0], rho[1]).unwrap();
        let e = anchor(&m, [1.0, 1.0]);
        let p = Pair::new(e.first.scaled(2.0), e.second.scaled(3.0)).unwrap();
        let w = retract(&p, &m, &c).unwrap();
        assert!(w.l2_distance(&anchor(&m, rho)).unwrap() < 1e-10);
    }

    #[test]
    fn retract_projects_random_perturbations() {
        let m = model(-1.0, 1.0, 0.1);
        let t = m.feasibility_threshold(1.0, 2.0).unwrap();
        let c = ConstraintSpec::new(t + 0.8, 1.0, 2.0).unwrap();
        let base = initial_guess(&m, &c, &SolveOptions::default()).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1 = random_smooth_field(&m.eigenpair(0).unwrap().phi, &mut rng);
            let r2 = random_smooth_field(&m.eigenpair(1).unwrap().phi, &mut rng);
            let p = base.add_scaled(0.2, &Pair::new(r1, r2).unwrap()).unwrap();
            let w = retract(&p, &m, &c).unwrap();
            assert!(constraint_violation(&w, &m, &c).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn retract_fails_without_excess_energy() {
        let m = model(1.0, 1.0, 0.2);
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t + 0.5, 1.0, 1.0).unwrap();
        let err = retract(&anchor(&m, [1.0, 1.0]), &m, &c).unwrap_err();
        assert!(matches!(err, Error::RetractFailure(_)), "{err}");
    }

    #[test]
    fn below_threshold_is_infeasible() {
        let m = model(1.0, 1.0, 0.2);
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t - 0.01, 1.0, 1.0).unwrap();
        let err = maximize(&m, &c, None, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InfeasibleConstraint { .. }));
    }

    #[test]
    fn degenerate_scattering_is_rejected() {
        let m = model(1.0, 1.0, -1.0);
        let c = ConstraintSpec::new(10.0, 1.0, 1.0).unwrap();
        let err = maximize(&m, &c, None, &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateRegime { .. }));
    }

    #[test]
    fn threshold_returns_the_eigen_branch() {
        let m = model(-1.0, -1.0, 0.0);
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t, 1.0, 1.0).unwrap();
        let s = maximize(&m, &c, None, &SolveOptions::default()).unwrap();
        let l = m.lambdas().unwrap();
        assert_eq!(s.gamma, 0.0);
        assert_eq!(s.omega(), [-l[0], -l[1]]);
        assert!(s.residual < 1e-8);
    }

    #[test]
    fn manufactured_multipliers_are_recovered() {
        let g = Grid::new(1, 200, 7.0).unwrap();
        let s = ScatteringParams::new(1.0, 0.5, 0.3);
        // Discrete Dirichlet eigenvectors, so Δu/u is bounded up to the wall.
        let k = std::f64::consts::PI / 14.0;
        let u1 = RealField::from_fn(g, |x| (k * x[0]).cos());
        let u2 = RealField::from_fn(g, |x| 0.8 * (k * x[0]).cos());
        let pair = Pair::new(u1.clone(), u2.clone()).unwrap();
        let (omega, gamma) = ([-2.5, -1.75], 0.4);
        let zeta = nonlinearity_gradient(&pair, &s);
        let mut vs = Vec::new();
        for (i, u) in [&u1, &u2].into_iter().enumerate() {
            let lap = u.laplacian();
            let v: Vec<f64> = (0..g.len())
                .map(|k| (lap.values()[k] - omega[i] * u.values()[k] + gamma * zeta[i][k]) / u.values()[k])
                .collect();
            assert!(v.iter().all(|&x| x >= 0.0));
            vs.push(RealField::new(g, v).unwrap());
        }
        let m = ModelParams::new(vs.remove(0), vs.remove(0), s).unwrap();
        let (w1, w2, ga, res) = extract_multipliers(&pair, &m).unwrap();
        assert!((w1 - omega[0]).abs() < 1e-8, "{w1}");
        assert!((w2 - omega[1]).abs() < 1e-8, "{w2}");
        assert!((ga - gamma).abs() < 1e-8, "{ga}");
        assert!(res < 1e-10, "{res}");
    }

    #[test]
    fn proportional_nonlinearity_is_singular() {
        // A vanishing component leaves its frequency undetermined.
        let m = model(0.0, 0.0, 1.0);
        let p = Pair::new(
            RealField::from_fn(*m.grid(), |x| (-x[0] * x[0]).exp()),
            RealField::zeros(*m.grid()),
        )
        .unwrap();
        assert!(matches!(extract_multipliers(&p, &m), Err(Error::SingularFit(_))));
    }

    #[test]
    fn sign_flips_do_not_change_the_maximizer() {
        let m = model(1.0, -1.0, 0.3);
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t + 0.4, 1.0, 1.0).unwrap();
        let opts = SolveOptions::default();
        let init = initial_guess(&m, &c, &opts).unwrap();
        let a = maximize(&m, &c, Some(&init), &opts).unwrap();
        let flipped = Pair::new(init.first.scaled(-1.0), init.second.clone()).unwrap();
        let b = maximize(&m, &c, Some(&flipped), &opts).unwrap();
        assert!(a.pair.l2_distance(&b.pair).unwrap() < 1e-10);
        assert_eq!(eval_f(&init, m.scattering()), eval_f(&flipped, m.scattering()));
    }

    #[test]
    fn solutions_are_critical_points_of_the_action() {
        let m = model(-1.0, -1.0, 0.5);
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t + 1.0, 1.0, 1.0).unwrap();
        let s = maximize(&m, &c, None, &SolveOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dir = Pair::new(
            random_smooth_field(&s.pair.first, &mut rng),
            random_smooth_field(&s.pair.second, &mut rng),
        )
        .unwrap();
        let act = |p: &RealPair| eval_action(p, &m, s.omega1, s.omega2, s.gamma).unwrap();
        let step = 1e-4;
        let d = (act(&s.pair.add_scaled(step, &dir).unwrap()) - act(&s.pair.add_scaled(-step, &dir).unwrap()))
            / (2.0 * step);
        let scale = dir.first.h_energy(m.potential(0)).unwrap().sqrt()
            * s.pair.first.h_energy(m.potential(0)).unwrap().sqrt();
        assert!(d.abs() < 1e-6 * scale, "{d}");
    }

    #[test]
    fn physical_scaling() {
        let m = model(1.0, 1.0, 0.2);
        let t = m.feasibility_threshold(1.0, 2.0).unwrap();
        let c = ConstraintSpec::new(t + 0.2, 1.0, 2.0).unwrap();
        let s = maximize(&m, &c, None, &SolveOptions::default()).unwrap();
        let w = to_physical(&s).unwrap();
        assert!((w.m1 - s.gamma).abs() < 1e-14 && (w.m2 - 2.0 * s.gamma).abs() < 1e-14);
        assert!((w.pair.first.mass() - w.m1).abs() < 1e-9 * w.m1);
        let mut zero = s.clone();
        zero.gamma = 0.0;
        assert!(matches!(to_physical(&zero), Err(Error::NonpositiveGamma(_))));
    }

    #[test]
    fn multistart_agrees_in_the_defocusing_regime() {
        let m = model(-1.0, -1.0, 0.5);
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t + 0.7, 1.0, 1.0).unwrap();
        let ms = maximize_multistart(&m, &c, &SolveOptions::default(), 4, 0.3).unwrap();
        assert!(ms.failures.is_empty(), "{:?}", ms.failures);
        assert_eq!(ms.distinct.len(), 1);
        assert!(ms.max_spread < 1e-5);
    }
}
