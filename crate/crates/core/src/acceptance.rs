//! End-to-end verification suite. Each criterion runs a full computation,
//! compares against an analytic oracle or a structural property and
//! reports one PASS/FAIL line with the measured numbers.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bifurcation::{kernel_element, kernel_residual, log_grid, small_mass_scaling};
use crate::continuation::{e_curve, e_derivative_at, e_derivative_identity, sweep, SweepOptions};
use crate::eigen::{principal_eigenpair, DEFAULT_EIGEN_TOL};
use crate::error::{Error, Result};
use crate::evolve::{stability_experiment, PerturbationKind, StabilityReport};
use crate::grid::{laplacian_values, ComplexField, Grid, Pair, RealField};
use crate::maximizer::{maximize, maximize_multistart, SolitarySolution, SolveOptions};
use crate::model::{eval_f, ConstraintSpec, ModelParams, PotentialSpec, ScatteringParams};

/// Resolution at which the stated tolerances apply: 1D `(n, L)` and 2D
/// `(n, L)`.
pub const REFERENCE_1D: (usize, f64) = (1024, 10.0);
pub const REFERENCE_2D: (usize, f64) = (128, 5.0);

pub const CRITERIA: [(usize, &str); 10] = [
    (1, "eigensolver oracle"),
    (2, "threshold anchor"),
    (3, "Euler-Lagrange certification"),
    (4, "defocusing monotonicity"),
    (5, "e-identity"),
    (6, "small-mass scaling"),
    (7, "bifurcation diagnostics"),
    (8, "conservation"),
    (9, "orbital stability"),
    (10, "invariant suites"),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n_1d: usize,
    pub extent_1d: f64,
    pub n_2d: usize,
    pub extent_2d: f64,
    pub solve: SolveOptions,
    pub seed: u64,
    pub dt: f64,
    /// Horizon of the orbital-stability trajectories.
    pub horizon: f64,
    /// Number of steps of the conservation run.
    pub steps: usize,
    /// `α − T` of the standing wave used by the time-evolution checks.
    pub excess: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_1d: REFERENCE_1D.0,
            extent_1d: REFERENCE_1D.1,
            n_2d: REFERENCE_2D.0,
            extent_2d: REFERENCE_2D.1,
            solve: SolveOptions::default(),
            seed: 0,
            dt: 1e-3,
            horizon: 20.0,
            steps: 10_000,
            excess: 0.5,
        }
    }
}

impl SuiteConfig {
    /// Same suite with the grid size halved along every axis.
    pub fn halved(&self) -> SuiteConfig {
        SuiteConfig {
            n_1d: self.n_1d / 2,
            n_2d: self.n_2d / 2,
            ..*self
        }
    }

    /// `max(1, (h/h_ref)²)`: discretisation-limited tolerances are stated at
    /// the reference resolution and widen with the second-order error.
    pub fn refinement_factor(&self, dim: usize) -> f64 {
        let (h, h_ref) = match dim {
            1 => (
                2.0 * self.extent_1d / (self.n_1d + 1) as f64,
                2.0 * REFERENCE_1D.1 / (REFERENCE_1D.0 + 1) as f64,
            ),
            _ => (
                2.0 * self.extent_2d / (self.n_2d + 1) as f64,
                2.0 * REFERENCE_2D.1 / (REFERENCE_2D.0 + 1) as f64,
            ),
        };
        (h / h_ref).powi(2).max(1.0)
    }

    fn harmonic_1d(&self, s: ScatteringParams) -> Result<ModelParams> {
        harmonic(Grid::new(1, self.n_1d, self.extent_1d)?, s)
    }
}

fn harmonic(grid: Grid, s: ScatteringParams) -> Result<ModelParams> {
    ModelParams::from_specs(grid, &PotentialSpec::Harmonic, &PotentialSpec::Harmonic, s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {:<30} {:>7.1}s  {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

/// Collects sub-checks; the criterion passes iff all of them do.
struct Checks {
    pass: bool,
    notes: Vec<String>,
}

impl Checks {
    fn new() -> Checks {
        Checks {
            pass: true,
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, note: String) {
        if !ok {
            self.pass = false;
            self.notes.push(format!("[fail] {note}"));
        } else {
            self.notes.push(note);
        }
    }
}

/// Runs criterion `id` (1 to 10). Solver errors make the criterion fail.
pub fn run_criterion(id: usize, cfg: &SuiteConfig) -> Result<CriterionResult> {
    let name = CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map(|c| c.1)
        .ok_or_else(|| Error::InvalidParameter(format!("no acceptance criterion {id}")))?;
    let start = Instant::now();
    let outcome = match id {
        1 => eigensolver_oracle(cfg),
        2 => threshold_anchor(cfg),
        3 => euler_lagrange_certification(cfg),
        4 => defocusing_monotonicity(cfg),
        5 => e_identity(cfg),
        6 => small_mass(cfg),
        7 => bifurcation_diagnostics(cfg),
        8 => conservation(cfg),
        9 => orbital_stability(cfg),
        _ => invariant_suites(cfg),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (pass, detail) = match outcome {
        Ok(c) => (c.pass, c.notes.join("; ")),
        Err(e) => (false, format!("error: {e}")),
    };
    Ok(CriterionResult {
        id,
        name: name.to_string(),
        pass,
        detail,
        seconds,
    })
}

pub fn run_suite(cfg: &SuiteConfig) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|&(id, _)| run_criterion(id, cfg).expect("listed criterion"))
        .collect()
}

/// Expected failure: a degenerate scattering triple must be rejected by
/// the regime gate before any solve. Passes iff it is.
pub fn degenerate_gate(cfg: &SuiteConfig) -> CriterionResult {
    let start = Instant::now();
    let outcome = cfg
        .harmonic_1d(ScatteringParams::new(1.0, 1.0, -1.0))
        .and_then(|m| {
            let t = m.feasibility_threshold(1.0, 1.0)?;
            maximize(&m, &ConstraintSpec::new(t + 1.0, 1.0, 1.0)?, None, &cfg.solve)
        });
    let (pass, detail) = match outcome {
        Err(e @ Error::DegenerateRegime { .. }) => (true, format!("rejected as expected: {e}")),
        Err(e) => (false, format!("unexpected error: {e}")),
        Ok(s) => (false, format!("solve went through (gamma={:e})", s.gamma)),
    };
    CriterionResult {
        id: 0,
        name: "degenerate regime (expected fail)".to_string(),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn eigensolver_oracle(cfg: &SuiteConfig) -> Result<Checks> {
    let start = Instant::now();
    let mut c = Checks::new();
    for (dim, n, extent) in [(1, cfg.n_1d, cfg.extent_1d), (2, cfg.n_2d, cfg.extent_2d)] {
        let grid = Grid::new(dim, n, extent)?;
        let v = RealField::from_fn(grid, |x| x[0] * x[0] + x[1] * x[1]);
        let e = principal_eigenpair(&v, DEFAULT_EIGEN_TOL)?;
        let tol = if dim == 1 { 1e-4 } else { 1e-3 } * cfg.refinement_factor(dim);
        let err = (e.lambda - dim as f64).abs();
        c.check(
            err <= tol,
            format!("{dim}D n={n} L={extent}: lambda={:.6} |err|={err:.1e} tol={tol:.1e}", e.lambda),
        );
    }
    let t = start.elapsed().as_secs_f64();
    c.check(t < 30.0, format!("runtime {t:.1}s < 30s"));
    Ok(c)
}

fn threshold_anchor(cfg: &SuiteConfig) -> Result<Checks> {
    let m = cfg.harmonic_1d(ScatteringParams::new(-1.0, -1.0, 0.0))?;
    let t = m.feasibility_threshold(1.0, 1.0)?;
    let s = maximize(&m, &ConstraintSpec::new(t, 1.0, 1.0)?, None, &cfg.solve)?;
    let exact = -0.5 / (2.0 * PI).sqrt();
    let f = cfg.refinement_factor(1);
    let mut c = Checks::new();
    let m_err = (s.m_value - exact).abs();
    c.check(
        m_err <= 1e-3 * f,
        format!("M={:.6} (analytic {exact:.6}, |err|={m_err:.1e})", s.m_value),
    );
    let errs = [s.omega1 + 1.0, s.omega2 + 1.0, s.gamma];
    let worst = errs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    c.check(
        worst <= 1e-4 * f,
        format!(
            "(omega1, omega2, gamma)=({:.6}, {:.6}, {:.1e}) max|err|={worst:.1e} tol={:.1e}",
            s.omega1,
            s.omega2,
            s.gamma,
            1e-4 * f
        ),
    );
    Ok(c)
}

const REGIME_SAMPLE: [(f64, f64, f64); 3] = [(1.0, -1.0, 0.3), (-1.0, -1.0, 0.5), (1.0, 1.0, 0.2)];
const REGIME_EXCESS: [f64; 6] = [1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0];

fn euler_lagrange_certification(cfg: &SuiteConfig) -> Result<Checks> {
    let jobs: Vec<((f64, f64, f64), f64)> = REGIME_SAMPLE
        .iter()
        .flat_map(|&r| REGIME_EXCESS.iter().map(move |&x| (r, x)))
        .collect();
    let solved: Vec<(((f64, f64, f64), f64), SolitarySolution)> = jobs
        .par_iter()
        .map(|&(r, x)| {
            let m = cfg.harmonic_1d(ScatteringParams::new(r.0, r.1, r.2))?;
            let t = m.feasibility_threshold(1.0, 1.0)?;
            let s = maximize(&m, &ConstraintSpec::new(t + x, 1.0, 1.0)?, None, &cfg.solve)
                .map_err(|e| e.at_alpha(t + x))?;
            Ok(((r, x), s))
        })
        .collect::<Result<_>>()?;
    let mut c = Checks::new();
    let worst_res = solved.iter().map(|(_, s)| s.residual).fold(0.0, f64::max);
    let worst_cv = solved.iter().map(|(_, s)| s.constraint_violation).fold(0.0, f64::max);
    let min_gamma = solved.iter().map(|(_, s)| s.gamma).fold(f64::INFINITY, f64::min);
    let bounded = solved
        .iter()
        .all(|(_, s)| s.omega1.is_finite() && s.omega2.is_finite() && s.gamma.is_finite());
    c.check(
        worst_res < 1e-6,
        format!("{} solves, max residual {worst_res:.1e} < 1e-6", solved.len()),
    );
    c.check(worst_cv < 1e-9, format!("max constraint violation {worst_cv:.1e} < 1e-9"));
    c.check(min_gamma > 0.0, format!("min gamma {min_gamma:.3e} > 0 (alpha - T >= 1e-3)"));
    c.check(bounded, "multipliers finite".to_string());
    for (r, x) in [(REGIME_SAMPLE[0], 1e-3), (REGIME_SAMPLE[2], 2.0)] {
        if let Some((_, s)) = solved.iter().find(|(k, _)| *k == (r, x)) {
            c.notes.push(format!(
                "({}, {}, {}) at T+{x}: omega=({:.4}, {:.4}) gamma={:.4e}",
                r.0, r.1, r.2, s.omega1, s.omega2, s.gamma
            ));
        }
    }
    Ok(c)
}

/// The 20-point defocusing branch of criteria 4 and 5.
struct DefocusingBranch {
    m: ModelParams,
    branch: crate::continuation::BranchCurve,
}

fn defocusing_branch(cfg: &SuiteConfig) -> Result<DefocusingBranch> {
    let m = cfg.harmonic_1d(ScatteringParams::new(-1.0, -1.0, 0.5))?;
    let t = m.feasibility_threshold(1.0, 1.0)?;
    let grid: Vec<f64> = (0..20).map(|k| t + 0.05 + 1.95 * k as f64 / 19.0).collect();
    let sw = SweepOptions {
        cold_check: true,
        fd_step: Some(1e-3),
    };
    let branch = sweep(&m, 1.0, 1.0, &grid, &cfg.solve, &sw)?;
    Ok(DefocusingBranch { m, branch })
}

fn defocusing_monotonicity(cfg: &SuiteConfig) -> Result<Checks> {
    let start = Instant::now();
    let DefocusingBranch { m, branch } = defocusing_branch(cfg)?;
    let g = branch.gammas();
    let min_inc = g.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let mut c = Checks::new();
    c.check(
        min_inc > 0.0,
        format!("gamma {:.4} -> {:.4}, min increment {min_inc:.3e} > 0", g[0], g[g.len() - 1]),
    );
    c.check(
        branch.discontinuities.is_empty(),
        format!("{} warm/cold disagreements", branch.discontinuities.len()),
    );
    let opts = SolveOptions {
        seed: cfg.seed,
        ..cfg.solve
    };
    let mut spread: f64 = 0.0;
    let mut to_branch: f64 = 0.0;
    let mut failures = 0;
    for p in &branch.points {
        let ms = maximize_multistart(&m, &p.constraint(), &opts, 8, 0.3)?;
        failures += ms.failures.len();
        spread = spread.max(ms.max_spread);
        to_branch = to_branch.max(ms.best.pair.l2_distance(&p.pair)?);
    }
    c.check(failures == 0, format!("{failures} failed starts of 160"));
    c.check(
        spread < 1e-5 && to_branch < 1e-5,
        format!("8-seed spread {spread:.1e}, best vs branch {to_branch:.1e} (< 1e-5 L2)"),
    );
    let t = start.elapsed().as_secs_f64();
    c.check(t < 300.0, format!("runtime {t:.1}s < 300s"));
    Ok(c)
}

fn e_identity(cfg: &SuiteConfig) -> Result<Checks> {
    let DefocusingBranch { m, branch } = defocusing_branch(cfg)?;
    let a = branch.alphas();
    let alpha_star = 0.5 * (a[0] + a[a.len() - 1]);
    let crit = e_derivative_at(&m, &branch, alpha_star, 1e-3, &cfg.solve)?;
    let (_, de) = e_curve(&branch, crit.gamma_star);
    let id = e_derivative_identity(&branch, crit.gamma_star);
    let worst = (1..de.len() - 1).map(|k| (de[k] - id[k]).abs()).fold(0.0, f64::max);
    let mut c = Checks::new();
    c.check(
        worst < 5e-3,
        format!("max |e' - (1 - gamma*/gamma)/2| = {worst:.1e} < 5e-3 over 18 interior points"),
    );
    c.check(
        crit.e_prime.abs() <= crit.fd_tolerance,
        format!(
            "e'(alpha*={alpha_star:.4}) = {:.1e}, FD tolerance {:.1e} (gamma*={:.4})",
            crit.e_prime, crit.fd_tolerance, crit.gamma_star
        ),
    );
    Ok(c)
}

fn small_mass(cfg: &SuiteConfig) -> Result<Checks> {
    let start = Instant::now();
    let m = cfg.harmonic_1d(ScatteringParams::new(1.0, 1.0, 0.2))?;
    let r = small_mass_scaling(&m, FRAC_PI_4, &log_grid(1e-4, 1e-2, 8), &cfg.solve)?;
    let smallest = r
        .samples
        .iter()
        .min_by(|a, b| a.eps.total_cmp(&b.eps))
        .expect("eight samples");
    let mut c = Checks::new();
    c.check(
        (r.slope - 0.5).abs() <= 0.05,
        format!("log-log slope {:.4} (0.50 +- 0.05)", r.slope),
    );
    c.check(
        smallest.l2_dist_to_anchor < 1e-2,
        format!(
            "eps={:.0e}: L2 distance to anchor {:.1e} < 1e-2",
            smallest.eps, smallest.l2_dist_to_anchor
        ),
    );
    let t = start.elapsed().as_secs_f64();
    c.check(t < 300.0, format!("runtime {t:.1}s < 300s"));
    Ok(c)
}

const THETAS: [f64; 5] = [0.2, 0.5, FRAC_PI_4, 1.0, 1.35];

fn bifurcation_diagnostics(cfg: &SuiteConfig) -> Result<Checks> {
    let mut c = Checks::new();
    let sym = cfg.harmonic_1d(ScatteringParams::new(1.0, 1.0, 0.0))?;
    let k = kernel_element(&sym, FRAC_PI_4)?;
    let expected = 0.5 / (2.0 * PI).sqrt();
    let tol = 1e-4 * cfg.refinement_factor(1);
    let err = (k.o1 - expected).abs().max((k.o2 - expected).abs());
    c.check(
        err <= tol,
        format!("symmetric point o=({:.6}, {:.6}) vs {expected:.6}, |err|={err:.1e}", k.o1, k.o2),
    );
    let m = cfg.harmonic_1d(ScatteringParams::new(1.0, 1.0, 0.2))?;
    let mut worst_res = kernel_residual(&sym, &k)?;
    let mut min_nondeg = f64::INFINITY;
    for &theta in &THETAS {
        let k = kernel_element(&m, theta)?;
        worst_res = worst_res.max(kernel_residual(&m, &k)?);
        min_nondeg = min_nondeg.min(k.nondeg_value);
    }
    c.check(worst_res < 1e-6, format!("max kernel residual {worst_res:.1e} < 1e-6"));
    c.check(
        min_nondeg > 0.0,
        format!("min nondeg_value {min_nondeg:.4e} > 0 over 5 thetas"),
    );
    Ok(c)
}

/// The converged defocusing standing wave used by criteria 8 and 9.
fn standing_wave(cfg: &SuiteConfig) -> Result<(ModelParams, SolitarySolution)> {
    let m = cfg.harmonic_1d(ScatteringParams::new(-1.0, -1.0, 0.5))?;
    let t = m.feasibility_threshold(1.0, 1.0)?;
    let s = maximize(&m, &ConstraintSpec::new(t + cfg.excess, 1.0, 1.0)?, None, &cfg.solve)?;
    Ok((m, s))
}

/// Size of the bump used for the energy-drift halving test: large enough
/// that the splitting error dominates rounding.
pub const CONSERVATION_BUMP: f64 = 1e-2;

fn conservation(cfg: &SuiteConfig) -> Result<Checks> {
    let (m, s) = standing_wave(cfg)?;
    let horizon = cfg.steps as f64 * cfg.dt;
    let run = |delta: f64, dt: f64| -> Result<StabilityReport> {
        stability_experiment(&s, &m, delta, horizon, dt, PerturbationKind::RandomBump, cfg.seed, &cfg.solve)
    };
    let runs = [(0.0, cfg.dt), (CONSERVATION_BUMP, cfg.dt), (CONSERVATION_BUMP, cfg.dt / 2.0)]
        .par_iter()
        .map(|&(d, dt)| run(d, dt))
        .collect::<Result<Vec<_>>>()?;
    let mut c = Checks::new();
    for r in &runs[..2] {
        c.check(
            r.mass_drift < 1e-10 && r.energy_drift < 1e-6,
            format!(
                "delta={:.0e}, {} steps: mass drift {:.1e}, energy drift {:.1e}",
                r.delta, cfg.steps, r.mass_drift, r.energy_drift
            ),
        );
    }
    let ratio = runs[1].energy_drift / runs[2].energy_drift;
    c.check(
        ratio >= 3.5,
        format!(
            "dt halving (delta={CONSERVATION_BUMP:.0e}): energy drift {:.2e} -> {:.2e}, ratio {ratio:.2} >= 3.5",
            runs[1].energy_drift, runs[2].energy_drift
        ),
    );
    Ok(c)
}

fn orbital_stability(cfg: &SuiteConfig) -> Result<Checks> {
    let (m, s) = standing_wave(cfg)?;
    let delta = 1e-3;
    let mut jobs = vec![(PerturbationKind::RandomBump, cfg.seed, 0.0)];
    for kind in PerturbationKind::ALL {
        for k in 0..3 {
            for d in [delta, delta / 2.0] {
                jobs.push((kind, cfg.seed + k, d));
            }
        }
    }
    let reports = jobs
        .par_iter()
        .map(|&(kind, seed, d)| {
            let t0 = Instant::now();
            let r = stability_experiment(&s, &m, d, cfg.horizon, cfg.dt, kind, seed, &cfg.solve)?;
            Ok((r, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut c = Checks::new();
    let base = &reports[0].0;
    c.check(
        base.sup_distance < 1e-5,
        format!("unperturbed, horizon {}: sup distance {:.1e} < 1e-5", cfg.horizon, base.sup_distance),
    );
    let mut sup: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for pair in reports[1..].chunks(2) {
        let (full, half) = (&pair[0].0, &pair[1].0);
        sup = sup.max(full.sup_distance);
        let ratio = full.sup_distance / half.sup_distance;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    c.check(sup < 1e-1, format!("delta=1e-3, 3 kinds x 3 seeds: max sup distance {sup:.2e} < 0.1"));
    c.check(
        lo >= 1.5 && hi <= 2.5,
        format!("delta halving ratios in [{lo:.3}, {hi:.3}] within [1.5, 2.5]"),
    );
    let slowest = reports.iter().map(|r| r.1).fold(0.0, f64::max);
    c.check(slowest < 300.0, format!("slowest trajectory {slowest:.1}s < 300s"));
    Ok(c)
}

fn invariant_suites(cfg: &SuiteConfig) -> Result<Checks> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut c = Checks::new();
    let grids = [Grid::new(1, 200, 5.0)?, Grid::new(2, 24, 4.0)?];

    let mut violations = 0;
    let mut worst_gap = f64::INFINITY;
    for k in 0..100 {
        let w = random_complex(grids[k % 2], &mut rng);
        let modulus = RealField::new(*w.grid(), w.modulus_sq().iter().map(|x| x.sqrt()).collect())?;
        let (lhs, rhs) = (modulus.dirichlet_energy(), w.dirichlet_energy());
        worst_gap = worst_gap.min(rhs - lhs);
        if lhs > rhs * (1.0 + 1e-14) {
            violations += 1;
        }
    }
    c.check(
        violations == 0,
        format!("diamagnetic: {violations} violations in 100 fields (min gap {worst_gap:.2e})"),
    );

    let mut asym: f64 = 0.0;
    let mut max_quotient = f64::NEG_INFINITY;
    for k in 0..20 {
        let grid = grids[k % 2];
        let f = random_real(grid, &mut rng);
        let g = random_real(grid, &mut rng);
        let (lf, lg) = (laplacian_values(&grid, f.values()), laplacian_values(&grid, g.values()));
        let a = crate::grid::dot(&lf, g.values());
        let b = crate::grid::dot(f.values(), &lg);
        asym = asym.max((a - b).abs() / a.abs().max(b.abs()));
        let ff = crate::grid::dot(&lf, f.values()) / crate::grid::dot(f.values(), f.values());
        max_quotient = max_quotient.max(ff);
    }
    c.check(
        asym < 1e-12 && max_quotient < 0.0,
        format!("Laplacian: relative asymmetry {asym:.1e}, max <Lf,f>/<f,f> = {max_quotient:.3e} < 0"),
    );

    let s = ScatteringParams::new(1.0, -1.0, 0.3);
    let mut even_err: f64 = 0.0;
    let mut mod_err: f64 = 0.0;
    for _ in 0..20 {
        let grid = grids[0];
        let u = Pair::new(random_real(grid, &mut rng), random_real(grid, &mut rng))?;
        let f = eval_f(&u, &s);
        for flipped in [
            Pair::new(u.first.scaled(-1.0), u.second.clone())?,
            Pair::new(u.first.clone(), u.second.scaled(-1.0))?,
        ] {
            even_err = even_err.max((eval_f(&flipped, &s) - f).abs() / f.abs().max(1e-300));
        }
        let w = Pair::new(random_complex(grid, &mut rng), random_complex(grid, &mut rng))?;
        let fw = eval_f(&w, &s);
        let fm = eval_f(&w.modulus(), &s);
        mod_err = mod_err.max((fw - fm).abs() / fw.abs().max(1e-300));
    }
    c.check(
        even_err < 1e-14 && mod_err < 1e-12,
        format!("F evenness {even_err:.1e}, F(w) vs F(|w|) {mod_err:.1e}"),
    );

    let m = harmonic(Grid::new(1, cfg.n_1d / 4, cfg.extent_1d)?, ScatteringParams::new(-1.0, -1.0, 0.5))?;
    let t = m.feasibility_threshold(1.0, 1.0)?;
    let mut jumps = Vec::new();
    for points in [5, 9, 17, 33] {
        let grid: Vec<f64> = (0..points).map(|k| t + k as f64 / (points - 1) as f64).collect();
        let b = sweep(&m, 1.0, 1.0, &grid, &cfg.solve, &SweepOptions { cold_check: false, fd_step: None })?;
        let mv = b.m_values();
        jumps.push(mv.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max));
    }
    let decreasing = jumps.windows(2).all(|w| w[1] < w[0]);
    let mut note = String::from("M continuity on [T, T+1], max successive |dM|:");
    for j in &jumps {
        let _ = write!(note, " {j:.3e}");
    }
    c.check(decreasing, note);
    Ok(c)
}

fn random_real(grid: Grid, rng: &mut ChaCha8Rng) -> RealField {
    let values = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    RealField::new(grid, values).expect("length matches")
}

fn random_complex(grid: Grid, rng: &mut ChaCha8Rng) -> ComplexField {
    let values = (0..grid.len())
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    ComplexField::new(grid, values).expect("length matches")
}
