//! Time integration of
//!
//! ```text
//! i∂ₜΨᵢ + ΔΨᵢ − VᵢΨᵢ + γ*(μᵢ|Ψᵢ|² + β|Ψⱼ|²)Ψᵢ = 0
//! ```
//!
//! by Strang splitting: an exact pointwise phase rotation for the potential
//! and the cubic terms, and a Crank–Nicolson step for `iΨₜ = −ΔΨ`. Both
//! substeps are `L²` isometries, so the masses are conserved to rounding;
//! the energy is only monitored.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    h_norm_sq, l2_inner, laplacian_values, same_grid, ComplexField, ComplexPair, Grid, Pair, RealField, RealPair,
};
use crate::linalg::conjugate_gradient;
use crate::maximizer::{maximize, random_smooth_field, SolitarySolution, SolveOptions};
use crate::model::{eval_energy, ConstraintSpec, ModelParams};

/// Relative mass drift at which a run is aborted as an integrator fault.
pub const MASS_DRIFT_LIMIT: f64 = 1e-6;

/// Orbital distances are sampled this often (time units).
pub const SAMPLE_INTERVAL: f64 = 0.1;

/// Relative tolerance of the 2D Crank–Nicolson CG solves.
const CN_CG_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub pair: ComplexPair,
    pub t: f64,
    /// Initial masses and energy.
    pub mass1: f64,
    pub mass2: f64,
    pub energy: f64,
}

impl EvolutionState {
    pub fn new(pair: ComplexPair, m: &ModelParams, gamma_star: f64) -> Result<EvolutionState> {
        same_grid(pair.grid(), m.grid())?;
        let [mass1, mass2] = pair.masses();
        let energy = eval_energy(&pair, m, gamma_star)?;
        Ok(EvolutionState {
            pair,
            t: 0.0,
            mass1,
            mass2,
            energy,
        })
    }

    /// Largest relative change of either mass since `t = 0`.
    pub fn mass_drift(&self) -> f64 {
        let [q1, q2] = self.pair.masses();
        rel(q1, self.mass1).max(rel(q2, self.mass2))
    }

    pub fn energy_drift(&self, m: &ModelParams, gamma_star: f64) -> Result<f64> {
        Ok(rel(eval_energy(&self.pair, m, gamma_star)?, self.energy))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

/// `(I + iaK)⁻¹(I − iaK)` with `K = −Δ`.
#[derive(Debug, Clone)]
enum CrankNicolson {
    /// Constant-coefficient tridiagonal LU: off-diagonal and the inverse
    /// pivots and multipliers of the forward sweep.
    Tridiagonal {
        off: Complex64,
        inv_pivot: Vec<Complex64>,
        upper: Vec<Complex64>,
    },
    /// `(I − iaK)(I + a²K²)⁻¹(I − iaK)`, real CG on both parts.
    Squared { a: f64 },
}

impl CrankNicolson {
    fn new(grid: &Grid, a: f64) -> CrankNicolson {
        if grid.dim() == 1 {
            let h2 = grid.spacing().powi(2);
            let diag = Complex64::new(1.0, 2.0 * a / h2);
            let off = Complex64::new(0.0, -a / h2);
            let n = grid.len();
            let mut inv_pivot = Vec::with_capacity(n);
            let mut upper = Vec::with_capacity(n);
            let mut pivot = diag;
            for k in 0..n {
                if k > 0 {
                    pivot = diag - off * upper[k - 1];
                }
                let inv = pivot.inv();
                inv_pivot.push(inv);
                upper.push(off * inv);
            }
            CrankNicolson::Tridiagonal { off, inv_pivot, upper }
        } else {
            CrankNicolson::Squared { a }
        }
    }

    fn apply(&self, grid: &Grid, a: f64, psi: &mut [Complex64]) -> Result<()> {
        // (I − iaK)ψ = ψ + iaΔψ.
        let explicit = |f: &[Complex64]| -> Vec<Complex64> {
            let lap = laplacian_values(grid, f);
            f.iter()
                .zip(&lap)
                .map(|(x, l)| x + Complex64::new(0.0, a) * l)
                .collect()
        };
        match self {
            CrankNicolson::Tridiagonal { off, inv_pivot, upper } => {
                // (I + iaK)⁻¹(I − iaK) = 2(I + iaK)⁻¹ − I.
                let n = psi.len();
                let mut d = Vec::with_capacity(n);
                d.push(psi[0] * inv_pivot[0]);
                for k in 1..n {
                    d.push((psi[k] - off * d[k - 1]) * inv_pivot[k]);
                }
                let mut next = d[n - 1];
                psi[n - 1] = 2.0 * next - psi[n - 1];
                for k in (0..n - 1).rev() {
                    next = d[k] - upper[k] * next;
                    psi[k] = 2.0 * next - psi[k];
                }
                Ok(())
            }
            CrankNicolson::Squared { a } => {
                let rhs = explicit(psi);
                let a2 = a * a;
                let op = |f: &[f64], out: &mut [f64]| {
                    let l1 = laplacian_values(grid, f);
                    let l2 = laplacian_values(grid, &l1);
                    for k in 0..f.len() {
                        out[k] = f[k] + a2 * l2[k];
                    }
                };
                let mut parts = Vec::with_capacity(2);
                for part in [0, 1] {
                    let b: Vec<f64> = rhs.iter().map(|z| if part == 0 { z.re } else { z.im }).collect();
                    let mut x = b.clone();
                    let out = conjugate_gradient(op, &b, &mut x, CN_CG_TOL, 10 * b.len().max(100), None);
                    if !out.converged {
                        return Err(Error::LinearSolveFailure(format!(
                            "Crank-Nicolson CG stalled at {:e}",
                            out.residual
                        )));
                    }
                    parts.push(x);
                }
                let z: Vec<Complex64> = parts[0]
                    .iter()
                    .zip(&parts[1])
                    .map(|(&r, &i)| Complex64::new(r, i))
                    .collect();
                psi.copy_from_slice(&explicit(&z));
                Ok(())
            }
        }
    }
}

/// Fixed-step Strang integrator for one model, `γ*` and `dt`.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    m: &'a ModelParams,
    gamma_star: f64,
    dt: f64,
    cn: CrankNicolson,
}

impl<'a> Propagator<'a> {
    /// `dt` may be negative (backward evolution).
    pub fn new(m: &'a ModelParams, gamma_star: f64, dt: f64) -> Result<Propagator<'a>> {
        if !(dt.is_finite() && dt != 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be finite and nonzero, got {dt}")));
        }
        Ok(Propagator {
            m,
            gamma_star,
            dt,
            cn: CrankNicolson::new(m.grid(), dt / 2.0),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn phase(&self, pair: &mut ComplexPair, tau: f64) {
        let s = self.m.scattering();
        let (v1, v2) = (self.m.potential(0).values(), self.m.potential(1).values());
        let ((mu1, b1), (mu2, b2)) = (s.self_and_cross(0), s.self_and_cross(1));
        let (a, b) = (pair.first.values_mut(), pair.second.values_mut());
        for k in 0..a.len() {
            let n1 = a[k].norm_sqr();
            let n2 = b[k].norm_sqr();
            let th1 = tau * (self.gamma_star * (mu1 * n1 + b1 * n2) - v1[k]);
            let th2 = tau * (self.gamma_star * (mu2 * n2 + b2 * n1) - v2[k]);
            a[k] *= Complex64::from_polar(1.0, th1);
            b[k] *= Complex64::from_polar(1.0, th2);
        }
    }

    pub fn step(&self, state: &mut EvolutionState) -> Result<()> {
        let grid = *state.pair.grid();
        let half = self.dt / 2.0;
        self.phase(&mut state.pair, half);
        self.cn.apply(&grid, half, state.pair.first.values_mut())?;
        self.cn.apply(&grid, half, state.pair.second.values_mut())?;
        self.phase(&mut state.pair, half);
        state.t += self.dt;
        let drift = state.mass_drift();
        if !(drift <= MASS_DRIFT_LIMIT) {
            return Err(Error::IntegratorFault(format!(
                "relative mass drift {drift:e} at t = {}",
                state.t
            )));
        }
        Ok(())
    }

    pub fn run(&self, state: &mut EvolutionState, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(state)?;
        }
        Ok(())
    }
}

/// One Strang step of size `dt` with nonlinearity strength `γ*`.
pub fn step(state: &EvolutionState, m: &ModelParams, gamma_star: f64, dt: f64) -> Result<EvolutionState> {
    let mut next = state.clone();
    Propagator::new(m, gamma_star, dt)?.step(&mut next)?;
    Ok(next)
}

/// `inf_{s₁,s₂} ‖Ψ − (e^{is₁}u₁, e^{is₂}u₂)‖_H`.
///
/// Since `u` is real the infimum is attained at `sᵢ = arg⟨Ψᵢ, uᵢ⟩_{Hᵢ}`,
/// giving `Σ(‖Ψᵢ‖² + ‖uᵢ‖² − 2|⟨Ψᵢ, uᵢ⟩|)`; the difference is formed
/// explicitly to avoid cancellation.
pub fn orbital_distance(psi: &ComplexPair, u: &RealPair, m: &ModelParams) -> Result<f64> {
    same_grid(psi.grid(), u.grid())?;
    same_grid(psi.grid(), m.grid())?;
    let mut d2 = 0.0;
    for i in 0..2 {
        let ui = u.component(i);
        let au = RealField::new(*ui.grid(), m.operator(i).apply(ui.values()))?;
        let inner = l2_inner(psi.component(i), &au)?;
        let phase = if inner.norm() > 0.0 {
            inner / inner.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        let diff = psi.component(i).add_scaled_complex(-phase, &ui.to_complex())?;
        d2 += diff.h_energy(m.potential(i))?;
    }
    Ok(d2.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    /// Complex smooth random bump under the profile envelope.
    RandomBump,
    /// `cos(s)uᵢ + sin(s)nᵢ` with `nᵢ` the part of `φᵢ` orthogonal to `uᵢ`,
    /// which keeps both masses fixed.
    MassRotation,
    /// Along `du/dα` of the solution branch.
    BranchTangent,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 3] = [
        PerturbationKind::RandomBump,
        PerturbationKind::MassRotation,
        PerturbationKind::BranchTangent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::RandomBump => "random-bump",
            PerturbationKind::MassRotation => "mass-rotation",
            PerturbationKind::BranchTangent => "branch-tangent",
        }
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown perturbation kind {s:?}")))
    }
}

fn h_norm_complex(p: &ComplexPair, m: &ModelParams) -> Result<f64> {
    Ok(h_norm_sq(p, m.potential(0), m.potential(1))?.sqrt())
}

/// Initial data `u + δ·(direction)` at `H`-distance `delta` from the
/// standing-wave profile `s.pair`.
pub fn perturbed_initial_data(
    s: &SolitarySolution,
    m: &ModelParams,
    kind: PerturbationKind,
    delta: f64,
    seed: u64,
    opts: &SolveOptions,
) -> Result<ComplexPair> {
    let u = s.pair.to_complex();
    if delta == 0.0 {
        return Ok(u);
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be nonnegative, got {delta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = match kind {
        PerturbationKind::RandomBump => {
            let mut comps = Vec::with_capacity(2);
            for i in 0..2 {
                let env = s.pair.component(i);
                let re = random_smooth_field(env, &mut rng);
                let im = random_smooth_field(env, &mut rng);
                comps.push(ComplexField::from_parts(&re, &im)?);
            }
            Pair::new(comps.remove(0), comps.remove(0))?
        }
        PerturbationKind::MassRotation => return mass_rotation(s, m, delta, &mut rng),
        PerturbationKind::BranchTangent => {
            let h = 1e-3 * s.alpha.abs().max(1.0);
            let solve = |a: f64| -> Result<RealPair> {
                let c = ConstraintSpec::new(a, s.rho1, s.rho2)?;
                Ok(maximize(m, &c, Some(&s.pair), opts)?.pair)
            };
            let plus = solve(s.alpha + h)?;
            let minus = solve(s.alpha - h)?;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let phase = Complex64::from_polar(sign, rng.gen_range(-0.5..0.5));
            plus.add_scaled(-1.0, &minus)?.to_complex().map(|f| f.times(phase))
        }
    };
    let norm = h_norm_complex(&direction, m)?;
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter(format!("{} direction vanishes", kind.as_str())));
    }
    let scaled = direction.map(|f| f.scaled(delta / norm));
    Pair::new(
        u.first.add_scaled(1.0, &scaled.first)?,
        u.second.add_scaled(1.0, &scaled.second)?,
    )
}

fn mass_rotation(s: &SolitarySolution, m: &ModelParams, delta: f64, rng: &mut ChaCha8Rng) -> Result<ComplexPair> {
    let mut normals = Vec::with_capacity(2);
    for i in 0..2 {
        let ui = s.pair.component(i);
        let phi = &m.eigenpair(i)?.phi;
        let q = ui.mass();
        let n = phi.add_scaled(-phi.dot(ui)? / q, ui)?;
        let size = n.mass().sqrt();
        if !(size > 1e-8 * q.sqrt()) {
            return Err(Error::InvalidParameter(format!(
                "component {} is parallel to its eigenfunction; no rotation direction",
                i + 1
            )));
        }
        normals.push(n.scaled(q.sqrt() / size));
    }
    // Per-component angle weights on the unit circle.
    let th = rng.gen_range(0.0..std::f64::consts::TAU);
    let weights = [th.cos(), th.sin()];
    let rotate = |s_: f64| -> Result<RealPair> {
        let c = |i: usize| -> Result<RealField> {
            let a = s_ * weights[i];
            s.pair.component(i).scaled(a.cos()).add_scaled(a.sin(), &normals[i])
        };
        Pair::new(c(0)?, c(1)?)
    };
    let dist = |s_: f64| -> Result<f64> {
        let w = rotate(s_)?;
        Ok(h_norm_sq(&w.add_scaled(-1.0, &s.pair)?, m.potential(0), m.potential(1))?.sqrt())
    };
    let (mut lo, mut hi) = (0.0, 1e-3);
    while dist(hi)? < delta {
        lo = hi;
        hi *= 2.0;
        if hi > std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidParameter(format!("rotation cannot reach H-distance {delta}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist(mid)? < delta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(rotate(0.5 * (lo + hi))?.to_complex())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSample {
    pub t: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub energy: f64,
    pub orbital_distance: f64,
    pub h_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub kind: PerturbationKind,
    pub seed: u64,
    pub delta: f64,
    pub horizon: f64,
    pub dt: f64,
    pub gamma_star: f64,
    pub sup_distance: f64,
    /// Largest relative drifts over the samples.
    pub mass_drift: f64,
    pub energy_drift: f64,
    pub samples: Vec<TimeSample>,
}

impl StabilityReport {
    /// Sup distance and largest relative drifts over `samples`.
    pub fn from_samples(
        kind: PerturbationKind,
        seed: u64,
        delta: f64,
        horizon: f64,
        dt: f64,
        gamma_star: f64,
        samples: Vec<TimeSample>,
    ) -> StabilityReport {
        let first = samples[0];
        let sup_distance = samples.iter().map(|x| x.orbital_distance).fold(0.0, f64::max);
        let mass_drift = samples
            .iter()
            .map(|x| rel(x.mass1, first.mass1).max(rel(x.mass2, first.mass2)))
            .fold(0.0, f64::max);
        let energy_drift = samples.iter().map(|x| rel(x.energy, first.energy)).fold(0.0, f64::max);
        StabilityReport {
            kind,
            seed,
            delta,
            horizon,
            dt,
            gamma_star,
            sup_distance,
            mass_drift,
            energy_drift,
            samples,
        }
    }

    pub fn distance_series(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t, s.orbital_distance)).collect()
    }
}

fn sample(state: &EvolutionState, u: &RealPair, m: &ModelParams, gamma_star: f64) -> Result<TimeSample> {
    let [mass1, mass2] = state.pair.masses();
    Ok(TimeSample {
        t: state.t,
        mass1,
        mass2,
        energy: eval_energy(&state.pair, m, gamma_star)?,
        orbital_distance: orbital_distance(&state.pair, u, m)?,
        h_norm_sq: h_norm_sq(&state.pair, m.potential(0), m.potential(1))?,
    })
}

/// Evolves `initial` with `γ* = gamma_star` to `horizon`, sampling every
/// [`SAMPLE_INTERVAL`] (and at the end), distances measured against `u`.
pub fn evolve_and_sample(
    initial: ComplexPair,
    u: &RealPair,
    m: &ModelParams,
    gamma_star: f64,
    horizon: f64,
    dt: f64,
) -> Result<Vec<TimeSample>> {
    Ok(evolve_with_snapshots(initial, u, m, gamma_star, horizon, dt, &[])?.0)
}

/// As [`evolve_and_sample`], also keeping the state at each time in
/// `snapshots` (rounded to the nearest step).
pub fn evolve_with_snapshots(
    initial: ComplexPair,
    u: &RealPair,
    m: &ModelParams,
    gamma_star: f64,
    horizon: f64,
    dt: f64,
    snapshots: &[f64],
) -> Result<(Vec<TimeSample>, Vec<(f64, ComplexPair)>)> {
    if !(dt > 0.0 && horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need dt > 0 and horizon >= 0, got dt={dt}, horizon={horizon}"
        )));
    }
    if let Some(t) = snapshots.iter().find(|&&t| !(t >= 0.0 && t <= horizon)) {
        return Err(Error::InvalidParameter(format!("snapshot time {t} is outside [0, {horizon}]")));
    }
    let prop = Propagator::new(m, gamma_star, dt)?;
    let mut state = EvolutionState::new(initial, m, gamma_star)?;
    let total = (horizon / dt).round() as usize;
    let every = ((SAMPLE_INTERVAL / dt).round() as usize).max(1);
    let mut snap_steps: Vec<usize> = snapshots.iter().map(|t| ((t / dt).round() as usize).min(total)).collect();
    snap_steps.sort_unstable();
    snap_steps.dedup();

    let mut samples = vec![sample(&state, u, m, gamma_star)?];
    let mut snaps = Vec::with_capacity(snap_steps.len());
    let mut pending = snap_steps.into_iter().peekable();
    if pending.next_if_eq(&0).is_some() {
        snaps.push((0.0, state.pair.clone()));
    }
    let mut done = 0;
    while done < total {
        let next_sample = (done / every + 1) * every;
        let target = next_sample.min(total).min(pending.peek().copied().unwrap_or(usize::MAX));
        prop.run(&mut state, target - done)?;
        done = target;
        // Restore exact times: t accumulates rounding from dt.
        state.t = done as f64 * dt;
        if pending.next_if_eq(&done).is_some() {
            snaps.push((state.t, state.pair.clone()));
        }
        if done % every == 0 || done == total {
            samples.push(sample(&state, u, m, gamma_star)?);
        }
    }
    Ok((samples, snaps))
}

/// Perturbs the standing wave of `s` by `delta` in `H` and follows the
/// orbital distance with `γ* = s.gamma`.
#[allow(clippy::too_many_arguments)]
pub fn stability_experiment(
    s: &SolitarySolution,
    m: &ModelParams,
    delta: f64,
    horizon: f64,
    dt: f64,
    kind: PerturbationKind,
    seed: u64,
    opts: &SolveOptions,
) -> Result<StabilityReport> {
    let initial = perturbed_initial_data(s, m, kind, delta, seed, opts)?;
    let samples = evolve_and_sample(initial, &s.pair, m, s.gamma, horizon, dt)?;
    Ok(StabilityReport::from_samples(kind, seed, delta, horizon, dt, s.gamma, samples))
}

/// Independent experiments over kinds and seeds, in input order.
pub fn stability_batch(
    s: &SolitarySolution,
    m: &ModelParams,
    delta: f64,
    horizon: f64,
    dt: f64,
    runs: &[(PerturbationKind, u64)],
    opts: &SolveOptions,
) -> Result<Vec<StabilityReport>> {
    runs.par_iter()
        .map(|&(kind, seed)| stability_experiment(s, m, delta, horizon, dt, kind, seed, opts))
        .collect()
}

/// Right-hand side of the trapping condition,
/// `ᾱ/2 − γ* M(ᾱ, Q(ψ₁), Q(ψ₂))`. Data with energy below it cannot cross
/// the sphere `‖Ψ‖²_H = ᾱ`.
pub fn energy_barrier(
    m: &ModelParams,
    gamma_star: f64,
    alpha_bar: f64,
    psi: &ComplexPair,
    opts: &SolveOptions,
) -> Result<f64> {
    let [q1, q2] = psi.masses();
    let c = ConstraintSpec::new(alpha_bar, q1, q2)?;
    let s = maximize(m, &c, None, opts)?;
    Ok(alpha_bar / 2.0 - gamma_star * s.m_value)
}

/// CSV with columns `t,mass1,mass2,energy,orbital_distance`.
pub fn write_time_series<W: Write>(samples: &[TimeSample], mut out: W) -> Result<()> {
    writeln!(out, "t,mass1,mass2,energy,orbital_distance")?;
    for s in samples {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e}",
            s.t, s.mass1, s.mass2, s.energy, s.orbital_distance
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PotentialSpec, ScatteringParams};

    fn harmonic(dim: usize, n: usize, extent: f64, s: ScatteringParams) -> ModelParams {
        let g = Grid::new(dim, n, extent).unwrap();
        ModelParams::from_specs(g, &PotentialSpec::Harmonic, &PotentialSpec::Harmonic, s).unwrap()
    }

    fn defocusing() -> ModelParams {
        harmonic(1, 255, 8.0, ScatteringParams::new(-1.0, -1.0, 0.5))
    }

    fn standing_wave(m: &ModelParams, excess: f64) -> SolitarySolution {
        let t = m.feasibility_threshold(1.0, 1.0).unwrap();
        let c = ConstraintSpec::new(t + excess, 1.0, 1.0).unwrap();
        maximize(m, &c, None, &SolveOptions::default()).unwrap()
    }

    fn ground_pair(m: &ModelParams) -> (ComplexPair, [f64; 2]) {
        let phi0 = m.eigenpair(0).unwrap().phi.clone();
        let phi1 = m.eigenpair(1).unwrap().phi.clone();
        (Pair::new(phi0, phi1).unwrap().to_complex(), m.lambdas().unwrap())
    }

    /// `L²` error against `e^{−iλt}φ` after linear evolution to `t = 1`.
    fn linear_error(m: &ModelParams, dt: f64) -> f64 {
        let (psi, lambdas) = ground_pair(m);
        let prop = Propagator::new(m, 0.0, dt).unwrap();
        let mut state = EvolutionState::new(psi.clone(), m, 0.0).unwrap();
        prop.run(&mut state, (1.0 / dt).round() as usize).unwrap();
        let exact = Pair::new(
            psi.first.times(Complex64::from_polar(1.0, -lambdas[0])),
            psi.second.times(Complex64::from_polar(1.0, -lambdas[1])),
        )
        .unwrap();
        state.pair.l2_distance(&exact).unwrap()
    }

    #[test]
    fn linear_ground_state_rotates_at_second_order() {
        let m = harmonic(1, 255, 8.0, ScatteringParams::new(1.0, 1.0, 0.0));
        let coarse = linear_error(&m, 0.02);
        let fine = linear_error(&m, 0.01);
        assert!(fine < 1e-3, "{fine}");
        let ratio = coarse / fine;
        assert!((3.6..4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn two_dimensional_linear_evolution() {
        let m = harmonic(2, 31, 5.0, ScatteringParams::new(1.0, 1.0, 0.0));
        let coarse = linear_error(&m, 0.05);
        let fine = linear_error(&m, 0.025);
        let ratio = coarse / fine;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn strang_step_is_time_reversible() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let psi = perturbed_initial_data(&s, &m, PerturbationKind::RandomBump, 0.05, 3, &SolveOptions::default())
            .unwrap();
        let mut state = EvolutionState::new(psi.clone(), &m, s.gamma).unwrap();
        Propagator::new(&m, s.gamma, 0.01).unwrap().run(&mut state, 200).unwrap();
        assert!(state.pair.l2_distance(&psi).unwrap() > 1e-3);
        Propagator::new(&m, s.gamma, -0.01).unwrap().run(&mut state, 200).unwrap();
        let back = state.pair.l2_distance(&psi).unwrap();
        assert!(back < 1e-11, "{back}");
        assert!(state.t.abs() < 1e-12);
    }

    #[test]
    fn masses_hold_over_ten_thousand_steps() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let psi = perturbed_initial_data(&s, &m, PerturbationKind::RandomBump, 1e-2, 0, &SolveOptions::default())
            .unwrap();
        let mut state = EvolutionState::new(psi, &m, s.gamma).unwrap();
        Propagator::new(&m, s.gamma, 1e-3).unwrap().run(&mut state, 10_000).unwrap();
        assert!(state.mass_drift() < 1e-10, "{}", state.mass_drift());
        let e = state.energy_drift(&m, s.gamma).unwrap();
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn standing_wave_stays_on_its_orbit() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let samples = evolve_and_sample(s.pair.to_complex(), &s.pair, &m, s.gamma, 2.0, 1e-3).unwrap();
        assert_eq!(samples.len(), 21);
        assert!((samples[20].t - 2.0).abs() < 1e-15);
        let sup = samples.iter().map(|x| x.orbital_distance).fold(0.0, f64::max);
        assert!(sup < 1e-5, "{sup}");
    }

    #[test]
    fn orbital_distance_ignores_phases() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let rotated = Pair::new(
            s.pair.first.to_complex().times(Complex64::from_polar(1.0, 0.7)),
            s.pair.second.to_complex().times(Complex64::from_polar(1.0, -2.1)),
        )
        .unwrap();
        assert!(orbital_distance(&rotated, &s.pair, &m).unwrap() < 1e-7);

        let delta = 0.01;
        let stretched = Pair::new(s.pair.first.scaled(1.0 + delta), s.pair.second.clone())
            .unwrap()
            .to_complex();
        let expected = delta * s.pair.first.h_energy(m.potential(0)).unwrap().sqrt();
        let d = orbital_distance(&stretched, &s.pair, &m).unwrap();
        assert!((d - expected).abs() < 1e-9 * expected.max(1.0), "{d} vs {expected}");
    }

    #[test]
    fn orbital_distance_matches_phase_grid_search() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let psi = perturbed_initial_data(&s, &m, PerturbationKind::RandomBump, 0.3, 11, &SolveOptions::default())
            .unwrap()
            .map(|f| f.times(Complex64::from_polar(1.0, 1.2)));
        let d = orbital_distance(&psi, &s.pair, &m).unwrap();
        let mut best = f64::INFINITY;
        let steps = 100;
        let comp = |i: usize, t: f64| -> f64 {
            let ui = s.pair.component(i).to_complex().times(Complex64::from_polar(1.0, t));
            psi.component(i)
                .add_scaled_complex(Complex64::new(-1.0, 0.0), &ui)
                .unwrap()
                .h_energy(m.potential(i))
                .unwrap()
        };
        let angle = |k: usize| std::f64::consts::TAU * k as f64 / steps as f64;
        for a in 0..steps {
            let c1 = comp(0, angle(a));
            for b in 0..steps {
                best = best.min((c1 + comp(1, angle(b))).sqrt());
            }
        }
        assert!(d <= best + 1e-12, "{d} > {best}");
        assert!(best - d < 1e-2 * best, "{d} vs {best}");
    }

    #[test]
    fn perturbations_have_the_requested_size() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let u = s.pair.to_complex();
        for kind in PerturbationKind::ALL {
            for delta in [1e-3, 1e-2] {
                let psi = perturbed_initial_data(&s, &m, kind, delta, 5, &SolveOptions::default()).unwrap();
                let diff = psi.add_scaled(-1.0, &u).unwrap();
                let d = h_norm_complex(&diff, &m).unwrap();
                assert!((d - delta).abs() < 1e-9 * delta.max(1.0) + 1e-12, "{} {d} vs {delta}", kind.as_str());
                if kind == PerturbationKind::MassRotation {
                    let [q1, q2] = psi.masses();
                    assert!((q1 - 1.0).abs() < 1e-12 && (q2 - 1.0).abs() < 1e-12);
                }
            }
        }
        let same = perturbed_initial_data(&s, &m, PerturbationKind::RandomBump, 0.0, 0, &SolveOptions::default());
        assert_eq!(same.unwrap(), u);
        assert!(perturbed_initial_data(&s, &m, PerturbationKind::RandomBump, -1.0, 0, &SolveOptions::default()).is_err());
    }

    #[test]
    fn energy_below_the_barrier_stays_inside_the_sphere() {
        let m = defocusing();
        let opts = SolveOptions::default();
        let s = standing_wave(&m, 0.5);
        let psi = perturbed_initial_data(&s, &m, PerturbationKind::MassRotation, 1e-2, 2, &opts).unwrap();
        let alpha_bar = s.alpha + 0.05;
        let barrier = energy_barrier(&m, s.gamma, alpha_bar, &psi, &opts).unwrap();
        let e0 = eval_energy(&psi, &m, s.gamma).unwrap();
        assert!(e0 < barrier, "{e0} >= {barrier}");
        let samples = evolve_and_sample(psi, &s.pair, &m, s.gamma, 5.0, 1e-3).unwrap();
        for x in &samples {
            assert!(x.h_norm_sq < alpha_bar, "t = {}: {}", x.t, x.h_norm_sq);
        }
    }

    #[test]
    fn kinds_parse_from_their_names() {
        for kind in PerturbationKind::ALL {
            assert_eq!(kind.as_str().parse::<PerturbationKind>().unwrap(), kind);
        }
        assert!("bump".parse::<PerturbationKind>().is_err());
    }

    #[test]
    fn rejects_bad_steps() {
        let m = defocusing();
        assert!(Propagator::new(&m, 1.0, 0.0).is_err());
        assert!(Propagator::new(&m, 1.0, f64::NAN).is_err());
        let (psi, _) = ground_pair(&m);
        assert!(evolve_and_sample(psi, &standing_wave(&m, 0.5).pair, &m, 1.0, 1.0, -1e-3).is_err());
    }

    #[test]
    fn snapshots_match_plain_evolution() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let psi = perturbed_initial_data(&s, &m, PerturbationKind::RandomBump, 0.05, 1, &SolveOptions::default())
            .unwrap();
        let plain = evolve_and_sample(psi.clone(), &s.pair, &m, s.gamma, 0.5, 1e-2).unwrap();
        let (samples, snaps) =
            evolve_with_snapshots(psi.clone(), &s.pair, &m, s.gamma, 0.5, 1e-2, &[0.25, 0.0, 0.5, 0.123]).unwrap();
        assert_eq!(samples, plain);
        let times: Vec<f64> = snaps.iter().map(|x| x.0).collect();
        assert_eq!(times, vec![0.0, 0.12, 0.25, 0.5]);
        assert_eq!(snaps[0].1, psi);
        let mut state = EvolutionState::new(psi, &m, s.gamma).unwrap();
        Propagator::new(&m, s.gamma, 1e-2).unwrap().run(&mut state, 25).unwrap();
        assert_eq!(snaps[2].1, state.pair);
        assert!(evolve_with_snapshots(s.pair.to_complex(), &s.pair, &m, s.gamma, 0.5, 1e-2, &[0.6]).is_err());
    }

    #[test]
    fn time_series_csv() {
        let m = defocusing();
        let s = standing_wave(&m, 0.5);
        let samples = evolve_and_sample(s.pair.to_complex(), &s.pair, &m, s.gamma, 0.2, 1e-2).unwrap();
        let mut out = Vec::new();
        write_time_series(&samples, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("t,mass1,mass2,energy,orbital_distance\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
