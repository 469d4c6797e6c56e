//! Branch following in the H-norm budget `α` at fixed `(ρ₁, ρ₂)`, the
//! derivative identity `e'(α) = ½(1 − γ*/γ(α))` and the monotonicity
//! criterion for orbital stability.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RealPair;
use crate::maximizer::{maximize, SolitarySolution, SolveOptions};
use crate::model::{ConstraintSpec, ModelParams};

/// Warm and cold starts further apart than this (in `L²`) flag a jump.
pub const DISCONTINUITY_L2: f64 = 1e-2;

/// Solutions along an increasing `α`-grid.
#[derive(Debug, Clone)]
pub struct BranchCurve {
    pub rho1: f64,
    pub rho2: f64,
    pub points: Vec<SolitarySolution>,
    /// `γ'(α)`: central differences inside, one-sided at the ends.
    pub gamma_derivative: Vec<f64>,
    /// Indices where the warm-started and cold-started solves disagree.
    pub discontinuities: Vec<usize>,
    /// `(M'(α), γ'(α))` from extra solves at `α ± δ`, when requested.
    pub local_slopes: Option<Vec<[f64; 2]>>,
    /// The `δ` behind `local_slopes`.
    pub fd_step: Option<f64>,
}

/// Controls for [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Also solve every point from the default anchor and flag jumps.
    pub cold_check: bool,
    /// Step `δ` of local central differences for `M'` and `γ'`; `None`
    /// differentiates across the grid itself.
    pub fd_step: Option<f64>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            cold_check: false,
            fd_step: Some(1e-3),
        }
    }
}

impl BranchCurve {
    pub fn from_points(rho1: f64, rho2: f64, points: Vec<SolitarySolution>) -> Result<BranchCurve> {
        if points.is_empty() {
            return Err(Error::InvalidParameter("branch needs at least one point".into()));
        }
        if points.windows(2).any(|w| !(w[1].alpha > w[0].alpha)) {
            return Err(Error::InvalidParameter("branch alphas must be strictly increasing".into()));
        }
        let gamma_derivative = fd_derivative(
            &points.iter().map(|p| p.alpha).collect::<Vec<_>>(),
            &points.iter().map(|p| p.gamma).collect::<Vec<_>>(),
        );
        Ok(BranchCurve {
            rho1,
            rho2,
            points,
            gamma_derivative,
            discontinuities: Vec::new(),
            local_slopes: None,
            fd_step: None,
        })
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.alpha).collect()
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.gamma).collect()
    }

    pub fn m_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.m_value).collect()
    }

    /// `γ` at `α` by linear interpolation between branch points.
    pub fn gamma_at(&self, alpha: f64) -> Result<f64> {
        let a = self.alphas();
        let (lo, hi) = (a[0], a[a.len() - 1]);
        if !(alpha >= lo && alpha <= hi) {
            return Err(Error::OutOfRange { value: alpha, lo, hi });
        }
        let g = self.gammas();
        if a.len() == 1 {
            return Ok(g[0]);
        }
        let k = a.partition_point(|&x| x <= alpha).clamp(1, a.len() - 1);
        let t = (alpha - a[k - 1]) / (a[k] - a[k - 1]);
        Ok(g[k - 1] + t * (g[k] - g[k - 1]))
    }
}

/// Second-order finite-difference derivative on a nonuniform grid.
pub fn fd_derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    match n {
        0 => return Vec::new(),
        1 => return vec![0.0],
        2 => {
            let d = (y[1] - y[0]) / (x[1] - x[0]);
            return vec![d, d];
        }
        _ => {}
    }
    let three_point = |k0: usize, at: usize| {
        // Derivative at x[at] of the quadratic through k0, k0+1, k0+2.
        let (x0, x1, x2) = (x[k0], x[k0 + 1], x[k0 + 2]);
        let t = x[at];
        let l0 = (2.0 * t - x1 - x2) / ((x0 - x1) * (x0 - x2));
        let l1 = (2.0 * t - x0 - x2) / ((x1 - x0) * (x1 - x2));
        let l2 = (2.0 * t - x0 - x1) / ((x2 - x0) * (x2 - x1));
        l0 * y[k0] + l1 * y[k0 + 1] + l2 * y[k0 + 2]
    };
    (0..n)
        .map(|k| match k {
            0 => three_point(0, 0),
            k if k == n - 1 => three_point(n - 3, n - 1),
            k => three_point(k - 1, k),
        })
        .collect()
}

/// Solves along `alpha_grid`, each point warm-started from the previous one.
pub fn sweep(
    m: &ModelParams,
    rho1: f64,
    rho2: f64,
    alpha_grid: &[f64],
    opts: &SolveOptions,
    sweep_opts: &SweepOptions,
) -> Result<BranchCurve> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidParameter("empty alpha grid".into()));
    }
    if alpha_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("alpha grid must be strictly increasing".into()));
    }
    if let Some(d) = sweep_opts.fd_step {
        if !(d > 0.0) {
            return Err(Error::InvalidParameter(format!("fd step must be positive, got {d}")));
        }
    }
    m.scattering().require_nondegenerate()?;
    let threshold = m.feasibility_threshold(rho1, rho2)?;
    let mut points: Vec<SolitarySolution> = Vec::with_capacity(alpha_grid.len());
    let mut slopes = Vec::new();
    let mut discontinuities = Vec::new();
    for (k, &alpha) in alpha_grid.iter().enumerate() {
        let c = ConstraintSpec::new(alpha, rho1, rho2)?;
        let warm = points.last().filter(|p| p.gamma > 0.0).map(|p| &p.pair);
        let s = solve_warm(m, &c, warm, opts).map_err(|e| e.at_alpha(alpha))?;
        if sweep_opts.cold_check && warm.is_some() {
            let cold = maximize(m, &c, None, opts).map_err(|e| e.at_alpha(alpha))?;
            if cold.pair.l2_distance(&s.pair)? > DISCONTINUITY_L2 {
                discontinuities.push(k);
            }
        }
        if let Some(d) = sweep_opts.fd_step {
            slopes.push(local_slopes(m, &s, threshold, d, opts)?);
        }
        points.push(s);
    }
    let mut b = BranchCurve::from_points(rho1, rho2, points)?;
    b.discontinuities = discontinuities;
    if sweep_opts.fd_step.is_some() {
        b.gamma_derivative = slopes.iter().map(|s| s[1]).collect();
        b.local_slopes = Some(slopes);
        b.fd_step = sweep_opts.fd_step;
    }
    Ok(b)
}

/// Warm start, falling back to the cold start when the neighbour cannot be
/// retracted onto the new constraint set (a neighbour close to the threshold
/// is nearly a pair of ground states and has almost no room to move).
fn solve_warm(
    m: &ModelParams,
    c: &ConstraintSpec,
    warm: Option<&RealPair>,
    opts: &SolveOptions,
) -> Result<SolitarySolution> {
    match (maximize(m, c, warm, opts), warm) {
        (Err(_), Some(_)) => maximize(m, c, None, opts),
        (r, _) => r,
    }
}

/// `(M', γ')` at `s.alpha` from solves at `α ± δ` (forward when `α − δ`
/// falls below the threshold).
fn local_slopes(
    m: &ModelParams,
    s: &SolitarySolution,
    threshold: f64,
    delta: f64,
    opts: &SolveOptions,
) -> Result<[f64; 2]> {
    let solve = |a: f64| -> Result<SolitarySolution> {
        let c = ConstraintSpec::new(a, s.rho1, s.rho2)?;
        let warm = (s.gamma > 0.0).then_some(&s.pair);
        solve_warm(m, &c, warm, opts).map_err(|e| e.at_alpha(a))
    };
    let a = s.alpha;
    if a - delta > threshold {
        let lo = solve(a - delta)?;
        let hi = solve(a + delta)?;
        Ok([
            (hi.m_value - lo.m_value) / (2.0 * delta),
            (hi.gamma - lo.gamma) / (2.0 * delta),
        ])
    } else {
        let p1 = solve(a + delta)?;
        let p2 = solve(a + 2.0 * delta)?;
        let fwd = |f0: f64, f1: f64, f2: f64| (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * delta);
        Ok([
            fwd(s.m_value, p1.m_value, p2.m_value),
            fwd(s.gamma, p1.gamma, p2.gamma),
        ])
    }
}

/// `e'` at a reference point `α*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub alpha_star: f64,
    /// `γ(α*)` from a solve at `α*` itself.
    pub gamma_star: f64,
    /// `½ − γ* M'(α*)`, central difference with step `δ`.
    pub e_prime: f64,
    /// Richardson estimate `|D(2δ) − D(δ)|` of the truncation error plus
    /// the propagated solve error, scaled by `γ*`.
    pub fd_tolerance: f64,
}

/// Solves at `α*` and `α* ± δ, α* ± 2δ`, warm-started from the nearest
/// branch point. `e'(α*)` vanishes up to `fd_tolerance`.
pub fn e_derivative_at(
    m: &ModelParams,
    b: &BranchCurve,
    alpha_star: f64,
    delta: f64,
    opts: &SolveOptions,
) -> Result<CriticalPoint> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("fd step must be positive, got {delta}")));
    }
    let a = b.alphas();
    let (lo, hi) = (a[0], a[a.len() - 1]);
    if !(alpha_star >= lo && alpha_star <= hi) {
        return Err(Error::OutOfRange { value: alpha_star, lo, hi });
    }
    let k = a.partition_point(|&x| x <= alpha_star).saturating_sub(1);
    let warm = (b.points[k].gamma > 0.0).then_some(&b.points[k].pair);
    let solve = |alpha: f64| -> Result<SolitarySolution> {
        let c = ConstraintSpec::new(alpha, b.rho1, b.rho2)?;
        solve_warm(m, &c, warm, opts).map_err(|e| e.at_alpha(alpha))
    };
    let centre = solve(alpha_star)?;
    let gamma_star = centre.gamma;
    let side: Vec<SolitarySolution> = [-2.0, -1.0, 1.0, 2.0]
        .iter()
        .map(|t| solve(alpha_star + t * delta))
        .collect::<Result<_>>()?;
    let d1 = (side[2].m_value - side[1].m_value) / (2.0 * delta);
    let d2 = (side[3].m_value - side[0].m_value) / (4.0 * delta);
    // A constraint violation v shifts M by about v·α/(2γ).
    let m_err = side
        .iter()
        .map(|s| 64.0 * f64::EPSILON * s.m_value.abs() + s.constraint_violation * s.alpha / (2.0 * s.gamma))
        .fold(0.0, f64::max);
    Ok(CriticalPoint {
        alpha_star,
        gamma_star,
        e_prime: 0.5 - gamma_star * d1,
        fd_tolerance: gamma_star * ((d2 - d1).abs() + m_err / delta),
    })
}

/// `e(α) = α/2 − γ* M(α)` and its finite-difference derivative (local
/// differences when the sweep recorded them).
pub fn e_curve(b: &BranchCurve, gamma_star: f64) -> (Vec<f64>, Vec<f64>) {
    let a = b.alphas();
    let e: Vec<f64> = b
        .points
        .iter()
        .map(|p| p.alpha / 2.0 - gamma_star * p.m_value)
        .collect();
    let de = match &b.local_slopes {
        Some(sl) => sl.iter().map(|s| 0.5 - gamma_star * s[0]).collect(),
        None => fd_derivative(&a, &e),
    };
    (e, de)
}

/// `½(1 − γ*/γ(α))` at every branch point.
pub fn e_derivative_identity(b: &BranchCurve, gamma_star: f64) -> Vec<f64> {
    b.points.iter().map(|p| 0.5 * (1.0 - gamma_star / p.gamma)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub flags: Vec<Verdict>,
    /// Longest run of consecutive points with `γ' > 0`, as an `α`-interval.
    pub monotone_window: Option<(f64, f64)>,
    pub margin: f64,
}

/// Estimate of the central-difference error in `γ'`, from third differences
/// of the branch and the step actually used for `γ'` (the local `δ` when
/// present, the grid spacing otherwise).
pub fn fd_truncation_estimate(b: &BranchCurve) -> f64 {
    let a = b.alphas();
    let g = b.gammas();
    if a.len() < 4 {
        return 0.0;
    }
    let mut est: f64 = 0.0;
    for k in 0..a.len() - 3 {
        let h = (a[k + 3] - a[k]) / 3.0;
        let d3 = g[k + 3] - 3.0 * g[k + 2] + 3.0 * g[k + 1] - g[k];
        let step = b.fd_step.unwrap_or(h);
        est = est.max(d3.abs() / h.powi(3) * step * step / 6.0);
    }
    est
}

pub fn default_margin(b: &BranchCurve) -> f64 {
    10.0 * fd_truncation_estimate(b)
}

/// Size of `γ'` indistinguishable from rounding in the differences.
fn rounding_floor(b: &BranchCurve) -> f64 {
    let a = b.alphas();
    let gmax = b.points.iter().fold(0.0f64, |m, p| m.max(p.gamma.abs()));
    let hmin = b
        .fd_step
        .unwrap_or_else(|| a.windows(2).fold(f64::INFINITY, |m, w| m.min(w[1] - w[0])));
    if hmin.is_finite() {
        64.0 * f64::EPSILON * gmax / hmin
    } else {
        0.0
    }
}

/// Stable where `γ' > margin`, inconclusive elsewhere. The criterion is
/// one-sided, so nothing is ever called unstable. Branches with fewer than
/// three points are inconclusive throughout.
pub fn stability_verdict(b: &BranchCurve, margin: f64) -> StabilityVerdict {
    let n = b.points.len();
    let a = b.alphas();
    let enough = n >= 3;
    let floor = rounding_floor(b);
    let flags = b
        .gamma_derivative
        .iter()
        .map(|&d| {
            if enough && d > margin && d > floor {
                Verdict::Stable
            } else {
                Verdict::Inconclusive
            }
        })
        .collect();
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for k in 0..=n {
        let up = enough && k < n && b.gamma_derivative[k] > floor;
        match (up, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                if best.map_or(true, |(bs, be)| k - 1 - s > be - bs) {
                    best = Some((s, k - 1));
                }
                start = None;
            }
            _ => {}
        }
    }
    StabilityVerdict {
        flags,
        monotone_window: best.map(|(s, e)| (a[s], a[e])),
        margin,
    }
}

/// Finds the branch point carrying physical masses `(m₁, m₂) = γ(ρ₁, ρ₂)` by
/// bisection in `α` inside the monotone window.
pub fn alpha_for_masses(
    m: &ModelParams,
    b: &BranchCurve,
    m1: f64,
    m2: f64,
    opts: &SolveOptions,
) -> Result<SolitarySolution> {
    let target = m1 / b.rho1;
    if !(target > 0.0) || ((m2 / b.rho2) - target).abs() > 1e-9 * target {
        return Err(Error::InvalidParameter(format!(
            "masses ({m1}, {m2}) are not a positive multiple of ({}, {})",
            b.rho1, b.rho2
        )));
    }
    let verdict = stability_verdict(b, 0.0);
    let (lo_a, hi_a) = verdict
        .monotone_window
        .ok_or_else(|| Error::InvalidParameter("branch has no monotone window".into()))?;
    let idx: Vec<usize> = (0..b.points.len())
        .filter(|&k| b.points[k].alpha >= lo_a && b.points[k].alpha <= hi_a)
        .collect();
    let g_lo = b.points[idx[0]].gamma;
    let g_hi = b.points[idx[idx.len() - 1]].gamma;
    if !(target >= g_lo && target <= g_hi) {
        return Err(Error::OutOfRange {
            value: target,
            lo: g_lo,
            hi: g_hi,
        });
    }
    let k = idx
        .windows(2)
        .find(|w| b.points[w[0]].gamma <= target && target <= b.points[w[1]].gamma)
        .map(|w| w[0])
        .unwrap_or(idx[0]);
    let mut lo = b.points[k].clone();
    let mut hi = b.points[(k + 1).min(b.points.len() - 1)].clone();
    for _ in 0..100 {
        if (lo.gamma - target).abs() <= 1e-10 * target {
            return Ok(lo);
        }
        if (hi.gamma - target).abs() <= 1e-10 * target {
            return Ok(hi);
        }
        let mid = 0.5 * (lo.alpha + hi.alpha);
        if !(mid > lo.alpha && mid < hi.alpha) {
            break;
        }
        let c = ConstraintSpec::new(mid, b.rho1, b.rho2)?;
        let s = solve_warm(m, &c, Some(&lo.pair), opts).map_err(|e| e.at_alpha(mid))?;
        if s.gamma < target {
            lo = s;
        } else {
            hi = s;
        }
    }
    Ok(if (lo.gamma - target).abs() <= (hi.gamma - target).abs() {
        lo
    } else {
        hi
    })
}

/// CSV with columns `alpha,M,omega1,omega2,gamma,gamma_prime,e,e_prime,residual,verdict`.
pub fn write_csv<W: Write>(
    b: &BranchCurve,
    e: &[f64],
    e_prime: &[f64],
    verdict: &StabilityVerdict,
    mut out: W,
) -> Result<()> {
    writeln!(out, "alpha,M,omega1,omega2,gamma,gamma_prime,e,e_prime,residual,verdict")?;
    for (k, p) in b.points.iter().enumerate() {
        writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            p.alpha,
            p.m_value,
            p.omega1,
            p.omega2,
            p.gamma,
            b.gamma_derivative[k],
            e[k],
            e_prime[k],
            p.residual,
            verdict.flags[k].as_str()
        )?;
    }
    Ok(())
}
