//! Subcommand bodies. Each returns the files it wrote through [`Outputs`].

use gp_mass::acceptance::{degenerate_gate, run_criterion, CriterionResult, CRITERIA};
use gp_mass::bifurcation::{kernel_element, kernel_residual, log_grid, small_mass_scaling, write_scaling_csv, ThetaPoint};
use gp_mass::continuation::{
    default_margin, e_curve, e_derivative_at, stability_verdict, sweep, write_csv, SweepOptions, Verdict,
};
use gp_mass::eigen::DEFAULT_EIGEN_TOL;
use gp_mass::evolve::{
    evolve_with_snapshots, perturbed_initial_data, stability_batch, write_time_series, PerturbationKind,
    StabilityReport,
};
use gp_mass::maximizer::{maximize, maximize_multistart, to_physical, SolitarySolution, SolveOptions};
use gp_mass::model::{ConstraintSpec, ModelParams};
use serde_json::{json, Value};
use std::io::Write;

use crate::config::{positive, required, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::Outputs;
use crate::plot;

/// Values given on the command line; `None` defers to the config file.
#[derive(Debug, Default, Clone)]
pub struct Target {
    pub alpha: Option<f64>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
}

fn metadata(cfg: &RunConfig, opts: &SolveOptions) -> Value {
    json!({
        "seed": cfg.seed,
        "tolerances": {
            "gtol": opts.gtol,
            "ctol": opts.ctol,
            "rtol": opts.rtol,
            "max_iter": opts.max_iter,
            "armijo": opts.armijo,
            "eigen_tol": DEFAULT_EIGEN_TOL,
        },
        "model": cfg.model,
    })
}

fn csv_meta(cfg: &RunConfig, opts: &SolveOptions, extra: &[(&str, String)]) -> Vec<String> {
    let mut lines = vec![format!(
        "seed={} gtol={:e} ctol={:e} rtol={:e} eigen_tol={DEFAULT_EIGEN_TOL:e}",
        cfg.seed, opts.gtol, opts.ctol, opts.rtol
    )];
    if let Ok(m) = cfg.model() {
        lines.push(format!(
            "dim={} n={} L={} mu1={} mu2={} beta={}",
            m.dim, m.n, m.extent, m.mu1, m.mu2, m.beta
        ));
    }
    if !extra.is_empty() {
        let kv: Vec<String> = extra.iter().map(|(k, v)| format!("{k}={v}")).collect();
        lines.push(kv.join(" "));
    }
    lines
}

fn solution_record(s: &SolitarySolution, threshold: f64) -> Value {
    let physical = to_physical(s).ok().map(|p| json!({"m1": p.m1, "m2": p.m2}));
    json!({
        "alpha": s.alpha,
        "rho1": s.rho1,
        "rho2": s.rho2,
        "threshold": threshold,
        "M": s.m_value,
        "omega1": s.omega1,
        "omega2": s.omega2,
        "gamma": s.gamma,
        "residual": s.residual,
        "iterations": s.iterations,
        "grad_norm": s.grad_norm,
        "constraint_violation": s.constraint_violation,
        "physical_masses": physical,
    })
}

pub fn eig(cfg: &RunConfig, out: &mut Outputs) -> CliResult<()> {
    let m = cfg.model()?.build()?;
    let mut record = Vec::new();
    for i in 0..2 {
        let e = m.eigenpair(i)?;
        println!("lambda{} = {:.10}", i + 1, e.lambda);
        out.real_field(&format!("phi{}.gpfield", i + 1), &e.phi)?;
        record.push(json!({
            "lambda": e.lambda,
            "residual": e.residual,
            "iterations": e.iterations,
        }));
    }
    let opts = cfg.solve_options()?;
    out.json(
        "eig.json",
        &json!({
            "lambda1": record[0]["lambda"],
            "lambda2": record[1]["lambda"],
            "components": record,
            "metadata": metadata(cfg, &opts),
        }),
    )?;
    Ok(())
}

fn constraint(t: &Target, sec: (Option<f64>, Option<f64>, Option<f64>), section: &str) -> CliResult<ConstraintSpec> {
    let alpha = required(t.alpha, sec.0, "alpha", section)?;
    let rho1 = required(t.rho1, sec.1, "rho1", section)?;
    let rho2 = required(t.rho2, sec.2, "rho2", section)?;
    Ok(ConstraintSpec::new(alpha, rho1, rho2)?)
}

pub fn maximize_cmd(
    cfg: &RunConfig,
    out: &mut Outputs,
    t: &Target,
    starts: Option<usize>,
    amplitude: Option<f64>,
) -> CliResult<()> {
    let sec = &cfg.maximize;
    let m = cfg.model()?.build()?;
    let c = constraint(t, (sec.alpha, sec.rho1, sec.rho2), "maximize")?;
    let opts = cfg.solve_options()?;
    let starts = starts.or(sec.starts).unwrap_or(1);
    let amplitude = amplitude.or(sec.amplitude).unwrap_or(0.3);
    if starts == 0 {
        return Err(CliError::Config("starts must be at least 1".into()));
    }
    let threshold = m.feasibility_threshold(c.rho1, c.rho2)?;
    let (s, multi) = if starts == 1 {
        (maximize(&m, &c, None, &opts)?, Value::Null)
    } else {
        let ms = maximize_multistart(&m, &c, &opts, starts, positive(amplitude, "amplitude")?)?;
        let distinct: Vec<Value> = ms.distinct.iter().map(|d| json!({"M": d.m_value, "gamma": d.gamma})).collect();
        let failures: Vec<Value> = ms.failures.iter().map(|(k, e)| json!({"start": k, "error": e})).collect();
        let info = json!({
            "starts": starts,
            "amplitude": amplitude,
            "converged": ms.runs.len(),
            "max_spread_l2": ms.max_spread,
            "distinct": distinct,
            "failures": failures,
        });
        (ms.best, info)
    };
    let mut record = solution_record(&s, threshold);
    record["multistart"] = multi;
    record["metadata"] = metadata(cfg, &opts);
    out.json("maximize.json", &record)?;
    out.real_field("u1.gpfield", &s.pair.first)?;
    out.real_field("u2.gpfield", &s.pair.second)?;
    // A closed stdout (e.g. piped into `head`) is not an error here.
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&record).expect("record"));
    Ok(())
}

pub struct SweepArgs {
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub points: Option<usize>,
    pub alpha_star: Option<f64>,
}

pub fn sweep_cmd(cfg: &RunConfig, out: &mut Outputs, a: &SweepArgs) -> CliResult<()> {
    let sec = &cfg.sweep;
    let m = cfg.model()?.build()?;
    let opts = cfg.solve_options()?;
    let rho1 = required(a.rho1, sec.rho1, "rho1", "sweep")?;
    let rho2 = required(a.rho2, sec.rho2, "rho2", "sweep")?;
    let lo = required(a.alpha_min, sec.alpha_min, "alpha_min", "sweep")?;
    let hi = required(a.alpha_max, sec.alpha_max, "alpha_max", "sweep")?;
    let points = a.points.or(sec.points).unwrap_or(20);
    if points < 3 || !(hi > lo) {
        return Err(CliError::Config(format!(
            "sweep needs alpha_max > alpha_min and at least 3 points, got [{lo}, {hi}] with {points}"
        )));
    }
    let fd_step = match sec.fd_step {
        Some(d) if d == 0.0 => None,
        Some(d) => Some(positive(d, "sweep.fd_step")?),
        None => Some(1e-3),
    };
    let sw = SweepOptions {
        cold_check: sec.cold_check.unwrap_or(false),
        fd_step,
    };
    let grid: Vec<f64> = (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .collect();
    let threshold = m.feasibility_threshold(rho1, rho2)?;
    let b = sweep(&m, rho1, rho2, &grid, &opts, &sw)?;
    let alpha_star = a.alpha_star.or(sec.alpha_star).unwrap_or(0.5 * (lo + hi));
    let crit = e_derivative_at(&m, &b, alpha_star, fd_step.unwrap_or(1e-3), &opts)?;
    let (e, de) = e_curve(&b, crit.gamma_star);
    let margin = sec.margin.unwrap_or_else(|| default_margin(&b));
    let v = stability_verdict(&b, margin);
    let stable = v.flags.iter().filter(|&&f| f == Verdict::Stable).count();
    let meta = csv_meta(
        cfg,
        &opts,
        &[
            ("rho1", rho1.to_string()),
            ("rho2", rho2.to_string()),
            ("alpha_star", alpha_star.to_string()),
            ("gamma_star", crit.gamma_star.to_string()),
            ("margin", format!("{margin:e}")),
        ],
    );
    out.csv("sweep.csv", &meta, |buf| write_csv(&b, &e, &de, &v, buf))?;
    let record = json!({
        "rho1": rho1,
        "rho2": rho2,
        "threshold": threshold,
        "points": points,
        "fd_step": fd_step,
        "alpha_star": alpha_star,
        "gamma_star": crit.gamma_star,
        "e_prime_at_alpha_star": crit.e_prime,
        "fd_tolerance": crit.fd_tolerance,
        "margin": margin,
        "stable_points": stable,
        "monotone_window": v.monotone_window,
        "discontinuities": b.discontinuities,
        "metadata": metadata(cfg, &opts),
    });
    out.json("sweep.json", &record)?;
    if cfg.gnuplot {
        out.write("sweep.gp", plot::sweep("sweep.csv").as_bytes())?;
    }
    println!(
        "{points} points on [{lo}, {hi}]: gamma {:.6} -> {:.6}; {stable}/{points} stable (margin {margin:.3e})",
        b.points[0].gamma,
        b.points[points - 1].gamma
    );
    if let Some((wl, wh)) = v.monotone_window {
        println!("monotone window [{wl}, {wh}]");
    }
    println!(
        "e'({alpha_star}) = {:.3e} (FD tolerance {:.3e})",
        crit.e_prime, crit.fd_tolerance
    );
    Ok(())
}

pub fn bifurcate(cfg: &RunConfig, out: &mut Outputs, theta: Option<f64>, eps: Option<Vec<f64>>) -> CliResult<()> {
    let sec = &cfg.bifurcate;
    let m = cfg.model()?.build()?;
    let opts = cfg.solve_options()?;
    let theta = required(theta, sec.theta, "theta", "bifurcate")?;
    let eps = eps
        .or_else(|| sec.eps_grid.clone())
        .unwrap_or_else(|| log_grid(1e-4, 1e-2, 8));
    let tp = ThetaPoint::new(&m, theta)?;
    let k = kernel_element(&m, theta)?;
    let residual = kernel_residual(&m, &k)?;
    let r = small_mass_scaling(&m, theta, &eps, &opts)?;
    let meta = csv_meta(cfg, &opts, &[("theta", theta.to_string())]);
    out.csv("scaling.csv", &meta, |buf| write_scaling_csv(&r, buf))?;
    let record = json!({
        "theta": theta,
        "rho_bar1": tp.rho_bar1,
        "rho_bar2": tp.rho_bar2,
        "o1": k.o1,
        "o2": k.o2,
        "nondeg_value": k.nondeg_value,
        "kernel_residual": residual,
        "predicted_ratio": k.predicted_ratio(),
        "empirical_ratio": r.empirical_ratio,
        "slope": r.slope,
        "intercept": r.intercept,
        "eps_grid": eps,
        "metadata": metadata(cfg, &opts),
    });
    out.json("kernel.json", &record)?;
    out.real_field("psi1.gpfield", &k.psi1)?;
    out.real_field("psi2.gpfield", &k.psi2)?;
    if cfg.gnuplot {
        out.write("scaling.gp", plot::scaling("scaling.csv").as_bytes())?;
    }
    println!(
        "theta={theta}: o=({:.6}, {:.6}) nondeg={:.6e} residual={residual:.2e}",
        k.o1, k.o2, k.nondeg_value
    );
    println!(
        "slope {:.4}, gamma/sqrt(eps) empirical {:.4} predicted {:.4}",
        r.slope,
        r.empirical_ratio,
        k.predicted_ratio()
    );
    Ok(())
}

pub struct EvolveArgs {
    pub target: Target,
    pub delta: Option<f64>,
    pub kind: Option<PerturbationKind>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub snapshots: Vec<f64>,
}

fn standing_wave(cfg: &RunConfig, t: &Target, sec: (Option<f64>, Option<f64>, Option<f64>), section: &str)
    -> CliResult<(ModelParams, SolitarySolution, SolveOptions)> {
    let m = cfg.model()?.build()?;
    let c = constraint(t, sec, section)?;
    let opts = cfg.solve_options()?;
    let s = maximize(&m, &c, None, &opts)?;
    Ok((m, s, opts))
}

pub fn evolve(cfg: &RunConfig, out: &mut Outputs, a: &EvolveArgs) -> CliResult<()> {
    let sec = &cfg.evolve;
    let (m, s, opts) = standing_wave(cfg, &a.target, (sec.alpha, sec.rho1, sec.rho2), "evolve")?;
    let delta = a.delta.or(sec.delta).unwrap_or(0.0);
    let kind = a.kind.or(sec.kind).unwrap_or(PerturbationKind::RandomBump);
    let dt = positive(a.dt.or(sec.dt).unwrap_or(1e-3), "dt")?;
    let horizon = positive(a.horizon.or(sec.horizon).unwrap_or(10.0), "horizon")?;
    let snaps = if a.snapshots.is_empty() { sec.snapshots.clone() } else { a.snapshots.clone() };
    let initial = perturbed_initial_data(&s, &m, kind, delta, cfg.seed, &opts)?;
    let (samples, states) = evolve_with_snapshots(initial, &s.pair, &m, s.gamma, horizon, dt, &snaps)?;
    let r = StabilityReport::from_samples(kind, cfg.seed, delta, horizon, dt, s.gamma, samples);
    let meta = csv_meta(
        cfg,
        &opts,
        &[
            ("alpha", s.alpha.to_string()),
            ("gamma_star", s.gamma.to_string()),
            ("kind", kind.as_str().to_string()),
            ("delta", delta.to_string()),
            ("dt", dt.to_string()),
        ],
    );
    out.csv("evolve.csv", &meta, |buf| write_time_series(&r.samples, buf))?;
    let mut snap_records = Vec::new();
    for (k, (t, pair)) in states.iter().enumerate() {
        let names = [format!("psi1_snap{k}.gpfield"), format!("psi2_snap{k}.gpfield")];
        out.complex_field(&names[0], &pair.first)?;
        out.complex_field(&names[1], &pair.second)?;
        snap_records.push(json!({"t": t, "files": names}));
    }
    let threshold = m.feasibility_threshold(s.rho1, s.rho2)?;
    let record = json!({
        "standing_wave": solution_record(&s, threshold),
        "gamma_star": s.gamma,
        "kind": kind,
        "delta": delta,
        "dt": dt,
        "horizon": horizon,
        "sup_distance": r.sup_distance,
        "mass_drift": r.mass_drift,
        "energy_drift": r.energy_drift,
        "snapshots": snap_records,
        "metadata": metadata(cfg, &opts),
    });
    out.json("evolve.json", &record)?;
    if cfg.gnuplot {
        let series = [("evolve.csv".to_string(), format!("{} delta={delta}", kind.as_str()))];
        out.write("evolve.gp", plot::distances("evolve.png", &series).as_bytes())?;
    }
    println!(
        "t in [0, {horizon}], dt={dt}: sup distance {:.3e}, mass drift {:.2e}, energy drift {:.2e}",
        r.sup_distance, r.mass_drift, r.energy_drift
    );
    Ok(())
}

pub struct StabilityArgs {
    pub target: Target,
    pub delta: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub seeds: Option<u64>,
    pub kinds: Option<Vec<PerturbationKind>>,
}

pub fn stability(cfg: &RunConfig, out: &mut Outputs, a: &StabilityArgs) -> CliResult<()> {
    let sec = &cfg.stability;
    let (m, s, opts) = standing_wave(cfg, &a.target, (sec.alpha, sec.rho1, sec.rho2), "stability")?;
    let delta = positive(a.delta.or(sec.delta).unwrap_or(1e-3), "delta")?;
    let dt = positive(a.dt.or(sec.dt).unwrap_or(1e-3), "dt")?;
    let horizon = positive(a.horizon.or(sec.horizon).unwrap_or(20.0), "horizon")?;
    let seeds = a.seeds.or(sec.seeds).unwrap_or(3);
    let kinds = a
        .kinds
        .clone()
        .or_else(|| sec.kinds.clone())
        .unwrap_or_else(|| PerturbationKind::ALL.to_vec());
    if seeds == 0 || kinds.is_empty() {
        return Err(CliError::Config("stability needs at least one kind and one seed".into()));
    }
    let runs: Vec<(PerturbationKind, u64)> = kinds
        .iter()
        .flat_map(|&k| (0..seeds).map(move |j| (k, j)))
        .map(|(k, j)| (k, cfg.seed.wrapping_add(j)))
        .collect();
    let reports = stability_batch(&s, &m, delta, horizon, dt, &runs, &opts)?;
    let meta = csv_meta(
        cfg,
        &opts,
        &[
            ("alpha", s.alpha.to_string()),
            ("gamma_star", s.gamma.to_string()),
            ("delta", delta.to_string()),
            ("dt", dt.to_string()),
            ("horizon", horizon.to_string()),
        ],
    );
    let mut series = Vec::new();
    for r in &reports {
        let name = format!("stability_{}_{}.csv", r.kind.as_str(), r.seed);
        out.csv(&name, &meta, |buf| write_time_series(&r.samples, buf))?;
        series.push((name, format!("{} seed {}", r.kind.as_str(), r.seed)));
    }
    out.csv("stability.csv", &meta, |buf| {
        writeln!(buf, "kind,seed,delta,sup_distance,mass_drift,energy_drift")?;
        for r in &reports {
            writeln!(
                buf,
                "{},{},{:e},{:e},{:e},{:e}",
                r.kind.as_str(),
                r.seed,
                r.delta,
                r.sup_distance,
                r.mass_drift,
                r.energy_drift
            )?;
        }
        Ok(())
    })?;
    let sup = reports.iter().map(|r| r.sup_distance).fold(0.0, f64::max);
    let summary: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({
                "kind": r.kind,
                "seed": r.seed,
                "sup_distance": r.sup_distance,
                "mass_drift": r.mass_drift,
                "energy_drift": r.energy_drift,
            })
        })
        .collect();
    let threshold = m.feasibility_threshold(s.rho1, s.rho2)?;
    out.json(
        "stability.json",
        &json!({
            "standing_wave": solution_record(&s, threshold),
            "gamma_star": s.gamma,
            "delta": delta,
            "dt": dt,
            "horizon": horizon,
            "max_sup_distance": sup,
            "runs": summary,
            "metadata": metadata(cfg, &opts),
        }),
    )?;
    if cfg.gnuplot {
        out.write("stability.gp", plot::distances("stability.png", &series).as_bytes())?;
    }
    for r in &reports {
        println!(
            "{:<15} seed {:>3}: sup distance {:.3e}  mass drift {:.1e}  energy drift {:.1e}",
            r.kind.as_str(),
            r.seed,
            r.sup_distance,
            r.mass_drift,
            r.energy_drift
        );
    }
    println!("max sup distance {sup:.3e} (delta {delta:e})");
    Ok(())
}

pub fn acceptance(cfg: &RunConfig, out: &mut Outputs, halved: bool, only: Option<Vec<usize>>) -> CliResult<()> {
    let mut suite = cfg.suite()?;
    if halved {
        suite = suite.halved();
    }
    let ids: Vec<usize> = match only {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|i| !CRITERIA.iter().any(|c| c.0 == **i)) {
                return Err(CliError::Config(format!("no acceptance criterion {bad}")));
            }
            ids
        }
        None => CRITERIA.iter().map(|c| c.0).collect(),
    };
    println!("acceptance suite: n_1d={} n_2d={} seed={}", suite.n_1d, suite.n_2d, suite.seed);
    let mut results: Vec<CriterionResult> = Vec::with_capacity(ids.len() + 1);
    for id in ids {
        let r = run_criterion(id, &suite)?;
        println!("{}", r.line());
        results.push(r);
    }
    let gate = degenerate_gate(&suite);
    println!("{}", gate.line());
    results.push(gate);
    let failed = results.iter().filter(|r| !r.pass).count();
    let total: f64 = results.iter().map(|r| r.seconds).sum();
    println!(
        "{} of {} passed in {total:.1}s",
        results.len() - failed,
        results.len()
    );
    out.json(
        "acceptance.json",
        &json!({
            "suite": suite,
            "results": results,
            "all_pass": failed == 0,
        }),
    )?;
    if failed > 0 {
        return Err(CliError::AcceptanceFailed(failed));
    }
    Ok(())
}
