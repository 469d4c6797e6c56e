//! Run configuration: TOML, or JSON when the file is not TOML.

use std::path::{Path, PathBuf};

use gp_mass::acceptance::SuiteConfig;
use gp_mass::evolve::PerturbationKind;
use gp_mass::grid::Grid;
use gp_mass::maximizer::SolveOptions;
use gp_mass::model::{ModelParams, PotentialSpec, ScatteringParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Grid, potentials and scattering lengths. Every field is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    #[serde(rename = "L")]
    pub extent: f64,
    pub n: usize,
    pub potential1: PotentialSpec,
    pub potential2: PotentialSpec,
    pub mu1: f64,
    pub mu2: f64,
    pub beta: f64,
}

impl ModelConfig {
    pub fn build(&self) -> CliResult<ModelParams> {
        let grid = Grid::new(self.dim, self.n, self.extent)?;
        let s = ScatteringParams::new(self.mu1, self.mu2, self.beta);
        Ok(ModelParams::from_specs(grid, &self.potential1, &self.potential2, s)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaximizeSection {
    pub alpha: Option<f64>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub starts: Option<usize>,
    /// Relative size of the random perturbation of each start.
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub alpha_min: Option<f64>,
    pub alpha_max: Option<f64>,
    pub points: Option<usize>,
    pub fd_step: Option<f64>,
    pub cold_check: Option<bool>,
    /// Reference point of `e(α)`; the grid midpoint when absent.
    pub alpha_star: Option<f64>,
    /// Verdict margin on `γ'`; 10× the truncation estimate when absent.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BifurcateSection {
    pub theta: Option<f64>,
    pub eps_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveSection {
    pub alpha: Option<f64>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub delta: Option<f64>,
    pub kind: Option<PerturbationKind>,
    /// Times at which the state is dumped.
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub alpha: Option<f64>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub delta: Option<f64>,
    pub kinds: Option<Vec<PerturbationKind>>,
    /// Seeds per kind, counted up from the run seed.
    pub seeds: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceSection {
    pub n_1d: Option<usize>,
    pub extent_1d: Option<f64>,
    pub n_2d: Option<usize>,
    pub extent_2d: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub excess: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelConfig>,
    pub solver: SolveOptions,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Also write gnuplot scripts next to the CSV tables.
    pub gnuplot: bool,
    pub maximize: MaximizeSection,
    pub sweep: SweepSection,
    pub bifurcate: BifurcateSection,
    pub evolve: EvolveSection,
    pub stability: StabilitySection,
    pub acceptance: AcceptanceSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let json_ext = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if json_ext {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            match toml::from_str(&text) {
                Ok(c) => c,
                Err(te) => serde_json::from_str(&text).map_err(|je| {
                    CliError::Config(format!(
                        "{} is neither TOML ({}) nor JSON ({je})",
                        path.display(),
                        te.message()
                    ))
                })?,
            }
        };
        Ok(cfg)
    }

    pub fn model(&self) -> CliResult<&ModelConfig> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [model] block".into()))
    }

    /// Tolerances must be positive; the seed lives at top level.
    pub fn solve_options(&self) -> CliResult<SolveOptions> {
        let s = self.solver;
        for (name, v) in [("gtol", s.gtol), ("ctol", s.ctol), ("rtol", s.rtol), ("armijo", s.armijo)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("solver.{name} must be positive, got {v}")));
            }
        }
        if s.max_iter == 0 {
            return Err(CliError::Config("solver.max_iter must be positive".into()));
        }
        Ok(SolveOptions { seed: self.seed, ..s })
    }

    pub fn suite(&self) -> CliResult<SuiteConfig> {
        let d = SuiteConfig::default();
        let a = &self.acceptance;
        Ok(SuiteConfig {
            n_1d: a.n_1d.unwrap_or(d.n_1d),
            extent_1d: a.extent_1d.unwrap_or(d.extent_1d),
            n_2d: a.n_2d.unwrap_or(d.n_2d),
            extent_2d: a.extent_2d.unwrap_or(d.extent_2d),
            solve: self.solve_options()?,
            seed: self.seed,
            dt: a.dt.unwrap_or(d.dt),
            horizon: a.horizon.unwrap_or(d.horizon),
            steps: a.steps.unwrap_or(d.steps),
            excess: a.excess.unwrap_or(d.excess),
        })
    }
}

/// A flag value, else the config value, else a configuration error naming
/// both.
pub fn required<T: Copy>(flag: Option<T>, config: Option<T>, name: &str, section: &str) -> CliResult<T> {
    flag.or(config).ok_or_else(|| {
        CliError::Config(format!(
            "missing {name}: pass --{} or set {name} in [{section}]",
            name.replace('_', "-")
        ))
    })
}

pub fn positive(v: f64, name: &str) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOML: &str = r#"
seed = 7
[model]
dim = 1
L = 8.0
n = 127
potential1 = { kind = "harmonic" }
potential2 = { kind = "anisotropic-harmonic", coeffs = [2.0] }
mu1 = -1.0
mu2 = -1.0
beta = 0.5
[solver]
gtol = 1e-9
[maximize]
alpha = 2.5
"#;

    fn write(name: &str, text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn toml_and_json_agree() {
        let (_d1, p) = write("a.toml", TOML);
        let a = RunConfig::load(&p).unwrap();
        assert_eq!(a.seed, 7);
        assert_eq!(a.solver.gtol, 1e-9);
        assert_eq!(a.solver.ctol, SolveOptions::default().ctol);
        assert_eq!(a.maximize.alpha, Some(2.5));
        assert_eq!(a.solve_options().unwrap().seed, 7);
        let json = serde_json::to_string(&a).unwrap();
        let (_d2, q) = write("a.json", &json);
        assert_eq!(RunConfig::load(&q).unwrap(), a);
        // JSON content under a non-JSON name is still accepted.
        let (_d3, r) = write("a.cfg", &json);
        assert_eq!(RunConfig::load(&r).unwrap(), a);
        a.model().unwrap().build().unwrap();
    }

    #[test]
    fn scattering_lengths_have_no_defaults() {
        let (_d, p) = write("b.toml", &TOML.replace("beta = 0.5\n", ""));
        assert!(matches!(RunConfig::load(&p), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_and_bad_tolerances_are_rejected() {
        let (_d, p) = write("c.toml", &TOML.replace("gtol = 1e-9", "gtoll = 1e-9"));
        assert!(RunConfig::load(&p).is_err());
        let (_d, p) = write("d.toml", &TOML.replace("gtol = 1e-9", "gtol = -1.0"));
        assert!(RunConfig::load(&p).unwrap().solve_options().is_err());
    }

    #[test]
    fn flags_override_config() {
        assert_eq!(required(Some(1.0), Some(2.0), "alpha", "maximize").unwrap(), 1.0);
        assert_eq!(required(None, Some(2.0), "alpha", "maximize").unwrap(), 2.0);
        let e = required::<f64>(None, None, "alpha_min", "sweep").unwrap_err();
        assert!(e.to_string().contains("--alpha-min"));
    }
}
