use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] gp_mass::Error),

    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },

    #[error("{0} acceptance check(s) failed")]
    AcceptanceFailed(usize),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 0 success, 2 configuration, 3 no convergence, 4 degenerate regime,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use gp_mass::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                E::InvalidGrid(_)
                | E::InvalidParameter(_)
                | E::InfeasibleConstraint { .. }
                | E::OutOfRange { .. }
                | E::ThetaDegenerate(_)
                | E::Parse(_)
                | E::MismatchedGrid => 2,
                E::NoConvergence { .. } => 3,
                E::DegenerateRegime { .. } => 4,
                _ => 1,
            },
            CliError::Output { .. } | CliError::AcceptanceFailed(_) => 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let core = |e: gp_mass::Error| CliError::Core(e).exit_code();
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(core(gp_mass::Error::InvalidParameter("x".into())), 2);
        assert_eq!(
            core(gp_mass::Error::NoConvergence {
                what: "x".into(),
                iterations: 1,
                residual: 1.0
            }),
            3
        );
        assert_eq!(
            core(gp_mass::Error::DegenerateRegime {
                mu1: 1.0,
                mu2: 1.0,
                beta: -1.0,
                clause: "x".into()
            }),
            4
        );
        assert_eq!(core(gp_mass::Error::IntegratorFault("x".into())), 1);
        assert_eq!(CliError::AcceptanceFailed(1).exit_code(), 1);
    }
}
