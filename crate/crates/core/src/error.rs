use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("label alignment: {0}")]
    LabelAlignment(String),
    #[error("cell {0} is not an interior cell")]
    NotInterior(usize),
    #[error("infeasible ambiguity set at state {state}, action {action}: sum(p_lo) = {sum_lo}, sum(p_hi) = {sum_hi}")]
    InfeasibleAmbiguitySet {
        state: usize,
        action: usize,
        sum_lo: f64,
        sum_hi: f64,
    },
    #[error("value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("quadratic program is infeasible")]
    Infeasible,
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
