use thiserror::Error;

/// Errors produced by the modelling, filtering, and optimization layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite derivative {what}[{row},{col}] at time step {t}")]
    NonFiniteDerivative {
        what: &'static str,
        t: usize,
        row: usize,
        col: usize,
    },

    #[error("{what} is not positive definite at time step {t}")]
    Singular { what: &'static str, t: usize },

    #[error("covariance {what} is asymmetric by {asymmetry:e}")]
    Asymmetric { what: String, asymmetry: f64 },

    #[error("regularized Q_uu is not positive definite at time step {t}")]
    NotPositiveDefinite { t: usize },

    #[error("design parameter {index} = {value} outside bounds [{lo}, {hi}]")]
    DesignOutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("infeasible iterate: expected cost {cost} is not below the bound {bound}")]
    Infeasible { cost: f64, bound: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
