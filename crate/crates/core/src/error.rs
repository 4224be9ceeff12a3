use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("unphysical rates: {0}")]
    UnphysicalRates(String),

    #[error("singular parameter combination: {0}")]
    Singular(String),

    #[error("fit did not converge after {iterations} iterations (rms residual {residual:.3e})")]
    Fit { residual: f64, iterations: usize },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("spectrum convention violated: {0}")]
    Convention(String),

    #[error("Fock truncation too small: dim {fock_dim} for n = {nbar:.3} (need at least {required})")]
    Truncation {
        fock_dim: usize,
        nbar: f64,
        required: usize,
    },

    #[error("integration failed at t = {t:.3e} s: {reason}; try dt <= {dt_hint:.3e} s")]
    Integration { t: f64, reason: String, dt_hint: f64 },

    #[error("steady state is not unique (pivot ratio {pivot_ratio:.3e})")]
    DegenerateNullSpace { pivot_ratio: f64 },

    #[error("invalid density operator: {0}")]
    Density(String),

    #[error("outside validity window: {0}")]
    OutOfValidity(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Rejects non-finite or negative values.
pub(crate) fn check_nonneg(name: &'static str, x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::param(name, format!("must be finite and >= 0, got {x}")));
    }
    Ok(())
}

/// Rejects non-finite or non-positive values.
pub(crate) fn check_pos(name: &'static str, x: f64) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::param(name, format!("must be finite and > 0, got {x}")));
    }
    Ok(())
}
