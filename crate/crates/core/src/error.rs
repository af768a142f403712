use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("invalid trade-off curve: {0}")]
    InvalidCurve(String),

    #[error("{what} did not converge within {limit} steps")]
    NonConvergence { what: &'static str, limit: usize },

    /// The requested delta is already met at epsilon = 0.
    #[error("delta target already satisfied at epsilon = 0 (delta(0) = {delta_at_zero:e})")]
    AlreadySatisfied { delta_at_zero: f64 },

    /// No finite epsilon reaches the requested delta.
    #[error("delta target {target:e} is below the attainable floor {floor:e}")]
    Unattainable { target: f64, floor: f64 },

    #[error("divergence is infinite: {0}")]
    Divergent(String),

    #[error("{what} = {value} exceeds the cap {cap}")]
    CapExceeded {
        what: &'static str,
        value: u64,
        cap: u64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_probability(name: &'static str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(name, format!("{x} is not in [0, 1]")))
    }
}
