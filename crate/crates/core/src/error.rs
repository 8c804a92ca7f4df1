use thiserror::Error;

/// Errors raised by the model evaluators and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("divergence at step {step}: |x_{index}| = {value:e} exceeds bound {bound:e}")]
    Divergence {
        step: usize,
        index: usize,
        value: f64,
        bound: f64,
    },

    #[error("CFL violation{}: face {face} has courant number {courant:.4} > {limit}", fmt_step(.step))]
    Cfl {
        step: Option<usize>,
        face: usize,
        courant: f64,
        limit: f64,
    },

    #[error("numerical failure{}: {message}", fmt_step(.step))]
    Numerical { step: Option<usize>, message: String },
}

fn fmt_step(step: &Option<usize>) -> String {
    match step {
        Some(s) => format!(" at step {s}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a time-step index to step-local errors raised deeper in a solve.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::Cfl {
                face,
                courant,
                limit,
                ..
            } => Error::Cfl {
                step: Some(step),
                face,
                courant,
                limit,
            },
            Error::Numerical { message, .. } => Error::Numerical {
                step: Some(step),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
