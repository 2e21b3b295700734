use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("kernel matrix not positive definite after jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("posterior variance {value:e} is negative beyond round-off")]
    NegativeVariance { value: f64 },

    #[error("sampler rejected every proposal in chain {chain}; reduce the initial step size")]
    AllRejected { chain: usize },

    #[error("Hessian of the log posterior is not negative definite (largest eigenvalue {max_eigenvalue:e}); use an empirical-Bayes prior instead")]
    NotNegativeDefinite { max_eigenvalue: f64 },

    #[error("{have} samples cannot certify mass at delta = {delta}; need at least {need}")]
    TooFewSamples { have: usize, need: usize, delta: f64 },

    #[error("g_{index}(x) = {value:e} is too close to zero")]
    SingularGain { index: usize, value: f64 },

    #[error("simulation diverged at t = {time} (|x| = {norm:e})")]
    Diverged { time: f64, norm: f64 },

    #[error("no feasible interval on the grid")]
    Infeasible,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. }
                | Error::NegativeVariance { .. }
                | Error::AllRejected { .. }
                | Error::NotNegativeDefinite { .. }
                | Error::SingularGain { .. }
                | Error::Diverged { .. }
                | Error::Infeasible
        )
    }
}
