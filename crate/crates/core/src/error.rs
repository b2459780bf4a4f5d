use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("x = {x} lies outside [{a}, {b}]")]
    Domain { x: f64, a: f64, b: f64 },
    #[error("derivative of order {k} requested but only {order} are available")]
    Capability { k: usize, order: usize },
    #[error("empty interval [{0}, {1}]")]
    EmptyInterval(f64, f64),
    #[error("non-finite evaluation at x = {0}")]
    Evaluation(f64),
    #[error("malformed certificate: {0}")]
    MalformedCertificate(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("singular configuration: {0}")]
    Singular(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("quadrature needs {needed} nodes but the budget is {budget}")]
    Resource { needed: usize, budget: usize },
    #[error("packet window too small: reconstruction residual {0:.3e}")]
    Truncation(f64),
    #[error("packet with zero coefficient has no normalised profile")]
    UndefinedPacket,
    #[error("unknown function key `{0}`")]
    UnknownKey(String),
}
