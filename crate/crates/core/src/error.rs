use thiserror::Error;

/// Errors produced while evaluating, transporting or pairing multipoles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op} is undefined at {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("point {point:?} lies outside the domain of chart `{chart}`: {rule}")]
    OutsideChart {
        chart: String,
        rule: String,
        point: [f64; 4],
    },

    #[error("Jacobian of chart `{chart}` is singular (|det| = {det:e}) at {point:?}")]
    SingularJacobian {
        chart: String,
        det: f64,
        point: [f64; 4],
    },

    #[error("parameter {tau} lies outside the interval [{start}, {end}]")]
    OutsideInterval { tau: f64, start: f64, end: f64 },

    #[error("invalid interval [{start}, {end}]")]
    BadInterval { start: f64, end: f64 },

    #[error("worldline is not regular at tau = {tau} (velocity vanishes)")]
    IrregularWorldline { tau: f64 },

    #[error("reparametrization is not orientation preserving at {tau_hat} (rate {rate})")]
    BadReparametrization { tau_hat: f64, rate: f64 },

    #[error(
        "quadrature did not converge: error estimate {estimate:e} on [{start}, {end}] exceeds tolerance"
    )]
    Quadrature { start: f64, end: f64, estimate: f64 },

    #[error("symmetry violated at indices {indices:?}, tau = {tau}: residual {residual:e}")]
    Symmetry {
        indices: Vec<usize>,
        tau: f64,
        residual: f64,
    },

    #[error("components have no derivative information")]
    NotDifferentiable,

    #[error("worldline is not in adapted form C(tau) = (tau, 0, 0, 0)")]
    NotAdapted,

    #[error("unknown chart `{0}`")]
    UnknownChart(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("test form support is degenerate: half-width {0} along axis {1}")]
    DegenerateSupport(f64, usize),

    #[error("potential vanishes along the requested ray")]
    VanishingPotential,

    #[error("charge probe is degenerate: lambda takes the same value at both ends")]
    DegenerateProbe,
}

pub type Result<T> = std::result::Result<T, Error>;
