use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("total mass is {0}, expected 1")]
    MassNotNormalized(f64),

    #[error("velocity field undefined at support point x = {0}")]
    VelocityUndefined(f64),

    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },

    #[error("unknown {registry} `{name}` (available: {available})")]
    UnknownStrategy {
        registry: &'static str,
        name: String,
        available: String,
    },

    #[error("mass label {0} outside (-1/2, 1/2]")]
    LabelOutOfRange(f64),

    #[error("mass label {0} is not a breakpoint of the discretization grid")]
    LabelNotSnapped(f64),

    #[error("supercritical component ({lo}, {hi}) spans fewer than 2 grid cells; refine N")]
    RefineN { lo: f64, hi: f64 },

    #[error("flux is not convex near the supercritical boundary points {witnesses:?}")]
    A4Violated { witnesses: Vec<f64> },

    #[error("region and tolerance inconsistency: {0}")]
    RegionInconsistent(String),

    #[error("pair gap {gap:e} below evaluation floor {floor:e} for a singular protocol")]
    GapBelowFloor { gap: f64, floor: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("substep limit {0} exceeded")]
    TooManySteps(usize),

    #[error("ordering violated between groups {left} and {right} at t = {t}")]
    OrderingViolation { t: f64, left: usize, right: usize },

    #[error("time {t} outside trajectory span [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
