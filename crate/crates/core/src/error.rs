use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("position is {distance:e} m from a wire filament (minimum 1e-9 m)")]
    Singular { distance: f64 },
    #[error("chip field does not change sign between {lo:e} m and {hi:e} m")]
    NoRoot { lo: f64, hi: f64 },
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("no spectral peak above 3x the noise floor")]
    DegeneratePeriod,
    #[error("only {0:.2} oscillations inside the envelope, need at least 3")]
    TooFewOscillations(f64),
    #[error("need at least {need} usable points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("samples must span at least 2π in phase")]
    PhaseSpan,
    #[error("parameters not identifiable: {0}")]
    Unidentifiable(&'static str),
    #[error("singular normal equations")]
    Singular,
    #[error("patterns do not share a grid")]
    GridMismatch,
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("scale factor {value:e} on axis {axis} left (1e-4, 1e4) at t = {time:e} s")]
    Unstable { axis: usize, value: f64, time: f64 },
    #[error("time step {0:e} s exceeds 1e-7 s during a pulse")]
    StepTooLarge(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("potential has {got} samples, grid has {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("time step must be nonzero and finite")]
    TimeStep,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse { path: String, line: usize, column: usize, msg: String },
    #[error("{label}: field `{field}`: {msg}")]
    Invalid { label: String, field: String, msg: String },
}

/// Any failure while running a sequence or a report.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("grid of {cells} cells exceeds the limit of {limit}")]
    GridTooLarge { cells: usize, limit: usize },
}
