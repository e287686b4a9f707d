use thiserror::Error;

pub type Result<T, E = EmuError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmuError {
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),

    #[error("inertia tensor is not symmetric positive definite: {0}")]
    NonSpdInertia(String),

    #[error("rotation matrix is not orthonormal with det +1 (deviation {0:e})")]
    InvalidRotation(f64),

    /// Assumption of a non-singular inertia difference between flight and test
    /// spacecraft is violated.
    #[error("inertia difference is singular: {what} = {value:e}")]
    SingularDeltaInertia { what: &'static str, value: f64 },

    #[error("Jacobian is near-singular (condition number {condition:e} exceeds {limit:e})")]
    NearSingularJacobian { condition: f64, limit: f64 },

    #[error("mass matrix is singular or not positive definite: {0}")]
    SingularMassMatrix(String),

    #[error("flexible inertia difference is singular (smallest |eigenvalue| {0:e})")]
    SingularFlexDelta(f64),

    #[error("regression matrix is rank deficient (rank {rank} < {cols}); null direction {null_direction:?}")]
    RankDeficient {
        rank: usize,
        cols: usize,
        null_direction: Vec<f64>,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("centre-of-mass offset is zero; rotational index undefined")]
    ZeroCmOffset,

    #[error("trajectory does not decay (fitted slope {slope:e})")]
    NonDecayingError { slope: f64 },

    #[error("closed-loop acceleration matrix is singular (condition number {0:e})")]
    SingularClosedLoopMatrix(f64),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl EmuError {
    /// Stable machine-readable identifier, used by the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            EmuError::NonPositiveMass(_) => "non-positive-mass",
            EmuError::NonSpdInertia(_) => "non-spd-inertia",
            EmuError::InvalidRotation(_) => "invalid-rotation",
            EmuError::SingularDeltaInertia { .. } => "singular-delta-inertia",
            EmuError::NearSingularJacobian { .. } => "near-singular-jacobian",
            EmuError::SingularMassMatrix(_) => "singular-mass-matrix",
            EmuError::SingularFlexDelta(_) => "singular-flex-delta",
            EmuError::RankDeficient { .. } => "rank-deficient",
            EmuError::EmptyDataset => "empty-dataset",
            EmuError::ZeroCmOffset => "zero-cm-offset",
            EmuError::NonDecayingError { .. } => "non-decaying-error",
            EmuError::SingularClosedLoopMatrix(_) => "singular-closed-loop-matrix",
            EmuError::InvalidScenario(_) => "invalid-scenario",
            EmuError::Io(_) => "io",
            EmuError::Parse(_) => "parse",
        }
    }

    /// Process exit status: 1 for input/validation problems, 2 for failures
    /// that only show up while running (singularities, divergence).
    pub fn exit_code(&self) -> i32 {
        match self {
            EmuError::NearSingularJacobian { .. }
            | EmuError::SingularClosedLoopMatrix(_)
            | EmuError::SingularMassMatrix(_)
            | EmuError::NonDecayingError { .. } => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for EmuError {
    fn from(e: std::io::Error) -> Self {
        EmuError::Io(e.to_string())
    }
}
