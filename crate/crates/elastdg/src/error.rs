use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("refinement level must be at least 1, got {0}")]
    InvalidLevel(u32),
    #[error("refinement level {0} exceeds the supported maximum of 12")]
    LevelTooLarge(u32),
    #[error("edge index {index} out of range ({count} edges)")]
    EdgeOutOfRange { index: usize, count: usize },
    #[error("a boundary side cannot be tagged interior")]
    InteriorBoundaryTag,
}

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature exactness {0} exceeds the supported maximum of {1}")]
    Unsupported(usize, usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum MaterialError {
    #[error("Poisson ratio {0} outside (0, 1/2)")]
    PoissonRatio(f64),
    #[error("Young's modulus must be positive, got {0}")]
    YoungsModulus(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum CalculusError {
    #[error("singular edge mass matrix on edge {0}")]
    SingularEdgeMass(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("spaces were built for degrees {spaces:?} but the configuration asks for {config:?}")]
    DegreeMismatch {
        spaces: [Option<u32>; 4],
        config: [Option<u32>; 4],
    },
    #[error("cannot eliminate {field}: its closure row is a hard constraint")]
    HardConstraint { field: &'static str },
    #[error("limit precondition violated: {0}")]
    Inclusion(String),
    #[error("formulation {0} is not handled by this assembler")]
    WrongFormulation(&'static str),
    #[error(transparent)]
    Calculus(#[from] CalculusError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("singular system: pivot {min_pivot:e} below floor {floor:e} at rows {rows:?}")]
    Singular {
        min_pivot: f64,
        floor: f64,
        rows: Vec<usize>,
    },
    #[error("condensed matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("singular local problem on element {0}")]
    SingularLocal(usize),
    #[error("hybridization precondition violated: {0}")]
    Precondition(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("empty or decreasing level range {0}..{1}")]
    LevelRange(u32, u32),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
