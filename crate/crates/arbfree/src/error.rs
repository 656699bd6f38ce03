//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the library.
///
/// Variants are grouped by subsystem; the convention is that geometry and
/// linear-programming failures carry enough context to identify the offending
/// constraint or dimension.
#[derive(Debug, Error)]
pub enum Error {
    // -- polytope geometry --
    #[error("polytope is empty: no point satisfies V y >= b")]
    EmptyPolytope,
    #[error("constraint row {row} has near-zero norm {norm:e}")]
    ZeroRow { row: usize, norm: f64 },
    #[error("constraint index {index} out of range (R = {nrows})")]
    IndexOutOfRange { index: usize, nrows: usize },
    #[error("LP solver failed: {0}")]
    LpFailure(String),
    #[error("polytope is unbounded in coordinate {coord}")]
    Unbounded { coord: usize },
    #[error("vertex enumeration supports dimension <= {max}, got {dim}")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("rho* = {rho_star} is not positive")]
    InvalidRhoStar { rho_star: f64 },
    #[error("shrunken polytope {{V y >= b + rho* 1}} is empty for rho* = {rho_star}")]
    RhoStarTooLarge { rho_star: f64 },
    #[error("boundary {row} passes through no vertex of the polytope")]
    DegenerateBoundary { row: usize },

    // -- lattice / constraint system --
    #[error("invalid option lattice: {0}")]
    InvalidLattice(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    // -- surface transforms --
    #[error("discount factor must be positive, got {0}")]
    InvalidDiscount(f64),
    #[error("forward price must be positive, got {0}")]
    NonpositiveForward(f64),
    #[error("price {price} outside the no-arbitrage band ({lo}, {hi}) at tau={tau}, m={m}")]
    OutOfBounds {
        price: f64,
        lo: f64,
        hi: f64,
        tau: f64,
        m: f64,
    },
    #[error("interpolation system is singular: {0}")]
    SingularSystem(String),
    #[error("no lattice expiry within {tol} of target tau {target}")]
    NoExpiryNearTarget { target: f64, tol: f64 },

    // -- factor decoding --
    #[error("requested {requested} components but numerical rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("factor column {col} has zero min-max range")]
    DegenerateColumn { col: usize },
    #[error("MAPE undefined: price at sample {row}, node {col} is not strictly positive")]
    ZeroPrice { row: usize, col: usize },
    #[error("PDA undefined: centered z-data has zero variance")]
    ZeroVariance,

    // -- neural network --
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("head expects {expected} outputs for d = {dim}, got {got}")]
    LengthMismatch {
        expected: usize,
        got: usize,
        dim: usize,
    },
    #[error("loss is not finite at epoch {epoch}: {value}")]
    NonFiniteLoss { epoch: usize, value: f64 },

    // -- constrained SDE --
    #[error("state is outside the polytope (min distance {min_dist:e})")]
    OutsidePolytope { min_dist: f64 },
    #[error("drift correction degenerate on boundary {row}: v_k'(zeta_k - y) = {denom:e} <= 0")]
    DegenerateCorrection { row: usize, denom: f64 },
    #[error("diffusion covariance singular at path step {step}")]
    SingularCovariance { step: usize },
    #[error("path point {step} lies on the polytope boundary (distance {dist:e})")]
    BoundaryPoint { step: usize, dist: f64 },
    #[error("regression ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("training set is empty after truncation")]
    EmptyTrainingSet,
    #[error("diffusion matrix singular at the queried state")]
    SingularDiffusion,

    // -- market simulation --
    #[error("semi-analytic pricing requires leverage identically 1")]
    LeverageNotIdentity,
    #[error("characteristic-function quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("tamed Euler stuck at boundary: step halvings exhausted {count} times in a row")]
    StuckAtBoundary { count: usize },
    #[error("regression-mode VIX requires a fitted (beta0, beta) model")]
    MissingFit,
    #[error("empty sample set: {0}")]
    Empty(String),

    // -- secondary factors --
    #[error("fitted AR(1) coefficient {a} outside (-1, 1); OU model unstable at dt = {dt}")]
    UnstableAr { a: f64, dt: f64 },
    #[error("no feasible completion of the secondary factors (joint repair also failed)")]
    RepairInfeasible,
}

pub type Result<T> = std::result::Result<T, Error>;
