use std::fmt;

use thiserror::Error;

/// Which transition matrix a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawMatrix {
    Lambda,
    Mu,
}

impl fmt::Display for LawMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LawMatrix::Lambda => f.write_str("lambda"),
            LawMatrix::Mu => f.write_str("mu"),
        }
    }
}

/// A single broken model invariant. Mode and row indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDimension {
        what: &'static str,
    },
    ModeCount {
        expected: usize,
        found: usize,
        what: &'static str,
    },
    Shape {
        what: &'static str,
        mode: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    NonFinite {
        what: &'static str,
        mode: usize,
    },
    RowSum {
        matrix: LawMatrix,
        row: usize,
        sum: f64,
    },
    NegativeProbability {
        matrix: LawMatrix,
        row: usize,
        col: usize,
        value: f64,
    },
    ProbabilityAboveOne {
        matrix: LawMatrix,
        row: usize,
        col: usize,
        value: f64,
    },
    ZeroConstraintRow {
        row: usize,
    },
    RegionShape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDimension { what } => write!(f, "{what} must be at least 1"),
            Violation::ModeCount {
                expected,
                found,
                what,
            } => {
                write!(f, "{what}: expected {expected} modes, found {found}")
            }
            Violation::Shape {
                what,
                mode,
                expected,
                found,
            } => write!(
                f,
                "{what}[{mode}] has shape {}x{}, expected {}x{}",
                found.0, found.1, expected.0, expected.1
            ),
            Violation::NonFinite { what, mode } => {
                write!(f, "{what}[{mode}] has a non-finite entry")
            }
            Violation::RowSum { matrix, row, sum } => {
                write!(f, "{matrix} row {row} sums to {sum}, expected 1")
            }
            Violation::NegativeProbability {
                matrix,
                row,
                col,
                value,
            } => {
                write!(f, "{matrix}[{row},{col}] = {value} is negative")
            }
            Violation::ProbabilityAboveOne {
                matrix,
                row,
                col,
                value,
            } => {
                write!(f, "{matrix}[{row},{col}] = {value} exceeds 1")
            }
            Violation::ZeroConstraintRow { row } => write!(f, "G row {row} is identically zero"),
            Violation::RegionShape {
                what,
                expected,
                found,
            } => {
                write!(f, "{what} has length {found}, expected {expected}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", join(.0))]
    InvalidModel(Vec<Violation>),

    #[error("probability {p} outside the admissible domain {domain}")]
    Domain { p: f64, domain: &'static str },

    #[error("mode {mode} out of range 1..={modes}")]
    ModeOutOfRange { mode: usize, modes: usize },

    #[error("X of mode {mode} is singular (min |eigenvalue| {min_abs_eig:e})")]
    SingularMatrix { mode: usize, min_abs_eig: f64 },

    #[error("{what} of mode {mode} is not symmetric positive definite")]
    NotPositiveDefinite { what: &'static str, mode: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("QP solver did not reach an optimal point: {0}")]
    Qp(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
