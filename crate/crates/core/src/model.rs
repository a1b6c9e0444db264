//! The plant: per-mode linear dynamics, the state-dependent transition law and
//! the polyhedral region that selects between its two regimes.
//!
//! Modes are 1-based everywhere in the public API.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, LawMatrix, Result, Violation};

/// Row-sum tolerance for the transition matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// The two cells of the state-space partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    /// Inside the polyhedron `G x <= H(k)` (boundary included).
    C1,
    /// Everywhere else.
    C2,
}

/// Transition probabilities: `lambda` applies in `C1`, `mu` in `C2`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLaw {
    pub lambda: DMatrix<f64>,
    pub mu: DMatrix<f64>,
}

impl TransitionLaw {
    pub fn matrix(&self, region: Region) -> &DMatrix<f64> {
        match region {
            Region::C1 => &self.lambda,
            Region::C2 => &self.mu,
        }
    }
}

/// Polyhedron `G x <= H0 + k * Hslope`, one row per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyhedronSchedule {
    pub g: DMatrix<f64>,
    pub h0: DVector<f64>,
    pub h_slope: DVector<f64>,
}

impl PolyhedronSchedule {
    pub fn new(g: DMatrix<f64>, h0: DVector<f64>, h_slope: DVector<f64>) -> Self {
        Self { g, h0, h_slope }
    }

    /// A region with no rows; every state lies in `C1`.
    pub fn unconstrained(n: usize) -> Self {
        Self {
            g: DMatrix::zeros(0, n),
            h0: DVector::zeros(0),
            h_slope: DVector::zeros(0),
        }
    }

    pub fn rows(&self) -> usize {
        self.g.nrows()
    }

    /// Right-hand side at step `k`.
    pub fn h(&self, k: usize) -> DVector<f64> {
        &self.h0 + &self.h_slope * k as f64
    }

    /// `H_j(k) - G_j x` for every row; non-negative entries are satisfied rows.
    pub fn margins(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        self.h(k) - &self.g * x
    }

    pub fn contains(&self, x: &DVector<f64>, k: usize) -> bool {
        self.margins(x, k).iter().all(|&m| m >= 0.0)
    }

    fn violations(&self, n: usize, out: &mut Vec<Violation>) {
        let r = self.g.nrows();
        if self.g.ncols() != n {
            out.push(Violation::RegionShape {
                what: "G columns",
                expected: n,
                found: self.g.ncols(),
            });
        }
        if self.h0.len() != r {
            out.push(Violation::RegionShape {
                what: "H0",
                expected: r,
                found: self.h0.len(),
            });
        }
        if self.h_slope.len() != r {
            out.push(Violation::RegionShape {
                what: "Hslope",
                expected: r,
                found: self.h_slope.len(),
            });
        }
        for j in 0..r {
            if self.g.row(j).iter().all(|&v| v == 0.0) {
                out.push(Violation::ZeroConstraintRow { row: j + 1 });
            }
        }
        let finite = self
            .g
            .iter()
            .chain(self.h0.iter())
            .chain(self.h_slope.iter())
            .all(|v| v.is_finite());
        if !finite {
            out.push(Violation::NonFinite {
                what: "region",
                mode: 0,
            });
        }
    }
}

/// Discrete-time state-dependent jump linear system
/// `x_{k+1} = A_θ x_k + B_θ u_k + w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdjlsModel {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub law: TransitionLaw,
    pub region: PolyhedronSchedule,
}

impl SdjlsModel {
    /// Builds and validates a model.
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        law: TransitionLaw,
        region: PolyhedronSchedule,
    ) -> Result<Self> {
        Self { a, b, law, region }.validate()
    }

    pub fn n(&self) -> usize {
        self.a.first().map_or(0, |a| a.nrows())
    }

    pub fn m(&self) -> usize {
        self.b.first().map_or(0, |b| b.ncols())
    }

    pub fn modes(&self) -> usize {
        self.a.len()
    }

    /// Returns the model unchanged when every invariant holds, otherwise all
    /// violations at once.
    pub fn validate(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(v))
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let modes = self.a.len();
        let n = self.n();
        let m = self.m();
        if modes == 0 {
            out.push(Violation::EmptyDimension { what: "mode count" });
        }
        if modes > 0 && n == 0 {
            out.push(Violation::EmptyDimension {
                what: "state dimension",
            });
        }
        if !self.b.is_empty() && m == 0 {
            out.push(Violation::EmptyDimension {
                what: "input dimension",
            });
        }
        if self.b.len() != modes {
            out.push(Violation::ModeCount {
                expected: modes,
                found: self.b.len(),
                what: "B",
            });
        }
        for (i, a) in self.a.iter().enumerate() {
            if a.shape() != (n, n) {
                out.push(Violation::Shape {
                    what: "A",
                    mode: i + 1,
                    expected: (n, n),
                    found: a.shape(),
                });
            }
            if a.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite {
                    what: "A",
                    mode: i + 1,
                });
            }
        }
        for (i, b) in self.b.iter().enumerate() {
            if b.shape() != (n, m) {
                out.push(Violation::Shape {
                    what: "B",
                    mode: i + 1,
                    expected: (n, m),
                    found: b.shape(),
                });
            }
            if b.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite {
                    what: "B",
                    mode: i + 1,
                });
            }
        }
        for (which, mat) in [
            (LawMatrix::Lambda, &self.law.lambda),
            (LawMatrix::Mu, &self.law.mu),
        ] {
            stochastic_violations(which, mat, modes, &mut out);
        }
        self.region.violations(n, &mut out);
        out
    }

    pub fn region_membership(&self, x: &DVector<f64>, k: usize) -> Region {
        region_membership(x, k, &self.region)
    }

    /// Row `theta` of λ when `x ∈ C1`, of μ otherwise.
    pub fn transition_row(&self, theta: usize, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        let idx = self.mode_index(theta)?;
        let mat = self.law.matrix(self.region_membership(x, k));
        Ok(mat.row(idx).transpose())
    }

    /// Converts a 1-based mode into a 0-based index.
    pub fn mode_index(&self, theta: usize) -> Result<usize> {
        if theta == 0 || theta > self.modes() {
            return Err(Error::ModeOutOfRange {
                mode: theta,
                modes: self.modes(),
            });
        }
        Ok(theta - 1)
    }

    /// Closed-loop matrix `A_i + B_i K_i` for a 1-based mode.
    pub fn closed_loop(&self, theta: usize, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let i = self.mode_index(theta)?;
        Ok(&self.a[i] + &self.b[i] * gain)
    }
}

fn stochastic_violations(
    which: LawMatrix,
    mat: &DMatrix<f64>,
    modes: usize,
    out: &mut Vec<Violation>,
) {
    if mat.shape() != (modes, modes) {
        out.push(Violation::Shape {
            what: match which {
                LawMatrix::Lambda => "lambda",
                LawMatrix::Mu => "mu",
            },
            mode: 0,
            expected: (modes, modes),
            found: mat.shape(),
        });
        return;
    }
    for i in 0..modes {
        let row = mat.row(i);
        for (j, &p) in row.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                out.push(Violation::NegativeProbability {
                    matrix: which,
                    row: i + 1,
                    col: j + 1,
                    value: p,
                });
            } else if p > 1.0 {
                out.push(Violation::ProbabilityAboveOne {
                    matrix: which,
                    row: i + 1,
                    col: j + 1,
                    value: p,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            out.push(Violation::RowSum {
                matrix: which,
                row: i + 1,
                sum,
            });
        }
    }
}

/// `C1` iff `G x <= H(k)` component-wise (non-strict).
pub fn region_membership(x: &DVector<f64>, k: usize, region: &PolyhedronSchedule) -> Region {
    if region.contains(x, k) {
        Region::C1
    } else {
        Region::C2
    }
}
