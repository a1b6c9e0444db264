//! Off-line pre-stabilization.
//!
//! For every mode `i` and each transition regime the synthesis asks for
//!
//! ```text
//!     [ -X_D              Λ_i (A_i X_i + B_i Y_i) ]
//!     [ (A_i X_i + B_i Y_i)ᵀ Λ_iᵀ     -X_i        ]  ≺ 0,      X_i ≻ 0,
//! ```
//!
//! with `X_D = diag(X_1, …, X_N)` and `Λ_i` stacking `√λ_ij I_n` (`Γ_i` uses μ).
//! Gains follow as `K_i = Y_i X_i⁻¹` and the Lyapunov matrices as `P_i = X_i⁻¹`.
//!
//! Feasibility is searched by alternating projections between the affine
//! image of the variables and the product of shifted semidefinite cones. The
//! result is then certified from scratch by eigendecomposition, so the
//! iteration scheme is never trusted.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::linalg::{
    clip_spectrum, is_symmetric, max_eigenvalue, min_eigenvalue, sym_eigenvalues, symmetrize,
};
use crate::model::{Region, SdjlsModel};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MAX_ITERS: usize = 5000;

/// Smallest `|eigenvalue|` of `X_i` accepted by [`extract_gains`].
pub const SINGULAR_TOL: f64 = 1e-12;

const CERTIFY_EVERY: usize = 5;

/// Which transition matrix weights the coupling term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Lambda,
    Mu,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Lambda => "lambda",
            Regime::Mu => "mu",
        })
    }
}

impl Regime {
    fn region(self) -> Region {
        match self {
            Regime::Lambda => Region::C1,
            Regime::Mu => Region::C2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Block inequality for a 1-based mode.
    Stability { mode: usize, regime: Regime },
    /// `-X_i ≼ -εI`, i.e. `X_i ≽ εI`.
    Positivity { mode: usize },
}

/// One matrix inequality `F(v) = Σ_l v_l F_l ≼ -εI`.
#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub kind: ConstraintKind,
    pub basis: Vec<DMatrix<f64>>,
}

impl LmiConstraint {
    pub fn size(&self) -> usize {
        self.basis.first().map_or(0, |b| b.nrows())
    }

    pub fn evaluate(&self, v: &DVector<f64>) -> DMatrix<f64> {
        let s = self.size();
        let mut out = DMatrix::zeros(s, s);
        for (coef, b) in v.iter().zip(&self.basis) {
            if *coef != 0.0 {
                out += b * *coef;
            }
        }
        out
    }
}

/// Variables (per-mode symmetric `X_i` and `Y_i`) and the constraint list.
#[derive(Debug, Clone)]
pub struct LmiSystem {
    pub n: usize,
    pub m: usize,
    pub modes: usize,
    pub epsilon: f64,
    pub constraints: Vec<LmiConstraint>,
    /// The plant the constraints were assembled from; used for certification.
    pub model: SdjlsModel,
}

impl LmiSystem {
    fn x_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn mode_len(&self) -> usize {
        self.x_len() + self.m * self.n
    }

    pub fn num_vars(&self) -> usize {
        self.modes * self.mode_len()
    }

    /// Packs `(X, Y)` into the variable vector; only the upper triangle of `X_i` is read.
    pub fn pack(&self, xs: &[DMatrix<f64>], ys: &[DMatrix<f64>]) -> DVector<f64> {
        pack(self.n, self.m, xs, ys)
    }

    pub fn unpack(&self, v: &DVector<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        unpack(self.n, self.m, self.modes, v)
    }

    pub fn evaluate(&self, v: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.constraints.iter().map(|c| c.evaluate(v)).collect()
    }

    /// Largest eigenvalue of every constraint at `v`.
    pub fn worst_eigenvalues(&self, v: &DVector<f64>) -> Vec<(ConstraintKind, f64)> {
        self.constraints
            .iter()
            .map(|c| (c.kind, max_eigenvalue(&c.evaluate(v))))
            .collect()
    }
}

fn pack(n: usize, m: usize, xs: &[DMatrix<f64>], ys: &[DMatrix<f64>]) -> DVector<f64> {
    let mut out = Vec::with_capacity(xs.len() * (n * (n + 1) / 2 + m * n));
    for (x, y) in xs.iter().zip(ys) {
        for r in 0..n {
            for c in r..n {
                out.push(x[(r, c)]);
            }
        }
        for r in 0..m {
            for c in 0..n {
                out.push(y[(r, c)]);
            }
        }
    }
    DVector::from_vec(out)
}

fn unpack(
    n: usize,
    m: usize,
    modes: usize,
    v: &DVector<f64>,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut it = v.iter().copied();
    let mut xs = Vec::with_capacity(modes);
    let mut ys = Vec::with_capacity(modes);
    for _ in 0..modes {
        let mut x = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let val = it.next().unwrap_or(0.0);
                x[(r, c)] = val;
                x[(c, r)] = val;
            }
        }
        let mut y = DMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                y[(r, c)] = it.next().unwrap_or(0.0);
            }
        }
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}

/// The block matrix for mode `i` (0-based) and one regime, built so that it is
/// exactly symmetric.
pub fn stability_block(
    model: &SdjlsModel,
    i: usize,
    regime: Regime,
    xs: &[DMatrix<f64>],
    ys: &[DMatrix<f64>],
) -> DMatrix<f64> {
    let n = model.n();
    let modes = model.modes();
    let size = modes * n + n;
    let probs = model.law.matrix(regime.region());
    let coupling = &model.a[i] * &xs[i] + &model.b[i] * &ys[i];
    let mut out = DMatrix::zeros(size, size);
    for j in 0..modes {
        let neg_x = -&xs[j];
        out.view_mut((j * n, j * n), (n, n)).copy_from(&neg_x);
        let w = probs[(i, j)].sqrt();
        let top_right = &coupling * w;
        out.view_mut((j * n, modes * n), (n, n))
            .copy_from(&top_right);
        out.view_mut((modes * n, j * n), (n, n))
            .copy_from(&top_right.transpose());
    }
    out.view_mut((modes * n, modes * n), (n, n))
        .copy_from(&(-&xs[i]));
    out
}

/// Emits `2N` block constraints of size `(N n + n)` followed by `N` positivity constraints.
pub fn assemble_prestab_lmis(model: &SdjlsModel, epsilon: f64) -> Result<LmiSystem> {
    let violations = model.violations();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Dimension(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (n, m, modes) = (model.n(), model.m(), model.modes());
    let mut sys = LmiSystem {
        n,
        m,
        modes,
        epsilon,
        constraints: Vec::new(),
        model: model.clone(),
    };
    let nv = sys.num_vars();
    let units: Vec<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> = (0..nv)
        .map(|l| {
            let mut e = DVector::zeros(nv);
            e[l] = 1.0;
            unpack(n, m, modes, &e)
        })
        .collect();

    for i in 0..modes {
        for regime in [Regime::Lambda, Regime::Mu] {
            let basis = units
                .iter()
                .map(|(xs, ys)| stability_block(model, i, regime, xs, ys))
                .collect();
            sys.constraints.push(LmiConstraint {
                kind: ConstraintKind::Stability {
                    mode: i + 1,
                    regime,
                },
                basis,
            });
        }
    }
    for i in 0..modes {
        let basis = units.iter().map(|(xs, _)| -&xs[i]).collect();
        sys.constraints.push(LmiConstraint {
            kind: ConstraintKind::Positivity { mode: i + 1 },
            basis,
        });
    }
    Ok(sys)
}

/// Certified pre-stabilizing gains.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
    /// Largest eigenvalue over every certified constraint (negative when feasible).
    pub margin: f64,
    pub iterations: usize,
}

impl SynthesisResult {
    /// Builds a result from given `X`, `Y` and gains, deriving `P_i = X_i⁻¹`.
    pub fn from_parts(
        x: Vec<DMatrix<f64>>,
        y: Vec<DMatrix<f64>>,
        k: Vec<DMatrix<f64>>,
        margin: f64,
    ) -> Result<Self> {
        let p = lyapunov_from_x(&x)?;
        Ok(Self {
            x,
            y,
            k,
            p,
            margin,
            iterations: 0,
        })
    }
}

/// Reported when no certified point was found. Not a proof of infeasibility.
#[derive(Debug, Clone, Error)]
#[error("no certified pre-stabilizing point after {iterations} iterations (worst eigenvalue {margin:e})")]
pub struct InfeasibilityReport {
    pub x: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    pub worst: Vec<(ConstraintKind, f64)>,
    pub margin: f64,
    pub iterations: usize,
}

/// Alternating projections with periodic certification.
///
/// Block constraints are projected onto `λ ≤ -(ε + tol)`. Positivity blocks
/// are clipped to `X_i ∈ [(ε + tol) I, I]`; the upper bound fixes the scale
/// of the homogeneous problem so that `λmax(X_i) ≤ 1`, which together with
/// block margin `ε` implies `E_i ≼ -εI` for `P_i = X_i⁻¹`.
pub fn solve_lmi_feasibility(
    sys: &LmiSystem,
    max_iters: usize,
    tol: f64,
) -> std::result::Result<SynthesisResult, InfeasibilityReport> {
    let target = sys.epsilon + tol.max(0.0);
    let nv = sys.num_vars();

    let mut gram = DMatrix::<f64>::zeros(nv, nv);
    for c in &sys.constraints {
        for a in 0..nv {
            for b in a..nv {
                let g = c.basis[a].dot(&c.basis[b]);
                gram[(a, b)] += g;
                if a != b {
                    gram[(b, a)] += g;
                }
            }
        }
    }
    let ridge = 1e-12 * (1.0 + gram.trace() / nv.max(1) as f64);
    for d in 0..nv {
        gram[(d, d)] += ridge;
    }
    let chol = gram
        .cholesky()
        .expect("gram matrix plus ridge is positive definite");

    let identities = vec![DMatrix::identity(sys.n, sys.n); sys.modes];
    let zeros = vec![DMatrix::zeros(sys.m, sys.n); sys.modes];
    let mut v = sys.pack(&identities, &zeros);

    for it in 0..=max_iters {
        if it % CERTIFY_EVERY == 0 || it == max_iters {
            if let Some(mut res) = certify(sys, &v) {
                res.iterations = it;
                return Ok(res);
            }
            if it == max_iters {
                break;
            }
        }
        let mut rhs = DVector::zeros(nv);
        for c in &sys.constraints {
            let f = c.evaluate(&v);
            let s = match c.kind {
                ConstraintKind::Stability { .. } => clip_spectrum(&f, |l| l.min(-target)),
                ConstraintKind::Positivity { .. } => clip_spectrum(&f, |l| l.clamp(-1.0, -target)),
            };
            for (a, b) in c.basis.iter().enumerate() {
                rhs[a] += b.dot(&s);
            }
        }
        v = chol.solve(&rhs);
    }

    let (x, y) = sys.unpack(&v);
    let worst = sys.worst_eigenvalues(&v);
    let margin = worst.iter().map(|w| w.1).fold(f64::NEG_INFINITY, f64::max);
    Err(InfeasibilityReport {
        x,
        y,
        worst,
        margin,
        iterations: max_iters,
    })
}

fn certify(sys: &LmiSystem, v: &DVector<f64>) -> Option<SynthesisResult> {
    let (xs, _) = sys.unpack(v);
    let top = xs.iter().map(max_eigenvalue).fold(0.0, f64::max);
    let v = if top > 1.0 { v / top } else { v.clone() };
    let margin = sys
        .worst_eigenvalues(&v)
        .iter()
        .map(|w| w.1)
        .fold(f64::NEG_INFINITY, f64::max);
    if margin > -sys.epsilon {
        return None;
    }
    let (x, y) = sys.unpack(&v);
    let k = extract_gains(&x, &y).ok()?;
    let p = lyapunov_from_x(&x).ok()?;
    let report = verify_ms_stability(&sys.model, &k, &p, sys.epsilon).ok()?;
    if !report.pass {
        return None;
    }
    Some(SynthesisResult {
        x,
        y,
        k,
        p,
        margin,
        iterations: 0,
    })
}

/// `P_i = X_i⁻¹`, symmetrized.
pub fn lyapunov_from_x(xs: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let min_abs = sym_eigenvalues(x)
                .iter()
                .map(|l| l.abs())
                .fold(f64::INFINITY, f64::min);
            if !(min_abs >= SINGULAR_TOL) {
                return Err(Error::SingularMatrix {
                    mode: i + 1,
                    min_abs_eig: min_abs,
                });
            }
            x.clone()
                .try_inverse()
                .map(|p| symmetrize(&p))
                .ok_or(Error::SingularMatrix {
                    mode: i + 1,
                    min_abs_eig: min_abs,
                })
        })
        .collect()
}

/// `K_i = Y_i X_i⁻¹` for every mode.
pub fn extract_gains(xs: &[DMatrix<f64>], ys: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "{} X matrices but {} Y matrices",
            xs.len(),
            ys.len()
        )));
    }
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (x, y))| {
            let min_abs = sym_eigenvalues(x)
                .iter()
                .map(|l| l.abs())
                .fold(f64::INFINITY, f64::min);
            if !(min_abs >= SINGULAR_TOL) {
                return Err(Error::SingularMatrix {
                    mode: i + 1,
                    min_abs_eig: min_abs,
                });
            }
            // X symmetric: K X = Y  <=>  X Kᵀ = Yᵀ
            let lu = x.clone().lu();
            let kt = lu.solve(&y.transpose()).ok_or(Error::SingularMatrix {
                mode: i + 1,
                min_abs_eig: min_abs,
            })?;
            Ok(kt.transpose())
        })
        .collect()
}

/// One `E_i` check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMargin {
    pub mode: usize,
    pub regime: Regime,
    pub eigenvalues: Vec<f64>,
}

impl ConditionMargin {
    pub fn max(&self) -> f64 {
        self.eigenvalues
            .last()
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub conditions: Vec<ConditionMargin>,
    pub max_eigenvalue: f64,
    pub pass: bool,
}

/// Evaluates `E_i = Ãᵢᵀ(Σ_j p_ij P_j)Ãᵢ - P_i` for both transition matrices.
pub fn verify_ms_stability(
    model: &SdjlsModel,
    k: &[DMatrix<f64>],
    p: &[DMatrix<f64>],
    epsilon: f64,
) -> Result<MarginReport> {
    let modes = model.modes();
    if k.len() != modes || p.len() != modes {
        return Err(Error::Dimension(format!(
            "expected {modes} gains and Lyapunov matrices"
        )));
    }
    for (i, pi) in p.iter().enumerate() {
        if !is_symmetric(pi, 1e-9) || !(min_eigenvalue(pi) > 0.0) {
            return Err(Error::NotPositiveDefinite {
                what: "P",
                mode: i + 1,
            });
        }
    }
    let p: Vec<DMatrix<f64>> = p.iter().map(symmetrize).collect();
    let mut conditions = Vec::with_capacity(2 * modes);
    for i in 0..modes {
        let closed = model.closed_loop(i + 1, &k[i])?;
        for regime in [Regime::Lambda, Regime::Mu] {
            let probs = model.law.matrix(regime.region());
            let mut avg = DMatrix::zeros(model.n(), model.n());
            for (j, pj) in p.iter().enumerate() {
                avg += pj * probs[(i, j)];
            }
            let e = closed.transpose() * avg * &closed - &p[i];
            conditions.push(ConditionMargin {
                mode: i + 1,
                regime,
                eigenvalues: sym_eigenvalues(&e),
            });
        }
    }
    let max_eigenvalue = conditions
        .iter()
        .map(ConditionMargin::max)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(MarginReport {
        conditions,
        max_eigenvalue,
        pass: max_eigenvalue <= -epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{benchmark_model, benchmark_x_y, BENCHMARK_GAINS};
    use crate::model::{PolyhedronSchedule, TransitionLaw};
    use approx::assert_abs_diff_eq;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn uniform_model(a: DMatrix<f64>, b: DMatrix<f64>, modes: usize) -> SdjlsModel {
        let n = a.nrows();
        let law = DMatrix::from_element(modes, modes, 1.0 / modes as f64);
        SdjlsModel::new(
            vec![a; modes],
            vec![b; modes],
            TransitionLaw {
                lambda: law.clone(),
                mu: law,
            },
            PolyhedronSchedule::unconstrained(n),
        )
        .unwrap()
    }

    #[test]
    fn benchmark_system_dimensions() {
        let sys = assemble_prestab_lmis(&benchmark_model(), DEFAULT_EPSILON).unwrap();
        let blocks: Vec<_> = sys
            .constraints
            .iter()
            .filter(|c| matches!(c.kind, ConstraintKind::Stability { .. }))
            .collect();
        assert_eq!(blocks.len(), 6);
        assert!(blocks.iter().all(|c| c.size() == 8));
        assert_eq!(sys.constraints.len() - blocks.len(), 3);
        assert_eq!(sys.num_vars(), 15);
    }

    #[test]
    fn blocks_are_exactly_symmetric() {
        let model = benchmark_model();
        let (x, y) = benchmark_x_y();
        let sys = assemble_prestab_lmis(&model, DEFAULT_EPSILON).unwrap();
        for f in sys.evaluate(&sys.pack(&x, &y)) {
            assert_eq!(f, f.transpose());
        }
    }

    #[test]
    fn single_mode_regimes_coincide() {
        let model = uniform_model(dm(2, 2, &[0.5, 0.1, 0.0, 0.3]), dm(2, 1, &[0.0, 1.0]), 1);
        let sys = assemble_prestab_lmis(&model, DEFAULT_EPSILON).unwrap();
        let v = sys.pack(&[DMatrix::identity(2, 2)], &[dm(1, 2, &[0.2, -0.1])]);
        assert_eq!(
            sys.constraints[0].evaluate(&v),
            sys.constraints[1].evaluate(&v)
        );
    }

    #[test]
    fn affine_map_matches_direct_block() {
        let model = benchmark_model();
        let (x, y) = benchmark_x_y();
        let sys = assemble_prestab_lmis(&model, DEFAULT_EPSILON).unwrap();
        let v = sys.pack(&x, &y);
        let direct = stability_block(&model, 2, Regime::Mu, &x, &y);
        assert_abs_diff_eq!(sys.constraints[5].evaluate(&v), direct, epsilon = 1e-12);
        let (x2, y2) = sys.unpack(&v);
        assert_eq!((x2, y2), (x, y));
    }

    #[test]
    fn zero_dynamics_feasible_at_identity() {
        let model = uniform_model(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), 3);
        let sys = assemble_prestab_lmis(&model, DEFAULT_EPSILON).unwrap();
        let v = sys.pack(
            &vec![DMatrix::identity(2, 2); 3],
            &vec![DMatrix::zeros(1, 2); 3],
        );
        for f in sys.evaluate(&v) {
            assert_eq!(f.clone(), -DMatrix::identity(f.nrows(), f.nrows()));
        }
        let res = solve_lmi_feasibility(&sys, DEFAULT_MAX_ITERS, DEFAULT_EPSILON).unwrap();
        assert_eq!(res.iterations, 0);
        assert!(res.k.iter().all(|k| k.amax() == 0.0));
    }

    #[test]
    fn fresh_synthesis_on_benchmark_model_certifies() {
        let model = benchmark_model();
        let sys = assemble_prestab_lmis(&model, DEFAULT_EPSILON).unwrap();
        let res = solve_lmi_feasibility(&sys, DEFAULT_MAX_ITERS, DEFAULT_EPSILON).unwrap();
        assert!(res.margin <= -DEFAULT_EPSILON);
        let report = verify_ms_stability(&model, &res.k, &res.p, DEFAULT_EPSILON).unwrap();
        assert!(report.pass, "{report:?}");
        for i in 0..3 {
            assert!(min_eigenvalue(&res.x[i]) >= DEFAULT_EPSILON);
            assert!((&res.k[i] * &res.x[i] - &res.y[i]).amax() <= 1e-9);
        }
    }

    #[test]
    fn expanding_dynamics_are_not_certified() {
        let model = uniform_model(DMatrix::identity(2, 2) * 2.0, DMatrix::zeros(2, 1), 2);
        let sys = assemble_prestab_lmis(&model, DEFAULT_EPSILON).unwrap();
        let report = solve_lmi_feasibility(&sys, 200, DEFAULT_EPSILON).unwrap_err();
        assert!(report.margin > -DEFAULT_EPSILON);
        assert_eq!(report.worst.len(), 6);
    }

    #[test]
    fn benchmark_gains_extract() {
        let (x, y) = benchmark_x_y();
        let k = extract_gains(&x, &y).unwrap();
        for (ki, want) in k.iter().zip(BENCHMARK_GAINS) {
            assert_abs_diff_eq!(ki[(0, 0)], want[0], epsilon = 1e-3);
            assert_abs_diff_eq!(ki[(0, 1)], want[1], epsilon = 1e-3);
        }
    }

    #[test]
    fn zero_y_gives_zero_gain_and_singular_x_errors() {
        let k = extract_gains(&[DMatrix::identity(2, 2) * 3.0], &[DMatrix::zeros(1, 2)]).unwrap();
        assert_eq!(k[0], DMatrix::zeros(1, 2));
        let err = extract_gains(
            &[DMatrix::identity(2, 2), DMatrix::zeros(2, 2)],
            &vec![DMatrix::zeros(1, 2); 2],
        )
        .unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { mode: 2, .. }));
    }

    #[test]
    fn benchmark_values_verify() {
        let model = benchmark_model();
        let (x, _) = benchmark_x_y();
        let p = lyapunov_from_x(&x).unwrap();
        let k = crate::fixtures::benchmark_gain_table();
        let report = verify_ms_stability(&model, &k, &p, DEFAULT_EPSILON).unwrap();
        assert!(report.pass);
        assert_eq!(report.conditions.len(), 6);
        let first = &report.conditions[0];
        assert_eq!((first.mode, first.regime), (1, Regime::Lambda));
        assert_abs_diff_eq!(first.eigenvalues[0], -0.761, epsilon = 1e-3);
        assert_abs_diff_eq!(first.eigenvalues[1], -0.627, epsilon = 1e-3);
    }

    #[test]
    fn deadbeat_always_passes_and_expansion_fails() {
        let model = uniform_model(DMatrix::zeros(2, 2), dm(2, 1, &[0.0, 1.0]), 2);
        let p = vec![dm(2, 2, &[2.0, 0.3, 0.3, 1.0]), DMatrix::identity(2, 2)];
        let k = vec![DMatrix::zeros(1, 2); 2];
        assert!(
            verify_ms_stability(&model, &k, &p, DEFAULT_EPSILON)
                .unwrap()
                .pass
        );

        let model = uniform_model(DMatrix::identity(2, 2) * 2.0, dm(2, 1, &[0.0, 1.0]), 2);
        let p = vec![DMatrix::identity(2, 2); 2];
        let r = verify_ms_stability(&model, &k, &p, DEFAULT_EPSILON).unwrap();
        assert!(!r.pass);
        assert_abs_diff_eq!(r.max_eigenvalue, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_lyapunov_input() {
        let model = benchmark_model();
        let k = crate::fixtures::benchmark_gain_table();
        let mut p = vec![DMatrix::identity(2, 2); 3];
        p[1][(0, 1)] = 0.5;
        assert!(matches!(
            verify_ms_stability(&model, &k, &p, 1e-3),
            Err(Error::NotPositiveDefinite { mode: 2, .. })
        ));
        p[1] = -DMatrix::identity(2, 2);
        assert!(verify_ms_stability(&model, &k, &p, 1e-3).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn spd(a: f64, b: f64, c: f64) -> DMatrix<f64> {
            let l = dm(2, 2, &[a, 0.0, b, c]);
            &l * l.transpose() + DMatrix::identity(2, 2) * 0.1
        }

        proptest! {
            #[test]
            fn gain_round_trip(a in 0.2..3.0f64, b in -2.0..2.0f64, c in 0.2..3.0f64, k0 in -5.0..5.0f64, k1 in -5.0..5.0f64) {
                let x = spd(a, b, c);
                let k = dm(1, 2, &[k0, k1]);
                let y = &k * &x;
                let got = extract_gains(&[x], &[y]).unwrap();
                prop_assert!((&got[0] - &k).amax() <= 1e-9);
            }

            #[test]
            fn gains_scale_invariant(a in 0.2..3.0f64, b in -2.0..2.0f64, c in 0.2..3.0f64, y0 in -5.0..5.0f64, y1 in -5.0..5.0f64, s in 0.01..100.0f64) {
                let x = spd(a, b, c);
                let y = dm(1, 2, &[y0, y1]);
                let base = extract_gains(&[x.clone()], &[y.clone()]).unwrap();
                let scaled = extract_gains(&[x * s], &[y * s]).unwrap();
                prop_assert!((&base[0] - &scaled[0]).amax() <= 1e-9 * (1.0 + base[0].amax()));
            }
        }
    }
}
