//! One-step receding-horizon controller.
//!
//! With `u = K_θ x + ν`, `Ã = A_θ + B_θ K_θ` and `Π = Σ_j π_θj(x) Ψ_j`, the
//! conditional cost is
//!
//! ```text
//!   J(ν, ρ) = xᵀQx + (Kx)ᵀR(Kx) + (Ãx)ᵀΠ(Ãx) + tr Π
//!           + νᵀ(R + BᵀΠB)ν + 2νᵀ(BᵀΠÃx + RKx) + αρ
//! ```
//!
//! minimized over `ν` in a box and `ρ >= 0`, subject to the tightened rows
//! `g_jᵀ(Ãx + Bν) <= rhs_j + ρ`.

use nalgebra::{DMatrix, DVector};

use crate::chance::{tighten, ChanceSpec, TightenedConstraints};
use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue};
use crate::model::{PolyhedronSchedule, SdjlsModel};
use crate::qp::{solve_qp, QpProblem, QpSolution, QpStatus};

/// Threshold below which the slack counts as zero.
pub const SLACK_ZERO: f64 = 1e-9;
/// Tolerance of the box-feasibility probe.
pub const PROBE_TOL: f64 = 1e-8;

const QP_TOL: f64 = 1e-10;
const QP_MAX_ITERS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RhcWeights {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub psi: Vec<DMatrix<f64>>,
    /// Penalty on the shared slack.
    pub alpha: f64,
}

impl RhcWeights {
    pub fn validate(&self, modes: usize, n: usize, m: usize) -> Result<()> {
        for (what, mats, dim) in [("Q", &self.q, n), ("R", &self.r, m), ("Psi", &self.psi, n)] {
            if mats.len() != modes {
                return Err(Error::Dimension(format!(
                    "{what}: expected {modes} matrices, found {}",
                    mats.len()
                )));
            }
            for (i, w) in mats.iter().enumerate() {
                if w.shape() != (dim, dim) {
                    return Err(Error::Dimension(format!(
                        "{what}[{}] must be {dim}x{dim}",
                        i + 1
                    )));
                }
                if !is_symmetric(w, 1e-12) || !(min_eigenvalue(w) > 0.0) {
                    return Err(Error::NotPositiveDefinite { what, mode: i + 1 });
                }
            }
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "slack penalty must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Box of admissible offsets `ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl InputSet {
    pub fn symmetric(m: usize, bound: f64) -> Self {
        Self {
            lower: DVector::from_element(m, -bound),
            upper: DVector::from_element(m, bound),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.lower.len() != m || self.upper.len() != m {
            return Err(Error::Dimension(format!(
                "input bounds must have length {m}"
            )));
        }
        let ok = self
            .lower
            .iter()
            .zip(self.upper.iter())
            .all(|(l, u)| l.is_finite() && u.is_finite() && l <= u);
        if !ok {
            return Err(Error::Config(
                "input bounds must be finite with lower <= upper".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub nu: DVector<f64>,
    pub rho: f64,
    pub u: DVector<f64>,
    /// Optimal value of the relaxed one-step problem, slack penalty included.
    pub jstar: f64,
    pub qp_status: QpStatus,
    pub pi_trace: f64,
    /// `ρ* = 0`: the unrelaxed problem is solved as well.
    pub unrelaxed_optimal: bool,
}

/// Everything the controller needs besides `(θ, x, k)`.
#[derive(Debug, Clone)]
pub struct RhcController {
    pub model: SdjlsModel,
    pub gains: Vec<DMatrix<f64>>,
    pub weights: RhcWeights,
    pub input_set: InputSet,
    pub chance: ChanceSpec,
    /// Region bounding the chance constraints; the transition switch keeps
    /// using `model.region`.
    pub constraints: PolyhedronSchedule,
}

impl RhcController {
    /// Uses the model's region for the chance constraints as well.
    pub fn new(
        model: SdjlsModel,
        gains: Vec<DMatrix<f64>>,
        weights: RhcWeights,
        input_set: InputSet,
        chance: ChanceSpec,
    ) -> Result<Self> {
        let constraints = model.region.clone();
        Self::with_constraints(model, gains, weights, input_set, chance, constraints)
    }

    pub fn with_constraints(
        model: SdjlsModel,
        gains: Vec<DMatrix<f64>>,
        weights: RhcWeights,
        input_set: InputSet,
        chance: ChanceSpec,
        constraints: PolyhedronSchedule,
    ) -> Result<Self> {
        let model = model.validate()?;
        let (n, m, modes) = (model.n(), model.m(), model.modes());
        if gains.len() != modes || gains.iter().any(|k| k.shape() != (m, n)) {
            return Err(Error::Dimension(format!(
                "expected {modes} gains of shape {m}x{n}"
            )));
        }
        weights.validate(modes, n, m)?;
        input_set.validate(m)?;
        if constraints.g.ncols() != n
            || constraints.h0.len() != constraints.rows()
            || constraints.h_slope.len() != constraints.rows()
        {
            return Err(Error::Dimension(
                "constraint region does not match the state dimension".into(),
            ));
        }
        // surface quantile domain errors at construction time
        crate::chance::quantile_scale(chance, n)?;
        Ok(Self {
            model,
            gains,
            weights,
            input_set,
            chance,
            constraints,
        })
    }

    pub fn compute_pi(&self, theta: usize, x: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
        compute_pi(&self.model, &self.weights, theta, x, k)
    }

    pub fn tightened(&self, k: usize) -> Result<TightenedConstraints> {
        tighten(&self.constraints, k, self.chance, self.model.n())
    }

    /// Assembles the QP in `z = (ν, ρ)`.
    pub fn build_step_qp(&self, theta: usize, x: &DVector<f64>, k: usize) -> Result<QpProblem> {
        let i = self.model.mode_index(theta)?;
        let m = self.model.m();
        let b = &self.model.b[i];
        let gain = &self.gains[i];
        let r = &self.weights.r[i];
        let closed = &self.model.a[i] + b * gain;
        let ax = &closed * x;
        let kx = gain * x;
        let pi = self.compute_pi(theta, x, k)?;

        let mut p = DMatrix::zeros(m + 1, m + 1);
        let quad = (r + b.transpose() * &pi * b) * 2.0;
        p.view_mut((0, 0), (m, m))
            .copy_from(&crate::linalg::symmetrize(&quad));
        let mut q = DVector::zeros(m + 1);
        q.rows_mut(0, m)
            .copy_from(&((b.transpose() * &pi * &ax + r * &kx) * 2.0));
        q[m] = self.weights.alpha;
        let c0 = x.dot(&(&self.weights.q[i] * x))
            + kx.dot(&(r * &kx))
            + ax.dot(&(&pi * &ax))
            + pi.trace();

        let rows = self.tightened(k)?;
        let nr = rows.rows();
        let mut a_in = DMatrix::zeros(nr, m + 1);
        if nr > 0 {
            a_in.view_mut((0, 0), (nr, m)).copy_from(&(&rows.g * b));
            a_in.column_mut(m).fill(-1.0);
        }
        let b_in = &rows.rhs - &rows.g * &ax;

        let mut lower = DVector::zeros(m + 1);
        let mut upper = DVector::from_element(m + 1, f64::INFINITY);
        lower.rows_mut(0, m).copy_from(&self.input_set.lower);
        upper.rows_mut(0, m).copy_from(&self.input_set.upper);
        Ok(QpProblem {
            p,
            q,
            c0,
            a_in,
            b_in,
            lower,
            upper,
        })
    }

    /// `max(0, max_j(g_jᵀ(Ãx + Bν) - rhs_j))`: the best slack for a fixed `ν`.
    pub fn inner_slack(
        &self,
        theta: usize,
        x: &DVector<f64>,
        k: usize,
        nu: &DVector<f64>,
    ) -> Result<f64> {
        let mean = self.predicted_mean(theta, x, nu)?;
        let rows = self.tightened(k)?;
        Ok(rows.max_violation(&mean).max(0.0))
    }

    /// `Ãx + Bν`.
    pub fn predicted_mean(
        &self,
        theta: usize,
        x: &DVector<f64>,
        nu: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let i = self.model.mode_index(theta)?;
        let closed = &self.model.a[i] + &self.model.b[i] * &self.gains[i];
        Ok(closed * x + &self.model.b[i] * nu)
    }

    /// Smallest achievable worst-row violation over the input box, found by
    /// the LP `min t  s.t.  g_jᵀ(Ãx + Bν) - rhs_j <= t,  ν ∈ box`.
    pub fn box_feasibility_gap(&self, theta: usize, x: &DVector<f64>, k: usize) -> Result<f64> {
        let rows = self.tightened(k)?;
        if rows.rows() == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        let i = self.model.mode_index(theta)?;
        let m = self.model.m();
        let b = &self.model.b[i];
        let ax = (&self.model.a[i] + b * &self.gains[i]) * x;
        let nr = rows.rows();
        let mut a_in = DMatrix::zeros(nr, m + 1);
        a_in.view_mut((0, 0), (nr, m)).copy_from(&(&rows.g * b));
        a_in.column_mut(m).fill(-1.0);
        let mut q = DVector::zeros(m + 1);
        q[m] = 1.0;
        let mut lower = DVector::from_element(m + 1, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(m + 1, f64::INFINITY);
        lower.rows_mut(0, m).copy_from(&self.input_set.lower);
        upper.rows_mut(0, m).copy_from(&self.input_set.upper);
        let lp = QpProblem {
            p: DMatrix::zeros(m + 1, m + 1),
            q,
            c0: 0.0,
            a_in,
            b_in: &rows.rhs - &rows.g * &ax,
            lower,
            upper,
        };
        let sol = solve_qp(&lp, QP_TOL, QP_MAX_ITERS)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::Qp(format!(
                "feasibility probe ended with {:?}",
                sol.status
            )));
        }
        Ok(sol.z[m])
    }

    /// Solves the relaxed one-step problem and returns the applied input.
    pub fn step(&self, theta: usize, x: &DVector<f64>, k: usize) -> Result<StepSolution> {
        let prob = self.build_step_qp(theta, x, k)?;
        let sol = solve_qp(&prob, QP_TOL, QP_MAX_ITERS)?;
        self.finish(theta, x, k, &prob, &sol)
    }

    fn finish(
        &self,
        theta: usize,
        x: &DVector<f64>,
        k: usize,
        prob: &QpProblem,
        sol: &QpSolution,
    ) -> Result<StepSolution> {
        if sol.status != QpStatus::Optimal {
            return Err(Error::Qp(format!(
                "status {:?} (stationarity {:e}, primal {:e}, complementarity {:e})",
                sol.status, sol.kkt_stationarity, sol.kkt_primal, sol.kkt_complementarity
            )));
        }
        let i = self.model.mode_index(theta)?;
        let m = self.model.m();
        let nu = sol.z.rows(0, m).into_owned();
        let rho = sol.z[m].max(0.0);
        let u = &self.gains[i] * x + &nu;
        let pi_trace = self.compute_pi(theta, x, k)?.trace();
        Ok(StepSolution {
            nu,
            rho,
            u,
            jstar: prob.objective(&sol.z),
            qp_status: sol.status,
            pi_trace,
            unrelaxed_optimal: rho <= SLACK_ZERO,
        })
    }
}

/// `Π = Σ_j π_θj(x, k) Ψ_j`.
pub fn compute_pi(
    model: &SdjlsModel,
    weights: &RhcWeights,
    theta: usize,
    x: &DVector<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let row = model.transition_row(theta, x, k)?;
    let n = model.n();
    let mut pi = DMatrix::zeros(n, n);
    for (p, psi) in row.iter().zip(&weights.psi) {
        pi += psi * *p;
    }
    Ok(pi)
}

/// `E[xᵀKx] = mᵀKm + tr(K R)` for `x` with mean `m` and covariance `R`.
pub fn expected_quadratic_form(mean: &DVector<f64>, cov: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    mean.dot(&(k * mean)) + (k * cov).trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chance::ChanceMode;
    use crate::fixtures::{
        benchmark_chance, benchmark_gain_table, benchmark_input_set, benchmark_model,
        benchmark_weights, benchmark_x0,
    };
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn controller(xi: f64, mode: ChanceMode) -> RhcController {
        RhcController::new(
            benchmark_model(),
            benchmark_gain_table(),
            benchmark_weights(),
            benchmark_input_set(),
            benchmark_chance(xi, mode),
        )
        .unwrap()
    }

    // J(ν) with the slack eliminated, minimized by golden section (m = 1, convex)
    fn oracle(ctl: &RhcController, theta: usize, x: &DVector<f64>, k: usize) -> (f64, f64) {
        let prob = ctl.build_step_qp(theta, x, k).unwrap();
        let f = |nu: f64| {
            let v = DVector::from_element(1, nu);
            let rho = ctl.inner_slack(theta, x, k, &v).unwrap();
            prob.objective(&DVector::from_column_slice(&[nu, rho]))
        };
        let (mut lo, mut hi) = (ctl.input_set.lower[0], ctl.input_set.upper[0]);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if f(a) <= f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let nu = 0.5 * (lo + hi);
        (nu, f(nu))
    }

    #[test]
    fn pi_follows_region() {
        let model = benchmark_model();
        let w = benchmark_weights();
        let x = benchmark_x0();
        assert_abs_diff_eq!(
            compute_pi(&model, &w, 1, &x, 0).unwrap(),
            DMatrix::identity(2, 2) * 1.5,
            epsilon = 1e-12
        );
        // x2 = 6 leaves the band [2, 5]
        let out = DVector::from_column_slice(&[0.0, 6.0]);
        assert_abs_diff_eq!(
            compute_pi(&model, &w, 1, &out, 0).unwrap(),
            DMatrix::identity(2, 2) * 1.49,
            epsilon = 1e-12
        );
        assert!(compute_pi(&model, &w, 4, &x, 0).is_err());
    }

    #[test]
    fn expected_quadratic_form_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let ones = DVector::from_element(2, 1.0);
        assert_abs_diff_eq!(
            expected_quadratic_form(&ones, &eye, &eye),
            4.0,
            epsilon = 1e-15
        );
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 3.0]);
        assert_abs_diff_eq!(
            expected_quadratic_form(&DVector::zeros(2), &eye, &k),
            k.trace(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn expected_quadratic_form_against_sampling() {
        let mut normal = crate::sim::SimRng::new(17, 0);
        let mean = DVector::from_column_slice(&[1.0, -0.5]);
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let draws = 200_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let x = &mean + crate::sim::sample_gaussian(&mut normal, 2);
            acc += x.dot(&(&k * &x));
        }
        let est = acc / draws as f64;
        let exact = expected_quadratic_form(&mean, &DMatrix::identity(2, 2), &k);
        assert!((est - exact).abs() <= 0.03 * exact, "{est} vs {exact}");
    }

    #[test]
    fn step_zero_hits_the_lower_row() {
        let ctl = controller(0.85, ChanceMode::Individual);
        let sol = ctl.step(1, &benchmark_x0(), 0).unwrap();
        assert_abs_diff_eq!(sol.nu[0], 2.5 + 1.036433, epsilon = 1e-6);
        assert!(sol.rho <= SLACK_ZERO);
        assert!(sol.unrelaxed_optimal);
        assert_abs_diff_eq!(sol.u[0], -1.4 + sol.nu[0], epsilon = 1e-12);
        assert_abs_diff_eq!(sol.pi_trace, 3.0, epsilon = 1e-12);
        let (nu, j) = oracle(&ctl, 1, &benchmark_x0(), 0);
        assert_abs_diff_eq!(sol.nu[0], nu, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.jstar, j, epsilon = 1e-6 * (1.0 + j.abs()));
    }

    #[test]
    fn unconstrained_stationary_point() {
        let mut ctl = controller(0.85, ChanceMode::Individual);
        ctl.constraints = PolyhedronSchedule::unconstrained(2);
        let sol = ctl.step(1, &benchmark_x0(), 0).unwrap();
        assert_abs_diff_eq!(sol.nu[0], 0.56, epsilon = 1e-8);
        assert_eq!(sol.rho, 0.0);
        assert_eq!(
            ctl.box_feasibility_gap(1, &benchmark_x0(), 0).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn empty_band_uses_the_min_max_slack() {
        // offsets 1.645 on both rows exceed half the band width
        let ctl = controller(0.95, ChanceMode::Individual);
        let x = benchmark_x0();
        let sol = ctl.step(1, &x, 0).unwrap();
        let gap = ctl.box_feasibility_gap(1, &x, 0).unwrap();
        let half = normal_quantile_value(0.95) - 1.5;
        assert_abs_diff_eq!(gap, half, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.rho, gap, epsilon = 1e-7);
        assert_abs_diff_eq!(sol.nu[0], 4.0, epsilon = 1e-7);
        assert!(!sol.unrelaxed_optimal);
        let (nu, j) = oracle(&ctl, 1, &x, 0);
        assert_abs_diff_eq!(sol.nu[0], nu, epsilon = 1e-6);
        assert_abs_diff_eq!(sol.jstar, j, epsilon = 1e-6 * (1.0 + j.abs()));
    }

    fn normal_quantile_value(p: f64) -> f64 {
        crate::prob::normal_quantile(p).unwrap().value
    }

    #[test]
    fn joint_mode_centres_the_input() {
        let ctl = controller(0.85, ChanceMode::Joint);
        let sol = ctl.step(1, &benchmark_x0(), 0).unwrap();
        assert_abs_diff_eq!(sol.nu[0], 4.0, epsilon = 1e-7);
        assert!(sol.rho > 0.0);
    }

    #[test]
    fn slack_equals_inner_slack_at_optimum() {
        for (xi, mode) in [
            (0.85, ChanceMode::Individual),
            (0.95, ChanceMode::Individual),
            (0.85, ChanceMode::Joint),
        ] {
            let ctl = controller(xi, mode);
            for (theta, x, k) in [
                (1, benchmark_x0(), 0),
                (2, DVector::from_column_slice(&[1.0, -3.0]), 4),
                (3, DVector::from_column_slice(&[-2.0, 9.0]), 10),
            ] {
                let sol = ctl.step(theta, &x, k).unwrap();
                let inner = ctl.inner_slack(theta, &x, k, &sol.nu).unwrap();
                assert_abs_diff_eq!(sol.rho, inner, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn relaxation_flag_agrees_with_probe() {
        for xi in [0.3, 0.5, 0.85, 0.95, 0.99] {
            let ctl = controller(xi, ChanceMode::Individual);
            for k in [0, 3, 12] {
                for x2 in [-40.0, -1.0, 2.0, 7.0, 60.0] {
                    let x = DVector::from_column_slice(&[1.0, x2]);
                    for theta in 1..=3 {
                        let sol = ctl.step(theta, &x, k).unwrap();
                        let gap = ctl.box_feasibility_gap(theta, &x, k).unwrap();
                        assert_eq!(
                            sol.unrelaxed_optimal,
                            gap <= PROBE_TOL,
                            "xi={xi} k={k} x2={x2} theta={theta} gap={gap} rho={}",
                            sol.rho
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tighter_levels_cost_more() {
        let x = DVector::from_column_slice(&[0.5, 3.0]);
        for theta in 1..=3 {
            let mut prev = f64::NEG_INFINITY;
            for xi in [0.3, 0.5, 0.7, 0.85, 0.9, 0.95, 0.99] {
                let j = controller(xi, ChanceMode::Individual)
                    .step(theta, &x, 2)
                    .unwrap()
                    .jstar;
                assert!(j >= prev - 1e-7, "theta={theta} xi={xi}: {j} < {prev}");
                prev = j;
            }
        }
    }

    #[test]
    fn invalid_setups_are_rejected() {
        let mut w = benchmark_weights();
        w.r[1] = DMatrix::from_element(1, 1, 0.0);
        assert!(RhcController::new(
            benchmark_model(),
            benchmark_gain_table(),
            w,
            benchmark_input_set(),
            benchmark_chance(0.85, ChanceMode::Individual)
        )
        .is_err());
        assert!(RhcController::new(
            benchmark_model(),
            benchmark_gain_table(),
            benchmark_weights(),
            benchmark_input_set(),
            benchmark_chance(1.0, ChanceMode::Individual)
        )
        .is_err());
        let bad_box = InputSet {
            lower: DVector::from_element(1, 1.0),
            upper: DVector::from_element(1, -1.0),
        };
        assert!(RhcController::new(
            benchmark_model(),
            benchmark_gain_table(),
            benchmark_weights(),
            bad_box,
            benchmark_chance(0.85, ChanceMode::Individual)
        )
        .is_err());
        assert!(RhcController::new(
            benchmark_model(),
            benchmark_gain_table()[..2].to_vec(),
            benchmark_weights(),
            benchmark_input_set(),
            benchmark_chance(0.85, ChanceMode::Individual)
        )
        .is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pi_stays_in_the_hull(x1 in -20.0..20.0f64, x2 in -20.0..20.0f64, theta in 1usize..=3, k in 0usize..30) {
            let pi = compute_pi(&benchmark_model(), &benchmark_weights(), theta, &DVector::from_column_slice(&[x1, x2]), k).unwrap();
            // every Ψ_j is a multiple of I, so Π = cI with c in [1, 3]
            prop_assert!(pi[(0, 1)].abs() <= 1e-15 && (pi[(0, 0)] - pi[(1, 1)]).abs() <= 1e-12);
            prop_assert!(pi[(0, 0)] >= 1.0 - 1e-12 && pi[(0, 0)] <= 3.0 + 1e-12);
        }

        #[test]
        fn step_matches_oracle(x1 in -10.0..10.0f64, x2 in -10.0..10.0f64, theta in 1usize..=3, k in 0usize..20, xi in 0.55..0.97f64) {
            let ctl = controller(xi, ChanceMode::Individual);
            let x = DVector::from_column_slice(&[x1, x2]);
            let sol = ctl.step(theta, &x, k).unwrap();
            let (_, j) = oracle(&ctl, theta, &x, k);
            prop_assert!((sol.jstar - j).abs() <= 1e-6 * (1.0 + j.abs()), "{} vs {}", sol.jstar, j);
        }
    }
}
