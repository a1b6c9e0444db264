//! Small dense convex QP
//!
//! ```text
//!     minimize    ½ zᵀ P z + qᵀ z + c0
//!     subject to  A z <= b,   lower <= z <= upper
//! ```
//!
//! Solved with over-relaxed ADMM on the stacked constraint `l <= C z <= u`,
//! `C = [A; I]`, followed by a primal-dual active-set polish that solves the
//! equality-constrained KKT system of the guessed active set exactly. Whatever
//! produced the iterate, the reported status rests on the KKT residuals of the
//! unregularized data.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, min_eigenvalue};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 20_000;

const SIGMA: f64 = 1e-6;
const RELAX: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const ADAPT_EVERY: usize = 25;
const POLISH_EVERY: usize = 50;
const POLISH_DELTA: f64 = 1e-10;
const INFEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c0: f64,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.p * z)) + self.q.dot(z) + self.c0
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let p_rows = self.a_in.nrows();
        if self.p.shape() != (d, d)
            || self.a_in.ncols() != d && p_rows > 0
            || self.b_in.len() != p_rows
            || self.lower.len() != d
            || self.upper.len() != d
        {
            return Err(Error::Dimension("inconsistent QP data shapes".into()));
        }
        if !is_symmetric(&self.p, 1e-12) || (d > 0 && min_eigenvalue(&self.p) < -1e-10) {
            return Err(Error::Qp(
                "quadratic term is not symmetric positive semidefinite".into(),
            ));
        }
        if self
            .lower
            .iter()
            .zip(self.upper.iter())
            .any(|(l, u)| l > u || l.is_nan() || u.is_nan())
        {
            return Err(Error::Qp("lower bound exceeds upper bound".into()));
        }
        if self
            .q
            .iter()
            .chain(self.b_in.iter())
            .chain(self.a_in.iter())
            .chain(self.p.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Qp("non-finite problem data".into()));
        }
        Ok(())
    }

    /// `C = [A; I]`, `l = [-∞; lower]`, `u = [b; upper]`.
    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let d = self.dim();
        let p = self.a_in.nrows();
        let mut c = DMatrix::zeros(p + d, d);
        if p > 0 {
            c.view_mut((0, 0), (p, d)).copy_from(&self.a_in);
        }
        c.view_mut((p, 0), (d, d)).fill_with_identity();
        let mut l = DVector::from_element(p + d, f64::NEG_INFINITY);
        let mut u = DVector::zeros(p + d);
        u.rows_mut(0, p).copy_from(&self.b_in);
        l.rows_mut(p, d).copy_from(&self.lower);
        u.rows_mut(p, d).copy_from(&self.upper);
        (c, l, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers of the inequality rows followed by those of the bounds;
    /// positive at an active upper side, negative at an active lower side.
    pub duals: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_stationarity: f64,
    pub kkt_primal: f64,
    pub kkt_complementarity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Residuals {
    stationarity: f64,
    primal: f64,
    complementarity: f64,
    dual_sign: f64,
}

fn residuals(
    prob: &QpProblem,
    c: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> Residuals {
    let cz = c * z;
    let stationarity = (&prob.p * z + &prob.q + c.transpose() * y).amax();
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    let mut dual_sign: f64 = 0.0;
    for i in 0..cz.len() {
        primal = primal.max(cz[i] - u[i]).max(l[i] - cz[i]);
        if y[i] > 0.0 {
            let gap = if u[i].is_finite() {
                (u[i] - cz[i]).abs()
            } else {
                f64::INFINITY
            };
            complementarity = complementarity.max(y[i] * gap);
        } else if y[i] < 0.0 {
            let gap = if l[i].is_finite() {
                (cz[i] - l[i]).abs()
            } else {
                f64::INFINITY
            };
            complementarity = complementarity.max(-y[i] * gap);
        }
        if y[i] > 0.0 && !u[i].is_finite() || y[i] < 0.0 && !l[i].is_finite() {
            dual_sign = f64::INFINITY;
        }
    }
    Residuals {
        stationarity,
        primal: primal.max(0.0),
        complementarity,
        dual_sign,
    }
}

struct Thresholds {
    stationarity: f64,
    primal: f64,
    complementarity: f64,
}

impl Thresholds {
    fn new(prob: &QpProblem, tol: f64) -> Self {
        Self {
            stationarity: tol * (1.0 + prob.q.amax()),
            primal: tol
                * (1.0
                    + if prob.b_in.is_empty() {
                        0.0
                    } else {
                        prob.b_in.amax()
                    }),
            complementarity: tol,
        }
    }

    fn accept(&self, r: &Residuals) -> bool {
        r.stationarity <= self.stationarity
            && r.primal <= self.primal
            && r.complementarity <= self.complementarity
            && r.dual_sign == 0.0
    }
}

fn project(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(l.iter().zip(u.iter()))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi)),
    )
}

/// Solves `prob`; `tol` scales the KKT acceptance thresholds.
pub fn solve_qp(prob: &QpProblem, tol: f64, max_iters: usize) -> Result<QpSolution> {
    prob.validate()?;
    let d = prob.dim();
    let (c, l, u) = prob.stacked();
    let rows = c.nrows();
    let thresholds = Thresholds::new(prob, tol);

    let row_scale: Vec<f64> = (0..rows)
        .map(|i| {
            if l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY {
                RHO_MIN / RHO_INIT
            } else if l[i] == u[i] {
                RHO_EQ_SCALE
            } else {
                1.0
            }
        })
        .collect();
    let mut rho = RHO_INIT;
    let rho_vec = |rho: f64| {
        DVector::from_iterator(
            rows,
            row_scale
                .iter()
                .map(|s| (s * rho).clamp(RHO_MIN, RHO_MAX * RHO_EQ_SCALE)),
        )
    };

    let factor = |rv: &DVector<f64>| {
        let mut m = &prob.p + DMatrix::identity(d, d) * SIGMA;
        m += c.transpose() * DMatrix::from_diagonal(rv) * &c;
        m.lu()
    };

    let mut x = project(&DVector::zeros(d), &prob.lower, &prob.upper);
    let mut z = project(&(&c * &x), &l, &u);
    let mut y = DVector::zeros(rows);
    let mut rv = rho_vec(rho);
    let mut lu = factor(&rv);

    let mut best: Option<(DVector<f64>, DVector<f64>, Residuals)> = None;
    let mut status = QpStatus::MaxIters;
    let mut iterations = max_iters;

    for it in 1..=max_iters {
        let rhs = &x * SIGMA - &prob.q + c.transpose() * (rv.component_mul(&z) - &y);
        let x_tilde = lu.solve(&rhs).unwrap_or_else(|| x.clone());
        let z_tilde = &c * &x_tilde;
        x = &x_tilde * RELAX + &x * (1.0 - RELAX);
        let z_relax = &z_tilde * RELAX + &z * (1.0 - RELAX);
        let z_next = project(&(&z_relax + y.component_div(&rv)), &l, &u);
        let dy = rv.component_mul(&(&z_relax - &z_next));
        y += &dy;
        z = z_next;

        if primal_infeasible(&c, &l, &u, &dy) {
            status = QpStatus::Infeasible;
            iterations = it;
            break;
        }

        if it % POLISH_EVERY == 0 || it == max_iters {
            if let Some((zp, yp)) = polish(prob, &c, &l, &u, &x, &y) {
                let r = residuals(prob, &c, &l, &u, &zp, &yp);
                if thresholds.accept(&r) {
                    best = Some((zp, yp, r));
                    status = QpStatus::Optimal;
                    iterations = it;
                    break;
                }
            }
        }

        if it % ADAPT_EVERY == 0 {
            let cx = &c * &x;
            let r_prim = (&cx - &z).amax() / cx.amax().max(z.amax()).max(1e-12);
            let px = &prob.p * &x;
            let cty = c.transpose() * &y;
            let r_dual = (&px + &prob.q + &cty).amax()
                / px.amax().max(cty.amax()).max(prob.q.amax()).max(1e-12);
            let ratio = (r_prim / r_dual.max(1e-30)).sqrt();
            if ratio.is_finite() && !(0.2..=5.0).contains(&ratio) {
                rho = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
                rv = rho_vec(rho);
                lu = factor(&rv);
            }
        }
    }

    let (z_out, y_out, r) = match best {
        Some(b) => b,
        None => {
            let r = residuals(prob, &c, &l, &u, &x, &y);
            (x.clone(), y.clone(), r)
        }
    };
    Ok(QpSolution {
        objective: prob.objective(&z_out),
        z: z_out,
        duals: y_out,
        status,
        kkt_stationarity: r.stationarity,
        kkt_primal: r.primal,
        kkt_complementarity: r.complementarity,
        iterations,
    })
}

fn primal_infeasible(
    c: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dy: &DVector<f64>,
) -> bool {
    let norm = dy.amax();
    if norm <= 1e-12 {
        return false;
    }
    if (c.transpose() * dy).amax() > INFEASIBILITY_TOL * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if !u[i].is_finite() {
                return false;
            }
            support += u[i] * dy[i];
        } else if dy[i] < 0.0 {
            if !l[i].is_finite() {
                return false;
            }
            support += l[i] * dy[i];
        }
    }
    support < -INFEASIBILITY_TOL * norm
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Inactive,
    Lower,
    Upper,
}

/// Primal-dual active-set iterations started from the ADMM guess.
fn polish(
    prob: &QpProblem,
    c: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let rows = c.nrows();
    let cx = c * x;
    let scale = 1.0;
    let mut sides: Vec<Side> = (0..rows)
        .map(|i| classify(y[i] + scale * (cx[i] - u[i]), y[i] + scale * (cx[i] - l[i])))
        .collect();
    let mut out = None;
    for _ in 0..(2 * rows + 4) {
        let (zp, yp) = solve_active(prob, c, l, u, &sides)?;
        let czp = c * &zp;
        let next: Vec<Side> = (0..rows)
            .map(|i| {
                classify(
                    yp[i] + scale * (czp[i] - u[i]),
                    yp[i] + scale * (czp[i] - l[i]),
                )
            })
            .collect();
        out = Some((zp, yp));
        if next == sides {
            break;
        }
        sides = next;
    }
    out
}

fn classify(upper_test: f64, lower_test: f64) -> Side {
    if upper_test > 0.0 {
        Side::Upper
    } else if lower_test < 0.0 {
        Side::Lower
    } else {
        Side::Inactive
    }
}

/// Solves the KKT system with the given rows held at their bound, using a
/// regularized factorization and iterative refinement on the exact system.
fn solve_active(
    prob: &QpProblem,
    c: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    sides: &[Side],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = prob.dim();
    let active: Vec<(usize, f64)> = sides
        .iter()
        .enumerate()
        .filter_map(|(i, s)| match s {
            Side::Upper if u[i].is_finite() => Some((i, u[i])),
            Side::Lower if l[i].is_finite() => Some((i, l[i])),
            _ => None,
        })
        .collect();
    let k = active.len();
    let mut exact = DMatrix::zeros(d + k, d + k);
    exact.view_mut((0, 0), (d, d)).copy_from(&prob.p);
    let mut rhs = DVector::zeros(d + k);
    rhs.rows_mut(0, d).copy_from(&(-&prob.q));
    for (r, (i, bound)) in active.iter().enumerate() {
        let row = c.row(*i);
        exact.view_mut((d + r, 0), (1, d)).copy_from(&row);
        exact
            .view_mut((0, d + r), (d, 1))
            .copy_from(&row.transpose());
        rhs[d + r] = *bound;
    }
    let mut reg = exact.clone();
    for i in 0..d {
        reg[(i, i)] += POLISH_DELTA;
    }
    for i in d..d + k {
        reg[(i, i)] -= POLISH_DELTA;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..25 {
        let res = &rhs - &exact * &sol;
        if res.amax() <= 1e-15 * (1.0 + rhs.amax()) {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let z = sol.rows(0, d).into_owned();
    let mut y = DVector::zeros(c.nrows());
    for (r, (i, _)) in active.iter().enumerate() {
        y[*i] = sol[d + r];
    }
    Some((z, y))
}
