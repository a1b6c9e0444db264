//! Independent reference solvers shared by integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sdjls_core::qp::QpProblem;
use sdjls_core::sim::SimRng;

/// Projected gradient with step `1/L` for box-only problems.
pub fn projected_gradient(prob: &QpProblem, iters: usize) -> DVector<f64> {
    assert_eq!(
        prob.a_in.nrows(),
        0,
        "projected gradient needs a box-only problem"
    );
    let d = prob.dim();
    let l = prob.p.clone().symmetric_eigenvalues().max();
    let step = 1.0 / l;
    let p: Vec<f64> = prob.p.iter().copied().collect(); // column-major
    let mut z: Vec<f64> = (0..d)
        .map(|i| 0.0f64.clamp(prob.lower[i], prob.upper[i]))
        .collect();
    let mut grad = vec![0.0; d];
    for _ in 0..iters {
        for (i, g) in grad.iter_mut().enumerate() {
            *g = prob.q[i] + (0..d).map(|j| p[i + j * d] * z[j]).sum::<f64>();
        }
        for i in 0..d {
            z[i] = (z[i] - step * grad[i]).clamp(prob.lower[i], prob.upper[i]);
        }
    }
    DVector::from_vec(z)
}

/// Exact minimizer of a strictly convex QP by enumerating active sets.
pub fn enumerate_active_sets(prob: &QpProblem) -> DVector<f64> {
    let d = prob.dim();
    // every constraint as (a, b) meaning a·z <= b
    let mut rows: Vec<(DVector<f64>, f64)> = prob
        .a_in
        .row_iter()
        .zip(prob.b_in.iter())
        .map(|(r, b)| (r.transpose(), *b))
        .collect();
    for i in 0..d {
        let e = DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 });
        if prob.upper[i].is_finite() {
            rows.push((e.clone(), prob.upper[i]));
        }
        if prob.lower[i].is_finite() {
            rows.push((-e, -prob.lower[i]));
        }
    }
    let feasible = |z: &DVector<f64>| {
        rows.iter()
            .all(|(a, b)| a.dot(z) <= b + 1e-9 * (1.0 + b.abs()))
    };
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << rows.len()) {
        let active: Vec<usize> = (0..rows.len()).filter(|j| mask & (1 << j) != 0).collect();
        if active.len() > d {
            continue;
        }
        let s = d + active.len();
        let mut kkt = DMatrix::zeros(s, s);
        let mut rhs = DVector::zeros(s);
        kkt.view_mut((0, 0), (d, d)).copy_from(&prob.p);
        rhs.rows_mut(0, d).copy_from(&(-&prob.q));
        for (t, &j) in active.iter().enumerate() {
            for c in 0..d {
                kkt[(d + t, c)] = rows[j].0[c];
                kkt[(c, d + t)] = rows[j].0[c];
            }
            rhs[d + t] = rows[j].1;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let z = sol.rows(0, d).into_owned();
        if !feasible(&z) || sol.rows(d, active.len()).iter().any(|&m| m < -1e-9) {
            continue;
        }
        let f = prob.objective(&z);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, z));
        }
    }
    best.expect("feasible strictly convex instance").1
}

/// Random strictly convex instance of dimension `d` with `rows` general rows,
/// feasible by construction.
pub fn random_qp(seed: u64, d: usize, rows: usize) -> QpProblem {
    let mut rng = SimRng::new(seed, 7);
    let mut u = || rng.uniform() * 2.0 - 1.0;
    let m = DMatrix::from_fn(d, d, |_, _| u());
    let p = m.transpose() * &m + DMatrix::identity(d, d) * 0.1;
    let q = DVector::from_fn(d, |_, _| 5.0 * u());
    let lower = DVector::from_fn(d, |_, _| -1.0 - u().abs());
    let upper = DVector::from_fn(d, |_, _| 1.0 + u().abs());
    let a_in = DMatrix::from_fn(rows, d, |_, _| u());
    // an interior point keeps the rows satisfiable
    let z0 = DVector::from_fn(d, |_, _| 0.5 * u());
    let b_in = &a_in * &z0 + DVector::from_fn(rows, |_, _| 0.3 * u().abs());
    QpProblem {
        p,
        q,
        c0: 0.0,
        a_in,
        b_in,
        lower,
        upper,
    }
}
