//! Deterministic surrogates for one-step chance constraints
//! `Pr{G x_{k+1} <= H(k+1) | x_k, θ_k} >= ξ` under `w_k ~ N(0, I)`.
//!
//! Both routes shift each row of the predicted-mean constraint by
//! `‖G_j‖₂ · δ`; they differ only in `δ`:
//!
//! * individual rows: `δ = Φ⁻¹(ξ)`,
//! * joint (inscribed ellipsoid): `δ = sqrt(χ²_n⁻¹(ξ))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::PolyhedronSchedule;
use crate::prob::{chi_square_quantile, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChanceMode {
    Individual,
    Joint,
}

impl std::fmt::Display for ChanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChanceMode::Individual => "individual",
            ChanceMode::Joint => "joint",
        })
    }
}

impl std::str::FromStr for ChanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" => Ok(ChanceMode::Individual),
            "joint" => Ok(ChanceMode::Joint),
            other => Err(Error::Config(format!("unknown chance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChanceSpec {
    pub xi: f64,
    pub mode: ChanceMode,
}

/// Rows `g_j · mean(x_{k+1}) <= rhs_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenedConstraints {
    pub g: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub offsets: DVector<f64>,
}

impl TightenedConstraints {
    pub fn rows(&self) -> usize {
        self.g.nrows()
    }

    /// Largest row violation `g_j · mean - rhs_j` (negative when strictly inside).
    pub fn max_violation(&self, mean: &DVector<f64>) -> f64 {
        (&self.g * mean - &self.rhs)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn tighten_with(region: &PolyhedronSchedule, k: usize, delta: f64) -> TightenedConstraints {
    let h_next = region.h(k + 1);
    let offsets = DVector::from_iterator(
        region.rows(),
        region.g.row_iter().map(|row| row.norm() * delta),
    );
    TightenedConstraints {
        g: region.g.clone(),
        rhs: h_next - &offsets,
        offsets,
    }
}

/// Quantile scale `δ` for the given spec and state dimension.
pub fn quantile_scale(spec: ChanceSpec, n: usize) -> Result<f64> {
    match spec.mode {
        ChanceMode::Individual => Ok(normal_quantile(spec.xi)?.value),
        ChanceMode::Joint => Ok(chi_square_quantile(spec.xi, n as u32)?.value.sqrt()),
    }
}

/// Individual rows: `offset_j = ‖G_j‖ Φ⁻¹(ξ)`, against `H(k+1)`.
pub fn tighten_individual(
    region: &PolyhedronSchedule,
    k: usize,
    xi: f64,
) -> Result<TightenedConstraints> {
    let delta = normal_quantile(xi)?.value;
    Ok(tighten_with(region, k, delta))
}

/// Joint rows: `offset_j = ‖G_j‖ sqrt(χ²_n⁻¹(ξ))`, against `H(k+1)`.
pub fn tighten_joint(
    region: &PolyhedronSchedule,
    k: usize,
    xi: f64,
    n: usize,
) -> Result<TightenedConstraints> {
    let delta = chi_square_quantile(xi, n as u32)?.value.sqrt();
    Ok(tighten_with(region, k, delta))
}

pub fn tighten(
    region: &PolyhedronSchedule,
    k: usize,
    spec: ChanceSpec,
    n: usize,
) -> Result<TightenedConstraints> {
    match spec.mode {
        ChanceMode::Individual => tighten_individual(region, k, spec.xi),
        ChanceMode::Joint => tighten_joint(region, k, spec.xi, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::benchmark_region;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    // Box-Muller, kept separate from the sampler in `sim`
    fn standard_normal(rng: &mut impl Rng) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[test]
    fn individual_benchmark_row() {
        let t = tighten_individual(&benchmark_region(), 0, 0.85).unwrap();
        assert_abs_diff_eq!(t.rhs[1], 5.5 - 1.036433, epsilon = 1e-6);
        assert_abs_diff_eq!(t.rhs[1], 4.463567, epsilon = 1e-6);
        assert_abs_diff_eq!(t.rhs[0], -2.5 - 1.036433, epsilon = 1e-6);
    }

    #[test]
    fn median_has_no_offset() {
        let region = benchmark_region();
        let t = tighten_individual(&region, 3, 0.5).unwrap();
        assert_eq!(t.offsets, DVector::zeros(2));
        assert_eq!(t.rhs, region.h(4));
    }

    #[test]
    fn scaling_a_row_scales_its_offset() {
        let region = benchmark_region();
        let mut doubled = region.clone();
        doubled.g.row_mut(1).scale_mut(2.0);
        doubled.h0[1] *= 2.0;
        doubled.h_slope[1] *= 2.0;
        let a = tighten_individual(&region, 0, 0.9).unwrap();
        let b = tighten_individual(&doubled, 0, 0.9).unwrap();
        assert_abs_diff_eq!(b.offsets[1], 2.0 * a.offsets[1], epsilon = 1e-12);
    }

    #[test]
    fn joint_values() {
        let region = benchmark_region();
        let zero = tighten_joint(&region, 0, 0.0, 2).unwrap();
        assert_eq!(zero.offsets, DVector::zeros(2));
        let delta = (-2.0 * 0.15f64.ln()).sqrt();
        assert_abs_diff_eq!(delta, 1.947881, epsilon = 1e-6);
        let t = tighten_joint(&region, 0, 0.85, 2).unwrap();
        assert_abs_diff_eq!(t.offsets[0], delta, epsilon = 1e-10);
        assert_abs_diff_eq!(t.rhs[1], 3.552119, epsilon = 1e-6);
    }

    #[test]
    fn domain_errors() {
        let region = benchmark_region();
        assert!(tighten_joint(&region, 0, 1.0, 2).is_err());
        assert!(tighten_individual(&region, 0, 0.0).is_err());
        assert!(tighten_individual(&region, 0, 1.0).is_err());
    }

    #[test]
    fn joint_is_more_conservative() {
        let region = benchmark_region();
        for n in 1..=5 {
            for i in 0..=40 {
                let xi = 0.5 + 0.49 * i as f64 / 40.0;
                let ind = tighten_individual(&region, 2, xi).unwrap();
                let joint = tighten_joint(&region, 2, xi, n).unwrap();
                for j in 0..2 {
                    assert!(joint.offsets[j] + 1e-12 >= ind.offsets[j]);
                }
            }
        }
    }

    #[test]
    fn offsets_monotone_in_xi() {
        let region = benchmark_region();
        let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in 1..100 {
            let xi = i as f64 / 100.0;
            let ind = tighten_individual(&region, 0, xi).unwrap().offsets[0];
            let joint = tighten_joint(&region, 0, xi, 2).unwrap().offsets[0];
            assert!(ind >= prev.0 && joint >= prev.1);
            prev = (ind, joint);
        }
    }

    #[test]
    fn sampled_satisfaction_matches_level() {
        let region = benchmark_region();
        let draws = 100_000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for xi in [0.7, 0.85, 0.95] {
            let t = tighten_individual(&region, 0, xi).unwrap();
            // mean on the active row-2 boundary: x2 = rhs_2
            let mean = DVector::from_column_slice(&[0.0, t.rhs[1]]);
            let h = region.h(1);
            let hits = (0..draws)
                .filter(|_| {
                    let w = DVector::from_column_slice(&[
                        standard_normal(&mut rng),
                        standard_normal(&mut rng),
                    ]);
                    (region.g.row(1) * (&mean + w))[0] <= h[1]
                })
                .count();
            let freq = hits as f64 / draws as f64;
            let sigma = (xi * (1.0 - xi) / draws as f64).sqrt();
            assert!((freq - xi).abs() <= 3.0 * sigma, "xi={xi} freq={freq}");
        }
    }
}
