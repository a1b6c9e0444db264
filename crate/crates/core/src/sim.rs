//! Seed-reproducible closed-loop simulation.
//!
//! Every run `i` of a campaign owns two ChaCha8 streams (noise and mode jumps)
//! keyed by `splitmix64(master_seed ^ splitmix64(i + φ))`, where `φ` is the
//! 64-bit golden-ratio constant. Run `i` therefore sees the same draws whether
//! or not any other run executed, and in whatever order.
//!
//! Gaussian draws use the Marsaglia polar method on 53-bit uniforms.

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rhc::{RhcController, SLACK_ZERO};

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const NOISE_STREAM: u64 = 1;
const MODE_STREAM: u64 = 2;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn run_seed(&self, run: u64) -> u64 {
        splitmix64(self.master_seed ^ splitmix64(run.wrapping_add(GOLDEN_GAMMA)))
    }

    pub fn streams(&self, run: u64) -> RunStreams {
        let seed = self.run_seed(run);
        RunStreams {
            noise: SimRng::new(seed, NOISE_STREAM),
            modes: SimRng::new(seed, MODE_STREAM),
        }
    }
}

/// A uniform/Gaussian source over one ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, spare: None }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        loop {
            let a = 2.0 * self.uniform() - 1.0;
            let b = 2.0 * self.uniform() - 1.0;
            let s = a * a + b * b;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(b * f);
                return a * f;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunStreams {
    pub noise: SimRng,
    pub modes: SimRng,
}

/// `n` independent standard normals.
pub fn sample_gaussian(rng: &mut SimRng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.standard_normal()))
}

/// Inverse-transform pick of a 1-based mode from a uniform `u ∈ [0, 1)`.
///
/// Picks the smallest `j` with positive probability and `u <= Σ_{i<=j} p_i`,
/// so a draw landing exactly on a cumulative sum resolves to the lower index.
pub fn select_mode(u: f64, row: &DVector<f64>) -> Result<usize> {
    let valid = !row.is_empty()
        && row.iter().all(|p| p.is_finite() && *p >= 0.0)
        && (row.sum() - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(Error::Dimension(format!(
            "not a probability row: {:?}",
            row.as_slice()
        )));
    }
    let mut cum = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        cum += p;
        last = j;
        if u <= cum {
            return Ok(j + 1);
        }
    }
    Ok(last + 1)
}

pub fn sample_mode(rng: &mut SimRng, row: &DVector<f64>) -> Result<usize> {
    select_mode(rng.uniform(), row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Solve the one-step problem at every step.
    #[default]
    Rhc,
    /// Apply `u = K_θ x` only (`ν ≡ 0`).
    FeedbackOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RolloutOptions {
    pub zero_noise: bool,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepControl {
    pub nu: DVector<f64>,
    pub rho: f64,
    pub u: DVector<f64>,
    pub jstar: f64,
    /// `w_k`, the noise applied after this step's input.
    pub noise: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub theta: usize,
    pub in_c1: bool,
    /// `H_j(k) - G_j x_k` over the chance-constraint rows.
    pub margins: DVector<f64>,
    /// Absent on the final record.
    pub control: Option<StepControl>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Largest `|x_{k+1} - (Ãx_k + Bν_k) - w_k|` over the trajectory.
    pub fn replay_error(&self, ctl: &RhcController) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for pair in self.records.windows(2) {
            let (now, next) = (&pair[0], &pair[1]);
            let c = now
                .control
                .as_ref()
                .ok_or_else(|| Error::Dimension("missing control record".into()))?;
            let mean = ctl.predicted_mean(now.theta, &now.x, &c.nu)?;
            worst = worst.max((&next.x - mean - &c.noise).amax());
        }
        Ok(worst)
    }
}

/// Closed-loop rollout over `steps` transitions.
pub fn rollout(
    ctl: &RhcController,
    x0: &DVector<f64>,
    theta0: usize,
    steps: usize,
    streams: &mut RunStreams,
    options: RolloutOptions,
) -> Result<Trajectory> {
    let model = &ctl.model;
    let n = model.n();
    let m = model.m();
    if x0.len() != n {
        return Err(Error::Dimension(format!(
            "x0 has length {}, expected {n}",
            x0.len()
        )));
    }
    model.mode_index(theta0)?;

    let mut records = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut theta = theta0;
    for k in 0..=steps {
        let in_c1 = model.region.contains(&x, k);
        let margins = ctl.constraints.margins(&x, k);
        if k == steps {
            records.push(StepRecord {
                k,
                x,
                theta,
                in_c1,
                margins,
                control: None,
            });
            break;
        }
        let at = |e: Error| Error::AtStep {
            step: k,
            source: Box::new(e),
        };
        let (nu, rho, jstar) = match options.policy {
            Policy::Rhc => {
                let s = ctl.step(theta, &x, k).map_err(at)?;
                (s.nu, s.rho, s.jstar)
            }
            Policy::FeedbackOnly => (DVector::zeros(m), 0.0, f64::NAN),
        };
        let i = theta - 1;
        let u = &ctl.gains[i] * &x + &nu;
        let noise = if options.zero_noise {
            DVector::zeros(n)
        } else {
            sample_gaussian(&mut streams.noise, n)
        };
        let row = model.transition_row(theta, &x, k).map_err(at)?;
        let next_theta = sample_mode(&mut streams.modes, &row).map_err(at)?;
        let next_x = ctl.predicted_mean(theta, &x, &nu).map_err(at)? + &noise;
        records.push(StepRecord {
            k,
            x,
            theta,
            in_c1,
            margins,
            control: Some(StepControl {
                nu,
                rho,
                u,
                jstar,
                noise,
            }),
        });
        x = next_x;
        theta = next_theta;
    }
    Ok(Trajectory { records })
}

/// A campaign: controller, initial condition and seeding.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub controller: RhcController,
    pub x0: DVector<f64>,
    pub theta0: usize,
    pub steps: usize,
    pub rng: RngSpec,
    pub options: RolloutOptions,
}

impl Experiment {
    pub fn run(&self, run: u64) -> Result<Trajectory> {
        let mut streams = self.rng.streams(run);
        rollout(
            &self.controller,
            &self.x0,
            self.theta0,
            self.steps,
            &mut streams,
            self.options,
        )
    }

    /// All runs, in run order; `parallel` changes the schedule only.
    pub fn ensemble(&self, runs: usize, parallel: bool) -> Result<Vec<Trajectory>> {
        if parallel {
            (0..runs as u64)
                .into_par_iter()
                .map(|r| self.run(r))
                .collect()
        } else {
            (0..runs as u64).map(|r| self.run(r)).collect()
        }
    }
}

/// Aggregates of an ensemble. Index `k` of per-step vectors is the step.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub steps: usize,
    /// `[k][j]`: fraction of runs with `G_j x_k <= H_j(k)`; entry 0 is the initial state.
    pub row_satisfaction: Vec<Vec<f64>>,
    /// Fraction of runs with every row satisfied at step `k`.
    pub joint_satisfaction: Vec<f64>,
    /// `[k][j]`: satisfaction among runs whose step `k - 1` used no slack (`NaN` if none).
    pub row_satisfaction_no_slack: Vec<Vec<f64>>,
    /// Number of runs whose step `k - 1` used no slack.
    pub no_slack_runs: Vec<usize>,
    /// Ensemble mean of `‖x_k‖²`.
    pub mean_sq_norm: Vec<f64>,
    /// Ensemble mean of each state coordinate.
    pub mean_state: Vec<DVector<f64>>,
    /// Fraction of runs with `ρ_k > 1e-9` (steps `0..T`).
    pub slack_rate: Vec<f64>,
    /// Ensemble mean of `ρ_k` (steps `0..T`).
    pub mean_slack: Vec<f64>,
    /// Ensemble mean of `J*_k` (steps `0..T`).
    pub mean_jstar: Vec<f64>,
    /// Fraction of all controlled steps with slack in use.
    pub slack_usage: f64,
    /// Sum of `ρ_k` over every run and step.
    pub total_slack: f64,
    pub max_slack: f64,
    /// Row violations over steps `1..=T`, counted per (run, step, row).
    pub row_violations: usize,
    /// Steps `1..=T` with at least one row violated, counted per (run, step).
    pub joint_violations: usize,
    pub diagnostics: MomentDiagnostics,
}

/// Runs `runs` rollouts and aggregates them.
pub fn monte_carlo(exp: &Experiment, runs: usize) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(Error::Config("at least one run is required".into()));
    }
    let trajectories = exp.ensemble(runs, true)?;
    Ok(summarize(&trajectories))
}

pub fn summarize(trajectories: &[Trajectory]) -> MonteCarloReport {
    let runs = trajectories.len();
    let steps = trajectories.first().map_or(0, Trajectory::steps);
    let rows = trajectories
        .first()
        .map_or(0, |t| t.records[0].margins.len());
    let n = trajectories.first().map_or(0, |t| t.records[0].x.len());
    let rf = runs as f64;

    let mut row_sat = vec![vec![0usize; rows]; steps + 1];
    let mut row_sat_ns = vec![vec![0usize; rows]; steps + 1];
    let mut no_slack_runs = vec![0usize; steps + 1];
    let mut joint_sat = vec![0usize; steps + 1];
    let mut sq = vec![0.0; steps + 1];
    let mut mean_state = vec![DVector::zeros(n); steps + 1];
    let mut slack_steps = vec![0usize; steps];
    let mut slack_sum = vec![0.0; steps];
    let mut jstar_sum = vec![0.0; steps];
    let mut max_slack: f64 = 0.0;
    let mut row_violations = 0;
    let mut joint_violations = 0;

    for t in trajectories {
        for rec in &t.records {
            let k = rec.k;
            let ok: Vec<bool> = rec.margins.iter().map(|m| *m >= 0.0).collect();
            let prev_no_slack = k > 0
                && t.records[k - 1]
                    .control
                    .as_ref()
                    .is_some_and(|c| c.rho <= SLACK_ZERO);
            if prev_no_slack {
                no_slack_runs[k] += 1;
            }
            for (j, &sat) in ok.iter().enumerate() {
                if sat {
                    row_sat[k][j] += 1;
                    if prev_no_slack {
                        row_sat_ns[k][j] += 1;
                    }
                } else if k > 0 {
                    row_violations += 1;
                }
            }
            if ok.iter().all(|&b| b) {
                joint_sat[k] += 1;
            } else if k > 0 {
                joint_violations += 1;
            }
            sq[k] += rec.x.norm_squared();
            mean_state[k] += &rec.x;
            if let Some(c) = &rec.control {
                if c.rho > SLACK_ZERO {
                    slack_steps[k] += 1;
                }
                slack_sum[k] += c.rho;
                jstar_sum[k] += c.jstar;
                max_slack = max_slack.max(c.rho);
            }
        }
    }

    let frac = |c: usize| c as f64 / rf;
    let mean_sq_norm: Vec<f64> = sq.iter().map(|s| s / rf).collect();
    let x0_sq = trajectories
        .first()
        .map_or(0.0, |t| t.records[0].x.norm_squared());
    let total_slack = slack_sum.iter().sum();
    let controlled = (runs * steps).max(1) as f64;
    MonteCarloReport {
        runs,
        steps,
        row_satisfaction: row_sat
            .iter()
            .map(|r| r.iter().map(|&c| frac(c)).collect())
            .collect(),
        joint_satisfaction: joint_sat.iter().map(|&c| frac(c)).collect(),
        row_satisfaction_no_slack: row_sat_ns
            .iter()
            .zip(&no_slack_runs)
            .map(|(r, &e)| {
                r.iter()
                    .map(|&c| {
                        if e == 0 {
                            f64::NAN
                        } else {
                            c as f64 / e as f64
                        }
                    })
                    .collect()
            })
            .collect(),
        no_slack_runs,
        diagnostics: moment_diagnostics(&mean_sq_norm, x0_sq),
        mean_sq_norm,
        mean_state: mean_state.into_iter().map(|s| s / rf).collect(),
        slack_rate: slack_steps.iter().map(|&c| frac(c)).collect(),
        mean_slack: slack_sum.iter().map(|s| s / rf).collect(),
        mean_jstar: jstar_sum.iter().map(|s| s / rf).collect(),
        slack_usage: slack_steps.iter().sum::<usize>() as f64 / controlled,
        total_slack,
        max_slack,
        row_violations,
        joint_violations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundedness {
    Bounded,
    NotBounded,
}

impl std::fmt::Display for Boundedness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundedness::Bounded => "bounded",
            Boundedness::NotBounded => "not bounded",
        })
    }
}

/// Fit of `E‖x_k‖² <= β₁‖x₀‖²qᵏ + β₂` and the growth verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDiagnostics {
    /// `None` when the sequence is identically zero.
    pub q: Option<f64>,
    pub beta1: f64,
    /// Lifted so the bound holds at every step.
    pub beta2: f64,
    /// RMS residual of the least-squares fit before lifting.
    pub residual: f64,
    pub late_average: f64,
    pub mid_average: f64,
    pub max_over_median: f64,
    pub verdict: Boundedness,
}

const Q_GRID: usize = 999;

/// Fits the decay-plus-constant envelope and judges growth.
///
/// The late window is the last quarter of the sequence and the mid window the
/// quarter right before it. The sequence counts as bounded when the late
/// average is at most twice the mid average and no entry exceeds ten times
/// the median.
pub fn moment_diagnostics(mean_sq: &[f64], x0_sq: f64) -> MomentDiagnostics {
    let len = mean_sq.len();
    let window = (len / 4).max(1);
    let late_start = len.saturating_sub(window);
    let mid_start = late_start.saturating_sub(window);
    let avg = |s: &[f64]| {
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    };
    let late_average = avg(&mean_sq[late_start..]);
    let mid_average = if late_start > mid_start {
        avg(&mean_sq[mid_start..late_start])
    } else {
        late_average
    };

    let mut sorted = mean_sq.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.is_empty() {
        0.0
    } else if len % 2 == 1 {
        sorted[len / 2]
    } else {
        0.5 * (sorted[len / 2 - 1] + sorted[len / 2])
    };
    let max = sorted.last().copied().unwrap_or(0.0);
    let max_over_median = if max == 0.0 {
        0.0
    } else if median > 0.0 {
        max / median
    } else {
        f64::INFINITY
    };
    let finite = mean_sq.iter().all(|v| v.is_finite());
    let verdict = if finite && late_average <= 2.0 * mid_average && max <= 10.0 * median {
        Boundedness::Bounded
    } else {
        Boundedness::NotBounded
    };

    if mean_sq.iter().all(|&v| v == 0.0) {
        return MomentDiagnostics {
            q: None,
            beta1: 1.0,
            beta2: 0.0,
            residual: 0.0,
            late_average,
            mid_average,
            max_over_median,
            verdict,
        };
    }

    let scale = if x0_sq > 0.0 { x0_sq } else { 1.0 };
    let mut best = (f64::INFINITY, 0.5, 1.0, 0.0);
    for g in 1..=Q_GRID {
        let q = g as f64 / (Q_GRID + 1) as f64;
        let basis: Vec<f64> = (0..len).map(|k| scale * q.powi(k as i32)).collect();
        let (b1, b2) = fit_decay(&basis, mean_sq);
        let rss: f64 = basis
            .iter()
            .zip(mean_sq)
            .map(|(b, y)| (b1 * b + b2 - y).powi(2))
            .sum();
        let rms = (rss / len as f64).sqrt();
        if rms < best.0 {
            best = (rms, q, b1, b2);
        }
    }
    let (residual, q, beta1, mut beta2) = best;
    let lift = (0..len)
        .map(|k| mean_sq[k] - beta1 * scale * q.powi(k as i32) - beta2)
        .fold(0.0, f64::max);
    beta2 += lift;
    MomentDiagnostics {
        q: Some(q),
        beta1,
        beta2,
        residual,
        late_average,
        mid_average,
        max_over_median,
        verdict,
    }
}

/// Least squares `y ≈ β₁ b + β₂` over `β₁ >= 1`, `β₂ >= 0`.
fn fit_decay(basis: &[f64], y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mb = basis.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sbb: f64 = basis.iter().map(|b| (b - mb).powi(2)).sum();
    let sby: f64 = basis.iter().zip(y).map(|(b, v)| (b - mb) * (v - my)).sum();
    let rss = |b1: f64, b2: f64| -> f64 {
        basis
            .iter()
            .zip(y)
            .map(|(b, v)| (b1 * b + b2 - v).powi(2))
            .sum()
    };
    let b1 = if sbb > 0.0 { sby / sbb } else { 1.0 };
    if b1 >= 1.0 && my - b1 * mb >= 0.0 {
        return (b1, my - b1 * mb);
    }
    // optimum on the boundary: either β₁ = 1 or β₂ = 0
    let on_b1 = (1.0, (my - mb).max(0.0));
    let bb: f64 = basis.iter().map(|b| b * b).sum();
    let by: f64 = basis.iter().zip(y).map(|(b, v)| b * v).sum();
    let on_b2 = (if bb > 0.0 { (by / bb).max(1.0) } else { 1.0 }, 0.0);
    if rss(on_b1.0, on_b1.1) <= rss(on_b2.0, on_b2.1) {
        on_b1
    } else {
        on_b2
    }
}
