//! TOML documents: the run configuration and the gains file.
//!
//! Matrices are row-major nested arrays; per-mode matrices are arrays of
//! those. Modes are listed in order 1..=N.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chance::{ChanceMode, ChanceSpec};
use crate::error::{Error, Result};
use crate::lmi::{lyapunov_from_x, SynthesisResult};
use crate::model::{PolyhedronSchedule, SdjlsModel, TransitionLaw};
use crate::rhc::{InputSet, RhcController, RhcWeights};
use crate::sim::{Experiment, RngSpec, RolloutOptions};

/// Row-major matrix.
pub type Rows = Vec<Vec<f64>>;

/// The bundled benchmark configuration.
pub const BENCHMARK_CONFIG_TOML: &str = include_str!("../fixtures/benchmark.toml");
/// The published `X`, `Y` and gain table.
pub const BENCHMARK_GAINS_TOML: &str = include_str!("../fixtures/benchmark_gains.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelBlock,
    pub weights: WeightsBlock,
    pub chance: ChanceBlock,
    pub input: InputBlock,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub modes: usize,
    #[serde(rename = "A")]
    pub a: Vec<Rows>,
    #[serde(rename = "B")]
    pub b: Vec<Rows>,
    pub lambda: Rows,
    pub mu: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "H0")]
    pub h0: Vec<f64>,
    #[serde(rename = "Hslope")]
    pub h_slope: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsBlock {
    #[serde(rename = "Q")]
    pub q: Vec<Rows>,
    #[serde(rename = "R")]
    pub r: Vec<Rows>,
    #[serde(rename = "Psi")]
    pub psi: Vec<Rows>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChanceModeName {
    Individual,
    Joint,
}

impl From<ChanceModeName> for ChanceMode {
    fn from(m: ChanceModeName) -> Self {
        match m {
            ChanceModeName::Individual => ChanceMode::Individual,
            ChanceModeName::Joint => ChanceMode::Joint,
        }
    }
}

impl From<ChanceMode> for ChanceModeName {
    fn from(m: ChanceMode) -> Self {
        match m {
            ChanceMode::Individual => ChanceModeName::Individual,
            ChanceMode::Joint => ChanceModeName::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChanceBlock {
    pub xi: f64,
    pub mode: ChanceModeName,
    /// Separate constraint polyhedron; defaults to the model's region.
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Rows>,
    #[serde(rename = "H0", default, skip_serializing_if = "Option::is_none")]
    pub h0: Option<Vec<f64>>,
    #[serde(rename = "Hslope", default, skip_serializing_if = "Option::is_none")]
    pub h_slope: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn default_theta0() -> usize {
    1
}

fn default_steps() -> usize {
    20
}

fn default_runs() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub x0: Vec<f64>,
    #[serde(default = "default_theta0")]
    pub theta0: usize,
    #[serde(rename = "T", default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    pub formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: vec!["csv".into(), "svg".into()],
        }
    }
}

pub fn to_matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what}: ragged matrix")));
    }
    Ok(DMatrix::from_row_iterator(
        r,
        c,
        rows.iter().flatten().copied(),
    ))
}

/// Like [`to_matrix`], but an empty row list becomes `0 x cols`.
fn to_matrix_cols(rows: &Rows, cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, cols));
    }
    to_matrix(rows, what)
}

pub fn from_matrix(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrices(list: &[Rows], what: &str) -> Result<Vec<DMatrix<f64>>> {
    list.iter()
        .enumerate()
        .map(|(i, r)| to_matrix(r, &format!("{what}[{}]", i + 1)))
        .collect()
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn benchmark() -> Self {
        Self::from_toml(BENCHMARK_CONFIG_TOML).expect("bundled config parses")
    }

    /// Builds and validates the plant.
    pub fn model(&self) -> Result<SdjlsModel> {
        let mb = &self.model;
        let a = matrices(&mb.a, "A")?;
        let b = matrices(&mb.b, "B")?;
        if a.len() != mb.modes
            || a.first().is_some_and(|a| a.nrows() != mb.n)
            || b.first().is_some_and(|b| b.ncols() != mb.m)
        {
            return Err(Error::Config(format!(
                "declared dimensions n={}, m={}, N={} do not match the matrices",
                mb.n, mb.m, mb.modes
            )));
        }
        let region = PolyhedronSchedule::new(
            to_matrix_cols(&mb.g, mb.n, "G")?,
            DVector::from_vec(mb.h0.clone()),
            DVector::from_vec(mb.h_slope.clone()),
        );
        SdjlsModel::new(
            a,
            b,
            TransitionLaw {
                lambda: to_matrix(&mb.lambda, "lambda")?,
                mu: to_matrix(&mb.mu, "mu")?,
            },
            region,
        )
    }

    pub fn weights(&self) -> Result<RhcWeights> {
        Ok(RhcWeights {
            q: matrices(&self.weights.q, "Q")?,
            r: matrices(&self.weights.r, "R")?,
            psi: matrices(&self.weights.psi, "Psi")?,
            alpha: self.weights.alpha,
        })
    }

    pub fn input_set(&self) -> InputSet {
        InputSet {
            lower: DVector::from_vec(self.input.lower.clone()),
            upper: DVector::from_vec(self.input.upper.clone()),
        }
    }

    pub fn chance_spec(&self) -> ChanceSpec {
        ChanceSpec {
            xi: self.chance.xi,
            mode: self.chance.mode.into(),
        }
    }

    /// The chance-constraint polyhedron; the model's region unless overridden.
    pub fn constraint_region(&self, model: &SdjlsModel) -> Result<PolyhedronSchedule> {
        let c = &self.chance;
        match (&c.g, &c.h0) {
            (None, None) => Ok(model.region.clone()),
            (Some(g), Some(h0)) => {
                let h_slope = c.h_slope.clone().unwrap_or_else(|| vec![0.0; h0.len()]);
                Ok(PolyhedronSchedule::new(
                    to_matrix_cols(g, model.n(), "chance.G")?,
                    DVector::from_vec(h0.clone()),
                    DVector::from_vec(h_slope),
                ))
            }
            _ => Err(Error::Config(
                "chance.G and chance.H0 must be given together".into(),
            )),
        }
    }

    pub fn controller(&self, gains: Vec<DMatrix<f64>>) -> Result<RhcController> {
        let model = self.model()?;
        let region = self.constraint_region(&model)?;
        RhcController::with_constraints(
            model,
            gains,
            self.weights()?,
            self.input_set(),
            self.chance_spec(),
            region,
        )
    }

    pub fn experiment(&self, gains: Vec<DMatrix<f64>>) -> Result<Experiment> {
        Ok(Experiment {
            controller: self.controller(gains)?,
            x0: DVector::from_vec(self.experiment.x0.clone()),
            theta0: self.experiment.theta0,
            steps: self.experiment.steps,
            rng: RngSpec::new(self.experiment.master_seed),
            options: RolloutOptions::default(),
        })
    }
}

/// Per-mode entry of the gains document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeGains {
    pub mode: usize,
    #[serde(rename = "X")]
    pub x: Rows,
    #[serde(rename = "Y")]
    pub y: Rows,
    #[serde(rename = "K")]
    pub k: Rows,
    /// Defaults to `X⁻¹`.
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsFile {
    /// Largest certified eigenvalue; `nan` when not produced by synthesis.
    pub margin: f64,
    pub iterations: usize,
    #[serde(rename = "mode")]
    pub modes: Vec<ModeGains>,
}

impl GainsFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_result(res: &SynthesisResult) -> Self {
        let modes = (0..res.x.len())
            .map(|i| ModeGains {
                mode: i + 1,
                x: from_matrix(&res.x[i]),
                y: from_matrix(&res.y[i]),
                k: from_matrix(&res.k[i]),
                p: Some(from_matrix(&res.p[i])),
            })
            .collect();
        Self {
            margin: res.margin,
            iterations: res.iterations,
            modes,
        }
    }

    pub fn to_result(&self) -> Result<SynthesisResult> {
        for (i, g) in self.modes.iter().enumerate() {
            if g.mode != i + 1 {
                return Err(Error::Config(format!(
                    "gains entries must be listed for modes 1..=N in order, found mode {}",
                    g.mode
                )));
            }
        }
        let get = |f: fn(&ModeGains) -> &Rows, what: &str| -> Result<Vec<DMatrix<f64>>> {
            self.modes.iter().map(|g| to_matrix(f(g), what)).collect()
        };
        let x = get(|g| &g.x, "X")?;
        let p = if self.modes.iter().all(|g| g.p.is_some()) {
            self.modes
                .iter()
                .map(|g| to_matrix(g.p.as_ref().expect("checked"), "P"))
                .collect::<Result<_>>()?
        } else {
            lyapunov_from_x(&x)?
        };
        Ok(SynthesisResult {
            y: get(|g| &g.y, "Y")?,
            k: get(|g| &g.k, "K")?,
            x,
            p,
            margin: self.margin,
            iterations: self.iterations,
        })
    }

    /// The published solution shipped with the crate.
    pub fn benchmark() -> Self {
        Self::from_toml(BENCHMARK_GAINS_TOML).expect("bundled gains parse")
    }
}
