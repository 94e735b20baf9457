//! JSON run configuration shared by the command line front end.
//!
//! ```json
//! {
//!   "n": 2, "n2": 1,
//!   "B": [[ [[[0,0],[1,0]], [[1,0],[0,0]]] ]],
//!   "nu": 1.0,
//!   "grid": { "t_max": 5.0, "steps": 500 }
//! }
//! ```
//!
//! `B` holds `n2 x n2` blocks, each an `n x n` matrix of `[re, im]` pairs.
//! A `"constant"` real matrix may replace the bath model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{BathModel, ChannelError, Propagator, C64};
use crate::dstoch::{DStochError, DStochMatrix};
use crate::scalar::ScalarInput;
use crate::source::{ConstantSource, EvolutionSource};
use crate::volterra::{SolverConfig, TimeGrid, VolterraError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("config is missing `{0}`")]
    Missing(&'static str),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ChannelError),
    #[error(transparent)]
    Matrix(#[from] DStochError),
    #[error(transparent)]
    Grid(#[from] VolterraError),
}

pub type ComplexMatrix = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_max: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarMethod {
    March,
    Delay,
    Trig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Constant { value: f64 },
    Piecewise { tau: f64, pattern: Vec<f64> },
    Trig { mean: f64, amplitude: f64 },
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl From<InputSpec> for ScalarInput {
    fn from(s: InputSpec) -> Self {
        match s {
            InputSpec::Constant { value } => ScalarInput::Constant(value),
            InputSpec::Piecewise { tau, pattern } => ScalarInput::Piecewise { tau, pattern },
            InputSpec::Trig { mean, amplitude } => ScalarInput::Trig { mean, amplitude },
            InputSpec::Tabulated { times, values } => ScalarInput::Tabulated { times, values },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarSpec {
    pub method: ScalarMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_interval: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<ComplexMatrix>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<ComplexMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<Vec<Vec<f64>>>,
    pub nu: f64,
    pub grid: GridSpec,
    /// Time at which `series`, `simulate` and `compare` evaluate; defaults to `grid.t_max`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_conv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarSpec>,
}

fn to_complex(rows: &ComplexMatrix, n: usize, what: &str) -> Result<DMatrix<C64>, ConfigError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(ConfigError::Invalid(format!("{what} must be {n} x {n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

fn from_complex(m: &DMatrix<C64>) -> ComplexMatrix {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| [m[(i, j)].re, m[(i, j)].im])
                .collect()
        })
        .collect()
}

/// Either a bath model or a fixed matrix.
#[derive(Debug, Clone)]
pub enum ModelSource {
    Bath(Box<Propagator>),
    Constant(ConstantSource),
}

impl ModelSource {
    pub fn bath(&self) -> Option<&BathModel> {
        match self {
            Self::Bath(p) => Some(p.model()),
            Self::Constant(_) => None,
        }
    }
}

impl EvolutionSource for ModelSource {
    fn dim(&self) -> usize {
        match self {
            Self::Bath(p) => p.dim(),
            Self::Constant(c) => c.dim(),
        }
    }
    fn eval(&self, t: f64) -> DMatrix<f64> {
        match self {
            Self::Bath(p) => p.eval(t),
            Self::Constant(c) => c.eval(t),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Config describing `model` with rate `nu` on `grid`.
    pub fn from_model(model: &BathModel, nu: f64, grid: GridSpec) -> Self {
        let n2 = model.n2();
        let b = (0..n2)
            .map(|a| {
                (0..n2)
                    .map(|c| from_complex(model.block(a, c).expect("in range")))
                    .collect()
            })
            .collect();
        Self {
            n: Some(model.n()),
            n2: Some(n2),
            b: Some(b),
            basis: Some(from_complex(model.basis())),
            ..Self::bare(nu, grid)
        }
    }

    /// Config for the constant source `m`.
    pub fn from_constant(m: &DStochMatrix, nu: f64, grid: GridSpec) -> Self {
        let rows = (0..m.dim())
            .map(|i| (0..m.dim()).map(|j| m.as_matrix()[(i, j)]).collect())
            .collect();
        Self {
            constant: Some(rows),
            ..Self::bare(nu, grid)
        }
    }

    /// No model, only rate and grid (enough for the scalar commands).
    pub fn bare(nu: f64, grid: GridSpec) -> Self {
        Self {
            n: None,
            n2: None,
            b: None,
            basis: None,
            constant: None,
            nu,
            grid,
            horizon: None,
            samples: None,
            seed: None,
            series_cap: None,
            delta_threshold: None,
            eps_conv: None,
            window: None,
            scalar: None,
        }
    }

    pub fn bath_model(&self) -> Result<BathModel, ConfigError> {
        let n = self.n.ok_or(ConfigError::Missing("n"))?;
        let n2 = self.n2.ok_or(ConfigError::Missing("n2"))?;
        let b = self.b.as_ref().ok_or(ConfigError::Missing("B"))?;
        if n == 0 || n2 == 0 {
            return Err(ConfigError::Invalid("n and n2 must be positive".into()));
        }
        if b.len() != n2 || b.iter().any(|row| row.len() != n2) {
            return Err(ConfigError::Invalid(format!(
                "B must hold {n2} x {n2} blocks"
            )));
        }
        let mut blocks = Vec::with_capacity(n2 * n2);
        for (a, row) in b.iter().enumerate() {
            for (c, block) in row.iter().enumerate() {
                blocks.push(to_complex(block, n, &format!("B[{a}][{c}]"))?);
            }
        }
        let basis = self
            .basis
            .as_ref()
            .map(|m| to_complex(m, n, "basis"))
            .transpose()?;
        Ok(BathModel::new(n, n2, blocks, basis)?)
    }

    pub fn model(&self) -> Result<ModelSource, ConfigError> {
        if let Some(rows) = &self.constant {
            let n = rows.len();
            if n == 0 || rows.iter().any(|r| r.len() != n) {
                return Err(ConfigError::Invalid(
                    "constant must be a nonempty square matrix".into(),
                ));
            }
            let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
            return Ok(ModelSource::Constant(ConstantSource(DStochMatrix::new(m)?)));
        }
        Ok(ModelSource::Bath(Box::new(self.bath_model()?.propagator())))
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        Ok(TimeGrid::new(self.grid.t_max, self.grid.steps)?)
    }

    pub fn solver(&self) -> Result<SolverConfig, ConfigError> {
        let mut cfg = SolverConfig::new(self.nu, self.time_grid()?)?;
        cfg.series_cap = self.series_cap;
        Ok(cfg)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(self.grid.t_max)
    }
}
