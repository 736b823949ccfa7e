//! JSON experiment configuration: schema, validation, and conversion into
//! the runtime types.

use crate::closed_loop::ReferenceSignal;
use crate::condense::WeightConfig;
use crate::decoder::{Method, ENUM_CAP};
use crate::error::{Error, Result};
use crate::plant::{ControlSet, PlantModel};
use crate::predictor::RegularizerKind;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Square matrix given either in full (row-major nested arrays) or as a
/// diagonal shorthand `{"diag": [..]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum MatrixSpec {
    Diag { diag: Vec<f64> },
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, dim: usize, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Diag { diag } => {
                if diag.len() != dim {
                    return Err(Error::Config(format!(
                        "{name}: diagonal has {} entries, expected {dim}",
                        diag.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
            }
            MatrixSpec::Full(rows) => {
                let mat = rows_to_matrix(rows, name)?;
                if mat.nrows() != dim || mat.ncols() != dim {
                    return Err(Error::Config(format!(
                        "{name}: matrix is {}x{}, expected {dim}x{dim}",
                        mat.nrows(),
                        mat.ncols()
                    )));
                }
                Ok(mat)
            }
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{name}: matrix has no rows")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("{name}: ragged or empty rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ControlSetConfig {
    pub levels: Vec<f64>,
    pub delta_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HorizonConfig {
    pub n_p: usize,
    pub n_f: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeightsConfig {
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub lambda_a: f64,
    pub regularizer: RegularizerKind,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DataConfig {
    pub collect_steps: usize,
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ReferenceConfig {
    Constant { constant: Vec<f64> },
    Piecewise { piecewise: Vec<ReferenceSegment> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReferenceSegment {
    pub from: usize,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClosedLoopConfig {
    pub steps: usize,
    pub methods: Vec<String>,
    pub reference: ReferenceConfig,
    pub seed: u64,
    /// Optional sweep over prediction horizons; when present each listed N_f
    /// replaces horizons.n_f for one run batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_f_sweep: Option<Vec<usize>>,
    /// Optional closed-loop measurement-noise standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputConfig {
    pub directory: String,
    #[serde(default)]
    pub trace: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub control_set: ControlSetConfig,
    pub horizons: HorizonConfig,
    pub weights: WeightsConfig,
    pub data: DataConfig,
    pub closed_loop: ClosedLoopConfig,
    pub output: OutputConfig,
}

pub fn parse_method(name: &str) -> Result<Method> {
    match name {
        "sda" => Ok(Method::Sda),
        "enum" => Ok(Method::Enum),
        other => Err(Error::Config(format!(
            "unknown method '{other}' (expected 'sda' or 'enum')"
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.plant_model()?;
        if self.horizons.n_p == 0 || self.horizons.n_f == 0 {
            return Err(Error::Config("N_p and N_f must be >= 1".into()));
        }
        if self.weights.lambda_a <= 0.0 {
            return Err(Error::Config("lambda_a must be > 0".into()));
        }
        let cs = self.control_set(model.m())?;
        self.weight_config(model.p(), self.horizons.n_f)?;
        for n_f in self.n_f_values() {
            if n_f == 0 {
                return Err(Error::Config("swept N_f must be >= 1".into()));
            }
        }
        let ref_dim = match &self.closed_loop.reference {
            ReferenceConfig::Constant { constant } => constant.len(),
            ReferenceConfig::Piecewise { piecewise } => {
                if piecewise.is_empty() || piecewise[0].from != 0 {
                    return Err(Error::Config(
                        "piecewise reference must start with a segment at 0".into(),
                    ));
                }
                if piecewise.windows(2).any(|w| w[1].from <= w[0].from) {
                    return Err(Error::Config(
                        "piecewise reference segments must have increasing starts".into(),
                    ));
                }
                if piecewise.iter().any(|s| s.value.len() != piecewise[0].value.len()) {
                    return Err(Error::Config("reference segments differ in length".into()));
                }
                piecewise[0].value.len()
            }
        };
        if ref_dim != model.p() {
            return Err(Error::Config(format!(
                "reference has {ref_dim} channels, plant has {}",
                model.p()
            )));
        }
        if let Some(std) = self.closed_loop.noise_std {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::Config("noise_std must be finite and >= 0".into()));
            }
        }
        let methods = self.methods()?;
        if methods.is_empty() {
            return Err(Error::Config("at least one method must be listed".into()));
        }
        if methods.contains(&Method::Enum) {
            let levels = self.control_set_levels_max(&cs);
            for n_f in self.n_f_values() {
                let candidates = (levels as f64).powi((cs.m() * n_f) as i32);
                if candidates > ENUM_CAP as f64 {
                    return Err(Error::CapExceeded {
                        candidates,
                        cap: ENUM_CAP,
                    });
                }
            }
        }
        Ok(())
    }

    fn control_set_levels_max(&self, cs: &ControlSet) -> usize {
        (0..cs.m()).map(|ch| cs.levels(ch).len()).max().unwrap_or(0)
    }

    pub fn plant_model(&self) -> Result<PlantModel> {
        PlantModel::new(
            rows_to_matrix(&self.plant.a, "plant.a")?,
            rows_to_matrix(&self.plant.b, "plant.b")?,
            rows_to_matrix(&self.plant.c, "plant.c")?,
        )
    }

    pub fn control_set(&self, m: usize) -> Result<ControlSet> {
        ControlSet::uniform(self.control_set.levels.clone(), m, self.control_set.delta_bound)
    }

    pub fn weight_config(&self, p: usize, n_f: usize) -> Result<WeightConfig> {
        WeightConfig::new(
            &self.weights.q.to_matrix(p, "weights.q")?,
            &self.weights.r.to_matrix(self.plant.b[0].len(), "weights.r")?,
            n_f,
            self.weights.lambda_a,
            self.weights.regularizer,
        )
    }

    pub fn reference_signal(&self) -> ReferenceSignal {
        match &self.closed_loop.reference {
            ReferenceConfig::Constant { constant } => {
                ReferenceSignal::Constant(DVector::from_row_slice(constant))
            }
            ReferenceConfig::Piecewise { piecewise } => ReferenceSignal::Piecewise(
                piecewise
                    .iter()
                    .map(|s| (s.from, DVector::from_row_slice(&s.value)))
                    .collect(),
            ),
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.closed_loop.methods.iter().map(|s| parse_method(s)).collect()
    }

    /// Horizons to run: the sweep when present, otherwise the single N_f.
    pub fn n_f_values(&self) -> Vec<usize> {
        match &self.closed_loop.n_f_sweep {
            Some(sweep) if !sweep.is_empty() => {
                let mut v = sweep.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
            _ => vec![self.horizons.n_f],
        }
    }
}
