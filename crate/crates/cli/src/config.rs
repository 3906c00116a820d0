//! JSON configuration: plant, cost weights, search grid and simulation
//! settings. Matrices are arrays of rows; unknown keys are rejected.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use iqcsynth::model::{
    NonlinearChannel, Nonlinearity, PlantModel, UncertaintyChannel, ValidatedPlant, DEFAULT_S_EPSILON,
};
use iqcsynth::sim::UncertaintyRealization;
use iqcsynth::synthesis::{lambda_product, SearchSpec};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub plant: PlantConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostConfig>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
    #[serde(default, rename = "epsilon_S", skip_serializing_if = "Option::is_none")]
    pub epsilon_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B2")]
    pub b2: Rows,
    #[serde(default)]
    pub nonlinear_channels: Vec<NonlinearConfig>,
    #[serde(default)]
    pub uncertainty_channels: Vec<UncertaintyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearConfig {
    #[serde(rename = "B1bar")]
    pub b1bar: Rows,
    #[serde(rename = "C1bar")]
    pub c1bar: Rows,
    #[serde(rename = "D1bar", default, skip_serializing_if = "Option::is_none")]
    pub d1bar: Option<Rows>,
    #[serde(rename = "N")]
    pub n: Rows,
    /// Ascending coefficients `[c₀, c₁, …]`; `c₀` must be zero.
    pub psi_poly: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    #[serde(rename = "B1")]
    pub b1: Rows,
    #[serde(rename = "C1")]
    pub c1: Rows,
    #[serde(rename = "D1", default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<Rows>,
    #[serde(rename = "M")]
    pub m: Rows,
    #[serde(rename = "S", default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    #[serde(rename = "R")]
    pub r: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
}

/// Candidate λ values of one channel: explicit triples, or the product of
/// per-component lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    Triples(Vec<[f64; 3]>),
    Product(LambdaProduct),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaProduct {
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub l3: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub tau_grid: Vec<Vec<f64>>,
    pub lambda_grid: Vec<LambdaGrid>,
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "default_refine_iters")]
    pub refine_iters: usize,
    #[serde(default = "default_refine_shrink")]
    pub refine_shrink: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_refine_iters() -> usize {
    200
}

fn default_refine_shrink() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_realization")]
    pub realization: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { dt: default_dt(), t_final: default_t_final(), realization: default_realization() }
    }
}

fn default_dt() -> f64 {
    1e-3
}

fn default_t_final() -> f64 {
    20.0
}

fn default_realization() -> String {
    "zero".into()
}

/// `zero` or `scaled:<delta>`.
pub fn parse_realization(s: &str) -> Result<UncertaintyRealization, String> {
    if s == "zero" {
        return Ok(UncertaintyRealization::Zero);
    }
    let delta = s
        .strip_prefix("scaled:")
        .ok_or_else(|| format!("unknown realization '{s}' (expected zero or scaled:<delta>)"))?;
    let delta: f64 = delta.trim().parse().map_err(|_| format!("invalid delta in '{s}'"))?;
    if !delta.is_finite() {
        return Err(format!("invalid delta in '{s}'"));
    }
    Ok(UncertaintyRealization::ScaledOutput(delta))
}

fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>, CliError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Data(format!("{field}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("config: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_plant(&self) -> Result<ValidatedPlant, CliError> {
        let p = &self.plant;
        let a = matrix("A", &p.a)?;
        let b2 = matrix("B2", &p.b2)?;
        let (n, m) = (a.nrows(), b2.ncols());
        let eps = self.epsilon_s.unwrap_or(DEFAULT_S_EPSILON);

        let nonlinear_channels = p
            .nonlinear_channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(NonlinearChannel {
                    b1bar: matrix(&format!("nonlinear_channels[{i}].B1bar"), &c.b1bar)?,
                    c1bar: matrix(&format!("nonlinear_channels[{i}].C1bar"), &c.c1bar)?,
                    d1bar: match &c.d1bar {
                        Some(d) => matrix(&format!("nonlinear_channels[{i}].D1bar"), d)?,
                        None => DMatrix::zeros(1, m),
                    },
                    n: matrix(&format!("nonlinear_channels[{i}].N"), &c.n)?,
                    psi: Nonlinearity::Polynomial(c.psi_poly.clone()),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;

        let uncertainty_channels = p
            .uncertainty_channels
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let c1 = matrix(&format!("uncertainty_channels[{j}].C1"), &c.c1)?;
                Ok(UncertaintyChannel {
                    b1: matrix(&format!("uncertainty_channels[{j}].B1"), &c.b1)?,
                    d1: match &c.d1 {
                        Some(d) => matrix(&format!("uncertainty_channels[{j}].D1"), d)?,
                        None => DMatrix::zeros(c1.nrows(), m),
                    },
                    c1,
                    m: matrix(&format!("uncertainty_channels[{j}].M"), &c.m)?,
                    s: match &c.s {
                        Some(s) => matrix(&format!("uncertainty_channels[{j}].S"), s)?,
                        None => DMatrix::identity(n, n) * eps,
                    },
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;

        let g_ch = nonlinear_channels.len();
        let (r, g) = match &self.cost {
            Some(c) => (matrix("cost.R", &c.r)?, matrix("cost.G", &c.g)?),
            None => (DMatrix::identity(n + g_ch, n + g_ch), DMatrix::identity(m + 2 * g_ch, m + 2 * g_ch)),
        };

        PlantModel {
            a,
            b2,
            nonlinear_channels,
            uncertainty_channels,
            r,
            g,
            x0: DVector::from_vec(self.x0.clone()),
            s_epsilon: eps,
        }
        .validate()
        .map_err(|e| CliError::Data(e.to_string()))
    }

    pub fn search_spec(&self) -> Result<SearchSpec, CliError> {
        let s = self.search.as_ref().ok_or_else(|| CliError::Data("config has no search block".into()))?;
        Ok(SearchSpec {
            tau_grid: s.tau_grid.clone(),
            lambda_grid: s
                .lambda_grid
                .iter()
                .map(|g| match g {
                    LambdaGrid::Triples(t) => t.clone(),
                    LambdaGrid::Product(p) => lambda_product(&p.l1, &p.l2, &p.l3),
                })
                .collect(),
            refine: s.refine,
            refine_iters: s.refine_iters,
            refine_shrink: s.refine_shrink,
            seed: s.seed,
        })
    }

    pub fn sim_settings(&self) -> SimConfig {
        self.sim.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "plant": {
            "A": [[1.5, -1.0], [0.0, 0.0]],
            "B2": [[0.0], [1.0]],
            "nonlinear_channels": [
                {"B1bar": [[-1.0], [0.0]], "C1bar": [[1.0, 0.0]], "N": [[0.0, 1.0], [1.0, 0.0]],
                 "psi_poly": [0.0, 1.5, 1.5, 0.5]}
            ],
            "uncertainty_channels": [
                {"B1": [[0.0], [1.0]], "C1": [[0.1, 0.0]], "M": [[-1.0, 0.0], [0.0, 1.0]]}
            ]
        },
        "x0": [1.0, 0.0],
        "search": {"tau_grid": [[0.15]], "lambda_grid": [{"l1": [1.0], "l2": [0.1, 0.2], "l3": [0.12]}]}
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ConfigFile::from_json(MINIMAL).unwrap();
        let plant = cfg.to_plant().unwrap();
        let d = plant.dims();
        assert_eq!((d.n, d.m, d.g, d.k), (2, 1, 1, 1));
        assert_eq!(plant.r.shape(), (3, 3));
        assert_eq!(plant.uncertainty_channels[0].s, DMatrix::identity(2, 2) * 1e-6);
        let spec = cfg.search_spec().unwrap();
        assert_eq!(spec.lambda_grid[0], vec![[1.0, 0.1, 0.12], [1.0, 0.2, 0.12]]);
        assert!(!spec.refine);
        assert_eq!(cfg.sim_settings(), SimConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let text = MINIMAL.replacen("\"x0\"", "\"bogus\": 1, \"x0\"", 1);
        assert!(ConfigFile::from_json(&text).is_err());
    }

    #[test]
    fn ragged_matrix_rejected() {
        let text = MINIMAL.replacen("[[1.5, -1.0], [0.0, 0.0]]", "[[1.5, -1.0], [0.0]]", 1);
        assert!(ConfigFile::from_json(&text).unwrap().to_plant().is_err());
    }

    #[test]
    fn triples_grid() {
        let text = MINIMAL.replacen(
            r#"{"l1": [1.0], "l2": [0.1, 0.2], "l3": [0.12]}"#,
            "[[1.0, 0.1, 0.12]]",
            1,
        );
        let spec = ConfigFile::from_json(&text).unwrap().search_spec().unwrap();
        assert_eq!(spec.lambda_grid[0], vec![[1.0, 0.1, 0.12]]);
    }

    #[test]
    fn realization_strings() {
        assert!(matches!(parse_realization("zero"), Ok(UncertaintyRealization::Zero)));
        assert!(matches!(parse_realization("scaled:-0.5"), Ok(UncertaintyRealization::ScaledOutput(d)) if d == -0.5));
        assert!(parse_realization("scaled:x").is_err());
        assert!(parse_realization("worst").is_err());
    }
}
