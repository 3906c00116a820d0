//! Synthesis result file.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use iqcsynth::synthesis::SynthesisResult;

use crate::config::Rows;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    pub tool_version: String,
    pub tau: Vec<f64>,
    pub lambda: Vec<[f64; 3]>,
    #[serde(rename = "V_tau")]
    pub v_tau: f64,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "X")]
    pub x: Rows,
    pub diagnostics: DiagnosticsFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsFile {
    pub pi_count: Vec<usize>,
    #[serde(rename = "detU11")]
    pub det_u11: Vec<f64>,
    pub d11_margin: Vec<f64>,
    pub are_residual: f64,
    /// `[re, im]` pairs of the closed-loop eigenvalues.
    pub closed_loop_spectrum: Vec<[f64; 2]>,
}

pub fn rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ResultFile {
    pub fn from_result(r: &SynthesisResult) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            tau: r.point.tau.clone(),
            lambda: r.point.lambda.clone(),
            v_tau: r.v_tau,
            k: rows(&r.k),
            x: rows(&r.x),
            diagnostics: DiagnosticsFile {
                pi_count: r.diagnostics.pi_counts.clone(),
                det_u11: r.diagnostics.det_u11.clone(),
                d11_margin: r.diagnostics.d11_margins.clone(),
                are_residual: r.diagnostics.are_residual.unwrap_or(f64::NAN),
                closed_loop_spectrum: r.diagnostics.closed_loop_spectrum.iter().map(|c| [c.re, c.im]).collect(),
            },
        }
    }

    pub fn gain(&self) -> Result<DMatrix<f64>, CliError> {
        let nrows = self.k.len();
        let ncols = self.k.first().map_or(0, Vec::len);
        if self.k.iter().any(|r| r.len() != ncols) {
            return Err(CliError::Data("controller K has ragged rows".into()));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| self.k[i][j]))
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("result file: {e}")))
    }
}
