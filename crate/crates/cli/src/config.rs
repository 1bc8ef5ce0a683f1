//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use preview_core::linalg::Mat;
use preview_core::Plant;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// One JSON document; matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B_d")]
    pub b_d: Vec<Vec<f64>>,
    #[serde(rename = "B_u")]
    pub b_u: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    /// Inclusive `[first, last]` preview lengths.
    pub p_range: [usize; 2],
    #[serde(default = "default_bisection_tol")]
    pub bisection_tol: f64,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_fir_order")]
    pub fir_order: usize,
    #[serde(default = "default_oracle_horizon")]
    pub oracle_horizon: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_bisection_tol() -> f64 {
    1e-10
}
fn default_grid_size() -> usize {
    4096
}
fn default_fir_order() -> usize {
    64
}
fn default_oracle_horizon() -> usize {
    400
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// The example plant with preview lengths `0..=10` and default settings.
    pub fn example() -> Self {
        Self {
            a: vec![vec![3.0, 1.0], vec![-1.0, -2.0]],
            b_d: vec![vec![1.0], vec![1.0]],
            b_u: vec![vec![3.0], vec![-1.0]],
            q: vec![vec![3.0, 0.0], vec![0.0, 3.0]],
            r: vec![vec![1.0]],
            p_range: [0, 10],
            bisection_tol: default_bisection_tol(),
            grid_size: default_grid_size(),
            fir_order: default_fir_order(),
            oracle_horizon: default_oracle_horizon(),
            output_dir: default_output_dir(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn p_values(&self) -> Vec<usize> {
        (self.p_range[0]..=self.p_range[1]).collect()
    }

    /// Checks every field and the plant assumptions, reporting all violations at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.p_range[0] > self.p_range[1] {
            problems.push(format!("p_range [{}, {}] is empty", self.p_range[0], self.p_range[1]));
        }
        if !(self.bisection_tol > 0.0 && self.bisection_tol.is_finite()) {
            problems.push(format!("bisection_tol must be positive, got {}", self.bisection_tol));
        }
        if self.grid_size < 3 {
            problems.push(format!("grid_size must be at least 3, got {}", self.grid_size));
        }
        if self.fir_order == 0 {
            problems.push("fir_order must be at least 1".into());
        }
        if self.oracle_horizon == 0 {
            problems.push("oracle_horizon must be at least 1".into());
        }
        match self.matrices() {
            Ok((a, b_d, b_u, q, r)) => problems.extend(Plant::violations(&a, &b_d, &b_u, &q, &r)),
            Err(e) => problems.push(e),
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(format!("\n  - {}", problems.join("\n  - "))))
        }
    }

    fn matrices(&self) -> Result<(Mat, Mat, Mat, Mat, Mat), String> {
        Ok((
            to_mat("A", &self.a)?,
            to_mat("B_d", &self.b_d)?,
            to_mat("B_u", &self.b_u)?,
            to_mat("Q", &self.q)?,
            to_mat("R", &self.r)?,
        ))
    }

    pub fn plant(&self) -> Result<Plant, CliError> {
        let (a, b_d, b_u, q, r) = self.matrices().map_err(CliError::Validation)?;
        Plant::new(a, b_d, b_u, q, r).map_err(|e| CliError::Validation(e.to_string()))
    }
}

fn to_mat(name: &str, rows: &[Vec<f64>]) -> Result<Mat, String> {
    let Some(first) = rows.first() else {
        return Err(format!("{name} has no rows"));
    };
    let cols = first.len();
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!("{name} row {i} has {} entries, row 0 has {cols}", rows[i].len()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Mat::from_row_slice(rows.len(), cols, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_value_identical() {
        let cfg = ExperimentConfig::example();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let text = r#"{"A": [[0.5]], "B_d": [[1]], "B_u": [[1]], "Q": [[1]], "R": [[1]], "p_range": [0, 2]}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.bisection_tol, 1e-10);
        assert_eq!(cfg.grid_size, 4096);
        assert_eq!(cfg.fir_order, 64);
        assert_eq!(cfg.oracle_horizon, 400);
        assert_eq!(cfg.p_values(), vec![0, 1, 2]);
    }

    #[test]
    fn missing_field_is_named() {
        let text = r#"{"A": [[0.5]], "B_d": [[1]], "Q": [[1]], "R": [[1]], "p_range": [0, 2]}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("B_u"), "{err}");
    }

    #[test]
    fn plant_violations_are_reported() {
        let mut cfg = ExperimentConfig::example();
        cfg.r = vec![vec![-1.0]];
        cfg.p_range = [3, 1];
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("R must be positive definite"), "{msg}");
        assert!(msg.contains("p_range"), "{msg}");
    }

    #[test]
    fn ragged_matrix_is_rejected() {
        let mut cfg = ExperimentConfig::example();
        cfg.a = vec![vec![3.0, 1.0], vec![-1.0]];
        assert!(cfg.validate().unwrap_err().to_string().contains("A row 1"));
    }
}
