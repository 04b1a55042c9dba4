//! Per-file batch reports, serializable as the CLI's JSON report.

use std::path::PathBuf;

use serde::Serialize;

use crate::augmentation::DrawRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Success,
    /// Processed without error, but segmentation found no leaves.
    NoRegions,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputReport {
    pub path: PathBuf,
    pub status: Status,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<DrawRecord>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invalid_pixels: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl InputReport {
    pub fn success(path: PathBuf, outputs: Vec<PathBuf>) -> Self {
        Self {
            path,
            status: Status::Success,
            outputs,
            error: None,
            threshold: None,
            leaf_count: None,
            draws: None,
            invalid_pixels: None,
            warnings: Vec::new(),
        }
    }

    pub fn failed(path: PathBuf, error: impl ToString) -> Self {
        Self {
            status: Status::Failed,
            error: Some(error.to_string()),
            ..Self::success(path, Vec::new())
        }
    }

    pub fn is_failure(&self) -> bool {
        self.status == Status::Failed
    }
}

/// Outcome of one folder-level stage, inputs in deterministic order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub inputs: Vec<InputReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl StageReport {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            inputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn has_failures(&self) -> bool {
        self.inputs.iter().any(InputReport::is_failure)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &PathBuf> {
        self.inputs.iter().flat_map(|i| i.outputs.iter())
    }
}
