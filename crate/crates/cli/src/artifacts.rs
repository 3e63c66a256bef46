use serde::{Deserialize, Serialize};
use variscan::regression::{Family, RepresentativeMode, SplineSpec, Stage2Sample, Stage2Sampler};
use variscan::stage1::{LatentConfiguration, Stage1Sampler};
use variscan::{CovariateMatrix, Partition, Standardization};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRUTH_FILE: &str = "truth.json";
pub const STAGE1_FILE: &str = "stage1.json";
pub const STAGE2_FILE: &str = "stage2.json";
pub const STAGE1_CHECKPOINT: &str = "stage1_checkpoint.json";
pub const STAGE2_CHECKPOINT: &str = "stage2_checkpoint.json";

/// Known generating values of a simulated dataset; labels and columns are
/// 1-based.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictors: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_star: Option<f64>,
}

/// What Stage 2 and prediction need from Stage 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Artifact {
    pub config_hash: String,
    pub names: Vec<String>,
    pub standardization: Standardization,
    /// standardized training covariates, missing cells imputed
    pub x: CovariateMatrix,
    pub allocation: Partition,
    pub allocation_loss: f64,
    pub configuration: LatentConfiguration,
    pub discounts: Vec<f64>,
    pub log_odds: Vec<f64>,
}

/// Retained Stage-2 draws and their summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Artifact {
    pub config_hash: String,
    /// config hash of the Stage-1 artifact these draws condition on
    pub stage1_hash: String,
    pub family: Family,
    pub mode: RepresentativeMode,
    pub spline: SplineSpec,
    pub samples: Vec<Stage2Sample>,
    pub linear_prob: Vec<f64>,
    pub spline_prob: Vec<f64>,
    pub omega_trace: Vec<[f64; 3]>,
    pub nonlinearity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Checkpoint {
    pub config_hash: String,
    pub sampler: Stage1Sampler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Checkpoint {
    pub config_hash: String,
    pub sampler: Stage2Sampler,
}
