//! Pipeline configuration.
//!
//! The file is a flat YAML subset: top-level scalars plus one level of
//! nested mappings, no anchors, no sequences. Unknown keys are rejected.
//!
//! ```yaml
//! metric: cosine            # euclidean | cosine | dsr
//! seed: 0
//! postprocess: qe_then_rerank   # or rerank_then_qe
//! paths:
//!   query: data/query.reid
//!   gallery: data/gallery.reid
//!   out: out
//!   query_spatial_dir: data/spatial/query      # dsr only
//!   gallery_spatial_dir: data/spatial/gallery  # dsr only
//! qe:
//!   m: 2
//!   metric: cosine
//! rerank:
//!   k1: 20
//!   k2: 6
//!   lambda: 0.3
//! protocol:
//!   exclude_same_camera_same_id: true
//!   max_rank: 50
//! schedule:
//!   warmup_start_lr: 3.5e-5
//!   base_lr: 3.5e-4
//!   final_lr: 7.7e-7
//!   warmup_iters: 2000
//!   plateau_end_iter: 9000
//!   total_iters: 18000
//!   freeze_iters: 2000
//!   stride: 1000
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use reid_core::retrieval::{Metric, QeParams, RerankParams};
use reid_core::schedule::{LrSchedule, DEFAULT_FREEZE_ITERS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    #[default]
    Cosine,
    Dsr,
}

impl MetricKind {
    /// The embedding metric, or `None` for spatial matching.
    pub fn embedding_metric(self) -> Option<Metric> {
        match self {
            MetricKind::Euclidean => Some(Metric::Euclidean),
            MetricKind::Cosine => Some(Metric::Cosine),
            MetricKind::Dsr => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostOrder {
    #[default]
    QeThenRerank,
    /// Re-rank first and pick the expansion neighbors from the re-ranked
    /// distances.
    RerankThenQe,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default)]
    pub query: PathBuf,
    #[serde(default)]
    pub gallery: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_spatial_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gallery_spatial_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QeConfig {
    pub m: usize,
    #[serde(default)]
    pub metric: Metric,
}

impl QeConfig {
    pub fn params(&self) -> QeParams {
        QeParams { m: self.m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankConfig {
    #[serde(default = "default_k1")]
    pub k1: usize,
    #[serde(default = "default_k2")]
    pub k2: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_k1() -> usize {
    RerankParams::default().k1
}

fn default_k2() -> usize {
    RerankParams::default().k2
}

fn default_lambda() -> f64 {
    RerankParams::default().lambda
}

impl Default for RerankConfig {
    fn default() -> Self {
        let p = RerankParams::default();
        Self {
            k1: p.k1,
            k2: p.k2,
            lambda: p.lambda,
        }
    }
}

impl RerankConfig {
    pub fn params(&self) -> RerankParams {
        RerankParams {
            k1: self.k1,
            k2: self.k2,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "yes")]
    pub exclude_same_camera_same_id: bool,
    /// Defaults to `min(50, gallery size)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rank: Option<usize>,
}

fn yes() -> bool {
    true
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            exclude_same_camera_same_id: true,
            max_rank: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub warmup_start_lr: f64,
    pub base_lr: f64,
    pub final_lr: f64,
    pub warmup_iters: u64,
    pub plateau_end_iter: u64,
    pub total_iters: u64,
    pub freeze_iters: u64,
    pub stride: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = LrSchedule::default();
        Self {
            warmup_start_lr: s.warmup_start_lr,
            base_lr: s.base_lr,
            final_lr: s.final_lr,
            warmup_iters: s.warmup_iters,
            plateau_end_iter: s.plateau_end_iter,
            total_iters: s.total_iters,
            freeze_iters: DEFAULT_FREEZE_ITERS,
            stride: 1,
        }
    }
}

impl ScheduleConfig {
    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            warmup_start_lr: self.warmup_start_lr,
            base_lr: self.base_lr,
            final_lr: self.final_lr,
            warmup_iters: self.warmup_iters,
            plateau_end_iter: self.plateau_end_iter,
            total_iters: self.total_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub metric: MetricKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub postprocess: PostOrder,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qe: Option<QeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank: Option<RerankConfig>,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_yaml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> Result<String> {
        serde_yaml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.query);
        fix(&mut self.paths.gallery);
        for p in [
            &mut self.paths.out,
            &mut self.paths.query_spatial_dir,
            &mut self.paths.gallery_spatial_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Checks the settings needed by `eval` and `rerank-only`.
    pub fn validate_for_eval(&self) -> Result<()> {
        if self.paths.query.as_os_str().is_empty() || self.paths.gallery.as_os_str().is_empty() {
            return Err(CliError::Config(
                "paths.query and paths.gallery are required".into(),
            ));
        }
        if self.metric == MetricKind::Dsr {
            if self.paths.query_spatial_dir.is_none() || self.paths.gallery_spatial_dir.is_none() {
                return Err(CliError::Config(
                    "metric dsr needs paths.query_spatial_dir and paths.gallery_spatial_dir".into(),
                ));
            }
            if self.qe.is_some_and(|q| q.m > 0) {
                return Err(CliError::Config(
                    "query expansion needs an embedding metric, not dsr".into(),
                ));
            }
        }
        if let Some(r) = &self.rerank {
            r.params().validate()?;
        }
        if self.protocol.max_rank == Some(0) {
            return Err(CliError::Config(
                "protocol.max_rank must be positive".into(),
            ));
        }
        Ok(())
    }
}
