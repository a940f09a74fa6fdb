//! Evaluation pipeline: distances, optional query expansion and re-ranking,
//! metrics, and the on-disk artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use reid_core::metrics::{evaluate, EvalProtocol, EvalReport};
use reid_core::retrieval::{
    dsr_distances, k_reciprocal_rerank, k_reciprocal_rerank_distances, query_expansion_batch,
    query_expansion_from_distances, rank_lists, SpatialFeatureSet,
};
use reid_core::{DistanceMatrix, Embedding, ItemMeta};

use crate::config::{MetricKind, PipelineConfig, PostOrder};
use crate::error::{CliError, Result};
use crate::format::g9;
use crate::io::{load_embeddings, load_spatial, spatial_path, write_atomic};

pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const RANK_LIST_FILE: &str = "rank_lists.csv";
pub const DISTANCE_FILE: &str = "distances.csv";
const DEFAULT_MAX_RANK: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub query: Vec<Embedding>,
    pub query_meta: Vec<ItemMeta>,
    pub gallery: Vec<Embedding>,
    pub gallery_meta: Vec<ItemMeta>,
    /// Present only for the `dsr` metric.
    pub spatial: Option<(Vec<SpatialFeatureSet>, Vec<SpatialFeatureSet>)>,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    cfg.validate_for_eval()?;
    let (query, query_meta) = load_embeddings(&cfg.paths.query)?;
    let (gallery, gallery_meta) = load_embeddings(&cfg.paths.gallery)?;
    info!(
        "loaded {} queries and {} gallery items",
        query.len(),
        gallery.len()
    );
    let spatial = match cfg.metric {
        MetricKind::Dsr => {
            let load_dir =
                |dir: &Option<PathBuf>, meta: &[ItemMeta]| -> Result<Vec<SpatialFeatureSet>> {
                    let dir = dir.as_deref().expect("validated dsr paths");
                    meta.iter()
                        .map(|m| load_spatial(&spatial_path(dir, &m.item_id)))
                        .collect()
                };
            Some((
                load_dir(&cfg.paths.query_spatial_dir, &query_meta)?,
                load_dir(&cfg.paths.gallery_spatial_dir, &gallery_meta)?,
            ))
        }
        _ => None,
    };
    Ok(Inputs {
        query,
        query_meta,
        gallery,
        gallery_meta,
        spatial,
    })
}

fn base_distances(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    queries: &[Embedding],
) -> Result<DistanceMatrix> {
    match (cfg.metric.embedding_metric(), &inputs.spatial) {
        (Some(m), _) => Ok(m.distances(queries, &inputs.gallery)?),
        (None, Some((qs, gs))) => Ok(dsr_distances(qs, gs)?),
        (None, None) => Err(CliError::Config(
            "dsr metric without spatial features".into(),
        )),
    }
}

fn reranked(
    cfg: &PipelineConfig,
    inputs: &Inputs,
    queries: &[Embedding],
) -> Result<DistanceMatrix> {
    let p = cfg.rerank.expect("rerank configured").params();
    match (cfg.metric.embedding_metric(), &inputs.spatial) {
        (Some(m), _) => Ok(k_reciprocal_rerank(queries, &inputs.gallery, m, p)?),
        (None, Some((qs, gs))) => {
            let q_g = dsr_distances(qs, gs)?;
            let q_q = dsr_distances(qs, qs)?;
            let g_g = dsr_distances(gs, gs)?;
            Ok(k_reciprocal_rerank_distances(
                &q_g,
                q_q.view(),
                g_g.view(),
                p,
            )?)
        }
        (None, None) => Err(CliError::Config(
            "dsr metric without spatial features".into(),
        )),
    }
}

/// The distance matrix after the configured post-processing.
pub fn final_distances(cfg: &PipelineConfig, inputs: &Inputs) -> Result<DistanceMatrix> {
    let qe = cfg.qe.filter(|q| q.m > 0);
    let d = match (qe, cfg.rerank.is_some(), cfg.postprocess) {
        (None, false, _) => base_distances(cfg, inputs, &inputs.query)?,
        (None, true, _) => reranked(cfg, inputs, &inputs.query)?,
        (Some(q), false, _) => {
            let expanded =
                query_expansion_batch(&inputs.query, &inputs.gallery, q.metric, q.params())?;
            base_distances(cfg, inputs, &expanded)?
        }
        (Some(q), true, PostOrder::QeThenRerank) => {
            let expanded =
                query_expansion_batch(&inputs.query, &inputs.gallery, q.metric, q.params())?;
            reranked(cfg, inputs, &expanded)?
        }
        (Some(q), true, PostOrder::RerankThenQe) => {
            let first = reranked(cfg, inputs, &inputs.query)?;
            let expanded =
                query_expansion_from_distances(&inputs.query, &inputs.gallery, &first, q.params())?;
            base_distances(cfg, inputs, &expanded)?
        }
    };
    info!("distance matrix ready ({})", d.metric());
    Ok(d)
}

pub fn protocol(cfg: &PipelineConfig, gallery_len: usize) -> EvalProtocol {
    EvalProtocol {
        exclude_same_camera_same_id: cfg.protocol.exclude_same_camera_same_id,
        max_rank: cfg
            .protocol
            .max_rank
            .unwrap_or(DEFAULT_MAX_RANK.min(gallery_len)),
    }
}

/// Report plus the rendered artifact files, not yet written.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub distances: DistanceMatrix,
    pub files: Vec<(&'static str, Vec<u8>)>,
}

pub fn evaluate_inputs(cfg: &PipelineConfig, inputs: &Inputs) -> Result<EvalOutput> {
    let distances = final_distances(cfg, inputs)?;
    let proto = protocol(cfg, inputs.gallery.len());
    let report = evaluate(&distances, &inputs.query_meta, &inputs.gallery_meta, &proto)?;
    if report.skipped_queries > 0 {
        warn!(
            "{} queries have no valid positive and were skipped",
            report.skipped_queries
        );
    }
    let mut report_json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Config(format!("report serialization: {e}")))?;
    report_json.push('\n');
    let files = vec![
        (REPORT_FILE, report_json.into_bytes()),
        (ROC_FILE, roc_csv(&report).into_bytes()),
        (RANK_LIST_FILE, rank_list_csv(&distances, inputs, &proto)?),
    ];
    Ok(EvalOutput {
        report,
        distances,
        files,
    })
}

pub fn roc_csv(report: &EvalReport) -> String {
    let mut out = String::from("FAR,TAR\n");
    for p in &report.roc {
        let _ = writeln!(out, "{},{}", g9(p.far), g9(p.tar));
    }
    out
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| CliError::Config(format!("csv output: {e}")))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Config(format!("csv output: {e}"))
}

/// Top `max_rank` gallery items per query after protocol exclusion.
pub fn rank_list_csv(d: &DistanceMatrix, inputs: &Inputs, proto: &EvalProtocol) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["query_id", "rank", "gallery_id", "distance", "correct"])
        .map_err(csv_err)?;
    for (q, order) in rank_lists(d).iter().enumerate() {
        let qm = &inputs.query_meta[q];
        let kept = order.iter().filter(|&&g| {
            let gm = &inputs.gallery_meta[g];
            !(proto.exclude_same_camera_same_id
                && gm.person_id == qm.person_id
                && gm.camera_id == qm.camera_id)
        });
        for (rank, &g) in kept.take(proto.max_rank).enumerate() {
            let gm = &inputs.gallery_meta[g];
            let correct = if gm.person_id == qm.person_id {
                "1"
            } else {
                "0"
            };
            w.write_record([
                qm.item_id.as_str(),
                &(rank + 1).to_string(),
                gm.item_id.as_str(),
                &g9(d.view()[[q, g]]),
                correct,
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Long-format `query_id,gallery_id,distance` table.
pub fn distance_csv(d: &DistanceMatrix, inputs: &Inputs) -> Result<Vec<u8>> {
    let mut w = csv_writer();
    w.write_record(["query_id", "gallery_id", "distance"])
        .map_err(csv_err)?;
    for (q, qm) in inputs.query_meta.iter().enumerate() {
        for (g, gm) in inputs.gallery_meta.iter().enumerate() {
            w.write_record([
                qm.item_id.as_str(),
                gm.item_id.as_str(),
                &g9(d.view()[[q, g]]),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Writes every file or none: on failure the files already written by this
/// call are removed.
pub fn write_outputs(out_dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = out_dir.join(name);
        if let Err(e) = write_atomic(&path, bytes) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(())
}

fn out_dir(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.paths.out.as_deref().ok_or_else(|| {
        CliError::Config("an output directory is required (paths.out or --out)".into())
    })
}

/// Runs the full evaluation and writes `report.json`, `roc.csv` and
/// `rank_lists.csv` into the output directory.
pub fn run_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let out = out_dir(cfg)?;
    let inputs = load_inputs(cfg)?;
    let result = evaluate_inputs(cfg, &inputs)?;
    write_outputs(out, &result.files)?;
    info!(
        "wrote {} artifacts to {}",
        result.files.len(),
        out.display()
    );
    Ok(result.report)
}

/// Re-ranks without evaluating; writes `distances.csv` and
/// `rank_lists.csv`. Uses default re-ranking parameters when the config has
/// none.
pub fn rerank_only(cfg: &PipelineConfig) -> Result<DistanceMatrix> {
    let out = out_dir(cfg)?;
    let mut cfg = cfg.clone();
    cfg.qe = None;
    cfg.rerank.get_or_insert_with(Default::default);
    let inputs = load_inputs(&cfg)?;
    let d = final_distances(&cfg, &inputs)?;
    let proto = EvalProtocol {
        exclude_same_camera_same_id: false,
        max_rank: cfg.protocol.max_rank.unwrap_or(inputs.gallery.len()),
    };
    let files = vec![
        (DISTANCE_FILE, distance_csv(&d, &inputs)?),
        (RANK_LIST_FILE, rank_list_csv(&d, &inputs, &proto)?),
    ];
    write_outputs(out, &files)?;
    Ok(d)
}
