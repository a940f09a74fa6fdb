//! Ranking evaluation: CMC, mAP, mINP and ROC over a query/gallery distance
//! matrix.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::rank_lists;
use crate::types::{DistanceMatrix, ItemMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Drop gallery items sharing both person and camera with the query.
    pub exclude_same_camera_same_id: bool,
    pub max_rank: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            exclude_same_camera_same_id: true,
            max_rank: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub minp: f64,
    pub roc: Vec<RocPoint>,
    /// `None` when no different-identity pair survives exclusion.
    pub auc: Option<f64>,
    pub num_queries: usize,
    /// Queries without any valid positive; left out of every average.
    pub skipped_queries: usize,
}

/// Scores of one ranked, already-filtered gallery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryScore {
    /// 0-based position of the first correct match.
    pub first_hit: usize,
    pub ap: f64,
    pub inp: f64,
}

/// Scores a relevance list in rank order; `None` if it has no positive.
pub fn score_ranked(relevant: &[bool]) -> Option<QueryScore> {
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first_hit = None;
    let mut last_hit = 0;
    for (pos, _) in relevant.iter().enumerate().filter(|(_, &r)| r) {
        hits += 1;
        precision_sum += hits as f64 / (pos + 1) as f64;
        first_hit.get_or_insert(pos);
        last_hit = pos;
    }
    Some(QueryScore {
        first_hit: first_hit?,
        ap: precision_sum / hits as f64,
        inp: hits as f64 / (last_hit + 1) as f64,
    })
}

/// Ranks one query's gallery and scores it after protocol exclusion.
pub fn evaluate_query(
    distances: &[f64],
    query: &ItemMeta,
    gallery: &[ItemMeta],
    proto: &EvalProtocol,
) -> Option<QueryScore> {
    let relevant = filtered_ranking(distances, query, gallery, proto)
        .into_iter()
        .map(|j| gallery[j].person_id == query.person_id)
        .collect::<Vec<_>>();
    score_ranked(&relevant)
}

fn excluded(query: &ItemMeta, item: &ItemMeta, proto: &EvalProtocol) -> bool {
    proto.exclude_same_camera_same_id
        && item.person_id == query.person_id
        && item.camera_id == query.camera_id
}

fn filtered_ranking(
    distances: &[f64],
    query: &ItemMeta,
    gallery: &[ItemMeta],
    proto: &EvalProtocol,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| {
        distances[a]
            .partial_cmp(&distances[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order.retain(|&j| !excluded(query, &gallery[j], proto));
    order
}

pub fn evaluate(
    d: &DistanceMatrix,
    query_meta: &[ItemMeta],
    gallery_meta: &[ItemMeta],
    proto: &EvalProtocol,
) -> Result<EvalReport> {
    if query_meta.len() != d.num_queries() {
        return Err(Error::shape(
            "query metadata",
            d.num_queries(),
            query_meta.len(),
        ));
    }
    if gallery_meta.len() != d.num_gallery() {
        return Err(Error::shape(
            "gallery metadata",
            d.num_gallery(),
            gallery_meta.len(),
        ));
    }
    if proto.max_rank == 0 || proto.max_rank > d.num_gallery() {
        return Err(Error::InvalidParam(format!(
            "max_rank {} must be in 1..={}",
            proto.max_rank,
            d.num_gallery()
        )));
    }
    let ranks = rank_lists(d);
    let scores: Vec<Option<QueryScore>> = (0..d.num_queries())
        .into_par_iter()
        .map(|q| {
            let relevant: Vec<bool> = ranks[q]
                .iter()
                .filter(|&&j| !excluded(&query_meta[q], &gallery_meta[j], proto))
                .map(|&j| gallery_meta[j].person_id == query_meta[q].person_id)
                .collect();
            score_ranked(&relevant)
        })
        .collect();

    let valid: Vec<QueryScore> = scores.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::Precondition(
            "no query has a valid positive in the gallery".into(),
        ));
    }
    let n = valid.len() as f64;
    let cmc = (0..proto.max_rank)
        .map(|k| valid.iter().filter(|s| s.first_hit <= k).count() as f64 / n)
        .collect();
    let map = valid.iter().map(|s| s.ap).sum::<f64>() / n;
    let minp = valid.iter().map(|s| s.inp).sum::<f64>() / n;

    let (mut same, mut diff) = (Vec::new(), Vec::new());
    for (q, qm) in query_meta.iter().enumerate() {
        for (g, gm) in gallery_meta.iter().enumerate() {
            if excluded(qm, gm, proto) {
                continue;
            }
            let dist = d.view()[[q, g]];
            if gm.person_id == qm.person_id {
                same.push(dist);
            } else {
                diff.push(dist);
            }
        }
    }
    let (roc, auc) = match roc_curve(&same, &diff) {
        Ok(c) => (c.points, Some(c.auc)),
        Err(_) => (Vec::new(), None),
    };

    Ok(EvalReport {
        cmc,
        map,
        minp,
        roc,
        auc,
        num_queries: d.num_queries(),
        skipped_queries: scores.len() - valid.len(),
    })
}

/// Sweeps an acceptance threshold `d ≤ t` over every observed distance.
/// The curve starts at `(0, 0)` and ends at `(1, 1)`.
pub fn roc_curve(same_id: &[f64], diff_id: &[f64]) -> Result<RocCurve> {
    if same_id.is_empty() || diff_id.is_empty() {
        return Err(Error::Empty("roc distance list"));
    }
    if same_id.iter().chain(diff_id).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("roc distances"));
    }
    let mut same = same_id.to_vec();
    let mut diff = diff_id.to_vec();
    same.sort_by(f64::total_cmp);
    diff.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = same.iter().chain(&diff).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (ns, nd) = (same.len() as f64, diff.len() as f64);
    let (mut si, mut di) = (0, 0);
    let mut points = vec![RocPoint { far: 0.0, tar: 0.0 }];
    for t in thresholds {
        while si < same.len() && same[si] <= t {
            si += 1;
        }
        while di < diff.len() && diff[di] <= t {
            di += 1;
        }
        points.push(RocPoint {
            far: di as f64 / nd,
            tar: si as f64 / ns,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[1].tar + w[0].tar) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}
