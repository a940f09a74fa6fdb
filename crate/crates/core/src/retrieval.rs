//! Query/gallery distances, spatial-set matching, query expansion and
//! k-reciprocal re-ranking.
//!
//! Distance-matrix rows are computed in parallel; each row is produced by the
//! same sequential code, so results do not depend on the thread count.
//! Ties are always broken by ascending gallery index.

use std::cmp::Ordering;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{norm, DistanceMatrix, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    #[default]
    Cosine,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    pub fn distances(self, queries: &[Embedding], gallery: &[Embedding]) -> Result<DistanceMatrix> {
        match self {
            Metric::Euclidean => euclidean_distances(queries, gallery),
            Metric::Cosine => cosine_distances(queries, gallery),
        }
    }
}

fn stack(items: &[Embedding], what: &'static str) -> Result<Array2<f64>> {
    let first = items.first().ok_or(Error::Empty(what))?;
    let dim = first.len();
    let mut out = Array2::zeros((items.len(), dim));
    for (mut row, e) in out.axis_iter_mut(Axis(0)).zip(items) {
        if e.len() != dim {
            return Err(Error::shape("embedding dimension", dim, e.len()));
        }
        row.assign(&ndarray::aview1(e.as_slice()));
    }
    Ok(out)
}

fn stack_pair(queries: &[Embedding], gallery: &[Embedding]) -> Result<(Array2<f64>, Array2<f64>)> {
    let q = stack(queries, "query set")?;
    let g = stack(gallery, "gallery set")?;
    if q.ncols() != g.ncols() {
        return Err(Error::shape(
            "query/gallery dimension",
            q.ncols(),
            g.ncols(),
        ));
    }
    Ok((q, g))
}

fn par_rows(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Array2<f64> {
    let f = &f;
    let values: Vec<f64> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|i| (0..cols).map(move |j| f(i, j)))
        .collect();
    Array2::from_shape_vec((rows, cols), values).expect("rows·cols values")
}

fn euclidean_matrix(q: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>) -> Array2<f64> {
    let qsq: Vec<f64> = q.rows().into_iter().map(|r| r.dot(&r)).collect();
    let gsq: Vec<f64> = g.rows().into_iter().map(|r| r.dot(&r)).collect();
    par_rows(q.nrows(), g.nrows(), |i, j| {
        (qsq[i] + gsq[j] - 2.0 * q.row(i).dot(&g.row(j)))
            .max(0.0)
            .sqrt()
    })
}

fn unit_rows(m: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let n = norm(row.as_slice().expect("owned rows are contiguous"));
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        row.mapv_inplace(|v| v / n);
    }
    Ok(out)
}

fn cosine_matrix(q: &Array2<f64>, g: &Array2<f64>) -> Result<Array2<f64>> {
    let (qn, gn) = (unit_rows(q)?, unit_rows(g)?);
    Ok(par_rows(qn.nrows(), gn.nrows(), |i, j| {
        (1.0 - qn.row(i).dot(&gn.row(j))).clamp(0.0, 2.0)
    }))
}

/// `‖q − g‖₂` via `‖q‖² + ‖g‖² − 2q·g`, clamped at zero before the root.
pub fn euclidean_distances(queries: &[Embedding], gallery: &[Embedding]) -> Result<DistanceMatrix> {
    let (q, g) = stack_pair(queries, gallery)?;
    DistanceMatrix::new(
        euclidean_matrix(q.view(), g.view()),
        Metric::Euclidean.name(),
    )
}

/// `1 − cos(q, g)` in `[0, 2]`.
pub fn cosine_distances(queries: &[Embedding], gallery: &[Embedding]) -> Result<DistanceMatrix> {
    let (q, g) = stack_pair(queries, gallery)?;
    DistanceMatrix::new(cosine_matrix(&q, &g)?, Metric::Cosine.name())
}

/// `d×N` matrix of local features, one column per spatial location.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatureSet {
    data: Array2<f64>,
}

impl SpatialFeatureSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("spatial feature set"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spatial feature set"));
        }
        if data.columns().into_iter().any(|c| c.dot(&c) == 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn locations(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    fn unit_columns(&self) -> Array2<f64> {
        let mut out = self.data.clone();
        for mut col in out.columns_mut() {
            let n = col.dot(&col).sqrt();
            col.mapv_inplace(|v| v / n);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsrScore {
    /// `Σₙ maxₘ cos(xₙ, yₘ)`.
    pub total: f64,
    /// `total / N`.
    pub normalized: f64,
}

/// Matches each location of `x` to its most similar location in `y`.
pub fn dsr_score(x: &SpatialFeatureSet, y: &SpatialFeatureSet) -> Result<DsrScore> {
    if x.dim() != y.dim() {
        return Err(Error::shape("dsr feature dimension", x.dim(), y.dim()));
    }
    let sims = x.unit_columns().t().dot(&y.unit_columns());
    let total: f64 = sims
        .rows()
        .into_iter()
        .map(|r| r.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)))
        .sum();
    Ok(DsrScore {
        total,
        normalized: total / x.locations() as f64,
    })
}

/// `1 − normalized DSR score` for every query/gallery pair.
pub fn dsr_distances(
    queries: &[SpatialFeatureSet],
    gallery: &[SpatialFeatureSet],
) -> Result<DistanceMatrix> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::Empty("spatial feature sets"));
    }
    let rows: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|q| {
            gallery
                .iter()
                .map(|g| dsr_score(q, g).map(|s| 1.0 - s.normalized))
                .collect()
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data =
        Array2::from_shape_vec((queries.len(), gallery.len()), flat).expect("|Q|·|G| values");
    DistanceMatrix::new(data, "dsr")
}

/// Neighbors averaged into each query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QeParams {
    pub m: usize,
}

/// Gallery indices ordered by distance, ties by index.
fn argsort(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal));
    idx
}

/// `(f_q + Σ f_g) / (m + 1)` over the `m` nearest gallery embeddings.
pub fn query_expansion(
    query: &Embedding,
    gallery: &[Embedding],
    metric: Metric,
    p: QeParams,
) -> Result<Embedding> {
    Ok(query_expansion_batch(std::slice::from_ref(query), gallery, metric, p)?.remove(0))
}

pub fn query_expansion_batch(
    queries: &[Embedding],
    gallery: &[Embedding],
    metric: Metric,
    p: QeParams,
) -> Result<Vec<Embedding>> {
    if p.m == 0 {
        return Ok(queries.to_vec());
    }
    let dist = metric.distances(queries, gallery)?;
    query_expansion_from_distances(queries, gallery, &dist, p)
}

/// Query expansion with neighbors chosen from an existing distance matrix,
/// e.g. one already re-ranked.
pub fn query_expansion_from_distances(
    queries: &[Embedding],
    gallery: &[Embedding],
    dist: &DistanceMatrix,
    p: QeParams,
) -> Result<Vec<Embedding>> {
    if p.m > gallery.len() {
        return Err(Error::Precondition(format!(
            "query expansion m = {} exceeds gallery size {}",
            p.m,
            gallery.len()
        )));
    }
    if dist.num_queries() != queries.len() || dist.num_gallery() != gallery.len() {
        return Err(Error::shape(
            "query expansion distances",
            format!("({}, {})", queries.len(), gallery.len()),
            format!("({}, {})", dist.num_queries(), dist.num_gallery()),
        ));
    }
    if p.m == 0 {
        return Ok(queries.to_vec());
    }
    queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let row = dist.row(i).to_vec();
            let mut sum = Array1::from(q.as_slice().to_vec());
            for &j in argsort(&row).iter().take(p.m) {
                let g = ndarray::aview1(gallery[j].as_slice());
                if g.len() != sum.len() {
                    return Err(Error::shape(
                        "query expansion dimension",
                        sum.len(),
                        g.len(),
                    ));
                }
                sum += &g;
            }
            sum /= (p.m + 1) as f64;
            Embedding::new(sum.to_vec())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::InvalidParam(
                "rerank k1 and k2 must be positive".into(),
            ));
        }
        if self.k2 > self.k1 {
            return Err(Error::InvalidParam(format!(
                "rerank k2 = {} exceeds k1 = {}",
                self.k2, self.k1
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidParam(format!(
                "rerank lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Re-ranks from embeddings, building the query/gallery, query/query and
/// gallery/gallery distances with `metric`.
pub fn k_reciprocal_rerank(
    queries: &[Embedding],
    gallery: &[Embedding],
    metric: Metric,
    p: RerankParams,
) -> Result<DistanceMatrix> {
    let q_g = metric.distances(queries, gallery)?;
    let q_q = metric.distances(queries, queries)?;
    let g_g = metric.distances(gallery, gallery)?;
    k_reciprocal_rerank_distances(&q_g, q_q.view(), g_g.view(), p)
}

/// k-reciprocal neighbors of `i` within the first `k + 1` ranks.
fn k_reciprocal(rank: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    rank[i][..=k]
        .iter()
        .copied()
        .filter(|&j| rank[j][..=k].contains(&i))
        .collect()
}

/// Jaccard-refined distances from precomputed `q_g`, `q_q` and `g_g`
/// matrices. Distances are squared and scaled by each row's maximum before
/// neighbor encoding; the blended result keeps that scaling.
pub fn k_reciprocal_rerank_distances(
    q_g: &DistanceMatrix,
    q_q: ArrayView2<'_, f64>,
    g_g: ArrayView2<'_, f64>,
    p: RerankParams,
) -> Result<DistanceMatrix> {
    p.validate()?;
    let (nq, ng) = (q_g.num_queries(), q_g.num_gallery());
    if q_q.dim() != (nq, nq) {
        return Err(Error::shape(
            "rerank q_q",
            format!("({nq}, {nq})"),
            format!("{:?}", q_q.dim()),
        ));
    }
    if g_g.dim() != (ng, ng) {
        return Err(Error::shape(
            "rerank g_g",
            format!("({ng}, {ng})"),
            format!("{:?}", g_g.dim()),
        ));
    }
    let n = nq + ng;
    if n < p.k1 + 1 {
        return Err(Error::Precondition(format!(
            "re-ranking needs |Q| + |G| >= k1 + 1, got {n} with k1 = {}",
            p.k1
        )));
    }

    let top = concatenate![Axis(1), q_q, q_g.view()];
    let bottom = concatenate![Axis(1), q_g.view().t(), g_g];
    let mut original = concatenate![Axis(0), top, bottom].mapv(|d| d * d);
    for mut row in original.rows_mut() {
        let max = row.iter().fold(0.0f64, |m, &v| m.max(v));
        if max > 0.0 {
            row.mapv_inplace(|v| v / max);
        }
    }
    let rank: Vec<Vec<usize>> = original
        .rows()
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|r| argsort(r.as_slice().expect("owned rows are contiguous")))
        .collect();

    let half = (p.k1 as f64 / 2.0).round_ties_even() as usize;
    // sparse rows of the Gaussian-weighted neighbor encoding
    let encoding: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let base = k_reciprocal(&rank, i, p.k1);
            let mut expansion = base.clone();
            for &c in &base {
                let cand = k_reciprocal(&rank, c, half);
                let overlap = cand.iter().filter(|j| base.contains(j)).count();
                if overlap as f64 > 2.0 / 3.0 * cand.len() as f64 {
                    expansion.extend(cand);
                }
            }
            expansion.sort_unstable();
            expansion.dedup();
            let weights: Vec<f64> = expansion
                .iter()
                .map(|&j| (-original[[i, j]]).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            expansion
                .into_iter()
                .zip(weights)
                .map(|(j, w)| (j, w / total))
                .collect()
        })
        .collect();

    let encoding = if p.k2 == 1 {
        encoding
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut dense = vec![0.0; n];
                for &r in &rank[i][..p.k2] {
                    for &(j, v) in &encoding[r] {
                        dense[j] += v;
                    }
                }
                dense
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, v)| v != 0.0)
                    .map(|(j, v)| (j, v / p.k2 as f64))
                    .collect()
            })
            .collect()
    };

    let mut inverted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in encoding.iter().enumerate() {
        for &(j, v) in row {
            inverted[j].push((i, v));
        }
    }

    let rows: Vec<Vec<f64>> = (0..nq)
        .into_par_iter()
        .map(|i| {
            let mut shared = vec![0.0; n];
            for &(j, v) in &encoding[i] {
                for &(r, w) in &inverted[j] {
                    shared[r] += v.min(w);
                }
            }
            (nq..n)
                .map(|g| {
                    let jaccard = 1.0 - shared[g] / (2.0 - shared[g]);
                    (1.0 - p.lambda) * jaccard + p.lambda * original[[i, g]]
                })
                .collect()
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((nq, ng), flat).expect("|Q|·|G| values");
    DistanceMatrix::new(data, format!("{}+rerank", q_g.metric()))
}

/// Per query, gallery indices by ascending distance, ties by index.
pub fn rank_lists(d: &DistanceMatrix) -> Vec<Vec<usize>> {
    (0..d.num_queries())
        .into_par_iter()
        .map(|q| argsort(&d.row(q).to_vec()))
        .collect()
}
