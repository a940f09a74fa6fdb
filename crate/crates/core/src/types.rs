//! Dense value types shared across the pipeline.

use std::collections::{BTreeMap, HashSet};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|‖v‖₂ − 1|` for a vector flagged as normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Backbone output, indexed `[w, h, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    data: Array3<f64>,
}

impl FeatureMap {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("feature map"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self { data })
    }

    /// Builds a map from row-major `[w][h][c]` values.
    pub fn from_vec(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let len = values.len();
        let data = Array3::from_shape_vec((width, height, channels), values)
            .map_err(|_| Error::shape("FeatureMap::from_vec", width * height * channels, len))?;
        Self::new(data)
    }

    pub fn width(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    /// Number of spatial positions `W·H`.
    pub fn positions(&self) -> usize {
        self.width() * self.height()
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    /// Iterates the `W·H` values of channel `c`.
    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data
            .index_axis(ndarray::Axis(2), c)
            .into_iter()
            .copied()
    }
}

/// A retrieval vector, optionally carrying a unit-norm guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    data: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("embedding"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
        Ok(Self {
            data,
            normalized: false,
        })
    }

    /// Wraps a vector that is already unit-norm; fails if it is not.
    pub fn unit(data: Vec<f64>) -> Result<Self> {
        let mut e = Self::new(data)?;
        if (e.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized("Embedding::unit"));
        }
        e.normalized = true;
        Ok(e)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.data, &other.data)
    }
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &Embedding) -> Result<Embedding> {
    let data = normalized_vec(v.as_slice())?;
    Ok(Embedding {
        data,
        normalized: true,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    // hypot-style scaling keeps huge and tiny inputs representable
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * a.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

pub(crate) fn normalized_vec(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// Identity and camera labels of one query or gallery item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    pub person_id: u32,
    pub camera_id: u32,
}

impl ItemMeta {
    pub fn new(item_id: impl Into<String>, person_id: u32, camera_id: u32) -> Self {
        Self {
            item_id: item_id.into(),
            person_id,
            camera_id,
        }
    }
}

/// Checks item ids are unique and returns the number of items per person.
pub fn validate_meta_set(items: &[ItemMeta]) -> Result<BTreeMap<u32, usize>> {
    let mut seen = HashSet::with_capacity(items.len());
    let mut counts = BTreeMap::new();
    for item in items {
        if !seen.insert(item.item_id.as_str()) {
            return Err(Error::DuplicateItem(item.item_id.clone()));
        }
        *counts.entry(item.person_id).or_insert(0) += 1;
    }
    Ok(counts)
}

/// RGB image, indexed `[row, col, channel]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::Empty("image"));
        }
        if c != 3 {
            return Err(Error::shape("ImageTensor", "3 channels", c));
        }
        if data.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidParam(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[[row, col, channel]]
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Construction path for operators whose output is in range by
    /// construction.
    pub(crate) fn from_array_unchecked(data: Array3<f64>) -> Self {
        debug_assert!(data.iter().all(|x| (0.0..=1.0).contains(x)));
        Self { data }
    }
}

/// `|Q|×|G|` distances; lower is more similar.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    data: Array2<f64>,
    metric: String,
}

impl DistanceMatrix {
    pub fn new(data: Array2<f64>, metric: impl Into<String>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("distance matrix"));
        }
        Ok(Self {
            data,
            metric: metric.into(),
        })
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn num_queries(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_gallery(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, q: usize) -> ndarray::ArrayView1<'_, f64> {
        self.data.row(q)
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }
}
