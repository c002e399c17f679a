//! Pairwise similarity and distance machinery: cosine similarity of image
//! descriptors, content distance between abstraction responses, the
//! distance-to-similarity transform, and the per-location channel entropy map.

use crate::error::{Error, Result};
use crate::inference::Descriptor;
use crate::micronet::channel_entropy;
use crate::synthdata::SampleId;
use crate::tensor::Tensor;

/// Norms below this count as zero for cosine similarity.
const NORM_FLOOR: f64 = 1e-12;

/// Cosine of the angle between two descriptors; 0 if either norm vanishes.
pub fn cosine_similarity(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    if a.vec.len() != b.vec.len() {
        return Err(Error::shape(format!(
            "descriptor lengths differ: {} vs {}",
            a.vec.len(),
            b.vec.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.vec.iter().zip(&b.vec) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean squared error between two same-shaped responses.
pub fn content_distance(ra: &Tensor, rb: &Tensor) -> Result<f64> {
    if ra.dims() != rb.dims() {
        return Err(Error::shape(format!(
            "response shapes differ: {:?} vs {:?}",
            ra.dims(),
            rb.dims()
        )));
    }
    let n = ra.len() as f64;
    let mut s = 0.0f64;
    for (&x, &y) in ra.data().iter().zip(rb.data()) {
        let d = f64::from(x) - f64::from(y);
        s += d * d;
    }
    Ok(s / n)
}

/// Map a non-negative distance to a similarity in (0, 1]: `1 / (1 + d)`.
pub fn distance_to_similarity(d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::input(format!("distance must be >= 0, got {}", d)));
    }
    Ok(1.0 / (1.0 + d))
}

/// Per-location channel entropy of an abstraction response, under the same
/// mass normalization as the entropy loss; `entropy_loss(abst)` equals the
/// negated sum of this map.
pub fn channel_entropy_map(abst: &Tensor) -> Result<Tensor> {
    if abst.dims().len() != 3 {
        return Err(Error::shape(format!(
            "abstraction response must be [C, H, W], got {:?}",
            abst.dims()
        )));
    }
    if abst.data().iter().any(|&v| v < 0.0) {
        return Err(Error::input("negative activation in abstraction response"));
    }
    let (c, h, w) = (abst.dims()[0], abst.dims()[1], abst.dims()[2]);
    let plane = h * w;
    let mut buf = vec![0.0f64; c];
    let mut out = vec![0.0f32; plane];
    for x in 0..plane {
        for (ci, b) in buf.iter_mut().enumerate() {
            *b = f64::from(abst.data()[ci * plane + x]);
        }
        out[x] = channel_entropy(&buf) as f32;
    }
    Ok(Tensor::from_vec_unchecked(vec![h, w], out))
}

/// Similarity scores between a candidate set (rows) and a pool (columns);
/// higher means more similar.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    rows: Vec<SampleId>,
    cols: Vec<SampleId>,
    values: Vec<f64>,
}

impl AffinityMatrix {
    /// Cosine similarity of image descriptors.
    pub fn from_descriptors(rows: &[&Descriptor], cols: &[&Descriptor]) -> Result<AffinityMatrix> {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for r in rows {
            for c in cols {
                values.push(cosine_similarity(r, c)?);
            }
        }
        Ok(AffinityMatrix {
            rows: rows.iter().map(|d| d.sample_id).collect(),
            cols: cols.iter().map(|d| d.sample_id).collect(),
            values,
        })
    }

    /// Externally supplied similarity scores, row-major over
    /// `rows.len() * cols.len()`.
    pub fn from_values(
        rows: Vec<SampleId>,
        cols: Vec<SampleId>,
        values: Vec<f64>,
    ) -> Result<AffinityMatrix> {
        if values.len() != rows.len() * cols.len() {
            return Err(Error::shape(format!(
                "{} values for a {}x{} matrix",
                values.len(),
                rows.len(),
                cols.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite similarity value"));
        }
        Ok(AffinityMatrix { rows, cols, values })
    }

    /// Transformed content distance between abstraction responses.
    pub fn from_responses(
        rows: &[(SampleId, &Tensor)],
        cols: &[(SampleId, &Tensor)],
    ) -> Result<AffinityMatrix> {
        let mut values = Vec::with_capacity(rows.len() * cols.len());
        for (_, ra) in rows {
            for (_, rb) in cols {
                values.push(distance_to_similarity(content_distance(ra, rb)?)?);
            }
        }
        Ok(AffinityMatrix {
            rows: rows.iter().map(|(id, _)| *id).collect(),
            cols: cols.iter().map(|(id, _)| *id).collect(),
            values,
        })
    }

    pub fn rows(&self) -> &[SampleId] {
        &self.rows
    }

    pub fn cols(&self) -> &[SampleId] {
        &self.cols
    }

    pub fn row_index(&self, id: SampleId) -> Option<usize> {
        self.rows.iter().position(|&r| r == id)
    }

    /// Similarity values of one candidate row, in column order.
    pub fn row(&self, row_idx: usize) -> &[f64] {
        &self.values[row_idx * self.cols.len()..(row_idx + 1) * self.cols.len()]
    }
}
