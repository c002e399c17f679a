//! Synthetic multi-class segmentation tasks with exact ground truth and two
//! intensity/noise domains, plus the dataset split bookkeeping and the
//! programmatic annotation oracle.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// Stable identifier of one sample within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SampleId(pub u32);

impl std::fmt::Display for SampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Acquisition domain of a sample. Domain A is high-contrast/low-noise,
/// domain B low-contrast/high-noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn as_str(&self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }

    pub fn parse(s: &str) -> Result<Domain> {
        match s {
            "A" => Ok(Domain::A),
            "B" => Ok(Domain::B),
            other => Err(Error::input(format!("unknown domain tag {:?}", other))),
        }
    }
}

/// Analytic description of one drawn object; the label mask is exactly the
/// set of pixel centers satisfying `contains`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeSpec {
    /// Filled ellipse, class 1.
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    /// Filled axis-aligned rectangle with inclusive integer bounds, class 2.
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
    /// Filled ring, class 3 (only generated when n_cl = 4).
    Annulus { cy: f64, cx: f64, r_outer: f64, r_inner: f64 },
}

impl ShapeSpec {
    pub fn class(&self) -> usize {
        match self {
            ShapeSpec::Ellipse { .. } => 1,
            ShapeSpec::Rect { .. } => 2,
            ShapeSpec::Annulus { .. } => 3,
        }
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        let (yf, xf) = (y as f64, x as f64);
        match *self {
            ShapeSpec::Ellipse { cy, cx, ry, rx } => {
                let dy = (yf - cy) / ry;
                let dx = (xf - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
            ShapeSpec::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
            ShapeSpec::Annulus { cy, cx, r_outer, r_inner } => {
                let d2 = (yf - cy) * (yf - cy) + (xf - cx) * (xf - cx);
                d2 <= r_outer * r_outer && d2 >= r_inner * r_inner
            }
        }
    }

    /// Inclusive pixel bounding box.
    fn bbox(&self) -> (usize, usize, usize, usize) {
        match *self {
            ShapeSpec::Ellipse { cy, cx, ry, rx } => (
                (cy - ry).floor().max(0.0) as usize,
                (cx - rx).floor().max(0.0) as usize,
                (cy + ry).ceil() as usize,
                (cx + rx).ceil() as usize,
            ),
            ShapeSpec::Rect { y0, x0, y1, x1 } => (y0, x0, y1, x1),
            ShapeSpec::Annulus { cy, cx, r_outer, .. } => (
                (cy - r_outer).floor().max(0.0) as usize,
                (cx - r_outer).floor().max(0.0) as usize,
                (cy + r_outer).ceil() as usize,
                (cx + r_outer).ceil() as usize,
            ),
        }
    }
}

fn boxes_overlap(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    // Inflate by one pixel so objects stay separated.
    let (ay0, ax0, ay1, ax1) = a;
    let (by0, bx0, by1, bx1) = b;
    !(ay1 + 1 < by0 || by1 + 1 < ay0 || ax1 + 1 < bx0 || bx1 + 1 < ax0)
}

/// One synthetic sample: image in `[0, 1]`, exact label mask, domain tag.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: SampleId,
    pub image: Tensor,
    pub label: Tensor,
    pub domain: Domain,
}

/// Standard normal draw via Box-Muller, deterministic in the generator state.
fn normal(r: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = r.gen_range(1e-12..1.0);
    let u2: f64 = r.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn sample_shape(r: &mut ChaCha8Rng, h: usize, w: usize, n_cl: usize) -> ShapeSpec {
    let m = h.min(w) as f64;
    let class = r.gen_range(1..n_cl);
    match class {
        1 => {
            let ry = r.gen_range(0.16..0.21) * m;
            let rx = r.gen_range(0.16..0.21) * m;
            let cy = r.gen_range(ry + 1.0..h as f64 - 2.0 - ry);
            let cx = r.gen_range(rx + 1.0..w as f64 - 2.0 - rx);
            ShapeSpec::Ellipse { cy, cx, ry, rx }
        }
        2 => {
            let hy = r.gen_range(0.13..0.18) * m;
            let hx = r.gen_range(0.13..0.18) * m;
            let cy = r.gen_range(hy + 1.0..h as f64 - 2.0 - hy);
            let cx = r.gen_range(hx + 1.0..w as f64 - 2.0 - hx);
            ShapeSpec::Rect {
                y0: (cy - hy).ceil() as usize,
                x0: (cx - hx).ceil() as usize,
                y1: (cy + hy).floor() as usize,
                x1: (cx + hx).floor() as usize,
            }
        }
        _ => {
            let r_outer = r.gen_range(0.19..0.22) * m;
            let r_inner = r_outer * r.gen_range(0.40..0.55);
            let cy = r.gen_range(r_outer + 1.0..h as f64 - 2.0 - r_outer);
            let cx = r.gen_range(r_outer + 1.0..w as f64 - 2.0 - r_outer);
            ShapeSpec::Annulus { cy, cx, r_outer, r_inner }
        }
    }
}

/// Generate a dataset along with the analytic shape specs that drew each
/// sample (for auditing the labels).
pub fn generate_with_specs(
    seed: u64,
    n_samples: usize,
    h: usize,
    w: usize,
    n_cl: usize,
) -> Result<(Vec<Sample>, Vec<Vec<ShapeSpec>>)> {
    if !(3..=4).contains(&n_cl) {
        return Err(Error::input(format!("n_cl must be 3 or 4, got {}", n_cl)));
    }
    if h < 16 || w < 16 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::input(format!(
            "image dims must be even and >= 16, got {}x{}",
            h, w
        )));
    }
    let mut samples = Vec::with_capacity(n_samples);
    let mut all_specs = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let mut r = rng::stream_rng(seed, i as u64, "sample", 0);
        let domain = if i % 2 == 0 { Domain::A } else { Domain::B };

        let n_objects = r.gen_range(1..=2usize);
        let mut specs: Vec<ShapeSpec> = vec![sample_shape(&mut r, h, w, n_cl)];
        if n_objects == 2 {
            // Bounded retries; fall back to one object if placement fails.
            for _ in 0..20 {
                let cand = sample_shape(&mut r, h, w, n_cl);
                if !boxes_overlap(cand.bbox(), specs[0].bbox()) {
                    specs.push(cand);
                    break;
                }
            }
        }

        // Domain B is harder (twice the noise, lower contrast) but stays
        // clearly learnable, so sample difficulty varies within each domain
        // rather than one domain drowning out every selection signal.
        let (bg_base, obj_lo, obj_hi, sigma) = match domain {
            Domain::A => (0.10, 0.65, 0.95, 0.05),
            Domain::B => (0.22, 0.50, 0.85, 0.10),
        };
        let bg = bg_base + r.gen_range(-0.04..0.04);
        let intensities: Vec<f64> = specs.iter().map(|_| r.gen_range(obj_lo..obj_hi)).collect();

        let mut image = vec![0.0f32; h * w];
        let mut label = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut v = bg;
                for (s, &intensity) in specs.iter().zip(&intensities) {
                    if s.contains(y, x) {
                        v = intensity;
                        label[y * w + x] = s.class() as f32;
                        break;
                    }
                }
                v += sigma * normal(&mut r);
                image[y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }

        samples.push(Sample {
            id: SampleId(i as u32),
            image: Tensor::from_vec_unchecked(vec![1, h, w], image),
            label: Tensor::from_vec_unchecked(vec![h, w], label),
            domain,
        });
        all_specs.push(specs);
    }
    Ok((samples, all_specs))
}

/// Generate a synthetic dataset; fully deterministic in `seed`.
pub fn generate_dataset(
    seed: u64,
    n_samples: usize,
    h: usize,
    w: usize,
    n_cl: usize,
) -> Result<Vec<Sample>> {
    Ok(generate_with_specs(seed, n_samples, h, w, n_cl)?.0)
}

/// A dataset with id-based lookup.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    by_id: BTreeMap<SampleId, usize>,
    pub n_cl: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, n_cl: usize) -> Result<Dataset> {
        let mut by_id = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if by_id.insert(s.id, i).is_some() {
                return Err(Error::input(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Dataset { samples, by_id, n_cl })
    }

    pub fn get(&self, id: SampleId) -> Option<&Sample> {
        self.by_id.get(&id).map(|&i| &self.samples[i])
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Disjoint partition of the dataset ids into annotated, pool, validation
/// and test sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PoolState {
    pub annotated: BTreeSet<SampleId>,
    pub pool: BTreeSet<SampleId>,
    pub validation: BTreeSet<SampleId>,
    pub test: BTreeSet<SampleId>,
}

impl PoolState {
    pub fn total(&self) -> usize {
        self.annotated.len() + self.pool.len() + self.validation.len() + self.test.len()
    }
}

/// Uniform disjoint random split; everything not assigned lands in the pool.
pub fn initial_split(
    samples: &[Sample],
    seed: u64,
    n_initial: usize,
    n_val: usize,
    n_test: usize,
) -> Result<PoolState> {
    let n = samples.len();
    if n_initial + n_val + n_test > n {
        return Err(Error::input(format!(
            "split sizes {}+{}+{} exceed {} samples",
            n_initial, n_val, n_test, n
        )));
    }
    let mut ids: Vec<SampleId> = samples.iter().map(|s| s.id).collect();
    let mut r = rng::stream_rng(seed, 0, "split", 0);
    // Fisher-Yates.
    for i in (1..ids.len()).rev() {
        let j = r.gen_range(0..=i);
        ids.swap(i, j);
    }
    let annotated: BTreeSet<SampleId> = ids[..n_initial].iter().copied().collect();
    let validation: BTreeSet<SampleId> =
        ids[n_initial..n_initial + n_val].iter().copied().collect();
    let test: BTreeSet<SampleId> = ids[n_initial + n_val..n_initial + n_val + n_test]
        .iter()
        .copied()
        .collect();
    let pool: BTreeSet<SampleId> = ids[n_initial + n_val + n_test..].iter().copied().collect();
    Ok(PoolState {
        annotated,
        pool,
        validation,
        test,
    })
}

/// Reveal the stored ground-truth labels for `ids`, moving them from the
/// pool to the annotated set.
pub fn oracle_annotate<'a>(
    dataset: &'a Dataset,
    state: &mut PoolState,
    ids: &[SampleId],
) -> Result<Vec<&'a Sample>> {
    // Validate before mutating.
    for &id in ids {
        if dataset.get(id).is_none() {
            return Err(Error::input(format!("unknown sample id {}", id)));
        }
        if state.annotated.contains(&id) {
            return Err(Error::state(format!("sample {} is already annotated", id)));
        }
        if !state.pool.contains(&id) {
            return Err(Error::state(format!("sample {} is not in the pool", id)));
        }
    }
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        state.pool.remove(&id);
        state.annotated.insert(id);
        out.push(dataset.get(id).expect("validated above"));
    }
    Ok(out)
}
