//! MC-dropout sampling, the uncertainty score, and extraction of
//! abstraction-layer responses and image descriptors for pool samples.

use crate::error::{Error, Result};
use crate::micronet::{forward_abst, forward_logits, ForwardMode, ModelParams};
use crate::synthdata::SampleId;
use crate::tensor::{softmax_channels, Tensor};

/// Softmax outputs of `n_i` stochastic forward passes for one sample.
#[derive(Debug, Clone)]
pub struct InferenceStack {
    pub sample_id: SampleId,
    /// `[n_i, n_cl, H, W]` probabilities.
    pub probs: Tensor,
}

impl InferenceStack {
    pub fn n_inferences(&self) -> usize {
        self.probs.dims()[0]
    }

    pub fn n_classes(&self) -> usize {
        self.probs.dims()[1]
    }
}

/// Spatially pooled abstraction-layer activations of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub sample_id: SampleId,
    pub vec: Vec<f32>,
}

/// Run `n_i` MC-dropout forward passes; pass `i` uses seed `seed + i`.
pub fn mc_inferences(
    params: &ModelParams,
    image: &Tensor,
    n_i: usize,
    dropout: f64,
    seed: u64,
    sample_id: SampleId,
) -> Result<InferenceStack> {
    if n_i < 2 {
        return Err(Error::input(format!("n_i must be >= 2, got {}", n_i)));
    }
    let mut probs: Option<Tensor> = None;
    for pass in 0..n_i {
        let logits = forward_logits(
            params,
            image,
            ForwardMode::McDropout {
                seed: seed.wrapping_add(pass as u64),
                dropout,
            },
        )?;
        let sm = softmax_channels(&logits)?;
        let stack = probs.get_or_insert_with(|| {
            let mut dims = vec![n_i];
            dims.extend_from_slice(sm.dims());
            Tensor::zeros(&dims)
        });
        let slice_len = sm.len();
        stack.data_mut()[pass * slice_len..(pass + 1) * slice_len].copy_from_slice(sm.data());
    }
    Ok(InferenceStack {
        sample_id,
        probs: probs.expect("n_i >= 2"),
    })
}

/// Mean over foreground classes and voxels of the population variance of the
/// per-voxel class probability across the stack's inferences.
pub fn uncertainty_score(stack: &InferenceStack, foreground_classes: &[usize]) -> Result<f64> {
    if foreground_classes.is_empty() {
        return Err(Error::input("foreground class set must be non-empty"));
    }
    let n_i = stack.n_inferences();
    let n_cl = stack.n_classes();
    for &c in foreground_classes {
        if c >= n_cl {
            return Err(Error::input(format!(
                "foreground class {} out of range for {} classes",
                c, n_cl
            )));
        }
    }
    let plane: usize = stack.probs.dims()[2] * stack.probs.dims()[3];
    let data = stack.probs.data();
    let slice_len = n_cl * plane;
    let inv_n = 1.0 / n_i as f64;

    let mut voxel_mean_sum = 0.0f64;
    for x in 0..plane {
        let mut class_var_sum = 0.0f64;
        for &c in foreground_classes {
            let mut s = 0.0f64;
            let mut s2 = 0.0f64;
            for i in 0..n_i {
                let p = f64::from(data[i * slice_len + c * plane + x]);
                s += p;
                s2 += p * p;
            }
            let mean = s * inv_n;
            class_var_sum += (s2 * inv_n - mean * mean).max(0.0);
        }
        voxel_mean_sum += class_var_sum / foreground_classes.len() as f64;
    }
    Ok(voxel_mean_sum / plane as f64)
}

/// Deterministic-mode forward pass; returns the post-ReLU abstraction
/// activations.
pub fn abstraction_response(params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    forward_abst(params, image)
}

/// Spatial mean of each abstraction channel.
pub fn image_descriptor(sample_id: SampleId, abst: &Tensor) -> Descriptor {
    let (c, h, w) = (abst.dims()[0], abst.dims()[1], abst.dims()[2]);
    let plane = h * w;
    let vec = (0..c)
        .map(|ci| {
            let s: f64 = abst.data()[ci * plane..(ci + 1) * plane]
                .iter()
                .map(|&v| f64::from(v))
                .sum();
            (s / plane as f64) as f32
        })
        .collect();
    Descriptor { sample_id, vec }
}
