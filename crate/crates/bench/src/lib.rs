//! Shared fixtures for the benchmark targets.

use alseg_core::micronet::{init_params, ModelParams};
use alseg_core::rng::seeded_rng;
use alseg_core::Tensor;
use rand::Rng;

/// Default-scale model plus a random input image and label map.
pub fn default_model() -> (ModelParams, Tensor, Tensor) {
    let params = init_params(0, 8, 3);
    let mut r = seeded_rng(1);
    let image = Tensor::from_vec(
        &[1, 32, 32],
        (0..1024).map(|_| r.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let labels = Tensor::from_vec(
        &[32, 32],
        (0..1024).map(|_| r.gen_range(0..3) as f32).collect(),
    )
    .unwrap();
    (params, image, labels)
}
