//! A small fully-convolutional segmentation network with spatial dropout and
//! a designated abstraction layer, plus its losses, hand-derived gradients,
//! and Adam updates.
//!
//! Fixed architecture for a `[1, H, W]` input (H, W even, >= 8):
//!
//! ```text
//! conv3x3(n_ch) + ReLU
//! conv3x3 stride 2 (2*n_ch) + ReLU
//! conv3x3(2*n_ch) + ReLU          <- abstraction layer
//! spatial dropout(p)
//! conv3x3(2*n_ch) + ReLU
//! nearest-neighbor upsample x2
//! conv3x3(n_cl)                   <- logits
//! ```
//!
//! The training path (`total_loss_and_grad`) runs forward and backward at
//! 64-bit precision internally so analytic gradients track a 64-bit
//! finite-difference oracle; public tensors stay 32-bit.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{conv2d_grad_raw, conv2d_raw, ConvShape, Scalar, Tensor};
use rand::Rng;

/// Offset added to the channel mass before normalizing activations into a
/// distribution for the entropy loss.
pub const ENTROPY_EPS: f64 = 1e-8;

const KERNEL: usize = 3;
const N_LAYERS: usize = 5;
/// Layer names, used in error messages and checkpoints.
pub const LAYER_NAMES: [&str; N_LAYERS] = ["conv1", "conv2", "conv3", "conv4", "conv5"];
const STRIDES: [usize; N_LAYERS] = [1, 2, 1, 1, 1];

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub learning_rate: f64,
    pub dropout_rate: f64,
    /// Entropy-loss weight.
    pub lambda: f64,
    pub batch_size: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            learning_rate: 5e-4,
            dropout_rate: 0.5,
            lambda: 0.0,
            batch_size: 8,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::input("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::input("dropout_rate must be in [0, 1)"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::input("lambda must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::input("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Parameters (or gradients of the same shapes) of one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// One tensor pair per layer, in architecture order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<ConvParams>,
}

impl ParamSet {
    fn zeros_like(other: &ParamSet) -> ParamSet {
        ParamSet {
            layers: other
                .layers
                .iter()
                .map(|l| ConvParams {
                    kernels: Tensor::zeros(l.kernels.dims()),
                    bias: Tensor::zeros(l.bias.dims()),
                })
                .collect(),
        }
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.kernels.len() + l.bias.len())
            .sum()
    }
}

/// All trainable weights of the network plus Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub n_ch: usize,
    pub n_cl: usize,
    pub weights: ParamSet,
    pub adam_m: ParamSet,
    pub adam_v: ParamSet,
    pub adam_t: u64,
}

impl ModelParams {
    /// Channel count at the abstraction layer.
    pub fn abstraction_channels(&self) -> usize {
        2 * self.n_ch
    }
}

/// Per-layer `(c_out, c_in)` for the fixed architecture.
fn layer_channels(n_ch: usize, n_cl: usize) -> [(usize, usize); N_LAYERS] {
    [
        (n_ch, 1),
        (2 * n_ch, n_ch),
        (2 * n_ch, 2 * n_ch),
        (2 * n_ch, 2 * n_ch),
        (n_cl, 2 * n_ch),
    ]
}

/// Initialize parameters: kernels uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`,
/// biases zero, Adam state zero. Fully determined by `seed`.
pub fn init_params(seed: u64, n_ch: usize, n_cl: usize) -> ModelParams {
    assert!(n_ch >= 1, "n_ch must be >= 1");
    assert!(n_cl >= 2, "n_cl must be >= 2");
    let mut r = rng::stream_rng(seed, 0, "param-init", 0);
    let mut layers = Vec::with_capacity(N_LAYERS);
    for (c_out, c_in) in layer_channels(n_ch, n_cl) {
        let fan_in = (c_in * KERNEL * KERNEL) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let kernels: Vec<f32> = (0..c_out * c_in * KERNEL * KERNEL)
            .map(|_| r.gen_range(-bound..bound) as f32)
            .collect();
        layers.push(ConvParams {
            kernels: Tensor::from_vec_unchecked(vec![c_out, c_in, KERNEL, KERNEL], kernels),
            bias: Tensor::zeros(&[c_out]),
        });
    }
    let weights = ParamSet { layers };
    let adam_m = ParamSet::zeros_like(&weights);
    let adam_v = ParamSet::zeros_like(&weights);
    ModelParams {
        n_ch,
        n_cl,
        weights,
        adam_m,
        adam_v,
        adam_t: 0,
    }
}

/// How a forward pass treats spatial dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardMode {
    /// Fresh dropout mask sampled from `seed`, survivors scaled by `1/(1-p)`.
    Train { seed: u64, dropout: f64 },
    /// Same sampling as `Train`; used for MC-dropout inference.
    McDropout { seed: u64, dropout: f64 },
    /// No dropout and no rescaling.
    Deterministic,
}

/// Everything recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Pre-activation outputs of the five conv layers (`conv5` = logits).
    pub pre_activations: Vec<Tensor>,
    /// Post-ReLU outputs of the first four conv layers.
    pub post_activations: Vec<Tensor>,
    /// Post-ReLU abstraction-layer response, before dropout.
    pub abst: Tensor,
    /// Raw logits, same spatial dims as the input.
    pub logits: Tensor,
    /// Per-channel dropout mask (`true` = kept), if dropout was sampled.
    pub dropout_mask: Option<Vec<bool>>,
}

/// Sample the spatial dropout mask used by a forward pass with the given
/// seed: each abstraction channel is dropped independently with probability
/// `p`. Exposed so oracles can reproduce the exact stochastic function.
pub fn dropout_mask_for_seed(channels: usize, p: f64, seed: u64) -> Vec<bool> {
    let mut r = rng::seeded_rng(seed);
    (0..channels).map(|_| !r.gen_bool(p)).collect()
}

struct EngineDims {
    h: usize,
    w: usize,
    h2: usize,
    w2: usize,
    shapes: [ConvShape; N_LAYERS],
}

fn engine_dims(n_ch: usize, n_cl: usize, h: usize, w: usize) -> Result<EngineDims> {
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "input spatial dims must be even, got {}x{}",
            h, w
        )));
    }
    if h < 8 || w < 8 {
        return Err(Error::shape(format!(
            "input spatial dims must be >= 8, got {}x{}",
            h, w
        )));
    }
    let ch = layer_channels(n_ch, n_cl);
    let s1 = ConvShape::new(ch[0].1, h, w, ch[0].0, KERNEL, STRIDES[0], 1)?;
    let s2 = ConvShape::new(ch[1].1, h, w, ch[1].0, KERNEL, STRIDES[1], 1)?;
    let (h2, w2) = (s2.h_out, s2.w_out);
    let s3 = ConvShape::new(ch[2].1, h2, w2, ch[2].0, KERNEL, STRIDES[2], 1)?;
    let s4 = ConvShape::new(ch[3].1, h2, w2, ch[3].0, KERNEL, STRIDES[3], 1)?;
    let s5 = ConvShape::new(ch[4].1, h, w, ch[4].0, KERNEL, STRIDES[4], 1)?;
    Ok(EngineDims {
        h,
        w,
        h2,
        w2,
        shapes: [s1, s2, s3, s4, s5],
    })
}

struct EngineParams<T> {
    kernels: Vec<Vec<T>>,
    bias: Vec<Vec<T>>,
}

impl<T: Scalar> EngineParams<T> {
    fn from_model(params: &ModelParams) -> EngineParams<T> {
        EngineParams {
            kernels: params
                .weights
                .layers
                .iter()
                .map(|l| l.kernels.data().iter().map(|&v| T::from_acc(f64::from(v))).collect())
                .collect(),
            bias: params
                .weights
                .layers
                .iter()
                .map(|l| l.bias.data().iter().map(|&v| T::from_acc(f64::from(v))).collect())
                .collect(),
        }
    }
}

struct EngineTrace<T> {
    input: Vec<T>,
    z: Vec<Vec<T>>,
    a: Vec<Vec<T>>,
    dropped: Vec<T>,
    upsampled: Vec<T>,
    mask_scale: Option<(Vec<bool>, f64)>,
}

fn relu_forward<T: Scalar>(z: &[T]) -> Vec<T> {
    z.iter()
        .map(|&v| if v.acc() > 0.0 { v } else { T::from_acc(0.0) })
        .collect()
}

fn forward_engine<T: Scalar>(
    ep: &EngineParams<T>,
    dims: &EngineDims,
    image: &[f32],
    mask_scale: Option<(Vec<bool>, f64)>,
) -> EngineTrace<T> {
    let input: Vec<T> = image.iter().map(|&v| T::from_acc(f64::from(v))).collect();
    let mut z: Vec<Vec<T>> = Vec::with_capacity(N_LAYERS);
    let mut a: Vec<Vec<T>> = Vec::with_capacity(4);

    let run = |shape: &ConvShape, inp: &[T], layer: usize| -> Vec<T> {
        let mut out = vec![T::from_acc(0.0); shape.c_out * shape.h_out * shape.w_out];
        conv2d_raw(shape, inp, &ep.kernels[layer], &ep.bias[layer], &mut out);
        out
    };

    z.push(run(&dims.shapes[0], &input, 0));
    a.push(relu_forward(&z[0]));
    z.push(run(&dims.shapes[1], &a[0], 1));
    a.push(relu_forward(&z[1]));
    z.push(run(&dims.shapes[2], &a[1], 2));
    a.push(relu_forward(&z[2]));

    let plane2 = dims.h2 * dims.w2;
    let dropped: Vec<T> = match &mask_scale {
        Some((mask, scale)) => {
            let mut d = a[2].clone();
            for (c, &keep) in mask.iter().enumerate() {
                let f = if keep { *scale } else { 0.0 };
                for v in &mut d[c * plane2..(c + 1) * plane2] {
                    *v = T::from_acc(v.acc() * f);
                }
            }
            d
        }
        None => a[2].clone(),
    };

    z.push(run(&dims.shapes[3], &dropped, 3));
    a.push(relu_forward(&z[3]));

    // Nearest-neighbor upsample x2.
    let c_a = dims.shapes[3].c_out;
    let mut upsampled = vec![T::from_acc(0.0); c_a * dims.h * dims.w];
    for c in 0..c_a {
        for y in 0..dims.h {
            let src = &a[3][c * plane2 + (y / 2) * dims.w2..];
            let dst = &mut upsampled[c * dims.h * dims.w + y * dims.w..][..dims.w];
            for (x, o) in dst.iter_mut().enumerate() {
                *o = src[x / 2];
            }
        }
    }

    z.push(run(&dims.shapes[4], &upsampled, 4));

    EngineTrace {
        input,
        z,
        a,
        dropped,
        upsampled,
        mask_scale,
    }
}

fn run_engine(
    params: &ModelParams,
    image: &Tensor,
    mode: ForwardMode,
) -> Result<(EngineDims, EngineTrace<f64>)> {
    let (h, w) = check_image(image)?;
    let dims = engine_dims(params.n_ch, params.n_cl, h, w)?;
    let mask_scale = match mode {
        ForwardMode::Train { seed, dropout } | ForwardMode::McDropout { seed, dropout } => {
            if !(0.0..1.0).contains(&dropout) {
                return Err(Error::input("dropout rate must be in [0, 1)"));
            }
            let mask = dropout_mask_for_seed(2 * params.n_ch, dropout, seed);
            Some((mask, 1.0 / (1.0 - dropout)))
        }
        ForwardMode::Deterministic => None,
    };
    let ep = EngineParams::<f64>::from_model(params);
    let trace = forward_engine(&ep, &dims, image.data(), mask_scale);
    Ok((dims, trace))
}

fn to_tensor(v: &[f64], d: &[usize]) -> Tensor {
    Tensor::from_vec_unchecked(d.to_vec(), v.iter().map(|&x| x as f32).collect())
}

/// Like [`forward`], but returns only the logits. Identical numerics without
/// materializing the full trace; the hot path for MC scoring and evaluation.
pub fn forward_logits(params: &ModelParams, image: &Tensor, mode: ForwardMode) -> Result<Tensor> {
    let (dims, trace) = run_engine(params, image, mode)?;
    let s = &dims.shapes[4];
    Ok(to_tensor(&trace.z[4], &[s.c_out, s.h_out, s.w_out]))
}

/// Deterministic-mode abstraction response only.
pub(crate) fn forward_abst(params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    let (dims, trace) = run_engine(params, image, ForwardMode::Deterministic)?;
    let s = &dims.shapes[2];
    Ok(to_tensor(&trace.a[2], &[s.c_out, s.h_out, s.w_out]))
}

/// Run the network on a `[1, H, W]` image.
///
/// `Train` and `McDropout` sample a fresh channel mask from their seed;
/// `Deterministic` applies no dropout and no rescaling.
pub fn forward(params: &ModelParams, image: &Tensor, mode: ForwardMode) -> Result<ForwardTrace> {
    let (dims, trace) = run_engine(params, image, mode)?;
    let shape_dims: Vec<Vec<usize>> = dims
        .shapes
        .iter()
        .map(|s| vec![s.c_out, s.h_out, s.w_out])
        .collect();
    let pre_activations: Vec<Tensor> = trace
        .z
        .iter()
        .zip(&shape_dims)
        .map(|(z, d)| to_tensor(z, d))
        .collect();
    let post_activations: Vec<Tensor> = trace
        .a
        .iter()
        .zip(&shape_dims)
        .map(|(a, d)| to_tensor(a, d))
        .collect();
    let abst = post_activations[2].clone();
    let logits = pre_activations[4].clone();
    Ok(ForwardTrace {
        pre_activations,
        post_activations,
        abst,
        logits,
        dropout_mask: trace.mask_scale.map(|(m, _)| m),
    })
}

fn check_image(image: &Tensor) -> Result<(usize, usize)> {
    if image.dims().len() != 3 || image.dims()[0] != 1 {
        return Err(Error::shape(format!(
            "image must be [1, H, W], got {:?}",
            image.dims()
        )));
    }
    Ok((image.dims()[1], image.dims()[2]))
}

/// Class ids from a `[H, W]` label tensor, validated against `n_cl`.
pub(crate) fn label_ids(labels: &Tensor, n_cl: usize, h: usize, w: usize) -> Result<Vec<usize>> {
    if labels.dims() != [h, w] {
        return Err(Error::shape(format!(
            "labels must be [{}, {}], got {:?}",
            h,
            w,
            labels.dims()
        )));
    }
    labels
        .data()
        .iter()
        .map(|&v| {
            if v < 0.0 || v.fract() != 0.0 || (v as usize) >= n_cl {
                Err(Error::input(format!(
                    "label {} out of range for {} classes",
                    v, n_cl
                )))
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

/// Cross-entropy at the softmax layer: mean over pixels of the negative log
/// probability of the true class.
pub fn seg_loss(logits: &Tensor, labels: &Tensor) -> Result<f64> {
    if logits.dims().len() != 3 {
        return Err(Error::shape(format!(
            "logits must be [C, H, W], got {:?}",
            logits.dims()
        )));
    }
    let (n_cl, h, w) = (logits.dims()[0], logits.dims()[1], logits.dims()[2]);
    let ids = label_ids(labels, n_cl, h, w)?;
    let z: Vec<f64> = logits.data().iter().map(|&v| f64::from(v)).collect();
    let (loss, _) = ce_loss_grad_engine::<f64>(&z, &ids, n_cl, h * w, false);
    Ok(loss)
}

/// Cross-entropy loss and (optionally) its gradient at the logits, already
/// divided by the pixel count.
fn ce_loss_grad_engine<T: Scalar>(
    z: &[T],
    ids: &[usize],
    n_cl: usize,
    plane: usize,
    want_grad: bool,
) -> (f64, Vec<T>) {
    let mut loss = 0.0f64;
    let mut grad = if want_grad {
        vec![T::from_acc(0.0); z.len()]
    } else {
        Vec::new()
    };
    let inv = 1.0 / plane as f64;
    for x in 0..plane {
        let mut max = f64::NEG_INFINITY;
        for c in 0..n_cl {
            max = max.max(z[c * plane + x].acc());
        }
        let mut sum = 0.0f64;
        for c in 0..n_cl {
            sum += (z[c * plane + x].acc() - max).exp();
        }
        let lse = max + sum.ln();
        loss += lse - z[ids[x] * plane + x].acc();
        if want_grad {
            for c in 0..n_cl {
                let p = (z[c * plane + x].acc() - lse).exp();
                let y = if c == ids[x] { 1.0 } else { 0.0 };
                grad[c * plane + x] = T::from_acc((p - y) * inv);
            }
        }
    }
    (loss * inv, grad)
}

/// Shannon entropy (nats) of the mass-normalized channel vector
/// `p_c = (a_c + eps) / sum(a_c + eps)`.
pub(crate) fn channel_entropy(vals: &[f64]) -> f64 {
    let mut s = 0.0f64;
    for &v in vals {
        s += v + ENTROPY_EPS;
    }
    let mut h = 0.0f64;
    for &v in vals {
        let p = (v + ENTROPY_EPS) / s;
        h -= p * p.ln();
    }
    h
}

/// Entropy loss at the abstraction layer: the negated sum over all spatial
/// locations of the channel entropy. Always in `[-H*W*ln(C), 0]`.
pub fn entropy_loss(abst: &Tensor) -> Result<f64> {
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
    let mut total = 0.0f64;
    for x in 0..plane {
        for (ci, b) in buf.iter_mut().enumerate() {
            *b = f64::from(abst.data()[ci * plane + x]);
        }
        total -= channel_entropy(&buf);
    }
    Ok(total)
}

/// Entropy loss and its gradient with respect to the activations, from the
/// engine-precision abstraction response.
fn entropy_loss_grad_engine<T: Scalar>(a3: &[T], c: usize, plane: usize) -> (f64, Vec<T>) {
    let mut loss = 0.0f64;
    let mut grad = vec![T::from_acc(0.0); a3.len()];
    for x in 0..plane {
        let mut s = 0.0f64;
        for ci in 0..c {
            s += a3[ci * plane + x].acc() + ENTROPY_EPS;
        }
        // L_loc = sum_c p ln p; dL/da_c = (ln p_c - L_loc) / s.
        let mut l_loc = 0.0f64;
        for ci in 0..c {
            let p = (a3[ci * plane + x].acc() + ENTROPY_EPS) / s;
            l_loc += p * p.ln();
        }
        loss += l_loc;
        for ci in 0..c {
            let p = (a3[ci * plane + x].acc() + ENTROPY_EPS) / s;
            grad[ci * plane + x] = T::from_acc((p.ln() - l_loc) / s);
        }
    }
    (loss, grad)
}

fn relu_backward<T: Scalar>(dz: &mut [T], z: &[T]) {
    for (d, &pre) in dz.iter_mut().zip(z) {
        if pre.acc() <= 0.0 {
            *d = T::from_acc(0.0);
        }
    }
}

/// Loss and parameter gradients for one sample, at engine precision.
fn loss_and_grad_single<T: Scalar>(
    ep: &EngineParams<T>,
    dims: &EngineDims,
    image: &[f32],
    ids: &[usize],
    lambda: f64,
    mask_scale: Option<(Vec<bool>, f64)>,
    grads: &mut [(Vec<f64>, Vec<f64>)],
) -> (f64, f64) {
    let n_cl = dims.shapes[4].c_out;
    let c_a = dims.shapes[2].c_out;
    let plane = dims.h * dims.w;
    let plane2 = dims.h2 * dims.w2;

    let trace = forward_engine(ep, dims, image, mask_scale);

    let (l_seg, dz5) = ce_loss_grad_engine(&trace.z[4], ids, n_cl, plane, true);

    let scratch = |shape: &ConvShape| -> (Vec<T>, Vec<T>, Vec<T>) {
        (
            vec![T::from_acc(0.0); shape.c_in * shape.h * shape.w],
            vec![T::from_acc(0.0); shape.c_out * shape.c_in * KERNEL * KERNEL],
            vec![T::from_acc(0.0); shape.c_out],
        )
    };

    // conv5 (input: upsampled).
    let (mut du, mut dk5, mut db5) = scratch(&dims.shapes[4]);
    conv2d_grad_raw(
        &dims.shapes[4],
        &trace.upsampled,
        &ep.kernels[4],
        &dz5,
        &mut du,
        &mut dk5,
        &mut db5,
    );

    // Upsample backward: each a4 cell receives its 2x2 block.
    let mut da4 = vec![T::from_acc(0.0); c_a * plane2];
    for c in 0..c_a {
        for yy in 0..dims.h2 {
            for xx in 0..dims.w2 {
                let mut s = 0.0f64;
                for oy in 0..2 {
                    for ox in 0..2 {
                        s += du[c * plane + (2 * yy + oy) * dims.w + 2 * xx + ox].acc();
                    }
                }
                da4[c * plane2 + yy * dims.w2 + xx] = T::from_acc(s);
            }
        }
    }

    let mut dz4 = da4;
    relu_backward(&mut dz4, &trace.z[3]);
    let (mut dd, mut dk4, mut db4) = scratch(&dims.shapes[3]);
    conv2d_grad_raw(
        &dims.shapes[3],
        &trace.dropped,
        &ep.kernels[3],
        &dz4,
        &mut dd,
        &mut dk4,
        &mut db4,
    );

    // Dropout backward plus the entropy-loss path into the pre-dropout
    // activations.
    let mut da3 = dd;
    if let Some((mask, scale)) = &trace.mask_scale {
        for (c, &keep) in mask.iter().enumerate() {
            let f = if keep { *scale } else { 0.0 };
            for v in &mut da3[c * plane2..(c + 1) * plane2] {
                *v = T::from_acc(v.acc() * f);
            }
        }
    }
    let l_ent = if lambda != 0.0 {
        let (l_ent, dent) = entropy_loss_grad_engine(&trace.a[2], c_a, plane2);
        for (d, g) in da3.iter_mut().zip(&dent) {
            *d = T::from_acc(d.acc() + lambda * g.acc());
        }
        l_ent
    } else {
        0.0
    };

    let mut dz3 = da3;
    relu_backward(&mut dz3, &trace.z[2]);
    let (mut da2, mut dk3, mut db3) = scratch(&dims.shapes[2]);
    conv2d_grad_raw(
        &dims.shapes[2],
        &trace.a[1],
        &ep.kernels[2],
        &dz3,
        &mut da2,
        &mut dk3,
        &mut db3,
    );

    let mut dz2 = da2;
    relu_backward(&mut dz2, &trace.z[1]);
    let (mut da1, mut dk2, mut db2) = scratch(&dims.shapes[1]);
    conv2d_grad_raw(
        &dims.shapes[1],
        &trace.a[0],
        &ep.kernels[1],
        &dz2,
        &mut da1,
        &mut dk2,
        &mut db2,
    );

    let mut dz1 = da1;
    relu_backward(&mut dz1, &trace.z[0]);
    let (mut dx, mut dk1, mut db1) = scratch(&dims.shapes[0]);
    conv2d_grad_raw(
        &dims.shapes[0],
        &trace.input,
        &ep.kernels[0],
        &dz1,
        &mut dx,
        &mut dk1,
        &mut db1,
    );

    for (slot, (dk, db)) in grads.iter_mut().zip([
        (&dk1, &db1),
        (&dk2, &db2),
        (&dk3, &db3),
        (&dk4, &db4),
        (&dk5, &db5),
    ]) {
        for (acc, g) in slot.0.iter_mut().zip(dk.iter()) {
            *acc += g.acc();
        }
        for (acc, g) in slot.1.iter_mut().zip(db.iter()) {
            *acc += g.acc();
        }
    }

    (l_seg, l_ent)
}

/// Total loss `L_seg + lambda * L_ent` averaged over the batch, with analytic
/// gradients for every parameter.
///
/// The dropout mask of batch element `i` is sampled from `seed + i` (see
/// [`dropout_mask_for_seed`]), so the stochastic function is fixed by `seed`.
pub fn total_loss_and_grad(
    params: &ModelParams,
    batch_images: &[&Tensor],
    batch_labels: &[&Tensor],
    hyper: &Hyper,
    seed: u64,
) -> Result<(f64, ParamSet)> {
    if batch_images.is_empty() {
        return Err(Error::input("batch must be non-empty"));
    }
    if batch_images.len() != batch_labels.len() {
        return Err(Error::shape("batch images/labels length mismatch"));
    }
    hyper.validate()?;
    let (h, w) = check_image(batch_images[0])?;
    let dims = engine_dims(params.n_ch, params.n_cl, h, w)?;
    let ep = EngineParams::<f64>::from_model(params);
    let c_a = 2 * params.n_ch;

    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = params
        .weights
        .layers
        .iter()
        .map(|l| (vec![0.0; l.kernels.len()], vec![0.0; l.bias.len()]))
        .collect();

    let mut total = 0.0f64;
    for (i, (image, labels)) in batch_images.iter().zip(batch_labels).enumerate() {
        let (ih, iw) = check_image(image)?;
        if (ih, iw) != (h, w) {
            return Err(Error::shape("batch images must share dimensions"));
        }
        let ids = label_ids(labels, params.n_cl, h, w)?;
        let mask_scale = if hyper.dropout_rate > 0.0 {
            let mask = dropout_mask_for_seed(c_a, hyper.dropout_rate, seed.wrapping_add(i as u64));
            Some((mask, 1.0 / (1.0 - hyper.dropout_rate)))
        } else {
            None
        };
        let (l_seg, l_ent) = loss_and_grad_single(
            &ep,
            &dims,
            image.data(),
            &ids,
            hyper.lambda,
            mask_scale,
            &mut grads,
        );
        total += l_seg + hyper.lambda * l_ent;
    }

    let inv_b = 1.0 / batch_images.len() as f64;
    let layers = grads
        .iter()
        .zip(&params.weights.layers)
        .map(|((dk, db), l)| ConvParams {
            kernels: Tensor::from_vec_unchecked(
                l.kernels.dims().to_vec(),
                dk.iter().map(|&v| (v * inv_b) as f32).collect(),
            ),
            bias: Tensor::from_vec_unchecked(
                l.bias.dims().to_vec(),
                db.iter().map(|&v| (v * inv_b) as f32).collect(),
            ),
        })
        .collect();
    Ok((total * inv_b, ParamSet { layers }))
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One Adam update with bias-corrected moments. Increments `adam_t`.
pub fn adam_step(params: &mut ModelParams, grads: &ParamSet, hyper: &Hyper) -> Result<()> {
    for (layer, name) in grads.layers.iter().zip(LAYER_NAMES) {
        for (field, data) in [("kernels", layer.kernels.data()), ("bias", layer.bias.data())] {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::training(format!(
                    "non-finite gradient in {}.{}",
                    name, field
                )));
            }
        }
    }
    params.adam_t += 1;
    let t = params.adam_t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for li in 0..params.weights.layers.len() {
        let g = &grads.layers[li];
        let update = |w: &mut Tensor, m: &mut Tensor, v: &mut Tensor, g: &Tensor| {
            for i in 0..w.len() {
                let gi = f64::from(g.data()[i]);
                let mi = ADAM_BETA1 * f64::from(m.data()[i]) + (1.0 - ADAM_BETA1) * gi;
                let vi = ADAM_BETA2 * f64::from(v.data()[i]) + (1.0 - ADAM_BETA2) * gi * gi;
                m.data_mut()[i] = mi as f32;
                v.data_mut()[i] = vi as f32;
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                let wi = f64::from(w.data()[i]) - hyper.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                w.data_mut()[i] = wi as f32;
            }
        };
        update(
            &mut params.weights.layers[li].kernels,
            &mut params.adam_m.layers[li].kernels,
            &mut params.adam_v.layers[li].kernels,
            &g.kernels,
        );
        update(
            &mut params.weights.layers[li].bias,
            &mut params.adam_m.layers[li].bias,
            &mut params.adam_v.layers[li].bias,
            &g.bias,
        );
    }
    Ok(())
}

/// Train for `n_steps` minibatch Adam steps on the annotated set, sampling
/// uniformly with replacement, deterministically from `seed`. Returns the
/// updated parameters and the per-step total loss.
pub fn train(
    mut params: ModelParams,
    annotated: &[(&Tensor, &Tensor)],
    hyper: &Hyper,
    n_steps: usize,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    if annotated.is_empty() {
        return Err(Error::input("annotated set must be non-empty"));
    }
    hyper.validate()?;
    let mut batch_rng = rng::stream_rng(seed, 0, "batches", 0);
    let mut history = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let mut images = Vec::with_capacity(hyper.batch_size);
        let mut labels = Vec::with_capacity(hyper.batch_size);
        for _ in 0..hyper.batch_size {
            let idx = batch_rng.gen_range(0..annotated.len());
            images.push(annotated[idx].0);
            labels.push(annotated[idx].1);
        }
        let step_seed = rng::stream_seed(seed, step as u64, "dropout", 0);
        let (loss, grads) = total_loss_and_grad(&params, &images, &labels, hyper, step_seed)?;
        adam_step(&mut params, &grads, hyper)?;
        history.push(loss);
    }
    Ok((params, history))
}

/// Mean segmentation loss of the current parameters over a labeled set,
/// evaluated in deterministic mode.
pub fn seg_loss_on(params: &ModelParams, samples: &[(&Tensor, &Tensor)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("sample set must be non-empty"));
    }
    let mut total = 0.0;
    for (image, labels) in samples {
        let trace = forward(params, image, ForwardMode::Deterministic)?;
        total += seg_loss(&trace.logits, labels)?;
    }
    Ok(total / samples.len() as f64)
}
