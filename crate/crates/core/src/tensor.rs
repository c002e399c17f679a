//! Minimal dense-tensor numerics: elementwise arithmetic, reductions,
//! 2-D convolution with stride, and numerically stable softmax.
//!
//! Tensors are row-major (last dimension fastest) 32-bit floats with a
//! channels-first `[C, H, W]` image convention. All accumulation happens in
//! 64-bit floats; results are stored as 32-bit.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Zero-filled tensor.
    pub fn zeros(dims: &[usize]) -> Tensor {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Constant-filled tensor.
    pub fn filled(dims: &[usize], value: f32) -> Tensor {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    /// Build from raw data; the element count must match the dims product
    /// and every value must be finite.
    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                len,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite value in tensor data"));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub(crate) fn from_vec_unchecked(dims: Vec<usize>, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Element at a full multi-index.
    pub fn get(&self, idx: &[usize]) -> f32 {
        assert_eq!(idx.len(), self.dims.len(), "index rank mismatch");
        let mut lin = 0;
        for (d, (&i, &n)) in idx.iter().zip(&self.dims).enumerate() {
            assert!(i < n, "index {} out of bounds for dim {}", i, d);
            lin = lin * n + i;
        }
        self.data[lin]
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "elementwise op on mismatched dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            dims: self.dims.clone(),
            data,
        })
    }
}

/// Reduction kind for [`reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Reduce `t` over the given axes (removed from the output shape).
///
/// Reducing over no axes is the identity. Sums and means accumulate in f64.
pub fn reduce(t: &Tensor, kind: Reduction, axes: &[usize]) -> Result<Tensor> {
    let rank = t.dims.len();
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(Error::shape(format!(
                "axis {} out of range for rank {}",
                a, rank
            )));
        }
        if reduced[a] {
            return Err(Error::shape(format!("duplicate axis {}", a)));
        }
        reduced[a] = true;
    }

    let out_dims: Vec<usize> = t
        .dims
        .iter()
        .zip(&reduced)
        .filter(|(_, &r)| !r)
        .map(|(&d, _)| d)
        .collect();
    let out_len: usize = out_dims.iter().product();
    let red_count: usize = t
        .dims
        .iter()
        .zip(&reduced)
        .filter(|&(_, &r)| r)
        .map(|(&d, _)| d)
        .product();

    // Stride of each input dim in the output index (0 for reduced dims).
    let mut out_strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..rank).rev() {
        if !reduced[d] {
            out_strides[d] = s;
            s *= t.dims[d];
        }
    }

    let init = match kind {
        Reduction::Sum | Reduction::Mean => 0.0,
        Reduction::Max => f64::NEG_INFINITY,
    };
    let mut acc = vec![init; out_len];

    let mut coords = vec![0usize; rank];
    for &v in &t.data {
        let mut out_idx = 0;
        for d in 0..rank {
            out_idx += coords[d] * out_strides[d];
        }
        match kind {
            Reduction::Sum | Reduction::Mean => acc[out_idx] += f64::from(v),
            Reduction::Max => {
                if f64::from(v) > acc[out_idx] {
                    acc[out_idx] = f64::from(v);
                }
            }
        }
        for d in (0..rank).rev() {
            coords[d] += 1;
            if coords[d] < t.dims[d] {
                break;
            }
            coords[d] = 0;
        }
    }

    if kind == Reduction::Mean {
        let n = red_count.max(1) as f64;
        for a in &mut acc {
            *a /= n;
        }
    }
    if kind == Reduction::Max && t.data.is_empty() {
        return Err(Error::shape("max reduction over empty tensor"));
    }

    Ok(Tensor::from_vec_unchecked(
        out_dims,
        acc.into_iter().map(|v| v as f32).collect(),
    ))
}

/// Softmax over the channel axis of a `[C, H, W]` tensor, per spatial
/// location, with max-subtraction for stability.
pub fn softmax_channels(logits: &Tensor) -> Result<Tensor> {
    let [c, h, w] = expect_rank3(logits, "softmax_channels input")?;
    if c < 2 {
        return Err(Error::shape(format!(
            "softmax_channels needs at least 2 channels, got {}",
            c
        )));
    }
    let plane = h * w;
    let mut out = vec![0.0f32; logits.len()];
    for x in 0..plane {
        let mut max = f64::NEG_INFINITY;
        for ci in 0..c {
            max = max.max(f64::from(logits.data[ci * plane + x]));
        }
        let mut sum = 0.0f64;
        for ci in 0..c {
            let e = (f64::from(logits.data[ci * plane + x]) - max).exp();
            out[ci * plane + x] = e as f32;
            sum += e;
        }
        for ci in 0..c {
            out[ci * plane + x] = (f64::from(out[ci * plane + x]) / sum) as f32;
        }
    }
    Ok(Tensor::from_vec_unchecked(logits.dims.clone(), out))
}

/// Per-location argmax over channels of a `[C, H, W]` tensor; ties resolve to
/// the lowest channel. Returns an `[H, W]` tensor of channel indices.
pub fn argmax_channels(t: &Tensor) -> Result<Tensor> {
    let [c, h, w] = expect_rank3(t, "argmax_channels input")?;
    let plane = h * w;
    let mut out = vec![0.0f32; plane];
    for x in 0..plane {
        let mut best = t.data[x];
        let mut best_c = 0usize;
        for ci in 1..c {
            let v = t.data[ci * plane + x];
            if v > best {
                best = v;
                best_c = ci;
            }
        }
        out[x] = best_c as f32;
    }
    Ok(Tensor::from_vec_unchecked(vec![h, w], out))
}

/// 2-D cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, k, k]`
/// kernels, zero padding, f64 accumulation.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [c_in, h, w] = expect_rank3(input, "conv2d input")?;
    if kernels.dims.len() != 4 {
        return Err(Error::shape(format!(
            "conv2d kernels must be rank 4, got {:?}",
            kernels.dims
        )));
    }
    let (c_out, kc_in, kh, kw) = (
        kernels.dims[0],
        kernels.dims[1],
        kernels.dims[2],
        kernels.dims[3],
    );
    if kh != kw {
        return Err(Error::shape(format!("non-square kernel {}x{}", kh, kw)));
    }
    if kc_in != c_in {
        return Err(Error::shape(format!(
            "kernel input channels {} != input channels {}",
            kc_in, c_in
        )));
    }
    if bias.len() != c_out {
        return Err(Error::shape(format!(
            "bias length {} != output channels {}",
            bias.len(),
            c_out
        )));
    }
    let shape = ConvShape::new(c_in, h, w, c_out, kh, stride, padding)?;
    let mut out = vec![0.0f32; c_out * shape.h_out * shape.w_out];
    conv2d_raw(&shape, &input.data, &kernels.data, bias, &mut out);
    Ok(Tensor::from_vec_unchecked(
        vec![c_out, shape.h_out, shape.w_out],
        out,
    ))
}

fn expect_rank3(t: &Tensor, what: &str) -> Result<[usize; 3]> {
    if t.dims.len() != 3 {
        return Err(Error::shape(format!(
            "{} must be rank 3 [C,H,W], got {:?}",
            what, t.dims
        )));
    }
    Ok([t.dims[0], t.dims[1], t.dims[2]])
}

// ---------------------------------------------------------------------------
// Shared convolution kernels, generic over storage precision. The training
// path runs them at f64 so analytic gradients track a 64-bit oracle; the
// public f32 ops use the same code.
// ---------------------------------------------------------------------------

pub(crate) trait Scalar: Copy {
    fn acc(self) -> f64;
    fn from_acc(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn acc(self) -> f64 {
        f64::from(self)
    }
    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn acc(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_acc(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvShape {
    pub fn new(
        c_in: usize,
        h: usize,
        w: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<ConvShape> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::shape(format!("kernel size {} must be odd", k)));
        }
        if stride == 0 {
            return Err(Error::shape("stride must be positive"));
        }
        let ext = |n: usize| -> Result<usize> {
            let padded = n + 2 * padding;
            if padded < k {
                return Err(Error::shape(format!(
                    "input extent {} too small for kernel {} with padding {}",
                    n, k, padding
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        let h_out = ext(h)?;
        let w_out = ext(w)?;
        Ok(ConvShape {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            padding,
            h_out,
            w_out,
        })
    }

    /// Output rows that touch only in-bounds input rows for kernel row `ky`:
    /// `0 <= y*stride + ky - padding <= h - 1`.
    #[inline]
    fn y_range(&self, ky: usize) -> (usize, usize) {
        range_for(self.h, self.h_out, self.stride, self.padding, ky)
    }

    #[inline]
    fn x_range(&self, kx: usize) -> (usize, usize) {
        range_for(self.w, self.w_out, self.stride, self.padding, kx)
    }
}

/// Half-open `[lo, hi)` range of output coordinates whose receptive input
/// coordinate `o*stride + koff - padding` lies inside `[0, n_in)`.
#[inline]
fn range_for(n_in: usize, n_out: usize, stride: usize, padding: usize, koff: usize) -> (usize, usize) {
    let lo = if koff >= padding {
        0
    } else {
        (padding - koff).div_ceil(stride)
    };
    let max_i = n_in as isize - 1 + padding as isize - koff as isize;
    if max_i < 0 {
        return (0, 0);
    }
    let hi = ((max_i as usize) / stride + 1).min(n_out);
    (lo.min(hi), hi)
}

/// Forward convolution into `out` (`[c_out, h_out, w_out]` flat).
pub(crate) fn conv2d_raw<T: Scalar>(
    shape: &ConvShape,
    input: &[T],
    kernels: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let ConvShape {
        c_in,
        h: _,
        w,
        c_out,
        k,
        stride,
        padding,
        h_out,
        w_out,
        ..
    } = *shape;
    let in_plane = shape.h * w;
    let out_plane = h_out * w_out;
    let mut acc = vec![0.0f64; out_plane];
    for co in 0..c_out {
        for a in acc.iter_mut() {
            *a = bias[co].acc();
        }
        for ci in 0..c_in {
            let in_c = &input[ci * in_plane..(ci + 1) * in_plane];
            for ky in 0..k {
                let (y_lo, y_hi) = shape.y_range(ky);
                for kx in 0..k {
                    let (x_lo, x_hi) = shape.x_range(kx);
                    if x_lo >= x_hi || y_lo >= y_hi {
                        continue;
                    }
                    let wgt = kernels[((co * c_in + ci) * k + ky) * k + kx].acc();
                    for y in y_lo..y_hi {
                        let iy = y * stride + ky - padding;
                        let in_row = &in_c[iy * w..(iy + 1) * w];
                        let acc_row = &mut acc[y * w_out + x_lo..y * w_out + x_hi];
                        let ix0 = x_lo * stride + kx - padding;
                        if stride == 1 {
                            let in_win = &in_row[ix0..ix0 + (x_hi - x_lo)];
                            for (a, &v) in acc_row.iter_mut().zip(in_win) {
                                *a += wgt * v.acc();
                            }
                        } else {
                            for (j, a) in acc_row.iter_mut().enumerate() {
                                *a += wgt * in_row[ix0 + j * stride].acc();
                            }
                        }
                    }
                }
            }
        }
        for (o, &a) in out[co * out_plane..(co + 1) * out_plane]
            .iter_mut()
            .zip(&acc)
        {
            *o = T::from_acc(a);
        }
    }
}

/// Gradients of a forward convolution: fills `d_input`, `d_kernels`, `d_bias`
/// from upstream `d_out`. All accumulation in f64.
pub(crate) fn conv2d_grad_raw<T: Scalar>(
    shape: &ConvShape,
    input: &[T],
    kernels: &[T],
    d_out: &[T],
    d_input: &mut [T],
    d_kernels: &mut [T],
    d_bias: &mut [T],
) {
    let ConvShape {
        c_in,
        w,
        c_out,
        k,
        stride,
        padding,
        h_out,
        w_out,
        ..
    } = *shape;
    let in_plane = shape.h * w;
    let out_plane = h_out * w_out;

    let mut din_acc = vec![0.0f64; c_in * in_plane];
    for co in 0..c_out {
        let dout_c = &d_out[co * out_plane..(co + 1) * out_plane];
        let mut db = 0.0f64;
        for &g in dout_c {
            db += g.acc();
        }
        d_bias[co] = T::from_acc(db);

        for ci in 0..c_in {
            let in_c = &input[ci * in_plane..(ci + 1) * in_plane];
            let din_c = &mut din_acc[ci * in_plane..(ci + 1) * in_plane];
            for ky in 0..k {
                let (y_lo, y_hi) = shape.y_range(ky);
                for kx in 0..k {
                    let (x_lo, x_hi) = shape.x_range(kx);
                    if x_lo >= x_hi || y_lo >= y_hi {
                        d_kernels[((co * c_in + ci) * k + ky) * k + kx] = T::from_acc(0.0);
                        continue;
                    }
                    let wgt = kernels[((co * c_in + ci) * k + ky) * k + kx].acc();
                    let mut dw = 0.0f64;
                    for y in y_lo..y_hi {
                        let iy = y * stride + ky - padding;
                        let ix0 = x_lo * stride + kx - padding;
                        let dout_row = &dout_c[y * w_out + x_lo..y * w_out + x_hi];
                        if stride == 1 {
                            let n = x_hi - x_lo;
                            let in_win = &in_c[iy * w + ix0..iy * w + ix0 + n];
                            let din_win = &mut din_c[iy * w + ix0..iy * w + ix0 + n];
                            for ((&g, &v), di) in
                                dout_row.iter().zip(in_win).zip(din_win.iter_mut())
                            {
                                let ga = g.acc();
                                dw += ga * v.acc();
                                *di += wgt * ga;
                            }
                        } else {
                            for (j, &g) in dout_row.iter().enumerate() {
                                let ii = iy * w + ix0 + j * stride;
                                let ga = g.acc();
                                dw += ga * in_c[ii].acc();
                                din_c[ii] += wgt * ga;
                            }
                        }
                    }
                    d_kernels[((co * c_in + ci) * k + ky) * k + kx] = T::from_acc(dw);
                }
            }
        }
    }
    for (d, &a) in d_input.iter_mut().zip(&din_acc) {
        *d = T::from_acc(a);
    }
}
