//! Numeric kernels for forward and backward passes.
//!
//! Everything is direct loops over row-major buffers; shapes at desk scale
//! are tiny, so clarity wins over blocking tricks. Each kernel has a flop
//! formula next to it; those counts drive the synthetic clock, so they must
//! stay in sync with what the loop executes.

use crate::engine::model::Shape;
use crate::scalar::Scalar;

// ---------------------------------------------------------------- dense ----

/// `out[b,o] = bias[o] + sum_i in[b,i] * kernel[i,o]`
pub fn dense_forward<S: Scalar>(
    input: &[S],
    kernel: &[S],
    bias: &[S],
    batch: usize,
    inputs: usize,
    outputs: usize,
    out: &mut [S],
) {
    for b in 0..batch {
        let row = &input[b * inputs..(b + 1) * inputs];
        let out_row = &mut out[b * outputs..(b + 1) * outputs];
        out_row.copy_from_slice(bias);
        for (i, &x) in row.iter().enumerate() {
            let krow = &kernel[i * outputs..(i + 1) * outputs];
            for (o, &k) in krow.iter().enumerate() {
                out_row[o] += x * k;
            }
        }
    }
}

pub fn dense_forward_flops(batch: usize, inputs: usize, outputs: usize) -> u64 {
    (batch * outputs) as u64 * (2 * inputs + 1) as u64
}

/// `d_in[b,i] = sum_o d_out[b,o] * kernel[i,o]`
pub fn dense_grad_input<S: Scalar>(
    d_out: &[S],
    kernel: &[S],
    batch: usize,
    inputs: usize,
    outputs: usize,
    d_in: &mut [S],
) {
    for b in 0..batch {
        let g_row = &d_out[b * outputs..(b + 1) * outputs];
        let d_row = &mut d_in[b * inputs..(b + 1) * inputs];
        for (i, d) in d_row.iter_mut().enumerate() {
            let krow = &kernel[i * outputs..(i + 1) * outputs];
            let mut acc = S::zero();
            for (o, &k) in krow.iter().enumerate() {
                acc += g_row[o] * k;
            }
            *d = acc;
        }
    }
}

pub fn dense_grad_input_flops(batch: usize, inputs: usize, outputs: usize) -> u64 {
    (batch * inputs) as u64 * (2 * outputs) as u64
}

/// `d_kernel[i,o] = sum_b in[b,i] * d_out[b,o]`
pub fn dense_grad_kernel<S: Scalar>(
    input: &[S],
    d_out: &[S],
    batch: usize,
    inputs: usize,
    outputs: usize,
    d_kernel: &mut [S],
) {
    for v in d_kernel.iter_mut() {
        *v = S::zero();
    }
    for b in 0..batch {
        let row = &input[b * inputs..(b + 1) * inputs];
        let g_row = &d_out[b * outputs..(b + 1) * outputs];
        for (i, &x) in row.iter().enumerate() {
            let krow = &mut d_kernel[i * outputs..(i + 1) * outputs];
            for (o, dk) in krow.iter_mut().enumerate() {
                *dk += x * g_row[o];
            }
        }
    }
}

pub fn dense_grad_kernel_flops(batch: usize, inputs: usize, outputs: usize) -> u64 {
    (inputs * outputs) as u64 * (2 * batch) as u64
}

/// `d_bias[o] = sum_b d_out[b,o]`
pub fn dense_grad_bias<S: Scalar>(d_out: &[S], batch: usize, outputs: usize, d_bias: &mut [S]) {
    for v in d_bias.iter_mut() {
        *v = S::zero();
    }
    for b in 0..batch {
        let g_row = &d_out[b * outputs..(b + 1) * outputs];
        for (o, db) in d_bias.iter_mut().enumerate() {
            *db += g_row[o];
        }
    }
}

pub fn dense_grad_bias_flops(batch: usize, outputs: usize) -> u64 {
    (batch * outputs) as u64
}

// ----------------------------------------------------------------- conv ----

/// Direct convolution, valid padding.
/// `out[b,co,y,x] = bias[co] + sum_{ci,ky,kx} in[b,ci,y*s+ky,x*s+kx] * k[co,ci,ky,kx]`
#[allow(clippy::too_many_arguments)]
pub fn conv_forward<S: Scalar>(
    input: &[S],
    kernel: &[S],
    bias: &[S],
    batch: usize,
    in_shape: Shape,
    out_shape: Shape,
    ksize: usize,
    stride: usize,
    out: &mut [S],
) {
    let (ic, ih, iw) = (in_shape.c, in_shape.h, in_shape.w);
    let (oc, oh, ow) = (out_shape.c, out_shape.h, out_shape.w);
    for b in 0..batch {
        let in_b = &input[b * in_shape.len()..(b + 1) * in_shape.len()];
        let out_b = &mut out[b * out_shape.len()..(b + 1) * out_shape.len()];
        for co in 0..oc {
            let k_co = &kernel[co * ic * ksize * ksize..(co + 1) * ic * ksize * ksize];
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..ic {
                        let k_ci = &k_co[ci * ksize * ksize..(ci + 1) * ksize * ksize];
                        for ky in 0..ksize {
                            let iy = y * stride + ky;
                            let in_row = &in_b[ci * ih * iw + iy * iw..];
                            let k_row = &k_ci[ky * ksize..(ky + 1) * ksize];
                            for (kx, &kv) in k_row.iter().enumerate() {
                                acc += in_row[x * stride + kx] * kv;
                            }
                        }
                    }
                    out_b[co * oh * ow + y * ow + x] = acc;
                }
            }
        }
    }
}

pub fn conv_forward_flops(batch: usize, out_shape: Shape, in_c: usize, ksize: usize) -> u64 {
    (batch * out_shape.len()) as u64 * (2 * in_c * ksize * ksize + 1) as u64
}

/// Scatter form of the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_grad_input<S: Scalar>(
    d_out: &[S],
    kernel: &[S],
    batch: usize,
    in_shape: Shape,
    out_shape: Shape,
    ksize: usize,
    stride: usize,
    d_in: &mut [S],
) {
    for v in d_in.iter_mut() {
        *v = S::zero();
    }
    let (ic, ih, iw) = (in_shape.c, in_shape.h, in_shape.w);
    let (oc, oh, ow) = (out_shape.c, out_shape.h, out_shape.w);
    for b in 0..batch {
        let g_b = &d_out[b * out_shape.len()..(b + 1) * out_shape.len()];
        let d_b = &mut d_in[b * in_shape.len()..(b + 1) * in_shape.len()];
        for co in 0..oc {
            let k_co = &kernel[co * ic * ksize * ksize..(co + 1) * ic * ksize * ksize];
            for y in 0..oh {
                for x in 0..ow {
                    let g = g_b[co * oh * ow + y * ow + x];
                    for ci in 0..ic {
                        let k_ci = &k_co[ci * ksize * ksize..(ci + 1) * ksize * ksize];
                        for ky in 0..ksize {
                            let iy = y * stride + ky;
                            for kx in 0..ksize {
                                d_b[ci * ih * iw + iy * iw + x * stride + kx] +=
                                    g * k_ci[ky * ksize + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_grad_input_flops(batch: usize, out_shape: Shape, in_c: usize, ksize: usize) -> u64 {
    (batch * out_shape.len()) as u64 * (2 * in_c * ksize * ksize) as u64
}

#[allow(clippy::too_many_arguments)]
pub fn conv_grad_kernel<S: Scalar>(
    input: &[S],
    d_out: &[S],
    batch: usize,
    in_shape: Shape,
    out_shape: Shape,
    ksize: usize,
    stride: usize,
    d_kernel: &mut [S],
) {
    for v in d_kernel.iter_mut() {
        *v = S::zero();
    }
    let (ic, ih, iw) = (in_shape.c, in_shape.h, in_shape.w);
    let (oc, oh, ow) = (out_shape.c, out_shape.h, out_shape.w);
    for b in 0..batch {
        let in_b = &input[b * in_shape.len()..(b + 1) * in_shape.len()];
        let g_b = &d_out[b * out_shape.len()..(b + 1) * out_shape.len()];
        for co in 0..oc {
            let dk_co = &mut d_kernel[co * ic * ksize * ksize..(co + 1) * ic * ksize * ksize];
            for y in 0..oh {
                for x in 0..ow {
                    let g = g_b[co * oh * ow + y * ow + x];
                    for ci in 0..ic {
                        for ky in 0..ksize {
                            let iy = y * stride + ky;
                            for kx in 0..ksize {
                                dk_co[ci * ksize * ksize + ky * ksize + kx] +=
                                    g * in_b[ci * ih * iw + iy * iw + x * stride + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_grad_kernel_flops(batch: usize, out_shape: Shape, in_c: usize, ksize: usize) -> u64 {
    (batch * out_shape.len()) as u64 * (2 * in_c * ksize * ksize) as u64
}

pub fn conv_grad_bias<S: Scalar>(d_out: &[S], batch: usize, out_shape: Shape, d_bias: &mut [S]) {
    for v in d_bias.iter_mut() {
        *v = S::zero();
    }
    let plane = out_shape.h * out_shape.w;
    for b in 0..batch {
        let g_b = &d_out[b * out_shape.len()..(b + 1) * out_shape.len()];
        for (co, db) in d_bias.iter_mut().enumerate() {
            for &g in &g_b[co * plane..(co + 1) * plane] {
                *db += g;
            }
        }
    }
}

pub fn conv_grad_bias_flops(batch: usize, out_shape: Shape) -> u64 {
    (batch * out_shape.len()) as u64
}

// ----------------------------------------------------------- batch norm ----

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch statistics over batch and spatial positions.
/// Returns (mean, inv_std) with biased variance.
pub fn bn_batch_stats<S: Scalar>(input: &[S], batch: usize, shape: Shape) -> (Vec<S>, Vec<S>) {
    let plane = shape.h * shape.w;
    let m = batch * plane;
    let m_s = S::from_f64_lit(m as f64);
    let eps = S::from_f64_lit(BN_EPS);
    let mut mean = vec![S::zero(); shape.c];
    let mut inv_std = vec![S::zero(); shape.c];
    for c in 0..shape.c {
        let mut sum = S::zero();
        for b in 0..batch {
            let base = b * shape.len() + c * plane;
            for &x in &input[base..base + plane] {
                sum += x;
            }
        }
        let mu = sum / m_s;
        let mut var = S::zero();
        for b in 0..batch {
            let base = b * shape.len() + c * plane;
            for &x in &input[base..base + plane] {
                let d = x - mu;
                var += d * d;
            }
        }
        mean[c] = mu;
        inv_std[c] = S::one() / (var / m_s + eps).sqrt();
    }
    (mean, inv_std)
}

/// out = gamma * xhat + beta, with xhat = (x - mean) * inv_std.
/// Writes xhat for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn bn_normalize<S: Scalar>(
    input: &[S],
    mean: &[S],
    inv_std: &[S],
    gamma: &[S],
    beta: &[S],
    batch: usize,
    shape: Shape,
    xhat: &mut [S],
    out: &mut [S],
) {
    let plane = shape.h * shape.w;
    for b in 0..batch {
        for c in 0..shape.c {
            let base = b * shape.len() + c * plane;
            for i in base..base + plane {
                let xh = (input[i] - mean[c]) * inv_std[c];
                xhat[i] = xh;
                out[i] = gamma[c] * xh + beta[c];
            }
        }
    }
}

/// Train-mode forward (stats + normalize): ~7 flops per element.
pub fn bn_forward_train_flops(batch: usize, shape: Shape) -> u64 {
    7 * (batch * shape.len()) as u64
}

/// Eval-mode forward (normalize only): ~4 flops per element.
pub fn bn_forward_eval_flops(batch: usize, shape: Shape) -> u64 {
    4 * (batch * shape.len()) as u64
}

/// Fused batch-norm backward to the input, treated as one opaque block:
/// `d_in = gamma * inv_std / m * (m*dY - sum(dY) - xhat * sum(dY*xhat))`
#[allow(clippy::too_many_arguments)]
pub fn bn_grad_input<S: Scalar>(
    d_out: &[S],
    xhat: &[S],
    inv_std: &[S],
    gamma: &[S],
    batch: usize,
    shape: Shape,
    d_in: &mut [S],
) {
    let plane = shape.h * shape.w;
    let m = batch * plane;
    let m_s = S::from_f64_lit(m as f64);
    for c in 0..shape.c {
        let mut sum_dy = S::zero();
        let mut sum_dy_xhat = S::zero();
        for b in 0..batch {
            let base = b * shape.len() + c * plane;
            for i in base..base + plane {
                sum_dy += d_out[i];
                sum_dy_xhat += d_out[i] * xhat[i];
            }
        }
        let scale = gamma[c] * inv_std[c] / m_s;
        for b in 0..batch {
            let base = b * shape.len() + c * plane;
            for i in base..base + plane {
                d_in[i] = scale * (m_s * d_out[i] - sum_dy - xhat[i] * sum_dy_xhat);
            }
        }
    }
}

pub fn bn_block_flops(batch: usize, shape: Shape) -> u64 {
    9 * (batch * shape.len()) as u64
}

/// `d_gamma[c] = sum dY * xhat`
pub fn bn_grad_gamma<S: Scalar>(
    d_out: &[S],
    xhat: &[S],
    batch: usize,
    shape: Shape,
    d_gamma: &mut [S],
) {
    let plane = shape.h * shape.w;
    for v in d_gamma.iter_mut() {
        *v = S::zero();
    }
    for b in 0..batch {
        for (c, dg) in d_gamma.iter_mut().enumerate() {
            let base = b * shape.len() + c * plane;
            for i in base..base + plane {
                *dg += d_out[i] * xhat[i];
            }
        }
    }
}

pub fn bn_grad_gamma_flops(batch: usize, shape: Shape) -> u64 {
    2 * (batch * shape.len()) as u64
}

/// `d_beta[c] = sum dY`
pub fn bn_grad_beta<S: Scalar>(d_out: &[S], batch: usize, shape: Shape, d_beta: &mut [S]) {
    let plane = shape.h * shape.w;
    for v in d_beta.iter_mut() {
        *v = S::zero();
    }
    for b in 0..batch {
        for (c, db) in d_beta.iter_mut().enumerate() {
            let base = b * shape.len() + c * plane;
            for &g in &d_out[base..base + plane] {
                *db += g;
            }
        }
    }
}

pub fn bn_grad_beta_flops(batch: usize, shape: Shape) -> u64 {
    (batch * shape.len()) as u64
}

// ----------------------------------------------------- relu / pool / ce ----

pub fn relu_forward<S: Scalar>(input: &[S], out: &mut [S]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = if x > S::zero() { x } else { S::zero() };
    }
}

pub fn relu_backward<S: Scalar>(d_out: &[S], input: &[S], d_in: &mut [S]) {
    for ((d, &g), &x) in d_in.iter_mut().zip(d_out).zip(input) {
        *d = if x > S::zero() { g } else { S::zero() };
    }
}

pub fn relu_flops(n: usize) -> u64 {
    n as u64
}

/// Non-overlapping max pool; ties resolved by scan order (first max wins).
/// Records the flat input index of each window maximum.
pub fn pool_forward<S: Scalar>(
    input: &[S],
    batch: usize,
    in_shape: Shape,
    size: usize,
    out: &mut [S],
    argmax: &mut Vec<usize>,
) -> Shape {
    let out_shape = Shape::chw(in_shape.c, in_shape.h / size, in_shape.w / size);
    argmax.clear();
    argmax.reserve(batch * out_shape.len());
    for b in 0..batch {
        let in_b = b * in_shape.len();
        for c in 0..in_shape.c {
            let plane = in_b + c * in_shape.h * in_shape.w;
            for y in 0..out_shape.h {
                for x in 0..out_shape.w {
                    let mut best_idx = plane + (y * size) * in_shape.w + x * size;
                    let mut best = input[best_idx];
                    for ky in 0..size {
                        for kx in 0..size {
                            let idx = plane + (y * size + ky) * in_shape.w + (x * size + kx);
                            if input[idx] > best {
                                best = input[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[b * out_shape.len()
                        + c * out_shape.h * out_shape.w
                        + y * out_shape.w
                        + x] = best;
                    argmax.push(best_idx);
                }
            }
        }
    }
    out_shape
}

pub fn pool_forward_flops(batch: usize, out_shape: Shape, size: usize) -> u64 {
    (batch * out_shape.len()) as u64 * (size * size) as u64
}

pub fn pool_backward<S: Scalar>(d_out: &[S], argmax: &[usize], d_in: &mut [S]) {
    for v in d_in.iter_mut() {
        *v = S::zero();
    }
    for (&g, &idx) in d_out.iter().zip(argmax) {
        d_in[idx] += g;
    }
}

pub fn pool_backward_flops(batch: usize, out_shape: Shape) -> u64 {
    (batch * out_shape.len()) as u64
}

/// Mean softmax cross-entropy via log-sum-exp. Writes per-sample
/// probabilities and returns the batch-mean loss.
pub fn softmax_ce_forward<S: Scalar>(
    logits: &[S],
    labels: &[usize],
    batch: usize,
    classes: usize,
    probs: &mut [S],
) -> S {
    let mut total = S::zero();
    for b in 0..batch {
        let row = &logits[b * classes..(b + 1) * classes];
        let p_row = &mut probs[b * classes..(b + 1) * classes];
        let mut max = row[0];
        for &z in row.iter().skip(1) {
            if z > max {
                max = z;
            }
        }
        let mut sum = S::zero();
        for (p, &z) in p_row.iter_mut().zip(row) {
            *p = (z - max).exp();
            sum += *p;
        }
        for p in p_row.iter_mut() {
            *p /= sum;
        }
        // loss_b = log(sum exp(z - max)) + max - z_label
        total += sum.ln() + max - row[labels[b]];
    }
    total / S::from_f64_lit(batch as f64)
}

pub fn softmax_ce_flops(batch: usize, classes: usize) -> u64 {
    5 * (batch * classes) as u64
}

/// d_logits = (probs - onehot) / batch.
///
/// Deliberately unmetered: the loss-head gradient is a handful of
/// subtractions and sits below the granularity of the per-op time model.
pub fn softmax_ce_backward<S: Scalar>(
    probs: &[S],
    labels: &[usize],
    batch: usize,
    classes: usize,
    d_logits: &mut [S],
) {
    let inv_b = S::one() / S::from_f64_lit(batch as f64);
    for b in 0..batch {
        let p_row = &probs[b * classes..(b + 1) * classes];
        let d_row = &mut d_logits[b * classes..(b + 1) * classes];
        for (c, (d, &p)) in d_row.iter_mut().zip(p_row).enumerate() {
            let target = if c == labels[b] { S::one() } else { S::zero() };
            *d = (p - target) * inv_b;
        }
    }
}
