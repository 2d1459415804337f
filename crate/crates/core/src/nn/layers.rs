//! Layer primitives: 3x3 same-padding convolution, 2x2 stride-2 mean
//! pooling, ReLU, fully-connected and batch normalisation.
//!
//! Per-sample work (convolutions) fans out through [`crate::exec`];
//! gradient contributions are reduced in sample order afterwards so the
//! result is independent of scheduling.

use crate::exec;
use crate::nn::gemm::{gemm_nn, gemm_nt, gemm_tn};

pub const BN_EPS: f64 = 1e-5;

/// Expand one `[c_in, s, s]` plane stack into the `[c_in * 9, s * s]`
/// patch matrix for a 3x3 kernel with zero padding 1.
fn im2col3(input: &[f64], c_in: usize, s: usize, col: &mut [f64]) {
    let area = s * s;
    for ci in 0..c_in {
        let plane = &input[ci * area..(ci + 1) * area];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row_base = (ci * 9 + ky * 3 + kx) * area;
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                for y in 0..s {
                    let sy = y as isize + dy;
                    let dst = &mut col[row_base + y * s..row_base + y * s + s];
                    if sy < 0 || sy >= s as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * s..sy as usize * s + s];
                    match dx {
                        -1 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..s - 1]);
                        }
                        1 => {
                            dst[s - 1] = 0.0;
                            dst[..s - 1].copy_from_slice(&src[1..]);
                        }
                        _ => dst.copy_from_slice(src),
                    }
                }
            }
        }
    }
}

/// Scatter-add the patch-matrix gradient back onto the input plane.
fn col2im3(col: &[f64], c_in: usize, s: usize, d_input: &mut [f64]) {
    let area = s * s;
    for ci in 0..c_in {
        let plane = &mut d_input[ci * area..(ci + 1) * area];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row_base = (ci * 9 + ky * 3 + kx) * area;
                let dy = ky as isize - 1;
                let dx = kx as isize - 1;
                for y in 0..s {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= s as isize {
                        continue;
                    }
                    let src = &col[row_base + y * s..row_base + y * s + s];
                    let dst_row = sy as usize * s;
                    match dx {
                        -1 => {
                            for x in 1..s {
                                plane[dst_row + x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..s - 1 {
                                plane[dst_row + x + 1] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..s {
                                plane[dst_row + x] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Batched 3x3 convolution, padding 1, stride 1.
/// `input` is `[n, c_in, s, s]`, `weight` is `[c_out, c_in * 9]`,
/// output is `[n, c_out, s, s]`.
pub fn conv_forward(
    input: &[f64],
    n: usize,
    c_in: usize,
    s: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
) -> Vec<f64> {
    let area = s * s;
    let in_stride = c_in * area;
    let out_stride = c_out * area;
    let per_sample: Vec<Vec<f64>> = exec::map_indexed(n, |i| {
        let mut col = vec![0.0; c_in * 9 * area];
        im2col3(&input[i * in_stride..(i + 1) * in_stride], c_in, s, &mut col);
        let mut out = vec![0.0; out_stride];
        gemm_nn(weight, &col, c_out, c_in * 9, area, &mut out);
        for co in 0..c_out {
            let b = bias[co];
            for v in &mut out[co * area..(co + 1) * area] {
                *v += b;
            }
        }
        out
    });
    let mut out = Vec::with_capacity(n * out_stride);
    for sample in per_sample {
        out.extend_from_slice(&sample);
    }
    out
}

/// Gradients of the batched convolution. Returns
/// `(d_weight [c_out, c_in * 9], d_bias [c_out], d_input [n, c_in, s, s])`.
pub fn conv_backward(
    input: &[f64],
    n: usize,
    c_in: usize,
    s: usize,
    weight: &[f64],
    c_out: usize,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let area = s * s;
    let in_stride = c_in * area;
    let out_stride = c_out * area;
    let kdim = c_in * 9;
    let per_sample: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = exec::map_indexed(n, |i| {
        let mut col = vec![0.0; kdim * area];
        im2col3(&input[i * in_stride..(i + 1) * in_stride], c_in, s, &mut col);
        let dy = &d_out[i * out_stride..(i + 1) * out_stride];

        let mut dw = vec![0.0; c_out * kdim];
        gemm_nt(dy, &col, c_out, area, kdim, &mut dw);

        let mut db = vec![0.0; c_out];
        for co in 0..c_out {
            db[co] = dy[co * area..(co + 1) * area].iter().sum();
        }

        let mut dcol = vec![0.0; kdim * area];
        gemm_tn(weight, dy, kdim, c_out, area, &mut dcol);
        let mut dx = vec![0.0; in_stride];
        col2im3(&dcol, c_in, s, &mut dx);
        (dw, db, dx)
    });

    let mut d_weight = vec![0.0; c_out * kdim];
    let mut d_bias = vec![0.0; c_out];
    let mut d_input = Vec::with_capacity(n * in_stride);
    for (dw, db, dx) in per_sample {
        for (acc, v) in d_weight.iter_mut().zip(&dw) {
            *acc += v;
        }
        for (acc, v) in d_bias.iter_mut().zip(&db) {
            *acc += v;
        }
        d_input.extend_from_slice(&dx);
    }
    (d_weight, d_bias, d_input)
}

/// 2x2 stride-2 mean pooling over `[n, c, s, s]` (s even).
pub fn avgpool_forward(input: &[f64], n: usize, c: usize, s: usize) -> Vec<f64> {
    let half = s / 2;
    let mut out = vec![0.0; n * c * half * half];
    for plane in 0..n * c {
        let src = &input[plane * s * s..(plane + 1) * s * s];
        let dst = &mut out[plane * half * half..(plane + 1) * half * half];
        for y in 0..half {
            for x in 0..half {
                let base = 2 * y * s + 2 * x;
                dst[y * half + x] =
                    (src[base] + src[base + 1] + src[base + s] + src[base + s + 1]) * 0.25;
            }
        }
    }
    out
}

pub fn avgpool_backward(d_out: &[f64], n: usize, c: usize, s: usize) -> Vec<f64> {
    let half = s / 2;
    let mut d_input = vec![0.0; n * c * s * s];
    for plane in 0..n * c {
        let src = &d_out[plane * half * half..(plane + 1) * half * half];
        let dst = &mut d_input[plane * s * s..(plane + 1) * s * s];
        for y in 0..half {
            for x in 0..half {
                let g = src[y * half + x] * 0.25;
                let base = 2 * y * s + 2 * x;
                dst[base] = g;
                dst[base + 1] = g;
                dst[base + s] = g;
                dst[base + s + 1] = g;
            }
        }
    }
    d_input
}

pub fn relu_forward(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// `pre` is the activation *before* the ReLU.
pub fn relu_backward(d_out: &[f64], pre: &[f64]) -> Vec<f64> {
    d_out
        .iter()
        .zip(pre)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect()
}

/// `out [n, f_out] = input [n, f_in] * weight [f_in, f_out] + bias`.
pub fn fc_forward(
    input: &[f64],
    n: usize,
    f_in: usize,
    weight: &[f64],
    bias: &[f64],
    f_out: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n * f_out];
    gemm_nn(input, weight, n, f_in, f_out, &mut out);
    for row in out.chunks_exact_mut(f_out) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    out
}

/// Returns `(d_weight, d_bias, d_input)`.
pub fn fc_backward(
    input: &[f64],
    n: usize,
    f_in: usize,
    weight: &[f64],
    f_out: usize,
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut d_weight = vec![0.0; f_in * f_out];
    gemm_tn(input, d_out, f_in, n, f_out, &mut d_weight);
    let mut d_bias = vec![0.0; f_out];
    for row in d_out.chunks_exact(f_out) {
        for (acc, &v) in d_bias.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut d_input = vec![0.0; n * f_in];
    gemm_nt(d_out, weight, n, f_out, f_in, &mut d_input);
    (d_weight, d_bias, d_input)
}

/// Training-mode batch normalisation over `[n, f]` features.
/// Normalises with the biased batch variance and updates the running
/// statistics in place (`running = (1 - momentum) * running + momentum * batch`;
/// the running variance uses the unbiased estimate when `n > 1`).
/// Returns `(out, x_hat, inv_std)`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train(
    input: &[f64],
    n: usize,
    f: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    momentum: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut mean = vec![0.0; f];
    for row in input.chunks_exact(f) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= nf;
    }
    let mut var = vec![0.0; f];
    for row in input.chunks_exact(f) {
        for (j, &v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    for v in &mut var {
        *v /= nf;
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut x_hat = vec![0.0; n * f];
    let mut out = vec![0.0; n * f];
    for i in 0..n {
        for j in 0..f {
            let xh = (input[i * f + j] - mean[j]) * inv_std[j];
            x_hat[i * f + j] = xh;
            out[i * f + j] = gamma[j] * xh + beta[j];
        }
    }

    let unbias = if n > 1 { nf / (nf - 1.0) } else { 1.0 };
    for j in 0..f {
        running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
        running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j] * unbias;
    }
    (out, x_hat, inv_std)
}

/// Inference-mode batch normalisation using the running statistics.
pub fn batchnorm_eval(
    input: &[f64],
    n: usize,
    f: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; n * f];
    let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    for i in 0..n {
        for j in 0..f {
            out[i * f + j] = gamma[j] * (input[i * f + j] - running_mean[j]) * inv_std[j] + beta[j];
        }
    }
    out
}

/// Backward through training-mode batch norm (gradients flow through
/// the batch statistics). Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward(
    d_out: &[f64],
    x_hat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    n: usize,
    f: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut d_gamma = vec![0.0; f];
    let mut d_beta = vec![0.0; f];
    for i in 0..n {
        for j in 0..f {
            d_gamma[j] += d_out[i * f + j] * x_hat[i * f + j];
            d_beta[j] += d_out[i * f + j];
        }
    }
    let mut d_input = vec![0.0; n * f];
    for i in 0..n {
        for j in 0..f {
            let g = d_out[i * f + j];
            d_input[i * f + j] = gamma[j] * inv_std[j]
                * (g - d_beta[j] / nf - x_hat[i * f + j] * d_gamma[j] / nf);
        }
    }
    (d_input, d_gamma, d_beta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_round_trips_through_col2im_as_multiplicity() {
        // col2im(im2col(x)) multiplies each pixel by the number of
        // patches it appears in; interior pixels of a 4x4 appear 9x.
        let s = 4;
        let input: Vec<f64> = (0..s * s).map(|i| i as f64).collect();
        let mut col = vec![0.0; 9 * s * s];
        im2col3(&input, 1, s, &mut col);
        let mut back = vec![0.0; s * s];
        col2im3(&col, 1, s, &mut back);
        assert_eq!(back[1 * s + 1], 9.0 * input[1 * s + 1]);
        assert_eq!(back[0], 4.0 * input[0]); // corner in 4 patches
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        // kernel with 1 at center
        let s = 4;
        let input: Vec<f64> = (0..s * s).map(|i| i as f64 * 0.1).collect();
        let mut weight = vec![0.0; 9];
        weight[4] = 1.0;
        let out = conv_forward(&input, 1, 1, s, &weight, &[0.0], 1);
        assert_eq!(out, input);
    }

    #[test]
    fn avgpool_halves_each_dimension() {
        let input = vec![1.0, 2.0, 3.0, 4.0];
        let out = avgpool_forward(&input, 1, 1, 2);
        assert_eq!(out, vec![2.5]);
        let back = avgpool_backward(&out, 1, 1, 2);
        assert_eq!(back, vec![0.625; 4]);
    }

    #[test]
    fn batchnorm_train_normalises_batch() {
        let input = vec![1.0, 10.0, 3.0, 20.0]; // n=2, f=2
        let mut rm = vec![0.0; 2];
        let mut rv = vec![1.0; 2];
        let (out, _, _) =
            batchnorm_train(&input, 2, 2, &[1.0, 1.0], &[0.0, 0.0], &mut rm, &mut rv, 0.1);
        // each feature column has mean 0 across the batch
        assert!((out[0] + out[2]).abs() < 1e-12);
        assert!((out[1] + out[3]).abs() < 1e-12);
        assert!(rm[0] > 0.0 && rv[0] > 0.0);
    }
}
