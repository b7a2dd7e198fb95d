//! Raw loops behind the differentiable ops. Layouts are row-major:
//! activations `[batch, channels, time]`, conv weights `[out, in, kernel]`,
//! dense weights `[out, in]`.

/// Dot product with sixteen interleaved partial sums combined in a fixed
/// order, so the result never depends on the caller's batch size.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    const LANES: usize = 16;
    let mut acc = [0.0f64; LANES];
    let split = a.len() - a.len() % LANES;
    for (x, y) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        for j in 0..LANES {
            acc[j] += x[j] * y[j];
        }
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for j in 0..width {
            acc[j] += acc[j + width];
        }
    }
    let tail: f64 = a[split..].iter().zip(&b[split..]).map(|(x, y)| x * y).sum();
    acc[0] + tail
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product. Each matrix is
/// given with its (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cs: usize, rows: usize, cols: usize| (rows - 1) * r + (cols - 1) * cs;
    assert!(c.len() > last(rsc, csc, m, n));
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    assert!(a.len() > last(rsa, csa, m, k));
    assert!(b.len() > last(rsb, csb, k, n));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub len: usize,
    pub dilation: usize,
}

impl ConvDims {
    /// Valid output range `lo..hi` and input offset for tap `k`:
    /// `out[i] += w[k] * in[i + offset]` for `i` in `lo..hi`.
    #[inline]
    fn tap(&self, k: usize) -> (usize, usize, isize) {
        let half = (self.kernel - 1) / 2;
        let offset = (k as isize - half as isize) * self.dilation as isize;
        let len = self.len as isize;
        let lo = (-offset).clamp(0, len) as usize;
        let hi = (len - offset).clamp(0, len) as usize;
        (lo, hi.max(lo), offset)
    }

    fn rows(&self) -> usize {
        self.in_channels * self.kernel
    }

    /// Unfolds one batch item into `[in * kernel, len]` shifted copies.
    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let l = self.len;
        col.fill(0.0);
        for ci in 0..self.in_channels {
            let src = &x[ci * l..][..l];
            for k in 0..self.kernel {
                let (lo, hi, off) = self.tap(k);
                if lo < hi {
                    let s = (lo as isize + off) as usize;
                    col[(ci * self.kernel + k) * l + lo..][..hi - lo]
                        .copy_from_slice(&src[s..s + (hi - lo)]);
                }
            }
        }
    }

    /// Adds an unfolded gradient back onto one batch item.
    fn col2im(&self, col: &[f64], gx: &mut [f64]) {
        let l = self.len;
        for ci in 0..self.in_channels {
            let dst = &mut gx[ci * l..][..l];
            for k in 0..self.kernel {
                let (lo, hi, off) = self.tap(k);
                if lo < hi {
                    let s = (lo as isize + off) as usize;
                    let row = &col[(ci * self.kernel + k) * l + lo..][..hi - lo];
                    for (d, g) in dst[s..s + (hi - lo)].iter_mut().zip(row) {
                        *d += g;
                    }
                }
            }
        }
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1
    }
}

pub fn conv1d_forward(d: &ConvDims, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let l = d.len;
    let rows = d.rows();
    let mut out = vec![0.0; d.batch * d.out_channels * l];
    let mut col = vec![0.0; if d.pointwise() { 0 } else { rows * l }];
    for b in 0..d.batch {
        let x = &input[b * d.in_channels * l..][..d.in_channels * l];
        let o = &mut out[b * d.out_channels * l..][..d.out_channels * l];
        for (co, row) in o.chunks_exact_mut(l).enumerate() {
            row.fill(bias[co]);
        }
        let src: &[f64] = if d.pointwise() {
            x
        } else {
            d.im2col(x, &mut col);
            &col
        };
        gemm(d.out_channels, rows, l, weight, (rows, 1), src, (l, 1), 1.0, o, (l, 1));
    }
    out
}

/// Accumulates into the provided gradient buffers (any may be skipped with `None`).
pub fn conv1d_backward(
    d: &ConvDims,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    mut grad_input: Option<&mut [f64]>,
    mut grad_weight: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let l = d.len;
    let rows = d.rows();
    if let Some(gb) = grad_bias {
        for b in 0..d.batch {
            for (co, g) in gb.iter_mut().enumerate() {
                *g += grad_out[(b * d.out_channels + co) * l..][..l].iter().sum::<f64>();
            }
        }
    }
    let mut col = vec![0.0; if d.pointwise() { 0 } else { rows * l }];
    let mut gcol = vec![0.0; if d.pointwise() || grad_input.is_none() { 0 } else { rows * l }];
    for b in 0..d.batch {
        let go = &grad_out[b * d.out_channels * l..][..d.out_channels * l];
        if let Some(gw) = grad_weight.as_deref_mut() {
            let x = &input[b * d.in_channels * l..][..d.in_channels * l];
            let src: &[f64] = if d.pointwise() {
                x
            } else {
                d.im2col(x, &mut col);
                &col
            };
            // grad_w[co, r] += sum_i go[co, i] * src[r, i]
            gemm(d.out_channels, l, rows, go, (l, 1), src, (1, l), 1.0, gw, (rows, 1));
        }
        if let Some(gi) = grad_input.as_deref_mut() {
            let gx = &mut gi[b * d.in_channels * l..][..d.in_channels * l];
            // grad_src[r, i] = sum_co w[co, r] * go[co, i]
            if d.pointwise() {
                gemm(rows, d.out_channels, l, weight, (1, rows), go, (l, 1), 1.0, gx, (l, 1));
            } else {
                gemm(rows, d.out_channels, l, weight, (1, rows), go, (l, 1), 0.0, &mut gcol, (l, 1));
                d.col2im(&gcol, gx);
            }
        }
    }
}

/// `out[r, o] = bias[o] + sum_d weight[o, d] * input[r, d]`.
pub fn linear_forward(
    rows: usize,
    d_in: usize,
    d_out: usize,
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; rows * d_out];
    for (x, y) in input.chunks_exact(d_in).zip(out.chunks_exact_mut(d_out)) {
        for (o, y) in y.iter_mut().enumerate() {
            *y = bias[o] + dot(&weight[o * d_in..][..d_in], x);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    rows: usize,
    d_in: usize,
    d_out: usize,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_weight: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    if let Some(gb) = grad_bias {
        for r in 0..rows {
            for (g, go) in gb.iter_mut().zip(&grad_out[r * d_out..][..d_out]) {
                *g += go;
            }
        }
    }
    if let Some(gw) = grad_weight {
        gemm(d_out, rows, d_in, grad_out, (1, d_out), input, (d_in, 1), 1.0, gw, (d_in, 1));
    }
    if let Some(gi) = grad_input {
        gemm(rows, d_out, d_in, grad_out, (d_out, 1), weight, (d_in, 1), 1.0, gi, (d_in, 1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(d: &ConvDims, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
        let (l, half) = (d.len as isize, (d.kernel as isize - 1) / 2);
        let mut out = vec![0.0; d.batch * d.out_channels * d.len];
        for b in 0..d.batch {
            for co in 0..d.out_channels {
                for i in 0..l {
                    let mut acc = bias[co];
                    for ci in 0..d.in_channels {
                        for k in 0..d.kernel as isize {
                            let j = i + (k - half) * d.dilation as isize;
                            if (0..l).contains(&j) {
                                acc += w[(co * d.in_channels + ci) * d.kernel + k as usize]
                                    * x[(b * d.in_channels + ci) * d.len + j as usize];
                            }
                        }
                    }
                    out[(b * d.out_channels + co) * d.len + i as usize] = acc;
                }
            }
        }
        out
    }

    fn pattern(n: usize, salt: usize) -> Vec<f64> {
        (0..n).map(|i| (((i * 37 + salt * 11) % 23) as f64 - 11.0) / 7.0).collect()
    }

    #[test]
    fn conv_matches_direct_sum_and_its_transpose() {
        for (kernel, dilation) in [(1, 1), (3, 1), (3, 4), (5, 2), (3, 16)] {
            let d = ConvDims {
                batch: 2,
                in_channels: 3,
                out_channels: 4,
                kernel,
                len: 11,
                dilation,
            };
            let x = pattern(2 * 3 * 11, 1);
            let w = pattern(4 * 3 * kernel, 2);
            let bias = pattern(4, 3);
            let out = conv1d_forward(&d, &x, &w, &bias);
            let reference = naive_conv(&d, &x, &w, &bias);
            for (a, b) in out.iter().zip(&reference) {
                assert!((a - b).abs() < 1e-12);
            }
            // <go, conv(x)> is linear in x and w, so the backward pass must
            // satisfy the adjoint identity against the forward without bias
            let go = pattern(out.len(), 4);
            let zero = vec![0.0; 4];
            let y = naive_conv(&d, &x, &w, &zero);
            let inner: f64 = y.iter().zip(&go).map(|(a, b)| a * b).sum();
            let mut gx = vec![0.0; x.len()];
            let mut gw = vec![0.0; w.len()];
            let mut gb = vec![0.0; 4];
            conv1d_backward(&d, &x, &w, &go, Some(&mut gx), Some(&mut gw), Some(&mut gb));
            let via_x: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
            let via_w: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((via_x - inner).abs() < 1e-10, "k={kernel} d={dilation}");
            assert!((via_w - inner).abs() < 1e-10, "k={kernel} d={dilation}");
            let total: f64 = go.iter().sum();
            assert!((gb.iter().sum::<f64>() - total).abs() < 1e-10);
        }
    }

    #[test]
    fn dot_handles_every_tail_length() {
        for n in [0, 1, 15, 16, 17, 40] {
            let a = pattern(n, 5);
            let b = pattern(n, 6);
            let direct: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - direct).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn linear_matches_direct_sum() {
        let (rows, d_in, d_out) = (3, 5, 4);
        let x = pattern(rows * d_in, 1);
        let w = pattern(d_out * d_in, 2);
        let bias = pattern(d_out, 3);
        let out = linear_forward(rows, d_in, d_out, &x, &w, &bias);
        for r in 0..rows {
            for o in 0..d_out {
                let direct: f64 = bias[o] + (0..d_in).map(|i| w[o * d_in + i] * x[r * d_in + i]).sum::<f64>();
                assert!((out[r * d_out + o] - direct).abs() < 1e-12);
            }
        }
        let go = pattern(rows * d_out, 4);
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; w.len()];
        linear_backward(rows, d_in, d_out, &x, &w, &go, Some(&mut gx), Some(&mut gw), None);
        for r in 0..rows {
            for i in 0..d_in {
                let direct: f64 = (0..d_out).map(|o| go[r * d_out + o] * w[o * d_in + i]).sum();
                assert!((gx[r * d_in + i] - direct).abs() < 1e-12);
            }
        }
        for o in 0..d_out {
            for i in 0..d_in {
                let direct: f64 = (0..rows).map(|r| go[r * d_out + o] * x[r * d_in + i]).sum();
                assert!((gw[o * d_in + i] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dilation_wider_than_signal_contributes_nothing() {
        let d = ConvDims {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            len: 3,
            dilation: 8,
        };
        let out = conv1d_forward(&d, &[1.0, 2.0, 3.0], &[5.0, 1.0, 7.0], &[0.5]);
        assert_eq!(out, vec![1.5, 2.5, 3.5]);
    }
}
