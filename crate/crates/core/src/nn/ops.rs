//! Dense kernels: GEMM wrapper, 3x3 convolution via im2col, linear layers.
//!
//! Activations of convolutional layers use channel-major `[C, B, H, W]`
//! layout so one GEMM covers the whole batch.

/// `c = op(a) * op(b) + beta * c` with `op(a)` of shape `m x k` and `op(b)` of
/// shape `k x n`, all row-major. `a_t` means `a` is stored as `k x m`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn out_hw(&self) -> (usize, usize) {
        ((self.h + 2 - 3) / self.stride + 1, (self.w + 2 - 3) / self.stride + 1)
    }

    pub fn patch(&self) -> usize {
        self.cin * 9
    }

    pub fn out_positions(&self) -> usize {
        let (ho, wo) = self.out_hw();
        self.batch * ho * wo
    }
}

/// `[cin, B, H, W]` -> `[cin * 9, B * Ho * Wo]` for a padded 3x3 kernel.
pub(crate) fn im2col(input: &[f32], s: &ConvShape) -> Vec<f32> {
    let (ho, wo) = s.out_hw();
    let n = s.out_positions();
    let mut cols = vec![0.0f32; s.patch() * n];
    for ci in 0..s.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for b in 0..s.batch {
                    let plane = &input[(ci * s.batch + b) * s.h * s.w..][..s.h * s.w];
                    for oy in 0..ho {
                        let iy = (oy * s.stride + ky) as isize - 1;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * s.w..][..s.w];
                        let dst = &mut row[(b * ho + oy) * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s.stride + kx) as isize - 1;
                            if ix >= 0 && ix < s.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub(crate) fn col2im(cols: &[f32], s: &ConvShape) -> Vec<f32> {
    let (ho, wo) = s.out_hw();
    let n = s.out_positions();
    let mut out = vec![0.0f32; s.cin * s.batch * s.h * s.w];
    for ci in 0..s.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * n..][..n];
                for b in 0..s.batch {
                    let plane = &mut out[(ci * s.batch + b) * s.h * s.w..][..s.h * s.w];
                    for oy in 0..ho {
                        let iy = (oy * s.stride + ky) as isize - 1;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * s.w..][..s.w];
                        let src = &row[(b * ho + oy) * wo..][..wo];
                        for (ox, v) in src.iter().enumerate() {
                            let ix = (ox * s.stride + kx) as isize - 1;
                            if ix >= 0 && ix < s.w as isize {
                                dst[ix as usize] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3x3 convolution plus bias; returns the output and the im2col buffer.
pub(crate) fn conv_forward(input: &[f32], weight: &[f32], bias: &[f32], s: &ConvShape) -> (Vec<f32>, Vec<f32>) {
    let cols = im2col(input, s);
    let n = s.out_positions();
    let mut out = vec![0.0f32; s.cout * n];
    gemm(s.cout, s.patch(), n, weight, false, &cols, false, 0.0, &mut out);
    for (row, b) in out.chunks_mut(n).zip(bias) {
        for v in row {
            *v += b;
        }
    }
    (out, cols)
}

/// Backward of [`conv_forward`].
pub(crate) fn conv_backward(
    d_out: &[f32],
    cols: &[f32],
    weight: &[f32],
    s: &ConvShape,
    d_weight: &mut [f32],
    d_bias: &mut [f32],
    need_input_grad: bool,
) -> Option<Vec<f32>> {
    let n = s.out_positions();
    gemm(s.cout, n, s.patch(), d_out, false, cols, true, 1.0, d_weight);
    for (row, db) in d_out.chunks(n).zip(d_bias.iter_mut()) {
        *db += row.iter().sum::<f32>();
    }
    need_input_grad.then(|| {
        let mut d_cols = vec![0.0f32; s.patch() * n];
        gemm(s.patch(), s.cout, n, weight, true, d_out, false, 0.0, &mut d_cols);
        col2im(&d_cols, s)
    })
}

/// `y[B, out] = x[B, in] * w[out, in]^T + bias`.
pub(crate) fn linear_forward(x: &[f32], batch: usize, in_dim: usize, w: &[f32], bias: &[f32], out_dim: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; batch * out_dim];
    gemm(batch, in_dim, out_dim, x, false, w, true, 0.0, &mut y);
    for row in y.chunks_mut(out_dim) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f32],
    batch: usize,
    in_dim: usize,
    w: &[f32],
    out_dim: usize,
    dy: &[f32],
    d_w: &mut [f32],
    d_bias: &mut [f32],
    need_input_grad: bool,
) -> Option<Vec<f32>> {
    gemm(out_dim, batch, in_dim, dy, true, x, false, 1.0, d_w);
    for row in dy.chunks(out_dim) {
        for (db, g) in d_bias.iter_mut().zip(row) {
            *db += g;
        }
    }
    need_input_grad.then(|| {
        let mut dx = vec![0.0f32; batch * in_dim];
        gemm(batch, out_dim, in_dim, dy, false, w, false, 0.0, &mut dx);
        dx
    })
}

const LN_EPS: f32 = 1e-5;

/// Per-row normalization to zero mean and unit variance, without affine
/// parameters. Returns the normalized rows and each row's inverse std.
pub(crate) fn layer_norm_forward(x: &[f32], width: usize) -> (Vec<f32>, Vec<f32>) {
    let mut y = vec![0.0f32; x.len()];
    let mut inv = Vec::with_capacity(x.len() / width);
    for (row, out) in x.chunks(width).zip(y.chunks_mut(width)) {
        let mean = row.iter().sum::<f32>() / width as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / width as f32;
        let s = 1.0 / (var + LN_EPS).sqrt();
        for (o, v) in out.iter_mut().zip(row) {
            *o = (v - mean) * s;
        }
        inv.push(s);
    }
    (y, inv)
}

/// `dx = s * (dy - mean(dy) - y * mean(dy * y))` per row.
pub(crate) fn layer_norm_backward(y: &[f32], inv_std: &[f32], dy: &[f32], width: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; dy.len()];
    for (((yr, gr), out), s) in y.chunks(width).zip(dy.chunks(width)).zip(dx.chunks_mut(width)).zip(inv_std) {
        let mg = gr.iter().sum::<f32>() / width as f32;
        let mgy = gr.iter().zip(yr).map(|(g, v)| g * v).sum::<f32>() / width as f32;
        for ((o, g), v) in out.iter_mut().zip(gr).zip(yr) {
            *o = s * (g - mg - v * mgy);
        }
    }
    dx
}

/// Normalizes each column of the `[rows, width]` matrix over the rows of
/// each contiguous chunk of `group` rows (batch normalization without
/// affine parameters). Returns the output and per-(chunk, column) inverse
/// std in chunk-major order.
pub(crate) fn batch_norm_forward(x: &[f32], width: usize, group: usize) -> (Vec<f32>, Vec<f32>) {
    let rows = x.len() / width;
    let mut y = vec![0.0f32; x.len()];
    let mut inv = Vec::with_capacity(rows.div_ceil(group) * width);
    for (start, xs) in (0..rows).step_by(group).zip(x.chunks(group * width)) {
        let n = xs.len() / width;
        let (yt, s) = layer_norm_forward(&transpose(xs, n, width), n);
        y[start * width..][..n * width].copy_from_slice(&transpose(&yt, width, n));
        inv.extend(s);
    }
    (y, inv)
}

pub(crate) fn batch_norm_backward(y: &[f32], inv_std: &[f32], dy: &[f32], width: usize, group: usize) -> Vec<f32> {
    let rows = y.len() / width;
    let mut dx = vec![0.0f32; dy.len()];
    for (c, start) in (0..rows).step_by(group).enumerate() {
        let n = group.min(rows - start);
        let span = start * width..(start + n) * width;
        let d = layer_norm_backward(
            &transpose(&y[span.clone()], n, width),
            &inv_std[c * width..(c + 1) * width],
            &transpose(&dy[span.clone()], n, width),
            n,
        );
        dx[span].copy_from_slice(&transpose(&d, width, n));
    }
    dx
}

/// Channel grouping of a `[C, B, HW]` activation: `groups` divides `C`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GroupLayout {
    pub channels: usize,
    pub batch: usize,
    pub hw: usize,
    pub groups: usize,
}

impl GroupLayout {
    fn row_width(&self) -> usize {
        self.channels / self.groups * self.hw
    }

    /// `[C, B, HW]` to `[G * B, C / G * HW]`, one row per (group, sample).
    fn gather(&self, x: &[f32]) -> Vec<f32> {
        let cpg = self.channels / self.groups;
        let mut out = Vec::with_capacity(x.len());
        for g in 0..self.groups {
            for b in 0..self.batch {
                for c in g * cpg..(g + 1) * cpg {
                    out.extend_from_slice(&x[(c * self.batch + b) * self.hw..][..self.hw]);
                }
            }
        }
        out
    }

    fn scatter(&self, rows: &[f32]) -> Vec<f32> {
        let cpg = self.channels / self.groups;
        let mut out = vec![0.0f32; rows.len()];
        let mut chunks = rows.chunks(self.hw);
        for g in 0..self.groups {
            for b in 0..self.batch {
                for c in g * cpg..(g + 1) * cpg {
                    let src = chunks.next().expect("row count matches layout");
                    out[(c * self.batch + b) * self.hw..][..self.hw].copy_from_slice(src);
                }
            }
        }
        out
    }
}

/// Per-sample group normalization without affine parameters. The inverse
/// std is returned per (group, sample).
pub(crate) fn group_norm_forward(x: &[f32], l: &GroupLayout) -> (Vec<f32>, Vec<f32>) {
    let (y, inv) = layer_norm_forward(&l.gather(x), l.row_width());
    (l.scatter(&y), inv)
}

pub(crate) fn group_norm_backward(y: &[f32], inv_std: &[f32], dy: &[f32], l: &GroupLayout) -> Vec<f32> {
    let d = layer_norm_backward(&l.gather(y), inv_std, &l.gather(dy), l.row_width());
    l.scatter(&d)
}

/// Subtracts from each column of the `[rows, width]` matrix its mean over
/// all rows.
pub(crate) fn center_columns(x: &mut [f32], width: usize) {
    let rows = (x.len() / width).max(1) as f32;
    let mut mean = vec![0.0f32; width];
    for row in x.chunks(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / rows;
        }
    }
    for row in x.chunks_mut(width) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
}

/// `[rows, cols]` to `[cols, rows]`.
fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f32], w: &[f32], s: &ConvShape) -> Vec<f32> {
        let (ho, wo) = s.out_hw();
        let mut out = vec![0.0; s.cout * s.batch * ho * wo];
        for co in 0..s.cout {
            for b in 0..s.batch {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..s.cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * s.stride + ky) as isize - 1;
                                    let ix = (ox * s.stride + kx) as isize - 1;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                        acc += w[((co * s.cin + ci) * 3 + ky) * 3 + kx]
                                            * input[((ci * s.batch + b) * s.h + iy as usize) * s.w + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((co * s.batch + b) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        (0..n)
            .map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed) >> 8) % 1000) as f32 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn conv_matches_naive_loops() {
        for stride in [1, 2] {
            let s = ConvShape { cin: 3, cout: 4, stride, batch: 2, h: 7, w: 6 };
            let input = pseudo(s.cin * s.batch * s.h * s.w, 1);
            let w = pseudo(s.cout * s.patch(), 2);
            let cols = im2col(&input, &s);
            let mut out = vec![0.0; s.cout * s.out_positions()];
            gemm(s.cout, s.patch(), s.out_positions(), &w, false, &cols, false, 0.0, &mut out);
            let naive = naive_conv(&input, &w, &s);
            for (a, b) in out.iter().zip(&naive) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let s = ConvShape { cin: 2, cout: 1, stride: 2, batch: 3, h: 5, w: 5 };
        let x = pseudo(s.cin * s.batch * s.h * s.w, 3);
        let y = pseudo(s.patch() * s.out_positions(), 4);
        let lhs: f64 = im2col(&x, &s).iter().zip(&y).map(|(a, b)| f64::from(a * b)).sum();
        let rhs: f64 = x.iter().zip(&col2im(&y, &s)).map(|(a, b)| f64::from(a * b)).sum();
        assert!((lhs - rhs).abs() < 1e-3);
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn layer_norm_rows_and_gradient() {
        let x = [0.3f32, -1.0, 2.0, 0.5, 1.0, 1.5, -2.0, 0.25];
        let (y, inv) = layer_norm_forward(&x, 4);
        for row in y.chunks(4) {
            let m: f32 = row.iter().sum::<f32>() / 4.0;
            let v: f32 = row.iter().map(|a| a * a).sum::<f32>() / 4.0;
            assert!(m.abs() < 1e-6 && (v - 1.0).abs() < 1e-3);
        }
        let coef = [0.7f32, -0.2, 0.4, 1.0, -0.6, 0.3, 0.9, -1.1];
        let obj = |x: &[f32]| -> f64 {
            layer_norm_forward(x, 4).0.iter().zip(&coef).map(|(a, b)| f64::from(a * b)).sum()
        };
        let dx = layer_norm_backward(&y, &inv, &coef, 4);
        let h = 1e-3f32;
        for i in 0..x.len() {
            let mut p = x;
            p[i] += h;
            let mut m = x;
            m[i] -= h;
            let fd = (obj(&p) - obj(&m)) / (2.0 * f64::from(h));
            assert!((fd - f64::from(dx[i])).abs() < 1e-3, "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn batch_norm_columns_and_gradient() {
        let x: Vec<f32> = (0..15).map(|i| ((i * 7 % 11) as f32 - 5.0) / 3.0).collect();
        let (y, inv) = batch_norm_forward(&x, 3, 2);
        assert_eq!(inv.len(), 9);
        // Rows 0-1 and 2-3 are normalized per column; the last chunk has one row.
        for c in 0..3 {
            assert!((y[c] + y[3 + c]).abs() < 1e-5);
            assert_eq!(y[12 + c], 0.0);
        }
        let coef: Vec<f32> = (0..15).map(|i| ((i * 5 % 7) as f32 - 3.0) / 2.0).collect();
        let obj = |x: &[f32]| -> f64 {
            batch_norm_forward(x, 3, 2).0.iter().zip(&coef).map(|(a, b)| f64::from(a * b)).sum()
        };
        let dx = batch_norm_backward(&y, &inv, &coef, 3, 2);
        let h = 1e-3f32;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let fd = (obj(&p) - obj(&m)) / (2.0 * f64::from(h));
            assert!((fd - f64::from(dx[i])).abs() < 2e-3, "{i}: {fd} vs {}", dx[i]);
        }
    }
}
