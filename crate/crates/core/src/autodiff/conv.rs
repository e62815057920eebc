//! im2col / col2im convolution kernels on top of `matrixmultiply::sgemm`.
//!
//! Column matrices cover the whole batch: shape `[c * k * k, n * oh * ow]`,
//! row-major. A transposed convolution reuses the same geometry with the
//! roles of input and output swapped.

/// Spatial geometry of a square-kernel convolution from `(in_h, in_w)` to
/// `(out_h, out_w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }
}

/// `floor((in + 2 pad - k) / stride) + 1`, or `None` when the kernel does not
/// fit.
pub(crate) fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

/// `(in - 1) stride - 2 pad + k`.
pub(crate) fn conv_transposed_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    ((input - 1) * stride + k).checked_sub(2 * pad).filter(|&s| s > 0)
}

pub(crate) fn im2col(x: &[f32], g: &Geometry) -> Vec<f32> {
    let ncols = g.col_cols();
    let mut col = vec![0.0f32; g.col_rows() * ncols];
    let plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut col[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let src = &x[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    let dst = &mut dst_row[n * out_plane..(n + 1) * out_plane];
                    for oh in 0..g.out_h {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.in_h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                        let dst_seg = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                        for (ow, d) in dst_seg.iter_mut().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.in_w as isize {
                                *d = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an NCHW buffer.
pub(crate) fn col2im(col: &[f32], g: &Geometry, x: &mut [f32]) {
    let ncols = g.col_cols();
    let plane = g.in_h * g.in_w;
    let out_plane = g.out_h * g.out_w;
    for c in 0..g.channels {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_row = &col[row * ncols..(row + 1) * ncols];
                for n in 0..g.batch {
                    let dst = &mut x[(n * g.channels + c) * plane..(n * g.channels + c + 1) * plane];
                    let src = &src_row[n * out_plane..(n + 1) * out_plane];
                    for oh in 0..g.out_h {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.in_h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                        let src_seg = &src[oh * g.out_w..(oh + 1) * g.out_w];
                        for (ow, s) in src_seg.iter().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.in_w as isize {
                                dst_row[iw as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// NCHW `[n, c, hw]` to channel-major `[c, n * hw]`.
pub(crate) fn nchw_to_cm(x: &[f32], n: usize, c: usize, hw: usize) -> Vec<f32> {
    if n == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            out[ch * n * hw + b * hw..ch * n * hw + (b + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`nchw_to_cm`].
pub(crate) fn cm_to_nchw(x: &[f32], n: usize, c: usize, hw: usize) -> Vec<f32> {
    if n == 1 {
        return x.to_vec();
    }
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let dst = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            dst.copy_from_slice(&x[ch * n * hw + b * hw..ch * n * hw + (b + 1) * hw]);
        }
    }
    out
}

/// Row-major view of a matrix, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = beta * c + a * b` with `c` row-major `[m, n]`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, beta: f32, c: &mut [f32]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output size");
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the slices cover every index reachable through the given
    // dimensions and strides, as checked by the asserts above and Mat::new.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes() {
        assert_eq!(conv_out_size(5, 3, 1, 0), Some(3));
        assert_eq!(conv_out_size(8, 4, 2, 1), Some(4));
        assert_eq!(conv_out_size(2, 4, 2, 1), Some(1));
        assert_eq!(conv_out_size(1, 4, 2, 1), None);
        assert_eq!(conv_transposed_out_size(2, 4, 2, 1), Some(4));
        assert_eq!(conv_transposed_out_size(1, 4, 2, 1), Some(2));
    }

    #[test]
    fn gemm_with_transposes() {
        // a: 2x3, b: 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0; 4];
        gemm(Mat::new(&a, 2, 3), Mat::new(&b, 3, 2), 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        // a^T (3x2) * a (2x3) -> 3x3
        let mut d = [0.0; 9];
        gemm(Mat::new(&a, 2, 3).t(), Mat::new(&a, 2, 3), 0.0, &mut d);
        assert_eq!(d, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    fn layout_round_trip() {
        let x: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let cm = nchw_to_cm(&x, 2, 3, 4);
        assert_eq!(cm[4], 12.0);
        assert_eq!(cm_to_nchw(&cm, 2, 3, 4), x);
    }
}
