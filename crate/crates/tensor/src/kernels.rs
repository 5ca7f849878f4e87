//! Raw convolution kernels: im2col/col2im lowering and a GEMM wrapper.

/// Spatial geometry of a 2-D convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        Self {
            kh: k,
            kw: k,
            stride,
            pad,
        }
    }

    /// Output size of a forward convolution, or `None` when the window does
    /// not fit.
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if ph < self.kh || pw < self.kw || self.stride == 0 {
            return None;
        }
        Some(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }

    /// Output size of the transposed convolution.
    pub fn transpose_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = ((h - 1) * self.stride + self.kh).checked_sub(2 * self.pad)?;
        let ow = ((w - 1) * self.stride + self.kw).checked_sub(2 * self.pad)?;
        if oh == 0 || ow == 0 {
            return None;
        }
        Some((oh, ow))
    }
}

/// Lowers one `(c, h, w)` image into a `(c*kh*kw, oh*ow)` column matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let p = oh * ow;
    debug_assert_eq!(cols.len(), c * g.kh * g.kw * p);
    let pad = g.pad as isize;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        *slot = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column matrix back onto the image,
/// accumulating into `x`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    oh: usize,
    ow: usize,
    x: &mut [f64],
) {
    let p = oh * ow;
    let pad = g.pad as isize;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let in_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Strided matrix view: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

/// `c = a(m×k) · b(k×n) + beta · c`, with `c` row-major `m×n`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let a_max = (m - 1) * a.rs + (k - 1) * a.cs;
    let b_max = (k - 1) * b.rs + (n - 1) * b.cs;
    assert!(a_max < a.data.len() && b_max < b.data.len(), "gemm operand out of bounds");
    // SAFETY: the bounds of every operand were checked above and the output
    // slice is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
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
    fn im2col_and_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish data
        let (c, h, w) = (2, 5, 6);
        let g = ConvGeom::square(3, 2, 1);
        let (oh, ow) = g.conv_out(h, w).unwrap();
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let k = c * g.kh * g.kw;
        let y: Vec<f64> = (0..k * oh * ow).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let mut cols = vec![0.0; k * oh * ow];
        im2col(&x, c, h, w, g, oh, ow, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im_add(&y, c, h, w, g, oh, ow, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn output_sizes() {
        let g = ConvGeom::square(4, 2, 1);
        assert_eq!(g.conv_out(64, 64), Some((32, 32)));
        assert_eq!(g.transpose_out(32, 32), Some((64, 64)));
        assert_eq!(ConvGeom::square(5, 1, 0).conv_out(3, 3), None);
    }

    #[test]
    fn gemm_transposed_operand() {
        // a = [[1,2],[3,4]], b^T where b stored row-major [[1,0],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 0.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, MatRef::row_major(&a, 2), MatRef::transposed(&b, 2), 0.0, &mut c);
        // b^T = [[1,1],[0,1]]
        assert_eq!(c, [1.0, 3.0, 3.0, 7.0]);
    }
}
