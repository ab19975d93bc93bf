//! Pure dense kernels shared by the tape operators.

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    let bt = transpose(n, k, b);
    gemm_nn(m, k, n, a, &bt, c);
}

/// Transposes a row-major `rows x cols` matrix.
pub(crate) fn transpose(rows: usize, cols: usize, src: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvDims {
    pub fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfolds one `[c_in, h, w]` image into `[c_in*k*k, h_out*w_out]` columns.
pub(crate) fn im2col(d: &ConvDims, img: &[f32], cols: &mut [f32]) {
    let hw = d.col_cols();
    for c in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..d.h_out {
                    let iy = oy as isize + ky as isize - d.pad as isize;
                    for ox in 0..d.w_out {
                        let ix = ox as isize + kx as isize - d.pad as isize;
                        dst[oy * d.w_out + ox] = if iy >= 0
                            && (iy as usize) < d.h
                            && ix >= 0
                            && (ix as usize) < d.w
                        {
                            img[(c * d.h + iy as usize) * d.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `img`.
pub(crate) fn col2im(d: &ConvDims, cols: &[f32], img: &mut [f32]) {
    let hw = d.col_cols();
    for c in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = (c * d.k + ky) * d.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..d.h_out {
                    let iy = oy as isize + ky as isize - d.pad as isize;
                    if iy < 0 || iy as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.w_out {
                        let ix = ox as isize + kx as isize - d.pad as isize;
                        if ix < 0 || ix as usize >= d.w {
                            continue;
                        }
                        img[(c * d.h + iy as usize) * d.w + ix as usize] += src[oy * d.w_out + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_variants_agree() {
        let a: Vec<f32> = (0..6).map(|v| v as f32).collect(); // 2x3
        let b: Vec<f32> = (0..12).map(|v| v as f32 * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm_nn(2, 3, 4, &a, &b, &mut c);

        let at = transpose(2, 3, &a);
        let mut c2 = vec![0.0; 8];
        gemm_tn(2, 3, 4, &at, &b, &mut c2);
        assert_eq!(c, c2);

        let bt = transpose(3, 4, &b);
        let mut c3 = vec![0.0; 8];
        gemm_nt(2, 3, 4, &a, &bt, &mut c3);
        assert_eq!(c, c3);
        assert_eq!(c[0], 0.0 * 0.0 + 1.0 * 2.0 + 2.0 * 4.0);
    }
}
