//! Built-in differentiable operators.
//!
//! Layout conventions: images are `[batch, channels, height, width]`,
//! matrices are row-major `[rows, cols]`, convolution kernels are
//! `[c_out, c_in, k, k]`. Convolution is stride 1 with symmetric zero padding
//! and pooling uses non-overlapping square windows.

use super::kernels::{self, ConvDims};
use super::{Backward, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let op = |_: &[&Tensor], _: &Tensor, ct: &Tensor| vec![Some(ct.clone()), Some(ct.clone())];
        Ok(self.record(&[a, b], out, Box::new(op)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let op = |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
            let (x, y) = (inputs[0], inputs[1]);
            let gx = y.data().iter().zip(ct.data()).map(|(y, c)| y * c).collect();
            let gy = x.data().iter().zip(ct.data()).map(|(x, c)| x * c).collect();
            vec![
                Tensor::new(x.shape().to_vec(), gx).ok(),
                Tensor::new(y.shape().to_vec(), gy).ok(),
            ]
        };
        Ok(self.record(&[a, b], out, Box::new(op)))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let out = self.value(a).map(|v| v * factor);
        let op = move |_: &[&Tensor], _: &Tensor, ct: &Tensor| vec![Some(ct.map(|c| c * factor))];
        self.record(&[a], out, Box::new(op))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let op = |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
            vec![Some(Tensor::full(inputs[0].shape(), ct.item()))]
        };
        self.record(&[a], out, Box::new(op))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let op = |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
            vec![ct.clone().reshape(inputs[0].shape().to_vec()).ok()]
        };
        Ok(self.record(&[a], out, Box::new(op)))
    }

    /// Collapses every dimension after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape();
        let batch = shape[0];
        let rest = shape[1..].iter().product();
        self.reshape(a, vec![batch, rest])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(mismatch("matmul", av, bv));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut c = vec![0.0; m * n];
        kernels::gemm_nn(m, k, n, av.data(), bv.data(), &mut c);
        let out = Tensor::new(vec![m, n], c)?;
        let op = move |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
            let (a, b) = (inputs[0], inputs[1]);
            let mut ga = vec![0.0; m * k];
            kernels::gemm_nt(m, n, k, ct.data(), b.data(), &mut ga);
            let mut gb = vec![0.0; k * n];
            kernels::gemm_tn(k, m, n, a.data(), ct.data(), &mut gb);
            vec![
                Tensor::new(vec![m, k], ga).ok(),
                Tensor::new(vec![k, n], gb).ok(),
            ]
        };
        Ok(self.record(&[a, b], out, Box::new(op)))
    }

    /// Adds a per-channel bias along dimension 1 of a rank >= 2 tensor.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let shape = xv.shape().to_vec();
        if shape.len() < 2 || bv.shape() != [shape[1]] {
            return Err(mismatch("bias_add", xv, bv));
        }
        let channels = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut data = xv.data().to_vec();
        for (chunk_idx, chunk) in data.chunks_mut(inner).enumerate() {
            let b = bv.data()[chunk_idx % channels];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let out = Tensor::new(shape, data)?;
        let op = move |_: &[&Tensor], _: &Tensor, ct: &Tensor| {
            let mut gb = vec![0.0f32; channels];
            for (chunk_idx, chunk) in ct.data().chunks(inner).enumerate() {
                gb[chunk_idx % channels] += chunk.iter().sum::<f32>();
            }
            vec![Some(ct.clone()), Some(Tensor::from_vec(gb))]
        };
        Ok(self.record(&[x, bias], out, Box::new(op)))
    }

    /// Stride-1 2-D convolution with `pad` zeros on every side.
    pub fn conv2d(&mut self, x: Var, weight: Var, pad: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(weight));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
            return Err(mismatch("conv2d", xv, wv));
        }
        let (batch, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(mismatch("conv2d", xv, wv));
        }
        let dims = ConvDims {
            c_in,
            h,
            w,
            k,
            pad,
            h_out: h + 2 * pad - k + 1,
            w_out: w + 2 * pad - k + 1,
        };
        let (rows, hw) = (dims.col_rows(), dims.col_cols());
        let img_len = c_in * h * w;

        let mut cols = vec![0.0; batch * rows * hw];
        let mut out = vec![0.0; batch * c_out * hw];
        for n in 0..batch {
            let col_n = &mut cols[n * rows * hw..(n + 1) * rows * hw];
            kernels::im2col(&dims, &xv.data()[n * img_len..(n + 1) * img_len], col_n);
            kernels::gemm_nn(
                c_out,
                rows,
                hw,
                wv.data(),
                col_n,
                &mut out[n * c_out * hw..(n + 1) * c_out * hw],
            );
        }
        let out = Tensor::new(vec![batch, c_out, dims.h_out, dims.w_out], out)?;
        let op = Conv2dBackward {
            dims,
            batch,
            c_out,
            cols,
        };
        Ok(self.record(&[x, weight], out, Box::new(op)))
    }

    /// Average pooling over non-overlapping `size x size` windows.
    pub fn avgpool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        if s.len() != 4 || size == 0 || s[2] % size != 0 || s[3] % size != 0 {
            return Err(Error::ShapeMismatch {
                op: "avgpool2d",
                lhs: s,
                rhs: vec![size, size],
            });
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h / size, w / size);
        let norm = 1.0 / (size * size) as f32;
        let mut out = vec![0.0; planes * ho * wo];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * ho + y / size) * wo + xx / size] += xv.data()[(p * h + y) * w + xx];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= norm);
        let out = Tensor::new(vec![s[0], s[1], ho, wo], out)?;
        let op = move |inputs: &[&Tensor], _: &Tensor, ct: &Tensor| {
            let mut g = vec![0.0; planes * h * w];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        g[(p * h + y) * w + xx] = ct.data()[(p * ho + y / size) * wo + xx / size] * norm;
                    }
                }
            }
            vec![Tensor::new(inputs[0].shape().to_vec(), g).ok()]
        };
        Ok(self.record(&[x], out, Box::new(op)))
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let s = lv.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (batch, classes) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = vec![0.0f32; batch * classes];
        let mut loss = 0.0f64;
        for (n, row) in lv.data().chunks(classes).enumerate() {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let denom: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
            for (j, &v) in row.iter().enumerate() {
                probs[n * classes + j] = (((v - max) as f64).exp() / denom) as f32;
            }
            loss += denom.ln() - (row[labels[n]] - max) as f64;
        }
        let out = Tensor::scalar((loss / batch as f64) as f32);
        let labels = labels.to_vec();
        let op = move |_: &[&Tensor], _: &Tensor, ct: &Tensor| {
            let scale = ct.item() / batch as f32;
            let mut g = probs.clone();
            for (n, &l) in labels.iter().enumerate() {
                g[n * classes + l] -= 1.0;
            }
            g.iter_mut().for_each(|v| *v *= scale);
            vec![Tensor::new(vec![batch, classes], g).ok()]
        };
        Ok(self.record(&[logits], out, Box::new(op)))
    }
}

struct Conv2dBackward {
    dims: ConvDims,
    batch: usize,
    c_out: usize,
    cols: Vec<f32>,
}

impl Backward for Conv2dBackward {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, ct: &Tensor) -> Vec<Option<Tensor>> {
        let d = &self.dims;
        let (rows, hw) = (d.col_rows(), d.col_cols());
        let img_len = d.c_in * d.h * d.w;
        let weight = inputs[1];

        let mut gx = vec![0.0; self.batch * img_len];
        let mut gw = vec![0.0; self.c_out * rows];
        let mut dcols = vec![0.0; rows * hw];
        for n in 0..self.batch {
            let ct_n = &ct.data()[n * self.c_out * hw..(n + 1) * self.c_out * hw];
            let col_n = &self.cols[n * rows * hw..(n + 1) * rows * hw];
            kernels::gemm_nt(self.c_out, hw, rows, ct_n, col_n, &mut gw);
            dcols.iter_mut().for_each(|v| *v = 0.0);
            kernels::gemm_tn(rows, self.c_out, hw, weight.data(), ct_n, &mut dcols);
            kernels::col2im(d, &dcols, &mut gx[n * img_len..(n + 1) * img_len]);
        }
        vec![
            Tensor::new(inputs[0].shape().to_vec(), gx).ok(),
            Tensor::new(weight.shape().to_vec(), gw).ok(),
        ]
    }
}
