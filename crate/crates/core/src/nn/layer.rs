//! Layer kinds and their forward/backward rules.
//!
//! Weight layout conventions:
//! - `Dense`: weight `[out, in]` row-major (each output's weights contiguous),
//!   bias `[out]`.
//! - `Conv2d`: weight `[out_c, in_c, k, k]`, bias `[out_c]`; square kernels.
//!
//! Backward passes compute exact gradients of whatever scalar the caller
//! differentiates; the batch-mean scaling of the loss is applied by the
//! caller when it seeds the logit gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// C[m,n] = A[m,k] * B[k,n], all row-major.
fn gemm_rm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m,n] = A[m,k] * B[n,k]^T, all row-major.
fn gemm_rm_bt(m: usize, k: usize, n: usize, a: &[f64], bt: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(bt.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            bt.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m,n] = A[k,m]^T * B[k,n], all row-major.
fn gemm_rm_at(m: usize, k: usize, n: usize, at: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(at.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            at.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Kaiming-style uniform init: bound = sqrt(6 / fan_in).
fn kaiming_uniform(n: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out, in]` row-major.
    pub weight: Tensor,
    /// `[out]`.
    pub bias: Tensor,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = Tensor::new(
            vec![out_dim, in_dim],
            kaiming_uniform(out_dim * in_dim, in_dim, rng),
        )
        .expect("dense weight shape");
        Dense {
            in_dim,
            out_dim,
            weight,
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::RejectedInput("dense weight must be 2-d".into()));
        }
        let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
        if bias.shape() != [out_dim] {
            return Err(Error::RejectedInput(format!(
                "dense bias shape {:?} does not match out dim {out_dim}",
                bias.shape()
            )));
        }
        Ok(Dense {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub(crate) fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let n = input.rows();
        if input.row_len() != self.in_dim {
            return Err(Error::RejectedInput(format!(
                "dense expects {} inputs per sample, got shape {:?}",
                self.in_dim,
                input.shape()
            )));
        }
        let mut out = Tensor::zeros(vec![n, self.out_dim]);
        gemm_rm_bt(
            n,
            self.in_dim,
            self.out_dim,
            input.data(),
            self.weight.data(),
            out.data_mut(),
        );
        let b = self.bias.data();
        for row in out.data_mut().chunks_exact_mut(self.out_dim) {
            for (y, bo) in row.iter_mut().zip(b) {
                *y += bo;
            }
        }
        Ok(out)
    }

    pub(crate) fn backward(&self, input: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
        let n = input.rows();
        let mut d_input = Tensor::zeros(vec![n, self.in_dim]);
        gemm_rm(
            n,
            self.out_dim,
            self.in_dim,
            grad_out.data(),
            self.weight.data(),
            d_input.data_mut(),
        );
        let mut d_weight = Tensor::zeros(vec![self.out_dim, self.in_dim]);
        gemm_rm_at(
            self.out_dim,
            n,
            self.in_dim,
            grad_out.data(),
            input.data(),
            d_weight.data_mut(),
        );
        let mut d_bias = Tensor::zeros(vec![self.out_dim]);
        let db = d_bias.data_mut();
        for row in grad_out.data().chunks_exact(self.out_dim) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        (d_input, d_weight, d_bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_ch, in_ch, kernel, kernel]`.
    pub weight: Tensor,
    /// `[out_ch]`.
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let weight = Tensor::new(
            vec![out_ch, in_ch, kernel, kernel],
            kaiming_uniform(out_ch * fan_in, fan_in, rng),
        )
        .expect("conv weight shape");
        Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            weight,
            bias: Tensor::zeros(vec![out_ch]),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel;
        if h + 2 * self.pad < k || w + 2 * self.pad < k {
            return Err(Error::RejectedInput(format!(
                "conv kernel {k} does not fit {h}x{w} input with pad {}",
                self.pad
            )));
        }
        Ok((
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        ))
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
        let s = input.shape();
        if s.len() != 4 || s[1] != self.in_ch {
            return Err(Error::RejectedInput(format!(
                "conv expects [n, {}, h, w] input, got {:?}",
                self.in_ch, s
            )));
        }
        let (oh, ow) = self.out_hw(s[2], s[3])?;
        Ok((s[0], s[2], s[3], oh, ow))
    }

    pub(crate) fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (n, h, w, oh, ow) = self.check_input(input)?;
        let k = self.kernel;
        let mut out = Tensor::zeros(vec![n, self.out_ch, oh, ow]);
        let x = input.data();
        let wt = self.weight.data();
        let b = self.bias.data();
        let o = out.data_mut();
        for s in 0..n {
            let xs = &x[s * self.in_ch * h * w..];
            let os = &mut o[s * self.out_ch * oh * ow..(s + 1) * self.out_ch * oh * ow];
            for oc in 0..self.out_ch {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b[oc];
                        for ic in 0..self.in_ch {
                            let xc = &xs[ic * h * w..(ic + 1) * h * w];
                            let wc = &wt[(oc * self.in_ch + ic) * k * k..];
                            for ky in 0..k {
                                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                                let wrow = &wc[ky * k..(ky + 1) * k];
                                for kx in 0..k {
                                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xrow[ix as usize] * wrow[kx];
                                }
                            }
                        }
                        os[oc * oh * ow + oy * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn backward(&self, input: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
        let (n, h, w, oh, ow) = self
            .check_input(input)
            .expect("backward called with the forward input");
        let k = self.kernel;
        let mut d_input = Tensor::zeros(input.shape().to_vec());
        let mut d_weight = Tensor::zeros(self.weight.shape().to_vec());
        let mut d_bias = Tensor::zeros(vec![self.out_ch]);
        let x = input.data();
        let wt = self.weight.data();
        let g = grad_out.data();
        let dx = d_input.data_mut();
        let dw = d_weight.data_mut();
        let db = d_bias.data_mut();
        for s in 0..n {
            let xs = &x[s * self.in_ch * h * w..];
            let gs = &g[s * self.out_ch * oh * ow..];
            let dxs_base = s * self.in_ch * h * w;
            for oc in 0..self.out_ch {
                let gc = &gs[oc * oh * ow..(oc + 1) * oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let go = gc[oy * ow + ox];
                        if go == 0.0 {
                            continue;
                        }
                        db[oc] += go;
                        for ic in 0..self.in_ch {
                            let xc = &xs[ic * h * w..(ic + 1) * h * w];
                            let wbase = (oc * self.in_ch + ic) * k * k;
                            for ky in 0..k {
                                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = iy as usize * w + ix as usize;
                                    dw[wbase + ky * k + kx] += go * xc[xi];
                                    dx[dxs_base + ic * h * w + xi] += go * wt[wbase + ky * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        (d_input, d_weight, d_bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    LeakyRelu(f64),
    Flatten,
}

impl Layer {
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(input),
            Layer::Conv2d(c) => c.forward(input),
            Layer::LeakyRelu(slope) => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v *= slope;
                    }
                }
                Ok(out)
            }
            Layer::Flatten => {
                let n = input.rows();
                input.reshaped(vec![n, input.row_len()])
            }
        }
    }

    /// Returns the gradient w.r.t. the layer input, plus parameter gradients
    /// for layers that have parameters.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
    ) -> (Tensor, Option<(Tensor, Tensor)>) {
        match self {
            Layer::Dense(d) => {
                let (dx, dw, db) = d.backward(input, grad_out);
                (dx, Some((dw, db)))
            }
            Layer::Conv2d(c) => {
                let (dx, dw, db) = c.backward(input, grad_out);
                (dx, Some((dw, db)))
            }
            Layer::LeakyRelu(slope) => {
                let mut dx = grad_out.clone();
                for (g, x) in dx.data_mut().iter_mut().zip(input.data()) {
                    if *x < 0.0 {
                        *g *= slope;
                    }
                }
                (dx, None)
            }
            Layer::Flatten => {
                let dx = grad_out
                    .reshaped(input.shape().to_vec())
                    .expect("flatten backward reshape");
                (dx, None)
            }
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn dense_forward_matches_hand_multiply() {
        // 2-layer check is in net.rs; here a single layer against hand math.
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let d = Dense::from_parts(w, b).unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0, 0.0, -1.0]).unwrap();
        let y = d.forward(&x).unwrap();
        // [1*1 + 2*0 + 3*(-1) + 0.5, 4*1 + 5*0 + 6*(-1) - 0.5]
        assert_eq!(y.data(), &[-1.5, -2.5]);
    }

    #[test]
    fn dense_rejects_wrong_input_width() {
        let mut rng = stream(0, "t");
        let d = Dense::new(4, 2, &mut rng);
        let x = Tensor::zeros(vec![1, 3]);
        assert!(d.forward(&x).is_err());
    }

    #[test]
    fn leaky_relu_applies_slope_below_zero() {
        let l = Layer::LeakyRelu(0.01);
        let x = Tensor::new(vec![1, 4], vec![-2.0, -0.5, 0.0, 3.0]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.data(), &[-0.02, -0.005, 0.0, 3.0]);
    }

    #[test]
    fn conv_output_shape_follows_stride_and_pad() {
        let mut rng = stream(0, "t");
        let c = Conv2d::new(1, 8, 3, 2, 1, &mut rng);
        let x = Tensor::zeros(vec![2, 1, 28, 28]);
        let y = c.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 8, 14, 14]);
    }

    #[test]
    fn conv_identity_kernel_passes_center_through() {
        // 1x1-channel conv, 3x3 kernel with only the center weight set:
        // stride 1 pad 1 reproduces the input.
        let mut w = Tensor::zeros(vec![1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let c = Conv2d {
            in_ch: 1,
            out_ch: 1,
            kernel: 3,
            stride: 1,
            pad: 1,
            weight: w,
            bias: Tensor::zeros(vec![1]),
        };
        let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = c.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn flatten_round_trips_shape() {
        let l = Layer::Flatten;
        let x = Tensor::zeros(vec![3, 2, 4, 4]);
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[3, 32]);
        let (dx, _) = l.backward(&x, &y);
        assert_eq!(dx.shape(), x.shape());
    }
}
