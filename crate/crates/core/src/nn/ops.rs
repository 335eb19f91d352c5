//! Fused CPU kernels with hand-written backward passes.
//!
//! candle's generic convolution backward, small batched matmuls and long
//! chains of elementwise ops dominate training time for narrow networks.
//! These ops do the same arithmetic in one or two passes: im2col / col2im
//! feeding a single large matrix product, separable bilinear upsampling
//! with its exact adjoint, and batch normalisation on batch statistics.
//! Composite reference versions live next to each layer for testing.

use candle_core::{CpuStorage, CustomOp1, CustomOp2, CustomOp3, Layout, Shape, Tensor, WithDType};

type CResult<T> = candle_core::Result<T>;

fn contiguous<'a, T>(data: &'a [T], layout: &Layout, op: &str) -> CResult<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => Err(candle_core::Error::Msg(format!("{op}: input must be contiguous"))),
    }
}

fn unsupported(op: &str) -> candle_core::Error {
    candle_core::Error::Msg(format!("{op}: only f32 and f64 are supported"))
}

fn to_vec<T: WithDType>(t: &Tensor) -> CResult<Vec<T>> {
    t.flatten_all()?.to_vec1::<T>()
}

/// Geometry of a square-kernel convolution on `(B, C, H, W)`.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn kernel_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn columns(&self) -> usize {
        let (ho, wo) = self.out_hw();
        self.b * ho * wo
    }

    /// Visits the non-padding runs of one im2col row as
    /// `(first column, first input index, length)`. Columns run over
    /// `(B, Ho, Wo)`; consecutive columns of a run step the input index by
    /// `stride`.
    fn for_row(&self, row: usize, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.out_hw();
        let ci = row / (self.k * self.k);
        let kh = row / self.k % self.k;
        let kw = row % self.k;
        let s = self.stride;
        if self.w + self.pad <= kw {
            return;
        }
        // ox * s + kw - pad must land in [0, w)
        let lo = (self.pad.saturating_sub(kw)).div_ceil(s);
        let hi = ((self.w + self.pad - kw - 1) / s + 1).min(wo);
        if lo >= hi {
            return;
        }
        for bi in 0..self.b {
            let plane = (bi * self.c + ci) * self.h * self.w;
            for oy in 0..ho {
                let iy = (oy * s + kh) as isize - self.pad as isize;
                if iy < 0 || iy >= self.h as isize {
                    continue;
                }
                let col = (bi * ho + oy) * wo + lo;
                let input = plane + iy as usize * self.w + lo * s + kw - self.pad;
                f(col, input, hi - lo);
            }
        }
    }
}

struct Im2Col(ConvGeom);
/// Input gradient of a convolution from `dy` laid out as `(O, B*Ho*Wo)`.
struct ConvInputGrad(ConvGeom);

impl Im2Col {
    fn run<T: WithDType>(&self, x: &[T]) -> Vec<T> {
        let g = self.0;
        let (ho, wo) = g.out_hw();
        let n = g.b * ho * wo;
        let mut col = vec![T::zero(); g.kernel_rows() * n];
        for (row, dst) in col.chunks_mut(n).enumerate() {
            g.for_row(row, |ci, xi, len| {
                if g.stride == 1 {
                    dst[ci..ci + len].copy_from_slice(&x[xi..xi + len]);
                } else {
                    for j in 0..len {
                        dst[ci + j] = x[xi + j * g.stride];
                    }
                }
            });
        }
        col
    }
}

impl ConvInputGrad {
    /// `dx = col2im(W^T dy)` without materialising the column gradient:
    /// one im2col row of `W^T dy` is built at a time and scattered.
    fn run<T: WithDType>(&self, dy: &[T], w: &[T]) -> Vec<T> {
        let g = self.0;
        let (k, n) = (g.kernel_rows(), g.columns());
        let o = w.len() / k;
        let mut dx = vec![T::zero(); g.b * g.c * g.h * g.w];
        let mut buf = vec![T::zero(); n];
        for row in 0..k {
            buf.iter_mut().for_each(|v| *v = T::zero());
            for oc in 0..o {
                let coef = w[oc * k + row];
                for (b, d) in buf.iter_mut().zip(&dy[oc * n..(oc + 1) * n]) {
                    *b += coef * *d;
                }
            }
            g.for_row(row, |ci, xi, len| {
                if g.stride == 1 {
                    for (d, b) in dx[xi..xi + len].iter_mut().zip(&buf[ci..ci + len]) {
                        *d += *b;
                    }
                } else {
                    for j in 0..len {
                        dx[xi + j * g.stride] += buf[ci + j];
                    }
                }
            });
        }
        dx
    }
}

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let g = self.0;
        let (ho, wo) = g.out_hw();
        let shape = Shape::from((g.c * g.k * g.k, g.b * ho * wo));
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(self.run(contiguous(v, l, "im2col")?)),
            CpuStorage::F64(v) => CpuStorage::F64(self.run(contiguous(v, l, "im2col")?)),
            _ => return Err(unsupported("im2col")),
        };
        Ok((out, shape))
    }
}

impl CustomOp2 for ConvInputGrad {
    fn name(&self) -> &'static str {
        "conv-input-grad"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let g = self.0;
        let shape = Shape::from((g.b, g.c, g.h, g.w));
        let op = "conv input grad";
        let out = match (s1, s2) {
            (CpuStorage::F32(dy), CpuStorage::F32(w)) => {
                CpuStorage::F32(self.run(contiguous(dy, l1, op)?, contiguous(w, l2, op)?))
            }
            (CpuStorage::F64(dy), CpuStorage::F64(w)) => {
                CpuStorage::F64(self.run(contiguous(dy, l1, op)?, contiguous(w, l2, op)?))
            }
            _ => return Err(unsupported(op)),
        };
        Ok((out, shape))
    }
}

/// Convolution without bias: `y = W im2col(x)`, returned as `(B, O, Ho, Wo)`.
struct Conv(ConvGeom);

impl Conv {
    fn matmul_output(&self, x: &Tensor, w: &Tensor) -> CResult<Tensor> {
        let g = self.0;
        let (ho, wo) = g.out_hw();
        let o = w.dims()[0];
        let col = x.apply_op1_no_bwd(&Im2Col(g))?;
        let y = w.reshape((o, g.kernel_rows()))?.matmul(&col)?;
        y.reshape((o, g.b, ho, wo))?.permute((1, 0, 2, 3))?.contiguous()
    }
}

impl CustomOp2 for Conv {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let dev = candle_core::Device::Cpu;
        let (x, w) = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(w)) => (
                Tensor::from_slice(contiguous(x, l1, "conv2d")?, l1.shape(), &dev)?,
                Tensor::from_slice(contiguous(w, l2, "conv2d")?, l2.shape(), &dev)?,
            ),
            (CpuStorage::F64(x), CpuStorage::F64(w)) => (
                Tensor::from_slice(contiguous(x, l1, "conv2d")?, l1.shape(), &dev)?,
                Tensor::from_slice(contiguous(w, l2, "conv2d")?, l2.shape(), &dev)?,
            ),
            _ => return Err(unsupported("conv2d")),
        };
        let y = self.matmul_output(&x, &w)?;
        let shape = y.shape().clone();
        let out = match y.dtype() {
            candle_core::DType::F32 => CpuStorage::F32(to_vec(&y)?),
            _ => CpuStorage::F64(to_vec(&y)?),
        };
        Ok((out, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> CResult<(Option<Tensor>, Option<Tensor>)> {
        let g = self.0;
        let o = w.dims()[0];
        let dy = grad
            .permute((1, 0, 2, 3))?
            .contiguous()?
            .reshape((o, g.columns()))?;
        let col = x.contiguous()?.apply_op1_no_bwd(&Im2Col(g))?;
        let dw = dy.matmul(&col.t()?)?.reshape(w.shape())?;
        let dx = dy.apply_op2_no_bwd(&w.contiguous()?, &ConvInputGrad(g))?;
        Ok((Some(dx), Some(dw)))
    }
}

/// Convolution of `(B, C, H, W)` with `(O, C, k, k)` weights as one matrix
/// product over im2col columns.
pub fn conv2d(xs: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> CResult<Tensor> {
    let (b, c, h, w) = xs.dims4()?;
    let (_, wc, k, k2) = weight.dims4()?;
    if wc != c || k != k2 {
        return Err(candle_core::Error::Msg(format!(
            "conv2d: input {:?} vs weight {:?}",
            xs.dims(),
            weight.dims()
        )));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(candle_core::Error::Msg("conv2d: kernel larger than input".into()));
    }
    let g = ConvGeom { b, c, h, w, k, stride, pad };
    xs.contiguous()?.apply_op2(&weight.contiguous()?, Conv(g))
}

/// Two-tap interpolation weights of a 2x half-pixel bilinear resize:
/// output `i` reads `taps[i] = [(j0, w0), (j1, w1)]`.
fn taps(n: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * n)
        .map(|dst| {
            let src = (dst as f64 + 0.5) / 2.0 - 0.5;
            let lo = src.floor();
            let frac = src - lo;
            let lo_i = (lo.max(0.0) as usize).min(n - 1);
            let hi_i = ((lo + 1.0).max(0.0) as usize).min(n - 1);
            [(lo_i, 1.0 - frac), (hi_i, frac)]
        })
        .collect()
}

/// Separable 2x bilinear upsampling (`adjoint = false`) or its transpose,
/// which maps `2H x 2W` gradients back to `H x W`.
#[derive(Clone, Copy)]
struct Upsample2x {
    planes: usize,
    h: usize,
    w: usize,
    adjoint: bool,
}

impl Upsample2x {
    fn run<T: WithDType>(&self, x: &[T]) -> Vec<T> {
        let (h, w) = (self.h, self.w);
        let (th, tw) = (taps(h), taps(w));
        if !self.adjoint {
            let mut out = vec![T::zero(); self.planes * 4 * h * w];
            let mut rows = vec![0.0f64; h * 2 * w];
            for p in 0..self.planes {
                let src = &x[p * h * w..(p + 1) * h * w];
                for r in 0..h {
                    for (j, t) in tw.iter().enumerate() {
                        rows[r * 2 * w + j] =
                            t[0].1 * src[r * w + t[0].0].to_f64() + t[1].1 * src[r * w + t[1].0].to_f64();
                    }
                }
                let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
                for (i, t) in th.iter().enumerate() {
                    for j in 0..2 * w {
                        let v = t[0].1 * rows[t[0].0 * 2 * w + j] + t[1].1 * rows[t[1].0 * 2 * w + j];
                        dst[i * 2 * w + j] = T::from_f64(v);
                    }
                }
            }
            out
        } else {
            let mut rows = vec![0.0f64; h * 2 * w];
            let mut acc = vec![0.0f64; h * w];
            let mut out = vec![T::zero(); self.planes * h * w];
            for p in 0..self.planes {
                let src = &x[p * 4 * h * w..(p + 1) * 4 * h * w];
                rows.iter_mut().for_each(|v| *v = 0.0);
                for (i, t) in th.iter().enumerate() {
                    for j in 0..2 * w {
                        let g = src[i * 2 * w + j].to_f64();
                        rows[t[0].0 * 2 * w + j] += t[0].1 * g;
                        rows[t[1].0 * 2 * w + j] += t[1].1 * g;
                    }
                }
                acc.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..h {
                    for (j, t) in tw.iter().enumerate() {
                        let g = rows[r * 2 * w + j];
                        acc[r * w + t[0].0] += t[0].1 * g;
                        acc[r * w + t[1].0] += t[1].1 * g;
                    }
                }
                for (d, v) in out[p * h * w..(p + 1) * h * w].iter_mut().zip(&acc) {
                    *d = T::from_f64(*v);
                }
            }
            out
        }
    }
}

impl CustomOp1 for Upsample2x {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> CResult<(CpuStorage, Shape)> {
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(self.run(contiguous(v, l, "upsample2x")?)),
            CpuStorage::F64(v) => CpuStorage::F64(self.run(contiguous(v, l, "upsample2x")?)),
            _ => return Err(unsupported("upsample2x")),
        };
        let mut dims = l.dims().to_vec();
        let n = dims.len();
        if self.adjoint {
            dims[n - 2] /= 2;
            dims[n - 1] /= 2;
        } else {
            dims[n - 2] *= 2;
            dims[n - 1] *= 2;
        }
        Ok((out, Shape::from(dims)))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> CResult<Option<Tensor>> {
        let adj = Upsample2x {
            adjoint: !self.adjoint,
            ..*self
        };
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&adj)?))
    }
}

/// 2x bilinear upsampling (half-pixel centres, clamped edges) over the last
/// two dimensions of a rank-4 tensor.
pub fn upsample2x(xs: &Tensor) -> CResult<Tensor> {
    let (b, c, h, w) = xs.dims4()?;
    xs.contiguous()?.apply_op1(Upsample2x {
        planes: b * c,
        h,
        w,
        adjoint: false,
    })
}

/// Per-channel batch statistics `(mean, biased variance)` of `(B, C, H, W)`.
pub fn channel_stats<T: WithDType>(x: &[T], b: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (b * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for bi in 0..b {
            let base = (bi * c + ch) * hw;
            s += x[base..base + hw].iter().map(|v| v.to_f64()).sum::<f64>();
        }
        let m = s / count;
        let mut q = 0.0;
        for bi in 0..b {
            let base = (bi * c + ch) * hw;
            q += x[base..base + hw]
                .iter()
                .map(|v| {
                    let d = v.to_f64() - m;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = m;
        var[ch] = q / count;
    }
    (mean, var)
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta` with batch statistics.
struct BatchNormTrain {
    eps: f64,
}

fn dims_bchw(l: &Layout) -> CResult<(usize, usize, usize)> {
    match l.dims() {
        [b, c, h, w] => Ok((*b, *c, h * w)),
        d => Err(candle_core::Error::Msg(format!("batch norm expects rank 4, got {d:?}"))),
    }
}

impl BatchNormTrain {
    fn run<T: WithDType>(&self, x: &[T], gamma: &[T], beta: &[T], b: usize, c: usize, hw: usize) -> Vec<T> {
        let (mean, var) = channel_stats(x, b, c, hw);
        let mut out = vec![T::zero(); x.len()];
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + self.eps).sqrt();
            let scale = gamma[ch].to_f64() * inv;
            let shift = beta[ch].to_f64() - mean[ch] * scale;
            for bi in 0..b {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    out[i] = T::from_f64(x[i].to_f64() * scale + shift);
                }
            }
        }
        out
    }

    /// Gradients with respect to `x`, `gamma` and `beta`.
    fn grads<T: WithDType>(
        &self,
        x: &[T],
        gamma: &[T],
        dy: &[T],
        b: usize,
        c: usize,
        hw: usize,
    ) -> (Vec<T>, Vec<T>, Vec<T>) {
        let (mean, var) = channel_stats(x, b, c, hw);
        let n = (b * hw) as f64;
        let mut dx = vec![T::zero(); x.len()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + self.eps).sqrt();
            let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
            for bi in 0..b {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let g = dy[i].to_f64();
                    sum_dy += g;
                    sum_dy_xhat += g * (x[i].to_f64() - mean[ch]) * inv;
                }
            }
            dgamma[ch] = T::from_f64(sum_dy_xhat);
            dbeta[ch] = T::from_f64(sum_dy);
            let k = gamma[ch].to_f64() * inv / n;
            for bi in 0..b {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let xhat = (x[i].to_f64() - mean[ch]) * inv;
                    dx[i] = T::from_f64(k * (n * dy[i].to_f64() - sum_dy - xhat * sum_dy_xhat));
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

impl CustomOp3 for BatchNormTrain {
    fn name(&self) -> &'static str {
        "batch-norm-train"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> CResult<(CpuStorage, Shape)> {
        let (b, c, hw) = dims_bchw(l1)?;
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(x), CpuStorage::F32(g), CpuStorage::F32(be)) => CpuStorage::F32(self.run(
                contiguous(x, l1, "batch norm")?,
                contiguous(g, l2, "batch norm")?,
                contiguous(be, l3, "batch norm")?,
                b,
                c,
                hw,
            )),
            (CpuStorage::F64(x), CpuStorage::F64(g), CpuStorage::F64(be)) => CpuStorage::F64(self.run(
                contiguous(x, l1, "batch norm")?,
                contiguous(g, l2, "batch norm")?,
                contiguous(be, l3, "batch norm")?,
                b,
                c,
                hw,
            )),
            _ => return Err(unsupported("batch norm")),
        };
        Ok((out, l1.shape().clone()))
    }

    fn bwd(
        &self,
        x: &Tensor,
        gamma: &Tensor,
        _beta: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> CResult<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let (b, c, h, w) = x.dims4()?;
        let dev = x.device();
        macro_rules! go {
            ($t:ty) => {{
                let (dx, dg, db) = self.grads::<$t>(
                    &to_vec::<$t>(x)?,
                    &to_vec::<$t>(gamma)?,
                    &to_vec::<$t>(grad)?,
                    b,
                    c,
                    h * w,
                );
                (
                    Tensor::from_vec(dx, (b, c, h, w), dev)?,
                    Tensor::from_vec(dg, c, dev)?,
                    Tensor::from_vec(db, c, dev)?,
                )
            }};
        }
        let (dx, dg, db) = match x.dtype() {
            candle_core::DType::F32 => go!(f32),
            candle_core::DType::F64 => go!(f64),
            _ => return Err(unsupported("batch norm")),
        };
        Ok((Some(dx), Some(dg), Some(db)))
    }
}

/// Batch normalisation with batch statistics; `gamma` and `beta` are `(C,)`.
pub fn batch_norm_train(xs: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> CResult<Tensor> {
    xs.contiguous()?
        .apply_op3(&gamma.contiguous()?, &beta.contiguous()?, BatchNormTrain { eps })
}
