use candle_core::{DType, Tensor, Var, D};

use super::{ops, Mode, ParamPath};
use crate::Result;

/// 2-D convolution with square kernel and optional bias.
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// He-normal initialised weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn new(
        mut path: ParamPath<'_>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = path.normal("weight", &[out_channels, in_channels, kernel, kernel], std)?;
        let bias = if bias {
            Some(path.constant("bias", &[out_channels], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// 3x3, stride 1, same padding, no bias (a batch norm follows).
    pub fn same3x3(path: ParamPath<'_>, in_channels: usize, out_channels: usize) -> Result<Self> {
        Self::new(path, in_channels, out_channels, 3, 1, 1, false)
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = ops::conv2d(xs, self.weight.as_tensor(), self.stride, self.padding)?;
        self.add_bias(ys)
    }

    /// Same result through candle's built-in convolution. Slower; kept to
    /// cross-check the fused kernel.
    pub fn forward_reference(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        self.add_bias(ys)
    }

    fn add_bias(&self, ys: Tensor) -> Result<Tensor> {
        match &self.bias {
            Some(b) => Ok(ys.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(ys),
        }
    }
}

/// Batch normalisation over `(N, H, W)` per channel.
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(mut path: ParamPath<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: path.constant("weight", &[channels], 1.0)?,
            beta: path.constant("bias", &[channels], 0.0)?,
            running_mean: path.buffer("running_mean", &[channels], 0.0)?,
            running_var: path.buffer("running_var", &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, xs: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = xs.dims4()?;
        if !mode.is_train() {
            return self.forward_reference(xs, mode);
        }
        if mode == Mode::Train {
            let flat = xs.detach().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
            let (mean, var) = ops::channel_stats(&flat, n, c, h * w);
            let count = (n * h * w) as f64;
            let correction = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let unbiased: Vec<f64> = var.iter().map(|v| v * correction).collect();
            self.update_running(
                &Tensor::new(mean, xs.device())?.to_dtype(xs.dtype())?,
                &Tensor::new(unbiased, xs.device())?.to_dtype(xs.dtype())?,
            )?;
        }
        Ok(ops::batch_norm_train(
            xs,
            self.gamma.as_tensor(),
            self.beta.as_tensor(),
            self.eps,
        )?)
    }

    fn update_running(&self, mean: &Tensor, unbiased_var: &Tensor) -> Result<()> {
        let m = self.momentum;
        let new_mean =
            ((self.running_mean.as_tensor() * (1.0 - m))? + (mean.flatten_all()? * m)?)?;
        let new_var =
            ((self.running_var.as_tensor() * (1.0 - m))? + (unbiased_var.flatten_all()? * m)?)?;
        self.running_mean.set(&new_mean)?;
        self.running_var.set(&new_var)?;
        Ok(())
    }

    /// Composite candle version of [`BatchNorm2d::forward`], used to
    /// cross-check the fused kernel.
    pub fn forward_reference(&self, xs: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = xs.dims4()?;
        let (mean, var) = if mode.is_train() {
            let mean = xs.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centered = xs.broadcast_sub(&mean)?;
            let var = centered
                .sqr()?
                .mean_keepdim(0)?
                .mean_keepdim(2)?
                .mean_keepdim(3)?;
            if mode == Mode::Train {
                let count = (n * h * w) as f64;
                let unbiased = if count > 1.0 {
                    (var.detach() * (count / (count - 1.0)))?
                } else {
                    var.detach()
                };
                self.update_running(&mean.detach(), &unbiased)?;
            }
            (mean, var)
        } else {
            (
                self.running_mean.as_tensor().reshape((1, c, 1, 1))?,
                self.running_var.as_tensor().reshape((1, c, 1, 1))?,
            )
        };
        let inv_std = (var + self.eps)?.sqrt()?.recip()?;
        let normed = xs.broadcast_sub(&mean)?.broadcast_mul(&inv_std)?;
        let gamma = self.gamma.as_tensor().reshape((1, c, 1, 1))?;
        let beta = self.beta.as_tensor().reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

/// Affine map `x W^T + b` on rank-2 inputs.
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(mut path: ParamPath<'_>, in_features: usize, out_features: usize) -> Result<Self> {
        let std = (1.0 / in_features as f64).sqrt();
        Ok(Self {
            weight: path.normal("weight", &[out_features, in_features], std)?,
            bias: path.constant("bias", &[out_features], 0.0)?,
        })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let ys = xs.matmul(&self.weight.as_tensor().t()?)?;
        Ok(ys.broadcast_add(&self.bias.as_tensor().unsqueeze(0)?)?)
    }
}

/// `max(x, slope * x)` for `0 < slope < 1`.
pub(crate) fn leaky_relu(xs: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(xs.maximum(&(xs * slope)?)?)
}

/// Mean over the spatial dimensions of `(N, C, H, W)`.
pub(crate) fn global_avg_pool(xs: &Tensor) -> Result<Tensor> {
    Ok(xs.mean(D::Minus1)?.mean(D::Minus1)?)
}
