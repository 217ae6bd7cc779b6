//! Layer kinds and their forward/backward math.
//!
//! Five kinds are supported: dense, relu, flatten, conv2d (valid padding,
//! stride 1) and a softmax-cross-entropy head. Dot products and gradient
//! reductions accumulate in `f64` with a fixed left-to-right index order and
//! truncate to the element type on store.

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Construction-time description of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Relu,
    Flatten,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    },
    /// Softmax cross-entropy head over `classes` logits. Forward is the
    /// identity on logits; the loss gradient enters in `Network::backward`.
    SoftmaxCrossEntropy { classes: usize },
}

impl LayerSpec {
    /// Stable kind code used by the weight file format.
    pub fn kind_code(&self) -> u32 {
        match self {
            LayerSpec::Dense { .. } => 1,
            LayerSpec::Relu => 2,
            LayerSpec::Flatten => 3,
            LayerSpec::Conv2d { .. } => 4,
            LayerSpec::SoftmaxCrossEntropy { .. } => 5,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::SoftmaxCrossEntropy { .. } => "softmax-crossentropy-head",
        }
    }

    /// Per-sample output shape given a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { inputs, outputs } => {
                if input.len() != 1 {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects a flat input, got shape {input:?}"
                    )));
                }
                if input[0] != *inputs {
                    return Err(Error::ShapeMismatch(format!(
                        "shape mismatch {} vs {}",
                        input[0], inputs
                    )));
                }
                Ok(vec![*outputs])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => {
                if input.len() != 3 {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d expects [channels, h, w], got shape {input:?}"
                    )));
                }
                if input[0] != *in_channels {
                    return Err(Error::ShapeMismatch(format!(
                        "shape mismatch {} vs {} (channels)",
                        input[0], in_channels
                    )));
                }
                if input[1] < *kernel_h || input[2] < *kernel_w {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d kernel {kernel_h}x{kernel_w} larger than input {}x{}",
                        input[1], input[2]
                    )));
                }
                Ok(vec![
                    *out_channels,
                    input[1] - kernel_h + 1,
                    input[2] - kernel_w + 1,
                ])
            }
            LayerSpec::SoftmaxCrossEntropy { classes } => {
                if input.len() != 1 || input[0] != *classes {
                    return Err(Error::ShapeMismatch(format!(
                        "shape mismatch {:?} vs [{}] (head logits)",
                        input, classes
                    )));
                }
                Ok(vec![*classes])
            }
        }
    }
}

/// A layer with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense { weight: Tensor<T>, bias: Tensor<T> },
    Relu,
    Flatten,
    Conv2d { weight: Tensor<T>, bias: Tensor<T> },
    SoftmaxCrossEntropy { classes: usize },
}

impl<T: Scalar> Layer<T> {
    /// Builds the layer, drawing weights uniform in
    /// +-sqrt(6 / (fan_in + fan_out)) from `stream`; biases start at zero.
    pub fn init(spec: &LayerSpec, stream: &mut SeedStream) -> Self {
        match spec {
            LayerSpec::Dense { inputs, outputs } => {
                let limit = (6.0 / (*inputs as f64 + *outputs as f64)).sqrt();
                let mut w = Vec::with_capacity(inputs * outputs);
                for _ in 0..inputs * outputs {
                    w.push(T::from_acc(stream.uniform_symmetric(limit)));
                }
                Layer::Dense {
                    weight: Tensor::new(vec![*outputs, *inputs], w).expect("dense weight shape"),
                    bias: Tensor::zeros(vec![*outputs]),
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
            } => {
                let fan_in = in_channels * kernel_h * kernel_w;
                let fan_out = out_channels * kernel_h * kernel_w;
                let limit = (6.0 / (fan_in as f64 + fan_out as f64)).sqrt();
                let len = out_channels * in_channels * kernel_h * kernel_w;
                let mut w = Vec::with_capacity(len);
                for _ in 0..len {
                    w.push(T::from_acc(stream.uniform_symmetric(limit)));
                }
                Layer::Conv2d {
                    weight: Tensor::new(
                        vec![*out_channels, *in_channels, *kernel_h, *kernel_w],
                        w,
                    )
                    .expect("conv weight shape"),
                    bias: Tensor::zeros(vec![*out_channels]),
                }
            }
            LayerSpec::SoftmaxCrossEntropy { classes } => {
                Layer::SoftmaxCrossEntropy { classes: *classes }
            }
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense { weight, .. } => LayerSpec::Dense {
                inputs: weight.shape()[1],
                outputs: weight.shape()[0],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Conv2d { weight, .. } => LayerSpec::Conv2d {
                out_channels: weight.shape()[0],
                in_channels: weight.shape()[1],
                kernel_h: weight.shape()[2],
                kernel_w: weight.shape()[3],
            },
            Layer::SoftmaxCrossEntropy { classes } => {
                LayerSpec::SoftmaxCrossEntropy { classes: *classes }
            }
        }
    }

    pub fn param_count(&self) -> u64 {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias } => {
                (weight.len() + bias.len()) as u64
            }
            _ => 0,
        }
    }

    pub fn params(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }

    /// Forward pass over a batch (dim 0 is the batch dimension).
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } => dense_forward(weight, bias, input),
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .map(|&v| if v > T::zero() { v } else { T::zero() })
                    .collect();
                Tensor::new(input.shape().to_vec(), data)
            }
            Layer::Flatten => {
                let b = input.rows();
                input.reshaped(vec![b, input.len() / b.max(1)])
            }
            Layer::Conv2d { weight, bias } => conv2d_forward(weight, bias, input),
            Layer::SoftmaxCrossEntropy { classes } => {
                if input.shape().len() != 2 || input.shape()[1] != *classes {
                    return Err(Error::ShapeMismatch(format!(
                        "head expects [batch, {classes}] logits, got {:?}",
                        input.shape()
                    )));
                }
                Ok(input.clone())
            }
        }
    }

    /// Backward pass. `input`/`output` are the activations recorded by the
    /// forward trace; `upstream` is dLoss/dOutput. Returns the parameter
    /// gradients (None for parameter-free kinds) and dLoss/dInput.
    #[allow(clippy::type_complexity)]
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(Option<(Tensor<T>, Tensor<T>)>, Tensor<T>)> {
        if upstream.shape() != output.shape() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient shape {:?} does not match activation shape {:?}",
                upstream.shape(),
                output.shape()
            )));
        }
        match self {
            Layer::Dense { weight, .. } => dense_backward(weight, input, upstream),
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(upstream.data())
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                Ok((None, Tensor::new(input.shape().to_vec(), data)?))
            }
            Layer::Flatten => Ok((None, upstream.reshaped(input.shape().to_vec())?)),
            Layer::Conv2d { weight, .. } => conv2d_backward(weight, input, upstream),
            // Identity on logits; the loss gradient is injected by
            // Network::backward before this layer is reached.
            Layer::SoftmaxCrossEntropy { .. } => Ok((None, upstream.clone())),
        }
    }
}

fn dense_forward<T: Scalar>(
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    if input.shape().len() != 2 || input.shape()[1] != in_dim {
        return Err(Error::ShapeMismatch(format!(
            "dense expects [batch, {in_dim}], got {:?}",
            input.shape()
        )));
    }
    let b = input.rows();
    let w = weight.data();
    let mut out = Vec::with_capacity(b * out_dim);
    for r in 0..b {
        let x = input.row(r);
        for o in 0..out_dim {
            let mut acc = bias.data()[o].to_acc();
            let row = &w[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                acc += row[i].to_acc() * x[i].to_acc();
            }
            out.push(T::from_acc(acc));
        }
    }
    Tensor::new(vec![b, out_dim], out)
}

#[allow(clippy::type_complexity)]
fn dense_backward<T: Scalar>(
    weight: &Tensor<T>,
    input: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Option<(Tensor<T>, Tensor<T>)>, Tensor<T>)> {
    let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
    let b = input.rows();
    let w = weight.data();

    let mut d_w = vec![0.0f64; out_dim * in_dim];
    let mut d_b = vec![0.0f64; out_dim];
    let mut d_x = vec![0.0f64; b * in_dim];
    for r in 0..b {
        let x = input.row(r);
        let g = upstream.row(r);
        for o in 0..out_dim {
            let go = g[o].to_acc();
            d_b[o] += go;
            let w_row = &w[o * in_dim..(o + 1) * in_dim];
            let dw_row = &mut d_w[o * in_dim..(o + 1) * in_dim];
            for i in 0..in_dim {
                dw_row[i] += go * x[i].to_acc();
                d_x[r * in_dim + i] += go * w_row[i].to_acc();
            }
        }
    }

    let grad_w = Tensor::new(
        vec![out_dim, in_dim],
        d_w.into_iter().map(T::from_acc).collect(),
    )?;
    let grad_b = Tensor::new(vec![out_dim], d_b.into_iter().map(T::from_acc).collect())?;
    let grad_x = Tensor::new(
        input.shape().to_vec(),
        d_x.into_iter().map(T::from_acc).collect(),
    )?;
    Ok((Some((grad_w, grad_b)), grad_x))
}

fn conv2d_forward<T: Scalar>(
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [oc, ic, kh, kw] = [
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    ];
    if input.shape().len() != 4 || input.shape()[1] != ic {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects [batch, {ic}, h, w], got {:?}",
            input.shape()
        )));
    }
    let (b, h, w) = (input.shape()[0], input.shape()[2], input.shape()[3]);
    if h < kh || w < kw {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel {kh}x{kw} larger than input {h}x{w}"
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let x = input.data();
    let wd = weight.data();
    let mut out = Vec::with_capacity(b * oc * oh * ow);
    for r in 0..b {
        for o in 0..oc {
            for y in 0..oh {
                for xcol in 0..ow {
                    let mut acc = bias.data()[o].to_acc();
                    for ci in 0..ic {
                        for u in 0..kh {
                            let x_base = ((r * ic + ci) * h + (y + u)) * w + xcol;
                            let w_base = ((o * ic + ci) * kh + u) * kw;
                            for v in 0..kw {
                                acc += wd[w_base + v].to_acc() * x[x_base + v].to_acc();
                            }
                        }
                    }
                    out.push(T::from_acc(acc));
                }
            }
        }
    }
    Tensor::new(vec![b, oc, oh, ow], out)
}

#[allow(clippy::type_complexity)]
fn conv2d_backward<T: Scalar>(
    weight: &Tensor<T>,
    input: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<(Option<(Tensor<T>, Tensor<T>)>, Tensor<T>)> {
    let [oc, ic, kh, kw] = [
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    ];
    let (b, h, w) = (input.shape()[0], input.shape()[2], input.shape()[3]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let x = input.data();
    let wd = weight.data();
    let g = upstream.data();

    let mut d_w = vec![0.0f64; oc * ic * kh * kw];
    let mut d_b = vec![0.0f64; oc];
    let mut d_x = vec![0.0f64; b * ic * h * w];
    for r in 0..b {
        for o in 0..oc {
            for y in 0..oh {
                for xcol in 0..ow {
                    let go = g[((r * oc + o) * oh + y) * ow + xcol].to_acc();
                    d_b[o] += go;
                    for ci in 0..ic {
                        for u in 0..kh {
                            let x_base = ((r * ic + ci) * h + (y + u)) * w + xcol;
                            let w_base = ((o * ic + ci) * kh + u) * kw;
                            for v in 0..kw {
                                d_w[w_base + v] += go * x[x_base + v].to_acc();
                                d_x[x_base + v] += go * wd[w_base + v].to_acc();
                            }
                        }
                    }
                }
            }
        }
    }

    let grad_w = Tensor::new(
        vec![oc, ic, kh, kw],
        d_w.into_iter().map(T::from_acc).collect(),
    )?;
    let grad_b = Tensor::new(vec![oc], d_b.into_iter().map(T::from_acc).collect())?;
    let grad_x = Tensor::new(
        input.shape().to_vec(),
        d_x.into_iter().map(T::from_acc).collect(),
    )?;
    Ok((Some((grad_w, grad_b)), grad_x))
}
