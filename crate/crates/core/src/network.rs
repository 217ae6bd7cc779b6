//! Networks: ordered layer stacks with seeded initialization, forward and
//! backward passes, and plain SGD updates.

use crate::error::{Error, Result};
use crate::layer::{Layer, LayerSpec};
use crate::loss::{loss_and_accuracy, softmax_xent_grad};
use crate::rng::{derive_seed, SeedStream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Construction-time description of a network: the per-sample input shape
/// plus the layer stack.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetSpec {
    pub fn new(input: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { input, layers }
    }

    /// Walks the layer stack, returning every per-sample activation shape
    /// (input first). Fails on the first non-composing pair.
    pub fn activation_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("network has no layers".into()));
        }
        let mut shapes = vec![self.input.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| match e {
                    Error::ShapeMismatch(msg) => Error::ShapeMismatch(format!("layer {i}: {msg}")),
                    other => other,
                })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Per-sample output shape of the full stack.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.activation_shapes()?.pop().expect("non-empty"))
    }
}

/// Per-layer parameter tensors mirroring a network; `None` entries mark
/// parameter-free layers. The same structure carries both parameter
/// snapshots and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub entries: Vec<Option<ParamPair<T>>>,
}

/// Gradients of a loss with respect to every network parameter.
pub type GradientSet<T> = ParamSet<T>;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamPair<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> ParamSet<T> {
    /// Total element count across all entries.
    pub fn element_count(&self) -> u64 {
        self.entries
            .iter()
            .flatten()
            .map(|p| (p.weight.len() + p.bias.len()) as u64)
            .sum()
    }

    /// Wire-format size: 4 bytes per element.
    pub fn byte_size(&self) -> u64 {
        self.element_count() * 4
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| match (a, b) {
                (None, None) => true,
                (Some(x), Some(y)) => {
                    x.weight.shape() == y.weight.shape() && x.bias.shape() == y.bias.shape()
                }
                _ => false,
            })
    }

    /// True when every tensor element is bitwise zero.
    pub fn is_zero(&self) -> bool {
        self.entries.iter().flatten().all(|p| {
            p.weight.data().iter().all(|v| *v == T::zero())
                && p.bias.data().iter().all(|v| *v == T::zero())
        })
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| match (a, b) {
                (None, None) => true,
                (Some(x), Some(y)) => x.weight.bit_eq(&y.weight) && x.bias.bit_eq(&y.bias),
                _ => false,
            })
    }

    /// Largest absolute element difference across all entries; infinity on
    /// structural mismatch.
    pub fn max_diff(&self, other: &Self) -> f64 {
        if !self.same_shape(other) {
            return f64::INFINITY;
        }
        self.entries
            .iter()
            .zip(&other.entries)
            .flat_map(|(a, b)| match (a, b) {
                (Some(x), Some(y)) => vec![
                    x.weight.max_abs_diff(&y.weight).unwrap_or(f64::INFINITY),
                    x.bias.max_abs_diff(&y.bias).unwrap_or(f64::INFINITY),
                ],
                _ => vec![],
            })
            .fold(0.0, f64::max)
    }
}

/// Activations recorded by a forward pass: the input followed by every
/// layer output. The last entry is the network output.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub activations: Vec<Tensor<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.activations.last().expect("trace is never empty")
    }
}

/// What drives a backward pass: class labels (head networks) or an upstream
/// gradient flowing in from a detached continuation (headless networks).
pub enum LossTarget<'a, T> {
    Labels(&'a Tensor<T>),
    Upstream(&'a Tensor<T>),
}

/// An ordered stack of layers with composing shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    rng_seed: u64,
}

/// Builds a network from a spec, drawing parameters from a seeded stream.
/// The same spec and seed always produce bit-identical parameters.
///
/// A full network needs at least two layers so a valid interior cut exists;
/// submodels produced by a split may be shorter (see `Network::from_layers`).
pub fn init_network<T: Scalar>(spec: &NetSpec, seed: u64) -> Result<Network<T>> {
    if spec.layers.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "network needs at least 2 layers, got {}",
            spec.layers.len()
        )));
    }
    spec.activation_shapes()?;
    let mut stream = SeedStream::new(derive_seed(seed, &[0x696e_6974]));
    let layers = spec
        .layers
        .iter()
        .map(|ls| Layer::init(ls, &mut stream))
        .collect();
    Ok(Network {
        input_shape: spec.input.clone(),
        layers,
        rng_seed: seed,
    })
}

impl<T: Scalar> Network<T> {
    /// Assembles a network from existing layers, validating composition.
    /// Used by the split module and the weight loader.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer<T>>, seed: u64) -> Result<Self> {
        let spec = NetSpec::new(input_shape.clone(), layers.iter().map(|l| l.spec()).collect());
        spec.activation_shapes()?;
        Ok(Self {
            input_shape,
            layers,
            rng_seed: seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec::new(
            self.input_shape.clone(),
            self.layers.iter().map(|l| l.spec()).collect(),
        )
    }

    pub fn into_layers(self) -> (Vec<usize>, Vec<Layer<T>>, u64) {
        (self.input_shape, self.layers, self.rng_seed)
    }

    pub fn has_head(&self) -> bool {
        matches!(self.layers.last(), Some(Layer::SoftmaxCrossEntropy { .. }))
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        self.spec().output_shape().expect("validated at construction")
    }

    /// Total number of parameters.
    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Snapshot of all parameters.
    pub fn param_set(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .layers
                .iter()
                .map(|l| {
                    l.params().map(|(w, b)| ParamPair {
                        weight: w.clone(),
                        bias: b.clone(),
                    })
                })
                .collect(),
        }
    }

    /// Overwrites all parameters from a shape-congruent set.
    pub fn set_param_set(&mut self, params: &ParamSet<T>) -> Result<()> {
        if params.entries.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter set has {} entries, network has {} layers",
                params.entries.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, entry)) in self.layers.iter_mut().zip(&params.entries).enumerate() {
            match (layer.params_mut(), entry) {
                (None, None) => {}
                (Some((w, b)), Some(pair)) => {
                    if w.shape() != pair.weight.shape() || b.shape() != pair.bias.shape() {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i}: parameter shapes do not match"
                        )));
                    }
                    *w = pair.weight.clone();
                    *b = pair.bias.clone();
                }
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: parameter presence does not match"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Forward pass over a batch, recording every activation.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Trace<T>> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != *self.input_shape
        {
            return Err(Error::ShapeMismatch(format!(
                "batch shape {:?} does not match network input {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for layer in &self.layers {
            let out = layer.forward(activations.last().expect("non-empty"))?;
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    /// Validates that a trace was produced by a forward pass on this network.
    fn check_trace(&self, trace: &Trace<T>) -> Result<()> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "trace has {} activations, expected {}",
                trace.activations.len(),
                self.layers.len() + 1
            )));
        }
        if trace.activations[0].shape()[1..] != self.input_shape {
            return Err(Error::ShapeMismatch(
                "trace input does not match network input shape".into(),
            ));
        }
        Ok(())
    }

    /// Backward pass from a recorded trace.
    ///
    /// A head network takes `LossTarget::Labels`; a headless network takes
    /// `LossTarget::Upstream` (the gradient flowing in across a cut).
    /// Returns gradients for every parameter plus the gradient with respect
    /// to the network input.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        target: LossTarget<'_, T>,
    ) -> Result<(GradientSet<T>, Tensor<T>)> {
        self.check_trace(trace)?;
        let (mut upstream, skip_last) = match target {
            LossTarget::Labels(labels) => {
                if !self.has_head() {
                    return Err(Error::InvalidConfig(
                        "labels supplied but network has no loss head".into(),
                    ));
                }
                // trace[L] holds the logits (the head is the identity on them).
                (softmax_xent_grad(trace.output(), labels)?, true)
            }
            LossTarget::Upstream(grad) => {
                if self.has_head() {
                    return Err(Error::InvalidConfig(
                        "upstream gradient supplied but network ends in a loss head".into(),
                    ));
                }
                if grad.shape() != trace.output().shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "upstream gradient shape {:?} vs network output {:?}",
                        grad.shape(),
                        trace.output().shape()
                    )));
                }
                (grad.clone(), false)
            }
        };

        let mut entries = vec![None; self.layers.len()];
        let last = if skip_last {
            self.layers.len() - 1
        } else {
            self.layers.len()
        };
        for i in (0..last).rev() {
            let (grads, dx) = self.layers[i].backward(
                &trace.activations[i],
                &trace.activations[i + 1],
                &upstream,
            )?;
            entries[i] = grads.map(|(weight, bias)| ParamPair { weight, bias });
            upstream = dx;
        }
        Ok((GradientSet { entries }, upstream))
    }

    /// Plain SGD: every parameter moves by `-eta * gradient`, element-wise.
    pub fn sgd_step(&mut self, grads: &GradientSet<T>, eta: T) -> Result<()> {
        if grads.entries.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "gradient set has {} entries, network has {} layers",
                grads.entries.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, entry)) in self.layers.iter_mut().zip(&grads.entries).enumerate() {
            match (layer.params_mut(), entry) {
                (None, None) => {}
                (Some((w, b)), Some(g)) => {
                    if w.shape() != g.weight.shape() || b.shape() != g.bias.shape() {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {i}: gradient shapes do not match parameters"
                        )));
                    }
                    for (p, &d) in w.data_mut().iter_mut().zip(g.weight.data()) {
                        *p -= eta * d;
                    }
                    for (p, &d) in b.data_mut().iter_mut().zip(g.bias.data()) {
                        *p -= eta * d;
                    }
                }
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "layer {i}: gradient presence does not match parameters"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Loss and accuracy of this (head-terminated) network on a batch.
    pub fn evaluate_batch(&self, features: &Tensor<T>, labels: &Tensor<T>) -> Result<(T, T)> {
        let trace = self.forward(features)?;
        loss_and_accuracy(trace.output(), labels)
    }
}
