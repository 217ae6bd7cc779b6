//! Cut-layer mechanics: partitioning a network into client and server
//! submodels, producing smashed activations, and relaying gradients back
//! across the cut.
//!
//! The cut is "after layer k" (1-based): the activation emitted by layer k
//! is the smashed layer. A valid cut is interior, 1 < k < L, so the loss
//! head always stays on the server side.

use crate::error::{Error, Result};
use crate::loss::loss_and_accuracy;
use crate::network::{GradientSet, LossTarget, Network, Trace};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cut-layer selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitSpec {
    /// The model is split after layer `k` (1-based).
    pub k: usize,
}

impl SplitSpec {
    pub fn new(k: usize) -> Self {
        Self { k }
    }

    pub fn validate(&self, layer_count: usize) -> Result<()> {
        if self.k <= 1 || self.k >= layer_count {
            return Err(Error::CutOutOfRange {
                k: self.k,
                layers: layer_count,
            });
        }
        Ok(())
    }
}

/// The two submodels produced by a cut. Concatenating `client` and `server`
/// layer lists reproduces the original network in order.
#[derive(Debug, Clone)]
pub struct SplitPair<T> {
    pub client: Network<T>,
    pub server: Network<T>,
}

impl<T: Scalar> SplitPair<T> {
    /// Rejoins the two halves into the original full network.
    pub fn reassemble(self) -> Result<Network<T>> {
        assemble_full(&self.client, &self.server)
    }
}

/// Splits a network after layer `k`. Parameters are moved, not copied, so
/// the client and server parameter counts sum to the original count.
pub fn split_network<T: Scalar>(net: Network<T>, spec: SplitSpec) -> Result<SplitPair<T>> {
    spec.validate(net.layer_count())?;
    let smashed_shape = {
        let shapes = net.spec().activation_shapes()?;
        shapes[spec.k].clone()
    };
    let (input_shape, mut layers, seed) = net.into_layers();
    let server_layers = layers.split_off(spec.k);
    let client = Network::from_layers(input_shape, layers, seed)?;
    let server = Network::from_layers(smashed_shape, server_layers, seed)?;
    Ok(SplitPair { client, server })
}

/// Clones client and server halves back into one full network.
pub fn assemble_full<T: Scalar>(client: &Network<T>, server: &Network<T>) -> Result<Network<T>> {
    let mut layers = client.layers().to_vec();
    layers.extend(server.layers().iter().cloned());
    Network::from_layers(client.input_shape().to_vec(), layers, client.rng_seed())
}

/// Smashed activations travelling from a VU to the server, with the labels
/// for server-side loss computation riding along.
#[derive(Debug, Clone)]
pub struct SmashedBatch<T> {
    pub activations: Tensor<T>,
    pub labels: Tensor<T>,
    pub vu_id: u32,
    /// Wire size of the activations (4 bytes per element). Label bytes are
    /// excluded from the smashed-size accounting.
    pub byte_size: u64,
}

/// Loss gradient with respect to a smashed batch, flowing server -> VU.
#[derive(Debug, Clone)]
pub struct CutGradient<T> {
    pub grad: Tensor<T>,
    pub vu_id: u32,
}

/// Everything the server produces from one smashed batch.
#[derive(Debug)]
pub struct ServerPass<T> {
    pub loss: T,
    pub accuracy: T,
    pub gradients: GradientSet<T>,
    pub cut_gradient: CutGradient<T>,
}

/// Runs the client submodel over a local batch, producing the smashed batch
/// for the server plus the trace needed for the later backward pass.
pub fn client_forward<T: Scalar>(
    client: &Network<T>,
    features: &Tensor<T>,
    labels: &Tensor<T>,
    vu_id: u32,
) -> Result<(SmashedBatch<T>, Trace<T>)> {
    if labels.rows() != features.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows vs {} labels",
            features.rows(),
            labels.rows()
        )));
    }
    let trace = client.forward(features)?;
    let activations = trace.output().clone();
    let byte_size = activations.len() as u64 * 4;
    Ok((
        SmashedBatch {
            activations,
            labels: labels.clone(),
            vu_id,
            byte_size,
        },
        trace,
    ))
}

/// Server-side forward and backward pass over one smashed batch: loss and
/// accuracy at the head, gradients for the server parameters, and the cut
/// gradient to send back to the VU.
pub fn server_forward_backward<T: Scalar>(
    server: &Network<T>,
    smashed: &SmashedBatch<T>,
) -> Result<ServerPass<T>> {
    let trace = server.forward(&smashed.activations)?;
    let (loss, accuracy) = loss_and_accuracy(trace.output(), &smashed.labels)?;
    let (gradients, input_grad) = server.backward(&trace, LossTarget::Labels(&smashed.labels))?;
    Ok(ServerPass {
        loss,
        accuracy,
        gradients,
        cut_gradient: CutGradient {
            grad: input_grad,
            vu_id: smashed.vu_id,
        },
    })
}

/// Completes the VU-side backward pass using the cut gradient from the
/// server, yielding the client parameter gradients.
pub fn client_backward<T: Scalar>(
    client: &Network<T>,
    trace: &Trace<T>,
    cut: &CutGradient<T>,
) -> Result<GradientSet<T>> {
    let (grads, _input_grad) = client.backward(trace, LossTarget::Upstream(&cut.grad))?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerSpec;
    use crate::network::{init_network, NetSpec};

    fn five_layer_spec() -> NetSpec {
        NetSpec::new(
            vec![4],
            vec![
                LayerSpec::Dense { inputs: 4, outputs: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 6, outputs: 3 },
                LayerSpec::Relu,
                LayerSpec::SoftmaxCrossEntropy { classes: 3 },
            ],
        )
    }

    #[test]
    fn split_at_k2_gives_two_and_three_layers() {
        let net: Network<f32> = init_network(&five_layer_spec(), 1).unwrap();
        let pair = split_network(net, SplitSpec::new(2)).unwrap();
        assert_eq!(pair.client.layer_count(), 2);
        assert_eq!(pair.server.layer_count(), 3);
        assert!(pair.server.has_head());
        assert!(!pair.client.has_head());
    }

    #[test]
    fn boundary_cuts_are_rejected() {
        for k in [0usize, 1, 5, 6] {
            let net: Network<f32> = init_network(&five_layer_spec(), 1).unwrap();
            let err = split_network(net, SplitSpec::new(k)).unwrap_err();
            assert!(
                err.to_string().contains("cut index out of interior range"),
                "k={k}: {err}"
            );
        }
    }

    #[test]
    fn param_counts_sum_at_every_legal_cut() {
        let full: Network<f32> = init_network(&five_layer_spec(), 1).unwrap();
        let total = full.param_count();
        for k in 2..5 {
            let pair = split_network(full.clone(), SplitSpec::new(k)).unwrap();
            assert_eq!(pair.client.param_count() + pair.server.param_count(), total);
            let rejoined = pair.reassemble().unwrap();
            assert!(rejoined.param_set().bit_eq(&full.param_set()));
        }
    }

    #[test]
    fn smashed_byte_size_counts_four_bytes_per_element() {
        let net: Network<f32> = init_network(&five_layer_spec(), 1).unwrap();
        let pair = split_network(net, SplitSpec::new(2)).unwrap();
        let features = Tensor::zeros(vec![5, 4]);
        let labels = Tensor::new(vec![5], vec![0.0f32; 5]).unwrap();
        let (smashed, _) = client_forward(&pair.client, &features, &labels, 0).unwrap();
        // batch 5 x cut width 6 activations.
        assert_eq!(smashed.byte_size, 4 * 5 * 6);
        assert_eq!(smashed.activations.rows(), smashed.labels.rows());
    }

    #[test]
    fn identity_client_passes_input_through() {
        // Relu-only client over non-negative input acts as the identity.
        let spec = NetSpec::new(
            vec![3],
            vec![
                LayerSpec::Relu,
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 3, outputs: 2 },
                LayerSpec::SoftmaxCrossEntropy { classes: 2 },
            ],
        );
        let net: Network<f32> = init_network(&spec, 3).unwrap();
        let pair = split_network(net, SplitSpec::new(2)).unwrap();
        let features = Tensor::new(vec![2, 3], vec![0.5, 1.0, 0.0, 2.0, 0.25, 3.0]).unwrap();
        let labels = Tensor::new(vec![2], vec![0.0f32, 1.0]).unwrap();
        let (smashed, _) = client_forward(&pair.client, &features, &labels, 7).unwrap();
        assert_eq!(smashed.activations.data(), features.data());
        assert_eq!(smashed.vu_id, 7);
    }

    #[test]
    fn server_pass_matches_scalar_hand_computation() {
        // One sample, two classes, cut directly before a dense(2->2) + head.
        let spec = NetSpec::new(
            vec![2],
            vec![
                LayerSpec::Relu,
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 2, outputs: 2 },
                LayerSpec::SoftmaxCrossEntropy { classes: 2 },
            ],
        );
        let net: Network<f64> = init_network(&spec, 11).unwrap();
        let pair = split_network(net, SplitSpec::new(2)).unwrap();

        let h = [0.4f64, 1.3];
        let smashed = SmashedBatch {
            activations: Tensor::new(vec![1, 2], h.to_vec()).unwrap(),
            labels: Tensor::new(vec![1], vec![1.0f64]).unwrap(),
            vu_id: 0,
            byte_size: 8,
        };
        let pass = server_forward_backward(&pair.server, &smashed).unwrap();

        // Scalar recomputation: z = W h + b, p = softmax(z), loss = -ln p[1].
        let params = pair.server.param_set();
        let dense = params.entries[0].as_ref().unwrap();
        let w = dense.weight.data();
        let b = dense.bias.data();
        let z = [
            w[0] * h[0] + w[1] * h[1] + b[0],
            w[2] * h[0] + w[3] * h[1] + b[1],
        ];
        let m = z[0].max(z[1]);
        let denom = (z[0] - m).exp() + (z[1] - m).exp();
        let p1 = (z[1] - m).exp() / denom;
        let expected_loss = (m + denom.ln()) - z[1];
        assert!((pass.loss - expected_loss).abs() < 1e-6);
        let expected_acc = if p1 > 0.5 { 1.0 } else { 0.0 };
        assert_eq!(pass.accuracy, expected_acc);

        // Cut gradient: dL/dh = W^T (p - onehot).
        let p0 = 1.0 - p1;
        let d = [p0, p1 - 1.0];
        let expect_dh = [w[0] * d[0] + w[2] * d[1], w[1] * d[0] + w[3] * d[1]];
        for (got, want) in pass.cut_gradient.grad.data().iter().zip(expect_dh) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        assert_eq!(
            pass.cut_gradient.grad.shape(),
            smashed.activations.shape()
        );
    }

    #[test]
    fn uniform_server_logits_give_ln_c() {
        let spec = five_layer_spec();
        let mut net: Network<f32> = init_network(&spec, 1).unwrap();
        // Zero the last dense layer so logits are uniform (all zero).
        let mut params = net.param_set();
        if let Some(p) = params.entries[2].as_mut() {
            p.weight = Tensor::zeros(p.weight.shape().to_vec());
            p.bias = Tensor::zeros(p.bias.shape().to_vec());
        }
        net.set_param_set(&params).unwrap();
        let pair = split_network(net, SplitSpec::new(2)).unwrap();
        let features = Tensor::zeros(vec![4, 4]);
        let labels = Tensor::new(vec![4], vec![0.0f32, 1.0, 2.0, 0.0]).unwrap();
        let (smashed, _) = client_forward(&pair.client, &features, &labels, 0).unwrap();
        let pass = server_forward_backward(&pair.server, &smashed).unwrap();
        assert!((pass.loss as f64 - 3.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn zero_cut_gradient_zeroes_client_gradients() {
        let net: Network<f32> = init_network(&five_layer_spec(), 1).unwrap();
        let pair = split_network(net, SplitSpec::new(2)).unwrap();
        let features = Tensor::new(vec![2, 4], vec![0.3; 8]).unwrap();
        let labels = Tensor::new(vec![2], vec![0.0f32, 1.0]).unwrap();
        let (smashed, trace) = client_forward(&pair.client, &features, &labels, 0).unwrap();
        let zero = CutGradient {
            grad: Tensor::zeros(smashed.activations.shape().to_vec()),
            vu_id: 0,
        };
        let grads = client_backward(&pair.client, &trace, &zero).unwrap();
        assert!(grads.is_zero());
    }

    #[test]
    fn cut_gradient_shape_matches_smashed_shape_for_all_cuts() {
        let full: Network<f32> = init_network(&five_layer_spec(), 2).unwrap();
        let features = Tensor::new(vec![3, 4], vec![0.1; 12]).unwrap();
        let labels = Tensor::new(vec![3], vec![0.0f32, 1.0, 2.0]).unwrap();
        for k in 2..5 {
            let pair = split_network(full.clone(), SplitSpec::new(k)).unwrap();
            let (smashed, _) = client_forward(&pair.client, &features, &labels, 0).unwrap();
            let pass = server_forward_backward(&pair.server, &smashed).unwrap();
            assert_eq!(pass.cut_gradient.grad.shape(), smashed.activations.shape());
        }
    }
}
