//! Stock architectures for the simulator.

use crate::layer::LayerSpec;
use crate::network::NetSpec;

/// The small convolutional classifier used for image-shaped data:
/// conv2d(1->8, 3x3) -> relu -> flatten -> dense->64 -> relu ->
/// dense->classes -> softmax head. Seven layers, so interior cuts
/// k in 2..=6 are valid.
pub fn conv_classifier(height: usize, width: usize, classes: usize) -> NetSpec {
    let flat = 8 * (height - 2) * (width - 2);
    NetSpec::new(
        vec![1, height, width],
        vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 8,
                kernel_h: 3,
                kernel_w: 3,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: flat,
                outputs: 64,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 64,
                outputs: classes,
            },
            LayerSpec::SoftmaxCrossEntropy { classes },
        ],
    )
}

/// Cut after the flatten layer: the narrowest smashed width of the conv
/// classifier.
pub const CONV_CLASSIFIER_CUT: usize = 3;

/// A small dense classifier for flat feature vectors:
/// dense->hidden -> relu -> dense->classes -> softmax head.
pub fn mlp_classifier(inputs: usize, hidden: usize, classes: usize) -> NetSpec {
    NetSpec::new(
        vec![inputs],
        vec![
            LayerSpec::Dense {
                inputs,
                outputs: hidden,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: hidden,
                outputs: classes,
            },
            LayerSpec::SoftmaxCrossEntropy { classes },
        ],
    )
}

/// Cut after the first relu of the MLP classifier.
pub const MLP_CLASSIFIER_CUT: usize = 2;
