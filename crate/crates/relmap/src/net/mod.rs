//! Layer definitions, forward inference with recorded per-layer activations,
//! and bit-exact weight/image file I/O.

pub mod layers;
pub mod nnwb;
pub mod pgm;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{reduce_argmax, TensorBase};
use crate::Tensor;
pub use layers::{conv2d_forward, maxpool2x2_forward, relu, softmax, Padding};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d {
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    MaxPool2x2,
    Relu,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

fn default_stride() -> usize {
    1
}
fn default_padding() -> Padding {
    Padding::Valid
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Conv2d { .. } | LayerKind::Dense { .. })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// An immutable network: ordered layers plus their parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub layers: Vec<LayerSpec>,
    pub params: BTreeMap<String, (Tensor, Tensor)>,
    pub input_shape: (usize, usize, usize),
    pub class_labels: Vec<String>,
}

/// Recorded activations for one forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub name: String,
    pub input: Tensor,
    pub output: Tensor,
    /// Winner flat indices for MaxPool2x2 layers, in output flat order.
    pub winners: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub steps: Vec<LayerTrace>,
    pub logits: Tensor,
    pub predicted_class: usize,
}

/// Shape of a value flowing between layers: spatial `H x W x C` or flat `N`.
fn layer_output_shape(kind: &LayerKind, input: &[usize]) -> Result<Vec<usize>> {
    match kind {
        LayerKind::Conv2d {
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            stride,
            padding,
        } => {
            if input.len() != 3 || input[2] != *in_channels {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d expects H x W x {in_channels} input, got {input:?}"
                )));
            }
            let (oh, ow, _, _) =
                layers::conv_geometry(input[0], input[1], *kernel_h, *kernel_w, *stride, *padding)?;
            Ok(vec![oh, ow, *out_channels])
        }
        LayerKind::MaxPool2x2 => {
            if input.len() != 3 {
                return Err(Error::ShapeMismatch(format!(
                    "maxpool expects rank-3 input, got {input:?}"
                )));
            }
            Ok(vec![input[0].div_ceil(2), input[1].div_ceil(2), input[2]])
        }
        LayerKind::Relu => Ok(input.to_vec()),
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::Dense {
            in_features,
            out_features,
        } => {
            if input != [*in_features] {
                return Err(Error::ShapeMismatch(format!(
                    "dense expects flat input of {in_features}, got {input:?}"
                )));
            }
            Ok(vec![*out_features])
        }
        LayerKind::Softmax => {
            if input.len() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "softmax expects rank-1 input, got {input:?}"
                )));
            }
            Ok(input.to_vec())
        }
    }
}

impl NetworkModel {
    /// Checks the shape chain, parameter shapes, and the Dense+Softmax tail.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::InvalidInput(
                "model needs at least a Dense and a Softmax layer".into(),
            ));
        }
        let n = self.layers.len();
        if !matches!(self.layers[n - 1].kind, LayerKind::Softmax) {
            return Err(Error::InvalidInput("final layer must be Softmax".into()));
        }
        let out_features = match self.layers[n - 2].kind {
            LayerKind::Dense { out_features, .. } => out_features,
            _ => {
                return Err(Error::InvalidInput(
                    "Softmax must be preceded by a Dense layer".into(),
                ))
            }
        };
        if self.class_labels.len() != out_features {
            return Err(Error::InvalidInput(format!(
                "{} class labels but final Dense has {out_features} outputs",
                self.class_labels.len()
            )));
        }

        let mut shape = vec![self.input_shape.0, self.input_shape.1, self.input_shape.2];
        let mut seen = std::collections::BTreeSet::new();
        for layer in &self.layers {
            if !seen.insert(layer.name.clone()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate layer name '{}'",
                    layer.name
                )));
            }
            shape = layer_output_shape(&layer.kind, &shape).map_err(|e| {
                Error::ShapeMismatch(format!("layer '{}': {e}", layer.name))
            })?;
            match &layer.kind {
                LayerKind::Conv2d {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    ..
                } => {
                    let (w, b) = self.layer_params(&layer.name)?;
                    let expect = [*kernel_h, *kernel_w, *in_channels, *out_channels];
                    if w.shape() != expect {
                        return Err(Error::ShapeMismatch(format!(
                            "layer '{}': weight shape {:?} != declared {expect:?}",
                            layer.name,
                            w.shape()
                        )));
                    }
                    if b.shape() != [*out_channels] {
                        return Err(Error::ShapeMismatch(format!(
                            "layer '{}': bias shape {:?} != [{out_channels}]",
                            layer.name,
                            b.shape()
                        )));
                    }
                }
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let (w, b) = self.layer_params(&layer.name)?;
                    if w.shape() != [*out_features, *in_features] {
                        return Err(Error::ShapeMismatch(format!(
                            "layer '{}': weight shape {:?} != [{out_features}, {in_features}]",
                            layer.name,
                            w.shape()
                        )));
                    }
                    if b.shape() != [*out_features] {
                        return Err(Error::ShapeMismatch(format!(
                            "layer '{}': bias shape {:?} != [{out_features}]",
                            layer.name,
                            b.shape()
                        )));
                    }
                }
                _ => {
                    if self.params.contains_key(&layer.name) {
                        return Err(Error::InvalidInput(format!(
                            "layer '{}' has no parameters but params were supplied",
                            layer.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn layer_params(&self, name: &str) -> Result<(&Tensor, &Tensor)> {
        self.params
            .get(name)
            .map(|(w, b)| (w, b))
            .ok_or_else(|| Error::InvalidInput(format!("missing parameters for layer '{name}'")))
    }

    /// Name of the final Dense (readout) layer.
    pub fn readout_name(&self) -> &str {
        &self.layers[self.layers.len() - 2].name
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }
}

/// Runs the full forward pass, recording every layer's input and output.
pub fn forward(model: &NetworkModel, image: &Tensor) -> Result<ActivationTrace> {
    let expect = [model.input_shape.0, model.input_shape.1, model.input_shape.2];
    if image.shape() != expect {
        return Err(Error::ShapeMismatch(format!(
            "image shape {:?} != model input shape {expect:?}",
            image.shape()
        )));
    }
    let mut current = image.clone();
    let mut steps = Vec::with_capacity(model.layers.len());
    let mut logits: Option<Tensor> = None;
    for layer in &model.layers {
        let input = current.clone();
        let mut winners = None;
        let output = match &layer.kind {
            LayerKind::Conv2d { stride, padding, .. } => {
                let (w, b) = model.layer_params(&layer.name)?;
                conv2d_forward(&input, w, b, *stride, *padding)
            }
            LayerKind::MaxPool2x2 => maxpool2x2_forward(&input).map(|(out, win)| {
                winners = Some(win);
                out
            }),
            LayerKind::Relu => Ok(relu(&input)),
            LayerKind::Flatten => input.reshape(vec![input.len()]),
            LayerKind::Dense { .. } => {
                let (w, b) = model.layer_params(&layer.name)?;
                crate::tensor::matvec(w, &input).and_then(|z| {
                    crate::tensor::elementwise(crate::tensor::ElementwiseOp::Add, &z, b)
                })
            }
            LayerKind::Softmax => {
                logits = Some(input.clone());
                Ok(softmax(&input))
            }
        }
        .map_err(|e| Error::ShapeMismatch(format!("layer '{}': {e}", layer.name)))?;
        current = output.clone();
        steps.push(LayerTrace {
            name: layer.name.clone(),
            input,
            output,
            winners,
        });
    }
    let logits = logits.ok_or_else(|| Error::InvalidInput("model has no Softmax layer".into()))?;
    let predicted_class = reduce_argmax(&logits);
    Ok(ActivationTrace {
        steps,
        logits,
        predicted_class,
    })
}

/// Subtracts per-channel means from a raw image.
pub fn preprocess(image: &Tensor, channel_means: &Tensor) -> Result<Tensor> {
    if image.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "preprocess expects H x W x C, got {:?}",
            image.shape()
        )));
    }
    let c = image.shape()[2];
    if channel_means.len() != c {
        return Err(Error::InvalidInput(format!(
            "mean vector has {} entries but image has {c} channels",
            channel_means.len()
        )));
    }
    let means = channel_means.data();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| x - means[i % c])
        .collect();
    TensorBase::new(image.shape().to_vec(), data)
}
