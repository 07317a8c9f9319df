use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// Weight stored as `[outputs, inputs]`.
    Dense { inputs: usize, outputs: usize },
    /// 3x3 kernel, unit stride, padding 1. Weight `[out, in, 3, 3]`.
    Conv3x3 { in_channels: usize, out_channels: usize },
    Relu,
    AvgPool2,
    Flatten,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv3x3 { .. })
    }

    /// Shapes of (weight, bias) for parameterized layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
            Layer::Conv3x3 {
                in_channels,
                out_channels,
            } => Some((vec![out_channels, in_channels, 3, 3], vec![out_channels])),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv3x3 { in_channels, .. } => in_channels * 9,
            _ => 0,
        }
    }
}

/// Architecture of a classifier trained with mean softmax cross-entropy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-example input shape: `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub classes: usize,
}

impl ModelSpec {
    /// `[inputs -> hidden -> classes]` with a ReLU in between.
    pub fn mlp(inputs: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input_shape: vec![inputs],
            layers: vec![
                Layer::Dense {
                    inputs,
                    outputs: hidden,
                },
                Layer::Relu,
                Layer::Dense {
                    inputs: hidden,
                    outputs: classes,
                },
            ],
            classes,
        }
    }

    /// Two conv/ReLU/pool blocks and a linear classifier, for single-channel
    /// `side x side` images.
    pub fn convnet(side: usize, channels: usize, classes: usize) -> Self {
        let pooled = side / 2 / 2;
        Self {
            input_shape: vec![1, side, side],
            layers: vec![
                Layer::Conv3x3 {
                    in_channels: 1,
                    out_channels: channels,
                },
                Layer::Relu,
                Layer::AvgPool2,
                Layer::Conv3x3 {
                    in_channels: channels,
                    out_channels: channels,
                },
                Layer::Relu,
                Layer::AvgPool2,
                Layer::Flatten,
                Layer::Dense {
                    inputs: channels * pooled * pooled,
                    outputs: classes,
                },
            ],
            classes,
        }
    }

    /// Checks that adjacent extents agree and the output has `classes` units.
    pub fn validate(&self) -> Result<()> {
        if !self.layers.iter().any(Layer::has_params) {
            return Err(Error::ModelSpec("no parameterized layer".into()));
        }
        if self.classes < 2 {
            return Err(Error::ModelSpec("need at least two classes".into()));
        }
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Err(Error::ModelSpec(format!("layer {i}: {msg}")));
            shape = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if shape != [inputs] {
                        return bad(format!("dense expects [{inputs}], got {shape:?}"));
                    }
                    vec![outputs]
                }
                Layer::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return bad(format!("conv expects {in_channels} channels, got {shape:?}"));
                    }
                    vec![out_channels, shape[1], shape[2]]
                }
                Layer::Relu => shape,
                Layer::AvgPool2 => {
                    if shape.len() != 3 || shape[1] < 2 || shape[2] < 2 {
                        return bad(format!("cannot pool {shape:?}"));
                    }
                    vec![shape[0], shape[1] / 2, shape[2] / 2]
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
        }
        if shape != [self.classes] {
            return Err(Error::ModelSpec(format!(
                "output shape {shape:?} does not match {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .filter_map(Layer::param_shapes)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn example_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Records the forward pass for a batch `x` of shape `[n, input_shape..]`
    /// and returns the logits `[n, classes]`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        let mut p = params.iter();
        let mut next = || p.next().copied().ok_or_else(|| Error::Layout("too few parameters".into()));
        for layer in &self.layers {
            h = match layer {
                Layer::Dense { .. } => {
                    let (w, b) = (next()?, next()?);
                    let wt = g.transpose(w)?;
                    g.dense(h, wt, b)?
                }
                Layer::Conv3x3 { .. } => {
                    let (w, b) = (next()?, next()?);
                    let y = g.conv2d(h, w)?;
                    let shape = g.shape(y).to_vec();
                    let bb = g.broadcast_channels(b, &shape)?;
                    g.add(y, bb)?
                }
                Layer::Relu => g.relu(h)?,
                Layer::AvgPool2 => g.avg_pool2(h)?,
                Layer::Flatten => {
                    let s = g.shape(h);
                    let n = s[0];
                    let rest = s[1..].iter().product::<usize>();
                    g.reshape(h, &[n, rest])?
                }
            };
        }
        Ok(h)
    }
}
