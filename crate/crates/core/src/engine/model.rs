//! Model description: layer specs, activation shapes, validation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Shape of one sample's activations: channels x height x width.
/// Flat feature vectors are `c x 1 x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Self {
        Shape { c: n, h: 1, w: 1 }
    }

    pub fn chw(c: usize, h: usize, w: usize) -> Self {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    /// Fused softmax + cross-entropy loss head; must be the terminal layer.
    SoftmaxLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// Normalizes per channel over batch and spatial positions.
    BatchNorm {
        features: usize,
    },
    Activation {
        kind: Activation,
    },
    /// Non-overlapping max pooling (stride = size).
    Pool2d {
        size: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::BatchNorm { .. }
        )
    }
}

/// A full model: the sample input shape plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Validate shape compatibility and compute per-layer boundaries:
    /// `boundaries[i]` is the input shape of layer `i`, `boundaries[len]`
    /// the network output (logits) shape.
    pub fn boundaries(&self) -> Result<Vec<Shape>> {
        let bad = |layer: usize, message: String| Error::BadModelSpec { layer, message };
        if self.layers.is_empty() {
            return Err(bad(0, "model has no layers".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len() + 1);
        let mut cur = self.input;
        if cur.is_empty() {
            return Err(bad(0, "input shape has zero elements".into()));
        }
        shapes.push(cur);
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match *layer {
                LayerSpec::Dense { inputs, outputs } => {
                    if inputs == 0 || outputs == 0 {
                        return Err(bad(i, "dense layer with zero width".into()));
                    }
                    if cur.len() != inputs {
                        return Err(bad(
                            i,
                            format!("dense expects {inputs} inputs, got {}", cur.len()),
                        ));
                    }
                    Shape::flat(outputs)
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad(i, "conv layer with zero-sized parameter".into()));
                    }
                    if cur.c != in_channels {
                        return Err(bad(
                            i,
                            format!("conv expects {in_channels} channels, got {}", cur.c),
                        ));
                    }
                    if cur.h < kernel || cur.w < kernel {
                        return Err(bad(
                            i,
                            format!(
                                "conv kernel {kernel} larger than input {}x{}",
                                cur.h, cur.w
                            ),
                        ));
                    }
                    Shape::chw(
                        out_channels,
                        (cur.h - kernel) / stride + 1,
                        (cur.w - kernel) / stride + 1,
                    )
                }
                LayerSpec::BatchNorm { features } => {
                    if cur.c != features {
                        return Err(bad(
                            i,
                            format!("batch norm expects {features} channels, got {}", cur.c),
                        ));
                    }
                    cur
                }
                LayerSpec::Activation { kind } => {
                    if kind == Activation::SoftmaxLoss {
                        if i + 1 != self.layers.len() {
                            return Err(bad(i, "loss head must be the terminal layer".into()));
                        }
                        if cur.h != 1 || cur.w != 1 {
                            return Err(bad(
                                i,
                                "loss head expects flat logits; add a Flatten layer".into(),
                            ));
                        }
                        if cur.c < 2 {
                            return Err(bad(i, "loss head needs at least 2 classes".into()));
                        }
                    }
                    cur
                }
                LayerSpec::Pool2d { size } => {
                    if size == 0 {
                        return Err(bad(i, "pool size must be positive".into()));
                    }
                    if cur.h < size || cur.w < size {
                        return Err(bad(
                            i,
                            format!("pool window {size} larger than input {}x{}", cur.h, cur.w),
                        ));
                    }
                    Shape::chw(cur.c, cur.h / size, cur.w / size)
                }
                LayerSpec::Flatten => Shape::flat(cur.len()),
            };
            shapes.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec::Activation {
                kind: Activation::SoftmaxLoss,
            }) => {}
            _ => {
                return Err(bad(
                    self.layers.len() - 1,
                    "model must end in a softmax loss head".into(),
                ));
            }
        }
        let heads = self
            .layers
            .iter()
            .filter(|l| {
                matches!(
                    l,
                    LayerSpec::Activation {
                        kind: Activation::SoftmaxLoss
                    }
                )
            })
            .count();
        if heads != 1 {
            return Err(bad(0, format!("model has {heads} loss heads, wants 1")));
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> Result<usize> {
        let b = self.boundaries()?;
        Ok(b[b.len() - 1].c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp(widths: &[usize]) -> ModelSpec {
        let mut layers = Vec::new();
        for pair in widths.windows(2) {
            layers.push(LayerSpec::Dense {
                inputs: pair[0],
                outputs: pair[1],
            });
            layers.push(LayerSpec::Activation {
                kind: Activation::Relu,
            });
        }
        layers.pop();
        layers.push(LayerSpec::Activation {
            kind: Activation::SoftmaxLoss,
        });
        ModelSpec {
            input: Shape::flat(widths[0]),
            layers,
        }
    }

    #[test]
    fn shape_inference_through_conv_stack() {
        let spec = ModelSpec {
            input: Shape::chw(1, 10, 10),
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 8,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Pool2d { size: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: 8 * 4 * 4,
                    outputs: 3,
                },
                LayerSpec::Activation {
                    kind: Activation::SoftmaxLoss,
                },
            ],
        };
        let b = spec.boundaries().unwrap();
        assert_eq!(b[1], Shape::chw(8, 8, 8));
        assert_eq!(b[2], Shape::chw(8, 4, 4));
        assert_eq!(b[3], Shape::flat(128));
        assert_eq!(spec.num_classes().unwrap(), 3);
    }

    #[test]
    fn mismatched_dense_width_names_the_layer() {
        let mut spec = mlp(&[4, 5, 3]);
        spec.layers[2] = LayerSpec::Dense {
            inputs: 9,
            outputs: 3,
        };
        match spec.boundaries() {
            Err(Error::BadModelSpec { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected BadModelSpec, got {other:?}"),
        }
    }

    #[test]
    fn requires_exactly_one_terminal_loss_head() {
        let mut spec = mlp(&[4, 3]);
        spec.layers.pop();
        assert!(spec.boundaries().is_err());

        let mut two_heads = mlp(&[4, 5, 3]);
        two_heads.layers[1] = LayerSpec::Activation {
            kind: Activation::SoftmaxLoss,
        };
        assert!(two_heads.boundaries().is_err());
    }
}
