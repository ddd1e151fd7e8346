//! Network architectures, parameter layout and initialization.
//!
//! A [`NetworkSpec`] is an immutable, validated list of layers. Trainable
//! parameters live in one flat [`ParamVector`] laid out layer by layer: for
//! each parameterized layer its weights (row-major) followed by its biases.
//!
//! - Dense weights are stored as `[inputs, outputs]`.
//! - Conv weights are stored as `[out_channels, in_channels, k_h, k_w]`.
//!
//! The network output is the softmax of the final Dense layer.

mod activation;
mod network;
mod params;

use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed;

pub use activation::Activation;
pub use network::{Evaluation, PROB_FLOOR};
pub use params::ParamVector;

/// Shape of the activations flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Flat(usize),
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Stride-1 convolution with symmetric zero padding.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        padding: usize,
        activation: Activation,
    },
    /// Non-overlapping max pooling (stride equals the window).
    MaxPool { pool_h: usize, pool_w: usize },
    Flatten,
}

impl Layer {
    fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense {
                inputs, outputs, ..
            } => inputs * outputs,
            Layer::Conv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                ..
            } => out_channels * in_channels * kernel_h * kernel_w,
            _ => 0,
        }
    }

    fn bias_count(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv { out_channels, .. } => out_channels,
            _ => 0,
        }
    }
}

/// Where a layer's parameters sit inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub weights: std::ops::Range<usize>,
    pub biases: std::ops::Range<usize>,
}

impl ParamSlot {
    fn empty(at: usize) -> Self {
        Self {
            weights: at..at,
            biases: at..at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights ~ N(0, 1), biases zero.
    #[default]
    Standard,
    /// Weights ~ N(0, 0.01) (standard deviation 0.01), biases zero.
    CnnSmall,
}

impl InitScheme {
    pub fn weight_std(self) -> f64 {
        match self {
            InitScheme::Standard => 1.0,
            InitScheme::CnnSmall => 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    input: Shape,
    layers: Vec<Layer>,
    // Output shape of every layer, same length as `layers`.
    shapes: Vec<Shape>,
    slots: Vec<ParamSlot>,
    param_count: usize,
}

impl NetworkSpec {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::InvalidSpec("input shape is empty".into()));
        }
        match layers.last() {
            Some(Layer::Dense { .. }) => {}
            _ => {
                return Err(Error::InvalidSpec(
                    "the last layer must be Dense (it feeds the softmax)".into(),
                ))
            }
        }

        let mut shapes = Vec::with_capacity(layers.len());
        let mut slots = Vec::with_capacity(layers.len());
        let mut offset = 0;
        let mut current = input;

        for (i, layer) in layers.iter().enumerate() {
            let next = match (*layer, current) {
                (
                    Layer::Dense {
                        inputs, outputs, ..
                    },
                    Shape::Flat(n),
                ) => {
                    if inputs != n {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: Dense expects {inputs} inputs but receives {n}"
                        )));
                    }
                    if outputs == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: Dense has no outputs")));
                    }
                    Shape::Flat(outputs)
                }
                (Layer::Dense { .. }, Shape::Image { .. }) => {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: Dense after an image-shaped layer needs a Flatten first"
                    )))
                }
                (
                    Layer::Conv {
                        in_channels,
                        out_channels,
                        kernel_h,
                        kernel_w,
                        padding,
                        ..
                    },
                    Shape::Image {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if in_channels != channels {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: Conv expects {in_channels} channels but receives {channels}"
                        )));
                    }
                    if out_channels == 0 || kernel_h == 0 || kernel_w == 0 {
                        return Err(Error::InvalidSpec(format!("layer {i}: empty Conv")));
                    }
                    let (ph, pw) = (height + 2 * padding, width + 2 * padding);
                    if kernel_h > ph || kernel_w > pw {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: kernel {kernel_h}x{kernel_w} larger than padded input {ph}x{pw}"
                        )));
                    }
                    Shape::Image {
                        channels: out_channels,
                        height: ph - kernel_h + 1,
                        width: pw - kernel_w + 1,
                    }
                }
                (
                    Layer::MaxPool { pool_h, pool_w },
                    Shape::Image {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if pool_h == 0 || pool_w == 0 || pool_h > height || pool_w > width {
                        return Err(Error::InvalidSpec(format!(
                            "layer {i}: pool {pool_h}x{pool_w} does not fit {height}x{width}"
                        )));
                    }
                    Shape::Image {
                        channels,
                        height: height / pool_h,
                        width: width / pool_w,
                    }
                }
                (Layer::Flatten, s) => Shape::Flat(s.len()),
                (Layer::Conv { .. } | Layer::MaxPool { .. }, Shape::Flat(_)) => {
                    return Err(Error::InvalidSpec(format!(
                        "layer {i}: Conv/MaxPool needs an image-shaped input"
                    )))
                }
            };

            let (nw, nb) = (layer.weight_count(), layer.bias_count());
            if nw + nb == 0 {
                slots.push(ParamSlot::empty(offset));
            } else {
                slots.push(ParamSlot {
                    weights: offset..offset + nw,
                    biases: offset + nw..offset + nw + nb,
                });
            }
            offset += nw + nb;
            shapes.push(next);
            current = next;
        }

        Ok(Self {
            input,
            layers,
            shapes,
            slots,
            param_count: offset,
        })
    }

    /// Fully connected network with `sizes = [input, hidden.., classes]`,
    /// `hidden` activation on every hidden layer and identity logits.
    pub fn mlp(sizes: &[usize], hidden: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidSpec(
                "an MLP needs at least input and output sizes".into(),
            ));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::Dense {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last {
                    Activation::Identity
                } else {
                    hidden
                },
            })
            .collect();
        Self::new(Shape::Flat(sizes[0]), layers)
    }

    /// Two 3x3 convolutions (8 and 16 kernels, padding 1, ReLU), each
    /// followed by 2x2 max pooling, then a Dense layer to 10 classes.
    pub fn mnist_cnn() -> Self {
        let conv = |cin, cout| Layer::Conv {
            in_channels: cin,
            out_channels: cout,
            kernel_h: 3,
            kernel_w: 3,
            padding: 1,
            activation: Activation::Relu,
        };
        let pool = Layer::MaxPool {
            pool_h: 2,
            pool_w: 2,
        };
        Self::new(
            Shape::Image {
                channels: 1,
                height: 28,
                width: 28,
            },
            vec![
                conv(1, 8),
                pool,
                conv(8, 16),
                pool,
                Layer::Flatten,
                Layer::Dense {
                    inputs: 16 * 7 * 7,
                    outputs: 10,
                    activation: Activation::Identity,
                },
            ],
        )
        .expect("fixed CNN layout is valid")
    }

    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn n_classes(&self) -> usize {
        self.shapes.last().map(Shape::len).unwrap_or(0)
    }

    /// Index ranges of all weight (non-bias) parameters.
    pub fn weight_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.slots
            .iter()
            .map(|s| s.weights.clone())
            .filter(|r| !r.is_empty())
    }

    pub fn bias_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        self.slots
            .iter()
            .map(|s| s.biases.clone())
            .filter(|r| !r.is_empty())
    }

    /// Canonical textual description, stable across releases.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        match self.input {
            Shape::Flat(n) => write!(s, "in:flat:{n}"),
            Shape::Image {
                channels,
                height,
                width,
            } => write!(s, "in:image:{channels}x{height}x{width}"),
        }
        .unwrap();
        for layer in &self.layers {
            match *layer {
                Layer::Dense {
                    inputs,
                    outputs,
                    activation,
                } => write!(s, "|dense:{inputs}:{outputs}:{}", activation.name()),
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel_h,
                    kernel_w,
                    padding,
                    activation,
                } => write!(
                    s,
                    "|conv:{in_channels}:{out_channels}:{kernel_h}x{kernel_w}:p{padding}:{}",
                    activation.name()
                ),
                Layer::MaxPool { pool_h, pool_w } => write!(s, "|maxpool:{pool_h}x{pool_w}"),
                Layer::Flatten => write!(s, "|flatten"),
            }
            .unwrap();
        }
        s
    }

    /// First eight bytes (little-endian) of the SHA-256 of [`Self::canonical`].
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical().as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }

    pub fn init_params(&self, scheme: InitScheme, seed: u64) -> ParamVector {
        let mut rng = seed::rng(seed::derive(seed, &[seed::stream::INIT]));
        let normal = Normal::new(0.0, scheme.weight_std()).expect("positive std");
        let mut values = vec![0.0; self.param_count];
        for range in self.weight_ranges() {
            for v in &mut values[range] {
                *v = normal.sample(&mut rng);
            }
        }
        ParamVector::from(values)
    }

    pub(crate) fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, network needs {}",
                params.len(),
                self.param_count
            )));
        }
        Ok(())
    }
}
