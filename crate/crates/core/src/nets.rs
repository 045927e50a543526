//! Encoder and projection-head recipes built on the diff engine.

use serde::{Deserialize, Serialize};

use crate::diffengine::{forward, Graph, Init, NodeId, ParamInit, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ENCODER_PREFIX: &str = "enc.";
pub const HEAD_PREFIX: &str = "proj.";
pub const CRITIC_PREFIX: &str = "critic.";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum EncoderArch {
    /// Stride-2 conv blocks with relu, then global average pooling.
    SmallConv {
        in_channels: usize,
        image_size: usize,
        channels: Vec<usize>,
        kernel: usize,
    },
    /// Flattened pixels through relu hidden layers; the last width is the output.
    Mlp {
        in_channels: usize,
        image_size: usize,
        widths: Vec<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderRecipe {
    SmallConv,
    Mlp,
}

impl EncoderArch {
    pub fn from_recipe(recipe: EncoderRecipe, image_size: usize, repr_dim: usize) -> Self {
        match recipe {
            EncoderRecipe::SmallConv => EncoderArch::SmallConv {
                in_channels: 3,
                image_size,
                channels: vec![16, 32, repr_dim],
                kernel: 3,
            },
            EncoderRecipe::Mlp => EncoderArch::Mlp {
                in_channels: 3,
                image_size,
                widths: vec![256, repr_dim],
            },
        }
    }

    pub fn repr_dim(&self) -> usize {
        match self {
            EncoderArch::SmallConv { channels, .. } => *channels.last().unwrap_or(&0),
            EncoderArch::Mlp { widths, .. } => *widths.last().unwrap_or(&0),
        }
    }

    pub fn image_size(&self) -> usize {
        match self {
            EncoderArch::SmallConv { image_size, .. } | EncoderArch::Mlp { image_size, .. } => *image_size,
        }
    }

    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        match self {
            EncoderArch::SmallConv {
                in_channels,
                image_size,
                ..
            }
            | EncoderArch::Mlp {
                in_channels,
                image_size,
                ..
            } => vec![batch, *in_channels, *image_size, *image_size],
        }
    }

    pub fn init(&self, init: &mut ParamInit) -> Result<()> {
        match self {
            EncoderArch::SmallConv {
                in_channels,
                channels,
                kernel,
                ..
            } => {
                let mut c_in = *in_channels;
                for (i, &c) in channels.iter().enumerate() {
                    init.add(
                        &format!("{ENCODER_PREFIX}conv{i}.w"),
                        &[c, c_in, *kernel, *kernel],
                        Init::HeUniform,
                    )?;
                    init.add(&format!("{ENCODER_PREFIX}conv{i}.b"), &[c], Init::Zeros)?;
                    c_in = c;
                }
            }
            EncoderArch::Mlp {
                in_channels,
                image_size,
                widths,
            } => {
                let mut d_in = in_channels * image_size * image_size;
                for (i, &w) in widths.iter().enumerate() {
                    // the final layer also feeds a relu (representations are post-activation)
                    init.add(&format!("{ENCODER_PREFIX}fc{i}.w"), &[w, d_in], Init::HeUniform)?;
                    init.add(&format!("{ENCODER_PREFIX}fc{i}.b"), &[w], Init::Zeros)?;
                    d_in = w;
                }
            }
        }
        Ok(())
    }

    /// Appends the encoder to `g`; returns the `[N, repr_dim]` representation node.
    pub fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            EncoderArch::SmallConv {
                in_channels,
                channels,
                kernel,
                ..
            } => {
                let mut h = x;
                let mut c_in = *in_channels;
                for (i, &c) in channels.iter().enumerate() {
                    let w = g.param(&format!("{ENCODER_PREFIX}conv{i}.w"), &[c, c_in, *kernel, *kernel])?;
                    let b = g.param(&format!("{ENCODER_PREFIX}conv{i}.b"), &[c])?;
                    let conv = g.conv2d(h, w, b, 2)?;
                    h = g.relu(conv)?;
                    c_in = c;
                }
                g.global_avg_pool(h)
            }
            EncoderArch::Mlp {
                in_channels,
                image_size,
                widths,
            } => {
                let mut h = g.flatten(x)?;
                let mut d_in = in_channels * image_size * image_size;
                for (i, &w) in widths.iter().enumerate() {
                    let wn = g.param(&format!("{ENCODER_PREFIX}fc{i}.w"), &[w, d_in])?;
                    let bn = g.param(&format!("{ENCODER_PREFIX}fc{i}.b"), &[w])?;
                    let a = g.affine(h, wn, bn)?;
                    h = g.relu(a)?;
                    d_in = w;
                }
                Ok(h)
            }
        }
    }
}

/// Two-layer MLP `in -> hidden (relu) -> out`, l2-normalized output.
///
/// Used both as the projection head and, freshly initialized, as the critic.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadArch {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl HeadArch {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    pub fn init(&self, init: &mut ParamInit, prefix: &str) -> Result<()> {
        init.add(
            &format!("{prefix}fc0.w"),
            &[self.hidden_dim, self.input_dim],
            Init::HeUniform,
        )?;
        init.add(&format!("{prefix}fc0.b"), &[self.hidden_dim], Init::Zeros)?;
        init.add(
            &format!("{prefix}fc1.w"),
            &[self.output_dim, self.hidden_dim],
            Init::LecunUniform,
        )?;
        init.add(&format!("{prefix}fc1.b"), &[self.output_dim], Init::Zeros)
    }

    /// Appends the head; returns the normalized `[N, output_dim]` node.
    pub fn build(&self, g: &mut Graph, h: NodeId, prefix: &str) -> Result<NodeId> {
        let w0 = g.param(&format!("{prefix}fc0.w"), &[self.hidden_dim, self.input_dim])?;
        let b0 = g.param(&format!("{prefix}fc0.b"), &[self.hidden_dim])?;
        let w1 = g.param(&format!("{prefix}fc1.w"), &[self.output_dim, self.hidden_dim])?;
        let b1 = g.param(&format!("{prefix}fc1.b"), &[self.output_dim])?;
        let a = g.affine(h, w0, b0)?;
        let a = g.relu(a)?;
        let z = g.affine(a, w1, b1)?;
        g.l2_normalize(z)
    }
}

/// Encoder plus projection head, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: EncoderArch,
    pub head: HeadArch,
}

impl Architecture {
    pub fn new(recipe: EncoderRecipe, image_size: usize, repr_dim: usize, proj_dim: usize) -> Self {
        Self {
            encoder: EncoderArch::from_recipe(recipe, image_size, repr_dim),
            head: HeadArch::new(repr_dim, repr_dim, proj_dim),
        }
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet<f32>> {
        let mut init = ParamInit::new(seed);
        self.encoder.init(&mut init)?;
        self.head.init(&mut init, HEAD_PREFIX)?;
        Ok(init.finish())
    }
}

/// Forward-only encoder over a stack of images, in fixed-size chunks.
pub struct EncoderRunner<'a> {
    arch: &'a EncoderArch,
    params: &'a ParamSet<f32>,
    chunk: usize,
    graph: Graph,
}

impl<'a> EncoderRunner<'a> {
    pub fn new(arch: &'a EncoderArch, params: &'a ParamSet<f32>, chunk: usize) -> Result<Self> {
        let graph = Self::graph_for(arch, chunk)?;
        Ok(Self {
            arch,
            params,
            chunk,
            graph,
        })
    }

    fn graph_for(arch: &EncoderArch, batch: usize) -> Result<Graph> {
        let mut g = Graph::new();
        let x = g.input(&arch.input_shape(batch));
        let h = arch.build(&mut g, x)?;
        g.add_output(h);
        Ok(g)
    }

    /// Encodes `images` (`[N, C, H, W]`) into `[N, repr_dim]`.
    pub fn encode(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        let expect = self.arch.input_shape(images.rows());
        if images.shape() != expect.as_slice() {
            return Err(Error::Shape(format!(
                "encoder expects {:?}, got {:?}",
                expect,
                images.shape()
            )));
        }
        let n = images.rows();
        let d = self.arch.repr_dim();
        let per = images.row_len();
        let mut out = Vec::with_capacity(n * d);
        let mut start = 0;
        while start < n {
            let take = (n - start).min(self.chunk);
            let mut shape = expect.clone();
            shape[0] = take;
            let chunk = Tensor::new(shape, images.data()[start * per..(start + take) * per].to_vec())?;
            let ev = if take == self.chunk {
                forward(&self.graph, self.params, &[&chunk])?
            } else {
                let g = Self::graph_for(self.arch, take)?;
                forward(&g, self.params, &[&chunk])?
            };
            out.extend_from_slice(ev.outputs[0].data());
            start += take;
        }
        Tensor::new(vec![n, d], out)
    }
}
