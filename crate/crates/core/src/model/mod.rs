//! The two-head waypoint network, its targets and losses, checkpoints and training.
//!
//! Backbone: a stride-2 stem convolution, `R` residual modules with channel
//! and spatial attention each followed by a stride-2 reduction, and one more
//! stride-2 block whose transposed-convolution upsampling is added back onto
//! its input. The net compression factor is `K = 2^(R+1)`.
//!
//! Heads read the backbone features at `(H/K) x (W/K)`: a 1x1 estimation head
//! giving `(p, dx, dy)` per cell, and a clustering head giving a `D`-dim
//! embedding per cell.

mod checkpoint;
mod loss;
mod net;
mod target;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{AutogradError, Scalar, Tensor};
use crate::rng::stream;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_with, read_checkpoint, read_checkpoint_with, save_checkpoint, save_checkpoint_with,
    write_checkpoint, write_checkpoint_with, FORMAT_VERSION, MAGIC,
};
pub use loss::{clustering_loss, clustering_loss_value, cosine_sim, estimation_loss, estimation_loss_value};
pub use net::{grid_tensor, Bound, Outputs};
pub use target::{build_target, decode_cell, TargetGrid};
pub use train::{train, EpochLoss, Phase, TrainConfig, TrainExample, TrainReport};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input {h}x{w} is not divisible by the compression factor {k}; pad the grid to a multiple of {k}")]
    Indivisible { h: usize, w: usize, k: usize },
    #[error("waypoint ({x}, {y}) lies outside the {w}x{h} grid")]
    OutOfBounds { x: f64, y: f64, w: usize, h: usize },
    #[error("waypoints {first} and {second} fall in the same cell ({row}, {col})")]
    SharedCell {
        first: usize,
        second: usize,
        row: usize,
        col: usize,
    },
    #[error("clustering loss needs at least two points from both clusters, got {a} A and {b} B")]
    SingleCluster { a: usize, b: usize },
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("bad checkpoint magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unknown tensor `{0}` in checkpoint")]
    UnknownTensor(String),
    #[error("missing tensor `{0}` in checkpoint")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("training needs at least one example")]
    EmptyDataset,
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Residual reduction modules.
    pub r: usize,
    /// Channel width.
    pub c: usize,
    pub kernel: usize,
    /// Latent dimensionality of the clustering head.
    pub d: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { r: 2, c: 16, kernel: 5, d: 3 }
    }
}

impl ModelConfig {
    /// Compression factor between the input grid and both output maps.
    pub fn k(&self) -> usize {
        1 << (self.r + 1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.r == 0 || self.r > 6 {
            return bad("residual module count must be in 1..=6");
        }
        if self.c < 2 {
            return bad("channel width must be at least 2");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("kernel size must be odd");
        }
        if self.d < 2 {
            return bad("latent dimensionality must be at least 2");
        }
        Ok(())
    }

    /// Names and shapes of every parameter: backbone, estimation head, clustering head.
    pub fn layout(&self) -> Vec<ParamSpec> {
        let (c, k, d) = (self.c, self.kernel, self.d);
        let hidden = (c / 2).max(1);
        let mut out = Vec::new();
        let bb = Group::Backbone;
        conv(&mut out, "stem", bb, k, 1, c);
        for i in 0..self.r {
            conv(&mut out, &format!("res{i}.conv"), bb, k, c, c);
            out.push((format!("res{i}.ca.w1"), bb, vec![c, hidden]));
            out.push((format!("res{i}.ca.b1"), bb, vec![hidden]));
            out.push((format!("res{i}.ca.w2"), bb, vec![hidden, c]));
            out.push((format!("res{i}.ca.b2"), bb, vec![c]));
            conv(&mut out, &format!("res{i}.sa"), bb, k, 2, 1);
            conv(&mut out, &format!("res{i}.down"), bb, k, c, c);
        }
        conv(&mut out, "bottom.down", bb, k, c, c);
        // transposed kernels are k x k x Cout x Cin
        conv(&mut out, "bottom.up", bb, k, c, c);
        conv(&mut out, "est.p", Group::Estimation, 1, c, 1);
        conv(&mut out, "est.d", Group::Estimation, 1, c, 2);
        conv(&mut out, "clu.c1", Group::Clustering, k, c, c);
        conv(&mut out, "clu.c2", Group::Clustering, k, c, c);
        conv(&mut out, "clu.out", Group::Clustering, 1, c, d);
        out
    }
}

pub type ParamSpec = (String, Group, Vec<usize>);

fn conv(out: &mut Vec<ParamSpec>, name: &str, group: Group, k: usize, cin: usize, cout: usize) {
    out.push((format!("{name}.w"), group, vec![k, k, cin, cout]));
    out.push((format!("{name}.b"), group, vec![cout]));
}

/// Which part of the network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Backbone,
    Estimation,
    Clustering,
}

/// Initial waypoint probability of every cell. Waypoint cells are a few
/// percent of all cells, so starting near that rate skips the early epochs
/// that would otherwise only push every confidence down.
pub const CONFIDENCE_PRIOR: f64 = 0.02;

/// Parameters in [`ModelConfig::layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub groups: Vec<Group>,
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Fan-in scaled uniform weights, zero biases except the confidence bias,
    /// which starts at the log-odds of [`CONFIDENCE_PRIOR`].
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut names = Vec::new();
        let mut groups = Vec::new();
        let mut params = Vec::new();
        for (i, (name, group, shape)) in config.layout().into_iter().enumerate() {
            let t = if name == "est.p.b" {
                let p = CONFIDENCE_PRIOR;
                Tensor::full(&shape, T::lit((p / (1.0 - p)).ln()))
            } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = shape[..shape.len() - 1].iter().product();
                let bound = (3.0 / fan_in as f64).sqrt();
                let mut rng = stream(seed, "init", i as u64);
                Tensor::from_fn(&shape, |_| T::lit(rng.random_range(-bound..bound)))
            };
            names.push(name);
            groups.push(group);
            params.push(t);
        }
        Ok(Self {
            config,
            names,
            groups,
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config,
            names: self.names.clone(),
            groups: self.groups.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Index range of the parameters in `group`; groups are contiguous.
    pub fn group_range(&self, group: Group) -> std::ops::Range<usize> {
        let start = self.groups.iter().position(|&g| g == group).unwrap_or(0);
        let end = self.groups.iter().rposition(|&g| g == group).map_or(start, |e| e + 1);
        start..end
    }
}

/// Seeded model construction.
pub fn build_model(config: ModelConfig, seed: u64) -> Result<Model, ModelError> {
    Model::new(config, seed)
}
