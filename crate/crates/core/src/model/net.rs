use super::{Group, Model, ModelError};
use crate::autograd::{Activation, Graph, ReduceKind, Scalar, Tensor, Var};
use crate::types::OccupancyGrid;

/// Graph handles of a model's parameters, in model order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Graph nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// Backbone features, `(H/K) x (W/K) x C`.
    pub features: Var,
    /// `(H/K) x (W/K) x 3`: sigmoid probability then two tanh offsets.
    pub estimation: Var,
    /// `(H/K) x (W/K) x D`, linear.
    pub latent: Var,
}

/// `H x W x 1` input tensor of an occupancy grid.
pub fn grid_tensor<T: Scalar>(grid: &OccupancyGrid) -> Tensor<T> {
    let data = grid.cells().iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect();
    Tensor::new(vec![grid.height(), grid.width(), 1], data).expect("grid dims")
}

impl<T: Scalar> Model<T> {
    /// Adds every parameter to `g`; those in `trainable` receive gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: &[Group]) -> Bound {
        let vars = self
            .params
            .iter()
            .zip(&self.groups)
            .map(|(p, grp)| {
                if trainable.contains(grp) {
                    g.parameter(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    fn var(&self, b: &Bound, name: &str) -> Var {
        b.vars[self.index_of(name).unwrap_or_else(|| panic!("no parameter `{name}`"))]
    }

    fn conv(&self, g: &mut Graph<T>, b: &Bound, name: &str, x: Var, stride: usize) -> Result<Var, ModelError> {
        let w = self.var(b, &format!("{name}.w"));
        let bias = self.var(b, &format!("{name}.b"));
        Ok(g.conv2d(x, w, bias, stride)?)
    }

    fn conv_act(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        name: &str,
        x: Var,
        stride: usize,
        act: Activation,
    ) -> Result<Var, ModelError> {
        let y = self.conv(g, b, name, x, stride)?;
        Ok(g.activation(y, act))
    }

    /// Channel attention: a shared two-layer MLP over the average- and
    /// max-pooled channel descriptors gates every channel.
    fn channel_attention(&self, g: &mut Graph<T>, b: &Bound, i: usize, x: Var) -> Result<Var, ModelError> {
        let w1 = self.var(b, &format!("res{i}.ca.w1"));
        let b1 = self.var(b, &format!("res{i}.ca.b1"));
        let w2 = self.var(b, &format!("res{i}.ca.w2"));
        let b2 = self.var(b, &format!("res{i}.ca.b2"));
        let mlp = |g: &mut Graph<T>, d: Var| -> Result<Var, ModelError> {
            let h = g.dense(d, w1, b1)?;
            let h = g.activation(h, Activation::Relu);
            Ok(g.dense(h, w2, b2)?)
        };
        let avg = g.reduce(x, ReduceKind::Mean, &[0, 1])?;
        let max = g.reduce(x, ReduceKind::Max, &[0, 1])?;
        let a = mlp(g, avg)?;
        let m = mlp(g, max)?;
        let s = g.add(a, m)?;
        let gate = g.activation(s, Activation::Sigmoid);
        Ok(g.mul(x, gate)?)
    }

    /// Spatial attention: a convolution over the channel-wise mean and max maps gates every pixel.
    fn spatial_attention(&self, g: &mut Graph<T>, b: &Bound, i: usize, x: Var) -> Result<Var, ModelError> {
        let avg = g.reduce(x, ReduceKind::Mean, &[2])?;
        let max = g.reduce(x, ReduceKind::Max, &[2])?;
        let pooled = g.concat(&[avg, max])?;
        let gate = self.conv_act(g, b, &format!("res{i}.sa"), pooled, 1, Activation::Sigmoid)?;
        Ok(g.mul(x, gate)?)
    }

    /// Shared feature extractor on an `H x W x 1` input.
    pub fn backbone(&self, g: &mut Graph<T>, b: &Bound, input: Var) -> Result<Var, ModelError> {
        let k = self.config.k();
        let shape = g.value(input).shape();
        let (h, w) = (shape[0], shape[1]);
        if h % k != 0 || w % k != 0 || h == 0 || w == 0 {
            return Err(ModelError::Indivisible { h, w, k });
        }
        let mish = Activation::Mish;
        let mut x = self.conv_act(g, b, "stem", input, 2, mish)?;
        for i in 0..self.config.r {
            let y = self.conv_act(g, b, &format!("res{i}.conv"), x, 1, mish)?;
            let y = self.channel_attention(g, b, i, y)?;
            let y = self.spatial_attention(g, b, i, y)?;
            let sum = g.add(x, y)?;
            let z = g.activation(sum, mish);
            x = self.conv_act(g, b, &format!("res{i}.down"), z, 2, mish)?;
        }
        let down = self.conv_act(g, b, "bottom.down", x, 2, mish)?;
        let up_w = self.var(b, "bottom.up.w");
        let up_b = self.var(b, "bottom.up.b");
        let up = g.conv2d_transpose(down, up_w, up_b, 2)?;
        let sum = g.add(x, up)?;
        Ok(g.activation(sum, mish))
    }

    pub fn estimation_head(&self, g: &mut Graph<T>, b: &Bound, features: Var) -> Result<Var, ModelError> {
        let p = self.conv_act(g, b, "est.p", features, 1, Activation::Sigmoid)?;
        let d = self.conv_act(g, b, "est.d", features, 1, Activation::Tanh)?;
        Ok(g.concat(&[p, d])?)
    }

    pub fn clustering_head(&self, g: &mut Graph<T>, b: &Bound, features: Var) -> Result<Var, ModelError> {
        let x = self.conv_act(g, b, "clu.c1", features, 1, Activation::Mish)?;
        let x = self.conv_act(g, b, "clu.c2", x, 1, Activation::Mish)?;
        self.conv(g, b, "clu.out", x, 1)
    }

    /// One backbone pass feeding both heads.
    pub fn forward_graph(&self, g: &mut Graph<T>, b: &Bound, input: Var) -> Result<Outputs, ModelError> {
        let features = self.backbone(g, b, input)?;
        let estimation = self.estimation_head(g, b, features)?;
        let latent = self.clustering_head(g, b, features)?;
        Ok(Outputs {
            features,
            estimation,
            latent,
        })
    }

    /// Estimation and latent maps of a grid, without gradients.
    pub fn forward(&self, grid: &OccupancyGrid) -> Result<(Tensor<T>, Tensor<T>), ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, &[]);
        let x = g.constant(grid_tensor(grid));
        let out = self.forward_graph(&mut g, &b, x)?;
        Ok((g.value(out.estimation).clone(), g.value(out.latent).clone()))
    }

    /// Backbone features of a grid, without gradients.
    pub fn features(&self, grid: &OccupancyGrid) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, &[]);
        let x = g.constant(grid_tensor(grid));
        let f = self.backbone(&mut g, &b, x)?;
        Ok(g.value(f).clone())
    }
}
