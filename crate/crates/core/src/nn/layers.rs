//! Parameterized building blocks: affine, convolution, normalization and
//! the composite CBR / CGL / LGL / GFE / projection units.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, Var};
use crate::nn::params::{kaiming_uniform, ParamId, ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w = kaiming_uniform(&[in_dim, out_dim], in_dim, rng);
        Self::from_weight(store, name, w)
    }

    /// Both weight and bias start at zero.
    pub fn zeroed<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::from_weight(store, name, Tensor::zeros(&[in_dim, out_dim]))
    }

    fn from_weight<T: Scalar>(store: &mut ParamStore<T>, name: &str, w: Tensor<T>) -> Self {
        let (in_dim, out_dim) = (w.dim(0), w.dim(1));
        let weight = store.register(&format!("{name}.weight"), w, ParamKind::Trainable);
        let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[out_dim]), ParamKind::Trainable);
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w);
        let b = g.param(store, self.bias);
        g.add_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = kaiming_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng);
        let weight = store.register(&format!("{name}.weight"), w, ParamKind::Trainable);
        let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[out_ch]), ParamKind::Trainable);
        Conv2d { weight, bias, in_ch, out_ch, kernel, stride, pad }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: store.register(&format!("{name}.gamma"), Tensor::full(&[channels], T::one()), ParamKind::Trainable),
            beta: store.register(&format!("{name}.beta"), Tensor::zeros(&[channels]), ParamKind::Trainable),
            running_mean: store.register(&format!("{name}.running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer),
            running_var: store.register(
                &format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                ParamKind::Buffer,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.batch_norm(x, gm, bt, (self.running_mean, self.running_var), store)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: store.register(&format!("{name}.gamma"), Tensor::full(&[dim], T::one()), ParamKind::Trainable),
            beta: store.register(&format!("{name}.beta"), Tensor::zeros(&[dim]), ParamKind::Trainable),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.layer_norm(x, gm, bt)
    }
}

/// Convolution, batch normalization, ReLU.
#[derive(Clone, Debug)]
pub struct Cbr {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl Cbr {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let y = self.conv.forward(g, store, x);
        let y = self.bn.forward(g, store, y);
        g.relu(y)
    }
}

/// Convolution, GELU, layer normalization over each sample's feature map.
#[derive(Clone, Debug)]
pub struct Cgl {
    pub conv: Conv2d,
    pub norm: LayerNorm,
    out_shape: (usize, usize, usize),
}

impl Cgl {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        input_hw: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), in_ch, out_ch, 3, 1, 1, rng);
        let (h, w) = conv.out_hw(input_hw.0, input_hw.1);
        let norm = LayerNorm::new(store, &format!("{name}.norm"), out_ch * h * w);
        Cgl { conv, norm, out_shape: (out_ch, h, w) }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let n = g.value(x).dim(0);
        let y = self.conv.forward(g, store, x);
        let y = g.gelu(y);
        let (c, h, w) = self.out_shape;
        let flat = g.reshape(y, &[n, c * h * w])?;
        let y = self.norm.forward(g, store, flat);
        g.reshape(y, &[n, c, h, w])
    }
}

/// Linear, GELU, layer normalization.
#[derive(Clone, Debug)]
pub struct Lgl {
    pub linear: Linear,
    pub norm: LayerNorm,
}

impl Lgl {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Lgl {
            linear: Linear::new(store, &format!("{name}.linear"), in_dim, out_dim, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), out_dim),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let y = self.linear.forward(g, store, x);
        let y = g.gelu(y);
        self.norm.forward(g, store, y)
    }
}

/// Shape of the group encoder.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GfeShape {
    pub in_channels: usize,
    pub freq_bins: usize,
    pub frames: usize,
    pub widths: [usize; 3],
    pub out_dim: usize,
}

/// Group feature encoder: three CBR stages (3×3, stride 2) and a linear map.
#[derive(Clone, Debug)]
pub struct GfeUnit {
    pub stages: Vec<Cbr>,
    pub proj: Linear,
    pub shape: GfeShape,
    flat_dim: usize,
}

impl GfeUnit {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, shape: GfeShape, rng: &mut R) -> Self {
        let mut stages = Vec::new();
        let (mut c, mut h, mut w) = (shape.in_channels, shape.freq_bins, shape.frames);
        for (i, &width) in shape.widths.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("{name}.cbr{}.conv", i + 1), c, width, 3, 2, 1, rng);
            (h, w) = conv.out_hw(h, w);
            let bn = BatchNorm::new(store, &format!("{name}.cbr{}.bn", i + 1), width);
            stages.push(Cbr { conv, bn });
            c = width;
        }
        let flat_dim = c * h * w;
        let proj = Linear::new(store, &format!("{name}.proj"), flat_dim, shape.out_dim, rng);
        GfeUnit { stages, proj, shape, flat_dim }
    }

    /// `x: [N, C, F, G]` group slices to `[N, D_g]` features.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = g.value(x).shape().to_vec();
        let want = [self.shape.in_channels, self.shape.freq_bins, self.shape.frames];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::Shape(format!("group encoder expects [N,{},{},{}], got {:?}", want[0], want[1], want[2], s)));
        }
        let mut y = x;
        for st in &self.stages {
            y = st.forward(g, store, y);
        }
        let flat = g.reshape(y, &[s[0], self.flat_dim])?;
        Ok(self.proj.forward(g, store, flat))
    }
}

/// Two affine layers with batch normalization and ReLU in between.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub first: Linear,
    pub bn: BatchNorm,
    pub second: Linear,
}

impl ProjectionHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut R) -> Self {
        ProjectionHead {
            first: Linear::new(store, &format!("{name}.fc1"), dim, dim, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), dim),
            second: Linear::new(store, &format!("{name}.fc2"), dim, dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let y = self.first.forward(g, store, x);
        let y = self.bn.forward(g, store, y);
        let y = g.relu(y);
        self.second.forward(g, store, y)
    }
}
