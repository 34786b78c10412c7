//! Teacher and student networks. A strided 3×3 convolution stack produces
//! the feature map; a single learned query cross-attends over its tokens
//! and a two-layer perceptron regresses pose, shape and translation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::ad::{Graph, Tensor, Var};
use crate::camera::{project_graph, Intrinsics};
use crate::hand::{HandRig, NUM_BETAS, POSE_DIM};
use crate::losses::{FeatureMap, Prediction, PredictionVars};
use crate::rng::{rng_for, stream};
use crate::Error;

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
/// Regression outputs: θ, β, translation.
pub const OUTPUT_DIM: usize = POSE_DIM + NUM_BETAS + 3;
pub const HEATMAP_CHANNELS: usize = 21;

/// Raw translation outputs map to millimetres as `offset + scale·raw`.
pub const T_XY_SCALE: f64 = 50.0;
pub const T_Z_OFFSET: f64 = 600.0;
pub const T_Z_SCALE: f64 = 200.0;
const BETA_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StudentSize {
    Small,
    Large,
}

impl StudentSize {
    pub fn name(self) -> &'static str {
        match self {
            StudentSize::Small => "small",
            StudentSize::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "small" => Some(StudentSize::Small),
            "large" => Some(StudentSize::Large),
            _ => None,
        }
    }

    pub fn config(self, seed: u64) -> NetConfig {
        match self {
            StudentSize::Small => NetConfig::new(vec![8, 16, 32], 32, seed),
            StudentSize::Large => NetConfig::new(vec![16, 32, 64], 64, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetConfig {
    /// Output channels of each stride-2 stage.
    pub widths: Vec<usize>,
    pub head_dim: usize,
    pub input_channels: usize,
    /// `(H, W)`
    pub input_size: (usize, usize),
    pub seed: u64,
}

impl NetConfig {
    /// Heatmap input at the default image size.
    pub fn new(widths: Vec<usize>, head_dim: usize, seed: u64) -> Self {
        let s = crate::camera::DEFAULT_IMAGE_SIZE;
        Self {
            widths,
            head_dim,
            input_channels: HEATMAP_CHANNELS,
            input_size: (s, s),
            seed,
        }
    }

    pub fn teacher(seed: u64) -> Self {
        Self::new(vec![32, 64, 128], 128, seed)
    }

    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<(), Error> {
        let (h, w) = self.input_size;
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("stage widths must be non-empty and positive, got {:?}", self.widths)));
        }
        if self.head_dim == 0 || self.input_channels == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!(
                "head_dim, input_channels and input size must be positive (got {}, {}, {h}×{w})",
                self.head_dim, self.input_channels
            )));
        }
        Ok(())
    }

    /// `(C, H, W)` of the final stage.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = self.input_size;
        for _ in &self.widths {
            h = (h + 2 * PAD - KERNEL) / STRIDE + 1;
            w = (w + 2 * PAD - KERNEL) / STRIDE + 1;
        }
        (*self.widths.last().unwrap_or(&0), h, w)
    }

    pub fn tokens(&self) -> usize {
        let (_, h, w) = self.feature_shape();
        h * w
    }

    /// Parameter names and shapes in storage order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = self.input_channels;
        for (i, &c) in self.widths.iter().enumerate() {
            out.push((format!("backbone.{i}.weight"), vec![c, c_in, KERNEL, KERNEL]));
            out.push((format!("backbone.{i}.bias"), vec![c]));
            c_in = c;
        }
        let d = self.head_dim;
        out.push(("head.embed".into(), vec![c_in, d]));
        out.push(("head.pos".into(), vec![self.tokens(), d]));
        out.push(("head.query".into(), vec![1, d]));
        out.push(("head.key".into(), vec![d, d]));
        out.push(("head.value".into(), vec![d, d]));
        out.push(("head.hidden.weight".into(), vec![d, d]));
        out.push(("head.hidden.bias".into(), vec![1, d]));
        out.push(("head.out.weight".into(), vec![d, OUTPUT_DIM]));
        out.push(("head.out.bias".into(), vec![1, OUTPUT_DIM]));
        out
    }
}

/// Offsets of the head parameters within the storage order.
mod slot {
    pub const EMBED: usize = 0;
    pub const POS: usize = 1;
    pub const QUERY: usize = 2;
    pub const KEY: usize = 3;
    pub const VALUE: usize = 4;
    pub const HIDDEN_W: usize = 5;
    pub const HIDDEN_B: usize = 6;
    pub const OUT_W: usize = 7;
    pub const OUT_B: usize = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub trainable: usize,
    pub frozen: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trainable + self.frozen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: NetConfig,
    params: Vec<Tensor>,
    frozen: bool,
}

/// Fan-in scaled uniform initialization; biases start at zero.
pub fn init_model(cfg: &NetConfig) -> Result<Model, Error> {
    cfg.validate()?;
    let specs = cfg.param_specs();
    let head = 2 * cfg.stages();
    let params = specs
        .iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let n: usize = shape.iter().product();
            let bound = if name.ends_with("bias") {
                0.0
            } else if i == head + slot::POS || i == head + slot::QUERY {
                1.0
            } else {
                let fan_in: usize = if shape.len() == 4 { shape[1..].iter().product() } else { shape[0] };
                1.0 / libm::sqrt(fan_in as f64)
            };
            let mut rng = rng_for(cfg.seed, stream::INIT, i as u64);
            let mut data: Vec<f64> = if bound == 0.0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            if i == head + slot::OUT_W {
                for row in data.chunks_mut(OUTPUT_DIM) {
                    for v in &mut row[POSE_DIM..POSE_DIM + NUM_BETAS] {
                        *v *= BETA_INIT_SCALE;
                    }
                }
            }
            Tensor::new(shape, data).map_err(Error::from)
        })
        .collect::<Result<_, _>>()?;
    Ok(Model {
        config: cfg.clone(),
        params,
        frozen: false,
    })
}

impl Model {
    /// Reassembles a model, checking every tensor against the config layout.
    pub fn from_parts(config: NetConfig, params: Vec<Tensor>, frozen: bool) -> Result<Self, Error> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::InvalidInput(format!("expected {} parameter tensors, got {}", specs.len(), params.len())));
        }
        for ((name, shape), t) in specs.iter().zip(&params) {
            if t.shape() != &shape[..] {
                return Err(Error::InvalidInput(format!("parameter {name} expects shape {shape:?}, got {:?}", t.shape())));
            }
        }
        Ok(Self { config, params, frozen })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> Result<&mut [Tensor], Error> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.params)
    }

    pub fn param_names(&self) -> Vec<String> {
        self.config.param_specs().into_iter().map(|(n, _)| n).collect()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn param_count(&self) -> ParamCount {
        let n: usize = self.params.iter().map(Tensor::numel).sum();
        if self.frozen {
            ParamCount { trainable: 0, frozen: n }
        } else {
            ParamCount { trainable: n, frozen: 0 }
        }
    }

    /// FNV-1a over the little-endian parameter bytes.
    pub fn checksum(&self) -> u64 {
        use crate::codec::Sink;
        let mut h = crate::codec::Fnv1a::default();
        for v in self.params.iter().flat_map(|t| t.data()) {
            h.put(&v.to_le_bytes());
        }
        h.finish()
    }

    /// Places the parameters on `g`; frozen models enter as constants.
    pub fn bind<'m>(&'m self, g: &mut Graph) -> BoundModel<'m> {
        let vars = self
            .params
            .iter()
            .map(|t| if self.frozen { g.constant(t.clone()) } else { g.param(t.clone()) })
            .collect();
        BoundModel { model: self, vars }
    }

    /// All parameters concatenated in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Binds slices of a flat vector (from `start`) in place of the stored
    /// parameters, for gradient checks over the whole model.
    pub fn bind_flat<'m>(&'m self, g: &mut Graph, flat: Var, start: usize) -> Result<BoundModel<'m>, Error> {
        let mut at = start;
        let mut vars = Vec::with_capacity(self.params.len());
        for t in &self.params {
            let n = t.numel();
            let slice = g.narrow(flat, 0, at, n)?;
            vars.push(g.reshape(slice, t.shape())?);
            at += n;
        }
        Ok(BoundModel { model: self, vars })
    }

    /// Gradient-free forward returning the prediction and final feature map.
    pub fn predict(&self, image: &Tensor, rig: &HandRig, intr: &Intrinsics) -> Result<(Prediction, FeatureMap), Error> {
        let mut g = Graph::no_grad();
        let bound = self.bind(&mut g);
        let x = g.constant(image.clone());
        let f = bound.forward_backbone(&mut g, x)?;
        let head = bound.forward_head(&mut g, f, rig, intr)?;
        let pred = Prediction::from_graph(&g, &head.prediction, *intr);
        let feat = FeatureMap::new(g.value(f).clone())?;
        Ok((pred, feat))
    }
}

/// A model's parameters placed on one graph.
#[derive(Debug, Clone)]
pub struct BoundModel<'m> {
    model: &'m Model,
    vars: Vec<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub prediction: PredictionVars,
    /// `1×T` softmax weights over backbone tokens.
    pub attention: Var,
    /// `1×d` attended vector.
    pub attended: Var,
}

impl BoundModel<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn head_var(&self, s: usize) -> Var {
        self.vars[2 * self.model.config.stages() + s]
    }

    /// Returns the final-stage `C×H×W` feature map.
    pub fn forward_backbone(&self, g: &mut Graph, image: Var) -> Result<Var, Error> {
        let cfg = &self.model.config;
        let (h, w) = cfg.input_size;
        if g.value(image).shape() != [cfg.input_channels, h, w] {
            return Err(Error::InvalidInput(format!(
                "image must be {}×{h}×{w}, got {:?}",
                cfg.input_channels,
                g.value(image).shape()
            )));
        }
        let mut x = image;
        for i in 0..cfg.stages() {
            let y = g.conv2d(x, self.vars[2 * i], self.vars[2 * i + 1], STRIDE, PAD)?;
            x = g.tanh(y);
        }
        Ok(x)
    }

    pub fn forward_head(&self, g: &mut Graph, features: Var, rig: &HandRig, intr: &Intrinsics) -> Result<HeadVars, Error> {
        let cfg = &self.model.config;
        let (c, h, w) = cfg.feature_shape();
        if g.value(features).shape() != [c, h, w] {
            return Err(Error::InvalidInput(format!(
                "features must be {c}×{h}×{w}, got {:?}",
                g.value(features).shape()
            )));
        }
        let flat = g.reshape(features, &[c, h * w])?;
        let tokens = g.transpose(flat)?;
        let embedded = g.matmul(tokens, self.head_var(slot::EMBED))?;
        let embedded = g.add(embedded, self.head_var(slot::POS))?;
        let embedded = g.tanh(embedded);

        let keys = g.matmul(embedded, self.head_var(slot::KEY))?;
        let values = g.matmul(embedded, self.head_var(slot::VALUE))?;
        let keys_t = g.transpose(keys)?;
        let scores = g.matmul(self.head_var(slot::QUERY), keys_t)?;
        let scores = g.mul_scalar(scores, 1.0 / libm::sqrt(cfg.head_dim as f64));
        let attention = g.softmax_rows(scores)?;
        let attended = g.matmul(attention, values)?;

        let hidden = g.matmul(attended, self.head_var(slot::HIDDEN_W))?;
        let hidden = g.add(hidden, self.head_var(slot::HIDDEN_B))?;
        let hidden = g.tanh(hidden);
        let out = g.matmul(hidden, self.head_var(slot::OUT_W))?;
        let out = g.add(out, self.head_var(slot::OUT_B))?;

        let theta = g.narrow(out, 1, 0, POSE_DIM)?;
        let beta = g.narrow(out, 1, POSE_DIM, NUM_BETAS)?;
        let raw_t = g.narrow(out, 1, POSE_DIM + NUM_BETAS, 3)?;
        let raw_t = g.reshape(raw_t, &[3])?;
        let scale = g.constant(Tensor::vector(vec![T_XY_SCALE, T_XY_SCALE, T_Z_SCALE]));
        let translation = g.mul(raw_t, scale)?;
        let offset = g.constant(Tensor::vector(vec![0.0, 0.0, T_Z_OFFSET]));
        let translation = g.add(translation, offset)?;

        let hand = rig.forward_graph(g, theta, beta)?;
        let k2d = project_graph(g, hand.joints3d, translation, intr)?;
        Ok(HeadVars {
            prediction: PredictionVars {
                k3d: hand.joints3d,
                k2d,
                theta,
                beta,
                translation,
                vertices: hand.vertices,
            },
            attention,
            attended,
        })
    }
}

#[cfg(test)]
mod tests;
