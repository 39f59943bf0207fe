use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Floating-point element type of a model. Production runs use `f32`;
/// gradient checks run the same code in `f64`.
pub trait Scalar: Float + Send + Sync + std::iter::Sum + std::fmt::Debug + 'static {
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, width 128, 4 heads.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            vocab_size,
            max_seq_len: 512,
            seed: 0,
        }
    }

    /// The full-size shape: 4 layers, width 512, 8 heads.
    pub fn full(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 512,
            n_heads: 8,
            d_ff: 2048,
            vocab_size,
            max_seq_len: 512,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_layers == 0 || self.d_model == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return bad("all dimensions must be positive");
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub attn_gain: usize,
    pub attn_bias: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub mlp_gain: usize,
    pub mlp_bias: usize,
    pub w_in: usize,
    pub w_out: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub layers: Vec<LayerOffsets>,
    pub final_gain: usize,
    pub final_bias: usize,
    pub head: usize,
}

/// Name, shape and position of every tensor in the flat parameter buffer.
pub fn layout(config: &ModelConfig) -> Vec<TensorSpec> {
    let (d, f, v) = (config.d_model, config.d_ff, config.vocab_size);
    let mut specs = Vec::new();
    let mut offset = 0;
    let mut add = |name: String, shape: Vec<usize>| {
        let len: usize = shape.iter().product();
        specs.push(TensorSpec { name, shape, offset });
        offset += len;
    };
    add("tok_emb".into(), vec![v, d]);
    add("pos_emb".into(), vec![config.max_seq_len, d]);
    for l in 0..config.n_layers {
        add(format!("layers.{l}.attn_norm.gain"), vec![d]);
        add(format!("layers.{l}.attn_norm.bias"), vec![d]);
        add(format!("layers.{l}.attn.wq"), vec![d, d]);
        add(format!("layers.{l}.attn.wk"), vec![d, d]);
        add(format!("layers.{l}.attn.wv"), vec![d, d]);
        add(format!("layers.{l}.attn.wo"), vec![d, d]);
        add(format!("layers.{l}.mlp_norm.gain"), vec![d]);
        add(format!("layers.{l}.mlp_norm.bias"), vec![d]);
        add(format!("layers.{l}.mlp.w_in"), vec![d, f]);
        add(format!("layers.{l}.mlp.w_out"), vec![f, d]);
    }
    add("final_norm.gain".into(), vec![d]);
    add("final_norm.bias".into(), vec![d]);
    add("head".into(), vec![d, v]);
    specs
}

impl Offsets {
    pub(crate) fn new(config: &ModelConfig) -> Self {
        let specs = layout(config);
        let at = |name: &str| specs.iter().find(|s| s.name == name).expect("tensor in layout").offset;
        let layers = (0..config.n_layers)
            .map(|l| LayerOffsets {
                attn_gain: at(&format!("layers.{l}.attn_norm.gain")),
                attn_bias: at(&format!("layers.{l}.attn_norm.bias")),
                wq: at(&format!("layers.{l}.attn.wq")),
                wk: at(&format!("layers.{l}.attn.wk")),
                wv: at(&format!("layers.{l}.attn.wv")),
                wo: at(&format!("layers.{l}.attn.wo")),
                mlp_gain: at(&format!("layers.{l}.mlp_norm.gain")),
                mlp_bias: at(&format!("layers.{l}.mlp_norm.bias")),
                w_in: at(&format!("layers.{l}.mlp.w_in")),
                w_out: at(&format!("layers.{l}.mlp.w_out")),
            })
            .collect();
        Offsets {
            tok_emb: at("tok_emb"),
            pos_emb: at("pos_emb"),
            layers,
            final_gain: at("final_norm.gain"),
            final_bias: at("final_norm.bias"),
            head: at("head"),
        }
    }
}

pub fn param_count(config: &ModelConfig) -> usize {
    layout(config).iter().map(TensorSpec::len).sum()
}

/// All weights of the model in one flat buffer, addressable by tensor name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub data: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Deterministic initialization: N(0, 0.02) weights (residual output
    /// projections scaled by 1/sqrt(2 * n_layers)), unit norm gains, zero biases.
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f64, 0.02).expect("valid std");
        let out_scale = 1.0 / ((2 * config.n_layers) as f64).sqrt();
        let mut data = Vec::with_capacity(param_count(config));
        for spec in layout(config) {
            let n = spec.len();
            if spec.name.ends_with(".gain") {
                data.extend(std::iter::repeat(T::one()).take(n));
            } else if spec.name.ends_with(".bias") {
                data.extend(std::iter::repeat(T::zero()).take(n));
            } else {
                let scale = if spec.name.ends_with(".wo") || spec.name.ends_with(".w_out") {
                    out_scale
                } else {
                    1.0
                };
                data.extend((0..n).map(|_| T::of_f64(normal.sample(&mut rng) * scale)));
            }
        }
        Ok(ModelParams {
            config: config.clone(),
            data,
        })
    }

    pub fn zeros_like(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        layout(&self.config)
            .into_iter()
            .find(|s| s.name == name)
            .map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let spec = layout(&self.config).into_iter().find(|s| s.name == name)?;
        Some(&mut self.data[spec.range()])
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            data: self.data.iter().map(|&x| U::of_f64(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
