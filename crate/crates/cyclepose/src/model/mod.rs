//! Token-based pose model: patch embedding, learnable keypoint tokens, a
//! pre-norm transformer encoder stack over the concatenated sequence, and one
//! shared linear head mapping each keypoint token to a heatmap.

mod forward;

pub use forward::{patchify, ForwardPass, Mode, TokenBatch};

use crate::autodiff::{real, Graph, Real, TensorId};
use crate::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Epsilon used by every layer norm in the stack.
pub const LN_EPS: f64 = 1e-5;

/// Architecture and cycling hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input image height and width in pixels.
    pub image_size: [usize; 2],
    /// Square patch edge; image dims must be divisible by it.
    pub patch_size: usize,
    /// Input channels.
    pub in_channels: usize,
    /// Token width D.
    pub embed_dim: usize,
    /// Encoder layers L.
    pub num_layers: usize,
    /// Attention heads; must divide `embed_dim`.
    pub num_heads: usize,
    /// MLP hidden width as a multiple of `embed_dim`.
    pub mlp_ratio: f64,
    /// Keypoint tokens K.
    pub num_keypoints: usize,
    /// Output heatmap height and width.
    pub heatmap_size: [usize; 2],
    /// Cycles N through the shared stack during training.
    pub num_cycles: usize,
    /// Weight on the keypoint-token distillation term.
    pub alpha_kt: f64,
    /// Weight on the visual-token distillation term.
    pub alpha_vt: f64,
    /// Stop gradient into the teacher side of distillation terms.
    pub detach_teacher: bool,
    /// Dropout rate; active only in train mode.
    pub dropout: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: [64, 64],
            patch_size: 16,
            in_channels: 3,
            embed_dim: 32,
            num_layers: 4,
            num_heads: 4,
            mlp_ratio: 2.0,
            num_keypoints: 5,
            heatmap_size: [16, 16],
            num_cycles: 2,
            alpha_kt: 5e-6,
            alpha_vt: 5e-6,
            detach_teacher: true,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        if self.patch_size == 0 || h % self.patch_size != 0 || w % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {h}x{w} not divisible by patch size {}",
                self.patch_size
            )));
        }
        if self.embed_dim == 0
            || self.num_heads == 0
            || !self.embed_dim.is_multiple_of(self.num_heads)
        {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_cycles < 1 {
            return Err(Error::Config("num_cycles must be >= 1".into()));
        }
        if self.heatmap_size.iter().any(|&s| s < 2) {
            return Err(Error::Config(format!(
                "heatmap_size entries must be >= 2, got {:?}",
                self.heatmap_size
            )));
        }
        if self.num_keypoints == 0 || self.num_layers == 0 {
            return Err(Error::Config("need at least one keypoint and one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.mlp_hidden() == 0 {
            return Err(Error::Config("mlp_ratio too small".into()));
        }
        Ok(())
    }

    /// Visual token count M = (H/p)(W/p).
    pub fn num_visual_tokens(&self) -> usize {
        (self.image_size[0] / self.patch_size) * (self.image_size[1] / self.patch_size)
    }

    /// Visual token grid (rows, cols).
    pub fn patch_grid(&self) -> [usize; 2] {
        [
            self.image_size[0] / self.patch_size,
            self.image_size[1] / self.patch_size,
        ]
    }

    /// Full sequence length K + M.
    pub fn seq_len(&self) -> usize {
        self.num_keypoints + self.num_visual_tokens()
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn heatmap_cells(&self) -> usize {
        self.heatmap_size[0] * self.heatmap_size[1]
    }

    /// Closed-form parameter count. Independent of `num_cycles`: cycling
    /// reuses the same layer weights.
    ///
    /// patch embed: (p^2 C) D + D
    /// positions:   M D
    /// kp tokens:   K D
    /// per layer:   2D + 2D (two layer norms)
    ///            + 4 (D^2 + D) (q, k, v, out projections)
    ///            + D Dh + Dh + Dh D + D (MLP)
    /// head:        D (Hh Wh) + Hh Wh
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let dh = self.mlp_hidden();
        let m = self.num_visual_tokens();
        let per_layer = 4 * d + 4 * (d * d + d) + d * dh + dh + dh * d + d;
        self.patch_dim() * d
            + d
            + m * d
            + self.num_keypoints * d
            + self.num_layers * per_layer
            + d * self.heatmap_cells()
            + self.heatmap_cells()
    }

    /// Closed-form FLOP estimate for one image through `n_cycles` passes,
    /// counting multiply-adds in the matrix products as 2 FLOPs each.
    /// Patch embedding runs once; the encoder stack and head run per cycle.
    pub fn flops_per_image(&self, n_cycles: usize) -> u64 {
        let d = self.embed_dim as u64;
        let dh = self.mlp_hidden() as u64;
        let s = self.seq_len() as u64;
        let k = self.num_keypoints as u64;
        let head_dim = d / self.num_heads as u64;
        let heads = self.num_heads as u64;
        let per_layer = 4 * s * d * d              // q, k, v, out projections
            + 2 * heads * s * s * head_dim         // scores and context
            + 2 * s * d * dh; // MLP
        let embed = self.num_visual_tokens() as u64 * self.patch_dim() as u64 * d;
        let head = k * d * self.heatmap_cells() as u64;
        2 * (embed + n_cycles as u64 * (self.num_layers as u64 * per_layer + head))
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Model parameters plus config. Forward passes are built against a
/// [`Graph`] via [`Model::bind`].
pub struct Model<T: Real> {
    pub config: ModelConfig,
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

/// Graph leaves for every parameter, aligned with the model's param order.
pub struct Binding {
    pub ids: Vec<TensorId>,
    pub trainable: bool,
}

/// Standard normal via Box-Muller; one value per call, two uniform draws.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        if u1 > 0.0 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// Truncated normal: rejection-sample |z| <= 2, then scale by `std`.
fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

const INIT_STD: f64 = 0.02;

impl<T: Real> Model<T> {
    /// Initialize all parameters from `config.seed`. Draws come from a single
    /// ChaCha8 stream in parameter declaration order (projections truncated
    /// normal std 0.02, biases and norm offsets zero, norm scales one), so
    /// identical configs produce identical models.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let d = config.embed_dim;
        let dh = config.mlp_hidden();

        let push_normal = |params: &mut Vec<Param<T>>, rng: &mut ChaCha8Rng, name: &str, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| real(trunc_normal(rng, INIT_STD))).collect();
            params.push(Param { name: name.to_string(), shape, data });
        };
        let push_const = |params: &mut Vec<Param<T>>, name: &str, shape: Vec<usize>, v: f64| {
            let n: usize = shape.iter().product();
            params.push(Param {
                name: name.to_string(),
                shape,
                data: vec![real(v); n],
            });
        };

        push_normal(&mut params, &mut rng, "patch_embed.weight", vec![config.patch_dim(), d]);
        push_const(&mut params, "patch_embed.bias", vec![d], 0.0);
        push_normal(&mut params, &mut rng, "pos_embed", vec![config.num_visual_tokens(), d]);
        push_normal(&mut params, &mut rng, "keypoint_tokens", vec![config.num_keypoints, d]);
        for l in 0..config.num_layers {
            push_const(&mut params, &format!("layers.{l}.ln1.gamma"), vec![d], 1.0);
            push_const(&mut params, &format!("layers.{l}.ln1.beta"), vec![d], 0.0);
            for proj in ["q", "k", "v", "out"] {
                push_normal(&mut params, &mut rng, &format!("layers.{l}.attn.{proj}.weight"), vec![d, d]);
                push_const(&mut params, &format!("layers.{l}.attn.{proj}.bias"), vec![d], 0.0);
            }
            push_const(&mut params, &format!("layers.{l}.ln2.gamma"), vec![d], 1.0);
            push_const(&mut params, &format!("layers.{l}.ln2.beta"), vec![d], 0.0);
            push_normal(&mut params, &mut rng, &format!("layers.{l}.mlp.fc1.weight"), vec![d, dh]);
            push_const(&mut params, &format!("layers.{l}.mlp.fc1.bias"), vec![dh], 0.0);
            push_normal(&mut params, &mut rng, &format!("layers.{l}.mlp.fc2.weight"), vec![dh, d]);
            push_const(&mut params, &format!("layers.{l}.mlp.fc2.bias"), vec![d], 0.0);
        }
        push_normal(&mut params, &mut rng, "head.weight", vec![d, config.heatmap_cells()]);
        push_const(&mut params, "head.bias", vec![config.heatmap_cells()], 0.0);

        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(Model { config, params, index })
    }

    /// Rebuild a model from config plus explicit parameter tensors (used by
    /// checkpoint loading). Order and shapes must match `init`.
    pub fn from_params(config: ModelConfig, params: Vec<Param<T>>) -> Result<Self> {
        let reference = Model::<T>::init(config.clone())?;
        if reference.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, got {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (r, p) in reference.params.iter().zip(&params) {
            if r.name != p.name || r.shape != p.shape {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: expected {} {:?}, got {} {:?}",
                    r.name, r.shape, p.name, p.shape
                )));
            }
        }
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(Model { config, params, index })
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    /// Total scalar parameter count.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Insert every parameter into the graph as a leaf, in declaration order.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Binding {
        let ids = self
            .params
            .iter()
            .map(|p| {
                g.leaf(p.data.clone(), &p.shape, trainable)
                    .expect("parameter shapes are validated at init")
            })
            .collect();
        Binding { ids, trainable }
    }

    pub(crate) fn bound(&self, binding: &Binding, name: &str) -> TensorId {
        binding.ids[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }
}
