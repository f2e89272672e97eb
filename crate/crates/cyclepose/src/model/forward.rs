//! Graph construction for the model forward pass.

use super::{Binding, Model, ModelConfig, LN_EPS};
use crate::autodiff::{real, Graph, Real, TensorId};
use crate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Token sequence split into its two halves, each `[B, len, D]`.
#[derive(Debug, Clone, Copy)]
pub struct TokenBatch {
    /// `[B, M, D]` embedded image patches.
    pub visual: TensorId,
    /// `[B, K, D]` keypoint tokens.
    pub keypoint: TensorId,
}

/// Flatten `[B, C, H, W]` image data into per-patch rows `[B, M, p*p*C]`.
/// Patches are enumerated row-major over the grid; within a patch, features
/// are ordered channel-major then row-major, matching the embedding weight
/// layout.
pub fn patchify<T: Real>(images: &[T], batch: usize, cfg: &ModelConfig) -> Vec<T> {
    let [h, w] = cfg.image_size;
    let p = cfg.patch_size;
    let c = cfg.in_channels;
    let (gh, gw) = (h / p, w / p);
    let mut out = Vec::with_capacity(batch * gh * gw * p * p * c);
    for b in 0..batch {
        let img = &images[b * c * h * w..(b + 1) * c * h * w];
        for gy in 0..gh {
            for gx in 0..gw {
                for ch in 0..c {
                    for py in 0..p {
                        let row = gy * p + py;
                        let base = ch * h * w + row * w + gx * p;
                        out.extend_from_slice(&img[base..base + p]);
                    }
                }
            }
        }
    }
    out
}

/// Context for one forward construction: dropout source when training.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Attention weights recorded per layer during one pass, `[B*h, S, S]`
/// post-softmax.
pub struct ForwardPass {
    pub attention: Vec<TensorId>,
}

impl<T: Real> Model<T> {
    /// Embed a `[B, C, H, W]` image batch into visual tokens `[B, M, D]`:
    /// per-patch flatten, linear projection, plus a learned positional
    /// embedding added once per visual token index. Cycling never re-adds it.
    pub fn patch_embed(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        images: &[T],
        batch: usize,
    ) -> Result<TensorId> {
        let cfg = &self.config;
        let expected = batch * cfg.in_channels * cfg.image_size[0] * cfg.image_size[1];
        if images.len() != expected {
            return Err(crate::Error::BadShape {
                op: "patch_embed",
                expected: format!("{expected} image values"),
                got: vec![images.len()],
            });
        }
        let m = cfg.num_visual_tokens();
        let patches = patchify(images, batch, cfg);
        let x = g.constant(patches, &[batch, m, cfg.patch_dim()])?;
        let x = g.matmul(x, self.bound(binding, "patch_embed.weight"))?;
        let x = g.add_bias(x, self.bound(binding, "patch_embed.bias"))?;
        let pos = g.tile(self.bound(binding, "pos_embed"), batch)?;
        g.add(x, pos)
    }

    /// The learnable keypoint embedding table, broadcast per batch element:
    /// `[B, K, D]`. Keypoint tokens carry no positional embedding.
    pub fn keypoint_tokens(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        batch: usize,
    ) -> Result<TensorId> {
        g.tile(self.bound(binding, "keypoint_tokens"), batch)
    }

    /// Run the encoder stack once over `[keypoint || visual]` and split back.
    /// Records per-layer post-softmax attention in the returned pass.
    pub fn stack_forward(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        tokens: TokenBatch,
        mode: &mut Mode,
    ) -> Result<(TokenBatch, ForwardPass)> {
        let cfg = &self.config;
        let k = cfg.num_keypoints;
        let s = cfg.seq_len();
        let mut x = g.concat_seq(tokens.keypoint, tokens.visual)?;
        let mut attention = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let (next, attn) = self.encoder_layer(g, binding, x, l, mode)?;
            x = next;
            attention.push(attn);
        }
        let keypoint = g.slice_seq(x, 0, k)?;
        let visual = g.slice_seq(x, k, s)?;
        Ok((TokenBatch { visual, keypoint }, ForwardPass { attention }))
    }

    /// One pre-norm encoder layer:
    ///   x = x + Attn(LN1(x))
    ///   x = x + MLP(LN2(x)),  MLP(u) = W2 gelu(W1 u + b1) + b2
    fn encoder_layer(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        x: TensorId,
        layer: usize,
        mode: &mut Mode,
    ) -> Result<(TensorId, TensorId)> {
        let cfg = &self.config;
        let p = |name: &str| self.bound(binding, &format!("layers.{layer}.{name}"));
        let shape = g.shape(x).to_vec();
        let (b, s, d) = (shape[0], shape[1], shape[2]);
        let heads = cfg.num_heads;
        let hd = d / heads;

        let normed = g.layer_norm(x, p("ln1.gamma"), p("ln1.beta"), LN_EPS)?;
        let q = self.project(g, binding, normed, layer, "q")?;
        let key = self.project(g, binding, normed, layer, "k")?;
        let v = self.project(g, binding, normed, layer, "v")?;

        let qh = split_heads(g, q, b, s, heads, hd)?;
        let kh = split_heads(g, key, b, s, heads, hd)?;
        let vh = split_heads(g, v, b, s, heads, hd)?;

        let kt = g.transpose_last(kh)?;
        let scores = g.batch_matmul(qh, kt)?;
        let scores = g.scale(scores, real(1.0 / (hd as f64).sqrt()));
        let attn = g.softmax(scores)?;
        let attn_used = self.maybe_dropout(g, attn, mode)?;
        let ctx = g.batch_matmul(attn_used, vh)?;
        let merged = merge_heads(g, ctx, b, s, heads, hd)?;
        let out = g.matmul(merged, p("attn.out.weight"))?;
        let out = g.add_bias(out, p("attn.out.bias"))?;
        let out = self.maybe_dropout(g, out, mode)?;
        let x = g.add(x, out)?;

        let normed = g.layer_norm(x, p("ln2.gamma"), p("ln2.beta"), LN_EPS)?;
        let hidden = g.matmul(normed, p("mlp.fc1.weight"))?;
        let hidden = g.add_bias(hidden, p("mlp.fc1.bias"))?;
        let hidden = g.gelu(hidden);
        let out = g.matmul(hidden, p("mlp.fc2.weight"))?;
        let out = g.add_bias(out, p("mlp.fc2.bias"))?;
        let out = self.maybe_dropout(g, out, mode)?;
        let x = g.add(x, out)?;
        Ok((x, attn))
    }

    fn project(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        x: TensorId,
        layer: usize,
        which: &str,
    ) -> Result<TensorId> {
        let w = self.bound(binding, &format!("layers.{layer}.attn.{which}.weight"));
        let b = self.bound(binding, &format!("layers.{layer}.attn.{which}.bias"));
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    fn maybe_dropout(&self, g: &mut Graph<T>, x: TensorId, mode: &mut Mode) -> Result<TensorId> {
        let rate = self.config.dropout;
        if rate <= 0.0 || !mode.is_train() {
            return Ok(x);
        }
        let Mode::Train(rng) = mode else { unreachable!() };
        let keep = 1.0 - rate;
        let scale = real::<T>(1.0 / keep);
        let mask: Vec<T> = (0..g.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        g.dropout(x, mask)
    }

    /// Shared linear head: each keypoint token `[B, K, D]` maps to a heatmap,
    /// output `[B, K, Hh, Wh]`. The same weights serve every cycle.
    pub fn heatmap_head(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        keypoint: TensorId,
    ) -> Result<TensorId> {
        let cfg = &self.config;
        let shape = g.shape(keypoint).to_vec();
        let (b, k) = (shape[0], shape[1]);
        let y = g.matmul(keypoint, self.bound(binding, "head.weight"))?;
        let y = g.add_bias(y, self.bound(binding, "head.bias"))?;
        g.reshape(y, &[b, k, cfg.heatmap_size[0], cfg.heatmap_size[1]])
    }
}

fn split_heads<T: Real>(
    g: &mut Graph<T>,
    x: TensorId,
    b: usize,
    s: usize,
    heads: usize,
    hd: usize,
) -> Result<TensorId> {
    let x = g.reshape(x, &[b, s, heads, hd])?;
    let x = g.swap_axes_1_2(x)?;
    g.reshape(x, &[b * heads, s, hd])
}

fn merge_heads<T: Real>(
    g: &mut Graph<T>,
    x: TensorId,
    b: usize,
    s: usize,
    heads: usize,
    hd: usize,
) -> Result<TensorId> {
    let x = g.reshape(x, &[b, heads, s, hd])?;
    let x = g.swap_axes_1_2(x)?;
    g.reshape(x, &[b, s, heads * hd])
}
