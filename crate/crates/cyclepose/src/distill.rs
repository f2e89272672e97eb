//! Cycled forwarding through the weight-shared stack and the self-distillation
//! loss assembly.
//!
//! During training the token sequence passes through the encoder stack N
//! times; cycle i consumes cycle i-1's output tokens. Every cycle's keypoint
//! tokens run through the one shared head, and later cycles teach earlier
//! ones: token MSE between adjacent cycles (latter as teacher), plus ground
//! truth supervision on each cycle's heatmaps. At inference only cycle 1
//! runs, so serving cost matches a plain single-pass model.

use crate::autodiff::{real, Graph, Real, TensorId};
use crate::model::{Binding, Mode, Model, TokenBatch};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Output of one cycle through the stack.
pub struct CycleOutput {
    pub tokens: TokenBatch,
    /// `[B, K, Hh, Wh]` heatmaps from the shared head.
    pub heatmaps: TensorId,
    /// Post-softmax attention per layer, `[B*h, S, S]`.
    pub attention: Vec<TensorId>,
}

/// Per-cycle outputs of one cycled forward, in cycle order 1..=N.
pub struct CycleTrace {
    pub cycles: Vec<CycleOutput>,
    /// Tokens fed into cycle 1.
    pub input: TokenBatch,
}

impl CycleTrace {
    pub fn num_cycles(&self) -> usize {
        self.cycles.len()
    }

    pub fn last(&self) -> &CycleOutput {
        self.cycles.last().expect("trace has at least one cycle")
    }

    /// Post-softmax attention recorded for one layer of one cycle,
    /// `[B*heads, S, S]`. Cycles are 1-based, layers 0-based.
    pub fn attention(&self, cycle: usize, layer: usize) -> Result<TensorId> {
        let c = self
            .cycles
            .get(cycle.wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!(
                "cycle {cycle} out of range 1..={}",
                self.cycles.len()
            )))?;
        c.attention.get(layer).copied().ok_or_else(|| {
            Error::Config(format!("layer {layer} out of range 0..{}", c.attention.len()))
        })
    }
}

impl<T: Real> Model<T> {
    /// Run `n_cycles` passes of the shared stack. Cycle 1 consumes `tokens`;
    /// cycle i consumes cycle i-1's output. The same layer weights serve every
    /// cycle and gradients flow through the whole chain.
    pub fn cycled_forward(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        tokens: TokenBatch,
        n_cycles: usize,
        mode: &mut Mode,
    ) -> Result<CycleTrace> {
        if n_cycles < 1 {
            return Err(Error::Config("cycled_forward requires n_cycles >= 1".into()));
        }
        let mut current = tokens;
        let mut cycles = Vec::with_capacity(n_cycles);
        for _ in 0..n_cycles {
            let (out, pass) = self.stack_forward(g, binding, current, mode)?;
            let heatmaps = self.heatmap_head(g, binding, out.keypoint)?;
            cycles.push(CycleOutput {
                tokens: out,
                heatmaps,
                attention: pass.attention,
            });
            current = out;
        }
        Ok(CycleTrace { cycles, input: tokens })
    }

    /// Embed an image batch and run the cycled forward in one call.
    pub fn forward_images(
        &self,
        g: &mut Graph<T>,
        binding: &Binding,
        images: &[T],
        batch: usize,
        n_cycles: usize,
        mode: &mut Mode,
    ) -> Result<CycleTrace> {
        let visual = self.patch_embed(g, binding, images, batch)?;
        let keypoint = self.keypoint_tokens(g, binding, batch)?;
        self.cycled_forward(g, binding, TokenBatch { visual, keypoint }, n_cycles, mode)
    }

    /// Deployment path: one cycle, dropout off. Identical computation to
    /// cycle 1 of a cycled forward with the same weights, hence bitwise-equal
    /// heatmaps. Returns the heatmap values and decoded image coordinates.
    pub fn single_pass_inference(
        &self,
        images: &[T],
        batch: usize,
    ) -> Result<(Vec<T>, Vec<[f64; 2]>)> {
        let mut g = Graph::new();
        let binding = self.bind(&mut g, false);
        let trace = self.forward_images(&mut g, &binding, images, batch, 1, &mut Mode::Eval)?;
        let hm = g.value(trace.cycles[0].heatmaps).to_vec();
        let coords = crate::eval::decode_heatmaps(
            &hm,
            batch,
            self.config.num_keypoints,
            self.config.heatmap_size,
            self.config.image_size,
        );
        Ok((hm, coords))
    }
}

/// Sum over adjacent cycle pairs of `mse(KT_i, teacher(KT_{i+1}))`, the later
/// cycle teaching the earlier. `detach_teacher` stops gradient into the
/// teacher side. One cycle means an empty sum: exact zero.
pub fn keypoint_distill_loss<T: Real>(
    g: &mut Graph<T>,
    trace: &CycleTrace,
    detach_teacher: bool,
) -> Result<TensorId> {
    pairwise_token_loss(g, trace, detach_teacher, |c| c.tokens.keypoint)
}

/// As [`keypoint_distill_loss`], over visual tokens.
pub fn visual_distill_loss<T: Real>(
    g: &mut Graph<T>,
    trace: &CycleTrace,
    detach_teacher: bool,
) -> Result<TensorId> {
    pairwise_token_loss(g, trace, detach_teacher, |c| c.tokens.visual)
}

fn pairwise_token_loss<T: Real>(
    g: &mut Graph<T>,
    trace: &CycleTrace,
    detach_teacher: bool,
    select: impl Fn(&CycleOutput) -> TensorId,
) -> Result<TensorId> {
    let n = trace.num_cycles();
    if n == 1 {
        return Ok(g.scalar(T::zero()));
    }
    let mut total: Option<TensorId> = None;
    for i in 0..n - 1 {
        let student = select(&trace.cycles[i]);
        let teacher = select(&trace.cycles[i + 1]);
        let teacher = if detach_teacher { g.detach(teacher) } else { teacher };
        let term = g.mse(student, teacher)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok(total.unwrap())
}

/// Ground-truth supervision summed over every cycle's prediction:
/// `sum_i mse(P_i, gt)`. Returns the sum and the per-cycle terms.
pub fn pose_loss<T: Real>(
    g: &mut Graph<T>,
    trace: &CycleTrace,
    gt: TensorId,
) -> Result<(TensorId, Vec<TensorId>)> {
    let mut terms = Vec::with_capacity(trace.num_cycles());
    let mut total: Option<TensorId> = None;
    for cycle in &trace.cycles {
        let term = g.mse(cycle.heatmaps, gt)?;
        terms.push(term);
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    Ok((total.unwrap(), terms))
}

/// Loss nodes from one assembly. `total` is composed exactly as
/// `l_pose + alpha_kt * l_kt + alpha_vt * l_vt`; disabled terms are zero
/// scalars, which leaves the remaining bits untouched.
pub struct LossBreakdown {
    pub l_pose: TensorId,
    /// mse(P_i, gt) per cycle, always computed for logging.
    pub l_pose_cycles: Vec<TensorId>,
    pub l_kt: TensorId,
    pub l_vt: TensorId,
    pub total: TensorId,
}

/// Plain-number snapshot of a [`LossBreakdown`] for logging.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossValues {
    pub l_pose: f64,
    pub l_pose_cycles: Vec<f64>,
    pub l_kt: f64,
    pub l_vt: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn values<T: Real>(&self, g: &Graph<T>) -> LossValues {
        let f = |id: TensorId| g.scalar_value(id).to_f64().unwrap_or(f64::NAN);
        LossValues {
            l_pose: f(self.l_pose),
            l_pose_cycles: self.l_pose_cycles.iter().map(|&id| f(id)).collect(),
            l_kt: f(self.l_kt),
            l_vt: f(self.l_vt),
            total: f(self.total),
        }
    }
}

/// Which loss terms a training run enables. Mirrors the ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "pose_only")]
    PoseOnly,
    #[serde(rename = "pose+kt")]
    PoseKt,
    #[serde(rename = "pose+vt")]
    PoseVt,
    #[serde(rename = "kt+vt_only")]
    KtVtOnly,
    #[serde(rename = "last_cycle_pose_only")]
    LastCyclePoseOnly,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::LastCyclePoseOnly,
    Variant::PoseOnly,
    Variant::PoseKt,
    Variant::PoseVt,
    Variant::KtVtOnly,
    Variant::Full,
];

impl Variant {
    pub fn id(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::PoseOnly => "pose_only",
            Variant::PoseKt => "pose+kt",
            Variant::PoseVt => "pose+vt",
            Variant::KtVtOnly => "kt+vt_only",
            Variant::LastCyclePoseOnly => "last_cycle_pose_only",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::UnknownVariant {
                what: "loss variant",
                got: s.to_string(),
                allowed: "full, pose_only, pose+kt, pose+vt, kt+vt_only, last_cycle_pose_only",
            })
    }
}

/// Pose supervision mode within a [`LossPlan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseSupervision {
    /// Every cycle's prediction against ground truth.
    AllCycles,
    /// Only the final cycle's prediction.
    LastCycleOnly,
    /// No ground-truth term.
    None,
}

/// Loss assembly switches for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossPlan {
    pub pose: PoseSupervision,
    pub use_kt: bool,
    pub use_vt: bool,
}

impl Default for LossPlan {
    fn default() -> Self {
        LossPlan::full()
    }
}

impl LossPlan {
    /// All three terms: per-cycle pose supervision plus both distillation
    /// losses. This is the shipped default.
    pub fn full() -> Self {
        LossPlan {
            pose: PoseSupervision::AllCycles,
            use_kt: true,
            use_vt: true,
        }
    }

    pub fn for_variant(v: Variant) -> Self {
        use PoseSupervision::*;
        match v {
            Variant::Full => LossPlan { pose: AllCycles, use_kt: true, use_vt: true },
            Variant::PoseOnly => LossPlan { pose: AllCycles, use_kt: false, use_vt: false },
            Variant::PoseKt => LossPlan { pose: AllCycles, use_kt: true, use_vt: false },
            Variant::PoseVt => LossPlan { pose: AllCycles, use_kt: false, use_vt: true },
            Variant::KtVtOnly => LossPlan { pose: None, use_kt: true, use_vt: true },
            Variant::LastCyclePoseOnly => {
                LossPlan { pose: LastCycleOnly, use_kt: false, use_vt: false }
            }
        }
    }

    /// Build the loss nodes for one trace. Distillation pairs are strictly
    /// adjacent, later cycle teaching earlier (for N=3: 3→2 and 2→1).
    pub fn assemble<T: Real>(
        &self,
        g: &mut Graph<T>,
        trace: &CycleTrace,
        gt: TensorId,
        alpha_kt: f64,
        alpha_vt: f64,
        detach_teacher: bool,
    ) -> Result<LossBreakdown> {
        let (pose_sum, pose_terms) = pose_loss(g, trace, gt)?;
        let l_pose = match self.pose {
            PoseSupervision::AllCycles => pose_sum,
            PoseSupervision::LastCycleOnly => *pose_terms.last().unwrap(),
            PoseSupervision::None => g.scalar(T::zero()),
        };
        let l_kt = if self.use_kt {
            keypoint_distill_loss(g, trace, detach_teacher)?
        } else {
            g.scalar(T::zero())
        };
        let l_vt = if self.use_vt {
            visual_distill_loss(g, trace, detach_teacher)?
        } else {
            g.scalar(T::zero())
        };
        let kt_w = g.scale(l_kt, real(alpha_kt));
        let vt_w = g.scale(l_vt, real(alpha_vt));
        let total = g.add(l_pose, kt_w)?;
        let total = g.add(total, vt_w)?;
        Ok(LossBreakdown {
            l_pose,
            l_pose_cycles: pose_terms,
            l_kt,
            l_vt,
            total,
        })
    }
}

/// Full loss with the configured weights and teacher detachment.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    trace: &CycleTrace,
    gt: TensorId,
    cfg: &crate::model::ModelConfig,
) -> Result<LossBreakdown> {
    LossPlan::full().assemble(g, trace, gt, cfg.alpha_kt, cfg.alpha_vt, cfg.detach_teacher)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_config(n_cycles: usize) -> ModelConfig {
        ModelConfig {
            image_size: [16, 16],
            patch_size: 8,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            num_keypoints: 5,
            heatmap_size: [4, 4],
            num_cycles: n_cycles,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn rand_images(n: usize, seed: u64) -> Vec<f32> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
    }

    /// Hand-built trace with scalarish token tensors for arithmetic checks.
    fn hand_trace(g: &mut Graph<f64>, kt_vals: &[[f64; 2]]) -> CycleTrace {
        let mut cycles = Vec::new();
        let mut first_tokens = None;
        for vals in kt_vals {
            let kt = g.constant(vals.to_vec(), &[1, 1, 2]).unwrap();
            let vt = g.constant(vals.to_vec(), &[1, 1, 2]).unwrap();
            let hm = g.constant(vec![0.0; 4], &[1, 1, 2, 2]).unwrap();
            let tokens = TokenBatch { visual: vt, keypoint: kt };
            if first_tokens.is_none() {
                first_tokens = Some(tokens);
            }
            cycles.push(CycleOutput { tokens, heatmaps: hm, attention: Vec::new() });
        }
        CycleTrace { cycles, input: first_tokens.unwrap() }
    }

    #[test]
    fn distill_loss_empty_sum_is_zero() {
        let mut g: Graph<f64> = Graph::new();
        let trace = hand_trace(&mut g, &[[0.5, -0.5]]);
        let kt = keypoint_distill_loss(&mut g, &trace, true).unwrap();
        let vt = visual_distill_loss(&mut g, &trace, true).unwrap();
        assert_eq!(g.scalar_value(kt), 0.0);
        assert_eq!(g.scalar_value(vt), 0.0);
    }

    #[test]
    fn distill_loss_identical_cycles_is_zero() {
        let mut g: Graph<f64> = Graph::new();
        let trace = hand_trace(&mut g, &[[1.0, 1.0], [1.0, 1.0]]);
        let kt = keypoint_distill_loss(&mut g, &trace, true).unwrap();
        assert_eq!(g.scalar_value(kt), 0.0);
    }

    #[test]
    fn distill_loss_hand_arithmetic() {
        // KT1=[0,0], KT2=[1,1], KT3=[3,3] → mse12 + mse23 = 1 + 4 = 5.
        let mut g: Graph<f64> = Graph::new();
        let trace = hand_trace(&mut g, &[[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]]);
        let kt = keypoint_distill_loss(&mut g, &trace, true).unwrap();
        assert_eq!(g.scalar_value(kt), 5.0);
        let vt = visual_distill_loss(&mut g, &trace, true).unwrap();
        assert_eq!(g.scalar_value(vt), 5.0);
    }

    #[test]
    fn pose_loss_examples() {
        let mut g: Graph<f64> = Graph::new();
        // Two cycles: P1 off by constant 1, P2 == GT → loss 1.
        let p1 = g.constant(vec![1.0; 4], &[1, 1, 2, 2]).unwrap();
        let p2 = g.constant(vec![0.0; 4], &[1, 1, 2, 2]).unwrap();
        let gt = g.constant(vec![0.0; 4], &[1, 1, 2, 2]).unwrap();
        let dummy = TokenBatch { visual: p1, keypoint: p1 };
        let trace = CycleTrace {
            cycles: vec![
                CycleOutput { tokens: dummy, heatmaps: p1, attention: vec![] },
                CycleOutput { tokens: dummy, heatmaps: p2, attention: vec![] },
            ],
            input: dummy,
        };
        let (total, terms) = pose_loss(&mut g, &trace, gt).unwrap();
        assert_eq!(g.scalar_value(total), 1.0);
        assert_eq!(terms.len(), 2);
        assert_eq!(g.scalar_value(terms[0]), 1.0);
        assert_eq!(g.scalar_value(terms[1]), 0.0);

        // Every prediction equal to ground truth: zero.
        let all_match = CycleTrace {
            cycles: vec![
                CycleOutput { tokens: dummy, heatmaps: p2, attention: vec![] },
                CycleOutput { tokens: dummy, heatmaps: p2, attention: vec![] },
            ],
            input: dummy,
        };
        let (total, _) = pose_loss(&mut g, &all_match, gt).unwrap();
        assert_eq!(g.scalar_value(total), 0.0);

        // One cycle reduces to the plain heatmap MSE.
        let single = CycleTrace {
            cycles: vec![CycleOutput { tokens: dummy, heatmaps: p1, attention: vec![] }],
            input: dummy,
        };
        let (total, _) = pose_loss(&mut g, &single, gt).unwrap();
        let plain = g.mse(p1, gt).unwrap();
        assert_eq!(g.scalar_value(total), g.scalar_value(plain));
    }

    #[test]
    fn total_loss_weighting_arithmetic() {
        // l_pose=2, l_kt=4, l_vt=6, alpha=0.5 → total=7. Composed by hand
        // from scalar nodes to pin the weighting arithmetic.
        let mut g: Graph<f64> = Graph::new();
        let l_pose = g.scalar(2.0);
        let l_kt = g.scalar(4.0);
        let l_vt = g.scalar(6.0);
        let kt_w = g.scale(l_kt, 0.5);
        let vt_w = g.scale(l_vt, 0.5);
        let t = g.add(l_pose, kt_w).unwrap();
        let t = g.add(t, vt_w).unwrap();
        assert_eq!(g.scalar_value(t), 7.0);
    }

    #[test]
    fn zero_alpha_total_equals_pose_exactly() {
        let cfg = ModelConfig {
            alpha_kt: 0.0,
            alpha_vt: 0.0,
            ..tiny_config(2)
        };
        let model: Model<f32> = Model::init(cfg.clone()).unwrap();
        let imgs = rand_images(cfg.in_channels * 16 * 16, 1);
        let mut g = Graph::new();
        let binding = model.bind(&mut g, true);
        let trace = model
            .forward_images(&mut g, &binding, &imgs, 1, 2, &mut Mode::Eval)
            .unwrap();
        let gt = g
            .constant(vec![0.1; cfg.num_keypoints * 16], &[1, cfg.num_keypoints, 4, 4])
            .unwrap();
        let breakdown = total_loss(&mut g, &trace, gt, &cfg).unwrap();
        assert_eq!(
            g.scalar_value(breakdown.total),
            g.scalar_value(breakdown.l_pose)
        );
    }

    #[test]
    fn shipped_default_alphas() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.alpha_kt, 5e-6);
        assert_eq!(cfg.alpha_vt, 5e-6);
        assert!(cfg.detach_teacher);
    }

    #[test]
    fn variant_plans() {
        let pose_only = LossPlan::for_variant(Variant::PoseOnly);
        assert!(!pose_only.use_kt && !pose_only.use_vt);
        assert_eq!(pose_only.pose, PoseSupervision::AllCycles);

        assert_eq!(LossPlan::for_variant(Variant::Full), LossPlan::full());

        let ktvt = LossPlan::for_variant(Variant::KtVtOnly);
        assert_eq!(ktvt.pose, PoseSupervision::None);

        let last = LossPlan::for_variant(Variant::LastCyclePoseOnly);
        assert_eq!(last.pose, PoseSupervision::LastCycleOnly);
        assert!(!last.use_kt && !last.use_vt);

        assert!("bogus".parse::<Variant>().is_err());
        assert_eq!("pose+kt".parse::<Variant>().unwrap(), Variant::PoseKt);
    }

    #[test]
    fn variant_breakdowns_on_real_trace() {
        let cfg = tiny_config(2);
        let model: Model<f32> = Model::init(cfg.clone()).unwrap();
        let imgs = rand_images(cfg.in_channels * 16 * 16, 2);
        let mut g = Graph::new();
        let binding = model.bind(&mut g, true);
        let trace = model
            .forward_images(&mut g, &binding, &imgs, 1, 2, &mut Mode::Eval)
            .unwrap();
        let gt = g
            .constant(vec![0.0; cfg.num_keypoints * 16], &[1, cfg.num_keypoints, 4, 4])
            .unwrap();

        let b = LossPlan::for_variant(Variant::PoseOnly)
            .assemble(&mut g, &trace, gt, 0.5, 0.5, true)
            .unwrap();
        assert_eq!(g.scalar_value(b.l_kt), 0.0);
        assert_eq!(g.scalar_value(b.l_vt), 0.0);
        assert_eq!(g.scalar_value(b.total), g.scalar_value(b.l_pose));

        let b = LossPlan::for_variant(Variant::KtVtOnly)
            .assemble(&mut g, &trace, gt, 0.5, 0.5, true)
            .unwrap();
        assert_eq!(g.scalar_value(b.l_pose), 0.0);
        let expect = 0.5 * g.scalar_value(b.l_kt) + 0.5 * g.scalar_value(b.l_vt);
        assert!((g.scalar_value(b.total) - expect).abs() < 1e-6);

        let b = LossPlan::for_variant(Variant::LastCyclePoseOnly)
            .assemble(&mut g, &trace, gt, 0.5, 0.5, true)
            .unwrap();
        assert_eq!(g.scalar_value(b.l_pose), g.scalar_value(b.l_pose_cycles[1]));
    }

    #[test]
    fn n1_forward_matches_plain_stack_plus_head_bitwise() {
        let cfg = tiny_config(1);
        let model: Model<f32> = Model::init(cfg.clone()).unwrap();
        let imgs = rand_images(cfg.in_channels * 16 * 16, 7);

        let mut g = Graph::new();
        let binding = model.bind(&mut g, false);
        let trace = model
            .forward_images(&mut g, &binding, &imgs, 1, 1, &mut Mode::Eval)
            .unwrap();
        let via_cycle = g.value(trace.cycles[0].heatmaps).to_vec();

        let mut g2 = Graph::new();
        let b2 = model.bind(&mut g2, false);
        let visual = model.patch_embed(&mut g2, &b2, &imgs, 1).unwrap();
        let keypoint = model.keypoint_tokens(&mut g2, &b2, 1).unwrap();
        let (out, _) = model
            .stack_forward(&mut g2, &b2, TokenBatch { visual, keypoint }, &mut Mode::Eval)
            .unwrap();
        let hm = model.heatmap_head(&mut g2, &b2, out.keypoint).unwrap();
        assert_eq!(via_cycle, g2.value(hm));
    }

    #[test]
    fn n2_cycle2_matches_external_double_application() {
        let cfg = tiny_config(2);
        let model: Model<f32> = Model::init(cfg.clone()).unwrap();
        let imgs = rand_images(cfg.in_channels * 16 * 16, 8);

        let mut g = Graph::new();
        let binding = model.bind(&mut g, false);
        let trace = model
            .forward_images(&mut g, &binding, &imgs, 1, 2, &mut Mode::Eval)
            .unwrap();
        let kt2 = g.value(trace.cycles[1].tokens.keypoint).to_vec();
        let vt2 = g.value(trace.cycles[1].tokens.visual).to_vec();

        // Independent double application of the stack.
        let mut g2 = Graph::new();
        let b2 = model.bind(&mut g2, false);
        let visual = model.patch_embed(&mut g2, &b2, &imgs, 1).unwrap();
        let keypoint = model.keypoint_tokens(&mut g2, &b2, 1).unwrap();
        let (mid, _) = model
            .stack_forward(&mut g2, &b2, TokenBatch { visual, keypoint }, &mut Mode::Eval)
            .unwrap();
        let (out, _) = model.stack_forward(&mut g2, &b2, mid, &mut Mode::Eval).unwrap();
        assert_eq!(kt2, g2.value(out.keypoint));
        assert_eq!(vt2, g2.value(out.visual));
    }

    #[test]
    fn n3_trace_shapes_constant_across_cycles() {
        let cfg = tiny_config(3);
        let model: Model<f32> = Model::init(cfg.clone()).unwrap();
        let imgs = rand_images(2 * cfg.in_channels * 16 * 16, 9);
        let mut g = Graph::new();
        let binding = model.bind(&mut g, false);
        let trace = model
            .forward_images(&mut g, &binding, &imgs, 2, 3, &mut Mode::Eval)
            .unwrap();
        assert_eq!(trace.num_cycles(), 3);
        let kt_shape = g.shape(trace.cycles[0].tokens.keypoint).to_vec();
        let vt_shape = g.shape(trace.cycles[0].tokens.visual).to_vec();
        let hm_shape = g.shape(trace.cycles[0].heatmaps).to_vec();
        for c in &trace.cycles {
            assert_eq!(g.shape(c.tokens.keypoint), &kt_shape[..]);
            assert_eq!(g.shape(c.tokens.visual), &vt_shape[..]);
            assert_eq!(g.shape(c.heatmaps), &hm_shape[..]);
        }
        assert_eq!(hm_shape, vec![2, cfg.num_keypoints, 4, 4]);
    }

    #[test]
    fn attention_accessor_bounds() {
        let cfg = tiny_config(2);
        let model: Model<f32> = Model::init(cfg.clone()).unwrap();
        let imgs = rand_images(cfg.in_channels * 16 * 16, 55);
        let mut g = Graph::new();
        let binding = model.bind(&mut g, false);
        let trace = model
            .forward_images(&mut g, &binding, &imgs, 1, 2, &mut Mode::Eval)
            .unwrap();
        assert!(trace.attention(1, 0).is_ok());
        assert!(trace.attention(2, cfg.num_layers - 1).is_ok());
        assert!(trace.attention(3, 0).is_err());
        assert!(trace.attention(0, 0).is_err());
        assert!(trace.attention(1, cfg.num_layers).is_err());
    }

    #[test]
    fn single_pass_matches_cycle1_bitwise() {
        let cfg = tiny_config(2);
        let model: Model<f32> = Model::init(cfg.clone()).unwrap();
        for seed in 0..10 {
            let imgs = rand_images(cfg.in_channels * 16 * 16, 100 + seed);
            let (hm, coords) = model.single_pass_inference(&imgs, 1).unwrap();
            let mut g = Graph::new();
            let binding = model.bind(&mut g, false);
            let trace = model
                .forward_images(&mut g, &binding, &imgs, 1, 2, &mut Mode::Eval)
                .unwrap();
            assert_eq!(hm, g.value(trace.cycles[0].heatmaps));
            assert_eq!(coords.len(), cfg.num_keypoints);
        }
    }

    #[test]
    fn teacher_gradient_is_exactly_zero_when_detached() {
        let cfg = tiny_config(2);
        let model: Model<f64> = Model::init(cfg.clone()).unwrap();
        let imgs: Vec<f64> = rand_images(cfg.in_channels * 16 * 16, 11)
            .into_iter()
            .map(|v| v as f64)
            .collect();
        let mut g = Graph::new();
        let binding = model.bind(&mut g, true);
        let trace = model
            .forward_images(&mut g, &binding, &imgs, 1, 2, &mut Mode::Eval)
            .unwrap();

        // Distillation losses alone, teacher detached: the teacher-side mse
        // argument is a detach node, so no gradient reaches cycle-2 tokens
        // through these terms.
        let kt = keypoint_distill_loss(&mut g, &trace, true).unwrap();
        let vt = visual_distill_loss(&mut g, &trace, true).unwrap();
        let loss = g.add(kt, vt).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(trace.cycles[1].tokens.keypoint).is_none());
        assert!(g.grad(trace.cycles[1].tokens.visual).is_none());
        // The student side does receive gradient.
        assert!(g.grad(trace.cycles[0].tokens.keypoint).is_some());
        assert!(g.grad(trace.cycles[0].tokens.visual).is_some());
    }

    #[test]
    fn param_count_independent_of_cycles() {
        let counts: Vec<usize> = [1, 2, 3]
            .iter()
            .map(|&n| Model::<f32>::init(tiny_config(n)).unwrap().num_params())
            .collect();
        assert_eq!(counts[0], counts[1]);
        assert_eq!(counts[1], counts[2]);
    }

    #[test]
    fn flop_counter_single_pass_cost_matches_baseline() {
        let n1 = tiny_config(1);
        let n2 = tiny_config(2);
        // Single-pass inference of the 2-cycle-trained model costs the same
        // as the 1-cycle baseline.
        assert_eq!(n1.flops_per_image(1), n2.flops_per_image(1));
        assert!(n2.flops_per_image(2) > n2.flops_per_image(1));
        assert_eq!(n1.param_count(), n2.param_count());
    }
}
