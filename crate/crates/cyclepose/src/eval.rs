//! Heatmap decoding, PCK scoring, and model evaluation.

use crate::autodiff::{Graph, Real};
use crate::distill::CycleTrace;
use crate::model::{Mode, Model};
use crate::Result;
use serde::{Deserialize, Serialize};

/// Decode `[B, K, Hh, Wh]` heatmaps to image-space coordinates by argmax.
/// Ties break toward the smallest row-major index; the winning cell maps to
/// its pixel center at image resolution.
pub fn decode_heatmaps<T: Real>(
    heatmaps: &[T],
    batch: usize,
    num_keypoints: usize,
    heatmap_size: [usize; 2],
    image_size: [usize; 2],
) -> Vec<[f64; 2]> {
    let [hh, hw] = heatmap_size;
    let sx = image_size[1] as f64 / hw as f64;
    let sy = image_size[0] as f64 / hh as f64;
    let cells = hh * hw;
    let mut out = Vec::with_capacity(batch * num_keypoints);
    for bk in 0..batch * num_keypoints {
        let map = &heatmaps[bk * cells..(bk + 1) * cells];
        let mut best = 0usize;
        for (i, &v) in map.iter().enumerate() {
            if v > map[best] {
                best = i;
            }
        }
        let (u, v) = (best % hw, best / hw);
        out.push([(u as f64 + 0.5) * sx, (v as f64 + 0.5) * sy]);
    }
    out
}

/// Fraction of keypoints whose Euclidean error is within `r * max(H, W)`.
pub fn pck(pred: &[[f64; 2]], gt: &[[f64; 2]], r: f64, image_size: [usize; 2]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "keypoint counts must match");
    if pred.is_empty() {
        return 0.0;
    }
    let threshold = r * image_size[0].max(image_size[1]) as f64;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| {
            let dx = p[0] - g[0];
            let dy = p[1] - g[1];
            (dx * dx + dy * dy).sqrt() <= threshold
        })
        .count();
    hits as f64 / pred.len() as f64
}

fn mean_pixel_error(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
        .sum();
    total / pred.len() as f64
}

/// Metrics for one cycle's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMetrics {
    pub cycle: usize,
    pub pck_005: f64,
    pub pck_01: f64,
    pub pck_02: f64,
    pub mean_px_error: f64,
}

/// Evaluation over one dataset. Top-level numbers are cycle-1 (deployment)
/// metrics; `per_cycle` holds every evaluated cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub pck_005: f64,
    pub pck_01: f64,
    pub pck_02: f64,
    pub mean_px_error: f64,
    pub per_cycle: Vec<CycleMetrics>,
    pub wall_clock_secs: f64,
    /// Training step count at evaluation time (0 for standalone evals).
    pub steps: usize,
}

impl EvalReport {
    /// Equality on every metric, ignoring wall-clock time.
    pub fn metrics_eq(&self, other: &EvalReport) -> bool {
        self.pck_005 == other.pck_005
            && self.pck_01 == other.pck_01
            && self.pck_02 == other.pck_02
            && self.mean_px_error == other.mean_px_error
            && self.per_cycle == other.per_cycle
            && self.steps == other.steps
    }

    /// Cycle metrics for the last evaluated cycle.
    pub fn last_cycle(&self) -> &CycleMetrics {
        self.per_cycle.last().expect("at least one cycle evaluated")
    }
}

/// Evaluate a model over a dataset, running `n_cycles` passes and scoring the
/// decoded predictions of every cycle. Never mutates the model.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    dataset: &crate::data::Dataset,
    n_cycles: usize,
    batch_size: usize,
) -> Result<EvalReport> {
    let start = std::time::Instant::now();
    let cfg = &model.config;
    let mut preds: Vec<Vec<[f64; 2]>> = vec![Vec::new(); n_cycles];
    let mut gts: Vec<[f64; 2]> = Vec::new();

    let mut i = 0;
    while i < dataset.len() {
        let upper = (i + batch_size).min(dataset.len());
        let indices: Vec<usize> = (i..upper).collect();
        let (images, _, keypoints) = dataset.batch::<T>(&indices);
        gts.extend_from_slice(&keypoints);

        let mut g: Graph<T> = Graph::new();
        let binding = model.bind(&mut g, false);
        let trace: CycleTrace = model.forward_images(
            &mut g,
            &binding,
            &images,
            indices.len(),
            n_cycles,
            &mut Mode::Eval,
        )?;
        for (c, cycle) in trace.cycles.iter().enumerate() {
            preds[c].extend(decode_heatmaps(
                g.value(cycle.heatmaps),
                indices.len(),
                cfg.num_keypoints,
                cfg.heatmap_size,
                cfg.image_size,
            ));
        }
        i = upper;
    }

    let per_cycle: Vec<CycleMetrics> = preds
        .iter()
        .enumerate()
        .map(|(c, p)| CycleMetrics {
            cycle: c + 1,
            pck_005: pck(p, &gts, 0.05, cfg.image_size),
            pck_01: pck(p, &gts, 0.1, cfg.image_size),
            pck_02: pck(p, &gts, 0.2, cfg.image_size),
            mean_px_error: mean_pixel_error(p, &gts),
        })
        .collect();

    let first = per_cycle[0].clone();
    Ok(EvalReport {
        pck_005: first.pck_005,
        pck_01: first.pck_01,
        pck_02: first.pck_02,
        mean_px_error: first.mean_px_error,
        per_cycle,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        steps: 0,
    })
}
