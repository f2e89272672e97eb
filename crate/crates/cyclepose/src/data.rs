//! Procedural keypoint-localization dataset: articulated stick figures with
//! background clutter, rendered deterministically from a per-sample seed, plus
//! Gaussian ground-truth heatmap rendering.

use crate::autodiff::Real;
use crate::config::hash_json;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Number of joints in the stick-figure template: head, both hands, both feet.
pub const SKELETON_KEYPOINTS: usize = 5;

/// Dataset geometry and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub image_size: [usize; 2],
    /// Must equal [`SKELETON_KEYPOINTS`]; the figure template is fixed.
    pub num_keypoints: usize,
    pub heatmap_size: [usize; 2],
    /// Gaussian std in heatmap pixels.
    pub sigma: f64,
    /// Number of random background strokes per image.
    pub clutter: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// First sample seed; train and val occupy disjoint ranges above it.
    pub base_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            image_size: [64, 64],
            num_keypoints: SKELETON_KEYPOINTS,
            heatmap_size: [16, 16],
            sigma: 1.5,
            clutter: 6,
            n_train: 2048,
            n_val: 256,
            base_seed: 1000,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_keypoints != SKELETON_KEYPOINTS {
            return Err(Error::Config(format!(
                "num_keypoints {} does not match the {SKELETON_KEYPOINTS}-joint skeleton template",
                self.num_keypoints
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if self.image_size.iter().any(|&s| s < 16) {
            return Err(Error::Config("image_size entries must be >= 16".into()));
        }
        if self.heatmap_size.iter().any(|&s| s < 2) {
            return Err(Error::Config("heatmap_size entries must be >= 2".into()));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::Config("n_train and n_val must be positive".into()));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        3
    }

    pub fn image_len(&self) -> usize {
        self.channels() * self.image_size[0] * self.image_size[1]
    }

    pub fn heatmap_len(&self) -> usize {
        self.num_keypoints * self.heatmap_size[0] * self.heatmap_size[1]
    }
}

/// One generated sample. `image` is `[3, H, W]` in `[0, 1]`, keypoints are
/// continuous image-pixel coordinates `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: Vec<f32>,
    pub keypoints: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    pub sample_seed: u64,
}

/// Ground-truth heatmaps `[K, Hh, Wh]` with peak value 1 at each keypoint's
/// nearest heatmap pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTarget {
    pub data: Vec<f32>,
    pub sigma: f64,
    pub size: [usize; 2],
}

struct Canvas<'a> {
    px: &'a mut [f32],
    h: usize,
    w: usize,
}

impl Canvas<'_> {
    fn stamp(&mut self, x: f64, y: f64, rgb: [f32; 3]) {
        let (xi, yi) = (x.round() as isize, y.round() as isize);
        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let (px, py) = (xi + dx, yi + dy);
            if px >= 0 && py >= 0 && (px as usize) < self.w && (py as usize) < self.h {
                let (px, py) = (px as usize, py as usize);
                for (c, &v) in rgb.iter().enumerate() {
                    let idx = c * self.h * self.w + py * self.w + px;
                    self.px[idx] = (self.px[idx] + v).min(1.0);
                }
            }
        }
    }

    fn line(&mut self, a: [f64; 2], b: [f64; 2], rgb: [f32; 3]) {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt().max(1e-6);
        let steps = (len * 2.0).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.stamp(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), rgb);
        }
    }

    fn circle(&mut self, c: [f64; 2], r: f64, rgb: [f32; 3]) {
        let steps = (2.0 * std::f64::consts::PI * r * 2.0).ceil() as usize;
        for s in 0..steps {
            let a = s as f64 / steps as f64 * 2.0 * std::f64::consts::PI;
            self.stamp(c[0] + r * a.cos(), c[1] + r * a.sin(), rgb);
        }
    }
}

/// Generate one sample, fully determined by `(seed, config)`.
///
/// The figure is drawn in local coordinates first (torso, head circle, two
/// arms, two legs with jittered lengths and angles around a global rotation),
/// then placed so that every stroke stays inside the image. Keypoints are the
/// head center, hand tips, and foot tips. Background clutter strokes share the
/// figure's intensity range so the task is not separable by brightness alone.
pub fn gen_sample(seed: u64, cfg: &DataConfig) -> Result<SyntheticSample> {
    cfg.validate()?;
    let [h, w] = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Unit-scale geometry first (torso length 1), origin at the hip; the
    // scale is fitted to the frame afterwards so placement always succeeds.
    let rot: f64 = rng.gen_range(-0.5..0.5);
    let dir = |angle: f64, len: f64| -> [f64; 2] { [len * angle.sin(), -len * angle.cos()] };
    let torso_top = dir(rot, 1.0);
    let head_r = rng.gen_range(0.22..0.30);
    let head = [
        torso_top[0] + dir(rot, head_r * 1.6)[0],
        torso_top[1] + dir(rot, head_r * 1.6)[1],
    ];
    let mut limb = |base: [f64; 2], side: f64, spread: std::ops::Range<f64>, len_f: std::ops::Range<f64>| {
        let angle = rot + side * rng.gen_range(spread);
        let len = rng.gen_range(len_f);
        [base[0] + dir(angle, len)[0], base[1] + dir(angle, len)[1]]
    };
    let hand_l = limb(torso_top, -1.0, 0.5..1.5, 0.55..0.85);
    let hand_r = limb(torso_top, 1.0, 0.5..1.5, 0.55..0.85);
    let foot_l = limb([0.0, 0.0], -1.0, 2.5..3.0, 0.6..0.9);
    let foot_r = limb([0.0, 0.0], 1.0, 2.5..3.0, 0.6..0.9);

    let local = [head, hand_l, hand_r, foot_l, foot_r];
    // Extent anchors include the head circle's bounding box.
    let anchors = [
        [0.0, 0.0],
        torso_top,
        [head[0] - head_r, head[1] - head_r],
        [head[0] + head_r, head[1] + head_r],
        hand_l,
        hand_r,
        foot_l,
        foot_r,
    ];
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in anchors {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let pad = 2.5; // stroke stamp margin in pixels
    let avail_x = w as f64 - 1.0 - 2.0 * pad;
    let avail_y = h as f64 - 1.0 - 2.0 * pad;
    let max_scale = (avail_x / (max_x - min_x)).min(avail_y / (max_y - min_y));
    let scale = rng.gen_range(0.55..0.85) * max_scale;
    let head_r = head_r * scale;

    // Valid hip placements keep the whole figure inside the frame.
    let cx = rng.gen_range(pad - min_x * scale..w as f64 - 1.0 - pad - max_x * scale);
    let cy = rng.gen_range(pad - min_y * scale..h as f64 - 1.0 - pad - max_y * scale);
    let place = |p: [f64; 2]| [p[0] * scale + cx, p[1] * scale + cy];

    // Background: dim base tone plus per-pixel noise.
    let mut image = vec![0.0f32; cfg.image_len()];
    for c in 0..3 {
        let base: f32 = rng.gen_range(0.05..0.20);
        for v in image[c * h * w..(c + 1) * h * w].iter_mut() {
            *v = base + rng.gen_range(0.0..0.08);
        }
    }
    let mut canvas = Canvas { px: &mut image, h, w };

    // Clutter strokes, intensity overlapping the figure's.
    for _ in 0..cfg.clutter {
        let a = [rng.gen_range(0.0..w as f64 - 1.0), rng.gen_range(0.0..h as f64 - 1.0)];
        let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let len = rng.gen_range(4.0..0.35 * w as f64);
        let b = [
            (a[0] + len * ang.cos()).clamp(0.0, w as f64 - 1.0),
            (a[1] + len * ang.sin()).clamp(0.0, h as f64 - 1.0),
        ];
        let tint: [f32; 3] = [
            rng.gen_range(0.25..0.75),
            rng.gen_range(0.25..0.75),
            rng.gen_range(0.25..0.75),
        ];
        canvas.line(a, b, tint);
    }

    // The figure itself, brighter with a mild random tint.
    let tint: [f32; 3] = [
        rng.gen_range(0.55..0.95),
        rng.gen_range(0.55..0.95),
        rng.gen_range(0.55..0.95),
    ];
    let hip = place([0.0, 0.0]);
    let neck = place(torso_top);
    canvas.line(hip, neck, tint);
    canvas.line(neck, place(hand_l), tint);
    canvas.line(neck, place(hand_r), tint);
    canvas.line(hip, place(foot_l), tint);
    canvas.line(hip, place(foot_r), tint);
    canvas.circle(place(head), head_r, tint);

    let keypoints: Vec<[f64; 2]> = local.iter().map(|&p| place(p)).collect();
    debug_assert!(keypoints
        .iter()
        .all(|p| p[0] >= 0.0 && p[0] < w as f64 && p[1] >= 0.0 && p[1] < h as f64));

    Ok(SyntheticSample {
        image,
        keypoints,
        visibility: vec![true; SKELETON_KEYPOINTS],
        sample_seed: seed,
    })
}

/// Render unnormalized Gaussian heatmaps. Each keypoint is first snapped to
/// its nearest heatmap cell (pixel-center mapping), so the peak cell holds
/// exactly 1; values fall off as `exp(-(du^2 + dv^2) / (2 sigma^2))` in cell
/// units.
pub fn render_heatmap(
    keypoints: &[[f64; 2]],
    sigma: f64,
    heatmap_size: [usize; 2],
    image_size: [usize; 2],
) -> HeatmapTarget {
    let [hh, hw] = heatmap_size;
    let sx = image_size[1] as f64 / hw as f64;
    let sy = image_size[0] as f64 / hh as f64;
    let mut data = vec![0.0f32; keypoints.len() * hh * hw];
    let denom = 2.0 * sigma * sigma;
    for (k, kp) in keypoints.iter().enumerate() {
        let cu = (kp[0] / sx - 0.5).round().clamp(0.0, hw as f64 - 1.0);
        let cv = (kp[1] / sy - 0.5).round().clamp(0.0, hh as f64 - 1.0);
        let map = &mut data[k * hh * hw..(k + 1) * hh * hw];
        for v in 0..hh {
            for u in 0..hw {
                let d2 = (u as f64 - cu).powi(2) + (v as f64 - cv).powi(2);
                map[v * hw + u] = (-d2 / denom).exp() as f32;
            }
        }
    }
    HeatmapTarget { data, sigma, size: heatmap_size }
}

/// Lazily generated split: samples come from a contiguous seed range and are
/// produced on demand, so nothing is materialized up front.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DataConfig,
    first_seed: u64,
    len: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn seed_at(&self, index: usize) -> u64 {
        self.first_seed + index as u64
    }

    pub fn sample(&self, index: usize) -> SyntheticSample {
        gen_sample(self.seed_at(index), &self.config).expect("config validated at split time")
    }

    /// Deterministic epoch ordering: Fisher-Yates keyed on the shuffle seed
    /// and epoch index.
    pub fn epoch_order(&self, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(shuffle_seed, epoch as u64));
        let mut order: Vec<usize> = (0..self.len).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        order
    }

    /// Assemble `[B, C, H, W]` images, `[B, K, Hh, Wh]` ground-truth heatmaps
    /// and keypoint coordinates for the given sample indices.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Vec<T>, Vec<T>, Vec<[f64; 2]>) {
        let cfg = &self.config;
        let mut images = Vec::with_capacity(indices.len() * cfg.image_len());
        let mut heatmaps = Vec::with_capacity(indices.len() * cfg.heatmap_len());
        let mut keypoints = Vec::with_capacity(indices.len() * cfg.num_keypoints);
        for &i in indices {
            let s = self.sample(i);
            images.extend(s.image.iter().map(|&v| T::from_f32(v).unwrap()));
            let hm = render_heatmap(&s.keypoints, cfg.sigma, cfg.heatmap_size, cfg.image_size);
            heatmaps.extend(hm.data.iter().map(|&v| T::from_f32(v).unwrap()));
            keypoints.extend_from_slice(&s.keypoints);
        }
        (images, heatmaps, keypoints)
    }
}

/// Derive a decorrelated stream seed (splitmix64 finalizer).
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Train/val datasets over disjoint seed ranges starting at
/// `config.base_seed`.
pub fn make_split(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    make_split_at(
        cfg,
        cfg.base_seed,
        cfg.n_train,
        cfg.base_seed + cfg.n_train as u64,
        cfg.n_val,
    )
}

/// Splits with explicit seed ranges; overlapping ranges are rejected.
pub fn make_split_at(
    cfg: &DataConfig,
    train_start: u64,
    n_train: usize,
    val_start: u64,
    n_val: usize,
) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let train_end = train_start + n_train as u64;
    let val_end = val_start + n_val as u64;
    if train_start < val_end && val_start < train_end {
        return Err(Error::Dataset(format!(
            "seed ranges overlap: train {train_start}..{train_end}, val {val_start}..{val_end}"
        )));
    }
    Ok((
        Dataset { config: cfg.clone(), first_seed: train_start, len: n_train },
        Dataset { config: cfg.clone(), first_seed: val_start, len: n_val },
    ))
}

const DUMP_MAGIC: &[u8; 4] = b"CPDS";
const DUMP_VERSION: u32 = 1;

/// Write one split to disk: magic, version, JSON header (config, its hash,
/// tool version, sample count), then fixed-size per-sample records of seed,
/// keypoints, visibility, and image data.
pub fn dump_split(path: &Path, dataset: &Dataset) -> Result<()> {
    let header = serde_json::json!({
        "config": dataset.config,
        "config_hash": hash_json(&dataset.config),
        "tool_version": crate::VERSION,
        "n_samples": dataset.len(),
    });
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(DUMP_MAGIC)?;
    f.write_all(&DUMP_VERSION.to_le_bytes())?;
    f.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for i in 0..dataset.len() {
        let s = dataset.sample(i);
        f.write_all(&s.sample_seed.to_le_bytes())?;
        for kp in &s.keypoints {
            f.write_all(&kp[0].to_le_bytes())?;
            f.write_all(&kp[1].to_le_bytes())?;
        }
        for &v in &s.visibility {
            f.write_all(&[v as u8])?;
        }
        for &v in &s.image {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a dumped split, verifying the stored config hash against `expected`.
pub fn load_split(path: &Path, expected: &DataConfig) -> Result<Vec<SyntheticSample>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Dataset(format!("{}: not a dataset dump", path.display())));
    }
    let mut u32buf = [0u8; 4];
    f.read_exact(&mut u32buf)?;
    if u32::from_le_bytes(u32buf) != DUMP_VERSION {
        return Err(Error::Dataset("unsupported dataset dump version".into()));
    }
    f.read_exact(&mut u32buf)?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: serde_json::Value = serde_json::from_slice(&header_bytes)?;
    let stored_hash = header["config_hash"].as_str().unwrap_or_default().to_string();
    if stored_hash != hash_json(expected) {
        return Err(Error::Dataset(format!(
            "config hash mismatch: file has {stored_hash}, expected {}",
            hash_json(expected)
        )));
    }
    let n = header["n_samples"].as_u64().unwrap_or(0) as usize;
    let k = expected.num_keypoints;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        let mut keypoints = Vec::with_capacity(k);
        for _ in 0..k {
            let mut x = [0u8; 8];
            let mut y = [0u8; 8];
            f.read_exact(&mut x)?;
            f.read_exact(&mut y)?;
            keypoints.push([f64::from_le_bytes(x), f64::from_le_bytes(y)]);
        }
        let mut vis = vec![0u8; k];
        f.read_exact(&mut vis)?;
        let mut image = vec![0.0f32; expected.image_len()];
        let mut fbuf = [0u8; 4];
        for v in image.iter_mut() {
            f.read_exact(&mut fbuf)?;
            *v = f32::from_le_bytes(fbuf);
        }
        samples.push(SyntheticSample {
            image,
            keypoints,
            visibility: vis.into_iter().map(|b| b != 0).collect(),
            sample_seed: seed,
        });
    }
    Ok(samples)
}
