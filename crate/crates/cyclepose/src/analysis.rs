//! Analysis exports: per-layer parameter statistics and attention-map dumps.

use crate::autodiff::{Graph, Real};
use crate::data::DataConfig;
use crate::model::{Mode, Model};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_BINS: usize = 41;

/// Value histogram with `counts.len() == edges.len() - 1`; counts sum to the
/// group's parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

fn histogram(values: &[f64], bins: usize, limit: f64) -> Histogram {
    let lim = limit.max(1e-12);
    let width = 2.0 * lim / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| -lim + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v + lim) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Histogram { edges, counts }
}

/// Statistics for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    pub count: usize,
    pub std: f64,
    /// Fraction of weights with |w| < tau.
    pub near_zero_fraction: f64,
    pub histogram: Histogram,
}

fn group_stats(name: &str, values: &[f64], tau: f64, bins: usize, limit: Option<f64>) -> GroupStats {
    let n = values.len().max(1) as f64;
    let mean: f64 = values.iter().sum::<f64>() / n;
    let var: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let near = values.iter().filter(|v| v.abs() < tau).count();
    let lim = limit.unwrap_or_else(|| values.iter().fold(0.0f64, |a, &v| a.max(v.abs())));
    GroupStats {
        name: name.to_string(),
        count: values.len(),
        std: var.sqrt(),
        near_zero_fraction: near as f64 / values.len().max(1) as f64,
        histogram: histogram(values, bins, lim),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamStats {
    pub tool_version: String,
    pub tau: f64,
    pub total_params: usize,
    pub groups: Vec<GroupStats>,
}

/// Collect the values of one named group. Encoder layer groups hold the
/// attention and MLP weights and biases; layer-norm affine parameters are
/// left out since their all-ones initialization would distort near-zero
/// statistics.
fn group_values<T: Real>(model: &Model<T>, group: &str) -> Vec<f64> {
    let mut out = Vec::new();
    for p in model.params() {
        let in_group = if let Some(rest) = p.name.strip_prefix(&format!("{group}.")) {
            !rest.starts_with("ln")
        } else {
            p.name == group
        };
        if in_group {
            out.extend(p.data.iter().map(|v| v.to_f64().unwrap()));
        }
    }
    out
}

fn group_names<T: Real>(model: &Model<T>) -> Vec<String> {
    let mut names = vec![
        "patch_embed".to_string(),
        "pos_embed".to_string(),
        "keypoint_tokens".to_string(),
    ];
    for l in 0..model.config.num_layers {
        names.push(format!("layers.{l}"));
    }
    names.push("head".to_string());
    names
}

/// Per-group standard deviation, near-zero fraction and histogram.
/// `layer_filter` keeps only groups whose name contains the pattern.
pub fn param_stats<T: Real>(
    model: &Model<T>,
    layer_filter: Option<&str>,
    tau: f64,
    bins: usize,
) -> ParamStats {
    let groups: Vec<GroupStats> = group_names(model)
        .iter()
        .filter(|n| layer_filter.is_none_or(|f| n.contains(f)))
        .map(|n| group_stats(n, &group_values(model, n), tau, bins, None))
        .collect();
    ParamStats {
        tool_version: crate::VERSION.to_string(),
        tau,
        total_params: groups.iter().map(|g| g.count).sum(),
        groups,
    }
}

/// Side-by-side comparison of two checkpoints' statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub std_a: f64,
    pub std_b: f64,
    pub near_zero_a: f64,
    pub near_zero_b: f64,
    pub histogram_a: Histogram,
    pub histogram_b: Histogram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatsComparison {
    pub tool_version: String,
    pub tau: f64,
    pub rows: Vec<ComparisonRow>,
    /// Number of groups where checkpoint B has strictly fewer near-zero
    /// weights than A. Reported, not asserted.
    pub groups_where_b_has_fewer_near_zero: usize,
}

/// Compare two models group-by-group with shared histogram edges.
/// Architectures must match.
pub fn compare_param_stats<T: Real>(
    a: &Model<T>,
    b: &Model<T>,
    layer_filter: Option<&str>,
    tau: f64,
    bins: usize,
) -> Result<StatsComparison> {
    let arch = |m: &Model<T>| -> Vec<(String, Vec<usize>)> {
        m.params().iter().map(|p| (p.name.clone(), p.shape.clone())).collect()
    };
    if arch(a) != arch(b) {
        return Err(Error::Config(
            "cannot compare checkpoints with different architectures".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut fewer = 0usize;
    for name in group_names(a)
        .iter()
        .filter(|n| layer_filter.is_none_or(|f| n.contains(f)))
    {
        let va = group_values(a, name);
        let vb = group_values(b, name);
        let lim = va
            .iter()
            .chain(&vb)
            .fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let sa = group_stats(name, &va, tau, bins, Some(lim));
        let sb = group_stats(name, &vb, tau, bins, Some(lim));
        if sb.near_zero_fraction < sa.near_zero_fraction {
            fewer += 1;
        }
        rows.push(ComparisonRow {
            name: name.clone(),
            std_a: sa.std,
            std_b: sb.std,
            near_zero_a: sa.near_zero_fraction,
            near_zero_b: sb.near_zero_fraction,
            histogram_a: sa.histogram,
            histogram_b: sb.histogram,
        });
    }
    Ok(StatsComparison {
        tool_version: crate::VERSION.to_string(),
        tau,
        rows,
        groups_where_b_has_fewer_near_zero: fewer,
    })
}

/// Write one CSV file with a metadata comment line, a header row, and data
/// rows.
pub fn write_csv(
    path: &Path,
    config_hash: &str,
    header: &[String],
    rows: &[Vec<f64>],
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# config_hash={config_hash} tool_version={}", crate::VERSION)?;
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Re-run a sample through the model with `cycles` passes and export, for
/// every cycle and layer, (a) each keypoint token's attention over the visual
/// tokens reshaped onto the patch grid and (b) the keypoint-to-keypoint
/// attention block. Maps are averaged over heads; `per_head` additionally
/// writes each head's maps.
///
/// Returns the written file paths; the head-averaged set always counts
/// `cycles * layers * (K + 1)` files.
pub fn export_attention<T: Real>(
    model: &Model<T>,
    data_cfg: &DataConfig,
    sample_seed: u64,
    cycles: usize,
    out_dir: &Path,
    per_head: bool,
    config_hash: &str,
) -> Result<Vec<PathBuf>> {
    let cfg = &model.config;
    if cycles < 1 || cycles > cfg.num_cycles {
        return Err(Error::Config(format!(
            "requested {cycles} cycles, checkpoint was trained with {}",
            cfg.num_cycles
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let sample = crate::data::gen_sample(sample_seed, data_cfg)?;
    let images: Vec<T> = sample.image.iter().map(|&v| T::from_f32(v).unwrap()).collect();

    let mut g: Graph<T> = Graph::new();
    let binding = model.bind(&mut g, false);
    let trace = model.forward_images(&mut g, &binding, &images, 1, cycles, &mut Mode::Eval)?;

    let k = cfg.num_keypoints;
    let s = cfg.seq_len();
    let heads = cfg.num_heads;
    let [gh, gw] = cfg.patch_grid();
    let mut files = Vec::new();

    for (c, cycle) in trace.cycles.iter().enumerate() {
        for (l, &attn_id) in cycle.attention.iter().enumerate() {
            let attn = g.value(attn_id); // [heads, S, S] for batch 1
            let averaged: Vec<f64> = (0..s * s)
                .map(|i| {
                    (0..heads)
                        .map(|h| attn[h * s * s + i].to_f64().unwrap())
                        .sum::<f64>()
                        / heads as f64
                })
                .collect();
            let mut emit = |tag: &str, map: &[f64]| -> Result<()> {
                // Per-keypoint attention over visual tokens, on the patch grid.
                for kp in 0..k {
                    let row = &map[kp * s..(kp + 1) * s];
                    let grid: Vec<Vec<f64>> = (0..gh)
                        .map(|gy| (0..gw).map(|gx| row[k + gy * gw + gx]).collect())
                        .collect();
                    let path = out_dir.join(format!("attn_cycle{}_layer{}{}_kp{}.csv", c + 1, l, tag, kp));
                    let header: Vec<String> = (0..gw).map(|i| format!("px{i}")).collect();
                    write_csv(&path, config_hash, &header, &grid)?;
                    files.push(path);
                }
                // Keypoint-to-keypoint block.
                let block: Vec<Vec<f64>> = (0..k)
                    .map(|i| (0..k).map(|j| map[i * s + j]).collect())
                    .collect();
                let path = out_dir.join(format!("attn_cycle{}_layer{}{}_keypoints.csv", c + 1, l, tag));
                let header: Vec<String> = (0..k).map(|i| format!("kp{i}")).collect();
                write_csv(&path, config_hash, &header, &block)?;
                files.push(path);
                Ok(())
            };
            emit("", &averaged)?;
            if per_head {
                for h in 0..heads {
                    let head_map: Vec<f64> = attn[h * s * s..(h + 1) * s * s]
                        .iter()
                        .map(|v| v.to_f64().unwrap())
                        .collect();
                    emit(&format!("_head{h}"), &head_map)?;
                }
            }
        }
    }
    Ok(files)
}
