//! Ablation harness: train a grid of configurations under identical seeds and
//! budgets, then tabulate per-cycle evaluation metrics.
//!
//! Three suites are built in:
//!   `losses`       — loss-term combinations at fixed architecture;
//!   `cycles`       — cycle/layer counts without distillation, supervising
//!                    and evaluating the last cycle;
//!   `distil_chain` — no cycling vs. 2-cycle (2→1) vs. 3-cycle (3→2, 2→1)
//!                    with the full loss.

use crate::config::RunConfig;
use crate::distill::{LossPlan, Variant, ALL_VARIANTS};
use crate::eval::EvalReport;
use crate::train::train;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Losses,
    Cycles,
    DistilChain,
}

impl Suite {
    pub fn id(&self) -> &'static str {
        match self {
            Suite::Losses => "losses",
            Suite::Cycles => "cycles",
            Suite::DistilChain => "distil_chain",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "losses" => Ok(Suite::Losses),
            "cycles" => Ok(Suite::Cycles),
            "distil_chain" | "distil-chain" => Ok(Suite::DistilChain),
            other => Err(Error::UnknownVariant {
                what: "ablation suite",
                got: other.to_string(),
                allowed: "losses, cycles, distil_chain",
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowSpec {
    pub id: String,
    pub layers: usize,
    pub cycles: usize,
    pub variant: Variant,
    /// Human-readable distillation chain, e.g. "2→1" or "none".
    pub distil: String,
}

fn chain_label(cycles: usize, distilled: bool) -> String {
    if !distilled || cycles < 2 {
        return "none".to_string();
    }
    let pairs: Vec<String> = (2..=cycles).rev().map(|i| format!("{i}→{}", i - 1)).collect();
    pairs.join(",")
}

fn suite_rows(suite: Suite, base_layers: usize, base_cycles: usize) -> Vec<RowSpec> {
    match suite {
        Suite::Losses => ALL_VARIANTS
            .iter()
            .map(|&variant| RowSpec {
                id: variant.id().to_string(),
                layers: base_layers,
                cycles: base_cycles,
                variant,
                distil: chain_label(
                    base_cycles,
                    matches!(variant, Variant::Full | Variant::PoseKt | Variant::PoseVt | Variant::KtVtOnly),
                ),
            })
            .collect(),
        Suite::Cycles => {
            let reduced = (base_layers / 3).max(1);
            [
                (base_layers, 1),
                (base_layers, 2),
                (base_layers, 3),
                (reduced, 2),
                (reduced, 3),
            ]
            .iter()
            .map(|&(layers, cycles)| RowSpec {
                id: format!("L{layers}_N{cycles}"),
                layers,
                cycles,
                variant: Variant::LastCyclePoseOnly,
                distil: "none".to_string(),
            })
            .collect()
        }
        Suite::DistilChain => [1usize, 2, 3]
            .iter()
            .map(|&cycles| RowSpec {
                id: format!("N{cycles}_{}", chain_label(cycles, true)),
                layers: base_layers,
                cycles,
                variant: Variant::Full,
                distil: chain_label(cycles, true),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowResult {
    #[serde(flatten)]
    pub spec: RowSpec,
    pub seeds: Vec<u64>,
    /// Final evaluation per seed, in seed order.
    pub per_seed: Vec<EvalReport>,
    pub mean_pck01_cycle1: f64,
    pub mean_pck01_last: f64,
    pub mean_px_error_cycle1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: Suite,
    pub tool_version: String,
    pub config_hash: String,
    /// Seeds shared by every row (model init and training streams).
    pub seeds: Vec<u64>,
    /// Data seed range shared by every row.
    pub data_base_seed: u64,
    pub rows: Vec<RowResult>,
}

/// Train every row of a suite under each seed and tabulate final evaluations.
/// Rows run in parallel; each job owns its model and RNG streams, so results
/// are deterministic regardless of scheduling.
pub fn run_ablation(suite: Suite, base: &RunConfig, seeds: &[u64]) -> Result<AblationReport> {
    base.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed required".into()));
    }
    let rows = suite_rows(suite, base.model.num_layers, base.model.num_cycles);

    let jobs: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|r| (0..seeds.len()).map(move |s| (r, s)))
        .collect();
    let results: Vec<Result<EvalReport>> = jobs
        .par_iter()
        .map(|&(r, s)| {
            let spec = &rows[r];
            let mut model_cfg = base.model.clone();
            model_cfg.num_layers = spec.layers;
            model_cfg.num_cycles = spec.cycles;
            model_cfg.seed = seeds[s];
            let mut train_cfg = base.train.clone();
            train_cfg.seed = seeds[s];
            train_cfg.checkpoint_path = None;
            let plan = LossPlan::for_variant(spec.variant);
            let run = train::<f32>(&model_cfg, &train_cfg, &base.data, &plan, None)?;
            Ok(run.final_eval)
        })
        .collect();

    let mut per_row: Vec<Vec<EvalReport>> = vec![Vec::new(); rows.len()];
    for ((r, _), res) in jobs.into_iter().zip(results) {
        per_row[r].push(res?);
    }

    let rows = rows
        .into_iter()
        .zip(per_row)
        .map(|(spec, per_seed)| {
            let n = per_seed.len() as f64;
            let mean_pck01_cycle1 = per_seed.iter().map(|e| e.pck_01).sum::<f64>() / n;
            let mean_pck01_last =
                per_seed.iter().map(|e| e.last_cycle().pck_01).sum::<f64>() / n;
            let mean_px_error_cycle1 =
                per_seed.iter().map(|e| e.mean_px_error).sum::<f64>() / n;
            RowResult {
                spec,
                seeds: seeds.to_vec(),
                per_seed,
                mean_pck01_cycle1,
                mean_pck01_last,
                mean_px_error_cycle1,
            }
        })
        .collect();

    Ok(AblationReport {
        suite,
        tool_version: crate::VERSION.to_string(),
        config_hash: base.hash(),
        seeds: seeds.to_vec(),
        data_base_seed: base.data.base_seed,
        rows,
    })
}

impl AblationReport {
    /// Write the report as JSON plus a flat CSV table.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let json_path = out_dir.join(format!("ablation_{}.json", self.suite.id()));
        std::fs::write(&json_path, serde_json::to_string_pretty(self)?)?;

        let csv_path = out_dir.join(format!("ablation_{}.csv", self.suite.id()));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
        use std::io::Write;
        writeln!(
            f,
            "# config_hash={} tool_version={}",
            self.config_hash, self.tool_version
        )?;
        writeln!(
            f,
            "id,layers,cycles,variant,distil,n_seeds,mean_pck01_cycle1,mean_pck01_last,mean_px_error_cycle1"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                row.spec.id,
                row.spec.layers,
                row.spec.cycles,
                row.spec.variant,
                row.spec.distil,
                row.seeds.len(),
                row.mean_pck01_cycle1,
                row.mean_pck01_last,
                row.mean_px_error_cycle1
            )?;
        }
        f.flush()?;
        Ok(())
    }
}
