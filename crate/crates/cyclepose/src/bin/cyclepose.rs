//! Thin command-line wrapper over the library: training, evaluation, ablation
//! suites, attention-map export, parameter statistics, and dataset dumps.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use clap::{Args, Parser, Subcommand};
use cyclepose::ablation::{run_ablation, Suite};
use cyclepose::analysis::{compare_param_stats, export_attention, param_stats, DEFAULT_BINS, DEFAULT_TAU};
use cyclepose::checkpoint;
use cyclepose::config::hash_json;
use cyclepose::data::{dump_split, make_split};
use cyclepose::distill::LossPlan;
use cyclepose::eval::evaluate;
use cyclepose::model::Model;
use cyclepose::train::train;
use cyclepose::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "cyclepose", version, about = "Cycled-transformer keypoint estimation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; omitted fields use built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the model and training seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin, log.jsonl and evals.jsonl.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an ablation suite: losses, cycles, or distil_chain.
    Ablate {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        suite: String,
        /// Comma-separated seeds, one training run per seed per row.
        #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Export per-layer attention maps for one sample as CSV files.
    ExportAttn {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample seed to re-run through the model.
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        /// How many cycles to run (at most the checkpoint's cycle count).
        #[arg(long, default_value_t = 1)]
        cycles: usize,
        /// Additionally write per-head maps.
        #[arg(long)]
        per_head: bool,
    },
    /// Per-layer weight statistics; compares two checkpoints when given.
    ParamStats {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second checkpoint for side-by-side comparison.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Keep only parameter groups whose name contains this substring.
        #[arg(long)]
        layer_filter: Option<String>,
        /// Near-zero threshold on |w|.
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Generate the train/val splits and dump them to files.
    GenData(ConfigArgs),
}

fn load_config(args: &ConfigArgs) -> cyclepose::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> cyclepose::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args)?;
            std::fs::create_dir_all(&args.out)?;
            let result = train::<f32>(&cfg.model, &cfg.train, &cfg.data, &LossPlan::full(), Some(&args.out))?;
            let summary = serde_json::json!({
                "config_hash": cfg.hash(),
                "tool_version": cyclepose::VERSION,
                "best_eval": result.best_eval,
                "final_eval": result.final_eval,
            });
            std::fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
            eprintln!(
                "trained {} steps; best cycle-1 PCK@0.1 = {:.4}; outputs in {}",
                result.log.len(),
                result.best_eval.pck_01,
                args.out.display()
            );
            Ok(())
        }
        Command::Eval { common, checkpoint: ckpt } => {
            let cfg = load_config(&common)?;
            let model: Model<f32> = checkpoint::load(&ckpt)?;
            let (_, val) = make_split(&cfg.data)?;
            let report = evaluate(&model, &val, model.config.num_cycles, cfg.train.batch_size)?;
            std::fs::create_dir_all(&common.out)?;
            let doc = serde_json::json!({
                "config_hash": cfg.hash(),
                "tool_version": cyclepose::VERSION,
                "report": report,
            });
            std::fs::write(common.out.join("eval.json"), serde_json::to_string_pretty(&doc)?)?;
            eprintln!(
                "cycle-1 PCK@0.05/0.1/0.2 = {:.4}/{:.4}/{:.4}, mean error {:.2}px",
                report.pck_005, report.pck_01, report.pck_02, report.mean_px_error
            );
            Ok(())
        }
        Command::Ablate { common, suite, seeds } => {
            let cfg = load_config(&common)?;
            let suite: Suite = suite.parse()?;
            let report = run_ablation(suite, &cfg, &seeds)?;
            report.write(&common.out)?;
            for row in &report.rows {
                eprintln!(
                    "{:24} L={} N={} cycle-1 PCK@0.1 {:.4} last {:.4}",
                    row.spec.id, row.spec.layers, row.spec.cycles,
                    row.mean_pck01_cycle1, row.mean_pck01_last
                );
            }
            Ok(())
        }
        Command::ExportAttn { common, checkpoint: ckpt, sample_seed, cycles, per_head } => {
            let cfg = load_config(&common)?;
            let model: Model<f32> = checkpoint::load(&ckpt)?;
            let files = export_attention(
                &model, &cfg.data, sample_seed, cycles, &common.out, per_head, &cfg.hash(),
            )?;
            eprintln!("wrote {} attention files to {}", files.len(), common.out.display());
            Ok(())
        }
        Command::ParamStats { common, checkpoint: ckpt, compare, layer_filter, tau } => {
            let cfg = load_config(&common)?;
            let model: Model<f32> = checkpoint::load(&ckpt)?;
            std::fs::create_dir_all(&common.out)?;
            let filter = layer_filter.as_deref();
            match compare {
                None => {
                    let stats = param_stats(&model, filter, tau, DEFAULT_BINS);
                    let doc = serde_json::json!({
                        "config_hash": cfg.hash(),
                        "stats": stats,
                    });
                    std::fs::write(common.out.join("param_stats.json"), serde_json::to_string_pretty(&doc)?)?;
                    for group in &stats.groups {
                        eprintln!(
                            "{:20} n={:6} std={:.5} near-zero(|w|<{tau})={:.4}",
                            group.name, group.count, group.std, group.near_zero_fraction
                        );
                    }
                }
                Some(other) => {
                    let b: Model<f32> = checkpoint::load(&other)?;
                    let cmp = compare_param_stats(&model, &b, filter, tau, DEFAULT_BINS)?;
                    let doc = serde_json::json!({
                        "config_hash": cfg.hash(),
                        "comparison": cmp,
                    });
                    std::fs::write(common.out.join("param_stats_compare.json"), serde_json::to_string_pretty(&doc)?)?;
                    for row in &cmp.rows {
                        eprintln!(
                            "{:20} near-zero A={:.4} B={:.4}  std A={:.5} B={:.5}",
                            row.name, row.near_zero_a, row.near_zero_b, row.std_a, row.std_b
                        );
                    }
                    eprintln!(
                        "B has fewer near-zero weights in {}/{} groups",
                        cmp.groups_where_b_has_fewer_near_zero,
                        cmp.rows.len()
                    );
                }
            }
            Ok(())
        }
        Command::GenData(args) => {
            let cfg = load_config(&args)?;
            let (train_set, val_set) = make_split(&cfg.data)?;
            std::fs::create_dir_all(&args.out)?;
            dump_split(&args.out.join("train.bin"), &train_set)?;
            dump_split(&args.out.join("val.bin"), &val_set)?;
            let meta = serde_json::json!({
                "config_hash": hash_json(&cfg.data),
                "tool_version": cyclepose::VERSION,
                "n_train": train_set.len(),
                "n_val": val_set.len(),
            });
            std::fs::write(args.out.join("dataset.json"), serde_json::to_string_pretty(&meta)?)?;
            eprintln!(
                "wrote {} train and {} val samples to {}",
                train_set.len(), val_set.len(), args.out.display()
            );
            Ok(())
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Version/help requests are successes; anything else is usage.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}
