//! Cycle-count ablation without distillation: vary how many times tokens loop
//! through the shared stack (and how many layers the stack has), supervising
//! only the last cycle's prediction. More cycles buy effective depth without
//! adding parameters.
//!
//! Also runs the distillation-chain comparison (no cycling vs 2→1 vs
//! 3→2,2→1). Reduced budget by default; pass `--full` for the desk budget.

use cyclepose::ablation::{run_ablation, Suite};
use cyclepose::model::ModelConfig;
use cyclepose::train::TrainConfig;
use cyclepose::RunConfig;

fn main() -> cyclepose::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let mut cfg = RunConfig::default();
    // Base layer count divisible by 3 so the reduced-depth rows are exact.
    cfg.model.num_layers = 6;
    if !full {
        cfg.train = TrainConfig {
            epochs: 12,
            lr_decay_epochs: vec![8, 10],
            eval_every: 0,
            ..TrainConfig::default()
        };
    }
    let seeds = [0u64];

    println!("cycle suite (last-cycle supervision, last-cycle evaluation):");
    let report = run_ablation(Suite::Cycles, &cfg, &seeds)?;
    if !full {
        println!("(reduced budget: rows barely differentiate; --full shows the real spread)");
    }
    println!("{:10} {:>6} {:>6} {:>10} {:>14}", "row", "layers", "cycles", "params", "last PCK@.1");
    for row in &report.rows {
        let params = ModelConfig {
            num_layers: row.spec.layers,
            num_cycles: row.spec.cycles,
            ..cfg.model.clone()
        }
        .param_count();
        println!(
            "{:10} {:>6} {:>6} {:>10} {:>14.4}",
            row.spec.id, row.spec.layers, row.spec.cycles, params, row.mean_pck01_last
        );
    }

    println!("\ndistillation chain suite (full loss, cycle-1 evaluation):");
    let chain = run_ablation(Suite::DistilChain, &cfg, &seeds)?;
    for row in &chain.rows {
        println!(
            "  {:16} chain {:10} cycle-1 PCK@0.1 = {:.4}",
            row.spec.id, row.spec.distil, row.mean_pck01_cycle1
        );
    }

    let out = std::env::temp_dir().join("cyclepose_cycle_ablation");
    report.write(&out)?;
    chain.write(&out)?;
    println!("\nreports written to {}", out.display());
    Ok(())
}
