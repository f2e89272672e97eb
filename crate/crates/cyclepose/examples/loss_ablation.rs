//! Loss-term ablation: six training runs at identical seeds and budget,
//! switching the supervision and distillation terms on and off, evaluated at
//! cycle 1. Uses a reduced budget; pass `--full` for the default desk budget.

use cyclepose::ablation::{run_ablation, Suite};
use cyclepose::train::TrainConfig;
use cyclepose::RunConfig;

fn main() -> cyclepose::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let mut cfg = RunConfig::default();
    if !full {
        cfg.train = TrainConfig {
            epochs: 12,
            lr_decay_epochs: vec![8, 10],
            eval_every: 0,
            ..TrainConfig::default()
        };
    }

    let seeds = [0u64];
    println!(
        "running the losses suite ({} budget, seeds {seeds:?})...",
        if full { "default" } else { "reduced" }
    );
    let report = run_ablation(Suite::Losses, &cfg, &seeds)?;
    if !full {
        println!("(reduced budget: rows barely differentiate; --full shows the real spread)");
    }
    println!("{:24} {:>8} {:>14} {:>14}", "variant", "distil", "cycle-1 PCK@.1", "last PCK@.1");
    for row in &report.rows {
        println!(
            "{:24} {:>8} {:>14.4} {:>14.4}",
            row.spec.id, row.spec.distil, row.mean_pck01_cycle1, row.mean_pck01_last
        );
    }

    let out = std::env::temp_dir().join("cyclepose_loss_ablation");
    report.write(&out)?;
    println!("report written to {}", out.display());
    Ok(())
}
