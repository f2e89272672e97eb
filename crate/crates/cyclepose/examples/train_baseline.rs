//! Train the single-pass baseline (one cycle, plain heatmap supervision) on
//! the synthetic stick-figure task and print its validation metrics.
//!
//! Runs the full desk-scale budget (a couple of minutes on two cores).

use cyclepose::data::DataConfig;
use cyclepose::distill::LossPlan;
use cyclepose::model::ModelConfig;
use cyclepose::train::{train, TrainConfig};

fn main() -> cyclepose::Result<()> {
    let model = ModelConfig { num_cycles: 1, ..ModelConfig::default() };
    let data = DataConfig::default();
    let budget = TrainConfig { eval_every: 15, ..TrainConfig::default() };

    println!(
        "baseline: {} params, {} visual tokens, {} layers",
        model.param_count(),
        model.num_visual_tokens(),
        model.num_layers
    );
    let run = train::<f32>(&model, &budget, &data, &LossPlan::full(), None)?;
    for eval in &run.evals {
        println!(
            "  step {:5}  PCK@0.05/0.1/0.2 = {:.3}/{:.3}/{:.3}  mean err {:.2}px",
            eval.steps, eval.pck_005, eval.pck_01, eval.pck_02, eval.mean_px_error
        );
    }
    println!(
        "final: PCK@0.1 = {:.3} (loss {:.4} -> {:.4} over {} steps)",
        run.final_eval.pck_01,
        run.log.first().unwrap().total,
        run.log.last().unwrap().total,
        run.log.len()
    );
    Ok(())
}
