//! Train the two-cycle self-distilled model and watch both prediction points:
//! cycle 1 is what ships (single-pass cost), cycle 2 is its in-model teacher.
//!
//! Per-step logs carry the loss breakdown; the distillation terms enter the
//! total with weight 5e-6 each.

use cyclepose::data::DataConfig;
use cyclepose::distill::LossPlan;
use cyclepose::model::ModelConfig;
use cyclepose::train::{train, TrainConfig};

fn main() -> cyclepose::Result<()> {
    let model = ModelConfig::default(); // two cycles, full loss weights
    let data = DataConfig::default();
    let budget = TrainConfig { eval_every: 15, ..TrainConfig::default() };

    let run = train::<f32>(&model, &budget, &data, &LossPlan::full(), None)?;

    let sample = &run.log[run.log.len() / 2];
    println!(
        "mid-training loss breakdown: pose {:.5} (per cycle {:?}), kt {:.5}, vt {:.5}, total {:.5}",
        sample.l_pose, sample.l_pose_cycles, sample.l_kt, sample.l_vt, sample.total
    );
    for eval in &run.evals {
        let teacher = eval.last_cycle();
        println!(
            "  step {:5}  student (cycle 1) PCK@0.1 = {:.3} | teacher (cycle 2) PCK@0.1 = {:.3}",
            eval.steps, eval.pck_01, teacher.pck_01
        );
    }
    println!(
        "final: student {:.3}, teacher {:.3}; deployment runs one cycle at {} FLOPs/image",
        run.final_eval.pck_01,
        run.final_eval.last_cycle().pck_01,
        model.flops_per_image(1)
    );
    Ok(())
}
