//! Deployment equivalence: single-pass inference is bit-for-bit the first
//! cycle of the cycled forward, and costs exactly what a one-cycle model
//! costs, regardless of how many cycles the model trained with.

use cyclepose::autodiff::Graph;
use cyclepose::data::{gen_sample, DataConfig};
use cyclepose::model::{Mode, Model, ModelConfig};

fn main() -> cyclepose::Result<()> {
    let cfg = ModelConfig::default(); // trains with two cycles
    let model: Model<f32> = Model::init(cfg.clone())?;
    let data = DataConfig::default();

    let mut identical = 0;
    for seed in 0..10 {
        let sample = gen_sample(seed, &data)?;
        let (heatmaps, coords) = model.single_pass_inference(&sample.image, 1)?;

        let mut g = Graph::new();
        let binding = model.bind(&mut g, false);
        let trace = model.forward_images(&mut g, &binding, &sample.image, 1, 2, &mut Mode::Eval)?;
        if heatmaps == g.value(trace.cycles[0].heatmaps) {
            identical += 1;
        }
        if seed == 0 {
            println!("decoded keypoints for sample 0:");
            for (kp, gt) in coords.iter().zip(&sample.keypoints) {
                println!("  pred ({:5.1}, {:5.1})  gt ({:5.1}, {:5.1})", kp[0], kp[1], gt[0], gt[1]);
            }
        }
    }
    println!("single pass == cycle 1 bitwise on {identical}/10 samples");

    let one_cycle = ModelConfig { num_cycles: 1, ..cfg.clone() };
    println!(
        "params: {} (N=1) vs {} (N=2) — shared weights",
        one_cycle.param_count(),
        cfg.param_count()
    );
    println!(
        "FLOPs/image: deployment {} | full two-cycle training forward {}",
        cfg.flops_per_image(1),
        cfg.flops_per_image(2)
    );
    Ok(())
}
