//! Validate analytic gradients of the full training loss against central
//! finite differences, in f64, through both cycles of a small model.
//!
//! Teacher detachment is disabled for the check: finite differences measure
//! the derivative of the computed value including the teacher path, so the
//! two only agree when no stop-gradient is in play.

use cyclepose::autodiff::{numerical_gradient, relative_error, Graph};
use cyclepose::data::{gen_sample, render_heatmap, DataConfig};
use cyclepose::distill::total_loss;
use cyclepose::model::{Mode, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> cyclepose::Result<()> {
    let cfg = ModelConfig {
        image_size: [32, 32],
        patch_size: 8,
        embed_dim: 16,
        num_layers: 2,
        num_heads: 2,
        heatmap_size: [8, 8],
        num_cycles: 2,
        alpha_kt: 0.5,
        alpha_vt: 0.5,
        detach_teacher: false,
        ..ModelConfig::default()
    };
    let data = DataConfig { image_size: [32, 32], heatmap_size: [8, 8], ..DataConfig::default() };
    let model: Model<f64> = Model::init(cfg.clone())?;

    let sample = gen_sample(42, &data)?;
    let images: Vec<f64> = sample.image.iter().map(|&v| v as f64).collect();
    let gt: Vec<f64> = render_heatmap(&sample.keypoints, data.sigma, [8, 8], [32, 32])
        .data
        .iter()
        .map(|&v| v as f64)
        .collect();

    let loss_of = |m: &Model<f64>| -> f64 {
        let mut g: Graph<f64> = Graph::new();
        let binding = m.bind(&mut g, false);
        let trace = m
            .forward_images(&mut g, &binding, &images, 1, 2, &mut Mode::Eval)
            .unwrap();
        let gt_id = g.constant(gt.clone(), &[1, 5, 8, 8]).unwrap();
        let breakdown = total_loss(&mut g, &trace, gt_id, &m.config).unwrap();
        g.scalar_value(breakdown.total)
    };

    let mut g: Graph<f64> = Graph::new();
    let binding = model.bind(&mut g, true);
    let trace = model.forward_images(&mut g, &binding, &images, 1, 2, &mut Mode::Eval)?;
    let gt_id = g.constant(gt.clone(), &[1, 5, 8, 8])?;
    let breakdown = total_loss(&mut g, &trace, gt_id, &cfg)?;
    g.backward(breakdown.total)?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = (0.0f64, String::new());
    println!("{:28} {:>14} {:>14} {:>10}", "parameter", "analytic", "numeric", "rel err");
    for (idx, param) in model.params().iter().enumerate() {
        let elem = rng.gen_range(0..param.data.len());
        let analytic = g.grad(binding.ids[idx]).unwrap()[elem];
        let mut perturbed = model.params().to_vec();
        let mut x = vec![perturbed[idx].data[elem]];
        let numeric = numerical_gradient(&mut x, &[0], 1e-5, |vals| {
            perturbed[idx].data[elem] = vals[0];
            loss_of(&Model::from_params(cfg.clone(), perturbed.clone()).unwrap())
        })[0];
        let err = relative_error(analytic, numeric);
        if err > worst.0 {
            worst = (err, format!("{}[{elem}]", param.name));
        }
        if idx % 8 == 0 {
            println!("{:28} {analytic:14.6e} {numeric:14.6e} {err:10.2e}", param.name);
        }
    }
    println!("worst relative error: {:.3e} at {}", worst.0, worst.1);
    assert!(worst.0 < 1e-4);
    println!("gradient check passed");
    Ok(())
}
