//! Export per-layer attention maps for one sample to CSV, for both cycles of
//! a briefly trained model, and print the head-averaged keypoint-to-visual
//! map of the last layer as a small grid.

use cyclepose::analysis::export_attention;
use cyclepose::config::hash_json;
use cyclepose::data::DataConfig;
use cyclepose::distill::LossPlan;
use cyclepose::model::ModelConfig;
use cyclepose::train::{train, TrainConfig};

fn main() -> cyclepose::Result<()> {
    let model_cfg = ModelConfig::default();
    let data = DataConfig::default();
    let quick = TrainConfig {
        epochs: 4,
        lr_decay_epochs: vec![],
        eval_every: 0,
        ..TrainConfig::default()
    };
    println!("training briefly so the maps are not pure init noise...");
    let run = train::<f32>(&model_cfg, &quick, &data, &LossPlan::full(), None)?;

    let out = std::env::temp_dir().join("cyclepose_attention_example");
    let files = export_attention(&run.model, &data, 3, 2, &out, false, &hash_json(&model_cfg))?;
    println!(
        "wrote {} CSV files ({} cycles x {} layers x (K+1)) to {}",
        files.len(),
        2,
        model_cfg.num_layers,
        out.display()
    );

    let last_layer = model_cfg.num_layers - 1;
    let path = out.join(format!("attn_cycle2_layer{last_layer}_kp0.csv"));
    let text = std::fs::read_to_string(&path)?;
    println!("head keypoint -> visual grid, cycle 2, layer {last_layer}:");
    for line in text.lines().skip(2) {
        let cells: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let bar: String = cells
            .iter()
            .map(|&v| [' ', '.', ':', '+', '*', '#'][((v * 40.0) as usize).min(5)])
            .collect();
        let nums: Vec<String> = cells.iter().map(|v| format!("{v:.3}")).collect();
        println!("  |{bar}|  [{}]", nums.join(", "));
    }
    Ok(())
}
