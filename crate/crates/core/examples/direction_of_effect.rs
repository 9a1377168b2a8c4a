//! Trains the baseline and the up-scaled variant on the same synthetic data
//! and prints their validation scores at ground-truth resolution.
//!
//! cargo run --release -p upseg-core --example direction_of_effect -- [epochs] [base_channels]

use std::time::Instant;

use upseg_core::data::{Dataset, DatasetSpec};
use upseg_core::graph::{build_unet, build_upscale_stack, BackboneConfig, UpscaleStackConfig};
use upseg_core::loss::LossConfig;
use upseg_core::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map_or(Ok(20), |s| s.parse())?;
    let base: usize = args.get(2).map_or(Ok(8), |s| s.parse())?;
    let spec = DatasetSpec {
        num_samples: 768,
        input_res: 16,
        gt_res: 256,
        seed: 7,
        ..Default::default()
    };
    let t0 = Instant::now();
    let data = Dataset::<f64>::generate(&spec)?;
    let (tr, va) = data.split(2.0 / 3.0)?;
    println!("data: {:?}", t0.elapsed());

    let cfg = TrainConfig {
        max_epochs: epochs,
        ..Default::default()
    };
    let bb = BackboneConfig {
        in_channels: 1,
        base_channels: base,
        depth: 2,
        num_classes: 1,
    };
    for m in [0usize, 4] {
        let baseline = build_unet::<f64>(&bb, 1)?;
        let model = build_upscale_stack(&baseline, &UpscaleStackConfig::new(m, 1), 2)?;
        let t = Instant::now();
        let rep = train(model, &tr, &va, &LossConfig::uniform(m), &cfg, |e| {
            println!("m={m} {} ({:?})", e.to_csv_row(), t.elapsed())
        })?;
        println!("m={m}: best epoch {} jaccard {:.4}", rep.best_epoch, rep.best_val_jaccard);
    }
    Ok(())
}
