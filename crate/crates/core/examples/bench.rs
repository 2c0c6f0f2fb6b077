//! Train and evaluate one ablation row on the synthetic benchmark.
//!
//! `cargo run --release -p vqflow-core --example bench -- [id] [seed]`

use std::time::Instant;

use vqflow_core::model::{build_model, Components, ModelConfig, ScaleGeometry};
use vqflow_core::score::{evaluate, EvalOptions};
use vqflow_core::synth::{synth_dataset, SynthSpec};
use vqflow_core::train::{train, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let id: u8 = args.next().map_or(6, |s| s.parse().expect("ablation id 0..=6"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("integer seed"));

    let spec = SynthSpec::default();
    let (train_set, test_set) = synth_dataset::<f32>(&spec, 7).unwrap();
    let geometry = spec
        .geometry()
        .into_iter()
        .map(|(channels, height, width)| ScaleGeometry { channels, height, width })
        .collect();
    let cfg = ModelConfig::desk(geometry).with_components(Components::ablation(id).unwrap()).with_seed(seed);

    let t0 = Instant::now();
    let mut model = build_model::<f32>(&cfg).unwrap();
    train(&mut model, &train_set, &TrainConfig { seed, ..TrainConfig::desk() }, |_, _| Ok(())).unwrap();
    let report = evaluate(&model, &test_set, EvalOptions::default()).unwrap();
    println!(
        "id.{id} seed {seed}: detection {:.4} localization {:.4} ({:.1}s)",
        report.detection_auroc,
        report.localization_auroc.unwrap_or(f64::NAN),
        t0.elapsed().as_secs_f64()
    );
}
