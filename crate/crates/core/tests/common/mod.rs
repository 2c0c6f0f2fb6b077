#![allow(dead_code)]

use rand::Rng as _;
use vqflow_core::model::{build_model, Components, ModelConfig, ScaleGeometry, VqFlowModel};
use vqflow_core::rng;
use vqflow_core::sample::{FeatureSample, Label};
use vqflow_core::Tensor;

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, 99);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

pub fn toy_geometry() -> Vec<ScaleGeometry> {
    vec![
        ScaleGeometry { channels: 4, height: 4, width: 4 },
        ScaleGeometry { channels: 6, height: 2, width: 2 },
    ]
}

/// Small model with every parameter (including the zero-initialised output
/// layers) set to random values so no gradient is trivially zero.
pub fn toy_model(components: Components, seed: u64) -> VqFlowModel<f64> {
    let cfg = ModelConfig {
        d_cp: 4,
        d_pe: 2,
        d_csp: 6,
        k_cp: 3,
        k_csp: 5,
        blocks: 2,
        cpc_hidden: 5,
        head_hidden: 5,
        ..ModelConfig::desk(toy_geometry())
    }
    .with_components(components)
    .with_seed(seed);
    let mut m = build_model::<f64>(&cfg).unwrap();
    let mut r = rng::stream(seed, 7);
    for t in m.params_mut().values_mut() {
        for v in t.data_mut() {
            *v = r.gen_range(-0.5..0.5);
        }
    }
    m
}

pub fn toy_sample(seed: u64, class: u32) -> FeatureSample<f64> {
    FeatureSample {
        id: seed as u32,
        class_id: class,
        scales: toy_geometry()
            .iter()
            .enumerate()
            .map(|(i, g)| random_tensor(&[g.channels, g.height, g.width], seed * 31 + i as u64, -1.0, 1.0))
            .collect(),
        label: Label::Normal,
        mask: None,
    }
}
