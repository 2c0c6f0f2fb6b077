use vqflow_core::sample::Label;
use vqflow_core::synth::{class_templates, inject_anomaly, synth_dataset, SynthSpec};
use vqflow_core::tensor::avg_pool_spatial;
use vqflow_core::Error;

fn small() -> SynthSpec {
    SynthSpec { channels: vec![8, 16], size: 16, train: 24, test: 20, ..Default::default() }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn pooled_features_cluster_by_class() {
    let (train, _) = synth_dataset::<f64>(&small(), 3).unwrap();
    let pooled: Vec<Vec<f64>> = train.iter().map(|s| avg_pool_spatial(&s.scales[1]).unwrap().into_data()).collect();
    for i in 0..train.len() {
        for j in i + 1..train.len() {
            let c = cosine(&pooled[i], &pooled[j]);
            if train[i].class_id == train[j].class_id {
                assert!(c > 0.95, "{i},{j}: {c}");
            } else {
                assert!(c < 0.5, "{i},{j}: {c}");
            }
        }
    }
}

#[test]
fn dataset_shape_labels_and_determinism() {
    let spec = small();
    let (train, test) = synth_dataset::<f32>(&spec, 9).unwrap();
    assert_eq!((train.len(), test.len()), (24, 20));
    assert!(train.iter().all(|s| s.label == Label::Normal && s.validate().is_ok()));
    assert_eq!(test.iter().filter(|s| s.label.is_anomalous()).count(), 10);
    for s in &test {
        s.validate().unwrap();
        assert_eq!(s.geometry(), vec![(8, 16, 16), (16, 8, 8)]);
    }
    for c in 0..spec.classes as u32 {
        assert!(train.iter().any(|s| s.class_id == c));
    }
    let again = synth_dataset::<f32>(&spec, 9).unwrap();
    assert_eq!((train.clone(), test.clone()), again);
    let other = synth_dataset::<f32>(&spec, 10).unwrap();
    assert_ne!(train, other.0);
}

#[test]
fn zero_magnitude_injection_only_sets_label_and_mask() {
    let spec = SynthSpec { magnitude: 0.0, ..small() };
    let (train, _) = synth_dataset::<f64>(&spec, 1).unwrap();
    let t = class_templates(&spec, 1).unwrap();
    let a = inject_anomaly(&train[0], &spec, &t, (4, 4, 4, 4), 2).unwrap();
    assert_eq!(a.scales, train[0].scales);
    assert!(a.label.is_anomalous());
    assert_eq!(a.mask.as_ref().unwrap().count(), 16);
}

#[test]
fn full_patch_marks_every_position() {
    let spec = small();
    let (train, _) = synth_dataset::<f64>(&spec, 1).unwrap();
    let t = class_templates(&spec, 1).unwrap();
    let a = inject_anomaly(&train[1], &spec, &t, (0, 0, 16, 16), 2).unwrap();
    assert!(a.mask.unwrap().data.iter().all(|&v| v == 1));
}

#[test]
fn injected_deviation_exceeds_noise() {
    let spec = small();
    let (train, _) = synth_dataset::<f64>(&spec, 4).unwrap();
    let t = class_templates(&spec, 4).unwrap();
    let (pr, pc, ph, pw) = (4, 8, 4, 4);
    let a = inject_anomaly(&train[2], &spec, &t, (pr, pc, ph, pw), 5).unwrap();
    let (d, h, w) = (8, 16, 16);
    let mut inside = 0.0;
    let mut outside_changed = false;
    for m in 0..h {
        for n in 0..w {
            let dist: f64 = (0..d)
                .map(|c| {
                    let k = c * h * w + m * w + n;
                    (a.scales[0].data()[k] - train[2].scales[0].data()[k]).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            let within = (pr..pr + ph).contains(&m) && (pc..pc + pw).contains(&n);
            if within {
                inside += dist / (ph * pw) as f64;
            } else if dist != 0.0 {
                outside_changed = true;
            }
        }
    }
    // noise norm over d channels is about σ·√d
    assert!(inside > 5.0 * spec.noise * (d as f64).sqrt(), "{inside}");
    assert!(!outside_changed);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(matches!(synth_dataset::<f32>(&SynthSpec { classes: 1, ..small() }, 0), Err(Error::Config(_))));
    assert!(matches!(
        synth_dataset::<f32>(&SynthSpec { patch_max: 40, ..small() }, 0),
        Err(Error::Contract(_))
    ));
    let spec = small();
    let (train, _) = synth_dataset::<f64>(&spec, 0).unwrap();
    let t = class_templates(&spec, 0).unwrap();
    assert!(inject_anomaly(&train[0], &spec, &t, (14, 0, 4, 4), 0).is_err());
}
