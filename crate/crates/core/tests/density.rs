mod common;

use common::{random_tensor, toy_model, toy_sample};
use proptest::prelude::*;
use vqflow_core::density::{gaussian_logprob, mixture_logprob};
use vqflow_core::model::Components;
use vqflow_core::sample::Batch;
use vqflow_core::tape::GradMode;
use vqflow_core::train::{loss_and_grad, LossWeights};
use vqflow_core::Tensor;

fn comps(k: usize, d: usize, seed: u64) -> Vec<(Tensor<f64>, Tensor<f64>)> {
    (0..k)
        .map(|i| {
            (
                random_tensor(&[d], seed + 2 * i as u64, -2.0, 2.0),
                random_tensor(&[d], seed + 2 * i as u64 + 1, 0.3, 1.5),
            )
        })
        .collect()
}

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        s += f(lo + i as f64 * h);
    }
    s * h
}

#[test]
fn mixture_integrates_to_one_in_1d() {
    for &k in &[1usize, 2, 4] {
        let c = comps(k, 1, 10 + k as u64);
        let lo = c.iter().map(|(m, s)| m.data()[0] - 20.0 * s.data()[0]).fold(f64::MAX, f64::min);
        let hi = c.iter().map(|(m, s)| m.data()[0] + 20.0 * s.data()[0]).fold(f64::MIN, f64::max);
        let area = trapezoid(
            |x| mixture_logprob(&Tensor::new(vec![1, 1], vec![x]).unwrap(), &c).unwrap()[0].exp(),
            lo,
            hi,
            40_000,
        );
        assert!((area - 1.0).abs() < 1e-6, "K={k}: {area}");
    }
}

#[test]
fn mixture_integrates_to_one_in_2d() {
    let c = comps(2, 2, 3);
    let (lo, hi, n) = (-25.0, 25.0, 800);
    let h = (hi - lo) / n as f64;
    let mut area = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
            let z = Tensor::new(vec![1, 2], vec![lo + i as f64 * h, lo + j as f64 * h]).unwrap();
            area += wi * wj * mixture_logprob(&z, &c).unwrap()[0].exp();
        }
    }
    area *= h * h;
    assert!((area - 1.0).abs() < 1e-4, "{area}");
}

#[test]
fn single_component_mixture_is_the_gaussian() {
    let c = comps(1, 3, 4);
    let z = random_tensor(&[6, 3], 5, -3.0, 3.0);
    let m = mixture_logprob(&z, &c).unwrap();
    let g = gaussian_logprob(&z, &c[0].0, &c[0].1).unwrap();
    for (a, b) in m.iter().zip(&g) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn far_tail_stays_finite() {
    let c = comps(4, 2, 8);
    let z = Tensor::new(vec![1, 2], vec![1e3, -1e3]).unwrap();
    let lp = mixture_logprob(&z, &c).unwrap()[0];
    assert!(lp.is_finite() && lp < -1e5);
}

#[test]
fn unit_gaussian_reference_values() {
    // ln N(0;0,1) = −½ln(2π); at z=1 subtract a further ½.
    let zero = Tensor::from_vec(vec![0.0f64]);
    let one = Tensor::from_vec(vec![1.0f64]);
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((gaussian_logprob(&zero, &zero, &one).unwrap()[0] + half_ln_2pi).abs() < 1e-12);
    assert!((gaussian_logprob(&one, &zero, &one).unwrap()[0] + half_ln_2pi + 0.5).abs() < 1e-12);
}

proptest! {
    #[test]
    fn mixture_bounded_below_by_dedicated(seed in 0u64..500, k in 1usize..6) {
        let c = comps(k, 3, seed);
        let z = random_tensor(&[4, 3], seed + 77, -4.0, 4.0);
        let mix = mixture_logprob(&z, &c).unwrap();
        for j in 0..k {
            let ded = gaussian_logprob(&z, &c[j].0, &c[j].1).unwrap();
            for (m, d) in mix.iter().zip(&ded) {
                prop_assert!(*m >= d - (k as f64).ln() - 1e-9);
            }
        }
    }

    #[test]
    fn sigma_scaling_shifts_by_log_factor(seed in 0u64..500, s in 0.1f64..10.0) {
        let d = 3;
        let (mu, sigma) = comps(1, d, seed).remove(0);
        let z = random_tensor(&[5, d], seed + 9, -2.0, 2.0);
        let base = gaussian_logprob(&z, &mu, &sigma).unwrap();
        // z' = μ + s(z − μ), σ' = sσ
        let mut zs = z.clone();
        for r in 0..5 {
            for c in 0..d {
                zs.row_mut(r)[c] = mu.data()[c] + s * (z.row(r)[c] - mu.data()[c]);
            }
        }
        let scaled = gaussian_logprob(&zs, &mu, &sigma.map(|v| v * s)).unwrap();
        for (a, b) in scaled.iter().zip(&base) {
            prop_assert!((a - (b - d as f64 * s.ln())).abs() < 1e-9);
        }
    }
}

#[test]
fn heads_are_shared_by_every_branch() {
    let model = toy_model(Components::FULL, 3);
    let s = toy_sample(1, 0);
    let batch = Batch::from_samples(&[&s]).unwrap();
    let names = model.params().names().to_vec();
    let head_ids: Vec<usize> = (0..names.len()).filter(|&i| names[i].starts_with("heads")).collect();
    assert!(!head_ids.is_empty());
    for branch in 0..2 {
        let mut alpha = vec![0.0; 2];
        alpha[branch] = 1.0;
        let w = LossWeights { alpha, beta: 0.0, gamma: vec![0.0; 2] };
        let (_, grads, _, _) = loss_and_grad(&model, &batch, &w, GradMode::Exact).unwrap();
        let touched = head_ids.iter().any(|&i| grads[i].data().iter().any(|&g| g != 0.0));
        assert!(touched, "branch {branch} does not reach the heads");
    }
}
