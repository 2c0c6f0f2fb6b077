mod common;

use common::random_tensor;
use proptest::prelude::*;
use rand::Rng as _;
use vqflow_core::codebook::{
    capc_quantize, codebook_init, condition_rows, cpc_encode, cspc_quantize, mse, positional_embedding,
    quantize_nearest, revive_dead_codes, vq_loss, Codebook,
};
use vqflow_core::optim::{Adam, AdamConfig};
use vqflow_core::rng;
use vqflow_core::tape::{GradMode, Tape};
use vqflow_core::Tensor;

/// Lowest-index argmin with the same left-to-right f32 accumulation order.
fn exhaustive(cb: &Tensor<f32>, v: &[f32]) -> usize {
    let mut best = (0, f32::INFINITY);
    for k in 0..cb.rows() {
        let mut d = 0.0f32;
        for (a, b) in cb.row(k).iter().zip(v) {
            d += (a - b) * (a - b);
        }
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

fn book(k: usize, d: usize, seed: u64) -> Codebook<f64> {
    Codebook::new(random_tensor(&[k, d], seed, -1.0, 1.0)).unwrap()
}

#[test]
fn quantizer_matches_exhaustive_scan_k16() {
    let cb = random_tensor(&[16, 8], 1, -1.0, 1.0).cast::<f32>();
    let v = random_tensor(&[100, 8], 2, -1.0, 1.0).cast::<f32>();
    let q = quantize_nearest(&cb, &v).unwrap();
    for r in 0..100 {
        assert_eq!(q.indices[r], exhaustive(&cb, v.row(r)));
        assert_eq!(q.quantized.row(r), cb.row(q.indices[r]));
    }
}

#[test]
fn usage_counts_calls() {
    let mut cb = book(4, 3, 0);
    cb.quantize(&random_tensor(&[7, 3], 1, -1.0, 1.0)).unwrap();
    cb.quantize(&random_tensor(&[5, 3], 2, -1.0, 1.0)).unwrap();
    assert_eq!(cb.usage().iter().sum::<u64>(), 12);
    cb.reset_usage();
    assert_eq!(cb.usage().iter().sum::<u64>(), 0);
}

#[test]
fn cpc_encode_exact_match() {
    let h = Tensor::full(&[3, 4, 4], 2.0f64);
    let mut cb = Codebook::new(Tensor::from_rows(&[&[0.0, 0.0, 0.0], &[2.0, 2.0, 2.0]]).unwrap()).unwrap();
    let (y, yq, idx) = cpc_encode(&h, |p| Ok(p.clone()), &mut cb).unwrap();
    assert_eq!(idx, 1);
    assert_eq!(y, yq);
}

#[test]
fn cspc_reconstructs_when_residual_is_a_codeword() {
    let (h, w) = (3, 2);
    let pe = positional_embedding::<f64>(h, w, 2).unwrap();
    let proto = Tensor::from_vec(vec![0.25, -0.5]);
    let hp = random_tensor(&[4, h, w], 3, -1.0, 1.0);
    let cond = condition_rows(&pe.rows(), proto.data());
    let rows = hp.chw_to_rows().unwrap();
    let resid: Vec<f64> = rows.data().iter().zip(cond.data()).map(|(a, c)| a - c).collect();
    let mut cb = Codebook::new(Tensor::new(vec![h * w, 4], resid).unwrap()).unwrap();
    let out = cspc_quantize(&hp, &proto, &pe, &mut cb).unwrap();
    for (a, b) in out.data().iter().zip(hp.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn cspc_with_zero_condition_is_capc() {
    let hp = random_tensor(&[6, 4, 4], 4, -1.0, 1.0);
    let pe = positional_embedding::<f64>(4, 4, 2).unwrap();
    let zero_pe = vqflow_core::codebook::PositionalTable::from_embedding(Tensor::zeros(pe.embedding().shape())).unwrap();
    let proto = Tensor::zeros(&[4]);
    let mut a = book(8, 6, 5);
    let mut b = a.clone();
    let x = cspc_quantize(&hp, &proto, &zero_pe, &mut a).unwrap();
    let y = capc_quantize(&hp, &mut b).unwrap();
    assert_eq!(x, y);
}

#[test]
fn cspc_matches_per_pixel_oracle() {
    let (h, w) = (4, 4);
    let pe = positional_embedding::<f64>(h, w, 4).unwrap();
    let proto = random_tensor(&[2], 6, -1.0, 1.0);
    let hp = random_tensor(&[6, h, w], 7, -2.0, 2.0);
    let mut cb = book(8, 6, 8);
    let cw = cb.codewords().clone();
    let out = cspc_quantize(&hp, &proto, &pe, &mut cb).unwrap();
    for m in 0..h {
        for n in 0..w {
            let mut cond = Vec::new();
            for c in 0..4 {
                cond.push(pe.embedding().data()[(c * h + m) * w + n]);
            }
            cond.extend_from_slice(proto.data());
            let resid: Vec<f64> = (0..6).map(|c| hp.data()[(c * h + m) * w + n] - cond[c]).collect();
            let mut best = (0, f64::INFINITY);
            for k in 0..8 {
                let d: f64 = cw.row(k).iter().zip(&resid).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (k, d);
                }
            }
            for c in 0..6 {
                let want = cw.row(best.0)[c] + cond[c];
                assert_eq!(out.data()[(c * h + m) * w + n], want);
            }
        }
    }
}

#[test]
fn cspc_rejects_misaligned_channels() {
    let pe = positional_embedding::<f64>(2, 2, 2).unwrap();
    let mut cb = book(2, 5, 0);
    let err = cspc_quantize(&Tensor::zeros(&[5, 2, 2]), &Tensor::zeros(&[4]), &pe, &mut cb).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("D_cp=4") && msg.contains("D_PE=2") && msg.contains("D_csp=5"), "{msg}");
}

#[test]
fn capc_examples() {
    let hp = random_tensor(&[3, 2, 2], 9, -1.0, 1.0);
    let mut one = Codebook::new(Tensor::from_rows(&[&[0.5, 0.5, 0.5]]).unwrap()).unwrap();
    let out = capc_quantize(&hp, &mut one).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
    let mut all = Codebook::new(hp.chw_to_rows().unwrap()).unwrap();
    assert_eq!(capc_quantize(&hp, &mut all).unwrap(), hp);
}

#[test]
fn vq_loss_examples() {
    let mut tape = Tape::<f64>::new();
    let v = tape.constant(Tensor::from_vec(vec![1.0, 1.0]));
    let q = tape.constant(Tensor::from_vec(vec![0.0, 0.0]));
    let l = vq_loss(&mut tape, v, q, 0.25).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
    let l = vq_loss(&mut tape, v, v, 0.25).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);

    let a = random_tensor(&[8], 10, -1.0, 1.0);
    let b = random_tensor(&[8], 11, -1.0, 1.0);
    let mut naive = 0.0;
    for i in 0..8 {
        naive += (a.data()[i] - b.data()[i]).powi(2);
    }
    assert!((mse(&a, &b).unwrap() - naive / 8.0).abs() < 1e-12);
}

#[test]
fn vq_loss_gradients_split_codebook_and_commitment() {
    let mut tape = Tape::<f64>::with_mode(GradMode::StraightThrough);
    let v = tape.param(0, Tensor::from_vec(vec![1.0, 3.0]));
    let q = tape.param(1, Tensor::from_vec(vec![0.0, 1.0]));
    let l = vq_loss(&mut tape, v, q, 0.25).unwrap();
    let g = tape.backward(l).unwrap();
    // d/dq mse = (q - v), d/dv 0.25 mse = 0.25 (v - q)
    assert_eq!(g.get(1).unwrap().data(), &[-1.0, -2.0]);
    assert_eq!(g.get(0).unwrap().data(), &[0.25, 0.5]);
}

#[test]
fn codebook_init_examples() {
    let s = random_tensor(&[5, 3], 12, -1.0, 1.0);
    let cb = codebook_init(&s, 5, &mut rng::stream(0, 0)).unwrap();
    let mut rows: Vec<Vec<u64>> = (0..5).map(|k| cb.codewords().row(k).iter().map(|v| v.to_bits()).collect()).collect();
    let mut want: Vec<Vec<u64>> = (0..5).map(|k| s.row(k).iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    want.sort();
    assert_eq!(rows, want);
    assert!(codebook_init(&s, 6, &mut rng::stream(0, 0)).is_err());

    let centres: [[f64; 2]; 4] = [[5.0, 5.0], [-5.0, 5.0], [5.0, -5.0], [-5.0, -5.0]];
    let mut r = rng::stream(1, 0);
    let mut data = Vec::new();
    for i in 0..200 {
        let c = centres[i % 4];
        data.push(c[0] + r.gen_range(-0.5..0.5));
        data.push(c[1] + r.gen_range(-0.5..0.5));
    }
    let s = Tensor::new(vec![200, 2], data).unwrap();
    for seed in 0..10 {
        let cb = codebook_init(&s, 4, &mut rng::stream(seed, 1)).unwrap();
        let mut hit = [false; 4];
        for k in 0..4 {
            let w = cb.codewords().row(k);
            let c = centres.iter().position(|c| (w[0] - c[0]).abs() <= 0.5 && (w[1] - c[1]).abs() <= 0.5).unwrap();
            hit[c] = true;
        }
        assert!(hit.iter().all(|&h| h), "seed {seed}");
    }
}

#[test]
fn revival_examples() {
    let recent = random_tensor(&[6, 2], 13, -1.0, 1.0);
    let mut cw = random_tensor(&[3, 2], 14, -1.0, 1.0);
    let before = cw.clone();
    let mut usage = vec![2, 1, 5];
    assert!(revive_dead_codes(&mut cw, &mut usage, &recent, 1, &mut rng::stream(0, 0)).unwrap().is_empty());
    assert_eq!(cw, before);
    assert_eq!(usage, vec![0, 0, 0]);

    let mut usage = vec![2, 0, 5];
    let revived = revive_dead_codes(&mut cw, &mut usage, &recent, 1, &mut rng::stream(0, 0)).unwrap();
    assert_eq!(revived, vec![1]);
    assert!((0..6).any(|r| recent.row(r) == cw.row(1)));
    assert_eq!(cw.row(0), before.row(0));
}

#[test]
fn training_with_revival_keeps_most_codes_alive() {
    let centres = [[3.0, 3.0], [-3.0, 3.0], [3.0, -3.0], [-3.0, -3.0]];
    let mut r = rng::stream(2, 0);
    let mut data = Vec::new();
    for i in 0..512 {
        let c = centres[i % 4];
        data.push(c[0] + rng::normal::<f64>(&mut r));
        data.push(c[1] + rng::normal::<f64>(&mut r));
    }
    let samples = Tensor::new(vec![512, 2], data).unwrap();
    let k = 64;
    let mut cw = random_tensor(&[k, 2], 15, -0.1, 0.1);
    let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &[&[k, 2]]);
    let mut revive_rng = rng::stream(3, 0);
    let mut dead_fraction = 1.0;
    for _epoch in 0..10 {
        let mut usage = vec![0u64; k];
        let mut last = None;
        for chunk in 0..8 {
            let batch = Tensor::new(vec![64, 2], samples.data()[chunk * 128..(chunk + 1) * 128].to_vec()).unwrap();
            let mut tape = Tape::with_mode(GradMode::StraightThrough);
            let cv = tape.param(0, cw.clone());
            let v = tape.constant(batch.clone());
            let q = quantize_nearest(&cw, &batch).unwrap();
            q.indices.iter().for_each(|&i| usage[i] += 1);
            let g = tape.gather_rows(cv, &q.indices).unwrap();
            let l = vq_loss(&mut tape, v, g, 0.25).unwrap();
            let grads = tape.backward(l).unwrap().into_dense(&[&[k, 2]]);
            opt.step(std::slice::from_mut(&mut cw), &grads, &[]).unwrap();
            last = Some(batch);
        }
        dead_fraction = usage.iter().filter(|&&u| u == 0).count() as f64 / k as f64;
        revive_dead_codes(&mut cw, &mut usage, &last.unwrap(), 1, &mut revive_rng).unwrap();
    }
    assert!(dead_fraction < 0.5, "dead fraction {dead_fraction}");
}

#[test]
fn positional_embedding_matches_closed_form() {
    let pe = positional_embedding::<f64>(4, 4, 4).unwrap();
    let t = pe.embedding();
    for m in 0..4 {
        for n in 0..4 {
            let want = [
                (m as f64).sin(),
                (m as f64).cos(),
                (n as f64).sin(),
                (n as f64).cos(),
            ];
            for c in 0..4 {
                assert!((t.data()[(c * 4 + m) * 4 + n] - want[c]).abs() < 1e-12);
            }
        }
    }
    let big = positional_embedding::<f32>(8, 8, 32).unwrap();
    assert_eq!(big, positional_embedding::<f32>(8, 8, 32).unwrap());
    assert!(positional_embedding::<f32>(2, 2, 3).is_err());
}

proptest! {
    #[test]
    fn quantized_distance_is_minimal(seed in 0u64..500, k in 1usize..40, d in 1usize..10) {
        let cb = random_tensor(&[k, d], seed, -1.0, 1.0);
        let v = random_tensor(&[5, d], seed + 1000, -1.5, 1.5);
        let q = quantize_nearest(&cb, &v).unwrap();
        for r in 0..5 {
            for j in 0..k {
                let dj: f64 = cb.row(j).iter().zip(v.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
                prop_assert!(q.sq_distance[r] <= dj + 1e-12);
            }
        }
    }

    #[test]
    fn quantization_is_idempotent(seed in 0u64..500) {
        let cb = random_tensor(&[12, 4], seed, -1.0, 1.0);
        let v = random_tensor(&[20, 4], seed + 1, -1.0, 1.0);
        let once = quantize_nearest(&cb, &v).unwrap().quantized;
        let twice = quantize_nearest(&cb, &once).unwrap().quantized;
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn vq_loss_zero_iff_equal(seed in 0u64..500) {
        let a = random_tensor(&[6], seed, -1.0, 1.0);
        let b = random_tensor(&[6], seed + 1, -1.0, 1.0);
        prop_assert!(mse(&a, &b).unwrap() > 0.0);
        prop_assert_eq!(mse(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn revived_codes_take_distinct_rows() {
    for seed in 0..50 {
        let mut cw = Tensor::<f64>::zeros(&[4, 2]);
        let mut usage = vec![0, 0, 5, 0];
        let recent = Tensor::from_rows(&[&[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0]]).unwrap();
        let revived = revive_dead_codes(&mut cw, &mut usage, &recent, 1, &mut rng::stream(seed, 0)).unwrap();
        assert_eq!(revived, vec![0, 1, 3]);
        let mut firsts: Vec<u64> = revived.iter().map(|&k| cw.row(k)[0].to_bits()).collect();
        firsts.sort();
        firsts.dedup();
        assert_eq!(firsts.len(), 3, "seed {seed}");
        assert_eq!(cw.row(2), &[0.0, 0.0]);
    }
}
