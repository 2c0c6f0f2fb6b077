//! Seeded multi-class synthetic feature stacks with patch anomalies.
//!
//! Class `k` at scale `i` is `sig_{k,i} + pattern_{k,i}(u, v)`: a channel
//! signature (orthogonal across classes) plus a smooth field mixing a few
//! sinusoids of the normalized coordinates, so every scale sees the same
//! continuous picture. Samples add i.i.d. Gaussian noise.
//!
//! An anomaly perturbs one rectangle at every scale. The perturbation blends
//! toward another class's template at those positions and adds a random
//! smooth field, both scaled by the anomaly magnitude.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

#[allow(unused_imports)] // inherent float math is unavailable without std
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::sample::{FeatureSample, Label, Mask};
use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    /// Channels per scale, finest first.
    pub channels: Vec<usize>,
    /// Side length of the square finest map; halves per scale.
    pub size: usize,
    pub train: usize,
    pub test: usize,
    /// Fraction of the test split that is anomalous.
    pub anomalous_fraction: f64,
    /// Per-channel RMS of the class signature.
    pub signature: f64,
    /// Per-channel RMS of the spatial pattern.
    pub pattern: f64,
    pub noise: f64,
    /// Patch side range at the finest scale, in positions.
    pub patch_min: usize,
    pub patch_max: usize,
    pub magnitude: f64,
    /// Share of the perturbation that copies another class's template.
    pub confusion: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            channels: vec![16, 32, 64],
            size: 32,
            train: 200,
            test: 100,
            anomalous_fraction: 0.5,
            signature: 1.0,
            pattern: 0.5,
            noise: 0.1,
            patch_min: 4,
            patch_max: 12,
            magnitude: 0.9,
            confusion: 0.9,
        }
    }
}

impl SynthSpec {
    pub fn scales(&self) -> usize {
        self.channels.len()
    }

    /// `(D, H, W)` per scale.
    pub fn geometry(&self) -> Vec<(usize, usize, usize)> {
        self.channels
            .iter()
            .enumerate()
            .map(|(i, &d)| (d, self.size >> i, self.size >> i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.classes < 2 {
            return fail(format!("multi-class data needs at least 2 classes, got {}", self.classes));
        }
        if self.channels.is_empty() {
            return fail("at least one scale is required".into());
        }
        if let Some(d) = self.channels.iter().find(|&&d| d < self.classes.max(2)) {
            return fail(format!(
                "every scale needs at least as many channels as classes, got {d} < {}",
                self.classes
            ));
        }
        let l = self.scales();
        if self.size == 0 || self.size % (1 << (l - 1)) != 0 {
            return fail(format!("size {} must be divisible by 2^(L-1) = {}", self.size, 1 << (l - 1)));
        }
        if self.patch_min == 0 || self.patch_min > self.patch_max {
            return fail(format!("bad patch range {}..={}", self.patch_min, self.patch_max));
        }
        if self.patch_max > self.size {
            return Err(Error::Contract(format!(
                "patch side {} exceeds map side {}",
                self.patch_max, self.size
            )));
        }
        if self.train == 0 || self.test == 0 {
            return fail("both splits need samples".into());
        }
        if !(0.0..=1.0).contains(&self.anomalous_fraction) {
            return fail(format!("anomalous fraction {} outside [0, 1]", self.anomalous_fraction));
        }
        if !(0.0..=1.0).contains(&self.confusion) {
            return fail(format!("confusion {} outside [0, 1]", self.confusion));
        }
        Ok(())
    }
}

const WAVES: usize = 3;

/// Seed-fixed class templates, `[D_i, H_i, W_i]` per class and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Templates {
    pub maps: Vec<Vec<Tensor<f64>>>,
}

struct Wave {
    fu: f64,
    fv: f64,
    phase: f64,
}

pub fn class_templates(spec: &SynthSpec, seed: u64) -> Result<Templates> {
    spec.validate()?;
    let geometry = spec.geometry();
    let mut maps = vec![Vec::new(); spec.classes];
    for (i, &(d, h, w)) in geometry.iter().enumerate() {
        let mut r = rng::named(seed, &format!("synth.signature{i}"));
        let sigs = orthonormal(spec.classes, d, &mut r);
        for (k, sig) in sigs.iter().enumerate() {
            // waves are shared across scales so the picture is scale-aligned
            let mut wr = rng::named(seed, &format!("synth.class{k}.waves"));
            let waves: Vec<Wave> = (0..WAVES)
                .map(|_| Wave {
                    fu: wr.gen_range(1..=2) as f64,
                    fv: wr.gen_range(1..=2) as f64,
                    phase: wr.gen::<f64>() * 2.0 * PI,
                })
                .collect();
            let mut mr = rng::named(seed, &format!("synth.class{k}.mix{i}"));
            let mix: Vec<f64> = (0..d * WAVES)
                .map(|_| rng::normal::<f64>(&mut mr) * spec.pattern * (2.0 / WAVES as f64).sqrt())
                .collect();
            let sig_scale = spec.signature * (d as f64).sqrt();
            let mut data = vec![0.0; d * h * w];
            for c in 0..d {
                for m in 0..h {
                    let u = (m as f64 + 0.5) / h as f64;
                    for n in 0..w {
                        let v = (n as f64 + 0.5) / w as f64;
                        let mut x = sig[c] * sig_scale;
                        for (j, wave) in waves.iter().enumerate() {
                            x += mix[c * WAVES + j] * (2.0 * PI * (wave.fu * u + wave.fv * v) + wave.phase).sin();
                        }
                        data[(c * h + m) * w + n] = x;
                    }
                }
            }
            maps[k].push(Tensor::new(vec![d, h, w], data)?);
        }
    }
    Ok(Templates { maps })
}

/// `k` orthonormal vectors in `R^d` (Gram-Schmidt on Gaussian draws).
fn orthonormal(k: usize, d: usize, r: &mut Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng::normal(r)).collect();
        for u in &out {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    out
}

fn normal_sample<T: Real>(spec: &SynthSpec, t: &Templates, id: u32, class: usize, r: &mut Rng) -> Result<FeatureSample<T>> {
    let scales = t.maps[class]
        .iter()
        .map(|m| {
            let data = m.data().iter().map(|&x| T::lit(x + spec.noise * rng::normal::<f64>(r))).collect();
            Tensor::new(m.shape().to_vec(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSample {
        id,
        class_id: class as u32,
        scales,
        label: Label::Normal,
        mask: None,
    })
}

/// Rectangle at the finest scale: `(row, col, height, width)`.
pub type Patch = (usize, usize, usize, usize);

/// Perturbs `patch` (finest-scale coordinates) at every scale and marks it in
/// the mask. At scale `i` the patch covers the coarser positions that
/// overlap the finest rectangle.
pub fn inject_anomaly<T: Real>(
    sample: &FeatureSample<T>,
    spec: &SynthSpec,
    templates: &Templates,
    patch: Patch,
    seed: u64,
) -> Result<FeatureSample<T>> {
    if sample.label.is_anomalous() {
        return Err(Error::Contract(format!("sample {} is already anomalous", sample.id)));
    }
    let (pr, pc, ph, pw) = patch;
    let (_, h0, w0) = sample.scales[0].chw()?;
    if ph == 0 || pw == 0 || pr + ph > h0 || pc + pw > w0 {
        return Err(Error::Contract(format!(
            "patch {ph}x{pw} at ({pr}, {pc}) does not fit a {h0}x{w0} map"
        )));
    }
    let mut r = rng::named(seed, &format!("synth.anomaly{}", sample.id));
    let own = sample.class_id as usize;
    let other = (own + 1 + r.gen_range(0..spec.classes - 1)) % spec.classes;
    let fu = r.gen_range(1.0..4.0);
    let fv = r.gen_range(1.0..4.0);
    let phase = r.gen::<f64>() * 2.0 * PI;
    let mut out = sample.clone();
    for (i, map) in out.scales.iter_mut().enumerate() {
        let (d, h, w) = map.chw()?;
        let dir: Vec<f64> = (0..d).map(|_| rng::normal(&mut r)).collect();
        let (r0, r1) = (pr >> i, (pr + ph - 1) >> i);
        let (c0, c1) = (pc >> i, (pc + pw - 1) >> i);
        let own_t = templates.maps[own][i].data();
        let other_t = templates.maps[other][i].data();
        let data = map.data_mut();
        for c in 0..d {
            for m in r0..=r1 {
                for n in c0..=c1 {
                    let k = (c * h + m) * w + n;
                    let u = (m as f64 + 0.5) / h as f64;
                    let v = (n as f64 + 0.5) / w as f64;
                    let wave = (2.0 * PI * (fu * u + fv * v) + phase).sin();
                    let swap = spec.confusion * (other_t[k] - own_t[k]);
                    let field = (1.0 - spec.confusion) * spec.pattern * 2.0 * dir[c] * wave;
                    data[k] += T::lit(spec.magnitude * (swap + field));
                }
            }
        }
    }
    let mut mask = vec![0u8; h0 * w0];
    for m in pr..pr + ph {
        for n in pc..pc + pw {
            mask[m * w0 + n] = 1;
        }
    }
    out.label = Label::Anomalous;
    out.mask = Some(Mask::new(h0, w0, mask)?);
    Ok(out)
}

/// Seeded patch inside the finest map, corners aligned to the coarsest grid.
fn random_patch(spec: &SynthSpec, r: &mut Rng) -> Patch {
    let step = 1 << (spec.scales() - 1);
    let side = |r: &mut Rng| r.gen_range(spec.patch_min..=spec.patch_max);
    let (ph, pw) = (side(r), side(r));
    let align = |r: &mut Rng, len: usize| {
        let slots = (spec.size - len) / step;
        r.gen_range(0..=slots) * step
    };
    (align(r, ph), align(r, pw), ph, pw)
}

/// Training split (normal only) and test split; classes cycle through the
/// sample ids and a seeded subset of the test split is made anomalous.
pub fn synth_dataset<T: Real>(spec: &SynthSpec, seed: u64) -> Result<(Vec<FeatureSample<T>>, Vec<FeatureSample<T>>)> {
    let templates = class_templates(spec, seed)?;
    let mut train = Vec::with_capacity(spec.train);
    for j in 0..spec.train {
        let mut r = rng::named(seed, &format!("synth.train{j}"));
        train.push(normal_sample(spec, &templates, j as u32, j % spec.classes, &mut r)?);
    }
    let n_anom = (spec.test as f64 * spec.anomalous_fraction).round() as usize;
    let mut order: Vec<usize> = (0..spec.test).collect();
    order.shuffle(&mut rng::named(seed, "synth.split"));
    let mut anomalous = vec![false; spec.test];
    order[..n_anom].iter().for_each(|&j| anomalous[j] = true);
    let mut test = Vec::with_capacity(spec.test);
    for (j, &bad) in anomalous.iter().enumerate() {
        let id = (spec.train + j) as u32;
        let mut r = rng::named(seed, &format!("synth.test{j}"));
        let s = normal_sample(spec, &templates, id, j % spec.classes, &mut r)?;
        if bad {
            let patch = random_patch(spec, &mut r);
            test.push(inject_anomaly(&s, spec, &templates, patch, seed)?);
        } else {
            test.push(s);
        }
    }
    Ok((train, test))
}
