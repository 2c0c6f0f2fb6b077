//! Anomaly maps, image scores and AUROC.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::codebook::record_usage;
use crate::density::mixture_logprob;
use crate::model::VqFlowModel;
use crate::sample::{Batch, FeatureSample, Mask};
use crate::tape::Tape;
use crate::{Error, Real, Result, Tensor};

/// How the flow outputs are scored when concept-aware modeling is active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DensityMode {
    /// Gaussian of the sample's assigned prototype.
    #[default]
    Dedicated,
    /// Uniform mixture over all prototypes.
    Mixture,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ImageScore {
    #[default]
    Max,
    Mean,
}

/// Per-position negative log-likelihood at the finest branch resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyMap {
    pub sample_id: u32,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl AnomalyMap {
    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Bilinear resize of a row-major `h × w` grid (half-pixel centres, edges
/// clamped).
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
        let i0 = (x as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for m in 0..oh {
        let (r0, r1, fr) = coord(m, h, oh);
        for n in 0..ow {
            let (c0, c1, fc) = coord(n, w, ow);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    out
}

/// Per-branch NLL fields `[P_i]` for every sample of a batch, plus the
/// codebook assignments made on the way.
struct Scored {
    fields: Vec<Vec<Vec<f64>>>,
    prototype_idx: Option<Vec<usize>>,
    pattern_idx: Vec<Option<Vec<usize>>>,
}

fn branch_nll<T: Real>(model: &VqFlowModel<T>, samples: &[&FeatureSample<T>], mode: DensityMode) -> Result<Scored> {
    let batch = Batch::from_samples(samples)?;
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let fwd = model.forward(&mut tape, &p, &batch)?;
    let comps = match (mode, model.heads(), model.prototypes()) {
        (DensityMode::Mixture, Some(heads), Some(protos)) => Some(heads.table(model.params(), protos)?),
        _ => None,
    };
    let mut out = vec![Vec::with_capacity(fwd.z.len()); samples.len()];
    for i in 0..fwd.z.len() {
        let positions = batch.positions(i);
        let logdet = tape.value(fwd.logdet[i]).data();
        let logprob: Vec<T> = match &comps {
            Some((mu, sigma)) => {
                let d = model.config().scales[i].channels;
                let per: Vec<(Tensor<T>, Tensor<T>)> = (0..mu.rows())
                    .map(|k| {
                        (
                            Tensor::from_vec(mu.row(k)[..d].to_vec()),
                            Tensor::from_vec(sigma.row(k)[..d].to_vec()),
                        )
                    })
                    .collect();
                mixture_logprob(tape.value(fwd.z[i]), &per)?
            }
            None => tape.value(fwd.logprob[i]).data().to_vec(),
        };
        for (s, field) in out.iter_mut().enumerate() {
            let r = s * positions..(s + 1) * positions;
            field.push(
                logprob[r.clone()]
                    .iter()
                    .zip(&logdet[r])
                    .map(|(&lp, &ld)| -(lp.as_f64() + ld.as_f64()))
                    .collect(),
            );
        }
    }
    Ok(Scored {
        fields: out,
        prototype_idx: fwd.prototype_idx,
        pattern_idx: fwd.pattern_idx,
    })
}

fn to_maps<T: Real>(model: &VqFlowModel<T>, samples: &[&FeatureSample<T>], fields: Vec<Vec<Vec<f64>>>) -> Vec<AnomalyMap> {
    let scales = &model.config().scales;
    let (oh, ow) = (scales[0].height, scales[0].width);
    samples
        .iter()
        .zip(fields)
        .map(|(s, branches)| {
            let mut values = vec![0.0; oh * ow];
            for (g, f) in scales.iter().zip(&branches) {
                let up = upsample_bilinear(f, g.height, g.width, oh, ow);
                values.iter_mut().zip(up).for_each(|(v, u)| *v += u);
            }
            AnomalyMap {
                sample_id: s.id,
                height: oh,
                width: ow,
                values,
            }
        })
        .collect()
}

/// Anomaly maps for several samples, evaluated together.
pub fn anomaly_maps<T: Real>(model: &VqFlowModel<T>, samples: &[&FeatureSample<T>], mode: DensityMode) -> Result<Vec<AnomalyMap>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let scored = branch_nll(model, samples, mode)?;
    Ok(to_maps(model, samples, scored.fields))
}

/// Sum over branches of the per-position NLL `−(ln p(z_i) + ln|det J_i|)`,
/// each branch bilinearly upsampled to the finest resolution.
pub fn anomaly_map<T: Real>(model: &VqFlowModel<T>, sample: &FeatureSample<T>, mode: DensityMode) -> Result<AnomalyMap> {
    Ok(anomaly_maps(model, &[sample], mode)?.remove(0))
}

pub fn image_score(map: &AnomalyMap, how: ImageScore) -> Result<f64> {
    if map.values.is_empty() {
        return Err(Error::Contract("empty anomaly map".into()));
    }
    Ok(match how {
        ImageScore::Max => map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ImageScore::Mean => map.values.iter().sum::<f64>() / map.values.len() as f64,
    })
}

/// Probability that a random positive outranks a random negative, ties
/// counted one half, via the rank-sum statistic with averaged tie ranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auroc", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("auroc score is NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Contract(format!(
            "auroc needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum of positives, kept integral so ties stay exact
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled: (i + j + 2)
        let doubled = (i + j + 2) as u128;
        let p = order[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank2_sum += doubled * p;
        i = j + 1;
    }
    let (pos, neg) = (pos as u128, neg as u128);
    let u2 = rank2_sum - pos * (pos + 1);
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// AUROC over every position of every map, masks resampled (nearest) to the
/// map resolution.
pub fn pixel_auroc(maps: &[AnomalyMap], masks: &[Mask]) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::dim("pixel_auroc", &[maps.len()], &[masks.len()]));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (m, k) in maps.iter().zip(masks) {
        let k = if (k.height, k.width) == (m.height, m.width) {
            k.clone()
        } else {
            k.resample(m.height, m.width)
        };
        scores.extend_from_slice(&m.values);
        labels.extend(k.data.iter().map(|&v| v == 1));
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::Contract("pixel AUROC needs at least one anomalous position".into()));
    }
    auroc(&scores, &labels)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub density: DensityMode,
    pub image_score: ImageScore,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            density: DensityMode::Dedicated,
            image_score: ImageScore::Max,
            batch_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub id: u32,
    pub class_id: u32,
    pub anomalous: bool,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub detection_auroc: f64,
    pub localization_auroc: Option<f64>,
    pub scores: Vec<SampleScore>,
    pub maps: Vec<AnomalyMap>,
    /// Prototype assignment counts over the evaluated samples.
    pub prototype_usage: Vec<u64>,
    /// Pattern-codeword assignment counts per scale.
    pub pattern_usage: Vec<Vec<u64>>,
}

/// Scores every sample and computes both AUROCs.
pub fn evaluate<T: Real>(model: &VqFlowModel<T>, test: &[FeatureSample<T>], opts: EvalOptions) -> Result<EvalReport> {
    if opts.batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let mut maps = Vec::with_capacity(test.len());
    let mut prototype_usage = vec![0u64; model.cpc_slot().map_or(0, |s| s.usage.len())];
    let mut pattern_usage: Vec<Vec<u64>> = model.cspc_slots().iter().map(|s| vec![0; s.usage.len()]).collect();
    for chunk in test.chunks(opts.batch_size) {
        let refs: Vec<&FeatureSample<T>> = chunk.iter().collect();
        let scored = branch_nll(model, &refs, opts.density)?;
        if let Some(idx) = &scored.prototype_idx {
            record_usage(&mut prototype_usage, idx);
        }
        for (u, idx) in pattern_usage.iter_mut().zip(&scored.pattern_idx) {
            if let Some(idx) = idx {
                record_usage(u, idx);
            }
        }
        maps.extend(to_maps(model, &refs, scored.fields));
    }
    let scores = test
        .iter()
        .zip(&maps)
        .map(|(s, m)| {
            Ok(SampleScore {
                id: s.id,
                class_id: s.class_id,
                anomalous: s.label.is_anomalous(),
                score: image_score(m, opts.image_score)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let detection_auroc = auroc(
        &scores.iter().map(|s| s.score).collect::<Vec<_>>(),
        &scores.iter().map(|s| s.anomalous).collect::<Vec<_>>(),
    )?;
    let masked: Vec<(AnomalyMap, Mask)> = test
        .iter()
        .zip(&maps)
        .filter_map(|(s, m)| {
            s.mask
                .clone()
                .or_else(|| (!s.label.is_anomalous()).then(|| Mask {
                    height: m.height,
                    width: m.width,
                    data: vec![0; m.height * m.width],
                }))
                .map(|k| (m.clone(), k))
        })
        .collect();
    let localization_auroc = if masked.iter().any(|(_, k)| k.count() > 0) {
        let (ms, ks): (Vec<_>, Vec<_>) = masked.into_iter().unzip();
        Some(pixel_auroc(&ms, &ks)?)
    } else {
        None
    };
    Ok(EvalReport {
        detection_auroc,
        localization_auroc,
        scores,
        maps,
        prototype_usage,
        pattern_usage,
    })
}
