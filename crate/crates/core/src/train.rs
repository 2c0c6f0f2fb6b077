//! Joint optimization of flows, codebooks, projections and heads.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::codebook::revive_dead_codes;
use crate::gradcheck::{finite_difference_check, GradCheck};
use crate::model::{Forward, VqFlowModel};
use crate::nn::Bound;
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::rng;
use crate::sample::{Batch, FeatureSample};
use crate::tape::{GradMode, Tape, Var};
use crate::{Error, Real, Result, Tensor};

/// Weights of the aggregated objective. Missing per-branch entries count as 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub gamma: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: Vec::new(),
            beta: 1.0,
            gamma: Vec::new(),
        }
    }
}

impl LossWeights {
    pub fn alpha(&self, i: usize) -> f64 {
        self.alpha.get(i).copied().unwrap_or(1.0)
    }

    pub fn gamma(&self, i: usize) -> f64 {
        self.gamma.get(i).copied().unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm bound; non-positive disables clipping.
    pub clip_norm: f64,
    /// Codewords used fewer times than this in an epoch are reseeded.
    pub revive_threshold: u64,
    /// Checkpoint every this many epochs; 0 only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 16,
            epochs: 100,
            weights: LossWeights::default(),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 10.0,
            revive_threshold: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Short schedule for the reduced-width models of `ModelConfig::desk`.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 10,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Loss values of one step; disabled components are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub flow: Vec<f64>,
    pub cpc: f64,
    pub cspc: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// `Σ α_i L_f^i + β L_cp + Σ γ_i L_csp^i` recomputed in `f64`.
    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        let f: f64 = self.flow.iter().enumerate().map(|(i, v)| w.alpha(i) * v).sum();
        let s: f64 = self.cspc.iter().enumerate().map(|(i, v)| w.gamma(i) * v).sum();
        f + w.beta * self.cpc + s
    }
}

/// One row of the loss trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Builds the aggregated objective on `tape` and returns its handle with the
/// per-component values and the forward pass.
pub fn unified_loss<T: Real>(
    model: &VqFlowModel<T>,
    tape: &mut Tape<T>,
    p: &Bound,
    batch: &Batch<T>,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown, Forward)> {
    let fwd = model.forward(tape, p, batch)?;
    let n = fwd.flow_nll.len();
    let check = |tape: &Tape<T>, v: Var, what: String| -> Result<f64> {
        let x = tape.value(v).item();
        if x.is_finite() {
            Ok(x.as_f64())
        } else {
            Err(Error::Numeric(format!("{what} loss is {:?}", x)))
        }
    };
    let mut terms: Vec<Var> = Vec::new();
    let mut flow = Vec::with_capacity(n);
    for (i, &v) in fwd.flow_nll.iter().enumerate() {
        flow.push(check(tape, v, format!("flow branch {}", i + 1))?);
        terms.push(tape.scale(v, T::lit(weights.alpha(i))));
    }
    let mut cpc = 0.0;
    if let Some(v) = fwd.cpc_loss {
        cpc = check(tape, v, "prototype codebook".into())?;
        terms.push(tape.scale(v, T::lit(weights.beta)));
    }
    let mut cspc = Vec::with_capacity(n);
    for (i, v) in fwd.cspc_loss.iter().enumerate() {
        match v {
            Some(v) => {
                cspc.push(check(tape, *v, format!("pattern codebook {}", i + 1))?);
                terms.push(tape.scale(*v, T::lit(weights.gamma(i))));
            }
            None => cspc.push(0.0),
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let total_value = check(tape, total, "total".into())?;
    Ok((
        total,
        LossBreakdown {
            flow,
            cpc,
            cspc,
            total: total_value,
        },
        fwd,
    ))
}

/// Loss breakdown and dense parameter gradients for one batch.
pub fn loss_and_grad<T: Real>(
    model: &VqFlowModel<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    mode: GradMode,
) -> Result<(LossBreakdown, Vec<Tensor<T>>, Forward, Tape<T>)> {
    let mut tape = Tape::with_mode(mode);
    let p = model.params().bind(&mut tape);
    let (total, loss, fwd) = unified_loss(model, &mut tape, &p, batch, weights)?;
    let shapes = model.params().shapes();
    let grads = tape.backward(total)?.into_dense(&shapes);
    Ok((loss, grads, fwd, tape))
}

/// Result of [`train`].
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// Codewords reseeded per epoch (prototype and pattern codebooks).
    pub revived: Vec<usize>,
    /// Epochs at which the checkpoint callback ran.
    pub checkpoints: Vec<usize>,
}

/// Trains `model` in place on normal samples.
///
/// Before the first step the codebooks are seeded from the first
/// `max(batch, K_cp)` samples of the first epoch's order. At each epoch end,
/// codewords used fewer than `revive_threshold` times are reseeded from the
/// last batch's quantizer inputs. On a non-finite loss or gradient the
/// model keeps its last good parameters and a numeric error is returned.
pub fn train<T: Real>(
    model: &mut VqFlowModel<T>,
    data: &[FeatureSample<T>],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &VqFlowModel<T>) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if let Some(s) = data.iter().find(|s| s.label.is_anomalous()) {
        return Err(Error::Contract(format!(
            "training set must contain only normal samples; sample {} is anomalous",
            s.id
        )));
    }
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let shapes: Vec<Vec<usize>> = model.params().shapes().iter().map(|s| s.to_vec()).collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = Adam::<T>::new(
        AdamConfig {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        },
        &shape_refs,
    );
    let mut shuffle = rng::named(cfg.seed, "train.shuffle");
    let mut revive_rng = rng::named(cfg.seed, "train.revive");
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        if !model.codebooks_seeded() {
            seed_from_order(model, data, &order, cfg)?;
        }
        let mut last_inputs: Option<(Option<Tensor<T>>, Vec<Option<Tensor<T>>>)> = None;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&FeatureSample<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = Batch::from_samples(&samples)?;
            let (loss, mut dense, fwd, tape) =
                loss_and_grad(model, &batch, &cfg.weights, GradMode::StraightThrough)?;
            if cfg.clip_norm > 0.0 {
                let norm = clip_global_norm(&mut dense, T::lit(cfg.clip_norm));
                if !norm.is_finite() {
                    return Err(Error::Numeric(format!("gradient norm is {:?} at step {step}", norm)));
                }
            }
            opt.step(model.params_mut().values_mut(), &dense, &[])?;
            model.record_usage(&fwd);
            last_inputs = Some((
                fwd.y.map(|v| tape.value(v).clone()),
                fwd.pattern_input.iter().map(|v| v.map(|v| tape.value(v).clone())).collect(),
            ));
            report.trace.push(TraceRow { step, epoch, loss });
            step += 1;
        }
        if let Some((y, residuals)) = last_inputs {
            report.revived.push(revive(model, y, residuals, cfg.revive_threshold, &mut revive_rng)?);
        }
        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            on_checkpoint(epoch + 1, model)?;
            report.checkpoints.push(epoch + 1);
        }
    }
    Ok(report)
}

fn seed_from_order<T: Real>(
    model: &mut VqFlowModel<T>,
    data: &[FeatureSample<T>],
    order: &[usize],
    cfg: &TrainConfig,
) -> Result<()> {
    let k = cfg.batch_size.max(model.config().k_cp).min(data.len());
    let seed_set: Vec<&FeatureSample<T>> = order[..k].iter().map(|&i| &data[i]).collect();
    model.init_codebooks(&seed_set)
}

/// Seeds the codebooks exactly as the first epoch of [`train`] would, without
/// taking an optimization step. A model seeded this way trains identically.
pub fn seed_codebooks<T: Real>(
    model: &mut VqFlowModel<T>,
    data: &[FeatureSample<T>],
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::named(cfg.seed, "train.shuffle"));
    seed_from_order(model, data, &order, cfg)
}

fn revive<T: Real>(
    model: &mut VqFlowModel<T>,
    y: Option<Tensor<T>>,
    residuals: Vec<Option<Tensor<T>>>,
    threshold: u64,
    r: &mut rng::Rng,
) -> Result<usize> {
    let mut count = 0;
    let cpc = model.cpc_slot().map(|s| s.param);
    let cspc: Vec<_> = model.cspc_slots().iter().map(|s| s.param).collect();
    let mut slots: Vec<(crate::nn::ParamId, Tensor<T>)> = Vec::new();
    if let (Some(id), Some(y)) = (cpc, y) {
        slots.push((id, y));
    }
    for (id, r) in cspc.into_iter().zip(residuals) {
        if let Some(r) = r {
            slots.push((id, r));
        }
    }
    let usages: Vec<Vec<u64>> = model.usage_mut().iter().map(|u| (*u).clone()).collect();
    for (k, (id, recent)) in slots.into_iter().enumerate() {
        let mut usage = usages[k].clone();
        let mut cw = model.params().get(id).clone();
        count += revive_dead_codes(&mut cw, &mut usage, &recent, threshold, r)?.len();
        *model.params_mut().get_mut(id) = cw;
    }
    for u in model.usage_mut() {
        u.iter_mut().for_each(|v| *v = 0);
    }
    Ok(count)
}

/// Checks the gradients of the aggregated objective against central
/// differences, parameter by parameter. Uses exact gradient routing so the
/// reference is the derivative of the reported value.
pub fn loss_gradient_check<T: Real>(
    model: &VqFlowModel<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
    eps: T,
) -> Result<GradCheck> {
    let (_, grads, _, _) = loss_and_grad(model, batch, weights, GradMode::Exact)?;
    let mut work = model.clone();
    finite_difference_check(model.params().values(), &grads, eps, |p| {
        work.params_mut().set_values(p.to_vec())?;
        let mut tape = Tape::with_mode(GradMode::Exact);
        let bound = work.params().bind(&mut tape);
        let (total, _, _) = unified_loss(&work, &mut tape, &bound, batch, weights)?;
        Ok(tape.value(total).item())
    })
}
