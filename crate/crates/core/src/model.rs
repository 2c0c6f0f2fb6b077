//! The assembled model: prototype codebook, per-scale pattern codebooks,
//! conditional flow branches and Gaussian heads.
//!
//! Data path for one batch (row layout, `P_i = H_i·W_i` positions per sample):
//!
//! ```text
//! y      = MLP(avg_pool(h_L))                       [B, D_cp]
//! ŷ      = nearest prototype of y                   (straight-through)
//! cond_i = [pe_i, ŷ broadcast]                      [B·P_i, D_csp]
//! h′_i   = Linear_i(h_i)                            [B·P_i, D_csp]
//! ĥ′_i   = Q_i(h′_i − cond_i) + cond_i              (straight-through)
//! z_i    = F_i(h_i | ĥ′_i),  logdet_i
//! ```
//!
//! Disabled components drop out: without pattern codebooks the flows see
//! `cond_i` directly; without prototypes the `ŷ` slot of `cond_i` is zero;
//! without positional embedding the `pe` slot is zero; with none of the
//! three the flows are unconditional. With concept-aware modeling the flow
//! target is `N(μ(ŷ), σ(ŷ)²)` (or `N(μ(y), σ(y)²)` when prototypes are off),
//! otherwise `N(0, I)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::codebook::{codebook_init, quantize_nearest, record_usage, vq_loss};
use crate::density::{gaussian_logprob_rows, standard_logprob_rows, GaussianHeads};
use crate::flow::FlowBranch;
use crate::nn::{Bound, Init, Linear, Mlp, ParamId, ParamSet};
use crate::rng;
use crate::sample::{Batch, FeatureSample};
use crate::tape::{Tape, Var};
use crate::{codebook, Error, Real, Result, Tensor};

/// Which of the optional components are active. The seven rows of the
/// component ablation are available through [`Components::ablation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Components {
    /// Concept-aware base distribution.
    pub cadm: bool,
    /// Prototype codebook.
    pub cpc: bool,
    /// Per-scale pattern codebooks.
    pub cspc: bool,
    /// Positional embedding in the pattern-codebook condition.
    pub pe: bool,
}

impl Components {
    pub const FULL: Components = Components {
        cadm: true,
        cpc: true,
        cspc: true,
        pe: true,
    };

    pub const BASELINE: Components = Components {
        cadm: false,
        cpc: false,
        cspc: false,
        pe: false,
    };

    /// Ablation rows 0 to 6: baseline, CADM, CPC, CSPC, CADM+CPC,
    /// CADM+CPC+CSPC, and everything including PE.
    pub fn ablation(id: u8) -> Option<Components> {
        let (cadm, cpc, cspc, pe) = match id {
            0 => (false, false, false, false),
            1 => (true, false, false, false),
            2 => (false, true, false, false),
            3 => (false, false, true, false),
            4 => (true, true, false, false),
            5 => (true, true, true, false),
            6 => (true, true, true, true),
            _ => return None,
        };
        Some(Components { cadm, cpc, cspc, pe })
    }

    /// Whether the flows receive condition features at all.
    pub fn conditioned(&self) -> bool {
        self.cpc || self.cspc || self.pe
    }

    /// Whether the pooled projection `y` is computed.
    pub fn projects_prototype(&self) -> bool {
        self.cpc || self.cadm
    }
}

/// Channels and spatial size of one feature scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScaleGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ScaleGeometry {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Finest first; the last scale feeds the prototype codebook.
    pub scales: Vec<ScaleGeometry>,
    pub d_cp: usize,
    pub d_pe: usize,
    /// Pattern-codebook width; must equal `d_cp + d_pe`.
    pub d_csp: usize,
    pub k_cp: usize,
    pub k_csp: usize,
    /// Coupling blocks per branch.
    pub blocks: usize,
    pub cpc_hidden: usize,
    pub head_hidden: usize,
    pub components: Components,
    pub seed: u64,
}

impl ModelConfig {
    /// Sizes from the original full-scale setup: `D_cp = 256`, `D_PE = 32`,
    /// `K_cp = 32`, `K_csp = 512`, 8 coupling blocks per branch.
    pub fn paper(scales: Vec<ScaleGeometry>) -> Self {
        ModelConfig {
            scales,
            d_cp: 256,
            d_pe: 32,
            d_csp: 288,
            k_cp: 32,
            k_csp: 512,
            blocks: 8,
            cpc_hidden: 256,
            head_hidden: 256,
            components: Components::FULL,
            seed: 0,
        }
    }

    /// Reduced widths that train in seconds on synthetic data.
    pub fn desk(scales: Vec<ScaleGeometry>) -> Self {
        ModelConfig {
            scales,
            d_cp: 16,
            d_pe: 8,
            d_csp: 24,
            k_cp: 8,
            k_csp: 32,
            blocks: 8,
            cpc_hidden: 32,
            head_hidden: 32,
            components: Components::FULL,
            seed: 0,
        }
    }

    pub fn with_components(mut self, c: Components) -> Self {
        self.components = c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Largest branch width; the Gaussian heads emit this many channels.
    pub fn max_channels(&self) -> usize {
        self.scales.iter().map(|s| s.channels).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = Vec::new();
        if self.scales.is_empty() {
            bad.push("at least one scale is required".into());
        }
        if self.d_csp != self.d_cp + self.d_pe {
            bad.push(format!(
                "D_csp = D_cp + D_PE violated: {} != {} + {}",
                self.d_csp, self.d_cp, self.d_pe
            ));
        }
        if self.d_pe % 2 != 0 {
            bad.push(format!("D_PE must be even, got {}", self.d_pe));
        }
        if self.components.projects_prototype() && self.d_cp == 0 {
            bad.push("D_cp must be positive".into());
        }
        if self.components.cpc && self.k_cp == 0 {
            bad.push("K_cp must be positive".into());
        }
        if self.components.cspc && self.k_csp == 0 {
            bad.push("K_csp must be positive".into());
        }
        for (i, s) in self.scales.iter().enumerate() {
            if s.channels < 2 || s.height == 0 || s.width == 0 {
                bad.push(format!("scale {} needs >= 2 channels and a non-empty grid", i + 1));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// A codebook living in the parameter set, with its usage counters.
#[derive(Clone, Debug, PartialEq)]
pub struct CodebookSlot {
    pub param: ParamId,
    pub usage: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqFlowModel<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    cpc_proj: Option<Mlp>,
    scale_proj: Vec<Linear>,
    heads: Option<GaussianHeads>,
    branches: Vec<FlowBranch>,
    cpc: Option<CodebookSlot>,
    cspc: Vec<CodebookSlot>,
    /// Positional embedding rows `[P_i, D_PE]` per scale (zeros when off).
    pe_rows: Vec<Tensor<T>>,
    codebooks_seeded: bool,
}

/// Tape handles and assignments produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub z: Vec<Var>,
    pub logdet: Vec<Var>,
    /// Per-position base log-density of `z_i`.
    pub logprob: Vec<Var>,
    /// Per-branch flow loss `−mean(logprob + logdet)`.
    pub flow_nll: Vec<Var>,
    /// Pooled projection `y` (before quantization).
    pub y: Option<Var>,
    pub prototype_idx: Option<Vec<usize>>,
    pub cpc_loss: Option<Var>,
    /// Residuals `h′_i − cond_i` that were quantized, per scale.
    pub pattern_input: Vec<Option<Var>>,
    pub pattern_idx: Vec<Option<Vec<usize>>>,
    pub cspc_loss: Vec<Option<Var>>,
}

/// Builds the model for `config`; every component draws from its own seeded
/// stream, so enabling or disabling one does not change another's weights.
pub fn build_model<T: Real>(config: &ModelConfig) -> Result<VqFlowModel<T>> {
    config.validate()?;
    let c = config.components;
    let seed = config.seed;
    let mut params = ParamSet::new();
    let last = config.scales.last().expect("validated");

    let cpc_proj = c.projects_prototype().then(|| {
        Mlp::new(
            &mut params,
            "cpc_proj",
            last.channels,
            config.cpc_hidden,
            config.d_cp,
            Init::Uniform,
            &mut rng::named(seed, "cpc_proj"),
        )
    });
    let scale_proj = if c.cspc {
        config
            .scales
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Linear::new(
                    &mut params,
                    &format!("scale_proj{}", i + 1),
                    s.channels,
                    config.d_csp,
                    Init::Uniform,
                    &mut rng::named(seed, &format!("scale_proj{}", i + 1)),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    let heads = c.cadm.then(|| {
        GaussianHeads::new(
            &mut params,
            "heads",
            config.d_cp,
            config.head_hidden,
            config.max_channels(),
            &mut rng::named(seed, "heads"),
        )
    });
    let cond_channels = if c.conditioned() { config.d_csp } else { 0 };
    let branches = config
        .scales
        .iter()
        .enumerate()
        .map(|(i, s)| {
            FlowBranch::new(
                &mut params,
                &format!("flow{}", i + 1),
                s.channels,
                cond_channels,
                2 * s.channels,
                config.blocks,
                Init::Zeros,
                &mut rng::named(seed, &format!("flow{}", i + 1)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let cpc = c.cpc.then(|| CodebookSlot {
        param: params.add(
            "cpc.codewords",
            random_codewords(config.k_cp, config.d_cp, &mut rng::named(seed, "cpc.codewords")),
        ),
        usage: vec![0; config.k_cp],
    });
    let cspc = if c.cspc {
        (0..config.scales.len())
            .map(|i| CodebookSlot {
                param: params.add(
                    format!("cspc{}.codewords", i + 1),
                    random_codewords(
                        config.k_csp,
                        config.d_csp,
                        &mut rng::named(seed, &format!("cspc{}.codewords", i + 1)),
                    ),
                ),
                usage: vec![0; config.k_csp],
            })
            .collect()
    } else {
        Vec::new()
    };
    let pe_rows = config
        .scales
        .iter()
        .map(|s| {
            if c.pe {
                Ok(codebook::positional_embedding(s.height, s.width, config.d_pe)?.rows())
            } else {
                Ok(Tensor::zeros(&[s.positions(), config.d_pe]))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VqFlowModel {
        config: config.clone(),
        params,
        cpc_proj,
        scale_proj,
        heads,
        branches,
        cpc,
        cspc,
        pe_rows,
        codebooks_seeded: !(c.cpc || c.cspc),
    })
}

/// Placeholder codewords drawn from `N(0, 1)`, replaced by data-driven
/// seeding before the first training step.
fn random_codewords<T: Real>(k: usize, d: usize, r: &mut rng::Rng) -> Tensor<T> {
    let data = (0..k * d).map(|_| rng::normal(r)).collect();
    Tensor::new(vec![k, d], data).expect("shape")
}

impl<T: Real> VqFlowModel<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn branches(&self) -> &[FlowBranch] {
        &self.branches
    }

    pub fn heads(&self) -> Option<&GaussianHeads> {
        self.heads.as_ref()
    }

    pub fn cpc_slot(&self) -> Option<&CodebookSlot> {
        self.cpc.as_ref()
    }

    pub fn cspc_slots(&self) -> &[CodebookSlot] {
        &self.cspc
    }

    /// Codewords of the prototype codebook.
    pub fn prototypes(&self) -> Option<&Tensor<T>> {
        self.cpc.as_ref().map(|s| self.params.get(s.param))
    }

    pub fn codebooks_seeded(&self) -> bool {
        self.codebooks_seeded
    }

    pub fn set_codebooks_seeded(&mut self, seeded: bool) {
        self.codebooks_seeded = seeded;
    }

    /// All usage counters: prototype codebook first, then pattern codebooks.
    pub fn usage_mut(&mut self) -> Vec<&mut Vec<u64>> {
        let mut out = Vec::new();
        if let Some(s) = self.cpc.as_mut() {
            out.push(&mut s.usage);
        }
        out.extend(self.cspc.iter_mut().map(|s| &mut s.usage));
        out
    }

    pub fn cast<U: Real>(&self) -> VqFlowModel<U> {
        VqFlowModel {
            config: self.config.clone(),
            params: self.params.cast(),
            cpc_proj: self.cpc_proj.clone(),
            scale_proj: self.scale_proj.clone(),
            heads: self.heads.clone(),
            branches: self.branches.clone(),
            cpc: self.cpc.clone(),
            cspc: self.cspc.clone(),
            pe_rows: self.pe_rows.iter().map(|t| t.cast()).collect(),
            codebooks_seeded: self.codebooks_seeded,
        }
    }

    /// Checks that a batch matches the configured scales.
    pub fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        let want: Vec<(usize, usize, usize)> = self
            .config
            .scales
            .iter()
            .map(|s| (s.channels, s.height, s.width))
            .collect();
        if batch.geometry != want {
            return Err(Error::Contract(format!(
                "feature geometry {:?} does not match model scales {:?}",
                batch.geometry, want
            )));
        }
        Ok(())
    }

    fn constant_rows(&self, tape: &mut Tape<T>, rows: &Tensor<T>, repeat: usize) -> Var {
        let mut data = Vec::with_capacity(rows.len() * repeat);
        for _ in 0..repeat {
            data.extend_from_slice(rows.data());
        }
        tape.constant(Tensor::new(vec![rows.rows() * repeat, rows.cols()], data).expect("shape"))
    }

    /// Forward pass over a batch.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, batch: &Batch<T>) -> Result<Forward> {
        self.check_batch(batch)?;
        let c = self.config.components;
        let commitment = T::lit(codebook::COMMITMENT);
        let b = batch.size;
        let n_scales = self.config.scales.len();
        let xs: Vec<Var> = batch.scales.iter().map(|s| tape.constant(s.clone())).collect();

        let mut y = None;
        if let Some(proj) = &self.cpc_proj {
            let pooled = tape.mean_groups(xs[n_scales - 1], batch.positions(n_scales - 1))?;
            y = Some(proj.forward(tape, p, pooled)?);
        }

        let mut prototype = y;
        let mut prototype_idx = None;
        let mut cpc_loss = None;
        if let (Some(slot), Some(yv)) = (&self.cpc, y) {
            let cw = p.var(slot.param);
            let q = quantize_nearest(tape.value(cw), tape.value(yv))?;
            let yq = tape.gather_rows(cw, &q.indices)?;
            cpc_loss = Some(vq_loss(tape, yv, yq, commitment)?);
            prototype = Some(tape.pass_through(yq, yv)?);
            prototype_idx = Some(q.indices);
        }

        let base = match (&self.heads, prototype) {
            (Some(heads), Some(proto)) => {
                let (mu, sigma) = heads.forward(tape, p, proto)?;
                let ls = tape.log(sigma);
                Some((mu, ls))
            }
            _ => None,
        };

        let mut out = Forward {
            z: Vec::with_capacity(n_scales),
            logdet: Vec::with_capacity(n_scales),
            logprob: Vec::with_capacity(n_scales),
            flow_nll: Vec::with_capacity(n_scales),
            y,
            prototype_idx,
            cpc_loss,
            pattern_input: vec![None; n_scales],
            pattern_idx: vec![None; n_scales],
            cspc_loss: vec![None; n_scales],
        };

        for (i, x) in xs.iter().copied().enumerate() {
            let positions = batch.positions(i);
            let cond_prefix = if c.conditioned() {
                let pe = self.constant_rows(tape, &self.pe_rows[i], b);
                let proto = match (c.cpc, prototype) {
                    (true, Some(pv)) => tape.expand_groups(pv, positions)?,
                    _ => tape.constant(Tensor::zeros(&[b * positions, self.config.d_cp])),
                };
                Some(tape.concat(&[pe, proto])?)
            } else {
                None
            };

            let cond = if let (Some(slot), Some(prefix)) = (self.cspc.get(i), cond_prefix) {
                let h_proj = self.scale_proj[i].forward(tape, p, x)?;
                let residual = tape.sub(h_proj, prefix)?;
                let cw = p.var(slot.param);
                let q = quantize_nearest(tape.value(cw), tape.value(residual))?;
                let rq = tape.gather_rows(cw, &q.indices)?;
                out.cspc_loss[i] = Some(vq_loss(tape, residual, rq, commitment)?);
                let hq = tape.add(rq, prefix)?;
                out.pattern_input[i] = Some(residual);
                out.pattern_idx[i] = Some(q.indices);
                Some(tape.pass_through(hq, h_proj)?)
            } else {
                cond_prefix
            };

            let (z, logdet) = self.branches[i].forward(tape, p, x, cond)?;
            let d = self.config.scales[i].channels;
            let logprob = match base {
                Some((mu, ls)) => {
                    let mu_i = tape.slice_cols(mu, 0, d)?;
                    let ls_i = tape.slice_cols(ls, 0, d)?;
                    let mu_r = tape.expand_groups(mu_i, positions)?;
                    let ls_r = tape.expand_groups(ls_i, positions)?;
                    gaussian_logprob_rows(tape, z, mu_r, ls_r)?
                }
                None => standard_logprob_rows(tape, z)?,
            };
            let ll = tape.add(logprob, logdet)?;
            let mean = tape.mean(ll);
            out.flow_nll.push(tape.scale(mean, -T::one()));
            out.z.push(z);
            out.logdet.push(logdet);
            out.logprob.push(logprob);
        }
        Ok(out)
    }

    /// Adds the assignments of a forward pass to the usage counters.
    pub fn record_usage(&mut self, fwd: &Forward) {
        if let (Some(slot), Some(idx)) = (self.cpc.as_mut(), fwd.prototype_idx.as_ref()) {
            record_usage(&mut slot.usage, idx);
        }
        for (slot, idx) in self.cspc.iter_mut().zip(&fwd.pattern_idx) {
            if let Some(idx) = idx {
                record_usage(&mut slot.usage, idx);
            }
        }
    }

    /// Pooled projections `y` for a set of samples, `[N, D_cp]`.
    pub fn project_prototypes(&self, samples: &[&FeatureSample<T>]) -> Result<Tensor<T>> {
        let proj = self
            .cpc_proj
            .as_ref()
            .ok_or_else(|| Error::Contract("model has no prototype projection".into()))?;
        let batch = Batch::from_samples(samples)?;
        self.check_batch(&batch)?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let last = batch.scales.len() - 1;
        let x = tape.constant(batch.scales[last].clone());
        let pooled = tape.mean_groups(x, batch.positions(last))?;
        let y = proj.forward(&mut tape, &p, pooled)?;
        Ok(tape.value(y).clone())
    }

    /// Nearest prototype index of each sample.
    pub fn assign_prototypes(&self, samples: &[&FeatureSample<T>]) -> Result<Vec<usize>> {
        let cw = self
            .prototypes()
            .ok_or_else(|| Error::Contract("model has no prototype codebook".into()))?;
        let y = self.project_prototypes(samples)?;
        Ok(quantize_nearest(cw, &y)?.indices)
    }

    /// k-means++ seeding of every codebook from training samples: the
    /// prototype codebook from their pooled projections, then each pattern
    /// codebook from the residuals of the same samples under the seeded
    /// prototypes. Needs at least `K_cp` samples and `K_csp` positions at
    /// the coarsest scale.
    pub fn init_codebooks(&mut self, samples: &[&FeatureSample<T>]) -> Result<()> {
        let seed = self.config.seed;
        if let Some(slot) = &self.cpc {
            let y = self.project_prototypes(samples)?;
            let cb = codebook_init(&y, self.config.k_cp, &mut rng::named(seed, "cpc.init"))?;
            let id = slot.param;
            *self.params.get_mut(id) = cb.codewords().clone();
        }
        if !self.cspc.is_empty() {
            let batch = Batch::from_samples(samples)?;
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let fwd = self.forward(&mut tape, &p, &batch)?;
            for i in 0..self.cspc.len() {
                let r = fwd.pattern_input[i].expect("pattern codebooks active");
                let residual = tape.value(r);
                let cb = codebook_init(
                    residual,
                    self.config.k_csp,
                    &mut rng::named(seed, &format!("cspc{}.init", i + 1)),
                )?;
                let id = self.cspc[i].param;
                *self.params.get_mut(id) = cb.codewords().clone();
            }
        }
        for u in self.usage_mut() {
            u.iter_mut().for_each(|v| *v = 0);
        }
        self.codebooks_seeded = true;
        Ok(())
    }

    /// Channel permutations of every coupling block, branch by branch.
    pub fn permutations(&self) -> Vec<Vec<usize>> {
        self.branches
            .iter()
            .flat_map(|b| b.blocks.iter().map(|blk| blk.perm.clone()))
            .collect()
    }

    /// Flow inverse for branch `i`: rows `z` and condition rows to `h` rows.
    pub fn invert_branch(&self, i: usize, z: &Tensor<T>, cond: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.branches[i].inverse(&self.params, z, cond)
    }
}
