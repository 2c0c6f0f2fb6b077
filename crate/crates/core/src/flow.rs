//! Conditional affine coupling flows.
//!
//! Each block permutes channels with a fixed seed-derived permutation,
//! splits them into `(a, b)`, and maps
//!
//! ```text
//! b ← b ⊙ exp(s(a, c)) + t(a, c),   a unchanged
//! ```
//!
//! where `(s, t)` come from a two-layer per-position conditioner over the
//! concatenation of `a` and the condition features `c`. The log-scale is
//! soft-clamped as `α·tanh(s/α)`, so the per-position log-determinant is the
//! sum of the clamped `s`. Parameters are shared across positions.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::nn::{Bound, Init, Linear, ParamSet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::{Error, Real, Result, Tensor};

/// Soft-clamp bound on the log-scale.
pub const CLAMP: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    /// Output channel `j` of the permutation reads input channel `perm[j]`.
    pub perm: Vec<usize>,
    pub channels: usize,
    pub cond_channels: usize,
    /// Size of the untransformed half `a`.
    pub split: usize,
    pub hidden: Linear,
    pub head: Linear,
    pub clamp: f64,
    /// Position of the block in its branch, used in error messages.
    pub index: usize,
}

impl CouplingBlock {
    /// `last` initializes the conditioner's output layer; [`Init::Zeros`]
    /// makes the block an exact channel permutation at start.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        index: usize,
        channels: usize,
        cond_channels: usize,
        hidden: usize,
        last: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        if channels < 2 {
            return Err(Error::Config(format!(
                "coupling needs at least 2 channels, got {channels}"
            )));
        }
        let mut perm: Vec<usize> = (0..channels).collect();
        perm.shuffle(rng);
        let split = channels / 2;
        let rest = channels - split;
        let hidden_layer = Linear::new(
            params,
            &format!("{name}.hidden"),
            split + cond_channels,
            hidden,
            Init::Uniform,
            rng,
        );
        let head = Linear::new(params, &format!("{name}.head"), hidden, 2 * rest, last, rng);
        Ok(CouplingBlock {
            perm,
            channels,
            cond_channels,
            split,
            hidden: hidden_layer,
            head,
            clamp: CLAMP,
            index,
        })
    }

    fn rest(&self) -> usize {
        self.channels - self.split
    }

    fn check_shapes(&self, x: &[usize], cond: Option<&[usize]>) -> Result<()> {
        if x.last() != Some(&self.channels) {
            return Err(Error::dim("coupling input", x, &[self.channels]));
        }
        match (cond, self.cond_channels) {
            (None, 0) => Ok(()),
            (Some(c), k) if k > 0 && c.last() == Some(&k) && c[..c.len() - 1] == x[..x.len() - 1] => Ok(()),
            (c, k) => Err(Error::dim("coupling condition", c.unwrap_or(&[]), &[k])),
        }
    }

    /// Clamped log-scale and shift from the untransformed half.
    fn scale_shift<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        a: Var,
        cond: Option<Var>,
    ) -> Result<(Var, Var)> {
        let inp = match cond {
            Some(c) => tape.concat(&[a, c])?,
            None => a,
        };
        let h = self.hidden.forward(tape, p, inp)?;
        let h = tape.tanh(h);
        let st = self.head.forward(tape, p, h)?;
        let rest = self.rest();
        let s_raw = tape.slice_cols(st, 0, rest)?;
        let t = tape.slice_cols(st, rest, rest)?;
        let alpha = T::lit(self.clamp);
        let s = tape.scale(s_raw, T::one() / alpha);
        let s = tape.tanh(s);
        let s = tape.scale(s, alpha);
        if !tape.value(s).is_finite() || !tape.value(t).is_finite() {
            return Err(Error::Numeric(format!(
                "coupling block {} scale/shift",
                self.index
            )));
        }
        Ok((s, t))
    }

    /// Rows `[N, D]` to `(out [N, D], logdet [N])`; `out` stays in permuted
    /// channel order.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        cond: Option<Var>,
    ) -> Result<(Var, Var)> {
        self.check_shapes(tape.shape(x), cond.map(|c| tape.shape(c)))?;
        let xp = tape.gather_cols(x, &self.perm)?;
        let a = tape.slice_cols(xp, 0, self.split)?;
        let b = tape.slice_cols(xp, self.split, self.rest())?;
        let (s, t) = self.scale_shift(tape, p, a, cond)?;
        let e = tape.exp(s);
        let scaled = tape.mul(b, e)?;
        let out_b = tape.add(scaled, t)?;
        let out = tape.concat(&[a, out_b])?;
        let logdet = tape.sum_cols(s)?;
        Ok((out, logdet))
    }

    /// Exact inverse of [`CouplingBlock::forward`] on rows.
    pub fn inverse<T: Real>(
        &self,
        params: &ParamSet<T>,
        z: &Tensor<T>,
        cond: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        self.check_shapes(z.shape(), cond.map(|c| c.shape()))?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let cv = cond.map(|c| tape.constant(c.clone()));
        let a = tape.slice_cols(zv, 0, self.split)?;
        let (s, t) = self.scale_shift(&mut tape, &bound, a, cv)?;
        let (s, t) = (tape.value(s), tape.value(t));
        let (d, rest) = (self.channels, self.rest());
        let rows = z.rows();
        let mut out = Vec::with_capacity(z.len());
        out.resize(z.len(), T::zero());
        for r in 0..rows {
            let zr = z.row(r);
            let permuted = |j: usize| -> T {
                if j < self.split {
                    zr[j]
                } else {
                    let k = j - self.split;
                    (zr[j] - t.data()[r * rest + k]) * (-s.data()[r * rest + k]).exp()
                }
            };
            for j in 0..d {
                out[r * d + self.perm[j]] = permuted(j);
            }
        }
        Tensor::new(z.shape().to_vec(), out)
    }

    /// Feature-map form: `h` is `[D, H, W]`, `cond` `[D_c, H, W]`; returns
    /// `(out [D, H, W], logdet [H, W])`.
    pub fn forward_map<T: Real>(
        &self,
        params: &ParamSet<T>,
        h: &Tensor<T>,
        cond: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (_, hh, ww) = h.chw()?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(h.chw_to_rows()?);
        let c = match cond {
            Some(c) => Some(tape.constant(c.chw_to_rows()?)),
            None => None,
        };
        let (out, logdet) = self.forward(&mut tape, &bound, x, c)?;
        Ok((
            tape.value(out).rows_to_chw(hh, ww)?,
            tape.value(logdet).clone().reshape(&[hh, ww])?,
        ))
    }

    pub fn inverse_map<T: Real>(
        &self,
        params: &ParamSet<T>,
        z: &Tensor<T>,
        cond: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let (_, hh, ww) = z.chw()?;
        let c = cond.map(|c| c.chw_to_rows()).transpose()?;
        self.inverse(params, &z.chw_to_rows()?, c.as_ref())?.rows_to_chw(hh, ww)
    }
}

/// A sequence of coupling blocks over one feature scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowBranch {
    pub blocks: Vec<CouplingBlock>,
    pub channels: usize,
    pub cond_channels: usize,
}

impl FlowBranch {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        channels: usize,
        cond_channels: usize,
        hidden: usize,
        blocks: usize,
        last: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|k| {
                CouplingBlock::new(
                    params,
                    &format!("{name}.block{k}"),
                    k,
                    channels,
                    cond_channels,
                    hidden,
                    last,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowBranch {
            blocks,
            channels,
            cond_channels,
        })
    }

    /// Composition of all blocks; the log-determinant is the sum of the
    /// block log-determinants. With zero blocks this is the identity.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        cond: Option<Var>,
    ) -> Result<(Var, Var)> {
        let rows = tape.value(x).rows();
        let mut z = x;
        let mut total = tape.constant(Tensor::zeros(&[rows]));
        for (k, block) in self.blocks.iter().enumerate() {
            let (next, ld) = block.forward(tape, p, z, cond)?;
            z = next;
            total = if k == 0 { ld } else { tape.add(total, ld)? };
        }
        Ok((z, total))
    }

    pub fn inverse<T: Real>(
        &self,
        params: &ParamSet<T>,
        z: &Tensor<T>,
        cond: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let mut h = z.clone();
        for block in self.blocks.iter().rev() {
            h = block.inverse(params, &h, cond)?;
        }
        Ok(h)
    }

    /// Rows-in, rows-out forward without gradient bookkeeping.
    pub fn forward_rows<T: Real>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        cond: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let cv = cond.map(|c| tape.constant(c.clone()));
        let (z, ld) = self.forward(&mut tape, &bound, xv, cv)?;
        Ok((tape.value(z).clone(), tape.value(ld).clone()))
    }

    pub fn forward_map<T: Real>(
        &self,
        params: &ParamSet<T>,
        h: &Tensor<T>,
        cond: Option<&Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (_, hh, ww) = h.chw()?;
        let c = cond.map(|c| c.chw_to_rows()).transpose()?;
        let (z, ld) = self.forward_rows(params, &h.chw_to_rows()?, c.as_ref())?;
        Ok((z.rows_to_chw(hh, ww)?, ld.reshape(&[hh, ww])?))
    }

    pub fn inverse_map<T: Real>(
        &self,
        params: &ParamSet<T>,
        z: &Tensor<T>,
        cond: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let (_, hh, ww) = z.chw()?;
        let c = cond.map(|c| c.chw_to_rows()).transpose()?;
        self.inverse(params, &z.chw_to_rows()?, c.as_ref())?.rows_to_chw(hh, ww)
    }
}
