//! Base densities for the flow outputs.
//!
//! Without concept-aware modeling the target is a standard Gaussian. With
//! it, two small networks map a prototype `c_k` to a per-channel mean and
//! standard deviation, `σ = softplus(raw) + ε_σ`. The heads are shared by all
//! branches: they emit `D_max = max_i D_i` channels and branch `i` reads the
//! first `D_i`.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float math is unavailable without std
use num_traits::Float;

use crate::nn::{Bound, Init, Mlp, ParamSet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::pairwise_sum;
use crate::{Error, Real, Result, Tensor};

/// Lower bound added to every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// `½·ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianHeads {
    pub mu: Mlp,
    pub sigma: Mlp,
    pub inputs: usize,
    pub outputs: usize,
}

impl GaussianHeads {
    /// Output layers start at zero: `μ = 0` and `σ = softplus(0) + ε_σ`.
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        rng: &mut Rng,
    ) -> Self {
        let mu = Mlp::new(params, &format!("{name}.mu"), inputs, hidden, outputs, Init::Zeros, rng);
        let sigma = Mlp::new(params, &format!("{name}.sigma"), inputs, hidden, outputs, Init::Zeros, rng);
        GaussianHeads {
            mu,
            sigma,
            inputs,
            outputs,
        }
    }

    /// `(μ, σ)` for each row of `c` (`[B, inputs]` to two `[B, outputs]`).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, c: Var) -> Result<(Var, Var)> {
        let mu = self.mu.forward(tape, p, c)?;
        let raw = self.sigma.forward(tape, p, c)?;
        let sp = tape.softplus(raw);
        let sigma = tape.offset(sp, T::lit(SIGMA_FLOOR));
        Ok((mu, sigma))
    }

    /// `(μ(c_k), σ(c_k))` for a single prototype vector.
    pub fn prototype_params<T: Real>(
        &self,
        params: &ParamSet<T>,
        c: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if c.len() != self.inputs {
            return Err(Error::dim("prototype_params", c.shape(), &[self.inputs]));
        }
        let (mu, sigma) = self.table(params, &c.clone().reshape(&[1, self.inputs])?)?;
        Ok((mu.reshape(&[self.outputs])?, sigma.reshape(&[self.outputs])?))
    }

    /// `(μ, σ)` for every row of a `[K, inputs]` table.
    pub fn table<T: Real>(&self, params: &ParamSet<T>, c: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let cv = tape.constant(c.clone());
        let (mu, sigma) = self.forward(&mut tape, &bound, cv)?;
        Ok((tape.value(mu).clone(), tape.value(sigma).clone()))
    }
}

/// Per-row Gaussian log-density on the tape, summed over channels:
/// `Σ_c −½ln(2π) − ln σ − (z − μ)²/(2σ²)`, with `σ` given as `ln σ`.
pub fn gaussian_logprob_rows<T: Real>(
    tape: &mut Tape<T>,
    z: Var,
    mu: Var,
    log_sigma: Var,
) -> Result<Var> {
    let diff = tape.sub(z, mu)?;
    let sq = tape.mul(diff, diff)?;
    let m2 = tape.scale(log_sigma, T::lit(-2.0));
    let inv_var = tape.exp(m2);
    let quad = tape.mul(sq, inv_var)?;
    let quad = tape.scale(quad, T::lit(0.5));
    let t = tape.add(log_sigma, quad)?;
    let t = tape.offset(t, T::lit(HALF_LN_2PI));
    let nll = tape.sum_cols(t)?;
    Ok(tape.scale(nll, -T::one()))
}

/// Standard-normal per-row log-density; the same arithmetic as
/// [`gaussian_logprob_rows`] with `μ = 0`, `ln σ = 0`.
pub fn standard_logprob_rows<T: Real>(tape: &mut Tape<T>, z: Var) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    let mu = tape.constant(Tensor::zeros(&shape));
    let ls = tape.constant(Tensor::zeros(&shape));
    gaussian_logprob_rows(tape, z, mu, ls)
}

fn check_sigma<T: Real>(sigma: &Tensor<T>) -> Result<()> {
    if let Some(s) = sigma.data().iter().find(|s| !(**s > T::zero())) {
        return Err(Error::Contract(format!("σ must be positive, got {:?}", s)));
    }
    Ok(())
}

/// Gaussian log-density of each row of `z` (`[..., D]`), summed over the
/// trailing axis. `mu` and `sigma` either match `z` or are `[D]` vectors
/// broadcast to every row.
pub fn gaussian_logprob<T: Real>(z: &Tensor<T>, mu: &Tensor<T>, sigma: &Tensor<T>) -> Result<Vec<T>> {
    check_sigma(sigma)?;
    let d = z.cols();
    let broadcast = |t: &Tensor<T>, what: &'static str| -> Result<bool> {
        if t.shape() == z.shape() {
            Ok(false)
        } else if t.len() == d {
            Ok(true)
        } else {
            Err(Error::dim(what, z.shape(), t.shape()))
        }
    };
    let (bm, bs) = (broadcast(mu, "gaussian_logprob mu")?, broadcast(sigma, "gaussian_logprob sigma")?);
    let half = T::lit(HALF_LN_2PI);
    let two = T::lit(2.0);
    let mut terms = Vec::with_capacity(d);
    let mut out = Vec::with_capacity(z.rows());
    for r in 0..z.rows() {
        terms.clear();
        for c in 0..d {
            let m = if bm { mu.data()[c] } else { mu.data()[r * d + c] };
            let s = if bs { sigma.data()[c] } else { sigma.data()[r * d + c] };
            let x = z.data()[r * d + c] - m;
            terms.push(-half - s.ln() - x * x / (two * s * s));
        }
        out.push(pairwise_sum(&terms));
    }
    Ok(out)
}

/// `ln((1/K) Σ_k exp(ln N(z; μ_k, σ_k)))` per row of `z`, stabilized by
/// subtracting the per-row maximum.
pub fn mixture_logprob<T: Real>(z: &Tensor<T>, components: &[(Tensor<T>, Tensor<T>)]) -> Result<Vec<T>> {
    if components.is_empty() {
        return Err(Error::Contract("mixture needs at least one component".into()));
    }
    let per: Vec<Vec<T>> = components
        .iter()
        .map(|(m, s)| gaussian_logprob(z, m, s))
        .collect::<Result<_>>()?;
    let ln_k = T::lit((components.len() as f64).ln());
    let mut out = Vec::with_capacity(z.rows());
    let mut buf = Vec::with_capacity(components.len());
    for r in 0..z.rows() {
        let max = per.iter().map(|p| p[r]).fold(T::neg_infinity(), T::max);
        if !max.is_finite() {
            out.push(max);
            continue;
        }
        buf.clear();
        buf.extend(per.iter().map(|p| (p[r] - max).exp()));
        out.push(max + pairwise_sum(&buf).ln() - ln_k);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;

    #[test]
    fn closed_form_points() {
        let z = Tensor::from_vec(vec![0.0f64]);
        let one = Tensor::from_vec(vec![1.0]);
        let lp = gaussian_logprob(&z, &z, &one).unwrap();
        assert!((lp[0] + 0.918939).abs() < 1e-6);
        let lp = gaussian_logprob(&one, &z, &one).unwrap();
        assert!((lp[0] + 1.418939).abs() < 1e-6);
        assert!(gaussian_logprob(&z, &z, &Tensor::from_vec(vec![0.0])).is_err());
    }

    #[test]
    fn tape_form_matches_direct_evaluation() {
        let mut r = rng::stream(0, 0);
        let n: Vec<f64> = (0..15).map(|_| rng::normal(&mut r)).collect();
        let z = Tensor::new(vec![3, 5], n[..15].to_vec()).unwrap();
        let mu = Tensor::new(vec![3, 5], n.iter().map(|v| v * 0.5).collect()).unwrap();
        let sigma = Tensor::new(vec![3, 5], n.iter().map(|v| 0.5 + v.abs()).collect()).unwrap();
        let direct = gaussian_logprob(&z, &mu, &sigma).unwrap();
        let mut tape = Tape::new();
        let (zv, mv) = (tape.constant(z.clone()), tape.constant(mu.clone()));
        let sv = tape.constant(sigma.clone());
        let ls = tape.log(sv);
        let lp = gaussian_logprob_rows(&mut tape, zv, mv, ls).unwrap();
        for (a, b) in tape.value(lp).data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_collapses() {
        let z = Tensor::new(vec![2, 2], vec![0.3f64, -1.0, 2.0, 0.1]).unwrap();
        let c = (Tensor::from_vec(vec![0.5, 0.0]), Tensor::from_vec(vec![1.5, 0.7]));
        let single = mixture_logprob(&z, &[c.clone()]).unwrap();
        let direct = gaussian_logprob(&z, &c.0, &c.1).unwrap();
        assert_eq!(single, direct);
        let twin = mixture_logprob(&z, &[c.clone(), c]).unwrap();
        for (a, b) in twin.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_heads_give_softplus_zero_sigma() {
        let mut ps = ParamSet::<f64>::new();
        let heads = GaussianHeads::new(&mut ps, "h", 3, 4, 5, &mut rng::stream(1, 0));
        let (mu, sigma) = heads.prototype_params(&ps, &Tensor::from_vec(vec![1.0, -2.0, 0.5])).unwrap();
        assert!(mu.data().iter().all(|&m| m == 0.0));
        for &s in sigma.data() {
            assert!((s - (core::f64::consts::LN_2 + SIGMA_FLOOR)).abs() < 1e-12);
        }
    }
}
