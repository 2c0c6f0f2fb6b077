//! Central finite-difference gradient checking.

use alloc::format;
use alloc::vec::Vec;

use crate::tape::{GradMode, Tape, Var};
use crate::{Error, Real, Result, Tensor};

/// Outcome of [`finite_difference_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Max over all parameter elements of
    /// `|analytic − fd| / max(1, |analytic|)`.
    pub max_relative_error: f64,
    /// The same maximum restricted to each parameter tensor.
    pub per_param: Vec<f64>,
    /// `(parameter, element)` where the maximum was attained.
    pub worst: (usize, usize),
}

/// Compares `analytic` gradients of `f` at `params` against central
/// differences `(f(p + eps) − f(p − eps)) / 2eps`, one element at a time.
///
/// `f` is evaluated twice at `params` first; differing values mean `f` is
/// not deterministic and the check is refused.
pub fn finite_difference_check<T: Real>(
    params: &[Tensor<T>],
    analytic: &[Tensor<T>],
    eps: T,
    mut f: impl FnMut(&[Tensor<T>]) -> Result<T>,
) -> Result<GradCheck> {
    if eps <= T::zero() {
        return Err(Error::Contract(format!("eps must be positive, got {:?}", eps)));
    }
    if analytic.len() != params.len()
        || params.iter().zip(analytic).any(|(p, a)| p.shape() != a.shape())
    {
        return Err(Error::Contract("analytic gradients do not match parameter shapes".into()));
    }
    let f0 = f(params)?;
    let f1 = f(params)?;
    if f0.as_f64().to_bits() != f1.as_f64().to_bits() {
        return Err(Error::Contract(format!(
            "function is not deterministic: {:?} then {:?}",
            f0, f1
        )));
    }

    let two_eps = eps.as_f64() * 2.0;
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut best = (0.0f64, (0usize, 0usize));
    for p in 0..params.len() {
        let mut worst = 0.0f64;
        for e in 0..params[p].len() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + eps;
            let plus = f(&work)?.as_f64();
            work[p].data_mut()[e] = orig - eps;
            let minus = f(&work)?.as_f64();
            work[p].data_mut()[e] = orig;
            let fd = (plus - minus) / two_eps;
            let a = analytic[p].data()[e].as_f64();
            let err = (a - fd).abs() / a.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::Numeric(format!("finite difference of parameter {p}")));
            }
            if err > worst {
                worst = err;
            }
            if err > best.0 {
                best = (err, (p, e));
            }
        }
        per_param.push(worst);
    }
    Ok(GradCheck {
        max_relative_error: best.0,
        per_param,
        worst: best.1,
    })
}

/// Value and exact-mode gradients of a scalar built on a fresh tape whose
/// leaves are `params` (registered as parameters `0..n`).
pub fn tape_value_and_grad<T: Real>(
    params: &[Tensor<T>],
    build: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut tape = Tape::with_mode(GradMode::Exact);
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(i, p.clone()))
        .collect();
    let out = build(&mut tape, &vars)?;
    let value = tape.value(out).item();
    let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
    let grads = tape.backward(out)?.into_dense(&shapes);
    Ok((value, grads))
}

/// Finite-difference check of a tape-built scalar against its own backward pass.
pub fn check_tape_fn<T: Real>(
    params: &[Tensor<T>],
    eps: T,
    build: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> Result<GradCheck> {
    let (_, analytic) = tape_value_and_grad(params, &build)?;
    finite_difference_check(params, &analytic, eps, |p| {
        let mut tape = Tape::with_mode(GradMode::Exact);
        let vars: Vec<Var> = p.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn square_and_exp_are_exact() {
        let p = vec![Tensor::from_vec(vec![3.0f64])];
        let r = check_tape_fn(&p, 1e-4, |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");

        let p = vec![Tensor::from_vec(vec![0.0f64])];
        let r = check_tape_fn(&p, 1e-4, |t, v| {
            let e = t.exp(v[0]);
            Ok(t.sum(e))
        })
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn rejects_nondeterministic_function() {
        let p = vec![Tensor::from_vec(vec![1.0f64])];
        let g = vec![Tensor::from_vec(vec![0.0f64])];
        let mut calls = 0.0;
        let r = finite_difference_check(&p, &g, 1e-3, |_| {
            calls += 1.0;
            Ok(calls)
        });
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let p = vec![Tensor::from_vec(vec![1.0f64])];
        let r = finite_difference_check(&p, &p.clone(), 0.0, |_| Ok(0.0));
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
