//! Parameter registry and the small dense layers every network is built from.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float math is unavailable without std
use num_traits::Float;
use rand::Rng as _;

use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::{Error, Real, Result, Tensor};

/// Index of a tensor in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors in a fixed registration order. The order is the
/// order gradients, optimizer state and checkpoints use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn shapes(&self) -> Vec<&[usize]> {
        self.values.iter().map(|v| v.shape()).collect()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replace every tensor, keeping names; shapes must match.
    pub fn set_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Contract(alloc::format!(
                "expected {} parameter tensors, got {}",
                self.values.len(),
                values.len()
            )));
        }
        for (i, (old, new)) in self.values.iter().zip(&values).enumerate() {
            if old.shape() != new.shape() {
                return Err(Error::Contract(alloc::format!(
                    "parameter {} ({}) has shape {:?}, got {:?}",
                    i,
                    self.names[i],
                    old.shape(),
                    new.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.cast()).collect(),
        }
    }

    /// Register every tensor on `tape` as a parameter leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound(
            self.values
                .iter()
                .enumerate()
                .map(|(i, v)| tape.param(i, v.clone()))
                .collect(),
        )
    }
}

/// Tape handles of a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/√in, 1/√in)`.
    Uniform,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let w = match init {
            Init::Zeros => Tensor::zeros(&[outputs, inputs]),
            Init::Uniform => {
                let bound = 1.0 / (inputs.max(1) as f64).sqrt();
                let data = (0..outputs * inputs)
                    .map(|_| T::lit(rng.gen_range(-bound..bound)))
                    .collect();
                Tensor::new(alloc::vec![outputs, inputs], data).expect("shape")
            }
        };
        let weight = params.add(alloc::format!("{name}.weight"), w);
        let bias = params.add(alloc::format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Linear {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}

/// Two linear layers with a `tanh` between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
        last_init: Init,
        rng: &mut Rng,
    ) -> Self {
        let first = Linear::new(params, &alloc::format!("{name}.0"), inputs, hidden, Init::Uniform, rng);
        let second = Linear::new(params, &alloc::format!("{name}.1"), hidden, outputs, last_init, rng);
        Mlp { first, second }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, p, x)?;
        let h = tape.tanh(h);
        self.second.forward(tape, p, h)
    }
}
