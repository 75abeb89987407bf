use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{FscError, Result};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zero,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

/// Ordered list of parameter shapes; the order is the canonical checkpoint
/// order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) {
        self.specs.push(ParamSpec { name: name.into(), rows, cols, init });
    }

    /// Weight `in x out` and bias `1 x out`, both fan-in initialized, or
    /// both zero when `zero` is set.
    pub fn linear(&mut self, prefix: &str, inputs: usize, outputs: usize, zero: bool) {
        let init = if zero { Init::Zero } else { Init::FanIn(inputs) };
        self.push(format!("{prefix}.w"), inputs, outputs, init);
        self.push(format!("{prefix}.b"), 1, outputs, init);
    }

    /// Consecutive linear layers `{prefix}.0`, `{prefix}.1`, ... through
    /// `widths`; the last one is zero-initialized when `zero_last` is set.
    pub fn mlp(&mut self, prefix: &str, widths: &[usize], zero_last: bool) {
        let layers = widths.len() - 1;
        for i in 0..layers {
            self.linear(&format!("{prefix}.{i}"), widths[i], widths[i + 1], zero_last && i + 1 == layers);
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    /// Fresh values; each tensor draws from its own stream derived from
    /// `seed` and its name, so adding a tensor never perturbs the others.
    pub fn init(&self, seed: u64) -> ParamSet {
        let tensors = self
            .specs
            .iter()
            .map(|s| {
                let mut rng = rng_from(derive_seed(seed, &s.name));
                let n = s.rows * s.cols;
                let data: Vec<f64> = match s.init {
                    Init::Zero => vec![0.0; n],
                    Init::FanIn(fan) => {
                        let bound = 1.0 / (fan.max(1) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                    Init::Normal(std) => {
                        let d = Normal::new(0.0, std).expect("valid std");
                        (0..n).map(|_| d.sample(&mut rng)).collect()
                    }
                };
                let mut t = Tensor::from_vec(s.rows, s.cols, data).expect("shape matches");
                round_to_f32(&mut t);
                t
            })
            .collect();
        ParamSet::from_parts(self.specs.iter().map(|s| s.name.clone()).collect(), tensors).expect("unique names")
    }
}

/// Rounds every entry to the nearest `f32` so the `f32` checkpoint format
/// stores parameters without loss.
pub fn round_to_f32(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
}

/// Named tensors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(FscError::SizeMismatch { left: names.len(), right: tensors.len() });
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(FscError::Checkpoint(format!("duplicate tensor name {n:?}")));
            }
        }
        Ok(Self { names, tensors, index })
    }

    pub fn empty() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Checks names and shapes against `layout`.
    pub fn check_layout(&self, layout: &Layout) -> Result<()> {
        if self.len() != layout.specs().len() {
            return Err(FscError::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.specs().len(),
                self.len()
            )));
        }
        for (spec, (name, t)) in layout.specs().iter().zip(self.iter()) {
            if spec.name != name {
                return Err(FscError::Checkpoint(format!("expected tensor {:?}, found {name:?}", spec.name)));
            }
            if t.shape() != (spec.rows, spec.cols) {
                return Err(FscError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    (spec.rows, spec.cols)
                )));
            }
        }
        Ok(())
    }

    /// Places every tensor on `g`, as a differentiable variable when
    /// `trainable`, otherwise as a constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.variable(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars, index: self.index.clone() }
    }
}

/// Graph handles of a bound [`ParamSet`], in the same canonical order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("parameter {name:?} is not part of this layout"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_per_name_and_f32_exact() {
        let mut a = Layout::new();
        a.linear("x", 3, 4, false);
        let mut b = Layout::new();
        b.linear("y", 2, 2, false);
        b.linear("x", 3, 4, false);
        let pa = a.init(1);
        let pb = b.init(1);
        assert_eq!(pa.get("x.w"), pb.get("x.w"));
        assert!(pa.get("x.w").unwrap().data().iter().all(|&v| v == v as f32 as f64 && v.abs() <= 0.5_f64.sqrt()));
        assert!(pa.check_layout(&a).is_ok());
        assert!(pb.check_layout(&a).is_err());
    }
}
