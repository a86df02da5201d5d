//! Named parameter storage shared by every network module.

use std::collections::HashMap;
use std::ops::Index;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, Element, Tensor};

/// Position of a parameter inside its [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named parameter tensors.
#[derive(Clone, Debug)]
pub struct ParamSet<T: Element> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Element> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("params", format!("duplicate parameter {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Arc::new(value));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().map(|v| &**v))
    }

    /// Mutable access; copies the tensor first if a bound [`Var`] still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::shape(
                "params",
                format!("{}: {:?} vs {:?}", self.names[id.0], value.shape(), self.values[id.0].shape()),
            ));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &Tape<T>) -> Bound<T> {
        Bound {
            vars: self.values.iter().map(|v| tape.leaf(Arc::clone(v))).collect(),
        }
    }

    /// Untracked views for inference.
    pub fn constants(&self) -> Bound<T> {
        Bound {
            vars: self.values.iter().map(|v| Var::constant(Arc::clone(v))).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(|v| Arc::new(v.cast())).collect(),
            index: self.index.clone(),
        }
    }
}

/// Parameters bound as [`Var`]s for one forward pass.
pub struct Bound<T: Element> {
    vars: Vec<Var<T>>,
}

impl<T: Element> Bound<T> {
    /// Vars in [`ParamSet`] order, e.g. leaves created by the caller.
    pub fn from_vars(vars: Vec<Var<T>>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

impl<T: Element> Index<ParamId> for Bound<T> {
    type Output = Var<T>;
    fn index(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std²) resampled until within two deviations.
    TruncNormal(f64),
    /// Normal with std sqrt(2 / fan_in).
    He { fan_in: usize },
}

/// Allocates parameters in a fixed order from one seeded stream.
pub struct ParamBuilder<'a, T: Element> {
    set: &'a mut ParamSet<T>,
    rng: ChaCha8Rng,
}

impl<'a, T: Element> ParamBuilder<'a, T> {
    pub fn new(set: &'a mut ParamSet<T>, seed: u64) -> Self {
        Self {
            set,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn param(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<ParamId> {
        let n = numel(shape);
        let rng = &mut self.rng;
        let mut normal = |std: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        };
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::TruncNormal(std) => (0..n)
                .map(|_| loop {
                    let v = normal(std);
                    if v.abs() <= 2.0 * std {
                        break T::of(v);
                    }
                })
                .collect(),
            Init::He { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::of(normal(std))).collect()
            }
        };
        self.set.insert(name, Tensor::new(shape.to_vec(), data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_is_deterministic_and_named() {
        let build = || {
            let mut set = ParamSet::<f32>::new();
            let mut b = ParamBuilder::new(&mut set, 5);
            b.param("a.weight", &[3, 4], Init::TruncNormal(0.02)).unwrap();
            b.param("a.bias", &[3], Init::Zeros).unwrap();
            set
        };
        let (s1, s2) = (build(), build());
        assert_eq!(s1.numel(), 15);
        assert!(s1.by_name("a.weight").unwrap().bit_eq(s2.by_name("a.weight").unwrap()));
        assert!(s1.by_name("a.weight").unwrap().data().iter().all(|v| v.abs() <= 0.04));
        assert_eq!(s1.by_name("a.bias").unwrap().sum(), 0.0);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut set = ParamSet::<f64>::new();
        set.insert("x", Tensor::zeros(vec![1])).unwrap();
        assert!(set.insert("x", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn set_checks_shape() {
        let mut set = ParamSet::<f64>::new();
        let id = set.insert("x", Tensor::zeros(vec![2])).unwrap();
        assert!(set.set(id, Tensor::zeros(vec![3])).is_err());
        set.set(id, Tensor::ones(vec![2])).unwrap();
        assert_eq!(set.get(id).sum(), 2.0);
    }
}
