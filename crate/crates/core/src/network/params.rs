use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Named parameter tensors in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    order: Vec<String>,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            order: Vec::new(),
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        let name = name.into();
        if self.tensors.insert(name.clone(), t).is_none() {
            self.order.push(name);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Names in declaration order.
    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.order.iter().map(|n| (n.as_str(), &self.tensors[n]))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            order: self.order.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Xavier-uniform weights and zero biases for the declared shapes.
    ///
    /// Names ending in `.bias` are biases; every other tensor is a conv
    /// weight `[out, in, kh, kw]`.
    pub fn xavier(shapes: &[(String, Vec<usize>)], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let t = if name.ends_with(".bias") {
                Tensor::zeros(shape.clone())
            } else {
                let field: usize = shape[2..].iter().product();
                let bound = (6.0 / ((shape[0] + shape[1]) * field) as f64).sqrt();
                let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
                Tensor::new(shape.clone(), data).unwrap()
            };
            store.insert(name.clone(), t);
        }
        store
    }
}

enum Source<'a, T: Scalar> {
    Store(&'a ParamStore<T>),
    Declare(RefCell<Vec<(String, Vec<usize>)>>),
}

/// Hands out one graph leaf per parameter name for a forward pass.
///
/// Repeated requests for a name return the same [`Var`], so shared layers
/// accumulate their gradients in one place.
pub struct Binder<'a, T: Scalar> {
    source: Source<'a, T>,
    vars: RefCell<HashMap<String, Var<T>>>,
    error: RefCell<Option<Error>>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Binder {
            source: Source::Store(store),
            vars: RefCell::default(),
            error: RefCell::default(),
        }
    }

    /// Records requested shapes instead of reading values; pair with a
    /// shape-only graph.
    pub fn declaring() -> Self {
        Binder {
            source: Source::Declare(RefCell::default()),
            vars: RefCell::default(),
            error: RefCell::default(),
        }
    }

    pub fn get(&self, g: &Graph<T>, name: &str, shape: &[usize]) -> Var<T> {
        if let Some(v) = self.vars.borrow().get(name) {
            assert_eq!(v.shape(), shape, "parameter {name} requested with two shapes");
            return v.clone();
        }
        let v = match &self.source {
            Source::Store(s) => match s.get(name) {
                Some(t) if t.shape() == shape => g.param(t.clone()),
                found => {
                    let detail = match found {
                        Some(t) => format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape()),
                        None => format!("missing parameter {name}"),
                    };
                    self.error.borrow_mut().get_or_insert(Error::Format {
                        what: "parameters",
                        detail,
                    });
                    g.param(Tensor::zeros(shape.to_vec()))
                }
            },
            Source::Declare(list) => {
                list.borrow_mut().push((name.to_string(), shape.to_vec()));
                g.param(Tensor::phantom(shape.to_vec()))
            }
        };
        self.vars.borrow_mut().insert(name.to_string(), v.clone());
        v
    }

    /// First lookup failure, if any.
    pub fn check(&self) -> Result<()> {
        match self.error.borrow_mut().take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Declared `(name, shape)` pairs in request order.
    pub fn declared(&self) -> Vec<(String, Vec<usize>)> {
        match &self.source {
            Source::Declare(list) => list.borrow().clone(),
            Source::Store(_) => Vec::new(),
        }
    }

    /// Bound leaves, for reading gradients after backward.
    pub fn vars(&self) -> Vec<(String, Var<T>)> {
        self.vars.borrow().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}
