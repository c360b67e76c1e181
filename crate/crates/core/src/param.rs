//! Named model parameters and the per-step forward context that binds them
//! onto a tape.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::rng::Rng;
use crate::tensor::{el, numel, Element, Gradients, Result, Tape, Tensor, TensorError};

/// One trainable array.
#[derive(Clone, Debug)]
pub struct Param<T: Element> {
    pub data: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Element> Param<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Param { data: vec![T::zero(); numel(shape)], shape: shape.to_vec() }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Param { data: vec![T::one(); numel(shape)], shape: shape.to_vec() }
    }

    /// Truncated normal, std 0.02: the conventional transformer projection init.
    pub fn trunc_normal(shape: &[usize], rng: &mut Rng) -> Self {
        let data = (0..numel(shape)).map(|_| el(rng.truncated_normal(0.02))).collect();
        Param { data, shape: shape.to_vec() }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Visitor over a model's parameters in a stable order. Names double as
/// checkpoint keys.
pub trait Parameterized<T: Element> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>));
}

/// Forward-pass context: owns the optional tape and remembers which leaf
/// tensor each parameter was bound to, so gradients can be fetched by name.
pub struct Fwd<T: Element> {
    tape: Option<Tape<T>>,
    train: bool,
    leaves: RefCell<HashMap<String, Tensor<T>>>,
}

impl<T: Element> Fwd<T> {
    /// Training pass: tape recording on, stateful layers (SEMA) update.
    pub fn train() -> Self {
        Fwd { tape: Some(Tape::new()), train: true, leaves: RefCell::new(HashMap::new()) }
    }

    /// Inference pass: no tape, no state mutation.
    pub fn eval() -> Self {
        Fwd { tape: None, train: false, leaves: RefCell::new(HashMap::new()) }
    }

    /// Eval-mode math with a tape attached; used by gradient checks, which
    /// need a pure forward function.
    pub fn traced_eval() -> Self {
        Fwd { tape: Some(Tape::new()), train: false, leaves: RefCell::new(HashMap::new()) }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn tape(&self) -> Option<&Tape<T>> {
        self.tape.as_ref()
    }

    /// Bind a parameter as a gradient-requiring leaf (or a constant when no
    /// tape is attached). Binding the same name twice returns the original
    /// leaf, so repeated uses share one gradient slot.
    pub fn leaf(&self, name: &str, p: &Param<T>) -> Tensor<T> {
        match &self.tape {
            Some(tape) => {
                if let Some(existing) = self.leaves.borrow().get(name) {
                    return existing.clone();
                }
                let t = tape.leaf(p.data.clone(), p.shape.clone());
                self.leaves.borrow_mut().insert(name.to_string(), t.clone());
                t
            }
            None => Tensor::from_vec(p.data.clone(), &p.shape),
        }
    }

    /// Input leaf that wants a gradient but is not a named parameter.
    pub fn input(&self, data: Vec<T>, shape: Vec<usize>) -> Tensor<T> {
        match &self.tape {
            Some(tape) => tape.leaf(data, shape),
            None => {
                let sh = shape.clone();
                Tensor::from_vec(data, &sh)
            }
        }
    }

    /// Backward pass returning gradients keyed by parameter name.
    pub fn grads(&self, loss: &Tensor<T>) -> Result<GradMap<T>> {
        let tape = self
            .tape
            .as_ref()
            .ok_or_else(|| TensorError::Invalid("backward on an eval context".into()))?;
        let grads = tape.backward(loss)?;
        let map = self
            .leaves
            .borrow()
            .iter()
            .map(|(name, t)| (name.clone(), grads.wrt(t)))
            .collect();
        Ok(GradMap { map, raw: grads })
    }
}

/// Gradients keyed by parameter name, plus the raw per-node gradients for
/// input tensors.
pub struct GradMap<T: Element> {
    map: HashMap<String, Vec<T>>,
    raw: Gradients<T>,
}

impl<T: Element> GradMap<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn wrt(&self, t: &Tensor<T>) -> Vec<T> {
        self.raw.wrt(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }
}
