//! Named parameter storage, seeded initialization, and binding onto a tape.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{layer_table, LayerInfo};
use super::{ModelError, ModelSpec, Result};
use crate::autograd::{Tape, Var};
use crate::tensor::{Element, Tensor};

/// Ordered map from parameter name to value; order is the layer-table order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<E: Element> {
    params: IndexMap<String, Tensor<E>>,
}

impl<E: Element> Default for ParamStore<E> {
    fn default() -> Self {
        Self { params: IndexMap::new() }
    }
}

/// Kaiming-normal fan-in of one parameter tensor; `None` for biases.
///
/// SCNN kernels count every slice they are applied across.
fn fan_in(layer: &LayerInfo, name: &str, shape: &[usize]) -> Option<usize> {
    if name.ends_with("bias") {
        return None;
    }
    let fan = match layer.kind {
        "conv-transpose" => shape[0],
        "linear-lstm" => shape[1],
        _ => shape[1..].iter().product(),
    };
    Some(fan * layer.chain)
}

fn init_tensor<E: Element>(layer: &LayerInfo, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<E> {
    match fan_in(layer, name, shape) {
        None => Tensor::zeros(shape),
        Some(fan) => {
            let std = (2.0 / fan as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| E::from_f64_lossy(normal.sample(rng))).collect();
            Tensor::from_vec(shape, data).expect("shape from layer table")
        }
    }
}

impl<E: Element> ParamStore<E> {
    /// Fresh parameters for `spec`: Kaiming-normal weights, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self::init_where(spec, seed, |_| true))
    }

    /// Initializes only the parameters whose name passes `keep`, in table order.
    pub(super) fn init_where(spec: &ModelSpec, seed: u64, keep: impl Fn(&str) -> bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();
        for layer in layer_table(spec) {
            for (name, shape) in &layer.params {
                if keep(name) {
                    params.insert(name.clone(), init_tensor(&layer, name, shape, &mut rng));
                }
            }
        }
        Self { params }
    }

    pub fn from_map(params: IndexMap<String, Tensor<E>>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total element count.
    pub fn element_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.params.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<E>) -> Option<Tensor<E>> {
        self.params.insert(name.into(), value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<E>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Checks that names and shapes are exactly those of `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let mut expected = 0;
        for layer in layer_table(spec) {
            for (name, shape) in &layer.params {
                expected += 1;
                let t = self.params.get(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
                if t.shape() != shape.as_slice() {
                    return Err(ModelError::ParamShape {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    });
                }
            }
        }
        if expected != self.params.len() {
            let extra = self
                .params
                .keys()
                .find(|k| layer_table(spec).iter().all(|l| l.params.iter().all(|p| &p.0 != *k)))
                .cloned()
                .unwrap_or_default();
            return Err(ModelError::InvalidSpec(format!("parameter {extra} is not part of the spec")));
        }
        Ok(())
    }

    /// Puts every parameter on `tape`, as differentiable leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<E>, trainable: bool) -> Bound<'t, E> {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.leaf(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    pub fn cast<T: Element>(&self) -> ParamStore<T> {
        ParamStore { params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t, E: Element> {
    vars: IndexMap<String, Var<'t, E>>,
}

impl<'t, E: Element> Bound<'t, E> {
    pub fn get(&self, name: &str) -> Result<Var<'t, E>> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Gradients in store order; zeros where nothing flowed.
    pub fn grads(&self, tape: &Tape<E>) -> Vec<Tensor<E>> {
        self.vars
            .values()
            .map(|v| tape.grad(*v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }
}
