//! Named parameter tensors partitioned into encoder, decoder and
//! discriminator groups, and their per-step binding onto a tape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{relative_error, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which part of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// θ_g: input representation and contextual encoder.
    Encoder,
    /// θ_p: parsing decoder.
    Decoder,
    /// θ_d: language discriminator.
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<Group>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: Group, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let id = self.tensors.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.groups.push(group);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    /// Trainable tensor drawn from U(−b, b) with b = √(6 / (fan_in + fan_out)).
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: &str,
        group: Group,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<ParamId> {
        let (fan_in, fan_out) = match shape {
            [n] => (*n, *n),
            [a, b] => (*a, *b),
            _ => {
                let n: usize = shape.iter().product();
                (n, n)
            }
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add_uniform(name, group, shape, bound, rng)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        group: Group,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, group, Tensor::new(shape.to_vec(), data)?.with_grad())
    }

    pub fn add_filled(&mut self, name: &str, group: Group, shape: &[usize], v: f64) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.add(name, group, Tensor::new(shape.to_vec(), vec![v; n])?.with_grad())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.groups[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Trainable parameters of the given groups, in registration order.
    pub fn trainable(&self, groups: &[Group]) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| groups.contains(&self.group(id)) && self.get(id).requires_grad())
            .collect()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Hash of the exact bit patterns of every tensor in `groups`.
    pub fn checksum(&self, groups: &[Group]) -> u64 {
        let mut h = DefaultHasher::new();
        for id in self.ids().filter(|&id| groups.contains(&self.group(id))) {
            self.name(id).hash(&mut h);
            for v in self.get(id).data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn num_values(&self, groups: &[Group]) -> usize {
        self.ids()
            .filter(|&id| groups.contains(&self.group(id)))
            .map(|id| self.get(id).numel())
            .sum()
    }

    /// Gives every listed parameter without a gradient a zero one.
    pub fn ensure_grads(&mut self, ids: &[ParamId]) {
        for &id in ids {
            let t = &mut self.tensors[id.0];
            if t.grad().is_none() {
                let zeros = vec![0.0; t.numel()];
                t.accumulate_grad(&zeros);
            }
        }
    }

    pub fn accumulate(&mut self, grads: Vec<(ParamId, Vec<f64>)>) {
        for (id, g) in grads {
            self.tensors[id.0].accumulate_grad(&g);
        }
    }

    /// Scales the gradients of `ids` so their joint L2 norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let sq: f64 = ids
            .iter()
            .filter_map(|&id| self.get(id).grad())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum();
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for &id in ids {
                if let Some(g) = self.tensors[id.0].take_grad() {
                    let scaled: Vec<f64> = g.iter().map(|v| v * s).collect();
                    self.tensors[id.0].accumulate_grad(&scaled);
                }
            }
        }
        norm
    }
}

/// Lazily places parameters on a tape. Parameters of `frozen` groups enter
/// as constants, so no gradient can reach them.
pub struct Binding<'s, 't> {
    store: &'s ParamStore,
    tape: &'t Tape,
    frozen: Vec<Group>,
    vars: RefCell<Vec<Option<Var<'t>>>>,
}

impl<'s, 't> Binding<'s, 't> {
    pub fn new(store: &'s ParamStore, tape: &'t Tape) -> Self {
        Self::with_frozen(store, tape, &[])
    }

    pub fn with_frozen(store: &'s ParamStore, tape: &'t Tape, frozen: &[Group]) -> Self {
        Binding {
            store,
            tape,
            frozen: frozen.to_vec(),
            vars: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let t = self.store.get(id);
        let v = if self.frozen.contains(&self.store.group(id)) || !t.requires_grad() {
            self.tape
                .constant(t.shape().to_vec(), t.data().to_vec())
                .expect("stored tensors are well-formed")
        } else {
            self.tape.leaf(t)
        };
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Gradients left on bound parameters by the tape's backward pass.
    pub fn gradients(&self) -> Vec<(ParamId, Vec<f64>)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.and_then(|v| v.grad()).map(|g| (ParamId(i), g)))
            .collect()
    }
}

/// Finite-difference check of the tape gradients `build` leaves on the
/// parameters `ids`. Returns the relative error of the concatenated
/// gradient, so parameters whose exact gradient is zero do not dominate.
pub fn check_param_gradients<F>(store: &mut ParamStore, ids: &[ParamId], build: F, h: f64) -> Result<f64>
where
    F: for<'s, 't> Fn(&Binding<'s, 't>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let bind = Binding::new(store, &tape);
        let root = build(&bind)?;
        tape.backward(root)?;
        bind.gradients()
    };
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for &id in ids {
        let a = analytic
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; store.get(id).numel()]);
        let mut numeric = Vec::with_capacity(a.len());
        for i in 0..a.len() {
            let orig = store.get(id).data()[i];
            let eval = |v: f64, store: &mut ParamStore| -> Result<f64> {
                store.get_mut(id).data_mut()[i] = v;
                let tape = Tape::new();
                let bind = Binding::new(store, &tape);
                Ok(build(&bind)?.item())
            };
            let up = eval(orig + h, store)?;
            let down = eval(orig - h, store)?;
            store.get_mut(id).data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        all_a.extend(a);
        all_n.extend(numeric);
    }
    Ok(relative_error(&all_a, &all_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_groups_receive_no_gradient() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = store.add_glorot("a", Group::Encoder, &[2, 2], &mut rng).unwrap();
        let b = store.add_glorot("b", Group::Discriminator, &[2, 2], &mut rng).unwrap();
        let tape = Tape::new();
        let bind = Binding::with_frozen(&store, &tape, &[Group::Encoder]);
        let root = bind.var(a).matmul(&bind.var(b)).unwrap().sum();
        tape.backward(root).unwrap();
        let grads = bind.gradients();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].0, b);
    }

    #[test]
    fn checksum_tracks_bits() {
        let mut store = ParamStore::new();
        let a = store.add_filled("a", Group::Encoder, &[3], 1.0).unwrap();
        let before = store.checksum(&[Group::Encoder]);
        assert_eq!(before, store.checksum(&[Group::Encoder]));
        store.get_mut(a).data_mut()[1] = 1.0 + f64::EPSILON;
        assert_ne!(before, store.checksum(&[Group::Encoder]));
        assert!(store.add_filled("a", Group::Encoder, &[1], 0.0).is_err());
    }

    #[test]
    fn clip_grad_norm_rescales() {
        let mut store = ParamStore::new();
        let a = store.add_filled("a", Group::Encoder, &[2], 0.0).unwrap();
        store.get_mut(a).accumulate_grad(&[3.0, 4.0]);
        let n = store.clip_grad_norm(&[a], 1.0);
        assert_eq!(n, 5.0);
        let g = store.get(a).grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
