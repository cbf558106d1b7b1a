//! Adam and RMSProp over a fixed list of parameters.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

fn grads_for<'a>(store: &'a ParamStore, ids: &[ParamId]) -> Result<Vec<&'a [f64]>> {
    ids.iter()
        .map(|&id| {
            store
                .get(id)
                .grad()
                .ok_or_else(|| Error::MissingGrad(store.name(id).to_string()))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, lr: f64) -> Self {
        let zeros = |id: &ParamId| vec![0.0; store.get(*id).numel()];
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self, k: usize) -> (&[f64], &[f64]) {
        (&self.m[k], &self.v[k])
    }

    /// Bias-corrected Adam update. Fails before touching anything if any
    /// parameter lacks a gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let grads: Vec<Vec<f64>> = grads_for(store, &self.ids)?
            .into_iter()
            .map(<[f64]>::to_vec)
            .collect();
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    ids: Vec<ParamId>,
    v: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, lr: f64) -> Self {
        RmsProp {
            lr,
            rho: 0.9,
            eps: 1e-8,
            v: ids.iter().map(|id| vec![0.0; store.get(*id).numel()]).collect(),
            ids,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn mean_square(&self, k: usize) -> &[f64] {
        &self.v[k]
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let grads: Vec<Vec<f64>> = grads_for(store, &self.ids)?
            .into_iter()
            .map(<[f64]>::to_vec)
            .collect();
        for (k, &id) in self.ids.iter().enumerate() {
            let (v, g) = (&mut self.v[k], &grads[k]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                v[i] = self.rho * v[i] + (1.0 - self.rho) * g[i] * g[i];
                p[i] -= self.lr * g[i] / (v[i].sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    RmsProp(RmsProp),
}

impl Optimizer {
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        match self {
            Optimizer::Adam(o) => o.step(store),
            Optimizer::RmsProp(o) => o.step(store),
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        match self {
            Optimizer::Adam(o) => o.ids(),
            Optimizer::RmsProp(o) => o.ids(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Group;

    fn store_with_grad(g: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add_filled("w", Group::Encoder, &[3], 0.5).unwrap();
        s.get_mut(id).accumulate_grad(&[g; 3]);
        (s, id)
    }

    #[test]
    fn adam_first_step() {
        let (mut s, id) = store_with_grad(1.0);
        let mut opt = Adam::new(&s, vec![id], 0.001);
        opt.step(&mut s).unwrap();
        // m̂ = v̂ = 1 → Δθ = −lr / (1 + ε)
        let expect = 0.5 - 0.001 / (1.0 + 1e-8);
        for v in s.get(id).data() {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let (mut s, id) = store_with_grad(1.0);
        let mut opt = Adam::new(&s, vec![id], 0.001);
        opt.step(&mut s).unwrap();
        s.zero_grads();
        s.get_mut(id).accumulate_grad(&[0.0; 3]);
        let (m0, v0) = (opt.moments(0).0[0], opt.moments(0).1[0]);
        let before = s.get(id).data().to_vec();
        let mut fresh = Adam::new(&s, vec![id], 0.001);
        fresh.step(&mut s).unwrap();
        assert_eq!(s.get(id).data(), &before[..]);
        opt.step(&mut s).unwrap();
        assert_eq!(opt.moments(0).0[0], 0.9 * m0);
        assert_eq!(opt.moments(0).1[0], 0.999 * v0);
    }

    #[test]
    fn adam_deterministic() {
        let run = || {
            let (mut s, id) = store_with_grad(0.3);
            let mut opt = Adam::new(&s, vec![id], 0.01);
            for _ in 0..5 {
                opt.step(&mut s).unwrap();
            }
            (s.get(id).data().to_vec(), opt.moments(0).0.to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut s = ParamStore::new();
        let id = s.add_filled("enc.w", Group::Encoder, &[2], 0.0).unwrap();
        let mut opt = Adam::new(&s, vec![id], 0.001);
        let err = opt.step(&mut s).unwrap_err();
        assert!(matches!(err, Error::MissingGrad(ref n) if n == "enc.w"));
        let mut rms = RmsProp::new(&s, vec![id], 0.001);
        assert!(rms.step(&mut s).is_err());
    }

    #[test]
    fn rmsprop_first_step() {
        let (mut s, id) = store_with_grad(1.0);
        let mut opt = RmsProp::new(&s, vec![id], 5e-5);
        opt.step(&mut s).unwrap();
        assert!((opt.mean_square(0)[0] - 0.1).abs() < 1e-15);
        let delta = s.get(id).data()[0] - 0.5;
        assert!((delta + 1.5811e-4).abs() < 1e-8, "{delta}");
        assert!((delta + 5e-5 / (0.1f64.sqrt() + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_zero_gradient() {
        let (mut s, id) = store_with_grad(0.0);
        let mut opt = RmsProp::new(&s, vec![id], 5e-5);
        opt.step(&mut s).unwrap();
        assert_eq!(s.get(id).data(), &[0.5; 3]);
        assert!(opt.mean_square(0).iter().all(|&v| v >= 0.0));
    }
}
