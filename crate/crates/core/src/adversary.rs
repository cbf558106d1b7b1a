//! Language discriminator and the GAN, WGAN and gradient-reversal objectives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Binding, Group, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Gan,
    Wgan,
    Gr,
}

impl Objective {
    /// Discriminator output arity for `n_langs` languages.
    pub fn arity(self, n_langs: usize) -> usize {
        match self {
            Objective::Gan => 2,
            Objective::Wgan => 1,
            Objective::Gr => n_langs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Word,
    Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvConfig {
    pub objective: Objective,
    pub granularity: Granularity,
    pub lambda: f64,
    /// Discriminator steps per iteration.
    pub k: usize,
    /// Critic weight box for WGAN.
    pub clip_c: f64,
    pub disc_kind: DiscKind,
    pub disc_hidden: usize,
}

impl Default for AdvConfig {
    fn default() -> Self {
        AdvConfig {
            objective: Objective::Gan,
            granularity: Granularity::Sentence,
            lambda: 0.01,
            k: 1,
            clip_c: 0.01,
            disc_kind: DiscKind::Linear,
            disc_hidden: 64,
        }
    }
}

/// Mean over the rows of `h`, as a `1 × d` row.
pub fn pool_sentence<'t>(h: &Var<'t>) -> Result<Var<'t>> {
    let d = h.shape()[1];
    h.mean_axis(0)?.reshape(vec![1, d])
}

/// Rows the discriminator classifies: every token, or the pooled sentence.
pub fn adv_units<'t>(h: &Var<'t>, granularity: Granularity) -> Result<Var<'t>> {
    match granularity {
        Granularity::Word => Ok(*h),
        Granularity::Sentence => pool_sentence(h),
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub kind: DiscKind,
    pub out_dim: usize,
    layers: Vec<(ParamId, ParamId)>,
}

impl Discriminator {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        in_dim: usize,
        kind: DiscKind,
        out_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::invalid("discriminator needs at least one output"));
        }
        let g = Group::Discriminator;
        let dims = match kind {
            DiscKind::Linear => vec![in_dim, out_dim],
            DiscKind::Mlp => vec![in_dim, hidden, out_dim],
        };
        let mut layers = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            layers.push((
                store.add_glorot(&format!("disc.l{l}.w"), g, &[w[0], w[1]], rng)?,
                store.add_filled(&format!("disc.l{l}.b"), g, &[w[1]], 0.0)?,
            ));
        }
        Ok(Discriminator { kind, out_dim, layers })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// `units × out_dim` raw outputs.
    pub fn forward<'t>(&self, bind: &Binding<'_, 't>, units: &Var<'t>) -> Result<Var<'t>> {
        let mut x = *units;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            if l > 0 {
                x = x.relu();
            }
            x = x.matmul(&bind.var(w))?.add_bias(&bind.var(b))?;
        }
        Ok(x)
    }

    /// Clips every discriminator weight into `[-c, c]`.
    pub fn clip(&self, store: &mut ParamStore, c: f64) {
        for id in self.param_ids() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
    }
}

fn mean_log_prob<'t>(logits: &Var<'t>, class: usize) -> Result<Var<'t>> {
    let shape = logits.shape();
    let (n, c) = (shape[0], shape[1]);
    logits
        .log_softmax()?
        .gather((0..n).map(|i| i * c + class).collect(), vec![n])?
        .mean()
}

/// Binary cross-entropy minimized by the discriminator: class 0 is source.
/// `p(source) = softmax(logits)[0]`, i.e. the sigmoid of the logit margin.
pub fn disc_loss_gan<'t>(bind: &Binding<'_, 't>, d: &Discriminator, src: &Var<'t>, aux: &Var<'t>) -> Result<Var<'t>> {
    let ls = mean_log_prob(&d.forward(bind, src)?, 0)?;
    let la = mean_log_prob(&d.forward(bind, aux)?, 1)?;
    Ok(ls.add(&la)?.neg())
}

/// Critic gap `mean_src D − mean_aux D`; the critic ascends it.
pub fn disc_loss_wgan<'t>(bind: &Binding<'_, 't>, d: &Discriminator, src: &Var<'t>, aux: &Var<'t>) -> Result<Var<'t>> {
    let ds = d.forward(bind, src)?;
    let da = d.forward(bind, aux)?;
    // Both means are taken relative to a constant reference score so a
    // constant critic yields a gap of exactly zero.
    let reference: Vec<f64> = ds.value().iter().take(d.out_dim).map(|v| -v).collect();
    let reference = bind.tape().constant(vec![d.out_dim], reference)?;
    ds.add_bias(&reference)?.mean()?.sub(&da.add_bias(&reference)?.mean()?)
}

/// Mean multiclass cross-entropy of each unit against its language id.
pub fn disc_loss_gr<'t>(bind: &Binding<'_, 't>, d: &Discriminator, units: &Var<'t>, lang_ids: &[usize]) -> Result<Var<'t>> {
    let n = units.shape()[0];
    if lang_ids.len() != n {
        return Err(Error::invalid(format!("{} language ids for {n} units", lang_ids.len())));
    }
    if let Some(l) = lang_ids.iter().find(|&&l| l >= d.out_dim) {
        return Err(Error::invalid(format!("language id {l} outside 0..{}", d.out_dim)));
    }
    let c = d.out_dim;
    d.forward(bind, units)?
        .log_softmax()?
        .gather(lang_ids.iter().enumerate().map(|(i, &l)| i * c + l).collect(), vec![n])?
        .mean()
        .map(|m| m.neg())
}

/// Identity forward, gradient scaled by `−lambda` backward.
pub fn grad_reverse<'t>(x: &Var<'t>, lambda: f64) -> Var<'t> {
    x.grad_reverse(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, Tape, Tensor};
    use crate::params::check_param_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn disc(store: &mut ParamStore, kind: DiscKind, out: usize, seed: u64) -> Discriminator {
        Discriminator::new(store, 3, kind, out, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn zero(store: &mut ParamStore) {
        for id in store.trainable(&[Group::Discriminator]) {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn pooling() {
        let tape = Tape::new();
        let h = tape.variable(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = pool_sentence(&h).unwrap();
        assert_eq!(p.shape(), vec![1, 2]);
        assert_eq!(p.to_vec(), vec![0.5, 0.5]);
        tape.backward(p.mul(&tape.constant(vec![1, 2], vec![1.0, 3.0]).unwrap()).unwrap().sum())
            .unwrap();
        assert_eq!(h.grad().unwrap(), vec![0.5, 1.5, 0.5, 1.5]);

        let tape = Tape::new();
        let same = tape.constant(vec![3, 2], vec![2.0, -1.0, 2.0, -1.0, 2.0, -1.0]).unwrap();
        assert_eq!(pool_sentence(&same).unwrap().to_vec(), vec![2.0, -1.0]);
        assert!(pool_sentence(&tape.constant(vec![0, 2], vec![]).unwrap()).is_err());
    }

    #[test]
    fn unit_counts() {
        let tape = Tape::new();
        let h = tape.leaf(&random(&[5, 3], 0));
        assert_eq!(adv_units(&h, Granularity::Word).unwrap().shape(), vec![5, 3]);
        assert_eq!(adv_units(&h, Granularity::Sentence).unwrap().shape(), vec![1, 3]);
        let one = tape.leaf(&random(&[1, 3], 1));
        assert_eq!(
            adv_units(&one, Granularity::Word).unwrap().to_vec(),
            adv_units(&one, Granularity::Sentence).unwrap().to_vec()
        );
    }

    #[test]
    fn gan_symmetric_value() {
        for seed in 0..3 {
            let mut store = ParamStore::new();
            let d = disc(&mut store, DiscKind::Linear, 2, seed);
            zero(&mut store);
            let tape = Tape::new();
            let bind = Binding::new(&store, &tape);
            let src = tape.leaf(&random(&[4, 3], seed));
            let aux = tape.leaf(&random(&[2, 3], seed + 10));
            let l = disc_loss_gan(&bind, &d, &src, &aux).unwrap().item();
            assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gan_confident_value() {
        let mut store = ParamStore::new();
        let d = Discriminator::new(&mut store, 1, DiscKind::Linear, 2, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let w = store.id("disc.l0.w").unwrap();
        let half = 9f64.ln() / 2.0;
        store.get_mut(w).data_mut().copy_from_slice(&[half, -half]);
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let src = tape.constant(vec![1, 1], vec![1.0]).unwrap();
        let aux = tape.constant(vec![1, 1], vec![-1.0]).unwrap();
        let l = disc_loss_gan(&bind, &d, &src, &aux).unwrap().item();
        assert!((l + 2.0 * 0.9f64.ln()).abs() < 1e-12);
        assert!((l - 0.2107).abs() < 1e-4);
    }

    #[test]
    fn wgan_values_and_clipping() {
        let mut store = ParamStore::new();
        let d = disc(&mut store, DiscKind::Mlp, 1, 1);
        zero(&mut store);
        let b = d.param_ids()[3];
        store.get_mut(b).data_mut()[0] = 0.37;
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let src = tape.leaf(&random(&[3, 3], 2));
        let aux = tape.leaf(&random(&[5, 3], 3));
        assert_eq!(disc_loss_wgan(&bind, &d, &src, &aux).unwrap().item(), 0.0);

        let mut store = ParamStore::new();
        let d = Discriminator::new(&mut store, 1, DiscKind::Linear, 1, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        store.get_mut(d.param_ids()[0]).data_mut()[0] = 1.0;
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let src = tape.constant(vec![2, 1], vec![0.6, 0.8]).unwrap();
        let aux = tape.constant(vec![2, 1], vec![0.1, 0.3]).unwrap();
        let gap = disc_loss_wgan(&bind, &d, &src, &aux).unwrap().item();
        assert!((gap - 0.5).abs() < 1e-15);

        let mut store = ParamStore::new();
        let d = disc(&mut store, DiscKind::Mlp, 1, 4);
        d.clip(&mut store, 0.01);
        for id in d.param_ids() {
            assert!(store.get(id).data().iter().all(|v| v.abs() <= 0.01));
        }
    }

    #[test]
    fn gr_uniform_and_saturated() {
        for l in [2usize, 7] {
            let mut store = ParamStore::new();
            let d = disc(&mut store, DiscKind::Linear, l, 0);
            zero(&mut store);
            let tape = Tape::new();
            let bind = Binding::new(&store, &tape);
            let units = tape.leaf(&random(&[l, 3], 1));
            let ids: Vec<usize> = (0..l).collect();
            let loss = disc_loss_gr(&bind, &d, &units, &ids).unwrap().item();
            assert!((loss - (l as f64).ln()).abs() < 1e-12);
            assert!(disc_loss_gr(&bind, &d, &units, &vec![l; l]).is_err());
        }
        let mut store = ParamStore::new();
        let d = disc(&mut store, DiscKind::Linear, 3, 0);
        zero(&mut store);
        store.get_mut(d.param_ids()[1]).data_mut()[2] = 50.0;
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let units = tape.leaf(&random(&[2, 3], 1));
        assert!(disc_loss_gr(&bind, &d, &units, &[2, 2]).unwrap().item() < 1e-9);
    }

    #[test]
    fn grad_reverse_contract() {
        let tape = Tape::new();
        let x = tape.variable(vec![2], vec![0.3, -1.7]).unwrap();
        let y = grad_reverse(&x, 0.1);
        assert_eq!(y.to_vec(), x.to_vec());
        let g = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        tape.backward(y.mul(&g).unwrap().sum()).unwrap();
        let grad = x.grad().unwrap();
        assert!((grad[0] + 0.1).abs() < 1e-15 && (grad[1] + 0.2).abs() < 1e-15);

        let tape = Tape::new();
        let x = tape.variable(vec![2], vec![0.3, -1.7]).unwrap();
        tape.backward(grad_reverse(&x, 0.0).sum()).unwrap();
        assert!(x.grad().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn objectives_match_finite_differences() {
        for kind in [DiscKind::Linear, DiscKind::Mlp] {
            for obj in [Objective::Gan, Objective::Wgan, Objective::Gr] {
                let mut store = ParamStore::new();
                let d = disc(&mut store, kind, obj.arity(3), 5);
                let src = random(&[3, 3], 6);
                let aux = random(&[2, 3], 7);
                let ids = d.param_ids();
                let err = check_param_gradients(
                    &mut store,
                    &ids,
                    |bind| {
                        let tape = bind.tape();
                        let (s, a) = (tape.leaf(&src), tape.leaf(&aux));
                        objective(bind, &d, obj, &s, &a)
                    },
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{kind:?} {obj:?}: {err}");
                let store = &store;
                let err = check_gradients(
                    |tape, xs| {
                        let bind = Binding::new(store, tape);
                        objective(&bind, &d, obj, &xs[0], &xs[1])
                    },
                    &[src.clone(), aux.clone()],
                    1e-5,
                )
                .unwrap();
                assert!(err < 1e-4, "{kind:?} {obj:?} wrt units: {err}");
            }
        }
    }

    fn objective<'t>(bind: &Binding<'_, 't>, d: &Discriminator, obj: Objective, s: &Var<'t>, a: &Var<'t>) -> Result<Var<'t>> {
        match obj {
            Objective::Gan => disc_loss_gan(bind, d, s, a),
            Objective::Wgan => disc_loss_wgan(bind, d, s, a),
            Objective::Gr => {
                let units = Var::concat_rows(&[*s, *a])?;
                disc_loss_gr(bind, d, &units, &[0, 2, 1, 1, 0])
            }
        }
    }

    #[test]
    fn invariant_to_unit_order() {
        let mut store = ParamStore::new();
        let d = disc(&mut store, DiscKind::Mlp, 2, 8);
        let src = random(&[4, 3], 9);
        let aux = random(&[3, 3], 10);
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let (s, a) = (tape.leaf(&src), tape.leaf(&aux));
        let base = disc_loss_gan(&bind, &d, &s, &a).unwrap().item();
        let ps = s.rows(&[2, 0, 3, 1]).unwrap();
        let pa = a.rows(&[1, 2, 0]).unwrap();
        let permuted = disc_loss_gan(&bind, &d, &ps, &pa).unwrap().item();
        assert!((base - permuted).abs() < 1e-12);
    }
}
