//! Sentence encoders mapping input rows to contextual rows.

mod rnn;
mod selfatt;

pub use rnn::{LstmParams, RnnConfig, RnnEncoder};
pub use selfatt::{SelfAttConfig, SelfAttEncoder};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::Result;
use crate::params::Binding;

#[derive(Debug, Clone)]
pub enum Encoder {
    SelfAtt(SelfAttEncoder),
    Rnn(RnnEncoder),
}

impl Encoder {
    pub fn out_dim(&self) -> usize {
        match self {
            Encoder::SelfAtt(e) => e.out_dim(),
            Encoder::Rnn(e) => e.out_dim(),
        }
    }

    /// Dropout is applied only when `rng` is given.
    pub fn encode<'t>(&self, bind: &Binding<'_, 't>, x: Var<'t>, rng: Option<&mut ChaCha8Rng>) -> Result<Var<'t>> {
        match self {
            Encoder::SelfAtt(e) => e.encode(bind, x, rng),
            Encoder::Rnn(e) => e.encode(bind, x, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};
    use crate::params::{check_param_gradients, Group, ParamStore};
    use rand::{Rng, SeedableRng};

    fn input(n: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, dim], (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small_selfatt(store: &mut ParamStore, kclip: usize, seed: u64) -> SelfAttEncoder {
        let cfg = SelfAttConfig {
            n_layers: 2,
            n_heads: 2,
            model_dim: 4,
            ff_dim: 6,
            kclip,
            dropout: 0.0,
        };
        SelfAttEncoder::new(store, 3, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn small_rnn(store: &mut ParamStore, layers: usize, seed: u64) -> RnnEncoder {
        let cfg = RnnConfig {
            n_layers: layers,
            hidden: 3,
            dropout: 0.0,
        };
        RnnEncoder::new(store, 3, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn heads_must_divide_model_dim() {
        let cfg = SelfAttConfig {
            model_dim: 10,
            n_heads: 4,
            ..Default::default()
        };
        let mut store = ParamStore::new();
        assert!(SelfAttEncoder::new(&mut store, 3, cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn single_token_attention_is_one() {
        let mut store = ParamStore::new();
        let enc = small_selfatt(&mut store, 4, 0);
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let (h, attn) = enc.encode_with_attention(&bind, tape.leaf(&input(1, 3, 1)), None).unwrap();
        assert_eq!(h.shape(), vec![1, 4]);
        assert!(h.to_vec().iter().all(|x| x.is_finite()));
        for w in attn.iter().flatten() {
            assert_eq!(w.to_vec(), vec![1.0]);
        }
    }

    #[test]
    fn empty_sentence_rejected() {
        let mut store = ParamStore::new();
        let sa = small_selfatt(&mut store, 2, 0);
        let mut store2 = ParamStore::new();
        let rnn = small_rnn(&mut store2, 1, 0);
        let tape = Tape::new();
        let x = tape.constant(vec![0, 3], vec![]).unwrap();
        assert!(sa.encode(&Binding::new(&store, &tape), x, None).is_err());
        assert!(rnn.encode(&Binding::new(&store2, &tape), x, None).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let mut store = ParamStore::new();
        let enc = small_selfatt(&mut store, 2, 3);
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let (_, attn) = enc.encode_with_attention(&bind, tape.leaf(&input(7, 3, 2)), None).unwrap();
        for w in attn.iter().flatten() {
            for row in w.to_vec().chunks(7) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn permutation_equivariant_without_relative_terms() {
        let mut store = ParamStore::new();
        let enc = small_selfatt(&mut store, 0, 5);
        for id in enc.relative_tables() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let n = 5;
        let x = input(n, 3, 6);
        let perm = [3, 0, 4, 1, 2];
        let mut px = Vec::new();
        for &p in &perm {
            px.extend_from_slice(x.row(p));
        }
        let run = |t: &Tensor| {
            let tape = Tape::new();
            let bind = Binding::new(&store, &tape);
            enc.encode(&bind, tape.leaf(t), None).unwrap().to_vec()
        };
        let h = run(&x);
        let ph = run(&Tensor::new(vec![n, 3], px).unwrap());
        for (i, &p) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((ph[i * 4 + c] - h[p * 4 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relative_terms_break_permutation_symmetry() {
        let mut store = ParamStore::new();
        let enc = small_selfatt(&mut store, 2, 5);
        let x = input(3, 3, 6);
        let mut px = Vec::new();
        for p in [2, 1, 0] {
            px.extend_from_slice(x.row(p));
        }
        let run = |t: &Tensor| {
            let tape = Tape::new();
            let bind = Binding::new(&store, &tape);
            enc.encode(&bind, tape.leaf(t), None).unwrap().to_vec()
        };
        let h = run(&x);
        let ph = run(&Tensor::new(vec![3, 3], px).unwrap());
        assert!((0..4).any(|c| (ph[c] - h[8 + c]).abs() > 1e-6));
    }

    #[test]
    fn rnn_zero_input_stays_zero() {
        let mut store = ParamStore::new();
        let enc = small_rnn(&mut store, 2, 1);
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let h = enc.encode(&bind, tape.constant(vec![4, 3], vec![0.0; 12]).unwrap(), None).unwrap();
        assert!(h.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rnn_reversal_swaps_directions() {
        let mut store = ParamStore::new();
        let enc = small_rnn(&mut store, 1, 2);
        let [fwd, bwd] = enc.direction_params(0);
        // Give both directions identical weights so reversing the input
        // must swap the halves.
        for (a, b) in [(fwd.wx, bwd.wx), (fwd.wh, bwd.wh), (fwd.b, bwd.b)] {
            let v = store.get(a).data().to_vec();
            store.get_mut(b).data_mut().copy_from_slice(&v);
        }
        let n = 5;
        let x = input(n, 3, 3);
        let mut rx = Vec::new();
        for i in (0..n).rev() {
            rx.extend_from_slice(x.row(i));
        }
        let run = |t: &Tensor| {
            let tape = Tape::new();
            let bind = Binding::new(&store, &tape);
            enc.encode(&bind, tape.leaf(t), None).unwrap().to_vec()
        };
        let h = run(&x);
        let rh = run(&Tensor::new(vec![n, 3], rx).unwrap());
        for i in 0..n {
            let j = n - 1 - i;
            for c in 0..3 {
                assert!((h[i * 6 + c] - rh[j * 6 + 3 + c]).abs() < 1e-12);
                assert!((h[i * 6 + 3 + c] - rh[j * 6 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rnn_output_shape() {
        let mut store = ParamStore::new();
        let enc = small_rnn(&mut store, 2, 4);
        for n in 1..=10 {
            let tape = Tape::new();
            let bind = Binding::new(&store, &tape);
            let h = enc.encode(&bind, tape.leaf(&input(n, 3, n as u64)), None).unwrap();
            assert_eq!(h.shape(), vec![n, 6]);
        }
    }

    #[test]
    fn dropout_deterministic_given_seed() {
        let mut store = ParamStore::new();
        let mut enc = small_selfatt(&mut store, 2, 1);
        enc.cfg.dropout = 0.5;
        let x = input(4, 3, 0);
        let run = |seed: Option<u64>| {
            let tape = Tape::new();
            let bind = Binding::new(&store, &tape);
            let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
            enc.encode(&bind, tape.leaf(&x), rng.as_mut()).unwrap().to_vec()
        };
        assert_eq!(run(None), run(None));
        assert_eq!(run(Some(9)), run(Some(9)));
        assert_ne!(run(Some(9)), run(None));
    }

    fn gradcheck(enc: &Encoder, store: &mut ParamStore) {
        let x = input(3, 3, 11);
        let weights = input(3, enc.out_dim(), 12);
        let ids = store.trainable(&[Group::Encoder]);
        let err = check_param_gradients(
            store,
            &ids,
            |bind| {
                let tape = bind.tape();
                let h = enc.encode(bind, tape.leaf(&x), None)?;
                Ok(h.mul(&tape.leaf(&weights))?.sum())
            },
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn selfatt_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let enc = Encoder::SelfAtt(small_selfatt(&mut store, 1, 7));
        gradcheck(&enc, &mut store);
    }

    #[test]
    fn rnn_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let enc = Encoder::Rnn(small_rnn(&mut store, 2, 8));
        gradcheck(&enc, &mut store);
    }
}
