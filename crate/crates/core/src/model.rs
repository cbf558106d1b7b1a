//! A full parser: input layer, encoder, decoder, and the language
//! discriminator used by adversarial and multi-task training.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{pool_sentence, DiscKind, Discriminator};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::EncodedSentence;
use crate::decoder::{graph_loss, mst_decode, BiaffineConfig, BiaffineDecoder, ParseTree, StackPtrConfig, StackPtrDecoder};
use crate::encoder::{Encoder, RnnConfig, RnnEncoder, SelfAttConfig, SelfAttEncoder};
use crate::error::{Error, Result};
use crate::params::{Binding, Group, ParamStore};
use crate::repr::InputRep;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    SelfAtt,
    Rnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Graph,
    Stack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub decoder: DecoderKind,
    pub pos_dim: usize,
    pub selfatt: SelfAttConfig,
    pub rnn: RnnConfig,
    pub biaffine: BiaffineConfig,
    pub stackptr: StackPtrConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::SelfAtt,
            decoder: DecoderKind::Graph,
            pos_dim: 32,
            selfatt: SelfAttConfig::default(),
            rnn: RnnConfig::default(),
            biaffine: BiaffineConfig::default(),
            stackptr: StackPtrConfig::default(),
        }
    }
}

impl ModelConfig {
    /// The two standard pairings are SelfAtt-Graph and RNN-Stack.
    pub fn is_standard_pairing(&self) -> bool {
        matches!(
            (self.encoder, self.decoder),
            (EncoderKind::SelfAtt, DecoderKind::Graph) | (EncoderKind::Rnn, DecoderKind::Stack)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiscSpec {
    pub kind: DiscKind,
    pub out_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Graph(BiaffineDecoder),
    Stack(StackPtrDecoder),
}

const INIT_REPR: u64 = 11;
const INIT_ENCODER: u64 = 12;
const INIT_DECODER: u64 = 13;
const INIT_DISC: u64 = 14;

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub rep: InputRep,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub disc: Discriminator,
}

impl Model {
    /// Each component draws its initial values from its own seeded stream.
    pub fn new(
        cfg: ModelConfig,
        word_vectors: Tensor,
        n_tags: usize,
        n_labels: usize,
        disc: DiscSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let rep = InputRep::new(&mut store, word_vectors, n_tags, cfg.pos_dim, &mut rng::stream(seed, INIT_REPR))?;
        let mut enc_rng = rng::stream(seed, INIT_ENCODER);
        let encoder = match cfg.encoder {
            EncoderKind::SelfAtt => {
                Encoder::SelfAtt(SelfAttEncoder::new(&mut store, rep.out_dim(), cfg.selfatt.clone(), &mut enc_rng)?)
            }
            EncoderKind::Rnn => Encoder::Rnn(RnnEncoder::new(&mut store, rep.out_dim(), cfg.rnn.clone(), &mut enc_rng)?),
        };
        let d = encoder.out_dim();
        let mut dec_rng = rng::stream(seed, INIT_DECODER);
        let decoder = match cfg.decoder {
            DecoderKind::Graph => {
                Decoder::Graph(BiaffineDecoder::new(&mut store, d, n_labels, cfg.biaffine.clone(), &mut dec_rng)?)
            }
            DecoderKind::Stack => {
                Decoder::Stack(StackPtrDecoder::new(&mut store, d, n_labels, cfg.stackptr.clone(), &mut dec_rng)?)
            }
        };
        let disc = Discriminator::new(
            &mut store,
            d,
            disc.kind,
            disc.out_dim,
            disc.hidden,
            &mut rng::stream(seed, INIT_DISC),
        )?;
        Ok(Model {
            cfg,
            store,
            rep,
            encoder,
            decoder,
            disc,
        })
    }

    pub fn n_labels(&self) -> usize {
        match &self.decoder {
            Decoder::Graph(d) => d.n_labels,
            Decoder::Stack(d) => d.n_labels,
        }
    }

    /// Encoder output `n × d`; dropout only when `rng` is given.
    pub fn encode<'t>(&self, bind: &Binding<'_, 't>, s: &EncodedSentence, rng: Option<&mut ChaCha8Rng>) -> Result<Var<'t>> {
        if s.is_empty() {
            return Err(Error::invalid("cannot encode an empty sentence"));
        }
        let x = self.rep.embed(bind, s)?;
        self.encoder.encode(bind, x, rng)
    }

    /// Parsing loss of the gold tree in `s` given encoder output `h`.
    pub fn parse_loss<'t>(&self, bind: &Binding<'_, 't>, h: Var<'t>, s: &EncodedSentence) -> Result<Var<'t>> {
        let gold = ParseTree::from_encoded(s)?;
        match &self.decoder {
            Decoder::Graph(d) => graph_loss(&d.scores(bind, h)?, &gold),
            Decoder::Stack(d) => d.loss(bind, h, &gold),
        }
    }

    /// Eval-mode parse.
    pub fn parse(&self, s: &EncodedSentence) -> Result<ParseTree> {
        let tape = Tape::new();
        let bind = Binding::with_frozen(&self.store, &tape, &[Group::Encoder, Group::Decoder, Group::Discriminator]);
        let h = self.encode(&bind, s, None)?;
        match &self.decoder {
            Decoder::Graph(d) => {
                let scores = d.scores(&bind, h)?;
                let heads = mst_decode(&scores.arc.to_vec(), s.len());
                let labels = d.best_labels(&scores.label, &heads);
                ParseTree::new(heads, labels)
            }
            Decoder::Stack(d) => d.decode(&bind, h),
        }
    }

    pub fn parse_all(&self, sentences: &[EncodedSentence]) -> Result<Vec<ParseTree>> {
        sentences.iter().map(|s| self.parse(s)).collect()
    }

    /// Mean-pooled eval-mode encoder output.
    pub fn sentence_repr(&self, s: &EncodedSentence) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bind = Binding::with_frozen(&self.store, &tape, &[Group::Encoder, Group::Decoder, Group::Discriminator]);
        let h = self.encode(&bind, s, None)?;
        Ok(pool_sentence(&h)?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(encoder: EncoderKind, decoder: DecoderKind, seed: u64) -> Model {
        let cfg = ModelConfig {
            encoder,
            decoder,
            pos_dim: 3,
            selfatt: SelfAttConfig {
                n_layers: 1,
                n_heads: 2,
                model_dim: 4,
                ff_dim: 4,
                kclip: 2,
                dropout: 0.1,
            },
            rnn: RnnConfig {
                n_layers: 1,
                hidden: 2,
                dropout: 0.1,
            },
            biaffine: BiaffineConfig { arc_dim: 3, label_dim: 2 },
            stackptr: StackPtrConfig {
                hidden: 3,
                pointer_dim: 3,
                label_hidden: 2,
            },
        };
        let words = Tensor::new(vec![5, 2], (0..10).map(|i| i as f64 / 10.0).collect()).unwrap();
        let disc = DiscSpec {
            kind: DiscKind::Linear,
            out_dim: 2,
            hidden: 4,
        };
        Model::new(cfg, words, 4, 3, disc, seed).unwrap()
    }

    fn sentence() -> EncodedSentence {
        EncodedSentence {
            words: vec![2, 3, 4],
            tags: vec![1, 2, 3],
            heads: vec![2, 0, 2],
            labels: vec![1, 2, 1],
            lang_id: 0,
        }
    }

    #[test]
    fn all_pairings_parse_and_score() {
        for enc in [EncoderKind::SelfAtt, EncoderKind::Rnn] {
            for dec in [DecoderKind::Graph, DecoderKind::Stack] {
                let m = tiny(enc, dec, 1);
                let t = m.parse(&sentence()).unwrap();
                assert!(t.is_single_rooted());
                let tape = Tape::new();
                let bind = Binding::new(&m.store, &tape);
                let s = sentence();
                let h = m.encode(&bind, &s, None).unwrap();
                let loss = m.parse_loss(&bind, h, &s).unwrap().item();
                assert!(loss.is_finite() && loss > 0.0);
                assert_eq!(m.sentence_repr(&s).unwrap().len(), m.encoder.out_dim());
            }
        }
    }

    #[test]
    fn initialization_independent_of_discriminator() {
        let a = tiny(EncoderKind::SelfAtt, DecoderKind::Graph, 3);
        let mut b = tiny(EncoderKind::SelfAtt, DecoderKind::Graph, 3);
        let g = [Group::Encoder, Group::Decoder];
        assert_eq!(a.store.checksum(&g), b.store.checksum(&g));
        let words = b.store.get(b.rep.word.param).clone();
        b = Model::new(
            b.cfg.clone(),
            words,
            4,
            3,
            DiscSpec {
                kind: DiscKind::Mlp,
                out_dim: 1,
                hidden: 4,
            },
            3,
        )
        .unwrap();
        assert_eq!(a.store.checksum(&g), b.store.checksum(&g));
        assert!(ModelConfig::default().is_standard_pairing());
    }
}
