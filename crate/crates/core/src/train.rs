//! The training procedure: parser warm-up, then alternating discriminator
//! and generator updates (GAN, WGAN), joint gradient-reversal updates, or
//! the cooperative multi-task contrast.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{adv_units, disc_loss_gan, disc_loss_gr, disc_loss_wgan, grad_reverse, AdvConfig, Objective};
use crate::autodiff::{Tape, Var};
use crate::data::batch::AUX_STREAM;
use crate::data::{source_cycler, Cycler, EncodedSentence, Symbols, Treebank};
use crate::error::{Error, Result};
use crate::eval::uas_las;
use crate::model::Model;
use crate::optim::{Adam, Optimizer, RmsProp};
use crate::params::{Binding, Group, ParamId, ParamStore};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Adversarial,
    Mtl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Parser-only iterations before any language loss.
    pub warmup: usize,
    pub num_iter: usize,
    pub batch_size: usize,
    /// Encoder and decoder learning rate.
    pub alpha1: f64,
    /// Discriminator learning rate; defaults to 0.001 (Adam), or 5e-5
    /// (RMSProp) for WGAN.
    pub alpha2: Option<f64>,
    /// Global gradient-norm bound for encoder and decoder updates.
    pub grad_clip: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Baseline,
            warmup: 100,
            num_iter: 2000,
            batch_size: 32,
            alpha1: 0.002,
            alpha2: None,
            grad_clip: 5.0,
            seed: 1,
            eval_every: 100,
            log_every: 10,
        }
    }
}

/// Labeled source sentences, unlabeled auxiliary sentences and an optional
/// source dev set for model selection.
pub struct TrainData<'a> {
    pub source: &'a [EncodedSentence],
    pub aux: &'a [EncodedSentence],
    pub dev: Option<DevSet<'a>>,
}

#[derive(Clone, Copy)]
pub struct DevSet<'a> {
    pub gold: &'a Treebank,
    pub encoded: &'a [EncodedSentence],
    pub deprels: &'a Symbols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    #[serde(rename = "L_d")]
    pub l_d: Option<f64>,
    pub dev_uas: Option<f64>,
    pub dev_las: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub iter: usize,
    pub dev_uas: f64,
    pub dev_las: f64,
    pub store: ParamStore,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<MetricRecord>,
    /// Parameters at the best source-dev UAS seen.
    pub best: Option<Snapshot>,
}

pub fn metrics_jsonl(log: &[MetricRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("metric records serialize") + "\n")
        .collect()
}

// Random stream identifiers.
const DISC_SOURCE_STREAM: u64 = 3;
const DISC_AUX_STREAM: u64 = 4;
const DROP_SOURCE: u64 = 1;
const DROP_AUX: u64 = 2;
const DROP_DISC_SOURCE: u64 = 3;
const DROP_DISC_AUX: u64 = 4;

/// Per-sentence dropout stream for `(iteration, purpose, position)`.
fn dropout_rng(seed: u64, iter: usize, purpose: u64, position: usize) -> ChaCha8Rng {
    stream(derive_seed(derive_seed(seed, iter as u64), purpose), position as u64)
}

/// Step statistics; `l_d` is absent when no language loss was computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub l_p: f64,
    pub l_d: Option<f64>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub adv: AdvConfig,
    gen_ids: Vec<ParamId>,
    gen_opt: Adam,
    disc_opt: Optimizer,
    source: Cycler,
    aux: Option<Cycler>,
    disc_source: Option<Cycler>,
    disc_aux: Option<Cycler>,
    n_classes: usize,
    iter: usize,
}

impl Trainer {
    /// Checks mode/data consistency and the discriminator arity up front.
    pub fn new(model: &Model, data: &TrainData<'_>, cfg: TrainConfig, adv: AdvConfig) -> Result<Self> {
        if cfg.batch_size < 2 || cfg.batch_size % 2 != 0 {
            return Err(Error::config("train.batch_size", format!("must be even and ≥ 2, got {}", cfg.batch_size)));
        }
        if cfg.warmup > cfg.num_iter {
            return Err(Error::config(
                "train.warmup",
                format!("{} exceeds num_iter {}", cfg.warmup, cfg.num_iter),
            ));
        }
        if !(cfg.alpha1 > 0.0) {
            return Err(Error::config("train.alpha1", "must be positive"));
        }
        if data.source.is_empty() {
            return Err(Error::config("data.source", "no training sentences"));
        }
        let uses_aux = cfg.mode != Mode::Baseline;
        if uses_aux {
            if data.aux.is_empty() {
                return Err(Error::config("data.aux", format!("{:?} mode needs auxiliary sentences", cfg.mode)));
            }
            if adv.k == 0 {
                return Err(Error::config("adversary.k", "must be at least 1"));
            }
            if !(adv.lambda >= 0.0) {
                return Err(Error::config("adversary.lambda", "must be non-negative"));
            }
            if cfg.mode == Mode::Mtl && adv.objective == Objective::Wgan {
                return Err(Error::config("adversary.objective", "multi-task training needs a classification objective"));
            }
        }
        let n_classes = match adv.objective {
            Objective::Gan => 2,
            Objective::Wgan => 1,
            Objective::Gr => data.source.iter().chain(data.aux).map(|s| s.lang_id).max().unwrap_or(0) + 1,
        };
        if uses_aux && model.disc.out_dim != n_classes {
            return Err(Error::config(
                "adversary.objective",
                format!("{:?} needs {n_classes} discriminator outputs, model has {}", adv.objective, model.disc.out_dim),
            ));
        }
        let gen_ids = model.store.trainable(&[Group::Encoder, Group::Decoder]);
        let disc_ids = model.store.trainable(&[Group::Discriminator]);
        let gen_opt = Adam::new(&model.store, gen_ids.clone(), cfg.alpha1);
        let disc_opt = match adv.objective {
            Objective::Wgan => Optimizer::RmsProp(RmsProp::new(&model.store, disc_ids, cfg.alpha2.unwrap_or(5e-5))),
            _ => Optimizer::Adam(Adam::new(&model.store, disc_ids, cfg.alpha2.unwrap_or(0.001))),
        };
        let aux_cycler = |s: u64| -> Result<Option<Cycler>> {
            if uses_aux {
                Ok(Some(Cycler::new(data.aux.len(), derive_seed(cfg.seed, s))?))
            } else {
                Ok(None)
            }
        };
        Ok(Trainer {
            source: source_cycler(data.source.len(), cfg.seed)?,
            aux: aux_cycler(AUX_STREAM)?,
            disc_source: if uses_aux {
                Some(Cycler::new(data.source.len(), derive_seed(cfg.seed, DISC_SOURCE_STREAM))?)
            } else {
                None
            },
            disc_aux: aux_cycler(DISC_AUX_STREAM)?,
            gen_ids,
            gen_opt,
            disc_opt,
            n_classes,
            iter: 0,
            cfg,
            adv,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    /// One iteration of the schedule for the configured mode.
    pub fn step(&mut self, model: &mut Model, data: &TrainData<'_>) -> Result<StepStats> {
        let half = self.cfg.batch_size / 2;
        let stats = if self.iter < self.cfg.warmup {
            let idx = self.source.take(self.cfg.batch_size);
            self.parser_step(model, data, &idx)?
        } else {
            let src = self.source.take(half);
            match (self.cfg.mode, self.adv.objective) {
                (Mode::Baseline, _) => self.parser_step(model, data, &src)?,
                (Mode::Adversarial, Objective::Gan | Objective::Wgan) => {
                    for _ in 0..self.adv.k {
                        let ds = self.disc_source.as_mut().expect("aux modes sample").take(half);
                        let da = self.disc_aux.as_mut().expect("aux modes sample").take(half);
                        self.discriminator_step(model, data, &ds, &da)?;
                    }
                    let aux = self.aux.as_mut().expect("aux modes sample").take(half);
                    self.generator_step(model, data, &src, &aux)?
                }
                (Mode::Adversarial, Objective::Gr) | (Mode::Mtl, _) => {
                    let aux = self.aux.as_mut().expect("aux modes sample").take(half);
                    self.joint_step(model, data, &src, &aux)?
                }
            }
        };
        self.iter += 1;
        Ok(stats)
    }

    /// Parse loss of the batch per token, with train-mode encodings.
    fn parse_term<'t>(
        &self,
        model: &Model,
        bind: &Binding<'_, 't>,
        sentences: &[&EncodedSentence],
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let mut losses = Vec::with_capacity(sentences.len());
        let mut encodings = Vec::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            let mut rng = dropout_rng(self.cfg.seed, self.iter, DROP_SOURCE, i);
            let h = model.encode(bind, s, Some(&mut rng))?;
            losses.push(model.parse_loss(bind, h, s)?);
            encodings.push(h);
        }
        let n_tokens: usize = sentences.iter().map(|s| s.len()).sum();
        Ok((Var::concat(&losses)?.sum().scale(1.0 / n_tokens as f64), encodings))
    }

    fn units<'t>(&self, encodings: &[Var<'t>]) -> Result<Var<'t>> {
        let units = encodings
            .iter()
            .map(|h| adv_units(h, self.adv.granularity))
            .collect::<Result<Vec<_>>>()?;
        Var::concat_rows(&units)
    }

    fn encode_all<'t>(
        &self,
        model: &Model,
        bind: &Binding<'_, 't>,
        sentences: &[&EncodedSentence],
        purpose: u64,
    ) -> Result<Vec<Var<'t>>> {
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| model.encode(bind, s, Some(&mut dropout_rng(self.cfg.seed, self.iter, purpose, i))))
            .collect()
    }

    /// Class of each unit: source 0 and auxiliary 1 for the binary
    /// objective, the sentence's language id for the multiclass one.
    fn unit_classes(&self, sentences: &[&EncodedSentence], binary_class: usize) -> Vec<usize> {
        sentences
            .iter()
            .flat_map(|s| {
                let class = if self.adv.objective == Objective::Gr { s.lang_id } else { binary_class };
                let count = match self.adv.granularity {
                    crate::adversary::Granularity::Word => s.len(),
                    crate::adversary::Granularity::Sentence => 1,
                };
                std::iter::repeat_n(class, count)
            })
            .collect()
    }

    fn update_generator(&mut self, store: &mut ParamStore) -> Result<()> {
        store.ensure_grads(&self.gen_ids);
        store.clip_grad_norm(&self.gen_ids, self.cfg.grad_clip);
        self.gen_opt.step(store)
    }

    /// Descends `L_p` on the encoder and decoder only.
    pub fn parser_step(&mut self, model: &mut Model, data: &TrainData<'_>, idx: &[usize]) -> Result<StepStats> {
        let sentences: Vec<&EncodedSentence> = idx.iter().map(|&i| &data.source[i]).collect();
        let (l_p, grads) = {
            let tape = Tape::new();
            let bind = Binding::with_frozen(&model.store, &tape, &[Group::Discriminator]);
            let (lp, _) = self.parse_term(model, &bind, &sentences)?;
            let value = lp.item();
            tape.backward(lp)?;
            (value, bind.gradients())
        };
        model.store.zero_grads();
        model.store.accumulate(grads);
        self.update_generator(&mut model.store)?;
        Ok(StepStats { l_p, l_d: None })
    }

    /// Updates only the discriminator; encoder outputs enter as constants.
    pub fn discriminator_step(&mut self, model: &mut Model, data: &TrainData<'_>, src: &[usize], aux: &[usize]) -> Result<f64> {
        let src: Vec<&EncodedSentence> = src.iter().map(|&i| &data.source[i]).collect();
        let aux: Vec<&EncodedSentence> = aux.iter().map(|&i| &data.aux[i]).collect();
        let (l_d, grads) = {
            let tape = Tape::new();
            let bind = Binding::with_frozen(&model.store, &tape, &[Group::Encoder, Group::Decoder]);
            let hs = self.encode_all(model, &bind, &src, DROP_DISC_SOURCE)?;
            let ha = self.encode_all(model, &bind, &aux, DROP_DISC_AUX)?;
            let (us, ua) = (self.units(&hs)?, self.units(&ha)?);
            let (value, loss) = match self.adv.objective {
                Objective::Gan => {
                    let l = disc_loss_gan(&bind, &model.disc, &us, &ua)?;
                    (l.item(), l)
                }
                Objective::Wgan => {
                    let gap = disc_loss_wgan(&bind, &model.disc, &us, &ua)?;
                    (gap.item(), gap.neg())
                }
                Objective::Gr => {
                    let classes = [self.unit_classes(&src, 0), self.unit_classes(&aux, 1)].concat();
                    let l = disc_loss_gr(&bind, &model.disc, &Var::concat_rows(&[us, ua])?, &classes)?;
                    (l.item(), l)
                }
            };
            tape.backward(loss)?;
            (value, bind.gradients())
        };
        model.store.zero_grads();
        model.store.accumulate(grads);
        model.store.ensure_grads(self.disc_opt.ids());
        self.disc_opt.step(&mut model.store)?;
        if self.adv.objective == Objective::Wgan {
            model.disc.clip(&mut model.store, self.adv.clip_c);
        }
        Ok(l_d)
    }

    /// Descends `L_p − λ·L_d` (GAN) or `L_p + λ·gap` (WGAN) on the encoder
    /// and decoder with the discriminator frozen.
    pub fn generator_step(&mut self, model: &mut Model, data: &TrainData<'_>, src: &[usize], aux: &[usize]) -> Result<StepStats> {
        let src: Vec<&EncodedSentence> = src.iter().map(|&i| &data.source[i]).collect();
        let aux: Vec<&EncodedSentence> = aux.iter().map(|&i| &data.aux[i]).collect();
        let lambda = self.adv.lambda;
        let (stats, grads) = {
            let tape = Tape::new();
            let bind = Binding::with_frozen(&model.store, &tape, &[Group::Discriminator]);
            let (lp, hs) = self.parse_term(model, &bind, &src)?;
            let ha = self.encode_all(model, &bind, &aux, DROP_AUX)?;
            let (us, ua) = (self.units(&hs)?, self.units(&ha)?);
            let (ld, total) = match self.adv.objective {
                Objective::Gan => {
                    let ld = disc_loss_gan(&bind, &model.disc, &us, &ua)?;
                    (ld, lp.sub(&ld.scale(lambda))?)
                }
                Objective::Wgan => {
                    let gap = disc_loss_wgan(&bind, &model.disc, &us, &ua)?;
                    (gap, lp.add(&gap.scale(lambda))?)
                }
                Objective::Gr => {
                    return Err(Error::invalid("gradient reversal uses joint updates"));
                }
            };
            let stats = StepStats {
                l_p: lp.item(),
                l_d: Some(ld.item()),
            };
            tape.backward(total)?;
            (stats, bind.gradients())
        };
        model.store.zero_grads();
        model.store.accumulate(grads);
        self.update_generator(&mut model.store)?;
        Ok(stats)
    }

    /// One backward pass updating everything. Adversarial mode reverses the
    /// classifier gradient into the encoder (scaled by λ); multi-task mode
    /// adds `λ·CE` so encoder and classifier cooperate.
    pub fn joint_step(&mut self, model: &mut Model, data: &TrainData<'_>, src: &[usize], aux: &[usize]) -> Result<StepStats> {
        let src: Vec<&EncodedSentence> = src.iter().map(|&i| &data.source[i]).collect();
        let aux: Vec<&EncodedSentence> = aux.iter().map(|&i| &data.aux[i]).collect();
        let lambda = self.adv.lambda;
        let (stats, grads) = {
            let tape = Tape::new();
            let bind = Binding::new(&model.store, &tape);
            let (lp, hs) = self.parse_term(model, &bind, &src)?;
            let ha = self.encode_all(model, &bind, &aux, DROP_AUX)?;
            let (mut us, mut ua) = (self.units(&hs)?, self.units(&ha)?);
            if self.cfg.mode == Mode::Adversarial {
                us = grad_reverse(&us, lambda);
                ua = grad_reverse(&ua, lambda);
            }
            let ce = match self.adv.objective {
                Objective::Gan => disc_loss_gan(&bind, &model.disc, &us, &ua)?,
                _ => {
                    let classes = [self.unit_classes(&src, 0), self.unit_classes(&aux, 1)].concat();
                    disc_loss_gr(&bind, &model.disc, &Var::concat_rows(&[us, ua])?, &classes)?
                }
            };
            let total = match self.cfg.mode {
                Mode::Adversarial => lp.add(&ce)?,
                _ => lp.add(&ce.scale(lambda))?,
            };
            let stats = StepStats {
                l_p: lp.item(),
                l_d: Some(ce.item()),
            };
            tape.backward(total)?;
            (stats, bind.gradients())
        };
        model.store.zero_grads();
        model.store.accumulate(grads);
        self.update_generator(&mut model.store)?;
        model.store.ensure_grads(self.disc_opt.ids());
        self.disc_opt.step(&mut model.store)?;
        Ok(stats)
    }

    /// Eval-mode language loss of a fixed batch (no dropout, no updates).
    pub fn language_loss(&self, model: &Model, data: &TrainData<'_>, src: &[usize], aux: &[usize]) -> Result<f64> {
        let src: Vec<&EncodedSentence> = src.iter().map(|&i| &data.source[i]).collect();
        let aux: Vec<&EncodedSentence> = aux.iter().map(|&i| &data.aux[i]).collect();
        let tape = Tape::new();
        let bind = Binding::with_frozen(&model.store, &tape, &[Group::Encoder, Group::Decoder, Group::Discriminator]);
        let enc = |ss: &[&EncodedSentence]| -> Result<Vec<Var<'_>>> { ss.iter().map(|s| model.encode(&bind, s, None)).collect() };
        let (us, ua) = (self.units(&enc(&src)?)?, self.units(&enc(&aux)?)?);
        let l = match self.adv.objective {
            Objective::Gan => disc_loss_gan(&bind, &model.disc, &us, &ua)?,
            Objective::Wgan => disc_loss_wgan(&bind, &model.disc, &us, &ua)?,
            Objective::Gr => {
                let classes = [self.unit_classes(&src, 0), self.unit_classes(&aux, 1)].concat();
                disc_loss_gr(&bind, &model.disc, &Var::concat_rows(&[us, ua])?, &classes)?
            }
        };
        Ok(l.item())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

/// Source-dev UAS/LAS of the current parameters.
pub fn dev_scores(model: &Model, dev: &DevSet<'_>) -> Result<(f64, f64)> {
    let report = uas_las(dev.gold, &model.parse_all(dev.encoded)?, dev.deprels)?;
    Ok((report.uas, report.las))
}

/// Runs the full schedule. The log gets a record every `log_every`
/// iterations and at each dev evaluation.
pub fn train(model: &mut Model, data: &TrainData<'_>, cfg: TrainConfig, adv: AdvConfig) -> Result<TrainOutcome> {
    train_with(model, data, cfg, adv, |_, _| Ok(()))
}

/// As [`train`], calling `after_step(iteration, model)` after every update.
pub fn train_with<F>(model: &mut Model, data: &TrainData<'_>, cfg: TrainConfig, adv: AdvConfig, mut after_step: F) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    let mut trainer = Trainer::new(model, data, cfg.clone(), adv)?;
    let mut log = Vec::new();
    let mut best: Option<Snapshot> = None;
    for iter in 0..cfg.num_iter {
        let stats = trainer.step(model, data)?;
        if !stats.l_p.is_finite() {
            return Err(Error::invalid(format!("parse loss diverged at iteration {iter}")));
        }
        let last = iter + 1 == cfg.num_iter;
        let eval_now = cfg.eval_every > 0 && ((iter + 1) % cfg.eval_every == 0 || last);
        let (mut dev_uas, mut dev_las) = (None, None);
        if let (true, Some(dev)) = (eval_now, &data.dev) {
            let (u, l) = dev_scores(model, dev)?;
            dev_uas = Some(u);
            dev_las = Some(l);
            if best.as_ref().is_none_or(|b| u > b.dev_uas) {
                best = Some(Snapshot {
                    iter: iter + 1,
                    dev_uas: u,
                    dev_las: l,
                    store: model.store.clone(),
                });
            }
        }
        if dev_uas.is_some() || (cfg.log_every > 0 && (iter + 1) % cfg.log_every == 0) || last {
            log.push(MetricRecord {
                iter: iter + 1,
                l_p: stats.l_p,
                l_d: stats.l_d,
                dev_uas,
                dev_las,
            });
        }
        after_step(iter + 1, model)?;
    }
    Ok(TrainOutcome { log, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{DiscKind, Granularity};
    use crate::autodiff::Tensor;
    use crate::data::{synth_treebank, SynthSpec, Vocabulary};
    use crate::decoder::{BiaffineConfig, StackPtrConfig};
    use crate::encoder::{RnnConfig, SelfAttConfig};
    use crate::model::{DecoderKind, DiscSpec, EncoderKind, ModelConfig};

    struct Fixture {
        vocab: Vocabulary,
        source: Vec<EncodedSentence>,
        aux: Vec<EncodedSentence>,
        dev_gold: Treebank,
        dev: Vec<EncodedSentence>,
    }

    fn corpus(lang_id: usize, p: f64, n: usize, seed: u64) -> Treebank {
        synth_treebank(&SynthSpec {
            n_sentences: n,
            min_len: 2,
            max_len: 6,
            vocab_size: 16,
            head_direction_p: p,
            lang_id,
            seed,
        })
        .unwrap()
    }

    fn fixture() -> Fixture {
        let src = corpus(0, 0.2, 24, 1);
        let aux = corpus(1, 0.8, 24, 2);
        let dev_gold = corpus(0, 0.2, 6, 3);
        let vocab = Vocabulary::build(&[&src, &aux], 1);
        Fixture {
            source: vocab.encode_all(&src),
            aux: vocab.encode_all(&aux),
            dev: vocab.encode_all(&dev_gold),
            dev_gold,
            vocab,
        }
    }

    fn model(fx: &Fixture, dropout: f64, disc_out: usize, decoder: DecoderKind) -> Model {
        let cfg = ModelConfig {
            encoder: if decoder == DecoderKind::Graph { EncoderKind::SelfAtt } else { EncoderKind::Rnn },
            decoder,
            pos_dim: 4,
            selfatt: SelfAttConfig {
                n_layers: 1,
                n_heads: 2,
                model_dim: 8,
                ff_dim: 8,
                kclip: 2,
                dropout,
            },
            rnn: RnnConfig {
                n_layers: 1,
                hidden: 4,
                dropout,
            },
            biaffine: BiaffineConfig { arc_dim: 6, label_dim: 4 },
            stackptr: StackPtrConfig {
                hidden: 6,
                pointer_dim: 6,
                label_hidden: 4,
            },
        };
        let v = fx.vocab.words.len();
        let words = Tensor::new(vec![v, 4], (0..v * 4).map(|i| ((i * 37 % 11) as f64 - 5.0) / 10.0).collect()).unwrap();
        let disc = DiscSpec {
            kind: DiscKind::Mlp,
            out_dim: disc_out,
            hidden: 6,
        };
        Model::new(cfg, words, fx.vocab.tags.len(), fx.vocab.deprels.len(), disc, 7).unwrap()
    }

    fn data(fx: &Fixture) -> TrainData<'_> {
        TrainData {
            source: &fx.source,
            aux: &fx.aux,
            dev: Some(DevSet {
                gold: &fx.dev_gold,
                encoded: &fx.dev,
                deprels: &fx.vocab.deprels,
            }),
        }
    }

    fn cfg(mode: Mode, num_iter: usize, warmup: usize) -> TrainConfig {
        TrainConfig {
            mode,
            warmup,
            num_iter,
            batch_size: 4,
            alpha1: 0.002,
            alpha2: None,
            grad_clip: 5.0,
            seed: 5,
            eval_every: 3,
            log_every: 1,
        }
    }

    fn adv(objective: Objective, lambda: f64) -> AdvConfig {
        AdvConfig {
            objective,
            lambda,
            ..AdvConfig::default()
        }
    }

    fn pool<'t>(hs: &[Var<'t>]) -> Var<'t> {
        Var::concat_rows(&hs.iter().map(|h| adv_units(h, Granularity::Sentence).unwrap()).collect::<Vec<_>>()).unwrap()
    }

    const GEN: [Group; 2] = [Group::Encoder, Group::Decoder];
    const DISC: [Group; 1] = [Group::Discriminator];

    #[test]
    fn zero_lambda_gan_reproduces_baseline() {
        let fx = fixture();
        let d = data(&fx);
        for dec in [DecoderKind::Graph, DecoderKind::Stack] {
            let mut base = model(&fx, 0.2, 2, dec);
            let mut gan = model(&fx, 0.2, 2, dec);
            let lb = train(&mut base, &d, cfg(Mode::Baseline, 6, 2), adv(Objective::Gan, 0.0)).unwrap();
            let lg = train(&mut gan, &d, cfg(Mode::Adversarial, 6, 2), adv(Objective::Gan, 0.0)).unwrap();
            assert_eq!(base.store.checksum(&GEN), gan.store.checksum(&GEN));
            let lp = |log: &[MetricRecord]| log.iter().map(|r| r.l_p.to_bits()).collect::<Vec<_>>();
            assert_eq!(lp(&lb.log), lp(&lg.log));
        }
    }

    #[test]
    fn each_phase_updates_only_its_parameters() {
        let fx = fixture();
        let d = data(&fx);
        for objective in [Objective::Gan, Objective::Wgan] {
            let mut m = model(&fx, 0.2, objective.arity(2), DecoderKind::Graph);
            let mut t = Trainer::new(&m, &d, cfg(Mode::Adversarial, 4, 0), adv(objective, 0.5)).unwrap();
            let (g0, d0) = (m.store.checksum(&GEN), m.store.checksum(&DISC));
            t.discriminator_step(&mut m, &d, &[0, 1], &[2, 3]).unwrap();
            let d1 = m.store.checksum(&DISC);
            assert_eq!(m.store.checksum(&GEN), g0);
            assert_ne!(d1, d0);
            t.generator_step(&mut m, &d, &[0, 1], &[2, 3]).unwrap();
            assert_eq!(m.store.checksum(&DISC), d1);
            assert_ne!(m.store.checksum(&GEN), g0);
        }
    }

    #[test]
    fn discriminator_step_lowers_its_loss() {
        let fx = fixture();
        let d = data(&fx);
        let mut m = model(&fx, 0.0, 2, DecoderKind::Graph);
        let mut c = cfg(Mode::Adversarial, 4, 0);
        c.alpha2 = Some(1e-4);
        let mut t = Trainer::new(&m, &d, c, adv(Objective::Gan, 0.1)).unwrap();
        let (src, aux) = ([0, 1, 2, 3], [0, 1, 2, 3]);
        let before = t.language_loss(&m, &d, &src, &aux).unwrap();
        t.discriminator_step(&mut m, &d, &src, &aux).unwrap();
        assert!(t.language_loss(&m, &d, &src, &aux).unwrap() < before);
    }

    #[test]
    fn generator_works_against_the_discriminator_and_mtl_with_it() {
        let fx = fixture();
        let d = data(&fx);
        let (src, aux) = ([0, 1, 2, 3], [4, 5, 6, 7]);
        let mut c = cfg(Mode::Adversarial, 4, 0);
        c.alpha1 = 1e-3;
        c.grad_clip = 1e6;

        let mut m = model(&fx, 0.0, 2, DecoderKind::Graph);
        let mut t = Trainer::new(&m, &d, c.clone(), adv(Objective::Gan, 100.0)).unwrap();
        let before = t.language_loss(&m, &d, &src, &aux).unwrap();
        t.generator_step(&mut m, &d, &src, &aux).unwrap();
        assert!(t.language_loss(&m, &d, &src, &aux).unwrap() > before);

        let mut m = model(&fx, 0.0, 1, DecoderKind::Graph);
        let mut t = Trainer::new(&m, &d, c.clone(), adv(Objective::Wgan, 100.0)).unwrap();
        let before = t.language_loss(&m, &d, &src, &aux).unwrap();
        t.generator_step(&mut m, &d, &src, &aux).unwrap();
        assert!(t.language_loss(&m, &d, &src, &aux).unwrap() < before);

        c.mode = Mode::Mtl;
        c.alpha2 = Some(1e-9);
        let mut m = model(&fx, 0.0, 2, DecoderKind::Graph);
        let mut t = Trainer::new(&m, &d, c, adv(Objective::Gan, 100.0)).unwrap();
        let before = t.language_loss(&m, &d, &src, &aux).unwrap();
        t.joint_step(&mut m, &d, &src, &aux).unwrap();
        assert!(t.language_loss(&m, &d, &src, &aux).unwrap() < before);
    }

    #[test]
    fn reversal_matches_explicit_minimax_gradient() {
        let fx = fixture();
        let m = model(&fx, 0.0, 2, DecoderKind::Graph);
        let src: Vec<&EncodedSentence> = fx.source[..3].iter().collect();
        let aux: Vec<&EncodedSentence> = fx.aux[..3].iter().collect();
        let lambda = 0.37;
        let grads = |reversed: bool| {
            let tape = Tape::new();
            let frozen: &[Group] = if reversed { &[] } else { &DISC };
            let bind = Binding::with_frozen(&m.store, &tape, frozen);
            let enc = |ss: &[&EncodedSentence]| -> Vec<Var<'_>> { ss.iter().map(|s| m.encode(&bind, s, None).unwrap()).collect() };
            let (hs, ha) = (enc(&src), enc(&aux));
            let lp = Var::concat(&src.iter().zip(&hs).map(|(s, h)| m.parse_loss(&bind, *h, s).unwrap()).collect::<Vec<_>>())
                .unwrap()
                .mean()
                .unwrap();
            let (mut us, mut ua) = (pool(&hs), pool(&ha));
            let total = if reversed {
                us = grad_reverse(&us, lambda);
                ua = grad_reverse(&ua, lambda);
                lp.add(&disc_loss_gan(&bind, &m.disc, &us, &ua).unwrap()).unwrap()
            } else {
                lp.sub(&disc_loss_gan(&bind, &m.disc, &us, &ua).unwrap().scale(lambda)).unwrap()
            };
            tape.backward(total).unwrap();
            let mut g = bind.gradients();
            g.retain(|(id, _)| m.store.group(*id) != Group::Discriminator);
            g.sort_by_key(|(id, _)| *id);
            g
        };
        let (a, b) = (grads(true), grads(false));
        assert_eq!(a.len(), b.len());
        for ((ia, ga), (ib, gb)) in a.iter().zip(&b) {
            assert_eq!(ia, ib);
            for (x, y) in ga.iter().zip(gb) {
                assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn runs_are_deterministic_and_track_best_dev() {
        let fx = fixture();
        let d = data(&fx);
        let run = |objective: Objective, mode: Mode| {
            let n_langs = if objective == Objective::Gr { 2 } else { objective.arity(2) };
            let mut m = model(&fx, 0.2, n_langs, DecoderKind::Stack);
            let out = train(&mut m, &d, cfg(mode, 5, 1), adv(objective, 0.1)).unwrap();
            (metrics_jsonl(&out.log), out.best.map(|b| (b.iter, b.dev_uas)), m.store.checksum(&GEN))
        };
        for (objective, mode) in [(Objective::Gan, Mode::Adversarial), (Objective::Gr, Mode::Adversarial), (Objective::Gr, Mode::Mtl)] {
            let a = run(objective, mode);
            assert_eq!(a, run(objective, mode));
            assert_eq!(a.0.lines().count(), 5);
            let (iter, uas) = a.1.unwrap();
            assert!(iter == 3 || iter == 5);
            assert!((0.0..=100.0).contains(&uas));
            let first: serde_json::Value = serde_json::from_str(a.0.lines().next().unwrap()).unwrap();
            assert!(first["L_d"].is_null() && first["dev_uas"].is_null());
        }
    }

    #[test]
    fn configuration_errors_are_reported() {
        let fx = fixture();
        let m = model(&fx, 0.0, 2, DecoderKind::Graph);
        let no_aux = TrainData {
            source: &fx.source,
            aux: &[],
            dev: None,
        };
        let field = |r: Result<Trainer>| match r {
            Err(Error::Config { field, .. }) => field,
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("accepted"),
        };
        assert_eq!(field(Trainer::new(&m, &no_aux, cfg(Mode::Adversarial, 4, 0), adv(Objective::Gan, 0.1))), "data.aux");
        assert!(Trainer::new(&m, &no_aux, cfg(Mode::Baseline, 4, 0), adv(Objective::Gan, 0.1)).is_ok());
        let d = data(&fx);
        let mut odd = cfg(Mode::Baseline, 4, 0);
        odd.batch_size = 3;
        assert_eq!(field(Trainer::new(&m, &d, odd, adv(Objective::Gan, 0.1))), "train.batch_size");
        assert_eq!(field(Trainer::new(&m, &d, cfg(Mode::Baseline, 4, 5), adv(Objective::Gan, 0.1))), "train.warmup");
        assert_eq!(field(Trainer::new(&m, &d, cfg(Mode::Adversarial, 4, 0), adv(Objective::Wgan, 0.1))), "adversary.objective");
        assert_eq!(field(Trainer::new(&m, &d, cfg(Mode::Mtl, 4, 0), adv(Objective::Wgan, 0.1))), "adversary.objective");
        let mut k0 = adv(Objective::Gan, 0.1);
        k0.k = 0;
        assert_eq!(field(Trainer::new(&m, &d, cfg(Mode::Adversarial, 4, 0), k0)), "adversary.k");
    }
}
