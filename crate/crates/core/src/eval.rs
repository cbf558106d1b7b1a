//! Attachment scores, the paired permutation test, the frozen-encoder
//! language probe, and zero-shot transfer evaluation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{EncodedSentence, Symbols, Treebank};
use crate::decoder::ParseTree;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Adam;
use crate::params::{Binding, Group, ParamId, ParamStore};
use crate::rng;

/// UPOS tags left out of attachment scores.
pub const PUNCT_TAGS: [&str; 2] = ["PUNCT", "SYM"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub uas: f64,
    pub las: f64,
    pub n_scored_tokens: usize,
    /// Correct heads per sentence, for significance testing.
    pub per_sentence_heads: Vec<usize>,
    pub per_sentence_labeled: Vec<usize>,
}

/// UAS/LAS in percent over non-punctuation tokens. Predicted label ids are
/// compared by name through `deprels`.
pub fn uas_las(gold: &Treebank, pred: &[ParseTree], deprels: &Symbols) -> Result<ScoreReport> {
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!(
            "{} gold sentences but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let (mut total, mut heads_ok, mut labeled_ok) = (0, 0, 0);
    let mut per_heads = Vec::with_capacity(gold.len());
    let mut per_labeled = Vec::with_capacity(gold.len());
    for (i, (g, p)) in gold.sentences.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::invalid(format!(
                "sentence {i}: gold has {} tokens, prediction {}",
                g.len(),
                p.len()
            )));
        }
        let (mut h, mut l) = (0, 0);
        for (j, t) in g.tokens.iter().enumerate() {
            if PUNCT_TAGS.contains(&t.upos.as_str()) {
                continue;
            }
            total += 1;
            if p.heads[j] == t.head {
                h += 1;
                if deprels.name(p.labels[j]) == t.deprel {
                    l += 1;
                }
            }
        }
        heads_ok += h;
        labeled_ok += l;
        per_heads.push(h);
        per_labeled.push(l);
    }
    if total == 0 {
        return Err(Error::invalid("no non-punctuation tokens to score"));
    }
    Ok(ScoreReport {
        uas: 100.0 * heads_ok as f64 / total as f64,
        las: 100.0 * labeled_ok as f64 / total as f64,
        n_scored_tokens: total,
        per_sentence_heads: per_heads,
        per_sentence_labeled: per_labeled,
    })
}

/// Two-sided paired permutation test on per-sentence correct counts.
/// Each round swaps every sentence's pair with probability 1/2.
pub fn paired_permutation_test(a: &[usize], b: &[usize], n_rounds: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    if n_rounds < 1000 {
        return Err(Error::invalid(format!("n_rounds must be at least 1000, got {n_rounds}")));
    }
    let diffs: Vec<i64> = a.iter().zip(b).map(|(&x, &y)| x as i64 - y as i64).collect();
    let observed = diffs.iter().sum::<i64>().abs();
    let mut rng = rng::stream(seed, 0);
    let mut extreme = 0usize;
    for _ in 0..n_rounds {
        let stat: i64 = diffs.iter().map(|&d| if rng.gen::<bool>() { -d } else { d }).sum();
        if stat.abs() >= observed {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (1 + n_rounds) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub train_fraction: f64,
    pub seed: u64,
    /// Control run: labels are permuted before the split.
    pub shuffle_labels: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            epochs: 50,
            batch_size: 32,
            lr: 0.001,
            train_fraction: 0.8,
            seed: 0,
            shuffle_labels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub n_classes: usize,
    /// `confusion[gold][predicted]` on the held-out split.
    pub confusion: Vec<Vec<usize>>,
}

/// Trains a one-hidden-layer classifier on fixed feature vectors and
/// reports held-out accuracy.
pub fn probe_features(features: &[Vec<f64>], labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<ProbeReport> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::invalid("probe needs one label per feature vector"));
    }
    if n_classes < 2 {
        return Err(Error::invalid("probe needs at least two classes"));
    }
    if cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.train_fraction) {
        return Err(Error::invalid("probe batch size must be positive and train fraction in [0, 1)"));
    }
    let dim = features[0].len();
    let mut labels = labels.to_vec();
    if cfg.shuffle_labels {
        labels.shuffle(&mut rng::stream(cfg.seed, 1));
    }
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, 2));
    let n_train = ((features.len() as f64) * cfg.train_fraction).round() as usize;
    let (train, test) = order.split_at(n_train.clamp(1, features.len() - 1));

    let mut store = ParamStore::new();
    let mut init = rng::stream(cfg.seed, 3);
    let g = Group::Discriminator;
    let w1 = store.add_glorot("probe.w1", g, &[dim, cfg.hidden], &mut init)?;
    let b1 = store.add_filled("probe.b1", g, &[cfg.hidden], 0.0)?;
    let w2 = store.add_glorot("probe.w2", g, &[cfg.hidden, n_classes], &mut init)?;
    let b2 = store.add_filled("probe.b2", g, &[n_classes], 0.0)?;
    let ids = vec![w1, b1, w2, b2];
    let mut opt = Adam::new(&store, ids.clone(), cfg.lr);
    let rows = |idx: &[usize]| {
        let data = idx.iter().flat_map(|&i| features[i].iter().copied()).collect();
        Tensor::new(vec![idx.len(), dim], data)
    };
    let mut shuffle_rng = rng::stream(cfg.seed, 4);
    let mut train = train.to_vec();
    for _ in 0..cfg.epochs {
        train.shuffle(&mut shuffle_rng);
        for batch in train.chunks(cfg.batch_size) {
            let x = rows(batch)?;
            let grads = {
                let tape = Tape::new();
                let bind = Binding::new(&store, &tape);
                let out = probe_forward(&bind, &x, [w1, b1, w2, b2])?;
                let gold = batch.iter().enumerate().map(|(r, &i)| r * n_classes + labels[i]).collect();
                let loss = out.log_softmax()?.gather(gold, vec![batch.len()])?.mean()?.neg();
                tape.backward(loss)?;
                bind.gradients()
            };
            store.zero_grads();
            store.accumulate(grads);
            store.ensure_grads(&ids);
            opt.step(&mut store)?;
        }
    }

    let mut confusion = vec![vec![0; n_classes]; n_classes];
    let tape = Tape::new();
    let bind = Binding::with_frozen(&store, &tape, &[g]);
    let out = probe_forward(&bind, &rows(test)?, [w1, b1, w2, b2])?.to_vec();
    for (r, &i) in test.iter().enumerate() {
        let row = &out[r * n_classes..(r + 1) * n_classes];
        let pred = (0..n_classes).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        confusion[labels[i]][pred] += 1;
    }
    let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
    Ok(ProbeReport {
        accuracy: 100.0 * correct as f64 / test.len() as f64,
        n_classes,
        confusion,
    })
}

fn probe_forward<'t>(bind: &Binding<'_, 't>, x: &Tensor, [w1, b1, w2, b2]: [ParamId; 4]) -> Result<Var<'t>> {
    bind.tape()
        .leaf(x)
        .matmul(&bind.var(w1))?
        .add_bias(&bind.var(b1))?
        .relu()
        .matmul(&bind.var(w2))?
        .add_bias(&bind.var(b2))
}

/// Language identification from mean-pooled outputs of the frozen encoder.
/// Corpus `k` in `corpora` is class `k`.
pub fn language_probe(model: &Model, corpora: &[&[EncodedSentence]], cfg: &ProbeConfig) -> Result<ProbeReport> {
    if corpora.len() < 2 {
        return Err(Error::invalid(format!("language probe needs at least 2 corpora, got {}", corpora.len())));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, corpus) in corpora.iter().enumerate() {
        for s in corpus.iter() {
            features.push(model.sentence_repr(s)?);
            labels.push(k);
        }
    }
    probe_features(&features, &labels, corpora.len(), cfg)
}

/// Parses and scores each target with no adaptation.
pub fn evaluate_transfer(model: &Model, targets: &[(&Treebank, &[EncodedSentence])], deprels: &Symbols) -> Result<Vec<ScoreReport>> {
    targets
        .iter()
        .map(|(gold, encoded)| uas_las(gold, &model.parse_all(encoded)?, deprels))
        .collect()
}
