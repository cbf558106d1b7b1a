//! The train, eval, probe and synth commands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::checkpoint::{self, build_model};
use crate::config::RunConfig;
use crate::data::{read_conllu, synth_treebank, synth_word_vectors, to_conllu, SynthSpec, Treebank, VectorSpec, Vocabulary, PAD};
use crate::decoder::ParseTree;
use crate::error::{Error, Result};
use crate::eval::{language_probe, uas_las, ProbeConfig, ProbeReport};
use crate::repr::load_word_vectors;
use crate::rng;
use crate::train::{metrics_jsonl, train_with, DevSet, TrainData};

pub const METRICS: &str = "metrics.jsonl";

fn read_treebank(path: &Path, lang_id: usize) -> Result<Treebank> {
    let (tb, rejected) = read_conllu(path)?;
    for r in &rejected {
        eprintln!("warning: {}:{}: skipped sentence: {}", path.display(), r.line, r.reason);
    }
    let code = path.file_stem().map_or_else(|| "unknown".into(), |s| s.to_string_lossy().into_owned());
    Ok(tb.with_language(&code, lang_id))
}

/// First token of each non-header line of a word vector file.
fn embedding_words(text: &str) -> impl Iterator<Item = &str> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let mut fields = line.split_whitespace();
        let word = fields.next()?;
        let header = i == 0 && line.split_whitespace().count() == 2 && line.split_whitespace().all(|f| f.parse::<usize>().is_ok());
        (!header).then_some(word)
    })
}

fn random_vectors(n_words: usize, dim: usize, seed: u64) -> Result<Tensor> {
    let mut r = rng::stream(seed, 21);
    let data = (0..n_words * dim)
        .map(|i| if i / dim == PAD { 0.0 } else { r.gen_range(-0.1..0.1) })
        .collect();
    Tensor::new(vec![n_words, dim], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub iterations: usize,
    pub best_iter: Option<usize>,
    pub best_dev_uas: Option<f64>,
    pub best_dev_las: Option<f64>,
    pub warnings: Vec<String>,
}

/// Trains and writes `config.toml`, `metrics.jsonl`, `last/`, `best/` (when
/// a dev set is given) and numbered checkpoints under `output.dir`. Nothing
/// is written if the configuration or data are rejected.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let mut warnings = cfg.validate()?;
    let keep = |tb: Treebank| if cfg.data.max_len > 0 { tb.truncate_length(cfg.data.max_len) } else { tb };
    let source = keep(read_treebank(&cfg.data.source, 0)?);
    let aux_parts = cfg
        .data
        .aux
        .iter()
        .enumerate()
        .map(|(i, p)| read_treebank(p, i + 1).map(keep))
        .collect::<Result<Vec<_>>>()?;
    let aux = Treebank::concat(&aux_parts, "aux");
    let dev = cfg.data.dev.as_ref().map(|p| read_treebank(p, 0)).transpose()?;
    if source.is_empty() {
        return Err(Error::config("data.source", "no sentences left after length filtering"));
    }

    let mut vocab = Vocabulary::build(&[&source, &aux], cfg.data.min_count);
    let vectors = match &cfg.data.embeddings {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            vocab.extend_words(embedding_words(&text));
            let loaded = load_word_vectors(&text, &vocab, cfg.data.embedding_dim, cfg.train.seed)?;
            if loaded.skipped_lines > 0 {
                warnings.push(format!("{} malformed embedding lines skipped", loaded.skipped_lines));
            }
            loaded.table
        }
        None => random_vectors(vocab.words.len(), cfg.data.embedding_dim, cfg.train.seed)?,
    };
    let mut model = build_model(cfg, &vocab, Some(vectors))?;
    let enc_source = vocab.encode_all(&source);
    let enc_aux = vocab.encode_all(&aux);
    let enc_dev = dev.as_ref().map(|d| vocab.encode_all(d));
    let data = TrainData {
        source: &enc_source,
        aux: if cfg.train.mode == crate::train::Mode::Baseline { &[] } else { &enc_aux },
        dev: dev.as_ref().zip(enc_dev.as_deref()).map(|(gold, encoded)| DevSet {
            gold,
            encoded,
            deprels: &vocab.deprels,
        }),
    };

    let out = &cfg.output.dir;
    let every = cfg.output.checkpoint_every;
    let outcome = train_with(&mut model, &data, cfg.train.clone(), cfg.adversary.clone(), |iter, m| {
        if every > 0 && iter % every == 0 {
            checkpoint::save(&out.join(format!("iter{iter:06}")), m, cfg, &vocab)?;
        }
        Ok(())
    })?;

    fs::create_dir_all(out)?;
    fs::write(out.join(checkpoint::CONFIG), cfg.to_toml())?;
    fs::write(out.join(METRICS), metrics_jsonl(&outcome.log))?;
    checkpoint::save(&out.join("last"), &model, cfg, &vocab)?;
    if let Some(best) = &outcome.best {
        model.store = best.store.clone();
        checkpoint::save(&out.join("best"), &model, cfg, &vocab)?;
    }
    Ok(TrainSummary {
        out_dir: out.clone(),
        iterations: cfg.train.num_iter,
        best_iter: outcome.best.as_ref().map(|b| b.iter),
        best_dev_uas: outcome.best.as_ref().map(|b| b.dev_uas),
        best_dev_las: outcome.best.as_ref().map(|b| b.dev_las),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: String,
    pub uas: f64,
    pub las: f64,
    pub n_scored_tokens: usize,
    pub n_sentences: usize,
}

fn with_predictions(gold: &Treebank, pred: &[ParseTree], vocab: &Vocabulary) -> Treebank {
    let mut out = gold.clone();
    for (s, t) in out.sentences.iter_mut().zip(pred) {
        for (i, tok) in s.tokens.iter_mut().enumerate() {
            tok.head = t.heads[i];
            tok.deprel = vocab.deprels.name(t.labels[i]).to_string();
        }
    }
    out
}

/// Parses and scores each target with a saved model. With `predict_dir`,
/// also writes `<target stem>.pred.conllu` files there.
pub fn cmd_eval(checkpoint_dir: &Path, targets: &[PathBuf], predict_dir: Option<&Path>) -> Result<Vec<TargetReport>> {
    let loaded = checkpoint::load(checkpoint_dir)?;
    let mut reports = Vec::with_capacity(targets.len());
    for path in targets {
        let gold = read_treebank(path, 0)?;
        let pred = loaded.model.parse_all(&loaded.vocab.encode_all(&gold))?;
        let score = uas_las(&gold, &pred, &loaded.vocab.deprels)?;
        if let Some(dir) = predict_dir {
            fs::create_dir_all(dir)?;
            let name = format!("{}.pred.conllu", gold.language_code);
            fs::write(dir.join(name), to_conllu(&with_predictions(&gold, &pred, &loaded.vocab)))?;
        }
        reports.push(TargetReport {
            target: path.display().to_string(),
            uas: score.uas,
            las: score.las,
            n_scored_tokens: score.n_scored_tokens,
            n_sentences: gold.len(),
        });
    }
    Ok(reports)
}

pub fn reports_jsonl<T: Serialize>(reports: &[T]) -> String {
    reports
        .iter()
        .map(|r| serde_json::to_string(r).expect("reports serialize") + "\n")
        .collect()
}

pub fn reports_table(reports: &[TargetReport]) -> String {
    let mut out = format!("{:<40} {:>8} {:>8} {:>8}\n", "target", "UAS", "LAS", "tokens");
    for r in reports {
        out.push_str(&format!("{:<40} {:>8.2} {:>8.2} {:>8}\n", r.target, r.uas, r.las, r.n_scored_tokens));
    }
    out
}

/// Language identification on the frozen encoder; corpus `k` is class `k`.
pub fn cmd_probe(checkpoint_dir: &Path, corpora: &[PathBuf], probe: &ProbeConfig) -> Result<ProbeReport> {
    if corpora.len() < 2 {
        return Err(Error::config("corpora", format!("the probe needs at least 2 corpora, got {}", corpora.len())));
    }
    let loaded = checkpoint::load(checkpoint_dir)?;
    let encoded = corpora
        .iter()
        .enumerate()
        .map(|(k, p)| Ok(loaded.vocab.encode_all(&read_treebank(p, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&[_]> = encoded.iter().map(Vec::as_slice).collect();
    language_probe(&loaded.model, &views, probe)
}

/// Writes a synthetic treebank, and optionally its aligned word vectors.
pub fn cmd_synth(spec: &SynthSpec, out: &Path, vectors: Option<(&VectorSpec, &Path)>) -> Result<()> {
    let tb = synth_treebank(spec)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out, to_conllu(&tb))?;
    if let Some((vspec, path)) = vectors {
        if vspec.dim == 0 {
            return Err(Error::config("dim", "vector dimension must be positive"));
        }
        fs::write(path, synth_word_vectors(vspec))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_word_list_skips_header() {
        let words: Vec<&str> = embedding_words("3 2\na 0.1 0.2\nb 0.3 0.4\n\nc 1 2\n").collect();
        assert_eq!(words, ["a", "b", "c"]);
        let words: Vec<&str> = embedding_words("a 0.1\n").collect();
        assert_eq!(words, ["a"]);
    }

    #[test]
    fn random_vectors_keep_padding_zero() {
        let t = random_vectors(4, 3, 1).unwrap();
        assert!(t.data()[..3].iter().all(|&x| x == 0.0));
        assert!(t.data()[3..].iter().all(|&x| x != 0.0 && x.abs() < 0.1));
        assert_eq!(t.data(), random_vectors(4, 3, 1).unwrap().data());
    }

    #[test]
    fn probe_rejects_a_single_corpus() {
        let err = cmd_probe(Path::new("/nonexistent"), &[PathBuf::from("a.conllu")], &ProbeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
