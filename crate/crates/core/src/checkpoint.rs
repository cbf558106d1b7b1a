//! Parameter checkpoints: a text manifest of `name group shape offset`
//! lines and one little-endian f64 payload.
//!
//! A checkpoint directory also carries the run config and vocabulary, so a
//! model can be rebuilt from it alone.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{DiscSpec, Model};
use crate::params::{Group, ParamStore};

pub const MANIFEST: &str = "params.manifest";
pub const PAYLOAD: &str = "params.bin";
pub const CONFIG: &str = "config.toml";
pub const VOCAB: &str = "vocab.json";

fn group_name(g: Group) -> &'static str {
    match g {
        Group::Encoder => "encoder",
        Group::Decoder => "decoder",
        Group::Discriminator => "discriminator",
    }
}

/// Serializes every parameter, in store order.
pub fn encode_params(store: &ParamStore) -> (String, Vec<u8>) {
    let mut manifest = String::new();
    let mut payload = Vec::new();
    for id in store.ids() {
        let t = store.get(id);
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            store.name(id),
            group_name(store.group(id)),
            shape.join("x"),
            payload.len() / 8
        ));
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    (manifest, payload)
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn parse_manifest(text: &str) -> Result<Vec<Entry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::Checkpoint(format!("manifest line {}: {what}", i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 tab-separated fields"));
            }
            let shape = fields[2]
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("malformed shape"))?;
            let offset = fields[3].parse().map_err(|_| bad("malformed offset"))?;
            Ok(Entry {
                name: fields[0].to_string(),
                shape,
                offset,
            })
        })
        .collect()
}

/// Overwrites the values of `store` from a serialized checkpoint. Every
/// parameter must be present with the same shape, and nothing else.
pub fn decode_params(store: &mut ParamStore, manifest: &str, payload: &[u8]) -> Result<()> {
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!("payload length {} is not a multiple of 8", payload.len())));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunks")))
        .collect();
    let entries = parse_manifest(manifest)?;
    if entries.len() != store.len() {
        let missing = store.ids().map(|id| store.name(id)).find(|n| !entries.iter().any(|e| e.name == *n));
        let extra = entries.iter().find(|e| store.id(&e.name).is_none()).map(|e| e.name.as_str());
        return Err(Error::Checkpoint(match (missing, extra) {
            (Some(n), _) => format!("tensor `{n}` missing from checkpoint"),
            (None, Some(n)) => format!("checkpoint has unexpected tensor `{n}`"),
            (None, None) => format!("checkpoint has {} tensors, model has {}", entries.len(), store.len()),
        }));
    }
    let mut updates = Vec::with_capacity(entries.len());
    for e in &entries {
        let id = store
            .id(&e.name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has unexpected tensor `{}`", e.name)))?;
        let expected = store.get(id).shape().to_vec();
        if expected != e.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}`: checkpoint shape {:?}, model expects {:?}",
                e.name, e.shape, expected
            )));
        }
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the end of the payload", e.name)))?;
        updates.push((id, Tensor::new(e.shape.clone(), data.to_vec())?));
    }
    for (id, t) in updates {
        *store.get_mut(id) = t;
    }
    Ok(())
}

pub fn save(dir: &Path, model: &Model, cfg: &RunConfig, vocab: &Vocabulary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (manifest, payload) = encode_params(&model.store);
    fs::write(dir.join(MANIFEST), manifest)?;
    fs::write(dir.join(PAYLOAD), payload)?;
    fs::write(dir.join(CONFIG), cfg.to_toml())?;
    fs::write(dir.join(VOCAB), vocab.to_json())?;
    Ok(())
}

/// Model skeleton for a config and vocabulary; the word table is zero
/// until parameters are loaded.
pub fn build_model(cfg: &RunConfig, vocab: &Vocabulary, word_vectors: Option<Tensor>) -> Result<Model> {
    let vectors = match word_vectors {
        Some(t) => t,
        None => Tensor::zeros(&[vocab.words.len(), cfg.data.embedding_dim]),
    };
    let disc = DiscSpec {
        kind: cfg.adversary.disc_kind,
        out_dim: cfg.adversary.objective.arity(cfg.n_langs()),
        hidden: cfg.adversary.disc_hidden,
    };
    Model::new(
        cfg.model.clone(),
        vectors,
        vocab.tags.len(),
        vocab.deprels.len(),
        disc,
        cfg.train.seed,
    )
}

pub struct Loaded {
    pub model: Model,
    pub cfg: RunConfig,
    pub vocab: Vocabulary,
}

pub fn load(dir: &Path) -> Result<Loaded> {
    let read = |name: &str| {
        fs::read(dir.join(name)).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", dir.join(name).display())))
    };
    let text = |name: &str| {
        String::from_utf8(read(name)?).map_err(|_| Error::Checkpoint(format!("{name} is not valid UTF-8")))
    };
    let cfg = RunConfig::from_toml(&text(CONFIG)?, &[]).map_err(|e| Error::Checkpoint(format!("{CONFIG}: {e}")))?;
    let vocab = Vocabulary::from_json(&text(VOCAB)?).map_err(|e| Error::Checkpoint(format!("{VOCAB}: {e}")))?;
    let mut model = build_model(&cfg, &vocab, None).map_err(|e| Error::Checkpoint(format!("cannot rebuild model: {e}")))?;
    decode_params(&mut model.store, &text(MANIFEST)?, &read(PAYLOAD)?)?;
    Ok(Loaded { model, cfg, vocab })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_treebank, SynthSpec};

    fn setup() -> (RunConfig, Vocabulary) {
        let tb = synth_treebank(&SynthSpec {
            n_sentences: 5,
            min_len: 2,
            max_len: 5,
            vocab_size: 16,
            head_direction_p: 0.5,
            lang_id: 0,
            seed: 1,
        })
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.data.embedding_dim = 4;
        cfg.model.pos_dim = 3;
        cfg.model.selfatt.model_dim = 4;
        cfg.model.selfatt.n_heads = 2;
        cfg.model.selfatt.ff_dim = 4;
        cfg.model.biaffine.arc_dim = 3;
        cfg.model.biaffine.label_dim = 2;
        cfg.adversary.disc_hidden = 3;
        (cfg, Vocabulary::build(&[&tb], 1))
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, vocab) = setup();
        let words = Tensor::new(vec![vocab.words.len(), 4], (0..vocab.words.len() * 4).map(|i| (i as f64).sin()).collect()).unwrap();
        let model = build_model(&cfg, &vocab, Some(words)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &model, &cfg, &vocab).unwrap();
        let loaded = load(dir.path()).unwrap();
        let all = [Group::Encoder, Group::Decoder, Group::Discriminator];
        assert_eq!(loaded.model.store.checksum(&all), model.store.checksum(&all));
        assert_eq!(loaded.cfg, cfg);
        assert_eq!(loaded.vocab, vocab);
    }

    #[test]
    fn shape_mismatch_names_the_tensor() {
        let (cfg, vocab) = setup();
        let model = build_model(&cfg, &vocab, None).unwrap();
        let (manifest, payload) = encode_params(&model.store);
        let mut other_cfg = cfg.clone();
        other_cfg.model.biaffine.arc_dim = 5;
        let mut other = build_model(&other_cfg, &vocab, None).unwrap();
        let err = decode_params(&mut other.store, &manifest, &payload).unwrap_err().to_string();
        assert!(err.contains("dec.arc.dep.w"), "{err}");
    }

    #[test]
    fn corrupt_inputs_fail_cleanly() {
        let (cfg, vocab) = setup();
        let mut model = build_model(&cfg, &vocab, None).unwrap();
        let (manifest, payload) = encode_params(&model.store);
        let before = model.store.checksum(&[Group::Encoder]);
        for (m, p) in [
            (manifest.clone(), payload[..payload.len() - 8].to_vec()),
            (manifest.clone(), payload[..payload.len() - 3].to_vec()),
            (manifest.replace('\t', " "), payload.clone()),
            (manifest.lines().skip(1).collect::<Vec<_>>().join("\n"), payload.clone()),
            (format!("{manifest}ghost\tencoder\t1\t0\n"), payload.clone()),
        ] {
            assert!(matches!(decode_params(&mut model.store, &m, &p), Err(Error::Checkpoint(_))));
        }
        assert_eq!(model.store.checksum(&[Group::Encoder]), before);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint(_))));
        save(dir.path(), &model, &cfg, &vocab).unwrap();
        fs::write(dir.path().join(VOCAB), "{not json").unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Checkpoint(_))));
    }
}
