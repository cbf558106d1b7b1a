//! Run configuration: a TOML file with one section per module, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AdvConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{Mode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled source-language treebank.
    pub source: PathBuf,
    /// Unlabeled auxiliary treebanks; file `i` is language `i + 1`.
    pub aux: Vec<PathBuf>,
    /// Source-language dev set for model selection.
    pub dev: Option<PathBuf>,
    /// Word vector text file; without one, words get seeded random vectors.
    pub embeddings: Option<PathBuf>,
    pub embedding_dim: usize,
    /// Words seen fewer times are mapped to the unknown id.
    pub min_count: usize,
    /// Sentences longer than this are dropped from training data (0 keeps all).
    pub max_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: PathBuf::new(),
            aux: Vec::new(),
            dev: None,
            embeddings: None,
            embedding_dim: 32,
            min_count: 1,
            max_len: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Extra numbered checkpoints every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("run"),
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub adversary: AdvConfig,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let field = e.path().to_string();
            let msg = e.into_inner().message().to_string();
            Error::config(field, msg)
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    /// Number of languages the discriminator distinguishes.
    pub fn n_langs(&self) -> usize {
        1 + self.data.aux.len().max(1)
    }

    /// Field-level checks that need no data loading. Returns warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let exists = |field: &str, p: &Path| {
            if p.as_os_str().is_empty() {
                Err(Error::config(field, "no path given"))
            } else if !p.is_file() {
                Err(Error::config(field, format!("{} does not exist", p.display())))
            } else {
                Ok(())
            }
        };
        exists("data.source", &self.data.source)?;
        for p in &self.data.aux {
            exists("data.aux", p)?;
        }
        if let Some(p) = &self.data.dev {
            exists("data.dev", p)?;
        }
        if let Some(p) = &self.data.embeddings {
            exists("data.embeddings", p)?;
        }
        if self.data.embedding_dim == 0 {
            return Err(Error::config("data.embedding_dim", "must be positive"));
        }
        if self.train.mode != Mode::Baseline && self.data.aux.is_empty() {
            return Err(Error::config(
                "data.aux",
                format!("{:?} mode needs at least one auxiliary treebank", self.train.mode),
            ));
        }
        let mut warnings = Vec::new();
        if !self.model.is_standard_pairing() {
            warnings.push(format!(
                "nonstandard encoder/decoder pairing {:?}-{:?}",
                self.model.encoder, self.model.decoder
            ));
        }
        Ok(warnings)
    }
}

/// Applies `a.b.c=value`. Values parse as TOML; anything that does not is
/// taken as a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "override must look like section.key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    let mut node = table;
    for seg in &path[..path.len() - 1] {
        let entry = node
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{seg}` is not a section")))?;
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::Objective;
    use crate::model::EncoderKind;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn sections_and_overrides() {
        let text = r#"
[data]
source = "src.conllu"
aux = ["a.conllu", "b.conllu"]

[model]
encoder = "rnn"
decoder = "stack"

[model.rnn]
hidden = 8

[adversary]
objective = "gr"
lambda = 0.1

[train]
mode = "adversarial"
seed = 4
"#;
        let overrides = ["train.seed=9".to_string(), "adversary.lambda = 0.5".into(), "output.dir=runs/x".into(), "train.alpha2=1e-4".into()];
        let cfg = RunConfig::from_toml(text, &overrides).unwrap();
        assert_eq!(cfg.model.encoder, EncoderKind::Rnn);
        assert_eq!(cfg.model.rnn.hidden, 8);
        assert_eq!(cfg.model.rnn.n_layers, 2);
        assert_eq!(cfg.adversary.objective, Objective::Gr);
        assert_eq!(cfg.adversary.lambda, 0.5);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.alpha2, Some(1e-4));
        assert_eq!(cfg.output.dir, PathBuf::from("runs/x"));
        assert_eq!(cfg.n_langs(), 3);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn bad_fields_are_named() {
        let field = |r: Result<RunConfig>| match r {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(RunConfig::from_toml("[train]\nbatchsize = 3\n", &[])), "train.batchsize");
        assert_eq!(field(RunConfig::from_toml("", &["train.mode=sideways".into()])), "train.mode");
        assert_eq!(field(RunConfig::from_toml("[model.selfatt]\nn_heads = -1\n", &[])), "model.selfatt.n_heads");
        assert_eq!(field(RunConfig::from_toml("", &["train".into()])), "train");
        assert_eq!(field(RunConfig::from_toml("", &["train.seed.x=1".into()])), "train.seed");
    }

    #[test]
    fn validation_checks_paths_and_mode() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.conllu");
        std::fs::write(&src, "").unwrap();
        let mut cfg = RunConfig::default();
        let field = |c: &RunConfig| match c.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(&cfg), "data.source");
        cfg.data.source = src.clone();
        assert!(cfg.validate().unwrap().is_empty());
        cfg.train.mode = Mode::Adversarial;
        assert_eq!(field(&cfg), "data.aux");
        cfg.data.aux = vec![dir.path().join("missing.conllu")];
        assert_eq!(field(&cfg), "data.aux");
        cfg.data.aux = vec![src];
        cfg.model.encoder = EncoderKind::Rnn;
        assert_eq!(cfg.validate().unwrap().len(), 1);
    }
}
