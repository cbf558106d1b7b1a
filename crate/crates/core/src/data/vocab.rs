use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Sentence, Treebank};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// String ↔ id map. Ids 0 and 1 are reserved for padding and unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbols {
    names: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

impl Default for Symbols {
    fn default() -> Self {
        Symbols::from_names(vec!["<pad>".into(), "<unk>".into()])
    }
}

impl Symbols {
    fn from_names(names: Vec<String>) -> Self {
        let ids = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Symbols { names, ids }
    }

    /// Ids for symbols with count ≥ `min_count`, most frequent first,
    /// ties broken lexicographically.
    fn from_counts(counts: HashMap<&str, usize>, min_count: usize) -> Self {
        let mut items: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut s = Symbols::default();
        for (name, _) in items {
            s.insert(name);
        }
        s
    }

    pub fn insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    /// Id of `name`, or [`UNK`].
    pub fn id(&self, name: &str) -> usize {
        self.get(name).unwrap_or(UNK)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn rebuild_index(&mut self) {
        self.ids = self.names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub words: Symbols,
    pub tags: Symbols,
    pub deprels: Symbols,
}

/// Ids for one sentence, ready for the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub tags: Vec<usize>,
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
    pub lang_id: usize,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Vocabulary {
    pub fn build(treebanks: &[&Treebank], min_count: usize) -> Self {
        let mut words = HashMap::new();
        let mut tags = HashMap::new();
        let mut deprels = HashMap::new();
        for tb in treebanks {
            for t in tb.sentences.iter().flat_map(|s| &s.tokens) {
                *words.entry(t.form.as_str()).or_insert(0) += 1;
                *tags.entry(t.upos.as_str()).or_insert(0) += 1;
                *deprels.entry(t.deprel.as_str()).or_insert(0) += 1;
            }
        }
        Vocabulary {
            words: Symbols::from_counts(words, min_count),
            tags: Symbols::from_counts(tags, 1),
            deprels: Symbols::from_counts(deprels, 1),
        }
    }

    /// Adds word types (e.g. everything a frozen embedding file covers).
    pub fn extend_words<'a>(&mut self, words: impl IntoIterator<Item = &'a str>) {
        for w in words {
            self.words.insert(w);
        }
    }

    pub fn encode(&self, s: &Sentence) -> EncodedSentence {
        EncodedSentence {
            words: s.tokens.iter().map(|t| self.words.id(&t.form)).collect(),
            tags: s.tokens.iter().map(|t| self.tags.id(&t.upos)).collect(),
            heads: s.heads(),
            labels: s.tokens.iter().map(|t| self.deprels.id(&t.deprel)).collect(),
            lang_id: s.lang_id,
        }
    }

    pub fn encode_all(&self, tb: &Treebank) -> Vec<EncodedSentence> {
        tb.sentences.iter().map(|s| self.encode(s)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        let mut v: Vocabulary = serde_json::from_str(text)
            .map_err(|e| crate::Error::Checkpoint(format!("vocabulary: {e}")))?;
        v.words.rebuild_index();
        v.tags.rebuild_index();
        v.deprels.rebuild_index();
        Ok(v)
    }
}
