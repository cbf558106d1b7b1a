//! Reading and writing the subset of CoNLL-U the parsers need.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub upos: String,
    /// 1-based head index, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub lang_id: usize,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Treebank {
    pub sentences: Vec<Sentence>,
    pub language_code: String,
}

impl Treebank {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Tags every sentence with `lang_id`.
    pub fn with_language(mut self, code: &str, lang_id: usize) -> Self {
        self.language_code = code.to_string();
        for s in &mut self.sentences {
            s.lang_id = lang_id;
        }
        self
    }

    /// Drops sentences longer than `max_len`.
    pub fn truncate_length(mut self, max_len: usize) -> Self {
        self.sentences.retain(|s| s.len() <= max_len);
        self
    }

    /// Concatenates corpora, keeping each sentence's language id.
    pub fn concat(parts: &[Treebank], code: &str) -> Treebank {
        Treebank {
            sentences: parts.iter().flat_map(|t| t.sentences.iter().cloned()).collect(),
            language_code: code.to_string(),
        }
    }
}

/// A sentence dropped while reading, with the line it started on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

/// Checks that `heads` (1-based, 0 = root) form a tree rooted at 0.
pub fn validate_heads(heads: &[usize]) -> std::result::Result<(), String> {
    let n = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(format!("token {} has head {h} outside 0..={n}", i + 1));
        }
        if h == i + 1 {
            return Err(format!("token {} is its own head", i + 1));
        }
    }
    // 0 = unvisited, 1 = on current path, 2 = reaches root
    let mut state = vec![0u8; n + 1];
    state[0] = 2;
    for start in 1..=n {
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = heads[cur - 1];
        }
        if state[cur] == 1 {
            return Err(format!("cycle through token {cur}"));
        }
        for p in path {
            state[p] = 2;
        }
    }
    Ok(())
}

fn parse_block(lines: &[(usize, &str)]) -> std::result::Result<Option<Sentence>, Rejection> {
    let mut tokens = Vec::new();
    for &(lineno, line) in lines {
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Rejection {
                line: lineno,
                reason: format!("expected 10 columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        if id.parse::<usize>().ok() != Some(tokens.len() + 1) {
            return Err(Rejection {
                line: lineno,
                reason: format!("unexpected token id `{id}`"),
            });
        }
        let head = cols[6].parse::<usize>().map_err(|_| Rejection {
            line: lineno,
            reason: format!("non-integer HEAD `{}`", cols[6]),
        })?;
        tokens.push(Token {
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
            deprel: cols[7].to_string(),
        });
    }
    if tokens.is_empty() {
        return Ok(None);
    }
    let heads: Vec<usize> = tokens.iter().map(|t| t.head).collect();
    validate_heads(&heads).map_err(|reason| Rejection {
        line: lines[0].0,
        reason,
    })?;
    Ok(Some(Sentence { tokens, lang_id: 0 }))
}

/// Parses CoNLL-U text. Malformed sentences are skipped and reported;
/// a file without any valid sentence is an error.
pub fn parse_conllu(text: &str) -> Result<(Treebank, Vec<Rejection>)> {
    let mut sentences = Vec::new();
    let mut rejected = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    let mut flush = |block: &mut Vec<(usize, &str)>| {
        if !block.is_empty() {
            match parse_block(block) {
                Ok(Some(s)) => sentences.push(s),
                Ok(None) => {}
                Err(r) => rejected.push(r),
            }
            block.clear();
        }
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut block);
        } else {
            block.push((i + 1, line));
        }
    }
    flush(&mut block);
    if sentences.is_empty() {
        let detail = rejected
            .first()
            .map(|r| format!(" (first rejection at line {}: {})", r.line, r.reason))
            .unwrap_or_default();
        return Err(Error::Parse {
            line: rejected.first().map_or(0, |r| r.line),
            msg: format!("no valid sentences{detail}"),
        });
    }
    Ok((
        Treebank {
            sentences,
            language_code: String::new(),
        },
        rejected,
    ))
}

pub fn read_conllu(path: &std::path::Path) -> Result<(Treebank, Vec<Rejection>)> {
    let text = std::fs::read_to_string(path)?;
    parse_conllu(&text)
}

/// Minimal 10-column serialization; unused columns are `_`.
pub fn to_conllu(tb: &Treebank) -> String {
    let mut out = String::new();
    for s in &tb.sentences {
        for (i, t) in s.tokens.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                t.form,
                t.upos,
                t.head,
                t.deprel
            );
        }
        out.push('\n');
    }
    out
}
