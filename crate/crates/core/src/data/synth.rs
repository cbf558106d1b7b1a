//! Synthetic treebanks with controllable word order, and aligned word
//! vectors for their lexicons.
//!
//! A sentence is grown top-down: a head receives a random number of
//! dependent subtrees, each placed to the left of the head with probability
//! `head_direction_p` and to the right otherwise. Dependents on either side
//! are laid out inside-out (the first one generated sits next to the head),
//! so flipping every direction mirrors the sentence exactly. All random
//! draws are independent of `head_direction_p`.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Sentence, Token, Treebank};
use crate::error::{Error, Result};
use crate::rng;

pub const TAGS: [&str; 8] = ["VERB", "NOUN", "PRON", "ADJ", "ADV", "ADP", "DET", "PUNCT"];

const VERB: usize = 0;
const NOUN: usize = 1;
const PRON: usize = 2;
const ADJ: usize = 3;
const ADV: usize = 4;
const ADP: usize = 5;
const DET: usize = 6;
const PUNCT: usize = 7;

/// Dependent tag distribution per head tag.
fn child_tags(head: usize) -> &'static [(usize, f64)] {
    match head {
        VERB => &[(NOUN, 0.3), (PRON, 0.2), (ADV, 0.15), (PUNCT, 0.15), (VERB, 0.1), (ADJ, 0.1)],
        NOUN => &[(DET, 0.35), (ADJ, 0.3), (NOUN, 0.2), (ADP, 0.15)],
        ADJ => &[(ADV, 0.7), (NOUN, 0.3)],
        _ => &[],
    }
}

fn can_head(tag: usize) -> bool {
    matches!(tag, VERB | NOUN | ADJ)
}

fn deprel(head: usize, dep: usize, first_nominal: bool) -> &'static str {
    match (head, dep) {
        (VERB, NOUN | PRON) if first_nominal => "nsubj",
        (VERB, NOUN | PRON) => "obj",
        (VERB, VERB) => "ccomp",
        (VERB, ADJ) => "xcomp",
        (_, ADV) => "advmod",
        (_, PUNCT) => "punct",
        (NOUN, DET) => "det",
        (NOUN, ADJ) => "amod",
        (NOUN, NOUN) => "nmod",
        (NOUN, ADP) => "case",
        (ADJ, NOUN) => "obl",
        _ => "dep",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Probability that a dependent precedes its head.
    pub head_direction_p: f64,
    pub lang_id: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "empty length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.min_len < 2 || self.max_len > 30 {
            return Err(Error::invalid("length range must lie within [2, 30]"));
        }
        if !(0.0..=1.0).contains(&self.head_direction_p) {
            return Err(Error::invalid(format!(
                "head_direction_p {} outside [0, 1]",
                self.head_direction_p
            )));
        }
        if self.vocab_size < TAGS.len() {
            return Err(Error::invalid(format!(
                "vocab_size must be at least {}",
                TAGS.len()
            )));
        }
        Ok(())
    }
}

/// Lexicon band of a tag: word ids `[tag·band, (tag+1)·band)`.
fn band(vocab_size: usize) -> usize {
    vocab_size / TAGS.len()
}

pub fn word_form(lang_id: usize, k: usize) -> String {
    format!("w{lang_id}_{k}")
}

struct Node {
    tag: usize,
    word: usize,
    deprel: &'static str,
    /// (child, attaches to the left)
    children: Vec<(usize, bool)>,
}

struct Grower<'a> {
    rng: &'a mut ChaCha8Rng,
    p: f64,
    band: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn pick_tag(&mut self, head: usize, must_head: bool) -> usize {
        let options: Vec<(usize, f64)> = child_tags(head)
            .iter()
            .copied()
            .filter(|&(t, _)| !must_head || can_head(t))
            .collect();
        let total: f64 = options.iter().map(|o| o.1).sum();
        let mut u = self.rng.gen::<f64>() * total;
        for &(t, w) in &options {
            if u < w {
                return t;
            }
            u -= w;
        }
        options.last().map(|o| o.0).expect("every heading tag has a heading child tag")
    }

    fn grow(&mut self, size: usize, tag: usize, rel: &'static str) -> usize {
        let word = tag * self.band + self.rng.gen_range(0..self.band);
        let id = self.nodes.len();
        self.nodes.push(Node {
            tag,
            word,
            deprel: rel,
            children: Vec::new(),
        });
        let mut remaining = size - 1;
        let mut seen_nominal = false;
        while remaining > 0 {
            let u: f64 = self.rng.gen();
            let child_size = (1 + (u * u * remaining as f64) as usize).min(remaining);
            let child_tag = self.pick_tag(tag, child_size > 1);
            let left = self.rng.gen::<f64>() < self.p;
            let nominal = matches!(child_tag, NOUN | PRON);
            let child_rel = deprel(tag, child_tag, nominal && !seen_nominal);
            seen_nominal |= nominal;
            let child = self.grow(child_size, child_tag, child_rel);
            self.nodes[id].children.push((child, left));
            remaining -= child_size;
        }
        id
    }

    fn linearize(&self, node: usize, out: &mut Vec<usize>) {
        let children = &self.nodes[node].children;
        for &(c, _) in children.iter().filter(|c| c.1).rev() {
            self.linearize(c, out);
        }
        out.push(node);
        for &(c, _) in children.iter().filter(|c| !c.1) {
            self.linearize(c, out);
        }
    }

    fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &(c, _) in &n.children {
                parent[c] = Some(i);
            }
        }
        parent
    }
}

fn sentence(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Sentence {
    let n = rng.gen_range(spec.min_len..=spec.max_len);
    let mut g = Grower {
        rng,
        p: spec.head_direction_p,
        band: band(spec.vocab_size),
        nodes: Vec::new(),
    };
    let root = g.grow(n, VERB, "root");
    let mut order = Vec::with_capacity(n);
    g.linearize(root, &mut order);
    let mut position = vec![0; n];
    for (pos, &node) in order.iter().enumerate() {
        position[node] = pos + 1;
    }
    let parent = g.parents();
    let tokens = order
        .iter()
        .map(|&node| {
            let nd = &g.nodes[node];
            Token {
                form: word_form(spec.lang_id, nd.word),
                upos: TAGS[nd.tag].to_string(),
                head: parent[node].map_or(0, |p| position[p]),
                deprel: nd.deprel.to_string(),
            }
        })
        .collect();
    Sentence {
        tokens,
        lang_id: spec.lang_id,
    }
}

pub fn synth_treebank(spec: &SynthSpec) -> Result<Treebank> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, spec.lang_id as u64);
    Ok(Treebank {
        sentences: (0..spec.n_sentences).map(|_| sentence(&mut rng, spec)).collect(),
        language_code: format!("synth{}", spec.lang_id),
    })
}

/// Parameters of a synthetic "aligned" embedding space.
///
/// Word `k` of every language shares a base vector (its tag centroid plus a
/// word-specific part). Each language adds its family's offset and a small
/// per-word perturbation, so lexicons are aligned but not identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorSpec {
    pub dim: usize,
    pub vocab_size: usize,
    pub lang_id: usize,
    pub family: u64,
    pub seed: u64,
    pub offset_scale: f64,
    pub noise_scale: f64,
}

// Draws the same stream for any scale, including zero.
fn uniform_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

pub fn synth_word_vectors(spec: &VectorSpec) -> String {
    let band = band(spec.vocab_size).max(1);
    let mut tag_rng = rng::stream(spec.seed, 1000);
    let centroids: Vec<Vec<f64>> = (0..TAGS.len()).map(|_| uniform_vec(&mut tag_rng, spec.dim, 1.0)).collect();
    let mut word_rng = rng::stream(spec.seed, 2000);
    let base: Vec<Vec<f64>> = (0..spec.vocab_size)
        .map(|k| {
            let c = &centroids[(k / band).min(TAGS.len() - 1)];
            uniform_vec(&mut word_rng, spec.dim, 0.5)
                .iter()
                .zip(c)
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect();
    let offset = uniform_vec(&mut rng::stream(spec.seed, 3000 + spec.family), spec.dim, spec.offset_scale);
    let mut noise_rng = rng::stream(spec.seed, 4000 + spec.lang_id as u64);

    let mut out = String::new();
    for (k, b) in base.iter().enumerate() {
        let noise = uniform_vec(&mut noise_rng, spec.dim, spec.noise_scale);
        let _ = write!(out, "{}", word_form(spec.lang_id, k));
        for d in 0..spec.dim {
            let _ = write!(out, " {:.6}", b[d] + offset[d] + noise[d]);
        }
        out.push('\n');
    }
    out
}
