//! Input layer: frozen word vectors concatenated with trainable POS
//! embeddings.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tensor, Var};
use crate::data::{EncodedSentence, Vocabulary, PAD, UNK};
use crate::error::{Error, Result};
use crate::params::{Binding, Group, ParamId, ParamStore};

/// Word vectors read from a whitespace-separated text file.
#[derive(Debug, Clone)]
pub struct LoadedVectors {
    /// `|words| × dim`, row `i` for word id `i`.
    pub table: Tensor,
    pub loaded: usize,
    pub oov: usize,
    pub skipped_lines: usize,
}

/// Parses `word v1 … v_dim` lines (an optional `count dim` header is
/// tolerated). Vocabulary words absent from the file get seeded
/// U(−0.1, 0.1) vectors, the unknown id gets the mean of the loaded
/// vectors, padding stays zero.
pub fn load_word_vectors(text: &str, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<LoadedVectors> {
    let n_words = vocab.words.len();
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut skipped = 0;
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            continue;
        }
        if fields.len() != dim + 1 {
            skipped += 1;
            continue;
        }
        let Ok(values) = fields[1..].iter().map(|f| f.parse::<f64>()).collect::<Result<Vec<f64>, _>>() else {
            skipped += 1;
            continue;
        };
        if let Some(id) = vocab.words.get(fields[0]) {
            if id != PAD && id != UNK {
                found.entry(id).or_insert(values);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::invalid(format!(
            "no usable {dim}-dimensional vectors for the vocabulary ({skipped} malformed lines)"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; n_words * dim];
    let mut mean = vec![0.0; dim];
    for v in found.values() {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x / found.len() as f64);
    }
    let mut oov = 0;
    for id in 2..n_words {
        let row = &mut data[id * dim..(id + 1) * dim];
        match found.get(&id) {
            Some(v) => row.copy_from_slice(v),
            None => {
                oov += 1;
                row.iter_mut().for_each(|x| *x = rng.gen_range(-0.1..0.1));
            }
        }
    }
    if n_words > UNK {
        data[UNK * dim..(UNK + 1) * dim].copy_from_slice(&mean);
    }
    Ok(LoadedVectors {
        table: Tensor::new(vec![n_words, dim], data)?,
        loaded: found.len(),
        oov,
        skipped_lines: skipped,
    })
}

/// Lookup table stored in the parameter store.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub param: ParamId,
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct InputRep {
    pub word: EmbeddingTable,
    pub pos: EmbeddingTable,
}

impl InputRep {
    /// Registers the frozen word table and a fresh POS table (padding row zero).
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        word_vectors: Tensor,
        n_tags: usize,
        pos_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let word_dim = word_vectors.shape()[1];
        let word = store.add("input.word", Group::Encoder, word_vectors)?;
        let pos = store.add_uniform("input.pos", Group::Encoder, &[n_tags, pos_dim], 0.1, rng)?;
        store.get_mut(pos).data_mut()[..pos_dim].fill(0.0);
        Ok(InputRep {
            word: EmbeddingTable {
                dim: word_dim,
                param: word,
                frozen: true,
            },
            pos: EmbeddingTable {
                dim: pos_dim,
                param: pos,
                frozen: false,
            },
        })
    }

    pub fn out_dim(&self) -> usize {
        self.word.dim + self.pos.dim
    }

    /// `n × out_dim`; row `i` is `[word(i) ; pos(i)]`. Word rows enter the
    /// tape as constants.
    pub fn embed<'t>(&self, bind: &Binding<'_, 't>, s: &EncodedSentence) -> Result<Var<'t>> {
        let table = bind.store().get(self.word.param);
        let dim = self.word.dim;
        let mut words = Vec::with_capacity(s.len() * dim);
        for &w in &s.words {
            words.extend_from_slice(&table.data()[w * dim..(w + 1) * dim]);
        }
        let words = bind.tape().constant(vec![s.len(), dim], words)?;
        let tags = bind.var(self.pos.param).rows(&s.tags)?;
        Var::concat(&[words, tags])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::data::parse_conllu;

    fn vocab() -> Vocabulary {
        let text = "1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\tb\t_\tY\t_\t_\t1\tdep\t_\t_\n3\tc\t_\tY\t_\t_\t1\tdep\t_\t_\n";
        Vocabulary::build(&[&parse_conllu(text).unwrap().0], 1)
    }

    #[test]
    fn loads_counts_oov() {
        let v = vocab();
        let lv = load_word_vectors("2 3\na 1 2 3\nb 4 5 6\n", &v, 3, 0).unwrap();
        assert_eq!(lv.loaded, 2);
        assert_eq!(lv.oov, 1);
        let a = v.words.id("a");
        assert_eq!(lv.table.row(a), &[1.0, 2.0, 3.0]);
        assert_eq!(lv.table.row(UNK), &[2.5, 3.5, 4.5]);
        assert_eq!(lv.table.row(PAD), &[0.0; 3]);
        let c = lv.table.row(v.words.id("c"));
        assert!(c.iter().all(|x| x.abs() < 0.1));
    }

    #[test]
    fn malformed_lines_skipped() {
        let v = vocab();
        let lv = load_word_vectors("a 1 2 3\nb 4 5\nc 1 x 2\n", &v, 3, 0).unwrap();
        assert_eq!((lv.loaded, lv.skipped_lines), (1, 2));
        assert!(load_word_vectors("a 1 2\n", &v, 3, 0).is_err());
    }

    #[test]
    fn deterministic_tables() {
        let v = vocab();
        let a = load_word_vectors("a 1 2 3\n", &v, 3, 4).unwrap();
        let b = load_word_vectors("a 1 2 3\n", &v, 3, 4).unwrap();
        assert_eq!(a.table, b.table);
    }

    #[test]
    fn embedding_freezes_words_and_trains_pos() {
        let v = vocab();
        let lv = load_word_vectors("a 1 2 3\nb 4 5 6\nc 0 1 0\n", &v, 3, 0).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = InputRep::new(&mut store, lv.table, v.tags.len(), 4, &mut rng).unwrap();
        assert_eq!(rep.out_dim(), 7);
        let (tb, _) = parse_conllu("1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\ta\t_\tY\t_\t_\t1\tdep\t_\t_\n").unwrap();
        let s = v.encode(&tb.sentences[0]);
        let tape = Tape::new();
        let bind = Binding::new(&store, &tape);
        let x = rep.embed(&bind, &s).unwrap();
        assert_eq!(x.shape(), vec![2, 7]);
        let vals = x.to_vec();
        assert_eq!(vals[..3], vals[7..10]);
        tape.backward(x.mul(&x).unwrap().sum()).unwrap();
        let grads = bind.gradients();
        assert!(grads.iter().all(|(id, _)| *id != rep.word.param));
        let pos_grad = &grads.iter().find(|(id, _)| *id == rep.pos.param).unwrap().1;
        assert!(pos_grad.iter().any(|g| *g != 0.0));
    }
}
