//! Treebank input: CoNLL-U, vocabularies, batching and synthetic corpora.

pub mod batch;
mod conllu;
pub mod synth;
mod vocab;

pub use batch::{make_batches, source_cycler, Batch, BatchStream, Cycler};
pub use conllu::{
    parse_conllu, read_conllu, to_conllu, validate_heads, Rejection, Sentence, Token, Treebank,
};
pub use synth::{synth_treebank, synth_word_vectors, SynthSpec, VectorSpec};
pub use vocab::{EncodedSentence, Symbols, Vocabulary, PAD, UNK};
