//! Seeded sampling of half-source / half-auxiliary batches.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Endless stream of indices into a corpus: one seeded shuffle per pass.
#[derive(Debug, Clone)]
pub struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    pub fn new(len: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("cannot sample from an empty corpus"));
        }
        let mut c = Cycler {
            order: (0..len).collect(),
            pos: 0,
            rng: rng::stream(seed, 0),
        };
        c.order.shuffle(&mut c.rng);
        Ok(c)
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let i = self.order[self.pos];
        self.pos += 1;
        i
    }

    pub fn take(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.next_index()).collect()
    }
}

/// Sentence indices for one step: B/2 from the source corpus, B/2 from the
/// auxiliary corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source_half: Vec<usize>,
    pub aux_half: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BatchStream {
    source: Cycler,
    aux: Cycler,
    half: usize,
    per_epoch: usize,
}

/// Stream-id of the source-side cycler. Source-only training reuses it so
/// its sentence order matches the source halves of adversarial batches.
pub const SOURCE_STREAM: u64 = 1;
pub const AUX_STREAM: u64 = 2;

pub fn source_cycler(len: usize, seed: u64) -> Result<Cycler> {
    Cycler::new(len, rng::derive_seed(seed, SOURCE_STREAM))
}

/// Batches of `batch_size` sentences, half from each corpus. One epoch
/// covers the larger corpus once; the smaller one is reshuffled and cycled.
pub fn make_batches(source_len: usize, aux_len: usize, batch_size: usize, seed: u64) -> Result<BatchStream> {
    if batch_size < 2 || batch_size % 2 != 0 {
        return Err(Error::invalid(format!(
            "batch size must be even and at least 2, got {batch_size}"
        )));
    }
    let half = batch_size / 2;
    Ok(BatchStream {
        source: source_cycler(source_len, seed)?,
        aux: Cycler::new(aux_len, rng::derive_seed(seed, AUX_STREAM))?,
        half,
        per_epoch: source_len.max(aux_len).div_ceil(half),
    })
}

impl BatchStream {
    pub fn batches_per_epoch(&self) -> usize {
        self.per_epoch
    }

    pub fn next_batch(&mut self) -> Batch {
        Batch {
            source_half: self.source.take(self.half),
            aux_half: self.aux.take(self.half),
        }
    }

    pub fn epoch(&mut self) -> Vec<Batch> {
        (0..self.per_epoch).map(|_| self.next_batch()).collect()
    }

    /// Full-size source-only batch, as used during warm-up.
    pub fn next_source(&mut self, n: usize) -> Vec<usize> {
        self.source.take(n)
    }
}

impl Iterator for BatchStream {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}
