//! Parsing decoders: a biaffine graph scorer with maximum-spanning-tree
//! decoding, and a stack-pointer transition decoder.

mod biaffine;
mod mst;
mod stackptr;

pub use biaffine::{graph_loss, BiaffineConfig, BiaffineDecoder, GraphScores};
pub use mst::{brute_force_decode, mst_decode, tree_score};
pub use stackptr::{oracle_transitions, replay, StackPtrConfig, StackPtrDecoder, Transition};

use crate::data::{validate_heads, EncodedSentence};
use crate::error::{Error, Result};

/// A dependency tree over tokens `1..=n`; `heads[i]` is the head of token
/// `i + 1` (0 for the root) and `labels[i]` its relation id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub heads: Vec<usize>,
    pub labels: Vec<usize>,
}

impl ParseTree {
    pub fn new(heads: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        if heads.len() != labels.len() {
            return Err(Error::invalid(format!(
                "tree has {} heads but {} labels",
                heads.len(),
                labels.len()
            )));
        }
        validate_heads(&heads).map_err(Error::InvalidArgument)?;
        Ok(ParseTree { heads, labels })
    }

    pub fn from_encoded(s: &EncodedSentence) -> Result<Self> {
        Self::new(s.heads.clone(), s.labels.clone())
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Valid tree with exactly one token attached to the root.
    pub fn is_single_rooted(&self) -> bool {
        validate_heads(&self.heads).is_ok() && self.heads.iter().filter(|&&h| h == 0).count() == 1
    }
}
