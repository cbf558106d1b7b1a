//! Top-down stack-pointer decoding. Starting from the root, the node on top
//! of the stack points at its next child (pushing it) or at itself (popping).
//! Children are taken left to right.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::biaffine::argmax;
use super::ParseTree;
use crate::autodiff::Var;
use crate::encoder::LstmParams;
use crate::error::{Error, Result};
use crate::params::{Binding, Group, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    /// `head` (0 for the root) takes `child` and pushes it.
    Attach { head: usize, child: usize },
    /// `node` is finished. The root's pop is implied by the others and
    /// carries no score.
    Pop { node: usize },
}

/// Gold transition sequence: `2n + 1` transitions for `n` tokens.
pub fn oracle_transitions(heads: &[usize]) -> Vec<Transition> {
    let n = heads.len();
    let mut children = vec![Vec::new(); n + 1];
    for (i, &h) in heads.iter().enumerate() {
        children[h].push(i + 1);
    }
    let mut next = vec![0; n + 1];
    let mut stack = vec![0];
    let mut out = Vec::with_capacity(2 * n + 1);
    while let Some(&top) = stack.last() {
        if let Some(&c) = children[top].get(next[top]) {
            next[top] += 1;
            out.push(Transition::Attach { head: top, child: c });
            stack.push(c);
        } else {
            out.push(Transition::Pop { node: top });
            stack.pop();
        }
    }
    out
}

/// Rebuilds heads from a transition sequence; `None` if it is inconsistent.
pub fn replay(transitions: &[Transition], n: usize) -> Option<Vec<usize>> {
    let mut heads = vec![usize::MAX; n];
    let mut stack = vec![0];
    for &t in transitions {
        match t {
            Transition::Attach { head, child } => {
                if stack.last() != Some(&head) || child == 0 || child > n || heads[child - 1] != usize::MAX {
                    return None;
                }
                heads[child - 1] = head;
                stack.push(child);
            }
            Transition::Pop { node } => {
                if stack.pop() != Some(node) {
                    return None;
                }
            }
        }
    }
    (stack.is_empty() && heads.iter().all(|&h| h != usize::MAX)).then_some(heads)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackPtrConfig {
    pub hidden: usize,
    pub pointer_dim: usize,
    pub label_hidden: usize,
}

impl Default for StackPtrConfig {
    fn default() -> Self {
        StackPtrConfig {
            hidden: 64,
            pointer_dim: 64,
            label_hidden: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StackPtrDecoder {
    pub cfg: StackPtrConfig,
    pub n_labels: usize,
    root: ParamId,
    lstm: LstmParams,
    key_w: ParamId,
    key_b: ParamId,
    query_w: ParamId,
    query_b: ParamId,
    ptr_u: ParamId,
    /// Per-position prior `pointer_dim × 1`.
    ptr_bias: ParamId,
    lab_w1: ParamId,
    lab_b1: ParamId,
    lab_w2: ParamId,
    lab_b2: ParamId,
}

/// Per-sentence quantities that do not depend on the decoder state.
struct Prepared<'t> {
    h: Var<'t>,
    /// `pointer_dim × n`: `U · keysᵀ`.
    keys_t: Var<'t>,
    /// `1 × n`.
    key_bias: Var<'t>,
    /// `n × 4·hidden`, rows are `h_j · Wx + b` for the decoder LSTM.
    xw: Var<'t>,
    root_xw: Var<'t>,
}

impl StackPtrDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, n_labels: usize, cfg: StackPtrConfig, rng: &mut R) -> Result<Self> {
        if n_labels == 0 {
            return Err(Error::invalid("stack-pointer decoder needs at least one relation"));
        }
        let g = Group::Decoder;
        let (hd, dp, lh) = (cfg.hidden, cfg.pointer_dim, cfg.label_hidden);
        Ok(StackPtrDecoder {
            root: store.add_uniform("dec.root", g, &[in_dim], 0.1, rng)?,
            lstm: LstmParams::new(store, "dec.lstm", g, in_dim, hd, rng)?,
            key_w: store.add_glorot("dec.ptr.key.w", g, &[in_dim, dp], rng)?,
            key_b: store.add_filled("dec.ptr.key.b", g, &[dp], 0.0)?,
            query_w: store.add_glorot("dec.ptr.query.w", g, &[hd, dp], rng)?,
            query_b: store.add_filled("dec.ptr.query.b", g, &[dp], 0.0)?,
            ptr_u: store.add_glorot("dec.ptr.u", g, &[dp, dp], rng)?,
            ptr_bias: store.add_filled("dec.ptr.bias", g, &[dp, 1], 0.0)?,
            lab_w1: store.add_glorot("dec.lab.w1", g, &[hd + in_dim, lh], rng)?,
            lab_b1: store.add_filled("dec.lab.b1", g, &[lh], 0.0)?,
            lab_w2: store.add_glorot("dec.lab.w2", g, &[lh, n_labels], rng)?,
            lab_b2: store.add_filled("dec.lab.b2", g, &[n_labels], 0.0)?,
            cfg,
            n_labels,
        })
    }

    fn prepare<'t>(&self, bind: &Binding<'_, 't>, h: Var<'t>) -> Result<Prepared<'t>> {
        let (n, d) = (h.shape()[0], h.shape()[1]);
        if n == 0 {
            return Err(Error::invalid("stack-pointer decoder: empty sentence"));
        }
        let keys = h
            .matmul(&bind.var(self.key_w))?
            .add_bias(&bind.var(self.key_b))?
            .relu();
        let keys_t = bind.var(self.ptr_u).matmul(&keys.transpose()?)?;
        let key_bias = keys.matmul(&bind.var(self.ptr_bias))?.transpose()?;
        let wx = bind.var(self.lstm.wx);
        let b = bind.var(self.lstm.b);
        let root = bind.var(self.root).reshape(vec![1, d])?;
        Ok(Prepared {
            h,
            keys_t,
            key_bias,
            xw: h.matmul(&wx)?.add_bias(&b)?,
            root_xw: root.matmul(&wx)?.add_bias(&b)?,
        })
    }

    /// Advances the decoder with the stack top (0 = root) and returns the
    /// new state and the `1 × n` pointer logits.
    fn step<'t>(
        &self,
        bind: &Binding<'_, 't>,
        p: &Prepared<'t>,
        top: usize,
        state: Option<(Var<'t>, Var<'t>)>,
    ) -> Result<((Var<'t>, Var<'t>), Var<'t>)> {
        let xw = if top == 0 { p.root_xw } else { p.xw.row(top - 1)? };
        let (s, c) = self.lstm.cell(bind, xw, state, self.cfg.hidden)?;
        let q = s
            .matmul(&bind.var(self.query_w))?
            .add_bias(&bind.var(self.query_b))?
            .relu();
        let logits = q.matmul(&p.keys_t)?.add(&p.key_bias)?;
        Ok(((s, c), logits))
    }

    fn label_logits<'t>(&self, bind: &Binding<'_, 't>, p: &Prepared<'t>, s: Var<'t>, child: usize) -> Result<Var<'t>> {
        Var::concat(&[s, p.h.row(child - 1)?])?
            .matmul(&bind.var(self.lab_w1))?
            .add_bias(&bind.var(self.lab_b1))?
            .relu()
            .matmul(&bind.var(self.lab_w2))?
            .add_bias(&bind.var(self.lab_b2))
    }

    /// Teacher-forced `−Σ log p(t_i)` over the scored transitions plus label
    /// cross-entropy at each attachment.
    pub fn loss<'t>(&self, bind: &Binding<'_, 't>, h: Var<'t>, gold: &ParseTree) -> Result<Var<'t>> {
        let n = h.shape()[0];
        if gold.len() != n {
            return Err(Error::invalid(format!(
                "stack-pointer loss: gold tree has {} tokens, encoder gave {n}",
                gold.len()
            )));
        }
        if let Some(l) = gold.labels.iter().find(|&&l| l >= self.n_labels) {
            return Err(Error::invalid(format!("stack-pointer loss: label {l} outside 0..{}", self.n_labels)));
        }
        let p = self.prepare(bind, h)?;
        let mut stack = vec![0];
        let mut state = None;
        let mut terms = Vec::with_capacity(3 * n);
        for t in oracle_transitions(&gold.heads) {
            let top = *stack.last().expect("oracle keeps the stack non-empty");
            let target = match t {
                Transition::Pop { node: 0 } => break,
                Transition::Pop { node } => node,
                Transition::Attach { child, .. } => child,
            };
            let (st, logits) = self.step(bind, &p, top, state)?;
            state = Some(st);
            terms.push(logits.log_softmax()?.gather(vec![target - 1], vec![1])?);
            match t {
                Transition::Attach { child, .. } => {
                    let lab = self.label_logits(bind, &p, st.0, child)?;
                    terms.push(lab.log_softmax()?.gather(vec![gold.labels[child - 1]], vec![1])?);
                    stack.push(child);
                }
                Transition::Pop { .. } => {
                    stack.pop();
                }
            }
        }
        Ok(Var::concat(&terms)?.sum().neg())
    }

    /// Greedy constrained decoding; the result is always a single-rooted tree.
    /// A token may only attach unattached tokens, and the root's child may not
    /// pop while tokens remain unattached.
    pub fn decode<'t>(&self, bind: &Binding<'_, 't>, h: Var<'t>) -> Result<ParseTree> {
        let n = h.shape()[0];
        let p = self.prepare(bind, h)?;
        let mut heads = vec![usize::MAX; n];
        let mut labels = vec![0; n];
        let mut remaining = n;
        let mut stack = vec![0];
        let mut state = None;
        while let Some(&top) = stack.last() {
            if top == 0 && remaining < n {
                break;
            }
            let (st, logits) = self.step(bind, &p, top, state)?;
            state = Some(st);
            let scores = logits.to_vec();
            let can_pop = top != 0 && !(stack.len() == 2 && remaining > 0);
            let mut best: Option<usize> = None;
            for j in 1..=n {
                let allowed = if j == top { can_pop } else { heads[j - 1] == usize::MAX };
                if allowed && best.is_none_or(|b| scores[j - 1] > scores[b - 1]) {
                    best = Some(j);
                }
            }
            let target = best.expect("either a pop or an attachment is always allowed");
            if target == top {
                stack.pop();
            } else {
                heads[target - 1] = top;
                let lab = self.label_logits(bind, &p, st.0, target)?;
                labels[target - 1] = argmax(&lab.to_vec());
                remaining -= 1;
                stack.push(target);
            }
        }
        ParseTree::new(heads, labels)
    }
}
