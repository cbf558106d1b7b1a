use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ParseTree;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Binding, Group, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiaffineConfig {
    pub arc_dim: usize,
    pub label_dim: usize,
}

impl Default for BiaffineConfig {
    fn default() -> Self {
        BiaffineConfig {
            arc_dim: 64,
            label_dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BiaffineDecoder {
    pub cfg: BiaffineConfig,
    pub n_labels: usize,
    root: ParamId,
    arc_dep_w: ParamId,
    arc_dep_b: ParamId,
    arc_head_w: ParamId,
    arc_head_b: ParamId,
    arc_u: ParamId,
    arc_bias: ParamId,
    lab_dep_w: ParamId,
    lab_dep_b: ParamId,
    lab_head_w: ParamId,
    lab_head_b: ParamId,
    /// `label_dim × (R · label_dim)`, one bilinear block per relation.
    lab_u: ParamId,
    /// `label_dim × R`, applied to the head representation.
    lab_head_lin: ParamId,
    lab_bias: ParamId,
}

/// `arc` is `n × (n+1)` with column 0 the root; `label` is `n × (n+1) × R`.
pub struct GraphScores<'t> {
    pub arc: Var<'t>,
    pub label: Var<'t>,
}

impl BiaffineDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, n_labels: usize, cfg: BiaffineConfig, rng: &mut R) -> Result<Self> {
        if n_labels == 0 {
            return Err(Error::invalid("biaffine decoder needs at least one relation"));
        }
        let g = Group::Decoder;
        let (da, dl) = (cfg.arc_dim, cfg.label_dim);
        Ok(BiaffineDecoder {
            root: store.add_uniform("dec.root", g, &[in_dim], 0.1, rng)?,
            arc_dep_w: store.add_glorot("dec.arc.dep.w", g, &[in_dim, da], rng)?,
            arc_dep_b: store.add_filled("dec.arc.dep.b", g, &[da], 0.0)?,
            arc_head_w: store.add_glorot("dec.arc.head.w", g, &[in_dim, da], rng)?,
            arc_head_b: store.add_filled("dec.arc.head.b", g, &[da], 0.0)?,
            arc_u: store.add_filled("dec.arc.u", g, &[da, da], 0.0)?,
            arc_bias: store.add_filled("dec.arc.bias", g, &[da, 1], 0.0)?,
            lab_dep_w: store.add_glorot("dec.lab.dep.w", g, &[in_dim, dl], rng)?,
            lab_dep_b: store.add_filled("dec.lab.dep.b", g, &[dl], 0.0)?,
            lab_head_w: store.add_glorot("dec.lab.head.w", g, &[in_dim, dl], rng)?,
            lab_head_b: store.add_filled("dec.lab.head.b", g, &[dl], 0.0)?,
            lab_u: store.add_filled("dec.lab.u", g, &[dl, n_labels * dl], 0.0)?,
            lab_head_lin: store.add_glorot("dec.lab.head.lin", g, &[dl, n_labels], rng)?,
            lab_bias: store.add_filled("dec.lab.bias", g, &[n_labels], 0.0)?,
            cfg,
            n_labels,
        })
    }

    pub fn scores<'t>(&self, bind: &Binding<'_, 't>, h: Var<'t>) -> Result<GraphScores<'t>> {
        let n = h.shape()[0];
        if n == 0 {
            return Err(Error::invalid("biaffine_scores: empty sentence"));
        }
        let d = h.shape()[1];
        let root = bind.var(self.root).reshape(vec![1, d])?;
        let cand = Var::concat_rows(&[root, h])?;
        let mlp = |x: Var<'t>, w: ParamId, b: ParamId| -> Result<Var<'t>> {
            Ok(x.matmul(&bind.var(w))?.add_bias(&bind.var(b))?.relu())
        };

        let dep = mlp(h, self.arc_dep_w, self.arc_dep_b)?;
        let head = mlp(cand, self.arc_head_w, self.arc_head_b)?;
        let head_t = head.transpose()?;
        let head_bias = head.matmul(&bind.var(self.arc_bias))?.transpose()?;
        let arc = dep
            .matmul(&bind.var(self.arc_u))?
            .matmul(&head_t)?
            .add_bias(&head_bias)?;

        let r = self.n_labels;
        let dl = self.cfg.label_dim;
        let ldep = mlp(h, self.lab_dep_w, self.lab_dep_b)?;
        let lhead = mlp(cand, self.lab_head_w, self.lab_head_b)?;
        let lhead_t = lhead.transpose()?;
        let left = ldep.matmul(&bind.var(self.lab_u))?;
        let blocks = (0..r)
            .map(|k| left.narrow_cols(k * dl, dl)?.matmul(&lhead_t))
            .collect::<Result<Vec<_>>>()?;
        // n × (R·(n+1)) with block k holding relation k.
        let bilinear = Var::concat(&blocks)?;
        let m1 = n + 1;
        let index = (0..n)
            .flat_map(|m| (0..m1).flat_map(move |j| (0..r).map(move |k| m * r * m1 + k * m1 + j)))
            .collect();
        // (n+1) × R head term, broadcast over dependents.
        let head_term = lhead
            .matmul(&bind.var(self.lab_head_lin))?
            .add_bias(&bind.var(self.lab_bias))?
            .reshape(vec![m1 * r])?;
        let label = bilinear
            .gather(index, vec![n, m1 * r])?
            .add_bias(&head_term)?
            .reshape(vec![n, m1, r])?;
        Ok(GraphScores { arc, label })
    }

    /// Label argmax at each token's given head.
    pub fn best_labels(&self, label: &Var<'_>, heads: &[usize]) -> Vec<usize> {
        let shape = label.shape();
        let (m1, r) = (shape[1], shape[2]);
        let v = label.value();
        heads
            .iter()
            .enumerate()
            .map(|(m, &h)| {
                let row = &v[(m * m1 + h) * r..(m * m1 + h + 1) * r];
                argmax(row)
            })
            .collect()
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Summed head cross-entropy plus label cross-entropy at the gold heads.
pub fn graph_loss<'t>(scores: &GraphScores<'t>, gold: &ParseTree) -> Result<Var<'t>> {
    let shape = scores.label.shape();
    let (n, m1, r) = (shape[0], shape[1], shape[2]);
    if scores.arc.shape() != [n, m1] || gold.len() != n {
        return Err(Error::invalid(format!(
            "graph_loss: gold tree has {} tokens, scores cover {n}",
            gold.len()
        )));
    }
    if let Some(h) = gold.heads.iter().find(|&&h| h > n) {
        return Err(Error::invalid(format!("graph_loss: gold head {h} outside 0..={n}")));
    }
    if let Some(l) = gold.labels.iter().find(|&&l| l >= r) {
        return Err(Error::invalid(format!("graph_loss: gold label {l} outside 0..{r}")));
    }
    let arc_idx = gold.heads.iter().enumerate().map(|(m, &h)| m * m1 + h).collect();
    let arc_loss = scores.arc.log_softmax()?.gather(arc_idx, vec![n])?.sum().neg();
    let at_gold = gold
        .heads
        .iter()
        .enumerate()
        .flat_map(|(m, &h)| (0..r).map(move |k| (m * m1 + h) * r + k))
        .collect();
    let lab_idx = gold.labels.iter().enumerate().map(|(m, &l)| m * r + l).collect();
    let lab_loss = scores
        .label
        .gather(at_gold, vec![n, r])?
        .log_softmax()?
        .gather(lab_idx, vec![n])?
        .sum()
        .neg();
    arc_loss.add(&lab_loss)
}
