//! Transformer-style encoder whose attention logits carry a learned
//! relative-position term on the keys and no absolute positions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Binding, Group, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfAttConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// Relative offsets are clipped to `[-kclip, kclip]`.
    pub kclip: usize,
    pub dropout: f64,
}

impl Default for SelfAttConfig {
    fn default() -> Self {
        SelfAttConfig {
            n_layers: 2,
            n_heads: 4,
            model_dim: 64,
            ff_dim: 128,
            kclip: 4,
            dropout: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    /// `(2·kclip + 1) × head_dim`, shared by the heads of a layer.
    rel: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct SelfAttEncoder {
    pub cfg: SelfAttConfig,
    w_in: ParamId,
    b_in: ParamId,
    layers: Vec<Layer>,
}

const LN_EPS: f64 = 1e-5;

impl SelfAttEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, cfg: SelfAttConfig, rng: &mut R) -> Result<Self> {
        if cfg.n_heads == 0 || cfg.model_dim % cfg.n_heads != 0 {
            return Err(Error::config(
                "selfatt.n_heads",
                format!("model_dim {} not divisible by {} heads", cfg.model_dim, cfg.n_heads),
            ));
        }
        let d = cfg.model_dim;
        let dh = d / cfg.n_heads;
        let g = Group::Encoder;
        let w_in = store.add_glorot("enc.in.w", g, &[in_dim, d], rng)?;
        let b_in = store.add_filled("enc.in.b", g, &[d], 0.0)?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("enc.l{l}.{s}");
            layers.push(Layer {
                wq: store.add_glorot(&p("wq"), g, &[d, d], rng)?,
                bq: store.add_filled(&p("bq"), g, &[d], 0.0)?,
                wk: store.add_glorot(&p("wk"), g, &[d, d], rng)?,
                bk: store.add_filled(&p("bk"), g, &[d], 0.0)?,
                wv: store.add_glorot(&p("wv"), g, &[d, d], rng)?,
                bv: store.add_filled(&p("bv"), g, &[d], 0.0)?,
                wo: store.add_glorot(&p("wo"), g, &[d, d], rng)?,
                bo: store.add_filled(&p("bo"), g, &[d], 0.0)?,
                rel: store.add_glorot(&p("rel"), g, &[2 * cfg.kclip + 1, dh], rng)?,
                ln1_gain: store.add_filled(&p("ln1.g"), g, &[d], 1.0)?,
                ln1_bias: store.add_filled(&p("ln1.b"), g, &[d], 0.0)?,
                w1: store.add_glorot(&p("ff.w1"), g, &[d, cfg.ff_dim], rng)?,
                b1: store.add_filled(&p("ff.b1"), g, &[cfg.ff_dim], 0.0)?,
                w2: store.add_glorot(&p("ff.w2"), g, &[cfg.ff_dim, d], rng)?,
                b2: store.add_filled(&p("ff.b2"), g, &[d], 0.0)?,
                ln2_gain: store.add_filled(&p("ln2.g"), g, &[d], 1.0)?,
                ln2_bias: store.add_filled(&p("ln2.b"), g, &[d], 0.0)?,
            });
        }
        Ok(SelfAttEncoder { cfg, w_in, b_in, layers })
    }

    pub fn out_dim(&self) -> usize {
        self.cfg.model_dim
    }

    /// Parameter ids of the relative-position tables, one per layer.
    pub fn relative_tables(&self) -> Vec<ParamId> {
        self.layers.iter().map(|l| l.rel).collect()
    }

    pub fn encode<'t>(&self, bind: &Binding<'_, 't>, x: Var<'t>, rng: Option<&mut ChaCha8Rng>) -> Result<Var<'t>> {
        Ok(self.encode_with_attention(bind, x, rng)?.0)
    }

    /// Also returns the attention weight matrices, `[layer][head]`.
    pub fn encode_with_attention<'t>(
        &self,
        bind: &Binding<'_, 't>,
        x: Var<'t>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var<'t>, Vec<Vec<Var<'t>>>)> {
        let n = x.shape()[0];
        if n == 0 {
            return Err(Error::invalid("encode_selfatt: empty sentence"));
        }
        let d = self.cfg.model_dim;
        let heads = self.cfg.n_heads;
        let dh = d / heads;
        let k = self.cfg.kclip as isize;
        let span = 2 * self.cfg.kclip + 1;
        let scale = 1.0 / (dh as f64).sqrt();
        // Flat index into the (n × span) relative score matrix for each (i, j).
        let rel_index: Vec<usize> = (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| {
                    let off = (j as isize - i as isize).clamp(-k, k);
                    i * span + (off + k) as usize
                })
            })
            .collect();

        let mut h = x.matmul(&bind.var(self.w_in))?.add_bias(&bind.var(self.b_in))?;
        let mut all_attn = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let proj = |w: ParamId, b: ParamId| h.matmul(&bind.var(w))?.add_bias(&bind.var(b));
            let q = proj(layer.wq, layer.bq)?;
            let kk = proj(layer.wk, layer.bk)?;
            let v = proj(layer.wv, layer.bv)?;
            let rel_t = bind.var(layer.rel).transpose()?;
            let mut outs = Vec::with_capacity(heads);
            let mut attn = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = q.narrow_cols(hd * dh, dh)?;
                let kh = kk.narrow_cols(hd * dh, dh)?;
                let vh = v.narrow_cols(hd * dh, dh)?;
                let content = qh.matmul(&kh.transpose()?)?;
                let relative = qh.matmul(&rel_t)?.gather(rel_index.clone(), vec![n, n])?;
                let weights = content.add(&relative)?.scale(scale).softmax()?;
                outs.push(weights.matmul(&vh)?);
                attn.push(weights);
            }
            all_attn.push(attn);
            let att = Var::concat(&outs)?
                .matmul(&bind.var(layer.wo))?
                .add_bias(&bind.var(layer.bo))?
                .dropout_with(self.cfg.dropout, rng.as_deref_mut())?;
            h = h
                .add(&att)?
                .layer_norm(&bind.var(layer.ln1_gain), &bind.var(layer.ln1_bias), LN_EPS)?;
            let ff = h
                .matmul(&bind.var(layer.w1))?
                .add_bias(&bind.var(layer.b1))?
                .relu()
                .matmul(&bind.var(layer.w2))?
                .add_bias(&bind.var(layer.b2))?
                .dropout_with(self.cfg.dropout, rng.as_deref_mut())?;
            h = h
                .add(&ff)?
                .layer_norm(&bind.var(layer.ln2_gain), &bind.var(layer.ln2_bias), LN_EPS)?;
        }
        Ok((h, all_attn))
    }
}
