//! Stacked bidirectional LSTM encoder.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Binding, Group, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnConfig {
    pub n_layers: usize,
    /// Per-direction hidden size; the encoder outputs `2 · hidden`.
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for RnnConfig {
    fn default() -> Self {
        RnnConfig {
            n_layers: 2,
            hidden: 64,
            dropout: 0.2,
        }
    }
}

/// Gate order in the packed matrices: input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, group: Group, in_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(LstmParams {
            wx: store.add_glorot(&format!("{prefix}.wx"), group, &[in_dim, 4 * hidden], rng)?,
            wh: store.add_glorot(&format!("{prefix}.wh"), group, &[hidden, 4 * hidden], rng)?,
            b: store.add_filled(&format!("{prefix}.b"), group, &[4 * hidden], 0.0)?,
        })
    }

    /// One cell update from precomputed `x·Wx + b` (a `1 × 4h` row).
    pub fn cell<'t>(
        &self,
        bind: &Binding<'_, 't>,
        xw: Var<'t>,
        state: Option<(Var<'t>, Var<'t>)>,
        hidden: usize,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let z = match state {
            Some((h, _)) => xw.add(&h.matmul(&bind.var(self.wh))?)?,
            None => xw,
        };
        let sig = z.sigmoid();
        let i = sig.narrow_cols(0, hidden)?;
        let f = sig.narrow_cols(hidden, hidden)?;
        let o = sig.narrow_cols(3 * hidden, hidden)?;
        let g = z.narrow_cols(2 * hidden, hidden)?.tanh();
        let c = match state {
            Some((_, c_prev)) => f.mul(&c_prev)?.add(&i.mul(&g)?)?,
            None => i.mul(&g)?,
        };
        let h = o.mul(&c.tanh())?;
        Ok((h, c))
    }
}

#[derive(Debug, Clone)]
pub struct RnnEncoder {
    pub cfg: RnnConfig,
    w_in: ParamId,
    b_in: ParamId,
    /// `[layer][direction]`, direction 0 runs left to right.
    layers: Vec<[LstmParams; 2]>,
}

impl RnnEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, cfg: RnnConfig, rng: &mut R) -> Result<Self> {
        let h = cfg.hidden;
        let g = Group::Encoder;
        let w_in = store.add_glorot("enc.in.w", g, &[in_dim, 2 * h], rng)?;
        let b_in = store.add_filled("enc.in.b", g, &[2 * h], 0.0)?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            layers.push([
                LstmParams::new(store, &format!("enc.l{l}.fwd"), g, 2 * h, h, rng)?,
                LstmParams::new(store, &format!("enc.l{l}.bwd"), g, 2 * h, h, rng)?,
            ]);
        }
        Ok(RnnEncoder { cfg, w_in, b_in, layers })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.cfg.hidden
    }

    pub fn direction_params(&self, layer: usize) -> [LstmParams; 2] {
        self.layers[layer]
    }

    fn run<'t>(&self, bind: &Binding<'_, 't>, lstm: &LstmParams, x: Var<'t>, reverse: bool) -> Result<Vec<Var<'t>>> {
        let n = x.shape()[0];
        let xw = x.matmul(&bind.var(lstm.wx))?.add_bias(&bind.var(lstm.b))?;
        let mut out: Vec<Option<Var<'t>>> = vec![None; n];
        let mut state = None;
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let (h, c) = lstm.cell(bind, xw.row(t)?, state, self.cfg.hidden)?;
            out[t] = Some(h);
            state = Some((h, c));
        }
        Ok(out.into_iter().map(|h| h.expect("every position visited")).collect())
    }

    pub fn encode<'t>(&self, bind: &Binding<'_, 't>, x: Var<'t>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var<'t>> {
        let n = x.shape()[0];
        if n == 0 {
            return Err(Error::invalid("encode_rnn: empty sentence"));
        }
        let mut h = x.matmul(&bind.var(self.w_in))?.add_bias(&bind.var(self.b_in))?;
        for dirs in &self.layers {
            let fwd = self.run(bind, &dirs[0], h, false)?;
            let bwd = self.run(bind, &dirs[1], h, true)?;
            h = Var::concat(&[Var::concat_rows(&fwd)?, Var::concat_rows(&bwd)?])?
                .dropout_with(self.cfg.dropout, rng.as_deref_mut())?;
        }
        Ok(h)
    }
}
