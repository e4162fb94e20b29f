use alloc::format;

use rand::Rng;

use super::{Graph, Init, ParamId, ParamStore, Var};
use crate::error::Result;

/// Weight matrix `[out, in]` with an optional bias `[out]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Dense {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[out, inp], Init::XavierUniform, rng)?;
        let b = if bias {
            Some(store.add(&format!("{name}.b"), &[out], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        g.dense(x, self.w, self.b)
    }
}

/// One-hidden-layer perceptron with ReLU.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Dense,
    pub out: Dense,
}

impl Mlp {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        hidden: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Dense::register(store, &format!("{name}.hidden"), inp, hidden, true, rng)?,
            out: Dense::register(store, &format!("{name}.out"), hidden, out, true, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        self.out.forward(g, h)
    }
}

/// LSTM cell parameters; gate rows are ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmWeights {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(
            &format!("{name}.w"),
            &[4 * hidden_dim, input_dim + hidden_dim],
            Init::XavierUniform,
            rng,
        )?;
        let b = store.add(&format!("{name}.b"), &[4 * hidden_dim], Init::Zeros, rng)?;
        store.get_mut(b).data_mut()[hidden_dim..2 * hidden_dim].fill(1.0);
        Ok(Self {
            w,
            b,
            input_dim,
            hidden_dim,
        })
    }
}

/// One LSTM step; returns `(h, c)`.
pub fn lstm_cell(
    g: &mut Graph<'_>,
    input: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmWeights,
) -> Result<(Var, Var)> {
    let h = p.hidden_dim;
    let x = g.concat(&[input, h_prev])?;
    let gates = g.dense(x, p.w, Some(p.b))?;
    let i = g.slice(gates, 0, h)?;
    let f = g.slice(gates, h, h)?;
    let cand = g.slice(gates, 2 * h, h)?;
    let o = g.slice(gates, 3 * h, h)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}
