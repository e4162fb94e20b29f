//! Local attention network.
//!
//! A query is pooled against every key and value with low-rank bilinear
//! pooling (`ELU(W q) ⊙ ELU(W' k_i)`). Pooled keys are scored clip by clip
//! and normalized into local attention weights; the attention-weighted
//! pooled values give the local feature, which is squeezed and re-expanded
//! into a sigmoid gate. The global feature is the attention-weighted sum of
//! gated pooled keys.

use alloc::format;

use rand::Rng;

use crate::diffcore::{Dense, Graph, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LanDims {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub z: usize,
    pub z_prime: usize,
    pub x: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LanWeights {
    pub query_key: Dense,
    pub key: Dense,
    pub query_value: Dense,
    pub value: Dense,
    /// `z → z'` projection inside the clip score.
    pub score_inner: Dense,
    /// `z' → 1` score head.
    pub score_head: Dense,
    /// `z → x` squeeze of the local feature.
    pub squeeze: Dense,
    /// `x → z` excitation back to the attention size.
    pub excite: Dense,
    pub dims: LanDims,
}

impl LanWeights {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: LanDims,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.x >= dims.z {
            return Err(Error::Config(format!(
                "LAN squeeze width x={} must be smaller than z={}",
                dims.x, dims.z
            )));
        }
        let d = |store: &mut ParamStore, name: &str, i, o, rng: &mut R| {
            Dense::register(store, &format!("{prefix}.{name}"), i, o, true, rng)
        };
        Ok(Self {
            query_key: d(store, "w_q_k", dims.q, dims.z, rng)?,
            key: d(store, "w_k", dims.k, dims.z, rng)?,
            query_value: d(store, "w_q_v", dims.q, dims.z, rng)?,
            value: d(store, "w_v", dims.v, dims.z, rng)?,
            score_inner: d(store, "w_bk", dims.z, dims.z_prime, rng)?,
            score_head: d(store, "w_bs", dims.z_prime, 1, rng)?,
            squeeze: d(store, "w_bl1", dims.z, dims.x, rng)?,
            excite: d(store, "w_bl2", dims.x, dims.z, rng)?,
            dims,
        })
    }
}

/// Everything one LAN application produces.
#[derive(Clone, Copy, Debug)]
pub struct LanOutput {
    /// Clip attention `[N]`, sums to one.
    pub attn: Var,
    /// Attended local feature `[z]`.
    pub local: Var,
    /// Global gate `[z]`, each entry in (0, 1).
    pub gate: Var,
    /// Gated global feature `[z]`.
    pub global_feat: Var,
    pub pooled_keys: Var,
    pub pooled_values: Var,
}

/// Query-independent half of the bilinear pooling, `ELU(W_K k_i)` and
/// `ELU(W_V v_i)`. Reusable across many queries against the same clips.
#[derive(Clone, Copy, Debug)]
pub struct LanMemory {
    pub proj_keys: Var,
    pub proj_values: Var,
}

fn clips(g: &Graph<'_>, m: Var, what: &'static str) -> Result<usize> {
    let s = g.shape(m);
    if s.len() != 2 {
        return Err(Error::Shape {
            op: what,
            lhs: s.to_vec(),
            rhs: alloc::vec![],
        });
    }
    Ok(s[0])
}

pub fn prepare_memory(g: &mut Graph<'_>, keys: Var, values: Var, w: &LanWeights) -> Result<LanMemory> {
    let nk = clips(g, keys, "lan keys")?;
    let nv = clips(g, values, "lan values")?;
    if nk != nv {
        return Err(Error::Shape {
            op: "lan keys/values",
            lhs: g.shape(keys).to_vec(),
            rhs: g.shape(values).to_vec(),
        });
    }
    let pk = w.key.forward(g, keys)?;
    let proj_keys = g.elu(pk);
    let pv = w.value.forward(g, values)?;
    let proj_values = g.elu(pv);
    Ok(LanMemory {
        proj_keys,
        proj_values,
    })
}

fn pool(g: &mut Graph<'_>, query: Var, proj: Var, query_proj: &Dense) -> Result<Var> {
    let q = query_proj.forward(g, query)?;
    let q = g.elu(q);
    g.mul_row(proj, q)
}

/// `β_i^K = ELU(W_Q^K q) ⊙ ELU(W_K k_i)`, shape `[N, z]`.
pub fn pool_keys(g: &mut Graph<'_>, query: Var, keys: Var, w: &LanWeights) -> Result<Var> {
    clips(g, keys, "pool_keys")?;
    let pk = w.key.forward(g, keys)?;
    let pk = g.elu(pk);
    pool(g, query, pk, &w.query_key)
}

/// `β_i^V = ELU(W_Q^V q) ⊙ ELU(W_V v_i)`, shape `[N, z]`.
pub fn pool_values(g: &mut Graph<'_>, query: Var, values: Var, w: &LanWeights) -> Result<Var> {
    clips(g, values, "pool_values")?;
    let pv = w.value.forward(g, values)?;
    let pv = g.elu(pv);
    pool(g, query, pv, &w.query_value)
}

/// Clip scores `w_bs · ReLU(W_bk β_i^K)` normalized with softmax.
pub fn local_attention(g: &mut Graph<'_>, pooled_keys: Var, w: &LanWeights) -> Result<Var> {
    let n = clips(g, pooled_keys, "local_attention")?;
    let inner = w.score_inner.forward(g, pooled_keys)?;
    let inner = g.relu(inner);
    let scores = w.score_head.forward(g, inner)?;
    let scores = g.reshape(scores, &[n])?;
    Ok(g.softmax(scores))
}

/// LAN against prepared clip projections.
pub fn lan_query(g: &mut Graph<'_>, query: Var, mem: &LanMemory, w: &LanWeights) -> Result<LanOutput> {
    let pooled_keys = pool(g, query, mem.proj_keys, &w.query_key)?;
    let pooled_values = pool(g, query, mem.proj_values, &w.query_value)?;
    let attn = local_attention(g, pooled_keys, w)?;
    let local = g.weighted_sum(attn, pooled_values)?;
    let squeezed = w.squeeze.forward(g, local)?;
    let excited = w.excite.forward(g, squeezed)?;
    let gate = g.sigmoid(excited);
    // Σ_i a_i (g ⊙ β_i^K) = g ⊙ Σ_i a_i β_i^K
    let attended_keys = g.weighted_sum(attn, pooled_keys)?;
    let global_feat = g.mul(gate, attended_keys)?;
    Ok(LanOutput {
        attn,
        local,
        gate,
        global_feat,
        pooled_keys,
        pooled_values,
    })
}

/// Full LAN: query `[q]`, keys `[N, k]`, values `[N, v]`.
pub fn lan_forward(g: &mut Graph<'_>, query: Var, keys: Var, values: Var, w: &LanWeights) -> Result<LanOutput> {
    let mem = prepare_memory(g, keys, values, w)?;
    lan_query(g, query, &mem, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use alloc::vec;
    use rand::SeedableRng;

    fn weights(dims: LanDims, seed: u64) -> (ParamStore, LanWeights) {
        let mut s = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = LanWeights::register(&mut s, "lan", dims, &mut rng).unwrap();
        (s, w)
    }

    const DIMS: LanDims = LanDims {
        q: 3,
        k: 4,
        v: 4,
        z: 5,
        z_prime: 3,
        x: 2,
    };

    #[test]
    fn squeeze_must_be_narrower() {
        let mut s = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let dims = LanDims { x: 5, ..DIMS };
        assert!(LanWeights::register(&mut s, "lan", dims, &mut rng).is_err());
    }

    #[test]
    fn zero_query_and_clips_pool_to_zero() {
        let (s, w) = weights(DIMS, 1);
        let mut g = Graph::with_params(&s);
        let q = g.input(Tensor::zeros(&[3]));
        let k = g.input(Tensor::zeros(&[2, 4]));
        let pk = pool_keys(&mut g, q, k, &w).unwrap();
        let pv = pool_values(&mut g, q, k, &w).unwrap();
        assert!(g.value(pk).data().iter().all(|&v| v == 0.0));
        assert!(g.value(pv).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_weights_scalar_case() {
        let dims = LanDims {
            q: 1,
            k: 1,
            v: 1,
            z: 2,
            z_prime: 1,
            x: 1,
        };
        let (mut s, w) = weights(dims, 2);
        s.set(w.query_key.w, Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
        s.set(w.key.w, Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
        let mut g = Graph::with_params(&s);
        let q = g.input(Tensor::vector(vec![1.0]));
        let k = g.input(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let pk = pool_keys(&mut g, q, k, &w).unwrap();
        assert_eq!(g.value(pk).data(), &[1.0, 1.0]);
    }

    #[test]
    fn identical_clips_get_uniform_attention() {
        let (s, w) = weights(DIMS, 3);
        let mut g = Graph::with_params(&s);
        let q = g.input(Tensor::vector(vec![0.2, -0.5, 0.9]));
        let row = vec![0.3, -0.1, 0.8, 0.4];
        let k = g.input(Tensor::from_rows(&[row.clone(), row.clone(), row.clone()]).unwrap());
        let out = lan_forward(&mut g, q, k, k, &w).unwrap();
        for &a in g.value(out.attn).data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        let pv = g.value(out.pooled_values).clone();
        assert_eq!(pv.row(0), pv.row(2));
        for (l, v) in g.value(out.local).data().iter().zip(pv.row(0)) {
            assert!((l - v).abs() < 1e-14);
        }
    }

    #[test]
    fn single_clip_degenerates() {
        let (s, w) = weights(DIMS, 4);
        let mut g = Graph::with_params(&s);
        let q = g.input(Tensor::vector(vec![0.2, -0.5, 0.9]));
        let k = g.input(Tensor::matrix(1, 4, vec![0.3, -0.1, 0.8, 0.4]).unwrap());
        let v = g.input(Tensor::matrix(1, 4, vec![-0.6, 0.2, 0.1, 0.5]).unwrap());
        let out = lan_forward(&mut g, q, k, v, &w).unwrap();
        assert_eq!(g.value(out.attn).data(), &[1.0]);
        assert_eq!(g.value(out.local).data(), g.value(out.pooled_values).row(0));
        let gate = g.value(out.gate).data();
        let pk = g.value(out.pooled_keys).row(0);
        for ((gf, ga), k) in g.value(out.global_feat).data().iter().zip(gate).zip(pk) {
            assert_eq!(*gf, ga * k);
        }
    }

    #[test]
    fn keys_and_values_must_share_clip_count() {
        let (s, w) = weights(DIMS, 5);
        let mut g = Graph::with_params(&s);
        let q = g.input(Tensor::zeros(&[3]));
        let k = g.input(Tensor::zeros(&[2, 4]));
        let v = g.input(Tensor::zeros(&[3, 4]));
        assert!(lan_forward(&mut g, q, k, v, &w).is_err());
    }
}
