#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vslan_core::config::Dims;
use vslan_core::diffcore::{Graph, ParamStore, Tensor, Var};
use vslan_core::fan::StreamSpec;
use vslan_core::Result;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in (-1, 1) kept at least 0.1 away from zero, so that
/// piecewise activations are never probed across their kink.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

/// Scalar `Σ_i c_i y_i` with fixed coefficients, so every output entry
/// influences the loss differently.
pub fn probe(g: &mut Graph<'_>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut r = rng(seed);
    let c = uniform(&mut r, &shape, 1.0);
    let c = g.constant(c);
    let m = g.mul(y, c)?;
    Ok(g.sum(m))
}

/// Randomizes every parameter (including biases and layer-norm terms).
pub fn randomize(store: &mut ParamStore, seed: u64, bound: f64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = r.random_range(-bound..bound);
        }
    }
}

pub fn tiny_dims() -> Dims {
    Dims {
        z: 4,
        z_prime: 3,
        x: 2,
        y: 3,
        delta: 3,
        d_h: 6,
        word_embed: 3,
        pos_embed: 2,
    }
}

pub fn streams(dims: &[usize]) -> Vec<StreamSpec> {
    dims.iter()
        .enumerate()
        .map(|(m, &d)| StreamSpec {
            stream_id: m as u32,
            name: format!("s{m}"),
            dim: d,
            order_index: m,
        })
        .collect()
}
