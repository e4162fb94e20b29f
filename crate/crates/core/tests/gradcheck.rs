//! Central-difference gradient checks (h = 1e-5, f64) for every primitive
//! and for the composed model pieces at tiny sizes.

mod common;

use common::*;
use vslan_core::decoder::{self, DecoderContext, DecoderDims, DecoderWeights};
use vslan_core::diffcore::{grad_check, Graph, ParamStore, Tensor, Var};
use vslan_core::fan::{self, EncoderWeights, FanWeights};
use vslan_core::lan::{self, LanDims, LanWeights};
use vslan_core::loss;
use vslan_core::vapen::{self, VapenDims, VapenWeights};
use vslan_core::Result;

fn check<F>(label: &str, store: Option<&ParamStore>, inputs: &[Tensor], f: F)
where
    F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let report = grad_check(store, inputs, f, H, TOL).unwrap_or_else(|e| panic!("{label}: {e}"));
    assert!(
        report.passed(),
        "{label}: max relative error {:.3e} at {:?}",
        report.max_rel_error,
        report.worst()
    );
}

fn unary(label: &str, op: fn(&mut Graph<'_>, Var) -> Var) {
    let mut r = rng(11);
    let x = away_from_zero(&mut r, &[2, 3]);
    check(label, None, &[x], |g, v| {
        let y = op(g, v[0]);
        probe(g, y, 1)
    });
}

#[test]
fn elementwise_activations() {
    unary("elu", |g, x| g.elu(x));
    unary("relu", |g, x| g.relu(x));
    unary("sigmoid", |g, x| g.sigmoid(x));
    unary("tanh", |g, x| g.tanh(x));
    unary("exp", |g, x| g.exp(x));
    unary("scale", |g, x| g.scale(x, -1.7));
    unary("softmax", |g, x| g.softmax(x));
    unary("log_softmax", |g, x| g.log_softmax(x));
}

#[test]
fn binary_elementwise() {
    let mut r = rng(12);
    let a = away_from_zero(&mut r, &[3, 2]);
    let b = away_from_zero(&mut r, &[3, 2]);
    let inputs = [a, b];
    check("add", None, &inputs, |g, v| {
        let y = g.add(v[0], v[1])?;
        probe(g, y, 2)
    });
    check("sub", None, &inputs, |g, v| {
        let y = g.sub(v[0], v[1])?;
        probe(g, y, 2)
    });
    check("mul", None, &inputs, |g, v| {
        let y = g.mul(v[0], v[1])?;
        probe(g, y, 2)
    });
}

#[test]
fn linear_with_and_without_bias() {
    let mut r = rng(13);
    let x = away_from_zero(&mut r, &[3, 4]);
    let w = away_from_zero(&mut r, &[2, 4]);
    let b = away_from_zero(&mut r, &[2]);
    check("linear+bias", None, &[x.clone(), w.clone(), b], |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2]))?;
        probe(g, y, 3)
    });
    let xv = away_from_zero(&mut r, &[4]);
    check("linear vector", None, &[xv, w], |g, v| {
        let y = g.linear(v[0], v[1], None)?;
        probe(g, y, 3)
    });
}

#[test]
fn dense_over_parameters() {
    let mut r = rng(14);
    let mut store = ParamStore::new();
    let d = vslan_core::diffcore::Dense::register(&mut store, "d", 3, 2, true, &mut r).unwrap();
    randomize(&mut store, 5, 0.8);
    let x = away_from_zero(&mut r, &[3]);
    check("dense", Some(&store), &[x], |g, v| {
        let y = d.forward(g, v[0])?;
        probe(g, y, 4)
    });
}

#[test]
fn row_broadcast_and_reductions() {
    let mut r = rng(15);
    let m = away_from_zero(&mut r, &[3, 4]);
    let v4 = away_from_zero(&mut r, &[4]);
    let w3 = away_from_zero(&mut r, &[3]);
    check("mul_row", None, &[m.clone(), v4.clone()], |g, v| {
        let y = g.mul_row(v[0], v[1])?;
        probe(g, y, 5)
    });
    check("weighted_sum", None, &[w3, m.clone()], |g, v| {
        let y = g.weighted_sum(v[0], v[1])?;
        probe(g, y, 5)
    });
    check("mean_rows", None, &[m.clone()], |g, v| {
        let y = g.mean_rows(v[0])?;
        probe(g, y, 5)
    });
    check("sum", None, &[m.clone()], |g, v| {
        let y = g.sum(v[0]);
        let y2 = g.mul(y, y)?;
        Ok(y2)
    });
    check("add_n", None, &[v4.clone(), v4.clone(), v4], |g, v| {
        let y = g.add_n(v)?;
        probe(g, y, 5)
    });
}

#[test]
fn layer_norm() {
    let mut r = rng(16);
    let x = away_from_zero(&mut r, &[3, 5]);
    let gain = away_from_zero(&mut r, &[5]);
    let bias = away_from_zero(&mut r, &[5]);
    check("layer_norm", None, &[x, gain, bias], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        probe(g, y, 6)
    });
}

#[test]
fn structural_ops() {
    let mut r = rng(17);
    let a = away_from_zero(&mut r, &[3]);
    let b = away_from_zero(&mut r, &[4]);
    let m = away_from_zero(&mut r, &[3, 4]);
    check("concat", None, &[a.clone(), b.clone()], |g, v| {
        let y = g.concat(v)?;
        probe(g, y, 7)
    });
    check("slice", None, &[b.clone()], |g, v| {
        let y = g.slice(v[0], 1, 2)?;
        probe(g, y, 7)
    });
    check("gather", None, &[m.clone()], |g, v| {
        let y = g.gather(v[0], 2)?;
        probe(g, y, 7)
    });
    check("row", None, &[m.clone()], |g, v| {
        let y = g.row(v[0], 1)?;
        probe(g, y, 7)
    });
    check("stack_rows", None, &[b.clone(), b.clone()], |g, v| {
        let y = g.stack_rows(v)?;
        probe(g, y, 7)
    });
    check("reshape", None, &[m], |g, v| {
        let y = g.reshape(v[0], &[12])?;
        probe(g, y, 7)
    });
    check("pick", None, &[a], |g, v| {
        let y = g.pick(v[0], 2)?;
        let y2 = g.mul(y, y)?;
        Ok(y2)
    });
}

#[test]
fn probabilistic_ops() {
    let mut r = rng(18);
    let mu_q = away_from_zero(&mut r, &[3]);
    let lv_q = away_from_zero(&mut r, &[3]);
    let mu_p = away_from_zero(&mut r, &[3]);
    let lv_p = away_from_zero(&mut r, &[3]);
    check("kl_diag_gaussian", None, &[mu_q.clone(), lv_q.clone(), mu_p, lv_p], |g, v| {
        g.kl_diag_gaussian(v[0], v[1], v[2], v[3])
    });
    let logits = away_from_zero(&mut r, &[5]);
    check("nll", None, &[logits], |g, v| g.nll(v[0], 3));
    let noise = away_from_zero(&mut r, &[3]);
    check("gaussian_sample", None, &[mu_q, lv_q], move |g, v| {
        let y = g.gaussian_sample(v[0], v[1], &noise)?;
        probe(g, y, 8)
    });
}

fn lan_weights(store: &mut ParamStore, seed: u64) -> LanWeights {
    let dims = LanDims {
        q: 3,
        k: 4,
        v: 2,
        z: 4,
        z_prime: 3,
        x: 2,
    };
    LanWeights::register(store, "lan", dims, &mut rng(seed)).unwrap()
}

#[test]
fn lan_forward_composite() {
    let mut store = ParamStore::new();
    let w = lan_weights(&mut store, 19);
    randomize(&mut store, 20, 0.9);
    let mut r = rng(21);
    let q = away_from_zero(&mut r, &[3]);
    let k = away_from_zero(&mut r, &[3, 4]);
    let v = away_from_zero(&mut r, &[3, 2]);
    check("lan_forward", Some(&store), &[q, k, v], |g, x| {
        let out = lan::lan_forward(g, x[0], x[1], x[2], &w)?;
        let a = probe(g, out.global_feat, 9)?;
        let b = probe(g, out.local, 10)?;
        g.add(a, b)
    });
}

#[test]
fn fan_fold_composite() {
    let mut store = ParamStore::new();
    let w = FanWeights::register(&mut store, "fan", 4, 3, &mut rng(22)).unwrap();
    randomize(&mut store, 23, 0.9);
    let mut r = rng(24);
    let g_hat = away_from_zero(&mut r, &[4]);
    let new_local = away_from_zero(&mut r, &[3, 4]);
    let prev = away_from_zero(&mut r, &[3, 4]);
    check("fan_fold", Some(&store), &[g_hat, new_local, prev], |g, x| {
        let y = fan::fan_fold(g, x[0], x[1], x[2], &w)?;
        probe(g, y, 11)
    });
}

#[test]
fn encode_video_two_streams() {
    let mut store = ParamStore::new();
    let enc = EncoderWeights::register(&mut store, &streams(&[3, 2]), &tiny_dims(), &mut rng(25)).unwrap();
    randomize(&mut store, 26, 0.9);
    let mut r = rng(27);
    let s0 = away_from_zero(&mut r, &[3, 3]);
    let s1 = away_from_zero(&mut r, &[3, 2]);
    check("encode_video", Some(&store), &[s0, s1], |g, x| {
        let out = fan::encode_video(g, x, &enc)?;
        let a = probe(g, out.g_tilde, 12)?;
        let b = probe(g, out.local_final, 13)?;
        g.add(a, b)
    });
}

#[test]
fn vapen_elbo_composite() {
    let mut store = ParamStore::new();
    let dims = VapenDims {
        g_tilde: 4,
        hidden: 6,
        delta: 3,
        pos_vocab: 5,
        pos_embed: 2,
        mlp_hidden: 4,
        z: 4,
    };
    let w = VapenWeights::register(&mut store, dims, &mut rng(28)).unwrap();
    randomize(&mut store, 29, 0.7);
    let mut r = rng(30);
    let g_tilde = away_from_zero(&mut r, &[4]);
    let noise = vec![away_from_zero(&mut r, &[3]), away_from_zero(&mut r, &[3])];
    check("vapen.elbo", Some(&store), &[g_tilde], move |g, x| {
        let out = vapen::elbo(g, &[3, 2], x[0], &w, &noise)?;
        let gb = probe(g, out.g_bar, 14)?;
        g.add(out.loss, gb)
    });
}

fn tiny_decoder(store: &mut ParamStore) -> DecoderWeights {
    let dims = DecoderDims {
        vocab: 6,
        word_embed: 3,
        d_h: 5,
        z: 4,
        z_prime: 3,
        x: 2,
    };
    DecoderWeights::register(store, dims, &mut rng(31)).unwrap()
}

#[test]
fn decode_step_teacher_forced() {
    let mut store = ParamStore::new();
    let w = tiny_decoder(&mut store);
    randomize(&mut store, 32, 0.8);
    let mut r = rng(33);
    let local = away_from_zero(&mut r, &[3, 4]);
    let g_bar = away_from_zero(&mut r, &[4]);
    let h = away_from_zero(&mut r, &[5]);
    let c = away_from_zero(&mut r, &[5]);
    let theta = away_from_zero(&mut r, &[4]);
    check("decoder.decode_step", Some(&store), &[local, g_bar, h, c, theta], |g, x| {
        let ctx = decoder::prepare_context(g, x[0], x[1], &w)?;
        let state = decoder::DecoderState {
            h: x[2],
            c: x[3],
            theta_prev: x[4],
        };
        let (logits, next) = decoder::decode_step(g, 4, state, &ctx, &w)?;
        let nll = g.nll(logits, 5)?;
        let t = probe(g, next.theta_prev, 15)?;
        g.add(nll, t)
    });
}

#[test]
fn decoder_two_steps_through_state() {
    let mut store = ParamStore::new();
    let w = tiny_decoder(&mut store);
    randomize(&mut store, 34, 0.8);
    let mut r = rng(35);
    let local = away_from_zero(&mut r, &[2, 4]);
    let g_bar = away_from_zero(&mut r, &[4]);
    check("decoder.teacher_forced", Some(&store), &[local, g_bar], |g, x| {
        let ctx: DecoderContext = decoder::prepare_context(g, x[0], x[1], &w)?;
        let logits = decoder::teacher_forced(g, &[4, 5, 3], &ctx, &w)?;
        loss::xe_loss(g, &logits, &[4, 5, 3])
    });
}

#[test]
fn xe_loss_over_logits() {
    let mut r = rng(36);
    let l: Vec<Tensor> = (0..3).map(|_| away_from_zero(&mut r, &[6])).collect();
    check("xe_loss", None, &l, |g, x| loss::xe_loss(g, x, &[4, 0, 3]));
}

#[test]
fn scst_loss_over_logits() {
    let mut r = rng(37);
    let l: Vec<Tensor> = (0..2).map(|_| away_from_zero(&mut r, &[6])).collect();
    check("scst_loss", None, &l, |g, x| {
        let a = g.log_softmax(x[0]);
        let b = g.log_softmax(x[1]);
        let a = g.pick(a, 4)?;
        let b = g.pick(b, 3)?;
        let lp = g.add(a, b)?;
        Ok(loss::scst_loss(g, lp, 1.3, 0.4))
    });
    let l2 = l.clone();
    check("shared_loss", None, &l2, |g, x| {
        let xe = loss::xe_loss(g, x, &[4, 3])?;
        let a = g.log_softmax(x[0]);
        let lp = g.pick(a, 5)?;
        let rl = loss::scst_loss(g, lp, 0.2, 0.9);
        loss::shared_loss(g, xe, rl, 0.3)
    });
}
