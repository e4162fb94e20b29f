//! Training objectives: token cross-entropy, self-critical policy gradient
//! and their convex combination.

use alloc::format;

use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};
use crate::vocab::PAD;

/// Summed negative log-likelihood over non-PAD targets and the number of
/// tokens counted.
pub fn xe_sum(g: &mut Graph<'_>, logits: &[Var], targets: &[usize]) -> Result<(Option<Var>, usize)> {
    if logits.len() != targets.len() {
        return Err(Error::Invalid(format!(
            "xe_loss: {} logit steps for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut terms = alloc::vec::Vec::with_capacity(targets.len());
    for (&l, &t) in logits.iter().zip(targets) {
        if t != PAD {
            terms.push(g.nll(l, t)?);
        }
    }
    if terms.is_empty() {
        return Ok((None, 0));
    }
    let n = terms.len();
    Ok((Some(g.add_n(&terms)?), n))
}

/// `-Σ_t log softmax(logits_t)[w_t]` divided by the number of non-PAD tokens.
pub fn xe_loss(g: &mut Graph<'_>, logits: &[Var], targets: &[usize]) -> Result<Var> {
    match xe_sum(g, logits, targets)? {
        (Some(sum), n) => Ok(g.scale(sum, 1.0 / n as f64)),
        (None, _) => Err(Error::Empty { op: "xe_loss" }),
    }
}

/// Cross-entropy over a batch of sequences, normalized by the batch's total
/// token count.
pub fn xe_loss_batch(g: &mut Graph<'_>, batch: &[(&[Var], &[usize])]) -> Result<Var> {
    let mut sums = alloc::vec::Vec::with_capacity(batch.len());
    let mut count = 0;
    for (logits, targets) in batch {
        let (s, n) = xe_sum(g, logits, targets)?;
        if let Some(s) = s {
            sums.push(s);
            count += n;
        }
    }
    if count == 0 {
        return Err(Error::Empty { op: "xe_loss_batch" });
    }
    let total = g.add_n(&sums)?;
    Ok(g.scale(total, 1.0 / count as f64))
}

/// `-(r_sample - r_baseline) · log p(w^s)`.
pub fn scst_loss(g: &mut Graph<'_>, sample_log_prob: Var, r_sample: f64, r_baseline: f64) -> Var {
    g.scale(sample_log_prob, -(r_sample - r_baseline))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    Ok(())
}

/// `η · xe + (1 - η) · rl`.
pub fn shared_loss(g: &mut Graph<'_>, xe: Var, rl: Var, eta: f64) -> Result<Var> {
    check_eta(eta)?;
    if eta == 1.0 {
        return Ok(xe);
    }
    if eta == 0.0 {
        return Ok(rl);
    }
    let a = g.scale(xe, eta);
    let b = g.scale(rl, 1.0 - eta);
    g.add(a, b)
}

pub fn shared_loss_value(xe: f64, rl: f64, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    Ok(match eta {
        e if e == 1.0 => xe,
        e if e == 0.0 => rl,
        e => e * xe + (1.0 - e) * rl,
    })
}
