//! Central finite-difference gradient checking.
//!
//! The function under test builds a scalar loss on a fresh [`Graph`] from
//! leaf inputs (and, optionally, the parameters of a store). Both the leaf
//! inputs and every parameter element are perturbed.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{GradStore, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Gradients of a scalar function w.r.t. its inputs and parameters.
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub inputs: Vec<Tensor>,
    pub params: Option<GradStore>,
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub label: String,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Denominator floor so entries whose true gradient is ~0 are judged by
/// absolute error instead of a meaningless ratio.
const REL_FLOOR: f64 = 1e-6;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn eval<F>(store: Option<&ParamStore>, inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let mut g = match store {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let t = g.value(loss);
    if !t.is_scalar() {
        return Err(Error::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.item())
}

pub fn analytic_gradients<F>(store: Option<&ParamStore>, inputs: &[Tensor], f: &F) -> Result<GradientSet>
where
    F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let mut g = match store {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    };
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    Ok(GradientSet {
        inputs: vars.iter().map(|v| grads.tensor(&g, *v)).collect(),
        params: store.map(|_| grads.param_grads(&g)),
    })
}

pub fn numeric_gradients<F>(store: Option<&ParamStore>, inputs: &[Tensor], f: &F, h: f64) -> Result<GradientSet>
where
    F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let base = eval(store, inputs, f)?;
    let again = eval(store, inputs, f)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(format!("{base} != {again}")));
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut input_grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for k in 0..inputs[i].len() {
            let orig = work[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let fp = eval(store, &work, f)?;
            work[i].data_mut()[k] = orig - h;
            let fm = eval(store, &work, f)?;
            work[i].data_mut()[k] = orig;
            grad.data_mut()[k] = (fp - fm) / (2.0 * h);
        }
        input_grads.push(grad);
    }

    let params = match store {
        None => None,
        Some(s) => {
            let mut local = s.clone();
            let mut out = GradStore::zeros_like(s);
            let ids: Vec<_> = s.ids().collect();
            for id in ids {
                for k in 0..s.get(id).len() {
                    let orig = local.get(id).data()[k];
                    local.get_mut(id).data_mut()[k] = orig + h;
                    let fp = eval(Some(&local), inputs, f)?;
                    local.get_mut(id).data_mut()[k] = orig - h;
                    let fm = eval(Some(&local), inputs, f)?;
                    local.get_mut(id).data_mut()[k] = orig;
                    out.get_mut(id).data_mut()[k] = (fp - fm) / (2.0 * h);
                }
            }
            Some(out)
        }
    };
    Ok(GradientSet {
        inputs: input_grads,
        params,
    })
}

/// Per-input and per-parameter maximum relative error.
pub fn compare_gradients(
    analytic: &GradientSet,
    numeric: &GradientSet,
    store: Option<&ParamStore>,
    tol: f64,
) -> GradCheckReport {
    let mut entries = Vec::new();
    for (i, (a, n)) in analytic.inputs.iter().zip(&numeric.inputs).enumerate() {
        let err = a
            .data()
            .iter()
            .zip(n.data())
            .map(|(a, n)| rel_error(*a, *n))
            .fold(0.0, f64::max);
        entries.push(GradCheckEntry {
            label: format!("input[{i}]"),
            max_rel_error: err,
        });
    }
    if let (Some(a), Some(n), Some(s)) = (&analytic.params, &numeric.params, store) {
        for id in s.ids() {
            let err = a
                .get(id)
                .data()
                .iter()
                .zip(n.get(id).data())
                .map(|(a, n)| rel_error(*a, *n))
                .fold(0.0, f64::max);
            entries.push(GradCheckEntry {
                label: s.name(id).to_string(),
                max_rel_error: err,
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        entries,
        max_rel_error,
        tol,
    }
}

/// Compares reverse-mode gradients with central differences of step `h`.
/// Fails with [`Error::NonDeterministic`] if two identical forward passes
/// disagree.
pub fn grad_check<F>(
    store: Option<&ParamStore>,
    inputs: &[Tensor],
    f: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: for<'a> Fn(&mut Graph<'a>, &[Var]) -> Result<Var>,
{
    let numeric = numeric_gradients(store, inputs, &f, h)?;
    let analytic = analytic_gradients(store, inputs, &f)?;
    Ok(compare_gradients(&analytic, &numeric, store, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_has_zero_error() {
        let x = Tensor::vector(vec![0.3, -1.2]);
        let r = grad_check(None, &[x], |g, v| Ok(g.sum(v[0])), 1e-5, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-9);
        assert!(r.passed());
    }

    #[test]
    fn sigmoid_of_linear_passes() {
        let x = Tensor::vector(vec![0.4, -0.9, 0.2]);
        let w = Tensor::matrix(2, 3, vec![0.5, -0.3, 0.8, -0.6, 0.1, 0.7]).unwrap();
        let r = grad_check(
            None,
            &[x, w],
            |g, v| {
                let y = g.linear(v[0], v[1], None)?;
                let y = g.sigmoid(y);
                Ok(g.sum(y))
            },
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn doubled_gradient_fails() {
        let x = Tensor::vector(vec![0.4, -0.9]);
        let f = |g: &mut Graph<'_>, v: &[Var]| {
            let y = g.tanh(v[0]);
            Ok(g.sum(y))
        };
        let numeric = numeric_gradients(None, &[x.clone()], &f, 1e-5).unwrap();
        let mut analytic = analytic_gradients(None, &[x], &f).unwrap();
        for v in analytic.inputs[0].data_mut() {
            *v *= 2.0;
        }
        let r = compare_gradients(&analytic, &numeric, None, 1e-4);
        assert!(!r.passed());
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let calls = core::cell::Cell::new(0.0);
        let x = Tensor::vector(vec![0.1]);
        let r = grad_check(
            None,
            &[x],
            |g, v| {
                calls.set(calls.get() + 1.0);
                let s = g.sum(v[0]);
                Ok(g.scale(s, calls.get()))
            },
            1e-5,
            1e-4,
        );
        assert!(matches!(r, Err(Error::NonDeterministic(_))));
    }
}
