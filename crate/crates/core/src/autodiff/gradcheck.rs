use super::params::{BoundParams, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-8;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-parameter relative error.
    pub max_rel_error: f64,
    /// Parameter that produced `max_rel_error`.
    pub worst: Option<String>,
    /// `(name, relative error)` for every parameter tensor.
    pub per_param: Vec<(String, f64)>,
    /// Largest absolute elementwise difference seen.
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Relative error between two gradient blocks:
/// `|a - n| / max(|a|, |n|, 1e-8)` with Euclidean norms over the block.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(DENOM_FLOOR)
}

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>> + ?Sized,
{
    let tape = Tape::new();
    let params = store.bind(&tape);
    let loss = f(&tape, &params)?;
    if loss.with_value(Tensor::numel) != 1 {
        return Err(Error::shape("grad_check", &loss.shape(), &[1]));
    }
    let v = loss.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Checks every parameter of `store` against central finite differences.
pub fn grad_check<F>(store: &mut ParamStore, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    grad_check_with_step(store, DEFAULT_STEP, f)
}

pub fn grad_check_with_step<F>(store: &mut ParamStore, step: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>>,
{
    grad_check_combination(store, step, &f, &[&f], |_, _| 1.0)
}

/// A scalar-valued graph over bound parameters.
pub type LossFn<'a> = dyn for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>> + 'a;

/// Compares the tape gradient of `f` with `sum_k weight(k, name) * d parts[k] / d theta`,
/// where the derivatives are central differences. Graphs with gradient
/// reversal need this form: their backward pass scales the true derivative
/// on one side of the reversal, so it is checked against the correspondingly
/// scaled numeric derivative of each part.
pub fn grad_check_combination<F, W>(
    store: &mut ParamStore,
    step: f64,
    f: &F,
    parts: &[&LossFn<'_>],
    weight: W,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Var<'t>> + ?Sized,
    W: Fn(usize, &str) -> f64,
{
    let analytic = {
        let tape = Tape::new();
        let params = store.bind(&tape);
        let loss = f(&tape, &params)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {}", loss.item())));
        }
        let grads = loss.backward()?;
        params.grads(&grads)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        per_param: Vec::with_capacity(store.len()),
        max_abs_error: 0.0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let weights: Vec<f64> = (0..parts.len()).map(|k| weight(k, &name)).collect();
        let n = store.get(id).numel();
        let mut numeric = vec![0.0; n];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).data()[k];
            for (part, &w) in parts.iter().zip(&weights) {
                if w == 0.0 {
                    continue;
                }
                store.get_mut(id).data_mut()[k] = orig + step;
                let plus = eval_loss(store, part);
                store.get_mut(id).data_mut()[k] = orig - step;
                let minus = eval_loss(store, part);
                store.get_mut(id).data_mut()[k] = orig;
                *slot += w * (plus? - minus?) / (2.0 * step);
            }
        }
        let a = &analytic[id.0];
        let rel = relative_error(a, &numeric);
        let abs = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        report.max_abs_error = report.max_abs_error.max(abs);
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(name.clone());
        }
        report.per_param.push((name, rel));
    }
    Ok(report)
}

/// A graph with several scalar outputs, evaluated together.
pub type MultiLossFn<'a> = dyn for<'t> Fn(&'t Tape, &BoundParams<'t>) -> Result<Vec<Var<'t>>> + 'a;

/// One comparison inside [`grad_check_shared`]: the tape gradient of output
/// `output` against `sum_k weights(name)[k] * d output_k / d theta`.
pub struct SharedTarget<'a> {
    pub output: usize,
    pub weights: Box<dyn Fn(&str) -> Vec<f64> + 'a>,
}

impl<'a> SharedTarget<'a> {
    /// Tape gradient of `output` against its own numeric derivative.
    pub fn plain(output: usize) -> Self {
        Self {
            output,
            weights: Box::new(move |_| {
                let mut w = vec![0.0; output + 1];
                w[output] = 1.0;
                w
            }),
        }
    }
}

/// Like [`grad_check_combination`] for many checks at once: every perturbed
/// evaluation of `f` feeds the numeric derivative of all its outputs, so the
/// sweep costs two evaluations per parameter entry regardless of how many
/// targets are checked.
pub fn grad_check_shared(
    store: &mut ParamStore,
    step: f64,
    f: &MultiLossFn<'_>,
    targets: &[SharedTarget<'_>],
) -> Result<Vec<GradCheckReport>> {
    let eval = |store: &ParamStore| -> Result<Vec<f64>> {
        let tape = Tape::new();
        let params = store.bind(&tape);
        f(&tape, &params)?
            .iter()
            .map(|v| {
                if v.with_value(Tensor::numel) != 1 {
                    return Err(Error::shape("grad_check", &v.shape(), &[1]));
                }
                let x = v.item();
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::NonFinite(format!("loss evaluated to {x}")))
                }
            })
            .collect()
    };

    let mut analytic = Vec::with_capacity(targets.len());
    for t in targets {
        let tape = Tape::new();
        let params = store.bind(&tape);
        let outputs = f(&tape, &params)?;
        let loss = outputs
            .get(t.output)
            .ok_or_else(|| Error::Invalid(format!("no output {} to check", t.output)))?;
        if !loss.item().is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {}", loss.item())));
        }
        analytic.push(params.grads(&loss.backward()?));
    }

    let mut reports: Vec<GradCheckReport> = targets
        .iter()
        .map(|_| GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            per_param: Vec::with_capacity(store.len()),
            max_abs_error: 0.0,
        })
        .collect();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let n = store.get(id).numel();
        // derivative[k][j]: central difference of output j wrt entry k.
        let mut derivative = Vec::with_capacity(n);
        for k in 0..n {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + step;
            let plus = eval(store);
            store.get_mut(id).data_mut()[k] = orig - step;
            let minus = eval(store);
            store.get_mut(id).data_mut()[k] = orig;
            let (plus, minus) = (plus?, minus?);
            derivative.push(
                plus.iter()
                    .zip(&minus)
                    .map(|(p, m)| (p - m) / (2.0 * step))
                    .collect::<Vec<f64>>(),
            );
        }
        for ((t, a), report) in targets.iter().zip(&analytic).zip(&mut reports) {
            let w = (t.weights)(&name);
            let numeric: Vec<f64> = derivative
                .iter()
                .map(|d| w.iter().zip(d).map(|(w, d)| w * d).sum())
                .collect();
            let a = &a[id.0];
            let rel = relative_error(a, &numeric);
            let abs = a
                .iter()
                .zip(&numeric)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            report.max_abs_error = report.max_abs_error.max(abs);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(name.clone());
            }
            report.per_param.push((name.clone(), rel));
        }
    }
    Ok(reports)
}

/// Convenience form over plain input tensors; inputs are named `input0`, `input1`, ...
pub fn grad_check_inputs<F>(inputs: &[Tensor], f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("input{i}"), t.clone()))
        .collect();
    grad_check(&mut store, |tape, p| {
        let vars: Vec<Var> = ids.iter().map(|&id| p[id]).collect();
        f(tape, &vars)
    })
}
