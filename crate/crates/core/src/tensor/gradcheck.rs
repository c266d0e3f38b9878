//! Central finite-difference checks for analytic gradients.
//!
//! The differences are taken from forward evaluations only, so they stand
//! independent of every backward rule they are compared against.

use super::{no_grad, Tensor};
use crate::error::Result;
use crate::nn::Module;

/// Acceptance thresholds for one gradient element.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    /// Step used for `(f(x+h) - f(x-h)) / 2h`.
    pub step: f64,
    /// Maximum relative error.
    pub rel: f64,
    /// Below this finite-difference magnitude the absolute error is used.
    pub small: f64,
    /// Absolute error allowed for small gradients.
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { step: 1e-5, rel: 1e-4, small: 1e-6, abs: 1e-7 }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        if numeric.abs() < self.small {
            diff < self.abs
        } else {
            diff / analytic.abs().max(numeric.abs()) < self.rel
        }
    }
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Human-readable description of each failing element.
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures.is_empty()
    }

    fn record(&mut self, label: &str, idx: usize, analytic: f64, numeric: f64, tol: &Tolerance) {
        self.checked += 1;
        let diff = (analytic - numeric).abs();
        self.max_abs_err = self.max_abs_err.max(diff);
        let scale = analytic.abs().max(numeric.abs());
        if numeric.abs() >= tol.small && scale > 0.0 {
            self.max_rel_err = self.max_rel_err.max(diff / scale);
        }
        if !tol.accepts(analytic, numeric) {
            self.failures
                .push(format!("{label}[{idx}]: analytic {analytic:e} vs numeric {numeric:e}"));
        }
    }

    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.failures.extend(other.failures);
    }
}

/// Check `f`'s gradient with respect to every element of every input.
///
/// `inputs` supplies the point of evaluation; each is re-created as a leaf
/// requiring gradients before `f` is called.
pub fn check_inputs<F>(inputs: &[Tensor], f: F, tol: Tolerance) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|t| Tensor::parameter(t.data().to_vec(), t.shape()))
        .collect::<Result<_>>()?;
    let loss = f(&leaves)?;
    loss.backward()?;
    let mut report = GradReport::default();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for i in 0..leaf.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut shifted = leaves.clone();
                let mut data = leaf.data().to_vec();
                data[i] += delta;
                shifted[k] = Tensor::new(data, leaf.shape())?;
                no_grad(|| f(&shifted))?.item()
            };
            let numeric = (eval(tol.step)? - eval(-tol.step)?) / (2.0 * tol.step);
            report.record(&format!("input{k}"), i, analytic[i], numeric, &tol);
        }
    }
    Ok(report)
}

/// Check the gradient of `loss_fn(module)` with respect to the module's
/// learnable parameters. `stride` > 1 samples every `stride`-th element of
/// each parameter (the first element of every parameter is always checked).
pub fn check_module<M, F>(module: &mut M, loss_fn: F, tol: Tolerance, stride: usize) -> Result<GradReport>
where
    M: Module,
    F: Fn(&M) -> Result<Tensor>,
{
    module.zero_grad();
    let loss = loss_fn(module)?;
    loss.backward()?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit_params(&mut |p| {
        let g = p.value().grad().unwrap_or_else(|| vec![0.0; p.value().numel()]);
        analytic.push((p.name().to_string(), g));
    });
    drop(loss);

    let mut report = GradReport::default();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for i in (0..grad.len()).step_by(stride.max(1)) {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut original = 0.0;
                let mut k = 0;
                module.visit_params_mut(&mut |p| {
                    if k == pi {
                        original = p.value().data()[i];
                        p.nudge(i, delta);
                    }
                    k += 1;
                });
                let out = no_grad(|| loss_fn(module)).and_then(|t| t.item());
                let mut k = 0;
                module.visit_params_mut(&mut |p| {
                    if k == pi {
                        p.set_element(i, original);
                    }
                    k += 1;
                });
                out
            };
            let numeric = (eval(tol.step)? - eval(-tol.step)?) / (2.0 * tol.step);
            report.record(name, i, grad[i], numeric, &tol);
        }
    }
    Ok(report)
}
