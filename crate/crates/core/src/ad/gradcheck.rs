//! Central finite-difference verification of reverse-mode gradients.

use alloc::vec::Vec;

use super::{AdError, Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Central-difference half step.
    pub step: f64,
    /// Largest admissible relative error.
    pub tol: f64,
    /// Denominator floor: errors are `|ad − fd| / max(|ad|, |fd|, floor)`.
    pub floor: f64,
    /// Additional floor as a fraction of the largest analytic component.
    /// Components far below the gradient's scale are dominated by
    /// round-off in the loss and are judged against that scale instead.
    pub scale_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-6,
            floor: 1e-8,
            scale_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradCheckFailure {
    Mismatch {
        index: usize,
        analytic: f64,
        numeric: f64,
        rel_err: f64,
    },
    /// The loss was not finite at the base point (`index == None`) or at a
    /// perturbed coordinate.
    NonFinite { index: Option<usize>, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the AD gradient of `f` at `params` against central differences.
///
/// `f` receives a fresh graph and the leaf holding the parameters and must
/// return a one-element tensor. Shape errors from `f` propagate; a
/// non-finite loss is reported as a failure.
pub fn finite_diff_check<F>(f: F, params: &Tensor, cfg: &GradCheck) -> Result<GradCheckReport, AdError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AdError>,
{
    let mut g = Graph::new();
    let x = g.param(params.clone());
    let loss = f(&mut g, x)?;
    let base = g.value(loss).item();
    let mut failures = Vec::new();
    if !base.is_finite() {
        failures.push(GradCheckFailure::NonFinite { index: None, value: base });
        return Ok(GradCheckReport {
            analytic: Vec::new(),
            numeric: Vec::new(),
            max_rel_err: f64::INFINITY,
            worst_index: None,
            failures,
        });
    }
    g.backward(loss)?;
    let analytic = match g.grad(x) {
        Some(t) => t.data().to_vec(),
        None => alloc::vec![0.0; params.numel()],
    };

    let eval = |p: Tensor| -> Result<f64, AdError> {
        let mut g = Graph::no_grad();
        let x = g.param(p);
        let loss = f(&mut g, x)?;
        Ok(g.value(loss).item())
    };

    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = cfg.floor.max(cfg.scale_floor * scale);
    let mut numeric = Vec::with_capacity(params.numel());
    let mut max_rel_err = 0.0f64;
    let mut worst_index = None;
    for i in 0..params.numel() {
        let mut plus = params.clone();
        plus.data_mut()[i] += cfg.step;
        let mut minus = params.clone();
        minus.data_mut()[i] -= cfg.step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        if !fp.is_finite() || !fm.is_finite() {
            let value = if fp.is_finite() { fm } else { fp };
            failures.push(GradCheckFailure::NonFinite { index: Some(i), value });
            numeric.push(f64::NAN);
            continue;
        }
        let fd = (fp - fm) / (2.0 * cfg.step);
        numeric.push(fd);
        let rel = relative_error(analytic[i], fd, floor);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = Some(i);
        }
        if rel > cfg.tol {
            failures.push(GradCheckFailure::Mismatch {
                index: i,
                analytic: analytic[i],
                numeric: fd,
                rel_err: rel,
            });
        }
    }
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_err,
        worst_index,
        failures,
    })
}
