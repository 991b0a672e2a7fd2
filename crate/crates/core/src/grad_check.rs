//! Central finite-difference oracle for analytic gradients.

use ndarray::{Array, Dimension};

use crate::error::{Error, Result};
use crate::loss::LossOutput;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffConfig {
    pub step: f64,
    /// Bound on the per-coordinate relative error.
    pub tolerance: f64,
    /// Coordinates whose absolute error is below this pass regardless of relative error.
    pub abs_floor: f64,
}

impl Default for FiniteDiffConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-8,
        }
    }
}

impl FiniteDiffConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.tolerance > 0.0 && self.abs_floor >= 0.0) {
            return Err(Error::Config(format!(
                "finite differences need step > 0 and tolerance > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], config: &FiniteDiffConfig) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    config.validate()?;
    let h = config.step;
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite-difference probe"));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: Option<usize>,
    pub coordinates: usize,
    pub pass: bool,
    /// The loss flagged the point as degenerate; nothing was compared.
    pub skipped: bool,
}

/// Compares the analytic gradient of `loss` at `x` against finite differences.
pub fn check_gradient<F>(mut loss: F, x: &[f64], config: &FiniteDiffConfig) -> Result<GradReport>
where
    F: FnMut(&[f64]) -> Result<LossOutput<Vec<f64>>>,
{
    let analytic = loss(x)?;
    if analytic.gradient.len() != x.len() {
        return Err(Error::Shape(format!(
            "analytic gradient has {} entries for {} inputs",
            analytic.gradient.len(),
            x.len()
        )));
    }
    if analytic.degenerate {
        log::warn!("gradient check skipped: loss flagged the point as degenerate");
        return Ok(GradReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: None,
            coordinates: x.len(),
            pass: true,
            skipped: true,
        });
    }
    let numeric = finite_diff_gradient(|p| loss(p).map(|o| o.value), x, config)?;
    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: None,
        coordinates: x.len(),
        pass: true,
        skipped: false,
    };
    for (i, (a, n)) in analytic.gradient.iter().zip(&numeric).enumerate() {
        let abs = (a - n).abs();
        report.max_abs_error = report.max_abs_error.max(abs);
        if abs <= config.abs_floor {
            continue;
        }
        let rel = abs / a.abs().max(n.abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    report.pass = report.max_rel_error <= config.tolerance;
    Ok(report)
}

/// Flattens an n-dimensional gradient for [`check_gradient`].
pub fn flatten<D: Dimension>(out: LossOutput<Array<f64, D>>) -> LossOutput<Vec<f64>> {
    LossOutput {
        value: out.value,
        gradient: out.gradient.iter().copied().collect(),
        degenerate: out.degenerate,
    }
}
