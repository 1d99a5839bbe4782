//! Cross-entropy losses over batch outputs.
//!
//! Both losses average over the batch, and the returned gradient is the
//! gradient of that mean. Downstream backward passes therefore must not
//! normalize again.

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before taking logs so a
/// saturated output cannot produce an infinite loss or gradient.
const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Single sigmoid output column, labels in {0, 1}.
    BinaryCrossEntropy,
    /// One probability column per class (softmax output), labels index a column.
    CategoricalCrossEntropy,
}

/// Mean loss over the batch plus its gradient with respect to `output`.
pub fn loss_and_grad(
    output: &Matrix,
    labels: &[usize],
    kind: LossKind,
) -> Result<(f64, Matrix)> {
    if output.rows() != labels.len() {
        return Err(Error::shape(
            "loss",
            format!("{} labels", output.rows()),
            format!("{} labels", labels.len()),
        ));
    }
    if output.rows() == 0 {
        return Err(Error::shape("loss", "a nonempty batch", "0 rows"));
    }
    let n = output.rows() as f64;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut total = 0.0;
    match kind {
        LossKind::BinaryCrossEntropy => {
            if output.cols() != 1 {
                return Err(Error::shape(
                    "binary cross-entropy",
                    "1 output column",
                    format!("{} columns", output.cols()),
                ));
            }
            for (r, &label) in labels.iter().enumerate() {
                if label > 1 {
                    return Err(Error::Data(format!(
                        "binary label {label} at row {r} is outside {{0, 1}}"
                    )));
                }
                let p = output.get(r, 0).clamp(PROB_EPS, 1.0 - PROB_EPS);
                let y = label as f64;
                total += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                grad.set(r, 0, (-y / p + (1.0 - y) / (1.0 - p)) / n);
            }
        }
        LossKind::CategoricalCrossEntropy => {
            if output.cols() < 2 {
                return Err(Error::shape(
                    "categorical cross-entropy",
                    "at least 2 output columns",
                    format!("{} columns", output.cols()),
                ));
            }
            for (r, &label) in labels.iter().enumerate() {
                if label >= output.cols() {
                    return Err(Error::Data(format!(
                        "class label {label} at row {r} is outside 0..{}",
                        output.cols()
                    )));
                }
                let p = output.get(r, label).clamp(PROB_EPS, 1.0 - PROB_EPS);
                total += -p.ln();
                grad.set(r, label, -1.0 / (p * n));
            }
        }
    }
    Ok((total / n, grad))
}
