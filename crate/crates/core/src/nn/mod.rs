//! Minimal dense feedforward engine with explicit forward and backward passes.
//!
//! The client half `u(wc; x)` and the server half `h(ws; z)` of a split model
//! are both [`DenseNetwork`]s. `backward` is a vector-Jacobian product, so the
//! same routine yields parameter gradients and gradients with respect to the
//! network input (the cut-layer activations on the server side).

mod network;
mod split;

pub use network::{
    Activation, DenseLayer, DenseNetwork, ForwardCache, LayerGradient, ParameterGradient,
};
pub use split::SplitModel;

use crate::error::{ensure, Result};
use crate::tensor::Matrix;

/// One labelled example.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Per-example cross-entropy losses and the per-example gradient with
/// respect to the logits (`softmax - onehot`), unscaled by the batch size.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    let classes = logits.rows();
    ensure!(
        labels.len() == logits.cols(),
        Shape,
        "{} labels for {} logit columns",
        labels.len(),
        logits.cols()
    );
    let mut losses = Vec::with_capacity(labels.len());
    let mut grad = Matrix::zeros(classes, logits.cols());
    for (j, &label) in labels.iter().enumerate() {
        ensure!(
            label < classes,
            Domain,
            "label {label} out of range for {classes} classes"
        );
        let col = logits.column(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        losses.push(total.ln() - (col[label] - max));
        let g = grad.column_mut(j);
        for (k, e) in exps.iter().enumerate() {
            g[k] = e / total;
        }
        g[label] -= 1.0;
    }
    Ok((losses, grad))
}

/// Index of the largest entry in each column (first one on ties).
pub fn argmax_columns(m: &Matrix) -> Vec<usize> {
    m.columns()
        .map(|c| {
            c.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Packs samples into a `features x batch` matrix and a label vector.
pub fn stack_samples<'a, I>(samples: I) -> Result<(Matrix, Vec<usize>)>
where
    I: IntoIterator<Item = &'a DataSample>,
{
    let mut cols = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        cols.push(s.features.as_slice());
        labels.push(s.label);
    }
    Ok((Matrix::from_columns(&cols)?, labels))
}
