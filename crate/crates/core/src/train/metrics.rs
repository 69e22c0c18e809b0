use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Evaluation metrics for one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Metrics {
    Multilabel {
        micro_f1: f64,
    },
    Multiclass {
        accuracy: f64,
        mean_class_accuracy: f64,
    },
}

impl Metrics {
    /// The metric used for model selection: micro-F1 or accuracy.
    pub fn primary(&self) -> f64 {
        match *self {
            Metrics::Multilabel { micro_f1 } => micro_f1,
            Metrics::Multiclass { accuracy, .. } => accuracy,
        }
    }
}

/// Micro-averaged F1 with a positive prediction wherever the logit is > 0.
/// Returns 0 when there are no true positives.
pub fn micro_f1(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "micro_f1",
            lhs: logits.shape().to_vec(),
            rhs: targets.shape().to_vec(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&x, &y) in logits.data().iter().zip(targets.data()) {
        match (x > 0.0, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Row-wise argmax; ties go to the smaller class index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// Unweighted mean of per-class recall; classes absent from `labels` are
/// left out of the mean.
pub fn mean_class_accuracy(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let mut hits = vec![0u64; classes];
    let mut totals = vec![0u64; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= classes {
            return Err(Error::validation(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let present: Vec<f64> = hits
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(&h, &t)| h as f64 / t as f64)
        .collect();
    if present.is_empty() {
        return Ok(0.0);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            op: "metrics",
            lhs: vec![predictions.len()],
            rhs: vec![labels.len()],
        });
    }
    Ok(())
}

/// Accuracy and mean class accuracy of `logits` against class labels.
pub fn multiclass_metrics(logits: &Tensor, labels: &[usize]) -> Result<Metrics> {
    let pred = argmax_rows(logits);
    Ok(Metrics::Multiclass {
        accuracy: accuracy(&pred, labels)?,
        mean_class_accuracy: mean_class_accuracy(&pred, labels, logits.cols())?,
    })
}
