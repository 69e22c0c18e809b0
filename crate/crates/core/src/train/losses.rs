use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::rc::Rc;

/// Mean binary cross-entropy with logits over all `n×C` entries.
pub fn bce_multilabel_loss<'t>(logits: Var<'t>, targets: &Tensor) -> Result<Var<'t>> {
    if logits.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "bce_multilabel_loss",
            lhs: logits.shape(),
            rhs: targets.shape().to_vec(),
        });
    }
    if let Some(k) = targets.data().iter().position(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::validation(format!(
            "multilabel target {} at flat index {k} is not 0 or 1",
            targets.data()[k]
        )));
    }
    Ok(logits.bce_with_logits(Rc::new(targets.clone()))?.mean())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy_loss<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape {
            op: "cross_entropy_loss",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    let classes = shape[1];
    let mut one_hot = Tensor::zeros(&[labels.len(), classes]);
    for (i, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::validation(format!(
                "label {c} at row {i} out of range for {classes} classes"
            )));
        }
        one_hot.data_mut()[i * classes + c] = 1.0;
    }
    let picked = logits
        .log_softmax_rows()
        .mul(&logits.tape().constant(one_hot))?
        .sum();
    Ok(picked.scale(-1.0 / labels.len().max(1) as f32))
}
