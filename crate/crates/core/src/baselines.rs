//! Comparison distillers: soft-label KD, FitNet hints and attention transfer.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::layers::Task;
use crate::lsp::{Kernel, LspPairing};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Distillation method and its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Distiller {
    None,
    /// Combined as `(1 − alpha)·task + alpha·kd`.
    Kd {
        temperature: f32,
        alpha: f32,
    },
    /// Combined as `task + weight·fitnet`.
    Fitnet {
        pair: (usize, usize),
        weight: f32,
    },
    /// Combined as `task + weight·at`.
    At {
        pair: (usize, usize),
        weight: f32,
    },
    /// Combined as `task + lambda·lsp`.
    Lsp {
        kernel: Kernel,
        lambda: f32,
        pairing: LspPairing,
    },
}

impl Distiller {
    pub fn name(&self) -> &'static str {
        match self {
            Distiller::None => "none",
            Distiller::Kd { .. } => "kd",
            Distiller::Fitnet { .. } => "fitnet",
            Distiller::At { .. } => "at",
            Distiller::Lsp { .. } => "lsp",
        }
    }

    pub fn validate(&self, task: Task, teacher_layers: usize, student_layers: usize) -> Result<()> {
        let pair_ok = |(t, s): (usize, usize)| {
            if t >= teacher_layers || s >= student_layers {
                Err(Error::validation(format!(
                    "layer pair {t}:{s} out of range for {teacher_layers} teacher and {student_layers} student layers"
                )))
            } else {
                Ok(())
            }
        };
        let non_negative = |name: &str, v: f32| {
            if v >= 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be >= 0, got {v}")))
            }
        };
        match self {
            Distiller::None => Ok(()),
            Distiller::Kd { temperature, alpha } => {
                if task == Task::Multilabel {
                    return Err(kd_multilabel_error());
                }
                if !(*temperature > 0.0) {
                    return Err(Error::validation(format!(
                        "kd temperature must be > 0, got {temperature}"
                    )));
                }
                non_negative("kd alpha", *alpha)
            }
            Distiller::Fitnet { pair, weight } | Distiller::At { pair, weight } => {
                pair_ok(*pair)?;
                non_negative("distill weight", *weight)
            }
            Distiller::Lsp {
                kernel,
                lambda,
                pairing,
            } => {
                kernel.validate()?;
                pairing.validate(teacher_layers, student_layers)?;
                non_negative("lambda", *lambda)
            }
        }
    }
}

fn kd_multilabel_error() -> Error {
    Error::UnsupportedTask(
        "KD softens a softmax over classes; the multilabel task is trained with per-label \
         binary cross-entropy and has no softmax to soften"
            .into(),
    )
}

/// `T² · mean_rows KL(softmax(teacher/T) ‖ softmax(student/T))`.
pub fn kd_loss<'t>(
    student_logits: Var<'t>,
    teacher_logits: &Tensor,
    temperature: f32,
    task: Task,
) -> Result<Var<'t>> {
    if task == Task::Multilabel {
        return Err(kd_multilabel_error());
    }
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::Shape {
            op: "kd_loss",
            lhs: student_logits.shape(),
            rhs: teacher_logits.shape().to_vec(),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::contract(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    let tape = student_logits.tape();
    let inv_t = 1.0 / temperature;
    let log_pt = tape
        .constant(teacher_logits.clone())
        .scale(inv_t)
        .log_softmax_rows()
        .detach();
    let pt = log_pt.exp();
    let log_ps = student_logits.scale(inv_t).log_softmax_rows();
    let rows = teacher_logits.rows().max(1) as f32;
    Ok(pt
        .mul(&log_pt.sub(&log_ps)?)?
        .sum()
        .scale(temperature * temperature / rows))
}

/// Mean squared error between `student·mapper` and the teacher features.
pub fn fitnet_loss<'t>(
    student_feat: Var<'t>,
    teacher_feat: &Tensor,
    mapper: Var<'t>,
) -> Result<Var<'t>> {
    let mapped = student_feat.matmul(&mapper)?;
    if mapped.shape() != teacher_feat.shape() {
        return Err(Error::Shape {
            op: "fitnet_loss",
            lhs: mapped.shape(),
            rhs: teacher_feat.shape().to_vec(),
        });
    }
    let diff = mapped.sub(&student_feat.tape().constant(teacher_feat.clone()))?;
    Ok(diff.mul(&diff)?.mean())
}

fn teacher_attention(feat: &Tensor) -> Result<Vec<f32>> {
    let att: Vec<f64> = (0..feat.rows())
        .map(|i| feat.row(i).iter().map(|v| v.abs() as f64).sum())
        .collect();
    let norm = att.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::contract("teacher attention map is all zero"));
    }
    Ok(att.iter().map(|v| (v / norm) as f32).collect())
}

/// `‖a_s/‖a_s‖ − a_t/‖a_t‖‖²` with per-node attention `a_i = Σ_c |F_ic|`.
pub fn at_loss<'t>(student_feat: Var<'t>, teacher_feat: &Tensor) -> Result<Var<'t>> {
    let rows = student_feat.value().rows();
    if rows != teacher_feat.rows() {
        return Err(Error::Shape {
            op: "at_loss",
            lhs: student_feat.shape(),
            rhs: teacher_feat.shape().to_vec(),
        });
    }
    let target = teacher_attention(teacher_feat)?;
    let a_s = student_feat.abs().row_sum();
    let norm = a_s.mul(&a_s)?.sum();
    if norm.item() == 0.0 {
        return Err(Error::contract("student attention map is all zero"));
    }
    let unit = a_s.mul_scalar(&norm.sqrt().powi(-1))?;
    let diff = unit.sub(&student_feat.tape().constant(Tensor::vector(target)))?;
    Ok(diff.mul(&diff)?.sum())
}

/// [`at_loss`] computed separately on consecutive row blocks and averaged.
pub fn at_loss_blocks<'t>(
    student_feat: Var<'t>,
    teacher_feat: &Tensor,
    block_sizes: &[usize],
) -> Result<Var<'t>> {
    let mut start = 0;
    let mut total: Option<Var<'t>> = None;
    for &size in block_sizes {
        let part = at_loss(
            student_feat.slice_rows(start, start + size)?,
            &teacher_feat.slice_rows(start, start + size),
        )?;
        total = Some(match total {
            Some(t) => t.add(&part)?,
            None => part,
        });
        start += size;
    }
    let total = total.ok_or_else(|| Error::contract("at_loss_blocks with no blocks"))?;
    Ok(total.scale(1.0 / block_sizes.len() as f32))
}
