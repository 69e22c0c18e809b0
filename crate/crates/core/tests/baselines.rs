mod common;

use common::*;
use lspd_core::autodiff::{gradient_check, gradient_check_multi};
use lspd_core::baselines::{at_loss, at_loss_blocks, fitnet_loss, kd_loss};
use lspd_core::{Distiller, Error, GraphMode, Kernel, LspPairing, Tape, Task, Tensor};
use rand::Rng;

fn softmax64(row: &[f32], t: f64) -> Vec<f64> {
    let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let e: Vec<f64> = row.iter().map(|&v| ((v as f64 - m) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn kd_oracle(student: &Tensor, teacher: &Tensor, t: f64) -> f64 {
    let rows = student.rows();
    let total: f64 = (0..rows)
        .map(|i| {
            let p = softmax64(teacher.row(i), t);
            let q = softmax64(student.row(i), t);
            p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>()
        })
        .sum();
    t * t * total / rows as f64
}

fn attention64(f: &Tensor) -> Vec<f64> {
    let a: Vec<f64> = (0..f.rows())
        .map(|i| f.row(i).iter().map(|v| v.abs() as f64).sum())
        .collect();
    let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    a.iter().map(|v| v / n).collect()
}

fn at_oracle(s: &Tensor, t: &Tensor) -> f64 {
    attention64(s)
        .iter()
        .zip(attention64(t))
        .map(|(a, b)| (a - b).powi(2))
        .sum()
}

#[test]
fn kd_matches_reference_and_vanishes_on_equal_logits() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let s = randn(&mut r, 5, 4, 2.0);
        let t = randn(&mut r, 5, 4, 2.0);
        for temp in [1.0f32, 2.0, 4.0, 10.0] {
            let tape = Tape::new();
            let got = kd_loss(tape.param(s.clone()), &t, temp, Task::Multiclass)
                .unwrap()
                .item() as f64;
            let expect = kd_oracle(&s, &t, temp as f64);
            assert!((got - expect).abs() < 1e-5 * expect.max(1.0), "seed {seed} T={temp}");
            let same = kd_loss(tape.param(t.clone()), &t, temp, Task::Multiclass)
                .unwrap()
                .item();
            assert!(same.abs() < 1e-6);
        }
    }
}

#[test]
fn kd_gradients() {
    for seed in 0..25 {
        let mut r = rng(seed);
        let s = randn(&mut r, 4, 5, 1.5);
        let t = randn(&mut r, 4, 5, 1.5);
        let temp = r.random_range(1.0..5.0);
        let err = gradient_check(
            |_, v| kd_loss(v, &t, temp, Task::Multiclass),
            &s,
            GRAD_STEP,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn kd_is_refused_for_multilabel() {
    let d = Distiller::Kd {
        temperature: 4.0,
        alpha: 0.1,
    };
    assert!(matches!(
        d.validate(Task::Multilabel, 3, 5),
        Err(Error::UnsupportedTask(_))
    ));
    assert!(d.validate(Task::Multiclass, 3, 5).is_ok());
}

#[test]
fn fitnet_matches_mse_and_has_gradients() {
    for seed in 0..25 {
        let mut r = rng(seed);
        let s = randn(&mut r, 6, 3, 1.0);
        let t = randn(&mut r, 6, 5, 1.0);
        let m = randn(&mut r, 3, 5, 0.5);
        let tape = Tape::new();
        let got = fitnet_loss(tape.param(s.clone()), &t, tape.param(m.clone()))
            .unwrap()
            .item() as f64;
        let mut sse = 0.0;
        for i in 0..6 {
            for c in 0..5 {
                let mapped: f64 = (0..3).map(|k| s.at(i, k) as f64 * m.at(k, c) as f64).sum();
                sse += (mapped - t.at(i, c) as f64).powi(2);
            }
        }
        assert!((got - sse / 30.0).abs() < 1e-6 * got.max(1.0), "seed {seed}");

        let err = gradient_check_multi(
            |_, v| fitnet_loss(v[0], &t, v[1]),
            &[s.clone(), m.clone()],
            GRAD_STEP,
        )
        .unwrap();
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn at_matches_reference_and_has_gradients() {
    for seed in 0..25 {
        let mut r = rng(seed);
        let s = away_from_zero(&mut r, 7, 3, 0.1, 1.5);
        let t = randn(&mut r, 7, 6, 1.0);
        let tape = Tape::new();
        let got = at_loss(tape.param(s.clone()), &t).unwrap().item() as f64;
        assert!((got - at_oracle(&s, &t)).abs() < 1e-6, "seed {seed}");

        let err = gradient_check(|_, v| at_loss(v, &t), &s, GRAD_STEP).unwrap();
        assert!(err < GRAD_TOL, "seed {seed}: {err}");
    }
}

#[test]
fn at_is_invariant_to_positive_rescaling() {
    for seed in 0..50 {
        let mut r = rng(seed);
        let s = randn(&mut r, 9, 3, 1.0);
        let t = randn(&mut r, 9, 4, 1.0);
        let (a, b) = (r.random_range(0.1..10.0), r.random_range(0.1..10.0));
        let scale = |x: &Tensor, c: f32| {
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect()).unwrap()
        };
        let tape = Tape::new();
        let base = at_loss(tape.param(s.clone()), &t).unwrap().item();
        let scaled = at_loss(tape.param(scale(&s, a)), &scale(&t, b))
            .unwrap()
            .item();
        assert!((base - scaled).abs() < 1e-5, "seed {seed}");
    }
}

#[test]
fn at_blocks_average_per_block_losses() {
    let mut r = rng(5);
    let s = randn(&mut r, 10, 3, 1.0);
    let t = randn(&mut r, 10, 5, 1.0);
    let tape = Tape::new();
    let blocks = at_loss_blocks(tape.param(s.clone()), &t, &[4, 6])
        .unwrap()
        .item() as f64;
    let expect = (at_oracle(&s.slice_rows(0, 4), &t.slice_rows(0, 4))
        + at_oracle(&s.slice_rows(4, 10), &t.slice_rows(4, 10)))
        / 2.0;
    assert!((blocks - expect).abs() < 1e-6);
}

#[test]
fn distiller_validation() {
    let lsp = Distiller::Lsp {
        kernel: Kernel::RBF,
        lambda: 100.0,
        pairing: LspPairing::last_layers(3, 5, GraphMode::Union),
    };
    assert!(lsp.validate(Task::Multilabel, 3, 5).is_ok());
    assert!(lsp.validate(Task::Multilabel, 2, 5).is_err());
    let neg = Distiller::Fitnet {
        pair: (0, 0),
        weight: -1.0,
    };
    assert!(neg.validate(Task::Multiclass, 1, 1).is_err());
    let out_of_range = Distiller::At {
        pair: (3, 0),
        weight: 1.0,
    };
    assert!(out_of_range.validate(Task::Multiclass, 3, 1).is_err());
    let kd = Distiller::Kd {
        temperature: 0.0,
        alpha: 0.1,
    };
    assert!(kd.validate(Task::Multiclass, 1, 1).is_err());
}
