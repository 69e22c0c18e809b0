mod common;

use common::*;
use lspd_core::data::{synth_multilabel_graphs, synth_shapes, SynthGraphConfig, SynthShapeConfig};
use lspd_core::train::{
    accuracy, bce_multilabel_loss, cross_entropy_loss, mean_class_accuracy, micro_f1,
    multiclass_metrics, OptimState, Trainer,
};
use lspd_core::{
    run_distillation, train_model, Dataset, DgcnnSpec, Distiller, Error, GatSpec, GraphMode,
    Kernel, LspPairing, Metrics, Model, ModelSpec, OptimConfig, Optimizer, Tape, Teacher, Tensor,
};

fn sgd(lr: f32, momentum: f32) -> Optimizer {
    Optimizer::Sgd { lr, momentum }
}

#[test]
fn adam_leaves_parameters_alone_on_zero_gradient() {
    let mut w = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    let before = w.clone();
    let mut state = OptimState::new(Optimizer::adam(0.1), &[&w]);
    for _ in 0..5 {
        state.step(&mut [&mut w], &[Tensor::zeros(&[2, 2])]).unwrap();
    }
    assert_eq!(w, before);
    assert_eq!(state.steps(), 5);
}

#[test]
fn adam_first_step_moves_by_lr_times_sign() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let g = away_from_zero(&mut r, 3, 4, 0.01, 5.0);
        let mut w = randn(&mut r, 3, 4, 1.0);
        let before = w.clone();
        let lr = 0.005;
        let mut state = OptimState::new(Optimizer::adam(lr), &[&w]);
        state.step(&mut [&mut w], &[g.clone()]).unwrap();
        for ((a, b), gi) in w.data().iter().zip(before.data()).zip(g.data()) {
            let delta = a - b;
            assert!((delta + lr * gi.signum()).abs() < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn sgd_without_momentum_is_a_plain_step() {
    let mut w = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let g = Tensor::matrix(1, 3, vec![0.5, -1.0, 0.0]).unwrap();
    let mut state = OptimState::new(sgd(0.1, 0.0), &[&w]);
    state.step(&mut [&mut w], &[g]).unwrap();
    assert_eq!(w.data(), &[0.95, 2.1, 3.0]);
}

#[test]
fn sgd_velocity_approaches_ten_gradients_at_momentum_point_nine() {
    let mut w = Tensor::zeros(&[2]);
    let g = Tensor::new(vec![2], vec![0.3, -2.0]).unwrap();
    let mut state = OptimState::new(sgd(1e-3, 0.9), &[&w]);
    for _ in 0..300 {
        state.step(&mut [&mut w], &[g.clone()]).unwrap();
    }
    let v = &state.first_moments()[0];
    assert!((v[0] - 3.0).abs() < 1e-4 && (v[1] + 20.0).abs() < 1e-3, "{v:?}");
}

#[test]
fn both_optimizers_descend_a_quadratic_bowl() {
    let target = [1.5f32, -0.5, 2.0];
    for opt in [Optimizer::adam(0.05), sgd(0.05, 0.9)] {
        let mut w = Tensor::zeros(&[3]);
        let mut state = OptimState::new(opt, &[&w]);
        for _ in 0..2000 {
            let tape = Tape::new();
            let v = tape.param(w.clone());
            let loss = v
                .sub(&tape.constant(Tensor::new(vec![3], target.to_vec()).unwrap()))
                .unwrap()
                .powi(2)
                .sum();
            tape.backward(loss).unwrap();
            let g = v.grad().unwrap();
            state.step(&mut [&mut w], &[g]).unwrap();
        }
        for (a, b) in w.data().iter().zip(target) {
            assert!((a - b).abs() < 1e-3, "{opt:?}: {:?}", w.data());
        }
    }
}

#[test]
fn optimizer_rejects_non_finite_gradients_without_updating() {
    let mut w = Tensor::zeros(&[2]);
    let mut state = OptimState::new(Optimizer::adam(0.1), &[&w]);
    let g = Tensor::new(vec![2], vec![1.0, f32::NAN]).unwrap();
    let err = state.step(&mut [&mut w], &[g]).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert_eq!(w.data(), &[0.0, 0.0]);
    assert_eq!(state.steps(), 0);
}

fn bce64(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

#[test]
fn bce_examples_and_reference() {
    let tape = Tape::new();
    let zeros = tape.param(Tensor::zeros(&[3, 4]));
    let y = Tensor::matrix(3, 4, (0..12).map(|i| (i % 2) as f32).collect()).unwrap();
    let l = bce_multilabel_loss(zeros, &y).unwrap().item() as f64;
    assert!((l - 2f64.ln()).abs() < 1e-6);

    let sure = Tensor::matrix(1, 2, vec![30.0, -30.0]).unwrap();
    let y = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
    assert!(bce_multilabel_loss(tape.param(sure), &y).unwrap().item() < 1e-6);

    for seed in 0..50 {
        let mut r = rng(seed);
        let x = randn(&mut r, 4, 5, 3.0);
        let y = Tensor::matrix(4, 5, away_from_zero(&mut r, 4, 5, 0.0, 1.0).data().iter().map(|v| (*v > 0.0) as u8 as f32).collect()).unwrap();
        let got = bce_multilabel_loss(tape.param(x.clone()), &y).unwrap().item() as f64;
        let expect: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| bce64(a as f64, b as f64))
            .sum::<f64>()
            / 20.0;
        assert!((got - expect).abs() < 1e-6 * expect.max(1.0), "seed {seed}");
    }
    let half = Tensor::matrix(1, 1, vec![0.5]).unwrap();
    assert!(bce_multilabel_loss(tape.param(Tensor::zeros(&[1, 1])), &half).is_err());
}

#[test]
fn cross_entropy_examples_and_reference() {
    let tape = Tape::new();
    let l = cross_entropy_loss(tape.param(Tensor::zeros(&[2, 7])), &[3, 6])
        .unwrap()
        .item() as f64;
    assert!((l - 7f64.ln()).abs() < 1e-6);

    let sure = Tensor::matrix(1, 3, vec![-20.0, 40.0, -20.0]).unwrap();
    assert!(cross_entropy_loss(tape.param(sure), &[1]).unwrap().item() < 1e-6);

    for seed in 0..50 {
        let mut r = rng(seed);
        let x = randn(&mut r, 6, 4, 3.0);
        let labels: Vec<usize> = (0..6).map(|i| (i * 7 + seed as usize) % 4).collect();
        let got = cross_entropy_loss(tape.param(x.clone()), &labels)
            .unwrap()
            .item() as f64;
        let expect: f64 = (0..6)
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().map(|&v| v as f64).collect();
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - row[labels[i]]
            })
            .sum::<f64>()
            / 6.0;
        assert!((got - expect).abs() < 1e-5 * expect.max(1.0), "seed {seed}");
    }
    assert!(cross_entropy_loss(tape.param(Tensor::zeros(&[1, 3])), &[3]).is_err());
}

#[test]
fn metric_examples() {
    let logits = Tensor::matrix(2, 2, vec![1.0, -1.0, 1.0, 1.0]).unwrap();
    let y = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!((micro_f1(&logits, &y).unwrap() - 0.8).abs() < 1e-12);
    let perfect = Tensor::matrix(2, 2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
    assert_eq!(micro_f1(&perfect, &y).unwrap(), 1.0);
    assert_eq!(micro_f1(&Tensor::zeros(&[2, 2]), &y).unwrap(), 0.0);

    let labels = [0, 0, 0, 0, 1, 2];
    let preds = [0, 0, 0, 0, 2, 2];
    assert!((accuracy(&preds, &labels).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    assert!((mean_class_accuracy(&preds, &labels, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(accuracy(&labels, &labels).unwrap(), 1.0);
    assert_eq!(mean_class_accuracy(&labels, &labels, 3).unwrap(), 1.0);

    let one_hot = Tensor::matrix(
        3,
        3,
        vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0],
    )
    .unwrap();
    assert_eq!(
        multiclass_metrics(&one_hot, &[0, 1, 2]).unwrap(),
        Metrics::Multiclass {
            accuracy: 1.0,
            mean_class_accuracy: 1.0
        }
    );
}

fn graph_data() -> Dataset {
    Dataset::Graphs(
        synth_multilabel_graphs(&SynthGraphConfig {
            seed: 3,
            n_graphs: 6,
            nodes_per_graph: 30,
            feature_dim: 8,
            label_dim: 4,
            communities: 2,
        })
        .unwrap(),
    )
}

fn cloud_data() -> Dataset {
    Dataset::Points(
        synth_shapes(&SynthShapeConfig {
            seed: 1,
            per_class: 4,
            points_per_cloud: 32,
        })
        .unwrap(),
    )
}

fn gat_pair() -> (ModelSpec, ModelSpec) {
    (
        ModelSpec::Gat(GatSpec::ppi_teacher().scaled(8, 4, 16)),
        ModelSpec::Gat(GatSpec::ppi_student().scaled(8, 4, 16)),
    )
}

fn dgcnn_pair() -> (ModelSpec, ModelSpec) {
    (
        ModelSpec::Dgcnn(DgcnnSpec::modelnet_teacher(4).scaled(16)),
        ModelSpec::Dgcnn(DgcnnSpec::modelnet_student(4).scaled(8)),
    )
}

fn optim(epochs: usize) -> OptimConfig {
    OptimConfig {
        optimizer: Optimizer::adam(0.005),
        epochs,
        seed: 11,
        batch_size: 4,
    }
}

fn teacher_for(spec: &ModelSpec, seed: u64) -> Teacher {
    let model = Model::new(spec.clone()).unwrap();
    Teacher::new(spec.clone(), model.init(seed)).unwrap()
}

fn lsp(mode: GraphMode, t_layers: usize, s_layers: usize) -> Distiller {
    Distiller::Lsp {
        kernel: Kernel::RBF,
        lambda: 100.0,
        pairing: LspPairing::last_layers(t_layers, s_layers, mode),
    }
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = graph_data();
    let (t, s) = gat_pair();
    let teacher = teacher_for(&t, 0);
    let d = lsp(GraphMode::Union, 3, 5);
    let a = run_distillation(&teacher, &s, &data, &d, &optim(3)).unwrap();
    let b = run_distillation(&teacher, &s, &data, &d, &optim(3)).unwrap();
    assert!(a.report.same_series(&b.report));
    assert_eq!(a.params, b.params);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    let c = run_distillation(
        &teacher,
        &s,
        &data,
        &d,
        &OptimConfig {
            seed: 12,
            ..optim(3)
        },
    )
    .unwrap();
    assert!(!a.report.same_series(&c.report));
}

#[test]
fn distillation_leaves_the_teacher_untouched() {
    let data = cloud_data();
    let (t, s) = dgcnn_pair();
    let teacher = teacher_for(&t, 2);
    let before = teacher.params().clone();
    run_distillation(&teacher, &s, &data, &lsp(GraphMode::Union, 4, 3), &optim(2)).unwrap();
    assert_eq!(teacher.params(), &before);
}

#[test]
fn no_distiller_reproduces_plain_training_bitwise() {
    let data = graph_data();
    let (t, s) = gat_pair();
    let plain = train_model(&s, &data, &optim(3)).unwrap();
    let with_teacher =
        run_distillation(&teacher_for(&t, 0), &s, &data, &Distiller::None, &optim(3)).unwrap();
    assert!(plain.report.same_series(&with_teacher.report));
    assert_eq!(plain.params, with_teacher.params);
    assert!(plain.report.distill_losses().iter().all(|&v| v == 0.0));
}

fn distillers(t: &ModelSpec, s: &ModelSpec, mode: GraphMode) -> Vec<(Distiller, Option<f32>)> {
    let (tl, sl) = (t.graph_layers(), s.graph_layers());
    vec![
        (Distiller::None, None),
        (
            Distiller::Fitnet {
                pair: (tl - 1, sl - 1),
                weight: 0.7,
            },
            Some(0.7),
        ),
        (
            Distiller::At {
                pair: (tl - 1, sl - 1),
                weight: 2.0,
            },
            Some(2.0),
        ),
        (lsp(mode, tl, sl), Some(100.0)),
    ]
}

fn check_step_zero(
    data: &Dataset,
    t: &ModelSpec,
    s: &ModelSpec,
    cases: Vec<(Distiller, Option<f32>)>,
    positions: &[usize],
) {
    let teacher = teacher_for(t, 4);
    let mut task_values = Vec::new();
    for (d, weight) in cases {
        let trainer = Trainer::new(s, data, &d, Some(&teacher), &optim(1)).unwrap();
        let params = trainer.init_params();
        let aux = trainer.init_aux();
        let l = trainer.losses_on(&params, &aux, positions).unwrap();
        let expect = match (&d, weight) {
            (Distiller::None, _) => l.task,
            (Distiller::Kd { alpha, .. }, _) => (1.0 - alpha) * l.task + alpha * l.distill,
            (_, Some(w)) => l.task + w * l.distill,
            _ => unreachable!(),
        };
        assert!(
            (l.total - expect).abs() <= 1e-6 * expect.abs().max(1.0),
            "{}: {l:?}",
            d.name()
        );
        if d != Distiller::None {
            assert!(l.distill > 0.0, "{}", d.name());
        }
        task_values.push(l.task);
    }
    assert!(task_values.iter().all(|&v| v == task_values[0]));
}

#[test]
fn step_zero_losses_compose_per_distiller() {
    let (t, s) = dgcnn_pair();
    let mut cases = distillers(&t, &s, GraphMode::Union);
    cases.push((
        Distiller::Kd {
            temperature: 4.0,
            alpha: 0.3,
        },
        None,
    ));
    check_step_zero(&cloud_data(), &t, &s, cases, &[0, 1]);

    let (t, s) = gat_pair();
    let mut cases = distillers(&t, &s, GraphMode::Static);
    cases.push((lsp(GraphMode::Union, 3, 5), Some(100.0)));
    check_step_zero(&graph_data(), &t, &s, cases, &[0]);
}

#[test]
fn kd_on_multilabel_data_is_refused() {
    let data = graph_data();
    let (t, s) = gat_pair();
    let d = Distiller::Kd {
        temperature: 2.0,
        alpha: 0.5,
    };
    let err = run_distillation(&teacher_for(&t, 0), &s, &data, &d, &optim(1)).unwrap_err();
    assert!(matches!(err, Error::UnsupportedTask(_)), "{err}");
}

#[test]
fn mismatched_families_and_missing_teachers_are_rejected() {
    let (_, gat) = gat_pair();
    let (_, dgcnn) = dgcnn_pair();
    assert!(train_model(&gat, &cloud_data(), &optim(1)).is_err());
    assert!(train_model(&dgcnn, &graph_data(), &optim(1)).is_err());
    let d = lsp(GraphMode::Union, 3, 5);
    assert!(Trainer::new(&gat, &graph_data(), &d, None, &optim(1)).is_err());
    let bad = OptimConfig {
        epochs: 0,
        ..optim(1)
    };
    assert!(train_model(&gat, &graph_data(), &bad).is_err());
}

#[test]
fn run_report_records_every_epoch() {
    let data = cloud_data();
    let (_, s) = dgcnn_pair();
    let out = train_model(&s, &data, &optim(3)).unwrap();
    let r = &out.report;
    assert_eq!(r.param_count, Model::new(s).unwrap().param_count());
    assert_eq!(r.epochs.len(), 3);
    assert!((1..=3).contains(&r.best_epoch));
    assert_eq!(r.val_metrics.primary(), r.epochs[r.best_epoch - 1].val_metric);
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("epoch,task_loss,distill_loss,val_metric\n"));
}

#[test]
fn synthetic_graphs_are_learnable() {
    let data = Dataset::Graphs(
        synth_multilabel_graphs(&SynthGraphConfig {
            n_graphs: 10,
            nodes_per_graph: 60,
            ..SynthGraphConfig::default()
        })
        .unwrap(),
    );
    let spec = ModelSpec::Gat(GatSpec::ppi_student().scaled(16, 8, 4));
    let out = train_model(&spec, &data, &optim(15)).unwrap();
    let losses = out.report.task_losses();
    assert!(losses.last().unwrap() < &(0.8 * losses[0]), "{losses:?}");
    assert!(out.report.val_metrics.primary() > 0.8, "{:?}", out.report.val_metrics);
}
