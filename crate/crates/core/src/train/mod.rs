//! Optimizers, task losses, metrics and the teacher/student training loops.

mod losses;
mod metrics;
mod optim;

pub use losses::{bce_multilabel_loss, cross_entropy_loss};
pub use metrics::{
    accuracy, argmax_rows, mean_class_accuracy, micro_f1, multiclass_metrics, Metrics,
};
pub use optim::{OptimConfig, OptimState, Optimizer};

use crate::autodiff::{Tape, Var};
use crate::baselines::{at_loss, at_loss_blocks, fitnet_loss, kd_loss, Distiller};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::{Bound, Init, Model, ModelInput, ModelSpec, ParamSet, ParamShape, Task};
use crate::lsp::{lsp_loss, total_loss};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

const AUX_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const EVAL_BATCH: usize = 64;

/// Losses and validation metric of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean task loss over the epoch's steps.
    pub task_loss: f64,
    /// Mean unweighted distillation term over the epoch's steps (0 without a distiller).
    pub distill_loss: f64,
    pub val_metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub val_metrics: Metrics,
    pub test_metrics: Metrics,
    pub wall_clock_secs: f64,
    pub param_count: usize,
}

impl RunReport {
    /// `epoch,task_loss,distill_loss,val_metric` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,task_loss,distill_loss,val_metric\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.task_loss, e.distill_loss, e.val_metric
            ));
        }
        out
    }

    pub fn task_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.task_loss).collect()
    }

    pub fn distill_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.distill_loss).collect()
    }

    /// True when every per-epoch series matches bit for bit.
    pub fn same_series(&self, other: &RunReport) -> bool {
        self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.task_loss.to_bits() == b.task_loss.to_bits()
                    && a.distill_loss.to_bits() == b.distill_loss.to_bits()
                    && a.val_metric.to_bits() == b.val_metric.to_bits()
            })
    }
}

/// Trained parameters (best validation epoch) with the run's report.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub report: RunReport,
}

/// A frozen, inference-only model.
pub struct Teacher {
    model: Model,
    params: ParamSet,
}

impl Teacher {
    pub fn new(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        let model = Model::new(spec)?;
        model.check_params(&params)?;
        Ok(Teacher { model, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }
}

enum Targets {
    Labels(Tensor),
    Classes(Vec<usize>),
}

/// Model inputs and targets for a set of samples of one split.
struct Batch {
    features: Tensor,
    graph: Option<Graph>,
    sizes: Vec<usize>,
    targets: Targets,
}

impl Batch {
    fn input(&self) -> ModelInput<'_> {
        match &self.graph {
            Some(graph) => ModelInput::Graph {
                features: &self.features,
                graph,
            },
            None => ModelInput::Points {
                points: &self.features,
                cloud_sizes: &self.sizes,
            },
        }
    }
}

fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    let cols = parts.first().map_or(0, |t| t.cols());
    let mut data = Vec::with_capacity(parts.iter().map(|t| t.numel()).sum());
    let mut rows = 0;
    for t in parts {
        data.extend_from_slice(t.data());
        rows += t.rows();
    }
    Tensor::new(vec![rows, cols], data)
}

/// Sample indices of `split`, in dataset order.
fn split_indices(dataset: &Dataset, split: Split) -> Vec<usize> {
    match dataset {
        Dataset::Graphs(d) => d
            .graphs
            .iter()
            .enumerate()
            .filter(|(_, g)| g.split == split)
            .map(|(i, _)| i)
            .collect(),
        Dataset::Points(d) => d
            .clouds
            .iter()
            .enumerate()
            .filter(|(_, c)| c.split == split)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Builds a batch from dataset sample indices. Graph datasets take exactly one.
fn make_batch(dataset: &Dataset, samples: &[usize]) -> Result<Batch> {
    match dataset {
        Dataset::Graphs(d) => {
            let [i] = samples else {
                return Err(Error::contract("graph batches hold exactly one graph"));
            };
            let g = &d.graphs[*i];
            Ok(Batch {
                features: g.features.clone(),
                graph: Some(g.graph.clone()),
                sizes: vec![g.num_nodes()],
                targets: match d.task {
                    Task::Multilabel => Targets::Labels(g.labels.clone()),
                    Task::Multiclass => Targets::Classes(g.class_labels()),
                },
            })
        }
        Dataset::Points(d) => {
            let clouds: Vec<_> = samples.iter().map(|&i| &d.clouds[i]).collect();
            let points: Vec<&Tensor> = clouds.iter().map(|c| &c.points).collect();
            Ok(Batch {
                features: concat_rows(&points)?,
                graph: None,
                sizes: clouds.iter().map(|c| c.points.rows()).collect(),
                targets: Targets::Classes(clouds.iter().map(|c| c.label).collect()),
            })
        }
    }
}

fn task_loss<'t>(logits: Var<'t>, targets: &Targets) -> Result<Var<'t>> {
    match targets {
        Targets::Labels(y) => bce_multilabel_loss(logits, y),
        Targets::Classes(c) => cross_entropy_loss(logits, c),
    }
}

/// Teacher outputs for one training sample, restricted to what the distiller reads.
struct TeacherSample {
    logits: Tensor,
    /// Indexed by teacher layer; `None` for layers the distiller ignores.
    features: Vec<Option<Tensor>>,
    graphs: Vec<Option<Graph>>,
}

fn teacher_layers_used(distiller: &Distiller) -> Vec<usize> {
    match distiller {
        Distiller::None | Distiller::Kd { .. } => Vec::new(),
        Distiller::Fitnet { pair, .. } | Distiller::At { pair, .. } => vec![pair.0],
        Distiller::Lsp { pairing, .. } => pairing.pairs.iter().map(|p| p.0).collect(),
    }
}

/// Evaluates `model` on every sample of `split`.
pub fn evaluate(
    model: &Model,
    params: &ParamSet,
    dataset: &Dataset,
    split: Split,
) -> Result<Metrics> {
    let indices = split_indices(dataset, split);
    if indices.is_empty() {
        return Err(Error::validation(format!("split {split} is empty")));
    }
    let chunk = match dataset {
        Dataset::Graphs(_) => 1,
        Dataset::Points(_) => EVAL_BATCH,
    };
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    let mut classes = Vec::new();
    for samples in indices.chunks(chunk) {
        let batch = make_batch(dataset, samples)?;
        let tape = Tape::new();
        let bound = params.bind(&tape, false);
        let out = model.forward(&bound, &batch.input(), None)?;
        logits.push(out.logits.to_tensor());
        match batch.targets {
            Targets::Labels(y) => labels.push(y),
            Targets::Classes(c) => classes.extend(c),
        }
    }
    let logits = concat_rows(&logits.iter().collect::<Vec<_>>())?;
    match dataset.task() {
        Task::Multilabel => {
            let y = concat_rows(&labels.iter().collect::<Vec<_>>())?;
            Ok(Metrics::Multilabel {
                micro_f1: micro_f1(&logits, &y)?,
            })
        }
        Task::Multiclass => multiclass_metrics(&logits, &classes),
    }
}

/// Task, unweighted distillation and combined loss of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub task: f32,
    pub distill: f32,
    pub total: f32,
}

/// One training run of a student (or a teacher, with no distiller).
pub struct Trainer<'a> {
    model: Model,
    dataset: &'a Dataset,
    distiller: Distiller,
    optim: OptimConfig,
    teacher_cache: Vec<TeacherSample>,
    train_indices: Vec<usize>,
}

impl<'a> Trainer<'a> {
    /// Validates the configuration and, when the distiller needs one, runs
    /// the teacher once over the training split.
    pub fn new(
        spec: &ModelSpec,
        dataset: &'a Dataset,
        distiller: &Distiller,
        teacher: Option<&Teacher>,
        optim: &OptimConfig,
    ) -> Result<Self> {
        optim.validate()?;
        dataset.validate()?;
        dataset.check_model(spec)?;
        if dataset.split_len(Split::Train) == 0 || dataset.split_len(Split::Val) == 0 {
            return Err(Error::validation(
                "training needs non-empty train and val splits",
            ));
        }
        let model = Model::new(spec.clone())?;
        let task = dataset.task();
        let teacher_layers = teacher.map_or(0, |t| t.spec().graph_layers());
        if *distiller != Distiller::None && teacher.is_none() {
            return Err(Error::contract(format!(
                "distiller {} needs a teacher",
                distiller.name()
            )));
        }
        distiller.validate(task, teacher_layers, spec.graph_layers())?;
        let train_indices = split_indices(dataset, Split::Train);

        let mut teacher_cache = Vec::new();
        if let (Some(t), false) = (teacher, *distiller == Distiller::None) {
            dataset.check_model(t.spec())?;
            let used = teacher_layers_used(distiller);
            for &i in &train_indices {
                let batch = make_batch(dataset, &[i])?;
                let tape = Tape::new();
                let bound = t.params.bind(&tape, false);
                let out = t.model.forward(&bound, &batch.input(), None)?;
                let keep = |l: usize| used.contains(&l);
                teacher_cache.push(TeacherSample {
                    logits: out.logits.to_tensor(),
                    features: (0..out.features.len())
                        .map(|l| keep(l).then(|| out.features[l].to_tensor()))
                        .collect(),
                    graphs: (0..out.graphs.len())
                        .map(|l| keep(l).then(|| (*out.graphs[l]).clone()))
                        .collect(),
                });
            }
        }
        Ok(Trainer {
            model,
            dataset,
            distiller: distiller.clone(),
            optim: optim.clone(),
            teacher_cache,
            train_indices,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Initial student parameters.
    pub fn init_params(&self) -> ParamSet {
        self.model.init(self.optim.seed)
    }

    fn aux_shapes(&self) -> Vec<ParamShape> {
        match &self.distiller {
            Distiller::Fitnet { pair, .. } => {
                let t_width = self.teacher_cache[0].features[pair.0]
                    .as_ref()
                    .map_or(0, |f| f.cols());
                let s_width = self.model.spec().layer_widths()[pair.1];
                vec![ParamShape {
                    name: "fitnet.mapper".into(),
                    shape: vec![s_width, t_width],
                    init: Init::Glorot {
                        fan_in: s_width,
                        fan_out: t_width,
                    },
                }]
            }
            _ => Vec::new(),
        }
    }

    /// Auxiliary trainable parameters of the distiller (the FitNet mapper).
    pub fn init_aux(&self) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.optim.seed);
        rng.set_stream(AUX_STREAM);
        crate::layers::initialize_params(&self.aux_shapes(), &mut rng)
    }

    /// Teacher outputs for training positions `positions`, concatenated.
    fn teacher_batch(&self, positions: &[usize]) -> Result<TeacherSample> {
        let parts: Vec<&TeacherSample> =
            positions.iter().map(|&p| &self.teacher_cache[p]).collect();
        let logits = concat_rows(&parts.iter().map(|p| &p.logits).collect::<Vec<_>>())?;
        let layers = parts[0].features.len();
        let mut features = Vec::with_capacity(layers);
        let mut graphs = Vec::with_capacity(layers);
        for l in 0..layers {
            if parts[0].features[l].is_none() {
                features.push(None);
                graphs.push(None);
                continue;
            }
            let f: Vec<&Tensor> = parts
                .iter()
                .map(|p| p.features[l].as_ref().unwrap())
                .collect();
            features.push(Some(concat_rows(&f)?));
            let g: Vec<Graph> = parts.iter().map(|p| p.graphs[l].clone().unwrap()).collect();
            graphs.push(Some(if g.len() == 1 {
                g.into_iter().next().unwrap()
            } else {
                Graph::disjoint_union(&g)
            }));
        }
        Ok(TeacherSample {
            logits,
            features,
            graphs,
        })
    }

    /// Forward pass plus loss composition on training positions `positions`.
    fn step_graph<'t>(
        &self,
        bound: &Bound<'t>,
        aux: &Bound<'t>,
        positions: &[usize],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let samples: Vec<usize> = positions.iter().map(|&p| self.train_indices[p]).collect();
        let batch = make_batch(self.dataset, &samples)?;
        let out = self.model.forward(bound, &batch.input(), dropout_rng)?;
        let task = task_loss(out.logits, &batch.targets)?;
        let tape = task.tape();
        if self.distiller == Distiller::None {
            let zero = tape.constant(Tensor::scalar(0.0));
            return Ok((task, zero, task));
        }
        let t = self.teacher_batch(positions)?;
        let t_feat = |l: usize| t.features[l].as_ref().expect("cached layer");
        let (distill, total) = match &self.distiller {
            Distiller::None => unreachable!(),
            Distiller::Kd { temperature, alpha } => {
                let kd = kd_loss(out.logits, &t.logits, *temperature, self.dataset.task())?;
                let total = task.scale(1.0 - alpha).add(&kd.scale(*alpha))?;
                (kd, total)
            }
            Distiller::Fitnet { pair, weight } => {
                let fit = fitnet_loss(
                    out.features[pair.1],
                    t_feat(pair.0),
                    aux.get("fitnet.mapper")?,
                )?;
                (fit, task.add(&fit.scale(*weight))?)
            }
            Distiller::At { pair, weight } => {
                let at = match self.dataset {
                    Dataset::Graphs(_) => at_loss(out.features[pair.1], t_feat(pair.0))?,
                    Dataset::Points(_) => {
                        at_loss_blocks(out.features[pair.1], t_feat(pair.0), &batch.sizes)?
                    }
                };
                (at, task.add(&at.scale(*weight))?)
            }
            Distiller::Lsp {
                kernel,
                lambda,
                pairing,
            } => {
                let mut acc: Option<Var<'t>> = None;
                for &(tl, sl) in &pairing.pairs {
                    let term = lsp_loss(
                        out.features[sl],
                        &out.graphs[sl],
                        t_feat(tl),
                        t.graphs[tl].as_ref().expect("cached layer"),
                        *kernel,
                        pairing.mode,
                    )?;
                    acc = Some(match acc {
                        Some(a) => a.add(&term)?,
                        None => term,
                    });
                }
                let lsp = acc
                    .expect("validated non-empty pairing")
                    .scale(1.0 / pairing.pairs.len() as f32);
                (lsp, total_loss(task, lsp, *lambda)?)
            }
        };
        Ok((task, distill, total))
    }

    /// Losses at training positions `positions` without dropout or updates.
    pub fn losses_on(
        &self,
        params: &ParamSet,
        aux: &ParamSet,
        positions: &[usize],
    ) -> Result<StepLosses> {
        let tape = Tape::new();
        let bound = params.bind(&tape, false);
        let aux = aux.bind(&tape, false);
        let (task, distill, total) = self.step_graph(&bound, &aux, positions, None)?;
        Ok(StepLosses {
            task: task.item(),
            distill: distill.item(),
            total: total.item(),
        })
    }

    /// Number of samples in the training split.
    pub fn train_len(&self) -> usize {
        self.train_indices.len()
    }

    pub fn run(&self) -> Result<TrainOutcome> {
        let start = Instant::now();
        let mut params = self.init_params();
        let mut aux = self.init_aux();
        let mut state = {
            let refs: Vec<&Tensor> = params
                .entries()
                .iter()
                .chain(aux.entries())
                .map(|(_, t)| t)
                .collect();
            OptimState::new(self.optim.optimizer, &refs)
        };
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(self.optim.seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(self.optim.seed);
        dropout_rng.set_stream(DROPOUT_STREAM);
        let per_step = match self.dataset {
            Dataset::Graphs(_) => 1,
            Dataset::Points(_) => self.optim.batch_size,
        };

        let mut order: Vec<usize> = (0..self.train_indices.len()).collect();
        let mut epochs = Vec::with_capacity(self.optim.epochs);
        let mut best: Option<(f64, usize, ParamSet, Metrics)> = None;
        for epoch in 1..=self.optim.epochs {
            order.shuffle(&mut shuffle_rng);
            let (mut task_sum, mut distill_sum, mut steps) = (0f64, 0f64, 0usize);
            for positions in order.chunks(per_step) {
                let tape = Tape::new();
                let bound = params.bind(&tape, true);
                let aux_bound = aux.bind(&tape, true);
                let (task, distill, total) =
                    self.step_graph(&bound, &aux_bound, positions, Some(&mut dropout_rng))?;
                let total_value = total.item();
                if !total_value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became {total_value} at epoch {epoch}, step {}",
                        steps + 1
                    )));
                }
                tape.backward(total)?;
                let mut grads = bound.grads();
                grads.extend(aux_bound.grads());
                let mut refs: Vec<&mut Tensor> =
                    params.tensors_mut().chain(aux.tensors_mut()).collect();
                state.step(&mut refs, &grads).map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
                task_sum += task.item() as f64;
                distill_sum += distill.item() as f64;
                steps += 1;
            }
            let val = evaluate(&self.model, &params, self.dataset, Split::Val)?;
            let val_metric = val.primary();
            epochs.push(EpochRecord {
                epoch,
                task_loss: task_sum / steps as f64,
                distill_loss: distill_sum / steps as f64,
                val_metric,
            });
            if best.as_ref().is_none_or(|b| val_metric > b.0) {
                best = Some((val_metric, epoch, params.clone(), val));
            }
        }
        let (_, best_epoch, best_params, val_metrics) = best.expect("at least one epoch");
        let test_metrics = if self.dataset.split_len(Split::Test) > 0 {
            evaluate(&self.model, &best_params, self.dataset, Split::Test)?
        } else {
            val_metrics
        };
        Ok(TrainOutcome {
            report: RunReport {
                epochs,
                best_epoch,
                val_metrics,
                test_metrics,
                wall_clock_secs: start.elapsed().as_secs_f64(),
                param_count: self.model.param_count(),
            },
            params: best_params,
        })
    }
}

/// Trains `spec` on the task loss alone.
pub fn train_model(
    spec: &ModelSpec,
    dataset: &Dataset,
    optim: &OptimConfig,
) -> Result<TrainOutcome> {
    Trainer::new(spec, dataset, &Distiller::None, None, optim)?.run()
}

/// Trains a student against a frozen teacher with the given distiller.
pub fn run_distillation(
    teacher: &Teacher,
    student_spec: &ModelSpec,
    dataset: &Dataset,
    distiller: &Distiller,
    optim: &OptimConfig,
) -> Result<TrainOutcome> {
    Trainer::new(student_spec, dataset, distiller, Some(teacher), optim)?.run()
}
