//! The `lspd` command line: teacher training, distillation, evaluation,
//! structure export, kernel ablation and manifest replay.

pub mod config;
mod manifest;

pub use config::{ResolvedConfig, RunArgs};
pub use manifest::{content_hash, InputHash, ManifestCommand, RunManifest};

use clap::{Args, Parser, Subcommand};
use config::{load_dataset, resolve, task_name, SYNTH_GRAPHS, SYNTH_SHAPES};
use lspd_core::data::{
    convert_ppi_dir, load_checkpoint, save_checkpoint, save_graph_dataset, save_point_clouds,
    synth_multilabel_graphs, synth_shapes, SynthGraphConfig, SynthShapeConfig,
};
use lspd_core::layers::ModelInput;
use lspd_core::train::{evaluate, Trainer};
use lspd_core::{
    Dataset, Error, Graph, Kernel, Metrics, Model, ModelSpec, ParamSet, RunReport, Split, Tape,
    Teacher, Tensor, TrainOutcome,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Error carrying the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// 2 for usage, config and task errors, 3 for data errors, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Shape { .. } | Error::Contract(_) | Error::UnsupportedTask(_) => 2,
                Error::Numeric(_) => 4,
                Error::Validation(_)
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::Integrity(_)
                | Error::Io { .. } => 3,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "lspd",
    version,
    about = "Local structure preserving distillation for graph convolutional networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on the task loss alone and save it as a teacher
    TrainTeacher(RunArgs),
    /// Train a student against a frozen teacher checkpoint
    Distill(RunArgs),
    /// Evaluate a checkpoint on one split
    Eval(EvalArgs),
    /// Write per-node feature-space distances to a reference node for a teacher and a student
    ExportStructures(ExportArgs),
    /// Distill once per LSP kernel (l2, poly, rbf, linear) and tabulate the results
    AblateKernels(RunArgs),
    /// Re-run the command recorded in a manifest
    Replay(ReplayArgs),
    /// Write a synthetic corpus to disk
    GenData(GenDataArgs),
    /// Convert the public PPI release layout into the graph dataset JSON format
    ConvertPpi(ConvertArgs),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// Checkpoint to evaluate
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset, as for train-teacher
    #[arg(long, default_value = SYNTH_GRAPHS)]
    pub data: String,
    /// Split to evaluate: train, val or test
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Z-score graph features with train-split statistics
    #[arg(long, default_value_t = false)]
    pub standardize: bool,
    /// Seed for synthetic datasets
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, default_value = "lspd-out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct ExportArgs {
    /// Teacher checkpoint
    #[arg(long)]
    pub teacher: PathBuf,
    /// Student checkpoint
    #[arg(long)]
    pub student: PathBuf,
    /// Dataset, as for train-teacher
    #[arg(long, default_value = SYNTH_SHAPES)]
    pub data: String,
    /// Split holding the sample
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Sample (graph or point cloud) index within the split
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Reference node (or point) index within the sample
    #[arg(long, default_value_t = 0)]
    pub node: usize,
    /// Z-score graph features with train-split statistics
    #[arg(long, default_value_t = false)]
    pub standardize: bool,
    /// Seed for synthetic datasets
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, default_value = "lspd-out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Clone, Debug)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded output directory
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct GenDataArgs {
    /// Corpus kind: synth-graphs or synth-shapes
    pub kind: String,
    /// Output path: a JSON file for graphs, a directory for shapes
    #[arg(long)]
    pub out: PathBuf,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of graphs
    #[arg(long, default_value_t = 20)]
    pub graphs: usize,
    /// Nodes per graph
    #[arg(long, default_value_t = 200)]
    pub nodes: usize,
    /// Node feature width
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    /// Labels per node
    #[arg(long, default_value_t = 8)]
    pub labels: usize,
    /// Clouds per shape class
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Points per cloud
    #[arg(long, default_value_t = 64)]
    pub points: usize,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct ConvertArgs {
    /// Directory with {train,valid,test}_{graph.json,feats.npy,labels.npy,graph_id.npy}
    #[arg(long)]
    pub input: PathBuf,
    /// Output graph dataset JSON file
    #[arg(long)]
    pub output: PathBuf,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Hashes the dataset argument when it names a file or directory.
fn data_inputs(data: &str) -> Result<Vec<InputHash>, CliError> {
    if data == SYNTH_GRAPHS || data == SYNTH_SHAPES {
        return Ok(Vec::new());
    }
    Ok(vec![InputHash::of("data", Path::new(data))?])
}

fn parse_split(s: &str) -> Result<Split, CliError> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    task: &'static str,
    spec: &'a ModelSpec,
    report: &'a RunReport,
}

/// Writes model, report CSV and summary into `dir`; returns the artifact map.
fn write_run_outputs(
    dir: &Path,
    command: &str,
    dataset: &Dataset,
    spec: &ModelSpec,
    outcome: &TrainOutcome,
) -> Result<BTreeMap<String, PathBuf>, CliError> {
    create_dir(dir)?;
    let model = dir.join("model.lspd");
    save_checkpoint(&model, spec, &outcome.params)?;
    let report = dir.join("report.csv");
    write_file(&report, outcome.report.to_csv())?;
    let summary = dir.join("summary.json");
    write_file(
        &summary,
        to_json(&Summary {
            command,
            task: task_name(dataset.task()),
            spec,
            report: &outcome.report,
        }),
    )?;
    Ok(BTreeMap::from([
        ("model".to_string(), model),
        ("report".to_string(), report),
        ("summary".to_string(), summary),
    ]))
}

fn load_teacher(cfg: &ResolvedConfig) -> Result<(Teacher, InputHash), CliError> {
    let path = cfg
        .teacher
        .as_ref()
        .ok_or_else(|| CliError::Usage("--teacher <checkpoint> is required".into()))?;
    let hash = InputHash::of("teacher", path)?;
    let (spec, params) = load_checkpoint(path)?;
    Ok((Teacher::new(spec, params)?, hash))
}

fn distill_once(
    cfg: &ResolvedConfig,
    dataset: &Dataset,
    teacher: &Teacher,
) -> Result<TrainOutcome, CliError> {
    let distiller = cfg
        .distill
        .build(teacher.spec().graph_layers(), cfg.spec.graph_layers())?;
    Ok(Trainer::new(&cfg.spec, dataset, &distiller, Some(teacher), &cfg.optim)?.run()?)
}

fn print_outcome(label: &str, outcome: &TrainOutcome) {
    let r = &outcome.report;
    println!(
        "{label}: best epoch {} of {}, val {:.4}, test {}, {} params, {:.1}s",
        r.best_epoch,
        r.epochs.len(),
        r.val_metrics.primary(),
        describe(&r.test_metrics),
        r.param_count,
        r.wall_clock_secs
    );
}

fn describe(m: &Metrics) -> String {
    match m {
        Metrics::Multilabel { micro_f1 } => format!("micro-F1 {micro_f1:.4}"),
        Metrics::Multiclass {
            accuracy,
            mean_class_accuracy,
        } => format!("acc {accuracy:.4} mAcc {mean_class_accuracy:.4}"),
    }
}

fn finish(
    cmd: ManifestCommand,
    out_dir: &Path,
    seed: u64,
    artifacts: BTreeMap<String, PathBuf>,
    inputs: Vec<InputHash>,
) -> Result<(), CliError> {
    create_dir(out_dir)?;
    let manifest = RunManifest {
        command: cmd,
        seed,
        artifacts,
        inputs,
    };
    write_file(&out_dir.join("manifest.json"), to_json(&manifest))
}

fn train_teacher(cfg: ResolvedConfig, dataset: Dataset) -> Result<(), CliError> {
    let inputs = data_inputs(&cfg.data)?;
    let outcome = Trainer::new(
        &cfg.spec,
        &dataset,
        &lspd_core::Distiller::None,
        None,
        &cfg.optim,
    )?
    .run()?;
    print_outcome("teacher", &outcome);
    let artifacts =
        write_run_outputs(&cfg.out_dir, "train-teacher", &dataset, &cfg.spec, &outcome)?;
    let (out, seed) = (cfg.out_dir.clone(), cfg.optim.seed);
    finish(
        ManifestCommand::TrainTeacher(cfg),
        &out,
        seed,
        artifacts,
        inputs,
    )
}

fn distill(cfg: ResolvedConfig, dataset: Dataset) -> Result<(), CliError> {
    let mut inputs = data_inputs(&cfg.data)?;
    let (teacher, hash) = load_teacher(&cfg)?;
    inputs.push(hash);
    let outcome = distill_once(&cfg, &dataset, &teacher)?;
    print_outcome(&format!("student ({})", cfg.distill.distiller), &outcome);
    let artifacts = write_run_outputs(&cfg.out_dir, "distill", &dataset, &cfg.spec, &outcome)?;
    let (out, seed) = (cfg.out_dir.clone(), cfg.optim.seed);
    finish(ManifestCommand::Distill(cfg), &out, seed, artifacts, inputs)
}

fn ablate_kernels(cfg: ResolvedConfig, dataset: Dataset) -> Result<(), CliError> {
    let mut inputs = data_inputs(&cfg.data)?;
    let (teacher, hash) = load_teacher(&cfg)?;
    inputs.push(hash);
    let mut artifacts = BTreeMap::new();
    let mut table =
        String::from("kernel,lambda,best_epoch,val_metric,test_metric,final_lsp_loss\n");
    for kernel in Kernel::ALL {
        let mut sub = cfg.clone();
        sub.distill.distiller = "lsp".into();
        sub.distill.kernel = kernel.short_name().into();
        let outcome = distill_once(&sub, &dataset, &teacher)?;
        print_outcome(&format!("lsp/{}", kernel.short_name()), &outcome);
        let r = &outcome.report;
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            kernel.short_name(),
            sub.distill.lambda,
            r.best_epoch,
            r.val_metrics.primary(),
            r.test_metrics.primary(),
            r.epochs.last().map_or(0.0, |e| e.distill_loss)
        ));
        let dir = cfg.out_dir.join(kernel.short_name());
        for (name, path) in
            write_run_outputs(&dir, "ablate-kernels", &dataset, &sub.spec, &outcome)?
        {
            artifacts.insert(format!("{}/{name}", kernel.short_name()), path);
        }
    }
    create_dir(&cfg.out_dir)?;
    let table_path = cfg.out_dir.join("ablation.csv");
    write_file(&table_path, table)?;
    artifacts.insert("ablation".into(), table_path);
    let (out, seed) = (cfg.out_dir.clone(), cfg.optim.seed);
    finish(
        ManifestCommand::AblateKernels(cfg),
        &out,
        seed,
        artifacts,
        inputs,
    )
}

#[derive(Serialize)]
struct EvalRecord {
    split: String,
    task: &'static str,
    metrics: Metrics,
    param_count: usize,
    analytic_param_count: usize,
    inference_ms_per_sample: f64,
}

/// Analytic parameter count of a spec, independent of [`Model::param_count`].
pub fn analytic_param_count(spec: &ModelSpec) -> usize {
    match spec {
        ModelSpec::Gat(s) => {
            let mut total = 0;
            let mut d = s.in_dim;
            let depth = s.hidden.len();
            for l in 0..depth {
                let (h, f) = (s.heads[l], s.hidden[l]);
                total += d * h * f + 2 * h * f;
                let identity = d == f && d == h * f;
                let skip = l > 0
                    && match s.skip {
                        lspd_core::SkipRule::None => false,
                        lspd_core::SkipRule::Projected => d != h * f,
                        lspd_core::SkipRule::Legacy => !identity,
                    };
                if skip {
                    total += d * h * f;
                }
                d = if l + 1 == depth { f } else { h * f };
            }
            total
        }
        ModelSpec::Dgcnn(s) => {
            let (edge, embed) = s.widths.split_at(s.widths.len() - 1);
            let mut total = 0;
            let mut d = s.in_dim;
            for &w in edge {
                total += 2 * d * w + w;
                d = w;
            }
            let cat: usize = edge.iter().sum();
            total += cat * embed[0] + embed[0];
            let mut d = 2 * embed[0];
            for &w in &s.mlp {
                total += d * w + w;
                d = w;
            }
            total + d * s.classes + s.classes
        }
    }
}

fn first_sample_input(
    dataset: &Dataset,
    split: Split,
    sample: usize,
) -> Result<(Tensor, Option<Graph>), CliError> {
    match dataset {
        Dataset::Graphs(d) => {
            let g = d.split(split).nth(sample).ok_or_else(|| {
                CliError::Usage(format!("sample {sample} out of range for split {split}"))
            })?;
            Ok((g.features.clone(), Some(g.graph.clone())))
        }
        Dataset::Points(d) => {
            let c = d.split(split).nth(sample).ok_or_else(|| {
                CliError::Usage(format!("sample {sample} out of range for split {split}"))
            })?;
            Ok((c.points.clone(), None))
        }
    }
}

fn input_of<'a>(
    features: &'a Tensor,
    graph: &'a Option<Graph>,
    sizes: &'a [usize],
) -> ModelInput<'a> {
    match graph {
        Some(graph) => ModelInput::Graph { features, graph },
        None => ModelInput::Points {
            points: features,
            cloud_sizes: sizes,
        },
    }
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let split = parse_split(&args.split)?;
    let dataset = load_dataset(&args.data, args.standardize, args.seed)?;
    let mut inputs = data_inputs(&args.data)?;
    inputs.push(InputHash::of("checkpoint", &args.checkpoint)?);
    let (spec, params) = load_checkpoint(&args.checkpoint)?;
    dataset.check_model(&spec)?;
    let model = Model::new(spec.clone())?;
    let metrics = evaluate(&model, &params, &dataset, split)?;

    let (features, graph) = first_sample_input(&dataset, split, 0)?;
    let sizes = [features.rows()];
    let input = input_of(&features, &graph, &sizes);
    let reps = 5;
    let start = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let bound = params.bind(&tape, false);
        model.forward(&bound, &input, None)?;
    }
    let record = EvalRecord {
        split: split.to_string(),
        task: task_name(dataset.task()),
        metrics,
        param_count: model.param_count(),
        analytic_param_count: analytic_param_count(&spec),
        inference_ms_per_sample: start.elapsed().as_secs_f64() * 1e3 / reps as f64,
    };
    println!(
        "{split}: {}, {} params, {:.2} ms per sample",
        describe(&record.metrics),
        record.param_count,
        record.inference_ms_per_sample
    );
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("metrics.json");
    write_file(&path, to_json(&record))?;
    let out = args.out_dir.clone();
    let seed = args.seed;
    finish(
        ManifestCommand::Eval(args),
        &out,
        seed,
        BTreeMap::from([("metrics".to_string(), path)]),
        inputs,
    )
}

/// Last graph-layer features of `params` on one sample.
fn last_layer_features(
    spec: &ModelSpec,
    params: &ParamSet,
    input: &ModelInput<'_>,
) -> Result<Tensor, CliError> {
    let model = Model::new(spec.clone())?;
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let out = model.forward(&bound, input, None)?;
    Ok(out.features.last().expect("at least one layer").to_tensor())
}

fn distances_to(features: &Tensor, node: usize) -> Vec<f64> {
    let r = features.row(node);
    (0..features.rows())
        .map(|i| {
            features
                .row(i)
                .iter()
                .zip(r)
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn export_structures(args: ExportArgs) -> Result<(), CliError> {
    let split = parse_split(&args.split)?;
    let dataset = load_dataset(&args.data, args.standardize, args.seed)?;
    let mut inputs = data_inputs(&args.data)?;
    inputs.push(InputHash::of("teacher", &args.teacher)?);
    inputs.push(InputHash::of("student", &args.student)?);
    let (t_spec, t_params) = load_checkpoint(&args.teacher)?;
    let (s_spec, s_params) = load_checkpoint(&args.student)?;
    dataset.check_model(&t_spec)?;
    dataset.check_model(&s_spec)?;
    let (features, graph) = first_sample_input(&dataset, split, args.sample)?;
    if args.node >= features.rows() {
        return Err(CliError::Usage(format!(
            "--node {} out of range for a sample with {} nodes",
            args.node,
            features.rows()
        )));
    }
    let sizes = [features.rows()];
    let input = input_of(&features, &graph, &sizes);
    let t = distances_to(&last_layer_features(&t_spec, &t_params, &input)?, args.node);
    let s = distances_to(&last_layer_features(&s_spec, &s_params, &input)?, args.node);
    let points = graph.is_none();
    let mut csv = String::from(if points {
        "node,x,y,z,teacher_distance,student_distance\n"
    } else {
        "node,teacher_distance,student_distance\n"
    });
    for i in 0..features.rows() {
        if points {
            let p = features.row(i);
            csv.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                p[0], p[1], p[2], t[i], s[i]
            ));
        } else {
            csv.push_str(&format!("{i},{},{}\n", t[i], s[i]));
        }
    }
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("structures.csv");
    write_file(&path, csv)?;
    println!("wrote {} rows to {}", features.rows(), path.display());
    let out = args.out_dir.clone();
    let seed = args.seed;
    finish(
        ManifestCommand::ExportStructures(args),
        &out,
        seed,
        BTreeMap::from([("structures".to_string(), path)]),
        inputs,
    )
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    match args.kind.as_str() {
        SYNTH_GRAPHS => {
            let ds = synth_multilabel_graphs(&SynthGraphConfig {
                seed: args.seed,
                n_graphs: args.graphs,
                nodes_per_graph: args.nodes,
                feature_dim: args.features,
                label_dim: args.labels,
                ..SynthGraphConfig::default()
            })?;
            if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            save_graph_dataset(&ds, &args.out)?;
        }
        SYNTH_SHAPES => {
            let ds = synth_shapes(&SynthShapeConfig {
                seed: args.seed,
                per_class: args.per_class,
                points_per_cloud: args.points,
            })?;
            save_point_clouds(&ds, &args.out)?;
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown corpus {other:?} (expected {SYNTH_GRAPHS} or {SYNTH_SHAPES})"
            )))
        }
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn convert_ppi(args: ConvertArgs) -> Result<(), CliError> {
    let ds = convert_ppi_dir(&args.input)?;
    save_graph_dataset(&ds, &args.output)?;
    println!(
        "wrote {} graphs ({} features, {} labels) to {}",
        ds.graphs.len(),
        ds.feature_dim,
        ds.label_dim,
        args.output.display()
    );
    Ok(())
}

fn execute(cmd: ManifestCommand) -> Result<(), CliError> {
    match cmd {
        ManifestCommand::TrainTeacher(cfg) => {
            let ds = load_dataset(&cfg.data, cfg.standardize, cfg.optim.seed)?;
            train_teacher(cfg, ds)
        }
        ManifestCommand::Distill(cfg) => {
            let ds = load_dataset(&cfg.data, cfg.standardize, cfg.optim.seed)?;
            distill(cfg, ds)
        }
        ManifestCommand::AblateKernels(cfg) => {
            let ds = load_dataset(&cfg.data, cfg.standardize, cfg.optim.seed)?;
            ablate_kernels(cfg, ds)
        }
        ManifestCommand::Eval(args) => eval(args),
        ManifestCommand::ExportStructures(args) => export_structures(args),
    }
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.manifest).map_err(|e| io_err(&args.manifest, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| {
        CliError::Core(Error::Parse {
            location: args.manifest.display().to_string(),
            message: e.to_string(),
        })
    })?;
    manifest.verify_inputs()?;
    let mut cmd = manifest.command;
    if let Some(dir) = args.out_dir {
        cmd.set_out_dir(dir);
    }
    execute(cmd)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::TrainTeacher(args) => {
            let (cfg, ds) = resolve(args, "teacher")?;
            train_teacher(cfg, ds)
        }
        Command::Distill(args) => {
            let (cfg, ds) = resolve(args, "student")?;
            distill(cfg, ds)
        }
        Command::AblateKernels(args) => {
            let (cfg, ds) = resolve(args, "student")?;
            ablate_kernels(cfg, ds)
        }
        Command::Eval(args) => eval(args),
        Command::ExportStructures(args) => export_structures(args),
        Command::Replay(args) => replay(args),
        Command::GenData(args) => gen_data(args),
        Command::ConvertPpi(args) => convert_ppi(args),
    }
}

/// Manifest path inside an output directory.
pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.json")
}
