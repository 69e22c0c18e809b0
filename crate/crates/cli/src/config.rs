//! Flag/config-file merging and resolution into a fully explicit run config.

use crate::CliError;
use clap::Args;
use lspd_core::data::{
    convert_ppi_dir, load_graph_dataset, load_point_clouds, synth_multilabel_graphs, synth_shapes,
    SynthGraphConfig, SynthShapeConfig,
};
use lspd_core::lsp::LspPairing;
use lspd_core::{
    Dataset, DgcnnSpec, Distiller, GatSpec, GraphMode, Kernel, ModelSpec, OptimConfig, Optimizer,
    Task,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Options shared by the training commands. Every option may also be given
/// in the `--config` file under the same (kebab-case) name; flags win.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RunArgs {
    /// JSON config file with keys named like these flags
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Dataset: graph JSON file, point-cloud directory, `synth-graphs` or `synth-shapes` [default: synth-graphs]
    #[arg(long)]
    pub data: Option<String>,

    /// Z-score node features with train-split statistics (graph datasets) [default: false]
    #[arg(long)]
    pub standardize: Option<bool>,

    /// Model preset: teacher, student, ppi-teacher, ppi-student, modelnet40-teacher, modelnet40-student [default: teacher for train-teacher, student otherwise]
    #[arg(long)]
    pub model: Option<String>,

    /// JSON model spec file; replaces --model
    #[arg(long)]
    pub spec: Option<PathBuf>,

    /// Width divisor applied by the teacher and student presets [default: 4]
    #[arg(long)]
    pub width_divisor: Option<usize>,

    /// Teacher checkpoint (distill, ablate-kernels)
    #[arg(long)]
    pub teacher: Option<PathBuf>,

    /// Distiller: lsp, kd, fitnet, at or none [default: lsp]
    #[arg(long)]
    pub distiller: Option<String>,

    /// LSP similarity kernel: rbf, poly, linear or l2 [default: rbf]
    #[arg(long)]
    pub kernel: Option<String>,

    /// LSP weight in task + lambda * lsp [default: 100]
    #[arg(long)]
    pub lambda: Option<f32>,

    /// LSP graph mode: union or static [default: union]
    #[arg(long)]
    pub lsp_mode: Option<String>,

    /// Matched layers as teacher:student[,...], 0-based, or `last` [default: last]
    #[arg(long)]
    pub lsp_pairs: Option<String>,

    /// Layer pair teacher:student for FitNet and AT, or `last` [default: last]
    #[arg(long)]
    pub hint_pair: Option<String>,

    /// KD weight alpha in (1 - alpha) * task + alpha * kd [default: 0.1]
    #[arg(long)]
    pub kd_alpha: Option<f32>,

    /// KD softmax temperature [default: 4]
    #[arg(long)]
    pub kd_temp: Option<f32>,

    /// FitNet weight [default: 1]
    #[arg(long)]
    pub fitnet_weight: Option<f32>,

    /// AT weight [default: 100]
    #[arg(long)]
    pub at_weight: Option<f32>,

    /// Optimizer: adam or sgd [default: adam]
    #[arg(long)]
    pub optimizer: Option<String>,

    /// Learning rate [default: 0.005 for adam, 0.1 for sgd]
    #[arg(long)]
    pub lr: Option<f32>,

    /// Adam weight decay [default: 0]
    #[arg(long)]
    pub weight_decay: Option<f32>,

    /// SGD momentum [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f32>,

    /// Training epochs [default: 40]
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Point clouds per minibatch [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Seed for initialization, shuffling, dropout and synthetic data [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory [default: lspd-out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunArgs {
    /// Fills unset flags from the config file, if one was given.
    pub fn with_config_file(mut self) -> Result<RunArgs, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::Core(lspd_core::Error::Io {
                path: path.display().to_string(),
                source: e,
            })
        })?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let file: RunArgs = serde_path_to_error::deserialize(de).map_err(|e| {
            CliError::Usage(format!("{}: {}: {}", path.display(), e.path(), e.inner()))
        })?;
        merge_fields!(
            self,
            file,
            data,
            standardize,
            model,
            spec,
            width_divisor,
            teacher,
            distiller,
            kernel,
            lambda,
            lsp_mode,
            lsp_pairs,
            hint_pair,
            kd_alpha,
            kd_temp,
            fitnet_weight,
            at_weight,
            optimizer,
            lr,
            weight_decay,
            momentum,
            epochs,
            batch_size,
            seed,
            out_dir
        );
        Ok(self)
    }
}

/// Distiller options with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DistillOptions {
    pub distiller: String,
    pub kernel: String,
    pub lambda: f32,
    pub lsp_mode: String,
    pub lsp_pairs: String,
    pub hint_pair: String,
    pub kd_alpha: f32,
    pub kd_temp: f32,
    pub fitnet_weight: f32,
    pub at_weight: f32,
}

/// Fully explicit run configuration; serialized into every manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ResolvedConfig {
    pub data: String,
    pub standardize: bool,
    pub model: String,
    pub width_divisor: usize,
    pub spec: ModelSpec,
    pub teacher: Option<PathBuf>,
    pub distill: DistillOptions,
    pub optim: OptimConfig,
    pub out_dir: PathBuf,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub const SYNTH_GRAPHS: &str = "synth-graphs";
pub const SYNTH_SHAPES: &str = "synth-shapes";

/// Loads `data` (see [`RunArgs::data`]); synthetic corpora use `seed`.
pub fn load_dataset(data: &str, standardize: bool, seed: u64) -> Result<Dataset, CliError> {
    let ds = match data {
        SYNTH_GRAPHS => Dataset::Graphs(synth_multilabel_graphs(&SynthGraphConfig {
            seed,
            ..SynthGraphConfig::default()
        })?),
        SYNTH_SHAPES => Dataset::Points(synth_shapes(&SynthShapeConfig {
            seed,
            ..SynthShapeConfig::default()
        })?),
        path => {
            let p = Path::new(path);
            if p.is_dir() {
                if p.join("train_graph.json").is_file() {
                    Dataset::Graphs(convert_ppi_dir(p)?)
                } else {
                    Dataset::Points(load_point_clouds(p)?)
                }
            } else if p.is_file() {
                Dataset::Graphs(load_graph_dataset(p)?)
            } else {
                return Err(usage(format!("--data {path}: no such file or directory")));
            }
        }
    };
    match ds {
        Dataset::Graphs(mut g) if standardize => {
            g.standardize()?;
            Ok(Dataset::Graphs(g))
        }
        other => Ok(other),
    }
}

/// Resolves a preset name against the dataset's input and output widths.
pub fn preset_spec(name: &str, dataset: &Dataset, divisor: usize) -> Result<ModelSpec, CliError> {
    let out = dataset.out_dim();
    let spec = match (name, dataset) {
        ("ppi-teacher", _) => ModelSpec::Gat(GatSpec::ppi_teacher()),
        ("ppi-student", _) => ModelSpec::Gat(GatSpec::ppi_student()),
        ("modelnet40-teacher", _) => ModelSpec::Dgcnn(DgcnnSpec::modelnet_teacher(40)),
        ("modelnet40-student", _) => ModelSpec::Dgcnn(DgcnnSpec::modelnet_student(40)),
        ("teacher", Dataset::Graphs(g)) => {
            ModelSpec::Gat(GatSpec::ppi_teacher().scaled(g.feature_dim, out, divisor))
        }
        ("student", Dataset::Graphs(g)) => {
            ModelSpec::Gat(GatSpec::ppi_student().scaled(g.feature_dim, out, divisor))
        }
        ("teacher", Dataset::Points(_)) => {
            ModelSpec::Dgcnn(DgcnnSpec::modelnet_teacher(out).scaled(divisor))
        }
        ("student", Dataset::Points(_)) => {
            ModelSpec::Dgcnn(DgcnnSpec::modelnet_student(out).scaled(divisor))
        }
        (other, _) => return Err(usage(format!("unknown --model preset {other:?}"))),
    };
    Ok(spec)
}

fn parse_pair(
    s: &str,
    t_layers: usize,
    s_layers: usize,
    flag: &str,
) -> Result<Vec<(usize, usize)>, CliError> {
    if s == "last" {
        if t_layers == 0 {
            return Err(usage(format!("--{flag} needs a teacher")));
        }
        return Ok(vec![(t_layers - 1, s_layers - 1)]);
    }
    LspPairing::parse_pairs(s).map_err(|e| usage(format!("--{flag}: {e}")))
}

impl DistillOptions {
    /// Checks names and values that do not depend on the models.
    pub fn check(&self) -> Result<(), CliError> {
        self.kernel
            .parse::<Kernel>()
            .map_err(|e| usage(format!("--kernel: {e}")))?;
        self.lsp_mode
            .parse::<GraphMode>()
            .map_err(|e| usage(format!("--lsp-mode: {e}")))?;
        if !["lsp", "kd", "fitnet", "at", "none"].contains(&self.distiller.as_str()) {
            return Err(usage(format!(
                "unknown --distiller {:?} (expected lsp, kd, fitnet, at or none)",
                self.distiller
            )));
        }
        Ok(())
    }

    /// Builds the distiller against models with the given layer counts.
    pub fn build(
        &self,
        teacher_layers: usize,
        student_layers: usize,
    ) -> Result<Distiller, CliError> {
        let kernel: Kernel = self
            .kernel
            .parse()
            .map_err(|e| usage(format!("--kernel: {e}")))?;
        let mode: GraphMode = self
            .lsp_mode
            .parse()
            .map_err(|e| usage(format!("--lsp-mode: {e}")))?;
        let single = |flag: &str| -> Result<(usize, usize), CliError> {
            match parse_pair(&self.hint_pair, teacher_layers, student_layers, flag)?.as_slice() {
                [p] => Ok(*p),
                _ => Err(usage("--hint-pair takes exactly one teacher:student pair")),
            }
        };
        Ok(match self.distiller.as_str() {
            "none" => Distiller::None,
            "kd" => Distiller::Kd {
                temperature: self.kd_temp,
                alpha: self.kd_alpha,
            },
            "fitnet" => Distiller::Fitnet {
                pair: single("hint-pair")?,
                weight: self.fitnet_weight,
            },
            "at" => Distiller::At {
                pair: single("hint-pair")?,
                weight: self.at_weight,
            },
            "lsp" => Distiller::Lsp {
                kernel,
                lambda: self.lambda,
                pairing: LspPairing {
                    pairs: parse_pair(
                        &self.lsp_pairs,
                        teacher_layers,
                        student_layers,
                        "lsp-pairs",
                    )?,
                    mode,
                },
            },
            other => {
                return Err(usage(format!(
                    "unknown --distiller {other:?} (expected lsp, kd, fitnet, at or none)"
                )))
            }
        })
    }
}

/// Materializes every default. `default_model` is the preset used when
/// neither `--model` nor `--spec` is given.
pub fn resolve(args: RunArgs, default_model: &str) -> Result<(ResolvedConfig, Dataset), CliError> {
    let args = args.with_config_file()?;
    let seed = args.seed.unwrap_or(0);
    let data = args
        .data
        .clone()
        .unwrap_or_else(|| SYNTH_GRAPHS.to_string());
    let standardize = args.standardize.unwrap_or(false);
    let dataset = load_dataset(&data, standardize, seed)?;
    let width_divisor = args.width_divisor.unwrap_or(4);
    if width_divisor == 0 {
        return Err(usage("--width-divisor must be >= 1"));
    }
    let (model, spec) = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Core(lspd_core::Error::Io {
                    path: path.display().to_string(),
                    source: e,
                })
            })?;
            let spec: ModelSpec = serde_json::from_str(&text)
                .map_err(|e| usage(format!("--spec {}: {e}", path.display())))?;
            (format!("file:{}", path.display()), spec)
        }
        None => {
            let name = args
                .model
                .clone()
                .unwrap_or_else(|| default_model.to_string());
            let spec = preset_spec(&name, &dataset, width_divisor)?;
            (name, spec)
        }
    };
    spec.validate()
        .map_err(|e| usage(format!("model spec: {e}")))?;

    let optimizer = match args.optimizer.as_deref().unwrap_or("adam") {
        "adam" => Optimizer::Adam {
            lr: args.lr.unwrap_or(0.005),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: args.weight_decay.unwrap_or(0.0),
        },
        "sgd" => Optimizer::Sgd {
            lr: args.lr.unwrap_or(0.1),
            momentum: args.momentum.unwrap_or(0.9),
        },
        other => {
            return Err(usage(format!(
                "unknown --optimizer {other:?} (expected adam or sgd)"
            )))
        }
    };
    let optim = OptimConfig {
        optimizer,
        epochs: args.epochs.unwrap_or(40),
        seed,
        batch_size: args.batch_size.unwrap_or(16),
    };
    optim.validate().map_err(|e| usage(e.to_string()))?;

    let distill = DistillOptions {
        distiller: args.distiller.clone().unwrap_or_else(|| "lsp".into()),
        kernel: args.kernel.clone().unwrap_or_else(|| "rbf".into()),
        lambda: args.lambda.unwrap_or(100.0),
        lsp_mode: args.lsp_mode.clone().unwrap_or_else(|| "union".into()),
        lsp_pairs: args.lsp_pairs.clone().unwrap_or_else(|| "last".into()),
        hint_pair: args.hint_pair.clone().unwrap_or_else(|| "last".into()),
        kd_alpha: args.kd_alpha.unwrap_or(0.1),
        kd_temp: args.kd_temp.unwrap_or(4.0),
        fitnet_weight: args.fitnet_weight.unwrap_or(1.0),
        at_weight: args.at_weight.unwrap_or(100.0),
    };
    distill.check()?;
    let cfg = ResolvedConfig {
        data,
        standardize,
        model,
        width_divisor,
        spec,
        teacher: args.teacher.clone(),
        distill,
        optim,
        out_dir: args
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("lspd-out")),
    };
    Ok((cfg, dataset))
}

/// Task of a dataset as a short name.
pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Multilabel => "multilabel",
        Task::Multiclass => "multiclass",
    }
}
