//! Dataset formats, synthetic corpora and checkpoint files.

mod checkpoint;
mod graphs;
mod npy;
mod points;
mod ppi;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};
pub use graphs::{
    load_graph_dataset, parse_graph_dataset, save_graph_dataset, synth_multilabel_graphs,
    GraphDataset, GraphSample, SynthGraphConfig,
};
pub use npy::{parse_npy, NpyArray};
pub use points::{
    load_point_clouds, save_point_clouds, synth_shapes, PointCloud, PointCloudDataset,
    SynthShapeConfig, SHAPE_CLASSES,
};
pub use ppi::convert_ppi_dir;

use crate::error::{Error, Result};
use crate::layers::{ModelSpec, Task};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Partition a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

/// Either kind of dataset the training loops accept.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Graphs(GraphDataset),
    Points(PointCloudDataset),
}

impl Dataset {
    pub fn task(&self) -> Task {
        match self {
            Dataset::Graphs(d) => d.task,
            Dataset::Points(_) => Task::Multiclass,
        }
    }

    /// Number of output units a model needs for this dataset.
    pub fn out_dim(&self) -> usize {
        match self {
            Dataset::Graphs(d) => d.label_dim,
            Dataset::Points(d) => d.classes.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dataset::Graphs(d) => d.validate(),
            Dataset::Points(d) => d.validate(),
        }
    }

    /// Checks that `spec` belongs to the right model family and fits the
    /// dataset's input and output widths.
    pub fn check_model(&self, spec: &ModelSpec) -> Result<()> {
        let (in_dim, family_ok) = match (self, spec) {
            (Dataset::Graphs(d), ModelSpec::Gat(_)) => (d.feature_dim, true),
            (Dataset::Points(_), ModelSpec::Dgcnn(_)) => (3, true),
            (Dataset::Graphs(_), _) => (0, false),
            (Dataset::Points(_), _) => (0, false),
        };
        if !family_ok {
            return Err(Error::UnsupportedTask(
                "gat models take graph datasets and dgcnn models take point clouds".into(),
            ));
        }
        if spec.in_dim() != in_dim || spec.out_dim() != self.out_dim() {
            return Err(Error::validation(format!(
                "model maps {} -> {} but the dataset has {} inputs and {} outputs",
                spec.in_dim(),
                spec.out_dim(),
                in_dim,
                self.out_dim()
            )));
        }
        Ok(())
    }

    pub fn split_len(&self, split: Split) -> usize {
        match self {
            Dataset::Graphs(d) => d.graphs.iter().filter(|g| g.split == split).count(),
            Dataset::Points(d) => d.clouds.iter().filter(|c| c.split == split).count(),
        }
    }
}
