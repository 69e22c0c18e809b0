use super::Split;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

/// One labelled point cloud, `[n×3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Tensor,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloudDataset {
    /// Class names; labels index into this list.
    pub classes: Vec<String>,
    pub clouds: Vec<PointCloud>,
}

impl PointCloudDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &PointCloud> {
        self.clouds.iter().filter(move |c| c.split == split)
    }

    /// Points per cloud (0 for an empty dataset).
    pub fn cloud_size(&self) -> usize {
        self.clouds.first().map_or(0, |c| c.points.rows())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cloud_size();
        for (i, c) in self.clouds.iter().enumerate() {
            if c.points.shape() != [n, 3] {
                return Err(Error::validation(format!(
                    "cloud {i} has shape {:?}, expected [{n}, 3]",
                    c.points.shape()
                )));
            }
            if c.label >= self.classes.len() {
                return Err(Error::validation(format!(
                    "cloud {i} has label {} but there are {} classes",
                    c.label,
                    self.classes.len()
                )));
            }
            if !c.points.is_finite() {
                return Err(Error::validation(format!(
                    "cloud {i} has non-finite coordinates"
                )));
            }
        }
        Ok(())
    }

    pub fn require_splits(&self, splits: &[Split]) -> Result<()> {
        for &s in splits {
            if self.split(s).next().is_none() {
                return Err(Error::validation(format!("split {s} has no clouds")));
            }
        }
        Ok(())
    }
}

pub const SHAPE_CLASSES: [&str; 4] = ["sphere", "cube", "cylinder", "plane"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthShapeConfig {
    pub seed: u64,
    pub per_class: usize,
    pub points_per_cloud: usize,
}

impl Default for SynthShapeConfig {
    fn default() -> Self {
        SynthShapeConfig {
            seed: 0,
            per_class: 100,
            points_per_cloud: 64,
        }
    }
}

const JITTER: f64 = 0.01;

fn gaussian3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ]
}

fn surface_point(class: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match class {
        0 => loop {
            let [x, y, z] = gaussian3(rng);
            let r = (x * x + y * y + z * z).sqrt();
            if r > 1e-12 {
                return [x / r, y / r, z / r];
            }
        },
        1 => {
            let face = rng.random_range(0..6);
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => [s, a, b],
                1 => [a, s, b],
                _ => [a, b, s],
            }
        }
        2 => {
            // lateral area 4π against 2π for both caps
            if rng.random_bool(2.0 / 3.0) {
                let t = rng.random_range(0.0..2.0 * PI);
                [t.cos(), t.sin(), rng.random_range(-1.0..1.0)]
            } else {
                let t = rng.random_range(0.0..2.0 * PI);
                let r: f64 = rng.random::<f64>().sqrt();
                let z = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                [r * t.cos(), r * t.sin(), z]
            }
        }
        _ => [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
        ],
    }
}

/// Uniformly random rotation from a normalized Gaussian quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let (w, x, y, z) = loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            break (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        }
    };
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Four-class synthetic shape corpus: sphere, cube surface, cylinder surface
/// and square plane, each uniformly sampled over its surface, randomly
/// rotated and jittered with Gaussian noise (σ = 0.01, offset length capped
/// at 3σ).
///
/// Within each class the first 70% of clouds are training clouds and the
/// remainder is split evenly between validation and test.
pub fn synth_shapes(cfg: &SynthShapeConfig) -> Result<PointCloudDataset> {
    if cfg.per_class == 0 || cfg.points_per_cloud == 0 {
        return Err(Error::validation("synthetic shape sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = (cfg.per_class * 7).div_ceil(10);
    let n_val = (cfg.per_class - n_train).div_ceil(2);
    let mut clouds = Vec::with_capacity(cfg.per_class * SHAPE_CLASSES.len());
    for i in 0..cfg.per_class {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        for class in 0..SHAPE_CLASSES.len() {
            let rot = random_rotation(&mut rng);
            let mut data = Vec::with_capacity(cfg.points_per_cloud * 3);
            for _ in 0..cfg.points_per_cloud {
                let p = surface_point(class, &mut rng);
                let mut j = gaussian3(&mut rng).map(|v| v * JITTER);
                let len = j.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len > 3.0 * JITTER {
                    j = j.map(|v| v * 3.0 * JITTER / len);
                }
                for (r, jv) in rot.iter().zip(j) {
                    data.push((r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + jv) as f32);
                }
            }
            clouds.push(PointCloud {
                points: Tensor::matrix(cfg.points_per_cloud, 3, data)?,
                label: class,
                split,
            });
        }
    }
    Ok(PointCloudDataset {
        classes: SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
        clouds,
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn parse_cloud_file(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), ln + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                location: loc(),
                message: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        for f in fields {
            let v: f32 = f.parse().map_err(|_| Error::Parse {
                location: loc(),
                message: format!("{f:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    location: loc(),
                    message: format!("{f:?} is not finite"),
                });
            }
            data.push(v);
        }
    }
    Tensor::new(vec![data.len() / 3, 3], data)
}

/// Loads `root/<split>/<class>/*.txt` or, when no split directories exist,
/// `root/<class>/*.txt` with file `i` of each class (sorted by name) going
/// to validation when `i % 10 == 8`, test when `i % 10 == 9`, else train.
///
/// Class indices follow the sorted class names. Every cloud must have the
/// same number of points.
pub fn load_point_clouds(root: impl AsRef<Path>) -> Result<PointCloudDataset> {
    let root = root.as_ref();
    let split_dirs: Vec<(Split, PathBuf)> = Split::ALL
        .iter()
        .map(|s| (*s, root.join(s.name())))
        .filter(|(_, p)| p.is_dir())
        .collect();
    // (split or None for the flat layout, class name, class dir)
    let mut class_dirs: Vec<(Option<Split>, String, PathBuf)> = Vec::new();
    let layout_roots: Vec<(Option<Split>, PathBuf)> = if split_dirs.is_empty() {
        vec![(None, root.to_path_buf())]
    } else {
        split_dirs.into_iter().map(|(s, p)| (Some(s), p)).collect()
    };
    for (split, dir) in layout_roots {
        for p in sorted_entries(&dir)? {
            if p.is_dir() {
                let name = p
                    .file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned();
                class_dirs.push((split, name, p));
            }
        }
    }
    let classes: Vec<String> = class_dirs
        .iter()
        .map(|(_, n, _)| n.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() {
        return Err(Error::validation(format!(
            "{} contains no class directories",
            root.display()
        )));
    }

    let mut clouds = Vec::new();
    let mut size: Option<(usize, PathBuf)> = None;
    for (split, name, dir) in &class_dirs {
        let label = classes.binary_search(name).expect("class collected above");
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
            .collect();
        for (i, file) in files.iter().enumerate() {
            let points = parse_cloud_file(file)?;
            match &size {
                None => size = Some((points.rows(), file.clone())),
                Some((n, first)) if *n != points.rows() => {
                    return Err(Error::validation(format!(
                        "{} has {} points but {} has {n}",
                        file.display(),
                        points.rows(),
                        first.display()
                    )))
                }
                _ => {}
            }
            let split = split.unwrap_or(match i % 10 {
                8 => Split::Val,
                9 => Split::Test,
                _ => Split::Train,
            });
            clouds.push(PointCloud {
                points,
                label,
                split,
            });
        }
    }
    let ds = PointCloudDataset { classes, clouds };
    ds.validate()?;
    Ok(ds)
}

/// Writes the split layout read by [`load_point_clouds`].
pub fn save_point_clouds(ds: &PointCloudDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for (i, c) in ds.clouds.iter().enumerate() {
        let class = ds.classes.get(c.label).ok_or_else(|| {
            Error::validation(format!("cloud {i} has label {} out of range", c.label))
        })?;
        let dir = root.join(c.split.name()).join(class);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut text = String::new();
        for r in 0..c.points.rows() {
            let p = c.points.row(r);
            text.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
        }
        let path = dir.join(format!("{i:06}.txt"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
