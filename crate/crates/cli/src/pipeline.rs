//! Dataset loading, backend construction and feature lookup shared by commands.

use std::path::{Path, PathBuf};

use tsvision::dataset::{find_split_files, load_train_test, synthetic_sine_pair};
use tsvision::embedding::{embed_dataset_layers, read_archive, EmbedOptions, MockEmbedder, ServiceEmbedder};
use tsvision::{EmbeddingMatrix, ImageEmbedder, PatchingConfig, TimeSeriesDataset};

use crate::config::{BackendSpec, RunConfig};
use crate::Failure;

pub const SPLITS: [&str; 2] = ["train", "test"];

pub struct DatasetPair {
    pub name: String,
    pub train: TimeSeriesDataset,
    pub test: TimeSeriesDataset,
}

impl DatasetPair {
    pub fn split(&self, split: &str) -> &TimeSeriesDataset {
        if split == "train" {
            &self.train
        } else {
            &self.test
        }
    }
}

/// `toy` is a built-in two-class sine problem; anything else is a directory
/// holding `<NAME>_TRAIN` and `<NAME>_TEST` files.
pub fn load_dataset(spec: &str) -> Result<DatasetPair, Failure> {
    if spec == "toy" {
        return Ok(DatasetPair {
            name: "toy".into(),
            train: synthetic_sine_pair(100, 100, 0.1, 0)?,
            test: synthetic_sine_pair(100, 100, 0.1, 1)?,
        });
    }
    let dir = Path::new(spec);
    if !dir.is_dir() {
        return Err(Failure::Config(format!(
            "datasets: `{spec}` is neither `toy` nor a dataset directory"
        )));
    }
    let (train, test) = find_split_files(dir)?;
    let (train, test) = load_train_test(&train, &test)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_owned());
    Ok(DatasetPair { name, train, test })
}

pub enum Backend {
    Live(Box<dyn ImageEmbedder>),
    Archive(PathBuf),
}

impl Backend {
    pub fn open(spec: &BackendSpec) -> Result<Self, Failure> {
        Ok(match spec {
            BackendSpec::Mock { seed } => Backend::Live(Box::new(MockEmbedder::new(*seed))),
            BackendSpec::Service { endpoint, model } => {
                Backend::Live(Box::new(ServiceEmbedder::connect(endpoint, model)?))
            }
            BackendSpec::Archive { root } => {
                if !root.is_dir() {
                    return Err(Failure::Config(format!(
                        "backend.path: {} is not a directory",
                        root.display()
                    )));
                }
                Backend::Archive(root.clone())
            }
        })
    }

    pub fn live(&self) -> Option<&dyn ImageEmbedder> {
        match self {
            Backend::Live(b) => Some(b.as_ref()),
            Backend::Archive(_) => None,
        }
    }

    /// Patching for this backend: a service's fixed input size is adopted
    /// unless a resolution was configured.
    pub fn patching(&self, cfg: &RunConfig) -> PatchingConfig {
        let mut p = cfg.patching;
        if let Some(r) = self.live().and_then(|b| b.input_resolution()) {
            if !cfg.resolution_set {
                p.resolution = r;
            }
        }
        p
    }

    /// The single layer to use. Live backends default to the middle block;
    /// archives without a layer are read from `<root>/<dataset>/<split>`.
    pub fn layer(&self, cfg: &RunConfig) -> Option<usize> {
        match (cfg.layer, self) {
            (Some(l), _) => Some(l),
            (None, Backend::Live(b)) => Some(b.depth() / 2),
            (None, Backend::Archive(_)) => None,
        }
    }

    /// Layers for sweeps: the configured list, else every layer of a live
    /// backend.
    pub fn layer_list(&self, cfg: &RunConfig) -> Result<Vec<usize>, Failure> {
        match (&cfg.layers, self) {
            (Some(l), _) => Ok(l.clone()),
            (None, Backend::Live(b)) => Ok((0..=b.depth()).collect()),
            (None, Backend::Archive(_)) => Err(Failure::Config(
                "embedding.layers: the archive backend needs an explicit --layers list".into(),
            )),
        }
    }

    /// Features of one split at each requested layer.
    pub fn features(
        &self,
        cfg: &RunConfig,
        data: &DatasetPair,
        split: &str,
        layers: &[Option<usize>],
    ) -> Result<Vec<EmbeddingMatrix>, Failure> {
        let ds = data.split(split);
        match self {
            Backend::Live(b) => {
                let concrete: Vec<usize> = layers.iter().map(|l| l.unwrap_or(b.depth() / 2)).collect();
                let opts = EmbedOptions {
                    max_in_flight: cfg.max_in_flight,
                };
                Ok(embed_dataset_layers(
                    ds,
                    &self.patching(cfg),
                    b.as_ref(),
                    &concrete,
                    cfg.aggregation,
                    opts,
                )?)
            }
            Backend::Archive(root) => layers
                .iter()
                .map(|&layer| {
                    let dir = archive_dir(root, &data.name, layer, split);
                    if !dir.is_dir() {
                        return Err(Failure::Data(format!("no archive at {}", dir.display())));
                    }
                    let m = read_archive(&dir)?;
                    if m.n_samples() != ds.len() {
                        return Err(Failure::Data(format!(
                            "{}: archive holds {} rows, the {split} split has {} samples",
                            dir.display(),
                            m.n_samples(),
                            ds.len()
                        )));
                    }
                    Ok(m)
                })
                .collect(),
        }
    }
}

/// `<root>/<dataset>[/layer-<l>]/<split>`
pub fn archive_dir(root: &Path, dataset: &str, layer: Option<usize>, split: &str) -> PathBuf {
    let mut p = root.join(dataset);
    if let Some(l) = layer {
        p.push(format!("layer-{l}"));
    }
    p.join(split)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| tsvision::Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| tsvision::Error::io(format!("writing {}", path.display()), e).into())
}
