//! Per-sample embeddings from image backends, plus the on-disk archive.
//!
//! A backend maps one rendered channel image to one vector per requested
//! layer (layer 0 is the patch-embedding output, `1..=L` the block outputs).
//! Channel vectors are concatenated in channel order to form a sample row;
//! rows keep dataset order no matter in which order backend calls finish.

mod archive;
mod mock;
pub mod service;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use archive::{read_archive, read_manifest, write_archive, ArchiveManifest, ResumableWriter, MANIFEST_FILE, PAYLOAD_FILE};
pub use mock::{mock_embed, mock_tokens_from_gray, MockEmbedder, MOCK_PATCH_TOKENS, MOCK_WIDTH};
pub use service::ServiceEmbedder;

use crate::dataset::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::imaging::{transform_sample, PatchingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean over the class token and all patch tokens.
    #[default]
    MeanAll,
    /// The class token (row 0) alone.
    Cls,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::MeanAll => "mean_all",
            Aggregation::Cls => "cls",
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_all" | "mean" => Ok(Aggregation::MeanAll),
            "cls" => Ok(Aggregation::Cls),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregation `{other}` (expected mean_all or cls)"
            ))),
        }
    }
}

/// Collapses a `(K + 1) x d` token matrix (class token first) to one vector.
pub fn aggregate_tokens(tokens: ArrayView2<'_, f32>, mode: Aggregation) -> Result<Vec<f32>> {
    if tokens.nrows() == 0 || tokens.ncols() == 0 {
        return Err(Error::Shape("empty token matrix".into()));
    }
    Ok(match mode {
        Aggregation::Cls => tokens.row(0).to_vec(),
        Aggregation::MeanAll => {
            // accumulate in f64 so the mean of identical rows is exact
            let n = tokens.nrows() as f64;
            tokens
                .axis_iter(Axis(1))
                .map(|col| (col.iter().map(|&v| f64::from(v)).sum::<f64>() / n) as f32)
                .collect()
        }
    })
}

pub fn concat_channels(vectors: &[Vec<f32>]) -> Vec<f32> {
    vectors.iter().flatten().copied().collect()
}

/// Where a block of columns came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub model_id: String,
    #[serde(default)]
    pub layer: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "one")]
    pub channels: usize,
    pub channel_dim: usize,
}

fn one() -> usize {
    1
}

impl Source {
    pub fn dim(&self) -> usize {
        self.channels * self.channel_dim
    }
}

/// `N x F` feature table with provenance. Fused tables carry one source per
/// parent, in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f32>,
    dataset: String,
    sources: Vec<Source>,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f32>, dataset: impl Into<String>, sources: Vec<Source>) -> Result<Self> {
        let expected: usize = sources.iter().map(Source::dim).sum();
        if sources.is_empty() || expected != values.ncols() {
            return Err(Error::Shape(format!(
                "feature count {} does not match the declared layout ({expected})",
                values.ncols()
            )));
        }
        Ok(Self {
            values,
            dataset: dataset.into(),
            sources,
        })
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// `model` for a single source, `a+b+...` after fusion.
    pub fn model_id(&self) -> String {
        self.sources
            .iter()
            .map(|s| s.model_id.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn layer(&self) -> usize {
        self.sources[0].layer
    }

    pub fn aggregation(&self) -> Aggregation {
        self.sources[0].aggregation
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }
}

/// Horizontal concatenation of tables describing the same samples.
pub fn fuse_models(mats: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    let n = first.n_samples();
    if let Some(bad) = mats.iter().find(|m| m.n_samples() != n) {
        return Err(Error::Shape(format!(
            "cannot fuse tables with {n} and {} rows",
            bad.n_samples()
        )));
    }
    let views: Vec<_> = mats.iter().map(|m| m.values.view()).collect();
    let values = ndarray::concatenate(Axis(1), &views)
        .map_err(|e| Error::Shape(format!("concatenation failed: {e}")))?;
    let sources = mats.iter().flat_map(|m| m.sources.iter().cloned()).collect();
    EmbeddingMatrix::new(values, first.dataset.clone(), sources)
}

/// A frozen image model reachable in-process or over the wire.
pub trait ImageEmbedder: Sync {
    fn model_id(&self) -> &str;

    /// Number of blocks L; valid layer indices are `0..=L`.
    fn depth(&self) -> usize;

    /// Width of one aggregated vector.
    fn width(&self) -> usize;

    /// Input resolution the model insists on, if any.
    fn input_resolution(&self) -> Option<usize> {
        None
    }

    /// One aggregated vector per requested layer, in request order.
    fn embed_image(
        &self,
        pixels: &[u8],
        resolution: usize,
        layers: &[usize],
        aggregation: Aggregation,
    ) -> Result<Vec<Vec<f32>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedOptions {
    /// Upper bound on concurrent backend calls.
    pub max_in_flight: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self { max_in_flight: 4 }
    }
}

pub fn check_layers(backend: &dyn ImageEmbedder, layers: &[usize]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no layers requested".into()));
    }
    if let Some(&layer) = layers.iter().find(|&&l| l > backend.depth()) {
        return Err(Error::LayerOutOfRange {
            model_id: backend.model_id().to_owned(),
            layer,
            depth: backend.depth(),
        });
    }
    Ok(())
}

fn embed_one(
    ds: &TimeSeriesDataset,
    idx: usize,
    cfg: &PatchingConfig,
    backend: &dyn ImageEmbedder,
    layers: &[usize],
    aggregation: Aggregation,
) -> Result<Vec<Vec<f32>>> {
    let planes = transform_sample::<f64>(&ds.samples()[idx], cfg)?;
    let mut per_layer: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(planes.len()); layers.len()];
    for plane in &planes {
        let vecs = backend.embed_image(plane.pixels(), plane.resolution(), layers, aggregation)?;
        if vecs.len() != layers.len() {
            return Err(Error::Shape(format!(
                "backend returned {} vectors for {} layers",
                vecs.len(),
                layers.len()
            )));
        }
        for (slot, v) in per_layer.iter_mut().zip(vecs) {
            if v.len() != backend.width() {
                return Err(Error::Shape(format!(
                    "backend returned width {}, expected {}",
                    v.len(),
                    backend.width()
                )));
            }
            slot.push(v);
        }
    }
    Ok(per_layer.iter().map(|chs| concat_channels(chs)).collect())
}

/// Embeds samples `range` of `ds` and hands each sample's per-layer rows to
/// `sink` in ascending index order.
///
/// Up to `opts.max_in_flight` samples are processed concurrently. If any
/// sample fails, the remaining work is still attempted, the ordered prefix
/// before the first failure has been delivered to `sink`, and the error
/// lists every failed index.
pub fn embed_rows(
    ds: &TimeSeriesDataset,
    cfg: &PatchingConfig,
    backend: &dyn ImageEmbedder,
    layers: &[usize],
    aggregation: Aggregation,
    range: Range<usize>,
    opts: EmbedOptions,
    mut sink: impl FnMut(usize, Vec<Vec<f32>>) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    check_layers(backend, layers)?;
    if let Some(r) = backend.input_resolution() {
        if r != cfg.resolution {
            return Err(Error::InvalidArgument(format!(
                "model `{}` expects {r}x{r} images, configured resolution is {}",
                backend.model_id(),
                cfg.resolution
            )));
        }
    }
    let range = range.start..range.end.min(ds.len());
    if range.is_empty() {
        return Ok(());
    }
    let next = AtomicUsize::new(range.start);
    let workers = opts.max_in_flight.clamp(1, range.len());
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<Vec<f32>>>)>();

    let mut failed: Vec<usize> = Vec::new();
    let mut first_err: Option<Error> = None;
    let mut sink_err: Option<Error> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let range = range.clone();
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= range.end {
                    break;
                }
                let res = embed_one(ds, idx, cfg, backend, layers, aggregation);
                if tx.send((idx, res)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending: BTreeMap<usize, Result<Vec<Vec<f32>>>> = BTreeMap::new();
        let mut cursor = range.start;
        let mut blocked = false;
        for (idx, res) in rx {
            pending.insert(idx, res);
            while let Some(res) = pending.remove(&cursor) {
                match res {
                    Ok(rows) if !blocked => {
                        if let Err(e) = sink(cursor, rows) {
                            sink_err.get_or_insert(e);
                            blocked = true;
                            next.store(range.end, Ordering::SeqCst);
                        }
                    }
                    Ok(_) => {}
                    Err(e) => {
                        failed.push(cursor);
                        first_err.get_or_insert(e);
                        blocked = true;
                    }
                }
                cursor += 1;
            }
        }
    });

    if let Some(e) = sink_err {
        return Err(e);
    }
    match first_err {
        Some(e) => Err(Error::EmbedSamples {
            failed,
            source: Box::new(e),
        }),
        None => Ok(()),
    }
}

/// Embeds a whole dataset, one matrix per requested layer.
pub fn embed_dataset_layers(
    ds: &TimeSeriesDataset,
    cfg: &PatchingConfig,
    backend: &dyn ImageEmbedder,
    layers: &[usize],
    aggregation: Aggregation,
    opts: EmbedOptions,
) -> Result<Vec<EmbeddingMatrix>> {
    let dim = ds.n_channels() * backend.width();
    let mut buffers: Vec<Vec<f32>> = vec![Vec::with_capacity(ds.len() * dim); layers.len()];
    embed_rows(ds, cfg, backend, layers, aggregation, 0..ds.len(), opts, |_, rows| {
        for (buf, row) in buffers.iter_mut().zip(rows) {
            buf.extend(row);
        }
        Ok(())
    })?;
    layers
        .iter()
        .zip(buffers)
        .map(|(&layer, buf)| {
            let values = Array2::from_shape_vec((ds.len(), dim), buf)
                .map_err(|e| Error::Shape(e.to_string()))?;
            EmbeddingMatrix::new(
                values,
                ds.name(),
                vec![Source {
                    model_id: backend.model_id().to_owned(),
                    layer,
                    aggregation,
                    channels: ds.n_channels(),
                    channel_dim: backend.width(),
                }],
            )
        })
        .collect()
}

pub fn embed_dataset(
    ds: &TimeSeriesDataset,
    cfg: &PatchingConfig,
    backend: &dyn ImageEmbedder,
    layer: usize,
    aggregation: Aggregation,
) -> Result<EmbeddingMatrix> {
    let mut mats =
        embed_dataset_layers(ds, cfg, backend, &[layer], aggregation, EmbedOptions::default())?;
    Ok(mats.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic_sine_pair;
    use ndarray::array;

    #[test]
    fn aggregation_modes() {
        let t = array![[1.0f32, 1.0], [3.0, 3.0]];
        assert_eq!(aggregate_tokens(t.view(), Aggregation::MeanAll).unwrap(), vec![2.0, 2.0]);
        assert_eq!(aggregate_tokens(t.view(), Aggregation::Cls).unwrap(), vec![1.0, 1.0]);
        let same = Array2::from_elem((5, 3), 0.1f32);
        assert_eq!(
            aggregate_tokens(same.view(), Aggregation::MeanAll).unwrap(),
            aggregate_tokens(same.view(), Aggregation::Cls).unwrap()
        );
        let empty = Array2::<f32>::zeros((0, 2));
        assert!(aggregate_tokens(empty.view(), Aggregation::Cls).is_err());
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat_channels(&[vec![1.0, 2.0]]), vec![1.0, 2.0]);
        assert_eq!(concat_channels(&[vec![1.0, 2.0], vec![3.0, 4.0]]), vec![1.0, 2.0, 3.0, 4.0]);
        let six: Vec<Vec<f32>> = (0..6).map(|_| vec![0.0; 1024]).collect();
        assert_eq!(concat_channels(&six).len(), 6144);
    }

    fn table(n: usize, f: usize, model: &str) -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            Array2::from_shape_fn((n, f), |(i, j)| (i * f + j) as f32),
            "d",
            vec![Source {
                model_id: model.into(),
                layer: 3,
                aggregation: Aggregation::MeanAll,
                channels: 1,
                channel_dim: f,
            }],
        )
        .unwrap()
    }

    #[test]
    fn fuse_adds_dims_and_records_parents() {
        let f = fuse_models(&[table(4, 1024, "vit"), table(4, 256, "tsfm")]).unwrap();
        assert_eq!(f.dim(), 1280);
        assert_eq!(f.model_id(), "vit+tsfm");
        assert_eq!(f.sources().len(), 2);
        assert!(fuse_models(&[table(4, 2, "a"), table(5, 2, "b")]).is_err());
        assert!(fuse_models(&[]).is_err());
    }

    #[test]
    fn layout_checked() {
        let bad = EmbeddingMatrix::new(
            Array2::zeros((2, 5)),
            "d",
            vec![Source {
                model_id: "m".into(),
                layer: 0,
                aggregation: Aggregation::Cls,
                channels: 2,
                channel_dim: 2,
            }],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn mock_dataset_embedding_is_deterministic() {
        let ds = synthetic_sine_pair(6, 40, 0.1, 0).unwrap();
        let cfg = PatchingConfig {
            resolution: 32,
            ..Default::default()
        };
        let backend = MockEmbedder::new(5);
        let a = embed_dataset(&ds, &cfg, &backend, 2, Aggregation::MeanAll).unwrap();
        let b = embed_dataset(&ds, &cfg, &backend, 2, Aggregation::MeanAll).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_samples(), 6);
        assert_eq!(a.dim(), MOCK_WIDTH);
    }

    #[test]
    fn layer_range_checked() {
        let ds = synthetic_sine_pair(2, 40, 0.1, 0).unwrap();
        let backend = MockEmbedder::new(0).with_depth(32);
        let err = embed_dataset(&ds, &PatchingConfig::default(), &backend, 99, Aggregation::Cls)
            .unwrap_err();
        assert!(matches!(err, Error::LayerOutOfRange { layer: 99, depth: 32, .. }));
    }

    #[test]
    fn failures_report_indices_and_keep_prefix() {
        struct Flaky;
        impl ImageEmbedder for Flaky {
            fn model_id(&self) -> &str {
                "flaky"
            }
            fn depth(&self) -> usize {
                1
            }
            fn width(&self) -> usize {
                1
            }
            fn embed_image(&self, pixels: &[u8], _: usize, layers: &[usize], _: Aggregation) -> Result<Vec<Vec<f32>>> {
                // top-right pixel is bright for the sine class only
                if pixels[15 * 3] > 128 {
                    return Err(Error::Backend {
                        endpoint: "mem".into(),
                        code: "boom".into(),
                        message: "fail".into(),
                    });
                }
                Ok(vec![vec![pixels[0] as f32]; layers.len()])
            }
        }
        let ds = synthetic_sine_pair(6, 40, 0.0, 0).unwrap();
        let cfg = PatchingConfig { resolution: 16, ..Default::default() };
        let mut delivered = Vec::new();
        let err = embed_rows(&ds, &cfg, &Flaky, &[0], Aggregation::Cls, 0..6, EmbedOptions::default(), |i, _| {
            delivered.push(i);
            Ok(())
        })
        .unwrap_err();
        match err {
            Error::EmbedSamples { failed, .. } => {
                assert!(!failed.is_empty());
                assert!(delivered.iter().all(|&i| i < failed[0]));
                assert_eq!(delivered, (0..failed[0]).collect::<Vec<_>>());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
