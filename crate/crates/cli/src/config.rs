//! Run configuration: an optional TOML file overlaid with command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use tsvision::models::{ClassifierKind, Protocol};
use tsvision::{Aggregation, PatchGeometry, PatchingConfig};

use crate::Failure;

pub const ENDPOINT_ENV: &str = "TSVISION_ENDPOINT";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<String>,
    #[serde(default)]
    pub patching: PatchingSection,
    pub backend: Option<BackendSection>,
    #[serde(default)]
    pub embedding: EmbeddingSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchingSection {
    pub patch_len: Option<usize>,
    pub stride: Option<usize>,
    pub resolution: Option<usize>,
    pub contrast: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: String,
    pub seed: Option<u64>,
    pub path: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    pub layer: Option<usize>,
    pub layers: Option<Vec<usize>>,
    pub aggregation: Option<String>,
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    pub kind: Option<String>,
    pub lambda_grid: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub val_fraction: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub standardize: Option<bool>,
}

/// Flags shared by the pipeline commands. Each overrides the config file.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `toy` or a directory holding `<NAME>_TRAIN` / `<NAME>_TEST` files; repeatable.
    #[arg(long = "dataset")]
    pub datasets: Vec<String>,
    /// mock, archive or service.
    #[arg(long)]
    pub backend: Option<String>,
    /// Embedding service base URL.
    #[arg(long, env = ENDPOINT_ENV)]
    pub endpoint: Option<String>,
    /// Model identifier on the embedding service.
    #[arg(long)]
    pub model: Option<String>,
    /// Root directory of embedding archives (archive backend).
    #[arg(long)]
    pub archive: Option<PathBuf>,
    /// Seed of the mock backend.
    #[arg(long)]
    pub mock_seed: Option<u64>,
    /// Layer index (0 = patch embedding); defaults to the middle block.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Comma-separated layer list for sweeps and multi-layer embedding.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// mean_all or cls.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Comma-separated evaluation seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub patch_len: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub contrast: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock { seed: u64 },
    Archive { root: PathBuf },
    Service { endpoint: String, model: String },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub out: PathBuf,
    pub datasets: Vec<String>,
    pub patching: PatchingConfig,
    /// Resolution given explicitly; otherwise a service's own resolution wins.
    pub resolution_set: bool,
    pub backend: BackendSpec,
    pub layer: Option<usize>,
    pub layers: Option<Vec<usize>>,
    pub aggregation: Aggregation,
    pub max_in_flight: usize,
    pub protocol: Protocol,
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{key}: {msg}"))
}

pub fn read_file_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn resolve_backend(file: Option<BackendSection>, args: &RunArgs) -> Result<BackendSpec, Failure> {
    let kind = args
        .backend
        .clone()
        .or_else(|| file.as_ref().map(|b| b.kind.clone()))
        .unwrap_or_else(|| "mock".into());
    let file = file.unwrap_or_default();
    let from_file_kind = args.backend.is_none() || args.backend.as_deref() == Some(file.kind.as_str());
    // options in the file only apply when the file's kind is the one in use
    let pick = |flag: Option<String>, key: Option<String>| flag.or(if from_file_kind { key } else { None });
    let stray = |set: bool, key: &str| -> Result<(), Failure> {
        if set && from_file_kind {
            Err(cfg_err(&format!("backend.{key}"), format!("not used by backend kind `{kind}`")))
        } else {
            Ok(())
        }
    };
    match kind.as_str() {
        "mock" => {
            stray(file.path.is_some(), "path")?;
            stray(file.model.is_some(), "model")?;
            stray(file.endpoint.is_some(), "endpoint")?;
            let seed = args.mock_seed.or(if from_file_kind { file.seed } else { None }).unwrap_or(0);
            Ok(BackendSpec::Mock { seed })
        }
        "archive" => {
            stray(file.seed.is_some(), "seed")?;
            stray(file.model.is_some(), "model")?;
            stray(file.endpoint.is_some(), "endpoint")?;
            let root = args
                .archive
                .clone()
                .or(if from_file_kind { file.path } else { None })
                .ok_or_else(|| cfg_err("backend.path", "archive backend needs --archive or backend.path"))?;
            Ok(BackendSpec::Archive { root })
        }
        "service" => {
            stray(file.seed.is_some(), "seed")?;
            stray(file.path.is_some(), "path")?;
            let endpoint = pick(args.endpoint.clone(), file.endpoint).ok_or_else(|| {
                cfg_err(
                    "backend.endpoint",
                    format!("service backend needs --endpoint, backend.endpoint or {ENDPOINT_ENV}"),
                )
            })?;
            let model = pick(args.model.clone(), file.model)
                .ok_or_else(|| cfg_err("backend.model", "service backend needs --model or backend.model"))?;
            Ok(BackendSpec::Service { endpoint, model })
        }
        other => Err(cfg_err("backend.kind", format!("unknown backend `{other}` (mock, archive or service)"))),
    }
}

fn resolve_patching(file: &PatchingSection, args: &RunArgs) -> Result<PatchingConfig, Failure> {
    let mut cfg = PatchingConfig::default();
    let p = args.patch_len.or(file.patch_len);
    let s = args.stride.or(file.stride);
    cfg.geometry = match (p, s) {
        (None, None) => PatchGeometry::Auto,
        (Some(patch_len), Some(stride)) => PatchGeometry::Fixed { patch_len, stride },
        (Some(patch_len), None) => PatchGeometry::Fixed {
            patch_len,
            stride: tsvision::imaging::default_stride(patch_len),
        },
        (None, Some(_)) => return Err(cfg_err("patching.stride", "a stride needs patch_len as well")),
    };
    if let Some(r) = args.resolution.or(file.resolution) {
        cfg.resolution = r;
    }
    if let Some(c) = args.contrast.or(file.contrast) {
        cfg.contrast = c;
    }
    cfg.validate().map_err(|e| cfg_err("patching", e))?;
    Ok(cfg)
}

fn resolve_protocol(file: &ClassifierSection, args: &RunArgs) -> Result<Protocol, Failure> {
    let mut p = Protocol::default();
    if let Some(k) = &file.kind {
        p.classifier = k.parse::<ClassifierKind>().map_err(|e| cfg_err("classifier.kind", e))?;
    }
    if let Some(g) = &file.lambda_grid {
        p.lambda_grid = g.clone();
    }
    if let Some(s) = args.seeds.clone().or_else(|| file.seeds.clone()) {
        p.seeds = s;
    }
    if let Some(v) = file.val_fraction {
        if !(v > 0.0 && v < 1.0) {
            return Err(cfg_err("classifier.val_fraction", "must lie in (0, 1)"));
        }
        p.val_fraction = v;
    }
    if let Some(v) = file.max_iter {
        p.max_iter = v;
    }
    if let Some(v) = file.tol {
        p.tol = v;
    }
    if let Some(v) = file.standardize {
        p.standardize = v;
    }
    if p.seeds.is_empty() {
        return Err(cfg_err("classifier.seeds", "at least one seed is required"));
    }
    p.validate().map_err(|e| cfg_err("classifier", e))?;
    Ok(p)
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self, Failure> {
        let file = match &args.config {
            Some(path) => read_file_config(path)?,
            None => FileConfig::default(),
        };
        let datasets = if args.datasets.is_empty() {
            file.datasets.clone()
        } else {
            args.datasets.clone()
        };
        let aggregation = match args.aggregation.clone().or(file.embedding.aggregation.clone()) {
            Some(a) => a.parse().map_err(|e| cfg_err("embedding.aggregation", e))?,
            None => Aggregation::MeanAll,
        };
        let max_in_flight = file.embedding.max_in_flight.unwrap_or(4);
        if max_in_flight == 0 {
            return Err(cfg_err("embedding.max_in_flight", "must be positive"));
        }
        let layers = args.layers.clone().or(file.embedding.layers.clone());
        if layers.as_ref().is_some_and(|l| l.is_empty()) {
            return Err(cfg_err("embedding.layers", "layer list is empty"));
        }
        Ok(Self {
            out: args.out.clone().or(file.out.clone()).unwrap_or_else(|| "tsvision-out".into()),
            datasets,
            patching: resolve_patching(&file.patching, args)?,
            resolution_set: args.resolution.or(file.patching.resolution).is_some(),
            backend: resolve_backend(file.backend, args)?,
            layer: args.layer.or(file.embedding.layer),
            layers,
            aggregation,
            max_in_flight,
            protocol: resolve_protocol(&file.classifier, args)?,
        })
    }

    pub fn require_datasets(&self) -> Result<(), Failure> {
        if self.datasets.is_empty() {
            return Err(cfg_err("datasets", "no dataset given (use --dataset or `datasets` in the config)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<FileConfig, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn full_file_parses() {
        let f = parse(
            r#"
            out = "runs/a"
            datasets = ["toy"]
            [patching]
            patch_len = 8
            stride = 2
            resolution = 64
            [backend]
            kind = "mock"
            seed = 3
            [embedding]
            layer = 4
            aggregation = "cls"
            [classifier]
            kind = "nearest_centroid"
            seeds = [1, 2]
            "#,
        )
        .unwrap();
        assert_eq!(f.backend.as_ref().unwrap().seed, Some(3));
        assert_eq!(f.classifier.seeds, Some(vec![1, 2]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("[classifier]\nseed = [1]\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn flags_override_and_validate() {
        let args = RunArgs {
            backend: Some("service".into()),
            endpoint: Some("http://x".into()),
            model: Some("m".into()),
            ..RunArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(
            cfg.backend,
            BackendSpec::Service {
                endpoint: "http://x".into(),
                model: "m".into()
            }
        );
        let no_model = RunArgs {
            backend: Some("service".into()),
            endpoint: Some("http://x".into()),
            ..RunArgs::default()
        };
        assert!(RunConfig::resolve(&no_model).is_err());
        let no_endpoint = RunArgs {
            backend: Some("service".into()),
            model: Some("m".into()),
            ..RunArgs::default()
        };
        assert!(RunConfig::resolve(&no_endpoint).is_err());
        let empty_seeds = RunArgs {
            seeds: Some(vec![]),
            ..RunArgs::default()
        };
        assert!(RunConfig::resolve(&empty_seeds).is_err());
    }

    #[test]
    fn stray_backend_options_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[backend]\nkind = \"mock\"\npath = \"x\"\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            ..RunArgs::default()
        };
        match RunConfig::resolve(&args) {
            Err(Failure::Config(msg)) => assert!(msg.starts_with("backend.path"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
