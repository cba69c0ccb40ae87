use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ndarray::{concatenate, Array2, Axis};
use serde_json::json;

use tsvision::analysis::{id_with_subsampling, mutual_knn, pca_components_for_variance, twonn_id, IdMethod};
use tsvision::embedding::{
    embed_rows, fuse_models, read_archive, read_manifest, write_archive, EmbedOptions, ResumableWriter,
};
use tsvision::imaging::transform_sample;
use tsvision::models::{evaluate, ClassifierKind, EvalReport, CSV_HEADER};
use tsvision::theory::{
    brute_force_check, fraction_to_f64, patterns, relevance_report, Arrangement, TheoryInstance,
};
use tsvision::{EmbeddingMatrix, Exact, Rational, Source};

use crate::config::RunConfig;
use crate::pipeline::{archive_dir, load_dataset, write_text, Backend, DatasetPair, SPLITS};
use crate::Failure;

const DISCARD_FRACTION: f64 = 0.1;

/// Labelled feature tables analyzed together.
type Group = (String, Vec<(String, Array2<f64>)>);

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| tsvision::Error::io(format!("creating {}", parent.display()), e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn csv_row<I, T>(w: &mut csv::Writer<std::fs::File>, row: I) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| Failure::Data(e.to_string()))
}

fn csv_flush(mut w: csv::Writer<std::fs::File>) -> Result<(), Failure> {
    w.flush().map_err(|e| Failure::Data(e.to_string()))
}

fn load_all(cfg: &RunConfig) -> Result<Vec<DatasetPair>, Failure> {
    cfg.require_datasets()?;
    cfg.datasets.iter().map(|d| load_dataset(d)).collect()
}

pub fn transform(args: &crate::config::RunArgs, stats_only: bool) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(args)?;
    let data = load_all(&cfg)?;
    let stats_path = cfg.out.join("stats.csv");
    let mut w = csv_writer(&stats_path)?;
    csv_row(&mut w, ["dataset", "split", "sample", "channel", "T", "P", "S", "M", "pad_len"])?;
    for d in &data {
        for split in SPLITS {
            let img_dir = cfg.out.join("images").join(&d.name).join(split);
            if !stats_only {
                std::fs::create_dir_all(&img_dir)
                    .map_err(|e| tsvision::Error::io(format!("creating {}", img_dir.display()), e))?;
            }
            for (i, sample) in d.split(split).samples().iter().enumerate() {
                let planes = transform_sample::<f64>(sample, &cfg.patching)?;
                for (c, plane) in planes.iter().enumerate() {
                    let m = plane.meta();
                    csv_row(
                        &mut w,
                        [
                            d.name.clone(),
                            split.to_owned(),
                            i.to_string(),
                            c.to_string(),
                            m.original_len.to_string(),
                            m.patch_len.to_string(),
                            m.stride.to_string(),
                            plane.n_patches().to_string(),
                            m.pad_len.to_string(),
                        ],
                    )?;
                    if !stats_only {
                        plane.write_png(img_dir.join(format!("{i:05}_c{c}.png")))?;
                    }
                }
            }
        }
        println!("{}: {} train / {} test samples transformed", d.name, d.train.len(), d.test.len());
    }
    csv_flush(w)
}

pub fn embed(args: &crate::config::RunArgs) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(args)?;
    let backend = Backend::open(&cfg.backend)?;
    let Some(live) = backend.live() else {
        return Err(Failure::Config("backend.kind: embed needs the mock or service backend".into()));
    };
    let layers = match &cfg.layers {
        Some(l) => l.clone(),
        None => vec![backend.layer(&cfg).expect("live backends always have a layer")],
    };
    let patching = backend.patching(&cfg);
    let root = cfg.out.join("embeddings");
    for d in load_all(&cfg)? {
        for split in SPLITS {
            let ds = d.split(split);
            let mut todo = Vec::new();
            for &layer in &layers {
                let source = Source {
                    model_id: live.model_id().to_owned(),
                    layer,
                    aggregation: cfg.aggregation,
                    channels: ds.n_channels(),
                    channel_dim: live.width(),
                };
                let dir = archive_dir(&root, &d.name, Some(layer), split);
                if let Ok(m) = read_manifest(&dir) {
                    if m.n_samples == ds.len() && m.sources == [source.clone()] {
                        println!("{}: complete, skipped", dir.display());
                        continue;
                    }
                    return Err(Failure::Config(format!(
                        "{} holds an archive made with other settings; remove it or pick another --out",
                        dir.display()
                    )));
                }
                let writer = ResumableWriter::open(&dir, d.name.clone(), ds.len(), source)?;
                todo.push((layer, dir, writer));
            }
            if todo.is_empty() {
                continue;
            }
            let start = todo.iter().map(|(_, _, w)| w.completed()).min().unwrap_or(0);
            let todo_layers: Vec<usize> = todo.iter().map(|(l, _, _)| *l).collect();
            let opts = EmbedOptions {
                max_in_flight: cfg.max_in_flight,
            };
            embed_rows(
                ds,
                &patching,
                live,
                &todo_layers,
                cfg.aggregation,
                start..ds.len(),
                opts,
                |idx, rows| {
                    for ((_, _, w), row) in todo.iter_mut().zip(rows) {
                        if idx >= w.completed() {
                            w.append(&row)?;
                        }
                    }
                    Ok(())
                },
            )?;
            for (_, dir, w) in todo {
                w.finish()?;
                println!("{}: {} rows written", dir.display(), ds.len());
            }
        }
    }
    Ok(())
}

fn run_eval(
    cfg: &RunConfig,
    d: &DatasetPair,
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
) -> Result<EvalReport, Failure> {
    Ok(evaluate(
        train.to_f64().view(),
        &d.train.labels(),
        test.to_f64().view(),
        &d.test.labels(),
        d.train.n_classes(),
        &cfg.protocol,
        &d.name,
        &train.model_id(),
    )?)
}

pub fn classify(args: &crate::config::RunArgs, zero_shot: bool) -> Result<(), Failure> {
    let mut cfg = RunConfig::resolve(args)?;
    if zero_shot {
        cfg.protocol.classifier = ClassifierKind::NearestCentroid;
    }
    let data = load_all(&cfg)?;
    let backend = Backend::open(&cfg.backend)?;
    let layer = backend.layer(&cfg);
    let mut csv = format!("{CSV_HEADER}\n");
    let mut json_reports = Vec::new();
    for d in &data {
        let train = backend.features(&cfg, d, "train", &[layer])?.remove(0);
        let test = backend.features(&cfg, d, "test", &[layer])?.remove(0);
        let report = run_eval(&cfg, d, &train, &test)?;
        println!(
            "{} {} {}: accuracy {:.4} +/- {:.4}",
            report.dataset,
            report.model,
            report.classifier.as_str(),
            report.mean_accuracy,
            report.std_accuracy
        );
        for row in report.csv_rows() {
            csv.push_str(&row);
            csv.push('\n');
        }
        json_reports.push(json!({ "layer": layer, "report": report }));
    }
    let stem = if zero_shot { "zero_shot" } else { "classify" };
    write_text(&cfg.out.join(format!("{stem}.csv")), &csv)?;
    let text = serde_json::to_string_pretty(&json_reports).expect("reports serialize");
    write_text(&cfg.out.join(format!("{stem}.json")), &text)
}

pub fn fuse(args: &crate::config::RunArgs, from: &[PathBuf]) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(args)?;
    if from.len() < 2 {
        return Err(Failure::Config("fuse needs at least two --from directories".into()));
    }
    for split in SPLITS {
        let mats = from
            .iter()
            .map(|dir| read_archive(dir.join(split)))
            .collect::<tsvision::Result<Vec<_>>>()?;
        let fused = fuse_models(&mats)?;
        let dir = archive_dir(&cfg.out.join("fused"), fused.dataset(), None, split);
        write_archive(&fused, &dir)?;
        println!("{}: {} x {} ({})", dir.display(), fused.n_samples(), fused.dim(), fused.model_id());
    }
    Ok(())
}

pub fn layer_sweep(args: &crate::config::RunArgs) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(args)?;
    let data = load_all(&cfg)?;
    let backend = Backend::open(&cfg.backend)?;
    let layers: Vec<Option<usize>> = backend.layer_list(&cfg)?.into_iter().map(Some).collect();
    let path = cfg.out.join("layer_sweep.csv");
    let mut w = csv_writer(&path)?;
    csv_row(
        &mut w,
        ["dataset", "model", "layer", "val_accuracy", "test_accuracy", "test_std"],
    )?;
    for d in &data {
        let train = backend.features(&cfg, d, "train", &layers)?;
        let test = backend.features(&cfg, d, "test", &layers)?;
        for ((layer, tr), te) in layers.iter().zip(&train).zip(&test) {
            let r = run_eval(&cfg, d, tr, te)?;
            let vals: Vec<f64> = r.per_seed.iter().filter_map(|s| s.val_accuracy).collect();
            let val = if vals.is_empty() {
                String::new()
            } else {
                format!("{}", vals.iter().sum::<f64>() / vals.len() as f64)
            };
            csv_row(
                &mut w,
                [
                    d.name.clone(),
                    r.model.clone(),
                    layer.expect("sweeps use explicit layers").to_string(),
                    val,
                    r.mean_accuracy.to_string(),
                    r.std_accuracy.to_string(),
                ],
            )?;
        }
        println!("{}: {} layers evaluated", d.name, layers.len());
    }
    csv_flush(w)
}

pub struct AnalyzeOptions {
    pub k: usize,
    pub variance: f64,
    pub subsample: Option<f64>,
    pub repeats: usize,
}

pub fn analyze(args: &crate::config::RunArgs, inputs: &[PathBuf], opts: &AnalyzeOptions) -> Result<(), Failure> {
    let cfg = RunConfig::resolve(args)?;
    if !(opts.variance > 0.0 && opts.variance <= 1.0) {
        return Err(Failure::Config("variance: must lie in (0, 1]".into()));
    }
    let mut groups: Vec<Group> = Vec::new();
    if !inputs.is_empty() {
        let tables = inputs
            .iter()
            .map(|p| Ok((p.display().to_string(), read_archive(p)?.to_f64())))
            .collect::<Result<Vec<_>, Failure>>()?;
        groups.push(("inputs".into(), tables));
    } else {
        let data = load_all(&cfg)?;
        let backend = Backend::open(&cfg.backend)?;
        let layers: Vec<Option<usize>> = match &cfg.layers {
            Some(l) => l.iter().copied().map(Some).collect(),
            None => vec![backend.layer(&cfg)],
        };
        for d in &data {
            let train = backend.features(&cfg, d, "train", &layers)?;
            let test = backend.features(&cfg, d, "test", &layers)?;
            let tables = layers
                .iter()
                .zip(train.iter().zip(&test))
                .map(|(l, (a, b))| {
                    let label = l.map_or_else(|| a.model_id(), |l| format!("layer-{l}"));
                    let x = concatenate(Axis(0), &[a.to_f64().view(), b.to_f64().view()])
                        .expect("splits share the feature width");
                    (label, x)
                })
                .collect();
            groups.push((d.name.clone(), tables));
        }
    }

    let id_path = cfg.out.join("id.csv");
    let mut w = csv_writer(&id_path)?;
    csv_row(
        &mut w,
        ["group", "representation", "n", "dim", "id_twonn", "id_mle", "id_subsampled", "pca_components"],
    )?;
    let seed = cfg.protocol.seeds[0];
    for (group, tables) in &groups {
        for (label, x) in tables {
            let lin = twonn_id(x.view(), DISCARD_FRACTION, IdMethod::LinearFit)?;
            let mle = twonn_id(x.view(), 0.0, IdMethod::Mle)?;
            let sub = match opts.subsample {
                Some(f) => id_with_subsampling(x.view(), f, opts.repeats, seed, DISCARD_FRACTION, IdMethod::LinearFit)?
                    .d_hat
                    .to_string(),
                None => String::new(),
            };
            let pca = pca_components_for_variance(x.view(), opts.variance)?;
            csv_row(
                &mut w,
                [
                    group.clone(),
                    label.clone(),
                    x.nrows().to_string(),
                    x.ncols().to_string(),
                    lin.d_hat.to_string(),
                    mle.d_hat.to_string(),
                    sub,
                    pca.to_string(),
                ],
            )?;
        }

        let mut a = csv_writer(&cfg.out.join(format!("alignment_{group}.csv")))?;
        let mut header = vec!["representation".to_owned()];
        header.extend(tables.iter().map(|(l, _)| l.clone()));
        csv_row(&mut a, &header)?;
        for (li, xi) in tables {
            let mut row = vec![li.clone()];
            for (_, xj) in tables {
                row.push(mutual_knn(xi.view(), xj.view(), opts.k)?.value.to_string());
            }
            csv_row(&mut a, &row)?;
        }
        csv_flush(a)?;
        println!("{group}: {} representations analyzed", tables.len());
    }
    csv_flush(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pattern {
    /// +1 against -1, checked in exact rational arithmetic.
    Constant,
    /// A sine half-period against its negation.
    Sine,
    /// A cosine half-period against ones.
    Cosine,
    /// ln(1 + j) against ones.
    Log,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Segment count and segment length (a perfect square).
    #[arg(long, default_value_t = 9)]
    pub k: usize,
    /// Number of segments holding the second pattern.
    #[arg(long)]
    pub nprime: Option<usize>,
    #[arg(long, value_enum, default_value_t = Pattern::Sine)]
    pub pattern: Pattern,
    /// Explicit arrangement as 1/2 digits, e.g. 121121121.
    #[arg(long)]
    pub arrangement: Option<String>,
    /// Enumerate every arrangement with n' second-pattern segments.
    #[arg(long)]
    pub brute: bool,
}

fn theory_with<T: Exact>(args: &TheoryArgs, mu1: Vec<T>, mu2: Vec<T>) -> Result<(), Failure> {
    if args.brute {
        let n = args
            .nprime
            .ok_or_else(|| Failure::Config("nprime: --brute needs --nprime".into()))?;
        let summary = brute_force_check(args.k, n, &mu1, &mu2)?;
        print!("{}", summary.to_csv());
        println!("{}", summary.verdict());
        return Ok(());
    }
    let arrangement = match (&args.arrangement, args.nprime) {
        (Some(a), n) => {
            let a = Arrangement::parse(a)?;
            if n.is_some_and(|n| n != a.n_second()) {
                return Err(Failure::Config(format!(
                    "nprime: arrangement {a} has {} second-pattern segments",
                    a.n_second()
                )));
            }
            a
        }
        (None, Some(n)) => Arrangement::spread(args.k, n)?,
        (None, None) => return Err(Failure::Config("nprime: give --nprime or --arrangement".into())),
    };
    let inst = TheoryInstance::new(mu1, mu2, arrangement)?;
    let r = relevance_report(&inst);
    println!("arrangement={}", inst.arrangement());
    println!(
        "alpha_1d={:.4}, alpha_2d={:.4}, assumption_ok={}",
        fraction_to_f64(r.alpha_1d),
        fraction_to_f64(r.alpha_2d),
        r.assumption_ok
    );
    println!("consistent={}", r.consistent());
    Ok(())
}

pub fn theory(args: &TheoryArgs) -> Result<(), Failure> {
    let k = args.k;
    match args.pattern {
        Pattern::Constant => {
            let (a, b) = patterns::constant::<Rational>(k);
            theory_with(args, a, b)
        }
        Pattern::Sine => {
            let (a, b) = patterns::sine(k);
            theory_with(args, a, b)
        }
        Pattern::Cosine => {
            let (a, b) = patterns::cosine_vs_ones(k);
            theory_with(args, a, b)
        }
        Pattern::Log => {
            let (a, b) = patterns::log_vs_ones(k);
            theory_with(args, a, b)
        }
    }
}
