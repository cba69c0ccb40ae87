//! Labeled time series collections and the UCR / UEA archive formats.
//!
//! UCR files carry one univariate series per line, label first, values
//! separated by tabs or commas. UEA `.ts` files carry a small `@key value`
//! header followed by `@data` rows in which channels are separated by `:`,
//! values by `,`, and the class label is the last `:`-field.
//!
//! Labels are remapped to dense codes `0..C` at load time; the original
//! label text is kept in [`TimeSeriesDataset::classes`] so reports and
//! writers can use it. Missing values (`?`, `NaN`) are forward-filled and
//! then backward-filled within their channel.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Derived,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Derived => "derived",
        }
    }
}

/// One labeled observation. Channel lengths may differ between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub channels: Vec<Vec<f64>>,
    /// Dense class code, an index into [`TimeSeriesDataset::classes`].
    pub label: usize,
}

impl Sample {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    name: String,
    samples: Vec<Sample>,
    classes: Vec<String>,
    split: Split,
}

impl TimeSeriesDataset {
    pub fn new(
        name: impl Into<String>,
        samples: Vec<Sample>,
        classes: Vec<String>,
        split: Split,
    ) -> Result<Self> {
        let name = name.into();
        let dims = samples.first().map(Sample::n_channels).unwrap_or(1);
        if dims == 0 {
            return Err(Error::InvalidArgument(format!(
                "{name}: samples must have at least one channel"
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "{name}: duplicate class label `{c}`"
                )));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if s.n_channels() != dims {
                return Err(Error::InvalidArgument(format!(
                    "{name}: sample {i} has {} channels, expected {dims}",
                    s.n_channels()
                )));
            }
            if s.label >= classes.len() {
                return Err(Error::InvalidArgument(format!(
                    "{name}: sample {i} has label code {} outside the class table",
                    s.label
                )));
            }
            for (d, ch) in s.channels.iter().enumerate() {
                if ch.len() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "{name}: sample {i} channel {d} has length {}, need at least 2",
                        ch.len()
                    )));
                }
                if ch.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "{name}: sample {i} channel {d} contains non-finite values"
                    )));
                }
            }
        }
        Ok(Self {
            name,
            samples,
            classes,
            split,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Channel count D (1 for an empty dataset).
    pub fn n_channels(&self) -> usize {
        self.samples.first().map(Sample::n_channels).unwrap_or(1)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Length of the longest channel over all samples.
    pub fn max_length(&self) -> usize {
        self.samples
            .iter()
            .flat_map(|s| s.channels.iter().map(Vec::len))
            .max()
            .unwrap_or(0)
    }

    /// Selects samples by position, keeping the class table.
    pub fn subset(&self, indices: &[usize], split: Split) -> Self {
        Self {
            name: self.name.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            classes: self.classes.clone(),
            split,
        }
    }

    /// Re-expresses the labels against another class table that contains
    /// every label used here.
    pub fn with_class_table(&self, classes: &[String]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut samples = self.samples.clone();
        for s in &mut samples {
            let text = &self.classes[s.label];
            s.label = *lookup.get(text.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "{}: label `{text}` missing from the target class table",
                    self.name
                ))
            })?;
        }
        Self::new(self.name.clone(), samples, classes.to_vec(), self.split)
    }
}

/// Orders label text: numerically when every label parses as a number,
/// lexicographically otherwise.
pub fn canonical_class_order<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut uniq: Vec<String> = labels
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(str::to_owned)
        .collect();
    let numeric: Option<Vec<f64>> = uniq.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut idx: Vec<usize> = (0..uniq.len()).collect();
        idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(uniq[a].cmp(&uniq[b])));
        uniq = idx.into_iter().map(|i| uniq[i].clone()).collect();
    }
    uniq
}

fn is_missing(token: &str) -> bool {
    token == "?" || token.eq_ignore_ascii_case("nan")
}

/// Forward-fill then backward-fill; `None` when the channel is all missing.
fn fill_missing(values: Vec<Option<f64>>) -> Option<Vec<f64>> {
    let first = values.iter().flatten().next().copied()?;
    let mut last = first;
    Some(
        values
            .into_iter()
            .map(|v| {
                if let Some(v) = v {
                    last = v;
                }
                last
            })
            .collect(),
    )
}

fn parse_values(
    tokens: &[&str],
    path: &Path,
    line: usize,
) -> Result<Vec<f64>> {
    let mut vals = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let tok = tok.trim();
        if is_missing(tok) {
            vals.push(None);
            continue;
        }
        let v: f64 = tok.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("non-numeric value `{tok}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("non-finite value `{tok}`"),
            });
        }
        vals.push(Some(v));
    }
    let n = vals.len();
    let filled = fill_missing(vals).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: "channel has no observed values".into(),
    })?;
    if n < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("channel has {n} values, need at least 2"),
        });
    }
    Ok(filled)
}

fn dataset_name_from_path(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in ["_TRAIN", "_TEST"] {
        if let Some(base) = stem.strip_suffix(suffix) {
            return base.to_owned();
        }
    }
    stem
}

fn split_from_path(path: &Path) -> Split {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_uppercase())
        .unwrap_or_default();
    if stem.ends_with("_TEST") {
        Split::Test
    } else if stem.ends_with("_TRAIN") {
        Split::Train
    } else {
        Split::Derived
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn load_ucr_tsv(path: impl AsRef<Path>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_ucr(&text, path)
}

/// Parses UCR text; `path` only labels errors and names the dataset.
pub fn parse_ucr(text: &str, path: &Path) -> Result<TimeSeriesDataset> {
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else if line.contains(',') {
            line.split(',').collect()
        } else {
            line.split_whitespace().collect()
        };
        let (label, values) = tokens.split_first().expect("non-empty line");
        let values = parse_values(values, path, i + 1)?;
        rows.push((normalize_label(label.trim()), values));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }
    let classes = canonical_class_order(rows.iter().map(|(l, _)| l.as_str()));
    let codes: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let samples = rows
        .iter()
        .map(|(label, values)| Sample {
            channels: vec![values.clone()],
            label: codes[label.as_str()],
        })
        .collect();
    TimeSeriesDataset::new(
        dataset_name_from_path(path),
        samples,
        classes,
        split_from_path(path),
    )
}

/// UCR labels are sometimes written as floats ("1.0000000e+00").
fn normalize_label(label: &str) -> String {
    match label.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 && label.contains(['.', 'e', 'E']) => {
            format!("{}", v as i64)
        }
        _ => label.to_owned(),
    }
}

pub fn load_uea_ts(path: impl AsRef<Path>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_uea(&text, path)
}

#[derive(Default)]
struct TsHeader {
    name: Option<String>,
    univariate: Option<bool>,
    dimensions: Option<usize>,
    class_labels: Option<Vec<String>>,
}

pub fn parse_uea(text: &str, path: &Path) -> Result<TimeSeriesDataset> {
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header = TsHeader::default();
    let mut lines = text.lines().enumerate();
    let mut saw_data = false;
    for (i, raw) in lines.by_ref() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !line.starts_with('@') {
            return Err(parse_err(i + 1, "data row before @data marker".into()));
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or("").to_ascii_lowercase();
        let rest: Vec<&str> = parts.collect();
        let flag = |rest: &[&str]| -> Result<bool> {
            match rest.first().map(|s| s.to_ascii_lowercase()) {
                Some(ref v) if v == "true" => Ok(true),
                Some(ref v) if v == "false" => Ok(false),
                _ => Err(parse_err(i + 1, format!("{key} expects true/false"))),
            }
        };
        match key.as_str() {
            "@problemname" => header.name = rest.first().map(|s| s.to_string()),
            "@timestamps" => {
                if flag(&rest)? {
                    return Err(format_err("timestamped series are not supported".into()));
                }
            }
            "@univariate" => header.univariate = Some(flag(&rest)?),
            "@dimensions" | "@dimension" => {
                let d = rest
                    .first()
                    .and_then(|s| s.parse::<usize>().ok())
                    .filter(|&d| d >= 1)
                    .ok_or_else(|| parse_err(i + 1, "@dimensions expects a positive integer".into()))?;
                header.dimensions = Some(d);
            }
            "@classlabel" => {
                if !flag(&rest)? {
                    return Err(format_err("unlabeled datasets are not supported".into()));
                }
                header.class_labels = Some(rest[1..].iter().map(|s| s.to_string()).collect());
            }
            "@data" => {
                saw_data = true;
                break;
            }
            // @missing, @equalLength, @seriesLength, @targetlabel and friends
            // carry nothing the parser needs.
            _ => {}
        }
    }
    if !saw_data {
        return Err(format_err("missing @data marker".into()));
    }

    let mut dims = match (header.dimensions, header.univariate) {
        (Some(d), _) => Some(d),
        (None, Some(true)) => Some(1),
        _ => None,
    };
    let declared = header.class_labels.clone();
    let mut rows: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('(') {
            return Err(format_err("timestamped series are not supported".into()));
        }
        let fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(parse_err(i + 1, "row has no class label field".into()));
        }
        let (label, chans) = fields.split_last().expect("at least two fields");
        let label = label.trim().to_owned();
        let expected = *dims.get_or_insert(chans.len());
        if chans.len() != expected {
            return Err(parse_err(
                i + 1,
                format!("row has {} channels, expected {expected}", chans.len()),
            ));
        }
        if let Some(labels) = &declared {
            if !labels.contains(&label) {
                return Err(parse_err(i + 1, format!("undeclared class label `{label}`")));
            }
        }
        let channels = chans
            .iter()
            .map(|c| {
                let toks: Vec<&str> = c.split(',').collect();
                parse_values(&toks, path, i + 1)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((label, channels));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset {
            path: path.to_path_buf(),
        });
    }

    let classes = match declared {
        Some(labels) => labels,
        None => canonical_class_order(rows.iter().map(|(l, _)| l.as_str())),
    };
    let codes: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let samples = rows
        .into_iter()
        .map(|(label, channels)| Sample {
            label: codes[label.as_str()],
            channels,
        })
        .collect();
    let name = header.name.unwrap_or_else(|| dataset_name_from_path(path));
    TimeSeriesDataset::new(name, samples, classes, split_from_path(path))
}

/// Writes a univariate dataset as tab-separated UCR text.
pub fn write_ucr_tsv(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ds.n_channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "UCR format holds univariate series, dataset has {} channels",
            ds.n_channels()
        )));
    }
    let mut out = String::new();
    for s in ds.samples() {
        out.push_str(&ds.classes()[s.label]);
        for v in &s.channels[0] {
            write!(out, "\t{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn write_uea_ts(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let lengths: BTreeSet<usize> = ds
        .samples()
        .iter()
        .flat_map(|s| s.channels.iter().map(Vec::len))
        .collect();
    let mut out = String::new();
    writeln!(out, "@problemName {}", ds.name()).ok();
    writeln!(out, "@timeStamps false").ok();
    writeln!(out, "@missing false").ok();
    writeln!(out, "@univariate {}", ds.n_channels() == 1).ok();
    writeln!(out, "@dimensions {}", ds.n_channels()).ok();
    writeln!(out, "@equalLength {}", lengths.len() <= 1).ok();
    if let (1, Some(len)) = (lengths.len(), lengths.first()) {
        writeln!(out, "@seriesLength {len}").ok();
    }
    writeln!(out, "@classLabel true {}", ds.classes().join(" ")).ok();
    writeln!(out, "@data").ok();
    for s in ds.samples() {
        for ch in &s.channels {
            let vals: Vec<String> = ch.iter().map(|v| v.to_string()).collect();
            out.push_str(&vals.join(","));
            out.push(':');
        }
        out.push_str(&ds.classes()[s.label]);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads a file by extension: `.ts` as UEA, anything else as UCR.
pub fn load_any(path: impl AsRef<Path>) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ts") => load_uea_ts(path),
        _ => load_ucr_tsv(path),
    }
}

/// Locates `<dir>/<name>_TRAIN.{tsv,ts,txt,csv}` and the matching test file
/// inside an archive-style dataset directory.
pub fn find_split_files(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let find = |suffix: &str| -> Option<PathBuf> {
        ["tsv", "ts", "txt", "csv"]
            .iter()
            .map(|ext| dir.join(format!("{name}_{suffix}.{ext}")))
            .find(|p| p.is_file())
    };
    match (find("TRAIN"), find("TEST")) {
        (Some(train), Some(test)) => Ok((train, test)),
        _ => Err(Error::Format {
            path: dir.to_path_buf(),
            message: format!("expected {name}_TRAIN and {name}_TEST files"),
        }),
    }
}

/// Loads a train/test pair and puts both on one class table.
pub fn load_train_test(
    train: &Path,
    test: &Path,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let train = load_any(train)?;
    let test = load_any(test)?;
    align_class_tables(train, test)
}

pub fn align_class_tables(
    a: TimeSeriesDataset,
    b: TimeSeriesDataset,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if a.classes() == b.classes() {
        return Ok((a, b));
    }
    let union = if a.classes().iter().all(|c| b.classes().contains(c))
        && b.classes().iter().all(|c| a.classes().contains(c))
    {
        a.classes().to_vec()
    } else {
        canonical_class_order(
            a.classes()
                .iter()
                .chain(b.classes())
                .map(String::as_str),
        )
    };
    Ok((a.with_class_table(&union)?, b.with_class_table(&union)?))
}

/// Deterministic train/validation partition.
///
/// Stratified by class when every class has at least two samples; each class
/// then contributes `round(n_c * val_fraction)` samples clamped to
/// `[1, n_c - 1]`. Otherwise a plain shuffle assigns
/// `round(N * val_fraction)` samples (clamped to `[1, N - 1]`) to validation.
/// Both outputs keep the input's sample order.
pub fn train_val_split(
    ds: &TimeSeriesDataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let (train_idx, val_idx) = split_indices(&ds.labels(), ds.n_classes(), val_fraction, seed)?;
    Ok((
        ds.subset(&train_idx, Split::Derived),
        ds.subset(&val_idx, Split::Derived),
    ))
}

/// Index-level version of [`train_val_split`].
pub fn split_indices(
    labels: &[usize],
    n_classes: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let n = labels.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples into train and validation"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes.max(1)];
    for (i, &y) in labels.iter().enumerate() {
        if y >= by_class.len() {
            by_class.resize(y + 1, Vec::new());
        }
        by_class[y].push(i);
    }
    let present: Vec<&mut Vec<usize>> = by_class.iter_mut().filter(|c| !c.is_empty()).collect();
    let stratify = present.iter().all(|c| c.len() >= 2);

    let mut is_val = vec![false; n];
    if stratify {
        for members in present {
            members.shuffle(&mut rng);
            let take = clamp_count(members.len(), val_fraction);
            for &i in &members[..take] {
                is_val[i] = true;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        for &i in &all[..clamp_count(n, val_fraction)] {
            is_val[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_val[i]);
    Ok((train, val))
}

fn clamp_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Two-class toy problem: a noisy sine period against its negation.
///
/// Samples alternate between class `sine` (code 0) and `neg_sine` (code 1).
pub fn synthetic_sine_pair(
    n: usize,
    length: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<TimeSeriesDataset> {
    if length < 2 {
        return Err(Error::InvalidArgument("series length must be at least 2".into()));
    }
    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            let values = (0..length)
                .map(|j| {
                    let phase = 2.0 * std::f64::consts::PI * j as f64 / (length - 1) as f64;
                    sign * phase.sin() + noise.sample(&mut rng)
                })
                .collect();
            Sample {
                channels: vec![values],
                label,
            }
        })
        .collect();
    TimeSeriesDataset::new(
        "toy",
        samples,
        vec!["sine".into(), "neg_sine".into()],
        Split::Derived,
    )
}
