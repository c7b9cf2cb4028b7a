//! Synthetic multimodal datasets, CSV I/O, stratified splits and the
//! resampled epoch order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reinforcement::ResamplePlan;
use crate::tensor::Tensor;

/// Independent random streams derived from one seed.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
}

/// ChaCha8 generator for `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-modality generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalitySpec {
    pub dim: usize,
    pub informative: usize,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub modalities: Vec<ModalitySpec>,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for ModalitySpec {
    fn default() -> Self {
        ModalitySpec {
            dim: 16,
            informative: 2,
            noise: 1.0,
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::fixture()
    }
}

impl SynthConfig {
    /// Two modalities, the first dominant: `σ = [0.3, 1.5]`, `r = [8, 2]`,
    /// 16 dims each, 3 classes of 200 samples.
    pub fn fixture() -> Self {
        SynthConfig {
            classes: 3,
            modalities: vec![
                ModalitySpec {
                    dim: 16,
                    informative: 8,
                    noise: 0.3,
                },
                ModalitySpec {
                    dim: 16,
                    informative: 2,
                    noise: 1.5,
                },
            ],
            samples_per_class: 200,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::arg(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.modalities.is_empty() {
            return Err(Error::arg("need at least one modality"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::arg("samples per class must be positive"));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.dim == 0 {
                return Err(Error::arg(format!("modality {i} has zero dimensions")));
            }
            if m.informative > m.dim {
                return Err(Error::arg(format!(
                    "modality {i}: {} informative dims exceed dimension {}",
                    m.informative, m.dim
                )));
            }
            if !(m.noise > 0.0) || !m.noise.is_finite() {
                return Err(Error::arg(format!(
                    "modality {i}: noise scale must be positive, got {}",
                    m.noise
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.dim).collect()
    }
}

/// Immutable multimodal dataset: one `n×d_i` matrix per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    ids: Vec<u64>,
    labels: Vec<usize>,
    classes: usize,
    features: Vec<Tensor>,
}

impl MultimodalDataset {
    pub fn new(ids: Vec<u64>, labels: Vec<usize>, classes: usize, features: Vec<Tensor>) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::arg("dataset is empty"));
        }
        if labels.len() != n {
            return Err(Error::arg(format!("{} labels for {n} ids", labels.len())));
        }
        if features.is_empty() {
            return Err(Error::arg("dataset has no modalities"));
        }
        for (i, f) in features.iter().enumerate() {
            if f.rows() != n {
                return Err(Error::shape(format!(
                    "modality {i} has {} rows, expected {n}",
                    f.rows()
                )));
            }
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("modality {i} features")));
            }
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::arg(format!("label {y} outside [0, {classes})")));
        }
        let mut seen = ids.clone();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::arg(format!("duplicate sample id {}", w[0])));
        }
        Ok(MultimodalDataset {
            ids,
            labels,
            classes,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn modalities(&self) -> usize {
        self.features.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.cols()).collect()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[Tensor] {
        &self.features
    }

    /// Position of every id.
    pub fn index(&self) -> BTreeMap<u64, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    /// Rows at `indices` (repeats allowed), as per-modality matrices plus
    /// labels and ids.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::arg(format!("row {i} outside dataset of {}", self.len())));
        }
        let inputs = self
            .features
            .iter()
            .map(|f| {
                let mut data = Vec::with_capacity(indices.len() * f.cols());
                for &i in indices {
                    data.extend_from_slice(f.row(i));
                }
                Tensor::new(indices.len(), f.cols(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            inputs,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        })
    }

    /// New dataset from the rows at `indices` (no repeats).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let b = self.gather(indices)?;
        MultimodalDataset::new(b.ids, b.labels, self.classes, b.inputs)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Rows gathered for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
}

/// Gaussian class clusters. Informative dims of class `c` are centred at
/// `c − (C−1)/2` with std `σ_i`; the remaining dims are standard normal.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<MultimodalDataset> {
    cfg.validate()?;
    let n = cfg.classes * cfg.samples_per_class;
    let mut rng = seeded_rng(cfg.seed, stream::DATA);
    let standard = Normal::new(0.0, 1.0).expect("valid normal");
    let mut features: Vec<Vec<f64>> = cfg.modalities.iter().map(|m| Vec::with_capacity(n * m.dim)).collect();
    let mut labels = Vec::with_capacity(n);
    let centre = (cfg.classes as f64 - 1.0) / 2.0;
    for c in 0..cfg.classes {
        let mean = c as f64 - centre;
        for _ in 0..cfg.samples_per_class {
            labels.push(c);
            for (spec, out) in cfg.modalities.iter().zip(&mut features) {
                for k in 0..spec.dim {
                    let z = standard.sample(&mut rng);
                    out.push(if k < spec.informative { mean + spec.noise * z } else { z });
                }
            }
        }
    }
    let features = features
        .into_iter()
        .zip(&cfg.modalities)
        .map(|(data, spec)| Tensor::new(n, spec.dim, data))
        .collect::<Result<Vec<_>>>()?;
    MultimodalDataset::new((0..n as u64).collect(), labels, cfg.classes, features)
}

/// Expected CSV layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvSchema {
    pub dims: Vec<usize>,
    /// Inferred as `max label + 1` when absent.
    pub classes: Option<usize>,
}

impl CsvSchema {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string(), "label".to_string()];
        for (i, &d) in self.dims.iter().enumerate() {
            h.extend((0..d).map(|k| format!("mod{i}_f{k}")));
        }
        h
    }

    /// Recovers the per-modality dimensions from a header row.
    pub fn from_header(header: &[&str]) -> Result<Self> {
        if header.len() < 3 || header[0] != "id" || header[1] != "label" {
            return Err(Error::Schema(
                "header must start with `id,label` and name at least one feature".into(),
            ));
        }
        let mut dims: Vec<usize> = Vec::new();
        for col in &header[2..] {
            let parsed = col
                .strip_prefix("mod")
                .and_then(|rest| rest.split_once("_f"))
                .and_then(|(m, f)| Some((m.parse::<usize>().ok()?, f.parse::<usize>().ok()?)));
            let Some((m, f)) = parsed else {
                return Err(Error::Schema(format!("unknown column `{col}`")));
            };
            if m == dims.len() && f == 0 {
                dims.push(1);
            } else if m + 1 == dims.len() && f == dims[m] {
                dims[m] += 1;
            } else {
                return Err(Error::Schema(format!("column `{col}` is out of order")));
            }
        }
        Ok(CsvSchema { dims, classes: None })
    }
}

pub fn write_csv(ds: &MultimodalDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    let schema = CsvSchema {
        dims: ds.dims(),
        classes: Some(ds.classes()),
    };
    w.write_record(schema.header()).map_err(csv_io)?;
    for s in 0..ds.len() {
        let mut row = vec![ds.ids[s].to_string(), ds.labels[s].to_string()];
        for f in &ds.features {
            row.extend(f.row(s).iter().map(|v| format!("{v}")));
        }
        w.write_record(&row).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema(format!("{other:?}")),
    }
}

/// Reads a dataset, checking the header against `schema` (or inferring it
/// from the header when `schema` is `None`).
pub fn load_csv(path: &Path, schema: Option<&CsvSchema>) -> Result<MultimodalDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_io)?;
    let header: Vec<String> = reader.headers().map_err(csv_io)?.iter().map(str::to_string).collect();
    let found = CsvSchema::from_header(&header.iter().map(String::as_str).collect::<Vec<_>>())?;
    let schema = match schema {
        Some(s) => {
            if s.dims != found.dims {
                return Err(Error::Schema(format!(
                    "header has modality dims {:?}, expected {:?}",
                    found.dims, s.dims
                )));
            }
            s.clone()
        }
        None => found,
    };
    let parse_err = |line: u64, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); schema.dims.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("{} fields, expected {}", record.len(), header.len()),
            ));
        }
        let id = record[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| parse_err(line, format!("id `{}` is not a nonnegative integer", &record[0])))?;
        let label = record[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(line, format!("label `{}` is not a class index", &record[1])))?;
        ids.push(id);
        labels.push(label);
        let mut col = 2;
        for (m, &d) in schema.dims.iter().enumerate() {
            for _ in 0..d {
                let cell = record[col].trim();
                let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    parse_err(
                        line,
                        format!("column `{}` value `{cell}` is not a finite number", header[col]),
                    )
                })?;
                data[m].push(v);
                col += 1;
            }
        }
    }
    if ids.is_empty() {
        return Err(Error::arg(format!("{} has no rows", path.display())));
    }
    let n = ids.len();
    let classes = schema
        .classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |&y| y + 1).max(2));
    let features = data
        .into_iter()
        .zip(&schema.dims)
        .map(|(v, &d)| Tensor::new(n, d, v))
        .collect::<Result<Vec<_>>>()?;
    MultimodalDataset::new(ids, labels, classes, features)
}

/// Stratified split; each class contributes `round(fraction · n_c)` rows to
/// the training half, kept at least one on each side. Rows keep their
/// original order.
pub fn split(ds: &MultimodalDataset, train_fraction: f64, seed: u64) -> Result<(MultimodalDataset, MultimodalDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::arg(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = seeded_rng(seed, stream::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..ds.classes() {
        let mut rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::Stratification(format!("class {c} has {} sample(s)", rows.len())));
        }
        rows.shuffle(&mut rng);
        let k = ((train_fraction * rows.len() as f64).round() as usize).clamp(1, rows.len() - 1);
        train.extend_from_slice(&rows[..k]);
        test.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

/// Row order for one epoch: every row `1 + s(id)` times, shuffled.
pub fn materialize_resample(ds: &MultimodalDataset, plan: &ResamplePlan, seed: u64) -> Result<Vec<usize>> {
    let index = ds.index();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for (&id, &extra) in &plan.extras {
        let &row = index
            .get(&id)
            .ok_or_else(|| Error::arg(format!("resample plan names unknown id {id}")))?;
        order.extend(std::iter::repeat_n(row, extra as usize));
    }
    order.shuffle(&mut seeded_rng(seed, stream::SHUFFLE));
    Ok(order)
}
