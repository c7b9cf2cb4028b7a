use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use arm_core::data::write_csv;
use arm_core::model::MultimodalNet;
use arm_core::trainer::{evaluate, train, EpochRecord, EvalMetrics, RunHistory, TrainConfig};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub fn num(x: f64) -> String {
    format!("{x:.9e}")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Sample mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSummary {
    pub path: PathBuf,
    pub samples: usize,
    pub modalities: usize,
    pub dims: Vec<usize>,
}

/// Writes `<out>/data.csv`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<DataSummary> {
    let ds = cfg.dataset()?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("data.csv");
    write_csv(&ds, &path).map_err(|e| match e {
        arm_core::Error::Io(source) => CliError::io(&path, source),
        other => other.into(),
    })?;
    Ok(DataSummary {
        path,
        samples: ds.len(),
        modalities: ds.modalities(),
        dims: ds.dims(),
    })
}

/// One finished training run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub history: RunHistory,
    pub test: EvalMetrics,
}

pub fn run_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Trains every configured seed and writes `<out>/seed-<s>/history.jsonl`
/// and `checkpoint.json`, plus the resolved `<out>/config.toml`.
pub fn train_seeds(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>> {
    let (tr, te) = cfg.splits()?;
    create_dir(&cfg.out)?;
    let resolved = toml::to_string(cfg).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))?;
    let config_path = cfg.out.join("config.toml");
    fs::write(&config_path, resolved).map_err(|e| CliError::io(&config_path, e))?;

    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let (net, history) = train(&cfg.train_for(seed), &tr, Some(&te))?;
            let test = evaluate(&net, &te, cfg.train.smoothing)?;
            let dir = run_dir(&cfg.out, seed);
            create_dir(&dir)?;
            let hist_path = dir.join("history.jsonl");
            fs::write(&hist_path, history.to_jsonl()?).map_err(|e| CliError::io(&hist_path, e))?;
            net.save(&dir.join("checkpoint.json"))?;
            Ok(RunOutcome {
                seed,
                dir,
                history,
                test,
            })
        })
        .collect()
}

/// Metrics of a saved network on the configured train and test splits.
pub fn eval_checkpoint(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<(&'static str, EvalMetrics)>> {
    let net = MultimodalNet::load(checkpoint)?;
    let (tr, te) = cfg.splits()?;
    let arch = net.architecture();
    if arch.input_dims != tr.dims() || arch.classes != tr.classes() {
        return Err(CliError::Usage(format!(
            "checkpoint {} expects dims {:?} and {} classes, dataset has {:?} and {}",
            checkpoint.display(),
            arch.input_dims,
            arch.classes,
            tr.dims(),
            tr.classes()
        )));
    }
    Ok(vec![
        ("train", evaluate(&net, &tr, cfg.train.smoothing)?),
        ("test", evaluate(&net, &te, cfg.train.smoothing)?),
    ])
}

/// Hyperparameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    K,
    Lambda1,
    Lambda2,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::Lambda1 => "lambda1",
            SweepParam::Lambda2 => "lambda2",
        }
    }

    pub fn set(self, cfg: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::K => cfg.slope = value,
            SweepParam::Lambda1 => cfg.lambda1 = value,
            SweepParam::Lambda2 => cfg.lambda2 = value,
        }
    }
}

/// Aggregate over seeds for one sweep value; pairs are (mean, std).
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub runs: usize,
    pub test_accuracy: (f64, f64),
    pub gap: (f64, f64),
    pub probe_accuracy: Vec<(f64, f64)>,
}

/// One run per (value, seed); writes `<out>/sweep-<param>.csv`.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<(PathBuf, Vec<SweepRow>)> {
    if values.is_empty() {
        return Err(CliError::Usage("sweep needs at least one value".into()));
    }
    let configs: Vec<TrainConfig> = values
        .iter()
        .map(|&v| {
            let mut tc = cfg.train.clone();
            param.set(&mut tc, v);
            tc.validate()?;
            Ok(tc)
        })
        .collect::<Result<_>>()?;
    let (tr, te) = cfg.splits()?;
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<(f64, f64, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let tc = TrainConfig {
                seed,
                ..configs[i].clone()
            };
            let (net, history) = train(&tc, &tr, Some(&te))?;
            let eval = evaluate(&net, &te, tc.smoothing)?;
            let gap = history.last().map_or(0.0, |r| r.gap);
            Ok((eval.fused_accuracy, gap, eval.probe_accuracy))
        })
        .collect::<Result<_>>()?;

    let per_value = cfg.seeds.len();
    let m = tr.modalities();
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(results.chunks(per_value))
        .map(|(&value, runs)| {
            let acc: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let gap: Vec<f64> = runs.iter().map(|r| r.1).collect();
            let probe = (0..m)
                .map(|i| mean_std(&runs.iter().map(|r| r.2[i]).collect::<Vec<_>>()))
                .collect();
            SweepRow {
                value,
                runs: runs.len(),
                test_accuracy: mean_std(&acc),
                gap: mean_std(&gap),
                probe_accuracy: probe,
            }
        })
        .collect();

    create_dir(&cfg.out)?;
    let path = cfg.out.join(format!("sweep-{}.csv", param.name()));
    let mut w = csv_writer(&path)?;
    let mut header: Vec<String> = [
        "param",
        "value",
        "runs",
        "test_accuracy_mean",
        "test_accuracy_std",
        "gap_mean",
        "gap_std",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..m {
        header.push(format!("probe_accuracy_{i}_mean"));
        header.push(format!("probe_accuracy_{i}_std"));
    }
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![
            param.name().to_string(),
            num(r.value),
            r.runs.to_string(),
            num(r.test_accuracy.0),
            num(r.test_accuracy.1),
            num(r.gap.0),
            num(r.gap.1),
        ];
        for &(mean, std) in &r.probe_accuracy {
            rec.push(num(mean));
            rec.push(num(std));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok((path, rows))
}

fn read_history(path: &Path) -> Result<RunHistory> {
    let h = RunHistory::read_jsonl(path).map_err(|e| match e {
        arm_core::Error::Io(source) => CliError::io(path, source),
        arm_core::Error::Parse { line, reason, .. } => CliError::History {
            path: path.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        },
        other => other.into(),
    })?;
    if h.records.is_empty() {
        return Err(CliError::History {
            path: path.to_path_buf(),
            reason: "no epoch records".into(),
        });
    }
    Ok(h)
}

/// Series label: the shortest trailing path that tells the files apart,
/// with a `history` file name dropped (`arm/seed-0/history.jsonl` gives
/// `seed-0`, or `arm_seed-0` when another run also has a `seed-0`).
fn labels(paths: &[PathBuf]) -> Vec<String> {
    let parts: Vec<Vec<String>> = paths
        .iter()
        .map(|p| {
            let mut c: Vec<String> = p
                .with_extension("")
                .components()
                .filter_map(|c| match c {
                    std::path::Component::Normal(s) => Some(s.to_string_lossy().into_owned()),
                    _ => None,
                })
                .collect();
            if c.len() > 1 && c.last().is_some_and(|l| l == "history") {
                c.pop();
            }
            c
        })
        .collect();
    let longest = parts.iter().map(Vec::len).max().unwrap_or(0);
    let suffix = |c: &[String], k: usize| c[c.len().saturating_sub(k)..].join("_");
    let mut out: Vec<String> = parts.iter().map(|c| suffix(c, 1)).collect();
    for k in 2..=longest {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for l in &out {
            *counts.entry(l).or_default() += 1;
        }
        let clash: Vec<bool> = out.iter().map(|l| counts[l.as_str()] > 1).collect();
        if !clash.contains(&true) {
            break;
        }
        for (i, c) in parts.iter().enumerate() {
            if clash[i] {
                out[i] = suffix(c, k);
            }
        }
    }
    // the same file given twice
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for l in out.iter_mut() {
        let n = seen.entry(l.clone()).or_default();
        *n += 1;
        if *n > 1 {
            l.push_str(&format!("-{n}"));
        }
    }
    out
}

type Extract = fn(&EpochRecord) -> Option<f64>;

const COMPARED: [(&str, Extract); 8] = [
    ("gap", |r| Some(r.gap)),
    ("phi_cmi_joint", |r| Some(r.phi_cmi_joint_mean)),
    ("phi_mi_joint", |r| Some(r.phi_mi_joint_mean)),
    ("loss_total", |r| Some(r.loss.total)),
    ("loss_phi_mi", |r| Some(r.loss.l_phi_mi)),
    ("loss_phi_cmi", |r| Some(r.loss.l_phi_cmi)),
    ("train_accuracy", |r| Some(r.train_accuracy)),
    ("test_accuracy", |r| r.test_accuracy),
];

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn write_series(path: &Path, h: &RunHistory) -> Result<()> {
    let m = h.records[0].phi_cmi_mean.len();
    let mut header: Vec<String> = [
        "epoch",
        "warmup",
        "epoch_size",
        "extras",
        "gap",
        "phi_cmi_joint",
        "phi_mi_joint",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..m).map(|i| format!("phi_cmi_{i}")));
    header.extend((0..m).map(|i| format!("fw_{i}")));
    header.extend(
        [
            "loss_total",
            "loss_ce",
            "loss_probe_ce",
            "loss_phi_mi",
            "loss_phi_cmi",
            "train_accuracy",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    header.extend((0..m).map(|i| format!("train_probe_accuracy_{i}")));
    header.push("test_accuracy".into());
    header.extend((0..m).map(|i| format!("test_probe_accuracy_{i}")));

    let mut w = csv_writer(path)?;
    w.write_record(&header)?;
    for r in &h.records {
        let mut rec = vec![
            r.epoch.to_string(),
            u8::from(r.warmup).to_string(),
            r.epoch_size.to_string(),
            r.extras.to_string(),
            num(r.gap),
            num(r.phi_cmi_joint_mean),
            num(r.phi_mi_joint_mean),
        ];
        rec.extend(r.phi_cmi_mean.iter().map(|&v| num(v)));
        rec.extend(r.fw_mean.iter().map(|&v| num(v)));
        rec.extend(
            [
                r.loss.total,
                r.loss.ce,
                r.loss.probe_ce,
                r.loss.l_phi_mi,
                r.loss.l_phi_cmi,
                r.train_accuracy,
            ]
            .map(num),
        );
        rec.extend(r.train_probe_accuracy.iter().map(|&v| num(v)));
        rec.push(opt(r.test_accuracy));
        match &r.test_probe_accuracy {
            Some(p) => rec.extend(p.iter().map(|&v| num(v))),
            None => rec.extend((0..m).map(|_| String::new())),
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Per-history series files and side-by-side comparison files on a shared
/// epoch axis. Returns the files written.
pub fn report(histories: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    if histories.is_empty() {
        return Err(CliError::Usage("report needs at least one history file".into()));
    }
    let loaded: Vec<RunHistory> = histories.iter().map(|p| read_history(p)).collect::<Result<_>>()?;
    let names = labels(histories);
    create_dir(out)?;
    let mut written = Vec::new();

    for (h, name) in loaded.iter().zip(&names) {
        let path = out.join(format!("series-{name}.csv"));
        write_series(&path, h)?;
        written.push(path);
    }

    let epochs = loaded.iter().map(|h| h.records.len()).max().unwrap_or(0);
    for (metric, get) in COMPARED {
        let path = out.join(format!("compare-{metric}.csv"));
        let mut w = csv_writer(&path)?;
        let mut header = vec!["epoch".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..epochs {
            let mut rec = vec![t.to_string()];
            rec.extend(loaded.iter().map(|h| opt(h.records.get(t).and_then(get))));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
