//! Training loop: warm-up, per-batch valuation, dynamic fusion weights, the
//! balanced min-max loss and contribution-driven resampling.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{materialize_resample, seeded_rng, stream, Batch, MultimodalDataset};
use crate::error::{Error, Result};
use crate::info::PosteriorBatch;
use crate::model::{cross_entropy_loss, true_class_probs, Architecture, BoundNet, MultimodalNet};
use crate::reinforcement::{
    balanced_terms, build_resampled_dataset, fusion_weights, resample_count, BalanceSettings, ResamplePlan,
    DEFAULT_FW_EPSILON, DEFAULT_SLOPE,
};
use crate::tensor::{Tape, Tensor, Var};
use crate::valuation::{valuate, Accumulator, ContributionReport, ContributionSummary, MinMode, DEFAULT_TAU};

/// Strategy switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    /// Dynamic fusion weights.
    pub dff: bool,
    /// Balanced min-max loss.
    pub bmml: bool,
    /// Dynamic resampling.
    pub dsr: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            dff: true,
            bmml: true,
            dsr: true,
        }
    }
}

impl Toggles {
    pub fn off() -> Self {
        Toggles {
            dff: false,
            bmml: false,
            dsr: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub slope: f64,
    pub probe_weight: f64,
    pub hidden_dim: usize,
    /// Additive smoothing of the soft joints before NMI/NCMI.
    pub smoothing: f64,
    pub fw_epsilon: f64,
    /// Epoch size under resampling is capped at this multiple of the base.
    pub max_epoch_factor: usize,
    /// Train resampled copies in the following epoch instead of the current one.
    pub defer_extras: bool,
    pub seed: u64,
    pub toggles: Toggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            warmup: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda1: 1.0,
            lambda2: 1.0,
            tau: DEFAULT_TAU,
            slope: DEFAULT_SLOPE,
            probe_weight: 1.0,
            hidden_dim: 16,
            smoothing: 0.0,
            fw_epsilon: DEFAULT_FW_EPSILON,
            max_epoch_factor: 4,
            defer_extras: false,
            seed: 0,
            toggles: Toggles::default(),
        }
    }
}

impl TrainConfig {
    /// Plain concatenation fusion: every strategy off and no balancing terms.
    pub fn baseline() -> Self {
        TrainConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            toggles: Toggles::off(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, reason: String| Err(Error::config(key, reason));
        if self.epochs == 0 {
            return fail("epochs", "must be positive".into());
        }
        if self.warmup > self.epochs {
            return fail("warmup", format!("{} exceeds epochs {}", self.warmup, self.epochs));
        }
        if self.batch_size < 2 {
            return fail("batch_size", format!("must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", format!("must be in [0, 1), got {}", self.momentum));
        }
        for (key, v) in [
            ("weight_decay", self.weight_decay),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("probe_weight", self.probe_weight),
            ("smoothing", self.smoothing),
            ("fw_epsilon", self.fw_epsilon),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(key, format!("must be nonnegative, got {v}"));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return fail("tau", format!("must be positive, got {}", self.tau));
        }
        if !(self.slope < 0.0) || !self.slope.is_finite() {
            return fail("slope", format!("must be negative, got {}", self.slope));
        }
        if self.hidden_dim == 0 {
            return fail("hidden_dim", "must be positive".into());
        }
        if self.max_epoch_factor == 0 {
            return fail("max_epoch_factor", "must be positive".into());
        }
        Ok(())
    }

    /// Weights applied to the balancing terms (zero when that strategy is off).
    pub fn effective_lambdas(&self) -> (f64, f64) {
        if self.toggles.bmml {
            (self.lambda1, self.lambda2)
        } else {
            (0.0, 0.0)
        }
    }

    fn balance(&self) -> BalanceSettings {
        BalanceSettings {
            tau: self.tau,
            smoothing: self.smoothing,
            epsilon: self.fw_epsilon,
        }
    }
}

/// Shuffle seed for epoch `t`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `v ← μ·v + (g + wd·p)`, `p ← p − lr·v`.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::arg(format!(
            "{} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::arg(format!(
                "param {:?}, grad {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + (gv + weight_decay * *pv);
            *pv -= lr * *vv;
        }
    }
    Ok(())
}

/// Values held fixed in [`batch_objective`] instead of being read from the
/// current forward pass.
#[derive(Clone, Debug)]
pub struct Frozen {
    /// Encoder features fed to the probe heads.
    pub probe_features: Vec<Tensor>,
    /// `n×m` unimodal true-class probabilities weighting the interaction terms.
    pub p_true_unimodal: Tensor,
    /// Fused posteriors seen by the NMI/NCMI estimators.
    pub fused_target: Tensor,
}

impl Frozen {
    /// Values of the current forward pass of `net` on one batch.
    pub fn capture(net: &MultimodalNet, inputs: &[Tensor], labels: &[usize], weights: &Tensor) -> Result<Self> {
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let x: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = bound.forward(&x, weights, None)?;
        let cols: Vec<Vec<f64>> = out
            .unimodal
            .iter()
            .map(|u| true_class_probs(&u.value(), labels))
            .collect();
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|s| cols.iter().map(|c| c[s]).collect()).collect();
        Ok(Frozen {
            probe_features: out.features.iter().map(|f| f.value()).collect(),
            p_true_unimodal: Tensor::from_rows(&rows)?,
            fused_target: out.fused.value(),
        })
    }
}

/// Loss settings for one batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSettings {
    pub lambda1: f64,
    pub lambda2: f64,
    pub probe_weight: f64,
    pub balance: BalanceSettings,
}

impl From<&TrainConfig> for ObjectiveSettings {
    fn from(cfg: &TrainConfig) -> Self {
        let (lambda1, lambda2) = cfg.effective_lambdas();
        ObjectiveSettings {
            lambda1,
            lambda2,
            probe_weight: cfg.probe_weight,
            balance: cfg.balance(),
        }
    }
}

/// Pieces of the batch objective.
pub struct Objective<'t> {
    /// `ce + λ1·l_mi + λ2·l_cmi + probe_weight·probe_ce`.
    pub total: Var<'t>,
    pub ce: f64,
    pub probe_ce: f64,
    pub l_phi_mi: Option<f64>,
    pub l_phi_cmi: Option<f64>,
    pub fused: Tensor,
    pub unimodal: Vec<Tensor>,
}

impl Objective<'_> {
    /// The recorded step loss: everything except the probe term.
    pub fn step_loss(&self, settings: &ObjectiveSettings) -> f64 {
        self.ce + settings.lambda1 * self.l_phi_mi.unwrap_or(0.0) + settings.lambda2 * self.l_phi_cmi.unwrap_or(0.0)
    }
}

/// Builds the full objective for one batch on `net`'s tape.
///
/// The probe cross-entropy reads detached features. The balancing terms use
/// the probe heads on the live features, with the fused posterior and the
/// unimodal true-class probabilities inside the estimators held constant.
pub fn batch_objective<'t>(
    net: &BoundNet<'t>,
    inputs: &[Var<'t>],
    labels: &[usize],
    weights: &Tensor,
    settings: &ObjectiveSettings,
    frozen: Option<&Frozen>,
) -> Result<Objective<'t>> {
    let out = net.forward(inputs, weights, frozen.map(|f| f.probe_features.as_slice()))?;
    let ce = cross_entropy_loss(out.fused, labels)?;
    let mut total = ce;
    let mut probe_ce = 0.0;
    if settings.probe_weight > 0.0 {
        let mut sum: Option<Var<'t>> = None;
        for &u in &out.unimodal {
            let l = cross_entropy_loss(u, labels)?;
            sum = Some(match sum {
                Some(s) => s.add(l)?,
                None => l,
            });
        }
        let sum = sum.expect("at least one modality");
        probe_ce = sum.scalar();
        total = total.add(sum.scale(settings.probe_weight))?;
    }
    let unimodal: Vec<Tensor> = out.unimodal.iter().map(|u| u.value()).collect();
    let (mut l_phi_mi, mut l_phi_cmi) = (None, None);
    if settings.lambda1 > 0.0 || settings.lambda2 > 0.0 {
        let p_true = match frozen {
            Some(f) => f.p_true_unimodal.clone(),
            None => {
                let cols: Vec<Vec<f64>> = unimodal.iter().map(|u| true_class_probs(u, labels)).collect();
                let rows: Vec<Vec<f64>> = (0..labels.len()).map(|s| cols.iter().map(|c| c[s]).collect()).collect();
                Tensor::from_rows(&rows)?
            }
        };
        let fused_target = match frozen {
            Some(f) => f.fused_target.clone(),
            None => out.fused.value(),
        };
        // probe heads on the live features, so these terms reach the encoders
        let live = (0..out.features.len())
            .map(|i| net.probe(i, out.features[i]))
            .collect::<Result<Vec<_>>>()?;
        let terms = balanced_terms(out.fused, &fused_target, &live, labels, &p_true, settings.balance)?;
        l_phi_mi = Some(terms.l_phi_mi.scalar());
        l_phi_cmi = Some(terms.l_phi_cmi.scalar());
        if settings.lambda1 > 0.0 {
            total = total.add(terms.l_phi_mi.scale(settings.lambda1))?;
        }
        if settings.lambda2 > 0.0 {
            total = total.add(terms.l_phi_cmi.scale(settings.lambda2))?;
        }
    }
    Ok(Objective {
        total,
        ce: ce.scalar(),
        probe_ce,
        l_phi_mi,
        l_phi_cmi,
        fused: out.fused.value(),
        unimodal,
    })
}

/// Mean loss components over the steps of one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossMeans {
    pub ce: f64,
    pub probe_ce: f64,
    pub l_phi_mi: f64,
    pub l_phi_cmi: f64,
    pub total: f64,
}

/// One line of the run history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub warmup: bool,
    /// Samples trained this epoch, extras included.
    pub epoch_size: usize,
    pub extras: usize,
    pub steps: usize,
    pub train_accuracy: f64,
    pub train_probe_accuracy: Vec<f64>,
    pub test_accuracy: Option<f64>,
    pub test_probe_accuracy: Option<Vec<f64>>,
    /// Per-modality mean `φ^CMI` over the epoch's training batches.
    pub phi_cmi_mean: Vec<f64>,
    pub phi_cmi_joint_mean: f64,
    pub phi_mi_joint_mean: f64,
    pub gap: f64,
    /// Mean fusion weight applied per modality.
    pub fw_mean: Vec<f64>,
    pub degenerate: usize,
    pub loss: LossMeans,
    pub step_losses: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                reason: e.to_string(),
            })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                reason: "no epoch records".into(),
            });
        }
        Ok(RunHistory { records })
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Evaluation of a trained net with all-ones fusion weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub samples: usize,
    pub fused_accuracy: f64,
    pub probe_accuracy: Vec<f64>,
    pub ce: f64,
    pub contribution: ContributionSummary,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(posteriors: &Tensor, labels: &[usize]) -> f64 {
    let hits = posteriors
        .rows_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Accuracies and full-set valuation. Contributions need at least 2 samples.
pub fn evaluate(net: &MultimodalNet, ds: &MultimodalDataset, smoothing: f64) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let ones = Tensor::ones(ds.len(), ds.modalities());
    let (fused, unimodal) = net.predict(ds.features(), &ones)?;
    let labels = ds.labels();
    let ce = labels
        .iter()
        .enumerate()
        .map(|(s, &y)| crate::model::cross_entropy(fused.row(s), y))
        .sum::<Result<f64>>()?
        / labels.len() as f64;
    let fused_accuracy = accuracy(&fused, labels);
    let probe_accuracy = unimodal.iter().map(|u| accuracy(u, labels)).collect();
    let batch = PosteriorBatch::new(fused, unimodal, labels.to_vec())?;
    let reports = valuate(&batch, MinMode::Exact, smoothing)?;
    Ok(EvalMetrics {
        samples: ds.len(),
        fused_accuracy,
        probe_accuracy,
        ce,
        contribution: ContributionSummary::from_reports(&reports),
    })
}

fn check_finite(value: f64, what: &str, epoch: usize, step: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} = {value} at epoch {epoch}, step {step}"
        )))
    }
}

/// Queue entry: dataset row and whether it is a resampled copy.
#[derive(Clone, Copy)]
struct Slot {
    row: usize,
    extra: bool,
}

/// Network with the architecture implied by `cfg` and `ds`, seeded from
/// `cfg.seed`.
pub fn init_net(cfg: &TrainConfig, ds: &MultimodalDataset) -> Result<MultimodalNet> {
    let arch = Architecture {
        input_dims: ds.dims(),
        hidden_dim: cfg.hidden_dim,
        classes: ds.classes(),
    };
    MultimodalNet::new(arch, &mut seeded_rng(cfg.seed, stream::INIT))
}

/// Runs the full schedule on `train`, evaluating on `test` (when given)
/// after every epoch.
pub fn train(
    cfg: &TrainConfig,
    train: &MultimodalDataset,
    test: Option<&MultimodalDataset>,
) -> Result<(MultimodalNet, RunHistory)> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::InsufficientBatch {
            need: 2,
            got: train.len(),
        });
    }
    if let Some(t) = test {
        if t.dims() != train.dims() || t.classes() != train.classes() {
            return Err(Error::arg("test set layout differs from the training set"));
        }
    }
    let mut net = init_net(cfg, train)?;
    let mut velocity: Vec<Tensor> = net
        .params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    let settings = ObjectiveSettings::from(cfg);
    let m = train.modalities();
    let n = train.len();
    let cap = cfg.max_epoch_factor * n;

    let mut fw_cache: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut deferred: Option<ResamplePlan> = None;
    let mut history = RunHistory::default();
    let mut warned_cap = false;

    for epoch in 0..cfg.epochs {
        let warmup = epoch < cfg.warmup;
        let reinforce = !warmup;
        let seed = epoch_seed(cfg.seed, epoch);
        let plan = match (&deferred, reinforce && cfg.toggles.dsr && cfg.defer_extras) {
            (Some(p), true) => p.clone(),
            _ => ResamplePlan::empty(cfg.slope, m),
        };
        let base_order = materialize_resample(train, &plan, seed)?;
        let deferred_extras = base_order.len() - n;
        let mut queue: Vec<Slot> = base_order.into_iter().map(|row| Slot { row, extra: false }).collect();
        let mut insert_rng = seeded_rng(seed, stream::SHUFFLE + 1);

        let mut next_cache = fw_cache.clone();
        let mut next_plan_ids = Vec::new();
        let mut next_plan_reports: Vec<ContributionReport> = Vec::new();
        let mut acc = Accumulator::default();
        let mut fw_sum = vec![0.0; m];
        let mut fw_count = 0usize;
        let mut degenerate = 0usize;
        let mut loss_sum = LossMeans::default();
        let mut step_losses = Vec::new();
        let mut trained = 0usize;
        let mut same_epoch_extras = 0usize;

        let mut cursor = 0;
        while cursor < queue.len() {
            let end = (cursor + cfg.batch_size).min(queue.len());
            if end - cursor < 2 {
                break;
            }
            let slots: Vec<Slot> = queue[cursor..end].to_vec();
            cursor = end;
            let rows: Vec<usize> = slots.iter().map(|s| s.row).collect();
            let Batch { inputs, labels, ids } = train.gather(&rows)?;

            let mut weights = Tensor::ones(rows.len(), m);
            if reinforce && cfg.toggles.dff {
                for (s, id) in ids.iter().enumerate() {
                    if let Some(w) = fw_cache.get(id) {
                        weights.data_mut()[s * m..(s + 1) * m].copy_from_slice(w);
                    }
                }
            }
            for s in 0..rows.len() {
                for (i, sum) in fw_sum.iter_mut().enumerate() {
                    *sum += weights.get(s, i);
                }
            }
            fw_count += rows.len();

            let tape = Tape::new();
            let bound = net.bind(&tape);
            let x: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
            let obj = batch_objective(&bound, &x, &labels, &weights, &settings, None)?;
            let step = step_losses.len();
            let total = obj.total.scalar();
            check_finite(total, "loss", epoch, step)?;
            let grads = tape.backward(obj.total)?;
            let grads: Vec<Tensor> = bound.vars().into_iter().map(|v| grads.wrt(v)).collect();
            if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of `{}` at epoch {epoch}, step {step}",
                    net.params()[bad].0
                )));
            }
            sgd_step(
                &mut net.params_mut(),
                &grads,
                &mut velocity,
                cfg.learning_rate,
                cfg.momentum,
                cfg.weight_decay,
            )?;

            let batch = PosteriorBatch::new(obj.fused.clone(), obj.unimodal.clone(), labels.clone())?;
            let reports = valuate(&batch, MinMode::Exact, cfg.smoothing)?;
            for (slot, (id, r)) in slots.iter().zip(ids.iter().zip(&reports)) {
                acc.push(r);
                if !(r.phi_cmi_joint > cfg.fw_epsilon) {
                    degenerate += 1;
                }
                if !reinforce {
                    continue;
                }
                if cfg.toggles.dff {
                    next_cache.insert(*id, fusion_weights(r, epoch, cfg.fw_epsilon).weights);
                }
                if cfg.toggles.dsr && !slot.extra {
                    if cfg.defer_extras {
                        next_plan_ids.push(*id);
                        next_plan_reports.push(r.clone());
                    } else {
                        let s = resample_count(r.phi_cmi_joint, cfg.slope, m)? as usize;
                        let room = cap.saturating_sub(queue.len());
                        if s > room && !warned_cap {
                            log::warn!("epoch {epoch}: resampled epoch reached the cap of {cap} samples");
                            warned_cap = true;
                        }
                        for _ in 0..s.min(room) {
                            let pos = insert_rng.random_range(cursor..=queue.len());
                            queue.insert(
                                pos,
                                Slot {
                                    row: slot.row,
                                    extra: true,
                                },
                            );
                        }
                        same_epoch_extras += s.min(room);
                    }
                }
            }

            let step_loss = obj.step_loss(&settings);
            loss_sum.ce += obj.ce;
            loss_sum.probe_ce += obj.probe_ce;
            loss_sum.l_phi_mi += obj.l_phi_mi.unwrap_or(0.0);
            loss_sum.l_phi_cmi += obj.l_phi_cmi.unwrap_or(0.0);
            loss_sum.total += total;
            step_losses.push(step_loss);
            trained += rows.len();
        }

        if reinforce && cfg.toggles.dsr && cfg.defer_extras {
            // every base sample is visited once, so the plan covers them all
            let mut latest: HashMap<u64, ContributionReport> = HashMap::new();
            for (id, r) in next_plan_ids.into_iter().zip(next_plan_reports) {
                latest.insert(id, r);
            }
            let mut ids: Vec<u64> = latest.keys().copied().collect();
            ids.sort_unstable();
            let reports: Vec<ContributionReport> = ids.iter().map(|id| latest[id].clone()).collect();
            let mut plan = build_resampled_dataset(&ids, &reports, cfg.slope)?;
            let mut budget = cap.saturating_sub(n);
            for count in plan.extras.values_mut() {
                let keep = (*count as usize).min(budget);
                if keep < *count as usize && !warned_cap {
                    log::warn!("epoch {epoch}: resampled epoch reached the cap of {cap} samples");
                    warned_cap = true;
                }
                budget -= keep;
                *count = keep as u32;
            }
            deferred = Some(plan);
        }
        fw_cache = next_cache;

        let steps = step_losses.len().max(1) as f64;
        let loss = LossMeans {
            ce: loss_sum.ce / steps,
            probe_ce: loss_sum.probe_ce / steps,
            l_phi_mi: loss_sum.l_phi_mi / steps,
            l_phi_cmi: loss_sum.l_phi_cmi / steps,
            total: loss_sum.total / steps,
        };
        let summary = acc.finish();
        let train_eval = evaluate(&net, train, cfg.smoothing)?;
        let test_eval = test.map(|t| evaluate(&net, t, cfg.smoothing)).transpose()?;
        let record = EpochRecord {
            epoch,
            warmup,
            epoch_size: trained,
            extras: deferred_extras + same_epoch_extras,
            steps: step_losses.len(),
            train_accuracy: train_eval.fused_accuracy,
            train_probe_accuracy: train_eval.probe_accuracy,
            test_accuracy: test_eval.as_ref().map(|e| e.fused_accuracy),
            test_probe_accuracy: test_eval.map(|e| e.probe_accuracy),
            phi_cmi_mean: summary.phi_cmi_mean,
            phi_cmi_joint_mean: summary.phi_cmi_joint_mean,
            phi_mi_joint_mean: summary.phi_mi_joint_mean,
            gap: summary.gap,
            fw_mean: fw_sum.iter().map(|s| s / fw_count.max(1) as f64).collect(),
            degenerate,
            loss,
            step_losses,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} gap {:.6} train acc {:.4}",
            record.loss.total,
            record.gap,
            record.train_accuracy
        );
        history.records.push(record);
    }
    Ok((net, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split, ModalitySpec, SynthConfig};

    fn tiny_data() -> (MultimodalDataset, MultimodalDataset) {
        let cfg = SynthConfig {
            classes: 3,
            modalities: vec![
                ModalitySpec {
                    dim: 4,
                    informative: 3,
                    noise: 0.3,
                },
                ModalitySpec {
                    dim: 4,
                    informative: 1,
                    noise: 1.5,
                },
            ],
            samples_per_class: 20,
            seed: 3,
        };
        split(&generate_synthetic(&cfg).unwrap(), 0.75, 1).unwrap()
    }

    fn quick(mut cfg: TrainConfig) -> TrainConfig {
        cfg.epochs = 4;
        cfg.warmup = 2;
        cfg.batch_size = 8;
        cfg.hidden_dim = 6;
        cfg.learning_rate = 0.05;
        cfg
    }

    #[test]
    fn sgd_plain_descent() {
        let mut p = Tensor::row_vector(vec![1.0, -2.0]).unwrap();
        let g = Tensor::row_vector(vec![0.5, 0.25]).unwrap();
        let mut v = vec![Tensor::zeros(1, 2)];
        sgd_step(&mut [&mut p], &[g], &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn sgd_scalar_trajectory() {
        let (lr, mu, wd) = (0.1, 0.9, 0.01);
        let mut p = Tensor::scalar(2.0);
        let mut v = vec![Tensor::zeros(1, 1)];
        let gs = [1.0, -0.5, 0.25];
        let (mut hp, mut hv) = (2.0f64, 0.0f64);
        for &g in &gs {
            sgd_step(&mut [&mut p], &[Tensor::scalar(g)], &mut v, lr, mu, wd).unwrap();
            hv = mu * hv + (g + wd * hp);
            hp -= lr * hv;
            assert!((p.data()[0] - hp).abs() < 1e-15);
        }
        // zero gradient, no decay: velocity shrinks by μ each step
        let v0 = v[0].data()[0];
        let p0 = p.data()[0];
        sgd_step(&mut [&mut p], &[Tensor::scalar(0.0)], &mut v, lr, mu, 0.0).unwrap();
        assert!((v[0].data()[0] - mu * v0).abs() < 1e-15);
        assert!((p.data()[0] - (p0 - lr * mu * v0)).abs() < 1e-15);
    }

    #[test]
    fn sgd_shape_mismatch() {
        let mut p = Tensor::zeros(1, 2);
        let err = sgd_step(
            &mut [&mut p],
            &[Tensor::zeros(2, 1)],
            &mut [Tensor::zeros(1, 2)],
            0.1,
            0.0,
            0.0,
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn config_validation_names_the_key() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "batch_size"),
            other => panic!("{other:?}"),
        }
        let cfg = TrainConfig {
            warmup: 61,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            slope: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn accuracy_counts_matches() {
        let p = Tensor::from_rows(&[[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.5, 0.5]]).unwrap();
        assert_eq!(accuracy(&p, &[0, 1, 1, 0]), 0.75);
        let always_zero = Tensor::from_rows(&[[1.0, 0.0, 0.0]; 6]).unwrap();
        assert!((accuracy(&always_zero, &[0, 1, 2, 0, 1, 2]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn runs_are_reproducible() {
        let (tr, te) = tiny_data();
        let cfg = quick(TrainConfig::default());
        let (net_a, a) = train(&cfg, &tr, Some(&te)).unwrap();
        let (net_b, b) = train(&cfg, &tr, Some(&te)).unwrap();
        assert_eq!(net_a, net_b);
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        assert_eq!(a.records.len(), 4);
    }

    #[test]
    fn warmup_only_run_never_reinforces() {
        let (tr, _) = tiny_data();
        let mut cfg = quick(TrainConfig::default());
        cfg.warmup = cfg.epochs;
        let (_, h) = train(&cfg, &tr, None).unwrap();
        for r in &h.records {
            assert!(r.warmup);
            assert_eq!(r.epoch_size, tr.len());
            assert_eq!(r.extras, 0);
            assert!(r.fw_mean.iter().all(|&w| w == 1.0));
        }
    }

    #[test]
    fn ablation_lattice() {
        let (tr, _) = tiny_data();
        let base = quick(TrainConfig::default());

        let no_dsr = TrainConfig {
            toggles: Toggles {
                dsr: false,
                ..Toggles::default()
            },
            ..base.clone()
        };
        let (_, h) = train(&no_dsr, &tr, None).unwrap();
        assert!(h.records.iter().all(|r| r.extras == 0));

        let no_dff = TrainConfig {
            toggles: Toggles {
                dff: false,
                ..Toggles::default()
            },
            ..base.clone()
        };
        let (_, h) = train(&no_dff, &tr, None).unwrap();
        assert!(h.records.iter().all(|r| r.fw_mean.iter().all(|&w| w == 1.0)));

        let no_bmml = TrainConfig {
            toggles: Toggles {
                bmml: false,
                ..Toggles::default()
            },
            ..base.clone()
        };
        let (_, h) = train(&no_bmml, &tr, None).unwrap();
        for r in &h.records {
            assert_eq!(r.loss.l_phi_mi, 0.0);
            assert_eq!(r.loss.l_phi_cmi, 0.0);
        }

        let (_, h) = train(&base, &tr, None).unwrap();
        assert!(h.records[2..].iter().any(|r| r.extras > 0));
        assert!(h.records[2..].iter().all(|r| r.epoch_size <= 4 * tr.len()));
        for r in &h.records {
            assert!((r.fw_mean.iter().sum::<f64>() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deferred_extras_train_next_epoch() {
        let (tr, _) = tiny_data();
        let cfg = TrainConfig {
            defer_extras: true,
            ..quick(TrainConfig::default())
        };
        let (_, h) = train(&cfg, &tr, None).unwrap();
        assert_eq!(h.records[2].extras, 0);
        assert!(h.records[3].extras > 0);
    }

    #[test]
    fn history_round_trip() {
        let (tr, te) = tiny_data();
        let (_, h) = train(&quick(TrainConfig::default()), &tr, Some(&te)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.jsonl");
        h.write_jsonl(&path).unwrap();
        assert_eq!(RunHistory::read_jsonl(&path).unwrap(), h);
        fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(
            RunHistory::read_jsonl(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn evaluate_rejects_empty_and_reports_ranges() {
        let (tr, te) = tiny_data();
        let (net, _) = train(&quick(TrainConfig::default()), &tr, None).unwrap();
        let e = evaluate(&net, &te, 0.0).unwrap();
        assert!((0.0..=1.0).contains(&e.fused_accuracy));
        assert_eq!(e.probe_accuracy.len(), 2);
        assert!(e.contribution.phi_cmi_joint_mean >= 0.0);
    }
}
