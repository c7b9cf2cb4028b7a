//! Asymmetric reinforcement: contribution-proportional fusion weights, the
//! balanced min-max loss and contribution-driven resampling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::differentiable as dinfo;
use crate::tensor::{Tensor, Var};
use crate::valuation::ContributionReport;

/// Joint contributions at or below this are treated as degenerate.
pub const DEFAULT_FW_EPSILON: f64 = 1e-8;

/// Default slope of the resampling function.
pub const DEFAULT_SLOPE: f64 = -2.0;

/// Slopes of the resampling sweep.
pub const SLOPE_SWEEP: [f64; 6] = [-0.5, -1.0, -1.5, -2.0, -2.5, -3.0];

/// Per-modality fusion weights for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub weights: Vec<f64>,
    pub epoch: usize,
    /// Set when the joint contribution was too small to normalise by and the
    /// weights fell back to all ones.
    pub degenerate: bool,
}

impl FusionWeights {
    pub fn ones(m: usize, epoch: usize) -> Self {
        FusionWeights {
            weights: vec![1.0; m],
            epoch,
            degenerate: false,
        }
    }
}

/// `FW^i = φ^CMI(x^i) / φ^CMI(X)`, so the weights average to one.
pub fn fusion_weights(report: &ContributionReport, epoch: usize, epsilon: f64) -> FusionWeights {
    let joint = report.phi_cmi_joint;
    if !(joint > epsilon) {
        return FusionWeights {
            degenerate: true,
            ..FusionWeights::ones(report.modalities(), epoch)
        };
    }
    FusionWeights {
        weights: report.phi_cmi_marginal.iter().map(|v| v / joint).collect(),
        epoch,
        degenerate: false,
    }
}

/// `1 − mean φ^MI(X)` over a batch of joint contributions.
pub fn loss_phi_mi(phi_mi_joint: &[f64]) -> Result<f64> {
    if phi_mi_joint.is_empty() {
        return Err(Error::arg("loss over an empty batch"));
    }
    Ok(1.0 - phi_mi_joint.iter().sum::<f64>() / phi_mi_joint.len() as f64)
}

/// Per-sample gap loss, flagged when the joint contribution is degenerate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLoss {
    pub value: f64,
    pub degenerate: bool,
}

/// `Σ_i |φ^CMI(x^i) − φ^CMI(X)| / φ^CMI(X)`; zero (flagged) when the joint is
/// at or below `epsilon`.
pub fn loss_phi_cmi(report: &ContributionReport, epsilon: f64) -> SampleLoss {
    let joint = report.phi_cmi_joint;
    if !(joint > epsilon) {
        return SampleLoss {
            value: 0.0,
            degenerate: true,
        };
    }
    let dev: f64 = report.phi_cmi_marginal.iter().map(|v| (v - joint).abs()).sum();
    SampleLoss {
        value: dev / joint,
        degenerate: false,
    }
}

/// Batch gap loss: mean of [`loss_phi_cmi`] with degenerate samples counted
/// as zero.
pub fn mean_loss_phi_cmi(reports: &[ContributionReport], epsilon: f64) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::arg("loss over an empty batch"));
    }
    Ok(reports.iter().map(|r| loss_phi_cmi(r, epsilon).value).sum::<f64>() / reports.len() as f64)
}

/// Components of the total objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub l_phi_mi: f64,
    pub l_phi_cmi: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// `ce + λ1 · l_mi + λ2 · l_cmi`.
pub fn total_loss(ce: f64, l_mi: f64, l_cmi: f64, lambda1: f64, lambda2: f64) -> Result<LossBreakdown> {
    if !(lambda1 >= 0.0) || !(lambda2 >= 0.0) {
        return Err(Error::arg(format!(
            "trade-off weights must be nonnegative, got ({lambda1}, {lambda2})"
        )));
    }
    Ok(LossBreakdown {
        ce,
        l_phi_mi: l_mi,
        l_phi_cmi: l_cmi,
        total: ce + lambda1 * l_mi + lambda2 * l_cmi,
        lambda1,
        lambda2,
    })
}

/// Extra copies for a sample with joint contribution `phi_joint`:
/// `max(0, round(k·φ − k·m))` with `k < 0`. Rounds half away from zero.
pub fn resample_count(phi_joint: f64, slope: f64, m: usize) -> Result<u32> {
    if !(slope < 0.0) || !slope.is_finite() {
        return Err(Error::arg(format!("resampling slope must be negative, got {slope}")));
    }
    if !phi_joint.is_finite() {
        return Err(Error::arg(format!("joint contribution {phi_joint} is not finite")));
    }
    let raw = (slope * phi_joint - slope * m as f64).round();
    Ok(raw.max(0.0) as u32)
}

/// Extra-copy counts for one epoch, keyed by sample id. Every base sample is
/// present, most with a count of zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub extras: BTreeMap<u64, u32>,
    pub slope: f64,
    pub modalities: usize,
}

impl ResamplePlan {
    pub fn empty(slope: f64, modalities: usize) -> Self {
        ResamplePlan {
            extras: BTreeMap::new(),
            slope,
            modalities,
        }
    }

    pub fn count(&self, id: u64) -> u32 {
        self.extras.get(&id).copied().unwrap_or(0)
    }

    pub fn total_extras(&self) -> usize {
        self.extras.values().map(|&c| c as usize).sum()
    }

    /// Base size plus extras.
    pub fn epoch_size(&self) -> usize {
        self.extras.len() + self.total_extras()
    }
}

/// Plan with `resample_count(φ^CMI(X))` extras for every base sample.
pub fn build_resampled_dataset(base_ids: &[u64], reports: &[ContributionReport], slope: f64) -> Result<ResamplePlan> {
    if base_ids.len() != reports.len() {
        return Err(Error::arg(format!(
            "{} reports for {} samples",
            reports.len(),
            base_ids.len()
        )));
    }
    let m = reports.first().map(|r| r.modalities()).unwrap_or(0);
    let mut plan = ResamplePlan::empty(slope, m);
    for (&id, r) in base_ids.iter().zip(reports) {
        let s = resample_count(r.phi_cmi_joint, slope, r.modalities())?;
        if plan.extras.insert(id, s).is_some() {
            return Err(Error::arg(format!("duplicate sample id {id}")));
        }
    }
    Ok(plan)
}

/// Tape versions of the two balancing losses.
pub struct BalancedTerms<'t> {
    /// `1 − mean φ^MI(X)` with the smooth minimum.
    pub l_phi_mi: Var<'t>,
    /// Mean normalised absolute deviation of the `φ^CMI` marginals.
    pub l_phi_cmi: Var<'t>,
    /// Samples whose joint contribution was degenerate.
    pub degenerate: usize,
}

/// Settings for [`balanced_terms`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BalanceSettings {
    pub tau: f64,
    pub smoothing: f64,
    pub epsilon: f64,
}

pub(crate) fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(labels.len(), classes);
    for (s, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::arg(format!("label {y} outside [0, {classes})")));
        }
        t.data_mut()[s * classes + y] = 1.0;
    }
    Ok(t)
}

/// Differentiable balanced min-max terms for a batch.
///
/// Gradients flow through `p(f_Y → y)` (read from `fused`) and through the
/// unimodal posteriors in the NMI/NCMI estimators. Inside the estimators the
/// fused posterior is the constant `fused_target`, and the unimodal
/// true-class probabilities weighting the interaction terms are the
/// constants `p_true_unimodal` (`n×m`).
pub fn balanced_terms<'t>(
    fused: Var<'t>,
    fused_target: &Tensor,
    unimodal: &[Var<'t>],
    labels: &[usize],
    p_true_unimodal: &Tensor,
    settings: BalanceSettings,
) -> Result<BalancedTerms<'t>> {
    let [n, c] = fused.shape();
    let m = unimodal.len();
    if n < 2 {
        return Err(Error::InsufficientBatch { need: 2, got: n });
    }
    if fused_target.shape() != [n, c] {
        return Err(Error::shape(format!(
            "fused target is {:?}, expected {n}x{c}",
            fused_target.shape()
        )));
    }
    if m == 0 || p_true_unimodal.shape() != [n, m] {
        return Err(Error::arg(format!(
            "unimodal true-class probabilities are {:?}, expected {n}x{m}",
            p_true_unimodal.shape()
        )));
    }
    if !(settings.tau > 0.0) {
        return Err(Error::arg(format!(
            "smooth-min temperature must be positive, got {}",
            settings.tau
        )));
    }
    let tape = fused.tape();
    let p_fused = fused.mul(tape.constant(one_hot(labels, c)?))?.sum_rows();

    let info_fused = tape.constant(fused_target.clone());
    let nmi = unimodal
        .iter()
        .map(|&u| dinfo::normalized_mi(info_fused, u, settings.smoothing))
        .collect::<Result<Vec<_>>>()?;
    let mut ii: Vec<Vec<Option<Var<'t>>>> = vec![vec![None; m]; m];
    for j in 0..m {
        for i in 0..m {
            if i != j {
                let ncmi = dinfo::normalized_cmi(info_fused, unimodal[j], unimodal[i], settings.smoothing)?;
                ii[j][i] = Some(nmi[j].sub(ncmi)?);
            }
        }
    }

    // lower-bound joint contribution with the smooth minimum
    let tau = settings.tau;
    let smooth_min = Var::concat_cols(&nmi)?.scale(-1.0 / tau).logsumexp().scale(-tau);
    let phi_mi = p_fused.mul(smooth_min)?.relu();
    let l_phi_mi = phi_mi.mean().neg().offset(1.0);

    // marginals clamped to [0, m]
    let upper = m as f64;
    let mut marginals = Vec::with_capacity(m);
    for i in 0..m {
        let mut phi = p_fused.mul(nmi[i])?;
        for (j, row) in ii.iter().enumerate() {
            if let Some(term) = row[i] {
                let weight: Vec<f64> = (0..n).map(|s| p_true_unimodal.get(s, j)).collect();
                let weight = tape.constant(Tensor::column_vector(weight)?);
                phi = phi.add(weight.mul(term)?)?;
            }
        }
        let clamped = phi.relu().neg().offset(upper).relu().neg().offset(upper);
        marginals.push(clamped);
    }
    let marginals = Var::concat_cols(&marginals)?;
    let joint = marginals.sum_rows().scale(1.0 / upper);
    let deviation = marginals.sub(joint)?.abs().sum_rows();

    let joint_values = joint.to_vec();
    let mask: Vec<f64> = joint_values
        .iter()
        .map(|&v| if v > settings.epsilon { 1.0 } else { 0.0 })
        .collect();
    let degenerate = mask.iter().filter(|&&v| v == 0.0).count();
    let fill: Vec<f64> = mask.iter().map(|v| 1.0 - v).collect();
    let mask = tape.constant(Tensor::column_vector(mask)?);
    let denominator = joint.mul(mask)?.add(tape.constant(Tensor::column_vector(fill)?))?;
    let l_phi_cmi = deviation.mul(mask)?.div(denominator)?.mean();

    Ok(BalancedTerms {
        l_phi_mi,
        l_phi_cmi,
        degenerate,
    })
}
