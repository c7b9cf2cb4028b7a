//! Per-sample modality contributions.
//!
//! Information terms (NMI, NCMI, interaction information) are estimated once
//! per batch; per-sample contributions scale them by that sample's
//! true-class probabilities.
//!
//! - `φ^MI(x^i) = p(f_Y → y) · NMI(f_Y; f_{x^i})`
//! - `φ^MI(X) = p(f_Y → y) · min_i NMI(f_Y; f_{x^i})`
//! - `φ^CMI(x^i) = p(f_Y → y) · NMI_i + Σ_{j≠i} p(f_{x^j} → y) · II(j; i)`,
//!   clamped to `[0, m]`
//! - `φ^CMI(X) = mean_i φ^CMI(x^i)`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{self, PosteriorBatch};
use crate::tensor::logsumexp;

/// Default smooth-minimum temperature.
pub const DEFAULT_TAU: f64 = 0.1;

/// How the minimum over modalities is taken.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MinMode {
    Exact,
    /// `−τ · logsumexp(−x / τ)`, a differentiable lower bound on the minimum.
    Smooth {
        tau: f64,
    },
}

impl MinMode {
    pub fn smooth(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::arg(format!(
                "smooth-min temperature must be positive, got {tau}"
            )));
        }
        Ok(MinMode::Smooth { tau })
    }

    fn validate(self) -> Result<Self> {
        match self {
            MinMode::Exact => Ok(self),
            MinMode::Smooth { tau } => MinMode::smooth(tau),
        }
    }
}

/// Contribution metrics for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionReport {
    pub p_true_fused: f64,
    pub p_true_unimodal: Vec<f64>,
    /// Batch-level `NMI(f_Y; f_{x^i})`.
    pub nmi: Vec<f64>,
    /// Batch-level `ncmi[j][i] = NCMI(f_Y; f_{x^j} | f_{x^i})`; diagonal is 0.
    pub ncmi: Vec<Vec<f64>>,
    /// `ii[j][i] = nmi[j] − ncmi[j][i]`; diagonal is 0.
    pub ii: Vec<Vec<f64>>,
    pub phi_mi_marginal: Vec<f64>,
    pub phi_mi_joint: f64,
    /// Index of the smallest NMI (lowest index on ties).
    pub weakest_modality: usize,
    pub phi_cmi_marginal: Vec<f64>,
    /// Marginals before clamping to `[0, m]`.
    pub phi_cmi_marginal_raw: Vec<f64>,
    pub phi_cmi_joint: f64,
}

impl ContributionReport {
    pub fn modalities(&self) -> usize {
        self.nmi.len()
    }
}

/// Batch-level NMI vector and NCMI matrix.
///
/// `nmi[i] = NMI(fused; unimodal[i])` and, for `j ≠ i`,
/// `ncmi[j][i] = NCMI(fused; unimodal[j] | unimodal[i])`.
pub fn batch_nmi_matrix(batch: &PosteriorBatch, smoothing: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if batch.len() < 2 {
        return Err(Error::InsufficientBatch {
            need: 2,
            got: batch.len(),
        });
    }
    let m = batch.modalities();
    let fused = batch.fused();
    let uni = batch.unimodal();
    let nmi = uni
        .iter()
        .map(|u| Ok(info::normalized_mi(&info::soft_joint2(fused, u)?.smoothed(smoothing))))
        .collect::<Result<Vec<_>>>()?;
    let mut ncmi = vec![vec![0.0; m]; m];
    for j in 0..m {
        for i in 0..m {
            if i != j {
                let joint = info::soft_joint3(fused, &uni[j], &uni[i])?.smoothed(smoothing);
                ncmi[j][i] = info::normalized_cmi(&joint);
            }
        }
    }
    Ok((nmi, ncmi))
}

pub fn phi_mi_marginal(p_true: f64, nmi_i: f64) -> f64 {
    p_true * nmi_i
}

/// `−τ · logsumexp(−x / τ)`; lies in `[min x − τ ln m, min x]`.
pub fn smooth_min(values: &[f64], tau: f64) -> Result<f64> {
    MinMode::smooth(tau)?;
    let scaled: Vec<f64> = values.iter().map(|v| -v / tau).collect();
    Ok(-tau * logsumexp(&scaled)?)
}

fn exact_min(values: &[f64]) -> Result<(usize, f64)> {
    values
        .iter()
        .copied()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .ok_or_else(|| Error::arg("minimum of an empty vector"))
}

/// Lower-bound joint contribution `p_true · min_i nmi[i]`. In smooth mode the
/// minimum is replaced by the smooth minimum and the result clamped at 0.
pub fn phi_mi_joint(p_true: f64, nmi: &[f64], mode: MinMode) -> Result<f64> {
    match mode.validate()? {
        MinMode::Exact => Ok(p_true * exact_min(nmi)?.1),
        MinMode::Smooth { tau } => Ok((p_true * smooth_min(nmi, tau)?).max(0.0)),
    }
}

/// Unclamped `φ^CMI(x^i)`.
pub fn phi_cmi_marginal_raw(
    i: usize,
    p_true_fused: f64,
    p_true_unimodal: &[f64],
    nmi: &[f64],
    ncmi: &[Vec<f64>],
) -> f64 {
    let cross: f64 = (0..nmi.len())
        .filter(|&j| j != i)
        .map(|j| p_true_unimodal[j] * info::interaction_information(nmi[j], ncmi[j][i]))
        .sum();
    p_true_fused * nmi[i] + cross
}

/// `φ^CMI(x^i)` clamped to `[0, m]`.
pub fn phi_cmi_marginal(i: usize, p_true_fused: f64, p_true_unimodal: &[f64], nmi: &[f64], ncmi: &[Vec<f64>]) -> f64 {
    let m = nmi.len() as f64;
    phi_cmi_marginal_raw(i, p_true_fused, p_true_unimodal, nmi, ncmi).clamp(0.0, m)
}

/// Joint contribution: the mean of the marginals.
pub fn phi_cmi_joint(marginals: &[f64]) -> Result<f64> {
    if marginals.is_empty() {
        return Err(Error::arg("joint contribution of zero modalities"));
    }
    Ok(marginals.iter().sum::<f64>() / marginals.len() as f64)
}

/// One report per sample of `batch`.
pub fn valuate(batch: &PosteriorBatch, mode: MinMode, smoothing: f64) -> Result<Vec<ContributionReport>> {
    let mode = mode.validate()?;
    let (nmi, ncmi) = batch_nmi_matrix(batch, smoothing)?;
    let m = batch.modalities();
    let ii: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            (0..m)
                .map(|i| {
                    if i == j {
                        0.0
                    } else {
                        info::interaction_information(nmi[j], ncmi[j][i])
                    }
                })
                .collect()
        })
        .collect();
    let (weakest, _) = exact_min(&nmi)?;
    (0..batch.len())
        .map(|s| {
            let p_f = batch.p_true_fused(s);
            let p_u: Vec<f64> = (0..m).map(|j| batch.p_true_unimodal(s, j)).collect();
            let raw: Vec<f64> = (0..m)
                .map(|i| phi_cmi_marginal_raw(i, p_f, &p_u, &nmi, &ncmi))
                .collect();
            let clamped: Vec<f64> = raw.iter().map(|v| v.clamp(0.0, m as f64)).collect();
            Ok(ContributionReport {
                p_true_fused: p_f,
                phi_mi_marginal: nmi.iter().map(|&v| phi_mi_marginal(p_f, v)).collect(),
                phi_mi_joint: phi_mi_joint(p_f, &nmi, mode)?,
                weakest_modality: weakest,
                phi_cmi_joint: phi_cmi_joint(&clamped)?,
                phi_cmi_marginal: clamped,
                phi_cmi_marginal_raw: raw,
                p_true_unimodal: p_u,
                nmi: nmi.clone(),
                ncmi: ncmi.clone(),
                ii: ii.clone(),
            })
        })
        .collect()
}

/// Averages of contribution metrics over a set of reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContributionSummary {
    pub samples: usize,
    pub phi_cmi_mean: Vec<f64>,
    pub phi_cmi_joint_mean: f64,
    pub phi_mi_joint_mean: f64,
    /// `max − min` of `phi_cmi_mean`.
    pub gap: f64,
}

impl ContributionSummary {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a ContributionReport>) -> Self {
        let mut acc = Accumulator::default();
        for r in reports {
            acc.push(r);
        }
        acc.finish()
    }
}

/// Running sums behind [`ContributionSummary`].
#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    samples: usize,
    phi_cmi: Vec<f64>,
    phi_cmi_joint: f64,
    phi_mi_joint: f64,
}

impl Accumulator {
    pub fn push(&mut self, r: &ContributionReport) {
        if self.phi_cmi.is_empty() {
            self.phi_cmi = vec![0.0; r.modalities()];
        }
        for (a, v) in self.phi_cmi.iter_mut().zip(&r.phi_cmi_marginal) {
            *a += v;
        }
        self.phi_cmi_joint += r.phi_cmi_joint;
        self.phi_mi_joint += r.phi_mi_joint;
        self.samples += 1;
    }

    pub fn finish(&self) -> ContributionSummary {
        if self.samples == 0 {
            return ContributionSummary::default();
        }
        let n = self.samples as f64;
        let means: Vec<f64> = self.phi_cmi.iter().map(|v| v / n).collect();
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        ContributionSummary {
            samples: self.samples,
            gap: max - min,
            phi_cmi_mean: means,
            phi_cmi_joint_mean: self.phi_cmi_joint / n,
            phi_mi_joint_mean: self.phi_mi_joint / n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn phi_mi_marginal_examples() {
        assert_eq!(phi_mi_marginal(1.0, 1.0), 1.0);
        assert_eq!(phi_mi_marginal(0.0, 0.7), 0.0);
        close(phi_mi_marginal(0.8, 0.5), 0.4);
    }

    #[test]
    fn phi_mi_joint_examples() {
        close(phi_mi_joint(1.0, &[0.6, 0.6], MinMode::Exact).unwrap(), 0.6);
        let smooth = phi_mi_joint(1.0, &[0.6, 0.6], MinMode::smooth(1.0).unwrap()).unwrap();
        assert_eq!(smooth, (0.6 - std::f64::consts::LN_2).max(0.0));
        for tau in [0.01, 0.5, 3.0] {
            close(
                phi_mi_joint(0.9, &[0.37], MinMode::smooth(tau).unwrap()).unwrap(),
                phi_mi_joint(0.9, &[0.37], MinMode::Exact).unwrap(),
            );
        }
        let nmi = [0.9, 0.3, 0.5];
        let exact = phi_mi_joint(0.7, &nmi, MinMode::Exact).unwrap();
        close(exact, 0.7 * 0.3);
        let smooth = phi_mi_joint(0.7, &nmi, MinMode::smooth(0.05).unwrap()).unwrap();
        assert!(smooth <= exact + 1e-12);
        assert!(smooth >= exact - 0.05 * 3f64.ln() - 1e-12);
        assert!(phi_mi_joint(0.7, &nmi, MinMode::Smooth { tau: 0.0 }).is_err());
        assert!(MinMode::smooth(-1.0).is_err());
    }

    #[test]
    fn phi_cmi_marginal_examples() {
        // m = 1 reduces to φ^MI
        close(
            phi_cmi_marginal(0, 0.8, &[0.3], &[0.6], &[vec![0.0]]),
            phi_mi_marginal(0.8, 0.6),
        );
        // zero interaction information
        let ncmi = vec![vec![0.0, 0.6], vec![0.4, 0.0]];
        close(phi_cmi_marginal(0, 0.8, &[0.7, 0.5], &[0.6, 0.4], &ncmi), 0.8 * 0.6);
        // 0.8·0.6 + 0.5·(0.4 − 0.1)
        let ncmi = vec![vec![0.0, 0.2], vec![0.1, 0.0]];
        close(phi_cmi_marginal(0, 0.8, &[0.7, 0.5], &[0.6, 0.4], &ncmi), 0.63);
    }

    #[test]
    fn negative_marginal_is_clamped_but_kept_raw() {
        let ncmi = vec![vec![0.0, 0.9], vec![0.9, 0.0]];
        let raw = phi_cmi_marginal_raw(0, 0.05, &[0.9, 0.9], &[0.2, 0.1], &ncmi);
        assert!(raw < 0.0);
        assert_eq!(phi_cmi_marginal(0, 0.05, &[0.9, 0.9], &[0.2, 0.1], &ncmi), 0.0);
    }

    #[test]
    fn phi_cmi_joint_examples() {
        assert_eq!(phi_cmi_joint(&[0.5]).unwrap(), 0.5);
        close(phi_cmi_joint(&[0.2, 0.8]).unwrap(), 0.5);
        close(phi_cmi_joint(&[0.3; 4]).unwrap(), 0.3);
        assert!(phi_cmi_joint(&[]).is_err());
    }

    fn saturated_batch() -> PosteriorBatch {
        let labels = vec![0, 1, 2, 1, 0, 2];
        let onehot = Tensor::from_rows(
            &labels
                .iter()
                .map(|&y| (0..3).map(|c| if c == y { 1.0 } else { 0.0 }).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        PosteriorBatch::new(onehot.clone(), vec![onehot.clone(), onehot], labels).unwrap()
    }

    #[test]
    fn saturated_agreement() {
        let reports = valuate(&saturated_batch(), MinMode::Exact, 0.0).unwrap();
        for r in &reports {
            close(r.phi_mi_joint, 1.0);
            close(r.phi_cmi_marginal[0], r.phi_cmi_marginal[1]);
            close(r.nmi[0], 1.0);
        }
    }

    #[test]
    fn uniform_modality_has_zero_nmi() {
        let fused = Tensor::from_rows(&[[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]]).unwrap();
        let batch = PosteriorBatch::new(
            fused.clone(),
            vec![fused.clone(), Tensor::filled(3, 2, 0.5)],
            vec![0, 1, 0],
        )
        .unwrap();
        let (nmi, _) = batch_nmi_matrix(&batch, 0.0).unwrap();
        assert!(nmi[0] > 0.0);
        assert!(nmi[1].abs() < 1e-15);
    }

    #[test]
    fn wrong_sample_has_zero_joint() {
        let fused = Tensor::from_rows(&[[1.0, 0.0], [0.3, 0.7], [0.6, 0.4]]).unwrap();
        let uni = Tensor::from_rows(&[[0.8, 0.2], [0.4, 0.6], [0.5, 0.5]]).unwrap();
        let batch = PosteriorBatch::new(fused, vec![uni.clone(), uni], vec![1, 1, 0]).unwrap();
        let reports = valuate(&batch, MinMode::Exact, 0.0).unwrap();
        assert_eq!(reports[0].phi_mi_joint, 0.0);
    }

    #[test]
    fn single_sample_batch_rejected() {
        let t = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        let batch = PosteriorBatch::new(t.clone(), vec![t], vec![0]).unwrap();
        assert!(matches!(
            valuate(&batch, MinMode::Exact, 0.0),
            Err(Error::InsufficientBatch { need: 2, got: 1 })
        ));
    }

    #[test]
    fn summary_gap() {
        let mut r = valuate(&saturated_batch(), MinMode::Exact, 0.0).unwrap().remove(0);
        r.phi_cmi_marginal = vec![0.2, 0.9];
        let s = ContributionSummary::from_reports([&r, &r]);
        close(s.gap, 0.7);
        assert_eq!(s.samples, 2);
    }
}
