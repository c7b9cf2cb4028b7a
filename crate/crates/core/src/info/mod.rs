//! Empirical joints over discrete class variables and the information
//! measures computed from them. All logarithms are natural (nats).
//!
//! Joints are built from classifier posteriors: a batch of `n` posterior rows
//! is treated as an empirical distribution in which sample `s` puts mass
//! `p_a[s][a] * p_b[s][b] / n` on the cell `(a, b)`. One-hot posteriors reduce
//! this to plain co-occurrence counting ([`hard_joint2`]).
//!
//! [`differentiable`] holds tape versions of the same estimators used inside
//! the training loss.

pub mod differentiable;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Total-mass tolerance for joints and posterior rows.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Entropies below this are treated as a degenerate (constant) variable.
pub const ZERO_ENTROPY: f64 = 1e-12;

fn check_mass(table: &[f64], what: &str) -> Result<()> {
    let mut total = 0.0;
    for &p in table {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "{what}: entry {p} is not a nonnegative finite value"
            )));
        }
        total += p;
    }
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::InvalidDistribution(format!(
            "{what}: total mass {total} differs from 1"
        )));
    }
    Ok(())
}

fn smooth(table: &[f64], eps: f64) -> Vec<f64> {
    let norm = 1.0 + eps * table.len() as f64;
    table.iter().map(|p| (p + eps) / norm).collect()
}

/// Joint distribution `P(A, B)` as a dense `|A| × |B|` table.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalJoint2 {
    dims: [usize; 2],
    table: Vec<f64>,
}

impl EmpiricalJoint2 {
    pub fn new(rows: usize, cols: usize, table: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || rows * cols != table.len() {
            return Err(Error::arg(format!("{rows}x{cols} joint with {} cells", table.len())));
        }
        check_mass(&table, "joint")?;
        Ok(EmpiricalJoint2 {
            dims: [rows, cols],
            table,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let t = Tensor::from_rows(rows).map_err(|e| Error::arg(e.to_string()))?;
        let [r, c] = t.shape();
        Self::new(r, c, t.into_data())
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.table[a * self.dims[1] + b]
    }

    pub fn marginal_a(&self) -> Vec<f64> {
        self.table
            .chunks_exact(self.dims[1])
            .map(|row| row.iter().sum())
            .collect()
    }

    pub fn marginal_b(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dims[1]];
        for row in self.table.chunks_exact(self.dims[1]) {
            for (o, p) in out.iter_mut().zip(row) {
                *o += p;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let [r, c] = self.dims;
        let mut table = vec![0.0; r * c];
        for a in 0..r {
            for b in 0..c {
                table[b * r + a] = self.get(a, b);
            }
        }
        EmpiricalJoint2 { dims: [c, r], table }
    }

    /// Laplace smoothing: adds `eps` to every cell and renormalises.
    pub fn smoothed(&self, eps: f64) -> Self {
        if eps == 0.0 {
            return self.clone();
        }
        EmpiricalJoint2 {
            dims: self.dims,
            table: smooth(&self.table, eps),
        }
    }
}

/// Joint distribution `P(A, B, Z)`, stored with `z` varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalJoint3 {
    dims: [usize; 3],
    table: Vec<f64>,
}

impl EmpiricalJoint3 {
    pub fn new(dims: [usize; 3], table: Vec<f64>) -> Result<Self> {
        let cells: usize = dims.iter().product();
        if dims.contains(&0) || cells != table.len() {
            return Err(Error::arg(format!("{dims:?} joint with {} cells", table.len())));
        }
        check_mass(&table, "joint")?;
        Ok(EmpiricalJoint3 { dims, table })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn get(&self, a: usize, b: usize, z: usize) -> f64 {
        let [_, db, dz] = self.dims;
        self.table[(a * db + b) * dz + z]
    }

    fn marginal_pair(&self, keep: impl Fn(usize, usize, usize) -> (usize, usize), dims: [usize; 2]) -> EmpiricalJoint2 {
        let [da, db, dz] = self.dims;
        let mut table = vec![0.0; dims[0] * dims[1]];
        for a in 0..da {
            for b in 0..db {
                for z in 0..dz {
                    let (i, j) = keep(a, b, z);
                    table[i * dims[1] + j] += self.get(a, b, z);
                }
            }
        }
        EmpiricalJoint2 { dims, table }
    }

    pub fn marginal_ab(&self) -> EmpiricalJoint2 {
        let [da, db, _] = self.dims;
        self.marginal_pair(|a, b, _| (a, b), [da, db])
    }

    pub fn marginal_az(&self) -> EmpiricalJoint2 {
        let [da, _, dz] = self.dims;
        self.marginal_pair(|a, _, z| (a, z), [da, dz])
    }

    pub fn marginal_bz(&self) -> EmpiricalJoint2 {
        let [_, db, dz] = self.dims;
        self.marginal_pair(|_, b, z| (b, z), [db, dz])
    }

    /// `A` against the compound variable `(B, Z)`.
    pub fn flatten_a_bz(&self) -> EmpiricalJoint2 {
        let [da, db, dz] = self.dims;
        EmpiricalJoint2 {
            dims: [da, db * dz],
            table: self.table.clone(),
        }
    }

    /// The compound variable `(A, B)` against `Z`.
    pub fn flatten_ab_z(&self) -> EmpiricalJoint2 {
        let [da, db, dz] = self.dims;
        EmpiricalJoint2 {
            dims: [da * db, dz],
            table: self.table.clone(),
        }
    }

    pub fn smoothed(&self, eps: f64) -> Self {
        if eps == 0.0 {
            return self.clone();
        }
        EmpiricalJoint3 {
            dims: self.dims,
            table: smooth(&self.table, eps),
        }
    }
}

/// Posteriors of the fused head and of every unimodal head, with labels.
#[derive(Clone, Debug)]
pub struct PosteriorBatch {
    fused: Tensor,
    unimodal: Vec<Tensor>,
    labels: Vec<usize>,
}

pub(crate) fn check_posteriors(p: &Tensor, what: &str) -> Result<()> {
    for (s, row) in p.rows_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "{what}: row {s} has a negative or non-finite entry"
            )));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("{what}: row {s} sums to {total}")));
        }
    }
    Ok(())
}

impl PosteriorBatch {
    pub fn new(fused: Tensor, unimodal: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        let [n, c] = fused.shape();
        if unimodal.is_empty() {
            return Err(Error::arg("posterior batch needs at least one modality"));
        }
        if labels.len() != n {
            return Err(Error::arg(format!("{} labels for {n} samples", labels.len())));
        }
        check_posteriors(&fused, "fused posteriors")?;
        for (i, u) in unimodal.iter().enumerate() {
            if u.shape() != [n, c] {
                return Err(Error::arg(format!(
                    "modality {i} posteriors are {:?}, expected {n}x{c}",
                    u.shape()
                )));
            }
            check_posteriors(u, "unimodal posteriors")?;
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::arg(format!("label {y} outside [0, {c})")));
        }
        Ok(PosteriorBatch {
            fused,
            unimodal,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.fused.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> usize {
        self.fused.cols()
    }

    pub fn modalities(&self) -> usize {
        self.unimodal.len()
    }

    pub fn fused(&self) -> &Tensor {
        &self.fused
    }

    pub fn unimodal(&self) -> &[Tensor] {
        &self.unimodal
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Probability the fused head assigns to the true label of sample `s`.
    pub fn p_true_fused(&self, s: usize) -> f64 {
        self.fused.get(s, self.labels[s])
    }

    /// Probability modality `j`'s head assigns to the true label of sample `s`.
    pub fn p_true_unimodal(&self, s: usize, j: usize) -> f64 {
        self.unimodal[j].get(s, self.labels[s])
    }
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "posterior shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `table[a][b] = (1/n) Σ_s p_a[s][a] · p_b[s][b]`.
pub fn soft_joint2(p_a: &Tensor, p_b: &Tensor) -> Result<EmpiricalJoint2> {
    check_pair(p_a, p_b)?;
    check_posteriors(p_a, "p_a")?;
    check_posteriors(p_b, "p_b")?;
    let [n, c] = p_a.shape();
    let mut table = vec![0.0; c * c];
    for (ra, rb) in p_a.rows_iter().zip(p_b.rows_iter()) {
        for (a, &pa) in ra.iter().enumerate() {
            for (b, &pb) in rb.iter().enumerate() {
                table[a * c + b] += pa * pb;
            }
        }
    }
    // divide, so one-hot inputs reproduce count / n exactly
    table.iter_mut().for_each(|v| *v /= n as f64);
    EmpiricalJoint2::new(c, c, table)
}

/// `table[a][b][z] = (1/n) Σ_s p_a[s][a] · p_b[s][b] · p_z[s][z]`.
pub fn soft_joint3(p_a: &Tensor, p_b: &Tensor, p_z: &Tensor) -> Result<EmpiricalJoint3> {
    check_pair(p_a, p_b)?;
    check_pair(p_a, p_z)?;
    for (p, what) in [(p_a, "p_a"), (p_b, "p_b"), (p_z, "p_z")] {
        check_posteriors(p, what)?;
    }
    let [n, c] = p_a.shape();
    let mut table = vec![0.0; c * c * c];
    for s in 0..n {
        let (ra, rb, rz) = (p_a.row(s), p_b.row(s), p_z.row(s));
        for (a, &pa) in ra.iter().enumerate() {
            for (b, &pb) in rb.iter().enumerate() {
                let pab = pa * pb;
                for (z, &pz) in rz.iter().enumerate() {
                    table[(a * c + b) * c + z] += pab * pz;
                }
            }
        }
    }
    table.iter_mut().for_each(|v| *v /= n as f64);
    EmpiricalJoint3::new([c, c, c], table)
}

/// Co-occurrence frequencies of two label sequences.
pub fn hard_joint2(labels_a: &[usize], labels_b: &[usize], classes: usize) -> Result<EmpiricalJoint2> {
    if labels_a.len() != labels_b.len() || labels_a.is_empty() {
        return Err(Error::arg(format!(
            "label sequences of length {} and {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    let mut counts = vec![0usize; classes * classes];
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        if a >= classes || b >= classes {
            return Err(Error::arg(format!("label pair ({a}, {b}) outside [0, {classes})")));
        }
        counts[a * classes + b] += 1;
    }
    let n = labels_a.len() as f64;
    EmpiricalJoint2::new(classes, classes, counts.into_iter().map(|k| k as f64 / n).collect())
}

/// `−Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::arg("entropy of an empty distribution"));
    }
    check_mass(dist, "distribution")?;
    Ok(entropy_of(dist))
}

fn entropy_of(dist: &[f64]) -> f64 {
    -dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn mutual_information(j: &EmpiricalJoint2) -> f64 {
    let (pa, pb) = (j.marginal_a(), j.marginal_b());
    let mut mi = 0.0;
    for (a, &qa) in pa.iter().enumerate() {
        for (b, &qb) in pb.iter().enumerate() {
            let p = j.get(a, b);
            if p > 0.0 {
                mi += p * (p / (qa * qb)).ln();
            }
        }
    }
    mi
}

/// `I(A;B) / sqrt(H(A) H(B))`; zero when either entropy is degenerate.
pub fn normalized_mi(j: &EmpiricalJoint2) -> f64 {
    let ha = entropy_of(&j.marginal_a());
    let hb = entropy_of(&j.marginal_b());
    if ha < ZERO_ENTROPY || hb < ZERO_ENTROPY {
        return 0.0;
    }
    mutual_information(j) / (ha * hb).sqrt()
}

/// `H(X | Z)` for a joint laid out as `X × Z`.
fn conditional_entropy(xz: &EmpiricalJoint2) -> f64 {
    let pz = xz.marginal_b();
    let [dx, dz] = xz.dims();
    let mut h = 0.0;
    for x in 0..dx {
        for (z, &qz) in pz.iter().enumerate().take(dz) {
            let p = xz.get(x, z);
            if p > 0.0 {
                h -= p * (p / qz).ln();
            }
        }
    }
    h
}

pub fn conditional_mi(j: &EmpiricalJoint3) -> f64 {
    let [da, db, _] = j.dims();
    let (az, bz) = (j.marginal_az(), j.marginal_bz());
    let pz = az.marginal_b();
    let mut cmi = 0.0;
    for a in 0..da {
        for b in 0..db {
            for (z, &qz) in pz.iter().enumerate() {
                let p = j.get(a, b, z);
                if p > 0.0 {
                    cmi += p * (p * qz / (az.get(a, z) * bz.get(b, z))).ln();
                }
            }
        }
    }
    cmi
}

/// `I(A;B|Z) / sqrt(H(A|Z) H(B|Z))`; zero when either conditional entropy
/// is degenerate.
pub fn normalized_cmi(j: &EmpiricalJoint3) -> f64 {
    let ha = conditional_entropy(&j.marginal_az());
    let hb = conditional_entropy(&j.marginal_bz());
    if ha < ZERO_ENTROPY || hb < ZERO_ENTROPY {
        return 0.0;
    }
    conditional_mi(j) / (ha * hb).sqrt()
}

/// Interaction information of modality `j` on modality `i` w.r.t. the fused
/// prediction: `NMI(Y; j) − NCMI(Y; j | i)`. Negative values mean synergy.
pub fn interaction_information(nmi_jb: f64, ncmi_jb_given_i: f64) -> f64 {
    nmi_jb - ncmi_jb_given_i
}

/// Value of a class-specific information measure, with a flag set when the
/// target class carries no probability mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassInformation {
    pub value: f64,
    pub degenerate: bool,
}

impl ClassInformation {
    fn degenerate() -> Self {
        ClassInformation {
            value: 0.0,
            degenerate: true,
        }
    }
}

/// `I(Ŷ = y; X) = Σ_x P(x|y) ln[P(y|x) / P(y)]` for a joint laid out as
/// `X × Ŷ`.
pub fn pointwise_positive_mi(j: &EmpiricalJoint2, y: usize) -> Result<ClassInformation> {
    let [dx, dy] = j.dims();
    if y >= dy {
        return Err(Error::arg(format!("class {y} outside [0, {dy})")));
    }
    let py = j.marginal_b()[y];
    if py <= 0.0 {
        return Ok(ClassInformation::degenerate());
    }
    let px = j.marginal_a();
    let mut value = 0.0;
    for (x, &qx) in px.iter().enumerate().take(dx) {
        let pxy = j.get(x, y);
        if pxy > 0.0 {
            value += (pxy / py) * (pxy / (qx * py)).ln();
        }
    }
    Ok(ClassInformation {
        value,
        degenerate: false,
    })
}

/// Gain in class-specific information from adding `C` to `B`:
/// `I(Y=y; B,C) − I(Y=y; B)` for a joint laid out as `B × C × Y`.
///
/// This equals `E_B KL[P(c | b, y) ‖ P(c | b)]` and is never negative, so no
/// modality can be dropped without losing information about the true class.
pub fn monotone_gain_check(j: &EmpiricalJoint3, y: usize) -> Result<ClassInformation> {
    let with_c = pointwise_positive_mi(&j.flatten_ab_z(), y)?;
    if with_c.degenerate {
        return Ok(with_c);
    }
    // (B, C, Y) with C summed out
    let without_c = pointwise_positive_mi(&j.marginal_az(), y)?;
    Ok(ClassInformation {
        value: with_c.value - without_c.value,
        degenerate: false,
    })
}
