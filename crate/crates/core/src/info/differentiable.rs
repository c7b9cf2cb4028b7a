//! Tape versions of the soft-joint estimators, NMI and NCMI.
//!
//! Values agree with the exact routines in the parent module up to rounding.

use super::ZERO_ENTROPY;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

fn check_pair(a: Var<'_>, b: Var<'_>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "posterior shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn smooth<'t>(joint: Var<'t>, eps: f64) -> Var<'t> {
    if eps == 0.0 {
        return joint;
    }
    let [r, c] = joint.shape();
    joint.offset(eps).scale(1.0 / (1.0 + eps * (r * c) as f64))
}

/// `C×C` soft joint `(1/n) P_aᵀ P_b`.
pub fn soft_joint2<'t>(p_a: Var<'t>, p_b: Var<'t>) -> Result<Var<'t>> {
    check_pair(p_a, p_b)?;
    let n = p_a.shape()[0] as f64;
    Ok(p_a.transpose().matmul(p_b)?.scale(1.0 / n))
}

/// Soft joint of `A` against the compound `(B, Z)`, shape `C × C²` with `z`
/// varying fastest along columns.
pub fn soft_joint3_flat<'t>(p_a: Var<'t>, p_b: Var<'t>, p_z: Var<'t>) -> Result<Var<'t>> {
    check_pair(p_a, p_b)?;
    check_pair(p_a, p_z)?;
    let [n, c] = p_a.shape();
    let tape = p_a.tape();
    let mut expand_b = Tensor::zeros(c, c * c);
    for b in 0..c {
        for z in 0..c {
            expand_b.data_mut()[b * c * c + b * c + z] = 1.0;
        }
    }
    // row s of the product holds p_b[s][b] * p_z[s][z] at column b*C + z
    let pairs = p_b
        .matmul(tape.constant(expand_b))?
        .mul(p_z.matmul(tape.constant(spread_z(c)))?)?;
    Ok(p_a.transpose().matmul(pairs)?.scale(1.0 / n as f64))
}

/// `−Σ p ln p` over every entry.
pub fn entropy(p: Var<'_>) -> Var<'_> {
    p.mul(p.log()).expect("same shape").sum().neg()
}

/// `Σ p ln(num / den)`, written as a single sum so that nearly independent
/// variables do not lose precision to cancellation.
fn sum_p_log_ratio<'t>(p: Var<'t>, num: Var<'t>, den: Var<'t>) -> Result<Var<'t>> {
    Ok(p.mul(num.div(den)?.log())?.sum())
}

/// `C×C²` selector spreading a `z` column onto every `(b, z)` column.
fn spread_z(c: usize) -> Tensor {
    let mut t = Tensor::zeros(c, c * c);
    for b in 0..c {
        for z in 0..c {
            t.data_mut()[z * c * c + b * c + z] = 1.0;
        }
    }
    t
}

/// NMI between two posterior matrices (`n×C` each), as a `1×1` var.
pub fn normalized_mi<'t>(p_a: Var<'t>, p_b: Var<'t>, smoothing: f64) -> Result<Var<'t>> {
    let joint = smooth(soft_joint2(p_a, p_b)?, smoothing);
    let (pa, pb) = (joint.sum_rows(), joint.sum_cols());
    let h_a = entropy(pa);
    let h_b = entropy(pb);
    if h_a.scalar() < ZERO_ENTROPY || h_b.scalar() < ZERO_ENTROPY {
        return Ok(p_a.tape().scalar(0.0));
    }
    let mi = sum_p_log_ratio(joint, joint, pa.matmul(pb)?)?;
    mi.div(h_a.mul(h_b)?.sqrt())
}

/// NCMI `I(A;B|Z) / sqrt(H(A|Z) H(B|Z))` from three posterior matrices.
pub fn normalized_cmi<'t>(p_a: Var<'t>, p_b: Var<'t>, p_z: Var<'t>, smoothing: f64) -> Result<Var<'t>> {
    let c = p_a.shape()[1];
    let tape = p_a.tape();
    let joint = soft_joint3_flat(p_a, p_b, p_z)?;
    let joint = if smoothing == 0.0 {
        joint
    } else {
        joint
            .offset(smoothing)
            .scale(1.0 / (1.0 + smoothing * (c * c * c) as f64))
    };
    let mut sum_b = Tensor::zeros(c * c, c);
    for b in 0..c {
        for z in 0..c {
            sum_b.data_mut()[(b * c + z) * c + z] = 1.0;
        }
    }
    let spread = tape.constant(spread_z(c));
    let az = joint.matmul(tape.constant(sum_b))?;
    let bz = joint.sum_cols();
    let z = az.sum_cols();
    let z_spread = z.matmul(spread)?;

    let h_a_given_z = sum_p_log_ratio(az, az, z)?.neg();
    let h_b_given_z = sum_p_log_ratio(bz, bz, z_spread)?.neg();
    if h_a_given_z.scalar() < ZERO_ENTROPY || h_b_given_z.scalar() < ZERO_ENTROPY {
        return Ok(tape.scalar(0.0));
    }
    // p(a,b,z) p(z) / (p(a,z) p(b,z)), laid out like the joint
    let cmi = sum_p_log_ratio(joint, joint.mul(z_spread)?, az.matmul(spread)?.mul(bz)?)?;
    cmi.div(h_a_given_z.mul(h_b_given_z)?.sqrt())
}
