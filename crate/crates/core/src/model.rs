//! Late-fusion multimodal classifier with per-modality probe heads.
//!
//! Each modality has a one-layer ReLU encoder. The fused head reads the
//! concatenation of the encoder features, each scaled by its fusion weight.
//! Probe heads read detached features, so their loss trains only the probes.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reinforcement::one_hot;
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities are floored here before taking logs in the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

const CHECKPOINT_FORMAT: &str = "arm-checkpoint/1";

/// Weight `in×out` and bias `1×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let weight = Tensor::new(fan_in, fan_out, draw(fan_in * fan_out)).expect("positive dims");
        let bias = Tensor::new(1, fan_out, draw(fan_out)).expect("positive dims");
        Linear { weight, bias }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }
}

/// Network hyper-shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dims: Vec<usize>,
    pub hidden_dim: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() || self.input_dims.contains(&0) {
            return Err(Error::arg(format!("invalid input dims {:?}", self.input_dims)));
        }
        if self.hidden_dim == 0 {
            return Err(Error::arg("hidden dim must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::arg(format!("need at least 2 classes, got {}", self.classes)));
        }
        Ok(())
    }

    pub fn modalities(&self) -> usize {
        self.input_dims.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalNet {
    arch: Architecture,
    encoders: Vec<Linear>,
    head: Linear,
    probes: Vec<Linear>,
}

impl MultimodalNet {
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let h = arch.hidden_dim;
        let encoders = arch.input_dims.iter().map(|&d| Linear::init(d, h, rng)).collect();
        let head = Linear::init(h * arch.modalities(), arch.classes, rng);
        let probes = (0..arch.modalities())
            .map(|_| Linear::init(h, arch.classes, rng))
            .collect();
        Ok(MultimodalNet {
            arch,
            encoders,
            head,
            probes,
        })
    }

    /// All parameters zero; every posterior is uniform.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let h = arch.hidden_dim;
        Ok(MultimodalNet {
            encoders: arch.input_dims.iter().map(|&d| Linear::zeros(d, h)).collect(),
            head: Linear::zeros(h * arch.modalities(), arch.classes),
            probes: (0..arch.modalities()).map(|_| Linear::zeros(h, arch.classes)).collect(),
            arch,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn modalities(&self) -> usize {
        self.arch.modalities()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn encoders(&self) -> &[Linear] {
        &self.encoders
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn probes(&self) -> &[Linear] {
        &self.probes
    }

    /// Parameters in a fixed order with stable names.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.encoders.iter().enumerate() {
            out.push((format!("encoder{i}.weight"), &l.weight));
            out.push((format!("encoder{i}.bias"), &l.bias));
        }
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        for (i, l) in self.probes.iter().enumerate() {
            out.push((format!("probe{i}.weight"), &l.weight));
            out.push((format!("probe{i}.bias"), &l.bias));
        }
        out
    }

    /// Mutable parameters in the order of [`MultimodalNet::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.encoders {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        for l in &mut self.probes {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Registers every parameter on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundNet<'t> {
        let bind = |l: &Linear| (tape.param(&l.weight), tape.param(&l.bias));
        BoundNet {
            encoders: self.encoders.iter().map(bind).collect(),
            head: bind(&self.head),
            probes: self.probes.iter().map(bind).collect(),
            arch: self.arch.clone(),
        }
    }

    /// Untracked forward pass: fused posteriors and one posterior matrix per
    /// probe head.
    pub fn predict(&self, inputs: &[Tensor], weights: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let tape = Tape::new();
        let bound = self.bind(&tape);
        let x: Vec<_> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let out = bound.forward(&x, weights, None)?;
        Ok((out.fused.value(), out.unimodal.iter().map(|v| v.value()).collect()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape(),
                values: t.data().to_vec(),
            })
            .collect();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            architecture: self.arch.clone(),
            tensors,
        };
        fs::write(path, serde_json::to_string(&ck)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Schema(format!("unknown checkpoint format `{}`", ck.format)));
        }
        let mut net = MultimodalNet::zeros(ck.architecture)?;
        let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} tensors, expected {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        for ((name, slot), stored) in names.iter().zip(net.params_mut()).zip(ck.tensors) {
            if *name != stored.name || slot.shape() != stored.shape {
                return Err(Error::Schema(format!(
                    "expected `{name}` {:?}, found `{}` {:?}",
                    slot.shape(),
                    stored.name,
                    stored.shape
                )));
            }
            *slot = Tensor::new(stored.shape[0], stored.shape[1], stored.values)?;
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    architecture: Architecture,
    tensors: Vec<NamedTensor>,
}

/// Parameters registered on a tape.
pub struct BoundNet<'t> {
    encoders: Vec<(Var<'t>, Var<'t>)>,
    head: (Var<'t>, Var<'t>),
    probes: Vec<(Var<'t>, Var<'t>)>,
    arch: Architecture,
}

/// Outputs of one forward pass.
pub struct Forward<'t> {
    pub features: Vec<Var<'t>>,
    pub fused: Var<'t>,
    pub unimodal: Vec<Var<'t>>,
}

fn affine<'t>(x: Var<'t>, (w, b): (Var<'t>, Var<'t>)) -> Result<Var<'t>> {
    x.matmul(w)?.add(b)
}

impl<'t> BoundNet<'t> {
    /// Parameter vars in the order of [`MultimodalNet::params`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for &(w, b) in &self.encoders {
            out.extend([w, b]);
        }
        out.extend([self.head.0, self.head.1]);
        for &(w, b) in &self.probes {
            out.extend([w, b]);
        }
        out
    }

    /// Per-modality features `relu(x W + b)`, each `n×hidden`.
    pub fn encode_all(&self, inputs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        if inputs.len() != self.encoders.len() {
            return Err(Error::arg(format!(
                "{} modality inputs for {} encoders",
                inputs.len(),
                self.encoders.len()
            )));
        }
        let n = inputs[0].shape()[0];
        inputs
            .iter()
            .zip(&self.encoders)
            .enumerate()
            .map(|(i, (&x, &enc))| {
                let [rows, cols] = x.shape();
                if rows != n || cols != self.arch.input_dims[i] {
                    return Err(Error::shape(format!(
                        "modality {i} input is {rows}x{cols}, expected {n}x{}",
                        self.arch.input_dims[i]
                    )));
                }
                Ok(affine(x, enc)?.relu())
            })
            .collect()
    }

    /// Fused posteriors from features scaled by the `n×m` fusion weights.
    pub fn fuse(&self, features: &[Var<'t>], weights: &Tensor) -> Result<Var<'t>> {
        let n = features[0].shape()[0];
        if weights.shape() != [n, features.len()] {
            return Err(Error::shape(format!(
                "fusion weights are {:?}, expected {n}x{}",
                weights.shape(),
                features.len()
            )));
        }
        let tape = features[0].tape();
        let scaled = features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let column: Vec<f64> = (0..n).map(|s| weights.get(s, i)).collect();
                f.mul(tape.constant(Tensor::column_vector(column)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(affine(Var::concat_cols(&scaled)?, self.head)?.softmax())
    }

    /// Posterior of probe head `i` on `features`.
    pub fn probe(&self, i: usize, features: Var<'t>) -> Result<Var<'t>> {
        Ok(affine(features, self.probes[i])?.softmax())
    }

    /// Full forward pass. Probe heads read detached features, or
    /// `probe_features` when given (used to hold them fixed).
    pub fn forward(
        &self,
        inputs: &[Var<'t>],
        weights: &Tensor,
        probe_features: Option<&[Tensor]>,
    ) -> Result<Forward<'t>> {
        let features = self.encode_all(inputs)?;
        let fused = self.fuse(&features, weights)?;
        let probe_in: Vec<Var<'t>> = match probe_features {
            Some(fixed) => {
                if fixed.len() != features.len() {
                    return Err(Error::arg("one fixed feature matrix per modality is required"));
                }
                fixed.iter().map(|t| features[0].tape().constant(t.clone())).collect()
            }
            None => features.iter().map(|f| f.detach()).collect(),
        };
        let unimodal = probe_in
            .iter()
            .zip(&self.probes)
            .map(|(&f, &p)| Ok(affine(f, p)?.softmax()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Forward {
            features,
            fused,
            unimodal,
        })
    }
}

/// `−ln max(p[label], floor)` for one posterior.
pub fn cross_entropy(posterior: &[f64], label: usize) -> Result<f64> {
    let p = posterior
        .get(label)
        .ok_or_else(|| Error::arg(format!("label {label} outside [0, {})", posterior.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean cross-entropy of an `n×C` posterior var.
pub fn cross_entropy_loss<'t>(posteriors: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let [n, c] = posteriors.shape();
    if labels.len() != n {
        return Err(Error::arg(format!("{} labels for {n} rows", labels.len())));
    }
    let picked = posteriors
        .mul(posteriors.tape().constant(one_hot(labels, c)?))?
        .sum_rows();
    Ok(picked.log_floor(PROB_FLOOR).mean().neg())
}

/// True-class probability per row.
pub fn true_class_probs(posteriors: &Tensor, labels: &[usize]) -> Vec<f64> {
    labels.iter().enumerate().map(|(s, &y)| posteriors.get(s, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture {
            input_dims: vec![4, 3],
            hidden_dim: 5,
            classes: 3,
        }
    }

    fn inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tensor> {
        arch()
            .input_dims
            .iter()
            .map(|&d| Tensor::new(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn zero_net_gives_uniform_posteriors() {
        let net = MultimodalNet::zeros(arch()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (fused, uni) = net.predict(&inputs(&mut rng, 4), &Tensor::ones(4, 2)).unwrap();
        for v in fused.data().iter().chain(uni.iter().flat_map(|u| u.data())) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.25, 0.75], 1).unwrap() - (4f64 / 3.0).ln()).abs() < 1e-15);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!(cross_entropy(&[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = MultimodalNet::new(arch(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = MultimodalNet::new(arch(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let params = a.params();
        for pair in params.chunks(2) {
            let bound = 1.0 / (pair[0].1.rows() as f64).sqrt();
            for (name, t) in pair {
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
        assert_eq!(
            a.parameter_count(),
            4 * 5 + 5 + 3 * 5 + 5 + 10 * 3 + 3 + 2 * (5 * 3 + 3)
        );
    }

    #[test]
    fn fusion_weights_scale_features() {
        let net = MultimodalNet::new(arch(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = inputs(&mut ChaCha8Rng::seed_from_u64(3), 3);
        // zeroing a modality's weight is the same as zeroing its features
        let w = Tensor::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        let (fused, _) = net.predict(&x, &w).unwrap();
        let h = 5;
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let leaves: Vec<_> = x.iter().map(|t| tape.leaf(t)).collect();
        let feats = bound.encode_all(&leaves).unwrap();
        let mut concat = Tensor::zeros(3, 2 * h);
        let f0 = feats[0].value();
        for s in 0..3 {
            for k in 0..h {
                concat.data_mut()[s * 2 * h + k] = f0.get(s, k);
            }
        }
        let mut logits = concat.matmul(&net.head().weight).unwrap();
        for s in 0..3 {
            for c in 0..3 {
                logits.data_mut()[s * 3 + c] += net.head().bias.get(0, c);
            }
        }
        let expected = crate::tensor::softmax_rows(&logits);
        for (a, b) in fused.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn probe_loss_does_not_reach_encoders() {
        let net = MultimodalNet::new(arch(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = inputs(&mut ChaCha8Rng::seed_from_u64(5), 4);
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let leaves: Vec<_> = x.iter().map(|t| tape.leaf(t)).collect();
        let out = bound.forward(&leaves, &Tensor::ones(4, 2), None).unwrap();
        let loss = cross_entropy_loss(out.unimodal[0], &[0, 1, 2, 0]).unwrap();
        let grads = tape.backward(loss).unwrap();
        let vars = bound.vars();
        assert!(grads.wrt(vars[0]).data().iter().all(|&g| g == 0.0));
        assert!(grads.wrt(vars[6]).data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let net = MultimodalNet::new(arch(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        net.save(&path).unwrap();
        let back = MultimodalNet::load(&path).unwrap();
        assert_eq!(net, back);
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replace("encoder1.bias", "encoder1.bogus");
        fs::write(&path, text).unwrap();
        assert!(matches!(MultimodalNet::load(&path), Err(Error::Schema(_))));
    }
}
