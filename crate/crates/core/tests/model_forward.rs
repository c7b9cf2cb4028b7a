use arm_core::data::{generate_synthetic, seeded_rng, split, stream, ModalitySpec, SynthConfig};
use arm_core::model::{cross_entropy_loss, Architecture, Linear, MultimodalNet};
use arm_core::tensor::{Tape, Tensor, Var};
use arm_core::trainer::{train, TrainConfig};
use rand::Rng;

fn arch() -> Architecture {
    Architecture {
        input_dims: vec![3, 2],
        hidden_dim: 4,
        classes: 3,
    }
}

fn net() -> MultimodalNet {
    MultimodalNet::new(arch(), &mut seeded_rng(17, stream::INIT)).unwrap()
}

fn inputs(n: usize) -> Vec<Tensor> {
    let mut rng = seeded_rng(99, stream::DATA);
    arch()
        .input_dims
        .iter()
        .map(|&d| Tensor::new(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap())
        .collect()
}

fn affine(x: &[f64], l: &Linear) -> Vec<f64> {
    (0..l.weight.cols())
        .map(|o| l.bias.get(0, o) + x.iter().enumerate().map(|(k, v)| v * l.weight.get(k, o)).sum::<f64>())
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let net = net();
    let x = inputs(5);
    let w = Tensor::from_rows(&[[1.0, 1.0], [0.5, 1.5], [2.0, 0.0], [1.2, 0.8], [0.1, 1.9]]).unwrap();
    let (fused, uni) = net.predict(&x, &w).unwrap();
    for s in 0..5 {
        let feats: Vec<Vec<f64>> = x
            .iter()
            .zip(net.encoders())
            .map(|(xi, e)| affine(xi.row(s), e).into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        let concat: Vec<f64> = feats
            .iter()
            .enumerate()
            .flat_map(|(i, f)| {
                let wi = w.get(s, i);
                f.iter().map(move |v| v * wi)
            })
            .collect();
        let expect = softmax(&affine(&concat, net.head()));
        for (a, b) in fused.row(s).iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-14);
        }
        for (i, f) in feats.iter().enumerate() {
            let expect = softmax(&affine(f, &net.probes()[i]));
            for (a, b) in uni[i].row(s).iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }
}

#[test]
fn probe_loss_never_reaches_encoders() {
    let net = net();
    let x = inputs(6);
    let tape = Tape::new();
    let bound = net.bind(&tape);
    let xv: Vec<Var> = x.iter().map(|t| tape.leaf(t)).collect();
    let out = bound.forward(&xv, &Tensor::ones(6, 2), None).unwrap();
    let labels = [0, 1, 2, 0, 1, 2];
    let loss = cross_entropy_loss(out.unimodal[0], &labels)
        .unwrap()
        .add(cross_entropy_loss(out.unimodal[1], &labels).unwrap())
        .unwrap();
    let grads = tape.backward(loss).unwrap();
    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    for (name, v) in names.iter().zip(bound.vars()) {
        let g = grads.wrt(v);
        if name.starts_with("encoder") || name.starts_with("head") {
            assert!(g.data().iter().all(|&d| d == 0.0), "{name}");
        } else {
            assert!(g.data().iter().any(|&d| d != 0.0), "{name}");
        }
    }
}

#[test]
fn forward_is_deterministic_and_checkpoints_round_trip() {
    let a = net();
    let x = inputs(4);
    let w = Tensor::ones(4, 2);
    assert_eq!(a.predict(&x, &w).unwrap(), net().predict(&x, &w).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    a.save(&path).unwrap();
    let b = MultimodalNet::load(&path).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predict(&x, &w).unwrap(), b.predict(&x, &w).unwrap());
}

#[test]
fn recorded_contributions_stay_in_range() {
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
        seed: 4,
    };
    let (tr, te) = split(&generate_synthetic(&cfg).unwrap(), 0.75, 4).unwrap();
    let tc = TrainConfig {
        epochs: 5,
        warmup: 2,
        batch_size: 8,
        hidden_dim: 6,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let (_, h) = train(&tc, &tr, Some(&te)).unwrap();
    assert_eq!(h.records.len(), 5);
    for r in &h.records {
        assert!((0.0..=1.0).contains(&r.phi_mi_joint_mean));
        assert!((0.0..=2.0).contains(&r.phi_cmi_joint_mean));
        assert!(r.phi_cmi_mean.iter().all(|v| (0.0..=2.0).contains(v)));
        assert!((r.fw_mean.iter().sum::<f64>() - 2.0).abs() <= 1e-9);
        if r.warmup {
            assert!(r.fw_mean.iter().all(|&w| w == 1.0));
            assert_eq!(r.epoch_size, tr.len());
        }
    }
}
