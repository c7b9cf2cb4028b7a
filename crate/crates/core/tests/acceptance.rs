//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

// oracles index like the formulas they transcribe
#![allow(clippy::needless_range_loop)]

use std::time::{Duration, Instant};

use arm_core::data::{generate_synthetic, materialize_resample, split, MultimodalDataset, SynthConfig};
use arm_core::info::{self, EmpiricalJoint2, EmpiricalJoint3, PosteriorBatch};
use arm_core::model::{Architecture, MultimodalNet};
use arm_core::reinforcement::{fusion_weights, resample_count, BalanceSettings, ResamplePlan, DEFAULT_FW_EPSILON};
use arm_core::tensor::{gradcheck, softmax_rows, Tape, Tensor, Var};
use arm_core::trainer::{
    batch_objective, epoch_seed, init_net, train, Frozen, ObjectiveSettings, RunHistory, TrainConfig,
};
use arm_core::valuation::{smooth_min, valuate, MinMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Dirichlet(1, …, 1) draw, with roughly one cell in five forced to zero.
fn dirichlet(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..len)
            .map(|_| {
                let g: f64 = Exp1.sample(rng);
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    g
                }
            })
            .collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter_mut().for_each(|x| *x /= total);
            return v;
        }
    }
}

fn xlogy(x: f64, ratio: f64) -> f64 {
    if x > 0.0 {
        x * ratio.ln()
    } else {
        0.0
    }
}

/// Brute-force MI, NMI, CMI, NCMI of a joint `p[a][b][z]`.
fn oracle(p: &[Vec<Vec<f64>>]) -> (f64, f64, f64, f64) {
    let (na, nb, nz) = (p.len(), p[0].len(), p[0][0].len());
    let pab = |a: usize, b: usize| (0..nz).map(|z| p[a][b][z]).sum::<f64>();
    let pa: Vec<f64> = (0..na).map(|a| (0..nb).map(|b| pab(a, b)).sum()).collect();
    let pb: Vec<f64> = (0..nb).map(|b| (0..na).map(|a| pab(a, b)).sum()).collect();
    let pz: Vec<f64> = (0..nz)
        .map(|z| (0..na).map(|a| (0..nb).map(|b| p[a][b][z]).sum::<f64>()).sum())
        .collect();
    let h = |d: &[f64]| -d.iter().map(|&x| xlogy(x, x)).sum::<f64>();

    let mut mi = 0.0;
    for a in 0..na {
        for b in 0..nb {
            let j = pab(a, b);
            if j > 0.0 {
                mi += j * (j / (pa[a] * pb[b])).ln();
            }
        }
    }
    let (ha, hb) = (h(&pa), h(&pb));
    let nmi = if ha < 1e-12 || hb < 1e-12 {
        0.0
    } else {
        mi / (ha * hb).sqrt()
    };

    // CMI as Σ_z p(z) · KL(p(a,b|z) ‖ p(a|z) p(b|z))
    let mut cmi = 0.0;
    let (mut ha_z, mut hb_z) = (0.0, 0.0);
    for z in 0..nz {
        if pz[z] == 0.0 {
            continue;
        }
        let cond: Vec<Vec<f64>> = (0..na).map(|a| (0..nb).map(|b| p[a][b][z] / pz[z]).collect()).collect();
        let ca: Vec<f64> = (0..na).map(|a| cond[a].iter().sum()).collect();
        let cb: Vec<f64> = (0..nb).map(|b| (0..na).map(|a| cond[a][b]).sum()).collect();
        let mut kl = 0.0;
        for a in 0..na {
            for b in 0..nb {
                let c = cond[a][b];
                if c > 0.0 {
                    kl += c * (c / (ca[a] * cb[b])).ln();
                }
            }
        }
        cmi += pz[z] * kl;
        ha_z += pz[z] * h(&ca);
        hb_z += pz[z] * h(&cb);
    }
    let ncmi = if ha_z < 1e-12 || hb_z < 1e-12 {
        0.0
    } else {
        cmi / (ha_z * hb_z).sqrt()
    };
    (mi, nmi, cmi, ncmi)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut ranges_ok = true;
    for _ in 0..500 {
        let dims = [
            rng.random_range(2..=4),
            rng.random_range(2..=4),
            rng.random_range(2..=4),
        ];
        let flat = dirichlet(&mut rng, dims[0] * dims[1] * dims[2]);
        let nested: Vec<Vec<Vec<f64>>> = (0..dims[0])
            .map(|a| {
                (0..dims[1])
                    .map(|b| (0..dims[2]).map(|z| flat[(a * dims[1] + b) * dims[2] + z]).collect())
                    .collect()
            })
            .collect();
        let j3 = EmpiricalJoint3::new(dims, flat.clone()).unwrap();
        let j2 = j3.marginal_ab();
        let (mi, nmi, cmi, ncmi) = oracle(&nested);
        let got = [
            info::mutual_information(&j2),
            info::normalized_mi(&j2),
            info::conditional_mi(&j3),
            info::normalized_cmi(&j3),
        ];
        for (g, o) in got.iter().zip([mi, nmi, cmi, ncmi]) {
            worst = worst.max((g - o).abs());
        }
        ranges_ok &= got[0] >= -1e-12 && (0.0..=1.0 + 1e-9).contains(&got[1]) && (0.0..=1.0 + 1e-9).contains(&got[3]);

        // an independently drawn rectangular pair joint as well
        let (ra, rb) = (rng.random_range(2..=4), rng.random_range(2..=4));
        let flat2 = dirichlet(&mut rng, ra * rb);
        let pair: Vec<Vec<Vec<f64>>> = (0..ra)
            .map(|a| (0..rb).map(|b| vec![flat2[a * rb + b]]).collect())
            .collect();
        let j = EmpiricalJoint2::new(ra, rb, flat2).unwrap();
        let (mi, nmi, _, _) = oracle(&pair);
        worst = worst.max((info::mutual_information(&j) - mi).abs());
        worst = worst.max((info::normalized_mi(&j) - nmi).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && ranges_ok && elapsed < Duration::from_secs(5),
        format!("max |err| {worst:.3e}, ranges ok: {ranges_ok}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut min_gain = f64::INFINITY;
    let mut checked = 0;
    for _ in 0..1000 {
        let j = EmpiricalJoint3::new([2, 2, 2], dirichlet(&mut rng, 8)).unwrap();
        for y in 0..2 {
            let g = info::monotone_gain_check(&j, y).unwrap();
            if !g.degenerate {
                min_gain = min_gain.min(g.value);
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        min_gain >= -1e-9 && elapsed < Duration::from_secs(5),
        format!("{checked} class checks, min gain {min_gain:.3e}, {elapsed:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut violations = 0;
    let mut cases = 0;
    for _ in 0..1000 {
        let m = rng.random_range(2..=4);
        let v: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let exact = v.iter().copied().fold(f64::INFINITY, f64::min);
        for tau in [0.01, 0.1, 1.0] {
            let s = smooth_min(&v, tau).unwrap();
            cases += 1;
            if !(exact - tau * (m as f64).ln() - 1e-12 <= s && s <= exact + 1e-12) {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{cases} cases, {violations} violations"))
}

fn random_posteriors(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Tensor {
    let scale = rng.random_range(0.1..6.0);
    let logits: Vec<f64> = (0..n * c).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    softmax_rows(&Tensor::new(n, c, logits).unwrap())
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = Vec::new();
    let mut samples = 0;
    for trial in 0..1000 {
        let n = rng.random_range(2..=16);
        let c = rng.random_range(2..=4);
        let m = rng.random_range(2..=4);
        let fused = random_posteriors(&mut rng, n, c);
        let uni: Vec<Tensor> = (0..m).map(|_| random_posteriors(&mut rng, n, c)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let batch = PosteriorBatch::new(fused, uni, labels).unwrap();
        for mode in [MinMode::Exact, MinMode::smooth(0.1).unwrap()] {
            for r in valuate(&batch, mode, 0.0).unwrap() {
                samples += 1;
                let mi_ok = (0.0..=1.0).contains(&r.phi_mi_joint)
                    && r.nmi.iter().all(|&v| r.phi_mi_joint <= r.p_true_fused * v + 1e-15);
                let cmi_ok = (0.0..=m as f64).contains(&r.phi_cmi_joint)
                    && r.phi_cmi_marginal.iter().all(|&v| (0.0..=m as f64).contains(&v));
                let fw = fusion_weights(&r, 0, DEFAULT_FW_EPSILON);
                let fw_ok = (fw.weights.iter().sum::<f64>() - m as f64).abs() <= 1e-9;
                if !(mi_ok && cmi_ok && fw_ok) && failures.len() < 3 {
                    failures.push(format!("trial {trial}: mi {mi_ok} cmi {cmi_ok} fw {fw_ok}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("1000 batches, {samples} sample reports checked {failures:?}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let arch = Architecture {
        input_dims: vec![5, 4],
        hidden_dim: 8,
        classes: 3,
    };
    let mut net = MultimodalNet::new(arch.clone(), &mut rng).unwrap();
    // At the default init every posterior is close to uniform, the NMI terms
    // are ~1e-5 and the gap loss is a ratio of two such numbers, so finite
    // differences drown in rounding. Scaling the weights gives informative
    // posteriors.
    for p in net.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    }
    let n = 8;
    let inputs: Vec<Tensor> = arch
        .input_dims
        .iter()
        .map(|&d| Tensor::new(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap())
        .collect();
    let labels: Vec<usize> = (0..n).map(|s| s % 3).collect();
    let mut weights = Tensor::ones(n, 2);
    for s in 0..n {
        let w = rng.random_range(0.5..1.5);
        weights.data_mut()[2 * s] = w;
        weights.data_mut()[2 * s + 1] = 2.0 - w;
    }
    let settings = ObjectiveSettings {
        lambda1: 1.0,
        lambda2: 1.0,
        probe_weight: 0.0,
        balance: BalanceSettings {
            tau: 0.1,
            smoothing: 0.0,
            epsilon: DEFAULT_FW_EPSILON,
        },
    };
    let frozen = Frozen::capture(&net, &inputs, &labels, &weights).unwrap();
    let objective = |net: &MultimodalNet| -> f64 {
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let x: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
        batch_objective(&bound, &x, &labels, &weights, &settings, Some(&frozen))
            .unwrap()
            .total
            .scalar()
    };

    let tape = Tape::new();
    let bound = net.bind(&tape);
    let x: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let obj = batch_objective(&bound, &x, &labels, &weights, &settings, Some(&frozen)).unwrap();
    let grads = tape.backward(obj.total).unwrap();
    let analytic: Vec<Tensor> = bound.vars().into_iter().map(|v| grads.wrt(v)).collect();

    let mut report = gradcheck::GradReport::default();
    for (k, a) in analytic.iter().enumerate() {
        let base = net.params()[k].1.data().to_vec();
        let numeric = gradcheck::central_difference(&base, 1e-5, |p| {
            net.params_mut()[k].data_mut().copy_from_slice(p);
            let v = objective(&net);
            net.params_mut()[k].data_mut().copy_from_slice(&base);
            v
        });
        report.merge(&gradcheck::compare(a.data(), &numeric, 1e-4, 1e-8));
    }
    let fraction = report.pass_fraction();
    outcome(
        fraction >= 0.99,
        format!(
            "{} coordinates, {} failures, {} negligible, max rel err {:.3e}, pass {:.2}%",
            report.checked,
            report.failures,
            report.negligible,
            report.max_rel_error,
            100.0 * fraction
        ),
    )
}

fn fixture_split() -> (MultimodalDataset, MultimodalDataset) {
    let cfg = SynthConfig::fixture();
    split(&generate_synthetic(&cfg).unwrap(), 0.8, cfg.seed).unwrap()
}

/// Concatenation baseline with hand-written gradients: one step per batch,
/// returning the per-step mean cross-entropy.
struct BaselineLoop {
    enc_w: Vec<Vec<f64>>,
    enc_b: Vec<Vec<f64>>,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
    vel: Vec<Vec<f64>>,
    dims: Vec<usize>,
    h: usize,
    c: usize,
}

impl BaselineLoop {
    fn from_net(net: &MultimodalNet) -> Self {
        let params: Vec<&[f64]> = net
            .encoders()
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.data()])
            .collect();
        let dims: Vec<usize> = net.architecture().input_dims.clone();
        let enc_w = params.iter().step_by(2).map(|p| p.to_vec()).collect::<Vec<_>>();
        let enc_b = params.iter().skip(1).step_by(2).map(|p| p.to_vec()).collect::<Vec<_>>();
        let head_w = net.head().weight.data().to_vec();
        let head_b = net.head().bias.data().to_vec();
        let mut vel = Vec::new();
        for (w, b) in enc_w.iter().zip(&enc_b) {
            vel.push(vec![0.0; w.len()]);
            vel.push(vec![0.0; b.len()]);
        }
        vel.push(vec![0.0; head_w.len()]);
        vel.push(vec![0.0; head_b.len()]);
        BaselineLoop {
            enc_w,
            enc_b,
            head_w,
            head_b,
            vel,
            dims,
            h: net.architecture().hidden_dim,
            c: net.classes(),
        }
    }

    fn step(&mut self, xs: &[Vec<Vec<f64>>], labels: &[usize], lr: f64, mu: f64, wd: f64) -> f64 {
        let (h, c, m, n) = (self.h, self.c, self.dims.len(), labels.len());
        // forward
        let mut feats = vec![vec![0.0; m * h]; n];
        for s in 0..n {
            for i in 0..m {
                for k in 0..h {
                    let mut pre = self.enc_b[i][k];
                    for d in 0..self.dims[i] {
                        pre += xs[i][s][d] * self.enc_w[i][d * h + k];
                    }
                    feats[s][i * h + k] = pre.max(0.0);
                }
            }
        }
        let mut probs = vec![vec![0.0; c]; n];
        let mut loss = 0.0;
        for s in 0..n {
            let logits: Vec<f64> = (0..c)
                .map(|j| self.head_b[j] + (0..m * h).map(|q| feats[s][q] * self.head_w[q * c + j]).sum::<f64>())
                .collect();
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            probs[s] = e.iter().map(|v| v / z).collect();
            loss -= probs[s][labels[s]].max(1e-12).ln();
        }
        loss /= n as f64;

        // backward
        let mut g_head_w = vec![0.0; m * h * c];
        let mut g_head_b = vec![0.0; c];
        let mut g_enc_w: Vec<Vec<f64>> = self.enc_w.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut g_enc_b: Vec<Vec<f64>> = self.enc_b.iter().map(|b| vec![0.0; b.len()]).collect();
        for s in 0..n {
            let dz: Vec<f64> = (0..c)
                .map(|j| (probs[s][j] - if j == labels[s] { 1.0 } else { 0.0 }) / n as f64)
                .collect();
            for j in 0..c {
                g_head_b[j] += dz[j];
                for q in 0..m * h {
                    g_head_w[q * c + j] += feats[s][q] * dz[j];
                }
            }
            for i in 0..m {
                for k in 0..h {
                    let q = i * h + k;
                    if feats[s][q] <= 0.0 {
                        continue;
                    }
                    let df: f64 = (0..c).map(|j| self.head_w[q * c + j] * dz[j]).sum();
                    g_enc_b[i][k] += df;
                    for d in 0..self.dims[i] {
                        g_enc_w[i][d * h + k] += xs[i][s][d] * df;
                    }
                }
            }
        }

        // SGD with momentum and weight decay
        let mut slot = 0;
        let update = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
            for ((pv, gv), vv) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vv = mu * *vv + (gv + wd * *pv);
                *pv -= lr * *vv;
            }
        };
        for i in 0..m {
            update(&mut self.enc_w[i], &g_enc_w[i], &mut self.vel[slot]);
            update(&mut self.enc_b[i], &g_enc_b[i], &mut self.vel[slot + 1]);
            slot += 2;
        }
        update(&mut self.head_w, &g_head_w, &mut self.vel[slot]);
        update(&mut self.head_b, &g_head_b, &mut self.vel[slot + 1]);
        loss
    }
}

fn criterion_6() -> Outcome {
    let (tr, _) = fixture_split();
    let cfg = TrainConfig {
        epochs: 3,
        warmup: 0,
        seed: 11,
        ..TrainConfig::baseline()
    };
    let (_, history) = train(&cfg, &tr, None).unwrap();

    let mut oracle = BaselineLoop::from_net(&init_net(&cfg, &tr).unwrap());
    let rows_of = |rows: &[usize], i: usize| -> Vec<Vec<f64>> {
        rows.iter().map(|&r| tr.features()[i].row(r).to_vec()).collect()
    };
    let mut expected = Vec::new();
    for epoch in 0..cfg.epochs {
        let order = materialize_resample(&tr, &ResamplePlan::empty(cfg.slope, 2), epoch_seed(cfg.seed, epoch)).unwrap();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let xs: Vec<Vec<Vec<f64>>> = (0..2).map(|i| rows_of(chunk, i)).collect();
            let labels: Vec<usize> = chunk.iter().map(|&r| tr.labels()[r]).collect();
            expected.push(oracle.step(&xs, &labels, cfg.learning_rate, cfg.momentum, cfg.weight_decay));
        }
    }
    let got: Vec<f64> = history
        .records
        .iter()
        .flat_map(|r| r.step_losses.iter().copied())
        .collect();
    let worst = got
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    outcome(
        got.len() == expected.len() && worst <= 1e-12,
        format!(
            "{} steps vs {} oracle steps, max |diff| {worst:.3e}",
            got.len(),
            expected.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut bad = Vec::new();
    for k in [-0.5, -1.0, -2.0, -3.0] {
        let counts: Vec<u32> = (0..50)
            .map(|i| resample_count(2.0 * i as f64 / 49.0, k, 2).unwrap())
            .collect();
        let monotone = counts.windows(2).all(|w| w[0] >= w[1]);
        if !monotone || counts[49] != 0 {
            bad.push(k);
        }
    }
    outcome(bad.is_empty(), format!("slopes failing: {bad:?}"))
}

struct PairedRun {
    seed: u64,
    arm: RunHistory,
    baseline: RunHistory,
    elapsed: Duration,
}

fn arm_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

fn baseline_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::baseline()
    }
}

fn run_pairs(seeds: &[u64]) -> Vec<PairedRun> {
    let (tr, te) = fixture_split();
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let (tr, te) = (&tr, &te);
                scope.spawn(move || {
                    let start = Instant::now();
                    let (_, arm) = train(&arm_config(seed), tr, Some(te)).unwrap();
                    let (_, baseline) = train(&baseline_config(seed), tr, Some(te)).unwrap();
                    PairedRun {
                        seed,
                        arm,
                        baseline,
                        elapsed: start.elapsed(),
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}

fn criterion_8(runs: &[PairedRun]) -> Outcome {
    let mut lower_gap = 0;
    let (mut arm_acc, mut base_acc) = (0.0, 0.0);
    let (mut arm_probe, mut base_probe) = (0.0, 0.0);
    let mut slowest = Duration::ZERO;
    for r in runs {
        let (a, b) = (r.arm.last().unwrap(), r.baseline.last().unwrap());
        if a.gap < b.gap {
            lower_gap += 1;
        }
        arm_acc += a.test_accuracy.unwrap();
        base_acc += b.test_accuracy.unwrap();
        arm_probe += a.test_probe_accuracy.as_ref().unwrap()[0];
        base_probe += b.test_probe_accuracy.as_ref().unwrap()[0];
        slowest = slowest.max(r.elapsed);
        println!(
            "    seed {}: gap {:.4} vs {:.4}, fused acc {:.4} vs {:.4}, dominant probe {:.4} vs {:.4}, {:.1?}",
            r.seed,
            a.gap,
            b.gap,
            a.test_accuracy.unwrap(),
            b.test_accuracy.unwrap(),
            a.test_probe_accuracy.as_ref().unwrap()[0],
            b.test_probe_accuracy.as_ref().unwrap()[0],
            r.elapsed
        );
    }
    let k = runs.len() as f64;
    let (arm_acc, base_acc) = (arm_acc / k, base_acc / k);
    let (arm_probe, base_probe) = (arm_probe / k, base_probe / k);
    let a = lower_gap >= 4;
    let b = arm_acc >= base_acc;
    let c = 100.0 * arm_probe >= 100.0 * base_probe - 1.0;
    let time_ok = slowest < Duration::from_secs(600);
    outcome(
        a && b && c && time_ok,
        format!(
            "(a) lower gap in {lower_gap}/5 [{a}]; (b) fused acc {arm_acc:.4} vs {base_acc:.4} [{b}]; \
             (c) dominant probe {arm_probe:.4} vs {base_probe:.4} [{c}]; slowest seed {slowest:.1?}"
        ),
    )
}

fn criterion_9(runs: &[PairedRun]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let first = &runs[0];
    let rerun = run_pairs(&[first.seed]).pop().unwrap();
    let mut identical = true;
    for (name, a, b) in [
        ("arm", &first.arm, &rerun.arm),
        ("baseline", &first.baseline, &rerun.baseline),
    ] {
        let pa = dir.path().join(format!("{name}-a.jsonl"));
        let pb = dir.path().join(format!("{name}-b.jsonl"));
        a.write_jsonl(&pa).unwrap();
        b.write_jsonl(&pb).unwrap();
        identical &= std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    }
    outcome(
        identical,
        format!(
            "seed {} ARM and baseline histories rerun byte-identical: {identical}",
            first.seed
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 information metrics match brute-force oracles", criterion_1()),
        ("2 monotone information gain", criterion_2()),
        ("3 smooth-min sandwich", criterion_3()),
        ("4 contribution ranges and fusion-weight sum", criterion_4()),
        ("5 analytic vs finite-difference gradients", criterion_5()),
        ("6 baseline equivalence with hand-written loop", criterion_6()),
        ("7 resampler law", criterion_7()),
    ];
    let runs = run_pairs(&[0, 1, 2, 3, 4]);
    results.push(("8 fixture ARM vs concatenation baseline", criterion_8(&runs)));
    results.push(("9 reproducible history files", criterion_9(&runs)));

    let mut failed = 0;
    for (name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {name}: {}", o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
