//! Nested-loop reference implementations, written independently of the
//! library kernels.

use caanet::condition::{expand_onehot, inject, DeviceOneHot, LayerConv};
use caanet::poolheads::{attend, global_avg, global_max, roi_pool};
use caanet::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::random_tensor;

pub fn conv_same(x: &Tensor<f64>, k: &Tensor<f64>, b: &[f64], dilation: usize) -> Tensor<f64> {
    let (ci, h, w) = x.dims3().unwrap();
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ph, pw) = (dilation * (kh - 1) / 2, dilation * (kw - 1) / 2);
    let mut out = Tensor::zeros(&[co, h, w]);
    for o in 0..co {
        for p in 0..h {
            for q in 0..w {
                let mut acc = b[o];
                for c in 0..ci {
                    for i in 0..kh {
                        for j in 0..kw {
                            let y = p as isize + (i * dilation) as isize - ph as isize;
                            let z = q as isize + (j * dilation) as isize - pw as isize;
                            if y >= 0 && z >= 0 && (y as usize) < h && (z as usize) < w {
                                acc += k.at(&[o, c, i, j]) * x.at(&[c, y as usize, z as usize]);
                            }
                        }
                    }
                }
                out.set(&[o, p, q], acc);
            }
        }
    }
    out
}

pub fn max_oracle(m: &Tensor<f64>) -> Vec<f64> {
    let (h, p, q) = m.dims3().unwrap();
    (0..h)
        .map(|c| {
            let mut best = f64::NEG_INFINITY;
            for i in 0..p {
                for j in 0..q {
                    best = best.max(m.at(&[c, i, j]));
                }
            }
            best
        })
        .collect()
}

pub fn avg_oracle(m: &Tensor<f64>) -> Vec<f64> {
    let (h, p, q) = m.dims3().unwrap();
    (0..h)
        .map(|c| {
            let mut s = 0.0;
            for i in 0..p {
                for j in 0..q {
                    s += m.at(&[c, i, j]);
                }
            }
            s / (p * q) as f64
        })
        .collect()
}

pub fn roi_oracle(m: &Tensor<f64>, block: usize) -> Tensor<f64> {
    let (h, p, q) = m.dims3().unwrap();
    let mut out = Tensor::full(&[h, p / block, q / block], f64::NEG_INFINITY);
    for c in 0..h {
        for i in 0..p {
            for j in 0..q {
                let idx = [c, i / block, j / block];
                out.set(&idx, out.at(&idx).max(m.at(&[c, i, j])));
            }
        }
    }
    out
}

/// `(A', Y)` from classification and attention logits, both `K×P×Q`.
pub fn attention_oracle(cls: &Tensor<f64>, att: &Tensor<f64>) -> (Tensor<f64>, Vec<f64>) {
    let (k, p, q) = cls.dims3().unwrap();
    let mut c = Tensor::zeros(&[k, p, q]);
    for i in 0..p {
        for j in 0..q {
            let z: f64 = (0..k).map(|n| cls.at(&[n, i, j]).exp()).sum();
            for n in 0..k {
                c.set(&[n, i, j], cls.at(&[n, i, j]).exp() / z);
            }
        }
    }
    let mut a_norm = Tensor::zeros(&[k, p, q]);
    let mut y = vec![0.0; k];
    for n in 0..k {
        let mut total = 0.0;
        for i in 0..p {
            for j in 0..q {
                total += 1.0 / (1.0 + (-att.at(&[n, i, j])).exp());
            }
        }
        for i in 0..p {
            for j in 0..q {
                let a = 1.0 / (1.0 + (-att.at(&[n, i, j])).exp()) / total;
                a_norm.set(&[n, i, j], a);
                y[n] += a * c.at(&[n, i, j]);
            }
        }
    }
    (a_norm, y)
}

/// Conditioned layer output using the one-hot structure: the injected term is
/// column `device` of the injector broadcast over the plane.
pub fn inject_oracle(
    m: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &[f64],
    dilation: usize,
    v: &Tensor<f64>,
    vb: &[f64],
    device: usize,
) -> Tensor<f64> {
    let z = conv_same(m, w, b, dilation);
    let (co, h, wd) = z.dims3().unwrap();
    let mut out = z.clone();
    for o in 0..co {
        for p in 0..h {
            for q in 0..wd {
                let s = z.at(&[o, p, q]) + v.at(&[o, device, 0, 0]) + vb[o];
                out.set(&[o, p, q], s.max(0.0));
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst absolute deviation from the oracles over random instances.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleReport {
    pub instances: usize,
    pub global_max: f64,
    pub global_avg: f64,
    pub attention_norm: f64,
    pub attention_pred: f64,
    pub injection: f64,
}

impl OracleReport {
    pub fn worst(&self) -> f64 {
        [self.global_max, self.global_avg, self.attention_norm, self.attention_pred, self.injection]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Random instances with shapes up to 4×16×20.
pub fn run_loop_oracles(instances: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = OracleReport {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let (h, p, q) = (rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=20));
        let m = random_tensor(&[h, p, q], 3.0, &mut rng);
        let mut tape = Tape::new();
        let mv = tape.constant(m.clone());
        let gm = global_max(&mut tape, mv).unwrap();
        r.global_max = r.global_max.max(max_diff(tape.value(gm).data(), &max_oracle(&m)));
        let ga = global_avg(&mut tape, mv).unwrap();
        r.global_avg = r.global_avg.max(max_diff(tape.value(ga).data(), &avg_oracle(&m)));

        let cls = random_tensor(&[h, p, q], 3.0, &mut rng);
        let att = random_tensor(&[h, p, q], 3.0, &mut rng);
        let (cv, av) = (tape.constant(cls.clone()), tape.constant(att.clone()));
        let (y, a) = attend(&mut tape, cv, av).unwrap();
        let (a_ref, y_ref) = attention_oracle(&cls, &att);
        r.attention_norm = r.attention_norm.max(max_diff(tape.value(a).data(), a_ref.data()));
        r.attention_pred = r.attention_pred.max(max_diff(tape.value(y).data(), &y_ref));

        let (co, devices) = (rng.random_range(1..=4), rng.random_range(1..=3));
        let dilation = [1, 2, 4][rng.random_range(0..3)];
        let w = random_tensor(&[co, h, 3, 3], 1.0, &mut rng);
        let b = random_tensor(&[co], 1.0, &mut rng);
        let v = random_tensor(&[co, devices, 1, 1], 1.0, &mut rng);
        let vb = random_tensor(&[co], 1.0, &mut rng);
        let device = rng.random_range(0..devices);
        let mask = expand_onehot::<f64>(DeviceOneHot::new(device, devices).unwrap(), p, q).unwrap();
        let layer = LayerConv {
            weight: tape.constant(w.clone()),
            bias: tape.constant(b.clone()),
            dilation,
        };
        let ev = tape.constant(mask.tensor().clone());
        let (vv, vbv) = (tape.constant(v.clone()), tape.constant(vb.clone()));
        let out = inject(&mut tape, mv, ev, layer, vv, vbv).unwrap();
        let reference = inject_oracle(&m, &w, b.data(), dilation, &v, vb.data(), device);
        r.injection = r.injection.max(max_diff(tape.value(out).data(), reference.data()));
    }
    r
}

/// Checks the two attention identities on random instances: per-class sums of
/// the normalized attention, and uniform attention reducing to the spatial
/// mean of the class probabilities. Returns the two worst deviations.
pub fn run_attention_identities(instances: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum_err, mut uniform_err) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (k, p, q) = (rng.random_range(1..=10), rng.random_range(1..=16), rng.random_range(1..=20));
        let cls = random_tensor(&[k, p, q], 4.0, &mut rng);
        let att = random_tensor(&[k, p, q], 4.0, &mut rng);
        let mut tape = Tape::new();
        let (cv, av) = (tape.constant(cls.clone()), tape.constant(att));
        let (_, a) = attend(&mut tape, cv, av).unwrap();
        let a_val = tape.value(a).clone();
        for n in 0..k {
            let s: f64 = a_val.data()[n * p * q..(n + 1) * p * q].iter().sum();
            sum_err = sum_err.max((s - 1.0).abs());
        }

        let level: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let flat = Tensor::from_fn(&[k, p, q], |i| level[i / (p * q)]);
        let fv = tape.constant(flat);
        let (y, _) = attend(&mut tape, cv, fv).unwrap();
        let c = tape.softmax(cv, 0).unwrap();
        let mean = global_avg(&mut tape, c).unwrap();
        uniform_err = uniform_err.max(max_diff(tape.value(y).data(), tape.value(mean).data()));
    }
    (sum_err, uniform_err)
}

/// Block-max on random `2×32×32` maps against the oracle.
pub fn run_roi_oracle(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let m = random_tensor(&[2, 32, 32], 2.0, &mut rng);
        let mut tape = Tape::new();
        let mv = tape.constant(m.clone());
        let out = roi_pool(&mut tape, mv).unwrap();
        worst = worst.max(max_diff(tape.value(out).data(), roi_oracle(&m, 16).data()));
    }
    worst
}
