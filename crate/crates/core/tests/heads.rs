mod common;

use caanet::condition::{expand_onehot, inject, predicted_onehot, DeviceOneHot, LayerConv};
use caanet::poolheads::{attend, classify_from_pooled, global_avg, global_max, roi_pool, AffineParams, HeadKind};
use caanet::tensor::{ParamSet, Tape, Tensor};
use common::oracles::*;
use common::random_tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

#[test]
fn loop_oracles_on_random_instances() {
    let r = run_loop_oracles(60, 17);
    assert!(r.worst() < 1e-6, "{r:?}");
    assert!(run_roi_oracle(20, 18) == 0.0);
}

#[test]
fn attention_identities() {
    let (sum_err, uniform_err) = run_attention_identities(60, 19);
    assert!(sum_err < 1e-5, "{sum_err}");
    assert!(uniform_err < 1e-6, "{uniform_err}");
}

#[test]
fn pooling_examples() {
    let mut tape = Tape::new();
    let m = tape.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 0.0]));
    let mx = global_max(&mut tape, m).unwrap();
    let av = global_avg(&mut tape, m).unwrap();
    assert_eq!(tape.value(mx).data(), &[3.0]);
    assert_eq!(tape.value(av).data(), &[1.5]);

    let mut spike = Tensor::<f64>::zeros(&[3, 5, 7]);
    spike.set(&[0, 4, 1], 10.0);
    spike.set(&[1, 0, 6], 10.0);
    spike.set(&[2, 2, 3], 10.0);
    let s = tape.constant(spike);
    let mx = global_max(&mut tape, s).unwrap();
    assert_eq!(tape.value(mx).data(), &[10.0; 3]);

    let c = tape.constant(Tensor::full(&[2, 3, 4], 0.25));
    let av = global_avg(&mut tape, c).unwrap();
    assert_eq!(tape.value(av).data(), &[0.25, 0.25]);

    let blocks = Tensor::from_fn(&[1, 32, 48], |i| ((i / 48) / 16 * 3 + (i % 48) / 16) as f64);
    let b = tape.constant(blocks);
    let r = roi_pool(&mut tape, b).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);

    let bad = tape.constant(Tensor::zeros(&[1, 20, 32]));
    assert!(roi_pool(&mut tape, bad).is_err());
}

#[test]
fn concentrated_attention_selects_one_bin() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cls = random_tensor(&[4, 5, 6], 2.0, &mut rng);
    let mut att = Tensor::full(&[4, 5, 6], -30.0);
    for k in 0..4 {
        att.set(&[k, 2, 3], 30.0);
    }
    let mut tape = Tape::new();
    let (cv, av) = (tape.constant(cls), tape.constant(att));
    let (y, _) = attend(&mut tape, cv, av).unwrap();
    let c = tape.softmax(cv, 0).unwrap();
    for k in 0..4 {
        assert!((tape.value(y).data()[k] - tape.value(c).at(&[k, 2, 3])).abs() < 1e-3);
    }
}

#[test]
fn attention_scores_lie_in_the_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let mut tape = Tape::new();
        let cv = tape.constant(random_tensor(&[10, 4, 20], 5.0, &mut rng));
        let av = tape.constant(random_tensor(&[10, 4, 20], 5.0, &mut rng));
        let (y, _) = attend(&mut tape, cv, av).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn affine_classifier() {
    let mut params = ParamSet::<f64>::new();
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.set(&[i, i], 1.0);
    }
    let affine = AffineParams {
        weight: params.push("w", eye),
        bias: params.push("b", Tensor::zeros(&[3])),
    };
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let r = tape.constant(t(&[3], &[0.0, 1.0, 0.0]));
    let s = classify_from_pooled(&mut tape, r, &affine, &bound).unwrap();
    let e = 1f64.exp();
    let expect = [1.0 / (e + 2.0), e / (e + 2.0), 1.0 / (e + 2.0)];
    for (a, b) in tape.value(s).data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12);
    }
    let wrong = tape.constant(Tensor::zeros(&[4]));
    assert!(classify_from_pooled(&mut tape, wrong, &affine, &bound).is_err());
    assert_eq!(HeadKind::Flatten.affine_inputs([512, 4, 20]).unwrap(), Some(40_960));
}

#[test]
fn onehot_and_mask_examples() {
    let m = expand_onehot::<f64>(DeviceOneHot::new(1, 3).unwrap(), 2, 3).unwrap();
    assert_eq!(m.tensor().data(), &[0.0; 6].iter().chain(&[1.0; 6]).chain(&[0.0; 6]).copied().collect::<Vec<_>>()[..]);
    let single = expand_onehot::<f64>(DeviceOneHot::new(0, 1).unwrap(), 4, 4).unwrap();
    assert!(single.tensor().data().iter().all(|&v| v == 1.0));
    let full = expand_onehot::<f32>(DeviceOneHot::new(2, 3).unwrap(), 64, 320).unwrap();
    assert_eq!(full.tensor().shape(), &[3, 64, 320]);
    assert!(expand_onehot::<f64>(DeviceOneHot::new(0, 3).unwrap(), 0, 4).is_err());
    assert!(DeviceOneHot::new(3, 3).is_err());
    assert!(DeviceOneHot::from_values(&[0.0, 1.0, 1.0]).is_err());
    assert!(DeviceOneHot::from_values(&[0.0, 0.5, 0.0]).is_err());
    assert_eq!(DeviceOneHot::from_values(&[0.0, 1.0, 0.0]).unwrap().device(), 1);

    assert_eq!(predicted_onehot(&[0.1, 2.0, -1.0]).device(), 1);
    assert_eq!(predicted_onehot(&[1.0, 1.0, 0.0]).device(), 0);
    assert_eq!(predicted_onehot(&[0.3, 0.3, 0.3]).device(), 0);
}

struct InjectCase {
    m: Tensor<f64>,
    w: Tensor<f64>,
    b: Tensor<f64>,
    v: Tensor<f64>,
    vb: Tensor<f64>,
}

impl InjectCase {
    fn random(seed: u64, devices: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        InjectCase {
            m: random_tensor(&[2, 6, 9], 1.0, &mut rng),
            w: random_tensor(&[3, 2, 3, 3], 1.0, &mut rng),
            b: random_tensor(&[3], 1.0, &mut rng),
            v: random_tensor(&[3, devices, 1, 1], 1.0, &mut rng),
            vb: random_tensor(&[3], 1.0, &mut rng),
        }
    }

    fn run(&self, v: &Tensor<f64>, onehot: DeviceOneHot) -> Tensor<f64> {
        let mut tape = Tape::new();
        let mask = expand_onehot::<f64>(onehot, 6, 9).unwrap();
        let layer = LayerConv {
            weight: tape.constant(self.w.clone()),
            bias: tape.constant(self.b.clone()),
            dilation: 2,
        };
        let mv = tape.constant(self.m.clone());
        let ev = tape.constant(mask.tensor().clone());
        let (vv, vbv) = (tape.constant(v.clone()), tape.constant(self.vb.clone()));
        let out = inject(&mut tape, mv, ev, layer, vv, vbv).unwrap();
        tape.value(out).clone()
    }
}

#[test]
fn zero_injector_reduces_to_plain_layer() {
    let mut case = InjectCase::random(5, 3);
    case.vb = Tensor::zeros(&[3]);
    let out = case.run(&Tensor::zeros(&[3, 3, 1, 1]), DeviceOneHot::new(2, 3).unwrap());
    let mut tape = Tape::new();
    let (mv, wv, bv) = (
        tape.constant(case.m.clone()),
        tape.constant(case.w.clone()),
        tape.constant(case.b.clone()),
    );
    let z = tape.conv2d(mv, wv, Some(bv), 2, caanet::tensor::Padding::Same).unwrap();
    let plain = tape.relu(z);
    assert_eq!(out.data(), tape.value(plain).data());
}

#[test]
fn zero_layer_weights_give_constant_planes() {
    let mut case = InjectCase::random(6, 3);
    case.w = Tensor::zeros(case.w.shape());
    case.b = Tensor::zeros(&[3]);
    case.vb = Tensor::zeros(&[3]);
    let out = case.run(&case.v.clone(), DeviceOneHot::new(1, 3).unwrap());
    for o in 0..3 {
        let expect = case.v.at(&[o, 1, 0, 0]).max(0.0);
        assert!(out.data()[o * 54..(o + 1) * 54].iter().all(|&x| x == expect));
    }
}

#[test]
fn injection_is_device_permutation_equivariant() {
    let case = InjectCase::random(7, 3);
    let perm = [2, 0, 1];
    let mut v_perm = case.v.clone();
    for o in 0..3 {
        for n in 0..3 {
            v_perm.set(&[o, perm[n], 0, 0], case.v.at(&[o, n, 0, 0]));
        }
    }
    for n in 0..3 {
        let a = case.run(&case.v, DeviceOneHot::new(n, 3).unwrap());
        let b = case.run(&v_perm, DeviceOneHot::new(perm[n], 3).unwrap());
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn injection_rejects_mismatched_planes() {
    let case = InjectCase::random(8, 3);
    let mut tape = Tape::new();
    let mask = expand_onehot::<f64>(DeviceOneHot::new(0, 3).unwrap(), 5, 9).unwrap();
    let layer = LayerConv {
        weight: tape.constant(case.w.clone()),
        bias: tape.constant(case.b.clone()),
        dilation: 1,
    };
    let mv = tape.constant(case.m.clone());
    let ev = tape.constant(mask.tensor().clone());
    let (vv, vbv) = (tape.constant(case.v.clone()), tape.constant(case.vb.clone()));
    assert!(matches!(inject(&mut tape, mv, ev, layer, vv, vbv), Err(caanet::Error::Shape(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn max_dominates_avg_and_roi_composes(seed in any::<u64>(), h in 1usize..4, pb in 1usize..3, qb in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_tensor(&[h, 16 * pb, 16 * qb], 5.0, &mut rng);
        let mut tape = Tape::new();
        let mv = tape.constant(m);
        let mx = global_max(&mut tape, mv).unwrap();
        let av = global_avg(&mut tape, mv).unwrap();
        for (a, b) in tape.value(mx).data().iter().zip(tape.value(av).data()) {
            prop_assert!(a >= b);
        }
        let r = roi_pool(&mut tape, mv).unwrap();
        let rm = global_max(&mut tape, r).unwrap();
        prop_assert_eq!(tape.value(rm).data(), tape.value(mx).data());
    }

    #[test]
    fn attention_rows_normalize(seed in any::<u64>(), k in 2usize..6, p in 1usize..9, q in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let cv = tape.constant(random_tensor(&[k, p, q], 6.0, &mut rng));
        let av = tape.constant(random_tensor(&[k, p, q], 6.0, &mut rng));
        let (y, a) = attend(&mut tape, cv, av).unwrap();
        for n in 0..k {
            let s: f64 = tape.value(a).data()[n * p * q..(n + 1) * p * q].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-5);
        }
        prop_assert!(tape.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn onehot_injection_is_column_broadcast(seed in any::<u64>(), devices in 1usize..5) {
        let case = InjectCase::random(seed, devices);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rand::Rng::random_range(&mut rng, 0..devices);
        let out = case.run(&case.v, DeviceOneHot::new(n, devices).unwrap());
        let reference = inject_oracle(&case.m, &case.w, case.b.data(), 2, &case.v, case.vb.data(), n);
        prop_assert!(out.max_abs_diff(&reference) < 1e-12);
    }
}
