//! Finite-difference checks of every tape operation and of full models.

use caanet::network::{build_scene_net, DeviceNet, DeviceNetConfig, SceneNetConfig, TopologyKind};
use caanet::poolheads::{attend, HeadKind};
use caanet::tensor::{Bound, Padding, Tape, Tensor, Var};
use caanet::DeviceOneHot;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gradcheck, random_tensor, GradCheck};

pub const TOL: f64 = 1e-4;

/// Contracts an arbitrary tensor to a scalar with fixed random weights, so
/// every output entry gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, x: Var, seed: u64) -> caanet::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random_tensor(&tape.shape(x).to_vec(), 1.0, &mut rng));
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> caanet::Result<Var>>;

fn case(
    out: &mut Vec<(String, GradCheck)>,
    name: impl Into<String>,
    values: &[Tensor<f64>],
    build: impl Fn(&mut Tape<f64>, &[Var]) -> caanet::Result<Var> + 'static,
) {
    let build: Build = Box::new(build);
    out.push((name.into(), gradcheck(values, build, 40, 1)));
}

/// One check per operation and configuration.
pub fn op_suite() -> Vec<(String, GradCheck)> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_tensor(&[2, 3, 4], 1.0, &mut rng);
    let b = random_tensor(&[2, 3, 4], 1.0, &mut rng);
    let ab = [a.clone(), b.clone()];
    case(&mut out, "add", &ab, |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, 0)
    });
    case(&mut out, "mul", &ab, |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y, 0)
    });
    case(&mut out, "scale", &[a.clone()], |t, v| {
        let y = t.scale(v[0], -1.7);
        weighted_sum(t, y, 0)
    });
    case(&mut out, "relu", &[a.clone()], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 0)
    });
    case(&mut out, "sigmoid", &[a.clone()], |t, v| {
        let y = t.sigmoid(v[0]);
        weighted_sum(t, y, 0)
    });
    for axis in 0..3 {
        case(&mut out, format!("softmax axis {axis}"), &[a.clone()], move |t, v| {
            let y = t.softmax(v[0], axis)?;
            weighted_sum(t, y, 0)
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&[3, 32, 32], 1.0, &mut rng);
    case(&mut out, "max_pool2", &[x.clone()], |t, v| {
        let y = t.max_pool2(v[0])?;
        weighted_sum(t, y, 1)
    });
    case(&mut out, "block_max", &[x.clone()], |t, v| {
        let y = t.block_max(v[0], 16)?;
        weighted_sum(t, y, 1)
    });
    case(&mut out, "channel_max", &[x.clone()], |t, v| {
        let y = t.channel_max(v[0])?;
        weighted_sum(t, y, 1)
    });
    case(&mut out, "channel_mean", &[x.clone()], |t, v| {
        let y = t.channel_mean(v[0])?;
        weighted_sum(t, y, 1)
    });
    case(&mut out, "channel_sum", &[x.clone()], |t, v| {
        let y = t.channel_sum(v[0])?;
        weighted_sum(t, y, 1)
    });
    case(&mut out, "channel_normalize", &[x.map(|v| v.abs() + 0.1)], |t, v| {
        let y = t.channel_normalize(v[0])?;
        weighted_sum(t, y, 1)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&[2, 9, 11], 1.0, &mut rng);
    let k = random_tensor(&[3, 2, 3, 3], 0.5, &mut rng);
    let b = random_tensor(&[3], 0.5, &mut rng);
    for d in [1, 2, 4] {
        for pad in [Padding::Same, Padding::Valid] {
            case(&mut out, format!("conv2d d{d} {pad:?}"), &[x.clone(), k.clone(), b.clone()], move |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), d, pad)?;
                weighted_sum(t, y, 2)
            });
        }
    }
    let k1 = random_tensor(&[4, 2, 1, 1], 0.5, &mut rng);
    case(&mut out, "conv2d 1x1", &[x.clone(), k1], |t, v| {
        let y = t.conv2d(v[0], v[1], None, 1, Padding::Valid)?;
        weighted_sum(t, y, 2)
    });
    let w = random_tensor(&[5, 7], 0.5, &mut rng);
    let lb = random_tensor(&[5], 0.5, &mut rng);
    let v7 = random_tensor(&[7], 1.0, &mut rng);
    case(&mut out, "linear", &[v7, w, lb], |t, v| {
        let y = t.linear(v[0], v[1], Some(v[2]))?;
        weighted_sum(t, y, 3)
    });
    case(&mut out, "reshape", &[x.clone()], |t, v| {
        let y = t.reshape(v[0], &[2, 99])?;
        weighted_sum(t, y, 3)
    });
    case(&mut out, "flatten", &[x], |t, v| {
        let y = t.flatten(v[0]);
        weighted_sum(t, y, 3)
    });
    let probs = Tensor::new(&[4], vec![0.2, 0.4, 0.3, 0.5]).unwrap();
    case(&mut out, "nll", &[probs], |t, v| t.nll(v[0], 2, 1e-7));

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cls = random_tensor(&[4, 6, 5], 2.0, &mut rng);
    let att = random_tensor(&[4, 6, 5], 2.0, &mut rng);
    case(&mut out, "attention pooling", &[cls, att], |t, v| {
        let (y, _) = attend(t, v[0], v[1])?;
        t.nll(y, 1, 1e-7)
    });

    let net = DeviceNet::<f64>::build(
        DeviceNetConfig {
            widths: [2, 3],
            input_frames: 40,
            ..Default::default()
        },
        2,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut values: Vec<Tensor<f64>> = net.params().tensors().to_vec();
    let n = values.len();
    values.push(random_tensor(&[1, 64, 40], 1.0, &mut rng));
    let r = gradcheck(
        &values,
        |t, v| {
            let bound = Bound::from_vars(v[..n].to_vec());
            let out = net.forward(t, &bound, v[n])?;
            let p = t.softmax(out.logits, 0)?;
            t.nll(p, 1, 1e-7)
        },
        5,
        2,
    );
    out.push(("device network".into(), r));
    out
}

/// Whether a scene network configuration can be built at all.
pub fn valid_model(kind: TopologyKind, head: HeadKind) -> bool {
    !(kind == TopologyKind::WithPool && head.uses_roi())
}

/// Input frames for a model check: 40, or 48 where the final map must tile
/// into 16×16 blocks or survive three halvings evenly.
pub fn model_frames(kind: TopologyKind, head: HeadKind) -> usize {
    if kind == TopologyKind::WithPool || head.uses_roi() {
        48
    } else {
        40
    }
}

/// Gradient of the scene loss of a narrow-width model with respect to every
/// parameter tensor and the input.
pub fn model_check(kind: TopologyKind, head: HeadKind, layer: Option<usize>, seed: u64) -> GradCheck {
    let frames = model_frames(kind, head);
    let cfg = SceneNetConfig::new(kind, head).widths([2, 3, 3, 4]).input(64, frames).conditioned(layer);
    let net = build_scene_net::<f64>(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<Tensor<f64>> = net.params().tensors().to_vec();
    // Non-zero biases and injector so that every path carries gradient.
    let names: Vec<String> = net.params().iter().map(|(n, _)| n.to_string()).collect();
    for (v, name) in values.iter_mut().zip(&names) {
        if v.rank() == 1 || name.starts_with("scene.inject.") {
            *v = random_tensor(v.shape(), 0.1, &mut rng);
        }
    }
    let n = values.len();
    values.push(random_tensor(&[1, 64, frames], 1.0, &mut rng));
    let mask = layer.map(|_| net.mask_for(DeviceOneHot::new(1, 3).unwrap()).unwrap());
    gradcheck(
        &values,
        |t, v| {
            let bound = Bound::from_vars(v[..n].to_vec());
            let out = net.forward(t, &bound, v[n], mask.as_ref())?;
            t.nll(out.scores, 2, 1e-7)
        },
        3,
        seed,
    )
}

/// Every valid topology × head × conditioning layer combination.
pub fn model_matrix() -> Vec<(TopologyKind, HeadKind, Option<usize>)> {
    let mut out = Vec::new();
    for kind in TopologyKind::ALL {
        for head in HeadKind::ALL {
            if !valid_model(kind, head) {
                continue;
            }
            for layer in [None, Some(1), Some(2), Some(3), Some(4)] {
                out.push((kind, head, layer));
            }
        }
    }
    out
}
