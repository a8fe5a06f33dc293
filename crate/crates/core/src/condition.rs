//! Device conditioning: `next = relu(conv(features) + inject(mask))`.
//!
//! The device one-hot is repeated over the conditioned layer's plane to form
//! a `devices × height × width` mask, passed through a 1×1 injector
//! convolution with as many output channels as the layer, and added before
//! the activation.

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{argmax, Padding, ParamId, Real, Tape, Tensor, Var};

/// A vector over devices with a single 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DeviceOneHot {
    device: usize,
    devices: usize,
}

impl DeviceOneHot {
    pub fn new(device: usize, devices: usize) -> Result<Self> {
        if device >= devices {
            return Err(contract_err!("device {device} out of range for {devices} devices"));
        }
        Ok(DeviceOneHot { device, devices })
    }

    /// Validates an explicit vector: exactly one entry 1, all others 0.
    pub fn from_values<T: Real>(values: &[T]) -> Result<Self> {
        let ones: Vec<usize> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == T::one())
            .map(|(i, _)| i)
            .collect();
        let zeros = values.iter().filter(|v| **v == T::zero()).count();
        if ones.len() != 1 || zeros + 1 != values.len() {
            return Err(contract_err!("{values:?} is not a one-hot vector"));
        }
        Self::new(ones[0], values.len())
    }

    pub fn device(self) -> usize {
        self.device
    }

    pub fn devices(self) -> usize {
        self.devices
    }

    pub fn values<T: Real>(self) -> Vec<T> {
        (0..self.devices)
            .map(|i| if i == self.device { T::one() } else { T::zero() })
            .collect()
    }
}

/// The one-hot repeated over a layer plane, shape `devices×height×width`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceOneHotMask<T> {
    tensor: Tensor<T>,
    onehot: DeviceOneHot,
}

impl<T: Real> DeviceOneHotMask<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn onehot(&self) -> DeviceOneHot {
        self.onehot
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.tensor.shape()[1], self.tensor.shape()[2])
    }
}

pub fn expand_onehot<T: Real>(onehot: DeviceOneHot, width: usize, length: usize) -> Result<DeviceOneHotMask<T>> {
    if width == 0 || length == 0 {
        return Err(contract_err!("mask plane must be non-empty, got {width}×{length}"));
    }
    let plane = width * length;
    let mut data = vec![T::zero(); onehot.devices * plane];
    data[onehot.device * plane..(onehot.device + 1) * plane].fill(T::one());
    Ok(DeviceOneHotMask {
        tensor: Tensor::new(&[onehot.devices, width, length], data)?,
        onehot,
    })
}

/// Injector weights (`channels×devices×1×1`) and bias (`channels`).
#[derive(Clone, Copy, Debug)]
pub struct InjectionWeights {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Kernel, bias and dilation of the conditioned convolution.
#[derive(Clone, Copy, Debug)]
pub struct LayerConv {
    pub weight: Var,
    pub bias: Var,
    pub dilation: usize,
}

/// `ReLU(conv(W, M) + conv1x1(V, E))`.
pub fn inject<T: Real>(
    tape: &mut Tape<T>,
    features: Var,
    mask: Var,
    layer: LayerConv,
    injector_weight: Var,
    injector_bias: Var,
) -> Result<Var> {
    let z = tape.conv2d(features, layer.weight, Some(layer.bias), layer.dilation, Padding::Same)?;
    let (zs, ms) = (tape.shape(z), tape.shape(mask));
    if zs[1..] != ms[1..] {
        return Err(shape_err!(
            "mask plane {:?} does not match conditioned layer output {:?}",
            &ms[1..],
            &zs[1..]
        ));
    }
    let injected = tape.conv2d(mask, injector_weight, Some(injector_bias), 1, Padding::Valid)?;
    let sum = tape.add(z, injected)?;
    Ok(tape.relu(sum))
}

/// Hard decision on device logits: one-hot at the argmax, lowest index on
/// ties. No gradient flows through the result.
pub fn predicted_onehot<T: Real>(logits: &[T]) -> DeviceOneHot {
    DeviceOneHot {
        device: argmax(logits),
        devices: logits.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_planes() {
        let m = expand_onehot::<f32>(DeviceOneHot::new(1, 3).unwrap(), 4, 5).unwrap();
        assert_eq!(m.tensor().shape(), &[3, 4, 5]);
        let t = m.tensor().data();
        assert!(t[..20].iter().all(|&v| v == 0.0));
        assert!(t[20..40].iter().all(|&v| v == 1.0));
        assert!(t[40..].iter().all(|&v| v == 0.0));

        let single = expand_onehot::<f32>(DeviceOneHot::new(0, 1).unwrap(), 2, 2).unwrap();
        assert!(single.tensor().data().iter().all(|&v| v == 1.0));

        let big = expand_onehot::<f32>(DeviceOneHot::new(2, 3).unwrap(), 64, 320).unwrap();
        assert_eq!(big.tensor().shape(), &[3, 64, 320]);
    }

    #[test]
    fn malformed_onehot_rejected() {
        assert!(DeviceOneHot::from_values(&[0.0f32, 1.0, 0.0]).is_ok());
        assert!(DeviceOneHot::from_values(&[1.0f32, 1.0, 0.0]).is_err());
        assert!(DeviceOneHot::from_values(&[0.5f32, 0.5]).is_err());
        assert!(DeviceOneHot::from_values::<f32>(&[0.0, 0.0]).is_err());
        assert!(DeviceOneHot::new(3, 3).is_err());
        assert!(expand_onehot::<f32>(DeviceOneHot::new(0, 3).unwrap(), 0, 4).is_err());
    }

    #[test]
    fn argmax_decisions() {
        assert_eq!(predicted_onehot(&[0.1f32, 2.0, -1.0]).device(), 1);
        assert_eq!(predicted_onehot(&[1.0f32, 1.0, 0.0]).device(), 0);
        assert_eq!(predicted_onehot(&[0.3f32; 3]).device(), 0);
        assert_eq!(predicted_onehot(&[0.3f32; 3]).values::<f32>(), vec![1.0, 0.0, 0.0]);
    }

    fn layer_fixture(tape: &mut Tape<f64>, w_scale: f64, v_scale: f64) -> (Var, Var, LayerConv, Var, Var) {
        let feats = tape.constant(Tensor::from_fn(&[2, 5, 6], |i| ((i * 13 % 17) as f64 - 8.0) / 5.0));
        let w = tape.constant(Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 7 % 11) as f64 - 5.0) * 0.1 * w_scale));
        let b = tape.constant(Tensor::zeros(&[3]));
        let mask = tape.constant(expand_onehot(DeviceOneHot::new(2, 3).unwrap(), 5, 6).unwrap().tensor().clone());
        let v = tape.constant(Tensor::from_fn(&[3, 3, 1, 1], |i| (i as f64 - 4.0) * 0.3 * v_scale));
        let vb = tape.constant(Tensor::zeros(&[3]));
        (feats, mask, LayerConv { weight: w, bias: b, dilation: 2 }, v, vb)
    }

    #[test]
    fn zero_injector_is_plain_layer() {
        let mut t = Tape::new();
        let (f, m, layer, v, vb) = layer_fixture(&mut t, 1.0, 0.0);
        let y = inject(&mut t, f, m, layer, v, vb).unwrap();
        let z = t.conv2d(f, layer.weight, Some(layer.bias), 2, Padding::Same).unwrap();
        let plain = t.relu(z);
        assert_eq!(t.value(y), t.value(plain));
    }

    #[test]
    fn zero_layer_gives_constant_planes() {
        let mut t = Tape::new();
        let (f, m, layer, v, vb) = layer_fixture(&mut t, 0.0, 1.0);
        let y = inject(&mut t, f, m, layer, v, vb).unwrap();
        let out = t.value(y);
        let vv = t.value(v).clone();
        for c in 0..3 {
            let expect = vv.at(&[c, 2, 0, 0]).max(0.0);
            for p in 0..5 {
                for q in 0..6 {
                    assert_eq!(out.at(&[c, p, q]), expect);
                }
            }
        }
    }

    #[test]
    fn mismatched_mask_plane_rejected() {
        let mut t = Tape::new();
        let (f, _, layer, v, vb) = layer_fixture(&mut t, 1.0, 1.0);
        let wrong = t.constant(expand_onehot(DeviceOneHot::new(0, 3).unwrap(), 4, 6).unwrap().tensor().clone());
        assert!(inject(&mut t, f, wrong, layer, v, vb).is_err());
    }
}
