//! The scene branch (four convolutions in one of three topologies, optional
//! device conditioning, a global pooling head) and the two-layer device
//! branch.
//!
//! Every convolution is 3×3 by default, stride 1, same padding, followed by a
//! ReLU. Initialization is uniform in `±sqrt(6 / (fan_in + fan_out))` with
//! zero biases; each tensor draws from its own stream seeded by the network
//! seed and the parameter name, so adding a component (an injector, a head)
//! never shifts the values of the others.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::condition::{inject, DeviceOneHot, DeviceOneHotMask, InjectionWeights, LayerConv, expand_onehot};
use crate::error::{contract_err, shape_err, Error, Result};
use crate::poolheads::{apply_head, AffineParams, AttentionHead, HeadKind, HeadParams};
use crate::tensor::{Bound, Padding, ParamId, ParamSet, Real, Tape, Tensor, Var};

pub const LAYERS: usize = 4;
pub const SCENE_WIDTHS: [usize; LAYERS] = [64, 128, 256, 512];
pub const ATROUS_DILATIONS: [usize; LAYERS] = [1, 2, 4, 8];
pub const DEVICE_WIDTHS: [usize; 2] = [64, 128];
pub const DEFAULT_KERNEL: usize = 3;
pub const DEFAULT_SCENES: usize = 10;
pub const DEFAULT_DEVICES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    WithPool,
    NoPool,
    Atrous,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 3] = [TopologyKind::WithPool, TopologyKind::NoPool, TopologyKind::Atrous];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::WithPool => "with_pool",
            TopologyKind::NoPool => "no_pool",
            TopologyKind::Atrous => "atrous",
        }
    }

    pub fn code(self) -> u32 {
        TopologyKind::ALL.iter().position(|&t| t == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        TopologyKind::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TopologyKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown topology {s:?}")))
    }
}

/// Channel widths, dilations and local-pool flags of the scene branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub widths: [usize; LAYERS],
    pub dilations: [usize; LAYERS],
    pub pool: [bool; LAYERS],
}

impl Topology {
    pub fn new(kind: TopologyKind) -> Self {
        let (dilations, pool) = match kind {
            TopologyKind::WithPool => ([1; LAYERS], [true; LAYERS]),
            TopologyKind::NoPool => ([1; LAYERS], [false; LAYERS]),
            TopologyKind::Atrous => (ATROUS_DILATIONS, [false; LAYERS]),
        };
        Topology {
            kind,
            widths: SCENE_WIDTHS,
            dilations,
            pool,
        }
    }

    /// Same structure with narrower layers.
    pub fn with_widths(mut self, widths: [usize; LAYERS]) -> Self {
        self.widths = widths;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneNetConfig {
    pub topology: Topology,
    pub head: HeadKind,
    /// 1-based index of the conditioned convolution.
    pub condition_layer: Option<usize>,
    pub scenes: usize,
    pub devices: usize,
    pub kernel: usize,
    pub input_bins: usize,
    pub input_frames: usize,
}

impl SceneNetConfig {
    pub fn new(kind: TopologyKind, head: HeadKind) -> Self {
        SceneNetConfig {
            topology: Topology::new(kind),
            head,
            condition_layer: None,
            scenes: DEFAULT_SCENES,
            devices: DEFAULT_DEVICES,
            kernel: DEFAULT_KERNEL,
            input_bins: crate::audiofront::MEL_BINS,
            input_frames: 320,
        }
    }

    pub fn conditioned(mut self, layer: Option<usize>) -> Self {
        self.condition_layer = layer;
        self
    }

    pub fn widths(mut self, widths: [usize; LAYERS]) -> Self {
        self.topology = self.topology.with_widths(widths);
        self
    }

    pub fn input(mut self, bins: usize, frames: usize) -> Self {
        self.input_bins = bins;
        self.input_frames = frames;
        self
    }

    /// Shape of every post-activation map (before any local pooling) and of
    /// the final map handed to the head.
    pub fn shape_ledger(&self) -> Result<ShapeLedger> {
        let (mut p, mut q) = (self.input_bins, self.input_frames);
        let mut layers = Vec::with_capacity(LAYERS);
        for l in 0..LAYERS {
            let [c] = [self.topology.widths[l]];
            layers.push([c, p, q]);
            if self.topology.pool[l] {
                if p % 2 != 0 || q % 2 != 0 {
                    return Err(shape_err!(
                        "local pooling after layer {} needs even dims, got {p}×{q}",
                        l + 1
                    ));
                }
                p /= 2;
                q /= 2;
            }
        }
        let final_map = [self.topology.widths[LAYERS - 1], p, q];
        Ok(ShapeLedger { layers, final_map })
    }

    fn validate(&self) -> Result<()> {
        if let Some(l) = self.condition_layer {
            if !(1..=LAYERS).contains(&l) {
                return Err(Error::Config(format!(
                    "condition layer must be in 1..={LAYERS}, got {l}"
                )));
            }
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if self.scenes == 0 || self.devices == 0 {
            return Err(Error::Config("scene and device counts must be positive".into()));
        }
        if self.topology.widths.contains(&0) {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.topology.kind == TopologyKind::Atrous && self.topology.dilations != ATROUS_DILATIONS {
            return Err(Error::Config("atrous topology requires dilations [1, 2, 4, 8]".into()));
        }
        let ledger = self.shape_ledger().map_err(|e| Error::Config(e.to_string()))?;
        self.head
            .summary_dims(ledger.final_map)
            .map_err(|e| Error::Config(format!("{} head on {}: {e}", self.head, self.topology.kind)))?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeLedger {
    pub layers: Vec<[usize; 3]>,
    pub final_map: [usize; 3],
}

#[derive(Clone, Copy, Debug)]
struct ConvParams {
    weight: ParamId,
    bias: ParamId,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf29ce484222325, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn glorot<T: Real>(params: &mut ParamSet<T>, name: String, shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> ParamId {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&name));
    let t = Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)));
    params.push(name, t)
}

fn add_conv<T: Real>(params: &mut ParamSet<T>, prefix: &str, c_out: usize, c_in: usize, k: usize, seed: u64) -> ConvParams {
    let weight = glorot(params, format!("{prefix}.weight"), &[c_out, c_in, k, k], c_in * k * k, c_out * k * k, seed);
    let bias = params.push(format!("{prefix}.bias"), Tensor::zeros(&[c_out]));
    ConvParams { weight, bias }
}

fn add_affine<T: Real>(params: &mut ParamSet<T>, prefix: &str, out: usize, inp: usize, seed: u64) -> AffineParams {
    let weight = glorot(params, format!("{prefix}.weight"), &[out, inp], inp, out, seed);
    let bias = params.push(format!("{prefix}.bias"), Tensor::zeros(&[out]));
    AffineParams { weight, bias }
}

/// Scene classifier.
#[derive(Clone, Debug)]
pub struct SceneNet<T> {
    config: SceneNetConfig,
    params: ParamSet<T>,
    convs: Vec<ConvParams>,
    injector: Option<InjectionWeights>,
    head: HeadParams,
}

/// Tape handles produced by one scene forward pass.
#[derive(Clone, Debug)]
pub struct SceneForward {
    pub scores: Var,
    pub attention: Option<Var>,
    /// Post-activation output of each convolution.
    pub layer_maps: Vec<Var>,
    pub final_map: Var,
}

#[derive(Clone, Debug)]
pub struct ScenePrediction<T> {
    pub scores: Vec<T>,
    pub attention: Option<Tensor<T>>,
}

pub fn build_scene_net<T: Real>(config: SceneNetConfig, seed: u64) -> Result<SceneNet<T>> {
    config.validate()?;
    let mut params = ParamSet::new();
    let k = config.kernel;
    let widths = config.topology.widths;
    let mut c_in = 1;
    let mut convs = Vec::with_capacity(LAYERS);
    for (l, &w) in widths.iter().enumerate() {
        convs.push(add_conv(&mut params, &format!("scene.conv{}", l + 1), w, c_in, k, seed));
        c_in = w;
    }
    let injector = config.condition_layer.map(|l| {
        let c = widths[l - 1];
        // Zero, so a conditioned network starts out identical to the unconditioned one.
        let weight = params.push("scene.inject.weight", Tensor::zeros(&[c, config.devices, 1, 1]));
        let bias = params.push("scene.inject.bias", Tensor::zeros(&[c]));
        InjectionWeights { weight, bias }
    });
    let ledger = config.shape_ledger()?;
    let h = ledger.final_map[0];
    let kk = config.scenes;
    let head = match config.head.affine_inputs(ledger.final_map)? {
        Some(d) => HeadParams::Affine(add_affine(&mut params, "scene.head.fc", kk, d, seed)),
        None => {
            let cls = add_conv(&mut params, "scene.head.cls", kk, h, 1, seed);
            let att = add_conv(&mut params, "scene.head.att", kk, h, 1, seed);
            HeadParams::Attention(AttentionHead {
                cls_weight: cls.weight,
                cls_bias: cls.bias,
                att_weight: att.weight,
                att_bias: att.bias,
            })
        }
    };
    Ok(SceneNet {
        config,
        params,
        convs,
        injector,
        head,
    })
}

pub fn forward_scene<T: Real>(
    net: &SceneNet<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    input: Var,
    mask: Option<&DeviceOneHotMask<T>>,
) -> Result<SceneForward> {
    net.forward(tape, bound, input, mask)
}

impl<T: Real> SceneNet<T> {
    pub fn config(&self) -> &SceneNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn dilations(&self) -> [usize; LAYERS] {
        self.config.topology.dilations
    }

    pub fn is_conditioned(&self) -> bool {
        self.injector.is_some()
    }

    /// Plane of the conditioned layer, where its mask must live.
    pub fn condition_plane(&self) -> Option<(usize, usize)> {
        let l = self.config.condition_layer?;
        let ledger = self.config.shape_ledger().ok()?;
        let [_, p, q] = ledger.layers[l - 1];
        Some((p, q))
    }

    pub fn mask_for(&self, onehot: DeviceOneHot) -> Result<DeviceOneHotMask<T>> {
        let (p, q) = self
            .condition_plane()
            .ok_or_else(|| contract_err!("network has no conditioning injector"))?;
        if onehot.devices() != self.config.devices {
            return Err(contract_err!(
                "one-hot has {} devices, network expects {}",
                onehot.devices(),
                self.config.devices
            ));
        }
        expand_onehot(onehot, p, q)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        input: Var,
        mask: Option<&DeviceOneHotMask<T>>,
    ) -> Result<SceneForward> {
        let expected = [1, self.config.input_bins, self.config.input_frames];
        if tape.shape(input) != expected {
            return Err(shape_err!(
                "scene network expects input {expected:?}, got {:?}",
                tape.shape(input)
            ));
        }
        let mask_var = match (&self.injector, mask) {
            (Some(_), Some(m)) => {
                if m.tensor().shape()[0] != self.config.devices {
                    return Err(contract_err!("mask has the wrong number of devices"));
                }
                Some(tape.constant(m.tensor().clone()))
            }
            (None, None) => None,
            (Some(_), None) => return Err(contract_err!("conditioned network needs a device mask")),
            (None, Some(_)) => return Err(contract_err!("unconditioned network was given a device mask")),
        };

        let topo = &self.config.topology;
        let mut m = input;
        let mut layer_maps = Vec::with_capacity(LAYERS);
        for (l, conv) in self.convs.iter().enumerate() {
            let layer = LayerConv {
                weight: bound.var(conv.weight),
                bias: bound.var(conv.bias),
                dilation: topo.dilations[l],
            };
            let out = match (self.config.condition_layer, &self.injector, mask_var) {
                (Some(cl), Some(inj), Some(e)) if cl == l + 1 => {
                    inject(tape, m, e, layer, bound.var(inj.weight), bound.var(inj.bias))?
                }
                _ => {
                    let z = tape.conv2d(m, layer.weight, Some(layer.bias), layer.dilation, Padding::Same)?;
                    tape.relu(z)
                }
            };
            layer_maps.push(out);
            m = if topo.pool[l] { tape.max_pool2(out)? } else { out };
        }
        let head = apply_head(tape, self.config.head, &self.head, bound, m)?;
        Ok(SceneForward {
            scores: head.scores,
            attention: head.attention,
            layer_maps,
            final_map: m,
        })
    }

    /// Gradient-free forward pass.
    pub fn predict(&self, input: &Tensor<T>, device: Option<DeviceOneHot>) -> Result<ScenePrediction<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let mask = device.map(|d| self.mask_for(d)).transpose()?;
        let out = self.forward(&mut tape, &bound, x, mask.as_ref())?;
        Ok(ScenePrediction {
            scores: tape.value(out.scores).data().to_vec(),
            attention: out.attention.map(|a| tape.value(a).clone()),
        })
    }

    /// Architecture descriptor stored next to the parameters in model files:
    /// topology, head, condition layer (0 = none), scenes, devices, kernel,
    /// input bins, input frames, four widths.
    pub fn meta(&self) -> Tensor<f32> {
        let c = &self.config;
        let mut v = vec![
            c.topology.kind.code() as f32,
            c.head.code() as f32,
            c.condition_layer.unwrap_or(0) as f32,
            c.scenes as f32,
            c.devices as f32,
            c.kernel as f32,
            c.input_bins as f32,
            c.input_frames as f32,
        ];
        v.extend(c.topology.widths.iter().map(|&w| w as f32));
        Tensor::new(&[v.len()], v).expect("fixed-length descriptor")
    }

    pub fn config_from_meta(meta: &Tensor<f32>) -> Result<SceneNetConfig> {
        let v: Vec<u32> = meta.data().iter().map(|&x| x as u32).collect();
        if v.len() != 12 {
            return Err(Error::Format("scene descriptor must have 12 entries".into()));
        }
        let bad = |what: &str| Error::Format(format!("invalid {what} in scene descriptor"));
        let kind = TopologyKind::from_code(v[0]).ok_or_else(|| bad("topology"))?;
        let head = HeadKind::from_code(v[1]).ok_or_else(|| bad("head"))?;
        let mut cfg = SceneNetConfig::new(kind, head)
            .conditioned((v[2] != 0).then_some(v[2] as usize))
            .input(v[6] as usize, v[7] as usize)
            .widths([v[8] as usize, v[9] as usize, v[10] as usize, v[11] as usize]);
        cfg.scenes = v[3] as usize;
        cfg.devices = v[4] as usize;
        cfg.kernel = v[5] as usize;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceNetConfig {
    pub widths: [usize; 2],
    pub devices: usize,
    pub kernel: usize,
    pub input_bins: usize,
    pub input_frames: usize,
}

impl Default for DeviceNetConfig {
    fn default() -> Self {
        DeviceNetConfig {
            widths: DEVICE_WIDTHS,
            devices: DEFAULT_DEVICES,
            kernel: DEFAULT_KERNEL,
            input_bins: crate::audiofront::MEL_BINS,
            input_frames: 320,
        }
    }
}

/// Device classifier: two conv→ReLU→2×2 max-pool stages, global max pooling
/// and an affine map to device logits.
#[derive(Clone, Debug)]
pub struct DeviceNet<T> {
    config: DeviceNetConfig,
    params: ParamSet<T>,
    convs: [ConvParams; 2],
    fc: AffineParams,
}

/// Tape handles of one device forward pass.
#[derive(Clone, Debug)]
pub struct DeviceForward {
    pub logits: Var,
    pub maps: Vec<Var>,
}

impl<T: Real> DeviceNet<T> {
    pub fn build(config: DeviceNetConfig, seed: u64) -> Result<Self> {
        if config.kernel % 2 == 0 || config.devices == 0 || config.widths.contains(&0) {
            return Err(Error::Config("invalid device network configuration".into()));
        }
        if config.input_bins % 4 != 0 || config.input_frames % 4 != 0 {
            return Err(Error::Config("device network input must be divisible by 4".into()));
        }
        let mut params = ParamSet::new();
        let [w1, w2] = config.widths;
        let k = config.kernel;
        let convs = [
            add_conv(&mut params, "device.conv1", w1, 1, k, seed),
            add_conv(&mut params, "device.conv2", w2, w1, k, seed),
        ];
        let fc = add_affine(&mut params, "device.fc", config.devices, w2, seed);
        Ok(DeviceNet {
            config,
            params,
            convs,
            fc,
        })
    }

    pub fn config(&self) -> &DeviceNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, input: Var) -> Result<DeviceForward> {
        let mut m = input;
        let mut maps = Vec::new();
        for conv in &self.convs {
            let z = tape.conv2d(m, bound.var(conv.weight), Some(bound.var(conv.bias)), 1, Padding::Same)?;
            let a = tape.relu(z);
            maps.push(a);
            m = tape.max_pool2(a)?;
            maps.push(m);
        }
        let pooled = tape.channel_max(m)?;
        maps.push(pooled);
        let logits = tape.linear(pooled, bound.var(self.fc.weight), Some(bound.var(self.fc.bias)))?;
        Ok(DeviceForward { logits, maps })
    }

    pub fn logits(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out.logits).data().to_vec())
    }

    /// Kernel, two widths, device count, input bins, input frames.
    pub fn meta(&self) -> Tensor<f32> {
        let c = &self.config;
        let v = vec![
            c.kernel as f32,
            c.widths[0] as f32,
            c.widths[1] as f32,
            c.devices as f32,
            c.input_bins as f32,
            c.input_frames as f32,
        ];
        Tensor::new(&[6], v).expect("fixed-length descriptor")
    }

    pub fn config_from_meta(meta: &Tensor<f32>) -> Result<DeviceNetConfig> {
        let v: Vec<usize> = meta.data().iter().map(|&x| x as usize).collect();
        if v.len() != 6 {
            return Err(Error::Format("device descriptor must have 6 entries".into()));
        }
        Ok(DeviceNetConfig {
            kernel: v[0],
            widths: [v[1], v[2]],
            devices: v[3],
            input_bins: v[4],
            input_frames: v[5],
        })
    }
}

pub fn forward_device<T: Real>(net: &DeviceNet<T>, tape: &mut Tape<T>, bound: &Bound, input: Var) -> Result<DeviceForward> {
    net.forward(tape, bound, input)
}

/// Overwrites the parameters of `params` with the named tensors in `records`.
/// Every parameter must be present with its exact shape.
pub fn load_params<T: Real>(params: &mut ParamSet<T>, records: &[(String, Tensor<f32>)]) -> Result<()> {
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let (_, t) = records
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Format(format!("model file lacks parameter {name}")))?;
        params
            .assign(&name, t.cast())
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: TopologyKind, head: HeadKind) -> SceneNetConfig {
        SceneNetConfig::new(kind, head).widths([2, 3, 3, 4]).input(64, 48)
    }

    #[test]
    fn atrous_dilations() {
        let net = build_scene_net::<f32>(tiny(TopologyKind::Atrous, HeadKind::Att), 1).unwrap();
        assert_eq!(net.dilations(), [1, 2, 4, 8]);
        let net = build_scene_net::<f32>(tiny(TopologyKind::NoPool, HeadKind::Att), 1).unwrap();
        assert_eq!(net.dilations(), [1, 1, 1, 1]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = tiny(TopologyKind::WithPool, HeadKind::Max).conditioned(Some(2));
        let a = build_scene_net::<f32>(cfg.clone(), 7).unwrap();
        let b = build_scene_net::<f32>(cfg, 7).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn injector_does_not_disturb_other_initial_values() {
        let plain = build_scene_net::<f32>(tiny(TopologyKind::Atrous, HeadKind::Att), 3).unwrap();
        let cond = build_scene_net::<f32>(tiny(TopologyKind::Atrous, HeadKind::Att).conditioned(Some(3)), 3).unwrap();
        for (name, t) in plain.params().iter() {
            let id = cond.params().find(name).unwrap();
            assert_eq!(cond.params().get(id), t, "{name}");
        }
    }

    #[test]
    fn pooling_adds_no_parameters() {
        for head in [HeadKind::Max, HeadKind::Avg, HeadKind::Att] {
            let counts: Vec<usize> = TopologyKind::ALL
                .iter()
                .map(|&k| build_scene_net::<f32>(SceneNetConfig::new(k, head).widths([4, 8, 8, 16]), 0).unwrap().params().count())
                .collect();
            // Oracle: four 3×3 convolutions plus the head.
            let convs = (1 * 4 + 4 * 8 + 8 * 8 + 8 * 16) * 9 + (4 + 8 + 8 + 16);
            let head_count = if head.is_attention() { 2 * (16 * 10 + 10) } else { 16 * 10 + 10 };
            assert!(counts.iter().all(|&c| c == convs + head_count), "{counts:?}");
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(build_scene_net::<f32>(tiny(TopologyKind::Atrous, HeadKind::Att).conditioned(Some(5)), 0).is_err());
        assert!(build_scene_net::<f32>(tiny(TopologyKind::Atrous, HeadKind::Att).conditioned(Some(0)), 0).is_err());
        assert!(build_scene_net::<f32>(tiny(TopologyKind::WithPool, HeadKind::Roi), 0).is_err());
        assert!(build_scene_net::<f32>(tiny(TopologyKind::WithPool, HeadKind::Att).input(64, 40), 0).is_err());
    }

    #[test]
    fn full_width_shape_ledger() {
        let wp = SceneNetConfig::new(TopologyKind::WithPool, HeadKind::Att).shape_ledger().unwrap();
        assert_eq!(wp.final_map, [512, 4, 20]);
        let planes: Vec<[usize; 2]> = wp.layers.iter().map(|s| [s[1], s[2]]).collect();
        assert_eq!(planes, vec![[64, 320], [32, 160], [16, 80], [8, 40]]);
        for kind in [TopologyKind::NoPool, TopologyKind::Atrous] {
            let l = SceneNetConfig::new(kind, HeadKind::Att).shape_ledger().unwrap();
            assert_eq!(l.final_map, [512, 64, 320]);
            assert!(l.layers.iter().all(|s| s[1..] == [64, 320]));
        }
    }

    #[test]
    fn mask_presence_must_match_injector() {
        let plain = build_scene_net::<f64>(tiny(TopologyKind::NoPool, HeadKind::Avg), 0).unwrap();
        let cond = build_scene_net::<f64>(tiny(TopologyKind::NoPool, HeadKind::Avg).conditioned(Some(1)), 0).unwrap();
        let x = Tensor::zeros(&[1, 64, 48]);
        let dev = DeviceOneHot::new(1, 3).unwrap();
        assert!(plain.predict(&x, Some(dev)).is_err());
        assert!(cond.predict(&x, None).is_err());
        assert!(cond.predict(&x, Some(dev)).is_ok());
        let mask = expand_onehot::<f64>(dev, 64, 48).unwrap();
        let mut t = Tape::new();
        let b = plain.params().bind(&mut t, false);
        let xv = t.constant(x);
        assert!(forward_scene(&plain, &mut t, &b, xv, Some(&mask)).is_err());
    }

    #[test]
    fn device_net_shapes() {
        let net = DeviceNet::<f32>::build(DeviceNetConfig { widths: [4, 6], ..Default::default() }, 5).unwrap();
        let mut t = Tape::new();
        let b = net.params().bind(&mut t, false);
        let x = t.constant(Tensor::zeros(&[1, 64, 320]));
        let out = net.forward(&mut t, &b, x).unwrap();
        let shapes: Vec<Vec<usize>> = out.maps.iter().map(|&m| t.shape(m).to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![4, 64, 320], vec![4, 32, 160], vec![6, 32, 160], vec![6, 16, 80], vec![6]]
        );
        assert_eq!(t.shape(out.logits), &[3]);
    }

    #[test]
    fn meta_round_trips() {
        let cfg = tiny(TopologyKind::WithPool, HeadKind::Flatten).conditioned(Some(3));
        let net = build_scene_net::<f32>(cfg.clone(), 0).unwrap();
        assert_eq!(SceneNet::<f32>::config_from_meta(&net.meta()).unwrap(), cfg);
        let dcfg = DeviceNetConfig { widths: [3, 5], devices: 2, ..Default::default() };
        let dnet = DeviceNet::<f32>::build(dcfg.clone(), 0).unwrap();
        assert_eq!(DeviceNet::<f32>::config_from_meta(&dnet.meta()).unwrap(), dcfg);
    }
}
