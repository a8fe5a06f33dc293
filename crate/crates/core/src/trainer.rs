//! Training strategies, the combined scene/device loss and its schedules.
//!
//! * `single_device`: an unconditioned scene network on one device's clips.
//! * `joint`: an unconditioned scene network on all clips.
//! * `teacher_forcing`: the scene network is conditioned on the true device.
//! * `multi_task`: a device network is trained alongside, and the scene
//!   network is conditioned on its hard (argmax) decision. The combined loss
//!   is `scene + λ · device`; λ starts high and latches low once validation
//!   device accuracy first reaches the threshold.
//!
//! Spectrograms are standardized with one global mean and standard deviation
//! computed on the training clips; both are stored with the model.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audiofront::Spectrogram;
use crate::condition::{predicted_onehot, DeviceOneHot};
use crate::dataset::{split, DatasetManifest, Split};
use crate::error::{contract_err, Error, Result};
use crate::evalviz::Prediction;
use crate::network::{
    build_scene_net, load_params, DeviceNet, DeviceNetConfig, SceneNet, SceneNetConfig, TopologyKind, DEVICE_WIDTHS,
    LAYERS, SCENE_WIDTHS,
};
use crate::poolheads::HeadKind;
use crate::tensor::serialize::{read_model, write_model};
use crate::tensor::{adam_step, argmax, AdamConfig, AdamState, Real, Tape, Tensor};

/// Probability floor of the negative log-likelihood.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SingleDevice,
    Joint,
    TeacherForcing,
    MultiTask,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::SingleDevice,
        StrategyKind::Joint,
        StrategyKind::TeacherForcing,
        StrategyKind::MultiTask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::SingleDevice => "single_device",
            StrategyKind::Joint => "joint",
            StrategyKind::TeacherForcing => "teacher_forcing",
            StrategyKind::MultiTask => "multi_task",
        }
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, StrategyKind::TeacherForcing | StrategyKind::MultiTask)
    }

    fn code(self) -> u32 {
        StrategyKind::ALL.iter().position(|&s| s == self).unwrap() as u32
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub strategy: StrategyKind,
    pub topology: TopologyKind,
    pub head: HeadKind,
    pub condition_layer: Option<usize>,
    /// Device trained by `single_device`.
    pub device: Option<usize>,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_period: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub lambda_threshold: f64,
    pub eval_interval: usize,
    /// Fraction of each training cell held out for validation when the
    /// manifest has no validation clips.
    pub validation_fraction: f64,
    pub widths: [usize; LAYERS],
    pub device_widths: [usize; 2],
    pub kernel: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: StrategyKind::Joint,
            topology: TopologyKind::Atrous,
            head: HeadKind::Att,
            condition_layer: None,
            device: None,
            lr: 0.001,
            lr_decay: 0.9,
            lr_period: 200,
            iterations: 2000,
            batch_size: 16,
            seed: 0,
            lambda_before: 1.0,
            lambda_after: 1e-4,
            lambda_threshold: 0.98,
            eval_interval: 50,
            validation_fraction: 0.125,
            widths: SCENE_WIDTHS,
            device_widths: DEVICE_WIDTHS,
            kernel: 3,
        }
    }
}

fn parse_list<const N: usize>(value: &str) -> std::result::Result<[usize; N], String> {
    let items: Vec<usize> = value
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("{s:?} is not a count")))
        .collect::<std::result::Result<_, _>>()?;
    items.try_into().map_err(|v: Vec<usize>| format!("expected {N} values, got {}", v.len()))
}

impl TrainConfig {
    /// `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|message| Error::Parse { line: i + 1, message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one option by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        let optional = |v: &str| -> std::result::Result<Option<usize>, String> {
            if v == "none" {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        };
        match key {
            "strategy" => self.strategy = value.parse().map_err(|e: Error| e.to_string())?,
            "topology" => self.topology = value.parse().map_err(|e: Error| e.to_string())?,
            "head" => self.head = value.parse().map_err(|e: Error| e.to_string())?,
            "condition_layer" => self.condition_layer = optional(value)?,
            "device" => self.device = optional(value)?,
            "lr" => self.lr = num(key, value)?,
            "lr_decay" => self.lr_decay = num(key, value)?,
            "lr_period" => self.lr_period = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lambda_before" => self.lambda_before = num(key, value)?,
            "lambda_after" => self.lambda_after = num(key, value)?,
            "lambda_threshold" => self.lambda_threshold = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "validation_fraction" => self.validation_fraction = num(key, value)?,
            "widths" => self.widths = parse_list(value)?,
            "device_widths" => self.device_widths = parse_list(value)?,
            "kernel" => self.kernel = num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.strategy.is_conditional() != self.condition_layer.is_some() {
            return bad(format!(
                "condition_layer must be set exactly for conditional strategies ({} given {:?})",
                self.strategy, self.condition_layer
            ));
        }
        if (self.strategy == StrategyKind::SingleDevice) != self.device.is_some() {
            return bad("device must be set exactly for single_device".into());
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || self.lr_period == 0 {
            return bad("learning rate, decay and period must be positive".into());
        }
        if !(self.lambda_before > 0.0) || !(self.lambda_after > 0.0) {
            return bad("loss weights must be positive".into());
        }
        if !(self.lambda_threshold > 0.0 && self.lambda_threshold <= 1.0) {
            return bad(format!("lambda_threshold must be in (0, 1], got {}", self.lambda_threshold));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return bad("iterations, batch_size and eval_interval must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)".into());
        }
        Ok(())
    }

    pub fn scene_config(&self, scenes: usize, devices: usize, bins: usize, frames: usize) -> SceneNetConfig {
        let mut c = SceneNetConfig::new(self.topology, self.head)
            .conditioned(self.condition_layer)
            .widths(self.widths)
            .input(bins, frames);
        c.scenes = scenes;
        c.devices = devices;
        c.kernel = self.kernel;
        c
    }

    pub fn device_config(&self, devices: usize, bins: usize, frames: usize) -> DeviceNetConfig {
        DeviceNetConfig {
            widths: self.device_widths,
            devices,
            kernel: self.kernel,
            input_bins: bins,
            input_frames: frames,
        }
    }
}

pub fn lr_at(iteration: usize, lr0: f64, decay: f64, period: usize) -> f64 {
    lr0 * decay.powi((iteration / period) as i32)
}

pub fn multitask_loss(scene: f64, device: f64, lambda: f64) -> f64 {
    scene + lambda * device
}

/// Latching switch of the device-loss weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaSchedule {
    pub before: f64,
    pub after: f64,
    pub threshold: f64,
    switched: bool,
}

impl LambdaSchedule {
    pub fn new(before: f64, after: f64, threshold: f64) -> Self {
        LambdaSchedule {
            before,
            after,
            threshold,
            switched: false,
        }
    }

    pub fn observe(&mut self, device_accuracy: f64) -> f64 {
        if device_accuracy >= self.threshold {
            self.switched = true;
        }
        self.current()
    }

    pub fn current(&self) -> f64 {
        if self.switched {
            self.after
        } else {
            self.before
        }
    }

    pub fn switched(&self) -> bool {
        self.switched
    }
}

/// Stateless form of the schedule with the default weights and threshold:
/// once λ is low it stays low.
pub fn lambda_schedule(device_accuracy: f64, current: f64) -> f64 {
    let d = TrainConfig::default();
    if current == d.lambda_after || device_accuracy >= d.lambda_threshold {
        d.lambda_after
    } else {
        d.lambda_before
    }
}

/// `-ln(max(p_true / Σp, 1e-7))` for one score vector.
pub fn scene_loss<T: Real>(scores: &[T], class: usize) -> Result<f64> {
    if class >= scores.len() {
        return Err(contract_err!("class {class} out of range for {} scores", scores.len()));
    }
    let total: f64 = scores.iter().map(|s| s.to_f64_lossy()).sum();
    let p = if total > 0.0 { scores[class].to_f64_lossy() / total } else { 0.0 };
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean of [`scene_loss`] over a batch.
pub fn batch_scene_loss<T: Real>(batch: &[(Vec<T>, usize)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(contract_err!("empty batch"));
    }
    let mut total = 0.0;
    for (scores, class) in batch {
        total += scene_loss(scores, *class)?;
    }
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub device_accuracy: Option<f64>,
    pub scene_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: StrategyKind,
    pub scene_loss: Vec<f64>,
    /// Zero where there is no device branch.
    pub device_loss: Vec<f64>,
    pub loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Most recent validation device accuracy at each iteration.
    pub device_accuracy: Vec<Option<f64>>,
    pub evaluations: Vec<EvalPoint>,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("bad report: {e}")))
    }
}

/// One standardized clip held in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub scene: usize,
    pub device: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f32,
    pub std: f32,
}

impl Normalization {
    pub fn fit(specs: &[Spectrogram]) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        for s in specs {
            for &v in s.values() {
                n += 1;
                sum += v as f64;
                sq += v as f64 * v as f64;
            }
        }
        let mean = sum / n.max(1) as f64;
        let var = (sq / n.max(1) as f64 - mean * mean).max(0.0);
        let std = if var > 1e-12 { var.sqrt() } else { 1.0 };
        Normalization {
            mean: mean as f32,
            std: std as f32,
        }
    }

    pub fn identity() -> Self {
        Normalization { mean: 0.0, std: 1.0 }
    }

    pub fn apply(&self, spec: &Spectrogram) -> Tensor<f32> {
        spec.to_tensor::<f32>().map(|v| (v - self.mean) / self.std)
    }
}

/// A trained scene network, its device network under `multi_task`, and the
/// input standardization.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub strategy: StrategyKind,
    pub scene: SceneNet<f32>,
    pub device: Option<DeviceNet<f32>>,
    pub normalization: Normalization,
}

#[derive(Clone, Debug)]
pub struct ClipOutput {
    pub scores: Vec<f32>,
    pub device_used: Option<usize>,
    pub attention: Option<Tensor<f32>>,
}

impl TrainedModel {
    /// Device the scene network is conditioned on: the device branch's
    /// decision under `multi_task`, the given label under `teacher_forcing`.
    pub fn conditioning_device(&self, input: &Tensor<f32>, true_device: usize) -> Result<Option<DeviceOneHot>> {
        let devices = self.scene.config().devices;
        match (self.strategy, &self.device) {
            (StrategyKind::MultiTask, Some(dnet)) => Ok(Some(predicted_onehot(&dnet.logits(input)?))),
            (StrategyKind::MultiTask, None) => Err(contract_err!("multi_task model lacks its device network")),
            (StrategyKind::TeacherForcing, _) => Ok(Some(DeviceOneHot::new(true_device, devices)?)),
            _ => Ok(None),
        }
    }

    /// Runs on an already standardized input.
    pub fn forward(&self, input: &Tensor<f32>, true_device: usize) -> Result<ClipOutput> {
        let onehot = self.conditioning_device(input, true_device)?;
        let pred = self.scene.predict(input, onehot)?;
        Ok(ClipOutput {
            scores: pred.scores,
            device_used: onehot.map(|o| o.device()),
            attention: pred.attention,
        })
    }

    pub fn classify(&self, spec: &Spectrogram, true_device: usize) -> Result<ClipOutput> {
        self.forward(&self.normalization.apply(spec), true_device)
    }

    pub fn evaluate_samples(&self, samples: &[Sample]) -> Result<Vec<Prediction>> {
        samples
            .iter()
            .map(|s| {
                let out = self.forward(&s.input, s.device)?;
                Ok(Prediction {
                    truth: s.scene,
                    predicted: argmax(&out.scores),
                    device: s.device,
                })
            })
            .collect()
    }

    pub fn evaluate(&self, manifest: &DatasetManifest) -> Result<Vec<Prediction>> {
        let samples = load_samples(manifest, &self.normalization)?;
        self.evaluate_samples(&samples)
    }

    pub fn to_records(&self) -> Vec<(String, Tensor<f32>)> {
        let mut records = vec![
            ("scene.meta".to_string(), self.scene.meta()),
            (
                "train.strategy".to_string(),
                Tensor::new(&[1], vec![self.strategy.code() as f32]).unwrap(),
            ),
            (
                "norm.stats".to_string(),
                Tensor::new(&[2], vec![self.normalization.mean, self.normalization.std]).unwrap(),
            ),
        ];
        records.extend(self.scene.params().iter().map(|(n, t)| (n.to_string(), t.clone())));
        if let Some(d) = &self.device {
            records.push(("device.meta".to_string(), d.meta()));
            records.extend(d.params().iter().map(|(n, t)| (n.to_string(), t.clone())));
        }
        records
    }

    pub fn from_records(records: &[(String, Tensor<f32>)]) -> Result<Self> {
        let get = |name: &str| {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Format(format!("model file lacks {name}")))
        };
        let strategy = *StrategyKind::ALL
            .get(get("train.strategy")?.data()[0] as usize)
            .ok_or_else(|| Error::Format("invalid strategy code".into()))?;
        let norm = get("norm.stats")?;
        if norm.len() != 2 {
            return Err(Error::Format("norm.stats must hold mean and std".into()));
        }
        let config = SceneNet::<f32>::config_from_meta(get("scene.meta")?)?;
        let mut scene = build_scene_net::<f32>(config, 0).map_err(|e| Error::Format(e.to_string()))?;
        load_params(scene.params_mut(), records)?;
        let device = match records.iter().any(|(n, _)| n == "device.meta") {
            true => {
                let dcfg = DeviceNet::<f32>::config_from_meta(get("device.meta")?)?;
                let mut d = DeviceNet::build(dcfg, 0).map_err(|e| Error::Format(e.to_string()))?;
                load_params(d.params_mut(), records)?;
                Some(d)
            }
            false => None,
        };
        Ok(TrainedModel {
            strategy,
            scene,
            device,
            normalization: Normalization {
                mean: norm.data()[0],
                std: norm.data()[1],
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_model(path, &self.to_records())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(&read_model(path)?)
    }
}

pub fn load_samples(manifest: &DatasetManifest, norm: &Normalization) -> Result<Vec<Sample>> {
    manifest
        .records
        .iter()
        .map(|r| {
            Ok(Sample {
                input: norm.apply(&manifest.load_clip(r)?),
                scene: r.scene,
                device: r.device,
            })
        })
        .collect()
}

/// Per-sample loss values and parameter gradients.
#[derive(Clone, Debug)]
pub struct SampleGradients {
    pub scene_loss: f64,
    pub device_loss: f64,
    pub scene: Vec<Tensor<f32>>,
    pub device: Option<Vec<Tensor<f32>>>,
    /// Device the scene network was conditioned on.
    pub conditioned_on: Option<usize>,
}

/// Forward and backward pass of the combined loss on one clip.
pub fn sample_gradients(
    strategy: StrategyKind,
    scene: &SceneNet<f32>,
    device_net: Option<&DeviceNet<f32>>,
    sample: &Sample,
    lambda: f64,
) -> Result<SampleGradients> {
    let floor = PROB_FLOOR as f32;
    let mut tape = Tape::new();
    let sb = scene.params().bind(&mut tape, true);
    let db = device_net.map(|d| d.params().bind(&mut tape, true));
    let x = tape.constant(sample.input.clone());

    let mut device_term = None;
    let onehot = match strategy {
        StrategyKind::MultiTask => {
            let dnet = device_net.ok_or_else(|| contract_err!("multi_task needs a device network"))?;
            let out = dnet.forward(&mut tape, db.as_ref().unwrap(), x)?;
            let probs = tape.softmax(out.logits, 0)?;
            let ld = tape.nll(probs, sample.device, floor)?;
            device_term = Some(ld);
            Some(predicted_onehot(tape.value(out.logits).data()))
        }
        StrategyKind::TeacherForcing => Some(DeviceOneHot::new(sample.device, scene.config().devices)?),
        _ => None,
    };
    let mask = onehot.map(|o| scene.mask_for(o)).transpose()?;
    let out = scene.forward(&mut tape, &sb, x, mask.as_ref())?;
    let ls = tape.nll(out.scores, sample.scene, floor)?;
    let scene_loss = tape.value(ls).item() as f64;
    let (total, device_loss) = match device_term {
        Some(ld) => {
            let weighted = tape.scale(ld, lambda as f32);
            (tape.add(ls, weighted)?, tape.value(ld).item() as f64)
        }
        None => (ls, 0.0),
    };
    let mut grads = tape.backward(total)?;
    Ok(SampleGradients {
        scene_loss,
        device_loss,
        scene: sb.collect(&mut grads, scene.params()),
        device: match (db, device_net) {
            (Some(b), Some(d)) => Some(b.collect(&mut grads, d.params())),
            _ => None,
        },
        conditioned_on: onehot.map(|o| o.device()),
    })
}

fn accumulate(acc: &mut Option<Vec<Tensor<f32>>>, grads: Vec<Tensor<f32>>) {
    match acc {
        None => *acc = Some(grads),
        Some(a) => {
            for (t, g) in a.iter_mut().zip(grads) {
                for (x, y) in t.data_mut().iter_mut().zip(g.data()) {
                    *x += *y;
                }
            }
        }
    }
}

fn averaged(acc: Option<Vec<Tensor<f32>>>, n: usize) -> Vec<Tensor<f32>> {
    let scale = 1.0 / n as f32;
    acc.unwrap_or_default().into_iter().map(|t| t.map(|v| v * scale)).collect()
}

fn accuracy(predictions: &[Prediction]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    predictions.iter().filter(|p| p.truth == p.predicted).count() as f64 / predictions.len() as f64
}

fn device_accuracy(dnet: &DeviceNet<f32>, samples: &[Sample]) -> Result<f64> {
    let mut correct = 0;
    for s in samples {
        if argmax(&dnet.logits(&s.input)?) == s.device {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Train and validation clips for `config`, in manifest order.
pub fn training_splits(config: &TrainConfig, data: &DatasetManifest) -> Result<(DatasetManifest, DatasetManifest)> {
    let keep_device = |m: DatasetManifest| match config.device {
        Some(d) => m.filter(|r| r.device == d),
        None => m,
    };
    let train_all = keep_device(data.in_split(Split::Train));
    let explicit_val = keep_device(data.in_split(Split::Validation));
    let (train, val) = if !explicit_val.is_empty() || config.validation_fraction == 0.0 {
        (train_all, explicit_val)
    } else {
        let (t, v, _) = split(&train_all, (1.0 - config.validation_fraction, config.validation_fraction, 0.0), config.seed)?;
        (t, v)
    };
    if train.is_empty() {
        return Err(contract_err!("training split is empty"));
    }
    if config.strategy == StrategyKind::MultiTask && val.is_empty() {
        return Err(contract_err!("multi_task needs a non-empty validation split"));
    }
    Ok((train, val))
}

/// Trains on the manifest's train split; validation clips come from the
/// manifest's validation split or are carved from train.
pub fn train(config: &TrainConfig, data: &DatasetManifest) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    if let Some(d) = config.device {
        if d >= data.devices() {
            return Err(Error::Config(format!("device {d} out of range for {} devices", data.devices())));
        }
    }
    let (train_set, val_set) = training_splits(config, data)?;
    let train_specs: Vec<Spectrogram> = train_set
        .records
        .iter()
        .map(|r| train_set.load_clip(r))
        .collect::<Result<_>>()?;
    let norm = Normalization::fit(&train_specs);
    let samples: Vec<Sample> = train_specs
        .iter()
        .zip(&train_set.records)
        .map(|(s, r)| Sample {
            input: norm.apply(s),
            scene: r.scene,
            device: r.device,
        })
        .collect();
    drop(train_specs);
    let val = load_samples(&val_set, &norm)?;
    train_samples(config, data.scenes(), data.devices(), &samples, &val, norm)
}

/// Training loop over in-memory standardized samples.
pub fn train_samples(
    config: &TrainConfig,
    scenes: usize,
    devices: usize,
    samples: &[Sample],
    validation: &[Sample],
    normalization: Normalization,
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    let first = samples.first().ok_or_else(|| contract_err!("training split is empty"))?;
    let (_, bins, frames) = first.input.dims3()?;
    let start = Instant::now();

    let mut scene = build_scene_net::<f32>(config.scene_config(scenes, devices, bins, frames), config.seed)?;
    let mut device_net = match config.strategy {
        StrategyKind::MultiTask => Some(DeviceNet::<f32>::build(config.device_config(devices, bins, frames), config.seed)?),
        _ => None,
    };
    let adam = AdamConfig::default();
    let mut scene_state = AdamState::new(scene.params(), adam);
    let mut device_state = device_net.as_ref().map(|d| AdamState::new(d.params(), adam));
    let mut schedule = LambdaSchedule::new(config.lambda_before, config.lambda_after, config.lambda_threshold);

    let mut report = TrainReport {
        strategy: config.strategy,
        scene_loss: Vec::with_capacity(config.iterations),
        device_loss: Vec::with_capacity(config.iterations),
        loss: Vec::with_capacity(config.iterations),
        lr: Vec::with_capacity(config.iterations),
        lambda: Vec::with_capacity(config.iterations),
        device_accuracy: Vec::with_capacity(config.iterations),
        evaluations: Vec::new(),
        wall_clock_seconds: 0.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a41);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut last_device_acc = None;

    for it in 0..config.iterations {
        let lr = lr_at(it, config.lr, config.lr_decay, config.lr_period);
        let lambda = schedule.current();
        let mut scene_acc = None;
        let mut device_acc = None;
        let (mut ls_sum, mut ld_sum) = (0.0, 0.0);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let s = &samples[order[cursor]];
            cursor += 1;
            let g = sample_gradients(config.strategy, &scene, device_net.as_ref(), s, lambda)?;
            ls_sum += g.scene_loss;
            ld_sum += g.device_loss;
            accumulate(&mut scene_acc, g.scene);
            if let Some(dg) = g.device {
                accumulate(&mut device_acc, dg);
            }
        }
        let b = config.batch_size as f64;
        let (ls, ld) = (ls_sum / b, ld_sum / b);
        let total = multitask_loss(ls, ld, if device_net.is_some() { lambda } else { 0.0 });
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        let at_iteration = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("iteration {it}: {m}")),
            other => other,
        };
        adam_step(scene.params_mut(), &averaged(scene_acc, config.batch_size), &mut scene_state, lr)
            .map_err(at_iteration)?;
        if let (Some(d), Some(st)) = (device_net.as_mut(), device_state.as_mut()) {
            adam_step(d.params_mut(), &averaged(device_acc, config.batch_size), st, lr).map_err(at_iteration)?;
        }
        report.scene_loss.push(ls);
        report.device_loss.push(ld);
        report.loss.push(total);
        report.lr.push(lr);
        report.lambda.push(lambda);
        report.device_accuracy.push(last_device_acc);

        if (it + 1) % config.eval_interval == 0 || it + 1 == config.iterations {
            if let Some(d) = &device_net {
                if !validation.is_empty() {
                    let acc = device_accuracy(d, validation)?;
                    schedule.observe(acc);
                    last_device_acc = Some(acc);
                }
            }
            let model = TrainedModel {
                strategy: config.strategy,
                scene: scene.clone(),
                device: device_net.clone(),
                normalization,
            };
            let scene_accuracy = if validation.is_empty() {
                0.0
            } else {
                accuracy(&model.evaluate_samples(validation)?)
            };
            report.evaluations.push(EvalPoint {
                iteration: it,
                device_accuracy: last_device_acc,
                scene_accuracy,
            });
        }
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((
        TrainedModel {
            strategy: config.strategy,
            scene,
            device: device_net,
            normalization,
        },
        report,
    ))
}
