//! Clip manifests, stratified splits, LMSP spectrogram files and a seeded
//! synthetic multi-device scene generator.
//!
//! The generator works directly in log-mel space. A clip is a scene template
//! (spectral background plus band-limited events repeating with a
//! scene-specific rhythm) with per-clip jitter, passed through a device
//! profile in the power domain:
//!
//! ```text
//! y = ln(gain · tilt[f] · exp(x) + floor[f])
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audiofront::{Spectrogram, MEL_BINS};
use crate::error::{Error, Result};
use crate::tensor::serialize::ByteReader;

pub const SPEC_MAGIC: &[u8; 4] = b"LMSP";
pub const SPEC_VERSION: u32 = 1;
pub const MANIFEST_HEADER: &str = "clip_id,scene,device,path";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SYNTHETIC_FRAMES: usize = 320;

const MAX_SPEC_ELEMENTS: u64 = 1 << 28;

pub const DEFAULT_SCENE_NAMES: [&str; 10] = [
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
];

pub fn encode_spectrogram(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * spec.values().len());
    out.extend_from_slice(SPEC_MAGIC);
    out.extend_from_slice(&SPEC_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.bins() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.frames() as u32).to_le_bytes());
    for v in spec.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_spectrogram(bytes: &[u8]) -> Result<Spectrogram> {
    let mut r = ByteReader::new(bytes);
    if r.take(4, "magic")? != SPEC_MAGIC {
        return Err(Error::Format("spectrogram does not start with LMSP".into()));
    }
    let version = r.u32("version")?;
    if version != SPEC_VERSION {
        return Err(Error::Format(format!("unsupported spectrogram version {version}")));
    }
    let bins = r.u32("bin count")?;
    let frames = r.u32("frame count")?;
    let count = bins as u64 * frames as u64;
    if count == 0 || count > MAX_SPEC_ELEMENTS {
        return Err(Error::Format(format!("implausible spectrogram size {bins}×{frames}")));
    }
    let values = r.f32s(count as usize, "spectrogram payload")?;
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after spectrogram payload".into()));
    }
    Spectrogram::new(bins as usize, frames as usize, values)
}

pub fn write_spectrogram(spec: &Spectrogram, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_spectrogram(spec)).map_err(|e| Error::io(path, e))
}

pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_spectrogram(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::Validation(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClipRecord {
    pub clip_id: String,
    pub scene: usize,
    pub device: usize,
    /// Relative to the manifest root.
    pub path: PathBuf,
}

impl ClipRecord {
    /// Split named by the first path component, if it is one.
    pub fn split(&self) -> Option<Split> {
        match self.path.components().next() {
            Some(Component::Normal(s)) => s.to_str().and_then(|s| s.parse().ok()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub scene_names: Vec<String>,
    pub device_names: Vec<String>,
    pub records: Vec<ClipRecord>,
}

pub fn default_scene_names(scenes: usize) -> Vec<String> {
    if scenes == DEFAULT_SCENE_NAMES.len() {
        DEFAULT_SCENE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..scenes).map(|k| format!("scene{k}")).collect()
    }
}

pub fn default_device_names(devices: usize) -> Vec<String> {
    (0..devices)
        .map(|n| {
            if n < 26 {
                ((b'A' + n as u8) as char).to_string()
            } else {
                format!("D{n}")
            }
        })
        .collect()
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, scenes: usize, devices: usize, records: Vec<ClipRecord>) -> Self {
        DatasetManifest {
            root: root.into(),
            scene_names: default_scene_names(scenes),
            device_names: default_device_names(devices),
            records,
        }
    }

    pub fn scenes(&self) -> usize {
        self.scene_names.len()
    }

    pub fn devices(&self) -> usize {
        self.device_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &ClipRecord) -> PathBuf {
        self.root.join(&record.path)
    }

    pub fn load_clip(&self, record: &ClipRecord) -> Result<Spectrogram> {
        read_spectrogram(&self.resolve(record))
    }

    /// Same label space, subset of records.
    pub fn with_records(&self, records: Vec<ClipRecord>) -> Self {
        DatasetManifest {
            root: self.root.clone(),
            scene_names: self.scene_names.clone(),
            device_names: self.device_names.clone(),
            records,
        }
    }

    pub fn filter(&self, keep: impl Fn(&ClipRecord) -> bool) -> Self {
        self.with_records(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    pub fn in_split(&self, split: Split) -> Self {
        self.filter(|r| r.split() == Some(split))
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Validation("manifest has no records".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.scene >= self.scenes() {
                return Err(Error::Validation(format!(
                    "clip {}: scene {} out of range 0..{}",
                    r.clip_id,
                    r.scene,
                    self.scenes()
                )));
            }
            if r.device >= self.devices() {
                return Err(Error::Validation(format!(
                    "clip {}: device {} out of range 0..{}",
                    r.clip_id,
                    r.device,
                    self.devices()
                )));
            }
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Validation(format!("duplicated clip id {}", r.clip_id)));
            }
        }
        let train: HashSet<(usize, usize)> = self
            .records
            .iter()
            .filter(|r| r.split() == Some(Split::Train))
            .map(|r| (r.scene, r.device))
            .collect();
        if !train.is_empty() {
            for k in 0..self.scenes() {
                for n in 0..self.devices() {
                    if !train.contains(&(k, n)) {
                        return Err(Error::Validation(format!(
                            "train split has no clip for scene {k}, device {n}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            let path: Vec<String> = r
                .path
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            out.push_str(&format!("{},{},{},{}\n", r.clip_id, r.scene, r.device, path.join("/")));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_manifest(text: &str, root: &Path, scenes: usize, devices: usize) -> Result<DatasetManifest> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        Some((i, _)) => {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected header {MANIFEST_HEADER:?}"),
            })
        }
        None => return Err(Error::Validation("manifest has no records".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        }
        if fields[0].is_empty() || fields[3].is_empty() {
            return Err(parse_err("empty clip id or path".into()));
        }
        let scene = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("scene label {:?} is not an integer", fields[1])))?;
        let device = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("device label {:?} is not an integer", fields[2])))?;
        records.push(ClipRecord {
            clip_id: fields[0].to_string(),
            scene,
            device,
            path: PathBuf::from(fields[3]),
        });
    }
    let manifest = DatasetManifest::new(root, scenes, devices, records);
    manifest.validate()?;
    Ok(manifest)
}

/// Loads a manifest with the default label space of ten scenes and three
/// devices. Paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_with(path, DEFAULT_SCENE_NAMES.len(), 3)
}

pub fn load_manifest_with(path: &Path, scenes: usize, devices: usize) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &root, scenes, devices)
}

/// Stratified by (scene, device): each cell is shuffled with a seed derived
/// from `seed` and the cell, then cut by rounded fractions. When the
/// fractions sum to 1 the train part takes the remainder.
pub fn split(
    manifest: &DatasetManifest,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    let (ft, fv, fs_) = fractions;
    let total = ft + fv + fs_;
    if [ft, fv, fs_].iter().any(|f| !(0.0..=1.0).contains(f)) || total > 1.0 + 1e-9 || total <= 0.0 {
        return Err(Error::Validation(format!("invalid split fractions {fractions:?}")));
    }
    let mut cells: HashMap<(usize, usize), Vec<&ClipRecord>> = HashMap::new();
    for r in &manifest.records {
        cells.entry((r.scene, r.device)).or_default().push(r);
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort();
    let mut parts: [Vec<ClipRecord>; 3] = Default::default();
    for key in keys {
        let mut cell = cells.remove(&key).unwrap();
        cell.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        let cell_seed = seed ^ ((key.0 as u64) << 32 | key.1 as u64).wrapping_mul(0x9e3779b97f4a7c15);
        cell.shuffle(&mut ChaCha8Rng::seed_from_u64(cell_seed));
        let n = cell.len();
        let count = |f: f64| (f * n as f64).round() as usize;
        let nv = count(fv);
        let ns = count(fs_);
        let nt = if (total - 1.0).abs() < 1e-9 {
            n.checked_sub(nv + ns)
        } else {
            Some(count(ft)).filter(|&t| t + nv + ns <= n)
        }
        .ok_or_else(|| Error::Validation(format!("cell {key:?} with {n} clips cannot be split by {fractions:?}")))?;
        for (f, c) in [(ft, nt), (fv, nv), (fs_, ns)] {
            if f > 0.0 && c == 0 {
                return Err(Error::Validation(format!(
                    "cell (scene {}, device {}) with {n} clips is too small to stratify by {fractions:?}",
                    key.0, key.1
                )));
            }
        }
        let mut it = cell.into_iter().cloned();
        parts[0].extend(it.by_ref().take(nt));
        parts[1].extend(it.by_ref().take(nv));
        parts[2].extend(it.take(ns));
    }
    let [t, v, s] = parts;
    Ok((manifest.with_records(t), manifest.with_records(v), manifest.with_records(s)))
}

/// Power-domain transform of one recording device.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceProfile {
    pub gain: f32,
    /// Multiplicative, per mel bin.
    pub tilt: Vec<f32>,
    /// Additive noise power, per mel bin.
    pub floor: Vec<f32>,
    pub seed: u64,
}

impl DeviceProfile {
    pub fn identity(bins: usize) -> Self {
        DeviceProfile {
            gain: 1.0,
            tilt: vec![1.0; bins],
            floor: vec![0.0; bins],
            seed: 0,
        }
    }

    pub fn new(gain: f32, tilt: Vec<f32>, floor: Vec<f32>, seed: u64) -> Result<Self> {
        if !(gain > 0.0) || tilt.iter().any(|&t| !(t > 0.0)) || floor.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::Validation("device gain and tilt must be positive, floor non-negative".into()));
        }
        if tilt.len() != floor.len() {
            return Err(Error::Validation("tilt and floor lengths differ".into()));
        }
        Ok(DeviceProfile { gain, tilt, floor, seed })
    }

    /// Reference device, an attenuated device losing highs, and a louder,
    /// noisier device losing lows. Further devices interpolate between them.
    pub fn default_set(devices: usize, bins: usize) -> Vec<DeviceProfile> {
        let ramp = |f: usize| f as f32 / (bins.max(2) - 1) as f32;
        (0..devices)
            .map(|n| match n {
                0 => DeviceProfile::identity(bins),
                1 => DeviceProfile {
                    gain: 0.8,
                    tilt: (0..bins).map(|f| 1.0 - 0.2 * ramp(f)).collect(),
                    floor: vec![8e-4; bins],
                    seed: 1,
                },
                2 => DeviceProfile {
                    gain: 1.1,
                    tilt: (0..bins).map(|f| 0.8 + 0.2 * ramp(f)).collect(),
                    floor: vec![1.2e-3; bins],
                    seed: 2,
                },
                _ => {
                    let a = (n as f32 * 0.37).fract();
                    DeviceProfile {
                        gain: 0.8 + 0.3 * a,
                        tilt: (0..bins).map(|f| 1.0 - 0.2 * (ramp(f) - a).abs()).collect(),
                        floor: vec![1e-3 * a; bins],
                        seed: n as u64,
                    }
                }
            })
            .collect()
    }

    pub fn apply(&self, spec: &mut Spectrogram) {
        let frames = spec.frames();
        for (f, row) in spec.values_mut().chunks_mut(frames).enumerate() {
            let scale = (self.gain * self.tilt[f]).ln();
            let floor = self.floor[f];
            for v in row {
                let y = *v + scale;
                *v = if floor > 0.0 { (y.exp() + floor).ln() } else { y };
            }
        }
    }
}

/// Band-limited event in a scene template.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBand {
    pub center: usize,
    pub half_width: usize,
    pub level: f32,
}

/// Deterministic template of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneProto {
    pub bands: Vec<SceneBand>,
    /// Event repetition period and on-time, in frames.
    pub period: usize,
    pub duty: usize,
    /// Background: base level, high-frequency roll-off, ripple amplitude and
    /// ripple cycles across the mel axis.
    pub base: f32,
    pub rolloff: f32,
    pub ripple: f32,
    pub ripple_cycles: f32,
    pub ripple_phase: f32,
    /// Tonal events are steady within the on-time; noisy ones flicker.
    pub tonal: bool,
}

impl SceneProto {
    /// Scenes are told apart by the spacing of a harmonic comb spanning the
    /// mel axis (distinct per scene), by their rhythm and by their texture.
    /// All are local patterns visible anywhere on the plane; the comb offset
    /// and the background shape also differ.
    pub fn default_set(scenes: usize, bins: usize, seed: u64) -> Vec<SceneProto> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce9e);
        let max_spacing = (bins / 4).clamp(3, 12);
        let mut spacings: Vec<usize> = (3..=max_spacing).collect();
        spacings.shuffle(&mut rng);
        let periods = [8, 12, 16, 20, 24, 32];
        (0..scenes)
            .map(|k| {
                let spacing = spacings[k % spacings.len()];
                let f0 = rng.random_range(0..spacing);
                let period = periods[(k / spacings.len() + rng.random_range(0..periods.len())) % periods.len()];
                SceneProto {
                    bands: (f0..bins)
                        .step_by(spacing)
                        .map(|center| SceneBand {
                            center,
                            half_width: 1,
                            level: rng.random_range(1.5..2.5),
                        })
                        .collect(),
                    period,
                    duty: period / 2,
                    base: -6.0,
                    rolloff: rng.random_range(1.0..2.0),
                    ripple: rng.random_range(0.2..0.5),
                    ripple_cycles: rng.random_range(1.0..3.0),
                    ripple_phase: rng.random_range(0.0..std::f32::consts::TAU),
                    tonal: rng.random::<bool>(),
                }
            })
            .collect()
    }

    fn background(&self, f: usize, bins: usize) -> f32 {
        let x = f as f32 / bins as f32;
        self.base - self.rolloff * x + self.ripple * (std::f32::consts::TAU * self.ripple_cycles * x + self.ripple_phase).sin()
    }

    fn band_weight(band: &SceneBand, f: usize, shift: i64) -> f32 {
        let d = (f as i64 - band.center as i64 - shift).unsigned_abs() as usize;
        if d > band.half_width {
            0.0
        } else {
            1.0 - d as f32 / (band.half_width + 1) as f32
        }
    }

    /// The scene without any clip variation.
    pub fn template(&self, bins: usize, frames: usize) -> Spectrogram {
        self.render(bins, frames, &ClipJitter::none(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    fn render(&self, bins: usize, frames: usize, jitter: &ClipJitter, rng: &mut ChaCha8Rng) -> Spectrogram {
        let mut values = Vec::with_capacity(bins * frames);
        for f in 0..bins {
            let bg = self.background(f, bins) + jitter.offset;
            for t in 0..frames {
                let on = (t + jitter.phase) % self.period < self.duty;
                let mut v = bg;
                if on {
                    for (b, band) in self.bands.iter().enumerate() {
                        let w = Self::band_weight(band, f, jitter.shift);
                        if w > 0.0 {
                            let flicker = if self.tonal { 1.0 } else { 0.6 + 0.4 * ((t * 7 + b * 3) % 5) as f32 / 4.0 };
                            v += band.level * jitter.level_scale * w * flicker;
                        }
                    }
                }
                if jitter.noise > 0.0 {
                    v += jitter.noise * rng.sample::<f32, _>(StandardNormal);
                }
                values.push(v);
            }
        }
        Spectrogram::new(bins, frames, values).expect("non-empty template")
    }
}

struct ClipJitter {
    phase: usize,
    shift: i64,
    offset: f32,
    level_scale: f32,
    noise: f32,
}

impl ClipJitter {
    fn none() -> Self {
        ClipJitter {
            phase: 0,
            shift: 0,
            offset: 0.0,
            level_scale: 1.0,
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub scenes: usize,
    pub devices: usize,
    pub train_per_cell: usize,
    pub test_per_cell: usize,
    pub seed: u64,
    pub bins: usize,
    pub frames: usize,
    /// Master scale of all per-clip variation; 0 reproduces the templates.
    pub variability: f32,
    /// Device profiles; the default set when `None`.
    pub profiles: Option<Vec<DeviceProfile>>,
}

impl SyntheticConfig {
    pub fn new(scenes: usize, devices: usize, clips_per_cell: usize, seed: u64) -> Self {
        SyntheticConfig {
            scenes,
            devices,
            train_per_cell: clips_per_cell,
            test_per_cell: 0,
            seed,
            bins: MEL_BINS,
            frames: SYNTHETIC_FRAMES,
            variability: 1.0,
            profiles: None,
        }
    }

    pub fn with_test(mut self, test_per_cell: usize) -> Self {
        self.test_per_cell = test_per_cell;
        self
    }
}

/// Per-clip variation at unit variability.
const OFFSET_SD: f32 = 0.15;
const LEVEL_SD: f32 = 0.25;
const NOISE_SD: f32 = 0.6;
const SHIFT_SD: f32 = 0.7;

/// Synthesizes one clip of `scene` recorded on `device`; `index` selects the
/// clip's random stream.
pub fn synthesize_clip(
    config: &SyntheticConfig,
    protos: &[SceneProto],
    profiles: &[DeviceProfile],
    scene: usize,
    device: usize,
    stream: u64,
) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x2545f4914f6cdd1d) ^ stream);
    let proto = &protos[scene];
    let s = config.variability;
    let jitter = if s > 0.0 {
        ClipJitter {
            phase: rng.random_range(0..proto.period),
            shift: (s * SHIFT_SD * rng.sample::<f32, _>(StandardNormal)).round() as i64,
            offset: s * OFFSET_SD * rng.sample::<f32, _>(StandardNormal),
            level_scale: (1.0 + s * LEVEL_SD * rng.sample::<f32, _>(StandardNormal)).max(0.2),
            noise: s * NOISE_SD,
        }
    } else {
        ClipJitter::none()
    };
    let mut spec = proto.render(config.bins, config.frames, &jitter, &mut rng);
    profiles[device].apply(&mut spec);
    spec
}

/// Writes `<root>/train/*.lmsp`, `<root>/test/*.lmsp` and
/// `<root>/manifest.csv`, balanced per (scene, device) cell.
pub fn generate_synthetic(config: &SyntheticConfig, root: &Path) -> Result<DatasetManifest> {
    if config.scenes == 0 || config.devices == 0 || config.train_per_cell + config.test_per_cell == 0 {
        return Err(Error::Validation("scenes, devices and clips per cell must be positive".into()));
    }
    let profiles = match &config.profiles {
        Some(p) if p.len() == config.devices && p.iter().all(|d| d.tilt.len() == config.bins) => p.clone(),
        Some(_) => return Err(Error::Validation("one profile per device with one tilt value per bin required".into())),
        None => DeviceProfile::default_set(config.devices, config.bins),
    };
    let protos = SceneProto::default_set(config.scenes, config.bins, config.seed);
    let mut records = Vec::new();
    for (split, per_cell) in [(Split::Train, config.train_per_cell), (Split::Test, config.test_per_cell)] {
        for scene in 0..config.scenes {
            for device in 0..config.devices {
                for i in 0..per_cell {
                    let clip_id = format!("{}_s{scene:02}_d{device}_{i:03}", split.name());
                    let stream = ((split as u64) << 48) | ((scene as u64) << 32) | ((device as u64) << 16) | i as u64;
                    let spec = synthesize_clip(config, &protos, &profiles, scene, device, stream);
                    let path = PathBuf::from(split.name()).join(format!("{clip_id}.lmsp"));
                    write_spectrogram(&spec, &root.join(&path))?;
                    records.push(ClipRecord {
                        clip_id,
                        scene,
                        device,
                        path,
                    });
                }
            }
        }
    }
    let manifest = DatasetManifest::new(root, config.scenes, config.devices, records);
    manifest.write(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}
