//! Evaluation: class-wise accuracy per device, confusion matrices, a pooled
//! two-proportion z-test, attention heat maps and an empirical
//! receptive-field prober.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{contract_err, Error, Result};
use crate::network::{TopologyKind, Topology, LAYERS};
use crate::tensor::{Padding, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prediction {
    pub truth: usize,
    pub predicted: usize,
    pub device: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceMetrics {
    /// Accuracy per class name; classes without clips on this device are
    /// left out.
    pub classes: BTreeMap<String, f64>,
    /// Unweighted mean over the included classes.
    pub average: f64,
    pub clips: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub devices: BTreeMap<String, DeviceMetrics>,
    /// Mean of the per-device averages.
    pub overall: f64,
    pub warnings: Vec<String>,
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics are serializable")
    }

    pub fn device(&self, name: &str) -> Option<&DeviceMetrics> {
        self.devices.get(name)
    }
}

fn check_labels(predictions: &[Prediction], classes: usize, devices: usize) -> Result<()> {
    for p in predictions {
        if p.truth >= classes || p.predicted >= classes || p.device >= devices {
            return Err(contract_err!("prediction {p:?} outside {classes} classes / {devices} devices"));
        }
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per device: correct / total for each class, then the unweighted mean over
/// classes; overall is the mean over devices that have clips.
pub fn classwise_accuracy(predictions: &[Prediction], class_names: &[String], device_names: &[String]) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(contract_err!("no predictions to evaluate"));
    }
    check_labels(predictions, class_names.len(), device_names.len())?;
    let mut devices = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut averages = Vec::new();
    for (d, dname) in device_names.iter().enumerate() {
        let mine: Vec<&Prediction> = predictions.iter().filter(|p| p.device == d).collect();
        if mine.is_empty() {
            continue;
        }
        let mut classes = BTreeMap::new();
        let mut accs = Vec::new();
        for (k, kname) in class_names.iter().enumerate() {
            let total = mine.iter().filter(|p| p.truth == k).count();
            if total == 0 {
                warnings.push(format!("device {dname}: class {kname} has no clips and is excluded"));
                continue;
            }
            let correct = mine.iter().filter(|p| p.truth == k && p.predicted == k).count();
            let acc = correct as f64 / total as f64;
            classes.insert(kname.clone(), acc);
            accs.push(acc);
        }
        let average = mean(&accs);
        averages.push(average);
        devices.insert(
            dname.clone(),
            DeviceMetrics {
                classes,
                average,
                clips: mine.len(),
            },
        );
    }
    Ok(Metrics {
        devices,
        overall: mean(&averages),
        warnings,
    })
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class accuracy, `None` for classes without clips.
    pub fn class_accuracies(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row[k] as f64 / total as f64)
            })
            .collect()
    }

    pub fn average_accuracy(&self) -> Option<f64> {
        let accs: Vec<f64> = self.class_accuracies().into_iter().flatten().collect();
        (!accs.is_empty()).then(|| mean(&accs))
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = format!("true\\predicted,{}\n", class_names.join(","));
        for (name, row) in class_names.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }
}

pub fn confusion(predictions: &[Prediction], classes: usize) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::new(classes);
    for p in predictions {
        if p.truth >= classes || p.predicted >= classes {
            return Err(contract_err!("prediction {p:?} outside {classes} classes"));
        }
        m.counts[p.truth][p.predicted] += 1;
    }
    Ok(m)
}

/// One-tailed upper p-value for "system a is more accurate than system b",
/// using the pooled two-proportion z statistic.
pub fn one_tailed_ztest(correct_a: u64, n_a: u64, correct_b: u64, n_b: u64) -> Result<f64> {
    if n_a == 0 || n_b == 0 {
        return Err(contract_err!("sample sizes must be positive"));
    }
    if correct_a > n_a || correct_b > n_b {
        return Err(contract_err!("correct counts exceed sample sizes"));
    }
    Ok(0.5 * erfc(ztest_statistic(correct_a, n_a, correct_b, n_b) / std::f64::consts::SQRT_2))
}

pub fn ztest_statistic(correct_a: u64, n_a: u64, correct_b: u64, n_b: u64) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let (pa, pb) = (correct_a as f64 / na, correct_b as f64 / nb);
    let pooled = (correct_a + correct_b) as f64 / (na + nb);
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (pa - pb) / se
    }
}

pub const PGM_MAXVAL: u32 = 255;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    pub pixels: Vec<u8>,
}

/// Attention of one class as 8-bit levels scaled by the class maximum.
pub fn heatmap_pixels(attention: &Tensor<f32>, class: usize) -> Result<PgmImage> {
    let (k, p, q) = attention.dims3()?;
    if class >= k {
        return Err(contract_err!("class {class} out of range for {k} attention maps"));
    }
    let plane = &attention.data()[class * p * q..(class + 1) * p * q];
    if plane.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Numeric("attention weights must be finite and non-negative".into()));
    }
    let max = plane.iter().copied().fold(0.0f32, f32::max);
    if max <= 0.0 {
        return Err(Error::Numeric("attention map is identically zero".into()));
    }
    let pixels = plane
        .iter()
        .map(|&v| (PGM_MAXVAL as f64 * v as f64 / max as f64).round() as u8)
        .collect();
    Ok(PgmImage {
        width: q,
        height: p,
        maxval: PGM_MAXVAL,
        pixels,
    })
}

pub fn encode_pgm(img: &PgmImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage> {
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // `#` comments allowed, one whitespace byte before the raster.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("PGM header ends early".into()));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Format("PGM header is not ASCII".into()))?);
    }
    if tokens[0] != "P5" {
        return Err(Error::Format(format!("expected P5, found {:?}", tokens[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM header field {s:?}")));
    let (width, height, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let raster = &bytes[(pos + 1).min(bytes.len())..];
    let n = width * height;
    if raster.len() < n {
        return Err(Error::Truncated(format!("PGM raster has {} of {n} bytes", raster.len())));
    }
    Ok(PgmImage {
        width,
        height,
        maxval: maxval as u32,
        pixels: raster[..n].to_vec(),
    })
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("csv")
}

/// Writes the PGM heat map and a CSV of the raw weights (one row per
/// frequency bin) next to it. Returns the sidecar path.
pub fn export_heatmap(attention: &Tensor<f32>, class: usize, out_path: &Path) -> Result<PathBuf> {
    let img = heatmap_pixels(attention, class)?;
    let (_, p, q) = attention.dims3()?;
    let plane = &attention.data()[class * p * q..(class + 1) * p * q];
    let mut csv = String::new();
    for row in plane.chunks(q) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(out_path, encode_pgm(&img)).map_err(|e| Error::io(out_path, e))?;
    let side = sidecar_path(out_path);
    fs::write(&side, csv).map_err(|e| Error::io(&side, e))?;
    Ok(side)
}

pub fn read_heatmap_csv(path: &Path) -> Result<Vec<Vec<f32>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|c| {
                    c.parse::<f32>().map_err(|_| Error::Parse {
                        line: i + 1,
                        message: format!("{c:?} is not a number"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Empirical and analytic receptive-field sizes at one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RFReport {
    pub topology: TopologyKind,
    pub layer: usize,
    pub kernel: usize,
    /// Claimed size with local pooling, `2^(l-1)·k`.
    pub claimed_with_pool: usize,
    /// Claimed size without pooling, constant `k`.
    pub claimed_no_pool: usize,
    /// Claimed size with dilations 1, 2, 4, 8: `2^(l-1)·k - 1`.
    pub claimed_atrous: usize,
    /// Claim for this report's topology.
    pub claimed: usize,
    /// Standard theory: each convolution adds `(k-1)·d·j`, each 2×2 pool adds
    /// `j`, where `j` is the input stride of the layer.
    pub standard: usize,
    /// Bounding box (height, width) of input bins whose perturbation changes
    /// the probed unit.
    pub perturbation: (usize, usize),
    /// Bounding box of input bins with non-zero gradient of the probed unit.
    pub gradient: (usize, usize),
    pub input: (usize, usize),
}

impl RFReport {
    pub fn probes_agree(&self) -> bool {
        self.perturbation == self.gradient
    }

    pub fn matches_claim(&self) -> bool {
        self.perturbation == (self.claimed, self.claimed)
    }

    pub fn matches_standard(&self) -> bool {
        self.perturbation == (self.standard, self.standard)
    }
}

impl fmt::Display for RFReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flag = |ok: bool| if ok { "" } else { "  [differs from empirical]" };
        writeln!(f, "topology {} layer {} kernel {}×{}", self.topology, self.layer, self.kernel, self.kernel)?;
        writeln!(f, "  claimed with_pool  {0}×{0}", self.claimed_with_pool)?;
        writeln!(f, "  claimed no_pool    {0}×{0}", self.claimed_no_pool)?;
        writeln!(f, "  claimed atrous     {0}×{0}", self.claimed_atrous)?;
        writeln!(f, "  claimed (this)     {0}×{0}{1}", self.claimed, flag(self.matches_claim()))?;
        writeln!(f, "  standard theory    {0}×{0}{1}", self.standard, flag(self.matches_standard()))?;
        writeln!(f, "  empirical (perturbation) {}×{}", self.perturbation.0, self.perturbation.1)?;
        write!(
            f,
            "  empirical (gradient)     {}×{}{}",
            self.gradient.0,
            self.gradient.1,
            if self.probes_agree() { "" } else { "  [probes disagree]" }
        )
    }
}

pub fn standard_receptive_field(topology: &Topology, kernel: usize, layer: usize) -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for l in 0..layer {
        rf += (kernel - 1) * topology.dilations[l] * jump;
        if topology.pool[l] && l + 1 < layer {
            rf += jump;
            jump *= 2;
        }
    }
    rf
}

fn bounding_box(mask: &[bool], width: usize) -> (usize, usize) {
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (r, c) = (i / width, i % width);
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    if r0 == usize::MAX {
        (0, 0)
    } else {
        (r1 - r0 + 1, c1 - c0 + 1)
    }
}

/// Probes one-channel versions of the scene topology with every weight 0.01
/// and zero biases, so every unit is active and every path carries positive
/// influence. The probed unit is the centre of layer `layer`'s activation,
/// before any pooling that follows it.
pub fn probe_receptive_field(kind: TopologyKind, kernel: usize, layer: usize) -> Result<RFReport> {
    if !(1..=LAYERS).contains(&layer) {
        return Err(Error::Config(format!("layer must be in 1..={LAYERS}, got {layer}")));
    }
    if kernel % 2 == 0 {
        return Err(Error::Config(format!("kernel size must be odd, got {kernel}")));
    }
    let topology = Topology::new(kind);
    let standard = standard_receptive_field(&topology, kernel, layer);
    let side = (2 * standard + 8).div_ceil(16) * 16;
    let kernel_t = Tensor::<f64>::full(&[1, 1, kernel, kernel], 0.01);

    let run = |input: Tensor<f64>, grad: bool| -> Result<(f64, Option<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(input, grad);
        let mut m = x;
        let mut out = x;
        for l in 0..layer {
            let w = tape.constant(kernel_t.clone());
            let z = tape.conv2d(m, w, None, topology.dilations[l], Padding::Same)?;
            out = tape.relu(z);
            m = if topology.pool[l] { tape.max_pool2(out)? } else { out };
        }
        let (_, p, q) = tape.value(out).dims3()?;
        let flat = tape.flatten(out);
        let center = (p / 2) * q + q / 2;
        let pick = tape.constant(Tensor::from_fn(&[p * q], |i| if i == center { 1.0 } else { 0.0 }));
        let picked = tape.mul(flat, pick)?;
        let unit = tape.sum(picked);
        let value = tape.value(unit).item();
        let g = if grad { tape.backward(unit)?.take(x) } else { None };
        Ok((value, g))
    };

    let base = Tensor::<f64>::full(&[1, side, side], 1.0);
    let (reference, grad) = run(base.clone(), true)?;
    let grad = grad.ok_or_else(|| contract_err!("probe input received no gradient"))?;
    let gradient = bounding_box(&grad.data().iter().map(|&g| g != 0.0).collect::<Vec<_>>(), side);

    let mut influenced = vec![false; side * side];
    for (i, flag) in influenced.iter_mut().enumerate() {
        let mut x = base.clone();
        x.data_mut()[i] += 1.0;
        *flag = run(x, false)?.0 != reference;
    }
    let perturbation = bounding_box(&influenced, side);

    let claimed_with_pool = (1 << (layer - 1)) * kernel;
    let claimed_no_pool = kernel;
    let claimed_atrous = (1 << (layer - 1)) * kernel - 1;
    let claimed = match kind {
        TopologyKind::WithPool => claimed_with_pool,
        TopologyKind::NoPool => claimed_no_pool,
        TopologyKind::Atrous => claimed_atrous,
    };
    Ok(RFReport {
        topology: kind,
        layer,
        kernel,
        claimed_with_pool,
        claimed_no_pool,
        claimed_atrous,
        claimed,
        standard,
        perturbation,
        gradient,
        input: (side, side),
    })
}
