use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use caanet::audiofront::{log_mel, read_wav, resample_linear, LogMelConfig, TARGET_RATE};
use caanet::dataset::{generate_synthetic, load_manifest_with, read_spectrogram, write_spectrogram};
use caanet::evalviz::{classwise_accuracy, confusion, export_heatmap, one_tailed_ztest, probe_receptive_field};
use caanet::tensor::argmax;
use caanet::trainer::train;
use caanet::{Error, HeadKind, Split, StrategyKind, SyntheticConfig, TopologyKind, TrainConfig, TrainedModel};
use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "caanet", version, about = "Device-robust acoustic scene classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic spectrogram corpus and its manifest.
    GenData(GenData),
    /// Convert WAV files to log-mel spectrograms.
    Features(Features),
    /// Train a model from a config file.
    Train(Train),
    /// Evaluate a model on one split of a manifest.
    Eval(Eval),
    /// Export an attention heat map for one clip.
    Heatmap(Heatmap),
    /// Measure the receptive field of a topology.
    ProbeRf(ProbeRf),
    /// One-tailed two-proportion z-test.
    Ztest(Ztest),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    #[arg(long, default_value_t = 3)]
    devices: usize,
    #[arg(long, default_value_t = 8)]
    train_per_cell: usize,
    #[arg(long, default_value_t = 3)]
    test_per_cell: usize,
    #[arg(long, default_value_t = 320)]
    frames: usize,
    #[arg(long, default_value_t = 1.0)]
    variability: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Features {
    /// A WAV file, or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output file, or directory when the input is one.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    scenes: usize,
    #[arg(long, default_value_t = 3)]
    devices: usize,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    topology: Option<TopologyKind>,
    #[arg(long)]
    head: Option<HeadKind>,
    #[arg(long)]
    condition_layer: Option<usize>,
    #[arg(long)]
    device: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    #[arg(long)]
    confusion_out: Option<PathBuf>,
}

#[derive(Args)]
struct Heatmap {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    spectrogram: PathBuf,
    /// Recording device index, used by teacher-forced models.
    #[arg(long, default_value_t = 0)]
    device: usize,
    /// Class index; the predicted class when omitted.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeRf {
    #[arg(long)]
    topology: TopologyKind,
    #[arg(long)]
    layer: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
}

#[derive(Args)]
struct Ztest {
    /// Correct over total for system A, e.g. 680/1000.
    #[arg(long, value_parser = parse_ratio)]
    a: (u64, u64),
    #[arg(long, value_parser = parse_ratio)]
    b: (u64, u64),
}

fn parse_ratio(s: &str) -> Result<(u64, u64), String> {
    let (c, n) = s.split_once('/').ok_or_else(|| format!("expected correct/total, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|_| format!("{v:?} is not a count"));
    Ok((parse(c)?, parse(n)?))
}

fn write_file(path: &Path, text: &str) -> caanet::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn convert(input: &Path, output: &Path) -> caanet::Result<()> {
    let mut clip = read_wav(input)?;
    if clip.sample_rate() != TARGET_RATE {
        clip = resample_linear(&clip, TARGET_RATE)?;
    }
    let spec = log_mel(&clip, &LogMelConfig::default())?;
    write_spectrogram(&spec, output)
}

fn run(command: Command) -> caanet::Result<()> {
    match command {
        Command::GenData(a) => {
            let mut cfg = SyntheticConfig::new(a.scenes, a.devices, a.train_per_cell, a.seed).with_test(a.test_per_cell);
            cfg.frames = a.frames;
            cfg.variability = a.variability;
            let m = generate_synthetic(&cfg, &a.out)?;
            println!("wrote {} clips to {}", m.len(), a.out.display());
        }
        Command::Features(a) => {
            if a.input.is_dir() {
                let entries = fs::read_dir(&a.input).map_err(|e| Error::io(&a.input, e))?;
                let mut wavs: Vec<PathBuf> = entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                    .collect();
                wavs.sort();
                fs::create_dir_all(&a.output).map_err(|e| Error::io(&a.output, e))?;
                for wav in &wavs {
                    let out = a.output.join(wav.file_stem().unwrap()).with_extension("lmsp");
                    convert(wav, &out)?;
                }
                println!("converted {} files", wavs.len());
            } else {
                convert(&a.input, &a.output)?;
            }
        }
        Command::Train(a) => {
            let mut cfg = match &a.config {
                Some(path) => TrainConfig::load(path)?,
                None => TrainConfig::default(),
            };
            if let Some(v) = a.strategy {
                cfg.strategy = v;
            }
            if let Some(v) = a.topology {
                cfg.topology = v;
            }
            if let Some(v) = a.head {
                cfg.head = v;
            }
            if a.condition_layer.is_some() {
                cfg.condition_layer = a.condition_layer;
            }
            if a.device.is_some() {
                cfg.device = a.device;
            }
            if let Some(v) = a.iterations {
                cfg.iterations = v;
            }
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            cfg.validate()?;
            let data = load_manifest_with(&a.data.manifest, a.data.scenes, a.data.devices)?;
            let (model, report) = train(&cfg, &data)?;
            model.save(&a.model_out)?;
            if let Some(path) = &a.report_out {
                write_file(path, &report.to_json())?;
            }
            let last = report.evaluations.last();
            println!(
                "trained {} for {} iterations in {:.1}s, final loss {:.4}, validation scene accuracy {}",
                cfg.strategy,
                report.loss.len(),
                report.wall_clock_seconds,
                report.loss.last().copied().unwrap_or(f64::NAN),
                last.map_or("n/a".into(), |e| format!("{:.3}", e.scene_accuracy)),
            );
        }
        Command::Eval(a) => {
            let model = TrainedModel::load(&a.model)?;
            let data = load_manifest_with(&a.data.manifest, a.data.scenes, a.data.devices)?;
            let part = data.in_split(a.split);
            let preds = model.evaluate(&part)?;
            let metrics = classwise_accuracy(&preds, &data.scene_names, &data.device_names)?;
            for w in &metrics.warnings {
                eprintln!("warning: {w}");
            }
            for (name, d) in &metrics.devices {
                println!("device {name}: {:.4} over {} clips", d.average, d.clips);
            }
            println!("overall {:.4}", metrics.overall);
            if let Some(path) = &a.metrics_out {
                write_file(path, &metrics.to_json())?;
            }
            if let Some(path) = &a.confusion_out {
                let cm = confusion(&preds, data.scenes())?;
                write_file(path, &cm.to_csv(&data.scene_names))?;
            }
        }
        Command::Heatmap(a) => {
            let model = TrainedModel::load(&a.model)?;
            let spec = read_spectrogram(&a.spectrogram)?;
            let out = model.classify(&spec, a.device)?;
            let attention = out
                .attention
                .ok_or_else(|| Error::Config(format!("head {} has no attention map", model.scene.config().head)))?;
            let class = a.class.unwrap_or_else(|| argmax(&out.scores));
            let sidecar = export_heatmap(&attention, class, &a.out)?;
            println!("class {class}: wrote {} and {}", a.out.display(), sidecar.display());
        }
        Command::ProbeRf(a) => {
            println!("{}", probe_receptive_field(a.topology, a.kernel, a.layer)?);
        }
        Command::Ztest(a) => {
            let p = one_tailed_ztest(a.a.0, a.a.1, a.b.0, a.b.1)?;
            println!("p = {p:.6}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            eprint!("{rendered}");
            if !rendered.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
