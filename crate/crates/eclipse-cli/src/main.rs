//! `eclipse`: model inspection, watermark-layer detection, obfuscation,
//! scheme simulation, and verification experiments over the container
//! format.
//!
//! Exit codes: 0 success (including verification outcomes of any kind),
//! 2 IO/format errors, 64 usage errors. Results go to stdout or `--out`;
//! JSON-lines event logs go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eclipse_cli::container::{load_model, save_model, ContainerError};
use eclipse_cli::fixtures::{self, WatermarkSpec};
use eclipse_cli::keyfile;
use eclipse_cli::report::{detection_json, log_event, median_forward_seconds, BenchJson};
use eclipse_core::detect::{self, DetectionOutcome, FrequencyReport};
use eclipse_core::eval::{equivalence_report, gen_probes};
use eclipse_core::graph::ModelGraph;
use eclipse_core::layer::LayerNode;
use eclipse_core::obfuscate::{FrameSpec, LambdaRange, NoiseConfig, NoiseMode};
use eclipse_core::pipeline::{self, Mode, PlanParams};
use eclipse_core::watermark::{active_verify, verify, SchemeKind, Strategy};

#[derive(Parser)]
#[command(name = "eclipse", version, about = "White-box model obfuscation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a per-layer table of a model container.
    Inspect {
        /// Model container path.
        model: PathBuf,
    },
    /// Score layers by weight-spectrum volatility and flag likely
    /// watermarked ones.
    Detect(DetectArgs),
    /// Rewrite layers with the base or advanced obfuscation.
    Obfuscate(ObfuscateArgs),
    /// Embed a simulated watermark and write the key file.
    Embed(EmbedArgs),
    /// Verify a watermark as a passive or active verifier.
    Verify(VerifyArgs),
    /// Compare two models over a seeded probe set.
    Equiv(EquivArgs),
    /// Measure forward-pass runtime overhead of an obfuscated model.
    Bench(BenchArgs),
    /// Generate seeded model fixtures, optionally watermarked.
    GenFixture(GenFixtureArgs),
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Moving-average window.
    #[arg(long, default_value_t = detect::DEFAULT_WINDOW)]
    window: usize,
    /// Flagging quantile.
    #[arg(long, default_value_t = detect::DEFAULT_QUANTILE)]
    quantile: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ObfuscateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    #[arg(long)]
    seed: u64,
    /// Comma-separated layer indices; omit to obfuscate every eligible
    /// layer.
    #[arg(long, value_delimiter = ',', conflicts_with = "use_detector")]
    targets: Option<Vec<usize>>,
    /// Use the volatility detector to pick targets.
    #[arg(long)]
    use_detector: bool,
    #[arg(long, default_value_t = detect::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = detect::DEFAULT_QUANTILE)]
    quantile: f64,
    /// Split width for linear layers (default: twice the output dim).
    #[arg(long)]
    h: Option<usize>,
    /// Kernel frame: one width or top,bottom,left,right.
    #[arg(long, default_value = "1", value_parser = parse_frame)]
    frame: FrameSpec,
    #[arg(long, default_value = "min", value_parser = parse_noise_mode)]
    noise_mode: NoiseMode,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.33)]
    mu: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    lambda_lo: f64,
    #[arg(long, default_value_t = 2.0)]
    lambda_hi: f64,
    /// Try to draw a split whose first factor is non-negative so it can
    /// wear a ReLU.
    #[arg(long)]
    relu_camouflage: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the transform log JSON here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = parse_scheme)]
    scheme: SchemeKind,
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    bits: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    #[arg(long, default_value_t = 1e-3)]
    penalty: f64,
    /// Probe count for the activation scheme.
    #[arg(long, default_value_t = 16)]
    probes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    key_out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    key: PathBuf,
    /// Override the key's verification margin.
    #[arg(long)]
    delta: Option<f64>,
    /// Run the active verifier (undo attempts) instead of the passive one.
    #[arg(long)]
    active: bool,
    /// Comma-separated strategies for --active.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategies: Option<Vec<Strategy>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EquivArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 1000)]
    probes: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    obfuscated: PathBuf,
    #[arg(long, default_value_t = 64)]
    probes: usize,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenFixtureArgs {
    /// Fixture family: mlp or cnn.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long)]
    out: PathBuf,
    /// Embed a watermark of this scheme into the fixture.
    #[arg(long, value_parser = parse_scheme)]
    watermark: Option<SchemeKind>,
    #[arg(long, default_value_t = 1)]
    wm_layer: usize,
    #[arg(long, default_value_t = 256)]
    bits: usize,
    #[arg(long, default_value_t = 16)]
    probes: usize,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    rate: f64,
    #[arg(long, default_value_t = 1e-3)]
    penalty: f64,
    /// Key file path; required with --watermark.
    #[arg(long)]
    key_out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "base" => Ok(Mode::Base),
        "advanced" => Ok(Mode::Advanced),
        _ => Err(format!("unknown mode '{s}', expected base or advanced")),
    }
}

fn parse_noise_mode(s: &str) -> Result<NoiseMode, String> {
    match s {
        "min" => Ok(NoiseMode::Min),
        "median" => Ok(NoiseMode::Median),
        _ => Err(format!("unknown noise mode '{s}', expected min or median")),
    }
}

fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    match s {
        "weight-projection" => Ok(SchemeKind::WeightProjection),
        "weight-selection" => Ok(SchemeKind::WeightSelection),
        "activation-projection" => Ok(SchemeKind::ActivationProjection),
        _ => Err(format!(
            "unknown scheme '{s}', expected weight-projection, weight-selection, or activation-projection"
        )),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "reshape-truncate" => Ok(Strategy::ReshapeTruncate),
        "merge-adjacent" => Ok(Strategy::MergeAdjacent),
        "crop-zero-frame" => Ok(Strategy::CropZeroFrame),
        _ => Err(format!(
            "unknown strategy '{s}', expected reshape-truncate, merge-adjacent, or crop-zero-frame"
        )),
    }
}

fn parse_frame(s: &str) -> Result<FrameSpec, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    let nums = nums.map_err(|e| format!("invalid frame '{s}': {e}"))?;
    match nums.as_slice() {
        [w] => Ok(FrameSpec::uniform(*w)),
        [t, b, l, r] => Ok(FrameSpec {
            top: *t,
            bottom: *b,
            left: *l,
            right: *r,
        }),
        _ => Err(format!("frame '{s}' must have 1 or 4 components")),
    }
}

/// Usage-class failures exit 64, IO/format failures exit 2.
enum CmdError {
    Usage(String),
    Io(String),
}

impl From<ContainerError> for CmdError {
    fn from(e: ContainerError) -> Self {
        CmdError::Io(e.to_string())
    }
}

impl From<eclipse_core::Error> for CmdError {
    fn from(e: eclipse_core::Error) -> Self {
        use eclipse_core::Error as E;
        match e {
            E::NotEligible { .. }
            | E::NotLinear { .. }
            | E::NotConv { .. }
            | E::NoSuccessor { .. }
            | E::InvalidShape { .. }
            | E::LengthMismatch { .. }
            | E::EmptyInput => CmdError::Usage(e.to_string()),
            other => CmdError::Io(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e.to_string())
    }
}

type CmdResult = Result<(), CmdError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Inspect { model } => cmd_inspect(&model),
        Command::Detect(args) => cmd_detect(args),
        Command::Obfuscate(args) => cmd_obfuscate(args),
        Command::Embed(args) => cmd_embed(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Equiv(args) => cmd_equiv(args),
        Command::Bench(args) => cmd_bench(args),
        Command::GenFixture(args) => cmd_gen_fixture(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(64)
        }
        Err(CmdError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Write the JSON result to `--out` when given, otherwise to stdout.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> CmdResult {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    match out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_inspect(path: &Path) -> CmdResult {
    let model = load_model(path)?;
    println!("input shape: {:?}  dtype: {:?}", model.input_shape(), model.dtype_tag());
    println!("{:<6}{:<8}{:<30}{:>12}  {}", "index", "kind", "dims", "params", "activation");
    for (i, node) in model.layers().iter().enumerate() {
        let (dims, activation) = match node {
            LayerNode::Linear(l) => (
                format!("{} x {}", l.input_dim(), l.output_dim()),
                l.activation().name(),
            ),
            LayerNode::Conv(c) => (
                format!(
                    "{}x{}x{}x{} pad {:?} stride {:?}",
                    c.maps(),
                    c.channels(),
                    c.kernel_height(),
                    c.kernel_width(),
                    c.input_padding(),
                    c.stride()
                ),
                c.activation().name(),
            ),
            LayerNode::Pool(p) => (format!("window {} stride {}", p.size(), p.stride()), "-"),
        };
        println!("{:<6}{:<8}{:<30}{:>12}  {}", i, node.kind(), dims, node.param_count(), activation);
    }
    Ok(())
}

/// Per-layer scoring fans out over worker threads; ECLIPSE_THREADS caps the
/// worker count. Reports are reassembled in layer order, so the outcome is
/// schedule-independent.
fn detect_outcome(model: &ModelGraph, window: usize, quantile: f64) -> Result<DetectionOutcome, CmdError> {
    let jobs: Vec<(usize, &'static str, &[f64])> = model
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, node)| node.flat_weights().map(|w| (i, node.kind(), w)))
        .collect();
    if jobs.is_empty() {
        return Err(CmdError::Usage("model has no eligible layers".into()));
    }
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var("ECLIPSE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(available)
        .max(1);
    let workers = cap.min(jobs.len());

    let mut reports: Vec<(usize, FrequencyReport)> = Vec::with_capacity(jobs.len());
    if workers <= 1 {
        for (index, kind, weights) in &jobs {
            let report =
                detect::score_layer(*index, kind, weights, window).map_err(CmdError::from)?;
            reports.push((*index, report));
        }
    } else {
        let chunks: Vec<&[(usize, &'static str, &[f64])]> =
            jobs.chunks(jobs.len().div_ceil(workers)).collect();
        let scored = std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|(index, kind, weights)| {
                                detect::score_layer(*index, kind, weights, window)
                                    .map(|r| (*index, r))
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scoring thread panicked"))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(CmdError::from)?;
        for chunk in scored {
            reports.extend(chunk);
        }
    }
    reports.sort_by_key(|(index, _)| *index);
    let reports = reports.into_iter().map(|(_, r)| r).collect();
    detect::flag_reports(reports, window, quantile).map_err(CmdError::from)
}

fn cmd_detect(args: DetectArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let outcome = detect_outcome(&model, args.window, args.quantile)?;
    log_event(&format!(
        "scored {} layers, flagged {:?}",
        outcome.reports.len(),
        outcome.flagged
    ));
    emit(args.out.as_deref(), &detection_json(&outcome))
}

#[derive(Serialize)]
struct ObfuscateSummary {
    mode: Mode,
    targets: Vec<usize>,
    layers_before: usize,
    layers_after: usize,
    log_entries: usize,
}

fn cmd_obfuscate(args: ObfuscateArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let detected;
    let targets: Option<&[usize]> = if args.use_detector {
        let outcome = detect_outcome(&model, args.window, args.quantile)?;
        log_event(&format!("detector flagged layers {:?}", outcome.flagged));
        detected = outcome.flagged;
        Some(&detected)
    } else {
        args.targets.as_deref()
    };
    let params = PlanParams {
        h: args.h,
        relu_camouflage: args.relu_camouflage,
        frame: args.frame,
        noise: NoiseConfig {
            beta: args.beta,
            mu: args.mu,
            sigma: args.sigma,
            mode: args.noise_mode,
            seed: 0,
        },
        lambda: LambdaRange {
            lo: args.lambda_lo,
            hi: args.lambda_hi,
            ..LambdaRange::default()
        },
    };
    let plan = pipeline::plan(&model, targets, args.mode, params, args.seed)?;
    let run = pipeline::run(&model, &plan)?;
    save_model(&run.model, &args.out)?;
    if let Some(log_path) = &args.log {
        let json = serde_json::to_string_pretty(&run.log).expect("log serializes");
        std::fs::write(log_path, json + "\n")?;
    }
    emit(
        None,
        &ObfuscateSummary {
            mode: plan.mode,
            targets: plan.targets.clone(),
            layers_before: model.len(),
            layers_after: run.model.len(),
            log_entries: run.log.len(),
        },
    )
}

fn cmd_embed(args: EmbedArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let spec = WatermarkSpec {
        scheme: args.scheme,
        layer: args.layer,
        bits: args.bits,
        probes: args.probes,
        steps: args.steps,
        rate: args.rate,
        penalty: args.penalty,
    };
    let (watermarked, key, message, stats) =
        fixtures::watermark_fixture(&model, &spec, args.seed)?;
    save_model(&watermarked, &args.out)?;
    keyfile::save_key(&key, &message, &args.key_out)?;
    emit(None, &stats)
}

#[derive(Serialize)]
struct VerifyJson {
    verifier: &'static str,
    delta: f64,
    result: serde_json::Value,
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let (key, message) = keyfile::load_key(&args.key)?;
    let delta = args.delta.unwrap_or(key.delta);
    let (verifier, result) = if args.active {
        let strategies = args.strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
        let outcome = active_verify(&model, &key, &message, delta, &strategies);
        (
            "active",
            serde_json::to_value(&outcome).expect("outcome serializes"),
        )
    } else {
        let outcome = verify(&model, &key, &message, delta);
        (
            "passive",
            serde_json::to_value(&outcome).expect("outcome serializes"),
        )
    };
    emit(
        args.out.as_deref(),
        &VerifyJson {
            verifier,
            delta,
            result,
        },
    )
}

fn cmd_equiv(args: EquivArgs) -> CmdResult {
    let a = load_model(&args.a)?;
    let b = load_model(&args.b)?;
    let probes = gen_probes(a.input_shape(), args.probes, args.seed);
    let eq = equivalence_report(&a, &b, &probes).map_err(CmdError::from)?;
    emit(args.out.as_deref(), &eq)
}

fn cmd_bench(args: BenchArgs) -> CmdResult {
    let original = load_model(&args.original)?;
    let obfuscated = load_model(&args.obfuscated)?;
    let probes = gen_probes(original.input_shape(), args.probes, args.seed);
    let original_seconds = median_forward_seconds(&original, &probes, args.runs)?;
    let obfuscated_seconds = median_forward_seconds(&obfuscated, &probes, args.runs)?;
    emit(
        args.out.as_deref(),
        &BenchJson {
            probes: args.probes,
            runs: args.runs,
            original_seconds,
            obfuscated_seconds,
            ratio: obfuscated_seconds / original_seconds,
        },
    )
}

fn cmd_gen_fixture(args: GenFixtureArgs) -> CmdResult {
    let model = match args.kind.as_str() {
        "mlp" => fixtures::uniform_mlp(args.depth, args.width, args.seed),
        "cnn" => fixtures::toy_cnn(args.seed),
        other => {
            return Err(CmdError::Usage(format!(
                "unknown fixture kind '{other}', expected mlp or cnn"
            )))
        }
    };
    match args.watermark {
        None => {
            save_model(&model, &args.out)?;
            log_event(&format!("wrote {} fixture", args.kind));
        }
        Some(scheme) => {
            let key_out = args.key_out.as_deref().ok_or_else(|| {
                CmdError::Usage("--key-out is required with --watermark".into())
            })?;
            let spec = WatermarkSpec {
                scheme,
                layer: args.wm_layer,
                bits: args.bits,
                probes: args.probes,
                steps: args.steps,
                rate: args.rate,
                penalty: args.penalty,
            };
            let (watermarked, key, message, stats) =
                fixtures::watermark_fixture(&model, &spec, args.seed)?;
            save_model(&watermarked, &args.out)?;
            keyfile::save_key(&key, &message, key_out)?;
            log_event(&format!(
                "embedded {} watermark at layer {} with similarity {:.3}",
                scheme.name(),
                args.wm_layer,
                stats.similarity
            ));
        }
    }
    Ok(())
}
