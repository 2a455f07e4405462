//! Command-line interface: JSON run configs with flag overrides, the
//! generate/bench/analyze/compare subcommands, and the FVTM token-map file
//! format.
//!
//! All randomness funnels through the three named seeds (weights,
//! condition, sampling), so an identical config file yields byte-identical
//! non-timing outputs. Failures print a single-line JSON envelope on the
//! error stream and exit nonzero; exit code 0 means every requested output
//! was written.

use crate::bench::{
    export_mask, flop_estimate, measure_run, metrics_report, spectrum_profile, ReportFormat,
    RunMetrics,
};
use crate::error::{FastVarError, Result};
use crate::fastvar::make_prune_schedule;
use crate::numkern::{ResizeMode, TokenMap};
use crate::pyramid::ScaleSchedule;
use crate::varnet::{generate, Model, ModelConfig};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

pub const OUT_DIR_ENV: &str = "FASTVAR_OUT";

/// Next-scale image generation with cached token pruning.
#[derive(Debug, Parser)]
#[command(name = "fastvar", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run generation and write the final map, metrics, and keep masks.
    Generate(RunArgs),
    /// Profile baseline vs pruned runs: analytic FLOPs and measured wall time.
    Bench(RunArgs),
    /// Read a saved token map and write its radial power spectrum.
    Analyze(AnalyzeArgs),
    /// Shorthand for generate --compare.
    Compare(RunArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also run without pruning and report the speedup.
    #[arg(long)]
    pub compare: bool,
    /// Pruning ratios for the texture steps, e.g. 0.4,0.5,1.0,1.0.
    #[arg(long)]
    pub ratios: Option<String>,
    /// How many trailing steps count as texture steps.
    #[arg(long)]
    pub n_prune: Option<usize>,
    /// Step whose layer outputs are cached for restoration.
    #[arg(long)]
    pub cache_step: Option<usize>,
    /// Resampling mode: nearest or bilinear.
    #[arg(long)]
    pub mode: Option<String>,
    /// Extra square sides appended to the schedule, e.g. 80 or 80,96.
    #[arg(long)]
    pub extend_scales: Option<String>,
    /// Timing repetitions (per-step wall time is the median).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Output directory (default: $FASTVAR_OUT, then ./out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for weight initialization.
    #[arg(long)]
    pub seed_weights: Option<u64>,
    /// Seed for the conditioning vector.
    #[arg(long)]
    pub seed_cond: Option<u64>,
    /// Seed for token sampling.
    #[arg(long)]
    pub seed_sample: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Saved token map (FVTM file) to profile.
    pub map_file: PathBuf,
    /// Output directory (default: $FASTVAR_OUT, then ./out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub seeds: SeedsSection,
    pub output: OutputSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub depth: usize,
    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub temperature: f32,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            depth: 4,
            d: 64,
            heads: 4,
            d_ff: 256,
            vocab: 256,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Square side lengths, one per scale step.
    pub sides: Vec<usize>,
    /// Texture-stage length; an empty ratio list leaves pruning off.
    pub n: usize,
    pub ratios: Vec<f32>,
    pub cache_step: Option<usize>,
    pub mode: ResizeMode,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            sides: vec![1, 2, 3, 4, 6, 9, 12, 16],
            n: 0,
            ratios: Vec::new(),
            cache_step: None,
            mode: ResizeMode::Nearest,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedsSection {
    pub weights: u64,
    pub condition: u64,
    pub sampling: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection {
            weights: 0,
            condition: 1,
            sampling: 2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            formats: vec![ReportFormat::Csv],
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub reps: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { reps: 5 }
    }
}

/// Everything a command needs after merging defaults, config file, flags,
/// and the output-dir environment variable.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: ModelConfig,
    pub sched: ScaleSchedule,
    pub pruning: bool,
    pub out_dir: PathBuf,
    pub formats: Vec<ReportFormat>,
    pub reps: usize,
    pub condition_seed: u64,
    pub sample_seed: u64,
}

fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|piece| !piece.is_empty())
        .map(|piece| {
            piece.parse().map_err(|_| {
                FastVarError::InvalidArgument(format!("bad {what} entry '{piece}'"))
            })
        })
        .collect()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        FastVarError::Config(format!("{}: {e}", path.display()))
    })
}

/// Merges the config file and flag overrides into a runnable setup.
/// Precedence: flags, then the config file, then built-in defaults; the
/// output directory also consults `FASTVAR_OUT` between config and default.
pub fn resolve(args: &RunArgs) -> Result<Resolved> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };

    let mut sides = cfg.schedule.sides.clone();
    if let Some(extra) = &args.extend_scales {
        sides.extend(parse_list::<usize>(extra, "scale side")?);
    }
    let ratios = match &args.ratios {
        Some(text) => parse_list::<f32>(text, "ratio")?,
        None => cfg.schedule.ratios.clone(),
    };
    let n = args
        .n_prune
        .or(args.ratios.as_ref().map(|_| ratios.len()))
        .unwrap_or(cfg.schedule.n);
    let cache_step = args.cache_step.or(cfg.schedule.cache_step);
    let mode = match &args.mode {
        Some(text) => text.parse::<ResizeMode>()?,
        None => cfg.schedule.mode,
    };

    let sizes = sides.iter().map(|&s| (s, s)).collect();
    let base = ScaleSchedule::new(sizes, n, vec![0.0; n], cache_step, mode)?;
    let pruning = !ratios.is_empty();
    let sched = if pruning {
        make_prune_schedule(&base, ratios)?
    } else {
        base
    };

    let weights_seed = args.seed_weights.unwrap_or(cfg.seeds.weights);
    let model = ModelConfig {
        depth: cfg.model.depth,
        d: cfg.model.d,
        heads: cfg.model.heads,
        d_ff: cfg.model.d_ff,
        vocab: cfg.model.vocab,
        seed: weights_seed,
        temperature: cfg.model.temperature,
    };
    model.validate()?;

    let out_dir = args
        .out
        .clone()
        .or(cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let reps = args.reps.unwrap_or(cfg.bench.reps);
    if reps == 0 {
        return Err(FastVarError::InvalidArgument(
            "repetition count must be >= 1".into(),
        ));
    }

    Ok(Resolved {
        model,
        sched,
        pruning,
        out_dir,
        formats: cfg.output.formats,
        reps,
        condition_seed: args.seed_cond.unwrap_or(cfg.seeds.condition),
        sample_seed: args.seed_sample.unwrap_or(cfg.seeds.sampling),
    })
}

/// Serializes a token map: magic `FVTM`, then h, w, d as little-endian
/// 32-bit unsigned integers, then the values as little-endian 32-bit floats
/// in row-major token order.
pub fn encode_fvtm(map: &TokenMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + map.data().len() * 4);
    out.extend_from_slice(b"FVTM");
    for dim in [map.h(), map.w(), map.d()] {
        let dim = u32::try_from(dim).map_err(|_| {
            FastVarError::InvalidArgument(format!("dimension {dim} exceeds the 32-bit header"))
        })?;
        out.extend_from_slice(&dim.to_le_bytes());
    }
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses `encode_fvtm` output. Errors name the byte offset at fault: a bad
/// magic is offset 0, a bad dimension is its own header field, and bad or
/// missing values point into the data section.
pub fn decode_fvtm(bytes: &[u8]) -> Result<TokenMap> {
    if bytes.len() < 4 || &bytes[..4] != b"FVTM" {
        return Err(FastVarError::Parse {
            offset: 0,
            message: "missing FVTM magic".into(),
        });
    }
    if bytes.len() < 16 {
        return Err(FastVarError::Parse {
            offset: bytes.len(),
            message: format!("header needs 16 bytes, file has {}", bytes.len()),
        });
    }
    let mut dims = [0usize; 3];
    for (i, dim) in dims.iter_mut().enumerate() {
        let at = 4 + 4 * i;
        let raw = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if raw == 0 {
            return Err(FastVarError::Parse {
                offset: at,
                message: "dimension must be >= 1".into(),
            });
        }
        *dim = raw as usize;
    }
    let [h, w, d] = dims;
    let count = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or(FastVarError::Parse {
            offset: 4,
            message: "dimensions overflow".into(),
        })?;
    let body = &bytes[16..];
    if body.len() != count {
        let offset = if body.len() < count {
            bytes.len()
        } else {
            16 + count
        };
        return Err(FastVarError::Parse {
            offset,
            message: format!("token data wants {count} bytes, found {}", body.len()),
        });
    }
    let mut data = Vec::with_capacity(count / 4);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FastVarError::Parse {
                offset: 16 + 4 * i,
                message: format!("non-finite value {v}"),
            });
        }
        data.push(v);
    }
    TokenMap::new(h, w, d, data)
}

pub fn write_fvtm(map: &TokenMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_fvtm(map)?)?;
    Ok(())
}

pub fn read_fvtm(path: &Path) -> Result<TokenMap> {
    decode_fvtm(&std::fs::read(path)?)
}

fn metrics_paths(dir: &Path, stem: &str, formats: &[ReportFormat]) -> Vec<(ReportFormat, PathBuf)> {
    formats
        .iter()
        .map(|&f| (f, dir.join(format!("{stem}.{f}"))))
        .collect()
}

fn write_reports(
    dir: &Path,
    stem: &str,
    metrics: &RunMetrics,
    baseline: Option<&RunMetrics>,
    formats: &[ReportFormat],
) -> Result<()> {
    for (format, path) in metrics_paths(dir, stem, formats) {
        metrics_report(metrics, baseline, format, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn write_masks(
    dir: &Path,
    sched: &ScaleSchedule,
    masks: &[(usize, crate::fastvar::PruneDecision)],
) -> Result<()> {
    for (step, decision) in masks {
        let path = dir.join(format!("mask_step_{step}.pgm"));
        export_mask(decision, sched.size(*step), &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn cmd_generate(resolved: &Resolved, compare: bool) -> Result<()> {
    std::fs::create_dir_all(&resolved.out_dir)?;
    let model = Model::init(resolved.model)?;
    let dir = &resolved.out_dir;

    let pruned = generate(
        &model,
        &resolved.sched,
        resolved.condition_seed,
        resolved.sample_seed,
        resolved.pruning,
    )?;
    let map_path = dir.join("map.fvtm");
    write_fvtm(&pruned.map, &map_path)?;
    println!("wrote {}", map_path.display());
    write_masks(dir, &resolved.sched, &pruned.masks)?;

    if compare {
        let baseline = generate(
            &model,
            &resolved.sched,
            resolved.condition_seed,
            resolved.sample_seed,
            false,
        )?;
        let base_path = dir.join("baseline_map.fvtm");
        write_fvtm(&baseline.map, &base_path)?;
        println!("wrote {}", base_path.display());
        write_reports(dir, "baseline", &baseline.metrics, None, &resolved.formats)?;
        write_reports(
            dir,
            "pruned",
            &pruned.metrics,
            Some(&baseline.metrics),
            &resolved.formats,
        )?;
        println!(
            "speedup: {:.3}x wall, {:.3}x estimated FLOPs",
            pruned.metrics.speedup_vs(&baseline.metrics),
            pruned.metrics.flop_ratio_vs(&baseline.metrics)
        );
    } else {
        write_reports(dir, "metrics", &pruned.metrics, None, &resolved.formats)?;
    }
    Ok(())
}

fn print_latency_table(label: &str, metrics: &RunMetrics, reps: usize) {
    let total = metrics.total_wall_ns().max(1) as f64;
    println!("{label} (reps = {reps})");
    println!("{:>4} {:>5} {:>5} {:>10} {:>12} {:>7}", "step", "h", "w", "forwarded", "wall_ms", "share");
    for s in &metrics.steps {
        println!(
            "{:>4} {:>5} {:>5} {:>10} {:>12.3} {:>6.1}%",
            s.step,
            s.h,
            s.w,
            s.forwarded_tokens,
            s.wall_ns as f64 / 1e6,
            s.wall_ns as f64 / total * 100.0
        );
    }
    if metrics.steps.len() >= 2 {
        let tail: u64 = metrics.steps[metrics.steps.len() - 2..]
            .iter()
            .map(|s| s.wall_ns)
            .sum();
        println!("last two steps: {:.1}% of wall time", tail as f64 / total * 100.0);
    }
}

pub fn cmd_bench(resolved: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&resolved.out_dir)?;
    let model = Model::init(resolved.model)?;
    let dir = &resolved.out_dir;

    let est_base = flop_estimate(&resolved.model, &resolved.sched, false);
    let est_pruned = flop_estimate(&resolved.model, &resolved.sched, resolved.pruning);
    let base = measure_run(
        &model,
        &resolved.sched,
        resolved.condition_seed,
        resolved.sample_seed,
        false,
        resolved.reps,
    )?;
    let pruned = measure_run(
        &model,
        &resolved.sched,
        resolved.condition_seed,
        resolved.sample_seed,
        resolved.pruning,
        resolved.reps,
    )?;

    write_reports(dir, "bench_baseline", &base, None, &resolved.formats)?;
    write_reports(dir, "bench_pruned", &pruned, Some(&base), &resolved.formats)?;

    print_latency_table("baseline", &base, resolved.reps);
    println!();
    print_latency_table("pruned", &pruned, resolved.reps);
    println!();
    println!(
        "wall speedup: {:.3}x",
        pruned.speedup_vs(&base)
    );
    println!(
        "estimated FLOP ratio: {:.3}x",
        est_pruned.flop_ratio_vs(&est_base)
    );
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let map = read_fvtm(&args.map_file)?;
    let profile = spectrum_profile(&map);
    let out_dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let path = out_dir.join("spectrum.csv");
    let mut body = String::from("radius,power\n");
    for (radius, power) in profile.bins.iter().enumerate() {
        body.push_str(&format!("{radius},{power}\n"));
    }
    std::fs::write(&path, body)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => cmd_generate(&resolve(args)?, args.compare),
        Command::Compare(args) => cmd_generate(&resolve(args)?, true),
        Command::Bench(args) => cmd_bench(&resolve(args)?),
        Command::Analyze(args) => cmd_analyze(args),
    }
}

/// One-line machine-readable failure report for the error stream.
pub fn error_envelope(err: &FastVarError) -> String {
    serde_json::json!({
        "error": { "kind": err.kind(), "message": err.to_string() }
    })
    .to_string()
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_envelope(&err));
            ExitCode::FAILURE
        }
    }
}
