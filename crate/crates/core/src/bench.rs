//! Profiling and analysis harness: per-step FLOP and token accounting,
//! wall-clock measurement, radially averaged spectrum profiles, keep-mask
//! export, and metric reports.
//!
//! Analysis operations are pure. Timing runs assume a single execution
//! context with no concurrent benchmark interference; that contract is
//! documented, not enforced.

use crate::error::{FastVarError, Result};
use crate::fastvar::{keep_count, PruneDecision};
use crate::numkern::TokenMap;
use crate::pyramid::ScaleSchedule;
use crate::varnet::{generate, Model, ModelConfig};
use serde::Serialize;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// One decode step's accounting row. Field names match the report columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub h: usize,
    pub w: usize,
    pub forwarded_tokens: usize,
    /// Cumulative KV tokens per layer after this step, current step included.
    pub kv_total: usize,
    pub est_flops: u64,
    pub wall_ns: u64,
    pub skipped: bool,
}

/// A whole run's per-step rows. Totals are derived, never stored, so they
/// cannot drift from the rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMetrics {
    pub steps: Vec<StepMetrics>,
}

impl RunMetrics {
    pub fn total_est_flops(&self) -> u64 {
        self.steps.iter().map(|s| s.est_flops).sum()
    }

    pub fn total_wall_ns(&self) -> u64 {
        self.steps.iter().map(|s| s.wall_ns).sum()
    }

    pub fn total_forwarded(&self) -> usize {
        self.steps.iter().map(|s| s.forwarded_tokens).sum()
    }

    /// KV tokens per layer held after the final step.
    pub fn final_kv_total(&self) -> usize {
        self.steps.last().map_or(0, |s| s.kv_total)
    }

    /// Wall-clock speedup of this run over `baseline` (> 1 means faster).
    pub fn speedup_vs(&self, baseline: &RunMetrics) -> f64 {
        baseline.total_wall_ns() as f64 / self.total_wall_ns() as f64
    }

    /// FLOP-count ratio baseline/self under the analytic cost model.
    pub fn flop_ratio_vs(&self, baseline: &RunMetrics) -> f64 {
        baseline.total_est_flops() as f64 / self.total_est_flops() as f64
    }
}

/// Estimated FLOPs for one forwarded step: `q` forwarded tokens attending
/// to `kv` total keys (current step included), per layer the Q/K/V/O
/// projections at 8qd^2, attention score and mix at 4q*kv*d, and the FFN at
/// 4q*d*d_ff, with a multiply-accumulate counted as 2 FLOPs. Normalization,
/// softmax, and activation costs are excluded; the matmuls dominate.
pub fn step_flops(cfg: &ModelConfig, q: usize, kv: usize) -> u64 {
    let (q, kv) = (q as u64, kv as u64);
    let d = cfg.d as u64;
    let d_ff = cfg.d_ff as u64;
    let per_layer = 8 * q * d * d + 4 * q * kv * d + 4 * q * d * d_ff;
    cfg.depth as u64 * per_layer
}

/// Analytic cost model for a full run: per-step forwarded-token counts, the
/// cumulative KV ledger, and estimated FLOPs, with no model execution.
/// `pruning` applies the schedule's ratios; off, every token is forwarded.
/// Skipped steps contribute zero FLOPs and cache nothing. Wall times are
/// zero; pair with `measure_run` for timing.
pub fn flop_estimate(cfg: &ModelConfig, sched: &ScaleSchedule, pruning: bool) -> RunMetrics {
    let mut steps = Vec::with_capacity(sched.k());
    let mut kv = 0usize;
    for k in 1..=sched.k() {
        let (h, w) = sched.size(k);
        let ratio = if pruning { sched.ratio_for_step(k) } else { 0.0 };
        if ratio == 1.0 {
            steps.push(StepMetrics {
                step: k,
                h,
                w,
                forwarded_tokens: 0,
                kv_total: kv,
                est_flops: 0,
                wall_ns: 0,
                skipped: true,
            });
            continue;
        }
        let keep = keep_count(h * w, ratio);
        kv += keep;
        steps.push(StepMetrics {
            step: k,
            h,
            w,
            forwarded_tokens: keep,
            kv_total: kv,
            est_flops: step_flops(cfg, keep, kv),
            wall_ns: 0,
            skipped: false,
        });
    }
    RunMetrics { steps }
}

fn median(mut values: Vec<u64>) -> u64 {
    values.sort_unstable();
    values[values.len() / 2]
}

/// Executes the run `reps` times and reports, per step, the median wall
/// time across repetitions. Everything except wall_ns is identical across
/// repetitions by construction, so those columns come from the first run.
pub fn measure_run(
    model: &Model,
    sched: &ScaleSchedule,
    condition_seed: u64,
    sample_seed: u64,
    pruning: bool,
    reps: usize,
) -> Result<RunMetrics> {
    if reps == 0 {
        return Err(FastVarError::InvalidArgument(
            "repetition count must be >= 1".into(),
        ));
    }
    let mut runs = Vec::with_capacity(reps);
    for _ in 0..reps {
        runs.push(generate(model, sched, condition_seed, sample_seed, pruning)?.metrics);
    }
    let mut steps = runs[0].steps.clone();
    for (i, step) in steps.iter_mut().enumerate() {
        step.wall_ns = median(runs.iter().map(|r| r.steps[i].wall_ns).collect());
    }
    Ok(RunMetrics { steps })
}

/// Radially averaged power spectrum of a token map.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile {
    /// Power per integer radius bin, bin r covering centered frequencies
    /// with floor(sqrt(u^2 + v^2) + 0.5) == r.
    pub bins: Vec<f64>,
    /// Power of the zero-frequency component alone.
    pub dc_power: f64,
    /// Sum of all bins. With the normalization used here it equals the
    /// channel-averaged sum of squared values (Parseval).
    pub total_power: f64,
}

/// Per-channel 2D discrete Fourier transform, magnitude squared and scaled
/// by 1/(h*w*d), accumulated into integer-radius bins over centered
/// frequencies u in [-h/2, h/2), v in [-w/2, w/2). Direct evaluation with
/// precomputed twiddle tables; desk-scale maps are far below FFT territory.
pub fn spectrum_profile(map: &TokenMap) -> SpectrumProfile {
    let (h, w, d) = (map.h(), map.w(), map.d());
    let (cos_h, sin_h) = twiddle_tables(h);
    let (cos_w, sin_w) = twiddle_tables(w);

    let radius = |idx: usize, n: usize| -> i64 {
        if idx <= (n - 1) / 2 {
            idx as i64
        } else {
            idx as i64 - n as i64
        }
    };
    let bin_of = |u: usize, v: usize| -> usize {
        let su = radius(u, h) as f64;
        let sv = radius(v, w) as f64;
        ((su * su + sv * sv).sqrt() + 0.5).floor() as usize
    };
    let max_bin = (0..h)
        .flat_map(|u| (0..w).map(move |v| (u, v)))
        .map(|(u, v)| bin_of(u, v))
        .max()
        .unwrap();

    let mut power = vec![0.0f64; h * w];
    let mut g_re = vec![0.0f64; h * w];
    let mut g_im = vec![0.0f64; h * w];
    for c in 0..d {
        // Row transform: G[u, y] = sum_x f[x, y] * e^(-2*pi*i*u*x/h).
        for u in 0..h {
            for y in 0..w {
                let mut re = 0.0f64;
                let mut im = 0.0f64;
                for x in 0..h {
                    let f = map.data()[(x * w + y) * d + c] as f64;
                    let t = (u * x) % h;
                    re += f * cos_h[t];
                    im -= f * sin_h[t];
                }
                g_re[u * w + y] = re;
                g_im[u * w + y] = im;
            }
        }
        // Column transform: X[u, v] = sum_y G[u, y] * e^(-2*pi*i*v*y/w).
        for u in 0..h {
            for v in 0..w {
                let mut re = 0.0f64;
                let mut im = 0.0f64;
                for y in 0..w {
                    let t = (v * y) % w;
                    let (gr, gi) = (g_re[u * w + y], g_im[u * w + y]);
                    re += gr * cos_w[t] + gi * sin_w[t];
                    im += gi * cos_w[t] - gr * sin_w[t];
                }
                power[u * w + v] += re * re + im * im;
            }
        }
    }

    let norm = 1.0 / (h as f64 * w as f64 * d as f64);
    let mut bins = vec![0.0f64; max_bin + 1];
    for u in 0..h {
        for v in 0..w {
            bins[bin_of(u, v)] += power[u * w + v] * norm;
        }
    }
    let dc_power = power[0] * norm;
    let total_power = bins.iter().sum();
    SpectrumProfile {
        bins,
        dc_power,
        total_power,
    }
}

fn twiddle_tables(n: usize) -> (Vec<f64>, Vec<f64>) {
    let step = 2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|k| {
            let angle = step * k as f64;
            (angle.cos(), angle.sin())
        })
        .unzip()
}

/// Renders a keep mask as a binary PGM (P5, maxval 255): kept tokens 255,
/// pruned tokens 0, row-major over the step's (h, w) grid.
pub fn encode_mask(decision: &PruneDecision, shape: (usize, usize)) -> Result<Vec<u8>> {
    let (h, w) = shape;
    if h * w != decision.total() {
        return Err(FastVarError::Shape(format!(
            "mask shape {h}x{w} has {} slots but the decision covers {} tokens",
            h * w,
            decision.total()
        )));
    }
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend((0..h * w).map(|i| if decision.is_kept(i) { 255u8 } else { 0u8 }));
    Ok(bytes)
}

/// Writes `encode_mask` output to `path`.
pub fn export_mask(decision: &PruneDecision, shape: (usize, usize), path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask(decision, shape)?)?;
    Ok(())
}

fn parse_pgm_uint(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return Err(FastVarError::Parse {
            offset: start,
            message: format!("expected {what}"),
        });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("digits are ascii")
        .parse()
        .map_err(|_| FastVarError::Parse {
            offset: start,
            message: format!("{what} out of range"),
        })
}

/// Parses a mask produced by `encode_mask` back into its shape and kept
/// index set. Parse errors name the byte offset of the problem.
pub fn decode_mask(bytes: &[u8]) -> Result<(usize, usize, Vec<usize>)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(FastVarError::Parse {
            offset: 0,
            message: "missing P5 magic".into(),
        });
    }
    let mut pos = 2usize;
    let w = parse_pgm_uint(bytes, &mut pos, "width")?;
    let h = parse_pgm_uint(bytes, &mut pos, "height")?;
    let maxval_at = pos;
    let maxval = parse_pgm_uint(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(FastVarError::Parse {
            offset: maxval_at,
            message: format!("maxval {maxval}, expected 255"),
        });
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(FastVarError::Parse {
            offset: pos,
            message: "expected single whitespace before pixel data".into(),
        });
    }
    pos += 1;
    let need = h * w;
    if bytes.len() - pos != need {
        return Err(FastVarError::Parse {
            offset: bytes.len(),
            message: format!("expected {need} pixel bytes, found {}", bytes.len() - pos),
        });
    }
    let mut kept = Vec::new();
    for (i, &b) in bytes[pos..].iter().enumerate() {
        match b {
            255 => kept.push(i),
            0 => {}
            other => {
                return Err(FastVarError::Parse {
                    offset: pos + i,
                    message: format!("pixel value {other}, expected 0 or 255"),
                })
            }
        }
    }
    Ok((h, w, kept))
}

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = FastVarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(FastVarError::InvalidArgument(format!(
                "unknown report format '{other}' (expected csv or json)"
            ))),
        }
    }
}

pub const CSV_HEADER: &str = "step,h,w,forwarded_tokens,kv_total,est_flops,wall_ns,skipped";

#[derive(Serialize)]
struct JsonTotals {
    forwarded_tokens: usize,
    kv_total: usize,
    est_flops: u64,
    wall_ns: u64,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    steps: &'a [StepMetrics],
    totals: JsonTotals,
    #[serde(skip_serializing_if = "Option::is_none")]
    speedup: Option<f64>,
}

/// Renders per-step rows plus a totals row, and a wall-clock speedup of
/// this run over `baseline` when one is given. The CSV totals row reports
/// the final KV total in the kv_total column (it is cumulative, not
/// additive) and the speedup row carries its value in the wall_ns column.
/// Output is a pure function of the metrics, so identical runs render to
/// identical bytes.
pub fn render_metrics(
    metrics: &RunMetrics,
    baseline: Option<&RunMetrics>,
    format: ReportFormat,
) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for s in &metrics.steps {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    s.step, s.h, s.w, s.forwarded_tokens, s.kv_total, s.est_flops, s.wall_ns,
                    s.skipped
                ));
            }
            out.push_str(&format!(
                "totals,,,{},{},{},{},\n",
                metrics.total_forwarded(),
                metrics.final_kv_total(),
                metrics.total_est_flops(),
                metrics.total_wall_ns()
            ));
            if let Some(base) = baseline {
                out.push_str(&format!("speedup,,,,,,{},\n", metrics.speedup_vs(base)));
            }
            out
        }
        ReportFormat::Json => {
            let report = JsonReport {
                steps: &metrics.steps,
                totals: JsonTotals {
                    forwarded_tokens: metrics.total_forwarded(),
                    kv_total: metrics.final_kv_total(),
                    est_flops: metrics.total_est_flops(),
                    wall_ns: metrics.total_wall_ns(),
                },
                speedup: baseline.map(|b| metrics.speedup_vs(b)),
            };
            let mut out =
                serde_json::to_string_pretty(&report).expect("metrics serialize to JSON");
            out.push('\n');
            out
        }
    }
}

/// Writes `render_metrics` output to `path`.
pub fn metrics_report(
    metrics: &RunMetrics,
    baseline: Option<&RunMetrics>,
    format: ReportFormat,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, render_metrics(metrics, baseline, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkern::ResizeMode;
    use proptest::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn cfg(depth: usize, d: usize, d_ff: usize) -> ModelConfig {
        ModelConfig {
            depth,
            d,
            heads: 1,
            d_ff,
            vocab: 8,
            seed: 0,
            temperature: 1.0,
        }
    }

    fn square_sched(sides: &[usize], n: usize, ratios: Vec<f32>) -> ScaleSchedule {
        let sizes = sides.iter().map(|&s| (s, s)).collect();
        ScaleSchedule::new(sizes, n, ratios, None, ResizeMode::Nearest).unwrap()
    }

    fn rand_map(seed: u64, h: usize, w: usize, d: usize) -> TokenMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * d)
            .map(|_| (rng.next_u32() >> 8) as f32 / 16_777_216.0 * 2.0 - 1.0)
            .collect();
        TokenMap::new(h, w, d, data).unwrap()
    }

    #[test]
    fn step_flops_matches_hand_count() {
        // depth 1, d 2, d_ff 4, one token attending to itself:
        // projections 8*1*2*2 = 32, attention 4*1*1*2 = 8, ffn 4*1*2*4 = 32.
        assert_eq!(step_flops(&cfg(1, 2, 4), 1, 1), 72);
        assert_eq!(step_flops(&cfg(3, 2, 4), 1, 1), 216);
        assert_eq!(step_flops(&cfg(1, 2, 4), 0, 5), 0);
    }

    #[test]
    fn estimate_with_zero_ratios_equals_baseline() {
        let c = cfg(2, 8, 16);
        let sched = square_sched(&[1, 2, 4], 2, vec![0.0, 0.0]);
        let base = flop_estimate(&c, &sched, false);
        let pruned = flop_estimate(&c, &sched, true);
        assert_eq!(base, pruned);
        assert!((pruned.flop_ratio_vs(&base) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn estimate_tail_token_reduction() {
        let c = cfg(2, 8, 16);
        let sched = square_sched(&[16, 21, 27, 36, 48, 64], 2, vec![0.5, 0.75]);
        let pruned = flop_estimate(&c, &sched, true);
        let tail: Vec<usize> = pruned.steps[4..]
            .iter()
            .map(|s| s.forwarded_tokens)
            .collect();
        assert_eq!(tail, vec![1152, 1024]);
        assert_eq!(tail.iter().sum::<usize>(), 2176);
        let base = flop_estimate(&c, &sched, false);
        let base_tail: usize = base.steps[4..].iter().map(|s| s.forwarded_tokens).sum();
        assert_eq!(base_tail, 6400);
    }

    #[test]
    fn estimate_is_additive_and_zero_on_skips() {
        let c = cfg(2, 8, 16);
        let sched = square_sched(&[1, 2, 3, 4], 2, vec![0.5, 1.0]);
        let m = flop_estimate(&c, &sched, true);
        let last = m.steps.last().unwrap();
        assert!(last.skipped);
        assert_eq!(last.est_flops, 0);
        assert_eq!(last.forwarded_tokens, 0);
        // Skipped step leaves the KV ledger untouched.
        assert_eq!(last.kv_total, m.steps[2].kv_total);
        let sum: u64 = m.steps.iter().map(|s| s.est_flops).sum();
        assert_eq!(m.total_est_flops(), sum);
    }

    #[test]
    fn analytic_estimate_matches_executed_run() {
        let c = ModelConfig {
            depth: 2,
            d: 8,
            heads: 2,
            d_ff: 16,
            vocab: 16,
            seed: 7,
            temperature: 1.0,
        };
        let sched = square_sched(&[1, 2, 3, 4, 5], 3, vec![0.4, 0.5, 1.0]);
        let model = Model::init(c).unwrap();
        let run = generate(&model, &sched, 1, 2, true).unwrap().metrics;
        let est = flop_estimate(&c, &sched, true);
        assert_eq!(run.steps.len(), est.steps.len());
        for (r, e) in run.steps.iter().zip(&est.steps) {
            assert_eq!(r.forwarded_tokens, e.forwarded_tokens);
            assert_eq!(r.kv_total, e.kv_total);
            assert_eq!(r.est_flops, e.est_flops);
            assert_eq!(r.skipped, e.skipped);
        }
    }

    #[test]
    fn median_picks_middle_value() {
        assert_eq!(median(vec![5, 1, 3]), 3);
        assert_eq!(median(vec![4, 1, 3, 2]), 3);
        assert_eq!(median(vec![9]), 9);
    }

    #[test]
    fn measured_run_reports_timing_per_step() {
        let c = ModelConfig {
            depth: 4,
            d: 64,
            heads: 4,
            d_ff: 128,
            vocab: 32,
            seed: 3,
            temperature: 1.0,
        };
        let model = Model::init(c).unwrap();
        let sched = square_sched(&[1, 2, 4, 8], 2, vec![0.5, 1.0]);
        assert!(matches!(
            measure_run(&model, &sched, 1, 2, true, 0),
            Err(FastVarError::InvalidArgument(_))
        ));
        let m = measure_run(&model, &sched, 1, 2, true, 3).unwrap();
        assert_eq!(m.steps.len(), 4);
        let forwarded_max = m.steps[..3].iter().map(|s| s.wall_ns).max().unwrap();
        let skipped = m.steps[3];
        assert!(skipped.skipped);
        // The skip does one resize; any forwarded step runs the full model.
        assert!(skipped.wall_ns < forwarded_max);
        // Non-timing columns agree with the analytic model.
        let est = flop_estimate(&c, &sched, true);
        for (r, e) in m.steps.iter().zip(&est.steps) {
            assert_eq!(r.est_flops, e.est_flops);
        }
    }

    #[test]
    fn spectrum_constant_map_is_dc_only() {
        let map = TokenMap::constant(5, 7, 3, 2.0).unwrap();
        let p = spectrum_profile(&map);
        assert!((p.dc_power - p.total_power).abs() <= 1e-9 * p.total_power);
        for (r, &b) in p.bins.iter().enumerate().skip(1) {
            assert!(b.abs() <= 1e-9 * p.total_power, "bin {r} = {b}");
        }
        // Parseval: channel-averaged sum of squares, 5*7 tokens of 2.0.
        assert!((p.total_power - 35.0 * 4.0).abs() < 1e-9);
    }

    #[test]
    fn spectrum_checkerboard_lands_in_maximal_bin() {
        let mut data = Vec::with_capacity(64);
        for x in 0..8 {
            for y in 0..8 {
                data.push(if (x + y) % 2 == 0 { 1.0 } else { -1.0 });
            }
        }
        let map = TokenMap::new(8, 8, 1, data).unwrap();
        let p = spectrum_profile(&map);
        let last = p.bins.len() - 1;
        // (u, v) = (-4, -4) has radius floor(sqrt(32) + 0.5) = 6, the
        // largest bin an 8x8 grid produces.
        assert_eq!(last, 6);
        assert!((p.bins[last] - p.total_power).abs() <= 1e-9 * p.total_power);
        assert!(p.dc_power.abs() <= 1e-9 * p.total_power);
    }

    #[test]
    fn spectrum_column_cosine_peaks_at_radius_two() {
        let mut data = Vec::with_capacity(64);
        for _x in 0..8 {
            for y in 0..8 {
                data.push((2.0 * std::f64::consts::PI * y as f64 / 4.0).cos() as f32);
            }
        }
        let map = TokenMap::new(8, 8, 1, data).unwrap();
        let p = spectrum_profile(&map);
        let dominant = p
            .bins
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(dominant, 2);
        assert!(p.bins[2] > 0.999 * p.total_power);
    }

    /// Direct per-frequency DFT, no separability, no shared tables.
    fn spectrum_oracle(map: &TokenMap) -> Vec<f64> {
        let (h, w, d) = (map.h(), map.w(), map.d());
        let signed = |idx: usize, n: usize| -> f64 {
            if idx <= (n - 1) / 2 {
                idx as f64
            } else {
                idx as f64 - n as f64
            }
        };
        let mut max_bin = 0usize;
        for u in 0..h {
            for v in 0..w {
                let (su, sv) = (signed(u, h), signed(v, w));
                max_bin = max_bin.max(((su * su + sv * sv).sqrt() + 0.5).floor() as usize);
            }
        }
        let mut bins = vec![0.0f64; max_bin + 1];
        for u in 0..h {
            for v in 0..w {
                let mut p = 0.0f64;
                for c in 0..d {
                    let mut re = 0.0f64;
                    let mut im = 0.0f64;
                    for x in 0..h {
                        for y in 0..w {
                            let f = map.data()[(x * w + y) * d + c] as f64;
                            let angle = 2.0
                                * std::f64::consts::PI
                                * (u as f64 * x as f64 / h as f64
                                    + v as f64 * y as f64 / w as f64);
                            re += f * angle.cos();
                            im -= f * angle.sin();
                        }
                    }
                    p += re * re + im * im;
                }
                let (su, sv) = (signed(u, h), signed(v, w));
                let bin = ((su * su + sv * sv).sqrt() + 0.5).floor() as usize;
                bins[bin] += p / (h as f64 * w as f64 * d as f64);
            }
        }
        bins
    }

    #[test]
    fn spectrum_matches_direct_oracle() {
        for (seed, h, w, d) in [(1u64, 4, 4, 1), (2, 8, 8, 3), (3, 5, 8, 2), (4, 8, 3, 1)] {
            let map = rand_map(seed, h, w, d);
            let got = spectrum_profile(&map);
            let want = spectrum_oracle(&map);
            assert_eq!(got.bins.len(), want.len());
            let scale = got.total_power.max(1.0);
            for (r, (a, b)) in got.bins.iter().zip(&want).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-6 * scale,
                    "seed {seed} bin {r}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn mask_bytes_hand_cases() {
        let map = rand_map(5, 2, 2, 3);
        let (_, keep_all) = crate::fastvar::select_pivotal(&map, 0.0).unwrap();
        let bytes = encode_mask(&keep_all, (2, 2)).unwrap();
        assert_eq!(&bytes[..], b"P5\n2 2\n255\n\xff\xff\xff\xff");

        // Tokens 0 and 3 sit farthest from the mean (4.5), so they survive.
        let scored = TokenMap::new(2, 2, 1, vec![10.0, 4.0, 4.0, 0.0]).unwrap();
        let (_, corners) = crate::fastvar::select_pivotal(&scored, 0.5).unwrap();
        assert_eq!(corners.kept().indices(), &[0, 3]);
        let bytes = encode_mask(&corners, (2, 2)).unwrap();
        assert_eq!(&bytes[11..], &[255, 0, 0, 255]);

        assert!(encode_mask(&corners, (1, 2)).is_err());
    }

    #[test]
    fn mask_parse_errors_name_offsets() {
        let err = decode_mask(b"P6\n2 2\n255\n\0\0\0\0").unwrap_err();
        match err {
            FastVarError::Parse { offset, .. } => assert_eq!(offset, 0),
            other => panic!("unexpected error {other:?}"),
        }
        let err = decode_mask(b"P5\n2 2\n255\n\0\0").unwrap_err();
        assert!(matches!(err, FastVarError::Parse { .. }));
        let err = decode_mask(b"P5\n2 2\n255\n\0\x07\0\0").unwrap_err();
        match err {
            FastVarError::Parse { offset, .. } => assert_eq!(offset, 12),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn report_rendering_is_deterministic() {
        let metrics = RunMetrics {
            steps: vec![
                StepMetrics {
                    step: 1,
                    h: 1,
                    w: 1,
                    forwarded_tokens: 1,
                    kv_total: 1,
                    est_flops: 72,
                    wall_ns: 10,
                    skipped: false,
                },
                StepMetrics {
                    step: 2,
                    h: 2,
                    w: 2,
                    forwarded_tokens: 0,
                    kv_total: 1,
                    est_flops: 0,
                    wall_ns: 1,
                    skipped: true,
                },
            ],
        };
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let a = render_metrics(&metrics, Some(&metrics), format);
            let b = render_metrics(&metrics, Some(&metrics), format);
            assert_eq!(a, b);
        }
        let csv = render_metrics(&metrics, Some(&metrics), ReportFormat::Csv);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.next().unwrap(), "1,1,1,1,1,72,10,false");
        assert_eq!(lines.next().unwrap(), "2,2,2,0,1,0,1,true");
        assert_eq!(lines.next().unwrap(), "totals,,,1,1,72,11,");
        // Baseline equal to the run itself: speedup exactly 1.
        assert_eq!(lines.next().unwrap(), "speedup,,,,,,1,");
        assert!(lines.next().is_none());

        let json = render_metrics(&metrics, None, ReportFormat::Json);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["steps"][0]["kv_total"], 1);
        assert_eq!(value["totals"]["est_flops"], 72);
        assert!(value.get("speedup").is_none());
    }

    #[test]
    fn report_files_round_trip(){
        let dir = tempfile::tempdir().unwrap();
        let metrics = flop_estimate(&cfg(1, 2, 4), &square_sched(&[1, 2], 1, vec![0.5]), true);
        let path = dir.path().join("metrics.csv");
        metrics_report(&metrics, None, ReportFormat::Csv, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body, render_metrics(&metrics, None, ReportFormat::Csv));
    }

    proptest! {
        #[test]
        fn parseval_holds_up_to_16(
            h in 1usize..=16,
            w in 1usize..=16,
            d in 1usize..=3,
            seed in 0u64..1000,
        ) {
            let map = rand_map(seed, h, w, d);
            let p = spectrum_profile(&map);
            let ssq: f64 = map.data().iter().map(|&v| (v as f64) * (v as f64)).sum();
            let want = ssq / d as f64;
            prop_assert!((p.total_power - want).abs() <= 1e-4 * want.max(1e-12),
                "total {} vs sum of squares {}", p.total_power, want);
            let bin_sum: f64 = p.bins.iter().sum();
            prop_assert_eq!(p.total_power, bin_sum);
            prop_assert!(p.bins.iter().all(|&b| b >= 0.0));
        }

        #[test]
        fn mask_round_trip_recovers_index_set(
            h in 1usize..=8,
            w in 1usize..=8,
            seed in 0u64..500,
            ratio in 0.0f32..0.95,
        ) {
            let map = rand_map(seed, h, w, 2);
            prop_assume!(crate::fastvar::keep_count(h * w, ratio) > 0);
            let (_, decision) = crate::fastvar::select_pivotal(&map, ratio).unwrap();
            let bytes = encode_mask(&decision, (h, w)).unwrap();
            let (gh, gw, kept) = decode_mask(&bytes).unwrap();
            prop_assert_eq!((gh, gw), (h, w));
            prop_assert_eq!(kept.as_slice(), decision.kept().indices());
        }
    }
}
