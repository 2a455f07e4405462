//! Toy next-scale transformer: seeded weights, cross-scale causal attention
//! with a KV cache, GELU FFN, a toy codebook head, and the per-step decode
//! loop with optional token pruning.
//!
//! The model is inference-only. Weights come from a single seeded draw so a
//! (weights, condition, sampling) seed triple fully determines every output
//! byte. Attention is blocked-causal across scales: queries are the current
//! step's forwarded tokens, keys and values are every previously cached
//! step's tokens followed by the current ones. Pruned steps cache fewer
//! tokens, which is how the KV cache shrinks as a side effect.

use crate::bench::{step_flops, RunMetrics, StepMetrics};
use crate::error::{FastVarError, Result};
use crate::fastvar::{
    self, select_pivotal, LayerCacheStore, PruneDecision, SublayerKind,
};
use crate::numkern::{self, FlatMatrix, TokenMap};
use crate::pyramid::ScaleSchedule;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use std::time::Instant;

const LN_EPS: f32 = 1e-5;

/// Inference-time hyperparameters plus the weight seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub depth: usize,
    pub d: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub seed: u64,
    pub temperature: f32,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.d == 0 || self.heads == 0 || self.d_ff == 0 || self.vocab == 0
        {
            return Err(FastVarError::InvalidArgument(
                "model counts must all be >= 1".into(),
            ));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(FastVarError::InvalidArgument(format!(
                "width {} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(FastVarError::InvalidArgument(format!(
                "temperature {} must be finite and >= 0",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub(crate) ln1_gamma: Vec<f32>,
    pub(crate) ln1_beta: Vec<f32>,
    pub(crate) wq: FlatMatrix,
    pub(crate) wk: FlatMatrix,
    pub(crate) wv: FlatMatrix,
    pub(crate) wo: FlatMatrix,
    pub(crate) ln2_gamma: Vec<f32>,
    pub(crate) ln2_beta: Vec<f32>,
    pub(crate) w1: FlatMatrix,
    pub(crate) b1: Vec<f32>,
    pub(crate) w2: FlatMatrix,
    pub(crate) b2: Vec<f32>,
}

/// Immutable weight bundle. Safe to share across concurrent generations.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    embed: FlatMatrix,
    layers: Vec<LayerWeights>,
    head: FlatMatrix,
    codebook: FlatMatrix,
}

/// One uniform draw in [-scale, scale) from the top 24 bits of the stream.
/// Spelling the mapping out keeps weight bytes stable across dependency
/// upgrades: only the raw ChaCha stream is trusted, never a float helper.
fn uniform(rng: &mut ChaCha8Rng, scale: f32) -> f32 {
    let u = (rng.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0);
    (u * 2.0 - 1.0) * scale
}

fn draw_vec(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| uniform(rng, scale)).collect()
}

fn draw_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> FlatMatrix {
    FlatMatrix::from_raw(rows, cols, draw_vec(rng, rows * cols, scale))
}

impl Model {
    /// Draws every weight from uniform(-1/sqrt(d), 1/sqrt(d)) seeded by
    /// `cfg.seed`. Draw order is fixed: embedding, then per layer the norm
    /// scales/shifts, Q, K, V, O, second norm, FFN weights and biases, then
    /// the logits head and the codebook.
    pub fn init(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let scale = 1.0 / (cfg.d as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let embed = draw_matrix(&mut rng, cfg.d, cfg.d, scale);
        let layers = (0..cfg.depth)
            .map(|_| LayerWeights {
                ln1_gamma: draw_vec(&mut rng, cfg.d, scale),
                ln1_beta: draw_vec(&mut rng, cfg.d, scale),
                wq: draw_matrix(&mut rng, cfg.d, cfg.d, scale),
                wk: draw_matrix(&mut rng, cfg.d, cfg.d, scale),
                wv: draw_matrix(&mut rng, cfg.d, cfg.d, scale),
                wo: draw_matrix(&mut rng, cfg.d, cfg.d, scale),
                ln2_gamma: draw_vec(&mut rng, cfg.d, scale),
                ln2_beta: draw_vec(&mut rng, cfg.d, scale),
                w1: draw_matrix(&mut rng, cfg.d, cfg.d_ff, scale),
                b1: draw_vec(&mut rng, cfg.d_ff, scale),
                w2: draw_matrix(&mut rng, cfg.d_ff, cfg.d, scale),
                b2: draw_vec(&mut rng, cfg.d, scale),
            })
            .collect();
        let head = draw_matrix(&mut rng, cfg.d, cfg.vocab, scale);
        let codebook = draw_matrix(&mut rng, cfg.vocab, cfg.d, scale);
        Ok(Model {
            cfg,
            embed,
            layers,
            head,
            codebook,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// The start map standing in for an encoded condition: a seeded 1x1xd
    /// vector drawn at the same scale as the weights.
    pub fn condition_map(&self, condition_seed: u64) -> TokenMap {
        let mut rng = ChaCha8Rng::seed_from_u64(condition_seed);
        let scale = 1.0 / (self.cfg.d as f32).sqrt();
        TokenMap::from_raw(1, 1, self.cfg.d, draw_vec(&mut rng, self.cfg.d, scale))
    }
}

/// Per-layer key/value sequences of completed forwarded steps. Entry k holds
/// exactly the tokens kept at that step, so pruning shrinks the cache.
#[derive(Debug, Clone)]
pub struct KvCache {
    layers: Vec<Vec<(FlatMatrix, FlatMatrix)>>,
}

impl KvCache {
    pub fn new(depth: usize) -> Self {
        KvCache {
            layers: vec![Vec::new(); depth],
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Completed forwarded steps recorded for `layer`.
    pub fn entry_count(&self, layer: usize) -> usize {
        self.layers[layer].len()
    }

    /// Total cached tokens for `layer` across all entries.
    pub fn tokens_in_layer(&self, layer: usize) -> usize {
        self.layers[layer].iter().map(|(k, _)| k.rows()).sum()
    }

    /// Kept-token count of each entry for `layer`, in step order.
    pub fn entry_sizes(&self, layer: usize) -> Vec<usize> {
        self.layers[layer].iter().map(|(k, _)| k.rows()).collect()
    }

    pub(crate) fn entries(&self, layer: usize) -> &[(FlatMatrix, FlatMatrix)] {
        &self.layers[layer]
    }

    pub(crate) fn push(&mut self, layer: usize, k: FlatMatrix, v: FlatMatrix) {
        debug_assert_eq!(k.rows(), v.rows());
        self.layers[layer].push((k, v));
    }
}

fn layer_norm(x: &FlatMatrix, gamma: &[f32], beta: &[f32]) -> FlatMatrix {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = vec![0.0f32; rows * cols];
    for i in 0..rows {
        let row = x.row(i);
        let mut mean = 0.0f32;
        for &v in row {
            mean += v;
        }
        mean /= cols as f32;
        let mut var = 0.0f32;
        for &v in row {
            let diff = v - mean;
            var += diff * diff;
        }
        var /= cols as f32;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let out_row = &mut out[i * cols..(i + 1) * cols];
        for (j, (o, &v)) in out_row.iter_mut().zip(row).enumerate() {
            *o = (v - mean) * inv * gamma[j] + beta[j];
        }
    }
    FlatMatrix::from_raw(rows, cols, out)
}

fn gelu(x: f32) -> f32 {
    const SQRT_2_OVER_PI: f32 = 0.797_884_6;
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + 0.044715 * x * x * x)).tanh())
}

fn add_bias_rows(m: &mut FlatMatrix, bias: &[f32]) {
    let cols = m.cols();
    for i in 0..m.rows() {
        for (o, &b) in m.row_mut(i).iter_mut().zip(bias) {
            *o += b;
        }
    }
    debug_assert_eq!(cols, bias.len());
}

fn add_in_place(a: &mut FlatMatrix, b: &FlatMatrix) {
    debug_assert_eq!(a.rows(), b.rows());
    debug_assert_eq!(a.cols(), b.cols());
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

/// 2D sinusoidal positional encoding for an (h, w) grid of d-channel
/// tokens. The first half of the channels encodes the row coordinate, the
/// rest the column, each as interleaved sin/cos at geometric frequencies.
/// Pure function of the shape, so any scale appended to a schedule gets
/// positions without precomputation.
pub fn positional_encoding(h: usize, w: usize, d: usize) -> TokenMap {
    let row_part = d / 2;
    let col_part = d - row_part;
    let mut data = vec![0.0f32; h * w * d];
    for r in 0..h {
        for c in 0..w {
            let tok = &mut data[(r * w + c) * d..(r * w + c + 1) * d];
            for (j, slot) in tok.iter_mut().enumerate() {
                let (pos, idx, part) = if j < row_part {
                    (r as f64, j, row_part)
                } else {
                    (c as f64, j - row_part, col_part)
                };
                let pair = (idx / 2) * 2;
                let omega = 1.0 / 10_000f64.powf(pair as f64 / part as f64);
                let angle = pos * omega;
                *slot = if idx % 2 == 0 {
                    angle.sin() as f32
                } else {
                    angle.cos() as f32
                };
            }
        }
    }
    TokenMap::from_raw(h, w, d, data)
}

/// Multi-head attention for one layer. Queries are the tokens of `x_kept`;
/// keys and values are every cached entry for this layer followed by the
/// current tokens' own K/V, which are appended to the cache on completion.
pub fn attention_forward(
    model: &Model,
    layer: usize,
    x_kept: &TokenMap,
    cache: &mut KvCache,
) -> Result<TokenMap> {
    if x_kept.d() != model.cfg.d {
        return Err(FastVarError::Shape(format!(
            "attention input width {} does not match model width {}",
            x_kept.d(),
            model.cfg.d
        )));
    }
    if layer >= model.layers.len() {
        return Err(FastVarError::InvalidArgument(format!(
            "layer {layer} out of range for depth {}",
            model.layers.len()
        )));
    }
    let (h, w) = (x_kept.h(), x_kept.w());
    let x = x_kept.clone().into_matrix();
    let weights = &model.layers[layer];
    let q = numkern::matmul(&x, &weights.wq)?;
    let k_cur = numkern::matmul(&x, &weights.wk)?;
    let v_cur = numkern::matmul(&x, &weights.wv)?;

    let n = x.rows();
    let d = model.cfg.d;
    let heads = model.cfg.heads;
    let hd = model.cfg.head_dim();
    let kv_len = cache.tokens_in_layer(layer) + n;
    let inv_sqrt = 1.0 / (hd as f32).sqrt();

    let mut out = vec![0.0f32; n * d];
    for head in 0..heads {
        let off = head * hd;
        // Per-head Q, and K transposed to (hd, kv_len) so the score matmul
        // sweeps keys contiguously.
        let mut qh = vec![0.0f32; n * hd];
        for i in 0..n {
            qh[i * hd..(i + 1) * hd].copy_from_slice(&q.row(i)[off..off + hd]);
        }
        let mut kt = vec![0.0f32; hd * kv_len];
        let mut vh = vec![0.0f32; kv_len * hd];
        let mut col = 0usize;
        for (k_step, v_step) in cache
            .entries(layer)
            .iter()
            .map(|(k, v)| (k, v))
            .chain(std::iter::once((&k_cur, &v_cur)))
        {
            for j in 0..k_step.rows() {
                let k_row = &k_step.row(j)[off..off + hd];
                for (r, &kv) in k_row.iter().enumerate() {
                    kt[r * kv_len + col] = kv;
                }
                vh[col * hd..(col + 1) * hd].copy_from_slice(&v_step.row(j)[off..off + hd]);
                col += 1;
            }
        }
        debug_assert_eq!(col, kv_len);

        let qh = FlatMatrix::from_raw(n, hd, qh);
        let kt = FlatMatrix::from_raw(hd, kv_len, kt);
        let mut scores = numkern::matmul(&qh, &kt)?;
        for s in scores.data_mut() {
            *s *= inv_sqrt;
        }
        let attn = numkern::softmax_rows(&scores);
        let vh = FlatMatrix::from_raw(kv_len, hd, vh);
        let head_out = numkern::matmul(&attn, &vh)?;
        for i in 0..n {
            out[i * d + off..i * d + off + hd].copy_from_slice(head_out.row(i));
        }
    }

    let out = numkern::matmul(&FlatMatrix::from_raw(n, d, out), &weights.wo)?;
    cache.push(layer, k_cur, v_cur);
    TokenMap::from_matrix(out, h, w)
}

/// Per-token two-layer GELU MLP for one layer; token count unchanged.
pub fn ffn_forward(model: &Model, layer: usize, x_kept: &TokenMap) -> Result<TokenMap> {
    if x_kept.d() != model.cfg.d {
        return Err(FastVarError::Shape(format!(
            "ffn input width {} does not match model width {}",
            x_kept.d(),
            model.cfg.d
        )));
    }
    if layer >= model.layers.len() {
        return Err(FastVarError::InvalidArgument(format!(
            "layer {layer} out of range for depth {}",
            model.layers.len()
        )));
    }
    let (h, w) = (x_kept.h(), x_kept.w());
    let weights = &model.layers[layer];
    let x = x_kept.clone().into_matrix();
    let mut hidden = numkern::matmul(&x, &weights.w1)?;
    add_bias_rows(&mut hidden, &weights.b1);
    for v in hidden.data_mut() {
        *v = gelu(*v);
    }
    let mut out = numkern::matmul(&hidden, &weights.w2)?;
    add_bias_rows(&mut out, &weights.b2);
    TokenMap::from_matrix(out, h, w)
}

/// Per-row token draw. Temperature 0 is argmax with ties to the lowest
/// index; otherwise a categorical draw from softmax(logits / temperature)
/// using one 24-bit uniform per row.
pub fn sample_tokens(
    logits: &FlatMatrix,
    temperature: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(FastVarError::InvalidArgument(format!(
            "temperature {temperature} must be finite and >= 0"
        )));
    }
    if logits.cols() == 0 {
        return Err(FastVarError::Shape("logits have zero columns".into()));
    }
    let mut picks = Vec::with_capacity(logits.rows());
    if temperature == 0.0 {
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            picks.push(best);
        }
        return Ok(picks);
    }
    let scaled: Vec<f32> = logits.data().iter().map(|v| v / temperature).collect();
    let probs = numkern::softmax_rows(&FlatMatrix::from_raw(
        logits.rows(),
        logits.cols(),
        scaled,
    ));
    for i in 0..probs.rows() {
        let r = (rng.next_u32() >> 8) as f32 * (1.0 / 16_777_216.0);
        let row = probs.row(i);
        let mut acc = 0.0f32;
        let mut pick = row.len() - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if r < acc {
                pick = j;
                break;
            }
        }
        picks.push(pick);
    }
    Ok(picks)
}

/// Mutable run state: the running reconstruction, the KV cache, the layer
/// output store for restoration, and the sampling stream.
#[derive(Debug)]
pub struct GenerationState {
    step: usize,
    r_tilde: TokenMap,
    cache: KvCache,
    store: Option<LayerCacheStore>,
    sample_rng: ChaCha8Rng,
    pruning: bool,
}

impl GenerationState {
    pub fn new(
        model: &Model,
        sched: &ScaleSchedule,
        condition_seed: u64,
        sample_seed: u64,
        pruning: bool,
    ) -> Result<Self> {
        let store = if pruning {
            Some(LayerCacheStore::new(sched.cache_step(), model.cfg.depth)?)
        } else {
            None
        };
        Ok(GenerationState {
            step: 0,
            r_tilde: model.condition_map(condition_seed),
            cache: KvCache::new(model.cfg.depth),
            store,
            sample_rng: ChaCha8Rng::seed_from_u64(sample_seed),
            pruning,
        })
    }

    /// Completed step count.
    pub fn step(&self) -> usize {
        self.step
    }

    /// The reconstruction after the last completed step.
    pub fn r_tilde(&self) -> &TokenMap {
        &self.r_tilde
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    pub fn store(&self) -> Option<&LayerCacheStore> {
        self.store.as_ref()
    }
}

/// What one decode step produced besides the state update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub metrics: StepMetrics,
    /// Layer 0's attention keep decision, present only when the step
    /// actually pruned (ratio strictly between 0 and 1).
    pub mask: Option<PruneDecision>,
}

/// Runs sublayer `kind` for one layer, wrapped in selection and restoration
/// when `ratio` is nonzero. Ratio 0 bypasses the wrappers entirely so the
/// unpruned path stays bit-identical to a run without pruning support.
#[allow(clippy::too_many_arguments)]
fn run_sublayer(
    model: &Model,
    layer: usize,
    kind: SublayerKind,
    normed: &TokenMap,
    ratio: f32,
    state_store: Option<&LayerCacheStore>,
    cache: &mut KvCache,
    sched: &ScaleSchedule,
    target: (usize, usize),
) -> Result<(TokenMap, Option<PruneDecision>)> {
    let call = |input: &TokenMap, cache: &mut KvCache| -> Result<TokenMap> {
        match kind {
            SublayerKind::Attention => attention_forward(model, layer, input, cache),
            SublayerKind::Ffn => ffn_forward(model, layer, input),
        }
    };
    if ratio == 0.0 {
        return Ok((call(normed, cache)?, None));
    }
    let store = state_store.ok_or_else(|| {
        FastVarError::State("pruning requested but no layer cache store exists".into())
    })?;
    let (kept, decision) = select_pivotal(normed, ratio)?;
    let y_kept = call(&kept, cache)?;
    let restored = fastvar::restore_cached(
        &y_kept,
        store,
        layer,
        kind,
        &decision,
        target,
        sched.mode(),
    )?;
    Ok((restored, Some(decision)))
}

/// Executes scale step `state.step + 1`: resize the running reconstruction,
/// embed with positions, run every layer (pruned or not), sample the
/// residual, and update the reconstruction. A step whose ratio is exactly
/// 1.0 skips all model work and just upsamples. At the caching step (with
/// pruning active) every sublayer's full-resolution output is recorded for
/// later restoration.
pub fn decode_scale_step(
    state: &mut GenerationState,
    model: &Model,
    sched: &ScaleSchedule,
) -> Result<StepOutcome> {
    let k = state.step + 1;
    if k > sched.k() {
        return Err(FastVarError::State(format!(
            "schedule exhausted: step {k} past K = {}",
            sched.k()
        )));
    }
    let started = Instant::now();
    let (h, w) = sched.size(k);
    let tokens = h * w;
    let ratio = if state.pruning {
        sched.ratio_for_step(k)
    } else {
        0.0
    };
    let cfg = &model.cfg;

    if ratio == 1.0 {
        // Whole-step skip: the residual is zero, the reconstruction is the
        // plain upsample, and no KV entries or model FLOPs are spent.
        state.r_tilde = numkern::resize(&state.r_tilde, (h, w), sched.mode())?;
        state.step = k;
        let kv_total = state.cache.tokens_in_layer(0);
        return Ok(StepOutcome {
            metrics: StepMetrics {
                step: k,
                h,
                w,
                forwarded_tokens: 0,
                kv_total,
                est_flops: 0,
                wall_ns: started.elapsed().as_nanos() as u64,
                skipped: true,
            },
            mask: None,
        });
    }

    let keep = fastvar::keep_count(tokens, ratio);
    let upsampled = numkern::resize(&state.r_tilde, (h, w), sched.mode())?;
    let mut x = numkern::matmul(&upsampled.clone().into_matrix(), &model.embed)?;
    let pe = positional_encoding(h, w, cfg.d);
    add_in_place(&mut x, &pe.clone().into_matrix());

    let mut step_mask: Option<PruneDecision> = None;
    for layer in 0..cfg.depth {
        let weights = &model.layers[layer];
        for kind in [SublayerKind::Attention, SublayerKind::Ffn] {
            let (gamma, beta) = match kind {
                SublayerKind::Attention => (&weights.ln1_gamma, &weights.ln1_beta),
                SublayerKind::Ffn => (&weights.ln2_gamma, &weights.ln2_beta),
            };
            let normed = TokenMap::from_matrix(layer_norm(&x, gamma, beta), h, w)?;
            let (y, decision) = run_sublayer(
                model,
                layer,
                kind,
                &normed,
                ratio,
                state.store.as_ref(),
                &mut state.cache,
                sched,
                (h, w),
            )?;
            if layer == 0 && kind == SublayerKind::Attention {
                step_mask = decision;
            }
            if state.pruning && k == sched.cache_step() {
                if let Some(store) = state.store.as_mut() {
                    store.capture(k, layer, kind, y.clone())?;
                }
            }
            add_in_place(&mut x, &y.clone().into_matrix());
        }
    }

    let logits = numkern::matmul(&x, &model.head)?;
    let picks = sample_tokens(&logits, cfg.temperature, &mut state.sample_rng)?;
    let mut residual = vec![0.0f32; tokens * cfg.d];
    for (t, &idx) in picks.iter().enumerate() {
        residual[t * cfg.d..(t + 1) * cfg.d].copy_from_slice(model.codebook.row(idx));
    }
    let f_k = TokenMap::from_raw(h, w, cfg.d, residual);
    state.r_tilde = numkern::add(&upsampled, &f_k)?;
    state.step = k;

    let kv_total = state.cache.tokens_in_layer(0);
    Ok(StepOutcome {
        metrics: StepMetrics {
            step: k,
            h,
            w,
            forwarded_tokens: keep,
            kv_total,
            est_flops: step_flops(cfg, keep, kv_total),
            wall_ns: started.elapsed().as_nanos() as u64,
            skipped: false,
        },
        mask: step_mask,
    })
}

/// A complete run: the final reconstruction, per-step metrics, and the
/// per-step keep masks of the pruned steps.
#[derive(Debug)]
pub struct GenerationOutput {
    pub map: TokenMap,
    pub metrics: RunMetrics,
    pub masks: Vec<(usize, PruneDecision)>,
}

/// Runs all K scale steps from a seeded condition vector and returns the
/// final map with its metrics. `pruning` turns the selection/restoration
/// wrappers and skip semantics on; with it off, schedule ratios are ignored.
pub fn generate(
    model: &Model,
    sched: &ScaleSchedule,
    condition_seed: u64,
    sample_seed: u64,
    pruning: bool,
) -> Result<GenerationOutput> {
    let mut state = GenerationState::new(model, sched, condition_seed, sample_seed, pruning)?;
    let mut steps = Vec::with_capacity(sched.k());
    let mut masks = Vec::new();
    for _ in 1..=sched.k() {
        let outcome = decode_scale_step(&mut state, model, sched)?;
        if let Some(mask) = outcome.mask {
            masks.push((outcome.metrics.step, mask));
        }
        steps.push(outcome.metrics);
    }
    Ok(GenerationOutput {
        map: state.r_tilde,
        metrics: RunMetrics { steps },
        masks,
    })
}
