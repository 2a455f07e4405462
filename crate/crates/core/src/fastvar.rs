//! Cached token pruning: pivotal token selection, the per-layer output
//! cache, cached token restoration, and progressive prune schedules.
//!
//! The protocol wraps any per-token sublayer. Before the sublayer runs,
//! tokens are scored by how far they sit from the map's spatial mean (the
//! cheap low-frequency estimate); only the top-scoring slice is forwarded.
//! Afterwards the missing slots are filled from the sublayer's own output at
//! the caching step, upsampled to the current scale. A ratio of exactly 1.0
//! is never handled here: the decode loop skips such steps outright.

use crate::error::{FastVarError, Result};
use crate::numkern::{self, IndexList, ResizeMode, TokenMap};
use crate::pyramid::ScaleSchedule;

/// Which sublayer of a transformer block an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SublayerKind {
    Attention,
    Ffn,
}

impl SublayerKind {
    fn slot(self) -> usize {
        match self {
            SublayerKind::Attention => 0,
            SublayerKind::Ffn => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SublayerKind::Attention => "attention",
            SublayerKind::Ffn => "ffn",
        }
    }
}

/// The kept-token index set for one sublayer call at one scale step.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneDecision {
    kept: IndexList,
    ratio: f32,
    total: usize,
}

impl PruneDecision {
    pub fn new(kept: IndexList, ratio: f32, total: usize) -> Result<Self> {
        if !ratio.is_finite() || !(0.0..1.0).contains(&ratio) {
            return Err(FastVarError::InvalidArgument(format!(
                "pruning ratio {ratio} outside [0, 1)"
            )));
        }
        if kept.capacity() != total {
            return Err(FastVarError::InvalidArgument(format!(
                "index capacity {} does not match token total {total}",
                kept.capacity()
            )));
        }
        let want = keep_count(total, ratio);
        if kept.len() != want {
            return Err(FastVarError::InvalidArgument(format!(
                "decision keeps {} tokens, ratio {ratio} of {total} demands {want}",
                kept.len()
            )));
        }
        Ok(PruneDecision { kept, ratio, total })
    }

    pub fn kept(&self) -> &IndexList {
        &self.kept
    }

    pub fn keep(&self) -> usize {
        self.kept.len()
    }

    pub fn ratio(&self) -> f32 {
        self.ratio
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn is_kept(&self, t: usize) -> bool {
        self.kept.contains(t)
    }
}

/// One texture step's pruning assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneScheduleEntry {
    pub step: usize,
    pub ratio: f32,
}

/// Texture-step pruning assignments of a schedule, in step order.
pub fn prune_entries(sched: &ScaleSchedule) -> Vec<PruneScheduleEntry> {
    (sched.structure_end() + 1..=sched.k())
        .map(|step| PruneScheduleEntry {
            step,
            ratio: sched.ratio_for_step(step),
        })
        .collect()
}

/// Tokens to forward under `ratio`: total minus round(ratio * total), with
/// halves rounding up. The product is formed in f64 so the rounding decision
/// never depends on f32 representation error.
pub fn keep_count(total: usize, ratio: f32) -> usize {
    let pruned = (ratio as f64 * total as f64).round() as usize;
    total - pruned.min(total)
}

/// Squared distance of each token from the per-channel spatial mean,
/// accumulated over channels in ascending order. Monotone in the reported
/// score, so selection orders by this and skips the square roots.
pub(crate) fn pivotal_score_squared(x: &TokenMap) -> Vec<f32> {
    let mean = numkern::global_avg_pool(x);
    let mut scores = Vec::with_capacity(x.tokens());
    for t in 0..x.tokens() {
        let tok = x.token(t);
        let mut acc = 0.0f32;
        for (v, m) in tok.iter().zip(&mean) {
            let diff = v - m;
            acc += diff * diff;
        }
        scores.push(acc);
    }
    scores
}

/// Per-token L2 distance from the spatial mean: the high-frequency score.
/// A constant map scores 0 everywhere; a single-token map is its own mean.
pub fn pivotal_score(x: &TokenMap) -> Vec<f32> {
    pivotal_score_squared(x).into_iter().map(f32::sqrt).collect()
}

/// Scores the map, keeps the top `keep_count(total, ratio)` tokens, and
/// returns them as a (1, keep, d) map plus the decision record. Ratio 1.0 is
/// refused: a step that drops everything must take the skip path instead of
/// calling sublayers on an empty map.
pub fn select_pivotal(x: &TokenMap, ratio: f32) -> Result<(TokenMap, PruneDecision)> {
    if !ratio.is_finite() || !(0.0..1.0).contains(&ratio) {
        return Err(FastVarError::InvalidArgument(format!(
            "pruning ratio {ratio} outside [0, 1); ratio 1.0 belongs to the skip path"
        )));
    }
    let total = x.tokens();
    let keep = keep_count(total, ratio);
    if keep == 0 {
        return Err(FastVarError::InvalidArgument(format!(
            "ratio {ratio} of {total} tokens keeps nothing; use a skip step instead"
        )));
    }
    let scores = pivotal_score_squared(x);
    let kept = numkern::topk_indices(&scores, keep)?;
    let x_kept = numkern::gather_rows(x, &kept)?;
    let decision = PruneDecision::new(kept, ratio, total)?;
    Ok((x_kept, decision))
}

/// Full-resolution sublayer outputs captured at the caching step, one entry
/// per (layer, sublayer kind). Write-once: each entry can be recorded exactly
/// once, only at the store's step, and is immutable afterwards.
#[derive(Debug, Clone)]
pub struct LayerCacheStore {
    step: usize,
    entries: Vec<[Option<TokenMap>; 2]>,
}

impl LayerCacheStore {
    pub fn new(step: usize, depth: usize) -> Result<Self> {
        if step == 0 || depth == 0 {
            return Err(FastVarError::InvalidArgument(format!(
                "cache store wants step >= 1 and depth >= 1, got step {step}, depth {depth}"
            )));
        }
        Ok(LayerCacheStore {
            step,
            entries: vec![[None, None]; depth],
        })
    }

    /// The step this store accepts writes at.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    /// Records a sublayer output. `current_step` must equal the store's
    /// step, the slot must be empty, and the shape must agree with any
    /// entry already present.
    pub fn capture(
        &mut self,
        current_step: usize,
        layer: usize,
        kind: SublayerKind,
        y: TokenMap,
    ) -> Result<()> {
        if current_step != self.step {
            return Err(FastVarError::State(format!(
                "cache writes happen at step {}, attempted at step {current_step}",
                self.step
            )));
        }
        if layer >= self.entries.len() {
            return Err(FastVarError::InvalidArgument(format!(
                "layer {layer} out of range for depth {}",
                self.entries.len()
            )));
        }
        if let Some(existing) = self.any_entry() {
            if existing.h() != y.h() || existing.w() != y.w() || existing.d() != y.d() {
                return Err(FastVarError::Shape(format!(
                    "cache entry {}x{}x{} disagrees with established shape {}x{}x{}",
                    y.h(),
                    y.w(),
                    y.d(),
                    existing.h(),
                    existing.w(),
                    existing.d()
                )));
            }
        }
        let slot = &mut self.entries[layer][kind.slot()];
        if slot.is_some() {
            return Err(FastVarError::State(format!(
                "cache for layer {layer} {} already captured",
                kind.name()
            )));
        }
        *slot = Some(y);
        Ok(())
    }

    pub fn get(&self, layer: usize, kind: SublayerKind) -> Option<&TokenMap> {
        self.entries.get(layer)?.get(kind.slot())?.as_ref()
    }

    pub fn is_captured(&self, layer: usize, kind: SublayerKind) -> bool {
        self.get(layer, kind).is_some()
    }

    fn any_entry(&self) -> Option<&TokenMap> {
        self.entries
            .iter()
            .flat_map(|pair| pair.iter())
            .find_map(|e| e.as_ref())
    }
}

/// Rebuilds a full-resolution sublayer output: upsample the cached output to
/// `target` and scatter the freshly computed kept tokens into their slots.
/// With every token kept, the result is just `y_kept` reshaped and the cache
/// is not consulted.
pub fn restore_cached(
    y_kept: &TokenMap,
    store: &LayerCacheStore,
    layer: usize,
    kind: SublayerKind,
    decision: &PruneDecision,
    target: (usize, usize),
    mode: ResizeMode,
) -> Result<TokenMap> {
    let (h, w) = target;
    if decision.kept().capacity() != h * w {
        return Err(FastVarError::InvalidArgument(format!(
            "decision covers {} tokens, target {h}x{w} has {}",
            decision.kept().capacity(),
            h * w
        )));
    }
    if y_kept.tokens() != decision.keep() {
        return Err(FastVarError::Shape(format!(
            "fresh output has {} tokens, decision kept {}",
            y_kept.tokens(),
            decision.keep()
        )));
    }
    if decision.keep() == decision.total() {
        return TokenMap::new(h, w, y_kept.d(), y_kept.data().to_vec());
    }
    let cache = store.get(layer, kind).ok_or_else(|| {
        FastVarError::State(format!(
            "no cache captured for layer {layer} {}",
            kind.name()
        ))
    })?;
    let base = numkern::resize(cache, target, mode)?;
    numkern::scatter_rows(&base, decision.kept(), y_kept)
}

/// Attaches texture-stage ratios to a schedule, enforcing the progressive
/// rule: ratios never decrease across the texture steps (which also forces
/// every step after a full skip to be a full skip).
pub fn make_prune_schedule(sched: &ScaleSchedule, ratios: Vec<f32>) -> Result<ScaleSchedule> {
    if ratios.len() != sched.n_texture() {
        return Err(FastVarError::InvalidArgument(format!(
            "schedule has {} texture steps, got {} ratios",
            sched.n_texture(),
            ratios.len()
        )));
    }
    for pair in ratios.windows(2) {
        if pair[1] < pair[0] {
            return Err(FastVarError::InvalidArgument(format!(
                "pruning ratios must be non-decreasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    ScaleSchedule::new(
        sched.sizes().to_vec(),
        sched.n_texture(),
        ratios,
        Some(sched.cache_step()),
        sched.mode(),
    )
}
