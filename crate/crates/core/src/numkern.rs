//! Dense f32 kernels with pinned, reproducible semantics.
//!
//! Every accumulation in this module runs in a fixed left-to-right order, so
//! repeated runs on the same machine produce bit-identical results and test
//! fixtures can assert exact values. Reductions are laid out so the innermost
//! loop walks contiguous memory without carrying a float dependency, which
//! lets the compiler vectorize without reassociating sums.

use crate::error::{FastVarError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// An (h, w, d) feature grid stored row-major by token, channels contiguous
/// per token. Token index `t = row * w + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMap {
    h: usize,
    w: usize,
    d: usize,
    data: Vec<f32>,
}

impl TokenMap {
    /// Builds a map, validating dimensions, length, and finiteness.
    pub fn new(h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || d == 0 {
            return Err(FastVarError::Shape(format!(
                "token map dims must be >= 1, got {h}x{w}x{d}"
            )));
        }
        let want = h
            .checked_mul(w)
            .and_then(|hw| hw.checked_mul(d))
            .ok_or_else(|| {
                FastVarError::Shape(format!("token map dims {h}x{w}x{d} overflow"))
            })?;
        if data.len() != want {
            return Err(FastVarError::Shape(format!(
                "token map {h}x{w}x{d} wants {want} values, got {}",
                data.len()
            )));
        }
        validate_finite(&data)?;
        Ok(TokenMap { h, w, d, data })
    }

    /// Internal constructor for values produced by kernels in this crate.
    /// Inputs are validated at the boundary; arithmetic on finite in-range
    /// values stays finite, which debug builds re-check.
    pub(crate) fn from_raw(h: usize, w: usize, d: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), h * w * d);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        TokenMap { h, w, d, data }
    }

    pub fn zeros(h: usize, w: usize, d: usize) -> Result<Self> {
        TokenMap::new(h, w, d, vec![0.0; h.checked_mul(w).and_then(|hw| hw.checked_mul(d)).unwrap_or(0)])
    }

    /// Constant-valued map, handy in tests and for skipped-step residuals.
    pub fn constant(h: usize, w: usize, d: usize, c: f32) -> Result<Self> {
        let mut m = TokenMap::zeros(h, w, d)?;
        m.data.fill(c);
        validate_finite(&m.data)?;
        Ok(m)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Token count h*w.
    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    /// Channel slice of token `t`.
    pub fn token(&self, t: usize) -> &[f32] {
        &self.data[t * self.d..(t + 1) * self.d]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Reinterprets the map as an (h*w, d) matrix without copying.
    pub fn into_matrix(self) -> FlatMatrix {
        FlatMatrix {
            rows: self.h * self.w,
            cols: self.d,
            data: self.data,
        }
    }

    /// Reinterprets an (h*w, d) matrix as an (h, w, d) map without copying.
    pub fn from_matrix(m: FlatMatrix, h: usize, w: usize) -> Result<Self> {
        if m.rows != h * w {
            return Err(FastVarError::Shape(format!(
                "matrix has {} rows, cannot view as {h}x{w} tokens",
                m.rows
            )));
        }
        TokenMap::new(h, w, m.cols, m.data)
    }
}

/// Row-major 2-D matrix of f32 (weights, logits, attention scores).
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl FlatMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let want = rows.checked_mul(cols).ok_or_else(|| {
            FastVarError::Shape(format!("matrix dims {rows}x{cols} overflow"))
        })?;
        if data.len() != want {
            return Err(FastVarError::Shape(format!(
                "matrix {rows}x{cols} wants {want} values, got {}",
                data.len()
            )));
        }
        validate_finite(&data)?;
        Ok(FlatMatrix { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        debug_assert!(data.iter().all(|v| v.is_finite()));
        FlatMatrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FlatMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Strictly increasing token indices into a map with `capacity` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexList {
    indices: Vec<usize>,
    capacity: usize,
}

impl IndexList {
    pub fn new(indices: Vec<usize>, capacity: usize) -> Result<Self> {
        for pair in indices.windows(2) {
            if pair[0] >= pair[1] {
                return Err(FastVarError::InvalidArgument(format!(
                    "indices must be strictly increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= capacity {
                return Err(FastVarError::InvalidArgument(format!(
                    "index {last} out of range for capacity {capacity}"
                )));
            }
        }
        Ok(IndexList { indices, capacity })
    }

    /// The identity list: every index of a map with `capacity` tokens.
    pub fn full(capacity: usize) -> Self {
        IndexList {
            indices: (0..capacity).collect(),
            capacity,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }
}

/// Spatial resampling convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

impl fmt::Display for ResizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResizeMode::Nearest => write!(f, "nearest"),
            ResizeMode::Bilinear => write!(f, "bilinear"),
        }
    }
}

impl FromStr for ResizeMode {
    type Err = FastVarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResizeMode::Nearest),
            "bilinear" => Ok(ResizeMode::Bilinear),
            other => Err(FastVarError::InvalidArgument(format!(
                "unknown resize mode {other:?}, expected nearest or bilinear"
            ))),
        }
    }
}

fn validate_finite(data: &[f32]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(FastVarError::InvalidArgument(format!(
            "non-finite value {} at flat index {pos}",
            data[pos]
        )));
    }
    Ok(())
}

/// Matrix product with per-element accumulation in ascending-k order.
///
/// The loop nest is i-k-j: for each output row the k loop is outer and the
/// j loop inner, so every output element still sees its k terms strictly
/// left to right while the inner loop stays a contiguous, dependency-free
/// sweep the compiler can vectorize.
pub fn matmul(a: &FlatMatrix, b: &FlatMatrix) -> Result<FlatMatrix> {
    if a.cols != b.rows {
        return Err(FastVarError::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = vec![0.0f32; a.rows * b.cols];
    for i in 0..a.rows {
        let a_row = &a.data[i * a.cols..(i + 1) * a.cols];
        let out_row = &mut out[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
    Ok(FlatMatrix::from_raw(a.rows, b.cols, out))
}

/// Row-wise softmax with max subtraction, so rows of any magnitude stay in
/// range.
pub fn softmax_rows(m: &FlatMatrix) -> FlatMatrix {
    let mut out = vec![0.0f32; m.data.len()];
    for i in 0..m.rows {
        let row = m.row(i);
        let out_row = &mut out[i * m.cols..(i + 1) * m.cols];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &v) in out_row.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            sum += e;
        }
        let inv = 1.0 / sum;
        for o in out_row.iter_mut() {
            *o *= inv;
        }
    }
    FlatMatrix::from_raw(m.rows, m.cols, out)
}

/// Linear interpolation written as `a + t*(b - a)`, which returns `a`
/// exactly when the endpoints coincide. That form is what makes constant
/// maps survive bilinear resampling bit-exactly.
#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Axis coordinate for bilinear sampling: low index, high index, fraction.
#[inline]
fn bilinear_axis(i: usize, src: usize, dst: usize) -> (usize, usize, f32) {
    let pos = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
    if pos <= 0.0 {
        (0, 0, 0.0)
    } else if pos >= (src - 1) as f64 {
        (src - 1, src - 1, 0.0)
    } else {
        let lo = pos.floor() as usize;
        (lo, lo + 1, (pos - lo as f64) as f32)
    }
}

/// Nearest-neighbor source index for output position `i`.
#[inline]
fn nearest_axis(i: usize, src: usize, dst: usize) -> usize {
    let pos = (i as f64 + 0.5) * src as f64 / dst as f64;
    (pos.floor() as usize).min(src - 1)
}

/// Per-channel spatial resampling to `target` (h, w).
///
/// Nearest picks `floor((i + 0.5) * src / dst)` clamped into range. Bilinear
/// samples at half-pixel centers with clamped corner extension. A same-size
/// resize returns the input bit-identically in both modes.
pub fn resize(x: &TokenMap, target: (usize, usize), mode: ResizeMode) -> Result<TokenMap> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(FastVarError::InvalidArgument(format!(
            "resize target must be >= 1x1, got {th}x{tw}"
        )));
    }
    if th == x.h && tw == x.w {
        return Ok(x.clone());
    }
    let d = x.d;
    let mut out = vec![0.0f32; th * tw * d];
    match mode {
        ResizeMode::Nearest => {
            let sy: Vec<usize> = (0..th).map(|i| nearest_axis(i, x.h, th)).collect();
            let sx: Vec<usize> = (0..tw).map(|i| nearest_axis(i, x.w, tw)).collect();
            for oy in 0..th {
                for ox in 0..tw {
                    let src = x.token(sy[oy] * x.w + sx[ox]);
                    let dst = &mut out[(oy * tw + ox) * d..(oy * tw + ox + 1) * d];
                    dst.copy_from_slice(src);
                }
            }
        }
        ResizeMode::Bilinear => {
            let ys: Vec<(usize, usize, f32)> =
                (0..th).map(|i| bilinear_axis(i, x.h, th)).collect();
            let xs: Vec<(usize, usize, f32)> =
                (0..tw).map(|i| bilinear_axis(i, x.w, tw)).collect();
            for oy in 0..th {
                let (y0, y1, fy) = ys[oy];
                for ox in 0..tw {
                    let (x0, x1, fx) = xs[ox];
                    let t00 = x.token(y0 * x.w + x0);
                    let t01 = x.token(y0 * x.w + x1);
                    let t10 = x.token(y1 * x.w + x0);
                    let t11 = x.token(y1 * x.w + x1);
                    let dst = &mut out[(oy * tw + ox) * d..(oy * tw + ox + 1) * d];
                    for c in 0..d {
                        let top = lerp(t00[c], t01[c], fx);
                        let bot = lerp(t10[c], t11[c], fx);
                        dst[c] = lerp(top, bot, fy);
                    }
                }
            }
        }
    }
    Ok(TokenMap::from_raw(th, tw, d, out))
}

/// Per-channel mean over all tokens, accumulated in ascending token order.
pub fn global_avg_pool(x: &TokenMap) -> Vec<f32> {
    let mut sum = vec![0.0f32; x.d];
    for t in 0..x.tokens() {
        let tok = x.token(t);
        for (s, &v) in sum.iter_mut().zip(tok) {
            *s += v;
        }
    }
    let inv = 1.0 / x.tokens() as f32;
    for s in sum.iter_mut() {
        *s *= inv;
    }
    sum
}

/// Indices of the k largest scores. Ties go to the smaller index; the
/// result comes back in increasing index order.
pub fn topk_indices(scores: &[f32], k: usize) -> Result<IndexList> {
    if k > scores.len() {
        return Err(FastVarError::InvalidArgument(format!(
            "k = {k} exceeds score count {}",
            scores.len()
        )));
    }
    validate_finite(scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores validated finite")
            .then(a.cmp(&b))
    });
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    IndexList::new(kept, scores.len())
}

/// Collects the tokens named by `index` into a (1, |index|, d) map.
pub fn gather_rows(x: &TokenMap, index: &IndexList) -> Result<TokenMap> {
    if index.capacity() != x.tokens() {
        return Err(FastVarError::InvalidArgument(format!(
            "index capacity {} does not match token count {}",
            index.capacity(),
            x.tokens()
        )));
    }
    if index.is_empty() {
        return Err(FastVarError::InvalidArgument(
            "cannot gather zero tokens into a map".into(),
        ));
    }
    let d = x.d;
    let mut out = vec![0.0f32; index.len() * d];
    for (j, &t) in index.indices().iter().enumerate() {
        out[j * d..(j + 1) * d].copy_from_slice(x.token(t));
    }
    Ok(TokenMap::from_raw(1, index.len(), d, out))
}

/// Copy of `base` with token `index[j]` replaced by token j of `src`.
pub fn scatter_rows(base: &TokenMap, index: &IndexList, src: &TokenMap) -> Result<TokenMap> {
    if index.capacity() != base.tokens() {
        return Err(FastVarError::InvalidArgument(format!(
            "index capacity {} does not match base token count {}",
            index.capacity(),
            base.tokens()
        )));
    }
    if src.tokens() != index.len() {
        return Err(FastVarError::Shape(format!(
            "source has {} tokens but index names {}",
            src.tokens(),
            index.len()
        )));
    }
    if src.d != base.d {
        return Err(FastVarError::Shape(format!(
            "channel mismatch: base d = {}, source d = {}",
            base.d, src.d
        )));
    }
    let d = base.d;
    let mut out = base.data.clone();
    for (j, &t) in index.indices().iter().enumerate() {
        out[t * d..(t + 1) * d].copy_from_slice(src.token(j));
    }
    Ok(TokenMap::from_raw(base.h, base.w, d, out))
}

/// Element-wise sum of two maps of identical shape.
pub fn add(a: &TokenMap, b: &TokenMap) -> Result<TokenMap> {
    if a.h != b.h || a.w != b.w || a.d != b.d {
        return Err(FastVarError::Shape(format!(
            "add {}x{}x{} vs {}x{}x{}",
            a.h, a.w, a.d, b.h, b.w, b.d
        )));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| x + y)
        .collect();
    Ok(TokenMap::from_raw(a.h, a.w, a.d, data))
}
