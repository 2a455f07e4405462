//! C ABI for the fastvar engine: opaque handles, integer status codes, and
//! a thread-local error message. The generated header lands in
//! include/fastvar.h at build time.
//!
//! Conventions: constructors write a handle through an out pointer and
//! return a status; every handle has a matching `_free` that accepts null;
//! any failing call records a message retrievable with `fv_last_error`
//! until the next failing call on the same thread. All pointers must be
//! valid for the stated lengths; nothing here is thread-safe to mutate
//! concurrently, but distinct handles may be used from distinct threads.

use fastvar::bench::{flop_estimate, spectrum_profile, RunMetrics};
use fastvar::fastvar::make_prune_schedule;
use fastvar::numkern::{ResizeMode, TokenMap};
use fastvar::pyramid::ScaleSchedule;
use fastvar::varnet::{generate, Model, ModelConfig};
use fastvar::FastVarError;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Result of every fallible call. `FV_STATUS_OK` is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvStatus {
    Ok = 0,
    Shape = 1,
    InvalidArgument = 2,
    State = 3,
    Parse = 4,
    Config = 5,
    Io = 6,
    NullPointer = 7,
    Internal = 8,
}

/// Spatial resampling convention used between scale steps.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FvResizeMode {
    Nearest = 0,
    Bilinear = 1,
}

/// One decode step's accounting row, mirrored from the metrics report.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FvStepMetrics {
    pub step: usize,
    pub h: usize,
    pub w: usize,
    pub forwarded_tokens: usize,
    pub kv_total: usize,
    pub est_flops: u64,
    pub wall_ns: u64,
    pub skipped: bool,
}

/// Opaque weight bundle.
pub struct FvModel {
    inner: Model,
}

/// Opaque scale schedule.
pub struct FvSchedule {
    inner: ScaleSchedule,
}

/// Opaque token map.
pub struct FvMap {
    inner: TokenMap,
}

/// Opaque per-run metrics.
pub struct FvMetrics {
    inner: RunMetrics,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn record_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes stripped");
    });
}

fn status_of(err: &FastVarError) -> FvStatus {
    match err.kind() {
        "shape" => FvStatus::Shape,
        "invalid_argument" => FvStatus::InvalidArgument,
        "state" => FvStatus::State,
        "parse" => FvStatus::Parse,
        "config" => FvStatus::Config,
        "io" => FvStatus::Io,
        _ => FvStatus::Internal,
    }
}

fn fail(err: &FastVarError) -> FvStatus {
    record_error(&err.to_string());
    status_of(err)
}

fn fail_null(what: &str) -> FvStatus {
    record_error(&format!("{what} is null"));
    FvStatus::NullPointer
}

fn guard(f: impl FnOnce() -> FvStatus) -> FvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            record_error("internal panic crossed the ABI boundary");
            FvStatus::Internal
        }
    }
}

/// Library version as a static, nul-terminated string.
#[no_mangle]
pub extern "C" fn fv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failing call on this thread, empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fv_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a model from its hyperparameters and the weight seed.
///
/// # Safety
/// `out` must be a valid pointer to a `FvModel*` slot.
#[no_mangle]
pub unsafe extern "C" fn fv_model_new(
    depth: usize,
    d: usize,
    heads: usize,
    d_ff: usize,
    vocab: usize,
    weight_seed: u64,
    temperature: f32,
    out: *mut *mut FvModel,
) -> FvStatus {
    guard(|| {
        if out.is_null() {
            return fail_null("out");
        }
        let cfg = ModelConfig {
            depth,
            d,
            heads,
            d_ff,
            vocab,
            seed: weight_seed,
            temperature,
        };
        match Model::init(cfg) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(FvModel { inner: model })) };
                FvStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer returned by `fv_model_new` that has
/// not been freed already.
#[no_mangle]
pub unsafe extern "C" fn fv_model_free(model: *mut FvModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Builds a square-scale schedule. `sides` lists the per-step side lengths;
/// the final `n_texture` steps form the pruning stage. `ratios` may be null
/// with `ratio_count` 0 to leave every ratio at zero; otherwise it must
/// hold `n_texture` non-decreasing values in [0, 1]. `cache_step` 0 picks
/// the default (the last step before the texture stage).
///
/// # Safety
/// `sides` must point to `side_count` values, `ratios` to `ratio_count`
/// values (or be null with count 0), and `out` to a `FvSchedule*` slot.
#[no_mangle]
pub unsafe extern "C" fn fv_schedule_new(
    sides: *const u32,
    side_count: usize,
    n_texture: usize,
    ratios: *const f32,
    ratio_count: usize,
    cache_step: usize,
    mode: FvResizeMode,
    out: *mut *mut FvSchedule,
) -> FvStatus {
    guard(|| {
        if out.is_null() {
            return fail_null("out");
        }
        if sides.is_null() {
            return fail_null("sides");
        }
        if ratios.is_null() && ratio_count != 0 {
            return fail_null("ratios");
        }
        let sides = unsafe { std::slice::from_raw_parts(sides, side_count) };
        let sizes = sides.iter().map(|&s| (s as usize, s as usize)).collect();
        let mode = match mode {
            FvResizeMode::Nearest => ResizeMode::Nearest,
            FvResizeMode::Bilinear => ResizeMode::Bilinear,
        };
        let cache = if cache_step == 0 { None } else { Some(cache_step) };
        let base = match ScaleSchedule::new(sizes, n_texture, vec![0.0; n_texture], cache, mode) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let sched = if ratio_count > 0 {
            let ratios = unsafe { std::slice::from_raw_parts(ratios, ratio_count) };
            match make_prune_schedule(&base, ratios.to_vec()) {
                Ok(s) => s,
                Err(e) => return fail(&e),
            }
        } else {
            base
        };
        unsafe { *out = Box::into_raw(Box::new(FvSchedule { inner: sched })) };
        FvStatus::Ok
    })
}

/// Releases a schedule handle. Null is a no-op.
///
/// # Safety
/// `sched` must be null or an unfreed pointer from `fv_schedule_new`.
#[no_mangle]
pub unsafe extern "C" fn fv_schedule_free(sched: *mut FvSchedule) {
    if !sched.is_null() {
        drop(unsafe { Box::from_raw(sched) });
    }
}

/// Runs the full decode loop and returns the final map, plus per-step
/// metrics when `out_metrics` is non-null. `pruning` false ignores the
/// schedule's ratios.
///
/// # Safety
/// `model` and `sched` must be valid unfreed handles, `out_map` a valid
/// `FvMap*` slot, and `out_metrics` null or a valid `FvMetrics*` slot.
#[no_mangle]
pub unsafe extern "C" fn fv_generate(
    model: *const FvModel,
    sched: *const FvSchedule,
    condition_seed: u64,
    sample_seed: u64,
    pruning: bool,
    out_map: *mut *mut FvMap,
    out_metrics: *mut *mut FvMetrics,
) -> FvStatus {
    guard(|| {
        if model.is_null() {
            return fail_null("model");
        }
        if sched.is_null() {
            return fail_null("sched");
        }
        if out_map.is_null() {
            return fail_null("out_map");
        }
        let model = unsafe { &(*model).inner };
        let sched = unsafe { &(*sched).inner };
        match generate(model, sched, condition_seed, sample_seed, pruning) {
            Ok(output) => {
                unsafe {
                    *out_map = Box::into_raw(Box::new(FvMap { inner: output.map }));
                    if !out_metrics.is_null() {
                        *out_metrics = Box::into_raw(Box::new(FvMetrics {
                            inner: output.metrics,
                        }));
                    }
                }
                FvStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Reads a map's dimensions. Each out pointer may be null to skip it.
///
/// # Safety
/// `map` must be a valid unfreed handle; non-null out pointers must be
/// valid `size_t` slots.
#[no_mangle]
pub unsafe extern "C" fn fv_map_dims(
    map: *const FvMap,
    h: *mut usize,
    w: *mut usize,
    d: *mut usize,
) -> FvStatus {
    guard(|| {
        if map.is_null() {
            return fail_null("map");
        }
        let inner = unsafe { &(*map).inner };
        unsafe {
            if !h.is_null() {
                *h = inner.h();
            }
            if !w.is_null() {
                *w = inner.w();
            }
            if !d.is_null() {
                *d = inner.d();
            }
        }
        FvStatus::Ok
    })
}

/// Copies the map's values (row-major tokens, channels innermost) into
/// `buf`, which must hold exactly h*w*d floats.
///
/// # Safety
/// `map` must be a valid unfreed handle and `buf` writable for `len`
/// floats.
#[no_mangle]
pub unsafe extern "C" fn fv_map_copy_data(
    map: *const FvMap,
    buf: *mut f32,
    len: usize,
) -> FvStatus {
    guard(|| {
        if map.is_null() {
            return fail_null("map");
        }
        if buf.is_null() {
            return fail_null("buf");
        }
        let data = unsafe { (*map).inner.data() };
        if len != data.len() {
            return fail(&FastVarError::InvalidArgument(format!(
                "buffer holds {len} values, map has {}",
                data.len()
            )));
        }
        unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), buf, len) };
        FvStatus::Ok
    })
}

/// Releases a map handle. Null is a no-op.
///
/// # Safety
/// `map` must be null or an unfreed pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn fv_map_free(map: *mut FvMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Number of per-step rows in a metrics handle; 0 for null.
///
/// # Safety
/// `metrics` must be null or a valid unfreed handle.
#[no_mangle]
pub unsafe extern "C" fn fv_metrics_step_count(metrics: *const FvMetrics) -> usize {
    if metrics.is_null() {
        0
    } else {
        unsafe { (*metrics).inner.steps.len() }
    }
}

/// Copies row `index` (0-based) into `out`.
///
/// # Safety
/// `metrics` must be a valid unfreed handle and `out` a valid
/// `FvStepMetrics` slot.
#[no_mangle]
pub unsafe extern "C" fn fv_metrics_step(
    metrics: *const FvMetrics,
    index: usize,
    out: *mut FvStepMetrics,
) -> FvStatus {
    guard(|| {
        if metrics.is_null() {
            return fail_null("metrics");
        }
        if out.is_null() {
            return fail_null("out");
        }
        let inner = unsafe { &(*metrics).inner };
        let Some(s) = inner.steps.get(index) else {
            return fail(&FastVarError::InvalidArgument(format!(
                "step index {index} out of range for {} steps",
                inner.steps.len()
            )));
        };
        unsafe {
            *out = FvStepMetrics {
                step: s.step,
                h: s.h,
                w: s.w,
                forwarded_tokens: s.forwarded_tokens,
                kv_total: s.kv_total,
                est_flops: s.est_flops,
                wall_ns: s.wall_ns,
                skipped: s.skipped,
            };
        }
        FvStatus::Ok
    })
}

/// Writes run totals. Each out pointer may be null to skip that total.
/// `kv_total` is the cache population after the final step, not a sum.
///
/// # Safety
/// `metrics` must be a valid unfreed handle; non-null out pointers must be
/// valid `uint64_t` slots.
#[no_mangle]
pub unsafe extern "C" fn fv_metrics_totals(
    metrics: *const FvMetrics,
    forwarded_tokens: *mut u64,
    kv_total: *mut u64,
    est_flops: *mut u64,
    wall_ns: *mut u64,
) -> FvStatus {
    guard(|| {
        if metrics.is_null() {
            return fail_null("metrics");
        }
        let inner = unsafe { &(*metrics).inner };
        unsafe {
            if !forwarded_tokens.is_null() {
                *forwarded_tokens = inner.total_forwarded() as u64;
            }
            if !kv_total.is_null() {
                *kv_total = inner.final_kv_total() as u64;
            }
            if !est_flops.is_null() {
                *est_flops = inner.total_est_flops();
            }
            if !wall_ns.is_null() {
                *wall_ns = inner.total_wall_ns();
            }
        }
        FvStatus::Ok
    })
}

/// Releases a metrics handle. Null is a no-op.
///
/// # Safety
/// `metrics` must be null or an unfreed pointer from this library.
#[no_mangle]
pub unsafe extern "C" fn fv_metrics_free(metrics: *mut FvMetrics) {
    if !metrics.is_null() {
        drop(unsafe { Box::from_raw(metrics) });
    }
}

/// Total estimated FLOPs for a run under the analytic cost model, without
/// executing the model. `pruning` false prices the unpruned baseline.
///
/// # Safety
/// `model` and `sched` must be valid unfreed handles and `out_flops` a
/// valid `uint64_t` slot.
#[no_mangle]
pub unsafe extern "C" fn fv_flop_estimate(
    model: *const FvModel,
    sched: *const FvSchedule,
    pruning: bool,
    out_flops: *mut u64,
) -> FvStatus {
    guard(|| {
        if model.is_null() {
            return fail_null("model");
        }
        if sched.is_null() {
            return fail_null("sched");
        }
        if out_flops.is_null() {
            return fail_null("out_flops");
        }
        let cfg = unsafe { *(*model).inner.config() };
        let sched = unsafe { &(*sched).inner };
        let total = flop_estimate(&cfg, sched, pruning).total_est_flops();
        unsafe { *out_flops = total };
        FvStatus::Ok
    })
}

/// Radially averaged power spectrum. Always writes the bin count to
/// `needed`; when `bins` is non-null it must hold at least that many
/// doubles and receives the per-radius power values. Call once with a null
/// `bins` to size the buffer, then again to fill it.
///
/// # Safety
/// `map` must be a valid unfreed handle, `needed` a valid `size_t` slot,
/// and `bins` null or writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fv_spectrum(
    map: *const FvMap,
    bins: *mut f64,
    capacity: usize,
    needed: *mut usize,
) -> FvStatus {
    guard(|| {
        if map.is_null() {
            return fail_null("map");
        }
        if needed.is_null() {
            return fail_null("needed");
        }
        let profile = spectrum_profile(unsafe { &(*map).inner });
        unsafe { *needed = profile.bins.len() };
        if bins.is_null() {
            return FvStatus::Ok;
        }
        if capacity < profile.bins.len() {
            return fail(&FastVarError::InvalidArgument(format!(
                "bin buffer holds {capacity} values, spectrum has {}",
                profile.bins.len()
            )));
        }
        unsafe {
            std::ptr::copy_nonoverlapping(profile.bins.as_ptr(), bins, profile.bins.len())
        };
        FvStatus::Ok
    })
}
