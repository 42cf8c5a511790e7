//! C ABI over the trained predictors, the emission calculator and the route
//! recommender.
//!
//! Every function returns a [`ClvStatus`]. On failure a description is kept
//! per thread and can be copied out with [`clv_last_error_message`]. Models
//! are opaque [`ClvModel`] handles released with [`clv_model_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use clairvoyance::emission::{top_down, EmissionCoefficients, MileageTable};
use clairvoyance::features::BinEdges;
use clairvoyance::neural::checkpoint::{Network, TrainedModel};
use clairvoyance::neural::NeuralError;
use clairvoyance::recommend::recommend_topk;
use ndarray::ArrayView2;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    WrongModelKind = 5,
    ShapeMismatch = 6,
    Panic = 99,
}

/// A loaded checkpoint.
pub struct ClvModel {
    model: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: ClvStatus, message: impl Into<String>) -> ClvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.into());
    status
}

fn guard(f: impl FnOnce() -> ClvStatus) -> ClvStatus {
    LAST_ERROR.with(|e| e.borrow_mut().clear());
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(ClvStatus::Panic, "internal panic"))
}

fn neural_status(e: NeuralError) -> ClvStatus {
    let status = match e {
        NeuralError::Checkpoint(_) => ClvStatus::BadCheckpoint,
        NeuralError::Shape(_) => ClvStatus::ShapeMismatch,
        _ => ClvStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize) -> Option<&'a mut [T]> {
    if len == 0 {
        Some(&mut [])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts_mut(ptr, len))
    }
}

fn install(model: TrainedModel, out: *mut *mut ClvModel) -> ClvStatus {
    // SAFETY: callers checked `out` for null.
    unsafe { *out = Box::into_raw(Box::new(ClvModel { model })) };
    ClvStatus::Ok
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn clv_model_load(path: *const c_char, out: *mut *mut ClvModel) -> ClvStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(ClvStatus::NullArgument, "path and out must not be null");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(ClvStatus::InvalidArgument, "path is not UTF-8");
        };
        match TrainedModel::load(Path::new(path)) {
            Err(e) => fail(ClvStatus::Io, format!("{path}: {e}")),
            Ok(Err(e)) => neural_status(e),
            Ok(Ok(model)) => install(model, out),
        }
    })
}

/// Decodes a checkpoint held in memory. On success `*out` owns a new handle.
///
/// # Safety
/// `data` must be valid for `len` reads and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn clv_model_from_bytes(data: *const u8, len: usize, out: *mut *mut ClvModel) -> ClvStatus {
    guard(|| {
        let (Some(bytes), false) = (slice(data, len), out.is_null()) else {
            return fail(ClvStatus::NullArgument, "data and out must not be null");
        };
        match TrainedModel::from_bytes(bytes) {
            Ok(model) => install(model, out),
            Err(e) => neural_status(e),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from a load function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clv_model_free(model: *mut ClvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Raw feature width and class count (0 for the emission regressor).
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn clv_model_info(model: *const ClvModel, input_width: *mut usize, classes: *mut usize) -> ClvStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(ClvStatus::NullArgument, "model must not be null");
        };
        if let Some(w) = input_width.as_mut() {
            *w = m.model.input_width();
        }
        if let Some(c) = classes.as_mut() {
            *c = match &m.model.net {
                Network::Classifier(s) => s.classes(),
                Network::Regressor(_) => 0,
            };
        }
        ClvStatus::Ok
    })
}

/// # Safety
/// `rows` must be valid for `n_rows * width` reads.
unsafe fn rows<'a>(m: &ClvModel, rows: *const f64, n_rows: usize, width: usize) -> Result<ArrayView2<'a, f64>, ClvStatus> {
    if width != m.model.input_width() {
        return Err(fail(ClvStatus::ShapeMismatch, format!("width {width}, model expects {}", m.model.input_width())));
    }
    let len = n_rows.checked_mul(width).ok_or_else(|| fail(ClvStatus::InvalidArgument, "row count overflows"))?;
    let data = slice(rows, len).ok_or_else(|| fail(ClvStatus::NullArgument, "rows must not be null"))?;
    ArrayView2::from_shape((n_rows, width), data).map_err(|e| fail(ClvStatus::ShapeMismatch, e.to_string()))
}

/// Demand classes for `n_rows` row-major raw feature rows. `probs_out`
/// may be null; otherwise it receives `n_rows * classes` probabilities.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn clv_predict_class(
    model: *const ClvModel,
    features: *const f64,
    n_rows: usize,
    width: usize,
    classes_out: *mut usize,
    probs_out: *mut f64,
) -> ClvStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(ClvStatus::NullArgument, "model must not be null");
        };
        let Network::Classifier(net) = &m.model.net else {
            return fail(ClvStatus::WrongModelKind, "model is an emission regressor");
        };
        let x = match rows(m, features, n_rows, width) {
            Ok(x) => x,
            Err(s) => return s,
        };
        let Some(out) = slice_mut(classes_out, n_rows) else {
            return fail(ClvStatus::NullArgument, "classes_out must not be null");
        };
        let (probs, classes) = match m.model.predict_class(x) {
            Ok(r) => r,
            Err(e) => return neural_status(e),
        };
        out.copy_from_slice(&classes);
        if !probs_out.is_null() {
            let p = slice_mut(probs_out, n_rows * net.classes()).expect("non-null");
            p.iter_mut().zip(probs.iter()).for_each(|(d, s)| *d = *s);
        }
        ClvStatus::Ok
    })
}

/// Emission predictions (kg CO2, non-negative) for `n_rows` raw grid feature rows.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn clv_predict_emission(
    model: *const ClvModel,
    features: *const f64,
    n_rows: usize,
    width: usize,
    out: *mut f64,
) -> ClvStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(ClvStatus::NullArgument, "model must not be null");
        };
        if m.model.is_classifier() {
            return fail(ClvStatus::WrongModelKind, "model is a demand classifier");
        }
        let x = match rows(m, features, n_rows, width) {
            Ok(x) => x,
            Err(s) => return s,
        };
        let Some(out) = slice_mut(out, n_rows) else {
            return fail(ClvStatus::NullArgument, "out must not be null");
        };
        match m.model.predict_value(x) {
            Ok(v) => {
                out.copy_from_slice(&v);
                ClvStatus::Ok
            }
            Err(e) => neural_status(e),
        }
    })
}

/// Top-down emission `Σ kg_per_l · vehicles · km_per_vehicle · l_per_km`
/// over `n` fleet entries.
///
/// # Safety
/// Each array must be valid for `n` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clv_top_down(
    kg_per_l: *const f64,
    l_per_km: *const f64,
    vehicles: *const f64,
    km_per_vehicle: *const f64,
    n: usize,
    out: *mut f64,
) -> ClvStatus {
    guard(|| {
        let (Some(k), Some(l), Some(v), Some(d)) = (slice(kg_per_l, n), slice(l_per_km, n), slice(vehicles, n), slice(km_per_vehicle, n)) else {
            return fail(ClvStatus::NullArgument, "input arrays must not be null");
        };
        if out.is_null() {
            return fail(ClvStatus::NullArgument, "out must not be null");
        }
        let mut coeffs = EmissionCoefficients::default();
        let mut mileage = MileageTable::default();
        for i in 0..n {
            let key = i.to_string();
            if let Err(e) = coeffs.insert(&key, "fuel", k[i], l[i]) {
                return fail(ClvStatus::InvalidArgument, e.to_string());
            }
            mileage.insert(&key, "fuel", v[i], d[i]);
        }
        match top_down(&coeffs, &mileage) {
            Ok(kg) => {
                *out = kg;
                ClvStatus::Ok
            }
            Err(e) => fail(ClvStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Demand class of a trip count under ascending bin lower edges starting at 0.
///
/// # Safety
/// `edges` must be valid for `n_edges` reads; `class_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clv_demand_class(trips: u64, edges: *const u64, n_edges: usize, class_out: *mut usize) -> ClvStatus {
    guard(|| {
        let Some(e) = slice(edges, n_edges) else {
            return fail(ClvStatus::NullArgument, "edges must not be null");
        };
        let Some(out) = class_out.as_mut() else {
            return fail(ClvStatus::NullArgument, "class_out must not be null");
        };
        match BinEdges::new(e.to_vec()) {
            Ok(edges) => {
                *out = edges.class_of(trips);
                ClvStatus::Ok
            }
            Err(err) => fail(ClvStatus::InvalidArgument, err.to_string()),
        }
    })
}

/// Ranks `n_routes` routes by normalized demand plus normalized emission and
/// writes the first `min(k, n_routes)` route indices to `order_out` with
/// their scores in `scores_out` (nullable). Ties go to the lower index.
///
/// # Safety
/// `mu` and `theta` must be valid for `n_routes` reads, `order_out` and
/// `scores_out` for `k` writes, `n_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clv_recommend_topk(
    mu: *const f64,
    theta: *const f64,
    n_routes: usize,
    k: usize,
    order_out: *mut usize,
    scores_out: *mut f64,
    n_out: *mut usize,
) -> ClvStatus {
    guard(|| {
        let (Some(mu), Some(theta)) = (slice(mu, n_routes), slice(theta, n_routes)) else {
            return fail(ClvStatus::NullArgument, "mu and theta must not be null");
        };
        if n_out.is_null() {
            return fail(ClvStatus::NullArgument, "n_out must not be null");
        }
        let key = |i: usize| format!("{i:020}");
        let m: BTreeMap<String, f64> = mu.iter().enumerate().map(|(i, v)| (key(i), *v)).collect();
        let t: BTreeMap<String, f64> = theta.iter().enumerate().map(|(i, v)| (key(i), *v)).collect();
        let rec = match recommend_topk(&m, &t, k) {
            Ok(r) => r,
            Err(e) => return fail(ClvStatus::InvalidArgument, e.to_string()),
        };
        let n = rec.routes.len();
        let Some(order) = slice_mut(order_out, n) else {
            return fail(ClvStatus::NullArgument, "order_out must not be null");
        };
        for (slot, r) in order.iter_mut().zip(&rec.routes) {
            *slot = r.route_id.parse().expect("index key");
        }
        if let Some(scores) = slice_mut(scores_out, n).filter(|_| !scores_out.is_null()) {
            for (slot, r) in scores.iter_mut().zip(&rec.routes) {
                *slot = r.score;
            }
        }
        *n_out = n;
        ClvStatus::Ok
    })
}

/// Copies the calling thread's last error message (NUL-terminated,
/// truncated to fit) into `buf` and returns its full length in bytes.
/// Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn clv_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
