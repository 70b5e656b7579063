//! C ABI over the `hyperdisc` library.
//!
//! Every fallible function returns an [`HdStatus`]; on failure the message is available from
//! [`hd_last_error_message`] on the same thread. Arrays are passed as pointer + length, points
//! as row-major `n × dim` blocks. Handles are opaque and released with their `*_free`
//! function; passing NULL to a free function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hyperdisc::cluster::{self, ClusterModel};
use hyperdisc::embedder::EncoderParams;
use hyperdisc::hypmath::{self, BallPoint, Geometry, TangentVector};
use hyperdisc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    OutsideBall = 4,
    NonFinite = 5,
    Empty = 6,
    Parse = 7,
    Io = 8,
    Diverged = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdGeometry {
    Poincare = 0,
    Euclidean = 1,
}

fn geometry_of(code: i32) -> Result<Geometry, Fail> {
    match code {
        c if c == HdGeometry::Poincare as i32 => Ok(Geometry::Poincare),
        c if c == HdGeometry::Euclidean as i32 => Ok(Geometry::Euclidean),
        c => Err(Fail(HdStatus::InvalidArgument, format!("unknown geometry code {c}"))),
    }
}

/// Trained encoder parameters.
pub struct HdEncoder {
    params: EncoderParams,
}

/// Result of a K-means fit.
pub struct HdClusterModel {
    model: ClusterModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HdStatus {
    match e {
        Error::DimensionMismatch { .. } => HdStatus::DimensionMismatch,
        Error::OutsideBall { .. } => HdStatus::OutsideBall,
        Error::NonFinite(_) => HdStatus::NonFinite,
        Error::Empty(_) => HdStatus::Empty,
        Error::Parse { .. } | Error::Json(_) => HdStatus::Parse,
        Error::Io(_) => HdStatus::Io,
        Error::Diverged { .. } => HdStatus::Diverged,
        Error::CoincidentPoints | Error::InvalidConfig(_) | Error::UnknownAblation(_) => HdStatus::InvalidArgument,
    }
}

struct Fail(HdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HdStatus::NullPointer, format!("{what} is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HdStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn rows(p: *const f64, n: usize, dim: usize, what: &str) -> Result<Vec<Vec<f64>>, Fail> {
    let len = n
        .checked_mul(dim)
        .ok_or_else(|| Fail(HdStatus::InvalidArgument, format!("{what}: size overflow")))?;
    Ok(slice(p, len, what)?.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())
}

fn check_len(expected: usize, got: usize) -> Result<(), Fail> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got }.into());
    }
    Ok(())
}

/// Message for the most recent failure on this thread, or NULL after a success. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Hyperbolic distance between two ball points of dimension `dim`.
///
/// # Safety
/// `x` and `y` must point to `dim` doubles; `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn hd_poincare_distance(x: *const f64, y: *const f64, dim: usize, out: *mut f64) -> HdStatus {
    guard(|| {
        let x = BallPoint::new(slice(x, dim, "x")?.to_vec())?;
        let y = BallPoint::new(slice(y, dim, "y")?.to_vec())?;
        let d = hypmath::poincare_distance(&x, &y)?;
        *out.as_mut().ok_or_else(|| null("out"))? = d;
        Ok(())
    })
}

/// Gradients of the distance with respect to `x` and `y`, written to `grad_x` and `grad_y`.
///
/// # Safety
/// All four pointers must reference `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_distance_grad(
    x: *const f64,
    y: *const f64,
    dim: usize,
    grad_x: *mut f64,
    grad_y: *mut f64,
) -> HdStatus {
    guard(|| {
        let x = BallPoint::new(slice(x, dim, "x")?.to_vec())?;
        let y = BallPoint::new(slice(y, dim, "y")?.to_vec())?;
        let (gx, gy) = hypmath::distance_grad(&x, &y)?;
        slice_mut(grad_x, dim, "grad_x")?.copy_from_slice(&gx);
        slice_mut(grad_y, dim, "grad_y")?.copy_from_slice(&gy);
        Ok(())
    })
}

/// Exponential map at the origin.
///
/// # Safety
/// `v` and `out` must reference `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_exp_map_origin(v: *const f64, dim: usize, out: *mut f64) -> HdStatus {
    guard(|| {
        let v = slice(v, dim, "v")?;
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("tangent vector").into());
        }
        let p = hypmath::exp_map_origin(&TangentVector(v.to_vec()));
        slice_mut(out, dim, "out")?.copy_from_slice(p.coords());
        Ok(())
    })
}

/// Logarithmic map at the origin.
///
/// # Safety
/// `p` and `out` must reference `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_log_map_origin(p: *const f64, dim: usize, out: *mut f64) -> HdStatus {
    guard(|| {
        let p = BallPoint::new(slice(p, dim, "p")?.to_vec())?;
        let v = hypmath::log_map_origin(&p);
        slice_mut(out, dim, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Weighted Fréchet mean of `n` points. `weights` may be NULL for uniform weights; otherwise
/// it holds `n` nonnegative weights summing to 1.
///
/// # Safety
/// `points` must reference `n * dim` doubles, `weights` (if not NULL) `n`, `out` `dim`.
#[no_mangle]
pub unsafe extern "C" fn hd_frechet_mean(
    points: *const f64,
    n: usize,
    dim: usize,
    weights: *const f64,
    out: *mut f64,
) -> HdStatus {
    guard(|| {
        let pts: Vec<BallPoint> = rows(points, n, dim, "points")?
            .into_iter()
            .map(BallPoint::new)
            .collect::<hyperdisc::Result<_>>()?;
        let m = if weights.is_null() {
            hypmath::frechet_mean_uniform(&pts)?
        } else {
            hypmath::frechet_mean(&pts, slice(weights, n, "weights")?)?.point
        };
        slice_mut(out, dim, "out")?.copy_from_slice(m.coords());
        Ok(())
    })
}

/// Parses encoder parameters from the JSON written by `hyperdisc train`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hd_encoder_from_json(json: *const c_char, out: *mut *mut HdEncoder) -> HdStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(HdStatus::Parse, format!("json is not UTF-8: {e}")))?;
        let params: EncoderParams = serde_json::from_str(text).map_err(Error::from)?;
        params.validate()?;
        *out = Box::into_raw(Box::new(HdEncoder { params }));
        Ok(())
    })
}

/// Input feature length and output embedding dimension.
///
/// # Safety
/// `encoder` must come from [`hd_encoder_from_json`]; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hd_encoder_dims(
    encoder: *const HdEncoder,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> HdStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        *input_dim.as_mut().ok_or_else(|| null("input_dim"))? = e.params.input_dim();
        *output_dim.as_mut().ok_or_else(|| null("output_dim"))? = e.params.output_dim();
        Ok(())
    })
}

/// Embeds one feature vector; `out_len` must equal the output dimension.
///
/// # Safety
/// `feature` must reference `len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_encoder_encode(
    encoder: *const HdEncoder,
    feature: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> HdStatus {
    guard(|| {
        let e = encoder.as_ref().ok_or_else(|| null("encoder"))?;
        check_len(e.params.output_dim(), out_len)?;
        let z = e.params.embed(slice(feature, len, "feature")?)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(&z);
        Ok(())
    })
}

/// # Safety
/// `encoder` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hd_encoder_free(encoder: *mut HdEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// K-means on `n` points of dimension `dim`, keeping the best of `n_init` seeded restarts.
/// `geometry` is an `HdGeometry` value.
///
/// # Safety
/// `points` must reference `n * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hd_kmeans(
    points: *const f64,
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    n_init: usize,
    geometry: i32,
    out: *mut *mut HdClusterModel,
) -> HdStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if dim == 0 {
            return Err(Fail(HdStatus::InvalidArgument, "dim must be positive".into()));
        }
        let geometry = geometry_of(geometry)?;
        let pts = rows(points, n, dim, "points")?;
        let model = cluster::kmeans_restarts(&pts, k, seed, max_iter, geometry, n_init.max(1))?;
        *out = Box::into_raw(Box::new(HdClusterModel { model }));
        Ok(())
    })
}

/// Number of clusters, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hd_cluster_model_k(model: *const HdClusterModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.k)
}

/// Sum of squared distances to the assigned centroids.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hd_cluster_model_inertia(model: *const HdClusterModel, out: *mut f64) -> HdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.model.inertia;
        Ok(())
    })
}

/// Copies the cluster index of each point; `len` must equal the number of points.
///
/// # Safety
/// `out` must reference `len` writable `size_t`s.
#[no_mangle]
pub unsafe extern "C" fn hd_cluster_model_assignment(model: *const HdClusterModel, out: *mut usize, len: usize) -> HdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        check_len(m.model.assignment.len(), len)?;
        slice_mut(out, len, "out")?.copy_from_slice(&m.model.assignment);
        Ok(())
    })
}

/// Copies the centroids row-major; `len` must equal `k * dim`.
///
/// # Safety
/// `out` must reference `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hd_cluster_model_centroids(model: *const HdClusterModel, out: *mut f64, len: usize) -> HdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let flat: Vec<f64> = m.model.centroids.concat();
        check_len(flat.len(), len)?;
        slice_mut(out, len, "out")?.copy_from_slice(&flat);
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hd_cluster_model_free(model: *mut HdClusterModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
