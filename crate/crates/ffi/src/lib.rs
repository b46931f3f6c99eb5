//! C ABI over the `glmsparse` pipeline.
//!
//! Every object crosses the boundary as an opaque pointer that must be
//! released with its matching `*_free` function. Functions return a
//! [`GlmStatus`]; on failure the message is available from
//! [`glm_last_error`] on the same thread. Strings returned by the library
//! are owned by the caller and released with [`glm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use glmsparse::losses::{FamilySpec, ProperLossFamily};
use glmsparse::matrix_io::{load_matrix, MatrixFormat, RowMatrix};
use glmsparse::oracles::{quantum_budget, QueryLedger};
use glmsparse::sparsifier::{qglm_sparsify, validate_sparsifier, Sparsifier, SparsifyConfig};
use glmsparse::GlmError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    DegenerateRange = 3,
    Io = 4,
    Parse = 5,
    DimensionMismatch = 6,
    Numerical = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

/// Opaque design matrix.
pub struct GlmMatrix {
    inner: RowMatrix,
}

/// Opaque loss family bound to a row count.
pub struct GlmFamily {
    spec: FamilySpec,
    inner: ProperLossFamily,
}

/// Opaque sparsifier.
pub struct GlmSparsifier {
    inner: Sparsifier,
}

/// Leading-order cost model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GlmBudget {
    pub quantum_leading: f64,
    pub dense_linear_algebra: f64,
    pub sparse_gram: f64,
    pub quantum_total: f64,
    pub classical: f64,
    pub scale_factor: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &GlmError) -> GlmStatus {
    match err {
        GlmError::InvalidParameter(_) | GlmError::IndexOutOfRange { .. } => GlmStatus::InvalidParameter,
        GlmError::DegenerateRange(_) => GlmStatus::DegenerateRange,
        GlmError::Io { .. } => GlmStatus::Io,
        GlmError::Parse { .. } | GlmError::NonFinite { .. } | GlmError::Json(_) => GlmStatus::Parse,
        GlmError::DimensionMismatch(_) | GlmError::DimensionOverflow(_) => GlmStatus::DimensionMismatch,
        GlmError::RankDeficient(_)
        | GlmError::NonFiniteResult(_)
        | GlmError::NonConvergence { .. }
        | GlmError::AnchorSearch { .. } => GlmStatus::Numerical,
        GlmError::InvariantViolation(_) => GlmStatus::Internal,
    }
}

struct Failure(GlmStatus, String);

impl From<GlmError> for Failure {
    fn from(e: GlmError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GlmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GlmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside glmsparse".into());
            GlmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(GlmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(GlmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(GlmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(GlmStatus::InvalidParameter, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(GlmStatus::Internal, "string contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn glm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn glm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn glm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a matrix file. `format`: 0 infers from the extension, 1 Matrix
/// Market, 2 CSV.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn glm_matrix_load(path: *const c_char, format: u32, out: *mut *mut GlmMatrix) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = c_str(path, "path")?;
        let format = match format {
            0 => MatrixFormat::from_path(Path::new(path)),
            1 => MatrixFormat::MatrixMarket,
            2 => MatrixFormat::Csv,
            other => return Err(Failure(GlmStatus::InvalidParameter, format!("unknown format code {other}"))),
        };
        let inner = load_matrix(path, format)?;
        *out = Box::into_raw(Box::new(GlmMatrix { inner }));
        Ok(())
    })
}

/// Builds a matrix from a row-major dense buffer of `rows * cols` values.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn glm_matrix_from_dense(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut GlmMatrix,
) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(Failure(GlmStatus::NullPointer, "data is null".into()));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(GlmStatus::DimensionMismatch, "rows * cols overflows".into()))?;
        let values = std::slice::from_raw_parts(data, len);
        let dense: Vec<Vec<f64>> = values.chunks(cols.max(1)).take(rows).map(<[f64]>::to_vec).collect();
        let inner = RowMatrix::from_dense_rows(&dense)?;
        *out = Box::into_raw(Box::new(GlmMatrix { inner }));
        Ok(())
    })
}

/// Writes the matrix dimensions.
///
/// # Safety
/// `matrix` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn glm_matrix_shape(matrix: *const GlmMatrix, rows: *mut usize, cols: *mut usize) -> GlmStatus {
    guard(|| {
        let m = &deref(matrix, "matrix")?.inner;
        *out_ptr(rows, "rows")? = m.nrows();
        *out_ptr(cols, "cols")? = m.ncols();
        Ok(())
    })
}

/// # Safety
/// `matrix` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn glm_matrix_free(matrix: *mut GlmMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Creates a uniform family over `m` rows. `kind` is one of `quadratic`,
/// `absolute`, `ell_p`, `gamma_p`, `huber`; `p` is ignored (pass NaN) for
/// kinds without an exponent.
///
/// # Safety
/// `kind` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn glm_family_create(kind: *const c_char, p: f64, m: usize, out: *mut *mut GlmFamily) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec = FamilySpec {
            kind: c_str(kind, "kind")?.to_string(),
            p: if p.is_nan() { None } else { Some(p) },
            overrides: Vec::new(),
        };
        let inner = spec.build(m)?;
        *out = Box::into_raw(Box::new(GlmFamily { spec, inner }));
        Ok(())
    })
}

/// Creates a family from its JSON description (with optional per-index
/// overrides).
///
/// # Safety
/// `json` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn glm_family_from_json(json: *const c_char, m: usize, out: *mut *mut GlmFamily) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec: FamilySpec = serde_json::from_str(c_str(json, "json")?).map_err(GlmError::from)?;
        let inner = spec.build(m)?;
        *out = Box::into_raw(Box::new(GlmFamily { spec, inner }));
        Ok(())
    })
}

/// # Safety
/// `family` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn glm_family_free(family: *mut GlmFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

fn check_rows(a: &RowMatrix, f: &ProperLossFamily) -> Result<(), Failure> {
    if a.nrows() != f.len() {
        return Err(Failure(
            GlmStatus::DimensionMismatch,
            format!("family has {} members but the matrix has {} rows", f.len(), a.nrows()),
        ));
    }
    Ok(())
}

/// Builds a sparsifier valid on `[s_min, s_max]` with accuracy `eps`.
///
/// # Safety
/// `matrix` and `family` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsify(
    matrix: *const GlmMatrix,
    family: *const GlmFamily,
    eps: f64,
    s_min: f64,
    s_max: f64,
    seed: u64,
    out: *mut *mut GlmSparsifier,
) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = &deref(matrix, "matrix")?.inner;
        let fam = deref(family, "family")?;
        check_rows(a, &fam.inner)?;
        let ledger = QueryLedger::new();
        let outcome = qglm_sparsify(a, &fam.inner, eps, s_min, s_max, &SparsifyConfig::with_seed(seed), &ledger)?;
        let mut inner = outcome.sparsifier;
        inner.family = Some(fam.spec.clone());
        *out = Box::into_raw(Box::new(GlmSparsifier { inner }));
        Ok(())
    })
}

/// Number of distinct rows kept; 0 for a null handle.
///
/// # Safety
/// `sp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsifier_len(sp: *const GlmSparsifier) -> usize {
    sp.as_ref().map_or(0, |s| s.inner.nnz())
}

/// Number of samples drawn; 0 for a null handle.
///
/// # Safety
/// `sp` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsifier_samples(sp: *const GlmSparsifier) -> usize {
    sp.as_ref().map_or(0, |s| s.inner.samples)
}

/// Copies row indices and weights into caller buffers of length `capacity`.
/// Fails with `BufferTooSmall` when `capacity < glm_sparsifier_len(sp)`.
///
/// # Safety
/// `indices` and `weights` must point to `capacity` writable elements.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsifier_copy(
    sp: *const GlmSparsifier,
    indices: *mut usize,
    weights: *mut f64,
    capacity: usize,
) -> GlmStatus {
    guard(|| {
        let s = &deref(sp, "sparsifier")?.inner;
        if indices.is_null() || weights.is_null() {
            return Err(Failure(GlmStatus::NullPointer, "output buffer is null".into()));
        }
        if capacity < s.nnz() {
            return Err(Failure(GlmStatus::BufferTooSmall, format!("need {} entries, got {capacity}", s.nnz())));
        }
        ptr::copy_nonoverlapping(s.indices.as_ptr(), indices, s.nnz());
        ptr::copy_nonoverlapping(s.weights.as_ptr(), weights, s.nnz());
        Ok(())
    })
}

/// Serializes the sparsifier to JSON; release the result with
/// [`glm_string_free`].
///
/// # Safety
/// `sp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsifier_to_json(sp: *const GlmSparsifier, out: *mut *mut c_char) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = &deref(sp, "sparsifier")?.inner;
        *out = into_c_string(s.to_json(false)?)?;
        Ok(())
    })
}

/// Parses a sparsifier from JSON.
///
/// # Safety
/// `json` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsifier_from_json(json: *const c_char, out: *mut *mut GlmSparsifier) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = Sparsifier::from_json(c_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(GlmSparsifier { inner }));
        Ok(())
    })
}

/// Compares the sparsified and full objectives on `points` random in-range
/// points. Either output pointer may be null.
///
/// # Safety
/// All handles must be live.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsifier_validate(
    matrix: *const GlmMatrix,
    family: *const GlmFamily,
    sp: *const GlmSparsifier,
    points: usize,
    seed: u64,
    max_relative_error: *mut f64,
    violation_fraction: *mut f64,
) -> GlmStatus {
    guard(|| {
        let a = &deref(matrix, "matrix")?.inner;
        let fam = &deref(family, "family")?.inner;
        let s = &deref(sp, "sparsifier")?.inner;
        check_rows(a, fam)?;
        let report = validate_sparsifier(a, fam, s, points, seed)?;
        if let Some(v) = max_relative_error.as_mut() {
            *v = report.max_relative_error;
        }
        if let Some(v) = violation_fraction.as_mut() {
            *v = report.violation_fraction;
        }
        Ok(())
    })
}

/// # Safety
/// `sp` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn glm_sparsifier_free(sp: *mut GlmSparsifier) {
    if !sp.is_null() {
        drop(Box::from_raw(sp));
    }
}

/// Evaluates the cost model for an `m x n` matrix with at most `r` nonzeros
/// per row.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn glm_budget(m: f64, n: f64, r: f64, eps: f64, scale_ratio: f64, out: *mut GlmBudget) -> GlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let b = quantum_budget(m, n, r, eps, scale_ratio)?;
        *out = GlmBudget {
            quantum_leading: b.quantum_leading,
            dense_linear_algebra: b.dense_linear_algebra,
            sparse_gram: b.sparse_gram,
            quantum_total: b.quantum_total,
            classical: b.classical,
            scale_factor: b.scale_factor,
        };
        Ok(())
    })
}
