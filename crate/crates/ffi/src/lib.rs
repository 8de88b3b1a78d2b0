//! C ABI over the numerical core.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free`. Every fallible call returns a [`CcStatus`]; on
//! failure [`cc_last_error_message`] describes the most recent error on the
//! calling thread. Concepts are anonymous here and identified by row index.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use concept_coherence::cluster::{agglomerate, export_dendrogram, ExportFormat, Linkage};
use concept_coherence::coherence::{permutation_test, procrustes_r2};
use concept_coherence::embedding::fit_triplets;
use concept_coherence::features::cosine_dissimilarity;
use concept_coherence::mds::{classical_mds, distance_matrix};
use concept_coherence::{
    Choice, ConceptSet, Configuration, DissimilarityMatrix, Error, FeatureMatrix, FitHyperparams, Source,
    TripletRecord,
};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Input is well-formed but numerically degenerate (zero rows, zero variance, divergence).
    Degenerate = 3,
    InsufficientData = 4,
    Internal = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcLinkage {
    Average = 0,
    Single = 1,
    Complete = 2,
}

/// Optimizer settings for [`cc_fit_triplets`]. [`cc_fit_params_default`] fills in the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CcFitParams {
    pub mu: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub holdout_fraction: f64,
}

/// Symmetric dissimilarity matrix with a zero diagonal.
pub struct CcDissimilarity(DissimilarityMatrix);

/// n × dims point configuration.
pub struct CcConfiguration(Configuration);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CcStatus {
    match e {
        Error::ZeroRow { .. } | Error::DegenerateConfiguration | Error::NonFiniteLoss { .. } => {
            CcStatus::Degenerate
        }
        Error::Empty(_) | Error::TooFewTriplets(_) => CcStatus::InsufficientData,
        Error::InvalidConceptSet(_)
        | Error::Invariant(_)
        | Error::ConceptMismatch(_)
        | Error::OutOfRange(_)
        | Error::Parse(_) => CcStatus::InvalidArgument,
        _ => CcStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CcStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            CcStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            let status = status_of(&e);
            set_last_error(e.to_string());
            status
        }
        Err(_) => {
            set_last_error("panic inside the library".into());
            CcStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    out.write(value);
    Ok(())
}

fn numbered(n: usize) -> Result<Arc<ConceptSet>, Fail> {
    Ok(Arc::new(ConceptSet::numbered(n)?))
}

fn checked_len(a: usize, b: usize) -> Result<usize, Fail> {
    a.checked_mul(b)
        .ok_or_else(|| Fail::Core(Error::OutOfRange(format!("{a} × {b} overflows"))))
}

/// Message for the last failed call on this thread, or null. The caller owns
/// the string and releases it with [`cc_string_free`].
#[no_mangle]
pub extern "C" fn cc_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn cc_fit_params_default() -> CcFitParams {
    let hp = FitHyperparams::default();
    CcFitParams {
        mu: hp.mu,
        learning_rate: hp.learning_rate,
        epochs: hp.epochs,
        holdout_fraction: hp.holdout_fraction,
    }
}

/// Builds an `n × n` dissimilarity matrix from row-major `values`.
///
/// # Safety
/// `values` must point to `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_dissimilarity_new(
    values: *const f64,
    n: usize,
    out: *mut *mut CcDissimilarity,
) -> CcStatus {
    guard(|| {
        let v = as_slice(values, checked_len(n, n)?, "values")?;
        let d = DissimilarityMatrix::new(numbered(n)?, DMatrix::from_row_slice(n, n, v))?;
        write_out(out, Box::into_raw(Box::new(CcDissimilarity(d))), "out")
    })
}

/// Cosine dissimilarity between the rows of a row-major binary feature matrix.
///
/// # Safety
/// `values` must point to `n_concepts * n_features` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_cosine_dissimilarity(
    values: *const u8,
    n_concepts: usize,
    n_features: usize,
    out: *mut *mut CcDissimilarity,
) -> CcStatus {
    guard(|| {
        let v = as_slice(values, checked_len(n_concepts, n_features)?, "values")?;
        let labels = (0..n_features).map(|f| format!("f{f}")).collect();
        let m = FeatureMatrix::new(numbered(n_concepts)?, labels, v.to_vec(), false)?;
        let d = cosine_dissimilarity(&m)?;
        write_out(out, Box::into_raw(Box::new(CcDissimilarity(d))), "out")
    })
}

/// # Safety
/// `d` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cc_dissimilarity_free(d: *mut CcDissimilarity) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_dissimilarity_len(d: *const CcDissimilarity) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// Copies the matrix row-major into `buf`, which holds `buf_len` doubles.
///
/// # Safety
/// `d` must be a live handle; `buf` must be writable for `buf_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_dissimilarity_copy(d: *const CcDissimilarity, buf: *mut f64, buf_len: usize) -> CcStatus {
    guard(|| {
        let d = &as_ref(d, "dissimilarity")?.0;
        let n = d.len();
        copy_row_major(d.values(), n, n, buf, buf_len)
    })
}

unsafe fn copy_row_major(m: &DMatrix<f64>, rows: usize, cols: usize, buf: *mut f64, buf_len: usize) -> Result<(), Fail> {
    if buf_len < rows * cols {
        return Err(Fail::Core(Error::OutOfRange(format!(
            "buffer holds {buf_len} values, need {}",
            rows * cols
        ))));
    }
    if rows * cols == 0 {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Fail::Null("buf"));
    }
    let out = std::slice::from_raw_parts_mut(buf, rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = m[(i, j)];
        }
    }
    Ok(())
}

/// Builds an `n × dims` configuration from row-major `coords`.
///
/// # Safety
/// `coords` must point to `n * dims` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_configuration_new(
    coords: *const f64,
    n: usize,
    dims: usize,
    out: *mut *mut CcConfiguration,
) -> CcStatus {
    guard(|| {
        let v = as_slice(coords, checked_len(n, dims)?, "coords")?;
        let c = Configuration::new(numbered(n)?, DMatrix::from_row_slice(n, dims, v))?;
        write_out(out, Box::into_raw(Box::new(CcConfiguration(c))), "out")
    })
}

/// # Safety
/// `c` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cc_configuration_free(c: *mut CcConfiguration) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_configuration_len(c: *const CcConfiguration) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_configuration_dims(c: *const CcConfiguration) -> usize {
    c.as_ref().map_or(0, |c| c.0.dims())
}

/// Copies the coordinates row-major into `buf`, which holds `buf_len` doubles.
///
/// # Safety
/// `c` must be a live handle; `buf` must be writable for `buf_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_configuration_copy(c: *const CcConfiguration, buf: *mut f64, buf_len: usize) -> CcStatus {
    guard(|| {
        let c = &as_ref(c, "configuration")?.0;
        copy_row_major(c.coords(), c.len(), c.dims(), buf, buf_len)
    })
}

/// Classical MDS of `d` into `k` dimensions. Axes with negative eigenvalues come back as zeros.
///
/// # Safety
/// `d` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_classical_mds(
    d: *const CcDissimilarity,
    k: usize,
    out: *mut *mut CcConfiguration,
) -> CcStatus {
    guard(|| {
        let r = classical_mds(&as_ref(d, "dissimilarity")?.0, k)?;
        write_out(out, Box::into_raw(Box::new(CcConfiguration(r.configuration))), "out")
    })
}

/// Pairwise Euclidean distances between the rows of `c`.
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_distance_matrix(c: *const CcConfiguration, out: *mut *mut CcDissimilarity) -> CcStatus {
    guard(|| {
        let d = distance_matrix(&as_ref(c, "configuration")?.0);
        write_out(out, Box::into_raw(Box::new(CcDissimilarity(d))), "out")
    })
}

/// Squared Procrustes correlation between two configurations with the same row count.
///
/// # Safety
/// `x` and `y` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_procrustes_r2(
    x: *const CcConfiguration,
    y: *const CcConfiguration,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let r2 = procrustes_r2(&as_ref(x, "x")?.0, &as_ref(y, "y")?.0)?;
        write_out(out, r2, "out")
    })
}

/// Permutation p-value for [`cc_procrustes_r2`] over `n_perm` row shuffles of `y`.
///
/// # Safety
/// `x` and `y` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_permutation_test(
    x: *const CcConfiguration,
    y: *const CcConfiguration,
    n_perm: usize,
    seed: u64,
    out: *mut f64,
) -> CcStatus {
    guard(|| {
        let p = permutation_test(&as_ref(x, "x")?.0, &as_ref(y, "y")?.0, n_perm, seed)?;
        write_out(out, p, "out")
    })
}

/// Fits a `dims`-dimensional embedding of `n_concepts` items to `n_triplets`
/// judgments. `triplets` holds `(anchor, option_a, option_b)` index triples
/// back to back; `choices[t]` is 0 when option a was picked and 1 for option b.
/// `params` may be null for the defaults. `holdout_accuracy` may be null.
///
/// # Safety
/// `triplets` must point to `3 * n_triplets` values, `choices` to `n_triplets`
/// bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_fit_triplets(
    n_concepts: usize,
    triplets: *const u32,
    choices: *const u8,
    n_triplets: usize,
    dims: usize,
    params: *const CcFitParams,
    seed: u64,
    out: *mut *mut CcConfiguration,
    holdout_accuracy: *mut f64,
) -> CcStatus {
    guard(|| {
        let idx = as_slice(triplets, checked_len(n_triplets, 3)?, "triplets")?;
        let ch = as_slice(choices, n_triplets, "choices")?;
        let records = idx
            .chunks_exact(3)
            .zip(ch)
            .map(|(t, &c)| {
                let choice = match c {
                    0 => Choice::A,
                    1 => Choice::B,
                    other => return Err(Error::OutOfRange(format!("choice must be 0 or 1, got {other}"))),
                };
                let r = TripletRecord {
                    anchor: t[0] as usize,
                    option_a: t[1] as usize,
                    option_b: t[2] as usize,
                    choice,
                    respondent_id: "ffi".into(),
                    source: Source::Human,
                    timestamp: "1970-01-01T00:00:00.000Z".into(),
                };
                r.validate(n_concepts)?;
                Ok(r)
            })
            .collect::<Result<Vec<_>, Error>>()?;
        let hp = match params.as_ref() {
            Some(p) => FitHyperparams {
                mu: p.mu,
                learning_rate: p.learning_rate,
                epochs: p.epochs,
                holdout_fraction: p.holdout_fraction,
            },
            None => FitHyperparams::default(),
        };
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let (config, report) = fit_triplets(&records, &numbered(n_concepts)?, dims, &hp, seed)?;
        if !holdout_accuracy.is_null() {
            holdout_accuracy.write(report.holdout_accuracy);
        }
        write_out(out, Box::into_raw(Box::new(CcConfiguration(config))), "out")
    })
}

/// Agglomerative clustering of `d`, exported as a Newick string with leaves
/// named `c0, c1, ...`. Release the string with [`cc_string_free`].
///
/// # Safety
/// `d` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_dendrogram_newick(
    d: *const CcDissimilarity,
    linkage: CcLinkage,
    out: *mut *mut c_char,
) -> CcStatus {
    guard(|| {
        let linkage = match linkage {
            CcLinkage::Average => Linkage::Average,
            CcLinkage::Single => Linkage::Single,
            CcLinkage::Complete => Linkage::Complete,
        };
        let tree = agglomerate(&as_ref(d, "dissimilarity")?.0, linkage);
        let s = export_dendrogram(&tree, ExportFormat::Newick);
        let c = CString::new(s.trim_end()).map_err(|e| Error::Invariant(e.to_string()))?;
        write_out(out, c.into_raw(), "out")
    })
}

/// Reads a NUL-terminated string into an owned Rust string; used by tests and bindings.
///
/// # Safety
/// `s` must be a valid NUL-terminated string.
pub unsafe fn read_c_string(s: *const c_char) -> String {
    CStr::from_ptr(s).to_string_lossy().into_owned()
}
