//! C ABI over the selbench library.
//!
//! Every function returns a [`SelbenchStatus`]. On failure the message is kept
//! in a thread-local slot readable with [`selbench_last_error_message`].
//! Strings returned by this library must be released with
//! [`selbench_string_free`]; handles with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use selbench::covariates::{load_covariate_table, CovariateSchema, CovariateTable, TARGET_CORRELATIONS};
use selbench::dgp::{ErrorFamily, VarianceConvention};
use selbench::engine::{self, BuildOptions, DgpCode, DgpContext, LayoutOverrides, SettingBits, ZPolicy};
use selbench::synth::{synthesize_covariates, SyntheticMargins};
use selbench::{evaluation, normal, ErrorClass};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelbenchStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Validation = 3,
    Io = 4,
    InvalidString = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque covariate table.
pub struct SelbenchCovariates {
    table: CovariateTable,
}

/// Opaque per-DGP context: calibrated surfaces and ground truth.
pub struct SelbenchDgp {
    context: DgpContext,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(SelbenchStatus, String);

impl From<selbench::Error> for Failure {
    fn from(e: selbench::Error) -> Self {
        let status = match e.class() {
            ErrorClass::Config => SelbenchStatus::Config,
            ErrorClass::Validation => SelbenchStatus::Validation,
            ErrorClass::Io => SelbenchStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SelbenchStatus::NullPointer, format!("{what} is null"))
}

fn guard<F>(body: F) -> SelbenchStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SelbenchStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SelbenchStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SelbenchStatus::InvalidString, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

fn check_len(len: usize, n: usize) -> Result<(), Failure> {
    if len != n {
        return Err(Failure(
            SelbenchStatus::BufferTooSmall,
            format!("buffer length {len} does not match {n} units"),
        ));
    }
    Ok(())
}

/// Copy of the last error message on this thread, or NULL when the last
/// call succeeded. Free with `selbench_string_free`.
#[no_mangle]
pub extern "C" fn selbench_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null_mut(), |m| m.clone().into_raw()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn selbench_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Synthetic covariates with the standard correlation targets and margins.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn selbench_covariates_synthesize(
    n: usize,
    seed: u64,
    out: *mut *mut SelbenchCovariates,
) -> SelbenchStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let table = synthesize_covariates(n, seed, &TARGET_CORRELATIONS, &SyntheticMargins::default())?;
        out.write(Box::into_raw(Box::new(SelbenchCovariates { table })));
        Ok(())
    })
}

/// Reads a covariate CSV; `standardize` z-scores the continuous columns.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn selbench_covariates_load(
    path: *const c_char,
    standardize: bool,
    out: *mut *mut SelbenchCovariates,
) -> SelbenchStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let mut table = load_covariate_table(&path, &CovariateSchema::standard())?;
        if standardize {
            table = table.standardize_columns()?;
        }
        out.write(Box::into_raw(Box::new(SelbenchCovariates { table })));
        Ok(())
    })
}

/// Number of units, or 0 for a NULL handle.
///
/// # Safety
/// `cov` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn selbench_covariates_n(cov: *const SelbenchCovariates) -> usize {
    cov.as_ref().map_or(0, |c| c.table.n())
}

/// # Safety
/// `cov` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn selbench_covariates_free(cov: *mut SelbenchCovariates) {
    if !cov.is_null() {
        drop(Box::from_raw(cov));
    }
}

/// Context for one DGP. `family` is a folder name (group_corr,
/// heteroskedastic, iid, non-additive); `bits` a 3-bit setting code.
///
/// # Safety
/// `cov` must be a live handle, `family` and `bits` NUL-terminated strings,
/// `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn selbench_dgp_new(
    cov: *const SelbenchCovariates,
    family: *const c_char,
    bits: *const c_char,
    out: *mut *mut SelbenchDgp,
) -> SelbenchStatus {
    guard(|| {
        let cov = cov.as_ref().ok_or_else(|| null("cov"))?;
        let family: ErrorFamily = str_arg(family, "family")?.parse()?;
        let bits: SettingBits = str_arg(bits, "bits")?.parse()?;
        if out.is_null() {
            return Err(null("out"));
        }
        let context = DgpContext::new(&cov.table, DgpCode { family, bits }, VarianceConvention::default())?;
        out.write(Box::into_raw(Box::new(SelbenchDgp { context })));
        Ok(())
    })
}

/// Number of units, or 0 for a NULL handle.
///
/// # Safety
/// `dgp` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn selbench_dgp_n(dgp: *const SelbenchDgp) -> usize {
    dgp.as_ref().map_or(0, |d| d.context.n())
}

/// # Safety
/// `dgp` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn selbench_dgp_sigma_y(dgp: *const SelbenchDgp, out: *mut f64) -> SelbenchStatus {
    guard(|| {
        let dgp = dgp.as_ref().ok_or_else(|| null("dgp"))?;
        write_out(out, dgp.context.surfaces.sigma_y, "out")
    })
}

/// Copies the `alpha` (CATE) and `mu` columns; `len` must equal the unit count.
///
/// # Safety
/// `alpha_out` and `mu_out` must each point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn selbench_dgp_ground_truth(
    dgp: *const SelbenchDgp,
    alpha_out: *mut f64,
    mu_out: *mut f64,
    len: usize,
) -> SelbenchStatus {
    guard(|| {
        let dgp = dgp.as_ref().ok_or_else(|| null("dgp"))?;
        check_len(len, dgp.context.n())?;
        slice_out(alpha_out, len, "alpha_out")?.copy_from_slice(&dgp.context.truth.alpha);
        slice_out(mu_out, len, "mu_out")?.copy_from_slice(&dgp.context.truth.mu);
        Ok(())
    })
}

/// Regenerates replicate `replicate_id` (1-based) exactly as a full build would.
///
/// # Safety
/// `z_out` must point to `len` writable bytes and `y_out` to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn selbench_dgp_generate_replicate(
    dgp: *const SelbenchDgp,
    master_seed: u64,
    replicate_id: u32,
    redraw_z: bool,
    z_out: *mut u8,
    y_out: *mut f64,
    len: usize,
) -> SelbenchStatus {
    guard(|| {
        let dgp = dgp.as_ref().ok_or_else(|| null("dgp"))?;
        check_len(len, dgp.context.n())?;
        let z_out = slice_out(z_out, len, "z_out")?;
        let y_out = slice_out(y_out, len, "y_out")?;
        let policy = if redraw_z {
            ZPolicy::RedrawPerReplicate
        } else {
            ZPolicy::FixedPerDgp
        };
        let data = dgp.context.generate(master_seed, replicate_id, policy)?;
        z_out.copy_from_slice(&data.z);
        y_out.copy_from_slice(&data.y);
        Ok(())
    })
}

/// # Safety
/// `dgp` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn selbench_dgp_free(dgp: *mut SelbenchDgp) {
    if !dgp.is_null() {
        drop(Box::from_raw(dgp));
    }
}

/// Root mean squared error between two length-`len` arrays.
///
/// # Safety
/// `estimate` and `alpha` must each point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn selbench_rmse_cate(
    estimate: *const f64,
    alpha: *const f64,
    len: usize,
    out: *mut f64,
) -> SelbenchStatus {
    guard(|| {
        let e = slice_arg(estimate, len, "estimate")?;
        let a = slice_arg(alpha, len, "alpha")?;
        write_out(out, evaluation::rmse_cate(e, a)?, "out")
    })
}

/// Mean of `alpha` over units with `z == 1`.
///
/// # Safety
/// `alpha` must point to `len` doubles and `z` to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn selbench_true_att(
    alpha: *const f64,
    z: *const u8,
    len: usize,
    out: *mut f64,
) -> SelbenchStatus {
    guard(|| {
        let a = slice_arg(alpha, len, "alpha")?;
        let z = slice_arg(z, len, "z")?;
        write_out(out, evaluation::true_att(a, z)?, "out")
    })
}

/// Closed-interval coverage indicator.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn selbench_interval_covers(
    lower: f64,
    upper: f64,
    truth: f64,
    out: *mut bool,
) -> SelbenchStatus {
    guard(|| write_out(out, evaluation::interval_covers(lower, upper, truth)?, "out"))
}

/// Standard normal CDF.
#[no_mangle]
pub extern "C" fn selbench_normal_cdf(x: f64) -> f64 {
    normal::cdf(x)
}

/// Writes the full 32-DGP tree for `cov` under `out_dir` with `replicates`
/// replicates per DGP. The hex manifest digest (64 characters plus NUL) is
/// written to `digest_out`, which must hold at least 65 bytes.
///
/// # Safety
/// `cov` must be a live handle, `out_dir` a NUL-terminated string and
/// `digest_out` a buffer of `digest_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn selbench_build_challenge(
    cov: *const SelbenchCovariates,
    out_dir: *const c_char,
    master_seed: u64,
    replicates: u32,
    digest_out: *mut c_char,
    digest_len: usize,
) -> SelbenchStatus {
    guard(|| {
        let cov = cov.as_ref().ok_or_else(|| null("cov"))?;
        let root = PathBuf::from(str_arg(out_dir, "out_dir")?);
        let buf = slice_out(digest_out, digest_len, "digest_out")?;
        if digest_len < 65 {
            return Err(Failure(
                SelbenchStatus::BufferTooSmall,
                format!("digest buffer needs 65 bytes, got {digest_len}"),
            ));
        }
        let layout = engine::plan_challenge(
            master_seed,
            &LayoutOverrides {
                replicates: Some(replicates),
                n: Some(cov.table.n()),
                ..Default::default()
            },
        )?;
        let report = engine::build_challenge(&layout, &cov.table, &root, &BuildOptions::default())?;
        for (dst, src) in buf.iter_mut().zip(report.manifest_digest.bytes()) {
            *dst = src as c_char;
        }
        buf[report.manifest_digest.len()] = 0;
        Ok(())
    })
}
