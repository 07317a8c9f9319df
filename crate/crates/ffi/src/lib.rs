//! C ABI over the `fedlap` library.
//!
//! Every fallible function returns a [`FedlapStatus`]; on failure the
//! message is available from [`fedlap_last_error`] on the same thread.
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedlap::data::{load_idx, Dataset};
use fedlap::harness::{run, ExperimentConfig};
use fedlap::models::{checkpoint, ModelSpec, ModelState};
use fedlap::privacy::{rdp_sgm, rdp_to_dp, AccountantState};
use fedlap::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FedlapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Config = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Privacy accountant for private training rounds.
pub struct FedlapAccountant(AccountantState);

/// Model architecture plus parameters.
pub struct FedlapModel(ModelState);

/// Labelled examples.
pub struct FedlapDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FedlapStatus {
    match e {
        Error::Io(_) => FedlapStatus::Io,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::Checkpoint(_)
        | Error::Csv(_)
        | Error::Toml(_) => FedlapStatus::Format,
        Error::NonFinite(_) | Error::Diverged { .. } | Error::Quadrature(_) | Error::ZeroNorm(_) => {
            FedlapStatus::Numeric
        }
        Error::Config(_) => FedlapStatus::Config,
        _ => FedlapStatus::InvalidArgument,
    }
}

struct Fail(FedlapStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FedlapStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FedlapStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FedlapStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            FedlapStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FedlapStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn boxed<T>(p: *mut *mut T, v: T) -> Result<(), Fail> {
    out(p, Box::into_raw(Box::new(v)), "out")
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fedlap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedlap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// RDP of the sampled Gaussian mechanism at integer order `alpha`.
///
/// # Safety
/// `out_rdp` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn fedlap_rdp_sgm(q: f64, sigma: f64, alpha: u32, out_rdp: *mut f64) -> FedlapStatus {
    guard(|| out(out_rdp, rdp_sgm(q, sigma, alpha)?, "out_rdp"))
}

/// Best `(epsilon, order)` over `len` RDP values.
///
/// # Safety
/// `orders` and `rho` must point to `len` elements; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_rdp_to_dp(
    orders: *const u32,
    rho: *const f64,
    len: usize,
    delta: f64,
    out_epsilon: *mut f64,
    out_alpha: *mut u32,
) -> FedlapStatus {
    guard(|| {
        if orders.is_null() || rho.is_null() {
            return Err(null("orders or rho"));
        }
        let (o, r) = (std::slice::from_raw_parts(orders, len), std::slice::from_raw_parts(rho, len));
        let (eps, alpha) = rdp_to_dp(o, r, delta)?;
        out(out_epsilon, eps, "out_epsilon")?;
        out(out_alpha, alpha, "out_alpha")
    })
}

/// Accountant charging `steps_per_round` accesses per round, the first at
/// sampling rate `q1` and the rest at `q2`.
///
/// # Safety
/// `out_handle` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedlap_accountant_new(
    sigma: f64,
    q1: f64,
    q2: f64,
    steps_per_round: usize,
    out_handle: *mut *mut FedlapAccountant,
) -> FedlapStatus {
    guard(|| boxed(out_handle, FedlapAccountant(AccountantState::from_rates(sigma, q1, q2, steps_per_round)?)))
}

/// Adds `rounds` rounds.
///
/// # Safety
/// `acc` must come from [`fedlap_accountant_new`].
#[no_mangle]
pub unsafe extern "C" fn fedlap_accountant_accumulate(acc: *mut FedlapAccountant, rounds: usize) -> FedlapStatus {
    guard(|| {
        let a = acc.as_mut().ok_or_else(|| null("accountant"))?;
        for _ in 0..rounds {
            a.0 = a.0.accumulate_round();
        }
        Ok(())
    })
}

/// # Safety
/// `acc` must come from [`fedlap_accountant_new`]; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_accountant_epsilon(
    acc: *const FedlapAccountant,
    delta: f64,
    out_epsilon: *mut f64,
    out_alpha: *mut u32,
) -> FedlapStatus {
    guard(|| {
        let (eps, alpha) = handle(acc, "accountant")?.0.epsilon(delta)?;
        out(out_epsilon, eps, "out_epsilon")?;
        out(out_alpha, alpha, "out_alpha")
    })
}

/// # Safety
/// `acc` must come from [`fedlap_accountant_new`] and `out_rounds` be valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_accountant_rounds(acc: *const FedlapAccountant, out_rounds: *mut usize) -> FedlapStatus {
    guard(|| out(out_rounds, handle(acc, "accountant")?.0.rounds, "out_rounds"))
}

/// # Safety
/// `acc` must come from [`fedlap_accountant_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fedlap_accountant_free(acc: *mut FedlapAccountant) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

/// Freshly initialized MLP classifier.
///
/// # Safety
/// `out_handle` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_init_mlp(
    inputs: usize,
    hidden: usize,
    classes: usize,
    seed: u64,
    out_handle: *mut *mut FedlapModel,
) -> FedlapStatus {
    guard(|| boxed(out_handle, FedlapModel(ModelState::init(ModelSpec::mlp(inputs, hidden, classes), seed)?)))
}

/// Freshly initialized ConvNet for `side` x `side` single-channel images.
///
/// # Safety
/// `out_handle` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_init_convnet(
    side: usize,
    channels: usize,
    classes: usize,
    seed: u64,
    out_handle: *mut *mut FedlapModel,
) -> FedlapStatus {
    guard(|| {
        boxed(
            out_handle,
            FedlapModel(ModelState::init(ModelSpec::convnet(side, channels, classes), seed)?),
        )
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_handle` valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_load(path: *const c_char, out_handle: *mut *mut FedlapModel) -> FedlapStatus {
    guard(|| boxed(out_handle, FedlapModel(checkpoint::load_model(path_arg(path, "path")?)?)))
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_save(model: *const FedlapModel, path: *const c_char) -> FedlapStatus {
    guard(|| Ok(checkpoint::save_model(path_arg(path, "path")?, &handle(model, "model")?.0)?))
}

/// # Safety
/// `model` must be a live handle and `out_count` valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_num_params(model: *const FedlapModel, out_count: *mut usize) -> FedlapStatus {
    guard(|| out(out_count, handle(model, "model")?.0.num_params(), "out_count"))
}

/// Copies the flattened parameters into `buf`, which must hold at least
/// `fedlap_model_num_params` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_copy_params(model: *const FedlapModel, buf: *mut f64, len: usize) -> FedlapStatus {
    guard(|| {
        let flat = handle(model, "model")?.0.flatten();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < flat.len() {
            return Err(Fail(
                FedlapStatus::BufferTooSmall,
                format!("buffer holds {len} values, model has {}", flat.len()),
            ));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        Ok(())
    })
}

/// Mean cross-entropy and accuracy of `model` on `data`.
///
/// # Safety
/// Both handles must be live and the outputs valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_evaluate(
    model: *const FedlapModel,
    data: *const FedlapDataset,
    out_loss: *mut f64,
    out_accuracy: *mut f64,
) -> FedlapStatus {
    guard(|| {
        let d = &handle(data, "dataset")?.0;
        let ev = handle(model, "model")?.0.evaluate(&d.features, &d.labels)?;
        out(out_loss, ev.loss, "out_loss")?;
        out(out_accuracy, ev.accuracy, "out_accuracy")
    })
}

/// # Safety
/// `model` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fedlap_model_free(model: *mut FedlapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads an IDX image/label pair, adds a channel axis and downsamples by
/// `downsample` (1 keeps full resolution).
///
/// # Safety
/// The paths must be NUL-terminated strings and `out_handle` valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_dataset_load_idx(
    images: *const c_char,
    labels: *const c_char,
    classes: usize,
    downsample: usize,
    out_handle: *mut *mut FedlapDataset,
) -> FedlapStatus {
    guard(|| {
        let ds = load_idx(path_arg(images, "images")?, path_arg(labels, "labels")?, classes)?
            .with_channel_axis()?
            .downsample(downsample)?;
        boxed(out_handle, FedlapDataset(ds))
    })
}

/// # Safety
/// `data` must be a live handle and `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn fedlap_dataset_len(data: *const FedlapDataset, out_len: *mut usize) -> FedlapStatus {
    guard(|| out(out_len, handle(data, "dataset")?.0.len(), "out_len"))
}

/// # Safety
/// `data` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn fedlap_dataset_free(data: *mut FedlapDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Runs the experiment in the TOML file at `config`, writing metrics CSV to
/// `metrics_out` (NULL keeps the config's own output path).
///
/// # Safety
/// `config` must be a NUL-terminated string; `metrics_out` one or NULL.
#[no_mangle]
pub unsafe extern "C" fn fedlap_run_config(
    config: *const c_char,
    metrics_out: *const c_char,
    out_final_accuracy: *mut f64,
) -> FedlapStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::load(path_arg(config, "config")?)?;
        if !metrics_out.is_null() {
            cfg.output = Some(path_arg(metrics_out, "metrics_out")?);
        }
        let result = run(&cfg)?;
        let last = result.rows.last().map_or(f64::NAN, |r| r.test_accuracy);
        if out_final_accuracy.is_null() {
            Ok(())
        } else {
            out(out_final_accuracy, last, "out_final_accuracy")
        }
    })
}
