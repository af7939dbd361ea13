//! C ABI over the `krdistill` core.
//!
//! Every function returns a [`KrdStatus`]. On failure the message is kept
//! per thread and can be read with [`krd_last_error`] until the next call on
//! that thread. Networks and datasets are opaque handles freed with their
//! matching `_free` function. Matrices are row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use krdistill::data::{ClassCounts, LabeledDataset};
use krdistill::nets::FeedForwardNet;
use krdistill::numerics::{softmax_rows, Matrix};
use krdistill::rectify::{class_weights, optimize_ideal_means_from, rectify_prediction};
use krdistill::trainer::{evaluate, GroupRule};
use krdistill::KrdError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericError = 4,
    Panic = 5,
}

/// Loaded feed-forward network.
pub struct KrdNet {
    net: FeedForwardNet,
}

/// Loaded labeled dataset.
pub struct KrdDataset {
    data: LabeledDataset,
}

/// Top-1 accuracies; a group with no classes reports NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KrdMetrics {
    pub overall: f64,
    pub head: f64,
    pub medium: f64,
    pub tail: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: KrdStatus,
    message: String,
}

impl Failure {
    fn new(status: KrdStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Failure::new(KrdStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<KrdError> for Failure {
    fn from(e: KrdError) -> Self {
        let status = match e.exit_code() {
            1 => KrdStatus::InvalidArgument,
            2 => KrdStatus::DataError,
            _ => KrdStatus::NumericError,
        };
        Failure::new(status, e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Res<()>) -> KrdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KrdStatus::Ok,
        Ok(Err(fail)) => {
            set_error(fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            KrdStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Res<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Res<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Res<PathBuf> {
    if p.is_null() {
        return Err(Failure::null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(KrdStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

fn check_len(got: usize, want: usize, what: &str) -> Res<()> {
    if got != want {
        return Err(Failure::new(
            KrdStatus::InvalidArgument,
            format!("{what} has length {got}, expected {want}"),
        ));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next `krd_*` call on the same thread.
#[no_mangle]
pub extern "C" fn krd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn krd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a network written by `krdistill`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krd_net_load(path: *const c_char, out: *mut *mut KrdNet) -> KrdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let net = FeedForwardNet::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(KrdNet { net }));
        Ok(())
    })
}

/// # Safety
/// `net` must come from [`krd_net_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn krd_net_free(net: *mut KrdNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Writes input, feature and output widths. Any out pointer may be null.
///
/// # Safety
/// `net` must be a live handle; non-null out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn krd_net_dims(
    net: *const KrdNet,
    input_dim: *mut usize,
    feature_dim: *mut usize,
    output_dim: *mut usize,
) -> KrdStatus {
    guard(|| {
        let n = &handle(net, "net")?.net;
        for (p, v) in [(input_dim, n.input_dim()), (feature_dim, n.feature_dim()), (output_dim, n.output_dim())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Runs `rows` inputs of width `cols` through the net. `logits` must hold
/// `rows * output_dim` values; `features`, if non-null, `rows * feature_dim`.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn krd_net_forward(
    net: *const KrdNet,
    x: *const f64,
    rows: usize,
    cols: usize,
    logits: *mut f64,
    logits_len: usize,
    features: *mut f64,
    features_len: usize,
) -> KrdStatus {
    guard(|| {
        let n = &handle(net, "net")?.net;
        let x = input(x, rows * cols, "x")?;
        let batch = Matrix::from_vec(rows, cols, x.to_vec())?;
        let out = n.forward(&batch)?;
        check_len(logits_len, out.logits.as_slice().len(), "logits")?;
        output(logits, logits_len, "logits")?.copy_from_slice(out.logits.as_slice());
        if !features.is_null() {
            check_len(features_len, out.features.as_slice().len(), "features")?;
            output(features, features_len, "features")?.copy_from_slice(out.features.as_slice());
        }
        Ok(())
    })
}

/// Loads a labeled CSV. `classes == 0` infers the class count from the labels.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krd_dataset_load(
    path: *const c_char,
    classes: usize,
    out: *mut *mut KrdDataset,
) -> KrdStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let classes = (classes > 0).then_some(classes);
        let data = LabeledDataset::load(&path_arg(path)?, classes)?;
        *out = Box::into_raw(Box::new(KrdDataset { data }));
        Ok(())
    })
}

/// # Safety
/// `data` must come from [`krd_dataset_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn krd_dataset_free(data: *mut KrdDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Writes row count, feature width and class count. Any out pointer may be null.
///
/// # Safety
/// `data` must be a live handle; non-null out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn krd_dataset_dims(
    data: *const KrdDataset,
    len: *mut usize,
    dim: *mut usize,
    classes: *mut usize,
) -> KrdStatus {
    guard(|| {
        let d = &handle(data, "data")?.data;
        for (p, v) in [(len, d.len()), (dim, d.dim()), (classes, d.classes())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Top-1 accuracy of `net` on `eval`, with head/medium/tail groups taken as
/// count-sorted thirds of `train_counts`.
///
/// # Safety
/// Handles must be live; `train_counts` must hold `classes` values.
#[no_mangle]
pub unsafe extern "C" fn krd_evaluate(
    net: *const KrdNet,
    eval: *const KrdDataset,
    train_counts: *const usize,
    classes: usize,
    out: *mut KrdMetrics,
) -> KrdStatus {
    guard(|| {
        let n = &handle(net, "net")?.net;
        let d = &handle(eval, "eval")?.data;
        let counts = ClassCounts(input(train_counts, classes, "train_counts")?.to_vec());
        let out = out.as_mut().ok_or_else(|| Failure::null("out"))?;
        let m = evaluate(n, d, &counts, &GroupRule::Thirds)?;
        *out = KrdMetrics {
            overall: m.overall_top1,
            head: m.head_top1.unwrap_or(f64::NAN),
            medium: m.medium_top1.unwrap_or(f64::NAN),
            tail: m.tail_top1.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Rectifies one teacher distribution toward `target`. `out` receives `len`
/// values; `was_rectified`, if non-null, 1 when the argmax was wrong.
///
/// # Safety
/// `p` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn krd_rectify_prediction(
    p: *const f64,
    len: usize,
    target: usize,
    out: *mut f64,
    was_rectified: *mut c_int,
) -> KrdStatus {
    guard(|| {
        let r = rectify_prediction(input(p, len, "p")?, target)?;
        output(out, len, "out")?.copy_from_slice(&r.probs);
        if let Some(w) = was_rectified.as_mut() {
            *w = r.was_rectified as c_int;
        }
        Ok(())
    })
}

/// Inverse-frequency class weights with mean 1.
///
/// # Safety
/// `counts` and `out` must hold `classes` values.
#[no_mangle]
pub unsafe extern "C" fn krd_class_weights(counts: *const usize, classes: usize, out: *mut f64) -> KrdStatus {
    guard(|| {
        let w = class_weights(&ClassCounts(input(counts, classes, "counts")?.to_vec()))?;
        output(out, classes, "out")?.copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// Row-wise softmax at temperature `tau`.
///
/// # Safety
/// `logits` and `out` must hold `rows * cols` values.
#[no_mangle]
pub unsafe extern "C" fn krd_softmax_rows(
    logits: *const f64,
    rows: usize,
    cols: usize,
    tau: f64,
    out: *mut f64,
) -> KrdStatus {
    guard(|| {
        let z = Matrix::from_vec(rows, cols, input(logits, rows * cols, "logits")?.to_vec())?;
        let p = softmax_rows(&z, tau)?;
        output(out, rows * cols, "out")?.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Spreads `classes` unit vectors of width `dim` apart, starting from `init`.
///
/// # Safety
/// `init` and `out` must hold `classes * dim` values.
#[no_mangle]
pub unsafe extern "C" fn krd_optimize_ideal_means(
    init: *const f64,
    classes: usize,
    dim: usize,
    steps: usize,
    step_size: f64,
    out: *mut f64,
) -> KrdStatus {
    guard(|| {
        let m = Matrix::from_vec(classes, dim, input(init, classes * dim, "init")?.to_vec())?;
        let run = optimize_ideal_means_from(&m, steps, step_size)?;
        output(out, classes * dim, "out")?.copy_from_slice(run.means.targets().as_slice());
        Ok(())
    })
}
