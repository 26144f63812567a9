//! C ABI over the integer engine and the accelerator cost model.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a
//! [`PotvitStatus`]; the message of the most recent failure on the calling
//! thread is available through [`potvit_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use potvit::accelsim::{energy, simulate_pipelined, AcceleratorConfig, PipelineFlags, Workload};
use potvit::intengine::{int_forward, QuantizedModel};
use potvit::numerics::Tensor;
use potvit::Error;

/// Enables the inter-layer pipeline in [`potvit_model_simulate`].
pub const POTVIT_PIPELINE_INTER: u32 = 1;
/// Enables the intra-layer pipeline in [`potvit_model_simulate`].
pub const POTVIT_PIPELINE_INTRA: u32 = 2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotvitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Config = 5,
    Shape = 6,
    Overflow = 7,
    Internal = 8,
    Panic = 9,
}

/// A loaded integer model.
pub struct PotvitModel {
    inner: QuantizedModel,
}

/// Accelerator parameters.
pub struct PotvitArch {
    inner: AcceleratorConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: PotvitStatus, msg: impl Into<String>) -> PotvitStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn status_of(e: &Error) -> PotvitStatus {
    match e {
        Error::Io(_) => PotvitStatus::Io,
        Error::Config(_) | Error::Json(_) | Error::MissingSpec(_) | Error::Checkpoint { .. } => PotvitStatus::Config,
        Error::Shape(_) => PotvitStatus::Shape,
        Error::Overflow(_) => PotvitStatus::Overflow,
        Error::InvalidArgument(_) => PotvitStatus::InvalidArgument,
        _ => PotvitStatus::Internal,
    }
}

/// Runs `f`, turning errors and panics into statuses.
fn guard(f: impl FnOnce() -> Result<(), PotvitStatus>) -> PotvitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PotvitStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(PotvitStatus::Panic, "internal panic"),
    }
}

fn lift(e: Error) -> PotvitStatus {
    fail(status_of(&e), e.to_string())
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), PotvitStatus> {
    if p.is_null() {
        Err(fail(PotvitStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn path_arg(s: *const c_char, what: &str) -> Result<PathBuf, PotvitStatus> {
    non_null(s, what)?;
    let s = CStr::from_ptr(s).to_str().map_err(|_| fail(PotvitStatus::InvalidUtf8, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn potvit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full length
/// including the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn potvit_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Loads a model directory written by `potvit quantize`.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn potvit_model_load(dir: *const c_char, out: *mut *mut PotvitModel) -> PotvitStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let dir = path_arg(dir, "dir")?;
        let inner = QuantizedModel::load(&dir).map_err(lift)?;
        *out = Box::into_raw(Box::new(PotvitModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`potvit_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn potvit_model_free(model: *mut PotvitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input tokens, input width and class count. Any output may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn potvit_model_dims(
    model: *const PotvitModel,
    tokens: *mut usize,
    input_dim: *mut usize,
    classes: *mut usize,
) -> PotvitStatus {
    guard(|| {
        non_null(model, "model")?;
        let c = &(*model).inner.config;
        for (p, v) in [(tokens, c.tokens), (input_dim, c.input_dim), (classes, c.classes)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Integer-only inference on one `(tokens, input_dim)` row-major input.
///
/// Writes `classes` logit accumulators and their power-of-two exponents
/// (logit = code · 2^exp); `predicted` receives the arg-max class.
///
/// # Safety
/// `input` must hold `input_len` floats; `codes` and `exps` must hold
/// `classes` values; `predicted` may be null.
#[no_mangle]
pub unsafe extern "C" fn potvit_model_infer(
    model: *const PotvitModel,
    input: *const f32,
    input_len: usize,
    codes: *mut i32,
    exps: *mut i32,
    classes: usize,
    predicted: *mut usize,
) -> PotvitStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(input, "input")?;
        non_null(codes, "codes")?;
        non_null(exps, "exps")?;
        let m = &(*model).inner;
        let c = &m.config;
        if input_len != c.tokens * c.input_dim {
            return Err(fail(
                PotvitStatus::Shape,
                format!("input has {input_len} values, model expects {}x{}", c.tokens, c.input_dim),
            ));
        }
        if classes != c.classes {
            return Err(fail(PotvitStatus::Shape, format!("output holds {classes} classes, model has {}", c.classes)));
        }
        let data = std::slice::from_raw_parts(input, input_len).to_vec();
        let x = Tensor::new(vec![c.tokens, c.input_dim], data).map_err(lift)?;
        let y = int_forward(m, &x, None).map_err(lift)?;
        ptr::copy_nonoverlapping(y.codes.as_ptr(), codes, classes);
        ptr::copy_nonoverlapping(y.exps.as_ptr(), exps, classes);
        if !predicted.is_null() {
            let logits = y.dequantize();
            // First maximum wins, as in the engine's own accuracy.
            *predicted = (0..classes).fold(0, |best, i| if logits[i] > logits[best] { i } else { best });
        }
        Ok(())
    })
}

/// The default accelerator parameters.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn potvit_arch_default(out: *mut *mut PotvitArch) -> PotvitStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(PotvitArch { inner: AcceleratorConfig::default() }));
        Ok(())
    })
}

/// Loads accelerator parameters from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated path; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn potvit_arch_load(path: *const c_char, out: *mut *mut PotvitArch) -> PotvitStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = path_arg(path, "path")?;
        let inner = AcceleratorConfig::load(&path).map_err(lift)?;
        *out = Box::into_raw(Box::new(PotvitArch { inner }));
        Ok(())
    })
}

/// # Safety
/// `arch` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn potvit_arch_free(arch: *mut PotvitArch) {
    if !arch.is_null() {
        drop(Box::from_raw(arch));
    }
}

/// Cycles and energy (pJ) of one inference of `model` at its bit-widths.
///
/// `arch` may be null for the defaults; `pipeline` is a mask of
/// `POTVIT_PIPELINE_*` bits.
///
/// # Safety
/// `model` must be a live handle, `arch` null or live; `cycles` and
/// `energy_pj` must be writable.
#[no_mangle]
pub unsafe extern "C" fn potvit_model_simulate(
    model: *const PotvitModel,
    arch: *const PotvitArch,
    pipeline: u32,
    cycles: *mut u64,
    energy_pj: *mut f64,
) -> PotvitStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(cycles, "cycles")?;
        non_null(energy_pj, "energy_pj")?;
        if pipeline & !(POTVIT_PIPELINE_INTER | POTVIT_PIPELINE_INTRA) != 0 {
            return Err(fail(PotvitStatus::InvalidArgument, format!("unknown pipeline bits {pipeline:#x}")));
        }
        let default = AcceleratorConfig::default();
        let cfg = if arch.is_null() { &default } else { &(*arch).inner };
        let m = &(*model).inner;
        let flags = PipelineFlags { inter: pipeline & POTVIT_PIPELINE_INTER != 0, intra: pipeline & POTVIT_PIPELINE_INTRA != 0 };
        let w = Workload::from_model(&m.config, &m.bitconfig.bits).map_err(lift)?;
        let r = energy(&w, cfg, &simulate_pipelined(&w, cfg, flags).map_err(lift)?).map_err(lift)?;
        *cycles = r.total_cycles;
        *energy_pj = r.energy.map_or(0.0, |e| e.total);
        Ok(())
    })
}
