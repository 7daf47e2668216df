//! C ABI over the screenseg pipeline.
//!
//! Every function returns an [`SsStatus`]. On failure the message is kept per
//! thread and can be read with [`ss_last_error_message`]. Models are opaque
//! handles created by `*_load` and released with the matching `*_free`.
//! Images are row-major `f32` in `[0, 1]`, masks row-major `u8` in `{0, 1}`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use screenseg::grid::{Grid, Image, Mask};
use screenseg::models::{load_classifier, load_segmenter, Classifier, Segmenter};
use screenseg::train::{ensemble_predict, single_predict, EnsembleModel};
use screenseg::{losses, sampling, screen_eval, Error};

#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    Shape = 6,
    Runtime = 7,
    Panic = 8,
}

/// A single trained segmenter.
pub struct SsSegmenter(Segmenter);

/// A trained frame classifier.
pub struct SsClassifier(Classifier);

/// Fold segmenters averaged at inference.
pub struct SsEnsemble(EnsembleModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidConfig { .. } | Error::Json(_) | Error::ModelSpec(_) => SsStatus::Config,
            Error::Io { .. } | Error::Image { .. } | Error::Csv(_) | Error::Load { .. } => SsStatus::Io,
            Error::Checkpoint(_) => SsStatus::Checkpoint,
            Error::ShapeMismatch { .. } | Error::LengthMismatch { .. } | Error::Divisibility { .. } => SsStatus::Shape,
            _ => SsStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(SsStatus::NullPointer, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SsStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SsStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(value);
    Ok(())
}

fn area(height: usize, width: usize) -> Result<usize, Failure> {
    if height == 0 || width == 0 {
        return Err(invalid("height and width must be positive"));
    }
    height.checked_mul(width).ok_or_else(|| invalid("height * width overflows"))
}

unsafe fn image_arg(p: *const f32, height: usize, width: usize) -> Result<Image, Failure> {
    let n = area(height, width)?;
    Ok(Grid::from_vec(height, width, input(p, n, "image")?.to_vec())?)
}

unsafe fn mask_arg(p: *const u8, height: usize, width: usize, name: &str) -> Result<Mask, Failure> {
    let n = area(height, width)?;
    Ok(Grid::from_vec(height, width, input(p, n, name)?.to_vec())?)
}

unsafe fn rater_masks(masks: *const u8, raters: usize, height: usize, width: usize) -> Result<Vec<Mask>, Failure> {
    let n = area(height, width)?;
    let all = input(masks, n.checked_mul(raters).ok_or_else(|| invalid("size overflows"))?, "masks")?;
    all.chunks(n).map(|c| Ok(Grid::from_vec(height, width, c.to_vec())?)).collect()
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{name}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Pixelwise majority of `raters` stacked masks (`raters * height * width`
/// bytes) written to `out` (`height * width` bytes).
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ss_sample_vote(
    masks: *const u8,
    raters: usize,
    height: usize,
    width: usize,
    out: *mut u8,
) -> SsStatus {
    guard(|| {
        let m = rater_masks(masks, raters, height, width)?;
        let label = sampling::sample_vote(&m)?;
        let dst = output(out, height * width, "out")?;
        for (d, v) in dst.iter_mut().zip(label.values.as_slice()) {
            *d = *v as u8;
        }
        Ok(())
    })
}

/// Pixelwise rater mean written to `out` (`height * width` floats).
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn ss_sample_mean(
    masks: *const u8,
    raters: usize,
    height: usize,
    width: usize,
    out: *mut f32,
) -> SsStatus {
    guard(|| {
        let m = rater_masks(masks, raters, height, width)?;
        let label = sampling::sample_mean(&m)?;
        output(out, height * width, "out")?.copy_from_slice(label.values.as_slice());
        Ok(())
    })
}

/// Dice coefficient of two binary masks; two empty masks give 1.
///
/// # Safety
/// `pred` and `truth` must hold `height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn ss_dice(
    pred: *const u8,
    truth: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        let p = mask_arg(pred, height, width, "pred")?;
        let t = mask_arg(truth, height, width, "truth")?;
        write(out, screen_eval::dice_coefficient(&p, &t)?, "out")
    })
}

/// Background and foreground weights of a binary target.
///
/// # Safety
/// `target` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_class_weights(
    target: *const f64,
    len: usize,
    out_w0: *mut f64,
    out_w1: *mut f64,
) -> SsStatus {
    guard(|| {
        let w = losses::class_weights(input(target, len, "target")?);
        write(out_w0, w.w0, "out_w0")?;
        write(out_w1, w.w1, "out_w1")
    })
}

/// Welch's unequal-variance t-test, two-sided.
///
/// # Safety
/// `a` and `b` must hold `a_len` and `b_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_welch_t_test(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    out_t: *mut f64,
    out_p: *mut f64,
    out_df: *mut f64,
) -> SsStatus {
    guard(|| {
        let r = screen_eval::welch_t_test(input(a, a_len, "a")?, input(b, b_len, "b")?)?;
        write(out_t, r.t, "out_t")?;
        write(out_p, r.p, "out_p")?;
        write(out_df, r.df, "out_df")
    })
}

/// A frame passes screening when `logit > threshold`.
///
/// # Safety
/// `out_pass` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_screen(logit: f64, threshold: f64, out_pass: *mut bool) -> SsStatus {
    guard(|| {
        if logit.is_nan() || threshold.is_nan() {
            return Err(invalid("logit and threshold must not be NaN"));
        }
        write(out_pass, screen_eval::ScreeningDecision::new(logit, threshold).pass, "out_pass")
    })
}

/// Load a segmenter checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_segmenter_load(dir: *const c_char, out: *mut *mut SsSegmenter) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = load_segmenter(&path_arg(dir, "dir")?)?;
        out.write(Box::into_raw(Box::new(SsSegmenter(model))));
        Ok(())
    })
}

/// Foreground probabilities for one frame, `height * width` floats.
///
/// # Safety
/// `handle` must come from [`ss_segmenter_load`]; buffers must match the size.
#[no_mangle]
pub unsafe extern "C" fn ss_segmenter_predict(
    handle: *mut SsSegmenter,
    image: *const f32,
    height: usize,
    width: usize,
    out_probs: *mut f32,
) -> SsStatus {
    guard(|| {
        let model = handle.as_mut().ok_or_else(|| null("handle"))?;
        let img = image_arg(image, height, width)?;
        let probs = single_predict(&mut model.0, &img)?;
        output(out_probs, height * width, "out_probs")?.copy_from_slice(probs.as_slice());
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`ss_segmenter_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_segmenter_free(handle: *mut SsSegmenter) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Load a classifier checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_classifier_load(dir: *const c_char, out: *mut *mut SsClassifier) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = load_classifier(&path_arg(dir, "dir")?)?;
        out.write(Box::into_raw(Box::new(SsClassifier(model))));
        Ok(())
    })
}

/// Positive-frame logit for one frame of any size.
///
/// # Safety
/// `handle` must come from [`ss_classifier_load`]; `image` must hold
/// `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn ss_classifier_logit(
    handle: *mut SsClassifier,
    image: *const f32,
    height: usize,
    width: usize,
    out_logit: *mut f64,
) -> SsStatus {
    guard(|| {
        let model = handle.as_mut().ok_or_else(|| null("handle"))?;
        let img = image_arg(image, height, width)?;
        let input = model.0.input_for(&img);
        write(out_logit, model.0.logit(&input)? as f64, "out_logit")
    })
}

/// # Safety
/// `handle` must come from [`ss_classifier_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_classifier_free(handle: *mut SsClassifier) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Load `count` segmenter checkpoint directories as one ensemble.
///
/// # Safety
/// `dirs` must hold `count` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_ensemble_load(
    dirs: *const *const c_char,
    count: usize,
    out: *mut *mut SsEnsemble,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let paths = input(dirs, count, "dirs")?
            .iter()
            .map(|&p| path_arg(p, "dirs[i]"))
            .collect::<Result<Vec<_>, _>>()?;
        let model = EnsembleModel::load(&paths)?;
        out.write(Box::into_raw(Box::new(SsEnsemble(model))));
        Ok(())
    })
}

/// Mean member probabilities and the binarised mask for one frame. Either
/// output may be null.
///
/// # Safety
/// `handle` must come from [`ss_ensemble_load`]; non-null buffers must hold
/// `height * width` elements.
#[no_mangle]
pub unsafe extern "C" fn ss_ensemble_predict(
    handle: *mut SsEnsemble,
    image: *const f32,
    height: usize,
    width: usize,
    out_probs: *mut f32,
    out_mask: *mut u8,
) -> SsStatus {
    guard(|| {
        let model = handle.as_mut().ok_or_else(|| null("handle"))?;
        let img = image_arg(image, height, width)?;
        let pred = ensemble_predict(&mut model.0, &img)?;
        if !out_probs.is_null() {
            output(out_probs, height * width, "out_probs")?.copy_from_slice(pred.probabilities.as_slice());
        }
        if !out_mask.is_null() {
            output(out_mask, height * width, "out_mask")?.copy_from_slice(pred.mask.as_slice());
        }
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`ss_ensemble_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_ensemble_free(handle: *mut SsEnsemble) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Screen the frame with the classifier and segment it with the ensemble
/// only when it passes. A screened-out frame gets an empty mask.
///
/// # Safety
/// Handles must come from the matching loaders; `image` and `out_mask`
/// must hold `height * width` elements; `out_logit` may be null.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ss_pipeline_predict(
    classifier: *mut SsClassifier,
    ensemble: *mut SsEnsemble,
    image: *const f32,
    height: usize,
    width: usize,
    threshold: f64,
    out_pass: *mut bool,
    out_logit: *mut f64,
    out_mask: *mut u8,
) -> SsStatus {
    guard(|| {
        let clf = classifier.as_mut().ok_or_else(|| null("classifier"))?;
        let ens = ensemble.as_mut().ok_or_else(|| null("ensemble"))?;
        if threshold.is_nan() {
            return Err(invalid("threshold must not be NaN"));
        }
        let img = image_arg(image, height, width)?;
        let out = screen_eval::pipeline_predict(&mut clf.0, &mut ens.0, &img, threshold)?;
        output(out_mask, height * width, "out_mask")?.copy_from_slice(out.mask.as_slice());
        write(out_pass, out.screening.pass, "out_pass")?;
        if !out_logit.is_null() {
            out_logit.write(out.screening.logit);
        }
        Ok(())
    })
}
