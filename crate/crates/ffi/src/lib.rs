//! C interface to semmap.
//!
//! Objects cross the boundary as opaque heap handles created by a
//! `semmap_*_new`/`load`/`synth` call and released with the matching `_free`.
//! Functions return a status code: `SEMMAP_OK` (0), a positive informational
//! status, or a negative error code. After an error, `semmap_last_error`
//! returns a message for the calling thread.
//!
//! Pointer contract for every function: handles must come from this library
//! and not be freed yet, strings must be NUL-terminated UTF-8, and output
//! pointers must be valid for writes. Null handles and outputs are reported as
//! `SEMMAP_ERR_NULL` rather than dereferenced.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use semmap::dataset::{load_sequence, save_sequence, SequenceDataset};
use semmap::export;
use semmap::geometry::{self, CameraIntrinsics, Pixel, Point3, Visibility};
use semmap::gt_fusion::{self, ExclusionReason, FusionConfig, GroundTruth, GroundTruthAssignment};
use semmap::metrics::ConfusionMatrix;
use semmap::pipeline::{self, RunMode};
use semmap::synth::{self, SceneKind, SynthOptions};
use semmap::tcl::{PointLabels, TclConfig};
use semmap::Error;

pub const SEMMAP_OK: i32 = 0;
/// The point does not project into the image.
pub const SEMMAP_NOT_VISIBLE: i32 = 1;
/// The metric has a zero denominator.
pub const SEMMAP_UNDEFINED: i32 = 2;

pub const SEMMAP_ERR_NULL: i32 = -1;
pub const SEMMAP_ERR_IO: i32 = -2;
pub const SEMMAP_ERR_PARSE: i32 = -3;
pub const SEMMAP_ERR_DOMAIN: i32 = -4;
pub const SEMMAP_ERR_CONFIG: i32 = -5;
pub const SEMMAP_ERR_GENERATION: i32 = -6;
pub const SEMMAP_ERR_METRICS: i32 = -7;
pub const SEMMAP_ERR_INVALID_ARGUMENT: i32 = -8;
pub const SEMMAP_ERR_OUT_OF_RANGE: i32 = -9;
pub const SEMMAP_ERR_PANIC: i32 = -10;

pub const SEMMAP_MODE_BASELINE: u32 = 0;
pub const SEMMAP_MODE_TCL_MONO: u32 = 1;
pub const SEMMAP_MODE_TCL_STEREO: u32 = 2;

/// Ground-truth status of a point; values above zero are exclusion reasons.
pub const SEMMAP_GT_LABELED: u32 = 0;
pub const SEMMAP_GT_TOO_FAR: u32 = 1;
pub const SEMMAP_GT_NO_MATCH: u32 = 2;
pub const SEMMAP_GT_DEPTH_REJECT: u32 = 3;
pub const SEMMAP_GT_VOID: u32 = 4;
pub const SEMMAP_GT_INCONSISTENT_2D3D: u32 = 5;

pub struct SemmapDataset {
    inner: SequenceDataset,
}

pub struct SemmapLabels {
    inner: PointLabels,
}

pub struct SemmapGroundTruth {
    inner: GroundTruthAssignment,
}

pub struct SemmapConfusion {
    inner: ConfusionMatrix,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemmapIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SemmapProjection {
    pub u: f64,
    pub v: f64,
    pub inv_depth: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(SEMMAP_ERR_NULL, format!("{what} is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Image { .. } => SEMMAP_ERR_IO,
            Error::Parse { .. } => SEMMAP_ERR_PARSE,
            Error::Domain(_) => SEMMAP_ERR_DOMAIN,
            Error::Config(_) => SEMMAP_ERR_CONFIG,
            Error::Generation(_) => SEMMAP_ERR_GENERATION,
            Error::Metrics(_) => SEMMAP_ERR_METRICS,
        };
        Self::new(code, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, records failures and converts panics into `SEMMAP_ERR_PANIC`.
fn guard(f: impl FnOnce() -> Result<i32, Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SEMMAP_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SEMMAP_ERR_INVALID_ARGUMENT, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Element `index` of the keyframe-major concatenation of `rows`.
fn flat_get<T: Copy>(rows: &[Vec<T>], mut index: usize) -> Option<T> {
    for row in rows {
        match row.get(index) {
            Some(&v) => return Some(v),
            None => index -= row.len(),
        }
    }
    None
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last error on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn semmap_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

#[no_mangle]
pub extern "C" fn semmap_clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Loads a sequence directory.
#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_load(
    dir: *const c_char,
    out: *mut *mut SemmapDataset,
) -> i32 {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let inner = load_sequence(Path::new(dir))?;
        write_out(out, Box::into_raw(Box::new(SemmapDataset { inner })))?;
        Ok(SEMMAP_OK)
    })
}

/// Generates one of the stock synthetic scenes (`plane`, `street`, `boxes`)
/// with uniform label noise `noise`.
#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_synth(
    scene: *const c_char,
    keyframes: u32,
    points_per_kf: u32,
    noise: f64,
    seed: u64,
    out: *mut *mut SemmapDataset,
) -> i32 {
    guard(|| {
        let kind: SceneKind = str_arg(scene, "scene")?
            .parse()
            .map_err(|e: String| Failure::new(SEMMAP_ERR_INVALID_ARGUMENT, e))?;
        let generated = synth::stock_sequence(
            kind,
            keyframes as usize,
            points_per_kf as usize,
            noise,
            seed,
            SynthOptions::default(),
        )?;
        write_out(
            out,
            Box::into_raw(Box::new(SemmapDataset {
                inner: generated.dataset,
            })),
        )?;
        Ok(SEMMAP_OK)
    })
}

#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_save(ds: *const SemmapDataset, dir: *const c_char) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        save_sequence(&ds.inner, Path::new(str_arg(dir, "dir")?))?;
        Ok(SEMMAP_OK)
    })
}

#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_free(ds: *mut SemmapDataset) {
    free_handle(ds);
}

/// Number of keyframes; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_keyframe_count(ds: *const SemmapDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.keyframes.len())
}

/// Number of sparse points over all keyframes; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_point_count(ds: *const SemmapDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.point_count())
}

/// Number of non-void classes; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_class_count(ds: *const SemmapDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.palette.class_count())
}

#[no_mangle]
pub unsafe extern "C" fn semmap_dataset_intrinsics(
    ds: *const SemmapDataset,
    out: *mut SemmapIntrinsics,
) -> i32 {
    guard(|| {
        let c = handle(ds, "dataset")?.inner.intrinsics();
        write_out(
            out,
            SemmapIntrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
            },
        )?;
        Ok(SEMMAP_OK)
    })
}

/// Labels every point. `mode` is one of the `SEMMAP_MODE_*` constants;
/// `dist_min` and `window` are ignored for the baseline.
#[no_mangle]
pub unsafe extern "C" fn semmap_label(
    ds: *const SemmapDataset,
    mode: u32,
    dist_min: f64,
    window: u32,
    out: *mut *mut SemmapLabels,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let mode = match mode {
            SEMMAP_MODE_BASELINE => RunMode::Baseline,
            SEMMAP_MODE_TCL_MONO => RunMode::TclMono,
            SEMMAP_MODE_TCL_STEREO => RunMode::TclStereo,
            other => {
                return Err(Failure::new(
                    SEMMAP_ERR_INVALID_ARGUMENT,
                    format!("unknown mode {other}"),
                ))
            }
        };
        let cfg = TclConfig {
            dist_min,
            window: window as usize,
            ..TclConfig::default()
        };
        let inner = pipeline::label(&ds.inner, mode, &cfg)?;
        write_out(out, Box::into_raw(Box::new(SemmapLabels { inner })))?;
        Ok(SEMMAP_OK)
    })
}

/// Number of labeled slots, in keyframe then point order; 0 for null.
#[no_mangle]
pub unsafe extern "C" fn semmap_labels_len(labels: *const SemmapLabels) -> usize {
    labels.as_ref().map_or(0, |l| l.inner.len())
}

/// Class of the point at flat `index`, or -1 when unlabeled.
#[no_mangle]
pub unsafe extern "C" fn semmap_labels_get(
    labels: *const SemmapLabels,
    index: usize,
    out_class: *mut i32,
) -> i32 {
    guard(|| {
        let labels = handle(labels, "labels")?;
        let label = flat_get(&labels.inner.per_keyframe, index).ok_or_else(|| {
            Failure::new(
                SEMMAP_ERR_OUT_OF_RANGE,
                format!("label index {index} out of range"),
            )
        })?;
        write_out(out_class, label.map_or(-1, i32::from))?;
        Ok(SEMMAP_OK)
    })
}

/// Writes the semantic map as PLY. `filter` is null or a comma-separated list
/// of class names.
#[no_mangle]
pub unsafe extern "C" fn semmap_labels_export_ply(
    ds: *const SemmapDataset,
    labels: *const SemmapLabels,
    path: *const c_char,
    filter: *const c_char,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let labels = handle(labels, "labels")?;
        let path = str_arg(path, "path")?;
        let filter = if filter.is_null() {
            None
        } else {
            Some(export::parse_filter(
                str_arg(filter, "filter")?,
                &ds.inner.palette,
            )?)
        };
        let cloud = export::build_cloud(&ds.inner, &labels.inner)?;
        export::export_ply(&cloud, Path::new(path), filter.as_deref())?;
        Ok(SEMMAP_OK)
    })
}

#[no_mangle]
pub unsafe extern "C" fn semmap_labels_free(labels: *mut SemmapLabels) {
    free_handle(labels);
}

/// Fuses LiDAR and 2D ground truth with the default thresholds.
#[no_mangle]
pub unsafe extern "C" fn semmap_fuse_gt(
    ds: *const SemmapDataset,
    out: *mut *mut SemmapGroundTruth,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let inner = gt_fusion::fuse(&ds.inner, &FusionConfig::default())?;
        write_out(out, Box::into_raw(Box::new(SemmapGroundTruth { inner })))?;
        Ok(SEMMAP_OK)
    })
}

#[no_mangle]
pub unsafe extern "C" fn semmap_gt_len(gt: *const SemmapGroundTruth) -> usize {
    gt.as_ref().map_or(0, |g| g.inner.len())
}

/// Ground truth of the point at flat `index`: class (or -1) and a
/// `SEMMAP_GT_*` status.
#[no_mangle]
pub unsafe extern "C" fn semmap_gt_get(
    gt: *const SemmapGroundTruth,
    index: usize,
    out_class: *mut i32,
    out_status: *mut u32,
) -> i32 {
    guard(|| {
        let gt = handle(gt, "ground truth")?;
        let g = flat_get(&gt.inner.per_keyframe, index).ok_or_else(|| {
            Failure::new(
                SEMMAP_ERR_OUT_OF_RANGE,
                format!("ground truth index {index} out of range"),
            )
        })?;
        let (class, status) = match g {
            GroundTruth::Label(c) => (i32::from(c), SEMMAP_GT_LABELED),
            GroundTruth::Excluded(r) => (
                -1,
                match r {
                    ExclusionReason::TooFar => SEMMAP_GT_TOO_FAR,
                    ExclusionReason::NoMatch => SEMMAP_GT_NO_MATCH,
                    ExclusionReason::DepthReject => SEMMAP_GT_DEPTH_REJECT,
                    ExclusionReason::Void => SEMMAP_GT_VOID,
                    ExclusionReason::Inconsistent2d3d => SEMMAP_GT_INCONSISTENT_2D3D,
                },
            ),
        };
        write_out(out_class, class)?;
        write_out(out_status, status)?;
        Ok(SEMMAP_OK)
    })
}

#[no_mangle]
pub unsafe extern "C" fn semmap_gt_free(gt: *mut SemmapGroundTruth) {
    free_handle(gt);
}

/// Empty matrix over `class_count` evaluated classes.
#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_new(
    class_count: usize,
    out: *mut *mut SemmapConfusion,
) -> i32 {
    guard(|| {
        if class_count == 0 || class_count > 255 {
            return Err(Failure::new(
                SEMMAP_ERR_INVALID_ARGUMENT,
                format!("class count {class_count} outside 1..=255"),
            ));
        }
        let inner = ConfusionMatrix::new(vec![true; class_count]);
        write_out(out, Box::into_raw(Box::new(SemmapConfusion { inner })))?;
        Ok(SEMMAP_OK)
    })
}

/// Empty matrix following the dataset palette's evaluation flags.
#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_for_dataset(
    ds: *const SemmapDataset,
    out: *mut *mut SemmapConfusion,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let inner = ConfusionMatrix::for_palette(&ds.inner.palette);
        write_out(out, Box::into_raw(Box::new(SemmapConfusion { inner })))?;
        Ok(SEMMAP_OK)
    })
}

#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_accumulate(
    cm: *mut SemmapConfusion,
    predicted: u8,
    gt: u8,
) -> i32 {
    guard(|| {
        handle_mut(cm, "confusion matrix")?
            .inner
            .accumulate(predicted, gt)?;
        Ok(SEMMAP_OK)
    })
}

/// Adds every ground-truth labeled point of a sequence. With `strict`,
/// unlabeled predictions count as false negatives.
#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_add_sequence(
    cm: *mut SemmapConfusion,
    ds: *const SemmapDataset,
    labels: *const SemmapLabels,
    gt: *const SemmapGroundTruth,
    strict: bool,
) -> i32 {
    guard(|| {
        let cm = handle_mut(cm, "confusion matrix")?;
        let ds = handle(ds, "dataset")?;
        let labels = handle(labels, "labels")?;
        let gt = handle(gt, "ground truth")?;
        let seq = pipeline::evaluate(&labels.inner, &gt.inner, &ds.inner.palette, strict)?;
        cm.inner.merge(&seq)?;
        Ok(SEMMAP_OK)
    })
}

/// Cell count at row `predicted`, column `gt`; 0 for null or out of range.
#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_count(
    cm: *const SemmapConfusion,
    predicted: u8,
    gt: u8,
) -> u64 {
    match cm.as_ref() {
        Some(c)
            if (predicted as usize) < c.inner.class_count()
                && (gt as usize) < c.inner.class_count() =>
        {
            c.inner.count(predicted, gt)
        }
        _ => 0,
    }
}

unsafe fn metric(
    cm: *const SemmapConfusion,
    out: *mut f64,
    f: impl FnOnce(&ConfusionMatrix) -> Option<f64>,
) -> i32 {
    guard(|| {
        let cm = handle(cm, "confusion matrix")?;
        match f(&cm.inner) {
            Some(v) => {
                write_out(out, v)?;
                Ok(SEMMAP_OK)
            }
            None => Ok(SEMMAP_UNDEFINED),
        }
    })
}

fn class_arg(cm: &ConfusionMatrix, class: u8) -> Option<u8> {
    ((class as usize) < cm.class_count()).then_some(class)
}

#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_iou(
    cm: *const SemmapConfusion,
    class: u8,
    out: *mut f64,
) -> i32 {
    metric(cm, out, |m| class_arg(m, class).and_then(|c| m.iou(c)))
}

#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_class_accuracy(
    cm: *const SemmapConfusion,
    class: u8,
    out: *mut f64,
) -> i32 {
    metric(cm, out, |m| {
        class_arg(m, class).and_then(|c| m.class_accuracy(c))
    })
}

#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_miou(cm: *const SemmapConfusion, out: *mut f64) -> i32 {
    metric(cm, out, ConfusionMatrix::miou)
}

#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_mean_accuracy(
    cm: *const SemmapConfusion,
    out: *mut f64,
) -> i32 {
    metric(cm, out, ConfusionMatrix::mean_accuracy)
}

#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_overall_accuracy(
    cm: *const SemmapConfusion,
    out: *mut f64,
) -> i32 {
    metric(cm, out, ConfusionMatrix::overall_accuracy)
}

#[no_mangle]
pub unsafe extern "C" fn semmap_confusion_free(cm: *mut SemmapConfusion) {
    free_handle(cm);
}

unsafe fn intrinsics_arg(intr: *const SemmapIntrinsics) -> Result<CameraIntrinsics, Failure> {
    let i = handle(intr, "intrinsics")?;
    Ok(CameraIntrinsics::new(
        i.fx, i.fy, i.cx, i.cy, i.width, i.height,
    )?)
}

/// Projects a camera-frame point with the default visibility rule (depth
/// above 0.1 m, one pixel margin). Returns `SEMMAP_NOT_VISIBLE` otherwise.
#[no_mangle]
pub unsafe extern "C" fn semmap_project(
    intr: *const SemmapIntrinsics,
    x: f64,
    y: f64,
    z: f64,
    out: *mut SemmapProjection,
) -> i32 {
    guard(|| {
        let cam = intrinsics_arg(intr)?;
        match geometry::project(&Point3::new(x, y, z), &cam, &Visibility::default()) {
            Some(p) => {
                write_out(
                    out,
                    SemmapProjection {
                        u: p.pixel.u,
                        v: p.pixel.v,
                        inv_depth: p.inv_depth,
                    },
                )?;
                Ok(SEMMAP_OK)
            }
            None => Ok(SEMMAP_NOT_VISIBLE),
        }
    })
}

/// Camera-frame point of pixel `(u, v)` at inverse depth `inv_depth`, written
/// to `out_xyz[0..3]`.
#[no_mangle]
pub unsafe extern "C" fn semmap_unproject(
    intr: *const SemmapIntrinsics,
    u: f64,
    v: f64,
    inv_depth: f64,
    out_xyz: *mut f64,
) -> i32 {
    guard(|| {
        let cam = intrinsics_arg(intr)?;
        let p = geometry::unproject(Pixel::new(u, v), inv_depth, &cam)?;
        if out_xyz.is_null() {
            return Err(Failure::null("output pointer"));
        }
        std::slice::from_raw_parts_mut(out_xyz, 3).copy_from_slice(&[p.x, p.y, p.z]);
        Ok(SEMMAP_OK)
    })
}
