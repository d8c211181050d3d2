//! C ABI over the ucfollow trackers, box overlap and the follow controller.
//!
//! Every function returns a [`UcfStatus`]. On failure the message of the
//! last error on the calling thread is available through
//! [`ucf_last_error_message`]. Handles are opaque and owned by the caller
//! until passed to the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use ucfollow::baseline::BaselineTracker;
use ucfollow::control::{depth_at_box, ControlConfig, FollowController};
use ucfollow::dtrd::{DtrdModel, DtrdTracker, TrackerConfig};
use ucfollow::{BoundingBox, Error, RgbdFrame, Tracker};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Contract = 3,
    Shape = 4,
    Format = 5,
    Config = 6,
    Io = 7,
    Panic = 8,
}

/// Normalized box, `0 <= x1 < x2 <= 1` and `0 <= y1 < y2 <= 1` for frames.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcfBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Borrowed RGB-D frame: `rgb` holds `width*height*3` values in `[0,1]`,
/// row-major and interleaved; `depth` holds `width*height` meters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UcfFrame {
    pub width: usize,
    pub height: usize,
    pub rgb: *const f64,
    pub depth: *const f64,
    pub max_depth: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcfControlConfig {
    pub kp_lin: f64,
    pub ki_lin: f64,
    pub kp_ang: f64,
    pub ki_ang: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub integral_limit: f64,
    pub follow_distance: f64,
}

/// A trained tracking network shared by any number of trackers.
pub struct UcfModel(Arc<DtrdModel>);

pub struct UcfTracker(Box<dyn Tracker>);

pub struct UcfController(FollowController);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: UcfStatus, msg: impl Into<String>) -> UcfStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> UcfStatus {
    let status = match &e {
        Error::Shape(_) => UcfStatus::Shape,
        Error::Contract(_) | Error::InvalidBox { .. } => UcfStatus::Contract,
        Error::Format(_) => UcfStatus::Format,
        Error::Config(_) => UcfStatus::Config,
        Error::Io { .. } => UcfStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> UcfStatus) -> UcfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(UcfStatus::Panic, "internal panic"),
    }
}

macro_rules! try_ucf {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(UcfStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

impl From<BoundingBox> for UcfBox {
    fn from(b: BoundingBox) -> Self {
        UcfBox {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        }
    }
}

impl UcfBox {
    fn to_box(self) -> Result<BoundingBox, Error> {
        BoundingBox::new(self.x1, self.y1, self.x2, self.y2)
    }
}

impl From<ControlConfig> for UcfControlConfig {
    fn from(c: ControlConfig) -> Self {
        UcfControlConfig {
            kp_lin: c.kp_lin,
            ki_lin: c.ki_lin,
            kp_ang: c.kp_ang,
            ki_ang: c.ki_ang,
            v_min: c.v_min,
            v_max: c.v_max,
            omega_max: c.omega_max,
            integral_limit: c.integral_limit,
            follow_distance: c.follow_distance,
        }
    }
}

impl From<UcfControlConfig> for ControlConfig {
    fn from(c: UcfControlConfig) -> Self {
        ControlConfig {
            kp_lin: c.kp_lin,
            ki_lin: c.ki_lin,
            kp_ang: c.kp_ang,
            ki_ang: c.ki_ang,
            v_min: c.v_min,
            v_max: c.v_max,
            omega_max: c.omega_max,
            integral_limit: c.integral_limit,
            follow_distance: c.follow_distance,
        }
    }
}

/// # Safety
/// `f.rgb` and `f.depth` must point to the documented number of values.
unsafe fn copy_frame(f: &UcfFrame) -> Result<RgbdFrame, UcfStatus> {
    if f.rgb.is_null() || f.depth.is_null() {
        return Err(fail(UcfStatus::NullPointer, "frame buffers are null"));
    }
    let n = f.width.checked_mul(f.height).filter(|n| *n > 0 && *n < usize::MAX / 3);
    let Some(n) = n else {
        return Err(fail(UcfStatus::InvalidArgument, "frame size is zero or too large"));
    };
    let rgb = std::slice::from_raw_parts(f.rgb, n * 3).to_vec();
    let depth = std::slice::from_raw_parts(f.depth, n).to_vec();
    RgbdFrame::new(f.width, f.height, rgb, depth, f.max_depth, 0.0).map_err(from_error)
}

/// Copies the last error message of this thread into `buf`, truncated and
/// NUL-terminated, and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ucf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Intersection over union of two boxes.
///
/// # Safety
/// `a`, `b` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ucf_iou(a: *const UcfBox, b: *const UcfBox, out: *mut f64) -> UcfStatus {
    guard(|| {
        non_null!(a, b, out);
        let a = try_ucf!((*a).to_box());
        let b = try_ucf!((*b).to_box());
        *out = ucfollow::iou(&a, &b);
        UcfStatus::Ok
    })
}

/// Loads a checkpoint written by `ucfollow train` for the default
/// architecture.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ucf_model_load(path: *const c_char, out: *mut *mut UcfModel) -> UcfStatus {
    guard(|| {
        non_null!(path, out);
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(UcfStatus::InvalidArgument, "path is not UTF-8");
        };
        let model = try_ucf!(DtrdModel::load(TrackerConfig::default(), Path::new(p)));
        *out = Box::into_raw(Box::new(UcfModel(Arc::new(model))));
        UcfStatus::Ok
    })
}

/// Builds an untrained model with the default architecture and the given
/// initialization seed.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ucf_model_new_untrained(seed: u64, out: *mut *mut UcfModel) -> UcfStatus {
    guard(|| {
        non_null!(out);
        let cfg = TrackerConfig {
            init_seed: seed,
            ..TrackerConfig::default()
        };
        let model = try_ucf!(DtrdModel::new(cfg));
        *out = Box::into_raw(Box::new(UcfModel(Arc::new(model))));
        UcfStatus::Ok
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ucf_model_free(model: *mut UcfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Color-template tracker searching `search_area_factor` times the box size.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ucf_tracker_new_baseline(search_area_factor: f64, out: *mut *mut UcfTracker) -> UcfStatus {
    guard(|| {
        non_null!(out);
        if !(search_area_factor > 0.0) {
            return fail(UcfStatus::InvalidArgument, "search_area_factor must be positive");
        }
        *out = Box::into_raw(Box::new(UcfTracker(Box::new(BaselineTracker::new(search_area_factor)))));
        UcfStatus::Ok
    })
}

/// RGB-D transformer tracker over `model`; with `use_depth == false` the
/// depth channel is zeroed before inference.
///
/// # Safety
/// `model` must be a live model handle and `out` a valid pointer. The
/// tracker keeps its own reference, so the model may be freed first.
#[no_mangle]
pub unsafe extern "C" fn ucf_tracker_new_dtrd(model: *const UcfModel, use_depth: bool, out: *mut *mut UcfTracker) -> UcfStatus {
    guard(|| {
        non_null!(model, out);
        let t = DtrdTracker::new((*model).0.clone());
        let t: Box<dyn Tracker> = if use_depth { Box::new(t) } else { Box::new(t.without_depth()) };
        *out = Box::into_raw(Box::new(UcfTracker(t)));
        UcfStatus::Ok
    })
}

/// # Safety
/// `tracker` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ucf_tracker_free(tracker: *mut UcfTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Starts tracking the object inside `bbox` on `frame`.
///
/// # Safety
/// All pointers must be valid; frame buffers as documented on [`UcfFrame`].
#[no_mangle]
pub unsafe extern "C" fn ucf_tracker_init(tracker: *mut UcfTracker, frame: *const UcfFrame, bbox: *const UcfBox) -> UcfStatus {
    guard(|| {
        non_null!(tracker, frame, bbox);
        let f = match copy_frame(&*frame) {
            Ok(f) => f,
            Err(s) => return s,
        };
        let b = try_ucf!((*bbox).to_box());
        try_ucf!((*tracker).0.init(&f, &b));
        UcfStatus::Ok
    })
}

/// Tracks into the next frame. `out_confidence` may be null.
///
/// # Safety
/// All non-optional pointers must be valid; frame buffers as documented on
/// [`UcfFrame`].
#[no_mangle]
pub unsafe extern "C" fn ucf_tracker_step(
    tracker: *mut UcfTracker,
    frame: *const UcfFrame,
    out_box: *mut UcfBox,
    out_confidence: *mut f64,
) -> UcfStatus {
    guard(|| {
        non_null!(tracker, frame, out_box);
        let f = match copy_frame(&*frame) {
            Ok(f) => f,
            Err(s) => return s,
        };
        let out = try_ucf!((*tracker).0.step(&f));
        *out_box = out.bbox.into();
        if !out_confidence.is_null() {
            *out_confidence = out.confidence;
        }
        UcfStatus::Ok
    })
}

/// Median depth over the central part of `bbox`. Returns
/// `UCF_STATUS_CONTRACT` when the box covers no pixel.
///
/// # Safety
/// All pointers must be valid; frame buffers as documented on [`UcfFrame`].
#[no_mangle]
pub unsafe extern "C" fn ucf_depth_at_box(frame: *const UcfFrame, bbox: *const UcfBox, out: *mut f64) -> UcfStatus {
    guard(|| {
        non_null!(frame, bbox, out);
        let f = match copy_frame(&*frame) {
            Ok(f) => f,
            Err(s) => return s,
        };
        let b = try_ucf!((*bbox).to_box());
        match depth_at_box(&f, &b) {
            Some(d) => {
                *out = d;
                UcfStatus::Ok
            }
            None => fail(UcfStatus::Contract, "box covers no pixel"),
        }
    })
}

/// Fills `out` with the default controller gains and limits.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ucf_control_config_default(out: *mut UcfControlConfig) -> UcfStatus {
    guard(|| {
        non_null!(out);
        *out = ControlConfig::default().into();
        UcfStatus::Ok
    })
}

/// Range and bearing PI controllers. `config` may be null for defaults.
///
/// # Safety
/// `config` must be null or valid, `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ucf_controller_new(config: *const UcfControlConfig, out: *mut *mut UcfController) -> UcfStatus {
    guard(|| {
        non_null!(out);
        let cfg = if config.is_null() {
            ControlConfig::default()
        } else {
            (*config).into()
        };
        let c = try_ucf!(FollowController::new(&cfg));
        *out = Box::into_raw(Box::new(UcfController(c)));
        UcfStatus::Ok
    })
}

/// # Safety
/// `controller` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ucf_controller_free(controller: *mut UcfController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// One control step. A null `bbox` means the target is lost: the command is
/// zero and the integrals hold.
///
/// # Safety
/// `controller`, `v` and `omega` must be valid; `bbox` may be null.
#[no_mangle]
pub unsafe extern "C" fn ucf_controller_follow(
    controller: *mut UcfController,
    bbox: *const UcfBox,
    depth: f64,
    dt: f64,
    v: *mut f64,
    omega: *mut f64,
) -> UcfStatus {
    guard(|| {
        non_null!(controller, v, omega);
        let b = if bbox.is_null() {
            None
        } else {
            Some(try_ucf!((*bbox).to_box()))
        };
        let (lin, ang) = try_ucf!((*controller).0.follow(b.as_ref().map(|b| (b, depth)), dt));
        *v = lin;
        *omega = ang;
        UcfStatus::Ok
    })
}
