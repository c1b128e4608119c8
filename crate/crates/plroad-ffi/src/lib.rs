//! C ABI over the plroad library: load a checkpoint (with its metadata
//! sidecar) behind an opaque handle and run per-pixel road scoring.
//!
//! Conventions: every function returns a `PlroadStatus`; the last failure
//! message is retrievable per thread via `plroad_last_error`. Pointers are
//! only written on `Ok`. Passing a handle after `plroad_model_free` is
//! undefined behavior, as with any C API.

use libc::{c_char, c_double, c_float, c_int, size_t};
use plroad::config::CheckpointMeta;
use plroad::net::{build_network, Network};
use plroad::scene::{Sample, SceneConfig, SKY_DEPTH};
use plroad::train::{prepare_sample, score_prepared};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result codes; nonzero values mirror the CLI's exit-code classes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlroadStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid argument or incompatible checkpoint.
    Usage = 2,
    /// Filesystem or file-format failure.
    Io = 3,
    /// Numerical failure during inference.
    Numeric = 4,
    /// Unexpected internal failure (a panic was caught at the boundary).
    Internal = 5,
}

/// Opaque model handle: a loaded network plus its inference contract.
pub struct PlroadModel {
    net: Network<f32>,
    meta: CheckpointMeta,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn guard<F: FnOnce() -> PlroadStatus>(f: F) -> PlroadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic caught at the FFI boundary");
            PlroadStatus::Internal
        }
    }
}

/// Copy the current thread's last error message into `buf` (NUL-terminated,
/// truncated to `len` bytes). Returns the full message length in bytes,
/// excluding the terminator. `buf` may be null to query the length.
#[no_mangle]
pub extern "C" fn plroad_last_error(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Load a checkpoint written by the `plroad` tools. Expects the metadata
/// sidecar (`<path>.meta.json`) next to the checkpoint. On success writes a
/// handle into `out`; release it with `plroad_model_free`.
#[no_mangle]
pub extern "C" fn plroad_model_load(path: *const c_char, out: *mut *mut PlroadModel) -> PlroadStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("path and out must be non-null");
            return PlroadStatus::NullArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => Path::new(s),
            Err(_) => {
                set_error("path is not valid UTF-8");
                return PlroadStatus::Usage;
            }
        };
        let meta = match CheckpointMeta::load(path) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return PlroadStatus::Io;
            }
        };
        let mut net = build_network::<f32>(meta.spec.clone(), 0);
        match plroad::checkpoint::load_params(path, &mut net.params) {
            Ok(()) => {}
            Err(e @ plroad::checkpoint::CheckpointError::ArchitectureMismatch { .. }) => {
                set_error(&e.to_string());
                return PlroadStatus::Usage;
            }
            Err(e) => {
                set_error(&e.to_string());
                return PlroadStatus::Io;
            }
        }
        unsafe { *out = Box::into_raw(Box::new(PlroadModel { net, meta })) };
        PlroadStatus::Ok
    })
}

/// Release a handle returned by `plroad_model_load`. Null is a no-op.
#[no_mangle]
pub extern "C" fn plroad_model_free(model: *mut PlroadModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Whether inference on this model requires a depth map: 1 yes, 0 no,
/// -1 if `model` is null.
#[no_mangle]
pub extern "C" fn plroad_model_needs_depth(model: *const PlroadModel) -> c_int {
    if model.is_null() {
        return -1;
    }
    let model = unsafe { &*model };
    c_int::from(model.meta.needs_depth())
}

/// Copy the model's fusion-mode name (e.g. "PLIF") into `buf`,
/// NUL-terminated and truncated to `len` bytes.
#[no_mangle]
pub extern "C" fn plroad_model_mode(model: *const PlroadModel, buf: *mut c_char, len: size_t) -> PlroadStatus {
    guard(|| {
        if model.is_null() || buf.is_null() || len == 0 {
            set_error("model and buf must be non-null with len > 0");
            return PlroadStatus::NullArgument;
        }
        let model = unsafe { &*model };
        let name = model.meta.spec.mode.to_string();
        let bytes = name.as_bytes();
        let n = bytes.len().min(len - 1);
        unsafe {
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        PlroadStatus::Ok
    })
}

/// Score one image. `rgb` is interleaved 8-bit RGB, row-major,
/// `width * height * 3` bytes. `depth` is a row-major float depth map of
/// `width * height` entries; it may be null for models whose
/// `plroad_model_needs_depth` is 0. `pl_clip` normalizes the pseudo-LiDAR
/// feature (use the training dataset's value; values <= 0 select 1.0).
/// Writes `width * height` road probabilities in [0,1] into `scores`.
#[no_mangle]
pub extern "C" fn plroad_infer(
    model: *const PlroadModel,
    width: size_t,
    height: size_t,
    rgb: *const u8,
    depth: *const c_float,
    pl_clip: c_double,
    scores: *mut c_float,
) -> PlroadStatus {
    guard(|| {
        if model.is_null() || rgb.is_null() || scores.is_null() {
            set_error("model, rgb, and scores must be non-null");
            return PlroadStatus::NullArgument;
        }
        let model = unsafe { &*model };
        if width == 0 || height == 0 {
            set_error("width and height must be positive");
            return PlroadStatus::Usage;
        }
        if model.meta.needs_depth() && depth.is_null() {
            set_error("this model consumes depth-derived input; depth must be non-null");
            return PlroadStatus::Usage;
        }
        if let Err(e) = model.meta.spec.backbone.validate(height, width) {
            set_error(&e.to_string());
            return PlroadStatus::Usage;
        }
        let hw = width * height;
        let rgb = unsafe { std::slice::from_raw_parts(rgb, hw * 3) }.to_vec();
        let depth = if depth.is_null() {
            vec![SKY_DEPTH; hw]
        } else {
            unsafe { std::slice::from_raw_parts(depth, hw) }.to_vec()
        };
        let scene = SceneConfig { width, height, ..SceneConfig::default() };
        let sample = Sample {
            width,
            height,
            rgb,
            depth,
            mask: vec![false; hw],
            intrinsics: scene.intrinsics(),
        };
        let clip = if pl_clip > 0.0 { pl_clip } else { 1.0 };
        let prepared = match prepare_sample(&sample, model.meta.spec.mode, clip, model.meta.rgb_aux) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e.to_string());
                return PlroadStatus::Usage;
            }
        };
        match score_prepared(&model.net, &prepared) {
            Ok(s) => {
                let out = unsafe { std::slice::from_raw_parts_mut(scores, hw) };
                for (dst, src) in out.iter_mut().zip(&s) {
                    *dst = *src as c_float;
                }
                PlroadStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                PlroadStatus::Numeric
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use plroad::checkpoint::save_params;
    use plroad::net::{BackboneConfig, FusionMode, NetSpec};
    use std::ffi::CString;

    fn backbone() -> BackboneConfig {
        BackboneConfig { widths: [4, 4, 4, 4, 4], strides: [2, 1, 2, 2, 1], blocks: 1 }
    }

    fn write_model(dir: &Path, mode: FusionMode, rgb_aux: bool) -> std::path::PathBuf {
        let spec = NetSpec {
            pl_input_channels: if rgb_aux { 3 } else { 1 },
            ..NetSpec::new(mode, backbone())
        };
        let net = build_network::<f32>(spec.clone(), 11);
        let path = dir.join("model.plrd");
        save_params(&path, &net.params).unwrap();
        CheckpointMeta { spec, rgb_aux }.save(&path).unwrap();
        path
    }

    fn load(path: &Path) -> *mut PlroadModel {
        let c = CString::new(path.to_str().unwrap()).unwrap();
        let mut handle: *mut PlroadModel = std::ptr::null_mut();
        assert_eq!(plroad_model_load(c.as_ptr(), &mut handle), PlroadStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    fn last_error() -> String {
        let mut buf = vec![0i8; 256];
        let n = plroad_last_error(buf.as_mut_ptr(), buf.len());
        let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
        assert!(n >= bytes.len());
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn load_query_infer_free() {
        let dir = tempfile::tempdir().unwrap();
        let model = load(&write_model(dir.path(), FusionMode::Plif, true));
        assert_eq!(plroad_model_needs_depth(model), 0);

        let mut name = vec![0i8; 16];
        assert_eq!(plroad_model_mode(model, name.as_mut_ptr(), name.len()), PlroadStatus::Ok);
        let name: Vec<u8> = name.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
        assert_eq!(name, b"PLIF");

        let (w, h) = (32usize, 32usize);
        let rgb = vec![128u8; w * h * 3];
        let mut scores = vec![-1.0f32; w * h];
        let status = plroad_infer(model, w, h, rgb.as_ptr(), std::ptr::null(), 0.0, scores.as_mut_ptr());
        assert_eq!(status, PlroadStatus::Ok);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        plroad_model_free(model);
    }

    #[test]
    fn teacher_without_depth_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = load(&write_model(dir.path(), FusionMode::Plif, false));
        assert_eq!(plroad_model_needs_depth(model), 1);
        let (w, h) = (32usize, 32usize);
        let rgb = vec![10u8; w * h * 3];
        let mut scores = vec![0.0f32; w * h];
        let status = plroad_infer(model, w, h, rgb.as_ptr(), std::ptr::null(), 0.0, scores.as_mut_ptr());
        assert_eq!(status, PlroadStatus::Usage);
        assert!(last_error().contains("depth"), "{}", last_error());

        let depth = vec![8.0f32; w * h];
        let status = plroad_infer(model, w, h, rgb.as_ptr(), depth.as_ptr(), 0.5, scores.as_mut_ptr());
        assert_eq!(status, PlroadStatus::Ok);
        plroad_model_free(model);
    }

    #[test]
    fn null_arguments_reported() {
        let mut handle: *mut PlroadModel = std::ptr::null_mut();
        assert_eq!(plroad_model_load(std::ptr::null(), &mut handle), PlroadStatus::NullArgument);
        assert_eq!(plroad_model_needs_depth(std::ptr::null()), -1);
        assert_eq!(
            plroad_infer(std::ptr::null(), 4, 4, std::ptr::null(), std::ptr::null(), 0.0, std::ptr::null_mut()),
            PlroadStatus::NullArgument
        );
        assert!(!last_error().is_empty());
        plroad_model_free(std::ptr::null_mut());
    }

    #[test]
    fn missing_file_is_io_error() {
        let c = CString::new("/nonexistent/model.plrd").unwrap();
        let mut handle: *mut PlroadModel = std::ptr::null_mut();
        assert_eq!(plroad_model_load(c.as_ptr(), &mut handle), PlroadStatus::Io);
        assert!(handle.is_null());
    }

    #[test]
    fn bad_extent_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let model = load(&write_model(dir.path(), FusionMode::NfRgb, false));
        let (w, h) = (30usize, 30usize); // not divisible by the total stride
        let rgb = vec![0u8; w * h * 3];
        let mut scores = vec![0.0f32; w * h];
        let status = plroad_infer(model, w, h, rgb.as_ptr(), std::ptr::null(), 0.0, scores.as_mut_ptr());
        assert_eq!(status, PlroadStatus::Usage);
        plroad_model_free(model);
    }

    #[test]
    fn header_is_generated_and_covers_the_surface() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/plroad.h");
        let text = std::fs::read_to_string(header).unwrap();
        for symbol in [
            "plroad_model_load",
            "plroad_model_free",
            "plroad_model_needs_depth",
            "plroad_model_mode",
            "plroad_infer",
            "plroad_last_error",
            "PlroadStatus",
            "PlroadModel",
        ] {
            assert!(text.contains(symbol), "header missing {symbol}");
        }
    }
}
