//! C ABI over `alf-core`: box message codec, grid geometry, rasterizer and
//! feature synthesizer. Every entry point returns an [`AlfStatus`]; on failure
//! [`alf_last_error_message`] describes the error for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use alf_core::codec::{bandwidth_bps, decode_message, deserialize, encode_message, serialize, MessageSchema};
use alf_core::efs::{efs_forward, init_params, read_params, write_params, EfsConfig, EfsParams};
use alf_core::geometry::{transform_box, BoxBEV, Pose2};
use alf_core::raster::{rasterize, GridSpec, PseudoBev};
use alf_core::tensor::FeatureMap;
use alf_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlfStatus {
    Ok = 0,
    Io = 1,
    Parse = 2,
    Decode = 3,
    Budget = 4,
    Config = 5,
    Shape = 6,
    NullPointer = 7,
    BufferTooSmall = 8,
    InvalidArgument = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlfBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub score: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlfGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub v_x: f64,
    pub v_y: f64,
}

/// Sender pose in the receiver frame; yaw in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlfPose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

/// Message layout: field quantizers and record cap.
pub struct AlfSchema(MessageSchema);

/// Feature synthesizer parameters for one ego geometry.
pub struct AlfEfs(EfsParams);

impl From<AlfBox> for BoxBEV {
    fn from(b: AlfBox) -> Self {
        BoxBEV::new(b.x, b.y, b.w, b.l, b.yaw, b.score)
    }
}

impl From<BoxBEV> for AlfBox {
    fn from(b: BoxBEV) -> Self {
        AlfBox { x: b.x, y: b.y, w: b.w, l: b.l, yaw: b.yaw, score: b.score }
    }
}

impl From<AlfGridSpec> for GridSpec {
    fn from(g: AlfGridSpec) -> Self {
        GridSpec::new([g.x_min, g.x_max], [g.y_min, g.y_max], [g.v_x, g.v_y])
    }
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Buffer { need: usize, cap: usize },
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> AlfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return AlfStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            let s = match e {
                Error::Io(_) => AlfStatus::Io,
                Error::Parse { .. } => AlfStatus::Parse,
                Error::Decode(_) => AlfStatus::Decode,
                Error::Budget { .. } => AlfStatus::Budget,
                Error::Config(_) => AlfStatus::Config,
                Error::Shape(_) => AlfStatus::Shape,
            };
            (s, e.to_string())
        }
        Ok(Err(Failure::Null(what))) => (AlfStatus::NullPointer, format!("`{what}` is null")),
        Ok(Err(Failure::Buffer { need, cap })) => {
            (AlfStatus::BufferTooSmall, format!("output buffer holds {cap}, {need} required"))
        }
        Ok(Err(Failure::Invalid(m))) => (AlfStatus::InvalidArgument, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (AlfStatus::Panic, format!("internal panic: {m}"))
        }
    };
    set_last_error(msg);
    status
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

/// Slice view that tolerates a null pointer when `len` is zero.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<String> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| Failure::Invalid("path is not valid UTF-8".into()))
}

fn grid_arg(g: &AlfGridSpec) -> FfiResult<GridSpec> {
    let g = GridSpec::from(*g);
    g.validate()?;
    Ok(g)
}

fn box_args(boxes: &[AlfBox]) -> FfiResult<Vec<BoxBEV>> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let b = BoxBEV::from(*b);
            if b.is_valid() {
                Ok(b)
            } else {
                Err(Failure::Invalid(format!("box {i} is not finite with positive extent and score in [0, 1]")))
            }
        })
        .collect()
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn alf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null after a
/// successful call. Valid until the next `alf_*` call on the same thread.
#[no_mangle]
pub extern "C" fn alf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// BEV grid dimensions `(H_bev, W_bev)` of `grid`.
///
/// # Safety
/// Pointers must be null or valid for the pointee type.
#[no_mangle]
pub unsafe extern "C" fn alf_grid_dims(grid: *const AlfGridSpec, rows: *mut usize, cols: *mut usize) -> AlfStatus {
    guard(|| {
        let g = grid_arg(deref(grid, "grid")?)?;
        let (h, w) = g.dims();
        *out(rows, "rows")? = h;
        *out(cols, "cols")? = w;
        Ok(())
    })
}

/// Uniform `bits`-wide schema whose x and y ranges span `grid`. Free with
/// [`alf_schema_free`].
///
/// # Safety
/// `grid` must be null or valid; `schema_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn alf_schema_new(
    grid: *const AlfGridSpec,
    bits: u8,
    k_max: usize,
    schema_out: *mut *mut AlfSchema,
) -> AlfStatus {
    guard(|| {
        let slot = out(schema_out, "schema_out")?;
        let schema = MessageSchema::for_grid(&grid_arg(deref(grid, "grid")?)?, bits, k_max);
        schema.validate()?;
        *slot = Box::into_raw(Box::new(AlfSchema(schema)));
        Ok(())
    })
}

/// # Safety
/// `schema` must be null or come from [`alf_schema_new`], freed at most once.
#[no_mangle]
pub unsafe extern "C" fn alf_schema_free(schema: *mut AlfSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Serialized message size in bytes; 0 for a null schema.
///
/// # Safety
/// `schema` must be null or a live schema handle.
#[no_mangle]
pub unsafe extern "C" fn alf_schema_payload_bytes(schema: *const AlfSchema) -> usize {
    schema.as_ref().map_or(0, |s| s.0.payload_bytes())
}

/// # Safety
/// `schema` must be null or live; `bps` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn alf_schema_bandwidth_bps(schema: *const AlfSchema, rate_hz: f64, bps: *mut f64) -> AlfStatus {
    guard(|| {
        let s = deref(schema, "schema")?;
        *out(bps, "bps")? = bandwidth_bps(&s.0, rate_hz)?;
        Ok(())
    })
}

/// Keeps the `k_max` highest-scoring boxes and writes the fixed-size message
/// to `buf`. `written` receives the message size, also when `cap` is too small.
///
/// # Safety
/// `boxes` must point to `n` boxes (may be null when `n == 0`); `buf` must be
/// writable for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn alf_encode(
    schema: *const AlfSchema,
    boxes: *const AlfBox,
    n: usize,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> AlfStatus {
    guard(|| {
        let s = &deref(schema, "schema")?.0;
        let written = out(written, "written")?;
        let boxes = box_args(slice(boxes, n, "boxes")?)?;
        let bytes = serialize(&encode_message(&boxes, s), s)?;
        *written = bytes.len();
        if cap < bytes.len() {
            return Err(Failure::Buffer { need: bytes.len(), cap });
        }
        slice_mut(buf, bytes.len(), "buf")?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// Decodes a message and maps its boxes through `pose` (identity when null).
/// `count` receives the number of boxes, also when `cap` is too small.
///
/// # Safety
/// `bytes` must be readable for `len` bytes; `boxes_out` writable for `cap` boxes.
#[no_mangle]
pub unsafe extern "C" fn alf_decode(
    schema: *const AlfSchema,
    bytes: *const u8,
    len: usize,
    pose: *const AlfPose,
    boxes_out: *mut AlfBox,
    cap: usize,
    count: *mut usize,
) -> AlfStatus {
    guard(|| {
        let s = &deref(schema, "schema")?.0;
        let count = out(count, "count")?;
        let pose = pose.as_ref().map_or(Pose2::IDENTITY, |p| Pose2::new(p.x, p.y, p.yaw));
        let decoded = decode_message(&deserialize(slice(bytes, len, "bytes")?, s)?, s)?;
        *count = decoded.len();
        if cap < decoded.len() {
            return Err(Failure::Buffer { need: decoded.len(), cap });
        }
        let dst = slice_mut(boxes_out, decoded.len(), "boxes_out")?;
        for (d, b) in dst.iter_mut().zip(&decoded) {
            *d = transform_box(b, &pose).into();
        }
        Ok(())
    })
}

/// Rasterizes `n` boxes onto `grid` into `out`, row-major over `(x, y)` cells.
/// `cap` must hold `H_bev · W_bev` values.
///
/// # Safety
/// `boxes` must point to `n` boxes; `values` must be writable for `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn alf_rasterize(
    grid: *const AlfGridSpec,
    boxes: *const AlfBox,
    n: usize,
    values: *mut f32,
    cap: usize,
) -> AlfStatus {
    guard(|| {
        let g = grid_arg(deref(grid, "grid")?)?;
        let boxes = box_args(slice(boxes, n, "boxes")?)?;
        let bev = rasterize(&boxes, &g);
        let src = bev.map.data();
        if cap < src.len() {
            return Err(Failure::Buffer { need: src.len(), cap });
        }
        slice_mut(values, src.len(), "values")?.copy_from_slice(src);
        Ok(())
    })
}

/// Freshly initialized synthesizer mapping `grid` to an `rows × cols ×
/// channels` ego feature; `base_channels` 0 selects the default width.
///
/// # Safety
/// `grid` must be null or valid; `efs_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn alf_efs_new(
    grid: *const AlfGridSpec,
    rows: usize,
    cols: usize,
    channels: usize,
    base_channels: usize,
    seed: u64,
    efs_out: *mut *mut AlfEfs,
) -> AlfStatus {
    guard(|| {
        let slot = out(efs_out, "efs_out")?;
        let mut cfg = EfsConfig::new(grid_arg(deref(grid, "grid")?)?, rows, cols, channels)?;
        if base_channels > 0 {
            cfg = cfg.with_base_channels(base_channels);
        }
        *slot = Box::into_raw(Box::new(AlfEfs(init_params(&cfg, seed)?)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `efs_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn alf_efs_load(path: *const c_char, efs_out: *mut *mut AlfEfs) -> AlfStatus {
    guard(|| {
        let slot = out(efs_out, "efs_out")?;
        let f = File::open(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(AlfEfs(read_params(BufReader::new(f))?)));
        Ok(())
    })
}

/// # Safety
/// `efs` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn alf_efs_save(efs: *const AlfEfs, path: *const c_char) -> AlfStatus {
    guard(|| {
        let p = &deref(efs, "efs")?.0;
        let mut w = BufWriter::new(File::create(path_arg(path)?)?);
        write_params(p, &mut w)?;
        w.flush()?;
        Ok(())
    })
}

/// # Safety
/// `efs` must be null or come from [`alf_efs_new`] / [`alf_efs_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn alf_efs_free(efs: *mut AlfEfs) {
    if !efs.is_null() {
        drop(Box::from_raw(efs));
    }
}

/// Pseudo-BEV dims and ego feature dims the synthesizer expects.
///
/// # Safety
/// `efs` must be live; every output pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn alf_efs_dims(
    efs: *const AlfEfs,
    bev_rows: *mut usize,
    bev_cols: *mut usize,
    rows: *mut usize,
    cols: *mut usize,
    channels: *mut usize,
) -> AlfStatus {
    guard(|| {
        let c = &deref(efs, "efs")?.0.config;
        let (h, w) = c.grid.dims();
        *out(bev_rows, "bev_rows")? = h;
        *out(bev_cols, "bev_cols")? = w;
        *out(rows, "rows")? = c.rows;
        *out(cols, "cols")? = c.cols;
        *out(channels, "channels")? = c.channels;
        Ok(())
    })
}

/// Synthesizes an ego-compatible feature from a pseudo-BEV map and the ego
/// feature. All buffers are row-major with channels fastest, and their lengths
/// must match [`alf_efs_dims`] exactly.
///
/// # Safety
/// Each pointer must be valid for its stated length.
#[no_mangle]
pub unsafe extern "C" fn alf_efs_forward(
    efs: *const AlfEfs,
    bev: *const f32,
    bev_len: usize,
    ego: *const f32,
    ego_len: usize,
    feature_out: *mut f32,
    out_len: usize,
) -> AlfStatus {
    guard(|| {
        let p = &deref(efs, "efs")?.0;
        let c = &p.config;
        let (h, w) = c.grid.dims();
        let feat_len = c.rows * c.cols * c.channels;
        if bev_len != h * w || ego_len != feat_len || out_len != feat_len {
            return Err(Error::Shape(format!(
                "expected bev {} / ego {feat_len} / out {feat_len} values, got {bev_len} / {ego_len} / {out_len}",
                h * w
            ))
            .into());
        }
        let map = FeatureMap::from_vec(h, w, 1, slice(bev, bev_len, "bev")?.to_vec())?;
        let f1 = FeatureMap::from_vec(c.rows, c.cols, c.channels, slice(ego, ego_len, "ego")?.to_vec())?;
        let f = efs_forward(&PseudoBev { grid: c.grid, map }, &f1, p)?;
        slice_mut(feature_out, out_len, "feature_out")?.copy_from_slice(f.data());
        Ok(())
    })
}
