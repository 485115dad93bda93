//! C ABI over `ssrmap`.
//!
//! Objects cross the boundary as opaque handles created by `*_from_bytes`,
//! `*_from_file` or `ssrm_codec_fit` and released with the matching `*_free`.
//! Every fallible call returns an [`SsrmStatus`]; on failure a description is
//! available from [`ssrm_last_error_message`] on the same thread. Byte results
//! are returned in an [`SsrmBuffer`] that the caller releases with
//! [`ssrm_buffer_free`].
//!
//! Handles are immutable after creation, so a handle may be shared between
//! threads as long as no thread frees it while others use it.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ssrmap::codec::{self, CodedBlob, ContextModel};
use ssrmap::mapstore::{map_vectors, query_map, read_map, CompressedMap};
use ssrmap::ssr::{project_all, SsrModel};
use ssrmap::{EmbeddingVector, Error};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsrmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Io = 4,
    Parse = 5,
    Dimension = 6,
    Numeric = 7,
    Corrupt = 8,
    ModelMismatch = 9,
    NoPositives = 10,
    Panic = 11,
}

/// Bytes owned by the library. Release with [`ssrm_buffer_free`].
#[repr(C)]
#[derive(Debug)]
pub struct SsrmBuffer {
    pub data: *mut u8,
    pub len: usize,
}

/// One ranked map element.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsrmHit {
    pub index: usize,
    pub similarity: f64,
}

/// Fitted caption model.
pub struct SsrmCodec(ContextModel);

/// Trained projection network.
pub struct SsrmModel(SsrModel);

/// Compressed map with its retrieval vectors precomputed.
pub struct SsrmMap {
    map: CompressedMap,
    vectors: Vec<Vec<f64>>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(SsrmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::UnknownMethod { .. } => SsrmStatus::InvalidArgument,
            Error::Io { .. } => SsrmStatus::Io,
            Error::Parse { .. } => SsrmStatus::Parse,
            Error::DimensionMismatch { .. } => SsrmStatus::Dimension,
            Error::ZeroNorm(_) | Error::NonFinite(_) => SsrmStatus::Numeric,
            Error::Truncated { .. } | Error::Corrupt(_) => SsrmStatus::Corrupt,
            Error::ModelMismatch { .. } => SsrmStatus::ModelMismatch,
            Error::NoPositives(_) => SsrmStatus::NoPositives,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SsrmStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SsrmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsrmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SsrmStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(fail(SsrmStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(SsrmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(SsrmStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(SsrmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(SsrmStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn buffer(bytes: Vec<u8>) -> SsrmBuffer {
    let boxed = bytes.into_boxed_slice();
    let len = boxed.len();
    SsrmBuffer {
        data: Box::into_raw(boxed) as *mut u8,
        len,
    }
}

fn read_file(path: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| fail(SsrmStatus::Io, format!("io error on {path}: {e}")))
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ssrm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ssrm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a buffer returned by this library. Passing an empty buffer is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ssrm_buffer_free(buf: SsrmBuffer) {
    if !buf.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(
            buf.data, buf.len,
        )));
    }
}

/// Fits a context model of the given order on `count` NUL-terminated lines.
#[no_mangle]
pub unsafe extern "C" fn ssrm_codec_fit(
    lines: *const *const c_char,
    count: usize,
    order: usize,
    out_codec: *mut *mut SsrmCodec,
) -> SsrmStatus {
    guard(|| {
        let out_codec = out(out_codec, "out_codec")?;
        let corpus = slice(lines, count, "lines")?
            .iter()
            .map(|&l| string(l, "line").map(str::as_bytes))
            .collect::<Result<Vec<_>, _>>()?;
        let model = codec::fit_context_model(&corpus, order)?;
        *out_codec = Box::into_raw(Box::new(SsrmCodec(model)));
        Ok(())
    })
}

/// Loads a codec model serialized by [`ssrm_codec_to_bytes`] or `ssrmap fit-codec`.
#[no_mangle]
pub unsafe extern "C" fn ssrm_codec_from_bytes(
    data: *const u8,
    len: usize,
    out_codec: *mut *mut SsrmCodec,
) -> SsrmStatus {
    guard(|| {
        let out_codec = out(out_codec, "out_codec")?;
        let model = ContextModel::from_bytes(slice(data, len, "data")?)?;
        *out_codec = Box::into_raw(Box::new(SsrmCodec(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_codec_from_file(
    path: *const c_char,
    out_codec: *mut *mut SsrmCodec,
) -> SsrmStatus {
    guard(|| {
        let out_codec = out(out_codec, "out_codec")?;
        let model = ContextModel::from_bytes(&read_file(string(path, "path")?)?)?;
        *out_codec = Box::into_raw(Box::new(SsrmCodec(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_codec_to_bytes(
    codec: *const SsrmCodec,
    out_buf: *mut SsrmBuffer,
) -> SsrmStatus {
    guard(|| {
        let out_buf = out(out_buf, "out_buf")?;
        *out_buf = buffer(handle(codec, "codec")?.0.to_bytes());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_codec_free(codec: *mut SsrmCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Compresses arbitrary bytes into a self-describing blob.
#[no_mangle]
pub unsafe extern "C" fn ssrm_codec_encode(
    codec: *const SsrmCodec,
    data: *const u8,
    len: usize,
    out_blob: *mut SsrmBuffer,
) -> SsrmStatus {
    guard(|| {
        let out_blob = out(out_blob, "out_blob")?;
        let model = &handle(codec, "codec")?.0;
        let text = slice(data, len, "data")?;
        if u32::try_from(len).is_err() {
            return Err(fail(SsrmStatus::InvalidArgument, "input longer than 4 GiB"));
        }
        *out_blob = buffer(codec::encode(model, text).to_bytes());
        Ok(())
    })
}

/// Restores the bytes of a blob produced by [`ssrm_codec_encode`] with the same model.
#[no_mangle]
pub unsafe extern "C" fn ssrm_codec_decode(
    codec: *const SsrmCodec,
    blob: *const u8,
    len: usize,
    out_data: *mut SsrmBuffer,
) -> SsrmStatus {
    guard(|| {
        let out_data = out(out_data, "out_data")?;
        let model = &handle(codec, "codec")?.0;
        let blob = CodedBlob::from_bytes(slice(blob, len, "blob")?)?;
        *out_data = buffer(codec::decode(model, &blob)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_model_from_bytes(
    data: *const u8,
    len: usize,
    out_model: *mut *mut SsrmModel,
) -> SsrmStatus {
    guard(|| {
        let out_model = out(out_model, "out_model")?;
        let model = SsrModel::from_bytes(slice(data, len, "data")?)?;
        *out_model = Box::into_raw(Box::new(SsrmModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_model_from_file(
    path: *const c_char,
    out_model: *mut *mut SsrmModel,
) -> SsrmStatus {
    guard(|| {
        let out_model = out(out_model, "out_model")?;
        let model = SsrModel::from_bytes(&read_file(string(path, "path")?)?)?;
        *out_model = Box::into_raw(Box::new(SsrmModel(model)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_model_free(model: *mut SsrmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input embedding dimension, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ssrm_model_input_dim(model: *const SsrmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

/// Output dimension (the largest usable prefix), or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ssrm_model_output_dim(model: *const SsrmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.output_dim())
}

/// Writes the first `c` components of the projected `image` to `out_prefix`,
/// which must hold `c` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssrm_model_project(
    model: *const SsrmModel,
    image: *const f64,
    dim: usize,
    c: usize,
    out_prefix: *mut f64,
) -> SsrmStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        if dim != model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.input_dim(),
                found: dim,
            }
            .into());
        }
        let z = EmbeddingVector::new(slice(image, dim, "image")?.to_vec())?;
        let p = project_all(model, std::slice::from_ref(&z), c)?;
        if out_prefix.is_null() {
            return Err(fail(SsrmStatus::NullPointer, "out_prefix is null"));
        }
        ptr::copy_nonoverlapping(p[0].as_ptr(), out_prefix, c);
        Ok(())
    })
}

fn wrap_map(map: CompressedMap) -> Result<*mut SsrmMap, Failure> {
    let vectors = map_vectors(&map)?;
    Ok(Box::into_raw(Box::new(SsrmMap { map, vectors })))
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_map_from_bytes(
    data: *const u8,
    len: usize,
    out_map: *mut *mut SsrmMap,
) -> SsrmStatus {
    guard(|| {
        let out_map = out(out_map, "out_map")?;
        *out_map = wrap_map(CompressedMap::from_bytes(slice(data, len, "data")?)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_map_from_file(
    path: *const c_char,
    out_map: *mut *mut SsrmMap,
) -> SsrmStatus {
    guard(|| {
        let out_map = out(out_map, "out_map")?;
        *out_map = wrap_map(read_map(Path::new(string(path, "path")?))?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_map_to_bytes(
    map: *const SsrmMap,
    out_buf: *mut SsrmBuffer,
) -> SsrmStatus {
    guard(|| {
        let out_buf = out(out_buf, "out_buf")?;
        *out_buf = buffer(handle(map, "map")?.map.to_bytes()?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ssrm_map_free(map: *mut SsrmMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Number of stored elements, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ssrm_map_len(map: *const SsrmMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.len())
}

/// Stored prefix length; 0 means the map holds captions only.
#[no_mangle]
pub unsafe extern "C" fn ssrm_map_dims(map: *const SsrmMap) -> usize {
    map.as_ref().map_or(0, |m| m.map.dims)
}

/// Mean stored bytes per element, optionally with the header spread over all elements.
#[no_mangle]
pub unsafe extern "C" fn ssrm_map_bytes_per_element(
    map: *const SsrmMap,
    amortize_header: bool,
    out_bytes: *mut f64,
) -> SsrmStatus {
    guard(|| {
        let out_bytes = out(out_bytes, "out_bytes")?;
        *out_bytes = handle(map, "map")?.map.bytes_per_element(amortize_header)?;
        Ok(())
    })
}

fn element_index(map: &SsrmMap, index: usize) -> Result<usize, Failure> {
    if index < map.map.len() {
        Ok(index)
    } else {
        Err(fail(
            SsrmStatus::InvalidArgument,
            format!(
                "element {index} out of range for a map of {}",
                map.map.len()
            ),
        ))
    }
}

/// UTF-8 id of element `index` (not NUL-terminated).
#[no_mangle]
pub unsafe extern "C" fn ssrm_map_element_id(
    map: *const SsrmMap,
    index: usize,
    out_id: *mut SsrmBuffer,
) -> SsrmStatus {
    guard(|| {
        let out_id = out(out_id, "out_id")?;
        let map = handle(map, "map")?;
        let i = element_index(map, index)?;
        *out_id = buffer(map.map.elements[i].id.clone().into_bytes());
        Ok(())
    })
}

/// Decoded UTF-8 caption of element `index` (not NUL-terminated).
#[no_mangle]
pub unsafe extern "C" fn ssrm_map_caption(
    map: *const SsrmMap,
    index: usize,
    out_caption: *mut SsrmBuffer,
) -> SsrmStatus {
    guard(|| {
        let out_caption = out(out_caption, "out_caption")?;
        let map = handle(map, "map")?;
        let i = element_index(map, index)?;
        *out_caption = buffer(map.map.decode_caption(i)?.into_bytes());
        Ok(())
    })
}

/// Ranks the map against a query image embedding and caption.
///
/// The query is compressed the same way as the stored elements. `model` may be
/// null only for caption-only maps, in which case `image` is ignored. At most
/// `capacity` hits are written to `out_hits`, best first, and their number to
/// `out_count`.
#[no_mangle]
pub unsafe extern "C" fn ssrm_map_query(
    map: *const SsrmMap,
    model: *const SsrmModel,
    image: *const f64,
    dim: usize,
    caption: *const c_char,
    out_hits: *mut SsrmHit,
    capacity: usize,
    out_count: *mut usize,
) -> SsrmStatus {
    guard(|| {
        let out_count = out(out_count, "out_count")?;
        let map = handle(map, "map")?;
        let model = model.as_ref().map(|m| &m.0);
        let image = if map.map.dims == 0 {
            &[][..]
        } else {
            slice(image, dim, "image")?
        };
        let caption = string(caption, "caption")?;
        if capacity > 0 && out_hits.is_null() {
            return Err(fail(SsrmStatus::NullPointer, "out_hits is null"));
        }
        let hits = query_map(&map.map, &map.vectors, model, image, caption, capacity)?;
        for (i, h) in hits.iter().enumerate() {
            *out_hits.add(i) = SsrmHit {
                index: h.index,
                similarity: h.similarity,
            };
        }
        *out_count = hits.len();
        Ok(())
    })
}
