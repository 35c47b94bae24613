//! C ABI over the itsbench library.
//!
//! Every fallible function returns an [`ItsStatus`]; on failure a message is
//! available from [`its_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_compute`/`*_parse` and released with the
//! matching `*_free`. Strings returned by the library are freed with
//! [`its_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use num_complex::Complex64;
use serde_json::json;

use itsbench::channel::two_ray_loss_db;
use itsbench::codec::{decode_cam, decode_frame, encode_cam, encode_frame, CamPayload, Frame, CAM_LEN};
use itsbench::geo::{haversine_distance, GeoPosition};
use itsbench::ldm::{handle_request, Ldm, LdmConfig, LdmEntry, UpsertOutcome};
use itsbench::link::free_space_loss_db;
use itsbench::rfanalysis::{check_mask, compute_average_power_dbm, compute_psd, EmissionMask, PsdEstimate};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Decode = 3,
    Encode = 4,
    BufferTooSmall = 5,
    Panic = 99,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: ItsStatus, msg: impl Into<String>) -> ItsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> ItsStatus) -> ItsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(ItsStatus::Panic, "internal panic"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(ItsStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn its_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn its_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Flat CAM fields in wire units.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ItsCam {
    pub protocol_version: u8,
    pub message_id: u8,
    pub station_id: u32,
    pub generation_delta_time: u16,
    pub latitude_tenth_udeg: i32,
    pub longitude_tenth_udeg: i32,
    pub altitude_cm: i32,
    pub speed_cmps: u16,
    pub heading_tenth_deg: u16,
    pub station_type: u8,
}

impl From<&ItsCam> for CamPayload {
    fn from(c: &ItsCam) -> Self {
        CamPayload {
            protocol_version: c.protocol_version,
            message_id: c.message_id,
            station_id: c.station_id,
            generation_delta_time: c.generation_delta_time,
            latitude_tenth_udeg: c.latitude_tenth_udeg,
            longitude_tenth_udeg: c.longitude_tenth_udeg,
            altitude_cm: c.altitude_cm,
            speed_cmps: c.speed_cmps,
            heading_tenth_deg: c.heading_tenth_deg,
            station_type: c.station_type,
        }
    }
}

impl From<&CamPayload> for ItsCam {
    fn from(c: &CamPayload) -> Self {
        ItsCam {
            protocol_version: c.protocol_version,
            message_id: c.message_id,
            station_id: c.station_id,
            generation_delta_time: c.generation_delta_time,
            latitude_tenth_udeg: c.latitude_tenth_udeg,
            longitude_tenth_udeg: c.longitude_tenth_udeg,
            altitude_cm: c.altitude_cm,
            speed_cmps: c.speed_cmps,
            heading_tenth_deg: c.heading_tenth_deg,
            station_type: c.station_type,
        }
    }
}

/// Default CAM header values (version 2, message id 2), all else zero.
#[no_mangle]
pub extern "C" fn its_cam_default() -> ItsCam {
    ItsCam::from(&CamPayload::default())
}

unsafe fn write_out(bytes: &[u8], out: *mut u8, out_len: usize, written: *mut usize) -> ItsStatus {
    *written = bytes.len();
    if out_len < bytes.len() {
        return fail(
            ItsStatus::BufferTooSmall,
            format!("need {} bytes, buffer holds {out_len}", bytes.len()),
        );
    }
    ptr::copy_nonoverlapping(bytes.as_ptr(), out, bytes.len());
    ItsStatus::Ok
}

/// Encodes a CAM payload. `*written` receives the required size even when
/// the buffer is too small.
#[no_mangle]
pub unsafe extern "C" fn its_cam_encode(cam: *const ItsCam, out: *mut u8, out_len: usize, written: *mut usize) -> ItsStatus {
    guard(|| {
        non_null!(cam, out, written);
        match encode_cam(&CamPayload::from(&*cam)) {
            Ok(bytes) => write_out(&bytes, out, out_len, written),
            Err(e) => fail(ItsStatus::Encode, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn its_cam_decode(data: *const u8, len: usize, out: *mut ItsCam) -> ItsStatus {
    guard(|| {
        non_null!(data, out);
        match decode_cam(slice::from_raw_parts(data, len)) {
            Ok(cam) => {
                *out = ItsCam::from(&cam);
                ItsStatus::Ok
            }
            Err(e) => fail(ItsStatus::Decode, e.to_string()),
        }
    })
}

/// Wraps a CAM in a single-hop broadcast frame.
#[no_mangle]
pub unsafe extern "C" fn its_frame_encode_cam(
    cam: *const ItsCam,
    timestamp_ms: u64,
    out: *mut u8,
    out_len: usize,
    written: *mut usize,
) -> ItsStatus {
    guard(|| {
        non_null!(cam, out, written);
        match Frame::cam(&CamPayload::from(&*cam), timestamp_ms).and_then(|f| encode_frame(&f)) {
            Ok(bytes) => write_out(&bytes, out, out_len, written),
            Err(e) => fail(ItsStatus::Encode, e.to_string()),
        }
    })
}

/// Decodes a frame and the CAM it carries.
#[no_mangle]
pub unsafe extern "C" fn its_frame_decode_cam(data: *const u8, len: usize, out: *mut ItsCam) -> ItsStatus {
    guard(|| {
        non_null!(data, out);
        match decode_frame(slice::from_raw_parts(data, len)).and_then(|f| decode_cam(&f.payload)) {
            Ok(cam) => {
                *out = ItsCam::from(&cam);
                ItsStatus::Ok
            }
            Err(e) => fail(ItsStatus::Decode, e.to_string()),
        }
    })
}

#[no_mangle]
pub extern "C" fn its_cam_len() -> usize {
    CAM_LEN
}

#[no_mangle]
pub unsafe extern "C" fn its_free_space_loss_db(distance_m: f64, fc_hz: f64, out: *mut f64) -> ItsStatus {
    guard(|| {
        non_null!(out);
        match free_space_loss_db(distance_m, fc_hz) {
            Ok(l) => {
                *out = l.0;
                ItsStatus::Ok
            }
            Err(e) => fail(ItsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Two-ray ground reflection loss; `+inf` at exact nulls.
#[no_mangle]
pub unsafe extern "C" fn its_two_ray_loss_db(
    distance_m: f64,
    h_tx_m: f64,
    h_rx_m: f64,
    fc_hz: f64,
    reflection_coeff: f64,
    out: *mut f64,
) -> ItsStatus {
    guard(|| {
        non_null!(out);
        match two_ray_loss_db(distance_m, h_tx_m, h_rx_m, fc_hz, reflection_coeff) {
            Ok(l) => {
                *out = l.0;
                ItsStatus::Ok
            }
            Err(e) => fail(ItsStatus::InvalidArgument, e.to_string()),
        }
    })
}

fn position(lat: f64, lon: f64) -> Result<GeoPosition, ItsStatus> {
    GeoPosition::new(lat, lon).map_err(|e| fail(ItsStatus::InvalidArgument, e.to_string()))
}

#[no_mangle]
pub unsafe extern "C" fn its_haversine_distance_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out: *mut f64) -> ItsStatus {
    guard(|| {
        non_null!(out);
        match (position(lat1, lon1), position(lat2, lon2)) {
            (Ok(a), Ok(b)) => {
                *out = haversine_distance(&a, &b);
                ItsStatus::Ok
            }
            (Err(s), _) | (_, Err(s)) => s,
        }
    })
}

unsafe fn iq_samples(iq: *const f64, n_samples: usize) -> Vec<Complex64> {
    let flat: &[f64] = slice::from_raw_parts(iq, n_samples * 2);
    flat.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Average power in dBm of `n_samples` interleaved I/Q volt samples.
#[no_mangle]
pub unsafe extern "C" fn its_average_power_dbm(iq: *const f64, n_samples: usize, impedance_ohm: f64, out: *mut f64) -> ItsStatus {
    guard(|| {
        non_null!(iq, out);
        match compute_average_power_dbm(&iq_samples(iq, n_samples), impedance_ohm) {
            Ok(p) => {
                *out = p.0;
                ItsStatus::Ok
            }
            Err(e) => fail(ItsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Opaque PSD estimate.
pub struct ItsPsd(PsdEstimate);

#[no_mangle]
pub unsafe extern "C" fn its_psd_compute(
    iq: *const f64,
    n_samples: usize,
    n_fft: usize,
    fs_hz: f64,
    fc_hz: f64,
    impedance_ohm: f64,
    out: *mut *mut ItsPsd,
) -> ItsStatus {
    guard(|| {
        non_null!(iq, out);
        match compute_psd(&iq_samples(iq, n_samples), n_fft, fs_hz, fc_hz, impedance_ohm) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(ItsPsd(p)));
                ItsStatus::Ok
            }
            Err(e) => fail(ItsStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn its_psd_len(psd: *const ItsPsd) -> usize {
    psd.as_ref().map_or(0, |p| p.0.freqs_hz.len())
}

/// Copies up to `len` bins of frequency (Hz) and PSD (dBm/Hz).
#[no_mangle]
pub unsafe extern "C" fn its_psd_copy(psd: *const ItsPsd, freqs_hz: *mut f64, psd_dbm_per_hz: *mut f64, len: usize) -> ItsStatus {
    guard(|| {
        non_null!(psd, freqs_hz, psd_dbm_per_hz);
        let p = &(*psd).0;
        let n = len.min(p.freqs_hz.len());
        ptr::copy_nonoverlapping(p.freqs_hz.as_ptr(), freqs_hz, n);
        ptr::copy_nonoverlapping(p.psd_dbm_per_hz.as_ptr(), psd_dbm_per_hz, n);
        ItsStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn its_psd_free(psd: *mut ItsPsd) {
    if !psd.is_null() {
        drop(Box::from_raw(psd));
    }
}

/// Opaque emission mask.
pub struct ItsMask(EmissionMask);

/// Parses mask text (`offset_hz limit_dbm_per_hz` per line).
#[no_mangle]
pub unsafe extern "C" fn its_mask_parse(text: *const c_char, out: *mut *mut ItsMask) -> ItsStatus {
    guard(|| {
        non_null!(text, out);
        let Ok(text) = CStr::from_ptr(text).to_str() else {
            return fail(ItsStatus::InvalidArgument, "mask text is not UTF-8");
        };
        match EmissionMask::parse(text, "<mask>") {
            Ok(m) => {
                *out = Box::into_raw(Box::new(ItsMask(m)));
                ItsStatus::Ok
            }
            Err(e) => fail(ItsStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn its_mask_free(mask: *mut ItsMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Checks a PSD against a mask. `*report_json` receives the full report;
/// free it with `its_string_free`. Pass NULL to skip it.
#[no_mangle]
pub unsafe extern "C" fn its_mask_check(
    psd: *const ItsPsd,
    mask: *const ItsMask,
    compliant: *mut bool,
    violations: *mut usize,
    report_json: *mut *mut c_char,
) -> ItsStatus {
    guard(|| {
        non_null!(psd, mask, compliant, violations);
        let report = check_mask(&(*psd).0, &(*mask).0);
        *compliant = report.compliant;
        *violations = report.violations.len();
        if !report_json.is_null() {
            let text = serde_json::to_string(&report).expect("report serializes");
            *report_json = CString::new(text).expect("json has no NUL").into_raw();
        }
        ItsStatus::Ok
    })
}

/// Opaque thread-safe LDM store.
pub struct ItsLdm(Ldm);

#[no_mangle]
pub extern "C" fn its_ldm_new() -> *mut ItsLdm {
    Box::into_raw(Box::new(ItsLdm(Ldm::new())))
}

#[no_mangle]
pub unsafe extern "C" fn its_ldm_free(ldm: *mut ItsLdm) {
    if !ldm.is_null() {
        drop(Box::from_raw(ldm));
    }
}

#[no_mangle]
pub unsafe extern "C" fn its_ldm_len(ldm: *const ItsLdm) -> usize {
    ldm.as_ref().map_or(0, |l| l.0.len())
}

/// Inserts or refreshes the entry for a received CAM. `*outcome` is 0 for
/// inserted, 1 for updated, 2 when the stored entry was newer.
#[no_mangle]
pub unsafe extern "C" fn its_ldm_upsert_cam(ldm: *const ItsLdm, cam: *const ItsCam, rx_time_ms: u64, outcome: *mut u32) -> ItsStatus {
    guard(|| {
        non_null!(ldm, cam, outcome);
        let Some(entry) = LdmEntry::from_cam(&CamPayload::from(&*cam), rx_time_ms) else {
            return fail(ItsStatus::InvalidArgument, "CAM position out of range");
        };
        *outcome = match (*ldm).0.upsert(entry) {
            UpsertOutcome::Inserted => 0,
            UpsertOutcome::Updated => 1,
            UpsertOutcome::Stale => 2,
        };
        ItsStatus::Ok
    })
}

/// Removes entries older than `max_age_ms` at `now_ms`.
#[no_mangle]
pub unsafe extern "C" fn its_ldm_purge(ldm: *const ItsLdm, now_ms: u64, max_age_ms: u64, removed: *mut usize) -> ItsStatus {
    guard(|| {
        non_null!(ldm, removed);
        let cfg = LdmConfig {
            max_age_ms,
            ..LdmConfig::default()
        };
        *removed = (*ldm).0.purge_expired(now_ms, &cfg);
        ItsStatus::Ok
    })
}

/// Entries within `radius_m` of a point as a JSON array, in the same
/// object format as the TCP API with ages relative to `now_ms`. Free the
/// string with `its_string_free`.
#[no_mangle]
pub unsafe extern "C" fn its_ldm_query_area_json(
    ldm: *const ItsLdm,
    lat: f64,
    lon: f64,
    radius_m: f64,
    now_ms: u64,
    out: *mut *mut c_char,
) -> ItsStatus {
    guard(|| {
        non_null!(ldm, out);
        let request = json!({"op": "area", "lat": lat, "lon": lon, "radius_m": radius_m}).to_string();
        let response = handle_request(&(*ldm).0, &request, now_ms);
        if response["ok"] != true {
            return fail(ItsStatus::InvalidArgument, format!("bad area query: {}", response["error"]));
        }
        let text = response["objects"].to_string();
        *out = CString::new(text).expect("json has no NUL").into_raw();
        ItsStatus::Ok
    })
}
