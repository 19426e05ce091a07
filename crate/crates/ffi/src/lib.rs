//! C ABI over the fedprov client.
//!
//! Every fallible function returns an [`FpStatus`]; on failure a message is
//! available from [`fp_last_error_message`] on the same thread. Strings
//! returned through `out` parameters are owned by the caller and must be
//! released with [`fp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use fedprov::cli::CliError;
use fedprov::digest::Digest;
use fedprov::federation::{self, FederationConfig};
use fedprov::identity::UserCredentials;
use fedprov::lineage::Lineage;
use fedprov::pid::Pid;
use fedprov::prov::{explain_update, ProvDocument, ProvManager, UpdateClass, Verdict};

/// Result codes. Values 0 to 16 match the `fedprov` command's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    Internal = 1,
    Usage = 2,
    Unauthorized = 3,
    UnknownPid = 4,
    LedgerRejected = 5,
    InvalidDocument = 6,
    IllegalUpdate = 7,
    Io = 8,
    NodeUnreachable = 9,
    Mismatch = 10,
    NotInvalidated = 11,
    SuccessorExists = 12,
    Integrity = 13,
    AlreadyExists = 14,
    Identity = 15,
    NotPermitted = 16,
    NullArgument = 17,
    InvalidUtf8 = 18,
}

impl FpStatus {
    fn from_code(code: i32) -> Self {
        use FpStatus::*;
        const ALL: [FpStatus; 17] = [
            Ok,
            Internal,
            Usage,
            Unauthorized,
            UnknownPid,
            LedgerRejected,
            InvalidDocument,
            IllegalUpdate,
            Io,
            NodeUnreachable,
            Mismatch,
            NotInvalidated,
            SuccessorExists,
            Integrity,
            AlreadyExists,
            Identity,
            NotPermitted,
        ];
        ALL.get(code as usize).copied().unwrap_or(Internal)
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpUpdateClass {
    Enrichment = 0,
    Decomposition = 1,
    GeneralRevision = 2,
    Illegal = 3,
}

/// A connected client acting as one identity.
pub struct FpClient {
    manager: ProvManager,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FpStatus, message: impl AsRef<str>) -> FpStatus {
    set_error(message.as_ref());
    status
}

fn fail_with(e: impl Into<CliError>) -> FpStatus {
    let e = e.into();
    fail(FpStatus::from_code(e.code), e.message)
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, FpStatus> {
    if p.is_null() {
        return Err(fail(FpStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(FpStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn pid_arg(p: *const c_char) -> Result<Pid, FpStatus> {
    let s = str_arg(p, "pid")?;
    s.parse().map_err(|_| fail(FpStatus::UnknownPid, format!("malformed pid `{s}`")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FpStatus {
    if out.is_null() {
        return fail(FpStatus::NullArgument, "`out` is null");
    }
    let c = CString::new(s.replace('\0', " ")).expect("nul bytes removed");
    *out = c.into_raw();
    FpStatus::Ok
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// The last error message on this thread, or null. Valid until the next
/// failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn fp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn fp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Hex SHA-256 of `len` bytes at `data`.
///
/// # Safety
/// `data` must point to `len` readable bytes (or be null with `len` 0).
#[no_mangle]
pub unsafe extern "C" fn fp_checksum_hex(data: *const u8, len: usize, out: *mut *mut c_char) -> FpStatus {
    let bytes = if len == 0 {
        &[][..]
    } else if data.is_null() {
        return fail(FpStatus::NullArgument, "`data` is null");
    } else {
        std::slice::from_raw_parts(data, len)
    };
    put_string(out, Digest::of(bytes).to_hex())
}

/// Classifies the revision of provenance document `old_json` into
/// `new_json`. Illegal revisions are reported through `out_class`, not as
/// an error; the reasons are left in the last error message.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fp_classify_update(
    old_json: *const c_char,
    new_json: *const c_char,
    out_class: *mut FpUpdateClass,
) -> FpStatus {
    let parse = |p, name| -> Result<ProvDocument, FpStatus> {
        let s = str_arg(p, name)?;
        serde_json::from_str(s).map_err(|e| fail(FpStatus::InvalidDocument, format!("{name}: {e}")))
    };
    let old = try_ffi!(parse(old_json, "old_json"));
    let new = try_ffi!(parse(new_json, "new_json"));
    if out_class.is_null() {
        return fail(FpStatus::NullArgument, "`out_class` is null");
    }
    let c = explain_update(&old, &new);
    *out_class = match c.class {
        UpdateClass::Enrichment => FpUpdateClass::Enrichment,
        UpdateClass::Decomposition => FpUpdateClass::Decomposition,
        UpdateClass::GeneralRevision => FpUpdateClass::GeneralRevision,
        UpdateClass::Illegal => {
            set_error(&c.violations.join("; "));
            FpUpdateClass::Illegal
        }
    };
    FpStatus::Ok
}

/// Verifies the hash chain and signatures of a ledger file. Returns
/// `Integrity` and the lowest faulty height in `out_fault_height` when the
/// chain is broken; on success `out_fault_height` is set to -1.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out_fault_height` may be null.
#[no_mangle]
pub unsafe extern "C" fn fp_verify_ledger_file(path: *const c_char, out_fault_height: *mut i64) -> FpStatus {
    let path = try_ffi!(str_arg(path, "path"));
    let report = fedprov::ledger::verify_ledger_file(Path::new(path), None);
    let height = report.first_fault.as_ref().map_or(-1, |f| f.height as i64);
    if !out_fault_height.is_null() {
        *out_fault_height = height;
    }
    match &report.first_fault {
        None => FpStatus::Ok,
        Some(f) => fail(FpStatus::Integrity, format!("height {}: {:?} {}", f.height, f.kind, f.detail)),
    }
}

/// Opens a client for `identity` (user@org) on the federation described by
/// the config file. With `embedded` the node files are opened in-process;
/// otherwise the nodes are reached over TCP.
///
/// # Safety
/// String arguments must be valid NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_client_open(
    config_path: *const c_char,
    identity: *const c_char,
    embedded: bool,
    out: *mut *mut FpClient,
) -> FpStatus {
    let config_path = try_ffi!(str_arg(config_path, "config_path"));
    let identity = try_ffi!(str_arg(identity, "identity"));
    if out.is_null() {
        return fail(FpStatus::NullArgument, "`out` is null");
    }
    let config = match FederationConfig::load(Path::new(config_path)) {
        Ok(c) => c,
        Err(e) => return fail_with(e),
    };
    let creds = match UserCredentials::load(&config.identity_dir(identity)) {
        Ok(c) => c,
        Err(e) => return fail(FpStatus::Identity, format!("{identity}: {e}")),
    };
    let handle = if embedded { federation::open_embedded(&config) } else { federation::connect(&config) };
    let handle = match handle {
        Ok(h) => h,
        Err(e) => return fail_with(e),
    };
    let manager = handle.manager(creds);
    *out = Box::into_raw(Box::new(FpClient { manager }));
    FpStatus::Ok
}

/// Closes a client. Null is ignored.
///
/// # Safety
/// `client` must come from [`fp_client_open`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn fp_client_free(client: *mut FpClient) {
    if !client.is_null() {
        drop(Box::from_raw(client));
    }
}

unsafe fn client_ref<'a>(client: *const FpClient) -> Result<&'a FpClient, FpStatus> {
    client.as_ref().ok_or_else(|| fail(FpStatus::NullArgument, "`client` is null"))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializes")
}

/// Verifies `pid` and writes the JSON report to `out`. A checksum mismatch
/// returns `Mismatch` and still writes the report.
///
/// # Safety
/// `client` must be open, `pid` a valid NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fp_client_verify(client: *const FpClient, pid: *const c_char, out: *mut *mut c_char) -> FpStatus {
    let c = try_ffi!(client_ref(client));
    let pid = try_ffi!(pid_arg(pid));
    match c.manager.verify(&pid) {
        Ok(r) => {
            let status = put_string(out, json(&r));
            if status == FpStatus::Ok && r.verdict == Verdict::Mismatch {
                return fail(FpStatus::Mismatch, r.problems.join("; "));
            }
            status
        }
        Err(e) => fail_with(e),
    }
}

/// Writes every lineage path from artifact `pid` to its sources as JSON.
///
/// # Safety
/// As for [`fp_client_verify`].
#[no_mangle]
pub unsafe extern "C" fn fp_client_trace(client: *const FpClient, pid: *const c_char, out: *mut *mut c_char) -> FpStatus {
    let c = try_ffi!(client_ref(client));
    let pid = try_ffi!(pid_arg(pid));
    match Lineage::load(&c.manager).and_then(|l| l.trace(&pid)) {
        Ok(r) => put_string(out, json(&r)),
        Err(e) => fail_with(e),
    }
}

/// Writes the PID record of `pid` as JSON.
///
/// # Safety
/// As for [`fp_client_verify`].
#[no_mangle]
pub unsafe extern "C" fn fp_client_resolve(client: *const FpClient, pid: *const c_char, out: *mut *mut c_char) -> FpStatus {
    let c = try_ffi!(client_ref(client));
    let pid = try_ffi!(pid_arg(pid));
    match c.manager.pids().resolve(&pid) {
        Ok(r) => put_string(out, json(&r)),
        Err(e) => fail_with(fedprov::prov::ProvError::from(e)),
    }
}

/// Writes the ledger value stored under `pid` as JSON.
///
/// # Safety
/// As for [`fp_client_verify`].
#[no_mangle]
pub unsafe extern "C" fn fp_client_read(client: *const FpClient, pid: *const c_char, out: *mut *mut c_char) -> FpStatus {
    let c = try_ffi!(client_ref(client));
    let pid = try_ffi!(pid_arg(pid));
    match c.manager.ledger().hlf_read(&pid) {
        Ok(Some(v)) => put_string(out, json(&v)),
        Ok(None) => fail(FpStatus::UnknownPid, format!("no ledger value for `{pid}`")),
        Err(e) => fail_with(e),
    }
}
