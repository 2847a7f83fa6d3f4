//! C interface. Every call returns an [`EaStatus`]; on failure the message is kept per
//! thread and read with `ea_last_error`. Strings handed out must be released with
//! `ea_string_free`, handles with their own `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use evidence_atlas::abbrev::detect_in_text;
use evidence_atlas::corpus::PicoLabel;
use evidence_atlas::evidence_map::Query;
use evidence_atlas::normalize::{
    build_dictionary, load_synonyms, match_concepts, Ontology, SynonymDictionary,
};
use evidence_atlas::service::api::SearchRequest;
use evidence_atlas::service::pipeline::load_dictionary;
use evidence_atlas::service::{run_pipeline, Api, Config, IngestOptions, Pipeline, Snapshot, Store};
use evidence_atlas::text::NormalizeConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    NotFound = 6,
    Internal = 7,
}

/// Synonym dictionary for concept matching.
pub struct EaDictionary {
    dict: SynonymDictionary,
}

/// Read-only API over an ingested store.
pub struct EaService {
    api: Api,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EaStatus, String);

fn fail<E: std::fmt::Display>(status: EaStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            EaStatus::Internal
        }
    }
}

unsafe fn arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(EaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn opt_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        arg(p, name).map(Some)
    }
}

unsafe fn write_out(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(EaStatus::NullPointer, "out is null".into()));
    }
    let c = CString::new(s).map_err(fail(EaStatus::Internal))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn write_json<T: serde::Serialize>(out: *mut *mut c_char, v: &T) -> Result<(), Failure> {
    write_out(out, serde_json::to_string(v).map_err(fail(EaStatus::Internal))?)
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(EaStatus::NullPointer, format!("{name} is null")))
}

fn api_failure(e: evidence_atlas::service::ApiError) -> Failure {
    let status = if e.code == "not_found" {
        EaStatus::NotFound
    } else {
        EaStatus::InvalidArgument
    };
    Failure(status, serde_json::to_string(&e).unwrap_or(e.message))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ea_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL when there is none.
/// Free with `ea_string_free`.
#[no_mangle]
pub extern "C" fn ea_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ea_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Detect abbreviation definitions in `text`; writes a JSON array to `out`.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ea_abbreviations(text: *const c_char, out: *mut *mut c_char) -> EaStatus {
    guard(|| {
        let text = arg(text, "text")?;
        write_json(out, &detect_in_text(text))
    })
}

/// Load an ontology TSV and an optional synonym TSV (`synonyms` may be NULL).
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ea_dictionary_load(
    ontology: *const c_char,
    synonyms: *const c_char,
    out: *mut *mut EaDictionary,
) -> EaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(EaStatus::NullPointer, "out is null".into()));
        }
        let ont = Ontology::load(Path::new(arg(ontology, "ontology")?)).map_err(fail(EaStatus::Parse))?;
        let rows = match opt_arg(synonyms, "synonyms")? {
            Some(p) => load_synonyms(Path::new(p)).map_err(fail(EaStatus::Parse))?,
            None => Vec::new(),
        };
        let (dict, _) = build_dictionary(&ont, &rows, NormalizeConfig::default());
        *out = Box::into_raw(Box::new(EaDictionary { dict }));
        Ok(())
    })
}

/// Leftmost-longest concept matches in `text` as a JSON array.
///
/// # Safety
/// `dict` must be a live handle; `text` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_dictionary_match(
    dict: *const EaDictionary,
    text: *const c_char,
    out: *mut *mut c_char,
) -> EaStatus {
    guard(|| {
        let d = handle(dict, "dict")?;
        write_json(out, &match_concepts(arg(text, "text")?, &d.dict))
    })
}

/// # Safety
/// `dict` must come from `ea_dictionary_load` and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ea_dictionary_free(dict: *mut EaDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Ingest a feed file with the given config; writes the ingest report as JSON.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ea_ingest(config: *const c_char, feed: *const c_char, out: *mut *mut c_char) -> EaStatus {
    guard(|| {
        let cfg = Config::load(Path::new(arg(config, "config")?)).map_err(fail(EaStatus::Parse))?;
        let feed = arg(feed, "feed")?;
        let pipeline = Pipeline::from_config(&cfg).map_err(fail(EaStatus::Io))?;
        let mut store = Store::open(&cfg.store_dir()).map_err(fail(EaStatus::Io))?;
        let report = run_pipeline(Path::new(feed), &pipeline, &mut store, &IngestOptions::default())
            .map_err(fail(EaStatus::Io))?;
        write_json(out, &report)
    })
}

/// Open the store named by a config file for querying.
///
/// # Safety
/// `config` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ea_service_open(config: *const c_char, out: *mut *mut EaService) -> EaStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(EaStatus::NullPointer, "out is null".into()));
        }
        let cfg = Config::load(Path::new(arg(config, "config")?)).map_err(fail(EaStatus::Parse))?;
        let ontology = Ontology::load(&cfg.resolve(&cfg.paths.ontology)).map_err(fail(EaStatus::Parse))?;
        let dict = load_dictionary(&cfg, &ontology).map_err(fail(EaStatus::Parse))?;
        let store = Store::open(&cfg.store_dir()).map_err(fail(EaStatus::Io))?;
        let api = Api::new(Snapshot::new(&store, ontology, &dict, cfg.api));
        *out = Box::into_raw(Box::new(EaService { api }));
        Ok(())
    })
}

/// Concept suggestions for a prefix; `role` may be NULL.
///
/// # Safety
/// `svc` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_service_autocomplete(
    svc: *const EaService,
    prefix: *const c_char,
    role: *const c_char,
    out: *mut *mut c_char,
) -> EaStatus {
    guard(|| {
        let s = handle(svc, "svc")?;
        let role = match opt_arg(role, "role")? {
            Some(r) => Some(r.parse::<PicoLabel>().map_err(fail(EaStatus::InvalidArgument))?),
            None => None,
        };
        let res = s.api.autocomplete(arg(prefix, "prefix")?, role).map_err(api_failure)?;
        write_json(out, &res)
    })
}

/// Search with a JSON request body; writes the JSON response.
///
/// # Safety
/// `svc` must be a live handle; `request` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_service_search(
    svc: *const EaService,
    request: *const c_char,
    out: *mut *mut c_char,
) -> EaStatus {
    guard(|| {
        let s = handle(svc, "svc")?;
        let req: SearchRequest = serde_json::from_str(arg(request, "request")?).map_err(fail(EaStatus::Parse))?;
        let res = s.api.search(&req).map_err(api_failure)?;
        write_json(out, &res)
    })
}

/// Evidence map for a JSON query.
///
/// # Safety
/// `svc` must be a live handle; `query` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_service_map(svc: *const EaService, query: *const c_char, out: *mut *mut c_char) -> EaStatus {
    guard(|| {
        let s = handle(svc, "svc")?;
        let q: Query = serde_json::from_str(arg(query, "query")?).map_err(fail(EaStatus::Parse))?;
        let bytes = s.api.map_json(&q).map_err(api_failure)?;
        write_out(out, String::from_utf8_lossy(&bytes).into_owned())
    })
}

/// Annotated document view.
///
/// # Safety
/// `svc` must be a live handle; `doc_id` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ea_service_document(
    svc: *const EaService,
    doc_id: *const c_char,
    out: *mut *mut c_char,
) -> EaStatus {
    guard(|| {
        let s = handle(svc, "svc")?;
        let doc = s.api.document(arg(doc_id, "doc_id")?).map_err(api_failure)?;
        write_json(out, &doc)
    })
}

/// # Safety
/// `svc` must come from `ea_service_open` and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ea_service_free(svc: *mut EaService) {
    if !svc.is_null() {
        drop(Box::from_raw(svc));
    }
}
