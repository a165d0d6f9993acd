//! C ABI over `navsim-core`.
//!
//! Every function returns a [`NavsimStatus`]; results come back through out
//! pointers. On failure a message is kept per thread and can be read with
//! [`navsim_last_error`]. Handles are opaque and must be released with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use navsim::citygraph::{geodesic_distance, initial_bearing, GeoPoint};
use navsim::dataset::{Dataset, EpisodeSpec};
use navsim::engine::{AgentBundle, Episode, EpisodeConfig, Outcome, Registry};
use navsim::eval::{spl, EpisodeResult};
use navsim::NavError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Io = 4,
    Finished = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavsimOutcome {
    Running = 0,
    Success = 1,
    WrongStop = 2,
    Budget = 3,
}

impl From<Outcome> for NavsimOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Running => NavsimOutcome::Running,
            Outcome::Success => NavsimOutcome::Success,
            Outcome::WrongStop => NavsimOutcome::WrongStop,
            Outcome::Budget => NavsimOutcome::Budget,
        }
    }
}

/// Snapshot of a running episode.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavsimEpisodeState {
    pub node: u64,
    pub heading_deg: f64,
    pub eta: f64,
    pub steps: u32,
    pub traveled_m: f64,
    pub budget_m: f64,
    pub distance_to_goal_m: f64,
    pub outcome: NavsimOutcome,
}

/// A loaded dataset directory.
pub struct NavsimDataset {
    inner: Dataset,
}

/// One episode together with the agent driving it.
pub struct NavsimEpisode {
    episode: Episode,
    bundle: AgentBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &NavError) -> NavsimStatus {
    match err {
        NavError::Io { .. } => NavsimStatus::Io,
        NavError::UnknownNode(_) | NavError::UnknownName { .. } => NavsimStatus::NotFound,
        NavError::EpisodeFinished => NavsimStatus::Finished,
        _ => NavsimStatus::InvalidArgument,
    }
}

struct Fail(NavsimStatus, String);

impl From<NavError> for Fail {
    fn from(e: NavError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(NavsimStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic for `navsim_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NavsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NavsimStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NavsimStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(NavsimStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn navsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Great-circle distance in meters.
///
/// # Safety
/// `out_m` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn navsim_geodesic_distance(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out_m: *mut f64) -> NavsimStatus {
    guard(|| {
        let a = GeoPoint::new(lat1, lon1)?;
        let b = GeoPoint::new(lat2, lon2)?;
        *out(out_m, "out_m")? = geodesic_distance(a, b);
        Ok(())
    })
}

/// Initial bearing from the first point to the second, degrees in `[0, 360)`.
///
/// # Safety
/// `out_deg` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn navsim_initial_bearing(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out_deg: *mut f64) -> NavsimStatus {
    guard(|| {
        let a = GeoPoint::new(lat1, lon1)?;
        let b = GeoPoint::new(lat2, lon2)?;
        *out(out_deg, "out_deg")? = initial_bearing(a, b)?;
        Ok(())
    })
}

/// SPL in percent over `n` episodes given as parallel arrays.
///
/// # Safety
/// The three arrays must each hold `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn navsim_spl(
    success: *const bool,
    shortest_m: *const f64,
    traveled_m: *const f64,
    n: usize,
    out_spl: *mut f64,
) -> NavsimStatus {
    guard(|| {
        if n > 0 && (success.is_null() || shortest_m.is_null() || traveled_m.is_null()) {
            return Err(null("input array"));
        }
        let results: Vec<EpisodeResult> = (0..n)
            .map(|i| EpisodeResult {
                success: *success.add(i),
                shortest_length: *shortest_m.add(i),
                traveled: *traveled_m.add(i),
                final_error: 0.0,
                steps: 0,
            })
            .collect();
        *out(out_spl, "out_spl")? = spl(&results)?;
        Ok(())
    })
}

/// Loads a dataset directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_dataset` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn navsim_dataset_load(path: *const c_char, out_dataset: *mut *mut NavsimDataset) -> NavsimStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let inner = Dataset::load(str_arg(path, "path")?)?;
        *slot = Box::into_raw(Box::new(NavsimDataset { inner }));
        Ok(())
    })
}

/// Number of routes in the dataset.
///
/// # Safety
/// `dataset` must come from `navsim_dataset_load`.
#[no_mangle]
pub unsafe extern "C" fn navsim_dataset_route_count(dataset: *const NavsimDataset, out_count: *mut usize) -> NavsimStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        *out(out_count, "out_count")? = ds.inner.episodes.len();
        Ok(())
    })
}

/// Copies the id of route `index` (sorted order) into `buf` with a trailing
/// NUL. `out_len` receives the id length without the NUL, also when the
/// buffer is too small.
///
/// # Safety
/// `buf` must be writable for `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn navsim_dataset_route_id(
    dataset: *const NavsimDataset,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> NavsimStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let id = ds
            .inner
            .episodes
            .keys()
            .nth(index)
            .ok_or_else(|| Fail(NavsimStatus::NotFound, format!("route index {index} out of range")))?;
        copy_out(id.as_bytes(), buf, buf_len, out_len)
    })
}

unsafe fn copy_out(bytes: &[u8], buf: *mut c_char, buf_len: usize, out_len: *mut usize) -> Result<(), Fail> {
    *out(out_len, "out_len")? = bytes.len();
    if buf.is_null() || buf_len < bytes.len() + 1 {
        return Err(Fail(NavsimStatus::BufferTooSmall, format!("need {} bytes", bytes.len() + 1)));
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

/// Releases a dataset. Episodes created from it stay usable.
///
/// # Safety
/// `dataset` must come from `navsim_dataset_load` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn navsim_dataset_free(dataset: *mut NavsimDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Starts an episode on `route_id` driven by a registered policy and
/// matcher ("oracle" or "random", and "oracle" or "cosine").
///
/// # Safety
/// String arguments must be NUL-terminated; `out_episode` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn navsim_episode_new(
    dataset: *const NavsimDataset,
    route_id: *const c_char,
    policy: *const c_char,
    matcher: *const c_char,
    seed: u64,
    out_episode: *mut *mut NavsimEpisode,
) -> NavsimStatus {
    guard(|| {
        let ds = &dataset.as_ref().ok_or_else(|| null("dataset"))?.inner;
        let slot = out(out_episode, "out_episode")?;
        let route_id = str_arg(route_id, "route_id")?;
        let spec: &EpisodeSpec = ds
            .episodes
            .get(route_id)
            .ok_or_else(|| Fail(NavsimStatus::NotFound, format!("unknown route '{route_id}'")))?;
        let mut bundle = Registry::default().bundle(str_arg(policy, "policy")?, str_arg(matcher, "matcher")?, seed)?;
        let mut episode = Episode::reset(Arc::clone(&ds.world), route_id, spec.clone(), EpisodeConfig::default())?;
        episode.begin(&mut bundle, seed);
        *slot = Box::into_raw(Box::new(NavsimEpisode { episode, bundle }));
        Ok(())
    })
}

/// Advances the episode by one step; `NAVSIM_STATUS_FINISHED` once it has ended.
///
/// # Safety
/// `episode` must come from `navsim_episode_new`.
#[no_mangle]
pub unsafe extern "C" fn navsim_episode_step(episode: *mut NavsimEpisode) -> NavsimStatus {
    guard(|| {
        let ep = episode.as_mut().ok_or_else(|| null("episode"))?;
        ep.episode.step(&mut ep.bundle)?;
        Ok(())
    })
}

/// Steps until the episode ends.
///
/// # Safety
/// `episode` must come from `navsim_episode_new`.
#[no_mangle]
pub unsafe extern "C" fn navsim_episode_run(episode: *mut NavsimEpisode) -> NavsimStatus {
    guard(|| {
        let ep = episode.as_mut().ok_or_else(|| null("episode"))?;
        while !ep.episode.is_finished() {
            ep.episode.step(&mut ep.bundle)?;
        }
        Ok(())
    })
}

/// # Safety
/// `episode` must come from `navsim_episode_new`; `out_state` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn navsim_episode_state(episode: *const NavsimEpisode, out_state: *mut NavsimEpisodeState) -> NavsimStatus {
    guard(|| {
        let ep = &episode.as_ref().ok_or_else(|| null("episode"))?.episode;
        *out(out_state, "out_state")? = NavsimEpisodeState {
            node: ep.node().0,
            heading_deg: ep.heading(),
            eta: ep.attention().eta,
            steps: ep.steps() as u32,
            traveled_m: ep.traveled(),
            budget_m: ep.budget(),
            distance_to_goal_m: ep.distance_to_goal(),
            outcome: ep.outcome().into(),
        };
        Ok(())
    })
}

/// Copies the JSON-lines trajectory log into `buf`, NUL-terminated.
/// Call with a NULL buffer to learn the length first.
///
/// # Safety
/// `buf` must be writable for `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn navsim_episode_log(
    episode: *const NavsimEpisode,
    buf: *mut c_char,
    buf_len: usize,
    out_len: *mut usize,
) -> NavsimStatus {
    guard(|| {
        let ep = &episode.as_ref().ok_or_else(|| null("episode"))?.episode;
        copy_out(ep.log().to_jsonl().as_bytes(), buf, buf_len, out_len)
    })
}

/// # Safety
/// `episode` must come from `navsim_episode_new` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn navsim_episode_free(episode: *mut NavsimEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}
