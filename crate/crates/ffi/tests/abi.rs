use std::ffi::{CStr, CString};
use std::ptr;

use navsim::engine::{replay, Registry, TrajectoryLog};
use navsim::synthworld::{build_dataset, generate_world, WorldSpec};
use navsim_ffi::*;

fn last_error() -> String {
    let p = navsim_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fixture() -> (tempfile::TempDir, navsim::dataset::Dataset) {
    let tmp = tempfile::tempdir().unwrap();
    let sw = generate_world(&WorldSpec::default()).unwrap();
    let ds = build_dataset(&sw, "grid", [2, 2, 2, 2], 8).unwrap();
    ds.save(tmp.path()).unwrap();
    (tmp, ds)
}

unsafe fn load(dir: &std::path::Path) -> *mut NavsimDataset {
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(navsim_dataset_load(path.as_ptr(), &mut ds), NavsimStatus::Ok);
    ds
}

#[test]
fn geometry_and_metrics() {
    unsafe {
        let mut d = 0.0;
        assert_eq!(navsim_geodesic_distance(0.0, 0.0, 1.0, 0.0, &mut d), NavsimStatus::Ok);
        assert!((d - 6_371_000.0 * std::f64::consts::PI / 180.0).abs() < 1e-6);
        let mut b = 0.0;
        assert_eq!(navsim_initial_bearing(0.0, 0.0, 0.0, 1.0, &mut b), NavsimStatus::Ok);
        assert!((b - 90.0).abs() < 1e-9);
        assert!(navsim_last_error().is_null());

        assert_eq!(navsim_initial_bearing(1.0, 1.0, 1.0, 1.0, &mut b), NavsimStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        assert_eq!(navsim_geodesic_distance(0.0, 200.0, 0.0, 0.0, &mut d), NavsimStatus::InvalidArgument);
        assert_eq!(navsim_geodesic_distance(0.0, 0.0, 0.0, 0.0, ptr::null_mut()), NavsimStatus::NullPointer);
        assert!(last_error().contains("out_m"));

        let (s, l, p) = ([true, false, true], [100.0, 100.0, 100.0], [100.0, 50.0, 200.0]);
        let mut v = 0.0;
        assert_eq!(navsim_spl(s.as_ptr(), l.as_ptr(), p.as_ptr(), 3, &mut v), NavsimStatus::Ok);
        assert!((v - 50.0).abs() < 1e-12);
        assert_eq!(navsim_spl(ptr::null(), ptr::null(), ptr::null(), 0, &mut v), NavsimStatus::InvalidArgument);
        assert_eq!(navsim_spl(ptr::null(), l.as_ptr(), p.as_ptr(), 3, &mut v), NavsimStatus::NullPointer);
    }
}

#[test]
fn dataset_handles() {
    let (tmp, ds) = fixture();
    unsafe {
        let h = load(tmp.path());
        let mut n = 0;
        assert_eq!(navsim_dataset_route_count(h, &mut n), NavsimStatus::Ok);
        assert_eq!(n, ds.episodes.len());

        let mut buf = [0 as std::ffi::c_char; 4];
        let mut len = 0;
        assert_eq!(navsim_dataset_route_id(h, 0, buf.as_mut_ptr(), buf.len(), &mut len), NavsimStatus::BufferTooSmall);
        let first = ds.episodes.keys().next().unwrap();
        assert_eq!(len, first.len());
        let mut buf = vec![0 as std::ffi::c_char; len + 1];
        assert_eq!(navsim_dataset_route_id(h, 0, buf.as_mut_ptr(), buf.len(), &mut len), NavsimStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), first);
        assert_eq!(navsim_dataset_route_id(h, n, buf.as_mut_ptr(), buf.len(), &mut len), NavsimStatus::NotFound);
        navsim_dataset_free(h);
        navsim_dataset_free(ptr::null_mut());

        let missing = CString::new(tmp.path().join("nope").to_str().unwrap()).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(navsim_dataset_load(missing.as_ptr(), &mut out), NavsimStatus::Io);
        assert!(out.is_null());
        assert_eq!(navsim_dataset_load(ptr::null(), &mut out), NavsimStatus::NullPointer);
    }
}

#[test]
fn episodes_run_and_log() {
    let (tmp, ds) = fixture();
    unsafe {
        let h = load(tmp.path());
        let (rid, spec) = ds.episodes.iter().last().unwrap();
        let rid_c = CString::new(rid.as_str()).unwrap();
        let oracle = CString::new("oracle").unwrap();
        let bogus = CString::new("telepathy").unwrap();

        let mut ep = ptr::null_mut();
        assert_eq!(navsim_episode_new(h, rid_c.as_ptr(), bogus.as_ptr(), oracle.as_ptr(), 0, &mut ep), NavsimStatus::NotFound);
        assert!(last_error().contains("telepathy"));
        let nope = CString::new("d9-9999").unwrap();
        assert_eq!(navsim_episode_new(h, nope.as_ptr(), oracle.as_ptr(), oracle.as_ptr(), 0, &mut ep), NavsimStatus::NotFound);

        assert_eq!(navsim_episode_new(h, rid_c.as_ptr(), oracle.as_ptr(), oracle.as_ptr(), 3, &mut ep), NavsimStatus::Ok);
        // the episode owns what it needs from the dataset
        navsim_dataset_free(h);

        let mut st = std::mem::zeroed::<NavsimEpisodeState>();
        assert_eq!(navsim_episode_state(ep, &mut st), NavsimStatus::Ok);
        assert_eq!((st.node, st.steps, st.eta, st.outcome), (spec.route.source().0, 0, 1.0, NavsimOutcome::Running));
        assert_eq!(navsim_episode_step(ep), NavsimStatus::Ok);
        assert_eq!(navsim_episode_run(ep), NavsimStatus::Ok);
        assert_eq!(navsim_episode_state(ep, &mut st), NavsimStatus::Ok);
        assert_eq!(st.outcome, NavsimOutcome::Success);
        assert_eq!(st.node, spec.route.destination().0);
        assert_eq!(st.traveled_m, spec.route.total_length());
        assert_eq!(navsim_episode_step(ep), NavsimStatus::Finished);

        let mut len = 0;
        assert_eq!(navsim_episode_log(ep, ptr::null_mut(), 0, &mut len), NavsimStatus::BufferTooSmall);
        let mut buf = vec![0 as std::ffi::c_char; len + 1];
        assert_eq!(navsim_episode_log(ep, buf.as_mut_ptr(), buf.len(), &mut len), NavsimStatus::Ok);
        let text = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        let log = TrajectoryLog::from_jsonl(text).unwrap();
        replay(std::sync::Arc::clone(&ds.world), spec, &log, &Registry::default()).unwrap();
        navsim_episode_free(ep);
    }
}
