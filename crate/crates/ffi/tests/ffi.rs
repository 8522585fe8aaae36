use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use relate_ffi::*;

fn core_examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/examples")
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(relate_last_error()) }.to_str().unwrap().to_string()
}

fn open(config: &Path) -> *mut RelateSession {
    let path = c(config.to_str().unwrap());
    let mut s = ptr::null_mut();
    let status = unsafe { relate_session_open(path.as_ptr(), &mut s) };
    assert_eq!(status, RelateStatus::Ok, "{}", last_error());
    s
}

fn encode(s: *const RelateSession, table: &str) -> Vec<f64> {
    let t = c(table);
    let mut needed = 0;
    let status = unsafe { relate_session_encode(s, t.as_ptr(), ptr::null_mut(), 0, &mut needed) };
    assert_eq!(status, RelateStatus::BufferTooSmall);
    let mut buf = vec![0.0; needed];
    let mut written = 0;
    let status = unsafe { relate_session_encode(s, t.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut written) };
    assert_eq!(status, RelateStatus::Ok, "{}", last_error());
    assert_eq!(written, needed);
    buf
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(relate_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn session_encodes_matching_dimensions() {
    let s = open(&core_examples().join("configs/encode.json"));
    let (mut d, mut rows) = (0, 0);
    let users = c("users");
    unsafe {
        assert_eq!(relate_session_dim(s, &mut d), RelateStatus::Ok);
        assert_eq!(relate_session_rows(s, users.as_ptr(), &mut rows), RelateStatus::Ok);
    }
    assert_eq!(d, 32);
    let z = encode(s, "users");
    assert_eq!(z.len(), rows * d);
    assert!(z.iter().all(|v| v.is_finite()));
    assert_eq!(z, encode(s, "users"));
    unsafe { relate_session_free(s) };
}

#[test]
fn unknown_table_sets_last_error() {
    let s = open(&core_examples().join("configs/encode.json"));
    let t = c("nope");
    let mut rows = 0;
    let status = unsafe { relate_session_rows(s, t.as_ptr(), &mut rows) };
    assert_eq!(status, RelateStatus::Schema);
    assert!(last_error().contains("nope"));
    unsafe { relate_session_free(s) };
}

#[test]
fn params_round_trip_through_file() {
    let s = open(&core_examples().join("configs/encode.json"));
    let mut p = ptr::null_mut();
    let dir = tempfile::tempdir().unwrap();
    let file = c(dir.path().join("m.bin").to_str().unwrap());
    let (mut before, mut after) = (0, 0);
    unsafe {
        assert_eq!(relate_session_params(s, &mut p), RelateStatus::Ok);
        assert_eq!(relate_params_count(p, &mut before), RelateStatus::Ok);
        assert_eq!(relate_params_save(p, file.as_ptr()), RelateStatus::Ok);
        relate_params_free(p);
        let mut q = ptr::null_mut();
        assert_eq!(relate_params_load(file.as_ptr(), &mut q), RelateStatus::Ok);
        assert_eq!(relate_params_count(q, &mut after), RelateStatus::Ok);
        relate_params_free(q);
        relate_session_free(s);
    }
    assert!(before > 0);
    assert_eq!(before, after);
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let mut s = ptr::null_mut();
    let missing = c("/does/not/exist.json");
    unsafe {
        assert_eq!(relate_session_open(ptr::null(), &mut s), RelateStatus::NullPointer);
        assert_eq!(relate_session_open(missing.as_ptr(), &mut s), RelateStatus::Io);
        assert!(s.is_null());
        let mut d = 0;
        assert_eq!(relate_session_dim(ptr::null(), &mut d), RelateStatus::NullPointer);
        relate_session_free(ptr::null_mut());
        relate_params_free(ptr::null_mut());
    }
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"encoder": "relate"}"#).unwrap();
    let cfg = c(dir.path().join("c.json").to_str().unwrap());
    assert_eq!(unsafe { relate_session_open(cfg.as_ptr(), &mut s) }, RelateStatus::Config);
    assert!(last_error().contains("seed"));
}

#[test]
fn metrics_match_hand_values() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0.0, 0.0, 1.0, 1.0];
    let (mut auc, mut mae) = (0.0, 0.0);
    unsafe {
        assert_eq!(relate_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc), RelateStatus::Ok);
        assert_eq!(relate_mae(scores.as_ptr(), labels.as_ptr(), 4, &mut mae), RelateStatus::Ok);
        assert_eq!(relate_auc(scores.as_ptr(), labels.as_ptr(), 0, &mut auc), RelateStatus::Numerical);
    }
    assert_eq!(auc, 0.75);
    assert!((mae - (0.1 + 0.4 + 0.65 + 0.2) / 4.0).abs() < 1e-15);
}

#[test]
fn feature_buffers_report_length() {
    let mut buf = [0.0; 64];
    let mut n = 0;
    unsafe {
        assert_eq!(relate_fone(2.5, buf.as_mut_ptr(), 4, &mut n), RelateStatus::BufferTooSmall);
        assert_eq!(n, 14);
        assert_eq!(relate_fone(2.5, buf.as_mut_ptr(), buf.len(), &mut n), RelateStatus::Ok);
        assert_eq!(relate_fone(f64::NAN, buf.as_mut_ptr(), buf.len(), &mut n), RelateStatus::InvalidArgument);
        assert_eq!(relate_time_features(1_700_000_000, buf.as_mut_ptr(), buf.len(), &mut n), RelateStatus::Ok);
    }
    assert_eq!(n, 28);
    assert!(buf[..28].iter().all(|v| v.is_finite()));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/relate.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(dir.join("include/relate.h"))
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile as C"),
        Err(e) => eprintln!("cc unavailable, header compile skipped: {e}"),
    }
}
