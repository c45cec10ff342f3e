use std::ffi::{c_char, CStr, CString};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::ptr;

use privci_ffi::*;
use tempfile::TempDir;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = privci_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { privci_string_free(p) };
    s
}

fn fixture(dir: &Path) -> (CString, CString) {
    let mut csv = String::from("sex,income,edu\n");
    for r in 0..120u32 {
        let sex = ["f", "m"][(r % 2) as usize];
        let edu = ["hs", "ba", "phd"][(r % 3) as usize];
        let income = if r % 2 == 1 && r % 7 != 0 { "high" } else { "low" };
        csv.push_str(&format!("{sex},{income},{edu}\n"));
    }
    fs::write(dir.join("data.csv"), csv).unwrap();
    fs::write(
        dir.join("config.json"),
        r#"{"roles": {"S": ["sex"], "O": ["income"], "A": ["edu"], "I": []}}"#,
    )
    .unwrap();
    (c(dir.join("data.csv").to_str().unwrap()), c(dir.join("config.json").to_str().unwrap()))
}

fn load(dir: &Path) -> *mut PrivciDataset {
    let (csv, cfg) = fixture(dir);
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { privci_dataset_load(csv.as_ptr(), cfg.as_ptr(), &mut ds) }, PrivciStatus::Ok);
    ds
}

fn run(ds: *const PrivciDataset, method: &str, seed: u64) -> (PrivciStatus, *mut PrivciSynthesis) {
    let m = c(method);
    let mut out = ptr::null_mut();
    let status = unsafe { privci_synthesize(ds, m.as_ptr(), 1.0, 1e-9, 80, seed, &mut out) };
    (status, out)
}

#[test]
fn load_synthesize_and_read_back() {
    let dir = TempDir::new().unwrap();
    let ds = load(dir.path());
    unsafe {
        assert_eq!(privci_dataset_rows(ds), 120);
        assert_eq!(privci_dataset_columns(ds), 3);
    }
    let (status, s) = run(ds, "privci", 4);
    assert_eq!(status, PrivciStatus::Ok);
    assert!(privci_last_error_message().is_null());
    unsafe {
        assert_eq!(privci_synthesis_separated(s), 1);
        let mut p = ptr::null_mut();
        assert_eq!(privci_synthesis_csv(s, &mut p), PrivciStatus::Ok);
        let csv = take(p);
        assert_eq!(csv.lines().next(), Some("sex,income,edu"));
        assert_eq!(csv.lines().count(), 81);
        assert_eq!(privci_synthesis_model_json(s, &mut p), PrivciStatus::Ok);
        assert!(take(p).contains("\"tree\""));
        assert_eq!(privci_synthesis_provenance_json(s, &mut p), PrivciStatus::Ok);
        assert!(take(p).contains("\"privci\""));

        let out = c(dir.path().join("run").to_str().unwrap());
        assert_eq!(privci_synthesis_write(s, out.as_ptr()), PrivciStatus::Ok);
        for f in ["synthetic.csv", "model.json", "provenance.json"] {
            assert!(dir.path().join("run").join(f).is_file(), "{f}");
        }
        privci_synthesis_free(s);
        privci_dataset_free(ds);
    }
}

#[test]
fn same_seed_same_output() {
    let dir = TempDir::new().unwrap();
    let ds = load(dir.path());
    let csv = |s: *mut PrivciSynthesis| unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(privci_synthesis_csv(s, &mut p), PrivciStatus::Ok);
        privci_synthesis_free(s);
        take(p)
    };
    let a = csv(run(ds, "prefair", 11).1);
    let b = csv(run(ds, "prefair", 11).1);
    assert_eq!(a, b);
    unsafe { privci_dataset_free(ds) };
}

#[test]
fn failures_report_codes_and_messages() {
    let dir = TempDir::new().unwrap();
    let ds = load(dir.path());

    let (status, out) = run(ds, "nope", 0);
    assert_eq!(status, PrivciStatus::InvalidArgument);
    assert!(out.is_null());
    assert!(last_error().contains("nope"));

    let m = c("privci");
    let mut out = ptr::null_mut();
    let status = unsafe { privci_synthesize(ds, m.as_ptr(), -1.0, 1e-9, 10, 0, &mut out) };
    assert_eq!(status, PrivciStatus::InvalidArgument);

    let (status, _) = run(ptr::null(), "privci", 0);
    assert_eq!(status, PrivciStatus::NullPointer);
    assert_eq!(unsafe { privci_synthesis_csv(ptr::null(), ptr::null_mut()) }, PrivciStatus::NullPointer);

    let missing = c(dir.path().join("missing.csv").to_str().unwrap());
    let cfg = c(dir.path().join("config.json").to_str().unwrap());
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { privci_dataset_load(missing.as_ptr(), cfg.as_ptr(), &mut loaded) }, PrivciStatus::Io);
    assert!(loaded.is_null());
    assert!(last_error().contains("missing.csv"));

    fs::write(dir.path().join("bad.json"), r#"{"roles": {"S": ["sex"], "O": ["income"], "I": ["edu"]}}"#).unwrap();
    let (csv, _) = fixture(dir.path());
    let bad = c(dir.path().join("bad.json").to_str().unwrap());
    let mut no_a = ptr::null_mut();
    assert_eq!(unsafe { privci_dataset_load(csv.as_ptr(), bad.as_ptr(), &mut no_a) }, PrivciStatus::Ok);
    let (status, _) = run(no_a, "privci", 0);
    assert_eq!(status, PrivciStatus::Config);
    let (status, s) = run(no_a, "mst", 0);
    assert_eq!(status, PrivciStatus::Ok);
    unsafe {
        assert_eq!(privci_synthesis_separated(s), -1);
        privci_synthesis_free(s);
        privci_dataset_free(no_a);
        privci_dataset_free(ds);
        privci_dataset_free(ptr::null_mut());
        privci_synthesis_free(ptr::null_mut());
        privci_string_free(ptr::null_mut());
    }
}

#[test]
fn zcdp_conversions_roundtrip() {
    let mut rho = 0.0;
    let mut eps = 0.0;
    unsafe {
        assert_eq!(privci_zcdp_from_eps_delta(1.0, 1e-9, &mut rho), PrivciStatus::Ok);
        assert_eq!(privci_eps_from_zcdp(rho, 1e-9, &mut eps), PrivciStatus::Ok);
        assert!((eps - 1.0).abs() < 1e-12);
        assert_eq!(privci_zcdp_from_eps_delta(1.0, 2.0, &mut rho), PrivciStatus::InvalidArgument);
        assert_eq!(privci_eps_from_zcdp(1.0, 1e-9, ptr::null_mut()), PrivciStatus::NullPointer);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/privci.h");
    let text = fs::read_to_string(&header).unwrap();
    for name in ["privci_dataset_load", "privci_synthesize", "privci_last_error_message", "PRIVCI_STATUS_PANIC"] {
        assert!(text.contains(name), "{name}");
    }
    let dir = TempDir::new().unwrap();
    let src = dir.path().join("check.c");
    fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ PrivciDataset *d = 0; return (int)privci_dataset_rows(d); }}\n",
            header.display()
        ),
    )
    .unwrap();
    let status = match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("no C compiler available ({e}); checked header text only");
            return;
        }
    };
    assert!(status.success());
}
