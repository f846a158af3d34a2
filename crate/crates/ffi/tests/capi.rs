use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use hetsim_ffi::*;

const SCENARIO: &str = "[run]\nname = ffi\n[memory]\nrandom = 0x0 0x4800\n[tpe]\nx = 0x0\nw = 0x800\nz = 0x4000\nm = 16\nn = 16\nk = 16\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(hetsim_last_error()) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> (HetsimStatus, *mut HetsimScenario) {
    let t = CString::new(text).unwrap();
    let mut sc = ptr::null_mut();
    let s = unsafe { hetsim_scenario_parse(t.as_ptr(), ptr::null(), &mut sc) };
    (s, sc)
}

fn report(o: *const HetsimOutcome, format: u32) -> String {
    let mut needed = 0usize;
    let s = unsafe { hetsim_outcome_report(o, format, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(s, HetsimStatus::BufferTooSmall);
    let mut buf = vec![0u8; needed];
    let s = unsafe { hetsim_outcome_report(o, format, buf.as_mut_ptr().cast(), buf.len(), &mut needed) };
    assert_eq!(s, HetsimStatus::Ok);
    CStr::from_bytes_with_nul(&buf).unwrap().to_string_lossy().into_owned()
}

#[test]
fn parse_run_report_free() {
    let (s, sc) = parse(SCENARIO);
    assert_eq!(s, HetsimStatus::Ok, "{}", last_error());
    let mut o = ptr::null_mut();
    assert_eq!(unsafe { hetsim_scenario_run(sc, &mut o) }, HetsimStatus::Ok);
    assert_eq!(last_error(), "");
    let cycles = unsafe { hetsim_outcome_cycles(o) };
    assert!(cycles > 0);
    let lines = report(o, HETSIM_FORMAT_LINES);
    assert!(lines.starts_with("run name=ffi "), "{lines}");
    assert!(lines.contains(&format!("cycles={cycles}")));
    assert!(report(o, HETSIM_FORMAT_TABLE).contains("[engine]"));

    let (mut data, mut len) = (ptr::null(), 0usize);
    assert_eq!(unsafe { hetsim_outcome_memory(o, 0, &mut data, &mut len) }, HetsimStatus::Ok);
    assert!(len >= 0x4800);
    let l1 = unsafe { std::slice::from_raw_parts(data, len) };
    assert!(l1[0x4000..0x4200].iter().any(|&b| b != 0));

    // the same scenario through the library API gives the same report
    let direct = hetsim::harness::run_scenario(&hetsim::harness::Scenario::parse(SCENARIO, None).unwrap()).unwrap();
    assert_eq!(direct.report.render_lines(), lines);
    unsafe {
        hetsim_outcome_free(o);
        hetsim_scenario_free(sc);
    }
}

#[test]
fn error_codes() {
    let (s, sc) = parse("[bogus]\n");
    assert_eq!(s, HetsimStatus::Parse);
    assert!(sc.is_null());
    assert!(last_error().contains("line 1"), "{}", last_error());

    let (s, _) = parse("[cluster]\ncores = 0\n");
    assert_eq!(s, HetsimStatus::Validation, "{}", last_error());

    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { hetsim_scenario_parse(ptr::null(), ptr::null(), &mut sc) }, HetsimStatus::NullArgument);
    let bad = [0xFFu8, 0xFE, 0];
    assert_eq!(unsafe { hetsim_scenario_parse(bad.as_ptr().cast(), ptr::null(), &mut sc) }, HetsimStatus::InvalidUtf8);
    let missing = CString::new("/nonexistent/x.scn").unwrap();
    assert_eq!(unsafe { hetsim_scenario_load(missing.as_ptr(), &mut sc) }, HetsimStatus::Io);
    let mut o = ptr::null_mut();
    assert_eq!(unsafe { hetsim_scenario_run(ptr::null(), &mut o) }, HetsimStatus::NullArgument);
    assert_eq!(unsafe { hetsim_outcome_cycles(ptr::null()) }, 0);
    unsafe {
        hetsim_scenario_free(ptr::null_mut());
        hetsim_outcome_free(ptr::null_mut());
    }
}

#[test]
fn timeout_still_returns_outcome() {
    let (_, sc) = parse("[run]\nmax_cycles = 50\n[core 0]\nloop 1000 {\nnop\n}\n");
    let mut o = ptr::null_mut();
    assert_eq!(unsafe { hetsim_scenario_run(sc, &mut o) }, HetsimStatus::Timeout);
    assert!(!o.is_null());
    assert_eq!(unsafe { hetsim_outcome_cycles(o) }, 50);
    let (mut data, mut len) = (ptr::null(), 0usize);
    assert_eq!(unsafe { hetsim_outcome_memory(o, 7, &mut data, &mut len) }, HetsimStatus::Validation);
    let mut n = 0;
    assert_eq!(unsafe { hetsim_outcome_report(o, 9, ptr::null_mut(), 0, &mut n) }, HetsimStatus::Validation);
    unsafe {
        hetsim_outcome_free(o);
        hetsim_scenario_free(sc);
    }
}

#[test]
fn load_resolves_relative_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blob.bin"), [7u8; 64]).unwrap();
    let p = dir.path().join("s.scn");
    std::fs::write(&p, "[memory]\nfile = 0x100 blob.bin\n").unwrap();
    let c = CString::new(p.to_str().unwrap()).unwrap();
    let mut sc = ptr::null_mut();
    assert_eq!(unsafe { hetsim_scenario_load(c.as_ptr(), &mut sc) }, HetsimStatus::Ok, "{}", last_error());
    let mut o = ptr::null_mut();
    assert_eq!(unsafe { hetsim_scenario_run(sc, &mut o) }, HetsimStatus::Ok);
    let (mut data, mut len) = (ptr::null(), 0usize);
    unsafe { hetsim_outcome_memory(o, 0, &mut data, &mut len) };
    let l1 = unsafe { std::slice::from_raw_parts(data, len) };
    assert_eq!(&l1[0x100..0x140], &[7u8; 64]);
    unsafe {
        hetsim_outcome_free(o);
        hetsim_scenario_free(sc);
    }
}

#[test]
fn bench_by_name() {
    let (mut p, mut t) = (0u32, 0u32);
    let hci = CString::new("hci").unwrap();
    assert_eq!(unsafe { hetsim_bench(hci.as_ptr(), 1, &mut p, &mut t) }, HetsimStatus::Ok, "{}", last_error());
    assert!(t > 0);
    assert_eq!(p, t);
    let nope = CString::new("warp").unwrap();
    assert_eq!(unsafe { hetsim_bench(nope.as_ptr(), 1, &mut p, &mut t) }, HetsimStatus::Parse);
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(hetsim_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    for sym in ["hetsim_scenario_parse", "hetsim_outcome_report", "HETSIM_STATUS_TIMEOUT", "typedef struct HetsimScenario HetsimScenario"] {
        assert!(HEADER.contains(sym), "{sym}");
    }
    let checked_in = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hetsim.h")).unwrap();
    assert_eq!(checked_in, HEADER);
}

fn staticlib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libhetsim_ffi.a");
    lib.exists().then_some(lib)
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "hetsim.h"

int main(void) {
    HetsimScenario *sc = NULL;
    HetsimOutcome *o = NULL;
    if (hetsim_scenario_parse("[bogus]\n", NULL, &sc) != HETSIM_STATUS_PARSE || sc) return 10;
    if (strlen(hetsim_last_error()) == 0) return 11;
    if (hetsim_scenario_parse("[run]\nname = c\n[memory]\nrandom = 0x0 0x4800\n[tpe]\nx = 0x0\nw = 0x800\nz = 0x4000\nm = 16\nn = 16\nk = 16\n", NULL, &sc) != HETSIM_STATUS_OK) return 12;
    if (hetsim_scenario_run(sc, &o) != HETSIM_STATUS_OK) return 13;
    size_t need = 0;
    if (hetsim_outcome_report(o, HETSIM_FORMAT_LINES, NULL, 0, &need) != HETSIM_STATUS_BUFFER_TOO_SMALL) return 14;
    char buf[8192];
    if (need > sizeof buf) return 15;
    if (hetsim_outcome_report(o, HETSIM_FORMAT_LINES, buf, sizeof buf, &need) != HETSIM_STATUS_OK) return 16;
    printf("cycles=%llu\n%s", (unsigned long long)hetsim_outcome_cycles(o), buf);
    hetsim_outcome_free(o);
    hetsim_scenario_free(sc);
    return 0;
}
"#;

#[test]
fn c_program_links_against_staticlib() {
    let Some(lib) = staticlib() else {
        eprintln!("skipping: static library not built alongside the tests");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("hetsim.h"), HEADER).unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("smoke");
    let cc = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(dir.path())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let out = String::from_utf8_lossy(&run.stdout);
    let cycles: u64 = out.lines().next().unwrap().strip_prefix("cycles=").unwrap().parse().unwrap();
    assert!(cycles > 0);
    assert!(out.contains("run name=c "));
}
