use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use robust_se::dsp::StftConfig;
use robust_se::model::{MaskNet, MaskNetConfig};
use robust_se::train::Checkpoint;
use robust_se_ffi::*;

fn last_error() -> String {
    let p = rse_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn checkpoint(dir: &Path, n_outputs: usize) -> PathBuf {
    let cfg = MaskNetConfig {
        bottleneck: 8,
        ..MaskNetConfig::desk(257, n_outputs)
    };
    let net = MaskNet::new(cfg, 1).unwrap();
    let path = dir.join(format!("m{n_outputs}.ckpt"));
    Checkpoint::from_model(&net, StftConfig::new(512, 128).unwrap()).save(&path).unwrap();
    path
}

fn signal(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.1 * (0.05 * i as f64).sin() + 0.02 * (0.31 * i as f64).cos()).collect()
}

#[test]
fn aggregate_matches_known_values() {
    let order = CString::new("sample_median_tf_mean").unwrap();
    let mut out = 0.0;
    let e = [1.0, 2.0, 100.0];
    assert_eq!(unsafe { rse_aggregate(e.as_ptr(), 3, 1, 1, order.as_ptr(), 0.25, &mut out) }, RseStatus::Ok);
    assert_eq!(out, 2.0);
    assert!(rse_last_error().is_null());

    let trimmed = CString::new("TF_MEAN_SAMPLE_TRIMMED_MEAN").unwrap();
    let e = [3.0, 1.0, 2.0, 9.0];
    assert_eq!(unsafe { rse_aggregate(e.as_ptr(), 4, 1, 1, trimmed.as_ptr(), 0.25, &mut out) }, RseStatus::Ok);
    assert_eq!(out, 1.0);
}

#[test]
fn aggregate_rejects_bad_arguments() {
    let mut out = 0.0;
    let e = [1.0; 4];
    let bad = CString::new("mean").unwrap();
    assert_eq!(unsafe { rse_aggregate(e.as_ptr(), 2, 2, 1, bad.as_ptr(), 0.25, &mut out) }, RseStatus::Config);
    assert!(last_error().contains("sample_tf_mean"));
    let good = CString::new("sample_tf_mean").unwrap();
    assert_eq!(unsafe { rse_aggregate(e.as_ptr(), 0, 2, 1, good.as_ptr(), 0.25, &mut out) }, RseStatus::Shape);
    assert_eq!(unsafe { rse_aggregate(ptr::null(), 2, 2, 1, good.as_ptr(), 0.25, &mut out) }, RseStatus::NullPointer);
    assert_eq!(unsafe { rse_aggregate(e.as_ptr(), 2, 2, 1, ptr::null(), 0.25, &mut out) }, RseStatus::NullPointer);
    assert_eq!(unsafe { rse_aggregate(e.as_ptr(), 2, 2, 1, good.as_ptr(), 0.0, &mut out) }, RseStatus::Config);
}

#[test]
fn si_sdr_through_the_abi() {
    let s = signal(1000);
    let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
    let mut db = 0.0;
    assert_eq!(unsafe { rse_si_sdr(twice.as_ptr(), s.as_ptr(), s.len(), &mut db) }, RseStatus::Ok);
    assert_eq!(db, 60.0);
    let zeros = vec![0.0; 1000];
    assert_eq!(unsafe { rse_si_sdr(s.as_ptr(), zeros.as_ptr(), 1000, &mut db) }, RseStatus::SilentReference);
    assert_eq!(unsafe { rse_si_sdr(s.as_ptr(), s.as_ptr(), 1000, ptr::null_mut()) }, RseStatus::NullPointer);
}

#[test]
fn model_lifecycle() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(checkpoint(dir.path(), 3).to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rse_model_load(path.as_ptr(), &mut m) }, RseStatus::Ok);
    assert_eq!(unsafe { rse_model_outputs(m) }, 3);

    let x = signal(3000);
    let mut out = vec![0.0; 3 * x.len()];
    let st = unsafe { rse_model_enhance(m, x.as_ptr(), x.len(), 16000, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, RseStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite()));
    let st = unsafe { rse_model_enhance(m, x.as_ptr(), x.len(), 16000, out.as_mut_ptr(), x.len()) };
    assert_eq!(st, RseStatus::BufferTooSmall);
    let st = unsafe { rse_model_enhance(m, x.as_ptr(), 10, 16000, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, RseStatus::Shape);
    unsafe { rse_model_free(m) };
    unsafe { rse_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { rse_model_outputs(ptr::null()) }, 0);
}

#[test]
fn load_failures_leave_null_handle() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, "{\"format\":\"something-else\"}").unwrap();
    for p in [bad, dir.path().join("missing.ckpt")] {
        let c = CString::new(p.to_str().unwrap()).unwrap();
        let mut m = std::ptr::dangling_mut::<RseModel>();
        assert_eq!(unsafe { rse_model_load(c.as_ptr(), &mut m) }, RseStatus::Load);
        assert!(m.is_null());
        assert!(last_error().contains(p.file_name().unwrap().to_str().unwrap()));
    }
    assert_eq!(unsafe { rse_model_load(ptr::null(), ptr::null_mut()) }, RseStatus::NullPointer);
}

#[test]
fn status_strings() {
    for s in [RseStatus::Ok, RseStatus::Internal, RseStatus::BufferTooSmall] {
        assert!(!unsafe { CStr::from_ptr(rse_status_str(s)) }.to_bytes().is_empty());
    }
    let v = unsafe { CStr::from_ptr(rse_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// Directory holding the compiled static library, next to the test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_compiles_and_links() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header_dir = root.join("include");
    assert!(header_dir.join("robust_se.h").exists());
    let lib = artifact_dir().join("librobust_se_ffi.a");
    if !lib.exists() {
        let ok = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
            .arg(&header_dir)
            .arg(root.join("tests/c/smoke.c"))
            .status();
        match ok {
            Ok(st) => assert!(st.success()),
            Err(e) => eprintln!("skipping C check: {e}"),
        }
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = match Command::new("cc")
        .args(["-Wall", "-Werror", "-I"])
        .arg(&header_dir)
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping C check: {e}");
            return;
        }
    };
    assert!(status.success());
    let ck = checkpoint(dir.path(), 1);
    let out = Command::new(&exe).arg(&ck).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
