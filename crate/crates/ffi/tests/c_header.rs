use std::path::{Path, PathBuf};
use std::process::Command;

fn static_lib() -> PathBuf {
    // Integration tests run from <target>/<profile>/deps; the static archive
    // sits one level up.
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("libalf_ffi.a")
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/alf.h")).unwrap();
    for sym in [
        "alf_version",
        "alf_last_error_message",
        "alf_grid_dims",
        "alf_schema_new",
        "alf_schema_free",
        "alf_encode",
        "alf_decode",
        "alf_rasterize",
        "alf_efs_new",
        "alf_efs_forward",
        "alf_efs_free",
        "typedef struct AlfSchema AlfSchema",
        "ALF_STATUS_BUFFER_TOO_SMALL = 8",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = static_lib();
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or {} missing", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let st = Command::new("cc")
        .arg(root.join("tests/c_smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
