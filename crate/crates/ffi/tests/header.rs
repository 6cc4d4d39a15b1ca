use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/densmon.h")
}

#[test]
fn header_declares_the_abi() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "densmon_last_error",
        "densmon_density_estimate",
        "densmon_density_from_values",
        "densmon_density_free",
        "densmon_density_info",
        "densmon_density_values",
        "densmon_density_evaluate",
        "densmon_expected_score",
        "densmon_ise",
        "densmon_fit_linear",
        "densmon_fit_nonlinear",
        "densmon_predict_score",
        "densmon_predict_sample_size",
        "densmon_config_parse",
        "densmon_config_free",
        "densmon_config_task_count",
        "densmon_run",
        "typedef struct DensmonDensity DensmonDensity",
        "typedef struct DensmonConfig DensmonConfig",
        "#define DENSMON_ERR_PANIC -99",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

const PROGRAM: &str = r#"
#include <stdio.h>
#include "densmon.h"

int main(void) {
    double values[2000];
    for (int i = 0; i < 2000; i++) values[i] = (i * 7919 % 2000) / 2000.0;
    DensmonDensity *d = NULL;
    if (densmon_density_estimate(values, 2000, &d) != DENSMON_OK) return 1;
    double at = 0.0;
    if (densmon_density_evaluate(d, 0.5, &at) != DENSMON_OK) return 2;
    densmon_density_free(d);
    if (at < 0.8 || at > 1.2) return 3;
    char msg[64];
    if (densmon_density_estimate(NULL, 3, &d) != DENSMON_ERR_NULL) return 4;
    if (densmon_last_error(msg, sizeof msg) == 0) return 5;
    printf("ok %.3f\n", at);
    return 0;
}
"#;

fn cc() -> Option<String> {
    ["cc", "clang", "gcc"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(String::from)
}

/// Builds the static library into a target directory of its own, so the
/// outer cargo's build lock is not contended.
fn static_library() -> PathBuf {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = manifest.join("../../target/c-link");
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let status = Command::new(cargo)
        .args(["build", "--quiet", "-p", "densmon-ffi", "--lib", "--target-dir"])
        .arg(&target)
        .current_dir(manifest)
        .status()
        .unwrap();
    assert!(status.success(), "building the static library failed");
    target.join("debug/libdensmon_ffi.a")
}

#[test]
fn header_compiles_and_links_from_c() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found; header not compiled");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = header().parent().unwrap().to_path_buf();

    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success(), "header does not compile as C99");

    let lib = static_library();
    let exe = dir.path().join("main");
    let status = Command::new(&cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "link against the static library failed");
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "C program exited with {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
