use std::path::{Path, PathBuf};
use std::process::Command;

const SMOKE: &str = r#"
#include <stdio.h>
#include "dopt_lab.h"

int main(void) {
    DoptMdp *mdp = NULL;
    DoptPolicy *pi = NULL, *mu = NULL;
    double j = 0.0, var = 0.0, mc = 0.0;
    if (dopt_mdp_gridworld(3, 0.1, 7, &mdp) != DOPT_STATUS_OK) return 1;
    if (dopt_policy_random(mdp, 2, &pi) != DOPT_STATUS_OK) return 2;
    if (dopt_policy_performance(mdp, pi, &j) != DOPT_STATUS_OK) return 3;
    if (dopt_optimal_behavior(mdp, pi, &mu, &var) != DOPT_STATUS_OK) return 4;
    if (dopt_exact_variance(mdp, pi, pi, NULL, 0, &mc) != DOPT_STATUS_OK) return 5;
    if (dopt_policy_performance(NULL, pi, &j) != DOPT_STATUS_NULL_POINTER) return 6;
    char msg[64];
    dopt_last_error(msg, sizeof msg);
    printf("%.17g %.17g %.17g %s\n", j, var, mc, msg);
    dopt_policy_free(mu);
    dopt_policy_free(pi);
    dopt_mdp_free(mdp);
    return var <= mc ? 0 : 7;
}
"#;

fn include_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

fn cc() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(include_dir().join("dopt_lab.h")).unwrap();
    for name in [
        "typedef struct DoptMdp DoptMdp;",
        "DOPT_STATUS_COVERAGE_VIOLATION = 4",
        "dopt_mdp_gridworld(",
        "dopt_optimal_behavior(",
        "dopt_exact_variance(",
        "dopt_last_error(",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libdopt_lab_ffi.a");
    if !lib.is_file() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let bin = dir.path().join("smoke");
    std::fs::write(&src, SMOKE).unwrap();
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(include_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "compile failed");
    let out = Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "exit {:?}: {stdout}", out.status.code());
    assert!(stdout.contains("mdp is null"), "{stdout}");
}
