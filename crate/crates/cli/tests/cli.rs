use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpl"))
        .args(args)
        .env_remove("VPL_OUT")
        .env_remove("VPL_SEED")
        .env_remove("VPL_T_END")
        .env_remove("VPL_THREADS")
        .env_remove("VPL_RESUME")
        .output()
        .expect("spawn vpl")
}

fn short_run(dir: &Path) -> Output {
    vpl(&["run", "slab-eps1e-3", "--t-end", "0.1", "--out", dir.to_str().unwrap()])
}

#[test]
fn malformed_config_exits_2_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "scenario = \"bad\"\n[solver]\nn_axes = 12\n").unwrap();
    let out = vpl(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_axes"), "{err}");
}

#[test]
fn invalid_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "scenario = \"bad\"\n[solver]\nn_axis = 0\n").unwrap();
    let out = vpl(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_config_exits_2() {
    let out = vpl(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("slab-eps1e-3"));
}

#[test]
fn short_run_writes_outputs_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = short_run(&a);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["timeseries.csv", "summary.json", "config.resolved.toml"] {
        assert!(a.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scenario"], "slab-eps1e-3");
    assert!(summary["fitted"].get("decay_k").is_some());
    assert!(summary["config_hash"].as_str().unwrap().len() == 64);
    assert_eq!(summary["failing"].as_array().unwrap().len(), 0);

    let out = short_run(&b);
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("timeseries.csv")).unwrap(), fs::read(b.join("timeseries.csv")).unwrap());

    // The resolved config reproduces the run by itself.
    let c = tmp.path().join("c");
    let resolved = a.join("config.resolved.toml");
    let out = vpl(&["run", resolved.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read(a.join("timeseries.csv")).unwrap(), fs::read(c.join("timeseries.csv")).unwrap());

    plotdata_columns(&a);
}

fn plotdata_columns(run: &Path) {
    let dir = run.to_str().unwrap();
    let out = vpl(&["plotdata", dir, "W_theta"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,W_theta_0");
    assert!(lines.all(|l| l.split(',').count() == 2));

    let out = vpl(&["plotdata", dir, "entropy"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,entropy,entropy_flag");

    let out = vpl(&["plotdata", dir, "mass", "--log"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,log_mass");

    let out = vpl(&["plotdata", dir, "no_such_thing"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("W_theta_0") && err.contains("total_energy"), "{err}");
}

#[test]
fn check_suites_pass() {
    let out = vpl(&["check", "all"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains("FAIL"));
    for s in ["[kernel]", "[operators]", "[geometry]", "[field]", "[norms]"] {
        assert!(text.contains(s));
    }
}

#[test]
fn unknown_suite_exits_2() {
    assert_eq!(vpl(&["check", "bogus"]).status.code(), Some(2));
}
