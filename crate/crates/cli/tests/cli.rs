use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn elmg(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elmg"))
        .args(args)
        .env("ELMG_CACHE_DIR", cache)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn checksums(m: &Value) -> Vec<(String, String)> {
    m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            (
                f["path"].as_str().unwrap().to_string(),
                f["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn rerunning_a_manifest_reproduces_csv_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out = elmg(
        &cache,
        &[
            "fotoc",
            "--j",
            "12",
            "--xi-y",
            "2.5",
            "--t-max",
            "3",
            "--out",
            a.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cfg = a.join("manifest.json");
    let out = elmg(
        &cache,
        &[
            "fotoc",
            "--config",
            cfg.to_str().unwrap(),
            "--no-cache",
            "--out",
            b.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(checksums(&ma), checksums(&mb));
    assert_eq!(
        std::fs::read(a.join("fotoc.csv")).unwrap(),
        std::fs::read(b.join("fotoc.csv")).unwrap()
    );
    assert_eq!(ma["inputs"]["config_sha256"], mb["inputs"]["config_sha256"]);
    assert!(mb["inputs"]["config_file_sha256"].is_string());
}

#[test]
fn manifest_lists_every_output_with_checksum() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("m");
    let out = elmg(
        tmp.path(),
        &[
            "metric",
            "--j",
            "10",
            "--t-max",
            "1",
            "--dt",
            "0.5",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = manifest(&dir);
    let files = checksums(&m);
    assert_eq!(files.len(), 2);
    for (name, sum) in files {
        let bytes = std::fs::read(dir.join(&name)).unwrap();
        assert_eq!(elmg_cli::output::sha256_hex(&bytes), sum, "{name}");
    }
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["config"]["j"], "10");
}

#[test]
fn zero_perturbation_gives_unit_fotoc() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("z");
    let out = elmg(
        tmp.path(),
        &[
            "fotoc",
            "--j",
            "8",
            "--epsilon",
            "0",
            "--t-max",
            "2",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.join("fotoc.csv")).unwrap();
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.0);
        rows += 1;
    }
    assert_eq!(rows, 41);
}

#[test]
fn csv_uses_crlf_and_seventeen_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("c");
    let out = elmg(
        tmp.path(),
        &[
            "complexity",
            "--xi-range",
            "1:3:3",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.join("complexity.csv")).unwrap();
    assert!(text.starts_with("xi_y,dC_sym,dC_broken\r\n"));
    let second = text.lines().nth(1).unwrap();
    let mantissa = second.split(',').next().unwrap().split('e').next().unwrap();
    assert_eq!(mantissa.replace(['.', '-'], "").len(), 17);
    // ξ = 1 is symmetric, ξ = 3 broken; the other column is empty.
    assert!(second.ends_with(','));
    assert!(text.lines().nth(3).unwrap().contains(",,"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nj = 6\nt_max = 1\nxi_y = 0.5\n").unwrap();
    let dir = tmp.path().join("o");
    let out = elmg(
        tmp.path(),
        &[
            "fotoc",
            "--config",
            cfg.to_str().unwrap(),
            "--xi-y",
            "0.25",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert!(out.status.success());
    let m = manifest(&dir);
    assert_eq!(m["config"]["j"], "6");
    assert_eq!(m["config"]["xi_y"], "0.25");
    assert_eq!(m["config"]["t_max"], "1");
}

#[test]
fn cache_hit_skips_diagonalization() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let args = |d: &str| {
        vec![
            "sweep".to_string(),
            "--j".into(),
            "20".into(),
            "--xi-range".into(),
            "1:3:4".into(),
            "--t-max".into(),
            "1".into(),
            "--out".into(),
            tmp.path().join(d).display().to_string(),
        ]
    };
    let run = |d: &str| {
        let a = args(d);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = elmg(&cache, &refs);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        manifest(&tmp.path().join(d))
    };
    let first = run("s1");
    let second = run("s2");
    assert_eq!(first["cache"]["misses"], 4);
    assert_eq!(second["cache"]["hits"], 4);
    assert_eq!(second["cache"]["misses"], 0);
    assert_eq!(second["cache"]["diagonalization_seconds"], 0.0);
    assert_eq!(checksums(&first), checksums(&second));
    let text = std::fs::read_to_string(tmp.path().join("s1/sweep.csv")).unwrap();
    let phases: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(phases, ["symmetric", "symmetric", "broken", "broken"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = |args: &[&str]| elmg(tmp.path(), args).status.code().unwrap();
    let dir = tmp.path().join("x");
    let d = dir.to_str().unwrap();
    assert_eq!(out(&["sweep", "--xi-range", "0:1:0", "--out", d]), 2);
    assert_eq!(out(&["geodesic", "--start", "0,0.5", "--out", d]), 2);
    assert_eq!(out(&["fotoc", "--phase", "liquid", "--out", d]), 2);
    assert_eq!(out(&["fotoc", "--j", "0.3", "--out", d]), 2);
    assert_eq!(out(&["fotoc", "--bogus"]), 2);
    assert_eq!(
        out(&["metric", "--phase", "broken", "--xi-y", "1", "--out", d]),
        2
    );
    // A stable point never leaves the quadratic regime, so the fit window is empty.
    assert_eq!(
        out(&["lyapunov", "--j", "10", "--xi-y", "0.5", "--t-max", "1", "--out", d]),
        3
    );
    assert_eq!(
        out(&[
            "sweep",
            "--omega-range",
            "0:1:1001",
            "--xi-range",
            "0:1:1001",
            "--out",
            d
        ]),
        4
    );
    assert_eq!(out(&["fotoc", "--j", "8", "--t-max", "0.1", "--out", d]), 0);
}

#[test]
fn help_documents_common_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = elmg(tmp.path(), &["fotoc", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--j",
        "--omega-x",
        "--xi-y",
        "--t-max",
        "--dt",
        "--epsilon",
        "--phase",
        "--out",
        "--config",
        "--threads",
        "--no-cache",
    ] {
        assert!(text.contains(flag), "{flag}");
    }
    let top = String::from_utf8_lossy(&elmg(tmp.path(), &["--help"]).stdout).to_string();
    assert!(top.contains("ELMG_CACHE_DIR"));
    for sub in [
        "fotoc",
        "echo-compare",
        "lyapunov",
        "complexity",
        "metric",
        "curvature",
        "geodesic",
        "sweep",
    ] {
        assert!(top.contains(sub), "{sub}");
    }
}
