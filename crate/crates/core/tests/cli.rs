use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn micarray(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_micarray"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MICARRAY_OUTPUT")
        .output()
        .expect("run micarray")
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn geometry_command_builds_the_full_array() {
    let dir = tempfile::tempdir().unwrap();
    let o = micarray(&["geometry", "--run", "g"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&dir.path().join("g/geometry/summary.json"));
    assert_eq!(summary["sensors"], 7200);
    let g = json(&dir.path().join("g/geometry/geometry.json"));
    assert_eq!(g["sensors"].as_array().unwrap().len(), 7200);

    let o = micarray(&["geometry", "--run", "one", "--panels", "1x1", "--format", "csv"], dir.path());
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("one/geometry/geometry.csv")).unwrap();
    assert_eq!(csv.lines().count(), 801);
}

#[test]
fn pipeline_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let o = micarray(&["pipeline", "--preset", "single_monopole", "--run", run], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = files(&dir.path().join("a"));
    let b = files(&dir.path().join("b"));
    assert!(a.len() > 5);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{} differs between runs", k.display());
    }

    // Every recorded artifact hashes to its manifest entry.
    let manifest = json(&dir.path().join("a/manifest.json"));
    for entry in manifest["outputs"].as_array().unwrap() {
        let rel = entry["path"].as_str().unwrap();
        let bytes = &a[Path::new(rel)];
        assert_eq!(entry["bytes"].as_u64().unwrap() as usize, bytes.len());
        let digest: String = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(entry["sha256"].as_str().unwrap(), digest);
    }

    let subs = json(&dir.path().join("a/subarray/subarrays.json"));
    assert_eq!(subs[0]["indices"].as_array().unwrap().len(), 140);

    // The preset's monopole is recovered at its 1 m level: 1e-4 Pa²/Hz.
    let spectrum = std::fs::read_to_string(dir.path().join("a/analysis/spectrum.csv")).unwrap();
    for line in spectrum.lines().skip(1) {
        let level: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((level - 53.9794).abs() < 0.1, "{line}");
    }
}

#[test]
fn toml_config_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
name = "toml_case"
frequencies = [2000.0]

[geometry]
source = "generate"
panels_x = 1
panels_z = 1
seed = 3

[scene]
seed = 2
[[scene.sources]]
position = [1.0, 0.0, 0.0]
spectrum = { type = "white", psd = 1e-4 }

[subarray]
strategy = "explicit"
indices = [0, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500, 550, 600, 650, 700, 750]

[grid]
x_range = [0.5, 1.5]
z_range = [-0.5, 0.5]
spacing = 0.1

[outputs]
format = "bin"
"#,
    )
    .unwrap();
    let o = micarray(
        &["beamform", "--config", cfg.to_str().unwrap(), "--conventional", "--dr", "off"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("toml_case_beamform");
    let map = std::fs::read(run.join("beamforming/map_conventional_2000Hz.bin")).unwrap();
    assert_eq!(&map[..4], b"MMAP");
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["config"]["beamforming"]["clean_sc"], false);
    assert_eq!(manifest["config"]["beamforming"]["clean"]["diagonal_removal"], false);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = micarray(&["pipeline", "--config", "/nonexistent/run.json"], dir.path());
    assert_eq!(missing.status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "frequencies": [1000], "unknown_key": 1}"#).unwrap();
    let o = micarray(&["pipeline", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));

    let o = micarray(&["pipeline", "--freqs=-5"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = micarray(&["geometry", "--panels", "0x3"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = micarray(&["no-such-command"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn acquire_reports_dropped_packets() {
    let dir = tempfile::tempdir().unwrap();
    let o = micarray(
        &["acquire", "--run", "acq", "--duration", "0.05", "--drop", "1", "--shuffle-seed", "4"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("acq/acquisition/report.json"));
    assert_eq!(report["channels"], 140);
    let gaps = report["gaps"].as_array().unwrap();
    assert_eq!(gaps.len(), 1);
    assert_eq!(gaps[0]["first_sequence"], 1);
    assert_eq!(gaps[0]["sample_start"], 512);
    assert!(dir.path().join("acq/acquisition/capture.siam").exists());
    assert!(dir.path().join("acq/acquisition/pcm.wav").exists());
}

#[test]
fn farfield_command_compares_against_virtual_microphones() {
    let dir = tempfile::tempdir().unwrap();
    let o = micarray(
        &["farfield", "--run", "ff", "--mic", "2.4,8,0", "--freqs", "1000,4000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ff = json(&dir.path().join("ff/analysis/farfield.json"));
    for d in ff["delta_db"].as_array().unwrap() {
        // Absorption over 8 m is not undone by distance normalisation.
        assert!(d.as_f64().unwrap().abs() < 0.5, "{d}");
    }
}
