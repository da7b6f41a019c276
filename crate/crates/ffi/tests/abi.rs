use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use micarray_ffi::*;

fn last_error() -> String {
    let p = micarray_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[test]
fn geometry_and_subarray_round_trip() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(micarray_geometry_assemble(3, 3, 7, &mut g), MicarrayStatus::Ok);
        assert_eq!(micarray_geometry_len(g), 7200);
        let mut pos = vec![0.0; 3 * 7200];
        assert_eq!(micarray_geometry_positions(g, pos.as_mut_ptr(), pos.len()), MicarrayStatus::Ok);
        assert!(pos.chunks(3).all(|p| (p[1] - 3.39).abs() < 1e-12));

        let mut s = ptr::null_mut();
        assert_eq!(micarray_subarray_fermat(g, 100, 1.5, 3.0, -0.5, 0.1, &mut s), MicarrayStatus::Ok);
        let n = micarray_subarray_len(s);
        assert_eq!(n + micarray_subarray_discarded(s), 100);
        let mut idx = vec![0usize; n];
        assert_eq!(micarray_subarray_indices(s, idx.as_mut_ptr(), n), MicarrayStatus::Ok);
        let mut sp = vec![0.0; 3 * n];
        assert_eq!(micarray_subarray_positions(s, sp.as_mut_ptr(), sp.len()), MicarrayStatus::Ok);
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(&sp[3 * k..3 * k + 3], &pos[3 * i..3 * i + 3]);
        }

        // Nominal centre is the mean of the spiral targets, seen from (2.4, 0, 0).
        let targets = micarray::geometry::fermat_spiral(100, 1.5, [3.0, -0.5]).unwrap();
        let mx = targets.iter().map(|t| t[0]).sum::<f64>() / 100.0;
        let mz = targets.iter().map(|t| t[1]).sum::<f64>() / 100.0;
        let reference = [2.4, 0.0, 0.0];
        let mut a = MicarrayAngles::default();
        assert_eq!(micarray_subarray_angles(s, reference.as_ptr(), &mut a), MicarrayStatus::Ok);
        assert!((a.theta - (90.0 + ((mx - 2.4) / 3.39).atan().to_degrees())).abs() < 1e-9);
        assert!((a.phi - (mz / 3.39).atan().to_degrees()).abs() < 1e-9);
        assert!((a.theta - 90.0 - (0.6f64 / 3.39).atan().to_degrees()).abs() < 1.0);

        micarray_subarray_free(s);
        micarray_geometry_free(g);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(micarray_geometry_assemble(0, 3, 1, &mut g), MicarrayStatus::Domain);
        assert!(g.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(micarray_geometry_assemble(1, 1, 1, ptr::null_mut()), MicarrayStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut grid = ptr::null_mut();
        assert_eq!(micarray_grid_new(0.0, 1.0, 0.0, 1.0, -0.1, 0.0, &mut grid), MicarrayStatus::Domain);

        let mut out = [0.0; 3];
        assert_eq!(
            micarray_geometry_positions(ptr::null(), out.as_mut_ptr(), 3),
            MicarrayStatus::NullPointer
        );
        assert_eq!(micarray_geometry_len(ptr::null()), 0);
        micarray_geometry_free(ptr::null_mut());
    }
}

#[test]
fn budgets() {
    assert!((micarray_stream_data_rate(200, 3.072e6, 0.0) - 614.4).abs() < 1e-9);
    assert!((micarray_phase_skew_budget(3e-9, 20e3) - 0.0216).abs() < 1e-12);
}

#[test]
fn beamforming_recovers_a_monopole() {
    unsafe {
        let ring: Vec<f64> = (0..48)
            .flat_map(|k| {
                let r = 0.1 + 0.9 * (k as f64 / 47.0).sqrt();
                let a = k as f64 * 2.399_963_229_728_653;
                [2.4 + r * a.cos(), 3.39, r * a.sin()]
            })
            .collect();
        let mut s = ptr::null_mut();
        assert_eq!(micarray_subarray_from_positions(ring.as_ptr(), 48, &mut s), MicarrayStatus::Ok);
        let mut grid = ptr::null_mut();
        assert_eq!(micarray_grid_new(2.0, 2.8, -0.4, 0.4, 0.05, 0.0, &mut grid), MicarrayStatus::Ok);
        let (mut nx, mut nz) = (0, 0);
        assert_eq!(micarray_grid_shape(grid, &mut nx, &mut nz), MicarrayStatus::Ok);
        assert_eq!((nx, nz), (17, 17));

        let src = [2.5, 0.0, 0.1];
        let truth = 10 * nx + 10;
        for mach in [0.0, 0.15] {
            let mut csm = ptr::null_mut();
            assert_eq!(micarray_csm_monopole(s, src.as_ptr(), 1e-3, mach, 3000.0, &mut csm), MicarrayStatus::Ok);
            for clean in [false, true] {
                let opt = MicarrayBeamformOptions {
                    clean_sc: clean,
                    mach_x: mach,
                    ..micarray_beamform_options_default()
                };
                let mut map = ptr::null_mut();
                assert_eq!(micarray_beamform(csm, s, grid, &opt, &mut map), MicarrayStatus::Ok);
                assert_eq!(micarray_map_len(map), nx * nz);
                let (mut i, mut v) = (0, 0.0);
                assert_eq!(micarray_map_peak(map, &mut i, &mut v), MicarrayStatus::Ok);
                assert_eq!(i, truth);
                // Steering amplitudes use c·τ while the convected field decays
                // with r̃; over this wide aperture that costs about 0.2 dB in flow.
                let tol = if mach == 0.0 { 0.01 } else { 0.3 };
                assert!(db(v / 1e-3).abs() < tol, "mach {mach}, clean {clean}: {} dB", db(v / 1e-3));
                let mut small = [0.0; 4];
                assert_eq!(micarray_map_values(map, small.as_mut_ptr(), 4), MicarrayStatus::BufferTooSmall);
                micarray_map_free(map);
            }
            micarray_csm_free(csm);
        }
        micarray_grid_free(grid);
        micarray_subarray_free(s);
    }
}

#[test]
fn hand_built_dense_csm_is_level_true() {
    unsafe {
        let pts = [2.0, 3.39, 0.0, 2.6, 3.39, 0.2, 2.3, 3.39, -0.3];
        let mut s = ptr::null_mut();
        assert_eq!(micarray_subarray_from_positions(pts.as_ptr(), 3, &mut s), MicarrayStatus::Ok);
        let mut grid = ptr::null_mut();
        assert_eq!(micarray_grid_new(2.0, 2.8, -0.4, 0.4, 0.1, 0.0, &mut grid), MicarrayStatus::Ok);
        // Rank-one CSM of a source at the grid point (2.4, 0, 0) built by hand
        // from free-field propagation; diagonal removal off so all terms count.
        let k = std::f64::consts::TAU * 2000.0 / 343.0;
        let p: Vec<(f64, f64)> = pts
            .chunks(3)
            .map(|q| {
                let r = ((q[0] - 2.4f64).powi(2) + q[1].powi(2) + q[2].powi(2)).sqrt();
                ((-k * r).cos() / r, (-k * r).sin() / r)
            })
            .collect();
        let mut dense = [0.0; 18];
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = p[i];
                let (c, d) = p[j];
                // p_i p_j^*, level 1e-3 at 1 m
                dense[2 * (3 * i + j)] = 1e-3 * (a * c + b * d);
                dense[2 * (3 * i + j) + 1] = 1e-3 * (b * c - a * d);
            }
        }
        let mut csm = ptr::null_mut();
        assert_eq!(micarray_csm_from_dense(2000.0, 3, dense.as_ptr(), &mut csm), MicarrayStatus::Ok);
        let opt = MicarrayBeamformOptions {
            diagonal_removal: false,
            absorption: false,
            ..micarray_beamform_options_default()
        };
        let mut map = ptr::null_mut();
        assert_eq!(micarray_beamform(csm, s, grid, &opt, &mut map), MicarrayStatus::Ok);
        let mut values = vec![0.0; micarray_map_len(map)];
        assert_eq!(micarray_map_values(map, values.as_mut_ptr(), values.len()), MicarrayStatus::Ok);
        let truth = 4 * 9 + 4;
        assert!((values[truth] / 1e-3 - 1.0).abs() < 1e-9, "{}", values[truth]);
        micarray_map_free(map);
        micarray_csm_free(csm);
        micarray_grid_free(grid);
        micarray_subarray_free(s);
    }
}

fn static_lib() -> Option<PathBuf> {
    // target/<profile>/deps/abi-xxxx -> target/<profile>
    let exe = std::env::current_exe().ok()?;
    let profile = exe.parent()?.parent()?;
    let lib = profile.join("libmicarray_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_against_the_header() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping C link check");
        return;
    };
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping C link check");
        return;
    }
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile_dir();
    let exe = dir.join("smoke");
    let out = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(
        run.status.success(),
        "exit {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
    let _ = std::fs::remove_dir_all(&dir);
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("micarray-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
