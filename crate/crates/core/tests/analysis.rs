mod common;

use micarray::analysis::{
    beamform_subarray, directivity_pipeline, integrate_maps, octave_polar, Averaging, BeamformSettings, CsmInput,
    PitchSeriesParams, RegionOfInterest,
};
use micarray::geometry::observation_angles;
use micarray::propagation::MediumModel;
use micarray::spectral::BandType;
use micarray::synthesis::{synthesize_csm, Scene, Source, SourceKind, SourceSpectrum};
use micarray::Vec3;

use common::{db, dnw_subarray, full_array, plane_grid};

fn dipole_scene(axis: [f64; 3]) -> Scene {
    Scene::new(
        vec![Source {
            position: [2.4, 0.0, 0.0],
            kind: SourceKind::Dipole { axis },
            spectrum: SourceSpectrum::White { psd: 1e-3 },
        }],
        MediumModel::default(),
    )
}

#[test]
fn dipole_directivity_follows_cos_squared() {
    let g = full_array();
    let series = PitchSeriesParams::default();
    let grid = plane_grid([1.4, 3.4], [-1.0, 1.0], 0.05);
    let roi = RegionOfInterest::rect("model", [1.4, 3.4], [-1.0, 1.0]);
    let freqs = [2000.0, 5000.0];
    let medium = MediumModel::default();
    let scene = dipole_scene([0.0, 1.0, 0.0]);
    let r = directivity_pipeline(
        CsmInput::Scene(&scene),
        &g,
        &series,
        &grid,
        &roi,
        &freqs,
        &medium,
        &BeamformSettings::default(),
        Averaging::Db,
    )
    .unwrap();
    // Oracle: 10 log10 cos²(θ − 90°) relative to its dB mean over the angles.
    let oracle: Vec<f64> = r
        .surface
        .theta
        .iter()
        .map(|t| 10.0 * (t - 90.0).to_radians().cos().powi(2).log10())
        .collect();
    let mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
    for k in 0..freqs.len() {
        let gamma: Vec<f64> = r.surface.gamma.iter().map(|row| row[k].unwrap()).collect();
        let offset = gamma.iter().sum::<f64>() / gamma.len() as f64;
        for (i, t) in r.surface.theta.iter().enumerate() {
            if (t - 90.0).abs() < 35.0 {
                let d = (gamma[i] - offset) - (oracle[i] - mean);
                assert!(d.abs() < 1.0, "{} Hz, theta {t:.1}: {d:.2} dB", freqs[k]);
            }
        }
    }
    // The polar table keeps the angle count and spans the octave centers.
    let polar = octave_polar(&r.surface, BandType::Octave).unwrap();
    assert_eq!(polar.theta.len(), r.surface.theta.len());
    assert!(!polar.centers.is_empty());
}

#[test]
fn observation_angles_of_the_series_are_ordered() {
    let g = full_array();
    let series = PitchSeriesParams::default();
    let subs = micarray::geometry::pitch_subarray_series(&g, series.count, series.aperture, series.mics, series.epsilon)
        .unwrap();
    let reference = Vec3::from(series.reference);
    let theta: Vec<f64> = subs
        .iter()
        .map(|s| {
            observation_angles(&Vec3::from(s.nominal_center), &reference, None)
                .unwrap()
                .theta
        })
        .collect();
    assert_eq!(theta.len(), 13);
    assert!(theta.windows(2).all(|w| w[1] > w[0]));
    // Center sub-array sits at x = 3.0: 90° + atan(0.6 / 3.39).
    assert!((theta[6] - (90.0 + (0.6f64 / 3.39).atan().to_degrees())).abs() < 1e-9);
}

#[test]
fn linear_and_db_averaging_agree_on_a_flat_field() {
    let g = full_array();
    let grid = plane_grid([1.4, 3.4], [-1.0, 1.0], 0.1);
    let roi = RegionOfInterest::rect("model", [1.4, 3.4], [-1.0, 1.0]);
    let scene = Scene::new(
        vec![Source::monopole(Vec3::new(2.4, 0.0, 0.0), SourceSpectrum::White { psd: 1e-3 })],
        MediumModel::default(),
    );
    let series = PitchSeriesParams {
        count: 5,
        ..PitchSeriesParams::default()
    };
    let run = |a| {
        directivity_pipeline(
            CsmInput::Scene(&scene),
            &g,
            &series,
            &grid,
            &roi,
            &[3000.0],
            &scene.medium,
            &BeamformSettings::default(),
            a,
        )
        .unwrap()
    };
    let lin = run(Averaging::Linear);
    let dbm = run(Averaging::Db);
    for (a, b) in lin.surface.gamma.iter().zip(&dbm.surface.gamma) {
        assert!((a[0].unwrap() - b[0].unwrap()).abs() < 0.01);
        assert!(a[0].unwrap().abs() < 0.1);
    }
}

#[test]
fn roi_selects_one_of_two_sources() {
    let g = full_array();
    let sub = dnw_subarray(&g);
    let grid = plane_grid([1.4, 3.6], [-1.0, 1.0], 0.05);
    let a = Vec3::from(grid.points[grid.nearest(&Vec3::new(1.9, 0.0, 0.0))]);
    let b = Vec3::from(grid.points[grid.nearest(&Vec3::new(3.1, 0.0, 0.2))]);
    let scene = Scene::new(
        vec![
            Source::monopole(a, SourceSpectrum::White { psd: 1e-3 }),
            Source::monopole(b, SourceSpectrum::White { psd: 4e-4 }),
        ],
        MediumModel::default(),
    );
    let freqs = [2000.0, 4000.0, 8000.0];
    let csms = synthesize_csm(&scene, &sub.positions_vec3(), &freqs).unwrap();
    let maps = beamform_subarray(&sub, &csms, &grid, &scene.medium, &BeamformSettings::default()).unwrap();
    let left = integrate_maps(&maps, &grid, &RegionOfInterest::rect("a", [1.4, 2.5], [-1.0, 1.0])).unwrap();
    let right = integrate_maps(&maps, &grid, &RegionOfInterest::rect("b", [2.5, 3.6], [-1.0, 1.0])).unwrap();
    for k in 0..freqs.len() {
        assert!((db(left.values[k]) - db(1e-3)).abs() < 0.5, "{}", db(left.values[k]) - db(1e-3));
        assert!((db(right.values[k]) - db(4e-4)).abs() < 0.5, "{}", db(right.values[k]) - db(4e-4));
    }
}
