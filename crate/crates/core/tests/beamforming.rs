mod common;

use proptest::prelude::*;

use micarray::beamforming::{
    clean_sc, conventional_beamform, main_lobe_width_x, CleanScParams, Corrections, ReferencePoint, SteeringGeometry,
    SteeringSet,
};
use micarray::beamforming::FocusGrid;
use micarray::geometry::SubArray;
use micarray::propagation::{MediumModel, ShearLayer};
use micarray::synthesis::{synthesize_csm, Scene, Source, SourceSpectrum};
use micarray::Vec3;

use common::{db, dnw_subarray, full_array, plane_grid};

fn steering(grid: &FocusGrid, sub: &SubArray, medium: &MediumModel, f: f64) -> SteeringSet {
    SteeringGeometry::new(grid, &sub.positions_vec3(), medium, Corrections::default(), ReferencePoint::GeometricMean)
        .unwrap()
        .at_frequency(f)
        .unwrap()
}

fn scene(sources: &[([f64; 3], f64)], medium: MediumModel) -> Scene {
    Scene::new(
        sources
            .iter()
            .map(|(p, q)| Source::monopole(Vec3::from(*p), SourceSpectrum::White { psd: *q }))
            .collect(),
        medium,
    )
}

#[test]
fn diagonal_removal_keeps_single_source_levels() {
    let g = full_array();
    let sub = dnw_subarray(&g);
    let grid = plane_grid([1.5, 3.5], [-1.0, 1.0], 0.1);
    let truth = grid.nearest(&Vec3::new(3.1, 0.0, -0.4));
    let s = scene(&[(grid.points[truth], 1e-3)], MediumModel::default());
    for f in [800.0, 3000.0, 12_000.0] {
        let csm = &synthesize_csm(&s, &sub.positions_vec3(), &[f]).unwrap()[0];
        let st = steering(&grid, &sub, &s.medium, f);
        let with = conventional_beamform(csm, &st, &grid, true).unwrap();
        let without = conventional_beamform(csm, &st, &grid, false).unwrap();
        assert!((with.values[truth] / without.values[truth] - 1.0).abs() < 1e-9);
        assert!((db(with.values[truth]) - db(1e-3)).abs() < 1e-6);
    }
}

#[test]
fn convected_and_refracted_steering_recover_the_source() {
    let g = full_array();
    let sub = dnw_subarray(&g);
    let grid = plane_grid([1.8, 3.0], [-0.6, 0.6], 0.05);
    let truth = grid.nearest(&Vec3::new(2.4, 0.0, 0.1));
    let media = [
        MediumModel::default().with_flow_x(0.2),
        MediumModel {
            shear_layer: Some(ShearLayer::at_y(1.5)),
            ..MediumModel::default().with_flow_x(0.2)
        },
    ];
    for medium in media {
        let s = scene(&[(grid.points[truth], 1e-3)], medium);
        let f = 4000.0;
        let csm = &synthesize_csm(&s, &sub.positions_vec3(), &[f]).unwrap()[0];
        let map = conventional_beamform(csm, &steering(&grid, &sub, &medium, f), &grid, true).unwrap();
        let (p, v) = map.peak();
        assert_eq!(p, truth);
        // Steering amplitudes use c·τ, the convected field decays with r̃;
        // the two differ slightly in flow.
        assert!((db(v) - db(1e-3)).abs() < 0.1, "{} dB", db(v) - db(1e-3));

        // Steering that ignores the flow misplaces the peak.
        let plain = SteeringGeometry::new(
            &grid,
            &sub.positions_vec3(),
            &medium,
            Corrections {
                convection: false,
                amiet: false,
                ..Corrections::default()
            },
            ReferencePoint::GeometricMean,
        )
        .unwrap()
        .at_frequency(f)
        .unwrap();
        let (q, _) = conventional_beamform(csm, &plain, &grid, true).unwrap().peak();
        assert_ne!(q, truth);
    }
}

#[test]
fn main_lobe_narrows_inversely_with_frequency() {
    let g = full_array();
    let sub = dnw_subarray(&g);
    let s = scene(&[([2.4, 0.0, 0.0], 1e-3)], MediumModel::default());
    let width = |f: f64| {
        let half = 2.0 * 343.0 / f * 3.39 / 3.0;
        let sp = half / 80.0;
        let grid = plane_grid([2.4 - 80.0 * sp, 2.4 + 80.0 * sp], [0.0, 0.0], sp);
        let csm = &synthesize_csm(&s, &sub.positions_vec3(), &[f]).unwrap()[0];
        let map = conventional_beamform(csm, &steering(&grid, &sub, &s.medium, f), &grid, false).unwrap();
        main_lobe_width_x(&map, &grid).unwrap()
    };
    let (w1, w2, w4) = (width(1000.0), width(2000.0), width(4000.0));
    assert!((w1 / w2 - 2.0).abs() < 0.2, "{w1} / {w2}");
    assert!((w2 / w4 - 2.0).abs() < 0.2, "{w2} / {w4}");
}

#[test]
fn clean_sc_separates_two_incoherent_sources() {
    let g = full_array();
    let sub = dnw_subarray(&g);
    let grid = plane_grid([1.5, 3.5], [-1.0, 1.0], 0.05);
    let a = grid.nearest(&Vec3::new(2.0, 0.0, 0.3));
    let b = grid.nearest(&Vec3::new(3.0, 0.0, -0.4));
    let s = scene(&[(grid.points[a], 1e-3), (grid.points[b], 2.5e-4)], MediumModel::default());
    for f in [2000.0, 6000.0] {
        let csm = &synthesize_csm(&s, &sub.positions_vec3(), &[f]).unwrap()[0];
        let map = clean_sc(csm, &steering(&grid, &sub, &s.medium, f), &grid, CleanScParams::default()).unwrap();
        let near = |t: usize| -> f64 {
            let c = Vec3::from(grid.points[t]);
            map.components
                .iter()
                .filter(|k| (Vec3::from(grid.points[k.index]) - c).norm() < 0.15)
                .map(|k| k.power)
                .sum()
        };
        assert!((db(near(a)) - db(1e-3)).abs() < 0.5, "{f} Hz source A {:.2} dB", db(near(a)) - db(1e-3));
        assert!((db(near(b)) - db(2.5e-4)).abs() < 0.5, "{f} Hz source B {:.2} dB", db(near(b)) - db(2.5e-4));
        let stray = map.total_component_power() - near(a) - near(b);
        assert!(stray < 0.05 * 2.5e-4, "{f} Hz: stray power {stray}");
    }
}

#[test]
fn clean_sc_without_diagonal_removal_matches_on_clean_data() {
    let g = full_array();
    let sub = dnw_subarray(&g);
    let grid = plane_grid([2.0, 2.8], [-0.4, 0.4], 0.05);
    let t = grid.nearest(&Vec3::new(2.4, 0.0, 0.0));
    let s = scene(&[(grid.points[t], 1e-3)], MediumModel::default());
    let csm = &synthesize_csm(&s, &sub.positions_vec3(), &[3000.0]).unwrap()[0];
    let st = steering(&grid, &sub, &s.medium, 3000.0);
    for dr in [true, false] {
        let params = CleanScParams {
            diagonal_removal: dr,
            ..CleanScParams::default()
        };
        let map = clean_sc(csm, &st, &grid, params).unwrap();
        assert!((db(map.total_component_power()) - db(1e-3)).abs() < 0.01);
        assert_eq!(map.components[0].index, t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn maps_scale_linearly_and_stay_level_true(ix in 0usize..21, iz in 0usize..21, scale in 0.01f64..100.0, f in 500.0f64..15_000.0) {
        let g = full_array();
        let sub = dnw_subarray(&g);
        let grid = plane_grid([1.9, 2.9], [-0.5, 0.5], 0.05);
        let t = iz * grid.nx + ix;
        let st = steering(&grid, &sub, &MediumModel::default(), f);
        let one = &synthesize_csm(&scene(&[(grid.points[t], 1e-4)], MediumModel::default()), &sub.positions_vec3(), &[f]).unwrap()[0];
        let many = &synthesize_csm(&scene(&[(grid.points[t], 1e-4 * scale)], MediumModel::default()), &sub.positions_vec3(), &[f]).unwrap()[0];
        let a = conventional_beamform(one, &st, &grid, true).unwrap();
        let b = conventional_beamform(many, &st, &grid, true).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((y - scale * x).abs() <= 1e-9 * scale * a.peak().1);
        }
        prop_assert!((db(a.values[t]) - db(1e-4)).abs() < 1e-6);
        let c = clean_sc(one, &st, &grid, CleanScParams::default()).unwrap();
        prop_assert!((db(c.total_component_power()) - db(1e-4)).abs() < 0.1);
    }
}
