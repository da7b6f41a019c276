#![allow(dead_code)]

use micarray::beamforming::{make_focus_grid, FocusGrid, GridRotation, GridSpec};
use micarray::geometry::{assemble_full_array, dnw_like_targets, sample_subarray, ArrayGeometry, SubArray, DNW_LIKE_APERTURE};
use micarray::Vec3;

pub fn full_array() -> ArrayGeometry {
    assemble_full_array(3, 3, 7).expect("full array")
}

pub fn dnw_subarray(g: &ArrayGeometry) -> SubArray {
    let targets: Vec<Vec3> = dnw_like_targets(DNW_LIKE_APERTURE, g.extent().center())
        .into_iter()
        .map(|p| g.lift(p))
        .collect();
    sample_subarray(g, &targets, 0.1).expect("sub-array")
}

/// Grid in the model plane `y = 0`.
pub fn plane_grid(x: [f64; 2], z: [f64; 2], spacing: f64) -> FocusGrid {
    make_focus_grid(GridSpec {
        x_range: x,
        z_range: z,
        spacing,
        y: 0.0,
        rotation: GridRotation::default(),
    })
    .expect("grid")
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Least-squares fit of `a cos + b sin + c` at a known frequency; returns
/// `(fitted power, residual power)`.
pub fn sine_fit(x: &[f64], freq: f64, rate: f64) -> (f64, f64) {
    let n = x.len();
    let w = 2.0 * std::f64::consts::PI * freq / rate;
    let basis: Vec<[f64; 3]> = (0..n)
        .map(|k| {
            let p = w * k as f64;
            [p.cos(), p.sin(), 1.0]
        })
        .collect();
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (b, &y) in basis.iter().zip(x) {
        let v = nalgebra::Vector3::from(*b);
        ata += v * v.transpose();
        atb += v * y;
    }
    let coef = ata.lu().solve(&atb).expect("fit");
    let mut sig = 0.0;
    let mut res = 0.0;
    for (b, &y) in basis.iter().zip(x) {
        let s = coef[0] * b[0] + coef[1] * b[1];
        sig += s * s;
        res += (y - s - coef[2]).powi(2);
    }
    (sig / n as f64, res / n as f64)
}
