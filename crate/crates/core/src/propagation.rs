//! Propagation models shared by scene synthesis and steering.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::Vec3;

/// Planar shear layer separating the flow region from the quiescent region.
/// `normal` points from the flow side toward the quiescent (array) side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShearLayer {
    pub point: [f64; 3],
    pub normal: [f64; 3],
}

impl ShearLayer {
    /// Plane `y = y0` with the flow on the `y < y0` side.
    pub fn at_y(y0: f64) -> Self {
        ShearLayer {
            point: [0.0, y0, 0.0],
            normal: [0.0, 1.0, 0.0],
        }
    }

    fn unit_normal(&self) -> Vec3 {
        Vec3::from(self.normal).normalize()
    }

    /// Signed distance, negative on the flow side.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - Vec3::from(self.point)).dot(&self.unit_normal())
    }
}

/// Propagation medium: uniform flow, air state and optional shear layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumModel {
    /// m/s
    #[serde(alias = "c")]
    pub speed_of_sound: f64,
    /// Flow direction times Mach number.
    #[serde(alias = "mach")]
    pub mach_vector: [f64; 3],
    /// °C
    #[serde(alias = "temp")]
    pub temperature: f64,
    /// %
    #[serde(alias = "rh")]
    pub relative_humidity: f64,
    /// kPa
    #[serde(default = "default_pressure")]
    pub pressure: f64,
    #[serde(default, alias = "shear_plane")]
    pub shear_layer: Option<ShearLayer>,
}

fn default_pressure() -> f64 {
    101.325
}

impl Default for MediumModel {
    fn default() -> Self {
        MediumModel {
            speed_of_sound: 343.0,
            mach_vector: [0.0; 3],
            temperature: 20.0,
            relative_humidity: 70.0,
            pressure: 101.325,
            shear_layer: None,
        }
    }
}

impl MediumModel {
    /// Uniform flow along +x with Mach number `mach`.
    pub fn with_flow_x(mut self, mach: f64) -> Self {
        self.mach_vector = [mach, 0.0, 0.0];
        self
    }

    pub fn with_shear_layer(mut self, layer: ShearLayer) -> Self {
        self.shear_layer = Some(layer);
        self
    }

    pub fn mach(&self) -> Vec3 {
        Vec3::from(self.mach_vector)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed_of_sound > 0.0) {
            return domain("speed of sound must be positive");
        }
        if !(self.mach().norm() < 1.0) {
            return domain("|Mach| must be below 1");
        }
        if !(0.0..=100.0).contains(&self.relative_humidity) {
            return domain("relative humidity must lie in [0, 100] %");
        }
        if !(self.pressure > 0.0) {
            return domain("static pressure must be positive");
        }
        if let Some(s) = &self.shear_layer {
            if !(Vec3::from(s.normal).norm() > 0.0) {
                return domain("shear layer normal must be non-zero");
            }
        }
        Ok(())
    }
}

/// Travel quantities between a source and a receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    /// s
    pub delay: f64,
    /// Free-field Green's function magnitude, `1/(4π r)` convention (1/m).
    pub amplitude: f64,
    /// `c · delay` (m)
    pub effective_distance: f64,
}

impl PathResult {
    /// Pressure amplitude relative to the level at 1 m, `4π · amplitude`.
    pub fn spreading(&self) -> f64 {
        4.0 * std::f64::consts::PI * self.amplitude
    }
}

/// Convected monopole Green's function for uniform flow.
///
/// With `Δ = receiver − source`, `β² = 1 − M²` and
/// `r̃ = sqrt((M·Δ)² + β²|Δ|²)`, the emission delay is `(−M·Δ + r̃)/(c β²)`
/// and the amplitude `1/(4π r̃)`.
pub fn green_convected(source: &Vec3, receiver: &Vec3, medium: &MediumModel) -> Result<PathResult> {
    let delta = receiver - source;
    let dist = delta.norm();
    if !(dist > 0.0) {
        return domain("source and receiver coincide");
    }
    let c = medium.speed_of_sound;
    let m = medium.mach();
    let beta2 = 1.0 - m.norm_squared();
    let md = m.dot(&delta);
    let r_tilde = (md * md + beta2 * dist * dist).sqrt();
    let delay = (r_tilde - md) / (c * beta2);
    Ok(PathResult {
        delay,
        amplitude: 1.0 / (4.0 * std::f64::consts::PI * r_tilde),
        effective_distance: c * delay,
    })
}

/// Pure-tone atmospheric absorption coefficient in dB/m (ISO 9613-1).
pub fn atmospheric_absorption(frequency: f64, medium: &MediumModel) -> f64 {
    if frequency <= 0.0 {
        return 0.0;
    }
    const T0: f64 = 293.15;
    const T01: f64 = 273.16;
    const P_R: f64 = 101.325;
    let t = medium.temperature + 273.15;
    let pa = medium.pressure / P_R;
    let tr = t / T0;
    let c_sat = -6.8346 * (T01 / t).powf(1.261) + 4.6151;
    let h = medium.relative_humidity * 10f64.powf(c_sat) / pa;
    let fr_o = pa * (24.0 + 4.04e4 * h * (0.02 + h) / (0.391 + h));
    let fr_n = pa * tr.powf(-0.5) * (9.0 + 280.0 * h * (-4.170 * (tr.powf(-1.0 / 3.0) - 1.0)).exp());
    let f2 = frequency * frequency;
    8.686
        * f2
        * (1.84e-11 / pa * tr.sqrt()
            + tr.powf(-2.5)
                * (0.01275 * (-2239.1 / t).exp() / (fr_o + f2 / fr_o)
                    + 0.1068 * (-3352.0 / t).exp() / (fr_n + f2 / fr_n)))
}

/// Amplitude factor `10^(−α d / 20)` over `distance`.
pub fn absorption_factor(frequency: f64, distance: f64, medium: &MediumModel) -> f64 {
    10f64.powf(-atmospheric_absorption(frequency, medium) * distance / 20.0)
}

/// How the amplitude of a refracted path is modelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmietAmplitude {
    /// Refracted delay, straight-ray convected amplitude.
    #[default]
    PhaseOnly,
    /// Spherical spreading over the summed segment lengths.
    Segmented,
}

/// Refracted path through a planar shear layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefractedPath {
    pub path: PathResult,
    /// Point where the ray crosses the shear layer.
    pub crossing: Vec3,
    pub iterations: usize,
}

struct TravelTime<'a> {
    source: Vec3,
    receiver: Vec3,
    medium: &'a MediumModel,
    origin: Vec3,
    e1: Vec3,
    e2: Vec3,
}

impl TravelTime<'_> {
    fn point(&self, uv: [f64; 2]) -> Vec3 {
        self.origin + self.e1 * uv[0] + self.e2 * uv[1]
    }

    fn time(&self, uv: [f64; 2]) -> f64 {
        let p = self.point(uv);
        let c = self.medium.speed_of_sound;
        let m = self.medium.mach();
        let beta2 = 1.0 - m.norm_squared();
        let d1 = p - self.source;
        let md = m.dot(&d1);
        let r_tilde = (md * md + beta2 * d1.norm_squared()).sqrt();
        (r_tilde - md) / (c * beta2) + (self.receiver - p).norm() / c
    }

    /// Gradient and Hessian of the travel time in plane coordinates.
    fn derivatives(&self, uv: [f64; 2]) -> (nalgebra::Vector2<f64>, nalgebra::Matrix2<f64>) {
        let p = self.point(uv);
        let c = self.medium.speed_of_sound;
        let m = self.medium.mach();
        let beta2 = 1.0 - m.norm_squared();
        let d1 = p - self.source;
        let md = m.dot(&d1);
        let r_tilde = (md * md + beta2 * d1.norm_squared()).sqrt();
        let q = (m * md + d1 * beta2) / r_tilde;
        let g1 = (q - m) / (c * beta2);
        let h1 = ((m * m.transpose() + nalgebra::Matrix3::identity() * beta2) / r_tilde
            - q * q.transpose() / r_tilde)
            / (c * beta2);
        let d2 = self.receiver - p;
        let l2 = d2.norm();
        let u2 = d2 / l2;
        let g2 = -u2 / c;
        let h2 = (nalgebra::Matrix3::identity() - u2 * u2.transpose()) / (c * l2);
        let g = g1 + g2;
        let h = h1 + h2;
        let e = nalgebra::Matrix3x2::from_columns(&[self.e1, self.e2]);
        let h_plane = e.transpose() * h * e;
        (nalgebra::Vector2::new(g.dot(&self.e1), g.dot(&self.e2)), h_plane)
    }
}

const AMIET_TOLERANCE: f64 = 1e-10;
const AMIET_MAX_ITER: usize = 100;

/// Planar shear-layer refraction correction.
///
/// Finds the crossing point on the shear layer where the total travel time
/// (convected segment source→crossing, quiescent straight segment
/// crossing→receiver) is stationary, using damped Newton iterations on the
/// two in-plane coordinates with step halving as fallback.
pub fn amiet_correction(
    source: &Vec3,
    receiver: &Vec3,
    medium: &MediumModel,
    amplitude: AmietAmplitude,
) -> Result<RefractedPath> {
    let layer = medium
        .shear_layer
        .ok_or_else(|| Error::Domain("medium has no shear layer".into()))?;
    let ds = layer.signed_distance(source);
    let dr = layer.signed_distance(receiver);
    if !(ds < 0.0) {
        return domain("source is not on the flow side of the shear layer");
    }
    if dr < 0.0 {
        return domain("receiver is not on the quiescent side of the shear layer");
    }
    let c = medium.speed_of_sound;
    let n = layer.unit_normal();

    if dr.abs() < 1e-12 {
        let path = green_convected(source, receiver, medium)?;
        return Ok(RefractedPath {
            path,
            crossing: *receiver,
            iterations: 0,
        });
    }

    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - n * seed.dot(&n)).normalize();
    let e2 = n.cross(&e1);
    // straight-ray crossing as the initial point
    let t = ds / (ds - dr);
    let straight = source + (receiver - source) * t;
    let origin = straight - n * (straight - Vec3::from(layer.point)).dot(&n);
    let problem = TravelTime {
        source: *source,
        receiver: *receiver,
        medium,
        origin,
        e1,
        e2,
    };

    let mut uv = [0.0, 0.0];
    let mut current = problem.time(uv);
    let mut converged = false;
    let mut iterations = 0;
    let mut last_step = f64::INFINITY;
    for it in 0..AMIET_MAX_ITER {
        iterations = it + 1;
        let (grad, h) = problem.derivatives(uv);
        let mut dir = match h.cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => -grad * (1.0 / (grad.norm() * c).max(1e-300)),
        };
        if !dir.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "shear-layer crossing search produced non-finite step at iteration {iterations}"
            )));
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = [uv[0] + step * dir[0], uv[1] + step * dir[1]];
            let tt = problem.time(trial);
            if tt <= current {
                uv = trial;
                current = tt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        dir *= step;
        last_step = dir.norm();
        if !accepted || last_step < AMIET_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "shear-layer crossing search did not converge after {iterations} iterations \
             (last step {last_step:.3e} m)"
        )));
    }
    let crossing = problem.point(uv);
    let delay = current;
    let amp = match amplitude {
        AmietAmplitude::PhaseOnly => green_convected(source, receiver, medium)?.amplitude,
        AmietAmplitude::Segmented => {
            // product of the segment spreadings 1/r̃₁ · 1/r₂, renormalised by r̃₁r₂/(r̃₁+r₂)
            let first = green_convected(source, &crossing, medium)?;
            let r1 = 1.0 / (4.0 * std::f64::consts::PI * first.amplitude);
            let r2 = (receiver - crossing).norm();
            1.0 / (4.0 * std::f64::consts::PI * (r1 + r2))
        }
    };
    Ok(RefractedPath {
        path: PathResult {
            delay,
            amplitude: amp,
            effective_distance: c * delay,
        },
        crossing,
        iterations,
    })
}

/// Path model selection used by synthesis and steering.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathModel {
    /// Convected straight ray, ignoring any shear layer.
    #[default]
    Convected,
    /// Refracted path through the medium's shear layer.
    Amiet(AmietAmplitude),
}

impl PathModel {
    /// Uses the Amiet path when the medium has a shear layer.
    pub fn for_medium(medium: &MediumModel) -> Self {
        if medium.shear_layer.is_some() {
            PathModel::Amiet(AmietAmplitude::PhaseOnly)
        } else {
            PathModel::Convected
        }
    }
}

pub fn propagate(source: &Vec3, receiver: &Vec3, medium: &MediumModel, model: PathModel) -> Result<PathResult> {
    match model {
        PathModel::Convected => green_convected(source, receiver, medium),
        PathModel::Amiet(a) => Ok(amiet_correction(source, receiver, medium, a)?.path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quiet() -> MediumModel {
        MediumModel::default()
    }

    #[test]
    fn quiescent_limit() {
        let s = Vec3::new(0.0, 0.0, 0.0);
        let r = Vec3::new(1.0, 2.0, 2.0);
        let p = green_convected(&s, &r, &quiet()).unwrap();
        assert!((p.delay - 3.0 / 343.0).abs() < 1e-15);
        assert!((p.amplitude - 1.0 / (4.0 * std::f64::consts::PI * 3.0)).abs() < 1e-15);
        assert_eq!(p.effective_distance, 343.0 * p.delay);
    }

    #[test]
    fn downstream_on_axis() {
        let m = quiet().with_flow_x(0.2);
        let p = green_convected(&Vec3::zeros(), &Vec3::new(2.0, 0.0, 0.0), &m).unwrap();
        assert!((p.delay - 2.0 / (343.0 * 1.2)).abs() < 1e-15);
    }

    #[test]
    fn coincident_points() {
        let r = green_convected(&Vec3::zeros(), &Vec3::zeros(), &quiet());
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    /// Emission-time root of |Δ − c M τ| = c τ by bisection.
    fn emission_delay_oracle(s: &Vec3, r: &Vec3, m: &MediumModel) -> f64 {
        let c = m.speed_of_sound;
        let mv = m.mach();
        let f = |tau: f64| (r - s - mv * (c * tau)).norm() - c * tau;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn convected_delay_matches_root_finding() {
        let m = MediumModel {
            mach_vector: [0.2, 0.0, 0.0],
            ..quiet()
        };
        for (s, r) in [
            (Vec3::new(2.4, 0.0, 0.0), Vec3::new(3.0, 3.39, -0.5)),
            (Vec3::new(1.0, 0.2, 0.5), Vec3::new(0.2, 3.39, 1.0)),
            (Vec3::new(0.0, 0.0, 0.0), Vec3::new(-2.0, 0.1, 0.0)),
        ] {
            let got = green_convected(&s, &r, &m).unwrap().delay;
            let want = emission_delay_oracle(&s, &r, &m);
            assert!((got - want).abs() < 1e-13, "{got} vs {want}");
        }
    }

    #[test]
    fn absorption_zero_and_monotone() {
        let m = quiet();
        assert_eq!(atmospheric_absorption(0.0, &m), 0.0);
        let mut prev = 0.0;
        let mut f = 50.0;
        while f <= 20_000.0 {
            let a = atmospheric_absorption(f, &m);
            assert!(a >= prev);
            prev = a;
            f *= 1.05;
        }
    }

    #[test]
    fn absorption_matches_iso_table() {
        // ISO 9613-1 tabulated value at 1 kHz, 20 °C, 70 % RH, 101.325 kPa: 4.98 dB/km
        let a = atmospheric_absorption(1000.0, &quiet()) * 1000.0;
        assert!((a / 4.98 - 1.0).abs() < 0.05, "{a}");
    }

    fn amiet_medium(mach: f64) -> MediumModel {
        quiet().with_flow_x(mach).with_shear_layer(ShearLayer::at_y(1.5))
    }

    #[test]
    fn amiet_without_flow_is_straight() {
        let s = Vec3::new(2.4, 0.0, 0.0);
        let r = Vec3::new(3.0, 3.39, 0.2);
        let m = amiet_medium(0.0);
        let a = amiet_correction(&s, &r, &m, AmietAmplitude::Segmented).unwrap();
        let g = green_convected(&s, &r, &m).unwrap();
        assert!((a.path.delay - g.delay).abs() < 1e-9);
        assert!((a.path.amplitude / g.amplitude - 1.0).abs() < 1e-9);
    }

    #[test]
    fn amiet_receiver_on_plane() {
        let s = Vec3::new(2.4, 0.0, 0.0);
        let r = Vec3::new(3.0, 1.5, 0.0);
        let m = amiet_medium(0.2);
        let a = amiet_correction(&s, &r, &m, AmietAmplitude::PhaseOnly).unwrap();
        let g = green_convected(&s, &r, &m).unwrap();
        assert_eq!(a.path.delay, g.delay);
    }

    #[test]
    fn amiet_rejects_same_side() {
        let m = amiet_medium(0.2);
        let r = amiet_correction(&Vec3::new(0.0, 0.0, 0.0), &Vec3::new(1.0, 1.0, 0.0), &m, AmietAmplitude::PhaseOnly);
        assert!(matches!(r, Err(Error::Domain(_))));
        let none = amiet_correction(&Vec3::zeros(), &Vec3::new(0.0, 3.0, 0.0), &quiet(), AmietAmplitude::PhaseOnly);
        assert!(matches!(none, Err(Error::Domain(_))));
    }

    #[test]
    fn amiet_crossing_is_stationary() {
        let s = Vec3::new(2.4, 0.0, 0.0);
        let r = Vec3::new(3.0, 3.39, 0.7);
        let m = amiet_medium(0.2);
        let a = amiet_correction(&s, &r, &m, AmietAmplitude::PhaseOnly).unwrap();
        let total = |p: Vec3| green_convected(&s, &p, &m).unwrap().delay + (r - p).norm() / m.speed_of_sound;
        let base = total(a.crossing);
        assert!((base - a.path.delay).abs() < 1e-15);
        for (dx, dz) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            assert!(total(a.crossing + Vec3::new(dx, 0.0, dz)) >= base - 1e-15);
        }
    }

    proptest! {
        #[test]
        fn delay_is_lipschitz_in_receiver(
            rx in -3.0f64..3.0, ry in 0.5f64..4.0, rz in -2.0f64..2.0,
            dx in -0.05f64..0.05, dy in -0.05f64..0.05, dz in -0.05f64..0.05,
            mach in 0.0f64..0.3,
        ) {
            let m = quiet().with_flow_x(mach);
            let s = Vec3::new(0.0, 0.0, 0.0);
            let r = Vec3::new(rx, ry, rz);
            let d = Vec3::new(dx, dy, dz);
            let a = green_convected(&s, &r, &m).unwrap().delay;
            let b = green_convected(&s, &(r + d), &m).unwrap().delay;
            prop_assert!(a > 0.0 && b > 0.0);
            prop_assert!((a - b).abs() <= d.norm() / (m.speed_of_sound * (1.0 - mach)) + 1e-15);
        }
    }
}
