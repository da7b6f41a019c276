//! Focus grids, level-true steering vectors, conventional beamforming with
//! diagonal removal and CLEAN-SC deconvolution.

use nalgebra::{Rotation3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::propagation::{absorption_factor, propagate, AmietAmplitude, MediumModel, PathModel};
use crate::spectral::CrossSpectralMatrix;
use crate::Vec3;

/// In-plane rotations of a focus grid (degrees): first about y (wing delta
/// angle), then about x (angle of attack), both around `pivot`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRotation {
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub aoa: f64,
    #[serde(default)]
    pub pivot: [f64; 3],
}

/// Planar grid description. Ranges are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: [f64; 2],
    pub z_range: [f64; 2],
    pub spacing: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default)]
    pub rotation: GridRotation,
}

/// Regular planar focus grid; point `iz * nx + ix` sits at
/// `(x0 + ix·Δ, y, z0 + iz·Δ)` before rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusGrid {
    pub spec: GridSpec,
    pub nx: usize,
    pub nz: usize,
    pub points: Vec<[f64; 3]>,
}

fn axis_count(range: [f64; 2], spacing: f64) -> usize {
    ((range[1] - range[0]) / spacing + 1e-9).floor() as usize + 1
}

pub fn make_focus_grid(spec: GridSpec) -> Result<FocusGrid> {
    let finite = spec.x_range.iter().chain(&spec.z_range).all(|v| v.is_finite()) && spec.y.is_finite();
    if !(spec.spacing > 0.0) || !finite {
        return domain("grid spacing must be positive and ranges finite");
    }
    if spec.x_range[1] < spec.x_range[0] || spec.z_range[1] < spec.z_range[0] {
        return domain("grid ranges must be ascending");
    }
    let nx = axis_count(spec.x_range, spec.spacing);
    let nz = axis_count(spec.z_range, spec.spacing);
    let r = spec.rotation;
    let rot = Rotation3::from_axis_angle(&Vector3::x_axis(), r.aoa.to_radians())
        * Rotation3::from_axis_angle(&Vector3::y_axis(), r.delta.to_radians());
    let pivot = Vec3::from(r.pivot);
    let mut points = Vec::with_capacity(nx * nz);
    for iz in 0..nz {
        for ix in 0..nx {
            let p = Vec3::new(
                spec.x_range[0] + ix as f64 * spec.spacing,
                spec.y,
                spec.z_range[0] + iz as f64 * spec.spacing,
            );
            let q = rot * (p - pivot) + pivot;
            points.push([q.x, q.y, q.z]);
        }
    }
    Ok(FocusGrid { spec, nx, nz, points })
}

impl FocusGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        Vec3::from(self.points[i])
    }

    /// Unrotated in-plane coordinates `(x, z)` of point `i`.
    pub fn plane_coords(&self, i: usize) -> [f64; 2] {
        let (ix, iz) = (i % self.nx, i / self.nx);
        [
            self.spec.x_range[0] + ix as f64 * self.spec.spacing,
            self.spec.z_range[0] + iz as f64 * self.spec.spacing,
        ]
    }

    /// Index of the grid point closest to `p`.
    pub fn nearest(&self, p: &Vec3) -> usize {
        self.points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, (Vec3::from(*q) - p).norm_squared()))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
            .0
    }
}

/// Where `r_{t,0}` is measured to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePoint {
    /// Arithmetic mean of the sub-array positions.
    #[default]
    GeometricMean,
    Point([f64; 3]),
}

/// Medium effects included in the steering vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corrections {
    #[serde(default = "yes")]
    pub convection: bool,
    #[serde(default = "yes")]
    pub absorption: bool,
    /// Refract through the medium's shear layer, if it has one.
    #[serde(default = "yes")]
    pub amiet: bool,
}

fn yes() -> bool {
    true
}

impl Default for Corrections {
    fn default() -> Self {
        Corrections {
            convection: true,
            absorption: true,
            amiet: true,
        }
    }
}

/// Frequency-independent travel quantities between grid and sensors.
#[derive(Debug, Clone)]
pub struct SteeringGeometry {
    pub n_sensors: usize,
    pub n_points: usize,
    /// `tau[t * M + m]`, s
    pub tau: Vec<f64>,
    /// effective distances `c·τ`, same layout
    pub r: Vec<f64>,
    pub tau0: Vec<f64>,
    pub r0: Vec<f64>,
    pub medium: MediumModel,
    pub corrections: Corrections,
    pub reference: ReferencePoint,
}

impl SteeringGeometry {
    pub fn new(
        grid: &FocusGrid,
        sensors: &[Vec3],
        medium: &MediumModel,
        corrections: Corrections,
        reference: ReferencePoint,
    ) -> Result<Self> {
        medium.validate()?;
        if sensors.is_empty() {
            return domain("steering needs at least one sensor");
        }
        let mut med = *medium;
        if !corrections.convection {
            med.mach_vector = [0.0; 3];
        }
        let model = if corrections.amiet && med.shear_layer.is_some() {
            PathModel::Amiet(AmietAmplitude::PhaseOnly)
        } else {
            PathModel::Convected
        };
        let ref_point = match reference {
            ReferencePoint::GeometricMean => sensors.iter().fold(Vec3::zeros(), |a, p| a + p) / sensors.len() as f64,
            ReferencePoint::Point(p) => Vec3::from(p),
        };
        let m = sensors.len();
        let c = med.speed_of_sound;
        let rows: Vec<(Vec<f64>, f64)> = grid
            .points
            .par_iter()
            .map(|p| {
                let p = Vec3::from(*p);
                let taus = sensors
                    .iter()
                    .map(|s| {
                        propagate(&p, s, &med, model)
                            .map(|r| r.delay)
                            .map_err(|e| Error::Domain(format!("focus point {p:?}: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let t0 = propagate(&p, &ref_point, &med, model)?.delay;
                Ok((taus, t0))
            })
            .collect::<Result<_>>()?;
        let mut tau = Vec::with_capacity(m * rows.len());
        let mut tau0 = Vec::with_capacity(rows.len());
        for (t, t0) in rows {
            tau.extend(t);
            tau0.push(t0);
        }
        Ok(SteeringGeometry {
            n_sensors: m,
            n_points: grid.len(),
            r: tau.iter().map(|t| c * t).collect(),
            r0: tau0.iter().map(|t| c * t).collect(),
            tau,
            tau0,
            medium: med,
            corrections,
            reference,
        })
    }

    /// Formulation III steering vectors at one frequency.
    pub fn at_frequency(&self, frequency: f64) -> Result<SteeringSet> {
        if !(frequency > 0.0) {
            return domain("steering frequency must be positive");
        }
        let m = self.n_sensors;
        let w = std::f64::consts::TAU * frequency;
        let mut vectors = vec![Complex64::new(0.0, 0.0); m * self.n_points];
        let mut level_scale = vec![0.0; self.n_points];
        let mut dr_scale = vec![0.0; self.n_points];
        vectors
            .par_chunks_mut(m)
            .zip(level_scale.par_iter_mut())
            .zip(dr_scale.par_iter_mut())
            .enumerate()
            .for_each(|(t, ((h, ls), ds))| {
                let r0 = self.r0[t];
                let mut norm2 = 0.0;
                let mut norm4 = 0.0;
                for (k, hk) in h.iter_mut().enumerate() {
                    let r = self.r[t * m + k];
                    let mut a = 1.0 / r;
                    if self.corrections.absorption {
                        a *= absorption_factor(frequency, r, &self.medium);
                    }
                    norm2 += a * a;
                    norm4 += a.powi(4);
                    *hk = Complex64::from_polar(a, -w * (self.tau[t * m + k] - self.tau0[t]));
                }
                for hk in h.iter_mut() {
                    *hk /= r0 * norm2;
                }
                *ls = r0 * r0;
                let rho = norm4 / (norm2 * norm2);
                *ds = if rho < 1.0 - 1e-12 { 1.0 / (1.0 - rho) } else { 0.0 };
            });
        Ok(SteeringSet {
            frequency,
            n_sensors: m,
            n_points: self.n_points,
            vectors,
            r0: self.r0.clone(),
            level_scale,
            dr_scale,
            corrections: self.corrections,
        })
    }
}

/// Steering vectors `h_t` for every grid point at one frequency.
///
/// `h_{t,m} = g_{t,m} / (r_{t,0} ‖g_t‖²)` with `g_{t,m} = a_m e^{−jω(τ_{t,m} − τ_{t,0})} / r_{t,m}`,
/// `r = c·τ` and `a_m` the optional absorption factor. For the pure spreading
/// case this is `[r_{t,m} r_{t,0} Σ_l r_{t,l}⁻²]⁻¹ e^{−jω(τ_{t,m}−τ_{t,0})}`.
#[derive(Debug, Clone)]
pub struct SteeringSet {
    pub frequency: f64,
    pub n_sensors: usize,
    pub n_points: usize,
    /// `vectors[t * M + m]`
    pub vectors: Vec<Complex64>,
    pub r0: Vec<f64>,
    /// `r_{t,0}²`: converts `hᴴCh` (pressure at the reference point) to 1 m.
    pub level_scale: Vec<f64>,
    /// Level correction under diagonal removal, `1 / (1 − Σ|h|⁴/‖h‖⁴)`.
    pub dr_scale: Vec<f64>,
    pub corrections: Corrections,
}

impl SteeringSet {
    pub fn vector(&self, t: usize) -> &[Complex64] {
        &self.vectors[t * self.n_sensors..(t + 1) * self.n_sensors]
    }

    fn scale(&self, t: usize, dr: bool) -> f64 {
        if dr {
            self.level_scale[t] * self.dr_scale[t]
        } else {
            self.level_scale[t]
        }
    }
}

pub fn steering_formulation_iii(
    grid: &FocusGrid,
    sensors: &[Vec3],
    frequency: f64,
    medium: &MediumModel,
    corrections: Corrections,
    reference: ReferencePoint,
) -> Result<SteeringSet> {
    SteeringGeometry::new(grid, sensors, medium, corrections, reference)?.at_frequency(frequency)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Conventional,
    CleanSc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanComponent {
    pub index: usize,
    /// Pa² (or Pa²/Hz) at 1 m
    pub power: f64,
}

/// Source powers referenced to 1 m on a focus grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformingMap {
    pub frequency: f64,
    pub kind: MapKind,
    pub diagonal_removal: bool,
    pub nx: usize,
    pub nz: usize,
    /// Signed values; negative entries can occur with diagonal removal.
    pub values: Vec<f64>,
    /// Points whose value was negative.
    pub negative: usize,
    pub components: Vec<CleanComponent>,
    /// Dirty map of the degraded CSM after the last accepted iteration.
    pub residual: Option<Vec<f64>>,
}

impl BeamformingMap {
    pub fn zeros(frequency: f64, kind: MapKind, diagonal_removal: bool, grid: &FocusGrid) -> Self {
        BeamformingMap {
            frequency,
            kind,
            diagonal_removal,
            nx: grid.nx,
            nz: grid.nz,
            values: vec![0.0; grid.len()],
            negative: 0,
            components: Vec::new(),
            residual: None,
        }
    }

    /// Values with negatives clamped to zero.
    pub fn clamped(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.max(0.0)).collect()
    }

    pub fn peak(&self) -> (usize, f64) {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
    }

    pub fn total_component_power(&self) -> f64 {
        self.components.iter().map(|c| c.power).sum()
    }
}

struct Dense {
    n: usize,
    data: Vec<Complex64>,
}

impl Dense {
    fn from_csm(c: &CrossSpectralMatrix) -> Self {
        let n = c.size();
        let mut data = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = c.get(i, j);
            }
        }
        Dense { n, data }
    }

    fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `hᴴ A h`, skipping the diagonal if `dr`.
    fn quad(&self, h: &[Complex64], dr: bool) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let row = self.row(i);
            let mut s = Complex64::new(0.0, 0.0);
            for (j, (a, hj)) in row.iter().zip(h).enumerate() {
                if !(dr && i == j) {
                    s += a * hj;
                }
            }
            acc += (h[i].conj() * s).re;
        }
        acc
    }

    fn mul(&self, h: &[Complex64], dr: bool) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(h)
                    .enumerate()
                    .filter(|(j, _)| !(dr && i == *j))
                    .map(|(_, (a, b))| a * b)
                    .sum()
            })
            .collect()
    }

    fn norm1(&self, dr: bool) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if !(dr && i == j) {
                    s += self.data[i * self.n + j].norm();
                }
            }
        }
        s
    }
}

fn check_dims(csm: &CrossSpectralMatrix, steering: &SteeringSet) -> Result<()> {
    if csm.size() != steering.n_sensors {
        return domain(format!(
            "CSM has {} channels but the steering set {} sensors",
            csm.size(),
            steering.n_sensors
        ));
    }
    Ok(())
}

fn dirty_map(c: &Dense, steering: &SteeringSet, dr: bool) -> Vec<f64> {
    (0..steering.n_points)
        .into_par_iter()
        .map(|t| c.quad(steering.vector(t), dr) * steering.scale(t, dr))
        .collect()
}

/// `b_t = r_{t,0}² · h_tᴴ C h_t`, with the diagonal of `C` removed and the
/// level renormalised when `diagonal_removal` is set.
pub fn conventional_beamform(
    csm: &CrossSpectralMatrix,
    steering: &SteeringSet,
    grid: &FocusGrid,
    diagonal_removal: bool,
) -> Result<BeamformingMap> {
    check_dims(csm, steering)?;
    if grid.len() != steering.n_points {
        return domain("grid and steering set differ in size");
    }
    let values = dirty_map(&Dense::from_csm(csm), steering, diagonal_removal);
    let negative = values.iter().filter(|v| **v < 0.0).count();
    Ok(BeamformingMap {
        values,
        negative,
        ..BeamformingMap::zeros(csm.frequency, MapKind::Conventional, diagonal_removal, grid)
    })
}

/// CLEAN-SC parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanScParams {
    #[serde(default = "default_gain")]
    pub loop_gain: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    /// Stop once the dirty-map peak falls below this fraction of the first peak.
    #[serde(default = "default_threshold")]
    pub stop_threshold: f64,
    #[serde(default = "default_inner")]
    pub inner_iterations: usize,
    #[serde(default = "yes")]
    pub diagonal_removal: bool,
}

fn default_gain() -> f64 {
    1.0
}
fn default_iterations() -> usize {
    100
}
fn default_threshold() -> f64 {
    1e-3
}
fn default_inner() -> usize {
    20
}

impl Default for CleanScParams {
    fn default() -> Self {
        CleanScParams {
            loop_gain: default_gain(),
            max_iterations: default_iterations(),
            stop_threshold: default_threshold(),
            inner_iterations: default_inner(),
            diagonal_removal: true,
        }
    }
}

/// CLEAN-SC: removes, per iteration, the part of the CSM coherent with the
/// dirty-map peak and records it as a point component.
///
/// The map values are the component powers deposited at their grid points;
/// `residual` holds the dirty map of what is left.
pub fn clean_sc(
    csm: &CrossSpectralMatrix,
    steering: &SteeringSet,
    grid: &FocusGrid,
    params: CleanScParams,
) -> Result<BeamformingMap> {
    check_dims(csm, steering)?;
    if !(params.loop_gain > 0.0 && params.loop_gain <= 1.0) {
        return domain("loop gain must lie in (0, 1]");
    }
    if !csm.is_finite() {
        return domain("CSM contains non-finite values");
    }
    let dr = params.diagonal_removal;
    let mut d = Dense::from_csm(csm);
    let mut out = BeamformingMap::zeros(csm.frequency, MapKind::CleanSc, dr, grid);
    let mut dirty = dirty_map(&d, steering, dr);
    let mut norm = d.norm1(dr);
    let mut first_peak = None;
    for _ in 0..params.max_iterations {
        let (t, peak) = dirty
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        if !(peak > 0.0) {
            break;
        }
        let p0 = *first_peak.get_or_insert(peak);
        if peak <= params.stop_threshold * p0 {
            break;
        }
        let w = steering.vector(t);
        let p = d.quad(w, dr);
        if !(p > 0.0) {
            break;
        }
        let dw = d.mul(w, dr);
        let mut h: Vec<Complex64> = dw.iter().map(|v| v / p).collect();
        if dr {
            let mut hw = vec![Complex64::new(0.0, 0.0); h.len()];
            for _ in 0..params.inner_iterations {
                // H = diag(h hᴴ)
                let mut whw = 0.0;
                for k in 0..h.len() {
                    let hk2 = h[k].norm_sqr();
                    hw[k] = w[k] * hk2;
                    whw += w[k].norm_sqr() * hk2;
                }
                let s = 1.0 / (1.0 + whw).sqrt();
                for k in 0..h.len() {
                    h[k] = (dw[k] / p + hw[k]) * s;
                }
            }
        }
        let g = params.loop_gain * p;
        let mut trial = d.data.clone();
        for i in 0..d.n {
            for j in 0..d.n {
                trial[i * d.n + j] -= h[i] * h[j].conj() * g;
            }
        }
        let previous = std::mem::replace(&mut d.data, trial);
        let new_norm = d.norm1(dr);
        if new_norm > norm {
            d.data = previous;
            break;
        }
        norm = new_norm;
        let power = params.loop_gain * peak;
        if !power.is_finite() {
            return Err(Error::Numerical("CLEAN-SC produced a non-finite component".into()));
        }
        out.values[t] += power;
        match out.components.iter_mut().find(|c| c.index == t) {
            Some(c) => c.power += power,
            None => out.components.push(CleanComponent { index: t, power }),
        }
        dirty = dirty_map(&d, steering, dr);
    }
    out.residual = Some(dirty);
    Ok(out)
}

/// Spreads each component over a normalised Gaussian of width `sigma` (m)
/// in grid coordinates; total power is preserved.
pub fn render_gaussian(map: &BeamformingMap, grid: &FocusGrid, sigma: f64) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    if !(sigma > 0.0) {
        for c in &map.components {
            out[c.index] += c.power;
        }
        return out;
    }
    for c in &map.components {
        let [cx, cz] = grid.plane_coords(c.index);
        let weights: Vec<f64> = (0..grid.len())
            .map(|i| {
                let [x, z] = grid.plane_coords(i);
                (-((x - cx).powi(2) + (z - cz).powi(2)) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for (o, w) in out.iter_mut().zip(&weights) {
            *o += c.power * w / total;
        }
    }
    out
}

/// Width (m) of the −3 dB main lobe along the grid x axis through the peak,
/// with linear interpolation of the crossings in dB.
pub fn main_lobe_width_x(map: &BeamformingMap, grid: &FocusGrid) -> Option<f64> {
    let (p, peak) = map.peak();
    if !(peak > 0.0) {
        return None;
    }
    let (ix, iz) = (p % grid.nx, p / grid.nx);
    let row: Vec<f64> = (0..grid.nx)
        .map(|i| {
            let v = map.values[iz * grid.nx + i];
            if v > 0.0 {
                10.0 * (v / peak).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let crossing = |step: isize| -> Option<f64> {
        let mut i = ix as isize;
        loop {
            let j = i + step;
            if j < 0 || j >= grid.nx as isize {
                return None;
            }
            let (a, b) = (row[i as usize], row[j as usize]);
            if b <= -3.0 {
                let frac = if b.is_finite() { (a + 3.0) / (a - b) } else { 0.5 };
                return Some((i as f64 + step as f64 * frac - ix as f64).abs() * grid.spec.spacing);
            }
            i = j;
        }
    };
    Some(crossing(-1)? + crossing(1)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{synthesize_csm, Scene, Source, SourceSpectrum};

    fn small_grid() -> FocusGrid {
        make_focus_grid(GridSpec {
            x_range: [-0.5, 0.5],
            z_range: [-0.5, 0.5],
            spacing: 0.05,
            y: 0.0,
            rotation: GridRotation::default(),
        })
        .unwrap()
    }

    fn spiral_mics(n: usize, d: f64) -> Vec<Vec3> {
        crate::geometry::fermat_spiral(n, d, [0.0, 0.0])
            .unwrap()
            .into_iter()
            .map(|p| Vec3::new(p[0], 2.0, p[1]))
            .collect()
    }

    #[test]
    fn grid_counts() {
        let g = make_focus_grid(GridSpec {
            x_range: [1.0, 4.0],
            z_range: [-3.0, 2.0],
            spacing: 0.02,
            y: 0.0,
            rotation: GridRotation::default(),
        })
        .unwrap();
        assert_eq!((g.nx, g.nz, g.len()), (151, 251, 37_901));
        let g = make_focus_grid(GridSpec {
            x_range: [0.0, 1.0],
            z_range: [0.0, 1.0],
            spacing: 1.0,
            y: 0.0,
            rotation: GridRotation::default(),
        })
        .unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.points.iter().all(|p| p[1] == 0.0));
    }

    #[test]
    fn rotation_about_pivot() {
        let mut spec = small_grid().spec;
        spec.rotation = GridRotation {
            delta: 0.0,
            aoa: 90.0,
            pivot: [0.0; 3],
        };
        let g = make_focus_grid(spec).unwrap();
        // rotating the z axis by 90° about x moves it onto −y
        let p = g.point(g.len() - 1);
        assert!((p.y + 0.5).abs() < 1e-12 && p.z.abs() < 1e-12);
    }

    #[test]
    fn steering_reductions() {
        let grid = make_focus_grid(GridSpec {
            x_range: [0.0, 0.0],
            z_range: [0.0, 0.0],
            spacing: 1.0,
            y: 0.0,
            rotation: GridRotation::default(),
        })
        .unwrap();
        let medium = MediumModel::default();
        let c = Corrections {
            absorption: false,
            ..Default::default()
        };
        let one = [Vec3::new(1.0, 2.0, 0.5)];
        let reference = ReferencePoint::Point([0.0, 3.0, 0.0]);
        let s = steering_formulation_iii(&grid, &one, 1000.0, &medium, c, reference).unwrap();
        let rm = one[0].norm();
        assert!((s.vectors[0].norm() - rm / 3.0).abs() < 1e-12);

        let ring: Vec<Vec3> = (0..6)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 6.0;
                Vec3::new(a.cos(), 2.0, a.sin())
            })
            .collect();
        let s = steering_formulation_iii(&grid, &ring, 1000.0, &medium, c, reference).unwrap();
        let r = 5f64.sqrt();
        for h in &s.vectors {
            assert!((h.norm() - r / (6.0 * 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn level_truth_and_dr_invariance() {
        let grid = small_grid();
        let mics = spiral_mics(64, 1.5);
        let medium = MediumModel::default();
        let t = grid.nearest(&Vec3::new(0.1, 0.0, -0.2));
        let src = Source::monopole(grid.point(t), SourceSpectrum::White { psd: 0.04 });
        let scene = Scene::new(vec![src], medium);
        let csm = synthesize_csm(&scene, &mics, &[3000.0]).unwrap().remove(0);
        let steer = steering_formulation_iii(&grid, &mics, 3000.0, &medium, Corrections::default(), Default::default())
            .unwrap();
        for dr in [false, true] {
            let map = conventional_beamform(&csm, &steer, &grid, dr).unwrap();
            let (p, v) = map.peak();
            assert_eq!(p, t);
            assert!((10.0 * (v / 0.04).log10()).abs() < 1e-6, "dr={dr}: {v}");
        }
        let mut noisy = csm.clone();
        noisy.add_diagonal(&(0..64).map(|i| 0.01 * i as f64).collect::<Vec<_>>());
        let a = conventional_beamform(&csm, &steer, &grid, true).unwrap();
        let b = conventional_beamform(&noisy, &steer, &grid, true).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn zero_csm_gives_zero_map_and_no_components() {
        let grid = small_grid();
        let mics = spiral_mics(16, 1.0);
        let steer = steering_formulation_iii(
            &grid,
            &mics,
            2000.0,
            &MediumModel::default(),
            Corrections::default(),
            Default::default(),
        )
        .unwrap();
        let csm = CrossSpectralMatrix::zeros(2000.0, 16);
        let map = conventional_beamform(&csm, &steer, &grid, false).unwrap();
        assert!(map.values.iter().all(|v| *v == 0.0));
        let clean = clean_sc(&csm, &steer, &grid, CleanScParams::default()).unwrap();
        assert!(clean.components.is_empty());
    }

    #[test]
    fn clean_sc_single_source() {
        let grid = small_grid();
        let mics = spiral_mics(64, 1.5);
        let medium = MediumModel::default();
        let t = grid.nearest(&Vec3::new(-0.2, 0.0, 0.1));
        let scene = Scene::new(
            vec![Source::monopole(grid.point(t), SourceSpectrum::White { psd: 1.0 })],
            medium,
        );
        let csm = synthesize_csm(&scene, &mics, &[4000.0]).unwrap().remove(0);
        let steer = steering_formulation_iii(&grid, &mics, 4000.0, &medium, Corrections::default(), Default::default())
            .unwrap();
        for dr in [false, true] {
            let params = CleanScParams {
                diagonal_removal: dr,
                ..Default::default()
            };
            let map = clean_sc(&csm, &steer, &grid, params).unwrap();
            assert_eq!(map.components[0].index, t);
            let total = map.total_component_power();
            assert!((10.0 * total.log10()).abs() < 0.1, "dr={dr}: {total}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let grid = small_grid();
        let mics = spiral_mics(8, 1.0);
        let steer = steering_formulation_iii(
            &grid,
            &mics,
            1000.0,
            &MediumModel::default(),
            Corrections::default(),
            Default::default(),
        )
        .unwrap();
        let csm = CrossSpectralMatrix::zeros(1000.0, 9);
        assert!(conventional_beamform(&csm, &steer, &grid, false).is_err());
        assert!(clean_sc(
            &csm,
            &steer,
            &grid,
            CleanScParams {
                loop_gain: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn coincident_focus_point_rejected() {
        let grid = small_grid();
        let mics = [grid.point(0), Vec3::new(0.0, 2.0, 0.0)];
        assert!(steering_formulation_iii(
            &grid,
            &mics,
            1000.0,
            &MediumModel::default(),
            Corrections::default(),
            Default::default()
        )
        .is_err());
    }
}
