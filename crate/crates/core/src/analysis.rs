//! Region integration, directivity surfaces and far-field projection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{
    clean_sc, conventional_beamform, BeamformingMap, CleanScParams, Corrections, FocusGrid, MapKind, ReferencePoint,
    SteeringGeometry,
};
use crate::error::{domain, Result};
use crate::geometry::{observation_angles, pitch_subarray_series, subarray_stats, ArrayGeometry, SubArray};
use crate::propagation::MediumModel;
use crate::spectral::{band_integrate, BandType, CrossSpectralMatrix, Spectrum};
use crate::synthesis::{synthesize_csm, Scene};
use crate::{power_db, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RoiShape {
    /// Axis-aligned box in unrotated grid coordinates `(x, z)`.
    Box { x: [f64; 2], z: [f64; 2] },
    /// Simple polygon in unrotated grid coordinates.
    Polygon { vertices: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionOfInterest {
    #[serde(default)]
    pub label: String,
    pub shape: RoiShape,
}

impl RegionOfInterest {
    pub fn rect(label: &str, x: [f64; 2], z: [f64; 2]) -> Self {
        RegionOfInterest {
            label: label.to_string(),
            shape: RoiShape::Box { x, z },
        }
    }

    pub fn area(&self) -> f64 {
        match &self.shape {
            RoiShape::Box { x, z } => (x[1] - x[0]) * (z[1] - z[0]),
            RoiShape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n)
                    .map(|i| {
                        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                        a[0] * b[1] - b[0] * a[1]
                    })
                    .sum::<f64>()
                    .abs()
                    / 2.0
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.shape {
            RoiShape::Polygon { vertices } => vertices.len() >= 3 && self.area() > 0.0,
            RoiShape::Box { .. } => self.area() > 0.0,
        };
        if ok {
            Ok(())
        } else {
            domain(format!("region '{}' has no area", self.label))
        }
    }

    /// Boundary points count as inside.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match &self.shape {
            RoiShape::Box { x, z } => p[0] >= x[0] && p[0] <= x[1] && p[1] >= z[0] && p[1] <= z[1],
            RoiShape::Polygon { vertices } => {
                let n = vertices.len();
                let mut inside = false;
                for i in 0..n {
                    let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                    // on-edge test
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    let within = p[0] >= a[0].min(b[0]) - 1e-12
                        && p[0] <= a[0].max(b[0]) + 1e-12
                        && p[1] >= a[1].min(b[1]) - 1e-12
                        && p[1] <= a[1].max(b[1]) + 1e-12;
                    if cross.abs() < 1e-12 && within {
                        return true;
                    }
                    if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]) {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    /// Grid indices inside the region.
    pub fn indices(&self, grid: &FocusGrid) -> Vec<usize> {
        (0..grid.len()).filter(|&i| self.contains(grid.plane_coords(i))).collect()
    }
}

/// Power inside `roi`: the sum of CLEAN-SC component powers, or for a
/// conventional map the sum of clamped map values (biased by the PSF).
pub fn integrate_map(map: &BeamformingMap, grid: &FocusGrid, roi: &RegionOfInterest) -> Result<f64> {
    roi.validate()?;
    if map.values.len() != grid.len() {
        return domain("map and grid differ in size");
    }
    let inside = roi.indices(grid);
    if inside.is_empty() {
        return domain(format!("region '{}' contains no grid points", roi.label));
    }
    Ok(match map.kind {
        MapKind::CleanSc => map
            .components
            .iter()
            .filter(|c| roi.contains(grid.plane_coords(c.index)))
            .map(|c| c.power)
            .sum(),
        MapKind::Conventional => inside.iter().map(|&i| map.values[i].max(0.0)).sum(),
    })
}

/// ROI-integrated narrowband spectrum over a list of maps.
pub fn integrate_maps(maps: &[BeamformingMap], grid: &FocusGrid, roi: &RegionOfInterest) -> Result<Spectrum> {
    let values = maps.iter().map(|m| integrate_map(m, grid, roi)).collect::<Result<Vec<_>>>()?;
    Spectrum::new(maps.iter().map(|m| m.frequency).collect(), values, BandType::Narrowband)
}

/// Angle-averaging domain for Γ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Db,
    Linear,
}

/// Spectrum observed from one sub-array together with its angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSpectrum {
    /// Angles of the geometric mean (canonical abscissa).
    pub angles: crate::geometry::ObservationAngles,
    /// Pitch angle of the nominal center.
    pub nominal_theta: f64,
    pub spectrum: Spectrum,
}

/// `PSD(θ, f)` and `Γ(θ, f) = PSD − ⟨PSD⟩_θ` in dB, indexed `[angle][frequency]`.
/// Masked bins (missing or non-positive power) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectivitySurface {
    pub theta: Vec<f64>,
    pub theta_std: Vec<f64>,
    pub theta_nominal: Vec<f64>,
    pub phi: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub psd: Vec<Vec<Option<f64>>>,
    pub gamma: Vec<Vec<Option<f64>>>,
    pub averaging: Averaging,
}

fn gamma_rows(psd: &[Vec<Option<f64>>], averaging: Averaging) -> Vec<Vec<Option<f64>>> {
    let nf = psd.first().map_or(0, |r| r.len());
    let mut gamma = vec![vec![None; nf]; psd.len()];
    for k in 0..nf {
        let vals: Vec<f64> = psd.iter().filter_map(|r| r[k]).collect();
        if vals.is_empty() {
            continue;
        }
        let mean = match averaging {
            Averaging::Db => vals.iter().sum::<f64>() / vals.len() as f64,
            Averaging::Linear => {
                10.0 * (vals.iter().map(|v| 10f64.powf(v / 10.0)).sum::<f64>() / vals.len() as f64).log10()
            }
        };
        for (g, r) in gamma.iter_mut().zip(psd) {
            g[k] = r[k].map(|v| v - mean);
        }
    }
    gamma
}

fn same_frequency(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

/// Builds Γ from per-angle spectra. The frequency axis is that of the first
/// spectrum; frequencies missing at an angle are masked there.
pub fn directivity(spectra: &[AngleSpectrum], averaging: Averaging) -> Result<DirectivitySurface> {
    if spectra.len() < 2 {
        return domain("directivity needs at least two angles");
    }
    let frequencies = spectra[0].spectrum.frequencies.clone();
    let psd: Vec<Vec<Option<f64>>> = spectra
        .iter()
        .map(|a| {
            frequencies
                .iter()
                .map(|&f| {
                    a.spectrum
                        .frequencies
                        .iter()
                        .position(|&g| same_frequency(f, g))
                        .map(|i| a.spectrum.values[i])
                        .filter(|v| *v > 0.0 && v.is_finite())
                        .map(power_db)
                })
                .collect()
        })
        .collect();
    Ok(DirectivitySurface {
        theta: spectra.iter().map(|a| a.angles.theta).collect(),
        theta_std: spectra.iter().map(|a| a.angles.theta_std).collect(),
        theta_nominal: spectra.iter().map(|a| a.nominal_theta).collect(),
        phi: spectra.iter().map(|a| a.angles.phi).collect(),
        gamma: gamma_rows(&psd, averaging),
        frequencies,
        psd,
        averaging,
    })
}

impl DirectivitySurface {
    /// Angle index with the largest Γ at frequency index `k`.
    pub fn argmax(&self, k: usize) -> Option<usize> {
        self.gamma
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r[k].map(|g| (i, g)))
            .fold(None, |best: Option<(usize, f64)>, (i, g)| match best {
                Some((_, b)) if b >= g => best,
                _ => Some((i, g)),
            })
            .map(|(i, _)| i)
    }
}

/// Band-integrated directivity, indexed `[angle][band]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarTable {
    pub band: BandType,
    pub centers: Vec<f64>,
    pub theta: Vec<f64>,
    pub psd: Vec<Vec<Option<f64>>>,
    pub gamma: Vec<Vec<Option<f64>>>,
}

/// Integrates each angle's PSD into bands and re-centres Γ per band. Bands
/// containing a masked bin are masked.
pub fn octave_polar(surface: &DirectivitySurface, band: BandType) -> Result<PolarTable> {
    if surface.frequencies.is_empty() {
        return domain("empty directivity surface");
    }
    let mut centers = Vec::new();
    let mut psd = Vec::new();
    for row in &surface.psd {
        let lin: Vec<f64> = row.iter().map(|v| v.map_or(0.0, crate::db_power)).collect();
        let s = Spectrum::new(surface.frequencies.clone(), lin, BandType::Narrowband)?;
        let b = band_integrate(&s, band)?;
        let values: Vec<Option<f64>> = b
            .lower
            .iter()
            .zip(&b.upper)
            .zip(&b.power)
            .map(|((&lo, &hi), p)| {
                let masked = surface
                    .frequencies
                    .iter()
                    .zip(row)
                    .any(|(&f, v)| f >= lo && f < hi && v.is_none());
                if masked {
                    None
                } else {
                    p.filter(|v| *v > 0.0).map(power_db)
                }
            })
            .collect();
        centers = b.centers.clone();
        psd.push(values);
    }
    Ok(PolarTable {
        band,
        gamma: gamma_rows(&psd, surface.averaging),
        centers,
        theta: surface.theta.clone(),
        psd,
    })
}

/// Refers a spectrum measured at `distance` to `reference`, i.e. adds
/// `20·log10(distance / reference)` dB.
pub fn distance_normalize(spectrum: &Spectrum, distance: f64, reference: f64) -> Result<Spectrum> {
    if !(distance > 0.0 && reference > 0.0) {
        return domain("distances must be positive");
    }
    let g = (distance / reference).powi(2);
    Ok(Spectrum {
        values: spectrum.values.iter().map(|v| v * g).collect(),
        ..spectrum.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarFieldComparison {
    pub frequencies: Vec<f64>,
    /// Distance-normalised (1 m) microphone spectra, dB.
    pub mics_db: Vec<Vec<f64>>,
    /// Linear average of the normalised microphone spectra, dB.
    pub mic_average_db: Vec<f64>,
    pub integrated_db: Vec<f64>,
    /// `integrated − average`, dB
    pub delta_db: Vec<f64>,
    /// Set when the inputs did not share a frequency axis and were
    /// interpolated onto the coarser one.
    pub resampled: bool,
}

fn interp_db(s: &Spectrum, f: f64) -> Option<f64> {
    let fr = &s.frequencies;
    if fr.is_empty() || f < fr[0] || f > fr[fr.len() - 1] {
        return None;
    }
    let k = fr.partition_point(|&v| v < f);
    if same_frequency(fr[k.min(fr.len() - 1)], f) {
        return Some(power_db(s.values[k.min(fr.len() - 1)]));
    }
    let (a, b) = (k - 1, k);
    let t = (f - fr[a]) / (fr[b] - fr[a]);
    Some(power_db(s.values[a]) * (1.0 - t) + power_db(s.values[b]) * t)
}

fn axes_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same_frequency(*x, *y))
}

/// Compares an integrated beamforming spectrum with far-field microphones
/// normalised to 1 m.
pub fn farfield_compare(integrated: &Spectrum, mics: &[(Spectrum, f64)]) -> Result<FarFieldComparison> {
    if mics.is_empty() {
        return domain("far-field comparison needs at least one microphone");
    }
    let normalized = mics
        .iter()
        .map(|(s, d)| distance_normalize(s, *d, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&Spectrum> = std::iter::once(integrated).chain(normalized.iter()).collect();
    let resampled = !all.iter().all(|s| axes_equal(&s.frequencies, &integrated.frequencies));
    let axis: Vec<f64> = if resampled {
        let spacing = |s: &Spectrum| {
            let n = s.frequencies.len();
            if n < 2 {
                f64::INFINITY
            } else {
                (s.frequencies[n - 1] - s.frequencies[0]) / (n - 1) as f64
            }
        };
        let coarse = all
            .iter()
            .max_by(|a, b| spacing(a).total_cmp(&spacing(b)))
            .expect("non-empty");
        let lo = all.iter().map(|s| s.frequencies[0]).fold(f64::NEG_INFINITY, f64::max);
        let hi = all
            .iter()
            .map(|s| s.frequencies[s.frequencies.len() - 1])
            .fold(f64::INFINITY, f64::min);
        coarse.frequencies.iter().cloned().filter(|&f| f >= lo && f <= hi).collect()
    } else {
        integrated.frequencies.clone()
    };
    let on_axis = |s: &Spectrum| -> Vec<f64> { axis.iter().map(|&f| interp_db(s, f).unwrap_or(f64::NAN)).collect() };
    let mics_db: Vec<Vec<f64>> = normalized.iter().map(on_axis).collect();
    let integrated_db = on_axis(integrated);
    let mic_average_db: Vec<f64> = (0..axis.len())
        .map(|k| {
            let mean = mics_db.iter().map(|r| 10f64.powf(r[k] / 10.0)).sum::<f64>() / mics_db.len() as f64;
            10.0 * mean.log10()
        })
        .collect();
    let delta_db = integrated_db.iter().zip(&mic_average_db).map(|(a, b)| a - b).collect();
    Ok(FarFieldComparison {
        frequencies: axis,
        mics_db,
        mic_average_db,
        integrated_db,
        delta_db,
        resampled,
    })
}

/// Per-sub-array CSM estimator used by [`CsmInput::Custom`].
pub type CsmEstimator<'a> = dyn Fn(&SubArray, &[f64]) -> Result<Vec<CrossSpectralMatrix>> + Sync + 'a;

/// Where the CSMs for each sub-array come from.
#[derive(Clone, Copy)]
pub enum CsmInput<'a> {
    /// Exact CSMs synthesised from a scene.
    Scene(&'a Scene),
    /// Full-array CSMs, one per frequency; sub-arrays select their channels.
    Recorded(&'a [CrossSpectralMatrix]),
    /// Caller-provided estimator, e.g. Welch on synthesized time series.
    Custom(&'a CsmEstimator<'a>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PitchSeriesParams {
    pub count: usize,
    pub aperture: f64,
    pub mics: usize,
    pub epsilon: f64,
    /// Reference point of the observation angles.
    pub reference: [f64; 3],
}

impl Default for PitchSeriesParams {
    fn default() -> Self {
        PitchSeriesParams {
            count: 13,
            aperture: 2.0,
            mics: 150,
            epsilon: 0.1,
            reference: [2.4, 0.0, 0.0],
        }
    }
}

/// Beamforming settings shared by the analysis pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamformSettings {
    #[serde(default)]
    pub corrections: Corrections,
    #[serde(default)]
    pub reference: ReferencePoint,
    /// Integrate CLEAN-SC components; conventional maps otherwise.
    #[serde(default = "yes")]
    pub clean_sc: bool,
    #[serde(default)]
    pub clean: CleanScParams,
}

fn yes() -> bool {
    true
}

impl Default for BeamformSettings {
    fn default() -> Self {
        BeamformSettings {
            corrections: Corrections::default(),
            reference: ReferencePoint::default(),
            clean_sc: true,
            clean: CleanScParams::default(),
        }
    }
}

/// Beamforms every frequency for one sub-array.
pub fn beamform_subarray(
    sub: &SubArray,
    csms: &[CrossSpectralMatrix],
    grid: &FocusGrid,
    medium: &MediumModel,
    settings: &BeamformSettings,
) -> Result<Vec<BeamformingMap>> {
    let geometry = SteeringGeometry::new(grid, &sub.positions_vec3(), medium, settings.corrections, settings.reference)?;
    csms.par_iter()
        .map(|c| {
            let steer = geometry.at_frequency(c.frequency)?;
            if settings.clean_sc {
                clean_sc(c, &steer, grid, settings.clean)
            } else {
                conventional_beamform(c, &steer, grid, settings.clean.diagonal_removal)
            }
        })
        .collect()
}

/// CSMs for a sub-array from either input kind.
pub fn subarray_csms(input: CsmInput<'_>, sub: &SubArray, frequencies: &[f64]) -> Result<Vec<CrossSpectralMatrix>> {
    match input {
        CsmInput::Scene(scene) => synthesize_csm(scene, &sub.positions_vec3(), frequencies),
        CsmInput::Recorded(all) => frequencies
            .iter()
            .map(|&f| {
                all.iter()
                    .find(|c| same_frequency(c.frequency, f))
                    .map(|c| c.select(&sub.indices))
                    .ok_or_else(|| crate::Error::Domain(format!("no recorded CSM at {f} Hz")))
            })
            .collect(),
        CsmInput::Custom(f) => f(sub, frequencies),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectivityResult {
    pub surface: DirectivitySurface,
    pub spectra: Vec<AngleSpectrum>,
    pub sensor_counts: Vec<usize>,
}

/// Pitch sub-array series → beamforming → ROI integration → Γ.
///
/// Map values are already referred to 1 m through `r_{t,0}`, so the
/// integrated levels compare across sub-arrays without further distance
/// correction. Empty sub-arrays are skipped.
#[allow(clippy::too_many_arguments)]
pub fn directivity_pipeline(
    input: CsmInput<'_>,
    geometry: &ArrayGeometry,
    series: &PitchSeriesParams,
    grid: &FocusGrid,
    roi: &RegionOfInterest,
    frequencies: &[f64],
    medium: &MediumModel,
    settings: &BeamformSettings,
    averaging: Averaging,
) -> Result<DirectivityResult> {
    roi.validate()?;
    let subs = pitch_subarray_series(geometry, series.count, series.aperture, series.mics, series.epsilon)?;
    let subs: Vec<SubArray> = subs.into_iter().filter(|s| !s.is_empty()).collect();
    if subs.len() < 2 {
        return domain("directivity needs at least two non-empty sub-arrays");
    }
    let reference = Vec3::from(series.reference);
    let mut spectra = Vec::with_capacity(subs.len());
    for sub in &subs {
        let csms = subarray_csms(input, sub, frequencies)?;
        let maps = beamform_subarray(sub, &csms, grid, medium, settings)?;
        let spectrum = integrate_maps(&maps, grid, roi)?;
        let stats = subarray_stats(sub)?;
        let angles = observation_angles(&stats.mean, &reference, Some(&stats.std))?;
        let nominal = observation_angles(&Vec3::from(sub.nominal_center), &reference, None)?;
        spectra.push(AngleSpectrum {
            angles,
            nominal_theta: nominal.theta,
            spectrum,
        });
    }
    Ok(DirectivityResult {
        surface: directivity(&spectra, averaging)?,
        sensor_counts: subs.iter().map(|s| s.len()).collect(),
        spectra,
    })
}
