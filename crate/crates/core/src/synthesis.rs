//! Ground-truth multichannel time series and exact cross-spectral matrices
//! for a scene of point sources.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::propagation::{absorption_factor, propagate, MediumModel, PathModel, PathResult};
use crate::spectral::CrossSpectralMatrix;
use crate::Vec3;

/// Taps of the fractional-delay interpolator.
pub const FRACTIONAL_DELAY_TAPS: usize = 64;
/// Kaiser β of the fractional-delay interpolator.
pub const FRACTIONAL_DELAY_BETA: f64 = 8.0;
/// Shortest record accepted by [`synthesize_timeseries`] (two Welch blocks).
pub const MIN_SYNTH_SAMPLES: usize = 2 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceKind {
    Monopole,
    /// Monopole with `cos²` power weighting about `axis`.
    Dipole { axis: [f64; 3] },
}

/// Source spectrum referenced to 1 m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpectrum {
    /// Pure tone with RMS pressure `rms` (Pa at 1 m).
    Tone { frequency: f64, rms: f64 },
    /// Flat one-sided PSD (Pa²/Hz at 1 m).
    White { psd: f64 },
    /// PSD (Pa²/Hz at 1 m) interpolated linearly between points, zero outside.
    Table { frequencies: Vec<f64>, psd: Vec<f64> },
}

impl SourceSpectrum {
    /// Broadband PSD at `f`; tones have none.
    pub fn psd_at(&self, f: f64) -> f64 {
        match self {
            SourceSpectrum::Tone { .. } => 0.0,
            SourceSpectrum::White { psd } => *psd,
            SourceSpectrum::Table { frequencies, psd } => interpolate(frequencies, psd, f),
        }
    }

    /// Power entering a CSM evaluated at `f`: the PSD for broadband sources,
    /// the tone's mean-square pressure when `f` is the tone frequency.
    pub fn csm_power(&self, f: f64) -> f64 {
        match self {
            SourceSpectrum::Tone { frequency, rms } => {
                if (f - frequency).abs() <= 1e-9 * frequency.abs().max(1.0) {
                    rms * rms
                } else {
                    0.0
                }
            }
            other => other.psd_at(f),
        }
    }

    fn highest_frequency(&self) -> f64 {
        match self {
            SourceSpectrum::Tone { frequency, .. } => *frequency,
            SourceSpectrum::White { .. } => f64::INFINITY,
            SourceSpectrum::Table { frequencies, psd } => frequencies
                .iter()
                .zip(psd)
                .filter(|(_, p)| **p > 0.0)
                .map(|(f, _)| *f)
                .fold(0.0, f64::max),
        }
    }
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
        return 0.0;
    }
    let k = xs.partition_point(|&v| v <= x);
    if k == 0 {
        return ys[0];
    }
    if k >= xs.len() {
        return ys[xs.len() - 1];
    }
    let (x0, x1) = (xs[k - 1], xs[k]);
    let t = (x - x0) / (x1 - x0);
    ys[k - 1] + t * (ys[k] - ys[k - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub position: [f64; 3],
    #[serde(default = "monopole")]
    pub kind: SourceKind,
    pub spectrum: SourceSpectrum,
}

fn monopole() -> SourceKind {
    SourceKind::Monopole
}

impl Source {
    pub fn monopole(position: Vec3, spectrum: SourceSpectrum) -> Self {
        Source {
            position: [position.x, position.y, position.z],
            kind: SourceKind::Monopole,
            spectrum,
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    /// Power weighting toward `receiver`.
    pub fn directivity(&self, receiver: &Vec3) -> f64 {
        match self.kind {
            SourceKind::Monopole => 1.0,
            SourceKind::Dipole { axis } => {
                let a = Vec3::from(axis).normalize();
                let d = (receiver - self.position()).normalize();
                a.dot(&d).powi(2)
            }
        }
    }
}

/// Incoherent per-channel noise: flat PSD with an optional low-frequency shelf.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Pa²/Hz
    pub psd: f64,
    #[serde(default)]
    pub low_shelf: Option<LowShelf>,
}

/// Gain applied to the noise PSD below `corner` (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowShelf {
    pub corner: f64,
    pub gain_db: f64,
}

impl NoiseSpec {
    pub fn psd_at(&self, f: f64) -> f64 {
        match self.low_shelf {
            Some(s) if f < s.corner => self.psd * 10f64.powf(s.gain_db / 10.0),
            _ => self.psd,
        }
    }
}

/// Sources, medium and incoherent noise of a synthetic measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default)]
    pub sources: Vec<Source>,
    #[serde(default)]
    pub medium: MediumModel,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
    /// Apply atmospheric absorption along each path.
    #[serde(default = "yes")]
    pub absorption: bool,
    /// Path model; defaults to refraction when the medium has a shear layer.
    #[serde(default)]
    pub path_model: Option<PathModel>,
}

fn yes() -> bool {
    true
}

impl Scene {
    pub fn new(sources: Vec<Source>, medium: MediumModel) -> Self {
        Scene {
            sources,
            medium,
            noise: NoiseSpec::default(),
            seed: 0,
            absorption: true,
            path_model: None,
        }
    }

    pub fn path_model(&self) -> PathModel {
        self.path_model.unwrap_or_else(|| PathModel::for_medium(&self.medium))
    }

    /// Paths from every source to every receiver, `[source][receiver]`.
    pub fn paths(&self, receivers: &[Vec3]) -> Result<Vec<Vec<PathResult>>> {
        self.medium.validate()?;
        let model = self.path_model();
        self.sources
            .iter()
            .map(|s| {
                let p = s.position();
                receivers.iter().map(|r| propagate(&p, r, &self.medium, model)).collect()
            })
            .collect()
    }

    /// Pressure transfer from one source (unit pressure at 1 m) to the
    /// receivers at frequency `f`, including directivity and absorption.
    pub fn transfer(&self, source: &Source, paths: &[PathResult], receivers: &[Vec3], f: f64) -> Vec<Complex64> {
        paths
            .iter()
            .zip(receivers)
            .map(|(p, r)| {
                let mut a = p.spreading() * source.directivity(r).sqrt();
                if self.absorption {
                    a *= absorption_factor(f, p.effective_distance, &self.medium);
                }
                Complex64::from_polar(a, -std::f64::consts::TAU * f * p.delay)
            })
            .collect()
    }
}

/// Exact CSM per frequency: `Σ_s q_s²(f) g_s g_sᴴ + diag(noise(f))`.
pub fn synthesize_csm(scene: &Scene, receivers: &[Vec3], frequencies: &[f64]) -> Result<Vec<CrossSpectralMatrix>> {
    if frequencies.iter().any(|&f| !(f > 0.0)) {
        return domain("frequencies must be positive");
    }
    let paths = scene.paths(receivers)?;
    let m = receivers.len();
    Ok(frequencies
        .par_iter()
        .map(|&f| {
            let mut c = CrossSpectralMatrix::zeros(f, m);
            for (s, p) in scene.sources.iter().zip(&paths) {
                let q2 = s.spectrum.csm_power(f);
                if q2 > 0.0 {
                    c.add_outer(&scene.transfer(s, p, receivers, f), q2);
                }
            }
            let n = scene.noise.psd_at(f);
            if n > 0.0 {
                c.add_diagonal(&vec![n; m]);
            }
            c
        })
        .collect())
}

/// Multichannel time series with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub rate: f64,
    /// `[channel][sample]`, Pa
    pub channels: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Kaiser-windowed sinc interpolator for a fractional delay `frac ∈ [0, 1)`.
/// Tap `k` multiplies `x[n − k + 31]` (plus the integer delay).
pub fn fractional_delay_taps(frac: f64) -> [f64; FRACTIONAL_DELAY_TAPS] {
    let half = (FRACTIONAL_DELAY_TAPS / 2) as f64;
    let center = half - 1.0 + frac;
    let i0 = |x: f64| {
        let mut sum = 1.0;
        let mut term = 1.0;
        let q = x * x / 4.0;
        for k in 1..100 {
            term *= q / (k * k) as f64;
            sum += term;
        }
        sum
    };
    let norm = i0(FRACTIONAL_DELAY_BETA);
    let mut h = [0.0; FRACTIONAL_DELAY_TAPS];
    for (k, v) in h.iter_mut().enumerate() {
        let t = k as f64 - center;
        let sinc = if t.abs() < 1e-12 {
            1.0
        } else {
            (std::f64::consts::PI * t).sin() / (std::f64::consts::PI * t)
        };
        let x = t / half;
        let w = if x.abs() <= 1.0 {
            i0(FRACTIONAL_DELAY_BETA * (1.0 - x * x).sqrt()) / norm
        } else {
            0.0
        };
        *v = sinc * w;
    }
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

fn real_fft_filter(x: &mut [f64], gain: impl Fn(f64) -> f64, rate: f64) {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k } else { n - k } as f64 * rate / n as f64;
        *b *= gain(f);
    }
    inv.process(&mut buf);
    for (v, b) in x.iter_mut().zip(&buf) {
        *v = b.re / n as f64;
    }
}

fn channel_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// White Gaussian noise shaped to a one-sided PSD.
fn shaped_noise(len: usize, rate: f64, rng: &mut ChaCha8Rng, psd: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    // unit-variance white noise has one-sided PSD 2/fs
    real_fft_filter(&mut x, |f| (psd(f) * rate / 2.0).sqrt(), rate);
    x
}

/// Synthesizes pressure time series at `rate` for all receivers.
///
/// Tones are evaluated analytically at the exact delay. Broadband sources are
/// generated once per source, delayed per channel with a 64-tap
/// Kaiser-windowed sinc, scaled by spreading and directivity, and filtered by
/// the path absorption. Independent Gaussian noise is added per channel.
pub fn synthesize_timeseries(scene: &Scene, receivers: &[Vec3], rate: f64, duration: f64) -> Result<Synthesized> {
    let n = (rate * duration).round() as usize;
    if n < MIN_SYNTH_SAMPLES {
        return domain(format!("{n} samples is shorter than {MIN_SYNTH_SAMPLES}"));
    }
    let paths = scene.paths(receivers)?;
    let mut warnings = Vec::new();
    let nyquist = rate / 2.0;
    for (k, s) in scene.sources.iter().enumerate() {
        let top = s.spectrum.highest_frequency();
        if top > 0.9 * nyquist && !matches!(s.spectrum, SourceSpectrum::Tone { .. }) {
            warnings.push(format!(
                "source {k}: content up to {:.0} Hz reaches the interpolator roll-off near Nyquist",
                top.min(nyquist)
            ));
        }
        if let SourceSpectrum::Tone { frequency, .. } = s.spectrum {
            if frequency >= nyquist {
                return domain(format!("source {k}: tone at {frequency} Hz is above Nyquist"));
            }
        }
    }

    let max_delay = paths
        .iter()
        .flatten()
        .map(|p| p.delay)
        .fold(0.0, f64::max);
    let lead = (max_delay * rate).ceil() as usize + FRACTIONAL_DELAY_TAPS;

    // base signals: sample k represents time (k - lead) / rate
    let base: Vec<Option<Vec<f64>>> = scene
        .sources
        .iter()
        .enumerate()
        .map(|(k, s)| match &s.spectrum {
            SourceSpectrum::Tone { .. } => None,
            spec => {
                let mut rng = channel_rng(scene.seed, 1 << 32 | k as u64);
                Some(shaped_noise(n + lead + FRACTIONAL_DELAY_TAPS, rate, &mut rng, |f| spec.psd_at(f)))
            }
        })
        .collect();
    let phases: Vec<f64> = (0..scene.sources.len())
        .map(|k| channel_rng(scene.seed, 2 << 32 | k as u64).random::<f64>() * std::f64::consts::TAU)
        .collect();

    let channels: Vec<Vec<f64>> = receivers
        .par_iter()
        .enumerate()
        .map(|(m, r)| {
            let mut out = vec![0.0; n];
            for (k, s) in scene.sources.iter().enumerate() {
                let p = &paths[k][m];
                let gain = p.spreading() * s.directivity(r).sqrt();
                match (&s.spectrum, &base[k]) {
                    (SourceSpectrum::Tone { frequency, rms }, _) => {
                        let mut a = gain * rms * std::f64::consts::SQRT_2;
                        if scene.absorption {
                            a *= absorption_factor(*frequency, p.effective_distance, &scene.medium);
                        }
                        let w = std::f64::consts::TAU * frequency;
                        for (i, v) in out.iter_mut().enumerate() {
                            *v += a * (w * (i as f64 / rate - p.delay) + phases[k]).sin();
                        }
                    }
                    (_, Some(sig)) => {
                        let d = p.delay * rate;
                        let whole = d.floor() as usize;
                        let taps = fractional_delay_taps(d - d.floor());
                        let mut contrib: Vec<f64> = (0..n)
                            .map(|i| {
                                // x at time (i - d)/rate lives at index i + lead - d
                                let base_idx = i + lead + FRACTIONAL_DELAY_TAPS / 2 - 1 - whole;
                                taps.iter().enumerate().map(|(t, h)| h * sig[base_idx - t]).sum::<f64>() * gain
                            })
                            .collect();
                        if scene.absorption {
                            let dist = p.effective_distance;
                            let medium = scene.medium;
                            real_fft_filter(&mut contrib, |f| absorption_factor(f, dist, &medium), rate);
                        }
                        out.iter_mut().zip(&contrib).for_each(|(o, c)| *o += c);
                    }
                    (_, None) => unreachable!("broadband sources always have a base signal"),
                }
            }
            if scene.noise.psd > 0.0 {
                let mut rng = channel_rng(scene.seed, m as u64);
                let noise = shaped_noise(n, rate, &mut rng, |f| scene.noise.psd_at(f));
                out.iter_mut().zip(&noise).for_each(|(o, v)| *o += v);
            }
            out
        })
        .collect();
    Ok(Synthesized {
        rate,
        channels,
        warnings,
    })
}

/// Band-limited upsampling by an integer factor via spectral zero padding
/// (the record is treated as periodic). Used to drive the PDM modulator
/// from PCM-rate synthesis.
pub fn upsample(x: &[f64], factor: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 || factor <= 1 {
        return x.to_vec();
    }
    let m = n * factor;
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let mut wide = vec![Complex64::new(0.0, 0.0); m];
    let half = n / 2;
    for k in 0..n {
        if n.is_multiple_of(2) && k == half {
            wide[half] = buf[half] * 0.5;
            wide[m - half] = buf[half] * 0.5;
        } else if k < half || (n % 2 == 1 && k == half) {
            wide[k] = buf[k];
        } else {
            wide[m - (n - k)] = buf[k];
        }
    }
    planner.plan_fft_inverse(m).process(&mut wide);
    wide.iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::atmospheric_absorption;
    use crate::spectral::{welch_csm, Window};

    #[test]
    fn equidistant_mics_receive_identical_signals() {
        let src = Source::monopole(Vec3::new(0.0, 0.0, 0.0), SourceSpectrum::White { psd: 1e-3 });
        let scene = Scene::new(vec![src], MediumModel::default());
        let mics = [Vec3::new(1.0, 2.0, 0.0), Vec3::new(-1.0, 2.0, 0.0)];
        let s = synthesize_timeseries(&scene, &mics, 48_000.0, 0.1).unwrap();
        for (a, b) in s.channels[0].iter().zip(&s.channels[1]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tone_rms_follows_spreading_and_absorption() {
        let medium = MediumModel::default();
        let src = Source::monopole(Vec3::zeros(), SourceSpectrum::Tone { frequency: 4000.0, rms: 1.0 });
        let scene = Scene::new(vec![src], medium);
        let r = 3.39;
        let s = synthesize_timeseries(&scene, &[Vec3::new(0.0, r, 0.0)], 48_000.0, 1.0).unwrap();
        let x = &s.channels[0];
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let expect = (1.0 / r) * 10f64.powf(-atmospheric_absorption(4000.0, &medium) * r / 20.0);
        assert!((20.0 * (rms / expect).log10()).abs() < 0.1);
    }

    #[test]
    fn noise_only_channels_are_incoherent() {
        let mut scene = Scene::new(vec![], MediumModel::default());
        scene.noise.psd = 1e-4;
        scene.seed = 11;
        let mics: Vec<Vec3> = (0..3).map(|i| Vec3::new(i as f64, 3.0, 0.0)).collect();
        let s = synthesize_timeseries(&scene, &mics, 48_000.0, 1.0).unwrap();
        let c = welch_csm(&s.channels, 48_000.0, 1024, 0.5, Window::Hann).unwrap();
        let mut worst: f64 = 0.0;
        for m in &c[1..c.len() - 1] {
            let mean = (m.coherence(0, 1) + m.coherence(0, 2) + m.coherence(1, 2)) / 3.0;
            worst = worst.max(mean);
        }
        let avg: f64 = c[1..c.len() - 1].iter().map(|m| m.coherence(0, 1)).sum::<f64>() / (c.len() - 2) as f64;
        assert!(avg < 0.05, "{avg}");
        assert!(worst < 0.1);
    }

    #[test]
    fn fractional_delay_is_flat_in_band() {
        for frac in [0.0, 0.25, 0.5, 0.9] {
            let h = fractional_delay_taps(frac);
            for f in [100.0, 5000.0, 10_000.0, 20_000.0] {
                let w = std::f64::consts::TAU * f / 48_000.0;
                let (re, im) = h
                    .iter()
                    .enumerate()
                    .fold((0.0, 0.0), |(a, b), (k, c)| (a + c * (w * k as f64).cos(), b - c * (w * k as f64).sin()));
                let db = 20.0 * re.hypot(im).log10();
                assert!(db.abs() < 0.01, "frac {frac} f {f}: {db} dB");
            }
        }
    }

    #[test]
    fn csm_structure() {
        let mics: Vec<Vec3> = (0..5).map(|i| Vec3::new(0.3 * i as f64, 3.0, 0.1)).collect();
        let src = Source::monopole(Vec3::zeros(), SourceSpectrum::White { psd: 2.0 });
        let clean = synthesize_csm(&Scene::new(vec![src.clone()], MediumModel::default()), &mics, &[2000.0]).unwrap();
        let mut noisy_scene = Scene::new(vec![src], MediumModel::default());
        noisy_scene.noise.psd = 0.5;
        let noisy = synthesize_csm(&noisy_scene, &mics, &[2000.0]).unwrap();
        for i in 0..5 {
            assert!((noisy[0].diag(i) - clean[0].diag(i) - 0.5).abs() < 1e-12);
            for j in i + 1..5 {
                assert_eq!(noisy[0].get(i, j), clean[0].get(i, j));
            }
        }
        // rank one: every 2x2 minor vanishes
        let c = &clean[0];
        let minor = c.get(0, 0) * c.get(1, 1) - c.get(0, 1) * c.get(1, 0);
        assert!(minor.norm() < 1e-12 * c.diag(0) * c.diag(1));

        let mut only_noise = Scene::new(vec![], MediumModel::default());
        only_noise.noise.psd = 1.0;
        let d = synthesize_csm(&only_noise, &mics, &[500.0]).unwrap();
        assert_eq!(d[0].get(0, 1), Complex64::new(0.0, 0.0));
        assert_eq!(d[0].diag(3), 1.0);
    }

    #[test]
    fn dipole_weighting() {
        let s = Source {
            position: [0.0; 3],
            kind: SourceKind::Dipole { axis: [0.0, 1.0, 0.0] },
            spectrum: SourceSpectrum::White { psd: 1.0 },
        };
        assert!((s.directivity(&Vec3::new(0.0, 2.0, 0.0)) - 1.0).abs() < 1e-15);
        assert!(s.directivity(&Vec3::new(2.0, 0.0, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn upsampling_preserves_samples() {
        let x: Vec<f64> = (0..100).map(|i| (0.3 * i as f64).sin() + 0.1 * (1.1 * i as f64).cos()).collect();
        let y = upsample(&x, 4);
        assert_eq!(y.len(), 400);
        for (i, v) in x.iter().enumerate() {
            assert!((y[4 * i] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn short_record_rejected() {
        let scene = Scene::new(vec![], MediumModel::default());
        assert!(synthesize_timeseries(&scene, &[Vec3::new(0.0, 1.0, 0.0)], 48_000.0, 0.01).is_err());
    }
}
