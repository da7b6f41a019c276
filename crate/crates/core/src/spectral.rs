//! Cross-spectral matrix estimation, CSM statistics and band integration.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::{power_db, DB_FLOOR};

/// Analysis window for Welch averaging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    #[serde(alias = "hanning")]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Window::Hann => "hann",
            Window::Rectangular => "rectangular",
        }
    }
}

/// Hermitian cross-spectral matrix at one frequency, stored as the packed
/// upper triangle (row-major, diagonal included). Values are one-sided
/// cross-power spectral densities `E[p_i p_j*]` in Pa²/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSpectralMatrix {
    pub frequency: f64,
    size: usize,
    packed: Vec<Complex64>,
    pub n_averages: usize,
    pub window: Window,
    pub block_size: usize,
    pub overlap: f64,
}

#[inline]
fn packed_index(size: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < size);
    i * (2 * size - i + 1) / 2 + (j - i)
}

impl CrossSpectralMatrix {
    pub fn zeros(frequency: f64, size: usize) -> Self {
        CrossSpectralMatrix {
            frequency,
            size,
            packed: vec![Complex64::new(0.0, 0.0); size * (size + 1) / 2],
            n_averages: 0,
            window: Window::Rectangular,
            block_size: 0,
            overlap: 0.0,
        }
    }

    /// Builds from a packed upper triangle; the diagonal imaginary parts are dropped.
    pub fn from_packed(frequency: f64, size: usize, mut packed: Vec<Complex64>) -> Result<Self> {
        if packed.len() != size * (size + 1) / 2 {
            return domain(format!("packed CSM of size {size} needs {} entries", size * (size + 1) / 2));
        }
        for i in 0..size {
            let k = packed_index(size, i, i);
            packed[k].im = 0.0;
        }
        Ok(CrossSpectralMatrix {
            packed,
            ..Self::zeros(frequency, size)
        })
    }

    /// Builds from a dense matrix, keeping the Hermitian part of the upper triangle.
    pub fn from_dense(frequency: f64, dense: &nalgebra::DMatrix<Complex64>) -> Result<Self> {
        let n = dense.nrows();
        if dense.ncols() != n {
            return domain("CSM must be square");
        }
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                packed.push(0.5 * (dense[(i, j)] + dense[(j, i)].conj()));
            }
        }
        Self::from_packed(frequency, n, packed)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn packed(&self) -> &[Complex64] {
        &self.packed
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i <= j {
            self.packed[packed_index(self.size, i, j)]
        } else {
            self.packed[packed_index(self.size, j, i)].conj()
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.packed[packed_index(self.size, i, i)].re
    }

    pub fn trace(&self) -> f64 {
        (0..self.size).map(|i| self.diag(i)).sum()
    }

    /// `self += scale · g gᴴ`
    pub fn add_outer(&mut self, g: &[Complex64], scale: f64) {
        assert_eq!(g.len(), self.size);
        let mut k = 0;
        for i in 0..self.size {
            for j in i..self.size {
                self.packed[k] += g[i] * g[j].conj() * scale;
                k += 1;
            }
            let d = packed_index(self.size, i, i);
            self.packed[d].im = 0.0;
        }
    }

    pub fn add_diagonal(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.size);
        for (i, v) in values.iter().enumerate() {
            self.packed[packed_index(self.size, i, i)].re += v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.packed.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_fn(self.size, self.size, |i, j| self.get(i, j))
    }

    /// Smallest eigenvalue of the Hermitian matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let eig = nalgebra::SymmetricEigen::new(self.to_dense());
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Sub-matrix over the selected channels.
    pub fn select(&self, channels: &[usize]) -> Self {
        let n = channels.len();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for (a, &i) in channels.iter().enumerate() {
            for &j in &channels[a..] {
                packed.push(self.get(i, j));
            }
        }
        CrossSpectralMatrix {
            frequency: self.frequency,
            size: n,
            packed,
            n_averages: self.n_averages,
            window: self.window,
            block_size: self.block_size,
            overlap: self.overlap,
        }
    }

    /// Magnitude-squared coherence between two channels.
    pub fn coherence(&self, i: usize, j: usize) -> f64 {
        let d = self.diag(i) * self.diag(j);
        if d > 0.0 {
            self.get(i, j).norm_sqr() / d
        } else {
            0.0
        }
    }
}

/// Number of Welch segments for a record of `n` samples.
pub fn welch_segments(n: usize, block: usize, hop: usize) -> usize {
    if n < block {
        0
    } else {
        (n - block) / hop + 1
    }
}

fn hop_size(block: usize, overlap: f64) -> usize {
    (((1.0 - overlap) * block as f64).round() as usize).max(1)
}

/// Welch cross-spectral estimate, one CSM per FFT bin from DC to Nyquist.
///
/// Each channel has its record mean removed before blocking. Blocks are
/// windowed and the result is scaled as a one-sided PSD with window power
/// compensation, `2 / (fs Σw²)` (no doubling at DC and Nyquist).
pub fn welch_csm(
    signals: &[Vec<f64>],
    rate: f64,
    block: usize,
    overlap: f64,
    window: Window,
) -> Result<Vec<CrossSpectralMatrix>> {
    if signals.is_empty() {
        return domain("no channels");
    }
    if !(0.0..1.0).contains(&overlap) {
        return domain("overlap must lie in [0, 1)");
    }
    if block < 2 {
        return domain("block size must be at least 2");
    }
    let n = signals[0].len();
    if signals.iter().any(|s| s.len() != n) {
        return domain("channels differ in length");
    }
    if n < block {
        return domain(format!("signal of {n} samples is shorter than the block size {block}"));
    }
    let m = signals.len();
    let hop = hop_size(block, overlap);
    let n_avg = welch_segments(n, block, hop);
    let w = window.coefficients(block);
    let w_power: f64 = w.iter().map(|v| v * v).sum();
    let bins = block / 2 + 1;
    let centered: Vec<Vec<f64>> = signals
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / n as f64;
            s.iter().map(|v| v - mean).collect()
        })
        .collect();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(block);
    let mut csms: Vec<CrossSpectralMatrix> = (0..bins)
        .map(|k| CrossSpectralMatrix {
            n_averages: n_avg,
            window,
            block_size: block,
            overlap,
            ..CrossSpectralMatrix::zeros(k as f64 * rate / block as f64, m)
        })
        .collect();
    // spectra[bin][channel] for the current block
    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); m]; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); block];
    for seg in 0..n_avg {
        let start = seg * hop;
        for (c, s) in centered.iter().enumerate() {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(s[start + i] * w[i], 0.0);
            }
            fft.process(&mut buf);
            for (k, row) in spectra.iter_mut().enumerate() {
                row[c] = buf[k];
            }
        }
        csms.par_iter_mut().zip(spectra.par_iter()).for_each(|(csm, x)| {
            csm.add_outer(x, 1.0);
        });
    }
    for (k, csm) in csms.iter_mut().enumerate() {
        let one_sided = if k == 0 || (block.is_multiple_of(2) && k == bins - 1) { 1.0 } else { 2.0 };
        csm.scale(one_sided / (rate * w_power * n_avg as f64));
    }
    Ok(csms)
}

/// Mean, population standard deviation, minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Level statistics of one CSM in dB re (20 µPa)²: over the auto-spectra and
/// over the magnitudes of the upper-triangle cross-spectra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsmStats {
    pub frequency: f64,
    pub auto: Summary,
    pub cross: Summary,
}

pub fn csm_stats(csm: &CrossSpectralMatrix) -> Result<CsmStats> {
    let m = csm.size();
    if m < 2 {
        return domain("CSM statistics need at least two channels");
    }
    let auto: Vec<f64> = (0..m).map(|i| power_db(csm.diag(i))).collect();
    let mut cross = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            cross.push(power_db(csm.get(i, j).norm()));
        }
    }
    Ok(CsmStats {
        frequency: csm.frequency,
        auto: Summary::of(&auto),
        cross: Summary::of(&cross),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandType {
    #[default]
    Narrowband,
    ThirdOctave,
    Octave,
}

impl BandType {
    /// Bands per octave, `None` for narrowband.
    pub fn fraction(&self) -> Option<f64> {
        match self {
            BandType::Narrowband => None,
            BandType::ThirdOctave => Some(3.0),
            BandType::Octave => Some(1.0),
        }
    }

    /// Lower and upper band edge around a base-2 center frequency.
    pub fn edges(&self, center: f64) -> (f64, f64) {
        match self.fraction() {
            Some(b) => {
                let k = 2f64.powf(0.5 / b);
                (center / k, center * k)
            }
            None => (center, center),
        }
    }

    /// Base-2 center frequencies `1 kHz · 2^(k/b)` whose bands overlap `[lo, hi]`.
    pub fn centers(&self, lo: f64, hi: f64) -> Vec<f64> {
        let Some(b) = self.fraction() else {
            return Vec::new();
        };
        let lo = lo.max(1e-3);
        let k_min = (b * (lo / 1000.0).log2() - 0.5).floor() as i64;
        let k_max = (b * (hi / 1000.0).log2() + 0.5).ceil() as i64;
        (k_min..=k_max)
            .map(|k| 1000.0 * 2f64.powf(k as f64 / b))
            .filter(|&c| {
                let (l, h) = self.edges(c);
                h > lo && l < hi
            })
            .collect()
    }
}

/// Power spectrum on a strictly increasing frequency axis. Values are linear:
/// Pa²/Hz for narrowband data, Pa² for band-integrated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    pub band: BandType,
}

impl Spectrum {
    pub fn new(frequencies: Vec<f64>, values: Vec<f64>, band: BandType) -> Result<Self> {
        if frequencies.len() != values.len() {
            return domain("frequency and value counts differ");
        }
        if frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("frequencies must be strictly increasing");
        }
        Ok(Spectrum {
            frequencies,
            values,
            band,
        })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Levels in dB re (20 µPa)².
    pub fn db(&self) -> Vec<f64> {
        self.values.iter().map(|&v| power_db(v)).collect()
    }

    /// Bin widths from midpoints between neighbours.
    pub fn bin_widths(&self) -> Vec<f64> {
        let f = &self.frequencies;
        match f.len() {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n)
                .map(|i| {
                    let left = if i == 0 { f[1] - f[0] } else { f[i] - f[i - 1] };
                    let right = if i == n - 1 { f[n - 1] - f[n - 2] } else { f[i + 1] - f[i] };
                    0.5 * (left + right)
                })
                .collect(),
        }
    }
}

/// Band-integrated spectrum; bands without any input bin are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpectrum {
    pub band: BandType,
    pub centers: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Pa²
    pub power: Vec<Option<f64>>,
}

impl BandSpectrum {
    /// Drops empty bands.
    pub fn to_spectrum(&self) -> Spectrum {
        let (f, v): (Vec<f64>, Vec<f64>) = self
            .centers
            .iter()
            .zip(&self.power)
            .filter_map(|(&c, p)| p.map(|p| (c, p)))
            .unzip();
        Spectrum {
            frequencies: f,
            values: v,
            band: self.band,
        }
    }
}

/// Integrates a narrowband PSD into fractional-octave bands:
/// `Σ PSD·Δf` over bins in `[f_c·2^(−1/2b), f_c·2^(1/2b))`.
pub fn band_integrate(spectrum: &Spectrum, band: BandType) -> Result<BandSpectrum> {
    if spectrum.band != BandType::Narrowband {
        return domain("band integration needs a narrowband spectrum");
    }
    if band == BandType::Narrowband {
        return domain("target band type must be fractional-octave");
    }
    if spectrum.is_empty() {
        return domain("empty spectrum");
    }
    let widths = spectrum.bin_widths();
    let lo = spectrum.frequencies[0];
    let hi = *spectrum.frequencies.last().expect("non-empty");
    let centers = band.centers(lo, hi);
    let mut out = BandSpectrum {
        band,
        centers: centers.clone(),
        lower: Vec::with_capacity(centers.len()),
        upper: Vec::with_capacity(centers.len()),
        power: Vec::with_capacity(centers.len()),
    };
    for c in centers {
        let (l, h) = band.edges(c);
        let mut acc = None;
        for ((f, v), w) in spectrum.frequencies.iter().zip(&spectrum.values).zip(&widths) {
            if *f >= l && *f < h {
                *acc.get_or_insert(0.0) += v * w;
            }
        }
        out.lower.push(l);
        out.upper.push(h);
        out.power.push(acc);
    }
    Ok(out)
}

/// Floor used when a statistic is reported for zero power.
pub const STATS_FLOOR_DB: f64 = DB_FLOOR;
