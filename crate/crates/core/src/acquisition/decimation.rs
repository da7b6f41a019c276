use nalgebra::{DMatrix, DVector};

use super::{PdmStream, DECIMATION, PCM_RATE, PDM_RATE};
use crate::error::{domain, Result};

const CIC_RATIO: usize = 16;
const CIC_ORDER: usize = 6;
const HB1_TAPS: usize = 23;
const HB2_TAPS: usize = 71;
const COMP_TAPS: usize = 31;
const HB_ATTENUATION_DB: f64 = 85.0;
const PASSBAND_EDGE: f64 = 20_000.0;

/// 32-bit PCM at 48 kHz with the chain's constant group delay.
#[derive(Debug, Clone, PartialEq)]
pub struct PcmBlock {
    pub channel_id: u32,
    pub samples: Vec<i32>,
    pub rate: f64,
    /// Output samples between an input event and its appearance in `samples`.
    pub group_delay: usize,
}

/// Four-stage PDM→PCM decimator:
/// CIC (R=16, order 6) → half-band (R=2) → half-band (R=2) → droop
/// compensation FIR (R=1). All FIR stages are linear phase.
///
/// Each stage keeps the output phase that makes the overall latency an
/// integer number of 48 kHz samples: output `n` corresponds to input bit
/// `64 n + phase` and represents the input at PCM time `n − group_delay`.
#[derive(Debug, Clone)]
pub struct Decimator {
    hb1: Vec<f64>,
    hb2: Vec<f64>,
    comp: Vec<f64>,
    phases: [usize; 3],
}

impl Default for Decimator {
    fn default() -> Self {
        Self::new()
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

pub(crate) fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / (len - 1) as f64 - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

fn kaiser_beta(attenuation_db: f64) -> f64 {
    if attenuation_db > 50.0 {
        0.1102 * (attenuation_db - 8.7)
    } else if attenuation_db >= 21.0 {
        0.5842 * (attenuation_db - 21.0).powf(0.4) + 0.07886 * (attenuation_db - 21.0)
    } else {
        0.0
    }
}

/// Kaiser-windowed half-band low-pass with unit DC gain.
fn half_band(taps: usize) -> Vec<f64> {
    let mid = (taps - 1) as f64 / 2.0;
    let w = kaiser_window(taps, kaiser_beta(HB_ATTENUATION_DB));
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let k = n as f64 - mid;
            let sinc = if k == 0.0 {
                1.0
            } else {
                (std::f64::consts::FRAC_PI_2 * k).sin() / (std::f64::consts::FRAC_PI_2 * k)
            };
            0.5 * sinc * w[n]
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Magnitude response of a real FIR at frequency `f` for sample rate `rate`.
fn fir_magnitude(h: &[f64], f: f64, rate: f64) -> f64 {
    let w = std::f64::consts::TAU * f / rate;
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, &c)| {
        (re + c * (w * k as f64).cos(), im - c * (w * k as f64).sin())
    });
    re.hypot(im)
}

fn cic_magnitude(f: f64) -> f64 {
    let x = std::f64::consts::PI * f / PDM_RATE;
    if x.sin().abs() < 1e-300 {
        return 1.0;
    }
    ((CIC_RATIO as f64 * x).sin() / (CIC_RATIO as f64 * x.sin())).abs().powi(CIC_ORDER as i32)
}

/// Least-squares linear-phase FIR that flattens the droop of the preceding
/// stages over 0–20 kHz at the output rate.
fn compensator(hb1: &[f64], hb2: &[f64]) -> Vec<f64> {
    let half = (COMP_TAPS - 1) / 2;
    let nyq = PCM_RATE / 2.0;
    let mut rows = Vec::new();
    let pass_pts = 600;
    let stop_pts = 100;
    for i in 0..=pass_pts {
        rows.push((PASSBAND_EDGE * i as f64 / pass_pts as f64, 1.0));
    }
    for i in 1..=stop_pts {
        rows.push((PASSBAND_EDGE + (nyq - PASSBAND_EDGE) * i as f64 / stop_pts as f64, 1e-3));
    }
    let mut a = DMatrix::<f64>::zeros(rows.len(), half + 1);
    let mut b = DVector::<f64>::zeros(rows.len());
    for (r, &(f, weight)) in rows.iter().enumerate() {
        let upstream = cic_magnitude(f) * fir_magnitude(hb1, f, PDM_RATE / 16.0) * fir_magnitude(hb2, f, PDM_RATE / 32.0);
        let w = std::f64::consts::TAU * f / PCM_RATE;
        a[(r, 0)] = weight;
        for k in 1..=half {
            a[(r, k)] = weight * 2.0 * (w * k as f64).cos();
        }
        b[r] = weight / upstream;
    }
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    let x = ata
        .cholesky()
        .expect("normal equations of the compensator are positive definite")
        .solve(&atb);
    let mut h = vec![0.0; COMP_TAPS];
    h[half] = x[0];
    for k in 1..=half {
        h[half - k] = x[k];
        h[half + k] = x[k];
    }
    h
}

/// FIR filter followed by keeping every `ratio`-th output at `phase`.
fn fir_decimate(input: &[f64], h: &[f64], ratio: usize, phase: usize) -> Vec<f64> {
    if input.len() <= phase {
        return Vec::new();
    }
    let count = (input.len() - phase).div_ceil(ratio);
    (0..count)
        .map(|m| {
            let i = ratio * m + phase;
            h.iter()
                .enumerate()
                .take(i + 1)
                .map(|(k, c)| c * input[i - k])
                .sum()
        })
        .collect()
}

/// Integer CIC on ±1 bits with wrapping arithmetic; exact for any length.
fn cic_bits(stream: &PdmStream, phase: usize) -> Vec<f64> {
    let mut integ = [0i64; CIC_ORDER];
    let mut comb = [0i64; CIC_ORDER];
    let gain = (CIC_RATIO as f64).powi(CIC_ORDER as i32);
    let mut out = Vec::with_capacity(stream.len() / CIC_RATIO + 1);
    for (i, x) in stream.bipolar().enumerate() {
        let mut acc = i64::from(x);
        for s in integ.iter_mut() {
            *s = s.wrapping_add(acc);
            acc = *s;
        }
        if i % CIC_RATIO == phase {
            let mut v = acc;
            for c in comb.iter_mut() {
                let d = v.wrapping_sub(*c);
                *c = v;
                v = d;
            }
            out.push(v as f64 / gain);
        }
    }
    out
}

/// CIC impulse response `(Σ_{k<R} z^{-k})^N` as a direct-form FIR.
fn cic_taps() -> Vec<f64> {
    let mut h = vec![1.0];
    for _ in 0..CIC_ORDER {
        let mut next = vec![0.0; h.len() + CIC_RATIO - 1];
        for (i, v) in h.iter().enumerate() {
            for k in 0..CIC_RATIO {
                next[i + k] += v;
            }
        }
        h = next;
    }
    let gain = (CIC_RATIO as f64).powi(CIC_ORDER as i32);
    h.iter().map(|v| v / gain).collect()
}

impl Decimator {
    pub fn new() -> Self {
        let hb1 = half_band(HB1_TAPS);
        let hb2 = half_band(HB2_TAPS);
        let comp = compensator(&hb1, &hb2);
        let mut d = Decimator {
            hb1,
            hb2,
            comp,
            phases: [0; 3],
        };
        let p = d.group_delay_input() % DECIMATION;
        d.phases = [p % CIC_RATIO, (p / CIC_RATIO) % 2, (p / (2 * CIC_RATIO)) % 2];
        d
    }

    /// Overall group delay in PDM samples.
    pub fn group_delay_input(&self) -> usize {
        CIC_ORDER * (CIC_RATIO - 1) / 2
            + (self.hb1.len() - 1) / 2 * CIC_RATIO
            + (self.hb2.len() - 1) / 2 * CIC_RATIO * 2
            + (self.comp.len() - 1) / 2 * DECIMATION
    }

    /// Overall group delay in 48 kHz samples (exact).
    pub fn group_delay(&self) -> usize {
        self.group_delay_input() / DECIMATION
    }

    /// PDM index of output sample 0.
    pub fn phase(&self) -> usize {
        self.phases[0] + CIC_RATIO * self.phases[1] + 2 * CIC_RATIO * self.phases[2]
    }

    /// Span of all stage impulse responses in PDM samples.
    pub fn warm_up(&self) -> usize {
        CIC_ORDER * (CIC_RATIO - 1)
            + (self.hb1.len() - 1) * CIC_RATIO
            + (self.hb2.len() - 1) * CIC_RATIO * 2
            + (self.comp.len() - 1) * DECIMATION
    }

    pub fn stage_taps(&self) -> [&[f64]; 3] {
        [&self.hb1, &self.hb2, &self.comp]
    }

    /// Magnitude of the composite response at PDM-rate frequency `f`, i.e.
    /// the gain with which a tone at `f` appears (possibly aliased) in the output.
    pub fn frequency_response(&self, f: f64) -> f64 {
        cic_magnitude(f)
            * fir_magnitude(&self.hb1, f, PDM_RATE / 16.0)
            * fir_magnitude(&self.hb2, f, PDM_RATE / 32.0)
            * fir_magnitude(&self.comp, f, PCM_RATE)
    }

    fn tail(&self, after_cic: Vec<f64>) -> Vec<f64> {
        let s1 = fir_decimate(&after_cic, &self.hb1, 2, self.phases[1]);
        let s2 = fir_decimate(&s1, &self.hb2, 2, self.phases[2]);
        fir_decimate(&s2, &self.comp, 1, 0)
    }

    /// Runs the linear chain on a real-valued signal at the PDM rate.
    /// Output is normalised so that a DC input of 1.0 yields 1.0.
    pub fn process_f64(&self, input: &[f64]) -> Vec<f64> {
        let cic = fir_decimate(input, &cic_taps(), CIC_RATIO, self.phases[0]);
        self.tail(cic)
    }

    /// Decodes a PDM stream into normalised samples (full scale = ±1.0).
    pub fn process_bits(&self, stream: &PdmStream) -> Vec<f64> {
        self.tail(cic_bits(stream, self.phases[0]))
    }
}

/// Decimates a PDM stream to 48 kHz 32-bit PCM; full scale maps to `2³¹ − 1`.
pub fn pdm_decimate(stream: &PdmStream) -> Result<PcmBlock> {
    pdm_decimate_with(&Decimator::new(), stream)
}

pub fn pdm_decimate_with(decimator: &Decimator, stream: &PdmStream) -> Result<PcmBlock> {
    if stream.len() < decimator.warm_up() {
        return domain(format!(
            "PDM stream of {} bits is shorter than the decimator warm-up of {} bits",
            stream.len(),
            decimator.warm_up()
        ));
    }
    let full_scale = i32::MAX as f64;
    let samples = decimator
        .process_bits(stream)
        .into_iter()
        .map(|v| (v * full_scale).round().clamp(i32::MIN as f64, full_scale) as i32)
        .collect();
    Ok(PcmBlock {
        channel_id: stream.channel_id,
        samples,
        rate: PCM_RATE,
        group_delay: decimator.group_delay(),
    })
}
