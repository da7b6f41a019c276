use serde::{Deserialize, Serialize};

use super::PDM_RATE;

/// Packed 1-bit PDM samples at [`PDM_RATE`], LSB first within each byte.
/// A set bit is `+1`, a cleared bit `−1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdmStream {
    pub channel_id: u32,
    bits: Vec<u8>,
    len: usize,
    /// Input samples that exceeded full scale and were clipped.
    pub clipped: usize,
}

impl PdmStream {
    pub fn new(channel_id: u32) -> Self {
        PdmStream {
            channel_id,
            bits: Vec::new(),
            len: 0,
            clipped: 0,
        }
    }

    pub fn from_bools(channel_id: u32, bits: impl IntoIterator<Item = bool>) -> Self {
        let mut s = PdmStream::new(channel_id);
        for b in bits {
            s.push(b);
        }
        s
    }

    pub fn with_capacity(channel_id: u32, len: usize) -> Self {
        let mut s = PdmStream::new(channel_id);
        s.bits.reserve(len.div_ceil(8));
        s
    }

    pub fn rate(&self) -> f64 {
        PDM_RATE
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn duration(&self) -> f64 {
        self.len as f64 / PDM_RATE
    }

    pub fn push(&mut self, bit: bool) {
        if self.len.is_multiple_of(8) {
            self.bits.push(0);
        }
        if bit {
            *self.bits.last_mut().expect("byte pushed above") |= 1 << (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bits[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Samples as `±1`.
    pub fn bipolar(&self) -> impl Iterator<Item = i8> + '_ {
        self.iter().map(|b| if b { 1 } else { -1 })
    }

    /// Mean of the bipolar samples.
    pub fn mean(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        self.bipolar().map(i64::from).sum::<i64>() as f64 / self.len as f64
    }

    pub fn packed(&self) -> &[u8] {
        &self.bits
    }
}

/// Noise-shaping order of the delta-sigma modulator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulatorOrder {
    First,
    #[default]
    Second,
}

/// Delta-sigma modulator with a 1-bit quantizer (cascade of integrators,
/// feedback form). The second-order loop realises `Y = z⁻¹X + (1 − z⁻¹)²E`.
#[derive(Debug, Clone, Default)]
pub struct PdmModulator {
    order: ModulatorOrder,
    s1: f64,
    s2: f64,
}

const S1_LIMIT: f64 = 4.0;
const S2_LIMIT: f64 = 16.0;

impl PdmModulator {
    pub fn new(order: ModulatorOrder) -> Self {
        PdmModulator {
            order,
            ..Default::default()
        }
    }

    /// Ingests one sample in `[−1, 1]` and emits one bit.
    pub fn step(&mut self, x: f64) -> bool {
        match self.order {
            ModulatorOrder::First => {
                let y = if self.s1 >= 0.0 { 1.0 } else { -1.0 };
                self.s1 = (self.s1 + x - y).clamp(-S1_LIMIT, S1_LIMIT);
                y > 0.0
            }
            ModulatorOrder::Second => {
                let y = if self.s2 >= 0.0 { 1.0 } else { -1.0 };
                self.s1 = (self.s1 + x - y).clamp(-S1_LIMIT, S1_LIMIT);
                self.s2 = (self.s2 + self.s1 - y).clamp(-S2_LIMIT, S2_LIMIT);
                y > 0.0
            }
        }
    }
}

/// Encodes a pressure waveform sampled at the PDM rate into a PDM stream.
/// Samples beyond `full_scale` are clipped and counted in [`PdmStream::clipped`].
pub fn pdm_modulate(waveform: &[f64], full_scale: f64, order: ModulatorOrder, channel_id: u32) -> PdmStream {
    let mut m = PdmModulator::new(order);
    let mut out = PdmStream::with_capacity(channel_id, waveform.len());
    for &w in waveform {
        let mut x = w / full_scale;
        if !(x.abs() <= 1.0) {
            out.clipped += 1;
            x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        }
        out.push(m.step(x));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_has_zero_mean() {
        let s = pdm_modulate(&vec![0.0; 100_000], 1.0, ModulatorOrder::Second, 0);
        assert!(s.mean().abs() < 1e-3);
    }

    #[test]
    fn full_scale_dc_saturates() {
        let s = pdm_modulate(&vec![1.0; 10_000], 1.0, ModulatorOrder::Second, 0);
        let tail: i64 = (100..10_000).map(|i| if s.get(i) { 1 } else { -1 }).sum();
        assert_eq!(tail, 9_900);
        assert_eq!(s.clipped, 0);
    }

    #[test]
    fn overload_is_flagged() {
        let s = pdm_modulate(&[0.5, 2.0, -3.0, 0.0], 1.0, ModulatorOrder::Second, 0);
        assert_eq!(s.clipped, 2);
    }

    #[test]
    fn dc_density_tracks_input() {
        for order in [ModulatorOrder::First, ModulatorOrder::Second] {
            let s = pdm_modulate(&vec![0.3; 200_000], 1.0, order, 0);
            assert!((s.mean() - 0.3).abs() < 1e-3);
        }
    }

    #[test]
    fn packing_round_trip() {
        let bits: Vec<bool> = (0..37).map(|i| i % 3 == 0).collect();
        let s = PdmStream::from_bools(4, bits.clone());
        assert_eq!(s.iter().collect::<Vec<_>>(), bits);
        assert_eq!(s.packed().len(), 5);
    }
}
