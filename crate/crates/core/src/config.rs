//! Pipeline configuration (JSON or TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{ModulatorOrder, DEFAULT_FRAMES_PER_PACKET};
use crate::analysis::{Averaging, BeamformSettings, PitchSeriesParams, RegionOfInterest};
use crate::beamforming::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::ArrayFrame;
use crate::spectral::{BandType, Window};
use crate::synthesis::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Generate {
        #[serde(default = "three")]
        panels_x: usize,
        #[serde(default = "three")]
        panels_z: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        frame: Option<ArrayFrame>,
    },
    /// Geometry JSON file; relative paths resolve against the config file.
    Load { path: PathBuf },
}

fn three() -> usize {
    3
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec::Generate {
            panels_x: 3,
            panels_z: 3,
            seed: 0,
            frame: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubArraySpec {
    /// 140-sensor spiral-arm layout centred on the array.
    DnwLike {
        #[serde(default = "dnw_aperture")]
        aperture: f64,
        #[serde(default)]
        center: Option<[f64; 2]>,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    PitchSeries(PitchSeriesParams),
    /// One spiral per analysis frequency with aperture `d_ref·f_ref/f`.
    FreqDependent {
        #[serde(default)]
        center: Option<[f64; 2]>,
        #[serde(default = "fd_aperture")]
        d_ref: f64,
        #[serde(default = "fd_frequency")]
        f_ref: f64,
        #[serde(default = "fd_mics")]
        mics: usize,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    /// Fixed sensor indices into the geometry.
    Explicit { indices: Vec<usize> },
}

fn dnw_aperture() -> f64 {
    crate::geometry::DNW_LIKE_APERTURE
}
fn default_epsilon() -> f64 {
    0.1
}
fn fd_aperture() -> f64 {
    5.5
}
fn fd_frequency() -> f64 {
    1000.0
}
fn fd_mics() -> usize {
    200
}

impl Default for SubArraySpec {
    fn default() -> Self {
        SubArraySpec::DnwLike {
            aperture: dnw_aperture(),
            center: None,
            epsilon: default_epsilon(),
        }
    }
}

/// How CSMs are obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsmMode {
    /// Exact CSMs from the scene.
    #[default]
    Exact,
    /// Welch estimates from synthesized time series.
    Welch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    #[serde(default)]
    pub mode: CsmMode,
    #[serde(default = "default_block")]
    pub block: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default)]
    pub window: Window,
    /// Record length for Welch mode, s.
    #[serde(default = "one")]
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
}

fn default_block() -> usize {
    1024
}
fn default_overlap() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn default_rate() -> f64 {
    crate::acquisition::PCM_RATE
}

impl Default for SpectralSpec {
    fn default() -> Self {
        SpectralSpec {
            mode: CsmMode::Exact,
            block: default_block(),
            overlap: default_overlap(),
            window: Window::Hann,
            duration: 1.0,
            rate: default_rate(),
        }
    }
}

/// Routes Welch-mode time series through PDM encoding, packets and decimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    #[serde(default)]
    pub enabled: bool,
    /// Pressure mapped to PDM full scale, Pa.
    #[serde(default = "default_full_scale")]
    pub full_scale: f64,
    #[serde(default)]
    pub order: ModulatorOrder,
    #[serde(default = "default_frames")]
    pub frames_per_packet: usize,
    /// Packet sequence numbers to drop (per FPGA).
    #[serde(default)]
    pub drop_packets: Vec<u32>,
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
}

fn default_full_scale() -> f64 {
    20.0
}
fn default_frames() -> usize {
    DEFAULT_FRAMES_PER_PACKET
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            enabled: false,
            full_scale: default_full_scale(),
            order: ModulatorOrder::Second,
            frames_per_packet: default_frames(),
            drop_packets: Vec::new(),
            shuffle_seed: None,
        }
    }
}

/// Virtual far-field microphones compared against the integrated spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarFieldSpec {
    pub mics: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
    Bin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub format: OutputFormat,
    /// Width (m) of the Gaussian used to render CLEAN-SC maps; deltas if absent.
    #[serde(default)]
    pub gaussian_sigma: Option<f64>,
    /// Also write the CSM container.
    #[serde(default = "yes")]
    pub csm: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            format: OutputFormat::Csv,
            gaussian_sigma: None,
            csm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub geometry: GeometrySpec,
    pub scene: Scene,
    #[serde(default)]
    pub subarray: SubArraySpec,
    #[serde(default)]
    pub spectral: SpectralSpec,
    #[serde(default)]
    pub acquisition: AcquisitionSpec,
    pub grid: GridSpec,
    /// Region integrated into spectra; the whole grid if absent.
    #[serde(default)]
    pub roi: Option<RegionOfInterest>,
    /// Analysis frequencies, Hz.
    pub frequencies: Vec<f64>,
    /// Band integration of the output spectrum.
    #[serde(default)]
    pub band: Option<BandType>,
    #[serde(default)]
    pub beamforming: BeamformSettings,
    #[serde(default)]
    pub averaging: Averaging,
    #[serde(default)]
    pub farfield: Option<FarFieldSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl PipelineConfig {
    /// Parses JSON, or TOML when `path` ends in `.toml`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let mut cfg = if is_toml {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let GeometrySpec::Load { path: p } = &mut cfg.geometry {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.frequencies.is_empty() {
            return bad("frequencies: at least one analysis frequency is required");
        }
        if self.frequencies.iter().any(|f| !(*f > 0.0)) {
            return bad("frequencies: values must be positive");
        }
        if self.frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("frequencies: values must be strictly increasing");
        }
        if !(self.grid.spacing > 0.0) {
            return bad("grid.spacing: must be positive");
        }
        if !(0.0..1.0).contains(&self.spectral.overlap) {
            return bad("spectral.overlap: must lie in [0, 1)");
        }
        if self.spectral.block < 2 {
            return bad("spectral.block: must be at least 2");
        }
        let c = &self.beamforming.clean;
        if !(c.loop_gain > 0.0 && c.loop_gain <= 1.0) {
            return bad("beamforming.clean.loop_gain: must lie in (0, 1]");
        }
        if let Some(r) = &self.roi {
            r.validate().map_err(|e| Error::Config(format!("roi: {e}")))?;
        }
        if self.acquisition.enabled && self.spectral.mode != CsmMode::Welch {
            return bad("acquisition.enabled: requires spectral.mode = \"welch\"");
        }
        if let SubArraySpec::PitchSeries(p) = &self.subarray {
            if p.count < 2 {
                return bad("subarray.count: a pitch series needs at least two sub-arrays");
            }
        }
        self.scene
            .medium
            .validate()
            .map_err(|e| Error::Config(format!("scene.medium: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "scene": {"sources": [{"position": [2.4, 0, 0], "spectrum": {"type": "white", "psd": 1e-4}}]},
        "grid": {"x_range": [1, 4], "z_range": [-1.5, 1.5], "spacing": 0.05},
        "frequencies": [2000, 4000]
    }"#;

    #[test]
    fn minimal_json_parses_with_defaults() {
        let c = PipelineConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.spectral.block, 1024);
        assert!(matches!(c.subarray, SubArraySpec::DnwLike { .. }));
        assert!(c.beamforming.clean_sc);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"frequencies\"", "\"bogus\": 1, \"frequencies\"");
        let e = PipelineConfig::from_json(&text).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn toml_equivalent() {
        let t = r#"
            frequencies = [2000.0, 4000.0]
            [scene]
            sources = [{ position = [2.4, 0.0, 0.0], spectrum = { type = "white", psd = 1e-4 } }]
            [grid]
            x_range = [1.0, 4.0]
            z_range = [-1.5, 1.5]
            spacing = 0.05
            [subarray]
            strategy = "pitch_series"
            count = 13
            aperture = 2.0
            mics = 150
            epsilon = 0.1
            reference = [2.4, 0.0, 0.0]
        "#;
        let c = PipelineConfig::from_toml(t).unwrap();
        assert!(matches!(c.subarray, SubArraySpec::PitchSeries(_)));
    }

    #[test]
    fn invalid_values_rejected() {
        let text = MINIMAL.replace("[2000, 4000]", "[4000, 2000]");
        assert!(matches!(PipelineConfig::from_json(&text), Err(Error::Config(_))));
    }
}
