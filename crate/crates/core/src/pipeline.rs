//! End-to-end orchestration used by the executable: geometry → sub-arrays →
//! CSMs → beamforming → analysis, with a run manifest of hashed artifacts.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::acquisition::{
    depacketize, inject_faults, packetize, pdm_decimate, pdm_modulate, DaqPacket, Gap, PdmStream, CHANNELS_PER_FPGA,
    DECIMATION,
};
use crate::analysis::{
    beamform_subarray, directivity_pipeline, farfield_compare, integrate_maps, octave_polar,
    CsmInput, DirectivityResult, FarFieldComparison, RegionOfInterest,
};
use crate::beamforming::{make_focus_grid, render_gaussian, BeamformingMap, FocusGrid, MapKind};
use crate::config::{AcquisitionSpec, CsmMode, GeometrySpec, OutputFormat, PipelineConfig, SubArraySpec};
use crate::error::{Error, Result};
use crate::geometry::{
    assemble_full_array_in, dnw_like_targets, freq_dependent_subarrays, hex_digest, sample_subarray, ArrayGeometry,
    SubArray,
};
use crate::io;
use crate::spectral::{band_integrate, csm_stats, welch_csm, BandType, CrossSpectralMatrix, Spectrum};
use crate::synthesis::{synthesize_csm, synthesize_timeseries, upsample, Scene};
use crate::Vec3;

/// A failure tagged with the pipeline stage it occurred in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage '{}': {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub trait InStage<T> {
    fn stage(self, stage: &'static str) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> StageResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

pub fn build_geometry(spec: &GeometrySpec) -> Result<ArrayGeometry> {
    match spec {
        GeometrySpec::Generate {
            panels_x,
            panels_z,
            seed,
            frame,
        } => assemble_full_array_in(*panels_x, *panels_z, *seed, &frame.unwrap_or_default()),
        GeometrySpec::Load { path } => io::read_geometry_json(path),
    }
}

/// Sub-arrays for the configured strategy, each paired with the frequency it
/// is restricted to (frequency-dependent apertures) or `None`.
pub fn select_subarrays(cfg: &PipelineConfig, geometry: &ArrayGeometry) -> Result<Vec<(Option<f64>, SubArray)>> {
    let center = |c: &Option<[f64; 2]>| c.unwrap_or_else(|| geometry.extent().center());
    match &cfg.subarray {
        SubArraySpec::DnwLike {
            aperture,
            center: c,
            epsilon,
        } => {
            let targets: Vec<Vec3> = dnw_like_targets(*aperture, center(c))
                .into_iter()
                .map(|p| geometry.lift(p))
                .collect();
            Ok(vec![(None, sample_subarray(geometry, &targets, *epsilon)?)])
        }
        SubArraySpec::PitchSeries(p) => {
            crate::geometry::pitch_subarray_series(geometry, p.count, p.aperture, p.mics, p.epsilon)
                .map(|v| v.into_iter().map(|s| (None, s)).collect())
        }
        SubArraySpec::FreqDependent {
            center: c,
            d_ref,
            f_ref,
            mics,
            epsilon,
        } => freq_dependent_subarrays(geometry, center(c), *d_ref, *f_ref, *mics, &cfg.frequencies, *epsilon)
            .map(|v| v.into_iter().map(|(f, s)| (Some(f), s)).collect()),
        SubArraySpec::Explicit { indices } => {
            let n = geometry.len();
            if let Some(bad) = indices.iter().find(|&&i| i >= n) {
                return Err(Error::Config(format!("subarray.indices: {bad} is out of range for {n} sensors")));
            }
            let mut sorted = indices.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config("subarray.indices: duplicate index".into()));
            }
            let positions: Vec<Vec3> = indices.iter().map(|&i| geometry.positions()[i]).collect();
            let mut sub = SubArray::explicit(&positions);
            sub.indices = indices.clone();
            sub.parent_hash = geometry.content_hash();
            Ok(vec![(None, sub)])
        }
    }
}

/// Result of running pressure signals through the acquisition chain.
#[derive(Debug, Clone)]
pub struct Acquired {
    /// Decoded PCM per channel, aligned to the input (group delay removed).
    pub pcm: Vec<Vec<i32>>,
    /// The same samples converted back to Pa.
    pub pressure: Vec<Vec<f64>>,
    pub packets: Vec<DaqPacket>,
    pub gaps: Vec<(u16, Gap)>,
    pub clipped: usize,
    pub group_delay: usize,
}

/// PCM-rate pressure → PDM → packets (with injected faults) → decimated PCM.
pub fn acquire(channels: &[Vec<f64>], spec: &AcquisitionSpec) -> Result<Acquired> {
    if channels.is_empty() {
        return Err(Error::Domain("no channels to acquire".into()));
    }
    let n = channels[0].len();
    let streams: Vec<PdmStream> = channels
        .par_iter()
        .enumerate()
        .map(|(c, x)| pdm_modulate(&upsample(x, DECIMATION), spec.full_scale, spec.order, c as u32))
        .collect();
    let clipped = streams.iter().map(|s| s.clipped).sum();
    let bits = n * DECIMATION;
    let mut packets = Vec::new();
    for (fpga, group) in streams.chunks(CHANNELS_PER_FPGA).enumerate() {
        let mut group = group.to_vec();
        while group.len() < CHANNELS_PER_FPGA {
            group.push(PdmStream::from_bools(group.len() as u32, (0..bits).map(|k| k % 2 == 0)));
        }
        packets.extend(packetize(&group, fpga as u16, spec.frames_per_packet)?);
    }
    let received = inject_faults(packets.clone(), &spec.drop_packets, spec.shuffle_seed);
    let captures = depacketize(&received, !spec.drop_packets.is_empty())?;
    let gaps = captures
        .iter()
        .flat_map(|c| c.gaps.iter().map(move |g| (c.fpga_id, *g)))
        .collect();
    let decoded: Vec<PdmStream> = captures
        .into_iter()
        .flat_map(|c| c.streams.into_iter().take(CHANNELS_PER_FPGA))
        .take(channels.len())
        .collect();
    let blocks = decoded.par_iter().map(pdm_decimate).collect::<Result<Vec<_>>>()?;
    let group_delay = blocks[0].group_delay;
    let pcm: Vec<Vec<i32>> = blocks.into_iter().map(|b| b.samples[group_delay..].to_vec()).collect();
    let scale = spec.full_scale / i32::MAX as f64;
    let pressure = pcm
        .iter()
        .map(|c| c.iter().map(|&v| v as f64 * scale).collect())
        .collect();
    Ok(Acquired {
        pcm,
        pressure,
        packets: received,
        gaps,
        clipped,
        group_delay,
    })
}

/// Index of the Welch bin closest to `f`.
pub fn welch_bin(f: f64, rate: f64, block: usize) -> usize {
    ((f * block as f64 / rate).round() as usize).min(block / 2)
}

/// CSMs for one set of sensor positions at the requested frequencies.
/// In Welch mode the returned frequencies are the nearest FFT bins.
pub fn compute_csms(
    cfg: &PipelineConfig,
    scene: &Scene,
    positions: &[Vec3],
    frequencies: &[f64],
    warnings: &mut Vec<String>,
) -> Result<Vec<CrossSpectralMatrix>> {
    match cfg.spectral.mode {
        CsmMode::Exact => synthesize_csm(scene, positions, frequencies),
        CsmMode::Welch => {
            let sp = &cfg.spectral;
            let synth = synthesize_timeseries(scene, positions, sp.rate, sp.duration)?;
            warnings.extend(synth.warnings);
            let signals = if cfg.acquisition.enabled {
                let acq = acquire(&synth.channels, &cfg.acquisition)?;
                if acq.clipped > 0 {
                    warnings.push(format!("acquisition: {} PDM input samples clipped", acq.clipped));
                }
                for (fpga, g) in &acq.gaps {
                    warnings.push(format!(
                        "acquisition: FPGA {fpga} lost {} packet(s) covering PDM samples {}..{}",
                        g.missing_packets, g.sample_start, g.sample_end
                    ));
                }
                acq.pressure
            } else {
                synth.channels
            };
            let all = welch_csm(&signals, sp.rate, sp.block, sp.overlap, sp.window)?;
            Ok(frequencies
                .iter()
                .map(|&f| all[welch_bin(f, sp.rate, sp.block)].clone())
                .collect())
        }
    }
}

/// Hashed artifact written by a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Run manifest; contains no timestamps so reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub geometry_sha256: String,
    pub std_convention: &'static str,
    pub db_reference: &'static str,
    pub warnings: Vec<String>,
    pub outputs: Vec<Artifact>,
}

/// Writes artifacts under `<root>/<stage>/<name>` and records their hashes.
pub struct ArtifactWriter {
    root: PathBuf,
    records: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(ArtifactWriter {
            root: root.to_path_buf(),
            records: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, stage: &str, name: &str) -> Result<PathBuf> {
        let dir = self.root.join(stage);
        fs::create_dir_all(&dir)?;
        Ok(dir.join(name))
    }

    /// Records a file written by other means.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.records.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes: bytes.len() as u64,
            sha256: hex_digest(&Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn write_with(
        &mut self,
        stage: &str,
        name: &str,
        f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
    ) -> Result<PathBuf> {
        let path = self.path(stage, name)?;
        let mut w = BufWriter::new(fs::File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        drop(w);
        self.record(&path)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, stage: &str, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(stage, name)?;
        io::write_json(&path, value)?;
        self.record(&path)?;
        Ok(path)
    }

    /// Writes `manifest.json` at the root and returns the manifest.
    pub fn finish(
        self,
        command: &str,
        config: &impl Serialize,
        geometry_hash: String,
        warnings: Vec<String>,
    ) -> Result<Manifest> {
        let config = serde_json::to_value(config)?;
        let canonical = serde_json::to_vec(&config)?;
        let manifest = Manifest {
            tool: "micarray",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_sha256: hex_digest(&Sha256::digest(&canonical)),
            config,
            geometry_sha256: geometry_hash,
            std_convention: "population",
            db_reference: io::DB_REFERENCE,
            warnings,
            outputs: self.records,
        };
        io::write_json(&self.root.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

fn freq_label(f: f64) -> String {
    let s = format!("{f:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}Hz")
}

/// Writes one map in the configured format.
pub fn write_map(
    out: &mut ArtifactWriter,
    stage: &str,
    map: &BeamformingMap,
    grid: &FocusGrid,
    format: OutputFormat,
    sigma: Option<f64>,
) -> Result<PathBuf> {
    let values = match (map.kind, sigma) {
        (MapKind::CleanSc, Some(s)) => render_gaussian(map, grid, s),
        _ => map.clamped(),
    };
    let kind = match map.kind {
        MapKind::Conventional => "conventional",
        MapKind::CleanSc => "clean_sc",
    };
    let base = format!("map_{kind}_{}", freq_label(map.frequency));
    match format {
        OutputFormat::Csv => out.write_with(stage, &format!("{base}.csv"), |w| io::write_map_csv(w, &values, grid)),
        OutputFormat::Json => out.write_json(stage, &format!("{base}.json"), &io::MapDocument::new(map, grid, Some(values))),
        OutputFormat::Bin => out.write_with(stage, &format!("{base}.bin"), |w| {
            io::write_map_bin(w, map.frequency, &values, grid)
        }),
    }
}

fn write_spectrum(out: &mut ArtifactWriter, stage: &str, name: &str, s: &Spectrum) -> Result<()> {
    out.write_with(stage, &format!("{name}.csv"), |w| io::write_spectrum_csv(w, s))?;
    Ok(())
}

fn band_label(b: BandType) -> &'static str {
    match b {
        BandType::Narrowband => "narrowband",
        BandType::ThirdOctave => "third_octave",
        BandType::Octave => "octave",
    }
}

/// Region used for integration: the configured ROI or the whole grid.
pub fn effective_roi(cfg: &PipelineConfig) -> RegionOfInterest {
    cfg.roi.clone().unwrap_or_else(|| {
        let h = 0.5 * cfg.grid.spacing;
        RegionOfInterest::rect(
            "grid",
            [cfg.grid.x_range[0] - h, cfg.grid.x_range[1] + h],
            [cfg.grid.z_range[0] - h, cfg.grid.z_range[1] + h],
        )
    })
}

fn roi_center(grid: &FocusGrid, roi: &RegionOfInterest) -> Vec3 {
    let inside = roi.indices(grid);
    let sum = inside.iter().fold(Vec3::zeros(), |a, &i| a + grid.point(i));
    sum / inside.len().max(1) as f64
}

/// Far-field comparison against virtual microphones fed by the same scene.
/// Microphone distances are measured from the ROI centre.
pub fn farfield_for(
    scene: &Scene,
    integrated: &Spectrum,
    mics: &[Vec3],
    origin: &Vec3,
) -> Result<FarFieldComparison> {
    let csms = synthesize_csm(scene, mics, &integrated.frequencies)?;
    let spectra = (0..mics.len())
        .map(|m| {
            let s = Spectrum::new(
                integrated.frequencies.clone(),
                csms.iter().map(|c| c.diag(m)).collect(),
                BandType::Narrowband,
            )?;
            Ok((s, (mics[m] - origin).norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    farfield_compare(integrated, &spectra)
}

/// Outcome of a pipeline run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub spectrum: Option<Spectrum>,
    pub directivity: Option<DirectivityResult>,
    pub farfield: Option<FarFieldComparison>,
}

/// Runs the configured pipeline and writes `<out>/<stage>/<artifact>` files
/// plus `<out>/manifest.json`.
fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> StageResult<RunSummary> {
    let mut out = ArtifactWriter::new(out_dir).stage("output")?;
    let mut warnings = Vec::new();
    if cfg.scene.absorption != cfg.beamforming.corrections.absorption {
        warnings.push(format!(
            "scene absorption is {} but the steering absorption correction is {}; high-frequency levels will be biased",
            on_off(cfg.scene.absorption),
            on_off(cfg.beamforming.corrections.absorption)
        ));
    }

    let geometry = build_geometry(&cfg.geometry).stage("geometry")?;
    out.write_json("geometry", "geometry.json", &io::GeometryFile::from_geometry(&geometry))
        .stage("geometry")?;

    let subs = select_subarrays(cfg, &geometry).stage("subarray")?;
    for (f, s) in &subs {
        if s.discarded > 0 {
            let at = f.map_or(String::new(), |f| format!(" at {f} Hz"));
            warnings.push(format!(
                "sub-array{at}: {} of {} targets discarded (no sensor within ε)",
                s.discarded,
                s.target_positions.len()
            ));
        }
    }
    let sub_list: Vec<&SubArray> = subs.iter().map(|(_, s)| s).collect();
    out.write_json("subarray", "subarrays.json", &sub_list).stage("subarray")?;

    let grid = make_focus_grid(cfg.grid).stage("grid")?;
    let roi = effective_roi(cfg);
    let scene = &cfg.scene;
    let medium = &scene.medium;

    if let SubArraySpec::PitchSeries(series) = &cfg.subarray {
        let welch_warnings = std::sync::Mutex::new(Vec::new());
        let estimator = |sub: &SubArray, freqs: &[f64]| {
            let mut w = Vec::new();
            let r = compute_csms(cfg, scene, &sub.positions_vec3(), freqs, &mut w);
            welch_warnings.lock().expect("poisoned").extend(w);
            r
        };
        let input = match cfg.spectral.mode {
            CsmMode::Exact => CsmInput::Scene(scene),
            CsmMode::Welch => CsmInput::Custom(&estimator),
        };
        let result = directivity_pipeline(
            input,
            &geometry,
            series,
            &grid,
            &roi,
            &cfg.frequencies,
            medium,
            &cfg.beamforming,
            cfg.averaging,
        )
        .stage("directivity")?;
        warnings.extend(welch_warnings.into_inner().expect("poisoned"));
        out.write_with("analysis", "directivity.csv", |w| io::write_directivity_csv(w, &result.surface))
            .stage("analysis")?;
        out.write_json("analysis", "directivity.json", &result).stage("analysis")?;
        if let Some(band) = cfg.band {
            let polar = octave_polar(&result.surface, band).stage("analysis")?;
            out.write_with("analysis", &format!("polar_{}.csv", band_label(band)), |w| {
                io::write_polar_csv(w, &polar)
            })
            .stage("analysis")?;
        }
        let manifest = out
            .finish("pipeline", cfg, geometry.content_hash(), warnings)
            .stage("output")?;
        return Ok(RunSummary {
            manifest,
            spectrum: None,
            directivity: Some(result),
            farfield: None,
        });
    }

    // one sub-array for all frequencies, or one per frequency
    let mut maps = Vec::with_capacity(cfg.frequencies.len());
    let mut all_csms = Vec::new();
    for (restrict, sub) in &subs {
        if sub.is_empty() {
            return Err(StageError {
                stage: "subarray",
                error: Error::Domain("sub-array has no sensors".into()),
            });
        }
        let freqs: Vec<f64> = match restrict {
            Some(f) => vec![*f],
            None => cfg.frequencies.clone(),
        };
        let csms = compute_csms(cfg, scene, &sub.positions_vec3(), &freqs, &mut warnings).stage("spectral")?;
        maps.extend(beamform_subarray(sub, &csms, &grid, medium, &cfg.beamforming).stage("beamforming")?);
        all_csms.push(csms);
    }

    if cfg.outputs.csm {
        for csms in &all_csms {
            let name = if all_csms.len() == 1 {
                "csm.bin".to_string()
            } else {
                format!("csm_{}.bin", freq_label(csms[0].frequency))
            };
            let hash = geometry.content_hash();
            out.write_with("spectral", &name, |w| io::write_csm(w, csms, &hash))
                .stage("spectral")?;
            let stats = csms
                .iter()
                .filter(|c| c.size() >= 2)
                .map(csm_stats)
                .collect::<Result<Vec<_>>>()
                .stage("spectral")?;
            let stats_name = name.replace("csm", "csm_stats").replace(".bin", ".json");
            out.write_json("spectral", &stats_name, &stats).stage("spectral")?;
        }
    }

    for m in &maps {
        write_map(&mut out, "beamforming", m, &grid, cfg.outputs.format, cfg.outputs.gaussian_sigma)
            .stage("beamforming")?;
    }
    let spectrum = integrate_maps(&maps, &grid, &roi).stage("analysis")?;
    write_spectrum(&mut out, "analysis", "spectrum", &spectrum).stage("analysis")?;
    if let Some(band) = cfg.band {
        let b = band_integrate(&spectrum, band).stage("analysis")?;
        write_spectrum(&mut out, "analysis", &format!("spectrum_{}", band_label(band)), &b.to_spectrum())
            .stage("analysis")?;
    }
    let farfield = match &cfg.farfield {
        Some(ff) => {
            let mics: Vec<Vec3> = ff.mics.iter().map(|p| Vec3::from(*p)).collect();
            let c = farfield_for(scene, &spectrum, &mics, &roi_center(&grid, &roi)).stage("farfield")?;
            if c.resampled {
                warnings.push("farfield: frequency axes differed; compared on the coarser axis".into());
            }
            out.write_json("analysis", "farfield.json", &c).stage("farfield")?;
            Some(c)
        }
        None => None,
    };
    let manifest = out
        .finish("pipeline", cfg, geometry.content_hash(), warnings)
        .stage("output")?;
    Ok(RunSummary {
        manifest,
        spectrum: Some(spectrum),
        directivity: None,
        farfield,
    })
}
