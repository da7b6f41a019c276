//! File formats: geometry, CSM containers, maps, spectra, directivity tables
//! and PCM exports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{DirectivitySurface, PolarTable};
use crate::beamforming::{BeamformingMap, CleanComponent, FocusGrid, MapKind};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, ArrayPlane, SensorInfo};
use crate::spectral::{CrossSpectralMatrix, Spectrum, Window};
use crate::{power_db, Vec3};

/// Annotation carried by every dB output.
pub const DB_REFERENCE: &str = "dB re (20 µPa)²";

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRecord {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub panel: u32,
    #[serde(default)]
    pub pcb: u32,
    #[serde(default)]
    pub design: u8,
    #[serde(default)]
    pub local_index: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryFile {
    pub sensors: Vec<SensorRecord>,
    pub plane: ArrayPlane,
}

impl GeometryFile {
    pub fn from_geometry(g: &ArrayGeometry) -> Self {
        GeometryFile {
            sensors: g
                .positions()
                .iter()
                .zip(g.sensors())
                .enumerate()
                .map(|(id, (p, s))| SensorRecord {
                    id,
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    panel: s.panel,
                    pcb: s.pcb,
                    design: s.design,
                    local_index: s.local_index,
                })
                .collect(),
            plane: *g.plane(),
        }
    }

    /// Sensors are ordered by `id`, which must be `0..n`.
    pub fn to_geometry(&self) -> Result<ArrayGeometry> {
        let mut sensors = self.sensors.clone();
        sensors.sort_by_key(|s| s.id);
        if sensors.iter().enumerate().any(|(i, s)| s.id != i) {
            return Err(config_err("sensor ids must be 0..n without gaps"));
        }
        ArrayGeometry::from_parts(
            sensors.iter().map(|s| Vec3::new(s.x, s.y, s.z)).collect(),
            sensors
                .iter()
                .map(|s| SensorInfo {
                    panel: s.panel,
                    pcb: s.pcb,
                    design: s.design,
                    local_index: s.local_index,
                })
                .collect(),
            self.plane,
            None,
        )
    }
}

pub fn write_geometry_json(path: &Path, g: &ArrayGeometry) -> Result<()> {
    write_json(path, &GeometryFile::from_geometry(g))
}

pub fn read_geometry_json(path: &Path) -> Result<ArrayGeometry> {
    read_json::<GeometryFile>(path)?.to_geometry()
}

pub fn write_geometry_csv<W: Write>(mut w: W, g: &ArrayGeometry) -> Result<()> {
    writeln!(w, "id,x,y,z")?;
    for (i, p) in g.positions().iter().enumerate() {
        writeln!(w, "{i},{},{},{}", p.x, p.y, p.z)?;
    }
    Ok(())
}

const CSM_MAGIC: &[u8; 4] = b"MCSM";

/// JSON header of a CSM container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsmHeader {
    pub channels: usize,
    pub frequencies: Vec<f64>,
    pub n_averages: usize,
    pub window: Window,
    pub block_size: usize,
    pub overlap: f64,
    #[serde(default)]
    pub geometry_hash: String,
    pub units: String,
    /// `packed_upper_triangle_row_major_f64le_re_im`
    pub layout: String,
}

/// `"MCSM"`, u32 LE header length, JSON header, then per frequency the packed
/// upper triangle as little-endian `f64` (re, im) pairs.
pub fn write_csm<W: Write>(mut w: W, csms: &[CrossSpectralMatrix], geometry_hash: &str) -> Result<()> {
    let first = csms.first().ok_or_else(|| Error::Domain("no CSMs to write".into()))?;
    let header = CsmHeader {
        channels: first.size(),
        frequencies: csms.iter().map(|c| c.frequency).collect(),
        n_averages: first.n_averages,
        window: first.window,
        block_size: first.block_size,
        overlap: first.overlap,
        geometry_hash: geometry_hash.to_string(),
        units: "Pa^2/Hz".into(),
        layout: "packed_upper_triangle_row_major_f64le_re_im".into(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CSM_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for c in csms {
        if c.size() != header.channels {
            return Err(Error::Domain("CSMs differ in size".into()));
        }
        for v in c.packed() {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_csm<R: Read>(mut r: R) -> Result<(CsmHeader, Vec<CrossSpectralMatrix>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CSM_MAGIC {
        return Err(config_err("not a CSM container"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CsmHeader = serde_json::from_slice(&json)?;
    let n = header.channels;
    let mut out = Vec::with_capacity(header.frequencies.len());
    let mut buf = [0u8; 16];
    for &f in &header.frequencies {
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for _ in 0..n * (n + 1) / 2 {
            r.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(buf[8..].try_into().expect("8 bytes"));
            packed.push(Complex64::new(re, im));
        }
        let mut c = CrossSpectralMatrix::from_packed(f, n, packed)?;
        c.n_averages = header.n_averages;
        c.window = header.window;
        c.block_size = header.block_size;
        c.overlap = header.overlap;
        out.push(c);
    }
    Ok((header, out))
}

/// Map export with its grid, in JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub frequency: f64,
    pub kind: MapKind,
    pub diagonal_removal: bool,
    pub nx: usize,
    pub nz: usize,
    pub x_range: [f64; 2],
    pub z_range: [f64; 2],
    pub spacing: f64,
    pub units: String,
    pub db_reference: String,
    /// Clamped values (Pa² at 1 m), index `iz * nx + ix`.
    pub values: Vec<f64>,
    pub negative_values: usize,
    pub components: Vec<CleanComponent>,
}

impl MapDocument {
    pub fn new(map: &BeamformingMap, grid: &FocusGrid, values: Option<Vec<f64>>) -> Self {
        MapDocument {
            frequency: map.frequency,
            kind: map.kind,
            diagonal_removal: map.diagonal_removal,
            nx: grid.nx,
            nz: grid.nz,
            x_range: grid.spec.x_range,
            z_range: grid.spec.z_range,
            spacing: grid.spec.spacing,
            units: "Pa^2/Hz at 1 m".into(),
            db_reference: DB_REFERENCE.into(),
            values: values.unwrap_or_else(|| map.clamped()),
            negative_values: map.negative,
            components: map.components.clone(),
        }
    }
}

/// CSV with one row per grid point: `index,x,y,z,value,level_db`.
pub fn write_map_csv<W: Write>(mut w: W, values: &[f64], grid: &FocusGrid) -> Result<()> {
    writeln!(w, "index,x,y,z,value,level_db")?;
    for (i, (p, v)) in grid.points.iter().zip(values).enumerate() {
        let v = v.max(0.0);
        writeln!(w, "{i},{},{},{},{v:e},{:.6}", p[0], p[1], p[2], power_db(v))?;
    }
    Ok(())
}

const MAP_MAGIC: &[u8; 4] = b"MMAP";

/// Compact raster: `"MMAP"`, u32 nx, u32 nz, f64 frequency, then `nx·nz`
/// little-endian `f32` levels in dB re (20 µPa)², row-major in z.
pub fn write_map_bin<W: Write>(mut w: W, frequency: f64, values: &[f64], grid: &FocusGrid) -> Result<()> {
    w.write_all(MAP_MAGIC)?;
    w.write_all(&(grid.nx as u32).to_le_bytes())?;
    w.write_all(&(grid.nz as u32).to_le_bytes())?;
    w.write_all(&frequency.to_le_bytes())?;
    for v in values {
        w.write_all(&(power_db(*v) as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_map_bin<R: Read>(mut r: R) -> Result<(usize, usize, f64, Vec<f32>)> {
    let mut head = [0u8; 20];
    r.read_exact(&mut head)?;
    if &head[..4] != MAP_MAGIC {
        return Err(config_err("not a map raster"));
    }
    let nx = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let nz = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let f = f64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
    let mut values = Vec::with_capacity(nx * nz);
    let mut b = [0u8; 4];
    for _ in 0..nx * nz {
        r.read_exact(&mut b)?;
        values.push(f32::from_le_bytes(b));
    }
    Ok((nx, nz, f, values))
}

/// `frequency,psd_db`
pub fn write_spectrum_csv<W: Write>(mut w: W, s: &Spectrum) -> Result<()> {
    writeln!(w, "frequency,psd_db")?;
    for (f, v) in s.frequencies.iter().zip(&s.values) {
        writeln!(w, "{f},{:.6}", power_db(*v))?;
    }
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

/// Γ matrix: rows are θ̃, columns frequencies; masked bins are empty.
pub fn write_directivity_csv<W: Write>(mut w: W, s: &DirectivitySurface) -> Result<()> {
    write!(w, "theta")?;
    for f in &s.frequencies {
        write!(w, ",{f}")?;
    }
    writeln!(w)?;
    for (t, row) in s.theta.iter().zip(&s.gamma) {
        write!(w, "{t:.6}")?;
        for v in row {
            write!(w, ",{}", cell(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Polar table: rows are θ̃, columns band centres, Γ in dB.
pub fn write_polar_csv<W: Write>(mut w: W, p: &PolarTable) -> Result<()> {
    write!(w, "theta")?;
    for c in &p.centers {
        write!(w, ",{c}")?;
    }
    writeln!(w)?;
    for (t, row) in p.theta.iter().zip(&p.gamma) {
        write!(w, "{t:.6}")?;
        for v in row {
            write!(w, ",{}", cell(*v))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Sidecar for raw PCM exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcmSidecar {
    pub rate: f64,
    pub channels: usize,
    pub samples: usize,
    pub group_delay: usize,
    pub format: String,
    pub full_scale: i64,
}

/// Multichannel 32-bit integer WAV.
pub fn write_pcm_wav(path: &Path, channels: &[Vec<i32>], rate: u32) -> Result<()> {
    let n = channels.first().map_or(0, |c| c.len());
    if channels.iter().any(|c| c.len() != n) {
        return Err(Error::Domain("channels differ in length".into()));
    }
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Io(std::io::Error::other(e.to_string()));
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..n {
        for c in channels {
            w.write_sample(c[i]).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)
}

pub fn read_pcm_wav(path: &Path) -> Result<(u32, Vec<Vec<i32>>)> {
    let wav_err = |e: hound::Error| config_err(format!("{}: {e}", path.display()));
    let mut r = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    let nc = spec.channels as usize;
    let mut out = vec![Vec::new(); nc];
    for (i, s) in r.samples::<i32>().enumerate() {
        out[i % nc].push(s.map_err(wav_err)?);
    }
    Ok((spec.sample_rate, out))
}

/// Interleaved little-endian `i32` samples plus a JSON sidecar at `<path>.json`.
pub fn write_pcm_raw(path: &Path, channels: &[Vec<i32>], rate: f64, group_delay: usize) -> Result<()> {
    let n = channels.first().map_or(0, |c| c.len());
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..n {
        for c in channels {
            w.write_all(&c[i].to_le_bytes())?;
        }
    }
    w.flush()?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    write_json(
        Path::new(&sidecar),
        &PcmSidecar {
            rate,
            channels: channels.len(),
            samples: n,
            group_delay,
            format: "i32le_interleaved".into(),
            full_scale: i32::MAX as i64,
        },
    )
}
