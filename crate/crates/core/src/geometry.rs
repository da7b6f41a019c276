//! Modular array layout, optimal target layouts and sub-array sampling.
//!
//! The array is built hierarchically: four PCB designs of 50 sensors each
//! (0.5 m × 0.25 m) form a 2×2 fixed pattern of 1.0 m × 0.5 m, which is
//! repeated 2×2 into a 2 m × 1 m panel of 800 sensors. Panels are tiled
//! without gaps in the array plane.
//!
//! In-plane coordinates are the tunnel-frame `(x, z)` pair; the array plane is
//! normal to `y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::Vec3;

/// Long PCB edge, mapped to the tunnel x axis (m).
pub const PCB_LENGTH: f64 = 0.5;
/// Short PCB edge, mapped to the tunnel z axis (m).
pub const PCB_WIDTH: f64 = 0.25;
pub const SENSORS_PER_PCB: usize = 50;
pub const PCBS_PER_PANEL: usize = 16;
pub const SENSORS_PER_PANEL: usize = SENSORS_PER_PCB * PCBS_PER_PANEL;
/// Panel extent along x (m).
pub const PANEL_LENGTH: f64 = 2.0;
/// Panel extent along z (m).
pub const PANEL_HEIGHT: f64 = 1.0;
/// Minimum distance from a sensor to its PCB edge (m).
pub const EDGE_CLEARANCE: f64 = 0.005;
/// Minimum sensor-to-sensor distance on a PCB (two 5 mm free circles).
pub const MIN_SENSOR_SPACING: f64 = 0.010;
pub const PCB_DESIGNS: u8 = 4;

/// Upper frequency at which the frequency-dependent aperture stops shrinking (Hz).
pub const APERTURE_SCALING_MAX_HZ: f64 = 16_000.0;

/// Default aperture of the spiral-arm (DNW-like) sub-array (m).
pub const DNW_LIKE_APERTURE: f64 = 3.0;

/// Golden angle (rad), the azimuth increment of the Fermat spiral.
pub fn golden_angle() -> f64 {
    std::f64::consts::PI * (3.0 - 5f64.sqrt())
}

/// Sensor placement of one PCB design, in PCB-local coordinates `(u, v)`
/// with `u ∈ [0, PCB_LENGTH]` and `v ∈ [0, PCB_WIDTH]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcbLayout {
    pub design_id: u8,
    pub positions: Vec<[f64; 2]>,
}

impl PcbLayout {
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.positions.iter().enumerate() {
            for b in &self.positions[i + 1..] {
                best = best.min(dist2(a, b));
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != SENSORS_PER_PCB {
            return Err(Error::Constraint(format!(
                "PCB design {} has {} sensors, expected {SENSORS_PER_PCB}",
                self.design_id,
                self.positions.len()
            )));
        }
        let inside = |p: &[f64; 2]| {
            p[0] >= EDGE_CLEARANCE
                && p[0] <= PCB_LENGTH - EDGE_CLEARANCE
                && p[1] >= EDGE_CLEARANCE
                && p[1] <= PCB_WIDTH - EDGE_CLEARANCE
        };
        if !self.positions.iter().all(inside) {
            return Err(Error::Constraint(format!(
                "PCB design {}: sensor violates edge clearance",
                self.design_id
            )));
        }
        if self.min_pairwise_distance() < MIN_SENSOR_SPACING {
            return Err(Error::Constraint(format!(
                "PCB design {}: sensors closer than {MIN_SENSOR_SPACING} m",
                self.design_id
            )));
        }
        Ok(())
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while n > 0 {
        r += (n % base) as f64 * f;
        n /= base;
        f *= inv;
    }
    r
}

/// Deterministic low-discrepancy placement of 50 sensors on one PCB design.
///
/// Candidates come from a Cranley-Patterson rotated Halton(2, 3) sequence;
/// a candidate is accepted when it keeps the current spacing target to all
/// accepted sensors. The spacing target starts near the uniform spacing and
/// relaxes geometrically down to [`MIN_SENSOR_SPACING`].
pub fn generate_pcb_layout(design_id: u8, seed: u64) -> Result<PcbLayout> {
    if design_id >= PCB_DESIGNS {
        return domain(format!("design_id {design_id} not in 0..{PCB_DESIGNS}"));
    }
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(u64::from(design_id).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let shift: [f64; 2] = [rng.random(), rng.random()];
    let skip: u64 = rng.random_range(0..1024);

    let usable = [
        PCB_LENGTH - 2.0 * EDGE_CLEARANCE,
        PCB_WIDTH - 2.0 * EDGE_CLEARANCE,
    ];
    let candidate = |k: u64| -> [f64; 2] {
        let a = (radical_inverse(k + skip + 1, 2) + shift[0]).fract();
        let b = (radical_inverse(k + skip + 1, 3) + shift[1]).fract();
        [EDGE_CLEARANCE + a * usable[0], EDGE_CLEARANCE + b * usable[1]]
    };

    const CANDIDATES_PER_ROUND: u64 = 8192;
    let mut spacing = 0.9 * (usable[0] * usable[1] / SENSORS_PER_PCB as f64).sqrt();
    while spacing >= MIN_SENSOR_SPACING {
        let mut accepted: Vec<[f64; 2]> = Vec::with_capacity(SENSORS_PER_PCB);
        for k in 0..CANDIDATES_PER_ROUND {
            let c = candidate(k);
            if accepted.iter().all(|p| dist2(p, &c) >= spacing) {
                accepted.push(c);
                if accepted.len() == SENSORS_PER_PCB {
                    let layout = PcbLayout {
                        design_id,
                        positions: accepted,
                    };
                    layout.validate()?;
                    return Ok(layout);
                }
            }
        }
        spacing *= 0.95;
    }
    Err(Error::Constraint(format!(
        "could not place {SENSORS_PER_PCB} sensors on PCB design {design_id}"
    )))
}

/// Where a sensor sits in the panel/PCB hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorInfo {
    pub panel: u32,
    /// Array-global PCB index (`panel * 16 + local PCB`).
    pub pcb: u32,
    pub design: u8,
    /// Index of the sensor within its PCB design.
    pub local_index: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayPlane {
    pub origin: [f64; 3],
    pub normal: [f64; 3],
}

/// Placement of the array in the tunnel frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayFrame {
    pub center_x: f64,
    pub center_z: f64,
    /// Distance of the array plane from the model plane `y = 0`.
    pub plane_y: f64,
}

impl Default for ArrayFrame {
    fn default() -> Self {
        ArrayFrame {
            center_x: 3.0,
            center_z: -0.5,
            plane_y: 3.39,
        }
    }
}

/// In-plane bounding box `(x_min, x_max, z_min, z_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Extent {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.z_max - self.z_min
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.z_min + self.z_max),
        ]
    }
}

/// Full sensor layout in the tunnel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<Vec3>,
    sensors: Vec<SensorInfo>,
    plane: ArrayPlane,
    extent: Extent,
}

impl ArrayGeometry {
    /// Builds a geometry from explicit positions (e.g. a measured layout).
    pub fn from_parts(
        positions: Vec<Vec3>,
        sensors: Vec<SensorInfo>,
        plane: ArrayPlane,
        extent: Option<Extent>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return domain("geometry has no sensors");
        }
        if positions.len() != sensors.len() {
            return domain("sensor metadata and positions differ in length");
        }
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return domain("non-finite sensor position");
        }
        let mut keys: Vec<[u64; 3]> = positions
            .iter()
            .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return domain("duplicate sensor positions");
        }
        let extent = extent.unwrap_or_else(|| bounding_extent(&positions));
        Ok(ArrayGeometry {
            positions,
            sensors,
            plane,
            extent,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn sensors(&self) -> &[SensorInfo] {
        &self.sensors
    }

    pub fn plane(&self) -> &ArrayPlane {
        &self.plane
    }

    pub fn extent(&self) -> &Extent {
        &self.extent
    }

    /// Lifts an in-plane `(x, z)` point onto the array plane.
    pub fn lift(&self, p: [f64; 2]) -> Vec3 {
        Vec3::new(p[0], self.plane.origin[1], p[1])
    }

    /// SHA-256 over the little-endian position bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.positions {
            for v in p.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex_digest(&h.finalize())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn bounding_extent(positions: &[Vec3]) -> Extent {
    let mut e = Extent {
        x_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        z_min: f64::INFINITY,
        z_max: f64::NEG_INFINITY,
    };
    for p in positions {
        e.x_min = e.x_min.min(p.x);
        e.x_max = e.x_max.max(p.x);
        e.z_min = e.z_min.min(p.z);
        e.z_max = e.z_max.max(p.z);
    }
    e
}

/// Builds the full array in the default frame. See [`assemble_full_array_in`].
pub fn assemble_full_array(panels_x: usize, panels_z: usize, seed: u64) -> Result<ArrayGeometry> {
    assemble_full_array_in(panels_x, panels_z, seed, &ArrayFrame::default())
}

/// Tiles `panels_x × panels_z` panels gap-free around the frame center.
///
/// Within a panel, PCB column `c` (along x) and row `r` (along z) carry design
/// `(c % 2) + 2 (r % 2)`, i.e. the 2×2 fixed pattern repeated 2×2.
pub fn assemble_full_array_in(
    panels_x: usize,
    panels_z: usize,
    seed: u64,
    frame: &ArrayFrame,
) -> Result<ArrayGeometry> {
    if panels_x == 0 || panels_z == 0 {
        return domain("panel counts must be at least 1");
    }
    let layouts = (0..PCB_DESIGNS)
        .map(|d| generate_pcb_layout(d, seed))
        .collect::<Result<Vec<_>>>()?;

    let width = panels_x as f64 * PANEL_LENGTH;
    let height = panels_z as f64 * PANEL_HEIGHT;
    let x0 = frame.center_x - 0.5 * width;
    let z0 = frame.center_z - 0.5 * height;
    let cols = (PANEL_LENGTH / PCB_LENGTH).round() as usize;
    let rows = (PANEL_HEIGHT / PCB_WIDTH).round() as usize;

    let total = panels_x * panels_z * SENSORS_PER_PANEL;
    let mut positions = Vec::with_capacity(total);
    let mut sensors = Vec::with_capacity(total);
    for pz in 0..panels_z {
        for px in 0..panels_x {
            let panel = (pz * panels_x + px) as u32;
            for row in 0..rows {
                for col in 0..cols {
                    let design = ((col % 2) + 2 * (row % 2)) as u8;
                    let local_pcb = (row * cols + col) as u32;
                    let ox = x0 + px as f64 * PANEL_LENGTH + col as f64 * PCB_LENGTH;
                    let oz = z0 + pz as f64 * PANEL_HEIGHT + row as f64 * PCB_WIDTH;
                    for (k, uv) in layouts[design as usize].positions.iter().enumerate() {
                        positions.push(Vec3::new(ox + uv[0], frame.plane_y, oz + uv[1]));
                        sensors.push(SensorInfo {
                            panel,
                            pcb: panel * PCBS_PER_PANEL as u32 + local_pcb,
                            design,
                            local_index: k as u16,
                        });
                    }
                }
            }
        }
    }
    let plane = ArrayPlane {
        origin: [frame.center_x, frame.plane_y, frame.center_z],
        normal: [0.0, 1.0, 0.0],
    };
    let extent = Extent {
        x_min: x0,
        x_max: x0 + width,
        z_min: z0,
        z_max: z0 + height,
    };
    ArrayGeometry::from_parts(positions, sensors, plane, Some(extent))
}

/// Fermat (sunflower) spiral of `count` points within a disc of diameter
/// `aperture`. Point `n` lies at radius `(aperture/2)·sqrt(n/(count−1))` and
/// azimuth `n` times the golden angle.
pub fn fermat_spiral(count: usize, aperture: f64, center: [f64; 2]) -> Result<Vec<[f64; 2]>> {
    if count == 0 {
        return domain("spiral needs at least one point");
    }
    if !(aperture > 0.0) {
        return domain("aperture must be positive");
    }
    if count == 1 {
        return Ok(vec![center]);
    }
    let r_max = 0.5 * aperture;
    let ga = golden_angle();
    Ok((0..count)
        .map(|n| {
            let r = r_max * (n as f64 / (count - 1) as f64).sqrt();
            let phi = n as f64 * ga;
            [center[0] + r * phi.cos(), center[1] + r * phi.sin()]
        })
        .collect())
}

/// Multi-arm logarithmic spiral with 7 arms of 20 sensors, a stand-in for
/// the 140-microphone reference array the sub-array comparisons are made
/// against.
pub fn dnw_like_targets(aperture: f64, center: [f64; 2]) -> Vec<[f64; 2]> {
    const ARMS: usize = 7;
    const PER_ARM: usize = 20;
    let r_min = 0.05 * aperture;
    let r_max = 0.5 * aperture;
    let mut out = Vec::with_capacity(ARMS * PER_ARM);
    for k in 0..PER_ARM {
        let s = k as f64 / (PER_ARM - 1) as f64;
        let r = r_min * (r_max / r_min).powf(s);
        for arm in 0..ARMS {
            let phi = arm as f64 * std::f64::consts::TAU / ARMS as f64 + 1.2 * std::f64::consts::PI * s;
            out.push([center[0] + r * phi.cos(), center[1] + r * phi.sin()]);
        }
    }
    out
}

/// Sensor subset of an [`ArrayGeometry`] together with its design provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubArray {
    /// Indices into the parent geometry (`0..n` for explicit sub-arrays).
    pub indices: Vec<usize>,
    /// Positions of the selected sensors, in `indices` order.
    pub positions: Vec<[f64; 3]>,
    /// Optimal design points, including discarded ones.
    pub target_positions: Vec<[f64; 3]>,
    /// Target index each selected sensor was assigned to.
    pub matched_targets: Vec<usize>,
    pub match_distances: Vec<f64>,
    pub nominal_center: [f64; 3],
    pub epsilon: f64,
    /// Content hash of the parent geometry; empty for explicit sub-arrays.
    pub parent_hash: String,
    /// Number of targets without a sensor inside `epsilon`.
    pub discarded: usize,
}

impl SubArray {
    /// Sub-array made directly from positions, with no parent geometry.
    pub fn explicit(positions: &[Vec3]) -> Self {
        let n = positions.len();
        let pos: Vec<[f64; 3]> = positions.iter().map(|p| [p.x, p.y, p.z]).collect();
        let center = if n > 0 {
            let m = positions.iter().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
            [m.x, m.y, m.z]
        } else {
            [0.0; 3]
        };
        SubArray {
            indices: (0..n).collect(),
            positions: pos.clone(),
            target_positions: pos,
            matched_targets: (0..n).collect(),
            match_distances: vec![0.0; n],
            nominal_center: center,
            epsilon: 0.0,
            parent_hash: String::new(),
            discarded: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn positions_vec3(&self) -> Vec<Vec3> {
        self.positions.iter().map(|p| Vec3::from(*p)).collect()
    }
}

/// Greedy assignment of design targets to the nearest unused sensor.
///
/// Targets are processed in the given order (spiral index order, center
/// outward); ties between equidistant sensors go to the lowest index. A target
/// whose nearest unused sensor is further than `epsilon` is discarded.
pub fn sample_subarray(geometry: &ArrayGeometry, targets: &[Vec3], epsilon: f64) -> Result<SubArray> {
    if !(epsilon > 0.0) {
        return domain("epsilon must be positive");
    }
    let pos = geometry.positions();
    let mut used = vec![false; pos.len()];
    let mut indices = Vec::new();
    let mut matched_targets = Vec::new();
    let mut match_distances = Vec::new();
    let mut discarded = 0;
    for (t, target) in targets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in pos.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = (p - target).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, d)) if d <= epsilon => {
                used[i] = true;
                indices.push(i);
                matched_targets.push(t);
                match_distances.push(d);
            }
            _ => discarded += 1,
        }
    }
    let nominal = if targets.is_empty() {
        Vec3::zeros()
    } else {
        targets.iter().fold(Vec3::zeros(), |a, p| a + p) / targets.len() as f64
    };
    Ok(SubArray {
        positions: indices.iter().map(|&i| [pos[i].x, pos[i].y, pos[i].z]).collect(),
        indices,
        target_positions: targets.iter().map(|p| [p.x, p.y, p.z]).collect(),
        matched_targets,
        match_distances,
        nominal_center: [nominal.x, nominal.y, nominal.z],
        epsilon,
        parent_hash: geometry.content_hash(),
        discarded,
    })
}

/// Population mean and per-axis standard deviation of sub-array positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubArrayStats {
    pub mean: Vec3,
    pub std: Vec3,
}

pub fn subarray_stats(sub: &SubArray) -> Result<SubArrayStats> {
    positions_stats(&sub.positions_vec3())
}

pub fn positions_stats(positions: &[Vec3]) -> Result<SubArrayStats> {
    if positions.is_empty() {
        return domain("statistics of an empty sub-array");
    }
    let n = positions.len() as f64;
    let mean = positions.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let var = positions
        .iter()
        .fold(Vec3::zeros(), |a, p| a + (p - mean).component_mul(&(p - mean)))
        / n;
    Ok(SubArrayStats {
        mean,
        std: var.map(f64::sqrt),
    })
}

/// Pitch (θ) and roll (φ) observation angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationAngles {
    pub theta: f64,
    pub phi: f64,
    pub theta_std: f64,
    pub phi_std: f64,
}

/// Observation angles of `observer` seen from `reference`.
///
/// `θ = 90° + atan(Δx / d⊥)` and `φ = atan(Δz / d⊥)` with `d⊥` the distance
/// along the array normal (y). A positional spread `σ` maps to the half-width
/// `(atan((Δ+σ)/d⊥) − atan((Δ−σ)/d⊥)) / 2`.
pub fn observation_angles(
    observer: &Vec3,
    reference: &Vec3,
    spread: Option<&Vec3>,
) -> Result<ObservationAngles> {
    let d_perp = (observer.y - reference.y).abs();
    if !(d_perp > 0.0) || !d_perp.is_finite() {
        return domain("observer has zero perpendicular distance to the reference");
    }
    let dx = observer.x - reference.x;
    let dz = observer.z - reference.z;
    let half_width = |delta: f64, sigma: f64| {
        0.5 * (((delta + sigma) / d_perp).atan() - ((delta - sigma) / d_perp).atan()).to_degrees()
    };
    let (theta_std, phi_std) = match spread {
        Some(s) => (half_width(dx, s.x.abs()), half_width(dz, s.z.abs())),
        None => (0.0, 0.0),
    };
    Ok(ObservationAngles {
        theta: 90.0 + (dx / d_perp).atan().to_degrees(),
        phi: (dz / d_perp).atan().to_degrees(),
        theta_std,
        phi_std,
    })
}

/// Fermat-spiral sub-arrays whose centers are equally spaced along the long
/// (x) axis of the array, from edge to edge, at the vertical center.
pub fn pitch_subarray_series(
    geometry: &ArrayGeometry,
    count: usize,
    aperture: f64,
    mics: usize,
    epsilon: f64,
) -> Result<Vec<SubArray>> {
    if count == 0 {
        return domain("sub-array count must be at least 1");
    }
    let e = geometry.extent();
    let zc = e.center()[1];
    (0..count)
        .map(|k| {
            let xc = if count == 1 {
                e.center()[0]
            } else {
                e.x_min + e.width() * k as f64 / (count - 1) as f64
            };
            let targets: Vec<Vec3> = fermat_spiral(mics, aperture, [xc, zc])?
                .into_iter()
                .map(|p| geometry.lift(p))
                .collect();
            let mut sub = sample_subarray(geometry, &targets, epsilon)?;
            sub.nominal_center = [xc, geometry.plane().origin[1], zc];
            Ok(sub)
        })
        .collect()
}

/// Aperture of the frequency-dependent sub-array: `d_ref · f_ref / f`,
/// clamped to the values at `f_ref` below and at 16 kHz above.
pub fn scaled_aperture(d_ref: f64, f_ref: f64, frequency: f64) -> f64 {
    let f = frequency.clamp(f_ref.min(APERTURE_SCALING_MAX_HZ), APERTURE_SCALING_MAX_HZ.max(f_ref));
    d_ref * f_ref / f
}

/// One Fermat-spiral sub-array per band with aperture scaled as `1/f`.
///
/// `mics` is an upper bound: a band uses at most as many targets as there
/// are sensors inside its aperture disc, so small apertures are not padded
/// with sensors from outside the disc.
pub fn freq_dependent_subarrays(
    geometry: &ArrayGeometry,
    center: [f64; 2],
    d_ref: f64,
    f_ref: f64,
    mics: usize,
    bands: &[f64],
    epsilon: f64,
) -> Result<Vec<(f64, SubArray)>> {
    if !(d_ref > 0.0 && f_ref > 0.0) {
        return domain("reference aperture and frequency must be positive");
    }
    bands
        .iter()
        .map(|&f| {
            let d = scaled_aperture(d_ref, f_ref, f);
            let inside = geometry
                .positions()
                .iter()
                .filter(|p| (p.x - center[0]).powi(2) + (p.z - center[1]).powi(2) <= 0.25 * d * d)
                .count();
            let targets: Vec<Vec3> = fermat_spiral(mics.min(inside.max(1)), d, center)?
                .into_iter()
                .map(|p| geometry.lift(p))
                .collect();
            Ok((f, sample_subarray(geometry, &targets, epsilon)?))
        })
        .collect()
}
