//! C interface to `micarray`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/builder
//! functions and released with the matching `*_free`. Every fallible function
//! returns a [`MicarrayStatus`]; on failure the message is available from
//! [`micarray_last_error`] on the same thread. Panics are caught and reported
//! as `MICARRAY_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use micarray::beamforming::{
    clean_sc, conventional_beamform, make_focus_grid, BeamformingMap, CleanScParams, Corrections, FocusGrid,
    GridRotation, GridSpec, ReferencePoint, SteeringGeometry,
};
use micarray::geometry::{self, ArrayGeometry, SubArray};
use micarray::propagation::MediumModel;
use micarray::spectral::CrossSpectralMatrix;
use micarray::synthesis::{synthesize_csm, Scene, Source, SourceSpectrum};
use micarray::{Error, Vec3};
use num_complex::Complex64;

/// Result of a call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicarrayStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Constraint = 3,
    Numerical = 4,
    Protocol = 5,
    Config = 6,
    Io = 7,
    /// The output buffer is smaller than required.
    BufferTooSmall = 8,
    Panic = 9,
}

/// Sensor layout of an assembled array.
pub struct MicarrayGeometry(ArrayGeometry);
/// Sensor subset of a geometry.
pub struct MicarraySubarray(SubArray);
/// Planar focus grid.
pub struct MicarrayGrid(FocusGrid);
/// Cross-spectral matrix at one frequency.
pub struct MicarrayCsm(CrossSpectralMatrix);
/// Beamforming result on a grid.
pub struct MicarrayMap(BeamformingMap);

/// Beamforming options. Obtain defaults from [`micarray_beamform_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MicarrayBeamformOptions {
    /// Run CLEAN-SC instead of the conventional beamformer.
    pub clean_sc: bool,
    pub diagonal_removal: bool,
    pub loop_gain: f64,
    pub max_iterations: usize,
    /// Free-stream Mach number along +x used by the steering vectors.
    pub mach_x: f64,
    pub convection: bool,
    pub absorption: bool,
}

/// Pitch and roll observation angles in degrees.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MicarrayAngles {
    pub theta: f64,
    pub phi: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MicarrayStatus {
    match err {
        Error::Domain(_) => MicarrayStatus::Domain,
        Error::Constraint(_) => MicarrayStatus::Constraint,
        Error::Numerical(_) => MicarrayStatus::Numerical,
        Error::Protocol(_) => MicarrayStatus::Protocol,
        Error::Config(_) | Error::Json(_) => MicarrayStatus::Config,
        Error::Io(_) => MicarrayStatus::Io,
    }
}

struct Fail(MicarrayStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MicarrayStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MicarrayStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MicarrayStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            MicarrayStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, capacity: usize) -> Result<(), Fail> {
    if src.len() > capacity {
        return Err(Fail(
            MicarrayStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn micarray_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn micarray_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- geometry -------------------------------------------------------------

/// Assembles `panels_x × panels_z` panels of 800 sensors each.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn micarray_geometry_assemble(
    panels_x: usize,
    panels_z: usize,
    seed: u64,
    out: *mut *mut MicarrayGeometry,
) -> MicarrayStatus {
    guard(|| put(out, MicarrayGeometry(geometry::assemble_full_array(panels_x, panels_z, seed)?)))
}

/// Number of sensors; 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live geometry handle.
#[no_mangle]
pub unsafe extern "C" fn micarray_geometry_len(g: *const MicarrayGeometry) -> usize {
    g.as_ref().map_or(0, |g| g.0.len())
}

/// Copies sensor positions as `x, y, z` triples into `out` (`3·len` values).
///
/// # Safety
/// `g` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn micarray_geometry_positions(
    g: *const MicarrayGeometry,
    out: *mut f64,
    capacity: usize,
) -> MicarrayStatus {
    guard(|| {
        let g = get(g, "geometry")?;
        let flat: Vec<f64> = g.0.positions().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        copy_out(&flat, out, capacity)
    })
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn micarray_geometry_free(g: *mut MicarrayGeometry) {
    free(g)
}

// ---- sub-arrays -----------------------------------------------------------

/// Samples a Fermat-spiral sub-array of `count` targets in a disc of
/// diameter `aperture` centred at `(center_x, center_z)` in the array plane.
/// Targets with no free sensor within `epsilon` are discarded.
///
/// # Safety
/// `g` must be a live geometry handle and `out` valid for a handle write.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_fermat(
    g: *const MicarrayGeometry,
    count: usize,
    aperture: f64,
    center_x: f64,
    center_z: f64,
    epsilon: f64,
    out: *mut *mut MicarraySubarray,
) -> MicarrayStatus {
    guard(|| {
        let g = &get(g, "geometry")?.0;
        let targets: Vec<Vec3> = geometry::fermat_spiral(count, aperture, [center_x, center_z])?
            .into_iter()
            .map(|p| g.lift(p))
            .collect();
        put(out, MicarraySubarray(geometry::sample_subarray(g, &targets, epsilon)?))
    })
}

/// Sub-array from explicit `x, y, z` triples, with no parent geometry.
///
/// # Safety
/// `positions` must point to `3·count` doubles; `out` valid for a handle write.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_from_positions(
    positions: *const f64,
    count: usize,
    out: *mut *mut MicarraySubarray,
) -> MicarrayStatus {
    guard(|| {
        if count == 0 {
            return Err(Fail(MicarrayStatus::Domain, "sub-array needs at least one sensor".into()));
        }
        if positions.is_null() {
            return Err(null("positions"));
        }
        let flat = std::slice::from_raw_parts(positions, 3 * count);
        let pts: Vec<Vec3> = flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        put(out, MicarraySubarray(SubArray::explicit(&pts)))
    })
}

/// Number of selected sensors; 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live sub-array handle.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_len(s: *const MicarraySubarray) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Number of design targets that found no sensor.
///
/// # Safety
/// `s` must be null or a live sub-array handle.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_discarded(s: *const MicarraySubarray) -> usize {
    s.as_ref().map_or(0, |s| s.0.discarded)
}

/// Copies the parent-geometry sensor indices into `out`.
///
/// # Safety
/// `s` must be a live handle and `out` must hold `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_indices(
    s: *const MicarraySubarray,
    out: *mut usize,
    capacity: usize,
) -> MicarrayStatus {
    guard(|| copy_out(&get(s, "sub-array")?.0.indices, out, capacity))
}

/// Copies the selected positions as `x, y, z` triples.
///
/// # Safety
/// `s` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_positions(
    s: *const MicarraySubarray,
    out: *mut f64,
    capacity: usize,
) -> MicarrayStatus {
    guard(|| {
        let flat: Vec<f64> = get(s, "sub-array")?.0.positions.iter().flatten().copied().collect();
        copy_out(&flat, out, capacity)
    })
}

/// Observation angles of the sub-array's nominal centre seen from `reference`.
///
/// # Safety
/// `s` must be a live handle, `reference` must point to 3 doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_angles(
    s: *const MicarraySubarray,
    reference: *const f64,
    out: *mut MicarrayAngles,
) -> MicarrayStatus {
    guard(|| {
        let s = get(s, "sub-array")?;
        if reference.is_null() {
            return Err(null("reference"));
        }
        if out.is_null() {
            return Err(null("output"));
        }
        let r = std::slice::from_raw_parts(reference, 3);
        let a = geometry::observation_angles(&Vec3::from(s.0.nominal_center), &Vec3::new(r[0], r[1], r[2]), None)?;
        *out = MicarrayAngles {
            theta: a.theta,
            phi: a.phi,
        };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn micarray_subarray_free(s: *mut MicarraySubarray) {
    free(s)
}

// ---- acquisition budgets --------------------------------------------------

/// Continuous data rate in Mbit/s of `channels` 1-bit streams at `pdm_rate` Hz.
#[no_mangle]
pub extern "C" fn micarray_stream_data_rate(channels: usize, pdm_rate: f64, overhead_fraction: f64) -> f64 {
    micarray::acquisition::stream_data_rate(channels, pdm_rate, overhead_fraction)
}

/// Phase error in degrees from a clock skew of `skew` seconds at `frequency`.
#[no_mangle]
pub extern "C" fn micarray_phase_skew_budget(skew: f64, frequency: f64) -> f64 {
    micarray::acquisition::phase_skew_budget(skew, frequency)
}

// ---- grids and CSMs -------------------------------------------------------

/// Planar grid at height `y`; ranges are inclusive.
///
/// # Safety
/// `out` must be valid for a handle write.
#[no_mangle]
pub unsafe extern "C" fn micarray_grid_new(
    x_min: f64,
    x_max: f64,
    z_min: f64,
    z_max: f64,
    spacing: f64,
    y: f64,
    out: *mut *mut MicarrayGrid,
) -> MicarrayStatus {
    guard(|| {
        let grid = make_focus_grid(GridSpec {
            x_range: [x_min, x_max],
            z_range: [z_min, z_max],
            spacing,
            y,
            rotation: GridRotation::default(),
        })?;
        put(out, MicarrayGrid(grid))
    })
}

/// Number of grid points; 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn micarray_grid_len(g: *const MicarrayGrid) -> usize {
    g.as_ref().map_or(0, |g| g.0.len())
}

/// Writes the grid dimensions.
///
/// # Safety
/// `g` must be a live handle; `nx` and `nz` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micarray_grid_shape(g: *const MicarrayGrid, nx: *mut usize, nz: *mut usize) -> MicarrayStatus {
    guard(|| {
        let g = get(g, "grid")?;
        if nx.is_null() || nz.is_null() {
            return Err(null("output"));
        }
        *nx = g.0.nx;
        *nz = g.0.nz;
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn micarray_grid_free(g: *mut MicarrayGrid) {
    free(g)
}

/// CSM from a dense `size × size` matrix stored row-major as interleaved
/// `re, im` pairs (`2·size²` doubles). Only the Hermitian part is kept.
///
/// # Safety
/// `data` must point to `2·size²` doubles; `out` valid for a handle write.
#[no_mangle]
pub unsafe extern "C" fn micarray_csm_from_dense(
    frequency: f64,
    size: usize,
    data: *const f64,
    out: *mut *mut MicarrayCsm,
) -> MicarrayStatus {
    guard(|| {
        if size == 0 {
            return Err(Fail(MicarrayStatus::Domain, "CSM needs at least one channel".into()));
        }
        if data.is_null() {
            return Err(null("data"));
        }
        let d = std::slice::from_raw_parts(data, 2 * size * size);
        let at = |i: usize, j: usize| Complex64::new(d[2 * (i * size + j)], d[2 * (i * size + j) + 1]);
        let mut packed = Vec::with_capacity(size * (size + 1) / 2);
        for i in 0..size {
            for j in i..size {
                packed.push(0.5 * (at(i, j) + at(j, i).conj()));
            }
        }
        put(out, MicarrayCsm(CrossSpectralMatrix::from_packed(frequency, size, packed)?))
    })
}

/// Exact CSM at the sub-array sensors for one white-spectrum monopole of
/// `psd` Pa²/Hz at 1 m, in a uniform flow of Mach `mach_x` along +x.
///
/// # Safety
/// `s` must be a live handle, `source` must point to 3 doubles and `out`
/// must be valid for a handle write.
#[no_mangle]
pub unsafe extern "C" fn micarray_csm_monopole(
    s: *const MicarraySubarray,
    source: *const f64,
    psd: f64,
    mach_x: f64,
    frequency: f64,
    out: *mut *mut MicarrayCsm,
) -> MicarrayStatus {
    guard(|| {
        let s = get(s, "sub-array")?;
        if source.is_null() {
            return Err(null("source"));
        }
        let p = std::slice::from_raw_parts(source, 3);
        let scene = Scene::new(
            vec![Source::monopole(Vec3::new(p[0], p[1], p[2]), SourceSpectrum::White { psd })],
            MediumModel::default().with_flow_x(mach_x),
        );
        let mut csms = synthesize_csm(&scene, &s.0.positions_vec3(), &[frequency])?;
        put(out, MicarrayCsm(csms.remove(0)))
    })
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn micarray_csm_free(c: *mut MicarrayCsm) {
    free(c)
}

// ---- beamforming ----------------------------------------------------------

/// Conventional beamforming with diagonal removal, no flow.
#[no_mangle]
pub extern "C" fn micarray_beamform_options_default() -> MicarrayBeamformOptions {
    let clean = CleanScParams::default();
    let corr = Corrections::default();
    MicarrayBeamformOptions {
        clean_sc: false,
        diagonal_removal: true,
        loop_gain: clean.loop_gain,
        max_iterations: clean.max_iterations,
        mach_x: 0.0,
        convection: corr.convection,
        absorption: corr.absorption,
    }
}

/// Beamforms `csm` recorded by sub-array `s` onto `grid`.
///
/// # Safety
/// All handles must be live; `options` may be null for defaults; `out` must
/// be valid for a handle write.
#[no_mangle]
pub unsafe extern "C" fn micarray_beamform(
    csm: *const MicarrayCsm,
    s: *const MicarraySubarray,
    grid: *const MicarrayGrid,
    options: *const MicarrayBeamformOptions,
    out: *mut *mut MicarrayMap,
) -> MicarrayStatus {
    guard(|| {
        let csm = &get(csm, "CSM")?.0;
        let s = &get(s, "sub-array")?.0;
        let grid = &get(grid, "grid")?.0;
        let o = options.as_ref().copied().unwrap_or_else(|| micarray_beamform_options_default());
        let medium = MediumModel::default().with_flow_x(o.mach_x);
        let corrections = Corrections {
            convection: o.convection,
            absorption: o.absorption,
            amiet: true,
        };
        let steering = SteeringGeometry::new(grid, &s.positions_vec3(), &medium, corrections, ReferencePoint::GeometricMean)?
            .at_frequency(csm.frequency)?;
        let map = if o.clean_sc {
            let params = CleanScParams {
                loop_gain: o.loop_gain,
                max_iterations: o.max_iterations,
                diagonal_removal: o.diagonal_removal,
                ..CleanScParams::default()
            };
            clean_sc(csm, &steering, grid, params)?
        } else {
            conventional_beamform(csm, &steering, grid, o.diagonal_removal)?
        };
        put(out, MicarrayMap(map))
    })
}

/// Number of map values; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live map handle.
#[no_mangle]
pub unsafe extern "C" fn micarray_map_len(m: *const MicarrayMap) -> usize {
    m.as_ref().map_or(0, |m| m.0.values.len())
}

/// Copies the map values (Pa²/Hz at 1 m, index `iz·nx + ix`).
///
/// # Safety
/// `m` must be a live handle and `out` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn micarray_map_values(m: *const MicarrayMap, out: *mut f64, capacity: usize) -> MicarrayStatus {
    guard(|| copy_out(&get(m, "map")?.0.values, out, capacity))
}

/// Index and value of the map maximum.
///
/// # Safety
/// `m` must be a live handle; `index` and `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micarray_map_peak(m: *const MicarrayMap, index: *mut usize, value: *mut f64) -> MicarrayStatus {
    guard(|| {
        let m = get(m, "map")?;
        if index.is_null() || value.is_null() {
            return Err(null("output"));
        }
        (*index, *value) = m.0.peak();
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn micarray_map_free(m: *mut MicarrayMap) {
    free(m)
}
