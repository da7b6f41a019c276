#ifndef MICARRAY_H
#define MICARRAY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a call.
typedef enum {
  MICARRAY_STATUS_OK = 0,
  MICARRAY_STATUS_NULL_POINTER = 1,
  MICARRAY_STATUS_DOMAIN = 2,
  MICARRAY_STATUS_CONSTRAINT = 3,
  MICARRAY_STATUS_NUMERICAL = 4,
  MICARRAY_STATUS_PROTOCOL = 5,
  MICARRAY_STATUS_CONFIG = 6,
  MICARRAY_STATUS_IO = 7,
  // The output buffer is smaller than required.
  MICARRAY_STATUS_BUFFER_TOO_SMALL = 8,
  MICARRAY_STATUS_PANIC = 9,
} MicarrayStatus;

// Cross-spectral matrix at one frequency.
typedef struct MicarrayCsm MicarrayCsm;

// Sensor layout of an assembled array.
typedef struct MicarrayGeometry MicarrayGeometry;

// Planar focus grid.
typedef struct MicarrayGrid MicarrayGrid;

// Beamforming result on a grid.
typedef struct MicarrayMap MicarrayMap;

// Sensor subset of a geometry.
typedef struct MicarraySubarray MicarraySubarray;

// Pitch and roll observation angles in degrees.
typedef struct {
  double theta;
  double phi;
} MicarrayAngles;

// Beamforming options. Obtain defaults from [`micarray_beamform_options_default`].
typedef struct {
  // Run CLEAN-SC instead of the conventional beamformer.
  bool clean_sc;
  bool diagonal_removal;
  double loop_gain;
  size_t max_iterations;
  // Free-stream Mach number along +x used by the steering vectors.
  double mach_x;
  bool convection;
  bool absorption;
} MicarrayBeamformOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *micarray_last_error(void);

// Library version as a static NUL-terminated string.
const char *micarray_version(void);

// Assembles `panels_x × panels_z` panels of 800 sensors each.
//
// # Safety
// `out` must be a valid pointer to writable storage for a handle.
MicarrayStatus micarray_geometry_assemble(size_t panels_x,
                                          size_t panels_z,
                                          uint64_t seed,
                                          MicarrayGeometry **out);

// Number of sensors; 0 for a null handle.
//
// # Safety
// `g` must be null or a live geometry handle.
size_t micarray_geometry_len(const MicarrayGeometry *g);

// Copies sensor positions as `x, y, z` triples into `out` (`3·len` values).
//
// # Safety
// `g` must be a live handle and `out` must hold `capacity` doubles.
MicarrayStatus micarray_geometry_positions(const MicarrayGeometry *g, double *out, size_t capacity);

// # Safety
// `g` must be null or a handle not yet freed.
void micarray_geometry_free(MicarrayGeometry *g);

// Samples a Fermat-spiral sub-array of `count` targets in a disc of
// diameter `aperture` centred at `(center_x, center_z)` in the array plane.
// Targets with no free sensor within `epsilon` are discarded.
//
// # Safety
// `g` must be a live geometry handle and `out` valid for a handle write.
MicarrayStatus micarray_subarray_fermat(const MicarrayGeometry *g,
                                        size_t count,
                                        double aperture,
                                        double center_x,
                                        double center_z,
                                        double epsilon,
                                        MicarraySubarray **out);

// Sub-array from explicit `x, y, z` triples, with no parent geometry.
//
// # Safety
// `positions` must point to `3·count` doubles; `out` valid for a handle write.
MicarrayStatus micarray_subarray_from_positions(const double *positions,
                                                size_t count,
                                                MicarraySubarray **out);

// Number of selected sensors; 0 for a null handle.
//
// # Safety
// `s` must be null or a live sub-array handle.
size_t micarray_subarray_len(const MicarraySubarray *s);

// Number of design targets that found no sensor.
//
// # Safety
// `s` must be null or a live sub-array handle.
size_t micarray_subarray_discarded(const MicarraySubarray *s);

// Copies the parent-geometry sensor indices into `out`.
//
// # Safety
// `s` must be a live handle and `out` must hold `capacity` values.
MicarrayStatus micarray_subarray_indices(const MicarraySubarray *s, size_t *out, size_t capacity);

// Copies the selected positions as `x, y, z` triples.
//
// # Safety
// `s` must be a live handle and `out` must hold `capacity` doubles.
MicarrayStatus micarray_subarray_positions(const MicarraySubarray *s, double *out, size_t capacity);

// Observation angles of the sub-array's nominal centre seen from `reference`.
//
// # Safety
// `s` must be a live handle, `reference` must point to 3 doubles and `out`
// must be writable.
MicarrayStatus micarray_subarray_angles(const MicarraySubarray *s,
                                        const double *reference,
                                        MicarrayAngles *out);

// # Safety
// `s` must be null or a handle not yet freed.
void micarray_subarray_free(MicarraySubarray *s);

// Continuous data rate in Mbit/s of `channels` 1-bit streams at `pdm_rate` Hz.
double micarray_stream_data_rate(size_t channels, double pdm_rate, double overhead_fraction);

// Phase error in degrees from a clock skew of `skew` seconds at `frequency`.
double micarray_phase_skew_budget(double skew, double frequency);

// Planar grid at height `y`; ranges are inclusive.
//
// # Safety
// `out` must be valid for a handle write.
MicarrayStatus micarray_grid_new(double x_min,
                                 double x_max,
                                 double z_min,
                                 double z_max,
                                 double spacing,
                                 double y,
                                 MicarrayGrid **out);

// Number of grid points; 0 for a null handle.
//
// # Safety
// `g` must be null or a live grid handle.
size_t micarray_grid_len(const MicarrayGrid *g);

// Writes the grid dimensions.
//
// # Safety
// `g` must be a live handle; `nx` and `nz` must be writable.
MicarrayStatus micarray_grid_shape(const MicarrayGrid *g, size_t *nx, size_t *nz);

// # Safety
// `g` must be null or a handle not yet freed.
void micarray_grid_free(MicarrayGrid *g);

// CSM from a dense `size × size` matrix stored row-major as interleaved
// `re, im` pairs (`2·size²` doubles). Only the Hermitian part is kept.
//
// # Safety
// `data` must point to `2·size²` doubles; `out` valid for a handle write.
MicarrayStatus micarray_csm_from_dense(double frequency,
                                       size_t size,
                                       const double *data,
                                       MicarrayCsm **out);

// Exact CSM at the sub-array sensors for one white-spectrum monopole of
// `psd` Pa²/Hz at 1 m, in a uniform flow of Mach `mach_x` along +x.
//
// # Safety
// `s` must be a live handle, `source` must point to 3 doubles and `out`
// must be valid for a handle write.
MicarrayStatus micarray_csm_monopole(const MicarraySubarray *s,
                                     const double *source,
                                     double psd,
                                     double mach_x,
                                     double frequency,
                                     MicarrayCsm **out);

// # Safety
// `c` must be null or a handle not yet freed.
void micarray_csm_free(MicarrayCsm *c);

// Conventional beamforming with diagonal removal, no flow.
MicarrayBeamformOptions micarray_beamform_options_default(void);

// Beamforms `csm` recorded by sub-array `s` onto `grid`.
//
// # Safety
// All handles must be live; `options` may be null for defaults; `out` must
// be valid for a handle write.
MicarrayStatus micarray_beamform(const MicarrayCsm *csm,
                                 const MicarraySubarray *s,
                                 const MicarrayGrid *grid,
                                 const MicarrayBeamformOptions *options,
                                 MicarrayMap **out);

// Number of map values; 0 for a null handle.
//
// # Safety
// `m` must be null or a live map handle.
size_t micarray_map_len(const MicarrayMap *m);

// Copies the map values (Pa²/Hz at 1 m, index `iz·nx + ix`).
//
// # Safety
// `m` must be a live handle and `out` must hold `capacity` doubles.
MicarrayStatus micarray_map_values(const MicarrayMap *m, double *out, size_t capacity);

// Index and value of the map maximum.
//
// # Safety
// `m` must be a live handle; `index` and `value` must be writable.
MicarrayStatus micarray_map_peak(const MicarrayMap *m, size_t *index, double *value);

// # Safety
// `m` must be null or a handle not yet freed.
void micarray_map_free(MicarrayMap *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MICARRAY_H */
