#ifndef QDYNE_H
#define QDYNE_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum QdyneStatus {
  QDYNE_STATUS_OK = 0,
  QDYNE_STATUS_NULL_POINTER = 1,
  /**
   * Argument outside the domain of the operation, or an output buffer too small.
   */
  QDYNE_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Configuration rejected (schema, invariant or unsupported combination).
   */
  QDYNE_STATUS_CONFIG = 3,
  QDYNE_STATUS_NUMERICAL = 4,
  QDYNE_STATUS_NO_PEAK = 5,
  QDYNE_STATUS_IO = 6,
  QDYNE_STATUS_CORRUPT_TRACE = 7,
  QDYNE_STATUS_PANIC = 8,
} QdyneStatus;

typedef enum QdyneWindow {
  QDYNE_WINDOW_RECTANGULAR = 0,
  QDYNE_WINDOW_HANN = 1,
} QdyneWindow;

typedef enum QdyneMethod {
  QDYNE_METHOD_DYNAMICAL_DECOUPLING = 0,
  QDYNE_METHOD_MEMORY = 1,
  QDYNE_METHOD_QDYNE = 2,
} QdyneMethod;

/**
 * A one-sided power spectrum.
 */
typedef struct QdyneSpectrum QdyneSpectrum;

/**
 * A simulated or loaded acquisition trace.
 */
typedef struct QdyneTrace QdyneTrace;

typedef struct QdynePeriodogramOptions {
  enum QdyneWindow window;
  size_t zero_pad_factor;
  size_t bin_factor;
  size_t segments;
} QdynePeriodogramOptions;

typedef struct QdynePeakFit {
  double center;
  double fwhm;
  double amplitude;
  double noise_floor;
  /**
   * Half-widths of the 95% confidence intervals.
   */
  double center_ci;
  double fwhm_ci;
  double amplitude_ci;
  double noise_floor_ci;
  bool converged;
  double residual_norm;
  size_t iterations;
} QdynePeakFit;

typedef struct QdyneAlias {
  double delta;
  double sign;
  double comb_line;
} QdyneAlias;

typedef struct QdynePrecisionModel {
  double k;
  double t2;
  double t_memory;
  double t_clock;
} QdynePrecisionModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *qdyne_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qdyne_version(void);

/**
 * Simulates the Qdyne acquisition described by a TOML experiment
 * definition (same schema as the command-line tool; relative paths resolve
 * against the working directory).
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string; `out` must be writable.
 */
enum QdyneStatus qdyne_simulate(const char *config_toml, struct QdyneTrace **out);

/**
 * Loads a binary trace and its JSON sidecar.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum QdyneStatus qdyne_trace_read(const char *path, struct QdyneTrace **out);

/**
 * Writes a trace as `path` plus `path.json`.
 *
 * # Safety
 * `trace` must come from this library; `path` must be NUL-terminated.
 */
enum QdyneStatus qdyne_trace_write(const struct QdyneTrace *trace, const char *path);

/**
 * Number of records; 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or come from this library.
 */
size_t qdyne_trace_len(const struct QdyneTrace *trace);

/**
 * Nominal measurement period `T_L`, seconds; NaN for a null handle.
 *
 * # Safety
 * `trace` must be null or come from this library.
 */
double qdyne_trace_measurement_period(const struct QdyneTrace *trace);

/**
 * Copies the measurement start times into `dst` (capacity in elements).
 *
 * # Safety
 * `dst` must point to at least `capacity` writable doubles.
 */
enum QdyneStatus qdyne_trace_copy_start_times(const struct QdyneTrace *trace,
                                              double *dst,
                                              size_t capacity);

/**
 * Copies the photon counts into `dst` (capacity in elements).
 *
 * # Safety
 * `dst` must point to at least `capacity` writable `uint32_t`.
 */
enum QdyneStatus qdyne_trace_copy_photons(const struct QdyneTrace *trace,
                                          uint32_t *dst,
                                          size_t capacity);

/**
 * # Safety
 * `trace` must be null or come from this library, and not be used afterwards.
 */
void qdyne_trace_free(struct QdyneTrace *trace);

/**
 * Rectangular window, no padding, binning or segmentation.
 */
struct QdynePeriodogramOptions qdyne_periodogram_default_options(void);

/**
 * Periodogram of a trace's photon counts.
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
enum QdyneStatus qdyne_periodogram(const struct QdyneTrace *trace,
                                   const struct QdynePeriodogramOptions *opts,
                                   struct QdyneSpectrum **out);

/**
 * Periodogram of `n` uniformly spaced samples.
 *
 * # Safety
 * `values` must point to `n` readable doubles; `out` must be writable.
 */
enum QdyneStatus qdyne_periodogram_series(const double *values,
                                          size_t n,
                                          double sample_period,
                                          const struct QdynePeriodogramOptions *opts,
                                          struct QdyneSpectrum **out);

/**
 * Number of frequency bins; 0 for a null handle.
 *
 * # Safety
 * `spectrum` must be null or come from this library.
 */
size_t qdyne_spectrum_len(const struct QdyneSpectrum *spectrum);

/**
 * Bin spacing, Hz; bin `k` sits at `k` times this. NaN for a null handle.
 *
 * # Safety
 * `spectrum` must be null or come from this library.
 */
double qdyne_spectrum_bin_width(const struct QdyneSpectrum *spectrum);

/**
 * # Safety
 * `dst` must point to at least `capacity` writable doubles.
 */
enum QdyneStatus qdyne_spectrum_copy_power(const struct QdyneSpectrum *spectrum,
                                           double *dst,
                                           size_t capacity);

/**
 * # Safety
 * `spectrum` must be null or come from this library, and not be used afterwards.
 */
void qdyne_spectrum_free(struct QdyneSpectrum *spectrum);

/**
 * Lorentzian-plus-constant fit to the bins in `[lo, hi]` Hz.
 *
 * # Safety
 * `spectrum` must come from this library; `out` must be writable.
 */
enum QdyneStatus qdyne_fit_peak(const struct QdyneSpectrum *spectrum,
                                double lo,
                                double hi,
                                struct QdynePeakFit *out);

/**
 * Folds `nu` onto the sampling comb of period `t_l`.
 *
 * # Safety
 * `out` must be writable.
 */
enum QdyneStatus qdyne_alias_offset(double nu, double t_l, struct QdyneAlias *out);

/**
 * Normalized filter weight of an `n_pulses` sequence with spacing `tau` at `nu`.
 *
 * # Safety
 * `out` must be writable.
 */
enum QdyneStatus qdyne_filter_weight(double nu, uint32_t n_pulses, double tau, double *out);

/**
 * Predicted frequency precision after total time `t` for one method.
 *
 * # Safety
 * `model` must be readable; `out` must be writable.
 */
enum QdyneStatus qdyne_predict_precision(const struct QdynePrecisionModel *model,
                                         enum QdyneMethod method,
                                         double t,
                                         double *out);

/**
 * Cramér–Rao bound on the frequency of a sampled tone in white noise, Hz.
 *
 * # Safety
 * `out` must be writable.
 */
enum QdyneStatus qdyne_crb_tone_frequency(double amplitude_over_noise,
                                          double sample_period,
                                          uint64_t n_samples,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDYNE_H */
