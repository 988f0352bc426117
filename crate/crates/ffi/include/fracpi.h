#ifndef FRACPI_H
#define FRACPI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum FpClassification {
  FP_CLASSIFICATION_STABLE = 0,
  FP_CLASSIFICATION_UNSTABLE = 1,
  FP_CLASSIFICATION_BOUNDARY = 2,
} FpClassification;

typedef enum FpSignal {
  FP_SIGNAL_TIME = 0,
  FP_SIGNAL_REFERENCE = 1,
  FP_SIGNAL_OUTPUT = 2,
  FP_SIGNAL_CONTROL = 3,
  FP_SIGNAL_ERROR = 4,
} FpSignal;

typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_POINTER = 1,
  FP_STATUS_INVALID_ARGUMENT = 2,
  // Singular system, failed convergence or residual check.
  FP_STATUS_NUMERICAL = 3,
  // Configuration or model data rejected.
  FP_STATUS_MODEL = 4,
  FP_STATUS_NO_LIMIT_CYCLE = 5,
  FP_STATUS_HORIZON_TOO_SHORT = 6,
  // Only integer-order plants can be simulated.
  FP_STATUS_UNSUPPORTED_PLANT = 7,
  FP_STATUS_PANIC = 8,
} FpStatus;

// Opaque transfer function handle.
typedef struct FpPlant FpPlant;

// Opaque closed-loop trace handle.
typedef struct FpTrace FpTrace;

// Integer-order DC motor parameters (SI units, rated speed in rpm).
typedef struct FpMotorParams {
  double inertia;
  double damping;
  double motor_constant;
  double resistance;
  double inductance;
  double rated_speed_rpm;
} FpMotorParams;

// `kp + ki / s^lambda`; `lambda = 1` is a classical PI.
typedef struct FpController {
  double kp;
  double ki;
  double lambda;
} FpController;

typedef struct FpMarginReport {
  double gain_margin_db;
  double phase_margin_deg;
  double phase_crossover_omega;
  double gain_crossover_omega;
} FpMarginReport;

typedef struct FpStabilityReport {
  bool stable;
  bool boundary;
  // Commensurate order `q`; the test variable is `w = s^q`.
  double q;
  size_t root_count;
  // Smallest `|arg w| - q*pi/2` over all roots, in radians.
  double min_arg_margin;
} FpStabilityReport;

// Setpoint and disturbance are single steps from `*_initial` to `*_final`
// at `*_step_time`. `gl_memory = 0` keeps the whole history.
typedef struct FpSimConfig {
  double dt;
  double horizon;
  size_t gl_memory;
  double setpoint_initial;
  double setpoint_final;
  double setpoint_step_time;
  double disturbance_initial;
  double disturbance_final;
  double disturbance_step_time;
  double initial_output;
  double bias;
  bool saturate;
  double u_min;
  double u_max;
} FpSimConfig;

typedef struct FpMetrics {
  double ise;
  double iae;
  double rise_time_s;
  double settling_time_s;
} FpMetrics;

typedef struct FpRelayConfig {
  double height;
  double switch_on;
  double switch_off;
  double setpoint;
  double dt;
  double horizon;
  size_t settle_cycles;
} FpRelayConfig;

typedef struct FpRelayResult {
  double amplitude;
  double ultimate_period;
  double ultimate_gain;
  size_t cycles_used;
} FpRelayResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *fp_last_error(void);

const char *fp_version(void);

// # Safety
// `params` must point to a valid struct and `out` to writable storage.
enum FpStatus fp_plant_from_motor(const struct FpMotorParams *params, struct FpPlant **out_plant);

// Plant `N(s)/D(s)` from `(coeff, exponent)` arrays.
//
// # Safety
// Each array must hold at least its stated number of elements.
enum FpStatus fp_plant_from_terms(const double *num_coeffs,
                                  const double *num_exponents,
                                  size_t num_len,
                                  const double *den_coeffs,
                                  const double *den_exponents,
                                  size_t den_len,
                                  struct FpPlant **out_plant);

// # Safety
// `plant` must come from a constructor above and not be freed twice.
void fp_plant_free(struct FpPlant *plant);

// `G(jω)` on the principal branch.
//
// # Safety
// Pointers must be valid.
enum FpStatus fp_plant_eval(const struct FpPlant *plant, double omega, double *re, double *im);

// # Safety
// Pointers must be valid.
enum FpStatus fp_locus_point(const struct FpPlant *plant,
                             double lambda,
                             double omega,
                             double *kp,
                             double *ki);

// # Safety
// Pointers must be valid.
enum FpStatus fp_classify(const struct FpPlant *plant,
                          const struct FpController *controller,
                          uint32_t max_denominator,
                          enum FpClassification *result);

// Margins of `C(s)G(s)` over the default frequency span.
//
// # Safety
// Pointers must be valid.
enum FpStatus fp_margins(const struct FpPlant *plant,
                         const struct FpController *controller,
                         struct FpMarginReport *result);

// # Safety
// Pointers must be valid.
enum FpStatus fp_stability(const struct FpPlant *plant,
                           const struct FpController *controller,
                           uint32_t max_denominator,
                           struct FpStabilityReport *result);

struct FpSimConfig fp_sim_config_default(void);

// # Safety
// Pointers must be valid; the trace is released with [`fp_trace_free`].
enum FpStatus fp_simulate(const struct FpPlant *plant,
                          const struct FpController *controller,
                          const struct FpSimConfig *config,
                          struct FpTrace **out_trace);

// Number of samples; zero for a null handle.
//
// # Safety
// `trace` must be null or valid.
size_t fp_trace_len(const struct FpTrace *trace);

// Copies one signal into `buffer`, which must hold `fp_trace_len` values.
//
// # Safety
// `buffer` must be writable for `capacity` doubles.
enum FpStatus fp_trace_copy(const struct FpTrace *trace,
                            enum FpSignal signal,
                            double *buffer,
                            size_t capacity);

// Performance indices over `[t0, t1)`.
//
// # Safety
// Pointers must be valid.
enum FpStatus fp_trace_metrics(const struct FpTrace *trace,
                               double t0,
                               double t1,
                               struct FpMetrics *result);

// # Safety
// `trace` must come from [`fp_simulate`] and not be freed twice.
void fp_trace_free(struct FpTrace *trace);

struct FpRelayConfig fp_relay_config_default(void);

// # Safety
// Pointers must be valid.
enum FpStatus fp_relay_experiment(const struct FpPlant *plant,
                                  const struct FpRelayConfig *config,
                                  struct FpRelayResult *result);

// # Safety
// `result` must be writable.
enum FpStatus fp_ultimate_gain(double height, double amplitude, double *result);

// Ziegler-Nichols PI from the ultimate gain and period.
//
// # Safety
// `result` must be writable.
enum FpStatus fp_zn_pi(double ultimate_gain, double ultimate_period, struct FpController *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACPI_H */
