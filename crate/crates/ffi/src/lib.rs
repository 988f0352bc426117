//! C ABI over the `fracpi` toolkit.
//!
//! Every entry point returns an [`FpStatus`]. On failure the message is kept
//! per thread and can be read with [`fp_last_error`]. Plants and traces are
//! opaque handles owned by the caller and released with their `_free`
//! function. Absent margins are reported as `INFINITY`, absent crossover
//! frequencies and step-response times as `NAN`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fracpi::locus::{self, Classification};
use fracpi::margins;
use fracpi::matignon;
use fracpi::motor::{self, MotorParams};
use fracpi::relay::{self, RelayConfig};
use fracpi::timesim::{self, SimConfig, SimTrace, StepProfile};
use fracpi::{Error, FractionalTransferFunction, PiLambdaController, QuasiPolynomial};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Singular system, failed convergence or residual check.
    Numerical = 3,
    /// Configuration or model data rejected.
    Model = 4,
    NoLimitCycle = 5,
    HorizonTooShort = 6,
    /// Only integer-order plants can be simulated.
    UnsupportedPlant = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpClassification {
    Stable = 0,
    Unstable = 1,
    Boundary = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpSignal {
    Time = 0,
    Reference = 1,
    Output = 2,
    Control = 3,
    Error = 4,
}

/// Integer-order DC motor parameters (SI units, rated speed in rpm).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpMotorParams {
    pub inertia: f64,
    pub damping: f64,
    pub motor_constant: f64,
    pub resistance: f64,
    pub inductance: f64,
    pub rated_speed_rpm: f64,
}

/// `kp + ki / s^lambda`; `lambda = 1` is a classical PI.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpController {
    pub kp: f64,
    pub ki: f64,
    pub lambda: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpMarginReport {
    pub gain_margin_db: f64,
    pub phase_margin_deg: f64,
    pub phase_crossover_omega: f64,
    pub gain_crossover_omega: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpStabilityReport {
    pub stable: bool,
    pub boundary: bool,
    /// Commensurate order `q`; the test variable is `w = s^q`.
    pub q: f64,
    pub root_count: usize,
    /// Smallest `|arg w| - q*pi/2` over all roots, in radians.
    pub min_arg_margin: f64,
}

/// Setpoint and disturbance are single steps from `*_initial` to `*_final`
/// at `*_step_time`. `gl_memory = 0` keeps the whole history.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpSimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub gl_memory: usize,
    pub setpoint_initial: f64,
    pub setpoint_final: f64,
    pub setpoint_step_time: f64,
    pub disturbance_initial: f64,
    pub disturbance_final: f64,
    pub disturbance_step_time: f64,
    pub initial_output: f64,
    pub bias: f64,
    pub saturate: bool,
    pub u_min: f64,
    pub u_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpMetrics {
    pub ise: f64,
    pub iae: f64,
    pub rise_time_s: f64,
    pub settling_time_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpRelayConfig {
    pub height: f64,
    pub switch_on: f64,
    pub switch_off: f64,
    pub setpoint: f64,
    pub dt: f64,
    pub horizon: f64,
    pub settle_cycles: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpRelayResult {
    pub amplitude: f64,
    pub ultimate_period: f64,
    pub ultimate_gain: f64,
    pub cycles_used: usize,
}

/// Opaque transfer function handle.
pub struct FpPlant {
    inner: FractionalTransferFunction,
}

/// Opaque closed-loop trace handle.
pub struct FpTrace {
    inner: SimTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_)
            | Error::NonFinite(_)
            | Error::DegenerateLambda(_)
            | Error::WindowOutOfRange { .. } => FpStatus::InvalidArgument,
            Error::DegenerateModel(_) | Error::Config { .. } | Error::Io(_) => FpStatus::Model,
            Error::NoLimitCycle(_) => FpStatus::NoLimitCycle,
            Error::HorizonTooShort { .. } => FpStatus::HorizonTooShort,
            Error::NonIntegerPlant(_) => FpStatus::UnsupportedPlant,
            _ => FpStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FpStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> FpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".to_string());
            FpStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn controller(c: &FpController) -> Result<PiLambdaController, Failure> {
    Ok(PiLambdaController::new(c.kp, c.ki, c.lambda)?)
}

fn or_inf(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::INFINITY)
}

fn or_nan(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn fp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn fp_plant_from_motor(
    params: *const FpMotorParams,
    out_plant: *mut *mut FpPlant,
) -> FpStatus {
    guard(|| {
        let p = get(params, "params")?;
        let slot = out(out_plant, "out_plant")?;
        let mp = MotorParams {
            inertia: p.inertia,
            damping: p.damping,
            motor_constant: p.motor_constant,
            resistance: p.resistance,
            inductance: p.inductance,
            rated_speed_rpm: p.rated_speed_rpm,
        };
        let inner = motor::derive_tf(&mp)?;
        *slot = Box::into_raw(Box::new(FpPlant { inner }));
        Ok(())
    })
}

/// Plant `N(s)/D(s)` from `(coeff, exponent)` arrays.
///
/// # Safety
/// Each array must hold at least its stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn fp_plant_from_terms(
    num_coeffs: *const f64,
    num_exponents: *const f64,
    num_len: usize,
    den_coeffs: *const f64,
    den_exponents: *const f64,
    den_len: usize,
    out_plant: *mut *mut FpPlant,
) -> FpStatus {
    guard(|| {
        let slot = out(out_plant, "out_plant")?;
        let nc = slice(num_coeffs, num_len, "num_coeffs")?;
        let ne = slice(num_exponents, num_len, "num_exponents")?;
        let dc = slice(den_coeffs, den_len, "den_coeffs")?;
        let de = slice(den_exponents, den_len, "den_exponents")?;
        let num = QuasiPolynomial::new(nc.iter().copied().zip(ne.iter().copied()))?;
        let den = QuasiPolynomial::new(dc.iter().copied().zip(de.iter().copied()))?;
        let inner = FractionalTransferFunction::new(num, den)?;
        *slot = Box::into_raw(Box::new(FpPlant { inner }));
        Ok(())
    })
}

/// # Safety
/// `plant` must come from a constructor above and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fp_plant_free(plant: *mut FpPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// `G(jω)` on the principal branch.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_plant_eval(
    plant: *const FpPlant,
    omega: f64,
    re: *mut f64,
    im: *mut f64,
) -> FpStatus {
    guard(|| {
        let g = &get(plant, "plant")?.inner;
        let (re, im) = (out(re, "re")?, out(im, "im")?);
        let v = g.eval_jw(omega)?;
        *re = v.re;
        *im = v.im;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_locus_point(
    plant: *const FpPlant,
    lambda: f64,
    omega: f64,
    kp: *mut f64,
    ki: *mut f64,
) -> FpStatus {
    guard(|| {
        let g = &get(plant, "plant")?.inner;
        let (kp, ki) = (out(kp, "kp")?, out(ki, "ki")?);
        let p = locus::locus_point(g, lambda, omega)?;
        *kp = p.kp;
        *ki = p.ki;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_classify(
    plant: *const FpPlant,
    controller: *const FpController,
    max_denominator: u32,
    result: *mut FpClassification,
) -> FpStatus {
    guard(|| {
        let g = &get(plant, "plant")?.inner;
        let c = get(controller, "controller")?;
        let slot = out(result, "result")?;
        *slot = match locus::classify_point(g, c.lambda, c.kp, c.ki, max_denominator)? {
            Classification::Stable => FpClassification::Stable,
            Classification::Unstable => FpClassification::Unstable,
            Classification::Boundary => FpClassification::Boundary,
        };
        Ok(())
    })
}

/// Margins of `C(s)G(s)` over the default frequency span.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_margins(
    plant: *const FpPlant,
    controller: *const FpController,
    result: *mut FpMarginReport,
) -> FpStatus {
    guard(|| {
        let g = &get(plant, "plant")?.inner;
        let c = self::controller(get(controller, "controller")?)?;
        let slot = out(result, "result")?;
        let m = margins::compute_margins_default(&c, g)?;
        *slot = FpMarginReport {
            gain_margin_db: or_inf(m.gain_margin_db),
            phase_margin_deg: or_inf(m.phase_margin_deg),
            phase_crossover_omega: or_nan(m.phase_crossover_omega),
            gain_crossover_omega: or_nan(m.gain_crossover_omega),
        };
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_stability(
    plant: *const FpPlant,
    controller: *const FpController,
    max_denominator: u32,
    result: *mut FpStabilityReport,
) -> FpStatus {
    guard(|| {
        let g = &get(plant, "plant")?.inner;
        let c = self::controller(get(controller, "controller")?)?;
        let slot = out(result, "result")?;
        let v = matignon::closed_loop_verdict(g, &c, max_denominator)?;
        *slot = FpStabilityReport {
            stable: v.stable,
            boundary: v.is_boundary(),
            q: v.q,
            root_count: v.roots.len(),
            min_arg_margin: v.min_arg_margin,
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn fp_sim_config_default() -> FpSimConfig {
    let d = SimConfig::default();
    FpSimConfig {
        dt: d.dt,
        horizon: d.horizon,
        gl_memory: 0,
        setpoint_initial: 0.0,
        setpoint_final: 0.0,
        setpoint_step_time: 0.0,
        disturbance_initial: 0.0,
        disturbance_final: 0.0,
        disturbance_step_time: 0.0,
        initial_output: 0.0,
        bias: 0.0,
        saturate: false,
        u_min: f64::NEG_INFINITY,
        u_max: f64::INFINITY,
    }
}

fn sim_config(c: &FpSimConfig) -> SimConfig {
    SimConfig {
        dt: c.dt,
        horizon: c.horizon,
        gl_memory: (c.gl_memory > 0).then_some(c.gl_memory),
        setpoint: StepProfile::step(c.setpoint_initial, c.setpoint_step_time, c.setpoint_final),
        disturbance: StepProfile::step(
            c.disturbance_initial,
            c.disturbance_step_time,
            c.disturbance_final,
        ),
        initial_output: c.initial_output,
        bias: c.bias,
        saturation: c.saturate.then_some((c.u_min, c.u_max)),
    }
}

/// # Safety
/// Pointers must be valid; the trace is released with [`fp_trace_free`].
#[no_mangle]
pub unsafe extern "C" fn fp_simulate(
    plant: *const FpPlant,
    controller: *const FpController,
    config: *const FpSimConfig,
    out_trace: *mut *mut FpTrace,
) -> FpStatus {
    guard(|| {
        let g = &get(plant, "plant")?.inner;
        let c = self::controller(get(controller, "controller")?)?;
        let cfg = sim_config(get(config, "config")?);
        let slot = out(out_trace, "out_trace")?;
        let inner = timesim::simulate_closed_loop(g, &c, &cfg)?;
        *slot = Box::into_raw(Box::new(FpTrace { inner }));
        Ok(())
    })
}

/// Number of samples; zero for a null handle.
///
/// # Safety
/// `trace` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn fp_trace_len(trace: *const FpTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.len())
}

/// Copies one signal into `buffer`, which must hold `fp_trace_len` values.
///
/// # Safety
/// `buffer` must be writable for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn fp_trace_copy(
    trace: *const FpTrace,
    signal: FpSignal,
    buffer: *mut f64,
    capacity: usize,
) -> FpStatus {
    guard(|| {
        let t = &get(trace, "trace")?.inner;
        let src = match signal {
            FpSignal::Time => &t.t,
            FpSignal::Reference => &t.r,
            FpSignal::Output => &t.y,
            FpSignal::Control => &t.u,
            FpSignal::Error => &t.e,
        };
        if capacity < src.len() {
            return Err(Failure(
                FpStatus::InvalidArgument,
                format!("buffer holds {capacity} values, trace has {}", src.len()),
            ));
        }
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buffer, src.len());
        Ok(())
    })
}

/// Performance indices over `[t0, t1)`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_trace_metrics(
    trace: *const FpTrace,
    t0: f64,
    t1: f64,
    result: *mut FpMetrics,
) -> FpStatus {
    guard(|| {
        let t = &get(trace, "trace")?.inner;
        let slot = out(result, "result")?;
        let m = timesim::compute_metrics(t, (t0, t1))?;
        *slot = FpMetrics {
            ise: m.ise,
            iae: m.iae,
            rise_time_s: or_nan(m.rise_time_s),
            settling_time_s: or_nan(m.settling_time_s),
        };
        Ok(())
    })
}

/// # Safety
/// `trace` must come from [`fp_simulate`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fp_trace_free(trace: *mut FpTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

#[no_mangle]
pub extern "C" fn fp_relay_config_default() -> FpRelayConfig {
    let d = RelayConfig::default();
    FpRelayConfig {
        height: d.height,
        switch_on: d.switch_on,
        switch_off: d.switch_off,
        setpoint: d.setpoint,
        dt: d.dt,
        horizon: d.horizon,
        settle_cycles: d.settle_cycles,
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fp_relay_experiment(
    plant: *const FpPlant,
    config: *const FpRelayConfig,
    result: *mut FpRelayResult,
) -> FpStatus {
    guard(|| {
        let g = &get(plant, "plant")?.inner;
        let c = get(config, "config")?;
        let slot = out(result, "result")?;
        let cfg = RelayConfig {
            height: c.height,
            switch_on: c.switch_on,
            switch_off: c.switch_off,
            setpoint: c.setpoint,
            dt: c.dt,
            horizon: c.horizon,
            settle_cycles: c.settle_cycles,
        };
        let r = relay::relay_experiment(g, &cfg)?;
        *slot = FpRelayResult {
            amplitude: r.amplitude,
            ultimate_period: r.ultimate_period,
            ultimate_gain: r.ultimate_gain,
            cycles_used: r.cycles_used,
        };
        Ok(())
    })
}

/// # Safety
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_ultimate_gain(
    height: f64,
    amplitude: f64,
    result: *mut f64,
) -> FpStatus {
    guard(|| {
        let slot = out(result, "result")?;
        *slot = relay::ultimate_gain(height, amplitude)?;
        Ok(())
    })
}

/// Ziegler-Nichols PI from the ultimate gain and period.
///
/// # Safety
/// `result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fp_zn_pi(
    ultimate_gain: f64,
    ultimate_period: f64,
    result: *mut FpController,
) -> FpStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let c = relay::zn_pi(ultimate_gain, ultimate_period)?;
        *slot = FpController {
            kp: c.kp(),
            ki: c.ki(),
            lambda: c.lambda(),
        };
        Ok(())
    })
}
