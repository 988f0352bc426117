//! Fixed-step closed-loop simulation: Grünwald–Letnikov fractional
//! integral in the controller, exact zero-order-hold discretization of the
//! integer-order plant.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{finite, Error, Result};
use crate::quasipoly::{check_lambda, FractionalTransferFunction, PiLambdaController};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 20.0;

/// Settling band as a fraction of the final setpoint.
pub const SETTLING_BAND: f64 = 0.02;

/// `w_0 = 1`, `w_k = w_{k-1} (1 - (order + 1)/k)`.
pub fn gl_weights(order: f64, n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n + 1);
    w.push(1.0);
    for k in 1..=n {
        let prev = w[k - 1];
        w.push(prev * (1.0 - (order + 1.0) / k as f64));
    }
    w
}

/// Order-`lambda` GL integral of a uniformly sampled signal. `memory`
/// truncates the convolution to the most recent samples.
pub fn fractional_integral(
    signal: &[f64],
    lambda: f64,
    dt: f64,
    memory: Option<usize>,
) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "time step {dt} must be positive"
        )));
    }
    finite(lambda, "lambda")?;
    let n = signal.len();
    let reach = memory.map_or(n, |m| m.min(n));
    let w = gl_weights(-lambda, reach);
    let scale = dt.powf(lambda);
    Ok((0..n)
        .map(|i| {
            let depth = i.min(reach);
            scale * (0..=depth).map(|k| w[k] * signal[i - k]).sum::<f64>()
        })
        .collect())
}

/// Piecewise-constant signal: `initial` until the first step, then each
/// `(time, value)` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProfile {
    pub initial: f64,
    pub steps: Vec<(f64, f64)>,
}

impl StepProfile {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            steps: Vec::new(),
        }
    }

    pub fn step(initial: f64, time: f64, value: f64) -> Self {
        Self {
            initial,
            steps: vec![(time, value)],
        }
    }

    fn validate(&self, horizon: f64) -> Result<()> {
        finite(self.initial, "profile value")?;
        let mut last = 0.0;
        for &(t, v) in &self.steps {
            finite(v, "profile value")?;
            if !(t >= last && t <= horizon) {
                return Err(Error::InvalidArgument(format!(
                    "profile step times must be non-decreasing within [0, {horizon}], got {t}"
                )));
            }
            last = t;
        }
        Ok(())
    }

    /// Value at sample `n` of a grid with spacing `dt`.
    pub fn sample(&self, n: usize, dt: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .find(|(t, _)| (t / dt).round() as usize <= n)
            .map_or(self.initial, |&(_, v)| v)
    }

    pub fn final_value(&self) -> f64 {
        self.steps.last().map_or(self.initial, |&(_, v)| v)
    }
}

/// Simulation settings. Signals are in % of span.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Samples kept in the GL convolution; `None` keeps the whole history.
    pub gl_memory: Option<usize>,
    pub setpoint: StepProfile,
    /// Added to the controller output at the plant input.
    pub disturbance: StepProfile,
    /// The plant starts at the equilibrium that produces this output.
    pub initial_output: f64,
    /// Constant offset of the controller output (the operating-point input).
    pub bias: f64,
    /// Optional `(min, max)` clamp of the controller output.
    pub saturation: Option<(f64, f64)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: DEFAULT_HORIZON,
            gl_memory: None,
            setpoint: StepProfile::constant(0.0),
            disturbance: StepProfile::constant(0.0),
            initial_output: 0.0,
            bias: 0.0,
            saturation: None,
        }
    }
}

impl SimConfig {
    /// Loop resting at `level`: output, setpoint and controller offset
    /// all at the matching equilibrium.
    pub fn operating_point(plant: &FractionalTransferFunction, level: f64) -> Result<Self> {
        let gain = plant
            .dc_gain()
            .filter(|g| g.is_finite() && *g != 0.0)
            .ok_or_else(|| Error::InvalidArgument("plant has no finite nonzero DC gain".into()))?;
        Ok(Self {
            setpoint: StepProfile::constant(level),
            initial_output: level,
            bias: level / gain,
            ..Self::default()
        })
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step {} must be positive",
                self.dt
            )));
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must be at least one time step",
                self.horizon
            )));
        }
        finite(self.initial_output, "initial output")?;
        finite(self.bias, "controller bias")?;
        if let Some((lo, hi)) = self.saturation {
            if !(lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "saturation range [{lo}, {hi}] is empty"
                )));
            }
        }
        self.setpoint.validate(self.horizon)?;
        self.disturbance.validate(self.horizon)
    }
}

/// Integer-order plant in controllable canonical form, advanced exactly
/// under a zero-order-hold input.
#[derive(Debug, Clone)]
pub struct DiscretePlant {
    n: usize,
    ad: Vec<f64>,
    bd: Vec<f64>,
    c: Vec<f64>,
    d: f64,
    x: Vec<f64>,
    a_cont: DMatrix<f64>,
}

impl DiscretePlant {
    pub fn new(g: &FractionalTransferFunction, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "time step {dt} must be positive"
            )));
        }
        if let Some(t) = g
            .num()
            .terms()
            .iter()
            .chain(g.den().terms())
            .find(|t| t.exponent.fract() != 0.0)
        {
            return Err(Error::NonIntegerPlant(t.exponent));
        }
        let n = g.den().degree().unwrap_or(0.0) as usize;
        let lead = g.den().coeff_of(n as f64);
        let a: Vec<f64> = (0..n).map(|k| g.den().coeff_of(k as f64) / lead).collect();
        let d = g.num().coeff_of(n as f64) / lead;
        // strictly proper remainder after removing the feedthrough
        let c: Vec<f64> = (0..n)
            .map(|k| g.num().coeff_of(k as f64) / lead - d * a[k])
            .collect();

        let a_cont = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == n {
                -a[j]
            } else if j == i + 1 {
                1.0
            } else {
                0.0
            }
        });
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&a_cont * dt));
        if n > 0 {
            aug[(n - 1, n)] = dt;
        }
        let e = aug.exp();
        let ad = (0..n * n).map(|k| e[(k / n, k % n)]).collect();
        let bd = (0..n).map(|i| e[(i, n)]).collect();
        Ok(Self {
            n,
            ad,
            bd,
            c,
            d,
            x: vec![0.0; n],
            a_cont,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn feedthrough(&self) -> f64 {
        self.d
    }

    /// Output for the current state and input `u`.
    pub fn output(&self, u: f64) -> f64 {
        self.c.iter().zip(&self.x).map(|(c, x)| c * x).sum::<f64>() + self.d * u
    }

    /// Holds `u` over one step.
    pub fn advance(&mut self, u: f64) {
        let n = self.n;
        let next: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| self.ad[i * n + j] * self.x[j]).sum::<f64>() + self.bd[i] * u)
            .collect();
        self.x = next;
    }

    pub fn reset(&mut self) {
        self.x.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Puts the plant at rest under constant input `u`.
    pub fn set_equilibrium_input(&mut self, u: f64) -> Result<()> {
        if self.n == 0 || u == 0.0 {
            self.reset();
            return Ok(());
        }
        // A x + B u = 0 with B = e_n
        let mut rhs = nalgebra::DVector::zeros(self.n);
        rhs[self.n - 1] = -u;
        let x = self.a_cont.clone().lu().solve(&rhs).ok_or_else(|| {
            Error::InvalidArgument("plant has a pole at the origin; no equilibrium".into())
        })?;
        self.x = x.iter().copied().collect();
        Ok(())
    }

    /// Puts the plant at rest with output `y`.
    pub fn set_equilibrium_output(&mut self, y: f64) -> Result<()> {
        if y == 0.0 {
            self.reset();
            return Ok(());
        }
        self.set_equilibrium_input(1.0)?;
        let unit = self.output(1.0);
        if unit == 0.0 || !unit.is_finite() {
            return Err(Error::InvalidArgument(
                "plant has zero DC gain; cannot start at a nonzero output".into(),
            ));
        }
        self.set_equilibrium_input(y / unit)
    }
}

/// Sampled closed-loop signals, all of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub e: Vec<f64>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "r", "y", "u", "e"])?;
        for i in 0..self.len() {
            w.write_record([
                self.t[i].to_string(),
                self.r[i].to_string(),
                self.y[i].to_string(),
                self.u[i].to_string(),
                self.e[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the loop `u = bias + Kp e + Ki D^{-λ} e` around the plant for
/// `cfg.horizon` seconds.
pub fn simulate_closed_loop(
    plant: &FractionalTransferFunction,
    controller: &PiLambdaController,
    cfg: &SimConfig,
) -> Result<SimTrace> {
    cfg.validate()?;
    check_lambda(controller.lambda())?;
    let mut sys = DiscretePlant::new(plant, cfg.dt)?;
    if sys.feedthrough() != 0.0 || sys.order() == 0 {
        return Err(Error::InvalidArgument(
            "closed-loop simulation needs a strictly proper plant".into(),
        ));
    }
    // the plant runs in deviations from the equilibrium that holds y at its initial value
    let u_eq = if cfg.initial_output == 0.0 {
        0.0
    } else {
        let gain = plant
            .dc_gain()
            .filter(|g| g.is_finite() && *g != 0.0)
            .ok_or_else(|| Error::InvalidArgument("plant has no finite nonzero DC gain".into()))?;
        cfg.initial_output / gain
    };

    let steps = cfg.steps();
    let len = steps + 1;
    let reach = cfg.gl_memory.map_or(len, |m| m.min(len));
    let w = gl_weights(-controller.lambda(), reach);
    let scale = cfg.dt.powf(controller.lambda());
    let (kp, ki) = (controller.kp(), controller.ki());

    let mut trace = SimTrace {
        dt: cfg.dt,
        t: Vec::with_capacity(len),
        r: Vec::with_capacity(len),
        y: Vec::with_capacity(len),
        u: Vec::with_capacity(len),
        e: Vec::with_capacity(len),
    };
    for n in 0..len {
        let r = cfg.setpoint.sample(n, cfg.dt);
        let y = cfg.initial_output + sys.output(0.0);
        let e = r - y;
        trace.e.push(e);
        let depth = n.min(reach);
        let integral = scale * (0..=depth).map(|k| w[k] * trace.e[n - k]).sum::<f64>();
        let mut u = cfg.bias + kp * e + ki * integral;
        if let Some((lo, hi)) = cfg.saturation {
            u = u.clamp(lo, hi);
        }
        trace.t.push(n as f64 * cfg.dt);
        trace.r.push(r);
        trace.y.push(y);
        trace.u.push(u);
        sys.advance(u + cfg.disturbance.sample(n, cfg.dt) - u_eq);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub ise: f64,
    pub iae: f64,
    /// 10 % to 90 % of the output change toward the final setpoint.
    pub rise_time_s: Option<f64>,
    /// From the window start until the output stays within the band.
    pub settling_time_s: Option<f64>,
}

impl Metrics {
    pub const CSV_HEADER: [&'static str; 4] = ["ise", "iae", "rise_time_s", "settling_time_s"];

    pub fn csv_fields(&self) -> [String; 4] {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        [
            self.ise.to_string(),
            self.iae.to_string(),
            opt(self.rise_time_s),
            opt(self.settling_time_s),
        ]
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [ise, iae, rise, settle] = self.csv_fields();
        write!(
            f,
            "ise = {ise}\niae = {iae}\nrise_time_s = {rise}\nsettling_time_s = {settle}"
        )
    }
}

/// ISE/IAE by the left rectangle rule over the samples in `[t0, t1)`,
/// plus rise and settling times measured from `t0`.
pub fn compute_metrics(trace: &SimTrace, window: (f64, f64)) -> Result<Metrics> {
    let (t0, t1) = window;
    let span = trace.dt * trace.len() as f64;
    let i0 = (t0 / trace.dt).round();
    let i1 = (t1 / trace.dt).round();
    if !(t0 >= 0.0 && t1 > t0 && i1 <= trace.len() as f64 && i1 > i0) {
        return Err(Error::WindowOutOfRange {
            start: t0,
            end: t1,
            span,
        });
    }
    let (i0, i1) = (i0 as usize, i1 as usize);
    let e = &trace.e[i0..i1];
    let ise = e.iter().map(|v| v * v).sum::<f64>() * trace.dt;
    let iae = e.iter().map(|v| v.abs()).sum::<f64>() * trace.dt;

    let y = &trace.y[i0..i1];
    let r_final = trace.r[i1 - 1];
    let delta = r_final - y[0];
    let time = |k: usize| k as f64 * trace.dt;

    let rise_time_s = (delta != 0.0)
        .then(|| {
            let frac = |k: usize| (y[k] - y[0]) / delta;
            let k10 = (0..y.len()).find(|&k| frac(k) >= 0.1)?;
            let k90 = (k10..y.len()).find(|&k| frac(k) >= 0.9)?;
            Some(time(k90) - time(k10))
        })
        .flatten();

    let band = if r_final != 0.0 {
        SETTLING_BAND * r_final.abs()
    } else {
        SETTLING_BAND * delta.abs()
    };
    let settling_time_s = if band == 0.0 {
        y.iter().all(|&v| v == r_final).then_some(0.0)
    } else {
        match y.iter().rposition(|&v| (v - r_final).abs() > band) {
            None => Some(0.0),
            Some(k) if k + 1 < y.len() => Some(time(k + 1)),
            Some(_) => None,
        }
    };
    Ok(Metrics {
        ise,
        iae,
        rise_time_s,
        settling_time_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioKind {
    /// Setpoint step.
    Servo,
    /// Step disturbance at the plant input.
    Load,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub step_pct: f64,
}

impl Scenario {
    pub fn label(&self) -> String {
        let kind = match self.kind {
            ScenarioKind::Servo => "servo",
            ScenarioKind::Load => "load",
        };
        format!("{kind}{:+}", self.step_pct)
    }

    /// Servo ±5/10/15 % and load ±2 %.
    pub fn standard_suite() -> Vec<Scenario> {
        let mut out: Vec<Scenario> = [5.0, -5.0, 10.0, -10.0, 15.0, -15.0]
            .into_iter()
            .map(|s| Scenario {
                kind: ScenarioKind::Servo,
                step_pct: s,
            })
            .collect();
        out.extend([2.0, -2.0].map(|s| Scenario {
            kind: ScenarioKind::Load,
            step_pct: s,
        }));
        out
    }

    /// `base` with this scenario's step applied at `step_time`.
    pub fn apply(&self, base: &SimConfig, step_time: f64) -> SimConfig {
        let mut cfg = base.clone();
        let level = base.setpoint.initial;
        match self.kind {
            ScenarioKind::Servo => {
                cfg.setpoint = StepProfile::step(level, step_time, level + self.step_pct)
            }
            ScenarioKind::Load => {
                let d0 = base.disturbance.initial;
                cfg.disturbance = StepProfile::step(d0, step_time, d0 + self.step_pct);
            }
        }
        cfg
    }
}

/// One scenario run with its metrics over `[step_time, horizon)`.
pub fn run_scenario(
    plant: &FractionalTransferFunction,
    controller: &PiLambdaController,
    base: &SimConfig,
    scenario: Scenario,
    step_time: f64,
) -> Result<(SimTrace, Metrics)> {
    let cfg = scenario.apply(base, step_time);
    let trace = simulate_closed_loop(plant, controller, &cfg)?;
    let metrics = compute_metrics(&trace, (step_time, cfg.steps() as f64 * cfg.dt))?;
    Ok((trace, metrics))
}

#[derive(Debug, Clone)]
pub struct ScenarioRow {
    pub scenario: Scenario,
    pub fo: Result<Metrics>,
    pub io: Result<Metrics>,
}

#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub rows: Vec<ScenarioRow>,
}

impl ComparisonTable {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.fo.is_ok() && r.io.is_ok())
    }

    /// Rows are `(controller, metric)`, columns the scenarios; failed cells
    /// read `failed`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["controller".to_string(), "metric".to_string()];
        header.extend(self.rows.iter().map(|r| r.scenario.label()));
        w.write_record(&header)?;
        for (name, pick) in [("fo", true), ("io", false)] {
            for (m, metric) in Metrics::CSV_HEADER.iter().enumerate() {
                let mut rec = vec![name.to_string(), metric.to_string()];
                for row in &self.rows {
                    let cell = if pick { &row.fo } else { &row.io };
                    rec.push(match cell {
                        Ok(v) => v.csv_fields()[m].clone(),
                        Err(_) => "failed".to_string(),
                    });
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the standard servo and load scenarios for both controllers from
/// `base` (normally an operating point), stepping at `t = 0`.
pub fn run_scenario_suite(
    plant: &FractionalTransferFunction,
    fo: &PiLambdaController,
    io: &PiLambdaController,
    base: &SimConfig,
) -> ComparisonTable {
    let scenarios = Scenario::standard_suite();
    let cells: Vec<(usize, bool)> = (0..scenarios.len())
        .flat_map(|i| [(i, true), (i, false)])
        .collect();
    let results: Vec<Result<Metrics>> = cells
        .par_iter()
        .map(|&(i, is_fo)| {
            let c = if is_fo { fo } else { io };
            run_scenario(plant, c, base, scenarios[i], 0.0).map(|(_, m)| m)
        })
        .collect();
    let mut it = results.into_iter();
    let rows = scenarios
        .into_iter()
        .map(|scenario| {
            let fo = it.next().expect("one result per cell");
            let io = it.next().expect("one result per cell");
            ScenarioRow { scenario, fo, io }
        })
        .collect();
    ComparisonTable { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motor::{derive_tf, MotorParams};
    use crate::quasipoly::QuasiPolynomial;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn motor_plant() -> FractionalTransferFunction {
        FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.01),
            QuasiPolynomial::from_ascending(&[1.0, 1.367, 0.001025]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn weight_examples() {
        assert_eq!(gl_weights(1.0, 3), vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(gl_weights(-1.0, 3), vec![1.0; 4]);
        let w = gl_weights(0.5, 2);
        assert_relative_eq!(w[1], -0.5);
        assert_relative_eq!(w[2], -0.125);
    }

    #[test]
    fn integral_of_constant() {
        let ones = vec![1.0; 1001];
        let ramp = fractional_integral(&ones, 1.0, 1e-3, None).unwrap();
        // the k = 0 term makes the ramp exactly one step ahead
        assert!((ramp[1000] - 1.0).abs() <= 1e-3 + 1e-12);
        assert_relative_eq!(ramp[1000], 1.001, max_relative = 1e-12);
        let half = fractional_integral(&ones, 0.5, 1e-3, None).unwrap();
        let exact = 2.0 / std::f64::consts::PI.sqrt();
        assert!((half[1000] - exact).abs() / exact < 0.01);
        let zeros = fractional_integral(&[0.0; 50], 0.7, 1e-3, None).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn semigroup() {
        let dt = 1e-3;
        let x: Vec<f64> = (0..=1000).map(|i| (2.0 * i as f64 * dt).cos()).collect();
        let twice = fractional_integral(
            &fractional_integral(&x, 0.3, dt, None).unwrap(),
            0.7,
            dt,
            None,
        )
        .unwrap();
        let once = fractional_integral(&x, 1.0, dt, None).unwrap();
        assert!((twice[1000] - once[1000]).abs() / once[1000].abs() < 0.005);
    }

    #[test]
    fn short_memory_truncates() {
        let x = vec![1.0; 200];
        let full = fractional_integral(&x, 0.5, 1e-2, None).unwrap();
        let short = fractional_integral(&x, 0.5, 1e-2, Some(50)).unwrap();
        assert_eq!(full[..=50], short[..=50]);
        assert!(short[199] < full[199]);
    }

    #[test]
    fn unforced_plant_decays() {
        let cfg = SimConfig {
            initial_output: 10.0,
            ..SimConfig::default()
        };
        let c = PiLambdaController::pi(0.0, 0.0).unwrap();
        let trace = simulate_closed_loop(&motor_plant(), &c, &cfg).unwrap();
        assert_relative_eq!(trace.y[0], 10.0, max_relative = 1e-12);
        assert!(trace.y.last().unwrap().abs() < 1e-3);
        // overdamped: monotone after the first extremum
        let start = trace.y.windows(2).position(|w| w[1] < w[0]).unwrap_or(0);
        assert!(trace.y[start..].windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn zoh_matches_first_order_closed_form() {
        // 1/(s+1) under unit input from rest: y = 1 - e^{-t} at the samples
        let g = FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.0),
            QuasiPolynomial::from_ascending(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let mut p = DiscretePlant::new(&g, 0.1).unwrap();
        for k in 1..=20 {
            p.advance(1.0);
            assert_relative_eq!(
                p.output(0.0),
                1.0 - (-0.1 * k as f64).exp(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn non_integer_plant_rejected() {
        let g = FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.0),
            QuasiPolynomial::new([(1.0, 0.0), (1.0, 1.5)]).unwrap(),
        )
        .unwrap();
        let c = PiLambdaController::pi(1.0, 1.0).unwrap();
        assert!(matches!(
            simulate_closed_loop(&g, &c, &SimConfig::default()),
            Err(Error::NonIntegerPlant(e)) if e == 1.5
        ));
    }

    #[test]
    fn metric_examples() {
        let n = 2001;
        let trace = |e: f64| SimTrace {
            dt: 1e-3,
            t: (0..n).map(|i| i as f64 * 1e-3).collect(),
            r: vec![e; n],
            y: vec![0.0; n],
            u: vec![0.0; n],
            e: vec![e; n],
        };
        let m = compute_metrics(&trace(1.0), (0.0, 2.0)).unwrap();
        assert!((m.ise - 2.0).abs() < 1e-3 && (m.iae - 2.0).abs() < 1e-3);
        let m2 = compute_metrics(&trace(2.0), (0.0, 2.0)).unwrap();
        assert_relative_eq!(m2.ise, 4.0 * m.ise, max_relative = 1e-12);
        assert_relative_eq!(m2.iae, 2.0 * m.iae, max_relative = 1e-12);
        assert!(m.settling_time_s.is_none());
        assert!(matches!(
            compute_metrics(&trace(1.0), (0.0, 3.0)),
            Err(Error::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn fo_settles_without_offset_and_faster() {
        let g = derive_tf(&MotorParams::reference()).unwrap();
        let base = SimConfig::operating_point(&g, 50.0).unwrap();
        let servo = Scenario {
            kind: ScenarioKind::Servo,
            step_pct: 5.0,
        };
        let fo = PiLambdaController::new(2.5732, 1.45204, 1.2).unwrap();
        let io = PiLambdaController::pi(1.431, 0.72).unwrap();
        let (tf, mf) = run_scenario(&g, &fo, &base, servo, 0.0).unwrap();
        let (_, mi) = run_scenario(&g, &io, &base, servo, 0.0).unwrap();
        assert!((tf.y.last().unwrap() - 55.0).abs() < 0.05);
        assert!(mf.settling_time_s.unwrap() < mi.settling_time_s.unwrap());
    }

    #[test]
    fn homogeneity_about_operating_point() {
        let g = motor_plant();
        let base = SimConfig {
            horizon: 5.0,
            ..SimConfig::operating_point(&g, 50.0).unwrap()
        };
        let c = PiLambdaController::new(2.0, 1.5, 1.1).unwrap();
        let run = |s: f64| {
            run_scenario(
                &g,
                &c,
                &base,
                Scenario {
                    kind: ScenarioKind::Servo,
                    step_pct: s,
                },
                0.0,
            )
            .unwrap()
            .1
        };
        let (m1, m3) = (run(5.0), run(15.0));
        assert_relative_eq!(m3.iae, 3.0 * m1.iae, max_relative = 1e-3);
        assert_relative_eq!(m3.ise, 9.0 * m1.ise, max_relative = 1e-3);
    }

    #[test]
    fn identical_controllers_give_identical_rows() {
        let g = motor_plant();
        let base = SimConfig {
            horizon: 2.0,
            ..SimConfig::operating_point(&g, 50.0).unwrap()
        };
        let c = PiLambdaController::new(2.0, 1.5, 1.2).unwrap();
        let table = run_scenario_suite(&g, &c, &c, &base);
        assert!(table.is_complete());
        for row in &table.rows {
            assert_eq!(row.fo.as_ref().unwrap(), row.io.as_ref().unwrap());
        }
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("controller,metric,servo+5,servo-5"));
        assert_eq!(text.lines().count(), 9);
    }

    /// Standalone PI loop around the modal form of a plant with two real
    /// poles; shares no code with the simulator.
    fn classical_pi_oracle(
        b0: f64,
        den: [f64; 3],
        kp: f64,
        ki: f64,
        r: f64,
        dt: f64,
        steps: usize,
    ) -> Vec<f64> {
        let [a0, a1, a2] = den;
        let disc = (a1 * a1 - 4.0 * a2 * a0).sqrt();
        let (p1, p2) = ((-a1 + disc) / (2.0 * a2), (-a1 - disc) / (2.0 * a2));
        let k = b0 / a2;
        let (r1, r2) = (k / (p1 - p2), k / (p2 - p1));
        let (f1, f2) = ((p1 * dt).exp(), (p2 * dt).exp());
        let (g1, g2) = ((f1 - 1.0) / p1, (f2 - 1.0) / p2);
        let (mut z1, mut z2, mut acc) = (0.0, 0.0, 0.0);
        let mut y_out = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            let y = r1 * z1 + r2 * z2;
            let e = r - y;
            acc += e * dt;
            let u = kp * e + ki * acc;
            y_out.push(y);
            z1 = f1 * z1 + g1 * u;
            z2 = f2 * z2 + g2 * u;
        }
        y_out
    }

    #[test]
    fn integer_order_reduces_to_classical_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = motor_plant();
        for _ in 0..10 {
            let (kp, ki) = (rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0));
            let cfg = SimConfig {
                horizon: 5.0,
                setpoint: StepProfile::constant(1.0),
                ..SimConfig::default()
            };
            let trace =
                simulate_closed_loop(&g, &PiLambdaController::pi(kp, ki).unwrap(), &cfg).unwrap();
            let oracle = classical_pi_oracle(
                1.01,
                [1.0, 1.367, 0.001025],
                kp,
                ki,
                1.0,
                cfg.dt,
                cfg.steps(),
            );
            let worst = trace
                .y
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "kp={kp} ki={ki} deviation {worst}");
        }
    }

    #[test]
    fn resting_loop_stays_exact() {
        let g = motor_plant();
        let cfg = SimConfig::operating_point(&g, 50.0).unwrap();
        let c = PiLambdaController::pi(1.431, 0.72).unwrap();
        let (trace, m) = run_scenario(
            &g,
            &c,
            &cfg,
            Scenario {
                kind: ScenarioKind::Servo,
                step_pct: 0.0,
            },
            0.0,
        )
        .unwrap();
        assert!(trace.e.iter().all(|&e| e == 0.0));
        assert_eq!((m.ise, m.iae), (0.0, 0.0));
    }

    #[test]
    fn deterministic() {
        let g = motor_plant();
        let cfg = SimConfig {
            horizon: 1.0,
            ..SimConfig::operating_point(&g, 50.0).unwrap()
        };
        let c = PiLambdaController::new(2.5, 1.4, 1.2).unwrap();
        let s = Scenario {
            kind: ScenarioKind::Load,
            step_pct: 2.0,
        }
        .apply(&cfg, 0.0);
        assert_eq!(
            simulate_closed_loop(&g, &c, &s).unwrap(),
            simulate_closed_loop(&g, &c, &s).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn trace_invariants(kp in 0.0f64..5.0, ki in 0.0f64..5.0, lambda in 0.5f64..1.5, step in -20.0f64..20.0) {
            let g = motor_plant();
            let base = SimConfig { horizon: 0.5, ..SimConfig::operating_point(&g, 50.0).unwrap() };
            let c = PiLambdaController::new(kp, ki, lambda).unwrap();
            let (trace, m) = run_scenario(&g, &c, &base, Scenario { kind: ScenarioKind::Servo, step_pct: step }, 0.0)
                .unwrap();
            prop_assert_eq!(trace.len(), trace.u.len());
            for i in 0..trace.len() {
                prop_assert_eq!(trace.e[i], trace.r[i] - trace.y[i]);
            }
            prop_assert!(m.ise >= 0.0 && m.iae >= 0.0);
            if let Some(ts) = m.settling_time_s {
                prop_assert!(ts <= base.horizon);
            }
        }

        #[test]
        fn gl_integral_is_linear(a in -3.0f64..3.0, lambda in 0.1f64..1.9) {
            let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin()).collect();
            let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
            let ix = fractional_integral(&x, lambda, 0.01, None).unwrap();
            let iax = fractional_integral(&ax, lambda, 0.01, None).unwrap();
            for (p, q) in ix.iter().zip(&iax) {
                prop_assert!((a * p - q).abs() <= 1e-12 * (1.0 + q.abs()));
            }
        }
    }
}
