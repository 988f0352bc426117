//! Relay-feedback experiment in simulation, ultimate gain and period, and
//! Ziegler–Nichols PI tuning.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use crate::error::{finite, Error, Result};
use crate::quasipoly::{FractionalTransferFunction, PiLambdaController};
use crate::timesim::DiscretePlant;

/// Allowed relative spread of the last three measured periods.
pub const PERIOD_SPREAD_TOL: f64 = 0.02;

/// Cycles shorter than this many samples count as chattering.
const MIN_PERIOD_SAMPLES: f64 = 10.0;

/// Measured cycles required after the transient.
pub const MEASURED_CYCLES: usize = 3;

/// Relay with hysteresis in normalized output units. The relay drives
/// `setpoint - h` once the output rises above `switch_on` and
/// `setpoint + h` once it falls below `switch_off`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayConfig {
    pub height: f64,
    pub switch_on: f64,
    pub switch_off: f64,
    pub setpoint: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Rising switches discarded as transient.
    pub settle_cycles: usize,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            height: 0.5,
            switch_on: 0.7,
            switch_off: 0.3,
            setpoint: 0.5,
            dt: 5e-4,
            horizon: 60.0,
            settle_cycles: 2,
        }
    }
}

impl RelayConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.height, "relay height"),
            (self.switch_on, "switch-on level"),
            (self.switch_off, "switch-off level"),
            (self.setpoint, "relay setpoint"),
            (self.dt, "relay time step"),
            (self.horizon, "relay horizon"),
        ] {
            finite(v, name)?;
        }
        if self.height <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "relay height {} must be > 0",
                self.height
            )));
        }
        if self.switch_on <= self.switch_off {
            return Err(Error::InvalidArgument(format!(
                "switch-on level {} must exceed switch-off level {}",
                self.switch_on, self.switch_off
            )));
        }
        if self.dt <= 0.0 || self.horizon < self.dt {
            return Err(Error::InvalidArgument(
                "relay time step and horizon must be positive".into(),
            ));
        }
        if self.settle_cycles < 2 {
            return Err(Error::InvalidArgument(
                "at least 2 settle cycles are required".into(),
            ));
        }
        Ok(())
    }

    fn high(&self) -> f64 {
        self.setpoint + self.height
    }

    fn low(&self) -> f64 {
        self.setpoint - self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelayResult {
    pub amplitude: f64,
    pub ultimate_period: f64,
    pub ultimate_gain: f64,
    pub cycles_used: usize,
}

impl fmt::Display for RelayResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "amplitude = {}", self.amplitude)?;
        writeln!(f, "ultimate_period = {}", self.ultimate_period)?;
        writeln!(f, "ultimate_gain = {}", self.ultimate_gain)?;
        write!(f, "cycles_used = {}", self.cycles_used)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayTrace {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub relay_out: Vec<f64>,
    /// Interpolated threshold crossings, `true` for the rising ones.
    pub switches: Vec<(f64, bool)>,
}

impl RelayTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "y", "relay_out"])?;
        for i in 0..self.t.len() {
            w.write_record([
                self.t[i].to_string(),
                self.y[i].to_string(),
                self.relay_out[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the relay loop from rest and records the output and relay signal.
pub fn relay_trace(plant: &FractionalTransferFunction, cfg: &RelayConfig) -> Result<RelayTrace> {
    cfg.validate()?;
    let mut sys = DiscretePlant::new(plant, cfg.dt)?;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let mut trace = RelayTrace {
        t: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        relay_out: Vec::with_capacity(steps + 1),
        switches: Vec::new(),
    };
    // the relay starts pushing up; a held value feeds any direct term
    let mut u = cfg.high();
    let mut prev_y: Option<f64> = None;
    for n in 0..=steps {
        let t = n as f64 * cfg.dt;
        let y = sys.output(u);
        let crossing = |level: f64, y0: f64| t - cfg.dt + cfg.dt * (level - y0) / (y - y0);
        if u == cfg.high() && y > cfg.switch_on {
            u = cfg.low();
            let at = prev_y.map_or(t, |y0| crossing(cfg.switch_on, y0));
            trace.switches.push((at, true));
        } else if u == cfg.low() && y < cfg.switch_off {
            u = cfg.high();
            let at = prev_y.map_or(t, |y0| crossing(cfg.switch_off, y0));
            trace.switches.push((at, false));
        }
        trace.t.push(t);
        trace.y.push(y);
        trace.relay_out.push(u);
        sys.advance(u);
        prev_y = Some(y);
    }
    Ok(trace)
}

/// Extracts amplitude and period from the settled limit cycle.
pub fn analyze_relay_trace(trace: &RelayTrace, cfg: &RelayConfig) -> Result<RelayResult> {
    let rising: Vec<f64> = trace.switches.iter().filter(|s| s.1).map(|s| s.0).collect();
    let needed = cfg.settle_cycles + MEASURED_CYCLES + 1;

    if rising.len() >= 2 {
        let shortest = rising
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        if shortest < MIN_PERIOD_SAMPLES * cfg.dt {
            return Err(Error::NoLimitCycle(format!(
                "relay chatters with period {shortest} s; the plant has too little lag for a measurable cycle"
            )));
        }
    }
    if rising.len() < needed {
        // a settled output means the loop latched rather than ran out of time
        let tail = (trace.y.len() / 10).max(2);
        let last = &trace.y[trace.y.len() - tail..];
        let (lo, hi) = last
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        if hi - lo <= 1e-9 * (1.0 + hi.abs()) {
            return Err(Error::NoLimitCycle(format!(
                "output settled at {hi} without crossing the relay thresholds"
            )));
        }
        return Err(Error::HorizonTooShort {
            horizon: cfg.horizon,
            switches: rising.len(),
            needed,
        });
    }

    let measured = &rising[cfg.settle_cycles..];
    let periods: Vec<f64> = measured.windows(2).map(|w| w[1] - w[0]).collect();
    let tail = &periods[periods.len() - MEASURED_CYCLES..];
    let mean_tail = tail.iter().sum::<f64>() / tail.len() as f64;
    let spread = tail
        .iter()
        .fold(0.0f64, |m, p| m.max((p - mean_tail).abs()))
        / mean_tail;
    if spread >= PERIOD_SPREAD_TOL {
        return Err(Error::NoLimitCycle(format!(
            "period varies by {:.2}% over the last cycles; no steady oscillation",
            100.0 * spread
        )));
    }
    let ultimate_period = periods.iter().sum::<f64>() / periods.len() as f64;

    let mut half_p2p = Vec::with_capacity(periods.len());
    for w in measured.windows(2) {
        let (a, b) = (
            (w[0] / cfg.dt).ceil() as usize,
            (w[1] / cfg.dt).floor() as usize,
        );
        let seg = &trace.y[a..=b.min(trace.y.len() - 1)];
        let (lo, hi) = seg
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            });
        half_p2p.push(0.5 * (hi - lo));
    }
    let amplitude = half_p2p.iter().sum::<f64>() / half_p2p.len() as f64;
    Ok(RelayResult {
        amplitude,
        ultimate_period,
        ultimate_gain: ultimate_gain(cfg.height, amplitude)?,
        cycles_used: periods.len(),
    })
}

/// Relay test on `plant`: amplitude `a`, period `Pu` and `Ku = 4h/(πa)`.
pub fn relay_experiment(
    plant: &FractionalTransferFunction,
    cfg: &RelayConfig,
) -> Result<RelayResult> {
    let trace = relay_trace(plant, cfg)?;
    analyze_relay_trace(&trace, cfg)
}

/// `4h / (π a)`.
pub fn ultimate_gain(h: f64, a: f64) -> Result<f64> {
    if !(h > 0.0 && a > 0.0 && h.is_finite() && a.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "relay height {h} and amplitude {a} must be positive"
        )));
    }
    Ok(4.0 * h / (PI * a))
}

/// Ziegler–Nichols PI: `Kc = 0.45 Ku`, `Ti = Pu / 1.2`, `Ki = Kc / Ti`.
pub fn zn_pi(ku: f64, pu: f64) -> Result<PiLambdaController> {
    if !(ku > 0.0 && pu > 0.0 && ku.is_finite() && pu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ultimate gain {ku} and period {pu} must be positive"
        )));
    }
    let kc = 0.45 * ku;
    let ti = pu / 1.2;
    PiLambdaController::pi(kc, kc / ti)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locus::{classify_point, Classification};
    use crate::quasipoly::QuasiPolynomial;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn motor_plant() -> FractionalTransferFunction {
        FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.01),
            QuasiPolynomial::from_ascending(&[1.0, 1.367, 0.001025]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn gain_examples() {
        assert_relative_eq!(ultimate_gain(0.5, 0.2).unwrap(), 3.1831, epsilon = 1e-4);
        assert_relative_eq!(ultimate_gain(PI, 4.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(ultimate_gain(1.0, 1.0).unwrap(), 4.0 / PI);
        assert!(ultimate_gain(0.0, 1.0).is_err());
        assert!(ultimate_gain(1.0, -1.0).is_err());
    }

    #[test]
    fn zn_examples() {
        let c = zn_pi(3.18, 2.4).unwrap();
        assert_relative_eq!(c.kp(), 1.431, epsilon = 1e-12);
        assert_relative_eq!(c.ki(), 0.7155, epsilon = 1e-12);
        assert_eq!(c.lambda(), 1.0);
        let unit = zn_pi(1.0 / 0.45, 1.2).unwrap();
        assert_relative_eq!(unit.kp(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(unit.ki(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn motor_limit_cycle() {
        let cfg = RelayConfig::default();
        let r = relay_experiment(&motor_plant(), &cfg).unwrap();
        assert!((0.15..=0.25).contains(&r.amplitude), "{r:?}");
        assert!((2.0..=2.8).contains(&r.ultimate_period), "{r:?}");
        assert!((2.5..=4.2).contains(&r.ultimate_gain), "{r:?}");
        assert_relative_eq!(
            r.ultimate_gain * r.amplitude * PI,
            4.0 * cfg.height,
            max_relative = 1e-15
        );
        assert!(r.cycles_used >= MEASURED_CYCLES);

        let c = zn_pi(r.ultimate_gain, r.ultimate_period).unwrap();
        assert_eq!(
            classify_point(&motor_plant(), 1.0, c.kp(), c.ki(), 100).unwrap(),
            Classification::Stable
        );
    }

    #[test]
    fn relay_signal_is_two_level_and_alternates() {
        let cfg = RelayConfig::default();
        let trace = relay_trace(&motor_plant(), &cfg).unwrap();
        assert!(trace.relay_out.iter().all(|&u| u == 1.0 || u == 0.0));
        assert!(trace.switches.windows(2).all(|w| w[0].1 != w[1].1));
        assert!(trace.switches.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn static_plants_have_no_cycle() {
        let gain = |k: f64| {
            FractionalTransferFunction::new(
                QuasiPolynomial::constant(k),
                QuasiPolynomial::constant(1.0),
            )
            .unwrap()
        };
        for k in [1.0, 0.5] {
            assert!(matches!(
                relay_experiment(&gain(k), &RelayConfig::default()),
                Err(Error::NoLimitCycle(_))
            ));
        }
    }

    #[test]
    fn short_horizon() {
        let cfg = RelayConfig {
            horizon: 0.1,
            ..RelayConfig::default()
        };
        assert!(matches!(
            relay_experiment(&motor_plant(), &cfg),
            Err(Error::HorizonTooShort { .. })
        ));
        assert!(relay_experiment(
            &motor_plant(),
            &RelayConfig {
                height: 0.0,
                ..RelayConfig::default()
            }
        )
        .is_err());
    }

    #[test]
    fn doubling_height_doubles_amplitude() {
        // the hysteresis half-width doubles with h so the loop scales linearly
        let base = RelayConfig::default();
        let twice = RelayConfig {
            height: 1.0,
            switch_on: 0.9,
            switch_off: 0.1,
            ..base
        };
        let a = relay_experiment(&motor_plant(), &base).unwrap();
        let b = relay_experiment(&motor_plant(), &twice).unwrap();
        assert!((b.amplitude / a.amplitude - 2.0).abs() < 0.2);
        assert!((b.ultimate_gain / a.ultimate_gain - 1.0).abs() < 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ultimate_gain_closure(h in 1e-3f64..10.0, a in 1e-3f64..10.0) {
            let ku = ultimate_gain(h, a).unwrap();
            prop_assert!((ku * a * PI - 4.0 * h).abs() <= 1e-12 * 4.0 * h);
        }

        #[test]
        fn zn_rule_constants(ku in 0.1f64..20.0, pu in 0.1f64..20.0) {
            let c = zn_pi(ku, pu).unwrap();
            prop_assert!((c.kp() - 0.45 * ku).abs() < 1e-12 * ku);
            prop_assert!((c.ki() - 0.45 * ku * 1.2 / pu).abs() < 1e-12 * ku / pu);
        }
    }
}
