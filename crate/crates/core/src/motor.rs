//! Armature-voltage-controlled DC motor: physical parameters to the
//! speed transfer function `ω(s)/Eₐ(s)`.

use std::path::Path;
use std::str::FromStr;

use crate::error::{finite, Error, Result};
use crate::quasipoly::{FractionalTransferFunction, QuasiPolynomial};

/// Minimum `B·R + K²` that can be normalized to a unit constant term.
pub const DEGENERATE_DC_TOL: f64 = 1e-12;

/// Physical motor parameters in SI units (speed rating in rpm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorParams {
    /// Rotor moment of inertia `J` [kg·m²].
    pub inertia: f64,
    /// Viscous friction `B` [N·m·s].
    pub damping: f64,
    /// Back-EMF and torque constant `K = Kb = KT` [V·s/rad].
    pub motor_constant: f64,
    /// Armature resistance `R` [Ω].
    pub resistance: f64,
    /// Armature inductance `L` [H]. Zero reduces the model to first order.
    pub inductance: f64,
    /// Rated speed [rpm], the 100 % point of the speed span.
    pub rated_speed_rpm: f64,
}

impl MotorParams {
    pub fn new(
        inertia: f64,
        damping: f64,
        motor_constant: f64,
        resistance: f64,
        inductance: f64,
        rated_speed_rpm: f64,
    ) -> Result<Self> {
        let p = Self {
            inertia,
            damping,
            motor_constant,
            resistance,
            inductance,
            rated_speed_rpm,
        };
        p.validate()?;
        Ok(p)
    }

    /// The laboratory motor used throughout the examples and tests.
    pub fn reference() -> Self {
        Self {
            inertia: 0.03,
            damping: 0.019,
            motor_constant: 0.1331,
            resistance: 6.0,
            inductance: 4.5e-3,
            rated_speed_rpm: 1500.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.inertia, "J", true),
            (self.damping, "B", false),
            (self.motor_constant, "K", true),
            (self.resistance, "R", true),
            (self.inductance, "L", false),
            (self.rated_speed_rpm, "rated_speed", true),
        ];
        for (value, name, strict) in checks {
            finite(value, "motor parameter")?;
            if value < 0.0 || (strict && value == 0.0) {
                let bound = if strict { "> 0" } else { ">= 0" };
                return Err(Error::InvalidArgument(format!(
                    "motor parameter {name} = {value} must be {bound}"
                )));
            }
        }
        Ok(())
    }

    /// Ascending coefficients `[B·R + K², J·R + B·L, J·L]` of
    /// `(J s + B)(L s + R) + K²`, before normalization.
    pub fn characteristic_coeffs(&self) -> [f64; 3] {
        let (j, b, k, r, l) = (
            self.inertia,
            self.damping,
            self.motor_constant,
            self.resistance,
            self.inductance,
        );
        [b * r + k * k, j * r + b * l, j * l]
    }

    /// Steady-state speed per volt, `K / (B·R + K²)`.
    pub fn dc_gain(&self) -> f64 {
        self.motor_constant / self.characteristic_coeffs()[0]
    }

    pub fn rpm_to_percent(&self, rpm: f64) -> f64 {
        100.0 * rpm / self.rated_speed_rpm
    }

    pub fn percent_to_rpm(&self, percent: f64) -> f64 {
        percent * self.rated_speed_rpm / 100.0
    }

    /// Parses `key = value` lines with keys `J, B, K, R, L, rated_speed`.
    /// Blank lines and `#` comments are ignored; every key is required once.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut values: [Option<f64>; 6] = [None; 6];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let slot = CONFIG_KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::Config {
                    line: line_no,
                    message: format!(
                        "unknown key `{key}` (expected one of {})",
                        CONFIG_KEYS.join(", ")
                    ),
                })?;
            let value = f64::from_str(value.trim()).map_err(|_| Error::Config {
                line: line_no,
                message: format!("value for `{key}` is not a number: `{}`", value.trim()),
            })?;
            if values[slot].replace(value).is_some() {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        let get = |i: usize| {
            values[i].ok_or_else(|| Error::Config {
                line: 0,
                message: format!("missing key `{}`", CONFIG_KEYS[i]),
            })
        };
        Self::new(get(0)?, get(1)?, get(2)?, get(3)?, get(4)?, get(5)?)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "J = {}\nB = {}\nK = {}\nR = {}\nL = {}\nrated_speed = {}\n",
            self.inertia,
            self.damping,
            self.motor_constant,
            self.resistance,
            self.inductance,
            self.rated_speed_rpm
        )
    }
}

pub const CONFIG_KEYS: [&str; 6] = ["J", "B", "K", "R", "L", "rated_speed"];

/// `G(s) = K / ((J s + B)(L s + R) + K²)`, scaled so the denominator's
/// constant term is exactly 1.
pub fn derive_tf(p: &MotorParams) -> Result<FractionalTransferFunction> {
    p.validate()?;
    let [a0, a1, a2] = p.characteristic_coeffs();
    if a0 < DEGENERATE_DC_TOL {
        return Err(Error::DegenerateModel(a0));
    }
    let den = QuasiPolynomial::from_ascending(&[1.0, a1 / a0, a2 / a0])?;
    let num = QuasiPolynomial::constant(p.motor_constant / a0);
    FractionalTransferFunction::new(num, den)
}
