//! Fractional-order quasipolynomials `Σ aᵢ s^αᵢ`, transfer functions built from
//! them, and the PI^λ controller `Kp + Ki / s^λ`.
//!
//! Everything here is evaluated on the positive imaginary axis using the
//! principal branch `(jω)^α = ω^α (cos(απ/2) + j sin(απ/2))`, `ω > 0`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use num_complex::Complex64;

use crate::error::{finite, Error, Result};

/// Exponents closer than this are treated as the same power of `s`.
pub const EXPONENT_MERGE_TOL: f64 = 1e-9;

/// `|D(jω)|` below this makes a transfer function evaluation fail.
pub const DENOMINATOR_ZERO_TOL: f64 = 1e-14;

/// A single `coeff · s^exponent` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub exponent: f64,
}

/// Sum of real-coefficient terms with non-negative real exponents.
///
/// Terms are kept sorted by strictly increasing exponent; duplicate exponents
/// are merged and zero coefficients dropped at construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuasiPolynomial {
    terms: Vec<Term>,
}

impl QuasiPolynomial {
    /// Builds a quasipolynomial from `(coeff, exponent)` pairs.
    pub fn new<I>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut raw = Vec::new();
        for (coeff, exponent) in terms {
            finite(coeff, "quasipolynomial coefficient")?;
            finite(exponent, "quasipolynomial exponent")?;
            if exponent < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "quasipolynomial exponent {exponent} is negative"
                )));
            }
            raw.push(Term { coeff, exponent });
        }
        Ok(Self::normalized(raw))
    }

    /// The zero quasipolynomial (no terms).
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::normalized(vec![Term {
            coeff: c,
            exponent: 0.0,
        }])
    }

    /// Ordinary polynomial from ascending coefficients `c₀ + c₁ s + ...`.
    pub fn from_ascending(coeffs: &[f64]) -> Result<Self> {
        Self::new(coeffs.iter().enumerate().map(|(k, &c)| (c, k as f64)))
    }

    fn normalized(mut raw: Vec<Term>) -> Self {
        raw.sort_by(|a, b| a.exponent.total_cmp(&b.exponent));
        let mut terms: Vec<Term> = Vec::with_capacity(raw.len());
        for term in raw {
            match terms.last_mut() {
                Some(last) if (term.exponent - last.exponent).abs() <= EXPONENT_MERGE_TOL => {
                    last.coeff += term.coeff;
                }
                _ => terms.push(term),
            }
        }
        terms.retain(|t| t.coeff != 0.0);
        Self { terms }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest exponent, `None` for the zero quasipolynomial.
    pub fn degree(&self) -> Option<f64> {
        self.terms.last().map(|t| t.exponent)
    }

    /// Coefficient of `s^exponent` (zero when absent).
    pub fn coeff_of(&self, exponent: f64) -> f64 {
        self.terms
            .iter()
            .find(|t| (t.exponent - exponent).abs() <= EXPONENT_MERGE_TOL)
            .map_or(0.0, |t| t.coeff)
    }

    /// True when every exponent is a whole number.
    pub fn is_integer_order(&self) -> bool {
        self.terms.iter().all(|t| t.exponent.fract() == 0.0)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::normalized(
            self.terms
                .iter()
                .chain(other.terms.iter())
                .copied()
                .collect(),
        )
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::normalized(
            self.terms
                .iter()
                .map(|t| Term {
                    coeff: t.coeff * k,
                    exponent: t.exponent,
                })
                .collect(),
        )
    }

    /// Multiplies by `s^alpha`.
    pub fn shift(&self, alpha: f64) -> Self {
        debug_assert!(alpha >= 0.0);
        Self::normalized(
            self.terms
                .iter()
                .map(|t| Term {
                    coeff: t.coeff,
                    exponent: t.exponent + alpha,
                })
                .collect(),
        )
    }

    /// Evaluates at `s = jω`.
    pub fn eval_jw(&self, omega: f64) -> Result<Complex64> {
        check_omega(omega)?;
        Ok(self
            .terms
            .iter()
            .map(|t| jw_pow(t.exponent, omega) * t.coeff)
            .sum())
    }

    /// Evaluates each term at `s = jω` separately.
    pub fn eval_terms_jw(&self, omega: f64) -> Result<Vec<Complex64>> {
        check_omega(omega)?;
        Ok(self
            .terms
            .iter()
            .map(|t| jw_pow(t.exponent, omega) * t.coeff)
            .collect())
    }
}

/// Text form `coeff*s^exp + ...`, exponents to six decimals.
impl fmt::Display for QuasiPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i == 0 {
                write!(f, "{}*s^{:.6}", t.coeff, t.exponent)?;
            } else if t.coeff < 0.0 {
                write!(f, " - {}*s^{:.6}", -t.coeff, t.exponent)?;
            } else {
                write!(f, " + {}*s^{:.6}", t.coeff, t.exponent)?;
            }
        }
        Ok(())
    }
}

fn check_omega(omega: f64) -> Result<()> {
    finite(omega, "omega")?;
    if omega <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "omega must be positive, got {omega}"
        )));
    }
    Ok(())
}

/// `(jω)^alpha` on the principal branch for any real `alpha`. Integer powers
/// are exact in their real/imaginary split.
pub(crate) fn jw_pow(alpha: f64, omega: f64) -> Complex64 {
    if alpha.fract() == 0.0 && alpha.abs() < 1e9 {
        let k = alpha as i64;
        let m = omega.powi(k as i32);
        match k.rem_euclid(4) {
            0 => Complex64::new(m, 0.0),
            1 => Complex64::new(0.0, m),
            2 => Complex64::new(-m, 0.0),
            _ => Complex64::new(0.0, -m),
        }
    } else {
        Complex64::from_polar(omega.powf(alpha), alpha * FRAC_PI_2)
    }
}

/// `(jω)^alpha` for `alpha ≥ 0`, `ω > 0`.
pub fn s_power_jw(alpha: f64, omega: f64) -> Result<Complex64> {
    finite(alpha, "alpha")?;
    check_omega(omega)?;
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    Ok(jw_pow(alpha, omega))
}

pub fn qp_eval(p: &QuasiPolynomial, omega: f64) -> Result<Complex64> {
    p.eval_jw(omega)
}

/// `G(s) = N(s) / D(s)` with quasipolynomial numerator and denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalTransferFunction {
    num: QuasiPolynomial,
    den: QuasiPolynomial,
}

impl FractionalTransferFunction {
    /// Requires a non-zero denominator whose highest exponent is at least the
    /// numerator's (proper system).
    pub fn new(num: QuasiPolynomial, den: QuasiPolynomial) -> Result<Self> {
        let den_degree = den.degree().ok_or_else(|| {
            Error::InvalidArgument("transfer function denominator is zero".into())
        })?;
        if let Some(num_degree) = num.degree() {
            if num_degree > den_degree + EXPONENT_MERGE_TOL {
                return Err(Error::InvalidArgument(format!(
                    "improper transfer function: numerator order {num_degree} exceeds denominator order {den_degree}"
                )));
            }
        }
        Ok(Self { num, den })
    }

    pub fn num(&self) -> &QuasiPolynomial {
        &self.num
    }

    pub fn den(&self) -> &QuasiPolynomial {
        &self.den
    }

    pub fn is_integer_order(&self) -> bool {
        self.num.is_integer_order() && self.den.is_integer_order()
    }

    pub fn is_strictly_proper(&self) -> bool {
        match (self.num.degree(), self.den.degree()) {
            (None, _) => true,
            (Some(n), Some(d)) => n < d - EXPONENT_MERGE_TOL,
            (Some(_), None) => false,
        }
    }

    /// `N(0)/D(0)` when `D` has a constant term.
    pub fn dc_gain(&self) -> Option<f64> {
        let d0 = self.den.coeff_of(0.0);
        (d0 != 0.0).then(|| self.num.coeff_of(0.0) / d0)
    }

    pub fn eval_jw(&self, omega: f64) -> Result<Complex64> {
        let d = self.den.eval_jw(omega)?;
        if d.norm() < DENOMINATOR_ZERO_TOL {
            return Err(Error::DenominatorZero {
                omega,
                magnitude: d.norm(),
            });
        }
        Ok(self.num.eval_jw(omega)? / d)
    }
}

impl fmt::Display for FractionalTransferFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) / ({})", self.num, self.den)
    }
}

pub fn tf_eval(g: &FractionalTransferFunction, omega: f64) -> Result<Complex64> {
    g.eval_jw(omega)
}

/// `C(s) = Kp + Ki / s^λ` with `λ ∈ (0, 2)`. `λ = 1` is the classical PI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiLambdaController {
    kp: f64,
    ki: f64,
    lambda: f64,
}

impl PiLambdaController {
    pub fn new(kp: f64, ki: f64, lambda: f64) -> Result<Self> {
        finite(kp, "kp")?;
        finite(ki, "ki")?;
        check_lambda(lambda)?;
        Ok(Self { kp, ki, lambda })
    }

    /// Integer-order PI, `λ = 1`.
    pub fn pi(kp: f64, ki: f64) -> Result<Self> {
        Self::new(kp, ki, 1.0)
    }

    pub fn kp(&self) -> f64 {
        self.kp
    }

    pub fn ki(&self) -> f64 {
        self.ki
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eval_jw(&self, omega: f64) -> Result<Complex64> {
        check_omega(omega)?;
        Ok(Complex64::new(self.kp, 0.0) + jw_pow(-self.lambda, omega) * self.ki)
    }
}

impl fmt::Display for PiLambdaController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} + {}/s^{}", self.kp, self.ki, self.lambda)
    }
}

/// Rejects `λ` outside the open interval `(0, 2)`.
pub fn check_lambda(lambda: f64) -> Result<f64> {
    finite(lambda, "lambda")?;
    if lambda <= 0.0 || lambda >= 2.0 {
        return Err(Error::DegenerateLambda(lambda));
    }
    Ok(lambda)
}

pub fn controller_eval(c: &PiLambdaController, omega: f64) -> Result<Complex64> {
    c.eval_jw(omega)
}

/// Closed-loop characteristic quasipolynomial
/// `D(s) s^λ + Kp N(s) s^λ + Ki N(s)` of `C(s) G(s)` under unity feedback.
pub fn focq(g: &FractionalTransferFunction, c: &PiLambdaController) -> QuasiPolynomial {
    let lambda = c.lambda();
    g.den()
        .shift(lambda)
        .add(&g.num().shift(lambda).scale(c.kp()))
        .add(&g.num().scale(c.ki()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn motor_den() -> QuasiPolynomial {
        QuasiPolynomial::from_ascending(&[1.0, 1.367, 0.001025]).unwrap()
    }

    fn motor_plant() -> FractionalTransferFunction {
        FractionalTransferFunction::new(QuasiPolynomial::constant(1.01), motor_den()).unwrap()
    }

    #[test]
    fn construction_merges_and_drops_zeros() {
        let p =
            QuasiPolynomial::new([(1.0, 2.0), (2.0, 0.5), (3.0, 2.0 + 1e-12), (0.0, 1.0)]).unwrap();
        assert_eq!(p.terms().len(), 2);
        assert_eq!(
            p.terms()[0],
            Term {
                coeff: 2.0,
                exponent: 0.5
            }
        );
        assert_eq!(p.terms()[1].coeff, 4.0);

        let cancel = QuasiPolynomial::new([(1.5, 1.2), (-1.5, 1.2)]).unwrap();
        assert!(cancel.is_zero());
        assert!(QuasiPolynomial::new([(1.0, -0.5)]).is_err());
        assert!(QuasiPolynomial::new([(f64::NAN, 1.0)]).is_err());
    }

    #[test]
    fn s_power_examples() {
        let a = s_power_jw(1.0, 2.0).unwrap();
        assert_eq!((a.re, a.im), (0.0, 2.0));
        let b = s_power_jw(0.0, 7.3).unwrap();
        assert_eq!((b.re, b.im), (1.0, 0.0));
        // sqrt(4j) in polar form
        let c = s_power_jw(0.5, 4.0).unwrap();
        let oracle = Complex64::new(0.0, 4.0).sqrt();
        assert_relative_eq!(c.re, oracle.re, epsilon = 1e-12);
        assert_relative_eq!(c.im, oracle.im, epsilon = 1e-12);
        assert_relative_eq!(c.re, 2f64.sqrt(), epsilon = 1e-12);

        assert!(s_power_jw(1.0, 0.0).is_err());
        assert!(s_power_jw(f64::INFINITY, 1.0).is_err());
        assert!(s_power_jw(-1.0, 1.0).is_err());
    }

    #[test]
    fn qp_eval_examples() {
        let one = QuasiPolynomial::constant(1.0);
        assert_eq!(qp_eval(&one, 5.0).unwrap(), Complex64::new(1.0, 0.0));

        // (j)^2 = -1 applied by hand to the motor denominator
        let v = qp_eval(&motor_den(), 1.0).unwrap();
        assert_relative_eq!(v.re, 0.998975, epsilon = 1e-12);
        assert_relative_eq!(v.im, 1.367, epsilon = 1e-12);

        let p = QuasiPolynomial::new([(2.0, 1.2)]).unwrap();
        let v = qp_eval(&p, 1.0).unwrap();
        assert_relative_eq!(v.re, 2.0 * (0.6 * PI).cos(), epsilon = 1e-12);
        assert_relative_eq!(v.im, 2.0 * (0.6 * PI).sin(), epsilon = 1e-12);
    }

    #[test]
    fn tf_eval_examples() {
        let g = motor_plant();
        assert_relative_eq!(tf_eval(&g, 1e-6).unwrap().norm(), 1.01, epsilon = 1e-4);

        let integrator = FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.0),
            QuasiPolynomial::new([(1.0, 1.0)]).unwrap(),
        )
        .unwrap();
        let v = tf_eval(&integrator, 1.0).unwrap();
        assert_eq!((v.re, v.im), (0.0, -1.0));

        let w = 10.0;
        let s = Complex64::new(0.0, w);
        let oracle = 1.01 / (0.001025 * s * s + 1.367 * s + 1.0);
        let v = tf_eval(&g, w).unwrap();
        assert_relative_eq!(v.re, oracle.re, max_relative = 1e-12);
        assert_relative_eq!(v.im, oracle.im, max_relative = 1e-12);
    }

    #[test]
    fn tf_rejects_zero_and_improper() {
        let den = QuasiPolynomial::from_ascending(&[1.0, 0.0, 1.0]).unwrap();
        let g = FractionalTransferFunction::new(QuasiPolynomial::constant(1.0), den).unwrap();
        assert!(matches!(
            tf_eval(&g, 1.0),
            Err(Error::DenominatorZero { .. })
        ));

        let improper = FractionalTransferFunction::new(
            QuasiPolynomial::from_ascending(&[0.0, 0.0, 1.0]).unwrap(),
            QuasiPolynomial::from_ascending(&[1.0, 1.0]).unwrap(),
        );
        assert!(improper.is_err());
        assert!(FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.0),
            QuasiPolynomial::zero()
        )
        .is_err());
    }

    #[test]
    fn controller_eval_examples() {
        let c = PiLambdaController::new(1.0, 0.0, 0.7).unwrap();
        assert_eq!(controller_eval(&c, 3.0).unwrap(), Complex64::new(1.0, 0.0));

        let c = PiLambdaController::pi(0.0, 1.0).unwrap();
        let v = controller_eval(&c, 2.0).unwrap();
        assert_eq!((v.re, v.im), (0.0, -0.5));

        let c = PiLambdaController::new(2.5732, 1.45204, 1.2).unwrap();
        let v = controller_eval(&c, 1.0).unwrap();
        assert_relative_eq!(v.re, 2.5732 + 1.45204 * (0.6 * PI).cos(), epsilon = 1e-12);
        assert_relative_eq!(v.im, -1.45204 * (0.6 * PI).sin(), epsilon = 1e-12);
    }

    #[test]
    fn controller_rejects_degenerate_lambda() {
        for lambda in [0.0, 2.0, -0.3, 2.5, f64::NAN] {
            assert!(
                PiLambdaController::new(1.0, 1.0, lambda).is_err(),
                "{lambda}"
            );
        }
    }

    #[test]
    fn focq_examples() {
        let g = FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.0),
            QuasiPolynomial::from_ascending(&[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let p = focq(&g, &PiLambdaController::pi(1.0, 1.0).unwrap());
        assert_eq!(
            p,
            QuasiPolynomial::from_ascending(&[1.0, 2.0, 1.0]).unwrap()
        );

        // Symbolic expansion with the motor coefficients
        let c = PiLambdaController::new(2.5732, 1.45204, 1.2).unwrap();
        let p = focq(&motor_plant(), &c);
        let expected = [
            (1.01 * 1.45204, 0.0),
            (1.0 + 1.01 * 2.5732, 1.2),
            (1.367, 2.2),
            (0.001025, 3.2),
        ];
        assert_eq!(p.terms().len(), 4);
        for (t, (coeff, exponent)) in p.terms().iter().zip(expected) {
            assert_relative_eq!(t.coeff, coeff, max_relative = 1e-14);
            assert_relative_eq!(t.exponent, exponent, epsilon = 1e-12);
        }

        let zero = PiLambdaController::new(0.0, 0.0, 1.2).unwrap();
        assert_eq!(focq(&motor_plant(), &zero), motor_den().shift(1.2));
    }

    #[test]
    fn display_format() {
        let p = QuasiPolynomial::new([(1.0, 0.0), (-2.5, 1.2)]).unwrap();
        assert_eq!(p.to_string(), "1*s^0.000000 - 2.5*s^1.200000");
        assert_eq!(QuasiPolynomial::zero().to_string(), "0");
    }

    fn arb_qp() -> impl Strategy<Value = QuasiPolynomial> {
        prop::collection::vec((-10.0f64..10.0, 0.0f64..4.0), 0..6)
            .prop_map(|terms| QuasiPolynomial::new(terms).unwrap())
    }

    proptest! {
        #[test]
        fn power_modulus_and_argument(alpha in 0.0f64..5.0, omega in 1e-3f64..1e3) {
            let v = s_power_jw(alpha, omega).unwrap();
            let modulus = omega.powf(alpha);
            prop_assert!((v.norm() - modulus).abs() <= 1e-12 * modulus);
            let expected = (alpha * FRAC_PI_2 + PI).rem_euclid(2.0 * PI) - PI;
            let diff = (v.arg() - expected).abs();
            prop_assert!(diff.min(2.0 * PI - diff) <= 1e-12 * (1.0 + alpha));
        }

        #[test]
        fn eval_is_linear(p in arb_qp(), q in arb_qp(), omega in 1e-2f64..1e2) {
            let lhs = p.add(&q).eval_jw(omega).unwrap();
            let rhs = p.eval_jw(omega).unwrap() + q.eval_jw(omega).unwrap();
            let scale = 1.0 + p.eval_terms_jw(omega).unwrap().iter()
                .chain(q.eval_terms_jw(omega).unwrap().iter())
                .map(|t| t.norm()).fold(0.0, f64::max);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale);
        }

        #[test]
        fn integer_exponents_match_polynomial(
            coeffs in prop::collection::vec(-5.0f64..5.0, 1..7),
            omega in 1e-2f64..1e2,
        ) {
            let p = QuasiPolynomial::from_ascending(&coeffs).unwrap();
            let s = Complex64::new(0.0, omega);
            let horner = coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c);
            let v = p.eval_jw(omega).unwrap();
            let scale: f64 = coeffs.iter().enumerate().map(|(k, c)| c.abs() * omega.powi(k as i32)).sum();
            prop_assert!((v - horner).norm() <= 1e-12 * (scale + 1.0));
        }

        #[test]
        fn focq_lambda_one_is_classical(
            num in prop::collection::vec(-5.0f64..5.0, 1..3),
            den in prop::collection::vec(0.1f64..5.0, 3..4),
            kp in -5.0f64..5.0,
            ki in -5.0f64..5.0,
        ) {
            let n = QuasiPolynomial::from_ascending(&num).unwrap();
            let d = QuasiPolynomial::from_ascending(&den).unwrap();
            let g = FractionalTransferFunction::new(n.clone(), d.clone()).unwrap();
            let p = focq(&g, &PiLambdaController::pi(kp, ki).unwrap());
            // D s + Kp N s + Ki N, coefficient by coefficient
            let mut classical = vec![0.0; den.len() + 1];
            for (k, c) in den.iter().enumerate() { classical[k + 1] += c; }
            for (k, c) in num.iter().enumerate() {
                classical[k + 1] += kp * c;
                classical[k] += ki * c;
            }
            prop_assert_eq!(p, QuasiPolynomial::from_ascending(&classical).unwrap());
        }
    }
}
