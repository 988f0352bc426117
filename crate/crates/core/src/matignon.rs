//! Stability of commensurate-order characteristic quasipolynomials.
//!
//! A quasipolynomial whose exponents are all integer multiples of a common
//! `q ∈ (0, 1]` becomes an ordinary polynomial in `w = s^q`. The system is
//! stable iff every root `w` satisfies `|arg w| > qπ/2`.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quasipoly::{focq, FractionalTransferFunction, PiLambdaController, QuasiPolynomial};

/// Default bound on the denominator of the commensurate order `q = g/m`.
pub const DEFAULT_MAX_DENOMINATOR: u32 = 100;

/// Exponents must sit this close to a multiple of `1/m`.
pub const COMMENSURATE_TOL: f64 = 1e-9;

/// Roots whose argument margin is this close to zero are reported as boundary.
pub const BOUNDARY_BAND: f64 = 1e-6;

/// QR sweeps allowed per eigenvalue before switching to simultaneous iteration.
const SCHUR_MAX_ITER: usize = 200;

/// Required root residual, relative to `1 + max|c_k|·|w|^N`.
pub const ROOT_RESIDUAL_TOL: f64 = 1e-8;

/// `Σ c_k w^k` with `w = s^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommensuratePolynomial {
    q: f64,
    coeffs: Vec<f64>,
}

impl CommensuratePolynomial {
    /// `coeffs` are ascending in powers of `w`; the last one must be nonzero.
    pub fn new(q: f64, coeffs: Vec<f64>) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "commensurate order q = {q} outside (0, 1]"
            )));
        }
        match coeffs.last() {
            Some(&c) if c != 0.0 && c.is_finite() => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "commensurate polynomial needs a nonzero leading coefficient".into(),
                ))
            }
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("commensurate coefficient"));
        }
        Ok(Self { q, coeffs })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, w: Complex64) -> Complex64 {
        horner(&self.coeffs, w)
    }
}

fn horner(coeffs: &[f64], w: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * w + c)
}

fn horner_with_derivative(coeffs: &[f64], w: Complex64) -> (Complex64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    coeffs
        .iter()
        .rev()
        .fold((zero, zero), |(p, dp), &c| (p * w + c, dp * w + p))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Rewrites `p` as a polynomial in `w = s^q`, choosing the largest `q ≤ 1`
/// that puts every exponent on an integer multiple of `q`, with the
/// denominator of `q` at most `max_denominator`.
pub fn to_commensurate(
    p: &QuasiPolynomial,
    max_denominator: u32,
) -> Result<CommensuratePolynomial> {
    if p.is_zero() {
        return Err(Error::InvalidArgument(
            "cannot certify the zero quasipolynomial".into(),
        ));
    }
    let exponents: Vec<f64> = p.terms().iter().map(|t| t.exponent).collect();
    let fits = |m: u32| -> Option<Vec<u64>> {
        exponents
            .iter()
            .map(|&e| {
                let k = (e * m as f64).round();
                ((e - k / m as f64).abs() < COMMENSURATE_TOL).then_some(k as u64)
            })
            .collect()
    };
    let (m, ks) = (1..=max_denominator.max(1))
        .find_map(|m| fits(m).map(|ks| (m as u64, ks)))
        .ok_or_else(|| {
            let worst = exponents
                .iter()
                .copied()
                .find(|&e| {
                    (1..=max_denominator.max(1)).all(|m| {
                        let k = (e * m as f64).round();
                        (e - k / m as f64).abs() >= COMMENSURATE_TOL
                    })
                })
                .unwrap_or(exponents[0]);
            Error::CommensurateApproximation {
                exponent: worst,
                max_denominator,
            }
        })?;

    let g = ks.iter().copied().fold(0, gcd);
    // largest divisor of g not exceeding m keeps q ≤ 1
    let step = if g == 0 {
        m
    } else {
        (1..=g.min(m)).rev().find(|d| g % d == 0).unwrap_or(1)
    };
    let q = step as f64 / m as f64;
    let degree = (ks.iter().copied().max().unwrap_or(0) / step) as usize;
    let mut coeffs = vec![0.0; degree + 1];
    for (t, k) in p.terms().iter().zip(&ks) {
        coeffs[(k / step) as usize] += t.coeff;
    }
    CommensuratePolynomial::new(q, coeffs)
}

/// All roots of the polynomial in `w`, from the eigenvalues of the companion
/// matrix followed by Newton polishing. Exact zero roots (vanishing low-order
/// coefficients) are returned as `0`.
pub fn poly_roots(p: &CommensuratePolynomial) -> Result<Vec<Complex64>> {
    let coeffs = p.coeffs();
    let n_total = p.degree();
    if n_total == 0 {
        return Err(Error::InvalidArgument(
            "polynomial of degree 0 has no roots".into(),
        ));
    }
    let zeros = coeffs.iter().take_while(|&&c| c == 0.0).count();
    let reduced = &coeffs[zeros..];
    let n = reduced.len() - 1;

    let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
    if n == 1 {
        roots.push(Complex64::new(-reduced[0] / reduced[1], 0.0));
    } else if n > 1 {
        let lead = reduced[n];
        let companion = DMatrix::from_fn(n, n, |i, j| {
            if j == n - 1 {
                -reduced[i] / lead
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        let found: Vec<Complex64> =
            match Schur::try_new(companion, f64::EPSILON, SCHUR_MAX_ITER * n) {
                Some(schur) => schur
                    .complex_eigenvalues()
                    .iter()
                    .map(|w| Complex64::new(w.re, w.im))
                    .collect(),
                None => aberth(reduced),
            };
        roots.extend(found.into_iter().map(|w| polish(reduced, w)));
    }

    let max_coeff = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for r in &roots {
        let residual = p.eval(*r).norm() / (1.0 + max_coeff * r.norm().powi(n_total as i32));
        if !(residual < ROOT_RESIDUAL_TOL) {
            return Err(Error::ConvergenceFailure(residual));
        }
    }
    Ok(roots)
}

/// Aberth-Ehrlich simultaneous iteration, started on a circle of the
/// Cauchy-bound radius.
fn aberth(coeffs: &[f64]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    let lead = coeffs[n].abs();
    let radius = 1.0 + coeffs[..n].iter().fold(0.0f64, |m, c| m.max(c.abs())) / lead;
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            Complex64::from_polar(
                radius,
                2.0 * std::f64::consts::PI * (k as f64 + 0.25) / n as f64,
            )
        })
        .collect();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..n {
            let (p, dp) = horner_with_derivative(coeffs, z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| 1.0 / (z[i] - z[j]))
                .sum();
            let step = ratio / (1.0 - ratio * repulsion);
            if step.is_finite() {
                z[i] -= step;
                moved = moved.max(step.norm() / (1.0 + z[i].norm()));
            }
        }
        if moved < 1e-15 {
            break;
        }
    }
    z
}

fn polish(coeffs: &[f64], mut w: Complex64) -> Complex64 {
    let mut best = horner(coeffs, w).norm();
    for _ in 0..4 {
        let (p, dp) = horner_with_derivative(coeffs, w);
        if dp.norm() == 0.0 || !best.is_finite() || best == 0.0 {
            break;
        }
        let next = w - p / dp;
        let r = horner(coeffs, next).norm();
        if !(r < best) {
            break;
        }
        w = next;
        best = r;
    }
    w
}

/// Result of the sector test on the `w`-plane roots.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub q: f64,
    pub roots: Vec<Complex64>,
    /// `min(|arg w| − qπ/2)` over the roots; zero roots contribute `0`.
    pub min_arg_margin: f64,
    pub zero_roots: usize,
}

impl StabilityVerdict {
    /// Marginal verdicts: a root at the origin or within the dead band of the
    /// sector edge.
    pub fn is_boundary(&self) -> bool {
        self.zero_roots > 0 || self.min_arg_margin.abs() <= BOUNDARY_BAND
    }

    /// Whether an individual root lies strictly inside the stable sector.
    pub fn root_is_stable(&self, w: Complex64) -> bool {
        arg_margin(w, self.q) > 0.0
    }

    /// Would the same roots still be stable for commensurate order `q`?
    pub fn stable_at(&self, q: f64) -> bool {
        self.roots.iter().all(|&w| arg_margin(w, q) > 0.0)
    }

    /// Writes `re, im, arg_deg, stable_flag` rows after a `# q=...` line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "# q={}", self.q)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["re", "im", "arg_deg", "stable_flag"])?;
        for r in &self.roots {
            w.write_record([
                r.re.to_string(),
                r.im.to_string(),
                r.arg().to_degrees().to_string(),
                u8::from(self.root_is_stable(*r)).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn arg_margin(w: Complex64, q: f64) -> f64 {
    if w.norm() == 0.0 {
        0.0
    } else {
        w.arg().abs() - q * FRAC_PI_2
    }
}

/// Matignon sector test: stable iff every root has `|arg w| > qπ/2`.
pub fn is_stable(p: &CommensuratePolynomial) -> Result<StabilityVerdict> {
    let roots = poly_roots(p)?;
    let zero_roots = roots.iter().filter(|w| w.norm() == 0.0).count();
    let min_arg_margin = roots
        .iter()
        .map(|&w| arg_margin(w, p.q()))
        .fold(f64::INFINITY, f64::min);
    Ok(StabilityVerdict {
        stable: min_arg_margin > 0.0,
        q: p.q(),
        roots,
        min_arg_margin,
        zero_roots,
    })
}

/// Certifies the unity-feedback loop `C(s) G(s)` through its characteristic
/// quasipolynomial.
pub fn closed_loop_verdict(
    g: &FractionalTransferFunction,
    c: &PiLambdaController,
    max_denominator: u32,
) -> Result<StabilityVerdict> {
    is_stable(&to_commensurate(&focq(g, c), max_denominator)?)
}

/// Half-angle of the unstable sector, `qπ/2`, in degrees.
pub fn sector_half_angle_deg(q: f64) -> f64 {
    q * 90.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quasipoly::QuasiPolynomial;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn motor_plant() -> FractionalTransferFunction {
        FractionalTransferFunction::new(
            QuasiPolynomial::constant(1.01),
            QuasiPolynomial::from_ascending(&[1.0, 1.367, 0.001025]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn simultaneous_iteration_fallback() {
        // (w - 1)(w + 2)(w² + 2w + 5)
        let coeffs = [-10.0, 1.0, 5.0, 3.0, 1.0];
        let mut roots = aberth(&coeffs);
        roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let want = [
            Complex64::new(-2.0, 0.0),
            Complex64::new(-1.0, -2.0),
            Complex64::new(-1.0, 2.0),
            Complex64::new(1.0, 0.0),
        ];
        for (r, w) in roots.iter().zip(want) {
            assert!((r - w).norm() < 1e-10, "{r} vs {w}");
        }
    }

    #[test]
    fn commensurate_tenths() {
        let p = QuasiPolynomial::new([(1.0, 0.0), (2.0, 1.2), (3.0, 2.2), (4.0, 3.2)]).unwrap();
        let c = to_commensurate(&p, 100).unwrap();
        assert_relative_eq!(c.q(), 0.2);
        assert_eq!(c.degree(), 16);
        let nonzero: Vec<usize> = c
            .coeffs()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k)
            .collect();
        assert_eq!(nonzero, vec![0, 6, 11, 16]);
    }

    #[test]
    fn commensurate_integer_and_irrational() {
        let p = QuasiPolynomial::from_ascending(&[1.0, 2.0, 1.0]).unwrap();
        let c = to_commensurate(&p, 100).unwrap();
        assert_eq!(c.q(), 1.0);
        assert_eq!(c.coeffs(), &[1.0, 2.0, 1.0]);

        // only even powers: q stays capped at 1
        let p = QuasiPolynomial::new([(1.0, 0.0), (1.0, 2.0)]).unwrap();
        assert_eq!(to_commensurate(&p, 100).unwrap().coeffs(), &[1.0, 0.0, 1.0]);

        let p = QuasiPolynomial::new([(1.0, 0.0), (1.0, 2f64.sqrt())]).unwrap();
        assert!(matches!(
            to_commensurate(&p, 1000),
            Err(Error::CommensurateApproximation { .. })
        ));
    }

    #[test]
    fn roots_of_small_polynomials() {
        let p = CommensuratePolynomial::new(1.0, vec![1.0, 1.0]).unwrap();
        assert_eq!(poly_roots(&p).unwrap(), vec![Complex64::new(-1.0, 0.0)]);

        let p = CommensuratePolynomial::new(1.0, vec![2.0, -2.0, 1.0]).unwrap();
        let mut roots = poly_roots(&p).unwrap();
        roots.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert_relative_eq!(roots[0].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(roots[0].im, -1.0, epsilon = 1e-12);
        assert_relative_eq!(roots[1].im, 1.0, epsilon = 1e-12);

        let with_zero = CommensuratePolynomial::new(1.0, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let roots = poly_roots(&with_zero).unwrap();
        assert_eq!(roots.iter().filter(|r| r.norm() == 0.0).count(), 2);
        assert!(CommensuratePolynomial::new(1.0, vec![1.0, 0.0]).is_err());
        assert!(CommensuratePolynomial::new(1.5, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn degree_sixteen_closed_loop_roots() {
        let c = PiLambdaController::new(2.5732, 1.45204, 1.2).unwrap();
        let p = to_commensurate(&focq(&motor_plant(), &c), 100).unwrap();
        assert_eq!(p.degree(), 16);
        let roots = poly_roots(&p).unwrap();
        assert_eq!(roots.len(), 16);
        let max_c = p.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
        for r in roots {
            let res = p.eval(r).norm() / (1.0 + max_c * r.norm().powi(16));
            assert!(res < 1e-8);
        }
    }

    #[test]
    fn sector_examples() {
        let p = CommensuratePolynomial::new(1.0, vec![1.0, 1.0]).unwrap();
        assert!(is_stable(&p).unwrap().stable);

        // w² − w + 1 has roots at ±60°
        let p = CommensuratePolynomial::new(0.5, vec![1.0, -1.0, 1.0]).unwrap();
        let v = is_stable(&p).unwrap();
        assert!(v.stable);
        assert_relative_eq!(v.min_arg_margin, PI / 3.0 - PI / 4.0, epsilon = 1e-12);
        let p = CommensuratePolynomial::new(1.0, vec![1.0, -1.0, 1.0]).unwrap();
        assert!(!is_stable(&p).unwrap().stable);

        let p = CommensuratePolynomial::new(1.0, vec![0.0, 1.0]).unwrap();
        let v = is_stable(&p).unwrap();
        assert!(!v.stable && v.is_boundary());
    }

    #[test]
    fn reference_loops_are_stable() {
        let fo = PiLambdaController::new(2.5732, 1.45204, 1.2).unwrap();
        let v = closed_loop_verdict(&motor_plant(), &fo, 100).unwrap();
        assert!(v.stable);
        assert_relative_eq!(v.q, 0.2);

        let io = PiLambdaController::pi(1.431, 0.72).unwrap();
        let v = closed_loop_verdict(&motor_plant(), &io, 100).unwrap();
        assert!(v.stable);
        assert_eq!(v.roots.len(), 3);
    }

    #[test]
    fn pole_csv_layout() {
        let p = CommensuratePolynomial::new(1.0, vec![2.0, -2.0, 1.0]).unwrap();
        let v = is_stable(&p).unwrap();
        let mut buf = Vec::new();
        v.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# q=1"));
        assert_eq!(lines.next(), Some("re,im,arg_deg,stable_flag"));
        assert_eq!(lines.count(), 2);
    }

    /// Expands `Π (w − r)` into ascending real coefficients.
    fn expand(roots: &[Complex64]) -> Vec<f64> {
        let mut c = vec![Complex64::new(1.0, 0.0)];
        for &r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
            for (k, &ck) in c.iter().enumerate() {
                next[k + 1] += ck;
                next[k] -= ck * r;
            }
            c = next;
        }
        c.iter().map(|z| z.re).collect()
    }

    fn arb_roots() -> impl Strategy<Value = Vec<Complex64>> {
        let mag = prop_oneof![-3.0f64..-0.05, 0.05f64..3.0];
        prop::collection::vec((mag, prop::bool::ANY, 0.05f64..3.0), 1..5).prop_map(|specs| {
            let mut roots = Vec::new();
            for (re, pair, im) in specs {
                if pair {
                    roots.push(Complex64::new(re, im));
                    roots.push(Complex64::new(re, -im));
                } else {
                    roots.push(Complex64::new(re, 0.0));
                }
            }
            roots
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn classical_agreement(roots in arb_roots()) {
            let p = CommensuratePolynomial::new(1.0, expand(&roots)).unwrap();
            let v = is_stable(&p).unwrap();
            let oracle = roots.iter().all(|r| r.re < 0.0);
            prop_assert_eq!(v.stable, oracle);
        }

        #[test]
        fn roots_pair_under_conjugation(roots in arb_roots()) {
            let p = CommensuratePolynomial::new(1.0, expand(&roots)).unwrap();
            let found = poly_roots(&p).unwrap();
            for r in &found {
                let partner = found.iter().map(|s| (s - r.conj()).norm()).fold(f64::INFINITY, f64::min);
                prop_assert!(partner < 1e-8 * (1.0 + r.norm()));
            }
        }

        #[test]
        fn smaller_q_keeps_stability(roots in arb_roots(), q in 0.05f64..1.0, shrink in 0.0f64..1.0) {
            let p = CommensuratePolynomial::new(q, expand(&roots)).unwrap();
            let v = is_stable(&p).unwrap();
            if v.stable {
                prop_assert!(v.stable_at(q * shrink.max(1e-3)));
            }
        }
    }
}
