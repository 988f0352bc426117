//! Stability boundary locus of the PI^λ loop in the `(Kp, Ki)` plane.
//!
//! For each `ω > 0` the pair `(Kp, Ki)` that places a closed-loop root at
//! `s = jω` solves `D(jω)(jω)^λ + Kp N(jω)(jω)^λ + Ki N(jω) = 0`, split into
//! its real and imaginary parts. Together with the `Ki = 0` line (root at
//! `s = 0`) this curve bounds the stabilizing region for the chosen `λ`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{check_increasing, log_grid};
use crate::matignon::{closed_loop_verdict, DEFAULT_MAX_DENOMINATOR};
use crate::quasipoly::{check_lambda, jw_pow, FractionalTransferFunction, PiLambdaController};

pub const DEFAULT_OMEGA_MIN: f64 = 1e-3;
pub const DEFAULT_OMEGA_MAX: f64 = 1e3;
pub const DEFAULT_OMEGA_POINTS: usize = 2000;

/// Relative determinant size below which the boundary system is singular.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Back-substitution residual bound, relative to `1 + max|term|`.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Default locus frequency grid: 2000 log-spaced nodes on `[1e-3, 1e3]` rad/s.
pub fn default_omega_grid() -> Vec<f64> {
    log_grid(DEFAULT_OMEGA_MIN, DEFAULT_OMEGA_MAX, DEFAULT_OMEGA_POINTS)
        .expect("default grid is valid")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocusPoint {
    pub omega: f64,
    pub kp: f64,
    pub ki: f64,
}

/// Solves the real/imaginary boundary equations at one frequency.
pub fn locus_point(g: &FractionalTransferFunction, lambda: f64, omega: f64) -> Result<LocusPoint> {
    check_lambda(lambda)?;
    let z = jw_pow(lambda, omega);
    let n = g.num().eval_jw(omega)?;
    let d = g.den().eval_jw(omega)?;

    // P(jω) = a + kp·bp + ki·bi
    let a = d * z;
    let bp = n * z;
    let bi = n;
    let det = bp.re * bi.im - bi.re * bp.im;
    let scale = bp.norm() * bi.norm();
    if !(scale > 0.0) || det.abs() < SINGULAR_TOL * scale {
        return Err(Error::SingularSystem { omega, det });
    }
    let (r1, r2) = (-a.re, -a.im);
    let kp = (r1 * bi.im - bi.re * r2) / det;
    let ki = (bp.re * r2 - bp.im * r1) / det;

    let residual = relative_residual(g, lambda, omega, kp, ki);
    if !(residual < RESIDUAL_TOL) {
        return Err(Error::ResidualCheck { omega, residual });
    }
    Ok(LocusPoint { omega, kp, ki })
}

/// `|P(jω)| / (1 + max|term|)` for the characteristic quasipolynomial with
/// gains `(kp, ki)`, terms taken before any merging.
pub fn relative_residual(
    g: &FractionalTransferFunction,
    lambda: f64,
    omega: f64,
    kp: f64,
    ki: f64,
) -> f64 {
    let mut total = num_complex::Complex64::new(0.0, 0.0);
    let mut largest = 0.0f64;
    let mut push = |v: num_complex::Complex64| {
        total += v;
        largest = largest.max(v.norm());
    };
    for t in g.den().terms() {
        push(jw_pow(t.exponent + lambda, omega) * t.coeff);
    }
    for t in g.num().terms() {
        push(jw_pow(t.exponent + lambda, omega) * (kp * t.coeff));
        push(jw_pow(t.exponent, omega) * (ki * t.coeff));
    }
    total.norm() / (1.0 + largest)
}

/// Boundary points over a frequency grid, with the singular nodes recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct LocusCurve {
    pub lambda: f64,
    pub points: Vec<LocusPoint>,
    pub gaps: Vec<f64>,
}

pub fn locus_curve(
    g: &FractionalTransferFunction,
    lambda: f64,
    omega_grid: &[f64],
) -> Result<LocusCurve> {
    check_lambda(lambda)?;
    check_increasing(omega_grid)?;
    let solved: Vec<Result<LocusPoint>> = omega_grid
        .par_iter()
        .map(|&omega| locus_point(g, lambda, omega))
        .collect();
    let mut points = Vec::with_capacity(solved.len());
    let mut gaps = Vec::new();
    for (omega, r) in omega_grid.iter().zip(solved) {
        match r {
            Ok(p) => points.push(p),
            Err(Error::SingularSystem { .. }) => gaps.push(*omega),
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyCurve);
    }
    Ok(LocusCurve {
        lambda,
        points,
        gaps,
    })
}

/// Verdict for a single `(Kp, Ki)` query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Stable,
    Unstable,
    /// Root at the origin or on the sector edge within the dead band.
    Boundary,
}

impl Classification {
    pub fn label(self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
            Classification::Boundary => "boundary",
        }
    }
}

/// Decides stability of the loop with gains `(kp, ki)` and order `lambda`
/// through the commensurate root test.
pub fn classify_point(
    g: &FractionalTransferFunction,
    lambda: f64,
    kp: f64,
    ki: f64,
    max_denominator: u32,
) -> Result<Classification> {
    let c = PiLambdaController::new(kp, ki, lambda)?;
    let v = closed_loop_verdict(g, &c, max_denominator)?;
    Ok(if v.is_boundary() {
        Classification::Boundary
    } else if v.stable {
        Classification::Stable
    } else {
        Classification::Unstable
    })
}

/// Axis-aligned window in the `(Kp, Ki)` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainWindow {
    pub kp_min: f64,
    pub kp_max: f64,
    pub ki_min: f64,
    pub ki_max: f64,
}

impl GainWindow {
    pub fn width(&self) -> f64 {
        self.kp_max - self.kp_min
    }

    pub fn height(&self) -> f64 {
        self.ki_max - self.ki_min
    }

    pub fn intersect(&self, other: &GainWindow) -> Option<GainWindow> {
        let w = GainWindow {
            kp_min: self.kp_min.max(other.kp_min),
            kp_max: self.kp_max.min(other.kp_max),
            ki_min: self.ki_min.max(other.ki_min),
            ki_max: self.ki_max.min(other.ki_max),
        };
        (w.width() > 0.0 && w.height() > 0.0).then_some(w)
    }
}

/// Stabilizing region for one `λ`: the locus curve closed by the `Ki = 0`
/// real-root line.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRegion {
    pub lambda: f64,
    pub boundary: Vec<LocusPoint>,
    pub gaps: Vec<f64>,
    pub real_root_line: bool,
    pub max_denominator: u32,
    pub interior_check: Option<((f64, f64), Classification)>,
    pub exterior_check: Option<((f64, f64), Classification)>,
}

impl StabilityRegion {
    pub fn from_curve(curve: LocusCurve, max_denominator: u32) -> Self {
        Self {
            lambda: curve.lambda,
            boundary: curve.points,
            gaps: curve.gaps,
            real_root_line: true,
            max_denominator,
            interior_check: None,
            exterior_check: None,
        }
    }

    /// Closed polygon: the curve, then down to `Ki = 0` and back along it.
    pub fn polygon(&self) -> Vec<(f64, f64)> {
        let mut poly: Vec<(f64, f64)> = self.boundary.iter().map(|p| (p.kp, p.ki)).collect();
        if self.real_root_line {
            if let (Some(first), Some(last)) = (self.boundary.first(), self.boundary.last()) {
                poly.push((last.kp, 0.0));
                poly.push((first.kp, 0.0));
            }
        }
        poly
    }

    pub fn bounding_box(&self) -> GainWindow {
        let poly = self.polygon();
        let mut w = GainWindow {
            kp_min: f64::INFINITY,
            kp_max: f64::NEG_INFINITY,
            ki_min: f64::INFINITY,
            ki_max: f64::NEG_INFINITY,
        };
        for (kp, ki) in poly {
            w.kp_min = w.kp_min.min(kp);
            w.kp_max = w.kp_max.max(kp);
            w.ki_min = w.ki_min.min(ki);
            w.ki_max = w.ki_max.max(ki);
        }
        w
    }

    /// Point-in-polygon test on the sampled curve. Only a sampling proposal;
    /// verdicts come from [`StabilityRegion::classify`].
    pub fn proposes(&self, kp: f64, ki: f64) -> bool {
        let poly = self.polygon();
        let mut inside = false;
        let n = poly.len();
        if n < 3 {
            return false;
        }
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = poly[i];
            let (xj, yj) = poly[j];
            if (yi > ki) != (yj > ki) && kp < (xj - xi) * (ki - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Distance from `(kp, ki)` to the polygon outline, with the axes scaled
    /// by `window`'s width and height.
    pub fn normalized_boundary_distance(&self, kp: f64, ki: f64, window: &GainWindow) -> f64 {
        let (sx, sy) = (window.width(), window.height());
        let poly = self.polygon();
        let p = (kp / sx, ki / sy);
        let mut best = f64::INFINITY;
        for i in 0..poly.len() {
            let a = (poly[i].0 / sx, poly[i].1 / sy);
            let b = {
                let q = poly[(i + 1) % poly.len()];
                (q.0 / sx, q.1 / sy)
            };
            best = best.min(segment_distance(p, a, b));
        }
        best
    }

    /// `Some(true)` inside, `Some(false)` outside, `None` within `buffer`
    /// (normalized to `window`) of the outline.
    pub fn buffered_membership(
        &self,
        kp: f64,
        ki: f64,
        window: &GainWindow,
        buffer: f64,
    ) -> Option<bool> {
        (self.normalized_boundary_distance(kp, ki, window) > buffer).then(|| self.proposes(kp, ki))
    }

    pub fn classify(
        &self,
        g: &FractionalTransferFunction,
        kp: f64,
        ki: f64,
    ) -> Result<Classification> {
        classify_point(g, self.lambda, kp, ki, self.max_denominator)
    }

    /// `lambda, omega, kp, ki` rows (header included).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_regions_csv(out, std::slice::from_ref(self))
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

pub fn write_regions_csv<W: Write>(out: W, regions: &[StabilityRegion]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lambda", "omega", "kp", "ki"])?;
    for r in regions {
        for p in &r.boundary {
            w.write_record([
                r.lambda.to_string(),
                p.omega.to_string(),
                p.kp.to_string(),
                p.ki.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Builds the region for one `λ` and checks one interior and one exterior
/// probe against the root test.
pub fn stability_region(
    g: &FractionalTransferFunction,
    lambda: f64,
    omega_grid: &[f64],
    max_denominator: u32,
) -> Result<StabilityRegion> {
    let curve = locus_curve(g, lambda, omega_grid)?;
    let mut region = StabilityRegion::from_curve(curve, max_denominator);

    // interior probe: halfway down from a curve node, scanning outward from the middle
    let n = region.boundary.len();
    let mid = n / 2;
    let order = (0..n).map(|k| {
        if k % 2 == 0 {
            mid + k / 2
        } else {
            mid.wrapping_sub(k / 2 + 1)
        }
    });
    let interior = order
        .filter(|&i| i < n)
        .map(|i| region.boundary[i])
        .filter(|p| p.ki > 0.0)
        .map(|p| (p.kp, 0.5 * p.ki))
        .find(|&(kp, ki)| region.proposes(kp, ki));
    if let Some((kp, ki)) = interior {
        region.interior_check = Some(((kp, ki), region.classify(g, kp, ki)?));
    }

    let mp = region.boundary[mid];
    let exterior = (mp.kp, -0.5 * mp.ki.abs().max(1.0));
    if !region.proposes(exterior.0, exterior.1) {
        region.exterior_check = Some((exterior, region.classify(g, exterior.0, exterior.1)?));
    }
    Ok(region)
}

/// Regions for every `λ`, in input order. A failure for one `λ` does not
/// stop the others.
pub fn global_regions(
    g: &FractionalTransferFunction,
    lambdas: &[f64],
    omega_grid: &[f64],
    max_denominator: u32,
) -> Vec<Result<StabilityRegion>> {
    lambdas
        .par_iter()
        .map(|&lambda| stability_region(g, lambda, omega_grid, max_denominator))
        .collect()
}

/// [`global_regions`] with the default grid and commensurate bound.
pub fn global_regions_default(
    g: &FractionalTransferFunction,
    lambdas: &[f64],
) -> Vec<Result<StabilityRegion>> {
    global_regions(g, lambdas, &default_omega_grid(), DEFAULT_MAX_DENOMINATOR)
}
