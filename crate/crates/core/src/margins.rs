//! Open-loop frequency response, gain/phase margins, and margin-targeted
//! controller search inside the stability regions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{check_increasing, log_grid};
use crate::locus::{
    classify_point, default_omega_grid, stability_region, Classification, GainWindow,
    StabilityRegion,
};
use crate::matignon::DEFAULT_MAX_DENOMINATOR;
use crate::quasipoly::{check_lambda, jw_pow, FractionalTransferFunction, PiLambdaController};

pub const DEFAULT_MARGIN_OMEGA_MIN: f64 = 1e-4;
pub const DEFAULT_MARGIN_OMEGA_MAX: f64 = 1e4;
pub const DEFAULT_MARGIN_NODES: usize = 4000;

/// Crossover frequencies are bisected until `(hi − lo)/lo` drops below this.
pub const BISECTION_REL_TOL: f64 = 1e-10;

/// `C(jω) G(jω)`.
pub fn open_loop_response(
    c: &PiLambdaController,
    g: &FractionalTransferFunction,
    omega: f64,
) -> Result<Complex64> {
    Ok(c.eval_jw(omega)? * g.eval_jw(omega)?)
}

/// Gain and phase margins; absent crossovers leave the margin as `None`
/// (infinite).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MarginReport {
    pub gain_margin_db: Option<f64>,
    pub phase_margin_deg: Option<f64>,
    pub phase_crossover_omega: Option<f64>,
    pub gain_crossover_omega: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |x| x.to_string())
}

impl MarginReport {
    pub const CSV_HEADER: [&'static str; 4] = [
        "gain_margin_db",
        "phase_margin_deg",
        "phase_crossover_omega",
        "gain_crossover_omega",
    ];

    pub fn csv_fields(&self) -> [String; 4] {
        [
            opt(self.gain_margin_db),
            opt(self.phase_margin_deg),
            opt(self.phase_crossover_omega),
            opt(self.gain_crossover_omega),
        ]
    }
}

impl fmt::Display for MarginReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gain_margin_db = {}", opt(self.gain_margin_db))?;
        writeln!(f, "phase_margin_deg = {}", opt(self.phase_margin_deg))?;
        writeln!(
            f,
            "phase_crossover_omega = {}",
            opt(self.phase_crossover_omega)
        )?;
        write!(
            f,
            "gain_crossover_omega = {}",
            opt(self.gain_crossover_omega)
        )
    }
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Continuous phase along the samples, starting from the principal value.
pub fn unwrapped_phase(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut prev_arg = 0.0;
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        let a = v.arg();
        acc = if i == 0 {
            a
        } else {
            acc + wrap_pi(a - prev_arg)
        };
        prev_arg = a;
        out.push(acc);
    }
    out
}

fn bisect<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, f_lo: f64) -> Result<f64> {
    let mut s_lo = f_lo.signum();
    while (hi - lo) / lo > BISECTION_REL_TOL {
        let mid = (lo * hi).sqrt();
        let v = f(mid)?;
        if v == 0.0 {
            return Ok(mid);
        }
        if v.signum() == s_lo {
            lo = mid;
            s_lo = v.signum();
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Margins of an arbitrary loop `L(jω)` given its samples on `grid` and an
/// evaluator for refinement. With several crossovers the smallest margin
/// wins.
pub fn margins_from_samples<F>(grid: &[f64], values: &[Complex64], eval: F) -> Result<MarginReport>
where
    F: Fn(f64) -> Result<Complex64>,
{
    check_increasing(grid)?;
    let phase = unwrapped_phase(values);
    let mut report = MarginReport::default();

    for i in 0..grid.len().saturating_sub(1) {
        let (a, b) = (values[i], values[i + 1]);

        // phase crossover: L real and negative
        if (a.im <= 0.0) != (b.im <= 0.0) || a.im == 0.0 {
            let omega = if a.im == 0.0 {
                grid[i]
            } else {
                bisect(|w| Ok(eval(w)?.im), grid[i], grid[i + 1], a.im)?
            };
            let l = eval(omega)?;
            if l.re < 0.0 {
                let gm = -20.0 * l.norm().log10();
                if report.gain_margin_db.is_none_or(|cur| gm < cur) {
                    report.gain_margin_db = Some(gm);
                    report.phase_crossover_omega = Some(omega);
                }
            }
        }

        // gain crossover: |L| = 1
        let (ma, mb) = (a.norm().ln(), b.norm().ln());
        if (ma < 0.0) != (mb < 0.0) || ma == 0.0 {
            let omega = if ma == 0.0 {
                grid[i]
            } else {
                bisect(|w| Ok(eval(w)?.norm().ln()), grid[i], grid[i + 1], ma)?
            };
            let l = eval(omega)?;
            let phi = phase[i] + wrap_pi(l.arg() - a.arg());
            let pm = 180.0 + phi.to_degrees();
            if report.phase_margin_deg.is_none_or(|cur| pm < cur) {
                report.phase_margin_deg = Some(pm);
                report.gain_crossover_omega = Some(omega);
            }
        }
    }
    Ok(report)
}

/// Margins of any loop evaluator over a log-spaced bracketing grid.
pub fn loop_margins<F>(
    eval: F,
    omega_min: f64,
    omega_max: f64,
    nodes: usize,
) -> Result<MarginReport>
where
    F: Fn(f64) -> Result<Complex64>,
{
    let grid = log_grid(omega_min, omega_max, nodes)?;
    let values = grid.iter().map(|&w| eval(w)).collect::<Result<Vec<_>>>()?;
    margins_from_samples(&grid, &values, eval)
}

/// Gain and phase margins of `C(s) G(s)` over `[omega_min, omega_max]`
/// using the default number of bracketing nodes.
pub fn compute_margins(
    c: &PiLambdaController,
    g: &FractionalTransferFunction,
    omega_min: f64,
    omega_max: f64,
) -> Result<MarginReport> {
    loop_margins(
        |w| open_loop_response(c, g, w),
        omega_min,
        omega_max,
        DEFAULT_MARGIN_NODES,
    )
}

pub fn compute_margins_default(
    c: &PiLambdaController,
    g: &FractionalTransferFunction,
) -> Result<MarginReport> {
    compute_margins(c, g, DEFAULT_MARGIN_OMEGA_MIN, DEFAULT_MARGIN_OMEGA_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodePoint {
    pub omega: f64,
    pub magnitude_db: f64,
    pub phase_deg: f64,
}

pub fn bode(
    c: &PiLambdaController,
    g: &FractionalTransferFunction,
    grid: &[f64],
) -> Result<Vec<BodePoint>> {
    check_increasing(grid)?;
    let values = grid
        .iter()
        .map(|&w| open_loop_response(c, g, w))
        .collect::<Result<Vec<_>>>()?;
    let phase = unwrapped_phase(&values);
    Ok(grid
        .iter()
        .zip(values.iter().zip(phase))
        .map(|(&omega, (v, ph))| BodePoint {
            omega,
            magnitude_db: 20.0 * v.norm().log10(),
            phase_deg: ph.to_degrees(),
        })
        .collect())
}

pub fn write_bode_csv<W: Write>(out: W, points: &[BodePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["omega", "magnitude_db", "phase_deg"])?;
    for p in points {
        w.write_record([
            p.omega.to_string(),
            p.magnitude_db.to_string(),
            p.phase_deg.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Target margins with acceptance tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpec {
    pub gm_target_db: f64,
    pub pm_target_deg: f64,
    pub gm_tolerance_db: f64,
    pub pm_tolerance_deg: f64,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            gm_target_db: 4.5,
            pm_target_deg: 20.0,
            gm_tolerance_db: 0.5,
            pm_tolerance_deg: 2.0,
        }
    }
}

impl DesignSpec {
    pub fn new(
        gm_target_db: f64,
        pm_target_deg: f64,
        gm_tolerance_db: f64,
        pm_tolerance_deg: f64,
    ) -> Result<Self> {
        let all = [
            gm_target_db,
            pm_target_deg,
            gm_tolerance_db,
            pm_tolerance_deg,
        ];
        if all.iter().any(|v| !v.is_finite()) || gm_tolerance_db <= 0.0 || pm_tolerance_deg <= 0.0 {
            return Err(Error::InvalidArgument(
                "design targets must be finite and tolerances positive".into(),
            ));
        }
        Ok(Self {
            gm_target_db,
            pm_target_deg,
            gm_tolerance_db,
            pm_tolerance_deg,
        })
    }

    /// Worst normalized deviation from the targets; infinite if a margin
    /// is absent.
    pub fn deviation(&self, m: &MarginReport) -> f64 {
        match (m.gain_margin_db, m.phase_margin_deg) {
            (Some(gm), Some(pm)) => ((gm - self.gm_target_db).abs() / self.gm_tolerance_db)
                .max((pm - self.pm_target_deg).abs() / self.pm_tolerance_deg),
            _ => f64::INFINITY,
        }
    }

    pub fn is_met(&self, m: &MarginReport) -> bool {
        self.deviation(m) <= 1.0
    }
}

/// Sampling settings for [`design_search`].
#[derive(Debug, Clone)]
pub struct DesignOptions {
    /// Nodes per axis of the coarse grid.
    pub grid_points: usize,
    /// Nodes within this normalized deviation get their neighbours sampled
    /// at half the spacing, once per level.
    pub refine_below: f64,
    /// Halvings of the grid spacing around near-feasible nodes.
    pub refine_levels: usize,
    /// Clip applied to each region's bounding box.
    pub window: GainWindow,
    pub locus_grid: Vec<f64>,
    pub margin_grid: Vec<f64>,
    pub max_denominator: u32,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            grid_points: 60,
            refine_below: 6.0,
            refine_levels: 5,
            window: GainWindow {
                kp_min: -20.0,
                kp_max: 20.0,
                ki_min: 0.0,
                ki_max: 20.0,
            },
            locus_grid: default_omega_grid(),
            margin_grid: log_grid(
                DEFAULT_MARGIN_OMEGA_MIN,
                DEFAULT_MARGIN_OMEGA_MAX,
                DEFAULT_MARGIN_NODES,
            )
            .expect("default grid is valid"),
            max_denominator: DEFAULT_MAX_DENOMINATOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignCandidate {
    pub lambda: f64,
    pub kp: f64,
    pub ki: f64,
    pub margins: MarginReport,
}

/// Search outcome for one `λ`; an empty candidate list means no feasible
/// controller was found.
#[derive(Debug, Clone)]
pub struct LambdaDesign {
    pub lambda: f64,
    pub outcome: Result<Vec<DesignCandidate>>,
}

impl LambdaDesign {
    pub fn is_feasible(&self) -> bool {
        matches!(&self.outcome, Ok(c) if !c.is_empty())
    }

    pub fn candidates(&self) -> &[DesignCandidate] {
        match &self.outcome {
            Ok(c) => c,
            Err(_) => &[],
        }
    }
}

/// Loop samples with the plant and `(jω)^{-λ}` cached on the margin grid.
struct CachedLoop<'a> {
    g: &'a FractionalTransferFunction,
    lambda: f64,
    grid: &'a [f64],
    plant: Vec<Complex64>,
    inv_power: Vec<Complex64>,
}

impl<'a> CachedLoop<'a> {
    fn new(g: &'a FractionalTransferFunction, lambda: f64, grid: &'a [f64]) -> Result<Self> {
        let plant = grid
            .iter()
            .map(|&w| g.eval_jw(w))
            .collect::<Result<Vec<_>>>()?;
        let inv_power = grid.iter().map(|&w| jw_pow(-lambda, w)).collect();
        Ok(Self {
            g,
            lambda,
            grid,
            plant,
            inv_power,
        })
    }

    fn margins(&self, kp: f64, ki: f64) -> Result<MarginReport> {
        let c = PiLambdaController::new(kp, ki, self.lambda)?;
        let values: Vec<Complex64> = self
            .plant
            .iter()
            .zip(&self.inv_power)
            .map(|(p, z)| (Complex64::new(kp, 0.0) + z * ki) * p)
            .collect();
        margins_from_samples(self.grid, &values, |w| open_loop_response(&c, self.g, w))
    }
}

struct NodeEval {
    kp: f64,
    ki: f64,
    margins: MarginReport,
    deviation: f64,
}

fn search_lambda(
    g: &FractionalTransferFunction,
    lambda: f64,
    spec: &DesignSpec,
    opts: &DesignOptions,
) -> Result<Vec<DesignCandidate>> {
    check_lambda(lambda)?;
    let region: StabilityRegion =
        stability_region(g, lambda, &opts.locus_grid, opts.max_denominator)?;
    let Some(window) = region.bounding_box().intersect(&opts.window) else {
        return Ok(Vec::new());
    };
    let cached = CachedLoop::new(g, lambda, &opts.margin_grid)?;

    // nodes live on the finest lattice; coarse nodes sit on multiples of 2^levels
    let n = opts.grid_points.max(2);
    let levels = opts.refine_levels.min(20) as u32;
    let fine = (n - 1) << levels;
    let coord = |a: usize, b: usize| {
        (
            window.kp_min + window.width() * a as f64 / fine as f64,
            window.ki_min + window.height() * b as f64 / fine as f64,
        )
    };
    let evaluate = |(a, b): (usize, usize)| -> Option<NodeEval> {
        let (kp, ki) = coord(a, b);
        if !region.proposes(kp, ki) {
            return None;
        }
        let margins = cached.margins(kp, ki).ok()?;
        Some(NodeEval {
            kp,
            ki,
            deviation: spec.deviation(&margins),
            margins,
        })
    };

    let stride = 1usize << levels;
    let coarse: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (stride * i, stride * j)))
        .collect();
    let mut evaluated: BTreeMap<(usize, usize), Option<NodeEval>> =
        coarse.par_iter().map(|&ij| (ij, evaluate(ij))).collect();

    for level in 1..=levels {
        let step = (stride >> level) as i64;
        let mut refine: Vec<(usize, usize)> = evaluated
            .iter()
            .filter(|(_, e)| e.as_ref().is_some_and(|e| e.deviation <= opts.refine_below))
            .flat_map(|(&(a, b), _)| {
                let mut around = Vec::with_capacity(8);
                for da in -1i64..=1 {
                    for db in -1i64..=1 {
                        let (x, y) = (a as i64 + da * step, b as i64 + db * step);
                        if (da, db) != (0, 0)
                            && x >= 0
                            && y >= 0
                            && x <= fine as i64
                            && y <= fine as i64
                        {
                            around.push((x as usize, y as usize));
                        }
                    }
                }
                around
            })
            .filter(|ij| !evaluated.contains_key(ij))
            .collect();
        refine.sort_unstable();
        refine.dedup();
        let refined: Vec<((usize, usize), Option<NodeEval>)> =
            refine.par_iter().map(|&ij| (ij, evaluate(ij))).collect();
        evaluated.extend(refined);
    }

    let mut out = Vec::new();
    for e in evaluated.into_values().flatten() {
        if !spec.is_met(&e.margins) {
            continue;
        }
        if classify_point(g, lambda, e.kp, e.ki, opts.max_denominator)? == Classification::Stable {
            out.push(DesignCandidate {
                lambda,
                kp: e.kp,
                ki: e.ki,
                margins: e.margins,
            });
        }
    }
    out.sort_by(|a, b| a.kp.total_cmp(&b.kp).then(a.ki.total_cmp(&b.ki)));
    Ok(out)
}

/// For each `λ`, samples the stability region on a grid (refined near
/// promising nodes) and keeps the stable candidates whose margins meet
/// `spec`. Results follow the input `λ` order, candidates sorted by
/// `(kp, ki)`.
pub fn design_search(
    g: &FractionalTransferFunction,
    lambdas: &[f64],
    spec: &DesignSpec,
    opts: &DesignOptions,
) -> Vec<LambdaDesign> {
    lambdas
        .par_iter()
        .map(|&lambda| LambdaDesign {
            lambda,
            outcome: search_lambda(g, lambda, spec, opts),
        })
        .collect()
}

pub fn write_candidates_csv<W: Write>(out: W, designs: &[LambdaDesign]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["lambda", "kp", "ki"];
    header.extend(MarginReport::CSV_HEADER);
    w.write_record(&header)?;
    for d in designs {
        for c in d.candidates() {
            let mut row = vec![c.lambda.to_string(), c.kp.to_string(), c.ki.to_string()];
            row.extend(c.margins.csv_fields());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
