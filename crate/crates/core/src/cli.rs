//! Command-line front end. Every command writes CSV (and SVG unless
//! `--no-plots`) into the output directory and finishes with `manifest.txt`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{lin_grid, log_grid};
use crate::locus::{global_regions, write_regions_csv, StabilityRegion};
use crate::margins::{
    bode, compute_margins_default, design_search, write_bode_csv, write_candidates_csv,
    DesignOptions, DesignSpec, LambdaDesign, MarginReport,
};
use crate::matignon::{closed_loop_verdict, StabilityVerdict, DEFAULT_MAX_DENOMINATOR};
use crate::motor::{derive_tf, MotorParams};
use crate::plot;
use crate::quasipoly::{
    check_lambda, FractionalTransferFunction, PiLambdaController, QuasiPolynomial,
};
use crate::relay::{analyze_relay_trace, relay_trace, zn_pi, RelayConfig, RelayResult};
use crate::timesim::{
    compute_metrics, run_scenario_suite, simulate_closed_loop, Metrics, Scenario, ScenarioKind,
    SimConfig, SimTrace,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Output-directory override.
pub const OUT_DIR_ENV: &str = "FRACPI_OUT_DIR";

/// Controller used for the fractional-order runs of `paper-tables`.
pub const REFERENCE_FO: (f64, f64, f64) = (2.5732, 1.45204, 1.2);

#[derive(Debug, Parser)]
#[command(
    name = "fracpi",
    version,
    about = "Fractional-order PI speed controller design and verification"
)]
pub struct Cli {
    /// Motor parameter file (`key = value`); the built-in laboratory motor otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = ".")]
    pub out_dir: PathBuf,

    /// Skip SVG output.
    #[arg(long, global = true)]
    pub no_plots: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the normalized transfer function and write its coefficients.
    Model,
    /// Stability-boundary curves and regions for a list of lambda values.
    Regions(RegionsArgs),
    /// Search the regions for controllers meeting gain/phase margin targets.
    Design(DesignArgs),
    /// Closed-loop servo or load run.
    Simulate(SimulateArgs),
    /// Relay-feedback experiment and Ziegler-Nichols PI.
    TuneRelay(RelayArgs),
    /// Root-location stability verdict of the closed loop.
    Stability(StabilityArgs),
    /// Full pipeline: model, regions, design, relay, simulations, stability.
    PaperTables(PaperArgs),
}

#[derive(Debug, Args)]
pub struct OmegaArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub omega_min: f64,
    #[arg(long, default_value_t = 1e3)]
    pub omega_max: f64,
    #[arg(long, default_value_t = 2000)]
    pub omega_points: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_DENOMINATOR)]
    pub max_den: u32,
}

#[derive(Debug, Args)]
pub struct RegionsArgs {
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub omega: OmegaArgs,
    /// Plot window `kp_min,kp_max,ki_min,ki_max`.
    #[arg(long, value_parser = parse_quad, allow_hyphen_values = true, default_value = "-2,20,0,20")]
    pub plot_window: [f64; 4],
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    #[arg(long, default_value_t = 4.5, allow_negative_numbers = true)]
    pub gm_db: f64,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    pub pm_deg: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gm_tol: f64,
    #[arg(long, default_value_t = 2.0)]
    pub pm_tol: f64,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Explicit lambda list; overrides the range flags.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 1.4)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub lambda_step: f64,
    /// Nodes per axis of the coarse search grid.
    #[arg(long, default_value_t = 60)]
    pub grid: usize,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ControllerArgs {
    /// Fractional controller `kp,ki,lambda`.
    #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
    pub fo: Option<[f64; 3]>,
    /// Integer-order PI `kp,ki`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub io: Option<[f64; 2]>,
    /// Best candidate of a default-spec design search.
    #[arg(long)]
    pub from_design: bool,
    /// Ziegler-Nichols PI from a default relay experiment.
    #[arg(long)]
    pub from_relay: bool,
}

fn parse_floats<const N: usize>(text: &str) -> std::result::Result<[f64; N], String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{}` is not a number", v.trim()))
        })
        .collect::<std::result::Result<_, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated values, got {}", v.len()))
}

fn parse_pair(text: &str) -> std::result::Result<[f64; 2], String> {
    parse_floats(text)
}

fn parse_triple(text: &str) -> std::result::Result<[f64; 3], String> {
    parse_floats(text)
}

fn parse_quad(text: &str) -> std::result::Result<[f64; 4], String> {
    parse_floats(text)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub controller: ControllerArgs,
    /// Setpoint step in % of span.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "load_step")]
    pub servo_step: Option<f64>,
    /// Plant-input disturbance step in % of span.
    #[arg(long, allow_negative_numbers = true)]
    pub load_step: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub step_time: f64,
    /// Operating point in % of span.
    #[arg(long, default_value_t = 50.0, allow_negative_numbers = true)]
    pub level: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    /// GL memory length in samples (whole history if absent).
    #[arg(long)]
    pub gl_memory: Option<usize>,
    /// Clamp the controller output to 0..100 %.
    #[arg(long)]
    pub saturate: bool,
    /// Suffix for the output file names.
    #[arg(long)]
    pub tag: Option<String>,
}

#[derive(Debug, Args)]
pub struct RelayArgs {
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub height: f64,
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    pub switch_on: f64,
    #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
    pub switch_off: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub setpoint: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub dt: f64,
    #[arg(long, default_value_t = 60.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 2)]
    pub settle_cycles: usize,
}

impl RelayArgs {
    fn to_config(&self) -> RelayConfig {
        RelayConfig {
            height: self.height,
            switch_on: self.switch_on,
            switch_off: self.switch_off,
            setpoint: self.setpoint,
            dt: self.dt,
            horizon: self.horizon,
            settle_cycles: self.settle_cycles,
        }
    }
}

#[derive(Debug, Args)]
pub struct PaperArgs {
    /// Nodes per axis of the design search grid.
    #[arg(long, default_value_t = 60)]
    pub design_grid: usize,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub controller: ControllerArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_DENOMINATOR)]
    pub max_den: u32,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Infeasible(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
            CliError::Lib(e) => error_exit_code(e),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Infeasible(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::NonFinite(_)
        | Error::DegenerateLambda(_)
        | Error::WindowOutOfRange { .. }
        | Error::HorizonTooShort { .. } => EXIT_USAGE,
        Error::Config { .. } | Error::Io(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Lib(Error::NoLimitCycle(_)) = &e {
                eprintln!("hint: widen the hysteresis band, lengthen --horizon, or check that the plant has lag");
            }
            e.exit_code()
        }
    }
}

/// Loaded plant plus the provenance recorded in the manifest.
struct Setup {
    params: MotorParams,
    plant: FractionalTransferFunction,
    source: String,
    digest: String,
}

fn load_setup(config: Option<&Path>) -> CliResult<Setup> {
    let (params, source, bytes) = match config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| {
                let kind = if e.kind() == std::io::ErrorKind::NotFound {
                    "config file not found"
                } else {
                    "cannot read config"
                };
                Error::Io(format!("{kind}: {}: {e}", path.display()))
            })?;
            let text = String::from_utf8_lossy(&bytes);
            (
                MotorParams::from_config_str(&text)?,
                path.display().to_string(),
                bytes,
            )
        }
        None => {
            let p = MotorParams::reference();
            (p, "builtin".to_string(), p.to_config_string().into_bytes())
        }
    };
    let plant = derive_tf(&params)?;
    let digest = Sha256::digest(&bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
    Ok(Setup {
        params,
        plant,
        source,
        digest,
    })
}

/// Tracks emitted files and writes the manifest.
struct Output {
    dir: PathBuf,
    plots: bool,
    files: Vec<String>,
    notes: Vec<String>,
    settings: Vec<(String, String)>,
}

impl Output {
    fn new(dir: &Path, plots: bool) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            plots,
            files: Vec::new(),
            notes: Vec::new(),
            settings: Vec::new(),
        })
    }

    fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.push((key.to_string(), value.to_string()));
    }

    fn csv<F>(&mut self, name: &str, write: F) -> CliResult<()>
    where
        F: FnOnce(BufWriter<File>) -> Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path)
            .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))?;
        write(BufWriter::new(file))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, body: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)
            .map_err(|e| Error::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn svg<F>(&mut self, name: &str, draw: F) -> CliResult<()>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        if !self.plots {
            return Ok(());
        }
        let path = self.dir.join(name);
        match draw(&path) {
            Ok(()) => self.files.push(name.to_string()),
            Err(e) => self.notes.push(format!("plot {name} skipped: {e}")),
        }
        Ok(())
    }

    fn finish(mut self, command: &str, setup: &Setup) -> CliResult<()> {
        let mut m = String::new();
        let _ = writeln!(m, "command = {command}");
        let _ = writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(m, "config = {}", setup.source);
        let _ = writeln!(m, "config_sha256 = {}", setup.digest);
        for line in setup.params.to_config_string().lines() {
            let _ = writeln!(m, "motor.{line}");
        }
        for (k, v) in &self.settings {
            let _ = writeln!(m, "{k} = {v}");
        }
        for note in &self.notes {
            let _ = writeln!(m, "note = {note}");
        }
        for f in &self.files {
            let _ = writeln!(m, "output = {f}");
        }
        self.files.clear();
        self.text("manifest.txt", &m)
    }
}

fn execute(cli: &Cli) -> CliResult<i32> {
    let setup = load_setup(cli.config.as_deref())?;
    let mut out = Output::new(&cli.out_dir, !cli.no_plots)?;
    let (name, code) = match &cli.command {
        Command::Model => ("model", cmd_model(&setup, &mut out)?),
        Command::Regions(a) => ("regions", cmd_regions(&setup, a, &mut out)?),
        Command::Design(a) => ("design", cmd_design(&setup, a, &mut out)?),
        Command::Simulate(a) => ("simulate", cmd_simulate(&setup, a, &mut out)?),
        Command::TuneRelay(a) => ("tune-relay", cmd_tune_relay(&setup, a, &mut out)?),
        Command::Stability(a) => ("stability", cmd_stability(&setup, a, &mut out)?),
        Command::PaperTables(a) => ("paper-tables", cmd_paper_tables(&setup, a, &mut out)?),
    };
    out.finish(name, &setup)?;
    Ok(code)
}

/// Rounds to five significant digits for display.
fn short(v: f64) -> String {
    format!("{v:.4e}")
        .parse::<f64>()
        .map_or_else(|_| v.to_string(), |x| x.to_string())
}

fn pretty_poly(p: &QuasiPolynomial) -> String {
    let mut s = String::new();
    for (i, t) in p.terms().iter().rev().enumerate() {
        let c = if i == 0 {
            short(t.coeff)
        } else {
            s.push_str(if t.coeff < 0.0 { " - " } else { " + " });
            short(t.coeff.abs())
        };
        s.push_str(&c);
        match t.exponent {
            0.0 => {}
            1.0 => s.push_str(" s"),
            e => {
                let _ = write!(s, " s^{e}");
            }
        }
    }
    if s.is_empty() {
        s.push('0');
    }
    s
}

/// `num/(den)` with coefficients rounded for display.
pub fn pretty_tf(g: &FractionalTransferFunction) -> String {
    format!("{}/({})", pretty_poly(g.num()), pretty_poly(g.den()))
}

fn write_model_csv<W: std::io::Write>(w: W, g: &FractionalTransferFunction) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["part", "exponent", "coeff"])?;
    for (part, p) in [("num", g.num()), ("den", g.den())] {
        for t in p.terms() {
            w.write_record([
                part.to_string(),
                t.exponent.to_string(),
                t.coeff.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_model(setup: &Setup, out: &mut Output) -> CliResult<i32> {
    println!("G(s) = {}", pretty_tf(&setup.plant));
    println!("dc_gain = {}", setup.params.dc_gain());
    out.csv("model.csv", |w| write_model_csv(w, &setup.plant))?;
    Ok(EXIT_OK)
}

fn validated_lambdas(lambdas: &[f64]) -> CliResult<Vec<f64>> {
    if lambdas.is_empty() {
        return Err(CliError::Usage("empty lambda list".into()));
    }
    lambdas
        .iter()
        .map(|&l| check_lambda(l).map_err(|e| CliError::Usage(e.to_string())))
        .collect()
}

fn omega_grid(a: &OmegaArgs) -> CliResult<Vec<f64>> {
    log_grid(a.omega_min, a.omega_max, a.omega_points).map_err(|e| CliError::Usage(e.to_string()))
}

fn region_file(lambda: f64) -> String {
    format!("region_lambda_{lambda}.csv")
}

/// Builds and writes regions; failed `λ` are reported and skipped.
fn emit_regions(
    setup: &Setup,
    lambdas: &[f64],
    grid: &[f64],
    max_den: u32,
    window: Option<((f64, f64), (f64, f64))>,
    out: &mut Output,
) -> CliResult<Vec<StabilityRegion>> {
    let mut ok = Vec::new();
    for (lambda, res) in lambdas
        .iter()
        .zip(global_regions(&setup.plant, lambdas, grid, max_den))
    {
        match res {
            Ok(r) => {
                out.csv(&region_file(*lambda), |w| r.write_csv(w))?;
                let probe = |c: &Option<((f64, f64), crate::locus::Classification)>| {
                    c.map_or_else(
                        || "none".to_string(),
                        |((kp, ki), cl)| format!("({kp}, {ki}) {}", cl.label()),
                    )
                };
                println!(
                    "lambda = {lambda}: {} boundary points, {} gaps, interior probe {}, exterior probe {}",
                    r.boundary.len(),
                    r.gaps.len(),
                    probe(&r.interior_check),
                    probe(&r.exterior_check)
                );
                ok.push(r);
            }
            Err(e) => {
                eprintln!("lambda = {lambda}: {e}");
                out.notes
                    .push(format!("region lambda={lambda} failed: {e}"));
            }
        }
    }
    out.csv("regions.csv", |w| write_regions_csv(w, &ok))?;
    out.svg("regions.svg", |p| plot::regions_svg(p, &ok, window))?;
    Ok(ok)
}

fn cmd_regions(setup: &Setup, a: &RegionsArgs, out: &mut Output) -> CliResult<i32> {
    let lambdas = validated_lambdas(&a.lambdas)?;
    let grid = omega_grid(&a.omega)?;
    let pw = &a.plot_window;
    out.setting("lambdas", format!("{lambdas:?}"));
    out.setting(
        "omega_range",
        format!(
            "[{}, {}] x {}",
            a.omega.omega_min, a.omega.omega_max, a.omega.omega_points
        ),
    );
    let regions = emit_regions(
        setup,
        &lambdas,
        &grid,
        a.omega.max_den,
        Some(((pw[0], pw[1]), (pw[2], pw[3]))),
        out,
    )?;
    Ok(if regions.is_empty() {
        EXIT_NUMERICAL
    } else {
        EXIT_OK
    })
}

fn design_lambdas(a: &DesignArgs) -> CliResult<Vec<f64>> {
    match &a.lambdas {
        Some(l) => validated_lambdas(l),
        None => {
            if !(a.lambda_step > 0.0 && a.lambda_max >= a.lambda_min) {
                return Err(CliError::Usage(
                    "lambda range needs min <= max and a positive step".into(),
                ));
            }
            let n = ((a.lambda_max - a.lambda_min) / a.lambda_step + 1e-9).floor() as usize + 1;
            let grid: Vec<f64> = lin_grid(
                a.lambda_min,
                a.lambda_min + (n - 1) as f64 * a.lambda_step,
                n,
            )
            .into_iter()
            .map(|l| (l * 1e9).round() / 1e9)
            .collect();
            validated_lambdas(&grid)
        }
    }
}

fn print_designs(designs: &[LambdaDesign]) {
    println!("lambda,kp,ki,gain_margin_db,phase_margin_deg");
    for d in designs {
        for c in d.candidates() {
            let [gm, pm, _, _] = c.margins.csv_fields();
            println!("{},{},{},{gm},{pm}", c.lambda, c.kp, c.ki);
        }
    }
    for d in designs {
        match &d.outcome {
            Ok(c) if c.is_empty() => eprintln!("lambda = {}: no feasible candidate", d.lambda),
            Err(e) => eprintln!("lambda = {}: {e}", d.lambda),
            Ok(_) => {}
        }
    }
}

fn run_design(setup: &Setup, lambdas: &[f64], spec: &DesignSpec, grid: usize) -> Vec<LambdaDesign> {
    let opts = DesignOptions {
        grid_points: grid,
        ..DesignOptions::default()
    };
    design_search(&setup.plant, lambdas, spec, &opts)
}

fn cmd_design(setup: &Setup, a: &DesignArgs, out: &mut Output) -> CliResult<i32> {
    let spec = DesignSpec::new(a.spec.gm_db, a.spec.pm_deg, a.spec.gm_tol, a.spec.pm_tol)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let lambdas = design_lambdas(a)?;
    out.setting("spec", format!("{spec:?}"));
    out.setting("lambdas", format!("{lambdas:?}"));
    out.setting("grid", a.grid);
    let designs = run_design(setup, &lambdas, &spec, a.grid);
    print_designs(&designs);
    out.csv("design.csv", |w| write_candidates_csv(w, &designs))?;
    if designs.iter().any(LambdaDesign::is_feasible) {
        Ok(EXIT_OK)
    } else {
        eprintln!("no feasible candidate");
        Ok(EXIT_INFEASIBLE)
    }
}

fn run_relay(
    setup: &Setup,
    cfg: &RelayConfig,
    out: &mut Output,
) -> CliResult<(RelayResult, PiLambdaController)> {
    let trace = relay_trace(&setup.plant, cfg)?;
    out.csv("relay_trace.csv", |w| trace.write_csv(w))?;
    out.svg("relay.svg", |p| plot::relay_svg(p, &trace))?;
    let result = analyze_relay_trace(&trace, cfg)?;
    let pi = zn_pi(result.ultimate_gain, result.ultimate_period)?;
    Ok((result, pi))
}

fn resolve_controller(
    setup: &Setup,
    a: &ControllerArgs,
    out: &mut Output,
) -> CliResult<PiLambdaController> {
    let bad = |e: Error| CliError::Usage(e.to_string());
    let c = if let Some(v) = &a.fo {
        PiLambdaController::new(v[0], v[1], v[2]).map_err(bad)?
    } else if let Some(v) = &a.io {
        PiLambdaController::pi(v[0], v[1]).map_err(bad)?
    } else if a.from_relay {
        let (r, pi) = run_relay(setup, &RelayConfig::default(), out)?;
        println!("{r}");
        pi
    } else {
        let lambdas = design_lambdas(&DesignArgs {
            spec: SpecArgs {
                gm_db: 4.5,
                pm_deg: 20.0,
                gm_tol: 0.5,
                pm_tol: 2.0,
            },
            lambdas: None,
            lambda_min: 1.0,
            lambda_max: 1.4,
            lambda_step: 0.05,
            grid: 60,
        })?;
        let spec = DesignSpec::default();
        let designs = run_design(setup, &lambdas, &spec, 60);
        let best = designs
            .iter()
            .flat_map(|d| d.candidates())
            .min_by(|x, y| {
                spec.deviation(&x.margins)
                    .total_cmp(&spec.deviation(&y.margins))
            })
            .ok_or_else(|| {
                CliError::Infeasible("no feasible candidate from the default design search".into())
            })?;
        PiLambdaController::new(best.kp, best.ki, best.lambda)?
    };
    out.setting("controller", c);
    Ok(c)
}

fn sim_config(setup: &Setup, a: &SimulateArgs) -> CliResult<SimConfig> {
    let mut cfg = SimConfig::operating_point(&setup.plant, a.level)?;
    cfg.dt = a.dt;
    cfg.horizon = a.horizon;
    cfg.gl_memory = a.gl_memory;
    cfg.saturation = a.saturate.then_some((0.0, 100.0));
    cfg = match (a.servo_step, a.load_step) {
        (_, Some(d)) => Scenario {
            kind: ScenarioKind::Load,
            step_pct: d,
        }
        .apply(&cfg, a.step_time),
        (s, None) => Scenario {
            kind: ScenarioKind::Servo,
            step_pct: s.unwrap_or(0.0),
        }
        .apply(&cfg, a.step_time),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn write_metrics_csv<W: std::io::Write>(w: W, rows: &[(String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["run"];
    header.extend(Metrics::CSV_HEADER);
    w.write_record(&header)?;
    for (name, m) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(m.csv_fields());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(setup: &Setup, a: &SimulateArgs, out: &mut Output) -> CliResult<i32> {
    let cfg = sim_config(setup, a)?;
    let c = resolve_controller(setup, &a.controller, out)?;
    out.setting("sim", format!("{cfg:?}"));
    let scenario = match a.load_step {
        Some(d) => format!("load step {d:+}%"),
        None => format!("servo step {:+}%", a.servo_step.unwrap_or(0.0)),
    };
    let trace = simulate_closed_loop(&setup.plant, &c, &cfg)
        .map_err(|e| CliError::Lib(with_context(e, &scenario)))?;
    let metrics = compute_metrics(&trace, (a.step_time, cfg.steps() as f64 * cfg.dt))?;
    let suffix = a.tag.as_ref().map_or_else(String::new, |t| format!("_{t}"));
    println!("controller = {c}");
    println!("scenario = {scenario}");
    println!("{metrics}");
    out.csv(&format!("trace{suffix}.csv"), |w| trace.write_csv(w))?;
    out.csv(&format!("metrics{suffix}.csv"), |w| {
        write_metrics_csv(w, &[(c.to_string(), metrics)])
    })?;
    let label = c.to_string();
    out.svg(&format!("trace{suffix}.svg"), |p| {
        plot::traces_svg(p, &[(label.as_str(), &trace)])
    })?;
    Ok(EXIT_OK)
}

fn with_context(e: Error, scenario: &str) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{scenario}: {m}")),
        other => other,
    }
}

fn cmd_tune_relay(setup: &Setup, a: &RelayArgs, out: &mut Output) -> CliResult<i32> {
    let cfg = a.to_config();
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    out.setting("relay", format!("{cfg:?}"));
    let (r, pi) = run_relay(setup, &cfg, out)?;
    println!("{r}");
    println!("kp = {}", pi.kp());
    println!("ki = {}", pi.ki());
    out.text(
        "relay_result.txt",
        &format!("{r}\nkp = {}\nki = {}\n", pi.kp(), pi.ki()),
    )?;
    Ok(EXIT_OK)
}

fn verdict_text(v: &StabilityVerdict) -> String {
    format!(
        "verdict = {}\nq = {}\ndegree = {}\nmin_arg_margin_rad = {}\nsector_half_angle_deg = {}",
        if v.is_boundary() {
            "Boundary"
        } else if v.stable {
            "Stable"
        } else {
            "Unstable"
        },
        v.q,
        v.roots.len(),
        v.min_arg_margin,
        crate::matignon::sector_half_angle_deg(v.q)
    )
}

fn emit_stability(
    setup: &Setup,
    c: &PiLambdaController,
    max_den: u32,
    tag: &str,
    out: &mut Output,
) -> CliResult<StabilityVerdict> {
    let v = closed_loop_verdict(&setup.plant, c, max_den)?;
    out.csv(&format!("poles{tag}.csv"), |w| v.write_csv(w))?;
    out.svg(&format!("poles{tag}.svg"), |p| plot::poles_svg(p, &v))?;
    Ok(v)
}

fn cmd_stability(setup: &Setup, a: &StabilityArgs, out: &mut Output) -> CliResult<i32> {
    let c = resolve_controller(setup, &a.controller, out)?;
    let v = emit_stability(setup, &c, a.max_den, "", out)?;
    println!("controller = {c}");
    println!("{}", verdict_text(&v));
    Ok(EXIT_OK)
}

fn margin_text(m: &MarginReport) -> String {
    m.to_string()
}

fn cmd_paper_tables(setup: &Setup, a: &PaperArgs, out: &mut Output) -> CliResult<i32> {
    let mut failed = false;
    let mut summary = String::new();

    println!("G(s) = {}", pretty_tf(&setup.plant));
    let _ = writeln!(summary, "plant = {}", pretty_tf(&setup.plant));
    out.csv("model.csv", |w| write_model_csv(w, &setup.plant))?;

    let region_lambdas = [0.8, 1.0, 1.2, 1.4];
    let grid = log_grid(1e-3, 1e3, 2000)?;
    let regions = emit_regions(
        setup,
        &region_lambdas,
        &grid,
        DEFAULT_MAX_DENOMINATOR,
        Some(((-2.0, 20.0), (0.0, 20.0))),
        out,
    )?;
    failed |= regions.len() != region_lambdas.len();

    let spec = DesignSpec::default();
    let design_l: Vec<f64> = (0..=8)
        .map(|i| ((1.0 + 0.05 * i as f64) * 1e9).round() / 1e9)
        .collect();
    out.setting("design_grid", a.design_grid);
    let designs = run_design(setup, &design_l, &spec, a.design_grid);
    out.csv("design.csv", |w| write_candidates_csv(w, &designs))?;
    for d in &designs {
        let status = match &d.outcome {
            Ok(c) if c.is_empty() => "infeasible".to_string(),
            Ok(c) => format!("{} candidates", c.len()),
            Err(e) => {
                failed = true;
                format!("error: {e}")
            }
        };
        let _ = writeln!(summary, "design.lambda_{} = {status}", d.lambda);
    }

    let fo = PiLambdaController::new(REFERENCE_FO.0, REFERENCE_FO.1, REFERENCE_FO.2)?;
    let fo_margins = compute_margins_default(&fo, &setup.plant)?;
    let _ = writeln!(summary, "fo.controller = {fo}");
    for line in margin_text(&fo_margins).lines() {
        let _ = writeln!(summary, "fo.{line}");
    }
    let bode_points = bode(&fo, &setup.plant, &log_grid(1e-2, 1e4, 600)?)?;
    out.csv("bode_fo.csv", |w| write_bode_csv(w, &bode_points))?;

    let io = match run_relay(setup, &RelayConfig::default(), out) {
        Ok((r, pi)) => {
            for line in r.to_string().lines() {
                let _ = writeln!(summary, "relay.{line}");
            }
            pi
        }
        Err(e) => {
            out.notes.push(format!("relay experiment failed: {e}"));
            return Err(e);
        }
    };
    let _ = writeln!(summary, "io.controller = {io}");

    let base = SimConfig::operating_point(&setup.plant, 50.0)?;
    let table = run_scenario_suite(&setup.plant, &fo, &io, &base);
    if !table.is_complete() {
        failed = true;
        out.notes.push("scenario table has failed cells".into());
    }
    out.csv("scenario_table.csv", |w| table.write_csv(w))?;

    for (scenario, name) in [
        (
            Scenario {
                kind: ScenarioKind::Servo,
                step_pct: 5.0,
            },
            "servo",
        ),
        (
            Scenario {
                kind: ScenarioKind::Load,
                step_pct: 2.0,
            },
            "load",
        ),
    ] {
        let cfg = scenario.apply(&base, 0.0);
        let fo_trace = simulate_closed_loop(&setup.plant, &fo, &cfg)?;
        let io_trace = simulate_closed_loop(&setup.plant, &io, &cfg)?;
        out.csv(&format!("trace_fo_{name}.csv"), |w| fo_trace.write_csv(w))?;
        out.csv(&format!("trace_io_{name}.csv"), |w| io_trace.write_csv(w))?;
        let pair: [(&str, &SimTrace); 2] = [("FO-PI", &fo_trace), ("IO-PI", &io_trace)];
        out.svg(&format!("{name}.svg"), |p| plot::traces_svg(p, &pair))?;
    }

    for (c, tag) in [(&fo, "_fo"), (&io, "_io")] {
        match emit_stability(setup, c, DEFAULT_MAX_DENOMINATOR, tag, out) {
            Ok(v) => {
                for line in verdict_text(&v).lines() {
                    let _ = writeln!(summary, "stability{tag}.{line}");
                }
            }
            Err(e) => {
                failed = true;
                out.notes.push(format!("stability{tag} failed: {e}"));
            }
        }
    }

    print!("{summary}");
    out.text("summary.txt", &summary)?;
    out.setting("status", if failed { "partial" } else { "complete" });
    Ok(if failed { EXIT_NUMERICAL } else { EXIT_OK })
}
