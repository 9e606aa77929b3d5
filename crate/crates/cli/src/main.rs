use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avcalc::action::{
    action_lift, action_quadrature, variation_derivative, variation_pairing_terms, VariationField,
    DEFAULT_EPSILON,
};
use avcalc::bundled;
use avcalc::config::{load_config, ConfigError, SystemConfig};
use avcalc::dynamics::{integrate_trajectory, SecondOrderPoint};
use avcalc::exprlang::parse;
use avcalc::geometry::{CurveSpec, GaugeFunction};
use avcalc::suites::{self, SuiteOptions, SuiteResult, Tolerances};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "avcalc", version, about = "Lagrangian mechanics with affine-valued Lagrangians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the Euler-Lagrange covector at (x, v, a).
    El {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long, default_value_t = 0)]
        chart: usize,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        v: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        a: Vec<f64>,
    },
    /// Print the momentum at (x, v) in the trivialization of the chart.
    Legendre {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long, default_value_t = 0)]
        chart: usize,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        v: Vec<f64>,
    },
    /// Integrate the equations of motion and write a CSV trajectory.
    Integrate {
        #[command(flatten)]
        system: SystemArg,
        #[arg(long, default_value_t = 0)]
        chart: usize,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        x0: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        v0: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        t0: f64,
        #[arg(long, allow_negative_numbers = true)]
        t1: f64,
        #[arg(long)]
        steps: usize,
        /// Ignore the forcing given in the system file.
        #[arg(long)]
        unforced: bool,
        /// Output file; standard output when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Compute the action by quadrature and by lifting, and their difference.
    Action {
        #[command(flatten)]
        system: SystemArg,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long, default_value_t = 1000)]
        panels: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// Compare the finite-difference variation of the action with the
    /// boundary-plus-bulk pairing.
    Variation {
        #[command(flatten)]
        system: SystemArg,
        #[command(flatten)]
        curve: CurveArgs,
        /// Variation component in t, once per coordinate.
        #[arg(long = "w", required = true, allow_hyphen_values = true)]
        w: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 1000)]
        panels: usize,
    },
    /// Run the gauge-invariance checks for one gauge function.
    CheckGauge {
        #[command(flatten)]
        system: SystemArg,
        /// Gauge function over x1..xn, added to the Lagrangian as <dchi, v>
        #[arg(long, allow_hyphen_values = true)]
        chi: String,
        #[command(flatten)]
        suite: SuiteArgs,
    },
    /// Run every invariant suite; the exit status is 1 if any fails.
    CheckAll {
        /// System files or bundled names; all bundled systems when omitted.
        #[arg(long = "system")]
        systems: Vec<String>,
        #[command(flatten)]
        suite: SuiteArgs,
    },
}

#[derive(Args, Debug)]
struct SystemArg {
    /// System file, or the name of a bundled system.
    #[arg(long)]
    system: String,
}

#[derive(Args, Debug)]
struct CurveArgs {
    /// Curve component in t, once per coordinate; the system's curve when omitted.
    #[arg(long = "curve", allow_hyphen_values = true)]
    curve: Vec<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    t0: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    t1: f64,
    #[arg(long = "curve-chart", default_value_t = 0)]
    curve_chart: usize,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 10)]
    velocities: usize,
    #[arg(long, default_value_t = 10)]
    fields: usize,
    #[arg(long, default_value_t = 1000)]
    panels: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1000)]
    trajectory_steps: usize,
    #[arg(long, default_value_t = 0x5eed)]
    seed: u64,
    #[arg(long, default_value_t = 1e-12)]
    tol_atlas: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol_lagrangian: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol_gauge_el: f64,
    #[arg(long, default_value_t = 1e-12)]
    tol_legendre: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol_consistency: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol_trajectory: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_action: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol_action_gauge: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_exact: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol_variation: f64,
}

impl SuiteArgs {
    fn options(&self) -> SuiteOptions {
        SuiteOptions {
            points: self.points,
            velocities: self.velocities,
            fields: self.fields,
            panels: self.panels,
            epsilon: self.epsilon,
            trajectory_steps: self.trajectory_steps,
            seed: self.seed,
            tolerances: Tolerances {
                atlas: self.tol_atlas,
                lagrangian: self.tol_lagrangian,
                gauge_el: self.tol_gauge_el,
                legendre: self.tol_legendre,
                consistency: self.tol_consistency,
                trajectory: self.tol_trajectory,
                action: self.tol_action,
                action_gauge: self.tol_action_gauge,
                exact: self.tol_exact,
                variation: self.tol_variation,
            },
            ..SuiteOptions::default()
        }
    }
}

/// Failure classes mapped to exit statuses.
enum Failure {
    Usage(String),
    Check(String),
}

impl From<avcalc::Error> for Failure {
    fn from(e: avcalc::Error) -> Self {
        match e {
            avcalc::Error::InvalidInput(m) => Failure::Usage(m),
            other => Failure::Check(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Usage(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if (1e-4..1e16).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn sci(x: f64) -> String {
    format!("{:.16e}", if x == 0.0 { 0.0 } else { x })
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ")
}

fn load_system(name_or_path: &str) -> Result<SystemConfig, Failure> {
    let path = Path::new(name_or_path);
    if !path.exists() {
        if let Some(cfg) = bundled::load(name_or_path) {
            return Ok(cfg?);
        }
    }
    Ok(load_config(path)?)
}

fn check_len(name: &str, xs: &[f64], dim: usize) -> Result<(), Failure> {
    if xs.len() != dim {
        return Err(Failure::Usage(format!("--{name} needs {dim} comma-separated values, got {}", xs.len())));
    }
    Ok(())
}

fn parse_exprs(srcs: &[String], flag: &str) -> Result<Vec<avcalc::exprlang::Ast>, Failure> {
    srcs.iter()
        .map(|s| parse(s).map_err(|e| Failure::Usage(format!("--{flag} `{s}`: {e}"))))
        .collect()
}

fn curve_for(cfg: &SystemConfig, args: &CurveArgs) -> Result<CurveSpec, Failure> {
    if args.curve.is_empty() {
        return cfg
            .curve
            .clone()
            .ok_or_else(|| Failure::Usage("no --curve given and the system defines none".into()));
    }
    if args.curve.len() != cfg.dim {
        return Err(Failure::Usage(format!("--curve must be given {} times", cfg.dim)));
    }
    let coords = parse_exprs(&args.curve, "curve")?;
    Ok(CurveSpec::single(&cfg.atlas, args.curve_chart, args.t0, args.t1, coords)?)
}

fn report_suites(out: &mut String, system: &str, results: &[SuiteResult]) -> bool {
    let mut ok = true;
    for r in results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        ok &= r.passed();
        let _ = writeln!(out, "{status} {system} {} defect={:e} tol={:e}", r.name, r.defect, r.tolerance);
    }
    ok
}

fn run(cli: Cli) -> Result<String, Failure> {
    let mut out = String::new();
    match cli.command {
        Command::El { system, chart, x, v, a } => {
            let cfg = load_system(&system.system)?;
            for (name, xs) in [("x", &x), ("v", &v), ("a", &a)] {
                check_len(name, xs, cfg.dim)?;
            }
            let e = cfg.lagrangian.euler_lagrange(&SecondOrderPoint { x, v, a }, chart)?;
            let _ = writeln!(out, "{}", join(&e.p));
        }
        Command::Legendre { system, chart, x, v } => {
            let cfg = load_system(&system.system)?;
            check_len("x", &x, cfg.dim)?;
            check_len("v", &v, cfg.dim)?;
            let p = cfg.lagrangian.legendre(&x, &v, chart)?;
            let _ = writeln!(out, "{}", join(&p.p));
        }
        Command::Integrate { system, chart, x0, v0, t0, t1, steps, unforced, output } => {
            let cfg = load_system(&system.system)?;
            check_len("x0", &x0, cfg.dim)?;
            check_len("v0", &v0, cfg.dim)?;
            let forcing = if unforced { None } else { cfg.forcing.as_ref() };
            let tr = integrate_trajectory(&cfg.lagrangian, &x0, &v0, chart, t0, t1, steps, forcing)?;
            let mut csv = String::from("t");
            for i in 1..=cfg.dim {
                let _ = write!(csv, ",x{i}");
            }
            for i in 1..=cfg.dim {
                let _ = write!(csv, ",v{i}");
            }
            csv.push('\n');
            for (t, s) in tr.times.iter().zip(&tr.states) {
                csv.push_str(&sci(*t));
                for c in s.x.iter().chain(&s.v) {
                    csv.push(',');
                    csv.push_str(&sci(*c));
                }
                csv.push('\n');
            }
            match output {
                Some(path) => std::fs::write(&path, csv)
                    .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))?,
                None => out = csv,
            }
        }
        Command::Action { system, curve, panels, steps } => {
            let cfg = load_system(&system.system)?;
            let gamma = curve_for(&cfg, &curve)?;
            let q = action_quadrature(&cfg.lagrangian, &gamma, panels)?;
            let l = action_lift(&cfg.lagrangian, &gamma, steps, 0.0)?;
            let gap = avcalc::affine_scalar_diff(&q, &l, &cfg.atlas)?;
            let _ = writeln!(out, "quadrature {}", num(q.real_part()));
            let _ = writeln!(out, "lift {}", num(l.real_part()));
            let _ = writeln!(out, "gap {}", num(gap.abs()));
        }
        Command::Variation { system, curve, w, epsilon, panels } => {
            let cfg = load_system(&system.system)?;
            let gamma = curve_for(&cfg, &curve)?;
            if w.len() != cfg.dim {
                return Err(Failure::Usage(format!("--w must be given {} times", cfg.dim)));
            }
            let field = VariationField::new(parse_exprs(&w, "w")?)?;
            let fd = variation_derivative(&cfg.lagrangian, &gamma, &field, epsilon, panels)?;
            let terms = variation_pairing_terms(&cfg.lagrangian, &gamma, &field, panels)?;
            let _ = writeln!(out, "derivative {}", num(fd));
            let _ = writeln!(out, "pairing {}", num(terms.total()));
            let _ = writeln!(out, "gap {}", num((fd - terms.total()).abs()));
            let _ = writeln!(out, "boundary {}", num(terms.boundary));
            let _ = writeln!(out, "bulk {}", num(terms.bulk));
            for (label, p) in [("p_a", &terms.start_momentum), ("p_b", &terms.end_momentum)] {
                let _ = writeln!(out, "{label} chart={} x={} p={}", p.chart, join(&p.x), join(&p.p));
            }
        }
        Command::CheckGauge { system, chi, suite } => {
            let cfg = load_system(&system.system)?;
            let ast = parse(&chi).map_err(|e| Failure::Usage(format!("--chi: {e}")))?;
            if let Some(v) = ast
                .free_variables()
                .into_iter()
                .find(|v| cfg.constants.get(v).is_none() && !avcalc::exprlang::coordinate_names(cfg.dim).contains(v))
            {
                return Err(Failure::Usage(format!("--chi: unbound variable {v}")));
            }
            let function = GaugeFunction::new(&cfg.atlas, vec![ast])?;
            let results = suites::check_gauge(&cfg, &chi, &function, &suite.options())?;
            let ok = report_suites(&mut out, &cfg.name, &results);
            let worst = results.iter().map(|r| r.defect).fold(0.0, f64::max);
            let _ = writeln!(out, "max defect {worst:e}");
            if !ok {
                return Err(Failure::Check(out));
            }
        }
        Command::CheckAll { systems, suite } => {
            let opts = suite.options();
            let names: Vec<String> = if systems.is_empty() {
                bundled::SYSTEMS.iter().map(|(n, _)| n.to_string()).collect()
            } else {
                systems
            };
            let mut ok = true;
            for name in &names {
                let cfg = load_system(name)?;
                let results = suites::check_all(&cfg, &opts)?;
                ok &= report_suites(&mut out, &cfg.name, &results);
            }
            let _ = writeln!(out, "{}", if ok { "all checks passed" } else { "some checks FAILED" });
            if !ok {
                return Err(Failure::Check(out));
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            if m.ends_with('\n') {
                print!("{m}");
            } else {
                eprintln!("error: {m}");
            }
            ExitCode::FAILURE
        }
    }
}
