use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use spectral_flow::experiments::{
    emit_crossings_csv, emit_summary_csv, emit_sweep_csv, run_suite, Kind, Scenario, Suite,
    SuiteReport,
};
use spectral_flow::FlowOptions;

#[derive(Parser)]
#[command(name = "sflab", version, about = "Run spectral flow scenarios and suites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// CSV table to write. Defaults to sweep for getzler-sweep, crossings
    /// for circle-sf and summary otherwise.
    #[arg(long, global = true, value_enum)]
    table: Option<Table>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Seed for randomized checks; overrides the suite seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Summary,
    Sweep,
    Crossings,
}

#[derive(Args)]
struct Single {
    /// Scenario parameters as JSON, or `@path` to read them from a file.
    /// Merged over the defaults for the subcommand.
    #[arg(long)]
    params: Option<String>,
    /// Expected value of the left-hand side.
    #[arg(long)]
    expect: Option<f64>,
    #[arg(long, default_value_t = 0.0, requires = "expect")]
    tolerance: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral flow of the boundary operator under a gauge loop.
    CircleSf(Single),
    /// Half-difference of the boundary flows against the cylinder flow.
    CylinderTheorem(Single),
    /// Cobordism checks on the cylinder with matching boundary signs.
    Cobordism(Single),
    /// Heat-trace estimate over a grid of scales.
    GetzlerSweep(Single),
    /// Cutoff, image-kernel and conjugation identities on the half cylinder.
    HalfcylChecks(Single),
    /// Invertibility of the graded deformation and structural checks.
    GammaCheck(Single),
    /// Run every scenario in a JSON suite file.
    Suite { file: PathBuf },
}

struct ConfigError(String);

fn defaults(kind: Kind) -> Value {
    match kind {
        Kind::CircleSf | Kind::GetzlerSweep => json!({"n_theta": 33, "gauge": {"windings": [1]}}),
        Kind::CylinderTheorem => {
            json!({"n_theta": 33, "n_x": 32, "f0": [1], "fl": [-1], "gauge": {"windings": [1]}})
        }
        Kind::Cobordism | Kind::GammaCheck => {
            json!({"n_theta": 33, "n_x": 32, "f0": [1], "fl": [1], "gauge": {"windings": [1]}})
        }
        Kind::HalfcylChecks => json!({}),
    }
}

fn read_params(arg: &str) -> Result<Value, ConfigError> {
    let text = match arg.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).map_err(|e| ConfigError(format!("{path}: {e}")))?,
        None => arg.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("params: {e}")))
}

fn single(kind: Kind, name: &str, a: &Single, seed: Option<u64>) -> Result<Suite, ConfigError> {
    let mut params = defaults(kind);
    if let Some(arg) = &a.params {
        match read_params(arg)? {
            Value::Object(given) => {
                let obj = params.as_object_mut().expect("defaults are objects");
                obj.extend(given);
            }
            _ => return Err(ConfigError("params must be a JSON object".into())),
        }
    }
    let mut s = Scenario::new(name, kind, params);
    if let Some(v) = a.expect {
        s = s.with_expected(v, a.tolerance);
    }
    Ok(Suite {
        name: name.to_string(),
        seed,
        scenarios: vec![s],
    })
}

fn load_suite(path: &PathBuf, seed: Option<u64>) -> Result<Suite, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let mut suite = Suite::from_json(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    if seed.is_some() {
        suite.seed = seed;
    }
    Ok(suite)
}

fn default_table(suite: &Suite) -> Table {
    match suite.scenarios.as_slice() {
        [s] if s.kind == Kind::GetzlerSweep => Table::Sweep,
        [s] if s.kind == Kind::CircleSf => Table::Crossings,
        _ => Table::Summary,
    }
}

fn write_report(report: &SuiteReport, c: &Common, table: Table, out: &mut dyn Write) -> spectral_flow::Result<()> {
    match c.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, report)?;
            writeln!(out)?;
        }
        Format::Csv => match table {
            Table::Summary => emit_summary_csv(&report.records, out)?,
            Table::Sweep => {
                let pts: Vec<_> = report.records.iter().flat_map(|r| r.sweep.clone()).collect();
                emit_sweep_csv(&pts, out)?
            }
            Table::Crossings => {
                let cs: Vec<_> = report.records.iter().flat_map(|r| r.crossings.clone()).collect();
                emit_crossings_csv(&cs, out)?
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let built = match &cli.command {
        Command::CircleSf(a) => single(Kind::CircleSf, "circle-sf", a, c.seed),
        Command::CylinderTheorem(a) => single(Kind::CylinderTheorem, "cylinder-theorem", a, c.seed),
        Command::Cobordism(a) => single(Kind::Cobordism, "cobordism", a, c.seed),
        Command::GetzlerSweep(a) => single(Kind::GetzlerSweep, "getzler-sweep", a, c.seed),
        Command::HalfcylChecks(a) => single(Kind::HalfcylChecks, "halfcyl-checks", a, c.seed),
        Command::GammaCheck(a) => single(Kind::GammaCheck, "gamma-check", a, c.seed),
        Command::Suite { file } => load_suite(file, c.seed),
    };
    let suite = match built.and_then(|s| s.validate().map(|_| s).map_err(|e| ConfigError(e.to_string()))) {
        Ok(s) => s,
        Err(ConfigError(msg)) => {
            eprintln!("sflab: {msg}");
            return ExitCode::from(2);
        }
    };

    let report = match run_suite(&suite, c.workers, &FlowOptions::default()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("sflab: {e}");
            return ExitCode::from(1);
        }
    };
    for r in &report.records {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_else(|| "-".into());
        let tag = if r.pass { "PASS" } else { "FAIL" };
        eprintln!("{tag}  {}  lhs={} rhs={}  {:.2}s", r.scenario, fmt(r.lhs), fmt(r.rhs), r.wall_time_s);
        if let Some(err) = &r.error {
            eprintln!("      {err}");
        }
        for chk in r.checks.iter().filter(|k| !k.pass) {
            eprintln!("      {}: {:.3e} (tol {:.1e})", chk.check, chk.residual, chk.tolerance);
        }
    }
    for name in &report.convention_flips {
        eprintln!("sign convention differs from calibration in {name}");
    }

    let table = c.table.unwrap_or_else(|| default_table(&suite));
    let written = match &c.out {
        Some(path) => fs::File::create(path)
            .map_err(spectral_flow::Error::from)
            .and_then(|f| write_report(&report, c, table, &mut io::BufWriter::new(f))),
        None => write_report(&report, c, table, &mut io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("sflab: {e}");
        return ExitCode::from(2);
    }
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
