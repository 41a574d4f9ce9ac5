use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lagsym::constraints::BaseConvention;
use lagsym::dynamics::{assemble_soelvf, integrate_flow, FlowOptions, GaugeTerm};
use lagsym::examples::{analyze, builtin, reproduce_table1, BUILTIN_NAMES};
use lagsym::report::build_report;
use lagsym::{CompiledLagrangian, LagError, PhasePoint, Settings, SystemSpec};

#[derive(Parser)]
#[command(
    name = "lagsym",
    version,
    about = "Constraint and symmetry analysis of singular Lagrangians"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Sampling seed
    #[arg(long, global = true, env = "LAGSYM_SEED")]
    seed: Option<u64>,
    /// Samples per identity test
    #[arg(long, global = true, default_value_t = 64)]
    samples: usize,
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol_rank: f64,
    #[arg(long, global = true, default_value_t = 1e-8)]
    eps_id: f64,
    #[arg(long, global = true, default_value_t = 10)]
    max_order: usize,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write output here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    /// Horizontal part v
    Velocity,
    /// Horizontal part with kernel components of v removed
    Reduced,
}

#[derive(Subcommand)]
enum Command {
    /// Full analysis report of a system (file path or built-in name)
    Analyze { spec: String },
    /// Integrate the assembled field from a projected initial point
    Integrate {
        spec: String,
        /// Initial positions, comma separated (default: a sampled surface point)
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        q0: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        v0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.1)]
        dt: f64,
        /// `coefficient : d1, ..., dD`; repeatable
        #[arg(long)]
        gauge: Vec<String>,
        #[arg(long, value_enum, default_value_t = Base::Velocity)]
        base: Base,
        #[arg(long)]
        project_each_step: bool,
    },
    /// Reproduce the symmetry table of the built-in examples
    Table1,
}

fn settings(c: &Common) -> Settings {
    let mut s = Settings::default();
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    s.samples = c.samples;
    s.tol_rank = c.tol_rank;
    s.eps_id = c.eps_id;
    s.max_order = c.max_order;
    s
}

fn load(spec: &str) -> Result<CompiledLagrangian, LagError> {
    let path = Path::new(spec);
    if !path.exists() && BUILTIN_NAMES.contains(&spec) {
        return Ok(builtin(spec)?.compile());
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| LagError::Config(format!("cannot read {spec}: {e}")))?;
    Ok(CompiledLagrangian::new(SystemSpec::parse(&text)?))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), LagError> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| LagError::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, LagError> {
    let s = settings(&cli.common);
    s.validate()?;
    let out = &cli.common.out;
    match cli.command {
        Command::Analyze { spec } => {
            let sys = load(&spec)?;
            let report = build_report(&sys, &s)?;
            let text = match cli.common.format.unwrap_or(Format::Json) {
                Format::Text => report.to_text(),
                _ => report.to_json() + "\n",
            };
            emit(out, &text)?;
        }
        Command::Integrate {
            spec,
            q0,
            v0,
            t_end,
            dt,
            gauge,
            base,
            project_each_step,
        } => {
            let sys = load(&spec)?;
            let analysis = analyze(&sys, &s)?;
            let ledger = analysis.ledger;
            let gauge = gauge
                .iter()
                .map(|g| GaugeTerm::parse(&sys, g))
                .collect::<Result<Vec<_>, _>>()?;
            let base = match base {
                Base::Velocity => BaseConvention::Velocity,
                Base::Reduced => BaseConvention::Reduced,
            };
            let sv = assemble_soelvf(&sys, &ledger, &s, base, gauge)?;
            let start = match (q0, v0) {
                (None, None) => ledger
                    .surface_points
                    .first()
                    .cloned()
                    .ok_or_else(|| LagError::Config("no surface point to start from".into()))?,
                (q, v) => {
                    let d = sys.dim();
                    let q = q.unwrap_or_else(|| vec![0.0; d]);
                    let v = v.unwrap_or_else(|| vec![0.0; d]);
                    if q.len() != d || v.len() != d {
                        return Err(LagError::Config(format!(
                            "initial point needs {d} positions and velocities"
                        )));
                    }
                    PhasePoint::new(q, v)
                }
            };
            let u0 = sv.project(&start, &s)?;
            let opts = FlowOptions {
                t_end,
                dt,
                project_each_step,
                ..FlowOptions::default()
            };
            let traj = integrate_flow(&sv, &u0, &opts, &s)?;
            let text = match cli.common.format.unwrap_or(Format::Csv) {
                Format::Json => {
                    serde_json::to_string_pretty(&traj).expect("trajectory serializes") + "\n"
                }
                _ => traj.to_csv(),
            };
            emit(out, &text)?;
            let sm = &traj.summary;
            eprintln!(
                "max energy drift {:.3e}, max constraint {:.3e}, min basis overlap {:.6}, {} steps",
                sm.max_energy_drift, sm.max_constraint, sm.min_basis_overlap, sm.accepted_steps
            );
        }
        Command::Table1 => {
            let rep = reproduce_table1(&s);
            let text = match cli.common.format.unwrap_or(Format::Text) {
                Format::Json => {
                    serde_json::to_string_pretty(&rep).expect("table serializes") + "\n"
                }
                _ => rep.to_text(),
            };
            emit(out, &text)?;
            if !rep.all_match {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
