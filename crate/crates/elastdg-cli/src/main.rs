use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elastdg::assembly::{assemble, Formulation, MethodConfig, Param};
use elastdg::convergence_lab::{
    preset, preset_names, run_limit_study, run_locking_study, run_study, ErrorReport, LimitKind, StudyConfig,
};
use elastdg::elasticity_model::{ManufacturedCase, Material};
use elastdg::error::StudyError;
use elastdg::fe_spaces::{build_spaces, Alpha};
use elastdg::mesh::{BoundaryRule, Mesh};

#[derive(Parser)]
#[command(name = "elastdg", version, about = "Convergence studies for four-field DG elasticity discretizations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence table for one method over a range of levels.
    Study(StudyArgs),
    /// Distance to the mixed or primal limit as the parameters vanish.
    Limit(LimitArgs),
    /// The H(div) method over several Poisson ratios.
    Locking(LockingArgs),
    /// Convergence table for a named method, e.g. new-hdiv-k0.
    Preset(PresetArgs),
}

#[derive(Args)]
struct MaterialArgs {
    #[arg(long, default_value_t = 0.4)]
    nu: f64,
    #[arg(long = "E", default_value_t = 1.0)]
    young: f64,
}

#[derive(Args)]
struct Output {
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the finest mesh here.
    #[arg(long)]
    mesh_dump: Option<PathBuf>,
    /// Write the finest system matrix here as `row col value` lines.
    #[arg(long)]
    matrix_dump: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value = "four_field_h1")]
    formulation: Formulation,
    #[arg(long, default_value = "0,1,1,0")]
    alpha: Alpha,
    /// `rho,p` for the displacement-trace closure, value rho * h^p.
    #[arg(long, default_value = "1,1", allow_hyphen_values = true)]
    eta: Param,
    /// `rho,p` for the stress-trace closure.
    #[arg(long, default_value = "1,-1", allow_hyphen_values = true)]
    tau: Param,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[command(flatten)]
    material: MaterialArgs,
    #[arg(long, default_value = "2..6", value_parser = parse_levels)]
    levels: RangeInclusive<u32>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, default_value = "mixed")]
    kind: LimitKind,
    /// Defaults to 1,0,0,1 (mixed) or 0,1,1,0 (primal).
    #[arg(long)]
    alpha: Option<Alpha>,
    #[arg(long, default_value_t = 4)]
    level: u32,
    #[arg(long, value_delimiter = ',', default_value = "1,0.25,0.0625")]
    rho: Vec<f64>,
    #[command(flatten)]
    material: MaterialArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LockingArgs {
    #[arg(long, default_value = "1,0,0,1")]
    alpha: Alpha,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.49,0.499,0.4999")]
    nus: Vec<f64>,
    #[arg(long = "E", default_value_t = 1.0)]
    young: f64,
    #[arg(long, default_value = "2..6", value_parser = parse_levels)]
    levels: RangeInclusive<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PresetArgs {
    /// Preset name; `list` prints the available families.
    name: String,
    #[command(flatten)]
    material: MaterialArgs,
    #[arg(long, default_value = "2..6", value_parser = parse_levels)]
    levels: RangeInclusive<u32>,
    #[command(flatten)]
    output: Output,
}

fn parse_levels(s: &str) -> Result<RangeInclusive<u32>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected lmin..lmax, got {s:?}"))?;
    let a: u32 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok(a..=b)
}

fn sink(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn summarize(report: &ErrorReport) {
    let names = ["sigma", "divsigma", "u", "strain"];
    let rates = report.final_rates();
    let parts: Vec<String> = names
        .iter()
        .zip(rates)
        .map(|(n, r)| match r {
            Some(r) => format!("{n} {r:.3}"),
            None => format!("{n} -"),
        })
        .collect();
    eprintln!("final rates: {}", parts.join(", "));
    if report.any_singular() {
        eprintln!("some levels are singular");
    }
}

fn dumps(method: &MethodConfig, level: u32, output: &Output) -> Result<(), StudyError> {
    if output.mesh_dump.is_none() && output.matrix_dump.is_none() {
        return Ok(());
    }
    let mesh = Mesh::build_uniform(level, BoundaryRule::all_dirichlet())?;
    if let Some(p) = &output.mesh_dump {
        mesh.write_dump(BufWriter::new(File::create(p)?))?;
    }
    if let Some(p) = &output.matrix_dump {
        let spaces = build_spaces(&mesh, method.alpha);
        let case = ManufacturedCase::new(method.material);
        let f = |x| case.f(x);
        let sys = assemble(&mesh, &spaces, method, &f)?;
        sys.write_matrix_dump(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn study(method: MethodConfig, levels: RangeInclusive<u32>, output: &Output) -> Result<(), StudyError> {
    for w in method.regime_warnings() {
        eprintln!("warning: {w}");
    }
    let last = *levels.end();
    let report = run_study(&StudyConfig::new(method.clone(), levels))?;
    let mut out = sink(&output.out)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    summarize(&report);
    dumps(&method, last, output)
}

fn run(cli: Cli) -> Result<(), StudyError> {
    match cli.command {
        Command::Study(a) => {
            let material = Material::new(a.material.young, a.material.nu)?;
            let method = MethodConfig::new(a.formulation, a.alpha, a.eta, a.tau, a.gamma, material);
            study(method, a.levels, &a.output)
        }
        Command::Preset(a) => {
            if a.name == "list" {
                for n in preset_names() {
                    println!("{n}");
                }
                return Ok(());
            }
            let material = Material::new(a.material.young, a.material.nu)?;
            let p = preset(&a.name, material)?;
            eprintln!("{}: {} alpha=({})", p.name, p.method.formulation, p.method.alpha);
            study(p.method, a.levels, &a.output)
        }
        Command::Limit(a) => {
            let material = Material::new(a.material.young, a.material.nu)?;
            let alpha = a.alpha.unwrap_or(a.kind.default_alpha());
            let report = run_limit_study(a.kind, alpha, material, a.level, &a.rho)?;
            let mut out = sink(&a.out)?;
            report.write_csv(&mut out)?;
            out.flush()?;
            Ok(())
        }
        Command::Locking(a) => {
            let material = Material::new(a.young, a.nus.first().copied().unwrap_or(0.4))?;
            let method = MethodConfig::hdiv(Formulation::FourFieldHdiv, a.alpha, 1.0, 1.0, 1.0, material);
            let report = run_locking_study(&StudyConfig::new(method, a.levels), &a.nus)?;
            let mut out = sink(&a.out)?;
            report.write_csv(&mut out)?;
            out.flush()?;
            let last = report.reports.first().map_or(0, |r| r.rows.len().saturating_sub(1));
            if let Some((s, d)) = report.spread(last) {
                eprintln!("spread at the finest level: sigma {s:.4}, divsigma {d:.4}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
