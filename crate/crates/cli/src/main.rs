use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use fiberhom_cli::commands::execute;
use fiberhom_cli::config::{load_document, parse_assignment, resolve, set_path};
use toml::{Table, Value};

/// Effective coefficients of high-contrast fiber composites.
///
/// Every command reads an optional TOML configuration; typed flags and
/// `--set KEY=VALUE` override its keys, in that order.
#[derive(Parser, Debug)]
#[command(name = "fiberhom", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output file (standard output by default).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Solver history file.
    #[arg(long, global = true)]
    diagnostics: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the solver history (iteration, energy, gradient norm).
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Override a configuration key, e.g. `--set mesh.h=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Capacity of the fiber cross-section in the matrix.
    Cap(CapArgs),
    /// Homogenized fiber energy from the cross-section cell problem.
    Cell(CellArgs),
    /// Soft-matrix capacity density on the periodic cell.
    SoftCell(SoftCellArgs),
    /// Classify a scaling family into its limit regime (JSON).
    Regime,
    /// Solve the one-dimensional limit fiber problem.
    Limit1d(Limit1dArgs),
    /// Run a command over a list of values of one key.
    Sweep(SweepArgs),
    /// Run the verification checks and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Default)]
struct DensityArgs {
    /// Matrix density kind: isotropic, p_norm, aniso_example.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args, Debug)]
struct CapArgs {
    #[command(flatten)]
    density: DensityArgs,
    /// Cross-section: `disc` or `square`.
    #[arg(long)]
    section: Option<String>,
    /// Translation `a1,a2,a3`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    a: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    zeta: Option<f64>,
    /// Radii, or exponents k for the p2_ladder mode.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
    /// single, p2_ladder, radius_ladder, plane_limit or decay.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    outer_radius: Option<f64>,
}

#[derive(Args, Debug)]
struct CellArgs {
    /// finite_k or finite_kappa.
    #[arg(long)]
    regime: Option<String>,
    /// k or κ.
    #[arg(long)]
    coefficient: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    /// Load vector, repeatable, e.g. `--load 1,0`.
    #[arg(long, allow_hyphen_values = true)]
    load: Vec<String>,
}

#[derive(Args, Debug)]
struct SoftCellArgs {
    #[command(flatten)]
    density: DensityArgs,
    #[arg(long)]
    h: Option<f64>,
    /// Load `a1,a2,a3,zeta`, repeatable.
    #[arg(long, allow_hyphen_values = true)]
    load: Vec<String>,
}

#[derive(Args, Debug)]
struct Limit1dArgs {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Command run at each point.
    #[arg(long)]
    target: Option<String>,
    /// Dotted key to vary.
    #[arg(long)]
    parameter: Option<String>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Option<Vec<String>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// all, isotropic, capacity, cell, fiber or regime.
    #[arg(long)]
    suite: Option<String>,
    /// Check ids, e.g. `--checks 3,7`.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<u32>>,
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| Value::Float(*x)).collect())
}

fn parse_floats(s: &str) -> Result<Value> {
    let v: std::result::Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    Ok(floats(&v.map_err(|e| anyhow::anyhow!("load `{s}`: {e}"))?))
}

fn apply_density(doc: &mut Table, d: &DensityArgs) -> Result<()> {
    if let Some(kind) = &d.kind {
        let mut t = Table::new();
        t.insert("kind".into(), Value::String(kind.clone()));
        match kind.as_str() {
            "isotropic" => {
                t.insert("lambda".into(), Value::Float(d.lambda.unwrap_or(1.0)));
                t.insert("mu".into(), Value::Float(d.mu.unwrap_or(1.0)));
            }
            "p_norm" => {
                t.insert("c".into(), Value::Float(d.c.unwrap_or(1.0)));
                t.insert("p".into(), Value::Float(d.p.unwrap_or(2.0)));
            }
            _ => {}
        }
        doc.insert("density".into(), Value::Table(t));
        return Ok(());
    }
    for (key, v) in [("p", d.p), ("c", d.c), ("lambda", d.lambda), ("mu", d.mu)] {
        if let Some(v) = v {
            set_path(doc, &format!("density.{key}"), Value::Float(v))?;
        }
    }
    Ok(())
}

fn section_table(name: &str) -> Value {
    let mut t = Table::new();
    t.insert("shape".into(), Value::String(name.into()));
    if name == "square" {
        t.insert("side".into(), Value::Float(1.0));
    }
    Value::Table(t)
}

fn build_document(cli: &Cli) -> Result<Table> {
    let mut doc = load_document(cli.config.as_deref())?;
    let name = match &cli.command {
        Command::Cap(a) => {
            apply_density(&mut doc, &a.density)?;
            if let Some(s) = &a.section {
                doc.insert("section".into(), section_table(s));
            }
            if let Some(v) = &a.a {
                set_path(&mut doc, "cap.a", floats(v))?;
            }
            if let Some(z) = a.zeta {
                set_path(&mut doc, "cap.zeta", Value::Float(z))?;
            }
            if let Some(l) = &a.ladder {
                set_path(&mut doc, "cap.ladder", floats(l))?;
            }
            if let Some(m) = &a.mode {
                set_path(&mut doc, "cap.mode", Value::String(m.clone()))?;
            }
            if let Some(h) = a.h {
                set_path(&mut doc, "mesh.h", Value::Float(h))?;
            }
            if let Some(r) = a.outer_radius {
                set_path(&mut doc, "cap.outer_radius", Value::Float(r))?;
            }
            "cap"
        }
        Command::Cell(a) => {
            if let Some(r) = &a.regime {
                set_path(&mut doc, "cell.regime", Value::String(r.clone()))?;
            }
            if let Some(k) = a.coefficient {
                set_path(&mut doc, "cell.coefficient", Value::Float(k))?;
            }
            if let Some(h) = a.h {
                set_path(&mut doc, "mesh.h", Value::Float(h))?;
            }
            if !a.load.is_empty() {
                let loads = a.load.iter().map(|s| parse_floats(s)).collect::<Result<Vec<_>>>()?;
                set_path(&mut doc, "cell.loads", Value::Array(loads))?;
            }
            "cell"
        }
        Command::SoftCell(a) => {
            apply_density(&mut doc, &a.density)?;
            if let Some(h) = a.h {
                set_path(&mut doc, "mesh.h", Value::Float(h))?;
            }
            if !a.load.is_empty() {
                let loads = a.load.iter().map(|s| parse_floats(s)).collect::<Result<Vec<_>>>()?;
                set_path(&mut doc, "soft_cell.loads", Value::Array(loads))?;
            }
            "soft-cell"
        }
        Command::Regime => "regime",
        Command::Limit1d(a) => {
            if let Some(n) = a.nodes {
                set_path(&mut doc, "limit1d.nodes", Value::Integer(n as i64))?;
            }
            if let Some(l) = a.length {
                set_path(&mut doc, "limit1d.length", Value::Float(l))?;
            }
            "limit1d"
        }
        Command::Sweep(a) => {
            if let Some(t) = &a.target {
                set_path(&mut doc, "sweep.command", Value::String(t.clone()))?;
            }
            if let Some(p) = &a.parameter {
                set_path(&mut doc, "sweep.parameter", Value::String(p.clone()))?;
            }
            if let Some(vs) = &a.values {
                let vals = vs.iter().map(|s| fiberhom_cli::config::parse_value(s)).collect();
                set_path(&mut doc, "sweep.values", Value::Array(vals))?;
            }
            if let Some(d) = &a.out_dir {
                set_path(&mut doc, "sweep.out_dir", Value::String(d.to_string_lossy().into_owned()))?;
            }
            "sweep"
        }
        Command::Verify(a) => {
            if let Some(s) = &a.suite {
                set_path(&mut doc, "verify.suite", Value::String(s.clone()))?;
            }
            if let Some(c) = &a.checks {
                let ids = c.iter().map(|i| Value::Integer(*i as i64)).collect();
                set_path(&mut doc, "verify.checks", Value::Array(ids))?;
            }
            "verify"
        }
    };
    doc.insert("command".into(), Value::String(name.into()));
    if let Some(o) = &cli.output {
        doc.insert("output".into(), Value::String(o.to_string_lossy().into_owned()));
    }
    if let Some(d) = &cli.diagnostics {
        doc.insert("diagnostics".into(), Value::String(d.to_string_lossy().into_owned()));
    }
    if let Some(j) = cli.jobs {
        doc.insert("jobs".into(), Value::Integer(j as i64));
    }
    if let Some(s) = cli.seed {
        doc.insert("seed".into(), Value::Integer(s as i64));
    }
    if cli.verbose {
        doc.insert("verbose".into(), Value::Boolean(true));
    }
    for s in &cli.set {
        let (k, v) = parse_assignment(s)?;
        set_path(&mut doc, &k, v)?;
    }
    Ok(doc)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> Result<i32> {
        let resolved = resolve(build_document(&cli)?)?;
        if cli.print_config {
            print!("{}", toml::to_string(&resolved.config)?);
            return Ok(0);
        }
        if let Some(j) = resolved.config.jobs {
            rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
        }
        execute(&resolved)
    })();
    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
