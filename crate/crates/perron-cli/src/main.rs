use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use perron_cli::{
    cmd_analyze, cmd_example5, cmd_formula, cmd_selftest, cmd_solve, cmd_validate, prepare,
    CliError, Prepared,
};
use perron_core::asympt::FormulaKind;

#[derive(Parser)]
#[command(
    name = "perron",
    version,
    about = "Asymptotic integration of y^(n) + sum (a_i + r_i(t)) y^(i) = 0 with decaying perturbations"
)]
struct Cli {
    /// Path to the TOML run configuration
    #[arg(short, long, global = true, default_value = "perron.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    General,
    Levinson,
    HartmanWintner,
    Refined,
    Ladder,
}

impl From<KindArg> for FormulaKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::General => FormulaKind::General,
            KindArg::Levinson => FormulaKind::Levinson,
            KindArg::HartmanWintner => FormulaKind::HartmanWintner,
            KindArg::Refined => FormulaKind::Refined,
            KindArg::Ladder => FormulaKind::Ladder,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Roots, spectral data, and the contraction certificate
    Analyze,
    /// Picard fixed point for z; writes the derivative stack as CSV
    Solve,
    /// Assemble one asymptotic formula and emit its JSON report
    Formula {
        #[arg(long, value_enum, default_value = "general")]
        kind: KindArg,
    },
    /// Compare the solution against panel-wise reference integration
    Validate,
    /// The quintic golden run with fitted-constant drift checks
    Example5,
    /// Quick built-in identity checks
    Selftest,
}

fn write_artifacts(p: &Prepared, json: &str, csv: Option<&str>) -> Result<(), CliError> {
    match &p.config.output.json_report {
        Some(path) => {
            if let Some(dir) = std::path::Path::new(path).parent() {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, json)?;
        }
        None => println!("{json}"),
    }
    if let Some(body) = csv {
        if let Some(dir) = &p.config.output.csv_dir {
            fs::create_dir_all(dir)?;
            fs::write(format!("{dir}/solution.csv"), body)?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let text = fs::read_to_string(&cli.config).map_err(|e| CliError::Config {
        key: "config".to_string(),
        message: format!("{}: {e}", cli.config.display()),
    })?;
    let p = prepare(&text)?;
    match cli.command {
        Command::Analyze => {
            let json = cmd_analyze(&p)?;
            write_artifacts(&p, &json, None)
        }
        Command::Solve => {
            let (json, csv) = cmd_solve(&p)?;
            write_artifacts(&p, &json, Some(&csv))
        }
        Command::Formula { kind } => {
            let json = cmd_formula(&p, kind.into())?;
            write_artifacts(&p, &json, None)
        }
        Command::Validate => {
            let (json, ok) = cmd_validate(&p)?;
            write_artifacts(&p, &json, None)?;
            if ok {
                Ok(())
            } else {
                Err(CliError::Acceptance("validation checks failed".into()))
            }
        }
        Command::Example5 => {
            let (json, ok) = cmd_example5(&p)?;
            write_artifacts(&p, &json, None)?;
            if ok {
                Ok(())
            } else {
                Err(CliError::Acceptance("golden-run checks failed".into()))
            }
        }
        Command::Selftest => {
            let (json, ok) = cmd_selftest(&p)?;
            write_artifacts(&p, &json, None)?;
            if ok {
                Ok(())
            } else {
                Err(CliError::Acceptance("selftest checks failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
