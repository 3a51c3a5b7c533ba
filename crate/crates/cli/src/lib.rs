//! `vloss` command dispatch.
//!
//! Exit codes: 0 success, 1 invalid arguments or model, 2 I/O failure,
//! 3 geometric inversion did not converge (outputs are still written).

use std::ffi::OsString;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use vloss_core::inverse::DEFAULT_GAMMA_CAP;
use vloss_core::{io, validate_model, DeficitModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NON_CONVERGENT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vloss", version, about = "Simulate and compensate central vision loss")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render an Amsler grid.
    Grid {
        #[arg(long)]
        size: usize,
        #[arg(long)]
        spacing: usize,
        #[arg(long)]
        line: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render what the patient perceives of an image.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-distort an image so the perceived result approximates it.
    Compensate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GAMMA_CAP)]
        gamma_cap: f64,
    },
    /// Render the deficit-region mask at a cutoff.
    Region {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the total displacement field as CSV.
    Field {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compensate, re-simulate and report recovery metrics as JSON.
    Roundtrip {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the local diagnostic service on the loopback interface.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        state: PathBuf,
        /// Directory holding a built UI bundle to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<vloss_core::Error> for CliError {
    fn from(e: vloss_core::Error) -> Self {
        match e {
            vloss_core::Error::Param(_)
            | vloss_core::Error::InvalidModel(_)
            | vloss_core::Error::ModelJson(_) => CliError::Invalid(e.to_string()),
            vloss_core::Error::Image(_) | vloss_core::Error::Io { .. } => CliError::Io(e.to_string()),
        }
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let msg = match &e {
                CliError::Invalid(m) | CliError::Io(m) => m,
            };
            eprintln!("error: {msg}");
            e.code()
        }
    }
}

fn load_model(path: &Path) -> Result<DeficitModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read model {}: {e}", path.display())))?;
    let model = DeficitModel::from_json(&text)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let report = validate_model(&model);
    if !report.is_ok() {
        return Err(CliError::Invalid(format!(
            "{}: invalid model: {}",
            path.display(),
            report.violations.join("; ")
        )));
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn non_convergence_code(converged: bool, iterations: usize) -> i32 {
    if converged {
        EXIT_OK
    } else {
        eprintln!("warning: geometric inversion did not converge after {iterations} iterations");
        EXIT_NON_CONVERGENT
    }
}

pub fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Grid {
            size,
            spacing,
            line,
            out,
        } => {
            let img = vloss_core::amsler_grid(size, spacing, line)?;
            io::write_png(&out, &img)?;
            Ok(EXIT_OK)
        }
        Command::Simulate { model, input, out } => {
            let model = load_model(&model)?;
            let img = io::read_png(&input)?;
            io::write_png(&out, &vloss_core::simulate(&model, &img))?;
            Ok(EXIT_OK)
        }
        Command::Compensate {
            model,
            input,
            out,
            gamma_cap,
        } => {
            let model = load_model(&model)?;
            let img = io::read_png(&input)?;
            let comp = vloss_core::compensate(&model, &img, gamma_cap)?;
            io::write_png(&out, &comp.image)?;
            Ok(non_convergence_code(comp.converged(), comp.inversion.iterations))
        }
        Command::Region {
            model,
            lambda,
            size,
            out,
        } => {
            let model = load_model(&model)?;
            io::write_png(&out, &vloss_core::region_mask(&model, lambda, size, size)?)?;
            Ok(EXIT_OK)
        }
        Command::Field { model, grid, out } => {
            let model = load_model(&model)?;
            let field = vloss_core::field_export(&model, grid)?;
            io::write_atomic(&out, field.to_csv().as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Roundtrip {
            model,
            input,
            report,
        } => {
            let model = load_model(&model)?;
            let img = io::read_png(&input)?;
            let rt = vloss_core::roundtrip_report(&model, &img)?;
            let mut body = serde_json::to_string_pretty(&rt).expect("report serialization is infallible");
            body.push('\n');
            io::write_atomic(&report, body.as_bytes())?;
            Ok(non_convergence_code(rt.converged, rt.iterations_used))
        }
        Command::Serve { port, state, ui_dir } => {
            let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
            let runtime = tokio::runtime::Runtime::new()
                .map_err(|e| CliError::Io(format!("cannot start runtime: {e}")))?;
            runtime
                .block_on(vloss_service::serve(addr, state, ui_dir))
                .map_err(|e| CliError::Io(format!("server error: {e}")))?;
            Ok(EXIT_OK)
        }
    }
}
