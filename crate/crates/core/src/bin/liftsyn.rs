use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use liftsyn::cli::{self, ExcitationKind, MaskSpec, SimulateArgs};

#[derive(Parser)]
#[command(name = "liftsyn", version, about = "Gain-scheduled H2 synthesis for structured LFR plants")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Exc {
    Initial,
    Impulse,
    Noise,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize and verify a controller for a problem file.
    Synthesize {
        problem: PathBuf,
        #[arg(long, default_value = "controller.json")]
        out: PathBuf,
        /// Certificate path (default: next to the controller).
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Re-check a controller and certificate against the problem.
    Verify {
        problem: PathBuf,
        controller: PathBuf,
        certificate: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Synthesis over a parameter grid of a plant family.
    Sweep {
        family: PathBuf,
        /// a0:a1:steps
        #[arg(long)]
        grid: Option<String>,
        /// Comma-separated: full, block-diagonal
        #[arg(long, value_delimiter = ',')]
        masks: Option<Vec<String>>,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Simulate the closed loop under a random switching parameter.
    Simulate {
        problem: PathBuf,
        controller: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0)]
        period: f64,
        #[arg(long, value_enum, default_value = "initial")]
        excitation: Exc,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    // clap would exit with 2 on usage errors, which means "infeasible" here
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { cli::EXIT_INPUT as u8 } else { 0 });
        }
    };
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let code = match args.cmd {
        Cmd::Synthesize { problem, out: path, certificate } => {
            cli::cmd_synthesize(&problem, &path, certificate.as_deref(), &mut out, &mut err)
        }
        Cmd::Verify { problem, controller, certificate, samples } => {
            cli::cmd_verify(&problem, &controller, &certificate, samples, &mut out, &mut err)
        }
        Cmd::Sweep { family, grid, masks, out: path, plot_data } => {
            let masks = match masks.map(|m| m.iter().map(|s| MaskSpec::parse(s)).collect::<Result<Vec<_>, _>>()).transpose() {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(cli::EXIT_INPUT as u8);
                }
            };
            cli::cmd_sweep(&family, grid.as_deref(), masks.as_deref(), &path, plot_data.as_deref(), &mut err)
        }
        Cmd::Simulate { problem, controller, seed, horizon, period, excitation, out: path, summary } => {
            let excitation = match excitation {
                Exc::Initial => ExcitationKind::Initial,
                Exc::Impulse => ExcitationKind::Impulse,
                Exc::Noise => ExcitationKind::Noise,
            };
            let a = SimulateArgs { seed, horizon, period, excitation };
            cli::cmd_simulate(&problem, &controller, &a, &path, summary.as_deref(), &mut out, &mut err)
        }
    };
    ExitCode::from(code as u8)
}
