use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fourport_core::scenario::{
    self, presets, read_duties_csv, read_waveform_csv, RunStatus, Scenario, ScenarioError,
};
use fourport_core::sim::Integrator;

/// Four-port DC-DC converter simulator.
#[derive(Parser)]
#[command(name = "fourport", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Rk4,
    Exact,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenario files or presets, writing one output directory each.
    Run {
        /// Scenario files or preset names.
        #[arg(required = true)]
        scenarios: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        steps_per_period: Option<usize>,
        #[arg(long, value_enum)]
        integrator: Option<IntegratorArg>,
        /// Run scenarios one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// List the bundled presets.
    ListPresets,
    /// Parse and validate a scenario file without running it.
    Validate { file: PathBuf },
    /// Rebuild the steady-state report from a waveform CSV.
    Report {
        waveform: PathBuf,
        /// Scenario file or preset the waveform came from.
        scenario: String,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

const EXIT_VALIDATION: u8 = 2;

fn fail(e: &ScenarioError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(RunStatus::of_error(e).exit_code() as u8)
}

fn load_all(
    args: &[String],
    steps: Option<usize>,
    integrator: Option<IntegratorArg>,
) -> Result<Vec<Scenario>, ScenarioError> {
    args.iter()
        .map(|a| {
            let mut s = scenario::resolve(a)?;
            if let Some(n) = steps {
                s.simulation.steps_per_period = n;
            }
            if let Some(i) = integrator {
                s.simulation.integrator = match i {
                    IntegratorArg::Rk4 => Integrator::FixedStepRK4,
                    IntegratorArg::Exact => Integrator::ExactPiecewise,
                };
            }
            s.validate()?;
            Ok(s)
        })
        .collect()
}

fn cmd_run(
    args: &[String],
    out: &Path,
    steps: Option<usize>,
    integrator: Option<IntegratorArg>,
    sequential: bool,
) -> ExitCode {
    let scenarios = match load_all(args, steps, integrator) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let mut code = 0;
    for result in scenario::run_many(&scenarios, out, !sequential) {
        match result {
            Ok(o) => {
                match &o.report {
                    Some(r) => {
                        let powers: Vec<String> = r
                            .ledger
                            .ports
                            .iter()
                            .map(|p| format!("P{}={:.1} W", p.port, p.power_w))
                            .collect();
                        println!(
                            "{}: {:?} [{}] -> {}",
                            o.scenario,
                            o.status,
                            powers.join(", "),
                            o.out_dir.display()
                        );
                    }
                    None => println!(
                        "{}: {:?}: {}",
                        o.scenario,
                        o.status,
                        o.message.as_deref().unwrap_or("")
                    ),
                }
                if code == 0 {
                    code = o.status.exit_code();
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                if code == 0 {
                    code = 1;
                }
            }
        }
    }
    ExitCode::from(code as u8)
}

fn cmd_report(waveform: &Path, scenario_arg: &str, json: bool) -> ExitCode {
    let s = match scenario::resolve(scenario_arg) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let mut wf = match read_waveform_csv(waveform) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    let duties = waveform.with_file_name("duties.csv");
    if duties.is_file() {
        match read_duties_csv(&duties) {
            Ok(p) => wf.periods = p,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_VALIDATION);
            }
        }
    }
    match scenario::report(&wf, &s) {
        Ok(r) => {
            if json {
                println!("{}", r.to_json());
            } else {
                print!("{}", r.to_text());
            }
            let status = if r.settled {
                RunStatus::Settled
            } else {
                RunStatus::NotSettled
            };
            ExitCode::from(status.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenarios,
            out,
            steps_per_period,
            integrator,
            sequential,
        } => cmd_run(&scenarios, &out, steps_per_period, integrator, sequential),
        Command::ListPresets => {
            for (name, desc) in presets::catalog() {
                println!("{name:<10} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { file } => match scenario::load_scenario(&file) {
            Ok(s) => {
                println!("{}: ok", s.name);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Report {
            waveform,
            scenario,
            json,
        } => cmd_report(&waveform, &scenario, json),
    }
}
