use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{write_duties_csv, write_waveform_csv};
use super::report::{report, Report};
use super::{ControlSpec, Scenario, ScenarioError};
use crate::duty::{DutyCommand, DutyError};
use crate::sim::{simulate, DutySource, PeriodObservation, SimError, Waveform};
use crate::topology::ConverterParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Settled,
    NotSettled,
    Diverged,
    Infeasible,
    Invalid,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Settled => 0,
            RunStatus::Invalid => 2,
            RunStatus::Diverged => 3,
            RunStatus::NotSettled => 4,
            RunStatus::Infeasible => 5,
        }
    }

    pub fn of_error(e: &ScenarioError) -> Self {
        match e {
            ScenarioError::Sim(s) => match s {
                SimError::Diverged { .. } | SimError::NumericalFailure(_) => RunStatus::Diverged,
                SimError::Infeasible(_) | SimError::Duty(DutyError::Infeasible(_)) => {
                    RunStatus::Infeasible
                }
                _ => RunStatus::Invalid,
            },
            _ => RunStatus::Invalid,
        }
    }
}

struct OpenLoop {
    duties: DutyCommand,
    param_changes: Vec<(f64, ConverterParams)>,
    next: usize,
}

impl DutySource for OpenLoop {
    fn next_period(&mut self, _obs: &PeriodObservation<'_>) -> Result<DutyCommand, SimError> {
        Ok(self.duties)
    }

    fn param_update(&mut self, start_time: f64) -> Option<ConverterParams> {
        let mut latest = None;
        while let Some((at, p)) = self.param_changes.get(self.next) {
            if *at > start_time + 1e-9 {
                break;
            }
            latest = Some(*p);
            self.next += 1;
        }
        latest
    }
}

#[derive(Debug, Clone)]
pub struct Execution {
    pub waveform: Waveform,
    pub report: Report,
}

/// Simulates a validated scenario and analyses the result, without I/O.
pub fn execute(scenario: &Scenario) -> Result<Execution, ScenarioError> {
    let initial = scenario.initial_state()?;
    let settings = scenario.simulation.simulation();
    let waveform = match &scenario.control {
        ControlSpec::OpenLoop { duties } => {
            let mut src = OpenLoop {
                duties: *duties,
                param_changes: scenario.param_timeline(),
                next: 0,
            };
            simulate(&scenario.converter, &mut src, &settings, &initial)?
        }
        ControlSpec::ClosedLoop(_) => {
            let mut src = scenario
                .closed_loop_source()?
                .expect("closed-loop control builds a source");
            simulate(&scenario.converter, &mut src, &settings, &initial)?
        }
    };
    let report = report(&waveform, scenario)?;
    Ok(Execution { waveform, report })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: String,
    pub status: RunStatus,
    /// Error text for runs that did not produce a report.
    pub message: Option<String>,
    pub report: Option<Report>,
    pub out_dir: PathBuf,
}

fn write_outputs(dir: &Path, exec: &Execution) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir).map_err(|e| ScenarioError::io(dir, e))?;
    write_waveform_csv(&dir.join("waveform.csv"), &exec.waveform)?;
    write_duties_csv(&dir.join("duties.csv"), &exec.waveform.periods)?;
    let json = dir.join("report.json");
    std::fs::write(&json, exec.report.to_json()).map_err(|e| ScenarioError::io(&json, e))?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, exec.report.to_text()).map_err(|e| ScenarioError::io(&txt, e))?;
    Ok(())
}

/// Runs one scenario and writes `waveform.csv`, `duties.csv`, `report.json`
/// and `report.txt` into `out_dir`. Simulation failures come back as a
/// status; only I/O failures are errors.
pub fn run(scenario: &Scenario, out_dir: &Path) -> Result<RunOutcome, ScenarioError> {
    match execute(scenario) {
        Ok(exec) => {
            write_outputs(out_dir, &exec)?;
            let status = if exec.report.settled {
                RunStatus::Settled
            } else {
                RunStatus::NotSettled
            };
            Ok(RunOutcome {
                scenario: scenario.name.clone(),
                status,
                message: None,
                report: Some(exec.report),
                out_dir: out_dir.to_path_buf(),
            })
        }
        Err(e @ (ScenarioError::Io { .. } | ScenarioError::Csv { .. })) => Err(e),
        Err(e) => Ok(RunOutcome {
            scenario: scenario.name.clone(),
            status: RunStatus::of_error(&e),
            message: Some(e.to_string()),
            report: None,
            out_dir: out_dir.to_path_buf(),
        }),
    }
}

/// Output directory of each scenario under `root`: its name, suffixed with
/// its position when names repeat.
fn output_dirs(scenarios: &[Scenario], root: &Path) -> Vec<PathBuf> {
    scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let repeated = scenarios.iter().filter(|o| o.name == s.name).count() > 1;
            if repeated {
                root.join(format!("{}-{}", s.name, i + 1))
            } else {
                root.join(&s.name)
            }
        })
        .collect()
}

/// Runs every scenario into its own subdirectory of `root`, in parallel when
/// asked. Results come back in input order.
pub fn run_many(
    scenarios: &[Scenario],
    root: &Path,
    parallel: bool,
) -> Vec<Result<RunOutcome, ScenarioError>> {
    let dirs = output_dirs(scenarios, root);
    if parallel {
        scenarios
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(s, d)| run(s, d))
            .collect()
    } else {
        scenarios
            .iter()
            .zip(&dirs)
            .map(|(s, d)| run(s, d))
            .collect()
    }
}
