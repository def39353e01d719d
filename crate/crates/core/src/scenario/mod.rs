//! Scenario files, presets, waveform export and reports.
//!
//! A scenario is a TOML document with `[converter]`, `[control]`,
//! `[simulation]` and optional `[[events]]` sections. A top-level
//! `preset = "name"` key pulls in a bundled preset first; every key given
//! explicitly overrides the preset's value, tables merging key by key.

mod io;
pub mod presets;
mod report;
mod run;

pub use io::{read_duties_csv, read_waveform_csv, write_duties_csv, write_waveform_csv, CSV_HEADER};
pub use report::{report, PortLedger, PowerLedger, PredictionRow, Report};
pub use run::{execute, run, run_many, Execution, RunOutcome, RunStatus};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    mode_setpoints_with, ClosedLoopSource, ControlSetpoints, ControllerConfig, GainOverrides,
    HevController, HevMode, ModeTable, NearUnityBand, NominalVoltages, TransferPolicy,
};
use crate::duty::{ClampWindow, DutyCommand};
use crate::sim::{averaged_equilibrium, periodic_steady_state, Integrator, SimError, SimulationSettings};
use crate::topology::{ConverterParams, PortModel, StateVector, TopologyError, PORT_NODE};

const MAX_PRESET_DEPTH: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{origin}{}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default(), key.as_ref().map(|k| format!(" (key `{k}`)")).unwrap_or_default())]
pub struct ParseError {
    pub origin: String,
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid `{key}`: {message}")]
pub struct ValidationError {
    pub key: String,
    pub message: String,
}

impl ValidationError {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ScenarioError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub converter: ConverterParams,
    pub control: ControlSpec,
    pub simulation: RunSettings,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSpec {
    OpenLoop { duties: DutyCommand },
    ClosedLoop(ClosedLoopSpec),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClosedLoopSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ModeEntry>,
    /// Explicit setpoints in force from t = 0 until the first schedule entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoints: Option<ControlSetpoints>,
    #[serde(default)]
    pub transfer_policy: TransferPolicy,
    #[serde(default)]
    pub nominal: NominalVoltages,
    #[serde(default)]
    pub modes: ModeTable,
    #[serde(default)]
    pub near_unity: NearUnityBand,
    #[serde(default)]
    pub window: ClampWindow,
    #[serde(default)]
    pub gains: GainOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub at: f64,
    pub demand_w: f64,
    #[serde(flatten)]
    pub mode: HevMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: f64,
    #[serde(flatten)]
    pub change: EventChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventChange {
    /// New dc-link power demand for the active mode.
    Demand { demand_w: f64 },
    /// Replace the element on a port (1-based).
    Load { port: usize, model: PortModel },
    /// Explicit setpoints, in force until the next schedule entry.
    Setpoints { setpoints: ControlSetpoints },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Currents zero, storage at its initial voltage, other nodes at zero.
    #[default]
    Rest,
    /// Equilibrium of the averaged model (open loop only).
    Equilibrium,
    /// Start of the exact periodic orbit (open loop only).
    Periodic,
    /// Rest, with unpinned non-storage ports charged to their nominal
    /// closed-loop voltages.
    Precharged,
    State(StateVector),
}

fn default_steps() -> usize {
    1000
}
fn default_integrator() -> Integrator {
    Integrator::ExactPiecewise
}
fn default_decimation() -> usize {
    10
}
fn default_settle() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub duration: f64,
    #[serde(default = "default_steps")]
    pub steps_per_period: usize,
    #[serde(default = "default_integrator")]
    pub integrator: Integrator,
    #[serde(default = "default_decimation")]
    pub record_decimation: usize,
    /// Periods averaged for the steady-state report.
    #[serde(default = "default_settle")]
    pub settle_periods: usize,
    #[serde(default)]
    pub initial: InitialState,
}

impl RunSettings {
    pub fn simulation(&self) -> SimulationSettings {
        SimulationSettings {
            duration: self.duration,
            steps_per_period: self.steps_per_period,
            integrator: self.integrator,
            record_decimation: self.record_decimation,
            log_steps: false,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ValidationError> {
        self.converter
            .validate()
            .map_err(|e| topology_error("converter", e))?;
        let sim = &self.simulation;
        if !(sim.duration > 0.0 && sim.duration.is_finite()) {
            return Err(ValidationError::new(
                "simulation.duration",
                format!("must be > 0 (got {})", sim.duration),
            ));
        }
        sim.simulation()
            .validate()
            .map_err(|e| ValidationError::new("simulation", e.to_string()))?;
        if sim.settle_periods == 0 {
            return Err(ValidationError::new("simulation.settle_periods", "must be >= 1"));
        }
        let periods = sim.simulation().periods(self.converter.f_sw);
        if periods < 2 * sim.settle_periods {
            return Err(ValidationError::new(
                "simulation.duration",
                format!(
                    "{periods} periods simulated, the steady-state check needs at least {}",
                    2 * sim.settle_periods
                ),
            ));
        }

        match &self.control {
            ControlSpec::OpenLoop { duties } => {
                duties
                    .validate()
                    .map_err(|e| ValidationError::new("control.duties", e.to_string()))?;
            }
            ControlSpec::ClosedLoop(cl) => self.validate_closed_loop(cl)?,
        }

        let mut last = 0.0;
        for (i, ev) in self.events.iter().enumerate() {
            let key = format!("events[{i}]");
            if !(ev.at > last && ev.at < sim.duration) {
                return Err(ValidationError::new(
                    format!("{key}.at"),
                    format!(
                        "event times must be strictly increasing inside (0, {}) (got {})",
                        sim.duration, ev.at
                    ),
                ));
            }
            last = ev.at;
            match ev.change {
                EventChange::Load { port, model } => {
                    if !(1..=4).contains(&port) {
                        return Err(ValidationError::new(
                            format!("{key}.port"),
                            format!("must be 1..=4 (got {port})"),
                        ));
                    }
                    let mut p = self.converter;
                    p.set_port(port - 1, model);
                    p.validate()
                        .map_err(|e| topology_error(&format!("{key}.model"), e))?;
                }
                EventChange::Demand { demand_w } => {
                    if !demand_w.is_finite() {
                        return Err(ValidationError::new(format!("{key}.demand_w"), "must be finite"));
                    }
                    if !matches!(self.control, ControlSpec::ClosedLoop(_)) {
                        return Err(ValidationError::new(
                            format!("{key}.kind"),
                            "demand events need closed-loop control",
                        ));
                    }
                }
                EventChange::Setpoints { setpoints } => {
                    setpoints
                        .validate()
                        .map_err(|e| ValidationError::new(format!("{key}.setpoints"), e.to_string()))?;
                    if !matches!(self.control, ControlSpec::ClosedLoop(_)) {
                        return Err(ValidationError::new(
                            format!("{key}.kind"),
                            "setpoint events need closed-loop control",
                        ));
                    }
                }
            }
        }
        if let ControlSpec::ClosedLoop(_) = self.control {
            self.setpoint_timeline()?;
        }
        if matches!(sim.initial, InitialState::Equilibrium | InitialState::Periodic) {
            self.initial_state()?;
        }
        Ok(())
    }

    fn validate_closed_loop(&self, cl: &ClosedLoopSpec) -> Result<(), ValidationError> {
        let duration = self.simulation.duration;
        if cl.schedule.is_empty() && cl.setpoints.is_none() {
            return Err(ValidationError::new(
                "control.schedule",
                "closed-loop control needs a mode schedule or explicit setpoints",
            ));
        }
        if cl.setpoints.is_none() && cl.schedule[0].at != 0.0 {
            return Err(ValidationError::new(
                "control.schedule[0].at",
                "the first mode must start at 0 unless explicit setpoints are given",
            ));
        }
        if let Some(sp) = cl.setpoints {
            sp.validate()
                .map_err(|e| ValidationError::new("control.setpoints", e.to_string()))?;
        }
        let mut last = -1.0;
        for (i, e) in cl.schedule.iter().enumerate() {
            if !(e.at > last && e.at >= 0.0 && e.at < duration) {
                return Err(ValidationError::new(
                    format!("control.schedule[{i}].at"),
                    format!(
                        "schedule times must be strictly increasing inside [0, {duration}) (got {})",
                        e.at
                    ),
                ));
            }
            if !e.demand_w.is_finite() {
                return Err(ValidationError::new(
                    format!("control.schedule[{i}].demand_w"),
                    "must be finite",
                ));
            }
            last = e.at;
        }
        cl.gains
            .validate()
            .map_err(|e| ValidationError::new("control.gains", e.to_string()))?;
        ClampWindow::new(cl.window.lo, cl.window.hi)
            .map_err(|e| ValidationError::new("control.window", e.to_string()))?;
        let nb = cl.near_unity;
        if !(nb.enter > 0.0 && nb.exit >= nb.enter && (0.0..1.0).contains(&nb.fixed_d1)) {
            return Err(ValidationError::new(
                "control.near_unity",
                "need 0 < enter <= exit and 0 <= fixed_d1 < 1",
            ));
        }
        if let TransferPolicy::FixedD1(f) = cl.transfer_policy {
            if !(0.0..1.0).contains(&f) {
                return Err(ValidationError::new(
                    "control.transfer_policy",
                    format!("fixed d1 must lie in [0, 1) (got {f})"),
                ));
            }
        }
        let n = cl.nominal;
        for (k, v) in [("v_dc", n.v_dc), ("v_fc", n.v_fc), ("v_batt", n.v_batt), ("v_uc", n.v_uc)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ValidationError::new(format!("control.nominal.{k}"), "must be > 0"));
            }
        }
        Ok(())
    }

    /// Setpoints in force from each change time on; closed loop only.
    pub fn setpoint_timeline(&self) -> Result<Vec<(f64, ControlSetpoints)>, ValidationError> {
        let ControlSpec::ClosedLoop(cl) = &self.control else {
            return Ok(Vec::new());
        };
        enum Change {
            Mode(HevMode, f64),
            Demand(f64),
            Explicit(ControlSetpoints),
        }
        let mut changes: Vec<(f64, Change)> = Vec::new();
        if let Some(sp) = cl.setpoints {
            changes.push((0.0, Change::Explicit(sp)));
        }
        changes.extend(cl.schedule.iter().map(|e| (e.at, Change::Mode(e.mode, e.demand_w))));
        for ev in &self.events {
            match ev.change {
                EventChange::Demand { demand_w } => changes.push((ev.at, Change::Demand(demand_w))),
                EventChange::Setpoints { setpoints } => {
                    changes.push((ev.at, Change::Explicit(setpoints)))
                }
                EventChange::Load { .. } => {}
            }
        }
        // stable: at equal times explicit base setpoints give way to the schedule
        changes.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut mode: Option<(HevMode, f64)> = None;
        let mut out: Vec<(f64, ControlSetpoints)> = Vec::new();
        for (at, change) in changes {
            let sp = match change {
                Change::Mode(m, d) => {
                    mode = Some((m, d));
                    mode_setpoints_with(m, d, &cl.nominal, &cl.modes)
                }
                Change::Demand(d) => {
                    let Some((m, _)) = mode else {
                        return Err(ValidationError::new(
                            "events",
                            format!("demand change at t = {at} before any mode is scheduled"),
                        ));
                    };
                    mode = Some((m, d));
                    mode_setpoints_with(m, d, &cl.nominal, &cl.modes)
                }
                Change::Explicit(sp) => sp,
            };
            sp.validate()
                .map_err(|e| ValidationError::new("control", format!("at t = {at}: {e}")))?;
            match out.last_mut() {
                Some(last) if last.0 == at => last.1 = sp,
                _ => out.push((at, sp)),
            }
        }
        Ok(out)
    }

    /// Converter parameters after each load event.
    pub fn param_timeline(&self) -> Vec<(f64, ConverterParams)> {
        let mut p = self.converter;
        let mut out = Vec::new();
        for ev in &self.events {
            if let EventChange::Load { port, model } = ev.change {
                p.set_port(port - 1, model);
                out.push((ev.at, p));
            }
        }
        out
    }

    pub fn initial_state(&self) -> Result<StateVector, ValidationError> {
        let p = &self.converter;
        let mut x = match self.simulation.initial {
            InitialState::Rest => p.rest_state(),
            InitialState::State(s) => s,
            InitialState::Equilibrium | InitialState::Periodic => {
                let ControlSpec::OpenLoop { duties } = &self.control else {
                    return Err(ValidationError::new(
                        "simulation.initial",
                        "equilibrium and periodic starts need open-loop duties",
                    ));
                };
                let x = if self.simulation.initial == InitialState::Periodic {
                    periodic_steady_state(duties, p)
                } else {
                    averaged_equilibrium(duties, p)
                };
                x.map_err(|e| ValidationError::new("simulation.initial", e.to_string()))?
            }
            InitialState::Precharged => {
                let mut x = p.rest_state();
                if let ControlSpec::ClosedLoop(cl) = &self.control {
                    let n = cl.nominal;
                    let nominal = [n.v_uc, n.v_batt, n.v_fc, n.v_dc];
                    for (k, port) in p.ports().iter().enumerate() {
                        let storage = matches!(port, PortModel::CapacitorOnly { .. });
                        if !storage && port.pinned_voltage().is_none() {
                            x.set(PORT_NODE[k], nominal[k]);
                        }
                    }
                }
                x
            }
        };
        p.pin_state(&mut x);
        if !x.is_finite() {
            return Err(ValidationError::new("simulation.initial", "state must be finite"));
        }
        Ok(x)
    }

    pub fn closed_loop_source(&self) -> Result<Option<ClosedLoopSource>, ValidationError> {
        let ControlSpec::ClosedLoop(cl) = &self.control else {
            return Ok(None);
        };
        let config = ControllerConfig {
            gains: cl.gains.resolve(&self.converter),
            window: cl.window,
            policy: cl.transfer_policy,
            near_unity: cl.near_unity,
        };
        let source = ClosedLoopSource::new(HevController::new(config), self.setpoint_timeline()?)
            .with_param_changes(self.param_timeline());
        Ok(Some(source))
    }
}

fn topology_error(prefix: &str, e: TopologyError) -> ValidationError {
    match e {
        TopologyError::InvalidParameter { name, reason } => {
            ValidationError::new(format!("{prefix}.{name}"), reason)
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best-effort line of the last segment of a dotted key path.
fn line_of_key(text: &str, path: &str) -> Option<usize> {
    let leaf = path
        .rsplit('.')
        .map(|s| s.split('[').next().unwrap_or(s))
        .find(|s| !s.is_empty() && *s != "?")?;
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(leaf)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
            || l.trim_matches(|c| c == '[' || c == ']').ends_with(leaf)
    })
    .map(|i| i + 1)
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, ParseError> {
    text.parse::<toml::Table>().map_err(|e| ParseError {
        origin: origin.into(),
        line: e.span().map(|s| line_of(text, s.start)),
        key: None,
        message: e.message().trim().to_string(),
    })
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn resolve_presets(
    mut table: toml::Table,
    origin: &str,
    depth: usize,
) -> Result<toml::Table, ScenarioError> {
    let Some(preset) = table.remove("preset") else {
        return Ok(table);
    };
    let name = preset.as_str().ok_or_else(|| ParseError {
        origin: origin.into(),
        line: None,
        key: Some("preset".into()),
        message: "preset must be a string".into(),
    })?;
    if depth >= MAX_PRESET_DEPTH {
        return Err(ParseError {
            origin: origin.into(),
            line: None,
            key: Some("preset".into()),
            message: "preset inheritance is too deep".into(),
        }
        .into());
    }
    let text = presets::get(name).ok_or_else(|| ScenarioError::UnknownPreset(name.into()))?;
    let base = parse_table(text, &format!("preset {name}"))?;
    let mut base = resolve_presets(base, &format!("preset {name}"), depth + 1)?;
    merge(&mut base, table);
    Ok(base)
}

/// Parses and validates scenario text. `default_name` fills in a missing
/// `name` key.
pub fn parse_scenario(text: &str, origin: &str, default_name: &str) -> Result<Scenario, ScenarioError> {
    let own = parse_table(text, origin)?;
    let named = own.contains_key("name");
    let mut table = resolve_presets(own, origin, 0)?;
    if !named && !default_name.is_empty() && !table.contains_key("name") {
        table.insert("name".into(), toml::Value::String(default_name.into()));
    }
    let scenario: Scenario = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        ParseError {
            origin: origin.into(),
            line: line_of_key(text, &path),
            key: (path != ".").then_some(path),
            message: e.inner().to_string().trim().to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    parse_scenario(&text, &path.display().to_string(), stem)
}

pub fn load_preset(name: &str) -> Result<Scenario, ScenarioError> {
    let text = presets::get(name).ok_or_else(|| ScenarioError::UnknownPreset(name.into()))?;
    parse_scenario(text, &format!("preset {name}"), name)
}

/// A path to a scenario file if one exists, otherwise a preset name.
pub fn resolve(arg: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(arg);
    if path.is_file() {
        load_scenario(path)
    } else if presets::get(arg).is_some() {
        load_preset(arg)
    } else {
        Err(ScenarioError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "no such scenario file or preset",
            ),
        })
    }
}

pub fn write_scenario(scenario: &Scenario) -> String {
    toml::to_string_pretty(scenario).expect("scenario types always serialize to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
[converter]
l1 = 0.72e-3
l2 = 0.72e-3
l3 = 0.72e-3
c1 = 470e-6
c2 = 470e-6
c3 = 470e-6
c4 = 470e-6
f_sw = 50000
port1 = { kind = "voltage_source", volts = 150.0 }
port2 = { kind = "resistive_load", ohms = 5.0 }
port3 = { kind = "resistive_load", ohms = 100.0 }
port4 = { kind = "resistive_load", ohms = 100.0 }
[control]
kind = "open_loop"
duties = { d1 = 0.3333333333333333, d2 = 0.5, d3 = 0.16666666666666666, d4 = 0.0, d5 = 1.0, d6 = 0.0 }
[simulation]
duration = 2e-3
"#;

    #[test]
    fn minimal_file_parses() {
        let s = parse_scenario(MINIMAL, "mem", "").unwrap();
        assert_eq!(s.name, "t");
        assert_eq!(s.simulation.steps_per_period, 1000);
        assert_eq!(s.converter.port1, PortModel::ideal_source(150.0));
    }

    #[test]
    fn bad_duty_sum_names_the_key() {
        let text = MINIMAL.replace("d2 = 0.5", "d2 = 0.4");
        match parse_scenario(&text, "mem", "") {
            Err(ScenarioError::Validation(v)) => {
                assert_eq!(v.key, "control.duties");
                assert!(v.message.contains("sum to 1"), "{}", v.message);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_duration_is_rejected() {
        let text = MINIMAL.replace("duration = 2e-3", "duration = 0.0");
        match parse_scenario(&text, "mem", "") {
            Err(ScenarioError::Validation(v)) => assert_eq!(v.key, "simulation.duration"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = MINIMAL.replace("f_sw = 50000", "f_sw = = 50000");
        match parse_scenario(&text, "mem", "") {
            Err(ScenarioError::Parse(p)) => assert_eq!(p.line, Some(11)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_error_reports_key_and_line() {
        let text = MINIMAL.replace("l2 = 0.72e-3", "l2 = \"big\"");
        match parse_scenario(&text, "mem", "") {
            Err(ScenarioError::Parse(p)) => {
                assert_eq!(p.key.as_deref(), Some("converter.l2"));
                assert_eq!(p.line, Some(5));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = MINIMAL.replace("duration = 2e-3", "duration = 2e-3\nspeed = 3");
        assert!(matches!(
            parse_scenario(&text, "mem", ""),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn preset_keys_are_overridable() {
        let text = "preset = \"fig7a\"\nname = \"mine\"\n[converter]\nl2 = 1e-3\n[simulation]\nsteps_per_period = 400\n";
        let s = parse_scenario(text, "mem", "").unwrap();
        let base = load_preset("fig7a").unwrap();
        assert_eq!(s.name, "mine");
        assert_eq!(s.converter.l2, 1e-3);
        assert_eq!(s.converter.l1, base.converter.l1);
        assert_eq!(s.simulation.steps_per_period, 400);
        assert_eq!(s.simulation.duration, base.simulation.duration);
        assert_eq!(s.control, base.control);
    }

    #[test]
    fn events_must_increase() {
        let text = format!(
            "{MINIMAL}\n[[events]]\nat = 1e-3\nkind = \"load\"\nport = 2\nmodel = {{ kind = \"resistive_load\", ohms = 10.0 }}\n[[events]]\nat = 0.5e-3\nkind = \"load\"\nport = 2\nmodel = {{ kind = \"resistive_load\", ohms = 5.0 }}\n"
        );
        match parse_scenario(&text, "mem", "") {
            Err(ScenarioError::Validation(v)) => assert_eq!(v.key, "events[1].at"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn setpoint_timeline_follows_schedule_and_events() {
        let text = r#"
preset = "fig7a"
[[control.schedule]]
at = 0.0
mode = "high_power"
demand_w = 2000.0
[[control.schedule]]
at = 0.01
mode = "low_power"
demand_w = 500.0
[[events]]
at = 0.005
kind = "demand"
demand_w = 1900.0
"#;
        let s = parse_scenario(text, "mem", "x").unwrap();
        let t = s.setpoint_timeline().unwrap();
        assert_eq!(t.len(), 3);
        assert!((t[0].1.i_batt_ref - 24.0).abs() < 1e-12);
        assert!((t[1].1.i_batt_ref - 20.0).abs() < 1e-12);
        assert_eq!(t[2].1.i_fc_ref, 0.0);
    }
}
