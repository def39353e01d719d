use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ControlSpec, Scenario, ScenarioError};
use crate::control::ControlSetpoints;
use crate::duty::{flux_balance_residuals, DutyCommand};
use crate::sim::{measure_steady_state, SimError, SteadyStateReport, Waveform};
use crate::topology::{PortModel, STATE_NAMES};

/// Fraction of `rail voltage x period` an inductor may gain per period and
/// still count as volt-second balanced.
pub const FLUX_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortLedger {
    pub port: usize,
    pub element: String,
    /// Positive when the port sources power into the converter.
    pub power_w: f64,
    pub voltage_v: f64,
    pub current_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLedger {
    pub ports: Vec<PortLedger>,
    /// Sum of the signed port powers; zero for a lossless converter.
    pub balance_residual_w: f64,
    /// Half the sum of absolute port powers, the power flowing through.
    pub throughput_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub quantity: String,
    pub source: String,
    pub predicted: f64,
    pub measured: f64,
    pub abs_error: f64,
    /// `None` when the prediction is zero.
    pub rel_error: Option<f64>,
}

impl PredictionRow {
    fn new(quantity: &str, source: &str, predicted: f64, measured: f64) -> Self {
        let abs_error = (measured - predicted).abs();
        Self {
            quantity: quantity.into(),
            source: source.into(),
            predicted,
            measured,
            abs_error,
            rel_error: (predicted.abs() > 1e-12).then(|| abs_error / predicted.abs()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub settled: bool,
    pub steady_state: SteadyStateReport,
    pub ledger: PowerLedger,
    /// `L (i_end - i_start)` over the last period, volt-seconds.
    pub flux_residuals: [f64; 3],
    pub flux_limits: [f64; 3],
    pub flux_balanced: bool,
    pub mean_duties: Option<DutyCommand>,
    pub setpoints: Option<ControlSetpoints>,
    pub predictions: Vec<PredictionRow>,
}

fn element(p: &PortModel) -> String {
    match *p {
        PortModel::VoltageSource { volts, series_ohms } if series_ohms == 0.0 => {
            format!("source {volts} V")
        }
        PortModel::VoltageSource { volts, series_ohms } => {
            format!("source {volts} V / {series_ohms} ohm")
        }
        PortModel::ResistiveLoad { ohms } => format!("load {ohms} ohm"),
        PortModel::CapacitorOnly { farads, .. } => format!("storage {farads} F"),
        PortModel::CurrentSink { amps } => format!("sink {amps} A"),
    }
}

/// Steady-state summary of a finished run. Duty-based predictions need the
/// per-period duty log; waveforms read back without one fall back to the
/// scenario's open-loop duties.
pub fn report(waveform: &Waveform, scenario: &Scenario) -> Result<Report, ScenarioError> {
    let params = scenario
        .param_timeline()
        .last()
        .map(|(_, p)| *p)
        .unwrap_or(scenario.converter);
    let period = params.period();
    let ss = measure_steady_state(waveform, params.f_sw, scenario.simulation.settle_periods)?;
    let flux = flux_balance_residuals(waveform, &params).map_err(SimError::from)?;

    let m = &ss.mean_state;
    let rails = [m.v_c1.abs(), m.v_c1.abs().max(m.v_c4.abs()), m.v_c4.abs()];
    let flux_limits = rails.map(|v| FLUX_TOLERANCE * v * period);
    let flux_balanced = (0..3).all(|k| flux[k].abs() < flux_limits[k]);

    let ports = params.ports();
    let ledger = PowerLedger {
        ports: (0..4)
            .map(|k| PortLedger {
                port: k + 1,
                element: element(&ports[k]),
                power_w: ss.mean_port_power[k],
                voltage_v: ss.mean_port_voltage[k],
                current_a: ss.mean_port_current[k],
            })
            .collect(),
        balance_residual_w: ss.power_balance_residual(),
        throughput_w: 0.5 * ss.mean_port_power.iter().map(|p| p.abs()).sum::<f64>(),
    };

    let mean_duties = if waveform.periods.is_empty() {
        match &scenario.control {
            ControlSpec::OpenLoop { duties } => Some(*duties),
            ControlSpec::ClosedLoop(_) => None,
        }
    } else {
        waveform.mean_duties(ss.window_start, ss.window_end)
    };

    let mut predictions = Vec::new();
    if let Some(d) = mean_duties {
        predictions.push(PredictionRow::new("v_c2", "d3 * v1", d.d3 * m.v_c1, m.v_c2));
        predictions.push(PredictionRow::new("v_c3", "d6 * v4", d.d6 * m.v_c4, m.v_c3));
        if d.d4 < 1.0 {
            predictions.push(PredictionRow::new(
                "v_c4",
                "(1 - d1) * v1 / (1 - d4)",
                (1.0 - d.d1) * m.v_c1 / (1.0 - d.d4),
                m.v_c4,
            ));
        }
    }
    let setpoints = scenario
        .setpoint_timeline()?
        .iter()
        .rev()
        .find(|(at, _)| *at <= ss.window_start + 1e-12)
        .map(|(_, s)| *s);
    if let Some(sp) = setpoints {
        predictions.push(PredictionRow::new("v_c4", "v_dc_ref", sp.v_dc_ref, m.v_c4));
        predictions.push(PredictionRow::new(
            "i_batt",
            "i_batt_ref",
            sp.i_batt_ref,
            ss.mean_port_current[1],
        ));
        predictions.push(PredictionRow::new(
            "i_fc",
            "i_fc_ref",
            sp.i_fc_ref,
            ss.mean_port_current[2],
        ));
        if let Some(v) = sp.v_uc_ref {
            predictions.push(PredictionRow::new("v_c1", "v_uc_ref", v, m.v_c1));
        }
    }

    Ok(Report {
        scenario: scenario.name.clone(),
        settled: ss.settled,
        steady_state: ss,
        ledger,
        flux_residuals: flux,
        flux_limits,
        flux_balanced,
        mean_duties,
        setpoints,
        predictions,
    })
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn to_text(&self) -> String {
        let ss = &self.steady_state;
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        let _ = writeln!(
            s,
            "window:   {:.6} .. {:.6} s ({} periods), {}",
            ss.window_start,
            ss.window_end,
            ss.n_periods,
            if self.settled { "settled" } else { "NOT settled" }
        );
        let _ = writeln!(s, "\nmean state          mean       drift/period   limit");
        let mean = ss.mean_state.to_array();
        let err = ss.periodicity_error.to_array();
        let lim = ss.periodicity_limit.to_array();
        for k in 0..mean.len() {
            let _ = writeln!(
                s,
                "  {:<8} {:>14.6} {:>14.3e} {:>10.3e}",
                STATE_NAMES[k], mean[k], err[k], lim[k]
            );
        }
        let _ = writeln!(s, "\npower ledger (positive = into the converter)");
        let _ = writeln!(
            s,
            "  port  element                    power [W]   voltage [V]   current [A]"
        );
        for p in &self.ledger.ports {
            let _ = writeln!(
                s,
                "  {:<4}  {:<24} {:>12.4} {:>13.4} {:>13.4}",
                p.port, p.element, p.power_w, p.voltage_v, p.current_a
            );
        }
        let _ = writeln!(
            s,
            "  balance residual {:.6} W, throughput {:.4} W",
            self.ledger.balance_residual_w, self.ledger.throughput_w
        );
        let _ = writeln!(s, "\nvolt-second balance over the last period");
        for (k, name) in ["L1", "L2", "L3"].iter().enumerate() {
            let _ = writeln!(
                s,
                "  {name}  {:>12.4e} V*s   limit {:.4e}",
                self.flux_residuals[k], self.flux_limits[k]
            );
        }
        if let Some(d) = self.mean_duties {
            let _ = writeln!(
                s,
                "\nmean duties  d1 {:.6}  d2 {:.6}  d3 {:.6}  d4 {:.6}  d5 {:.6}  d6 {:.6}",
                d.d1, d.d2, d.d3, d.d4, d.d5, d.d6
            );
        }
        if !self.predictions.is_empty() {
            let _ = writeln!(
                s,
                "\nquantity  predicted by                 predicted      measured   rel. error"
            );
            for r in &self.predictions {
                let rel = r
                    .rel_error
                    .map(|e| format!("{e:.3e}"))
                    .unwrap_or_else(|| format!("abs {:.3e}", r.abs_error));
                let _ = writeln!(
                    s,
                    "  {:<7} {:<26} {:>12.5} {:>13.5}   {}",
                    r.quantity, r.source, r.predicted, r.measured, rel
                );
            }
        }
        s
    }
}
