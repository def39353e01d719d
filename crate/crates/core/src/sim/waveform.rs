use serde::{Deserialize, Serialize};

use crate::duty::DutyCommand;
use crate::topology::{StateVector, SwitchConfig};

/// Relative tolerance, in periods, for matching sample times to period edges.
pub(crate) const EDGE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: StateVector,
    /// Configuration of the step that ended at this sample.
    pub config: SwitchConfig,
    /// Power delivered by each port into the converter, averaged over the
    /// interval since the previous sample. The first sample holds the
    /// instantaneous value.
    pub port_power: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub start: f64,
    pub duties: DutyCommand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpan {
    pub t0: f64,
    pub t1: f64,
    pub config: SwitchConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Waveform {
    pub samples: Vec<Sample>,
    /// Duty command latched at each period start; empty for waveforms read
    /// back from CSV.
    pub periods: Vec<PeriodRecord>,
    pub step_log: Option<Vec<StepSpan>>,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Index of the sample whose time lies within `tol` of `t`.
    pub fn index_near(&self, t: f64, tol: f64) -> Option<usize> {
        let i = self.samples.partition_point(|s| s.t < t - tol);
        match self.samples.get(i) {
            Some(s) if (s.t - t).abs() <= tol => Some(i),
            _ => None,
        }
    }

    /// Time of the last recorded period edge.
    pub fn last_edge(&self, period: f64) -> Option<f64> {
        let t_last = self.last()?.t;
        let k = (t_last / period + EDGE_TOLERANCE).floor();
        Some(k * period)
    }

    /// Sample indices bracketing the last `n` whole periods.
    pub fn window(&self, period: f64, n: usize) -> Option<(usize, usize)> {
        let tol = EDGE_TOLERANCE * period;
        let end_t = self.last_edge(period)?;
        let end = self.index_near(end_t, tol)?;
        let start_t = end_t - n as f64 * period;
        if start_t < -tol {
            return None;
        }
        let start = self.index_near(start_t.max(0.0), tol)?;
        (end > start).then_some((start, end))
    }

    /// First and last sample of the final whole period.
    pub fn last_period(&self, period: f64) -> Option<(&Sample, &Sample)> {
        let (a, b) = self.window(period, 1)?;
        Some((&self.samples[a], &self.samples[b]))
    }

    /// Mean commanded duties over periods starting in `[t0, t1)`.
    pub fn mean_duties(&self, t0: f64, t1: f64) -> Option<DutyCommand> {
        let picked: Vec<_> = self
            .periods
            .iter()
            .filter(|p| p.start >= t0 - 1e-12 && p.start < t1 - 1e-12)
            .collect();
        if picked.is_empty() {
            return None;
        }
        let mut acc = [0.0; 6];
        for p in &picked {
            for (a, d) in acc.iter_mut().zip(p.duties.to_array()) {
                *a += d;
            }
        }
        let n = picked.len() as f64;
        Some(DutyCommand::from_array(acc.map(|a| a / n)))
    }
}
