use serde::{Deserialize, Serialize};

use crate::duty::DutyCommand;
use crate::topology::{LegMode, SwitchConfig};

/// Mode boundaries of both legs within one switching period. Each leg runs
/// mode A, then B, then C, all legs starting together at the period edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSchedule {
    pub period: f64,
    /// Per leg: `(offset within period, mode entered)`, offsets strictly
    /// increasing from 0.
    pub boundaries: [Vec<(f64, LegMode)>; 2],
}

/// Interval of constant switch configuration within a period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub config: SwitchConfig,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

fn leg_boundaries(d: [f64; 3], period: f64) -> Vec<(f64, LegMode)> {
    let mut out = Vec::with_capacity(3);
    let mut cum = 0.0;
    for (duty, mode) in d.iter().zip(LegMode::ALL) {
        if *duty > 0.0 {
            let offset = cum * period;
            if offset < period {
                out.push((offset, mode));
            }
        }
        cum += duty;
    }
    if out.is_empty() {
        // all-zero leg cannot pass validation, keep the schedule well formed anyway
        out.push((0.0, LegMode::ModeA));
    }
    out[0].0 = 0.0;
    out
}

pub fn build_schedule(duties: &DutyCommand, f_sw: f64) -> ModeSchedule {
    let period = 1.0 / f_sw;
    ModeSchedule {
        period,
        boundaries: [
            leg_boundaries(duties.leg1(), period),
            leg_boundaries(duties.leg2(), period),
        ],
    }
}

impl ModeSchedule {
    /// Durations of each mode per leg, indexed by `LegMode::off_switch()`.
    pub fn mode_durations(&self, leg: usize) -> [f64; 3] {
        let b = &self.boundaries[leg];
        let mut out = [0.0; 3];
        for (i, &(t, mode)) in b.iter().enumerate() {
            let end = b.get(i + 1).map_or(self.period, |n| n.0);
            out[mode.off_switch()] += end - t;
        }
        out
    }

    fn mode_at(&self, leg: usize, t: f64) -> LegMode {
        self.boundaries[leg]
            .iter()
            .rev()
            .find(|(start, _)| *start <= t)
            .map(|&(_, m)| m)
            .unwrap_or(self.boundaries[leg][0].1)
    }

    /// Both legs merged into constant-configuration segments covering the
    /// period, in time order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut cuts: Vec<f64> = self
            .boundaries
            .iter()
            .flat_map(|b| b.iter().map(|&(t, _)| t))
            .collect();
        cuts.push(self.period);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| Segment {
                start: w[0],
                end: w[1],
                config: SwitchConfig::new(self.mode_at(0, w[0]), self.mode_at(1, w[0])),
            })
            .collect()
    }
}
