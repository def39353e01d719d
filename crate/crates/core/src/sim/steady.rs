use serde::{Deserialize, Serialize};

use super::waveform::{Waveform, EDGE_TOLERANCE};
use super::SimError;
use crate::topology::{StateVector, PORT_NODE, STATE_DIM};

/// Periodicity limits: each signal may move by at most `relative` times its
/// mean magnitude from one period to the next, but never less than the
/// absolute floors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettleTolerance {
    pub relative: f64,
    pub current_floor: f64,
    pub voltage_floor: f64,
}

impl Default for SettleTolerance {
    fn default() -> Self {
        Self {
            relative: 0.01,
            current_floor: 0.01,
            voltage_floor: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub window_start: f64,
    pub window_end: f64,
    pub n_periods: usize,
    pub mean_state: StateVector,
    /// Signed: positive when the port delivers power into the converter.
    pub mean_port_power: [f64; 4],
    pub mean_port_voltage: [f64; 4],
    /// Power-equivalent mean current, `mean power / mean voltage`.
    pub mean_port_current: [f64; 4],
    pub periodicity_error: StateVector,
    pub periodicity_limit: StateVector,
    pub settled: bool,
}

impl SteadyStateReport {
    pub fn power_balance_residual(&self) -> f64 {
        self.mean_port_power.iter().sum()
    }
}

pub fn measure_steady_state(
    waveform: &Waveform,
    f_sw: f64,
    n_periods: usize,
) -> Result<SteadyStateReport, SimError> {
    measure_steady_state_with(waveform, f_sw, n_periods, &SettleTolerance::default())
}

pub fn measure_steady_state_with(
    waveform: &Waveform,
    f_sw: f64,
    n_periods: usize,
    tolerance: &SettleTolerance,
) -> Result<SteadyStateReport, SimError> {
    if n_periods == 0 || !(f_sw > 0.0) {
        return Err(SimError::Config("need n_periods >= 1 and f_sw > 0".into()));
    }
    let period = 1.0 / f_sw;
    let too_short = || {
        SimError::WindowTooShort(format!(
            "waveform must cover at least {} whole periods",
            2 * n_periods
        ))
    };
    // the periodicity check looks one period behind every window sample,
    // so twice the window must be on record
    waveform.window(period, 2 * n_periods).ok_or_else(too_short)?;
    let (start, end) = waveform.window(period, n_periods).ok_or_else(too_short)?;
    let s = &waveform.samples;
    let t0 = s[start].t;
    let t1 = s[end].t;
    let span = t1 - t0;

    let mut state_acc = [0.0; STATE_DIM];
    let mut power_acc = [0.0; 4];
    for i in start + 1..=end {
        let dt = s[i].t - s[i - 1].t;
        let (a, b) = (s[i - 1].state.to_array(), s[i].state.to_array());
        for k in 0..STATE_DIM {
            state_acc[k] += 0.5 * (a[k] + b[k]) * dt;
        }
        for k in 0..4 {
            power_acc[k] += s[i].port_power[k] * dt;
        }
    }
    let mean = StateVector::from_array(state_acc.map(|v| v / span));
    let mean_port_power = power_acc.map(|v| v / span);
    let mean_port_voltage = PORT_NODE.map(|idx| mean.get(idx));
    let mut mean_port_current = [0.0; 4];
    for k in 0..4 {
        if mean_port_voltage[k] != 0.0 {
            mean_port_current[k] = mean_port_power[k] / mean_port_voltage[k];
        }
    }

    let tol = EDGE_TOLERANCE * period;
    let mut err = [0.0f64; STATE_DIM];
    for i in start..=end {
        let j = waveform
            .index_near(s[i].t - period, tol)
            .ok_or_else(|| {
                SimError::WindowTooShort(format!(
                    "no sample one period before t = {}",
                    s[i].t
                ))
            })?;
        let (a, b) = (s[i].state.to_array(), s[j].state.to_array());
        for k in 0..STATE_DIM {
            err[k] = err[k].max((a[k] - b[k]).abs());
        }
    }
    let mean_arr = mean.to_array();
    let limit: [f64; STATE_DIM] = std::array::from_fn(|k| {
        let floor = if k < 3 {
            tolerance.current_floor
        } else {
            tolerance.voltage_floor
        };
        (tolerance.relative * mean_arr[k].abs()).max(floor)
    });
    let settled = (0..STATE_DIM).all(|k| err[k] <= limit[k]);

    Ok(SteadyStateReport {
        window_start: t0,
        window_end: t1,
        n_periods,
        mean_state: mean,
        mean_port_power,
        mean_port_voltage,
        mean_port_current,
        periodicity_error: StateVector::from_array(err),
        periodicity_limit: StateVector::from_array(limit),
        settled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::waveform::Sample;
    use crate::topology::{LegMode, SwitchConfig};

    fn synthetic(f_sw: f64, periods: usize, per: usize, drift_per_period: f64) -> Waveform {
        let period = 1.0 / f_sw;
        let cfg = SwitchConfig::new(LegMode::ModeA, LegMode::ModeA);
        let mut samples = Vec::new();
        for k in 0..=periods * per {
            let t = (k as f64 / per as f64) * period;
            let phase = 2.0 * std::f64::consts::PI * (k % per) as f64 / per as f64;
            let transient = drift_per_period * t / period;
            let v = 100.0 + 0.5 * phase.sin() + transient;
            let i = 5.0 + 0.2 * phase.cos();
            samples.push(Sample {
                t,
                state: StateVector::from_array([i, 0.0, 0.0, v, 25.0, 0.0, v]),
                config: cfg,
                port_power: [0.0, 0.0, 0.0, -v * 5.0],
            });
        }
        Waveform {
            samples,
            ..Default::default()
        }
    }

    #[test]
    fn dc_plus_periodic_ripple() {
        let w = synthetic(50e3, 40, 64, 0.0);
        let r = measure_steady_state(&w, 50e3, 10).unwrap();
        assert!((r.mean_state.v_c1 - 100.0).abs() < 1e-9);
        assert!((r.mean_state.i_l1 - 5.0).abs() < 1e-9);
        assert!(r.periodicity_error.v_c1 < 1e-9);
        assert!(r.settled);
        assert!((r.mean_port_current[3] + 5.0).abs() < 1e-9);
    }

    #[test]
    fn transient_is_not_settled() {
        let w = synthetic(50e3, 40, 64, 2.0);
        let r = measure_steady_state(&w, 50e3, 10).unwrap();
        assert!(!r.settled);
    }

    #[test]
    fn short_window_is_rejected() {
        let w = synthetic(50e3, 15, 64, 0.0);
        assert!(matches!(
            measure_steady_state(&w, 50e3, 10),
            Err(SimError::WindowTooShort(_))
        ));
    }
}
