//! Time-domain simulation of the switched converter.
//!
//! Each switching period is partitioned into constant-configuration segments
//! by [`build_schedule`]. Integration walks a uniform grid of
//! `steps_per_period` points and splits any step that would cross a switching
//! instant, so every step sees a single linear system. Duty commands are
//! latched at period edges.

mod averaged;
mod exact;
mod schedule;
mod steady;
mod waveform;

pub use averaged::{averaged_dynamics, averaged_equilibrium, periodic_steady_state};
pub use exact::{exact_segment_solution, expm, Propagator};
pub use schedule::{build_schedule, ModeSchedule, Segment};
pub use steady::{measure_steady_state, measure_steady_state_with, SettleTolerance, SteadyStateReport};
pub use waveform::{PeriodRecord, Sample, StepSpan, Waveform};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duty::{DutyCommand, DutyError};
use crate::topology::{derive_all, ConverterParams, LinearDynamics, StateVec, StateVector, TopologyError};
use exact::PropagatorCache;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("simulation diverged at t = {time} s")]
    Diverged { time: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Duty(#[from] DutyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[serde(rename = "rk4")]
    FixedStepRK4,
    #[serde(rename = "exact")]
    ExactPiecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    /// Rounded up to a whole number of switching periods.
    pub duration: f64,
    pub steps_per_period: usize,
    pub integrator: Integrator,
    pub record_decimation: usize,
    #[serde(skip)]
    pub log_steps: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            duration: 0.01,
            steps_per_period: 1000,
            integrator: Integrator::FixedStepRK4,
            record_decimation: 10,
            log_steps: false,
        }
    }
}

impl SimulationSettings {
    pub const MIN_STEPS_PER_PERIOD: usize = 100;

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::Config(format!(
                "duration must be > 0 (got {})",
                self.duration
            )));
        }
        if self.steps_per_period < Self::MIN_STEPS_PER_PERIOD {
            return Err(SimError::Config(format!(
                "steps_per_period must be >= {} (got {})",
                Self::MIN_STEPS_PER_PERIOD,
                self.steps_per_period
            )));
        }
        if self.record_decimation == 0 {
            return Err(SimError::Config("record_decimation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn periods(&self, f_sw: f64) -> usize {
        ((self.duration * f_sw - 1e-9).ceil() as usize).max(1)
    }
}

/// What a duty source sees at the start of each period.
#[derive(Debug, Clone, Copy)]
pub struct PeriodObservation<'a> {
    pub index: usize,
    pub start_time: f64,
    pub state: &'a StateVector,
    /// Time average of the state over the previous period.
    pub period_average: Option<&'a StateVector>,
    pub params: &'a ConverterParams,
}

/// Supplies one duty command per switching period.
pub trait DutySource {
    fn next_period(&mut self, obs: &PeriodObservation<'_>) -> Result<DutyCommand, SimError>;

    /// Parameter change latched at the period starting at `start_time`.
    fn param_update(&mut self, _start_time: f64) -> Option<ConverterParams> {
        None
    }
}

impl DutySource for DutyCommand {
    fn next_period(&mut self, _obs: &PeriodObservation<'_>) -> Result<DutyCommand, SimError> {
        Ok(*self)
    }
}

/// Adapts a closure into a [`DutySource`].
pub struct FnSource<F>(pub F);

impl<F> DutySource for FnSource<F>
where
    F: FnMut(&PeriodObservation<'_>) -> Result<DutyCommand, SimError>,
{
    fn next_period(&mut self, obs: &PeriodObservation<'_>) -> Result<DutyCommand, SimError> {
        (self.0)(obs)
    }
}

struct Engine {
    params: ConverterParams,
    dynamics: Vec<LinearDynamics>,
    cache: PropagatorCache,
    integrator: Integrator,
}

impl Engine {
    fn new(params: ConverterParams, integrator: Integrator) -> Result<Self, SimError> {
        Ok(Self {
            dynamics: derive_all(&params)?,
            params,
            cache: PropagatorCache::default(),
            integrator,
        })
    }

    fn set_params(&mut self, params: ConverterParams) -> Result<(), SimError> {
        if params.f_sw != self.params.f_sw {
            return Err(SimError::Config(
                "switching frequency cannot change during a run".into(),
            ));
        }
        self.dynamics = derive_all(&params)?;
        self.cache.clear();
        self.params = params;
        Ok(())
    }

    fn step(&mut self, cfg: usize, x: &StateVec, dt: f64) -> Result<StateVec, SimError> {
        let d = &self.dynamics[cfg];
        match self.integrator {
            Integrator::FixedStepRK4 => {
                let (a, b) = (&d.a_matrix, &d.b_vector);
                let k1 = a * x + b;
                let k2 = a * (x + k1 * (0.5 * dt)) + b;
                let k3 = a * (x + k2 * (0.5 * dt)) + b;
                let k4 = a * (x + k3 * dt) + b;
                Ok(x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0))
            }
            Integrator::ExactPiecewise => Ok(self.cache.get(d, dt)?.apply(x)),
        }
    }
}

/// Runs the converter for `settings.duration`, asking `source` for a duty
/// command at every period edge.
pub fn simulate(
    params: &ConverterParams,
    source: &mut dyn DutySource,
    settings: &SimulationSettings,
    initial: &StateVector,
) -> Result<Waveform, SimError> {
    settings.validate()?;
    params.validate()?;
    if !initial.is_finite() {
        return Err(SimError::Config("initial state must be finite".into()));
    }
    let mut engine = Engine::new(*params, settings.integrator)?;
    let period = params.period();
    let n_periods = settings.periods(params.f_sw);
    let spp = settings.steps_per_period;
    let decim = settings.record_decimation;
    let grid = |j: usize| period * (j as f64 / spp as f64);

    let mut state = *initial;
    engine.params.pin_state(&mut state);
    let mut x = state.to_vec();

    let samples_per_period = spp.div_ceil(decim) + 1;
    let mut wf = Waveform {
        samples: Vec::with_capacity(n_periods * samples_per_period + 1),
        periods: Vec::with_capacity(n_periods),
        step_log: settings.log_steps.then(Vec::new),
    };
    let mut prev_avg: Option<StateVector> = None;

    for k in 0..n_periods {
        let t_start = k as f64 * period;
        if let Some(p) = source.param_update(t_start) {
            p.validate()?;
            engine.set_params(p)?;
            let mut s = StateVector::from_vec(&x);
            engine.params.pin_state(&mut s);
            x = s.to_vec();
        }
        let state_now = StateVector::from_vec(&x);
        let duties = source.next_period(&PeriodObservation {
            index: k,
            start_time: t_start,
            state: &state_now,
            period_average: prev_avg.as_ref(),
            params: &engine.params,
        })?;
        duties.validate()?;
        wf.periods.push(PeriodRecord {
            start: t_start,
            duties,
        });

        let segments = build_schedule(&duties, engine.params.f_sw).segments();
        if k == 0 {
            let d = &engine.dynamics[segments[0].config.index()];
            wf.samples.push(Sample {
                t: 0.0,
                state: state_now,
                config: segments[0].config,
                port_power: d.port_powers(&x),
            });
        }

        let mut avg_acc = StateVec::zeros();
        let mut energy_since_sample = [0.0; 4];
        let mut last_sample_t = t_start;
        let mut seg_idx = 0;
        let mut offset = 0.0;
        let mut j = 0usize;
        while j < spp {
            let seg = segments[seg_idx];
            let next_grid = grid(j + 1);
            let end = next_grid.min(seg.end);
            let dt = end - offset;
            let cfg = seg.config.index();

            let x_new = engine.step(cfg, &x, dt)?;
            let t_abs = (k as f64 + end / period) * period;
            if !x_new.iter().all(|v| v.is_finite()) {
                return Err(SimError::Diverged { time: t_abs });
            }
            let dynamics = &engine.dynamics[cfg];
            let p0 = dynamics.port_powers(&x);
            let p1 = dynamics.port_powers(&x_new);
            for q in 0..4 {
                energy_since_sample[q] += 0.5 * (p0[q] + p1[q]) * dt;
            }
            avg_acc += (x + x_new) * (0.5 * dt);
            if let Some(log) = wf.step_log.as_mut() {
                log.push(StepSpan {
                    t0: t_start + offset,
                    t1: t_abs,
                    config: seg.config,
                });
            }
            x = x_new;
            offset = end;
            if end >= seg.end && seg_idx + 1 < segments.len() {
                seg_idx += 1;
            }
            if end >= next_grid {
                j += 1;
                if j % decim == 0 || j == spp {
                    let t = if j == spp {
                        (k + 1) as f64 * period
                    } else {
                        (k as f64 + j as f64 / spp as f64) * period
                    };
                    let span = t - last_sample_t;
                    wf.samples.push(Sample {
                        t,
                        state: StateVector::from_vec(&x),
                        config: seg.config,
                        port_power: energy_since_sample.map(|e| e / span),
                    });
                    energy_since_sample = [0.0; 4];
                    last_sample_t = t;
                }
            }
        }
        prev_avg = Some(StateVector::from_vec(&(avg_acc / period)));
    }
    Ok(wf)
}
