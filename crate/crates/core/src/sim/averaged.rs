//! Steady operating points of a constant duty command: the equilibrium of
//! the period-averaged model and the exact periodic orbit of the switched one.

use super::exact::Propagator;
use super::schedule::build_schedule;
use super::SimError;
use crate::duty::DutyCommand;
use crate::topology::{derive_all, ConverterParams, StateMat, StateVec, StateVector, PORT_NODE};

/// Duty-weighted average of the configuration dynamics.
pub fn averaged_dynamics(
    duties: &DutyCommand,
    params: &ConverterParams,
) -> Result<(StateMat, StateVec), SimError> {
    let dynamics = derive_all(params)?;
    let schedule = build_schedule(duties, params.f_sw);
    let mut a = StateMat::zeros();
    let mut b = StateVec::zeros();
    for seg in schedule.segments() {
        let w = seg.duration() / schedule.period;
        let d = &dynamics[seg.config.index()];
        a += d.a_matrix * w;
        b += d.b_vector * w;
    }
    Ok((a, b))
}

/// Equilibrium of the averaged model. Pinned source nodes keep their source
/// voltage. Fails when the averaged model has no isolated equilibrium, for
/// example a storage port with no path to a source.
pub fn averaged_equilibrium(
    duties: &DutyCommand,
    params: &ConverterParams,
) -> Result<StateVector, SimError> {
    let (a, b) = averaged_dynamics(duties, params)?;
    solve_pinned(a, -b, params, "averaged model")
}

fn solve_pinned(
    mut a: StateMat,
    mut rhs: StateVec,
    params: &ConverterParams,
    what: &str,
) -> Result<StateVector, SimError> {
    for (k, port) in params.ports().iter().enumerate() {
        if let Some(v) = port.pinned_voltage() {
            let node = PORT_NODE[k];
            a.row_mut(node).fill(0.0);
            a[(node, node)] = 1.0;
            rhs[node] = v;
        }
    }
    let x = a
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| SimError::NumericalFailure(format!("{what} is singular")))?;
    let scale = x.amax().max(1.0);
    if (a * x - rhs).amax() > 1e-9 * scale * a.amax().max(1.0) {
        return Err(SimError::NumericalFailure(format!("{what} is ill-conditioned")));
    }
    Ok(StateVector::from_vec(&x))
}

/// State at the start of the periodic orbit reached under a constant duty
/// command: the fixed point of the one-period map `x -> phi x + gamma`
/// composed from the exact segment propagators.
pub fn periodic_steady_state(
    duties: &DutyCommand,
    params: &ConverterParams,
) -> Result<StateVector, SimError> {
    let dynamics = derive_all(params)?;
    let schedule = build_schedule(duties, params.f_sw);
    let mut phi = StateMat::identity();
    let mut gamma = StateVec::zeros();
    for seg in schedule.segments() {
        let p = Propagator::new(&dynamics[seg.config.index()], seg.duration())?;
        phi = p.phi * phi;
        gamma = p.phi * gamma + p.gamma;
    }
    solve_pinned(StateMat::identity() - phi, gamma, params, "one-period map")
}
