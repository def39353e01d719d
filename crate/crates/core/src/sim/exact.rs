//! Closed-form propagation over a constant-topology interval.
//!
//! `x(dt) = e^{A dt} x0 + ∫₀^dt e^{A s} ds · b` is read off the exponential of
//! the augmented matrix `[[A, b], [0, 0]]`, which stays well defined when `A`
//! is singular (pinned source nodes give zero rows).

use std::collections::HashMap;

use nalgebra::SMatrix;

use super::SimError;
use crate::topology::{LinearDynamics, StateMat, StateVec, StateVector, STATE_DIM};

const AUG: usize = STATE_DIM + 1;
type AugMat = SMatrix<f64, AUG, AUG>;

const MAX_TERMS: usize = 60;

fn norm1<const N: usize>(m: &SMatrix<f64, N, N>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring around a Taylor series.
pub fn expm<const N: usize>(m: &SMatrix<f64, N, N>) -> Result<SMatrix<f64, N, N>, SimError> {
    let norm = norm1(m);
    if !norm.is_finite() {
        return Err(SimError::NumericalFailure("non-finite matrix".into()));
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    if squarings > 1000 {
        return Err(SimError::NumericalFailure(format!("matrix norm {norm} too large")));
    }
    let scaled = m / 2f64.powi(squarings);

    let mut sum = SMatrix::<f64, N, N>::identity();
    let mut term = SMatrix::<f64, N, N>::identity();
    let mut converged = false;
    for k in 1..=MAX_TERMS {
        term = term * scaled / k as f64;
        sum += term;
        if norm1(&term) <= f64::EPSILON * 1e-2 * norm1(&sum) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SimError::NumericalFailure(
            "Taylor series for the matrix exponential did not converge".into(),
        ));
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NumericalFailure("matrix exponential overflowed".into()));
    }
    Ok(sum)
}

/// Affine map `x -> phi x + gamma` taking a state across one interval.
#[derive(Debug, Clone, Copy)]
pub struct Propagator {
    pub phi: StateMat,
    pub gamma: StateVec,
}

impl Propagator {
    pub fn new(dynamics: &LinearDynamics, dt: f64) -> Result<Self, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::Config(format!("interval length {dt} must be > 0")));
        }
        let mut aug = AugMat::zeros();
        aug.fixed_view_mut::<STATE_DIM, STATE_DIM>(0, 0)
            .copy_from(&(dynamics.a_matrix * dt));
        aug.fixed_view_mut::<STATE_DIM, 1>(0, STATE_DIM)
            .copy_from(&(dynamics.b_vector * dt));
        let e = expm(&aug)?;
        Ok(Self {
            phi: e.fixed_view::<STATE_DIM, STATE_DIM>(0, 0).into_owned(),
            gamma: e.fixed_view::<STATE_DIM, 1>(0, STATE_DIM).into_owned(),
        })
    }

    pub fn apply(&self, x: &StateVec) -> StateVec {
        self.phi * x + self.gamma
    }
}

pub fn exact_segment_solution(
    dynamics: &LinearDynamics,
    x0: &StateVector,
    dt: f64,
) -> Result<StateVector, SimError> {
    let p = Propagator::new(dynamics, dt)?;
    Ok(StateVector::from_vec(&p.apply(&x0.to_vec())))
}

/// Propagators keyed by configuration and exact interval length. Constant
/// duty runs reuse a handful of entries for every period.
#[derive(Debug, Default)]
pub(crate) struct PropagatorCache {
    map: HashMap<(usize, u64), Propagator>,
}

impl PropagatorCache {
    const CAPACITY: usize = 8192;

    pub fn get(
        &mut self,
        dynamics: &LinearDynamics,
        dt: f64,
    ) -> Result<Propagator, SimError> {
        let key = (dynamics.valid_for.index(), dt.to_bits());
        if let Some(p) = self.map.get(&key) {
            return Ok(*p);
        }
        let p = Propagator::new(dynamics, dt)?;
        if self.map.len() >= Self::CAPACITY {
            self.map.clear();
        }
        self.map.insert(key, p);
        Ok(p)
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{derive_dynamics, ConverterParams, PortModel, SwitchConfig};
    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dyn_from(a: StateMat, b: StateVec) -> LinearDynamics {
        let base = derive_dynamics(
            SwitchConfig::all()[0],
            &ConverterParams::with_ports([PortModel::CurrentSink { amps: 0.0 }; 4]),
        )
        .unwrap();
        LinearDynamics {
            a_matrix: a,
            b_vector: b,
            ..base
        }
    }

    #[test]
    fn zero_system_is_identity() {
        let d = dyn_from(StateMat::zeros(), StateVec::zeros());
        let x0 = StateVector::from_array([1.0, -2.0, 3.0, 4.0, 5.0, -6.0, 7.0]);
        assert_eq!(exact_segment_solution(&d, &x0, 1e-3).unwrap(), x0);
    }

    #[test]
    fn scalar_rl_matches_exponential() {
        let (r, l, v) = (10.0, 0.72e-3, 100.0);
        let mut a = StateMat::zeros();
        a[(0, 0)] = -r / l;
        let mut b = StateVec::zeros();
        b[0] = v / l;
        let d = dyn_from(a, b);
        for dt in [1e-6, 2e-5, 1e-4, 1e-3] {
            let x = exact_segment_solution(&d, &StateVector::default(), dt).unwrap();
            let expected = v / r * (1.0 - (-r * dt / l).exp());
            assert!((x.i_l1 - expected).abs() <= 1e-12 * expected, "dt={dt}");
        }
    }

    #[test]
    fn rotation_matches_closed_form() {
        let w = 3.0;
        let e = expm(&Matrix2::new(0.0, -w, w, 0.0)).unwrap();
        assert!((e[(0, 0)] - w.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - w.sin()).abs() < 1e-14);
    }

    #[test]
    fn matches_refined_rk4_on_random_stable_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // diagonally dominant with negative diagonal => stable
        let mut a = StateMat::zeros();
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                a[(i, j)] = rng.gen_range(-2e4..2e4);
            }
            a[(i, i)] = -1.5e5 - rng.gen_range(0.0..5e4);
        }
        let b = StateVec::from_fn(|_, _| rng.gen_range(-1e5..1e5));
        let d = dyn_from(a, b);
        let x0 = StateVector::from_array(std::array::from_fn(|_| rng.gen_range(-10.0..10.0)));
        let dt = 1e-6;
        let exact = exact_segment_solution(&d, &x0, dt).unwrap().to_vec();

        let n = 100;
        let h = dt / n as f64;
        let f = |x: &StateVec| a * x + b;
        let mut x = x0.to_vec();
        for _ in 0..n {
            let k1 = f(&x);
            let k2 = f(&(x + k1 * (h / 2.0)));
            let k3 = f(&(x + k2 * (h / 2.0)));
            let k4 = f(&(x + k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        let err = (x - exact).amax() / exact.amax();
        assert!(err <= 1e-8, "relative error {err}");
    }

    #[test]
    fn overflow_is_reported() {
        let mut a = StateMat::zeros();
        a[(0, 0)] = 1e6;
        let d = dyn_from(a, StateVec::zeros());
        assert!(matches!(
            exact_segment_solution(&d, &StateVector::default(), 1.0),
            Err(SimError::NumericalFailure(_))
        ));
    }
}
