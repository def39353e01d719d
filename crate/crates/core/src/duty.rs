//! Steady-state duty-ratio algebra.
//!
//! Duty ratios here are OFF fractions: `d1` is the share of the period during
//! which S1 is OFF. Each leg partitions its period between its three switches,
//! so `d1 + d2 + d3 = 1` and `d4 + d5 + d6 = 1`.
//!
//! In periodic steady state a generic leg with rail `v_c` settles at
//! `v_a = (d_b + d_c) v_c` and `v_b = d_c v_c`, which gives the port gains
//! `v2 = d3 v1`, `v3 = d6 v4`. The transfer inductor between the two upper
//! nodes balances when `(1 - d1) v1 = (1 - d4) v4`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Waveform;
use crate::topology::ConverterParams;

/// Tolerance on the per-leg duty sums.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DutyError {
    #[error("invalid duty command: {0}")]
    InvalidDuty(String),
    #[error("infeasible targets: {0}")]
    Infeasible(String),
    #[error("window too short: {0}")]
    WindowTooShort(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyCommand {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
}

impl DutyCommand {
    pub fn new(d: [f64; 6]) -> Result<Self, DutyError> {
        let cmd = Self::from_array(d);
        cmd.validate()?;
        Ok(cmd)
    }

    /// Builds a command from the two leg's outer duties, assigning the
    /// remainder of each period to the middle switch.
    pub fn from_outer(d1: f64, d3: f64, d4: f64, d6: f64) -> Result<Self, DutyError> {
        Self::new([d1, 1.0 - d1 - d3, d3, d4, 1.0 - d4 - d6, d6])
    }

    pub fn from_array(d: [f64; 6]) -> Self {
        Self {
            d1: d[0],
            d2: d[1],
            d3: d[2],
            d4: d[3],
            d5: d[4],
            d6: d[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.d1, self.d2, self.d3, self.d4, self.d5, self.d6]
    }

    pub fn leg1(&self) -> [f64; 3] {
        [self.d1, self.d2, self.d3]
    }

    pub fn leg2(&self) -> [f64; 3] {
        [self.d4, self.d5, self.d6]
    }

    pub fn validate(&self) -> Result<(), DutyError> {
        for (i, d) in self.to_array().iter().enumerate() {
            if !d.is_finite() || *d < -SUM_TOLERANCE || *d > 1.0 + SUM_TOLERANCE {
                return Err(DutyError::InvalidDuty(format!(
                    "d{} = {d} is outside [0, 1]",
                    i + 1
                )));
            }
        }
        let s1 = self.d1 + self.d2 + self.d3;
        if (s1 - 1.0).abs() > SUM_TOLERANCE {
            return Err(DutyError::InvalidDuty(format!(
                "leg 1 duties must sum to 1 (d1 + d2 + d3 = {s1})"
            )));
        }
        let s2 = self.d4 + self.d5 + self.d6;
        if (s2 - 1.0).abs() > SUM_TOLERANCE {
            return Err(DutyError::InvalidDuty(format!(
                "leg 2 duties must sum to 1 (d4 + d5 + d6 = {s2})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegSteadyState {
    pub v_a: f64,
    pub v_b: f64,
    pub v_c: f64,
}

/// Steady-state port voltages of a generic leg with rail `v_c`. Neither port
/// depends on the mode-A share directly.
pub fn leg_steady_state(_d_a: f64, d_b: f64, d_c: f64, v_c: f64) -> LegSteadyState {
    LegSteadyState {
        v_a: (d_b + d_c) * v_c,
        v_b: d_c * v_c,
        v_c,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortTargets {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
}

impl PortTargets {
    pub fn validate(&self) -> Result<(), DutyError> {
        for (i, v) in [self.v1, self.v2, self.v3, self.v4].iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(DutyError::Infeasible(format!(
                    "target v{} = {v} must be finite and non-negative",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// How the transfer pair (d1, d4) is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DutyPolicy {
    BoostPreferred,
    BuckPreferred,
    FixedD1(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampWindow {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClampWindow {
    fn default() -> Self {
        Self { lo: 0.05, hi: 0.95 }
    }
}

impl ClampWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self, DutyError> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(DutyError::InvalidDuty(format!(
                "clamp window [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Clamps a PWM duty. A switch held statically (duty exactly 0, no
    /// pulses at all) passes through untouched.
    pub fn apply(&self, d: f64, statically_on: bool) -> f64 {
        if statically_on && d == 0.0 {
            0.0
        } else {
            clamp_duty(d, self.lo, self.hi)
        }
    }

    /// Whether `d` is realizable: inside the window, or a static 0 / 1
    /// that needs no gate pulses.
    pub fn admits(&self, d: f64) -> bool {
        d == 0.0 || d == 1.0 || (d >= self.lo - 1e-12 && d <= self.hi + 1e-12)
    }
}

pub fn clamp_duty(d: f64, lo: f64, hi: f64) -> f64 {
    hi.min(lo.max(d))
}

/// `(v2, v3)` in steady state.
pub fn predict_port_voltages(duties: &DutyCommand, v1: f64, v4: f64) -> (f64, f64) {
    (duties.d3 * v1, duties.d6 * v4)
}

/// Volt-second imbalance of the transfer inductor, `(1 - d1) v1 - (1 - d4) v4`.
pub fn check_transfer_balance(duties: &DutyCommand, v1: f64, v4: f64) -> f64 {
    (1.0 - duties.d1) * v1 - (1.0 - duties.d4) * v4
}

fn port_ratio(v_port: f64, v_rail: f64, name: &str) -> Result<f64, DutyError> {
    if v_port > v_rail {
        return Err(DutyError::Infeasible(format!(
            "{name} = {v_port} exceeds its rail voltage {v_rail}"
        )));
    }
    if v_rail == 0.0 {
        return Ok(0.0);
    }
    Ok(v_port / v_rail)
}

/// Duties that place the four ports at `targets`.
pub fn solve_duties(targets: &PortTargets, policy: DutyPolicy) -> Result<DutyCommand, DutyError> {
    targets.validate()?;
    let PortTargets { v1, v2, v3, v4 } = *targets;
    let d3 = port_ratio(v2, v1, "v2")?;
    let d6 = port_ratio(v3, v4, "v3")?;

    let boost = |v1: f64, v4: f64| -> Result<(f64, f64), DutyError> {
        if v4 == 0.0 {
            return Err(DutyError::Infeasible("v4 = 0 cannot be boosted to".into()));
        }
        Ok((0.0, 1.0 - v1 / v4))
    };
    let buck = |v1: f64, v4: f64| -> Result<(f64, f64), DutyError> {
        if v1 == 0.0 {
            return Err(DutyError::Infeasible("v1 = 0 cannot be bucked from".into()));
        }
        Ok((1.0 - v4 / v1, 0.0))
    };

    let (d1, d4) = match policy {
        DutyPolicy::BoostPreferred => {
            if v1 <= v4 {
                boost(v1, v4)?
            } else {
                buck(v1, v4)?
            }
        }
        DutyPolicy::BuckPreferred => {
            if v1 >= v4 {
                buck(v1, v4)?
            } else {
                boost(v1, v4)?
            }
        }
        DutyPolicy::FixedD1(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(DutyError::Infeasible(format!("fixed d1 = {f} outside [0, 1]")));
            }
            if v4 == 0.0 {
                return Err(DutyError::Infeasible("v4 = 0 with a fixed d1".into()));
            }
            let d4 = 1.0 - (1.0 - f) * v1 / v4;
            if !(0.0..=1.0).contains(&d4) {
                return Err(DutyError::Infeasible(format!(
                    "fixed d1 = {f} needs d4 = {d4}, outside [0, 1]"
                )));
            }
            (f, d4)
        }
    };

    if d1 + d3 > 1.0 + SUM_TOLERANCE {
        return Err(DutyError::Infeasible(format!(
            "leg 1 over-committed: d1 + d3 = {}",
            d1 + d3
        )));
    }
    if d4 + d6 > 1.0 + SUM_TOLERANCE {
        return Err(DutyError::Infeasible(format!(
            "leg 2 over-committed: d4 + d6 = {}",
            d4 + d6
        )));
    }
    let d2 = (1.0 - d1 - d3).max(0.0);
    let d5 = (1.0 - d4 - d6).max(0.0);
    Ok(DutyCommand {
        d1,
        d2,
        d3,
        d4,
        d5,
        d6,
    })
}

/// `solve_duties` that also rejects solutions a bootstrap gate driver could
/// not realize.
pub fn solve_duties_within(
    targets: &PortTargets,
    policy: DutyPolicy,
    window: &ClampWindow,
) -> Result<DutyCommand, DutyError> {
    let cmd = solve_duties(targets, policy)?;
    for (i, d) in cmd.to_array().iter().enumerate() {
        if !window.admits(*d) {
            return Err(DutyError::Infeasible(format!(
                "d{} = {d} outside the clamp window [{}, {}]",
                i + 1,
                window.lo,
                window.hi
            )));
        }
    }
    Ok(cmd)
}

/// Volt-seconds `L (i_end - i_start)` accumulated by each inductor over the
/// last whole switching period of the waveform.
pub fn flux_balance_residuals(
    waveform: &Waveform,
    params: &ConverterParams,
) -> Result<[f64; 3], DutyError> {
    let period = params.period();
    let (start, end) = waveform
        .last_period(period)
        .ok_or_else(|| DutyError::WindowTooShort("less than one whole period recorded".into()))?;
    let l = params.inductances();
    let a = start.state.to_array();
    let b = end.state.to_array();
    Ok([
        l[0] * (b[0] - a[0]),
        l[1] * (b[1] - a[1]),
        l[2] * (b[2] - a[2]),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn port_gain_examples() {
        let d = DutyCommand::from_outer(1.0 / 3.0, 25.0 / 150.0, 0.0, 0.35).unwrap();
        let (v2, _) = predict_port_voltages(&d, 150.0, 100.0);
        assert!(approx(v2, 25.0));
        let d = DutyCommand::from_outer(0.2, 0.3, 0.2, 0.35).unwrap();
        let (_, v3) = predict_port_voltages(&d, 100.0, 100.0);
        assert!(approx(v3, 35.0));
        let d = DutyCommand::new([0.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(predict_port_voltages(&d, 73.5, 0.0).0, 73.5);
    }

    #[test]
    fn transfer_balance_examples() {
        let d = |d1, d4| DutyCommand::from_outer(d1, 0.0, d4, 0.0).unwrap();
        assert_eq!(check_transfer_balance(&d(0.0, 0.0), 100.0, 100.0), 0.0);
        assert!(check_transfer_balance(&d(0.0, 0.25), 75.0, 100.0).abs() < 1e-12);
        assert!(check_transfer_balance(&d(1.0 / 3.0, 0.0), 150.0, 100.0).abs() < 1e-12);
    }

    #[test]
    fn solve_buck_preferred_hev_voltages() {
        let t = PortTargets {
            v1: 150.0,
            v2: 25.0,
            v3: 35.0,
            v4: 100.0,
        };
        let d = solve_duties(&t, DutyPolicy::BuckPreferred).unwrap();
        assert!(approx(d.d1, 1.0 / 3.0));
        assert!(approx(d.d3, 1.0 / 6.0));
        assert_eq!(d.d4, 0.0);
        assert!(approx(d.d6, 0.35));
        assert!(approx(d.d2, 0.5));
    }

    #[test]
    fn solve_fixed_d1_near_unity() {
        let t = PortTargets {
            v1: 100.0,
            v2: 25.0,
            v3: 35.0,
            v4: 100.0,
        };
        let d = solve_duties(&t, DutyPolicy::FixedD1(0.2)).unwrap();
        assert_eq!(d.d1, 0.2);
        assert!(approx(d.d4, 0.2));
        solve_duties_within(&t, DutyPolicy::FixedD1(0.2), &ClampWindow::default()).unwrap();
    }

    #[test]
    fn solve_rejects_port_above_rail() {
        let t = PortTargets {
            v1: 100.0,
            v2: 150.0,
            v3: 35.0,
            v4: 100.0,
        };
        assert!(matches!(
            solve_duties(&t, DutyPolicy::BoostPreferred),
            Err(DutyError::Infeasible(_))
        ));
    }

    #[test]
    fn solve_within_rejects_tiny_pwm() {
        // d1 = 0.02 would be needed: not realizable by the driver
        let t = PortTargets {
            v1: 102.0,
            v2: 25.0,
            v3: 35.0,
            v4: 100.0,
        };
        let d = solve_duties(&t, DutyPolicy::BuckPreferred).unwrap();
        assert!(d.d1 > 0.0 && d.d1 < 0.05);
        assert!(solve_duties_within(&t, DutyPolicy::BuckPreferred, &ClampWindow::default()).is_err());
    }

    #[test]
    fn tie_breaking_at_equal_rails() {
        let t = PortTargets {
            v1: 100.0,
            v2: 10.0,
            v3: 10.0,
            v4: 100.0,
        };
        for p in [DutyPolicy::BoostPreferred, DutyPolicy::BuckPreferred] {
            let d = solve_duties(&t, p).unwrap();
            assert_eq!((d.d1, d.d4), (0.0, 0.0));
        }
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_duty(0.02, 0.05, 0.95), 0.05);
        assert_eq!(clamp_duty(0.50, 0.05, 0.95), 0.50);
        assert_eq!(clamp_duty(0.99, 0.05, 0.95), 0.95);
        let w = ClampWindow::default();
        assert_eq!(w.apply(0.0, true), 0.0);
        assert_eq!(w.apply(0.0, false), 0.05);
        assert!(ClampWindow::new(0.5, 0.4).is_err());
    }

    #[test]
    fn invalid_sums_are_rejected() {
        let err = DutyCommand::new([0.3, 0.3, 0.3, 0.2, 0.3, 0.5]).unwrap_err();
        assert!(err.to_string().contains("leg 1"));
        assert!(DutyCommand::new([1.2, -0.2, 0.0, 0.2, 0.3, 0.5]).is_err());
    }

    #[test]
    fn generic_leg_matches_port_gain() {
        let s = leg_steady_state(0.2, 0.3, 0.5, 120.0);
        assert!(approx(s.v_b, 60.0));
        assert!(approx(s.v_a, 96.0));
    }

    proptest! {
        #[test]
        fn predict_is_homogeneous(
            d3 in 0.0f64..1.0, d6 in 0.0f64..1.0,
            v1 in 0.0f64..500.0, v4 in 0.0f64..500.0, k in 0.01f64..10.0,
        ) {
            let d = DutyCommand::from_outer(0.0, d3, 0.0, d6).unwrap();
            let (a2, a3) = predict_port_voltages(&d, v1, v4);
            let (b2, b3) = predict_port_voltages(&d, k * v1, k * v4);
            prop_assert!((b2 - k * a2).abs() <= 1e-12 * (1.0 + b2.abs()));
            prop_assert!((b3 - k * a3).abs() <= 1e-12 * (1.0 + b3.abs()));
        }

        #[test]
        fn predict_is_monotone_in_d3(a in 0.0f64..1.0, b in 0.0f64..1.0, v1 in 1.0f64..500.0) {
            prop_assume!(a < b);
            let da = DutyCommand::from_outer(0.0, a, 0.0, 0.0).unwrap();
            let db = DutyCommand::from_outer(0.0, b, 0.0, 0.0).unwrap();
            prop_assert!(predict_port_voltages(&da, v1, 0.0).0 < predict_port_voltages(&db, v1, 0.0).0);
        }

        #[test]
        fn generic_leg_agrees_with_leg_one(
            d1 in 0.0f64..1.0, frac in 0.0f64..1.0, v1 in 0.0f64..500.0,
        ) {
            let d3 = (1.0 - d1) * frac;
            let d = DutyCommand::from_outer(d1, d3, 0.0, 0.0).unwrap();
            let s = leg_steady_state(d.d1, d.d2, d.d3, v1);
            prop_assert!((s.v_b - predict_port_voltages(&d, v1, 0.0).0).abs() < 1e-12 * (1.0 + v1));
        }

        #[test]
        fn solved_duties_satisfy_leg_sums(
            v1 in 1.0f64..400.0, v4 in 1.0f64..400.0, f2 in 0.0f64..1.0, f3 in 0.0f64..1.0,
        ) {
            let t = PortTargets { v1, v2: f2 * v1, v3: f3 * v4, v4 };
            if let Ok(d) = solve_duties(&t, DutyPolicy::BoostPreferred) {
                prop_assert!(d.validate().is_ok());
            }
        }
    }
}
