//! Closed-loop regulation and the HEV operating-mode supervisor.
//!
//! Three channels run once per switching period on the period-averaged state:
//!
//! * battery current through `d3`, around the feedforward `v2 / v1`;
//! * fuel-cell current through `d6`, around `v3 / v_dc_ref`;
//! * dc-link voltage through the transfer pair `(d1, d4)`. An outer voltage
//!   loop sets the transfer-inductor current reference and an inner current
//!   loop moves whichever transfer duty the operating region assigns.
//!
//! The current loops output a voltage `u` applied across their inductor on
//! top of the feedforward, so every loop sees the plant `1 / (L s)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::duty::{clamp_duty, solve_duties, ClampWindow, DutyCommand, DutyPolicy, PortTargets};
use crate::sim::{DutySource, PeriodObservation, SimError};
use crate::topology::{ConverterParams, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("setpoint infeasible: {0}")]
    SetpointInfeasible(String),
    #[error("invalid setpoint: {0}")]
    InvalidSetpoint(String),
}

impl From<ControlError> for SimError {
    fn from(e: ControlError) -> Self {
        SimError::Infeasible(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AntiWindup {
    /// Conditional integration, with the integral held inside the range that
    /// alone would saturate the output.
    #[default]
    ClampIntegral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    pub integral: f64,
    pub output_limits: (f64, f64),
    #[serde(default)]
    pub anti_windup: AntiWindup,
}

impl PiController {
    pub fn new(kp: f64, ki: f64, output_limits: (f64, f64)) -> Self {
        Self {
            kp,
            ki,
            integral: 0.0,
            output_limits,
            anti_windup: AntiWindup::ClampIntegral,
        }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        pi_step(self, error, dt)
    }
}

/// One update of `out = kp e + ki ∫e`, clamped to the output limits.
pub fn pi_step(ctrl: &mut PiController, error: f64, dt: f64) -> f64 {
    let (lo, hi) = ctrl.output_limits;
    let candidate = ctrl.integral + error * dt;
    let raw = ctrl.kp * error + ctrl.ki * candidate;
    let pushing_out = (raw > hi && error > 0.0) || (raw < lo && error < 0.0);
    if !pushing_out {
        ctrl.integral = candidate;
    }
    match ctrl.anti_windup {
        AntiWindup::ClampIntegral => {
            if ctrl.ki > 0.0 {
                ctrl.integral = clamp_duty(ctrl.integral, lo / ctrl.ki, hi / ctrl.ki);
            }
        }
    }
    clamp_duty(ctrl.kp * error + ctrl.ki * ctrl.integral, lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSetpoints {
    pub v_dc_ref: f64,
    /// Positive when the battery discharges into the converter.
    pub i_batt_ref: f64,
    pub i_fc_ref: f64,
    /// `None` leaves the ultracapacitor voltage floating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_uc_ref: Option<f64>,
}

impl ControlSetpoints {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.v_dc_ref.is_finite() && self.v_dc_ref > 0.0) {
            return Err(ControlError::InvalidSetpoint(format!(
                "v_dc_ref must be > 0 (got {})",
                self.v_dc_ref
            )));
        }
        if !self.i_batt_ref.is_finite() {
            return Err(ControlError::InvalidSetpoint("i_batt_ref must be finite".into()));
        }
        if !(self.i_fc_ref.is_finite() && self.i_fc_ref >= 0.0) {
            return Err(ControlError::InvalidSetpoint(format!(
                "i_fc_ref must be >= 0, the fuel cell cannot absorb power (got {})",
                self.i_fc_ref
            )));
        }
        if let Some(v) = self.v_uc_ref {
            if !(v.is_finite() && v > 0.0) {
                return Err(ControlError::InvalidSetpoint(format!(
                    "v_uc_ref must be > 0 (got {v})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HevMode {
    MediumPower {
        #[serde(default)]
        charge_battery: bool,
    },
    HighPower {
        #[serde(default)]
        uc_assist: bool,
    },
    LowPower {
        #[serde(default)]
        uc_assist: bool,
    },
    RegenerativeBraking {
        #[serde(default)]
        charge_uc: bool,
    },
}

/// Port voltages used to turn power demands into current references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NominalVoltages {
    pub v_dc: f64,
    pub v_fc: f64,
    pub v_batt: f64,
    pub v_uc: f64,
}

impl Default for NominalVoltages {
    fn default() -> Self {
        Self {
            v_dc: 100.0,
            v_fc: 35.0,
            v_batt: 25.0,
            v_uc: 150.0,
        }
    }
}

/// Operating-mode constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeTable {
    pub fc_high_power_amps: f64,
    pub battery_charge_amps: f64,
    pub regen_battery_amps: f64,
    /// Fraction of the battery's share handed to the ultracapacitor when
    /// assisting.
    pub uc_assist_share: f64,
}

impl Default for ModeTable {
    fn default() -> Self {
        Self {
            fc_high_power_amps: 40.0,
            battery_charge_amps: 10.0,
            regen_battery_amps: 15.0,
            uc_assist_share: 0.25,
        }
    }
}

pub fn mode_setpoints(mode: HevMode, demand_w: f64, nominal: &NominalVoltages) -> ControlSetpoints {
    mode_setpoints_with(mode, demand_w, nominal, &ModeTable::default())
}

pub fn mode_setpoints_with(
    mode: HevMode,
    demand_w: f64,
    nominal: &NominalVoltages,
    table: &ModeTable,
) -> ControlSetpoints {
    let assist = |on: bool| if on { 1.0 - table.uc_assist_share } else { 1.0 };
    let uc = |floating: bool| if floating { None } else { Some(nominal.v_uc) };
    let (i_fc, i_batt, v_uc) = match mode {
        HevMode::MediumPower { charge_battery } => {
            let i_batt = if charge_battery {
                -table.battery_charge_amps
            } else {
                0.0
            };
            let i_fc = (demand_w - i_batt * nominal.v_batt) / nominal.v_fc;
            (i_fc, i_batt, uc(false))
        }
        HevMode::HighPower { uc_assist } => {
            let i_fc = table.fc_high_power_amps;
            let remainder = demand_w - i_fc * nominal.v_fc;
            (i_fc, assist(uc_assist) * remainder / nominal.v_batt, uc(uc_assist))
        }
        HevMode::LowPower { uc_assist } => {
            (0.0, assist(uc_assist) * demand_w / nominal.v_batt, uc(uc_assist))
        }
        HevMode::RegenerativeBraking { charge_uc } => {
            (0.0, -table.regen_battery_amps, uc(charge_uc))
        }
    };
    ControlSetpoints {
        v_dc_ref: nominal.v_dc,
        i_batt_ref: i_batt,
        i_fc_ref: i_fc.max(0.0),
        v_uc_ref: v_uc,
    }
}

/// How the transfer pair is driven.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferPolicy {
    /// Boost below the dc-link reference, buck above it, fixed `d1` near
    /// unity gain.
    #[default]
    Auto,
    Boost,
    Buck,
    FixedD1(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferRegion {
    Boost,
    Buck,
    NearUnity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NearUnityBand {
    /// Enter when `|v1 / v_dc_ref - 1|` drops below this.
    pub enter: f64,
    /// Leave when it rises above this.
    pub exit: f64,
    pub fixed_d1: f64,
}

impl Default for NearUnityBand {
    fn default() -> Self {
        Self {
            enter: 0.10,
            exit: 0.12,
            fixed_d1: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// Battery-current loop, volts per amp and volts per amp-second.
    pub battery_kp: f64,
    pub battery_ki: f64,
    pub fc_kp: f64,
    pub fc_ki: f64,
    pub transfer_kp: f64,
    pub transfer_ki: f64,
    /// Dc-link voltage loop, amps per volt and amps per volt-second.
    pub voltage_kp: f64,
    pub voltage_ki: f64,
    pub transfer_current_limit: f64,
    /// Battery-reference trim per volt of ultracapacitor error.
    pub uc_trim_gain: f64,
    pub uc_trim_limit: f64,
}

impl ControlGains {
    /// Current loops cross over at `f_sw / 20`, the voltage loop a decade
    /// lower; each PI zero sits a factor five below its crossover.
    pub fn derive(params: &ConverterParams) -> Self {
        let wc = 2.0 * std::f64::consts::PI * params.f_sw / 20.0;
        let wv = wc / 10.0;
        let current = |l: f64| (wc * l, wc * l * wc / 5.0);
        let (battery_kp, battery_ki) = current(params.l1);
        let (fc_kp, fc_ki) = current(params.l3);
        let (transfer_kp, transfer_ki) = current(params.l2);
        let voltage_kp = wv * params.c4;
        Self {
            battery_kp,
            battery_ki,
            fc_kp,
            fc_ki,
            transfer_kp,
            transfer_ki,
            voltage_kp,
            voltage_ki: voltage_kp * wv / 5.0,
            transfer_current_limit: 60.0,
            uc_trim_gain: 0.5,
            uc_trim_limit: 2.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            battery_kp: 0.0,
            battery_ki: 0.0,
            fc_kp: 0.0,
            fc_ki: 0.0,
            transfer_kp: 0.0,
            transfer_ki: 0.0,
            voltage_kp: 0.0,
            voltage_ki: 0.0,
            transfer_current_limit: 0.0,
            uc_trim_gain: 0.0,
            uc_trim_limit: 0.0,
        }
    }
}

/// Partial gain set; unset entries fall back to [`ControlGains::derive`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub battery_kp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub battery_ki: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc_kp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fc_ki: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_kp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_ki: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voltage_kp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voltage_ki: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_current_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uc_trim_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uc_trim_limit: Option<f64>,
}

impl GainOverrides {
    pub fn resolve(&self, params: &ConverterParams) -> ControlGains {
        let d = ControlGains::derive(params);
        ControlGains {
            battery_kp: self.battery_kp.unwrap_or(d.battery_kp),
            battery_ki: self.battery_ki.unwrap_or(d.battery_ki),
            fc_kp: self.fc_kp.unwrap_or(d.fc_kp),
            fc_ki: self.fc_ki.unwrap_or(d.fc_ki),
            transfer_kp: self.transfer_kp.unwrap_or(d.transfer_kp),
            transfer_ki: self.transfer_ki.unwrap_or(d.transfer_ki),
            voltage_kp: self.voltage_kp.unwrap_or(d.voltage_kp),
            voltage_ki: self.voltage_ki.unwrap_or(d.voltage_ki),
            transfer_current_limit: self
                .transfer_current_limit
                .unwrap_or(d.transfer_current_limit),
            uc_trim_gain: self.uc_trim_gain.unwrap_or(d.uc_trim_gain),
            uc_trim_limit: self.uc_trim_limit.unwrap_or(d.uc_trim_limit),
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let all = [
            ("battery_kp", self.battery_kp),
            ("battery_ki", self.battery_ki),
            ("fc_kp", self.fc_kp),
            ("fc_ki", self.fc_ki),
            ("transfer_kp", self.transfer_kp),
            ("transfer_ki", self.transfer_ki),
            ("voltage_kp", self.voltage_kp),
            ("voltage_ki", self.voltage_ki),
            ("transfer_current_limit", self.transfer_current_limit),
            ("uc_trim_gain", self.uc_trim_gain),
            ("uc_trim_limit", self.uc_trim_limit),
        ];
        for (name, v) in all {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(ControlError::InvalidSetpoint(format!(
                        "gain {name} must be finite and >= 0 (got {v})"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub gains: ControlGains,
    pub window: ClampWindow,
    pub policy: TransferPolicy,
    pub near_unity: NearUnityBand,
}

impl ControllerConfig {
    pub fn new(params: &ConverterParams) -> Self {
        Self {
            gains: ControlGains::derive(params),
            window: ClampWindow::default(),
            policy: TransferPolicy::Auto,
            near_unity: NearUnityBand::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HevController {
    pub config: ControllerConfig,
    battery: PiController,
    fc: PiController,
    voltage: PiController,
    transfer: PiController,
    region: Option<TransferRegion>,
}

impl HevController {
    pub fn new(config: ControllerConfig) -> Self {
        let g = &config.gains;
        let pi = |kp, ki| PiController::new(kp, ki, (0.0, 0.0));
        Self {
            battery: pi(g.battery_kp, g.battery_ki),
            fc: pi(g.fc_kp, g.fc_ki),
            voltage: pi(g.voltage_kp, g.voltage_ki),
            transfer: pi(g.transfer_kp, g.transfer_ki),
            region: None,
            config,
        }
    }

    pub fn region(&self) -> Option<TransferRegion> {
        self.region
    }

    fn choose_region(&mut self, v1: f64, v_ref: f64) -> TransferRegion {
        let region = match self.config.policy {
            TransferPolicy::Boost => TransferRegion::Boost,
            TransferPolicy::Buck => TransferRegion::Buck,
            TransferPolicy::FixedD1(_) => TransferRegion::NearUnity,
            TransferPolicy::Auto => {
                let dev = (v1 / v_ref - 1.0).abs();
                let band = self.config.near_unity;
                let near = match self.region {
                    Some(TransferRegion::NearUnity) => dev <= band.exit,
                    _ => dev < band.enter,
                };
                if near {
                    TransferRegion::NearUnity
                } else if v1 < v_ref {
                    TransferRegion::Boost
                } else {
                    TransferRegion::Buck
                }
            }
        };
        self.region = Some(region);
        region
    }

    fn fixed_d1(&self) -> f64 {
        match self.config.policy {
            TransferPolicy::FixedD1(f) => f,
            _ => self.config.near_unity.fixed_d1,
        }
    }

    /// Duty command for the next period from the measured (period-averaged)
    /// state.
    pub fn control_period(
        &mut self,
        measured: &StateVector,
        setpoints: &ControlSetpoints,
        params: &ConverterParams,
    ) -> Result<DutyCommand, ControlError> {
        setpoints.validate()?;
        if !measured.is_finite() {
            return Err(ControlError::InvalidSetpoint("measured state is not finite".into()));
        }
        let dt = params.period();
        let window = self.config.window;
        let (lo, hi) = (window.lo, window.hi);
        let gains = self.config.gains;
        let v1 = measured.v_c1;
        let v_ref = setpoints.v_dc_ref;
        if !(v1 > 0.0) {
            return Err(ControlError::SetpointInfeasible(format!(
                "rail voltage v1 = {v1} must be positive"
            )));
        }

        let region = self.choose_region(v1, v_ref);
        let policy = match region {
            TransferRegion::Boost => DutyPolicy::BoostPreferred,
            TransferRegion::Buck => DutyPolicy::BuckPreferred,
            TransferRegion::NearUnity => DutyPolicy::FixedD1(self.fixed_d1()),
        };
        let ff = solve_duties(
            &PortTargets {
                v1,
                v2: measured.v_c2.max(0.0),
                v3: measured.v_c3.max(0.0),
                v4: v_ref,
            },
            policy,
        )
        .map_err(|e| ControlError::SetpointInfeasible(e.to_string()))?;
        // solve_duties falls back across regions when the ratio forbids the
        // preferred one; the forced policies must not
        let transfer_ok = match region {
            TransferRegion::Boost => ff.d1 == 0.0,
            TransferRegion::Buck => ff.d4 == 0.0,
            TransferRegion::NearUnity => true,
        };
        if !transfer_ok {
            return Err(ControlError::SetpointInfeasible(format!(
                "{region:?} transfer cannot reach v_dc_ref = {v_ref} from v1 = {v1}"
            )));
        }

        // battery current, d3 = ff - u / v1
        let i_batt = -measured.i_l1;
        let mut i_batt_ref = setpoints.i_batt_ref;
        if let Some(v_uc_ref) = setpoints.v_uc_ref {
            let trim = (gains.uc_trim_gain * (v1 - v_uc_ref))
                .clamp(-gains.uc_trim_limit, gains.uc_trim_limit);
            i_batt_ref -= trim;
        }
        // a driven transfer duty needs at least `lo` beside the tap duty and
        // the middle switch
        let d3_max = if region == TransferRegion::Buck { 1.0 - 2.0 * lo } else { hi }.min(hi);
        let d6_max = if region == TransferRegion::Buck { hi } else { 1.0 - 2.0 * lo }.min(hi);
        if d3_max < lo || d6_max < lo {
            return Err(ControlError::SetpointInfeasible(format!(
                "clamp window [{lo}, {hi}] leaves no room for three duties per leg"
            )));
        }
        self.battery.output_limits = ((ff.d3 - d3_max) * v1, (ff.d3 - lo) * v1);
        let u_b = self.battery.step(i_batt_ref - i_batt, dt);
        let d3 = (ff.d3 - u_b / v1).clamp(lo, d3_max);

        // fuel-cell current, d6 = ff - u / v_ref
        let i_fc = -measured.i_l3;
        self.fc.output_limits = ((ff.d6 - d6_max) * v_ref, (ff.d6 - lo) * v_ref);
        let u_f = self.fc.step(setpoints.i_fc_ref - i_fc, dt);
        let d6 = (ff.d6 - u_f / v_ref).clamp(lo, d6_max);

        // dc-link voltage through the transfer inductor current
        let i2_lim = gains.transfer_current_limit;
        self.voltage.output_limits = (-i2_lim, i2_lim);
        let i2_ref = self.voltage.step(v_ref - measured.v_c4, dt);
        let e2 = i2_ref - measured.i_l2;
        let (d1, d4) = match region {
            TransferRegion::Buck => {
                let cap = (1.0 - lo - d3).min(hi).max(lo);
                self.transfer.output_limits = ((ff.d1 - cap) * v1, (ff.d1 - lo) * v1);
                let u = self.transfer.step(e2, dt);
                ((ff.d1 - u / v1).clamp(lo, cap), 0.0)
            }
            TransferRegion::Boost | TransferRegion::NearUnity => {
                let cap = (1.0 - lo - d6).min(hi).max(lo);
                self.transfer.output_limits = ((lo - ff.d4) * v_ref, (cap - ff.d4) * v_ref);
                let u = self.transfer.step(e2, dt);
                let d1 = if region == TransferRegion::NearUnity {
                    let room = 1.0 - lo - d3;
                    let f = window.apply(ff.d1, true);
                    if room >= f {
                        f
                    } else if room >= lo {
                        room
                    } else {
                        0.0
                    }
                } else {
                    0.0
                };
                (d1, (ff.d4 + u / v_ref).clamp(lo, cap))
            }
        };

        let cmd = DutyCommand::from_outer(d1, d3, d4, d6)
            .map_err(|e| ControlError::SetpointInfeasible(e.to_string()))?;
        Ok(cmd)
    }
}

/// Closed-loop duty source: setpoints change at scheduled times, converter
/// parameters (load steps) at others.
#[derive(Debug, Clone)]
pub struct ClosedLoopSource {
    pub controller: HevController,
    setpoints: Vec<(f64, ControlSetpoints)>,
    param_changes: Vec<(f64, ConverterParams)>,
    next_param: usize,
}

impl ClosedLoopSource {
    /// `setpoints` must be sorted by time and start at or before zero.
    pub fn new(controller: HevController, setpoints: Vec<(f64, ControlSetpoints)>) -> Self {
        Self {
            controller,
            setpoints,
            param_changes: Vec::new(),
            next_param: 0,
        }
    }

    pub fn with_param_changes(mut self, changes: Vec<(f64, ConverterParams)>) -> Self {
        self.param_changes = changes;
        self
    }

    pub fn setpoints_at(&self, t: f64) -> Option<&ControlSetpoints> {
        let tol = 1e-12_f64.max(t.abs() * 1e-12);
        self.setpoints
            .iter()
            .rev()
            .find(|(at, _)| *at <= t + tol)
            .map(|(_, s)| s)
    }
}

impl DutySource for ClosedLoopSource {
    fn next_period(&mut self, obs: &PeriodObservation<'_>) -> Result<DutyCommand, SimError> {
        let sp = *self.setpoints_at(obs.start_time).ok_or_else(|| {
            SimError::Config(format!("no setpoint active at t = {}", obs.start_time))
        })?;
        let measured = obs.period_average.unwrap_or(obs.state);
        Ok(self.controller.control_period(measured, &sp, obs.params)?)
    }

    fn param_update(&mut self, start_time: f64) -> Option<ConverterParams> {
        let period_tol = 1e-9;
        let mut latest = None;
        while let Some((at, p)) = self.param_changes.get(self.next_param) {
            if *at <= start_time + period_tol {
                latest = Some(*p);
                self.next_param += 1;
            } else {
                break;
            }
        }
        latest
    }
}
