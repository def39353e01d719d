//! Circuit model of the four-port converter and its per-configuration linear
//! dynamics.
//!
//! Two three-switch legs share ground. Leg 1 stacks S1 (rail to A1), S2 (A1 to
//! B1) and S3 (B1 to ground) across the port-1 capacitor C1; leg 2 mirrors it
//! with S4..S6 across C4. Three inductors tap the inner nodes:
//!
//! - L1 from B1 to port 2 (capacitor C2)
//! - L2 from A1 to A2 (the inter-leg transfer inductor)
//! - L3 from B2 to port 3 (capacitor C3)
//!
//! Exactly one switch per leg is OFF at any instant. With the top switch OFF
//! (mode A) both inner nodes are held at ground through the two lower
//! switches; with the middle switch OFF (mode B) node A sits at the rail and
//! node B at ground; with the bottom switch OFF (mode C) both sit at the rail.
//!
//! The state vector is `[i_l1, i_l2, i_l3, v_c1, v_c2, v_c3, v_c4]`. Inductor
//! currents are positive flowing B1 -> port 2, A1 -> A2 and B2 -> port 3.

use std::fmt;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_DIM: usize = 7;

pub type StateVec = SVector<f64, STATE_DIM>;
pub type StateMat = SMatrix<f64, STATE_DIM, STATE_DIM>;

pub const I_L1: usize = 0;
pub const I_L2: usize = 1;
pub const I_L3: usize = 2;
pub const V_C1: usize = 3;
pub const V_C2: usize = 4;
pub const V_C3: usize = 5;
pub const V_C4: usize = 6;

/// State index of the capacitor voltage at each port.
pub const PORT_NODE: [usize; 4] = [V_C1, V_C2, V_C3, V_C4];

pub const STATE_NAMES: [&str; STATE_DIM] =
    ["i_l1", "i_l2", "i_l3", "v_c1", "v_c2", "v_c3", "v_c4"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
}

fn invalid(name: impl Into<String>, reason: impl Into<String>) -> TopologyError {
    TopologyError::InvalidParameter {
        name: name.into(),
        reason: reason.into(),
    }
}

/// Which switch of a three-switch leg is OFF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LegMode {
    /// Top switch OFF; both inner nodes grounded.
    ModeA,
    /// Middle switch OFF; upper node at the rail, lower node grounded.
    ModeB,
    /// Bottom switch OFF; both inner nodes at the rail.
    ModeC,
}

impl LegMode {
    pub const ALL: [LegMode; 3] = [LegMode::ModeA, LegMode::ModeB, LegMode::ModeC];

    /// Index of the OFF switch within the leg (0 = top).
    pub fn off_switch(self) -> usize {
        match self {
            LegMode::ModeA => 0,
            LegMode::ModeB => 1,
            LegMode::ModeC => 2,
        }
    }

    /// Conduction state of (top, middle, bottom); exactly two are `true`.
    pub fn conducting(self) -> [bool; 3] {
        let mut on = [true; 3];
        on[self.off_switch()] = false;
        on
    }

    pub fn label(self) -> &'static str {
        match self {
            LegMode::ModeA => "A",
            LegMode::ModeB => "B",
            LegMode::ModeC => "C",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "A" => Some(LegMode::ModeA),
            "B" => Some(LegMode::ModeB),
            "C" => Some(LegMode::ModeC),
            _ => None,
        }
    }
}

impl fmt::Display for LegMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SwitchConfig {
    pub leg1: LegMode,
    pub leg2: LegMode,
}

impl SwitchConfig {
    pub fn new(leg1: LegMode, leg2: LegMode) -> Self {
        Self { leg1, leg2 }
    }

    /// All nine combinations, ordered by `index()`.
    pub fn all() -> [SwitchConfig; 9] {
        let mut out = [SwitchConfig::new(LegMode::ModeA, LegMode::ModeA); 9];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = SwitchConfig::new(LegMode::ALL[i / 3], LegMode::ALL[i % 3]);
        }
        out
    }

    pub fn index(self) -> usize {
        self.leg1.off_switch() * 3 + self.leg2.off_switch()
    }
}

impl fmt::Display for SwitchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.leg1, self.leg2)
    }
}

/// External element attached to a port capacitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PortModel {
    /// Voltage source with optional series resistance. With zero series
    /// resistance the port voltage is pinned and its capacitor state is
    /// eliminated from the dynamics.
    VoltageSource {
        volts: f64,
        #[serde(default)]
        series_ohms: f64,
    },
    ResistiveLoad { ohms: f64 },
    /// Storage capacitor (ultracapacitor) in parallel with the filter capacitor.
    CapacitorOnly { farads: f64, initial_volts: f64 },
    /// Constant current drawn from the port node; negative values inject.
    CurrentSink { amps: f64 },
}

impl PortModel {
    pub fn ideal_source(volts: f64) -> Self {
        PortModel::VoltageSource {
            volts,
            series_ohms: 0.0,
        }
    }

    /// Voltage the node is pinned to, if this is an ideal source.
    pub fn pinned_voltage(&self) -> Option<f64> {
        match *self {
            PortModel::VoltageSource { volts, series_ohms } if series_ohms == 0.0 => Some(volts),
            _ => None,
        }
    }

    pub fn is_dissipative(&self) -> bool {
        match *self {
            PortModel::ResistiveLoad { .. } => true,
            PortModel::VoltageSource { series_ohms, .. } => series_ohms > 0.0,
            _ => false,
        }
    }

    fn validate(&self, name: &str) -> Result<(), TopologyError> {
        match *self {
            PortModel::VoltageSource { volts, series_ohms } => {
                if !volts.is_finite() {
                    return Err(invalid(name, "source voltage must be finite"));
                }
                if !(series_ohms >= 0.0 && series_ohms.is_finite()) {
                    return Err(invalid(name, "series_ohms must be >= 0"));
                }
            }
            PortModel::ResistiveLoad { ohms } => {
                if !(ohms > 0.0 && ohms.is_finite()) {
                    return Err(invalid(name, "load resistance must be > 0"));
                }
            }
            PortModel::CapacitorOnly {
                farads,
                initial_volts,
            } => {
                if !(farads > 0.0 && farads.is_finite()) {
                    return Err(invalid(name, "capacitance must be > 0"));
                }
                if !initial_volts.is_finite() {
                    return Err(invalid(name, "initial voltage must be finite"));
                }
            }
            PortModel::CurrentSink { amps } => {
                if !amps.is_finite() {
                    return Err(invalid(name, "sink current must be finite"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterParams {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub f_sw: f64,
    pub port1: PortModel,
    pub port2: PortModel,
    pub port3: PortModel,
    pub port4: PortModel,
    #[serde(default)]
    pub switch_on_resistance: f64,
}

impl ConverterParams {
    pub const DEFAULT_INDUCTANCE: f64 = 0.72e-3;
    pub const DEFAULT_CAPACITANCE: f64 = 470e-6;
    pub const DEFAULT_F_SW: f64 = 50e3;
    pub const DEFAULT_ULTRACAP: f64 = 1.0;

    /// Default component values with the given port models.
    pub fn with_ports(ports: [PortModel; 4]) -> Self {
        Self {
            l1: Self::DEFAULT_INDUCTANCE,
            l2: Self::DEFAULT_INDUCTANCE,
            l3: Self::DEFAULT_INDUCTANCE,
            c1: Self::DEFAULT_CAPACITANCE,
            c2: Self::DEFAULT_CAPACITANCE,
            c3: Self::DEFAULT_CAPACITANCE,
            c4: Self::DEFAULT_CAPACITANCE,
            f_sw: Self::DEFAULT_F_SW,
            port1: ports[0],
            port2: ports[1],
            port3: ports[2],
            port4: ports[3],
            switch_on_resistance: 0.0,
        }
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f_sw
    }

    pub fn ports(&self) -> [PortModel; 4] {
        [self.port1, self.port2, self.port3, self.port4]
    }

    pub fn port(&self, index: usize) -> PortModel {
        self.ports()[index]
    }

    pub fn set_port(&mut self, index: usize, model: PortModel) {
        match index {
            0 => self.port1 = model,
            1 => self.port2 = model,
            2 => self.port3 = model,
            3 => self.port4 = model,
            _ => panic!("port index {index} out of range"),
        }
    }

    pub fn inductances(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    /// Filter capacitances C1..C4.
    pub fn capacitances(&self) -> [f64; 4] {
        [self.c1, self.c2, self.c3, self.c4]
    }

    /// Total capacitance seen at each port node, including storage ports.
    pub fn node_capacitances(&self) -> [f64; 4] {
        let mut c = self.capacitances();
        for (k, port) in self.ports().iter().enumerate() {
            if let PortModel::CapacitorOnly { farads, .. } = *port {
                c[k] += farads;
            }
        }
        c
    }

    /// True when no element can dissipate energy.
    pub fn is_lossless(&self) -> bool {
        self.switch_on_resistance == 0.0 && !self.ports().iter().any(|p| p.is_dissipative())
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("l3", self.l3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "inductance must be > 0"));
            }
        }
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("c4", self.c4)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, "capacitance must be > 0"));
            }
        }
        if !(self.f_sw > 0.0 && self.f_sw.is_finite()) {
            return Err(invalid("f_sw", "switching frequency must be > 0"));
        }
        if !(self.switch_on_resistance >= 0.0 && self.switch_on_resistance.is_finite()) {
            return Err(invalid("switch_on_resistance", "must be >= 0"));
        }
        for (k, port) in self.ports().iter().enumerate() {
            port.validate(&format!("port{}", k + 1))?;
        }
        Ok(())
    }

    /// Overwrites pinned node voltages with their source values.
    pub fn pin_state(&self, x: &mut StateVector) {
        for (k, port) in self.ports().iter().enumerate() {
            if let Some(v) = port.pinned_voltage() {
                x.set(PORT_NODE[k], v);
            }
        }
    }

    /// Initial state with storage ports at their initial voltage, pinned
    /// ports at their source voltage and everything else at zero.
    pub fn rest_state(&self) -> StateVector {
        let mut x = StateVector::default();
        for (k, port) in self.ports().iter().enumerate() {
            if let PortModel::CapacitorOnly { initial_volts, .. } = *port {
                x.set(PORT_NODE[k], initial_volts);
            }
        }
        self.pin_state(&mut x);
        x
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub i_l1: f64,
    pub i_l2: f64,
    pub i_l3: f64,
    pub v_c1: f64,
    pub v_c2: f64,
    pub v_c3: f64,
    pub v_c4: f64,
}

impl StateVector {
    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self {
            i_l1: a[0],
            i_l2: a[1],
            i_l3: a[2],
            v_c1: a[3],
            v_c2: a[4],
            v_c3: a[5],
            v_c4: a[6],
        }
    }

    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            self.i_l1, self.i_l2, self.i_l3, self.v_c1, self.v_c2, self.v_c3, self.v_c4,
        ]
    }

    pub fn from_vec(v: &StateVec) -> Self {
        let mut a = [0.0; STATE_DIM];
        a.copy_from_slice(v.as_slice());
        Self::from_array(a)
    }

    pub fn to_vec(&self) -> StateVec {
        StateVec::from(self.to_array())
    }

    pub fn get(&self, index: usize) -> f64 {
        self.to_array()[index]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut a = self.to_array();
        a[index] = value;
        *self = Self::from_array(a);
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Voltage at port `k` (0-based).
    pub fn port_voltage(&self, k: usize) -> f64 {
        self.get(PORT_NODE[k])
    }

    /// Energy held in the inductors and the filter capacitors. Storage ports
    /// are outside this boundary and show up as port power instead.
    pub fn stored_energy(&self, params: &ConverterParams) -> f64 {
        let l = params.inductances();
        let c = params.capacitances();
        let a = self.to_array();
        0.5 * (0..3).map(|k| l[k] * a[k] * a[k]).sum::<f64>()
            + 0.5 * (0..4).map(|k| c[k] * a[3 + k] * a[3 + k]).sum::<f64>()
    }
}

/// Inductor voltages `(v_la, v_lb)` of a generic leg with rail `v_rail`,
/// upper port `v_port_a` and lower port `v_port_b`.
pub fn leg_inductor_voltages(
    mode: LegMode,
    v_port_a: f64,
    v_port_b: f64,
    v_rail: f64,
) -> (f64, f64) {
    match mode {
        LegMode::ModeA => (-v_port_a, -v_port_b),
        LegMode::ModeB => (v_rail - v_port_a, -v_port_b),
        LegMode::ModeC => (v_rail - v_port_a, v_rail - v_port_b),
    }
}

/// `dx/dt = A x + b` for one switch configuration, plus the linear map from
/// state to port currents (positive flowing from the external element into
/// the converter).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub a_matrix: StateMat,
    pub b_vector: StateVec,
    pub valid_for: SwitchConfig,
    pub port_current_matrix: SMatrix<f64, 4, STATE_DIM>,
    pub port_current_offset: SVector<f64, 4>,
}

impl LinearDynamics {
    pub fn derivative(&self, x: &StateVec) -> StateVec {
        self.a_matrix * x + self.b_vector
    }

    pub fn port_currents(&self, x: &StateVec) -> [f64; 4] {
        let i = self.port_current_matrix * x + self.port_current_offset;
        [i[0], i[1], i[2], i[3]]
    }

    /// Instantaneous power delivered by each port into the converter.
    pub fn port_powers(&self, x: &StateVec) -> [f64; 4] {
        let i = self.port_currents(x);
        let mut p = [0.0; 4];
        for k in 0..4 {
            p[k] = x[PORT_NODE[k]] * i[k];
        }
        p
    }
}

type Form = StateVec;

fn unit(index: usize) -> Form {
    let mut f = Form::zeros();
    f[index] = 1.0;
    f
}

/// Node voltages of a leg as linear forms of the state.
struct LegNodes {
    v_a: Form,
    v_b: Form,
    /// Current drawn from the rail capacitor into the leg.
    rail_out: Form,
}

/// `i_a` / `i_b` are the inductor currents leaving the upper and lower inner
/// nodes. Conducting switches carry the resistive drop `r` times their current.
fn leg_nodes(mode: LegMode, rail: &Form, i_a: &Form, i_b: &Form, r: f64) -> LegNodes {
    let sum = i_a + i_b;
    match mode {
        LegMode::ModeA => {
            // ground -> B through the bottom switch, B -> A through the middle
            let v_b = -sum * r;
            let v_a = v_b - i_a * r;
            LegNodes {
                v_a,
                v_b,
                rail_out: Form::zeros(),
            }
        }
        LegMode::ModeB => LegNodes {
            v_a: rail - i_a * r,
            v_b: -i_b * r,
            rail_out: *i_a,
        },
        LegMode::ModeC => {
            let v_a = rail - sum * r;
            let v_b = v_a - i_b * r;
            LegNodes {
                v_a,
                v_b,
                rail_out: sum,
            }
        }
    }
}

/// Builds the linear dynamics of `config`.
pub fn derive_dynamics(
    config: SwitchConfig,
    params: &ConverterParams,
) -> Result<LinearDynamics, TopologyError> {
    params.validate()?;
    let r = params.switch_on_resistance;

    let leg1 = leg_nodes(config.leg1, &unit(V_C1), &unit(I_L2), &unit(I_L1), r);
    let leg2 = leg_nodes(config.leg2, &unit(V_C4), &(-unit(I_L2)), &unit(I_L3), r);

    let mut a = StateMat::zeros();
    let mut b = StateVec::zeros();

    let rows = [
        (I_L1, (leg1.v_b - unit(V_C2)) / params.l1),
        (I_L2, (leg1.v_a - leg2.v_a) / params.l2),
        (I_L3, (leg2.v_b - unit(V_C3)) / params.l3),
    ];
    for (idx, row) in rows {
        a.set_row(idx, &row.transpose());
    }

    // Current delivered by the converter into each port node.
    let i_conv = [-leg1.rail_out, unit(I_L1), unit(I_L3), -leg2.rail_out];
    let c_filter = params.capacitances();
    let mut port_m = SMatrix::<f64, 4, STATE_DIM>::zeros();
    let mut port_o = SVector::<f64, 4>::zeros();

    for (k, port) in params.ports().iter().enumerate() {
        let node = PORT_NODE[k];
        let (row, offset, i_port, i_port_offset) = match *port {
            PortModel::VoltageSource { series_ohms, .. } if series_ohms == 0.0 => {
                (Form::zeros(), 0.0, -i_conv[k], 0.0)
            }
            PortModel::VoltageSource { volts, series_ohms } => {
                let g = 1.0 / series_ohms;
                let i_port = -unit(node) * g;
                (
                    (i_conv[k] + i_port) / c_filter[k],
                    volts * g / c_filter[k],
                    i_port,
                    volts * g,
                )
            }
            PortModel::ResistiveLoad { ohms } => {
                let i_port = -unit(node) / ohms;
                ((i_conv[k] + i_port) / c_filter[k], 0.0, i_port, 0.0)
            }
            PortModel::CapacitorOnly { farads, .. } => {
                let total = c_filter[k] + farads;
                (
                    i_conv[k] / total,
                    0.0,
                    -i_conv[k] * (farads / total),
                    0.0,
                )
            }
            PortModel::CurrentSink { amps } => {
                (i_conv[k] / c_filter[k], -amps / c_filter[k], Form::zeros(), -amps)
            }
        };
        a.set_row(node, &row.transpose());
        b[node] = offset;
        port_m.set_row(k, &i_port.transpose());
        port_o[k] = i_port_offset;
    }

    Ok(LinearDynamics {
        a_matrix: a,
        b_vector: b,
        valid_for: config,
        port_current_matrix: port_m,
        port_current_offset: port_o,
    })
}

/// Dynamics for all nine configurations, indexed by `SwitchConfig::index()`.
pub fn derive_all(params: &ConverterParams) -> Result<Vec<LinearDynamics>, TopologyError> {
    SwitchConfig::all()
        .iter()
        .map(|&c| derive_dynamics(c, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caps_only() -> ConverterParams {
        ConverterParams::with_ports([PortModel::CapacitorOnly {
            farads: 1e-3,
            initial_volts: 0.0,
        }; 4])
    }

    #[test]
    fn leg_voltages_per_mode() {
        assert_eq!(
            leg_inductor_voltages(LegMode::ModeA, 50.0, 25.0, 100.0),
            (-50.0, -25.0)
        );
        assert_eq!(leg_inductor_voltages(LegMode::ModeC, 0.0, 0.0, 0.0), (0.0, 0.0));
        assert_eq!(
            leg_inductor_voltages(LegMode::ModeB, 50.0, 25.0, 100.0),
            (50.0, -25.0)
        );
    }

    #[test]
    fn nine_configs_are_distinct_and_finite() {
        let all = SwitchConfig::all();
        for (i, c) in all.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(c.leg1.conducting().iter().filter(|&&on| on).count(), 2);
        }
        let mut dedup = all.to_vec();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 9);
        let mut p = caps_only();
        p.switch_on_resistance = 0.05;
        for d in derive_all(&p).unwrap() {
            assert!(d.a_matrix.iter().all(|v| v.is_finite()));
            assert!(d.b_vector.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn grounded_transfer_nodes_freeze_l2() {
        let d = derive_dynamics(SwitchConfig::new(LegMode::ModeA, LegMode::ModeA), &caps_only())
            .unwrap();
        let x = StateVec::from([3.0, -2.0, 1.0, 120.0, 30.0, 40.0, 90.0]);
        assert_eq!(d.derivative(&x)[I_L2], 0.0);
    }

    #[test]
    fn mode_c_ties_port2_inductor_to_rail() {
        let p = caps_only();
        for leg2 in LegMode::ALL {
            let d = derive_dynamics(SwitchConfig::new(LegMode::ModeC, leg2), &p).unwrap();
            let x = StateVec::from([1.0, 2.0, 3.0, 100.0, 30.0, 20.0, 80.0]);
            let di = d.derivative(&x)[I_L1];
            assert!((di - (100.0 - 30.0) / p.l1).abs() < 1e-9);
        }
    }

    #[test]
    fn ideal_source_rows_vanish() {
        let mut p = caps_only();
        p.port1 = PortModel::ideal_source(150.0);
        let d = derive_dynamics(SwitchConfig::new(LegMode::ModeC, LegMode::ModeB), &p).unwrap();
        assert!(d.a_matrix.row(V_C1).iter().all(|&v| v == 0.0));
        assert_eq!(d.b_vector[V_C1], 0.0);
        let mut x = p.rest_state();
        assert_eq!(x.v_c1, 150.0);
        x.i_l1 = 2.0;
        x.i_l2 = 3.0;
        // the source supplies both inductor currents in mode C
        let i = d.port_currents(&x.to_vec());
        assert!((i[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        let mut p = caps_only();
        p.l2 = 0.0;
        assert!(derive_dynamics(SwitchConfig::all()[0], &p).is_err());
        let mut p = caps_only();
        p.c3 = -1.0;
        assert!(p.validate().is_err());
        let mut p = caps_only();
        p.port4 = PortModel::ResistiveLoad { ohms: 0.0 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn derive_is_pure() {
        let p = caps_only();
        for c in SwitchConfig::all() {
            assert_eq!(derive_dynamics(c, &p).unwrap(), derive_dynamics(c, &p).unwrap());
        }
    }

    /// Nodal analysis on the explicit netlist: conducting switches merge
    /// nodes, each merged group takes the voltage of the rail or ground it
    /// touches, and capacitor currents are the KCL sums of inductor branches.
    mod netlist_oracle {
        use super::*;

        // node ids
        const GND: usize = 0;
        const RAIL1: usize = 1;
        const A1: usize = 2;
        const B1: usize = 3;
        const P2: usize = 4;
        const RAIL2: usize = 5;
        const A2: usize = 6;
        const B2: usize = 7;
        const P3: usize = 8;

        fn find(parent: &mut [usize], n: usize) -> usize {
            let mut r = n;
            while parent[r] != r {
                r = parent[r];
            }
            r
        }

        /// Returns (inductor voltages, converter current into each port node).
        pub fn analyse(config: SwitchConfig, x: &[f64; 7]) -> ([f64; 3], [f64; 4]) {
            let mut parent: Vec<usize> = (0..9).collect();
            let legs = [
                (config.leg1, [(RAIL1, A1), (A1, B1), (B1, GND)]),
                (config.leg2, [(RAIL2, A2), (A2, B2), (B2, GND)]),
            ];
            for (mode, switches) in legs {
                for (k, &(a, b)) in switches.iter().enumerate() {
                    if mode.conducting()[k] {
                        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                        parent[ra] = rb;
                    }
                }
            }
            let fixed = [(GND, 0.0), (RAIL1, x[3]), (P2, x[4]), (P3, x[5]), (RAIL2, x[6])];
            let volt = |parent: &mut Vec<usize>, n: usize| -> f64 {
                let root = find(parent, n);
                fixed
                    .iter()
                    .find(|(m, _)| find(parent, *m) == root)
                    .map(|&(_, v)| v)
                    .expect("floating node")
            };
            // branches: (from, to, current)
            let branches = [(B1, P2, x[0]), (A1, A2, x[1]), (B2, P3, x[2])];
            let mut v_l = [0.0; 3];
            for (k, &(from, to, _)) in branches.iter().enumerate() {
                v_l[k] = volt(&mut parent, from) - volt(&mut parent, to);
            }
            // KCL: current entering each fixed-voltage group from inductors
            let mut into = [0.0; 4];
            let ports = [RAIL1, P2, P3, RAIL2];
            for (k, &pn) in ports.iter().enumerate() {
                let root = find(&mut parent, pn);
                for &(from, to, i) in &branches {
                    if find(&mut parent, to) == root {
                        into[k] += i;
                    }
                    if find(&mut parent, from) == root {
                        into[k] -= i;
                    }
                }
            }
            (v_l, into)
        }
    }

    proptest! {
        #[test]
        fn matches_netlist_nodal_analysis(
            cfg in 0usize..9,
            x in proptest::array::uniform7(-200.0f64..200.0),
        ) {
            let p = caps_only();
            let config = SwitchConfig::all()[cfg];
            let d = derive_dynamics(config, &p).unwrap();
            let xv = StateVec::from(x);
            let dx = d.derivative(&xv);
            let (v_l, into) = netlist_oracle::analyse(config, &x);
            let l = p.inductances();
            for k in 0..3 {
                prop_assert!((dx[k] * l[k] - v_l[k]).abs() < 1e-9 * (1.0 + v_l[k].abs()));
            }
            let c = p.node_capacitances();
            for k in 0..4 {
                let i_cap = dx[PORT_NODE[k]] * c[k];
                prop_assert!((i_cap - into[k]).abs() < 1e-9 * (1.0 + into[k].abs()));
            }
        }

        #[test]
        fn inductor_rows_reproduce_leg_voltages(
            cfg in 0usize..9,
            x in proptest::array::uniform7(-300.0f64..300.0),
        ) {
            let p = caps_only();
            let config = SwitchConfig::all()[cfg];
            let dx = derive_dynamics(config, &p).unwrap().derivative(&StateVec::from(x));
            // leg 1 in the generic frame: port a is the A1 side of L2 seen
            // from leg 2's node voltage, port b is port 2.
            let leg2_a = match config.leg2 { LegMode::ModeA => 0.0, _ => x[V_C4] };
            let (v_la1, v_lb1) = leg_inductor_voltages(config.leg1, leg2_a, x[V_C2], x[V_C1]);
            prop_assert!((dx[I_L2] * p.l2 - v_la1).abs() < 1e-9 * (1.0 + v_la1.abs()));
            prop_assert!((dx[I_L1] * p.l1 - v_lb1).abs() < 1e-9 * (1.0 + v_lb1.abs()));
            let leg1_a = match config.leg1 { LegMode::ModeA => 0.0, _ => x[V_C1] };
            let (v_la2, v_lb2) = leg_inductor_voltages(config.leg2, leg1_a, x[V_C3], x[V_C4]);
            prop_assert!((-dx[I_L2] * p.l2 - v_la2).abs() < 1e-9 * (1.0 + v_la2.abs()));
            prop_assert!((dx[I_L3] * p.l3 - v_lb2).abs() < 1e-9 * (1.0 + v_lb2.abs()));
        }

        #[test]
        fn lossless_energy_rate_equals_port_power(
            cfg in 0usize..9,
            x in proptest::array::uniform7(-200.0f64..200.0),
            kinds in proptest::array::uniform4(0u8..4),
            vals in proptest::array::uniform4(1.0f64..200.0),
        ) {
            let mut ports = [PortModel::ideal_source(0.0); 4];
            for k in 0..4 {
                ports[k] = match kinds[k] {
                    0 => PortModel::ideal_source(vals[k]),
                    1 => PortModel::CapacitorOnly { farads: vals[k] * 1e-3, initial_volts: 0.0 },
                    2 => PortModel::CurrentSink { amps: vals[k] - 100.0 },
                    _ => PortModel::VoltageSource { volts: vals[k], series_ohms: 0.5 },
                };
            }
            let p = ConverterParams::with_ports(ports);
            let mut s = StateVector::from_array(x);
            p.pin_state(&mut s);
            let xv = s.to_vec();
            let d = derive_dynamics(SwitchConfig::all()[cfg], &p).unwrap();
            let dx = d.derivative(&xv);
            let l = p.inductances();
            let c = p.capacitances();
            let rate: f64 = (0..3).map(|k| l[k] * xv[k] * dx[k]).sum::<f64>()
                + (0..4).map(|k| c[k] * xv[3 + k] * dx[3 + k]).sum::<f64>();
            let supplied: f64 = d.port_powers(&xv).iter().sum();
            prop_assert!((rate - supplied).abs() < 1e-9 * (1.0 + supplied.abs() + rate.abs()));
        }

        #[test]
        fn on_resistance_only_dissipates(
            cfg in 0usize..9,
            x in proptest::array::uniform7(-50.0f64..50.0),
        ) {
            let mut p = caps_only();
            p.switch_on_resistance = 0.1;
            let xv = StateVec::from(x);
            let d = derive_dynamics(SwitchConfig::all()[cfg], &p).unwrap();
            let dx = d.derivative(&xv);
            let l = p.inductances();
            let c = p.node_capacitances();
            let rate: f64 = (0..3).map(|k| l[k] * xv[k] * dx[k]).sum::<f64>()
                + (0..4).map(|k| c[k] * xv[3 + k] * dx[3 + k]).sum::<f64>();
            prop_assert!(rate <= 1e-9);
        }
    }
}
