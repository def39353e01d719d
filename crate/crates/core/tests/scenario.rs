use std::collections::BTreeSet;

use fourport_core::control::HevMode;
use fourport_core::scenario::{
    execute, load_preset, parse_scenario, presets, read_duties_csv, read_waveform_csv, report,
    run, run_many, write_scenario, ControlSpec, RunStatus,
};
use fourport_core::topology::PortModel;
use sha2::{Digest, Sha256};

const GOLDEN: &[(&str, &str)] = &[
    ("gain", "65428a48ce945e8d5e13ba83a782597186d27883c065231d21fa5a4a08daf7ca"),
    ("boost", "10ddfd25196543c4ef5167094208efe3804b91c49be7088a0c97b4d14808c0de"),
    ("buck", "b8a8b9e01443efe6bd57d2470e196c9584d66361dc40c45d683faf9b25d12596"),
    ("fig6a", "d0e552bff56315f90696c0f88c5224ebdb8aabf4992511d076f3f42afd1b64a6"),
    ("fig6b", "dcf4f3402599706290287176e4001404ce43ef5b2ba4cca46d8d85261ea22613"),
    ("fig7a", "dd5744e31ad309a4a1b73ea0617a9027180d4fe0d2c52ff7ae23471a155f2327"),
    ("fig7b", "c194c88198008b07374b485b875b9e04329b543c7cfcc1b003919116ecbd7069"),
    ("fig8a", "cecfa6beff7f12aed5995b34ef6ae9a196683a2424e91660d38d9e7252d3f874"),
    ("fig8b", "bca53e2b4bcc386b1108f6a33ebb91e7144d38322f88e6e84e5c524aed4dc604"),
    ("fig9a", "e64c91762f41ccfb86daba713366889134d4016d6035e18771e74a9e0e044d92"),
    ("fig9b", "228e0408aba5a777224098e623c9d245c993b0dfc781e20d835299489657d548"),
    ("fig10", "02cf6c3f6f9b3ab8fa0fe8595154c96912238b68f80db6f82988877cd7e39e4f"),
    ("fig11", "50e9bfb1c4c807ecb7c6b0a6ee84e7ed303d98d9aa4ddb00f1fa59e79918bfd8"),
    ("nearunity", "3e2466c097b02a81bc5d6bae97e47c3c2f2305d2088465dacc04eee9d6028c11"),
];

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn presets_match_their_golden_hashes() {
    let listed: BTreeSet<_> = presets::names().collect();
    let golden: BTreeSet<_> = GOLDEN.iter().map(|(n, _)| *n).collect();
    assert_eq!(listed, golden);
    for (name, want) in GOLDEN {
        let text = presets::get(name).unwrap();
        assert_eq!(hex(&Sha256::digest(text.as_bytes())), *want, "preset {name} changed");
    }
}

#[test]
fn every_preset_loads_and_round_trips() {
    for name in presets::names() {
        let s = load_preset(name).unwrap();
        assert_eq!(s.name, name);
        let text = write_scenario(&s);
        let back = parse_scenario(&text, "written", "").unwrap();
        assert_eq!(back, s, "{name}");
        assert_eq!(write_scenario(&back), text);
    }
}

#[test]
fn fig7a_conditions() {
    let s = load_preset("fig7a").unwrap();
    assert_eq!(s.converter.f_sw, 50e3);
    assert_eq!(s.converter.l1, 0.72e-3);
    assert_eq!(s.converter.port2, PortModel::ideal_source(25.0));
    assert_eq!(s.converter.port3, PortModel::ideal_source(35.0));
    let ControlSpec::ClosedLoop(cl) = &s.control else {
        panic!("fig7a is closed loop")
    };
    assert_eq!(cl.schedule[0].mode, HevMode::HighPower { uc_assist: false });
}

#[test]
fn fig10_conditions() {
    let s = load_preset("fig10").unwrap();
    assert_eq!(s.converter.f_sw, 30e3);
    assert_eq!(s.converter.port2, PortModel::ideal_source(25.0));
    assert_eq!(s.converter.port1, PortModel::ResistiveLoad { ohms: 100.0 });
    assert_eq!(s.converter.port4, PortModel::ResistiveLoad { ohms: 100.0 });
}

#[test]
fn csv_round_trip_reproduces_the_report_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["fig11", "fig9a"] {
        let mut s = load_preset(name).unwrap();
        s.simulation.steps_per_period = 200;
        let out = run(&s, &dir.path().join(name)).unwrap();
        assert_eq!(out.status, RunStatus::Settled);
        let mut wf = read_waveform_csv(&dir.path().join(name).join("waveform.csv")).unwrap();
        wf.periods = read_duties_csv(&dir.path().join(name).join("duties.csv")).unwrap();
        let again = report(&wf, &s).unwrap();
        assert_eq!(Some(again), out.report);
    }
}

#[test]
fn execution_is_deterministic_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios: Vec<_> = ["gain", "fig8a", "fig10"]
        .iter()
        .map(|n| {
            let mut s = load_preset(n).unwrap();
            s.simulation.steps_per_period = 150;
            if matches!(s.control, ControlSpec::ClosedLoop(_)) {
                s.simulation.duration = 0.01;
                s.simulation.settle_periods = 20;
            }
            s
        })
        .collect();
    let par = run_many(&scenarios, &dir.path().join("p"), true);
    let seq = run_many(&scenarios, &dir.path().join("s"), false);
    for (a, b) in par.iter().zip(&seq) {
        let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
        assert_eq!(a.report, b.report);
        let wa = std::fs::read(a.out_dir.join("waveform.csv")).unwrap();
        let wb = std::fs::read(b.out_dir.join("waveform.csv")).unwrap();
        assert!(wa == wb);
    }
    let direct = execute(&scenarios[0]).unwrap();
    assert_eq!(Some(direct.report), par[0].as_ref().unwrap().report);
}

#[test]
fn symmetric_no_load_run_has_an_empty_ledger() {
    let text = r#"
preset = "buck"
name = "idle"
[converter]
port1 = { kind = "voltage_source", volts = 0.0 }
[simulation]
initial = "rest"
"#;
    let s = parse_scenario(text, "mem", "").unwrap();
    let r = execute(&s).unwrap().report;
    for p in &r.ledger.ports {
        assert!(p.power_w.abs() < 1e-12 && p.current_a.abs() < 1e-12);
    }
    assert!(r.settled);
}

#[test]
fn fig9a_charges_the_battery() {
    let r = execute(&load_preset("fig9a").unwrap()).unwrap().report;
    assert!((r.ledger.ports[1].power_w + 375.0).abs() < 0.02 * 375.0);
}

#[test]
fn boost_report_prediction_within_one_percent() {
    let r = execute(&load_preset("boost").unwrap()).unwrap().report;
    let row = r
        .predictions
        .iter()
        .find(|p| p.quantity == "v_c4")
        .unwrap();
    assert!((row.predicted - 100.0).abs() < 1e-9);
    assert!(row.rel_error.unwrap() < 0.01);
}

#[test]
fn load_event_changes_the_operating_point() {
    let text = r#"
preset = "fig8a"
name = "step"
[simulation]
duration = 0.05
[[events]]
at = 0.02
kind = "load"
port = 4
model = { kind = "resistive_load", ohms = 10.0 }
[[events]]
at = 0.021
kind = "demand"
demand_w = 1000.0
"#;
    let s = parse_scenario(text, "mem", "").unwrap();
    let r = execute(&s).unwrap().report;
    assert!(r.settled);
    assert!((r.ledger.ports[3].power_w + 1000.0).abs() < 5.0, "{}", r.ledger.ports[3].power_w);
    assert!((r.ledger.ports[1].current_a - 40.0).abs() < 0.5);
}
