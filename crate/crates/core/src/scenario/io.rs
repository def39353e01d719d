use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::ScenarioError;
use crate::duty::DutyCommand;
use crate::sim::{PeriodRecord, Sample, Waveform};
use crate::topology::{LegMode, StateVector, SwitchConfig, STATE_DIM};

pub const CSV_HEADER: [&str; 14] = [
    "time_s", "i_l1_a", "i_l2_a", "i_l3_a", "v_c1_v", "v_c2_v", "v_c3_v", "v_c4_v", "p_port1_w",
    "p_port2_w", "p_port3_w", "p_port4_w", "leg1_mode", "leg2_mode",
];

const DUTY_HEADER: [&str; 7] = ["period_start_s", "d1", "d2", "d3", "d4", "d5", "d6"];

fn csv_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ScenarioError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ScenarioError::io(path, e))
}

/// Floats are written in shortest round-trip form, so reading the file back
/// reproduces every sample bit for bit.
pub fn write_waveform_csv(path: &Path, waveform: &Waveform) -> Result<(), ScenarioError> {
    let mut w = create(path)?;
    let io = |e| ScenarioError::io(path, e);
    writeln!(w, "{}", CSV_HEADER.join(",")).map_err(io)?;
    let mut line = String::with_capacity(256);
    for s in &waveform.samples {
        use std::fmt::Write as _;
        line.clear();
        let _ = write!(line, "{}", s.t);
        for v in s.state.to_array() {
            let _ = write!(line, ",{v}");
        }
        for p in s.port_power {
            let _ = write!(line, ",{p}");
        }
        let _ = write!(line, ",{},{}", s.config.leg1, s.config.leg2);
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn field(rec: &csv::StringRecord, i: usize, path: &Path, row: usize) -> Result<f64, ScenarioError> {
    let raw = rec.get(i).unwrap_or("");
    raw.trim().parse::<f64>().map_err(|_| {
        csv_err(
            path,
            format!("row {row}, column {}: `{raw}` is not a number", i + 1),
        )
    })
}

fn check_header(rec: &csv::StringRecord, want: &[&str], path: &Path) -> Result<(), ScenarioError> {
    let got: Vec<&str> = rec.iter().map(str::trim).collect();
    if got != want {
        return Err(csv_err(
            path,
            format!("unexpected header, expected `{}`", want.join(",")),
        ));
    }
    Ok(())
}

pub fn read_waveform_csv(path: &Path) -> Result<Waveform, ScenarioError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    check_header(r.headers().map_err(|e| csv_err(path, e))?, &CSV_HEADER, path)?;
    let mut samples = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let row = row + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(csv_err(path, format!("row {row} has {} columns", rec.len())));
        }
        let t = field(&rec, 0, path, row)?;
        let mut x = [0.0; STATE_DIM];
        for (k, v) in x.iter_mut().enumerate() {
            *v = field(&rec, 1 + k, path, row)?;
        }
        let mut p = [0.0; 4];
        for (k, v) in p.iter_mut().enumerate() {
            *v = field(&rec, 8 + k, path, row)?;
        }
        let mode = |i: usize| {
            LegMode::from_label(rec.get(i).unwrap_or("").trim())
                .ok_or_else(|| csv_err(path, format!("row {row}: bad leg mode in column {}", i + 1)))
        };
        samples.push(Sample {
            t,
            state: StateVector::from_array(x),
            config: SwitchConfig::new(mode(12)?, mode(13)?),
            port_power: p,
        });
    }
    Ok(Waveform {
        samples,
        ..Default::default()
    })
}

pub fn write_duties_csv(path: &Path, periods: &[PeriodRecord]) -> Result<(), ScenarioError> {
    let mut w = create(path)?;
    let io = |e| ScenarioError::io(path, e);
    writeln!(w, "{}", DUTY_HEADER.join(",")).map_err(io)?;
    for p in periods {
        let d = p.duties.to_array();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.start, d[0], d[1], d[2], d[3], d[4], d[5]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_duties_csv(path: &Path) -> Result<Vec<PeriodRecord>, ScenarioError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    check_header(r.headers().map_err(|e| csv_err(path, e))?, &DUTY_HEADER, path)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let row = row + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let start = field(&rec, 0, path, row)?;
        let mut d = [0.0; 6];
        for (k, v) in d.iter_mut().enumerate() {
            *v = field(&rec, 1 + k, path, row)?;
        }
        out.push(PeriodRecord {
            start,
            duties: DutyCommand::from_array(d),
        });
    }
    Ok(out)
}
