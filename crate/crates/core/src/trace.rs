//! Per-tick trace records and their CSV form.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::barrier::ConstraintTag;
use crate::error::{Error, Result};
use crate::passivity::{PowerSample, StorageFunction};
use crate::qpsolver::QpStatus;

pub const CSV_HEADER: [&str; 18] = [
    "t", "x1_1", "x1_2", "x2_1", "x2_2", "u_1", "u_2", "uhat_1", "uhat_2", "v_1", "v_2", "h_x", "h_x_p", "h_x_pp",
    "h_u", "status", "active", "slack",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    /// Plant state `(x1, x2)` stacked.
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub uhat: DVector<f64>,
    pub phi: DVector<f64>,
    pub v_star: DVector<f64>,
    pub h_x: f64,
    pub h_x_prime: f64,
    pub h_x_dprime: f64,
    pub h_u: f64,
    pub qp_status: QpStatus,
    pub active: Vec<ConstraintTag>,
    pub slack: f64,
}

impl TraceRecord {
    pub fn x1(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }

    pub fn x2(&self) -> [f64; 2] {
        [self.x[2], self.x[3]]
    }
}

/// One CSV line: the planar columns of a [`TraceRecord`] (no `φ`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x1: [f64; 2],
    pub x2: [f64; 2],
    pub u: [f64; 2],
    pub uhat: [f64; 2],
    pub v: [f64; 2],
    pub h_x: f64,
    pub h_x_p: f64,
    pub h_x_pp: f64,
    pub h_u: f64,
    pub status: QpStatus,
    pub active: Vec<ConstraintTag>,
    pub slack: f64,
}

fn pair(v: &DVector<f64>, what: &str) -> Result<[f64; 2]> {
    match v.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::MalformedTrace(format!("{what} has {} entries, the CSV form is planar", v.len()))),
    }
}

impl TryFrom<&TraceRecord> for TraceRow {
    type Error = Error;

    fn try_from(r: &TraceRecord) -> Result<Self> {
        if r.x.len() != 4 {
            return Err(Error::MalformedTrace(format!("state has {} entries, the CSV form is planar", r.x.len())));
        }
        Ok(Self {
            t: r.t,
            x1: r.x1(),
            x2: r.x2(),
            u: pair(&r.u, "u")?,
            uhat: pair(&r.uhat, "uhat")?,
            v: pair(&r.v_star, "v")?,
            h_x: r.h_x,
            h_x_p: r.h_x_prime,
            h_x_pp: r.h_x_dprime,
            h_u: r.h_u,
            status: r.qp_status,
            active: r.active.clone(),
            slack: r.slack,
        })
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_active(tags: &[ConstraintTag]) -> String {
    tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("+")
}

fn parse_active(s: &str) -> Result<Vec<ConstraintTag>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('+')
        .map(|tag| match tag {
            "safety" => Ok(ConstraintTag::Safety),
            "passivity" => Ok(ConstraintTag::Passivity),
            other => Err(Error::MalformedTrace(format!("unknown constraint tag `{other}`"))),
        })
        .collect()
}

fn parse_status(s: &str) -> Result<QpStatus> {
    match s {
        "optimal" => Ok(QpStatus::Optimal),
        "infeasible" => Ok(QpStatus::Infeasible),
        other => Err(Error::MalformedTrace(format!("unknown status `{other}`"))),
    }
}

impl TraceRow {
    fn fields(&self) -> Vec<String> {
        let mut out: Vec<String> = [self.t]
            .iter()
            .chain(&self.x1)
            .chain(&self.x2)
            .chain(&self.u)
            .chain(&self.uhat)
            .chain(&self.v)
            .chain(&[self.h_x, self.h_x_p, self.h_x_pp, self.h_u])
            .map(|&x| fmt_float(x))
            .collect();
        out.push(self.status.as_str().to_string());
        out.push(fmt_active(&self.active));
        out.push(fmt_float(self.slack));
        out
    }

    fn parse(record: &csv::StringRecord, line: usize) -> Result<Self> {
        if record.len() != CSV_HEADER.len() {
            return Err(Error::MalformedTrace(format!(
                "line {line}: expected {} fields, got {}",
                CSV_HEADER.len(),
                record.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| Error::MalformedTrace(format!("line {line}, column `{}`: {e}", CSV_HEADER[i])))
        };
        Ok(Self {
            t: num(0)?,
            x1: [num(1)?, num(2)?],
            x2: [num(3)?, num(4)?],
            u: [num(5)?, num(6)?],
            uhat: [num(7)?, num(8)?],
            v: [num(9)?, num(10)?],
            h_x: num(11)?,
            h_x_p: num(12)?,
            h_x_pp: num(13)?,
            h_u: num(14)?,
            status: parse_status(&record[15])?,
            active: parse_active(&record[16])?,
            slack: num(17)?,
        })
    }
}

pub fn write_trace_to<W: Write>(trace: &[TraceRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let wrap = |source: csv::Error| Error::Csv {
        path: "<stream>".into(),
        source,
    };
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in trace {
        w.write_record(TraceRow::try_from(r)?.fields()).map_err(wrap)?;
    }
    w.flush().map_err(|e| wrap(e.into()))
}

/// Write the CSV trace, naming the path on any I/O failure.
pub fn write_trace(trace: &[TraceRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_trace_to(trace, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Csv { source, .. } => Error::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn trace_csv_string(trace: &[TraceRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_trace_to(trace, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is ascii"))
}

pub fn read_trace_from<R: Read>(source: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = rdr
        .headers()
        .map_err(|e| Error::MalformedTrace(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::MalformedTrace("unexpected header".into()));
    }
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::MalformedTrace(e.to_string()))?;
            TraceRow::parse(&rec, i + 2)
        })
        .collect()
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trace_from(std::io::BufReader::new(file))
}

/// Headline numbers printed after a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub records: usize,
    pub final_t: f64,
    pub final_x1: [f64; 2],
    pub min_h_x: f64,
    pub min_h_u: f64,
    pub infeasible_ticks: usize,
}

impl TraceSummary {
    pub fn of(trace: &[TraceRecord]) -> Result<Self> {
        let last = trace.last().ok_or(Error::EmptyTrace)?;
        Ok(Self {
            records: trace.len(),
            final_t: last.t,
            final_x1: last.x1(),
            min_h_x: trace.iter().map(|r| r.h_x).fold(f64::INFINITY, f64::min),
            min_h_u: trace.iter().map(|r| r.h_u).fold(f64::INFINITY, f64::min),
            infeasible_ticks: trace.iter().filter(|r| r.qp_status == QpStatus::Infeasible).count(),
        })
    }

    pub fn distance_to(&self, target: [f64; 2]) -> f64 {
        (self.final_x1[0] - target[0]).hypot(self.final_x1[1] - target[1])
    }
}

/// Supplied power `uᵀy` and storage along a trace, for `y = x2`.
pub fn power_samples<S: StorageFunction>(storage: &S, trace: &[TraceRecord]) -> Vec<PowerSample> {
    trace
        .iter()
        .map(|r| {
            let y = r.x.rows(r.x.len() / 2, r.x.len() / 2);
            PowerSample {
                t: r.t,
                supply: r.u.dot(&y),
                storage: storage.value(&r.x),
            }
        })
        .collect()
}
