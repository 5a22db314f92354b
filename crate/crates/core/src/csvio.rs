//! CSV tables with a canonical text form.
//!
//! Floats are written in scientific notation with 17 significant digits, which
//! is enough to recover every `f64` exactly, and missing values as `NA`.
//! Parsing a table against its schema and writing it again therefore
//! reproduces the original bytes.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::estimation::SigmaScanRow;
use crate::experiments::{RobustnessOutput, RunStats, TableOne};
use crate::filter::{Estimate, Particle};
use crate::model::Truth;

pub const MISSING: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Int,
    Float,
    /// Float or `NA`.
    OptFloat,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Missing,
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_f64(*v),
            Cell::Missing => MISSING.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    fn opt(v: Option<f64>) -> Cell {
        v.map_or(Cell::Missing, Cell::Float)
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schema {
    pub columns: &'static [(&'static str, ColumnKind)],
}

use ColumnKind::*;

pub const TRUTH: Schema = Schema {
    columns: &[
        ("step", Int),
        ("x", Float),
        ("y", Float),
        ("dx", Float),
        ("dy", Float),
        ("b", Float),
    ],
};
pub const FILTER: Schema = Schema {
    columns: &[
        ("step", Int),
        ("est_x", Float),
        ("est_y", Float),
        ("truth_x", Float),
        ("truth_y", Float),
        ("err_x", Float),
        ("err_y", Float),
    ],
};
pub const PARTICLES: Schema = Schema {
    columns: &[
        ("slot", Int),
        ("x", Float),
        ("y", Float),
        ("dx", Float),
        ("dy", Float),
        ("phase", Float),
    ],
};
pub const TABLE1: Schema = Schema {
    columns: &[
        ("step", Int),
        ("sd_x", Float),
        ("sd_y", Float),
        ("accepted", Int),
    ],
};
pub const TABLE2: Schema = Schema {
    columns: &[
        ("step", Int),
        ("mean_x", Float),
        ("sd_x", OptFloat),
        ("mean_y", Float),
        ("sd_y", OptFloat),
        ("runs", Int),
        ("particles", Int),
    ],
};
pub const TABLE3: Schema = Schema {
    columns: &[
        ("ratio", Float),
        ("mean_D", Float),
        ("se_D", Float),
        ("runs", Int),
        ("failures", Int),
    ],
};
pub const FIG1: Schema = Schema {
    columns: &[("series", Text), ("step", Int), ("x", Float), ("y", Float)],
};
pub const SIGMA_ESTIMATE: Schema = Schema {
    columns: &[("ratio", Float), ("sigma", Float)],
};

impl Schema {
    pub fn header(&self) -> Vec<&'static str> {
        self.columns.iter().map(|c| c.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(schema: Schema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.schema.columns.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(self.schema.header())?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    /// Reads a table, checking the header and every cell against `schema`.
    pub fn read<R: Read>(schema: Schema, input: R) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != schema.header() {
            return Err(Error::Csv(format!(
                "expected header {:?}, found {:?}",
                schema.header(),
                header
            )));
        }
        let mut table = Table::new(schema);
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .zip(schema.columns)
                .map(|(field, (name, kind))| {
                    parse_cell(field, *kind)
                        .map_err(|e| Error::Csv(format!("row {}: column {name}: {e}", line + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            table.rows.push(row);
        }
        Ok(table)
    }

    /// Numeric values of a column, `None` for missing cells.
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.schema.columns.iter().position(|c| c.0 == name)?;
        Some(self.rows.iter().map(|r| r[i].as_f64()).collect())
    }
}

fn parse_cell(field: &str, kind: ColumnKind) -> std::result::Result<Cell, String> {
    let float = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| format!("'{s}' is not a number"))
    };
    match kind {
        Int => field
            .parse()
            .map(Cell::Int)
            .map_err(|_| format!("'{field}' is not an integer")),
        Float => float(field).map(Cell::Float),
        OptFloat if field == MISSING => Ok(Cell::Missing),
        OptFloat => float(field).map(Cell::Float),
        Text => Ok(Cell::Text(field.to_string())),
    }
}

pub fn truth_table(truth: &Truth) -> Table {
    let mut t = Table::new(TRUTH);
    for (s, o) in truth.trajectory.iter().zip(&truth.observations) {
        t.push(vec![
            Cell::Int(o.step as u64),
            Cell::Float(s.x),
            Cell::Float(s.y),
            Cell::Float(s.dx),
            Cell::Float(s.dy),
            Cell::Float(o.b),
        ]);
    }
    t
}

pub fn filter_table(estimates: &[Estimate], truth: &Truth) -> Table {
    let mut t = Table::new(FILTER);
    for (e, s) in estimates.iter().zip(&truth.trajectory) {
        t.push(vec![
            Cell::Int(e.step as u64),
            Cell::Float(e.x),
            Cell::Float(e.y),
            Cell::Float(s.x),
            Cell::Float(s.y),
            Cell::Float(e.x - s.x),
            Cell::Float(e.y - s.y),
        ]);
    }
    t
}

pub fn particles_table(particles: &[Particle]) -> Table {
    let mut t = Table::new(PARTICLES);
    for (i, p) in particles.iter().enumerate() {
        t.push(vec![
            Cell::Int(i as u64),
            Cell::Float(p.state.x),
            Cell::Float(p.state.y),
            Cell::Float(p.state.dx),
            Cell::Float(p.state.dy),
            Cell::Float(p.phase_accum),
        ]);
    }
    t
}

pub fn table1_table(t1: &TableOne) -> Table {
    let mut t = Table::new(TABLE1);
    for r in &t1.rows {
        t.push(vec![
            Cell::Int(r.step as u64),
            Cell::Float(r.sd_x),
            Cell::Float(r.sd_y),
            Cell::Int(t1.accepted as u64),
        ]);
    }
    t
}

pub fn table2_table(stats: &RunStats) -> Table {
    let mut t = Table::new(TABLE2);
    for c in &stats.checkpoints {
        t.push(vec![
            Cell::Int(c.step as u64),
            Cell::Float(c.mean_err_x),
            Cell::opt(c.sd_err_x),
            Cell::Float(c.mean_err_y),
            Cell::opt(c.sd_err_y),
            Cell::Int(stats.runs as u64),
            Cell::Int(stats.particles as u64),
        ]);
    }
    t
}

pub fn table3_table(rows: &[SigmaScanRow]) -> Table {
    let mut t = Table::new(TABLE3);
    for r in rows {
        t.push(vec![
            Cell::Float(r.ratio),
            Cell::Float(r.mean_d),
            Cell::Float(r.se_d),
            Cell::Int(r.runs as u64),
            Cell::Int(r.failures as u64),
        ]);
    }
    t
}

/// Scan rows back from a table written by [`table3_table`].
pub fn scan_rows(table: &Table) -> Result<Vec<SigmaScanRow>> {
    if table.schema != TABLE3 {
        return Err(Error::Csv("not a scan table".into()));
    }
    Ok(table
        .rows
        .iter()
        .map(|r| SigmaScanRow {
            ratio: r[0].as_f64().unwrap_or(f64::NAN),
            mean_d: r[1].as_f64().unwrap_or(f64::NAN),
            se_d: r[2].as_f64().unwrap_or(f64::NAN),
            runs: r[3].as_f64().unwrap_or(0.0) as usize,
            failures: r[4].as_f64().unwrap_or(0.0) as usize,
        })
        .collect())
}

/// Series `truth`, `baseline`, `perturbed`, `jittered`; with several runs the
/// names carry a `:run` suffix.
pub fn fig1_table(out: &RobustnessOutput) -> Table {
    let mut t = Table::new(FIG1);
    let many = out.runs.len() > 1;
    for (r, run) in out.runs.iter().enumerate() {
        let series = [
            ("truth", &run.truth),
            ("baseline", &run.baseline),
            ("perturbed", &run.perturbed),
            ("jittered", &run.jittered),
        ];
        for (name, points) in series {
            let label = if many {
                format!("{name}:{r}")
            } else {
                name.to_string()
            };
            for (k, (x, y)) in points.iter().enumerate() {
                t.push(vec![
                    Cell::Text(label.clone()),
                    Cell::Int(k as u64 + 1),
                    Cell::Float(*x),
                    Cell::Float(*y),
                ]);
            }
        }
    }
    t
}
