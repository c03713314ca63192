use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) if v.is_finite() => write!(f, "{v}"),
            Cell::Float(_) => f.write_str("nan"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A CSV table with a fixed header. Non-finite numbers are written as `nan`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl MetricsTable {
    pub fn new(header: &[&'static str]) -> Self {
        MetricsTable {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::contract(format!(
                "row of {} cells for a {}-column table",
                row.len(),
                self.header.len()
            )));
        }
        if let Some(Cell::Text(t)) = row.iter().find(|c| matches!(c, Cell::Text(t) if t.contains([',', '\n', '"']))) {
            return Err(Error::contract(format!("cell {t:?} needs quoting")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Column `name` of row `i`.
    pub fn cell(&self, i: usize, name: &str) -> Option<&Cell> {
        let c = self.header.iter().position(|h| *h == name)?;
        self.rows.get(i).map(|r| &r[c])
    }

    pub fn float(&self, i: usize, name: &str) -> Option<f64> {
        match self.cell(i, name)? {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Column sets of the tables written by the experiments.
pub mod schema {
    pub const LOSS: &[&str] = &["stage", "iteration", "loss", "lr_scale"];
    pub const ROLLOUT: &[&str] = &["step", "horizon", "mse_mean", "mse_std", "seeds"];
    pub const LAYOUT: &[&str] = &["layout", "seed", "val_mse", "diverged"];
    pub const LAYOUT_SUMMARY: &[&str] = &["layout", "val_mse_mean", "diverged_runs", "seeds"];
    pub const MODULES: &[&str] = &["variant", "bare_success", "mpc_success", "delta", "h16_mse"];
    pub const MPC: &[&str] = &["task", "episodes", "bare_success", "mpc_success", "oracle_success", "delta"];
}
