//! Lookup tables of `I(d, alpha)`, `I(d, 1)`, He and orthogonal exponents and
//! the three scales, one row per width.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{i_alpha, sigma_he};
use crate::error::Result;
use crate::output;
use crate::quad::QuadSettings;

/// Widths 1-10, 16, 20, 30, 32, 40, ..., 1000, 1024.
pub const DEFAULT_DIMS: [usize; 35] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 16, 20, 30, 32, 40, 50, 60, 64, 70, 80, 90, 100, 128, 200, 256,
    300, 400, 500, 512, 600, 700, 800, 900, 1000, 1024,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableRow {
    pub d: usize,
    pub i_alpha: f64,
    pub i_one: f64,
    pub lambda_he: f64,
    pub lambda_orth: f64,
    pub sigma_he: f64,
    pub sigma_crit: f64,
    pub eta_crit: f64,
}

impl TableRow {
    pub fn compute(d: usize, alpha: f64, settings: &QuadSettings) -> Result<Self> {
        let i_a = i_alpha(d, alpha, settings)?;
        let i_1 = i_alpha(d, 1.0, settings)?;
        let s_he = sigma_he(d, alpha)?;
        Ok(Self {
            d,
            i_alpha: i_a,
            i_one: i_1,
            lambda_he: s_he.ln() + i_a,
            lambda_orth: i_a - i_1,
            sigma_he: s_he,
            sigma_crit: (-i_a).exp(),
            eta_crit: (i_1 - i_a).exp(),
        })
    }

    /// The seven value columns in table order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.i_alpha,
            self.i_one,
            self.lambda_he,
            self.lambda_orth,
            self.sigma_he,
            self.sigma_crit,
            self.eta_crit,
        ]
    }
}

pub const COLUMNS: [&str; 7] = [
    "I(d,alpha)",
    "I(d,1)",
    "lambda_He",
    "lambda_orth",
    "sigma_He",
    "sigma_crit",
    "eta_crit",
];

pub fn compute_table(alpha: f64, dims: &[usize], settings: &QuadSettings) -> Result<Vec<TableRow>> {
    dims.par_iter()
        .map(|&d| TableRow::compute(d, alpha, settings))
        .collect()
}

/// Round to 7 decimals and drop trailing zeros, keeping at least one
/// decimal (`10.0`, `-0.816599`).
pub fn fmt7(v: f64) -> String {
    let s = format!("{v:.7}");
    let s = s.trim_end_matches('0');
    let s = if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    };
    if s == "-0.0" {
        "0.0".into()
    } else {
        s
    }
}

pub fn to_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("d");
    for c in COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.d);
        for v in r.values() {
            let _ = write!(out, ",{}", fmt7(v));
        }
        out.push('\n');
    }
    out
}

pub fn to_markdown(rows: &[TableRow], alpha: f64) -> String {
    let mut out = format!("alpha = {alpha}\n\n| d |");
    for c in COLUMNS {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(COLUMNS.len()));
    out.push('\n');
    for r in rows {
        let _ = write!(out, "| {} |", r.d);
        for v in r.values() {
            let _ = write!(out, " {} |", fmt7(v));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct TableJson<'a> {
    alpha: f64,
    rows: &'a [TableRow],
}

/// Full-precision JSON.
pub fn to_json(rows: &[TableRow], alpha: f64) -> Result<String> {
    output::to_json_string(&TableJson { alpha, rows })
}
