//! Cohort CSV export: header `w1..w10,a,y,true_ps`, one subject per row.

use std::io::{self, BufRead, Write};

use super::{Cohort, CovariateRow, NUM_COVARIATES};
use crate::num::Scalar;

pub const COHORT_CSV_HEADER: &str = "w1,w2,w3,w4,w5,w6,w7,w8,w9,w10,a,y,true_ps";

pub fn write_cohort_csv<T: Scalar, W: Write>(cohort: &Cohort<T>, out: W) -> io::Result<()> {
    let mut out = io::BufWriter::new(out);
    writeln!(out, "{COHORT_CSV_HEADER}")?;
    for i in 0..cohort.len() {
        for v in &cohort.covariates()[i] {
            write!(out, "{},", v.as_f64())?;
        }
        writeln!(
            out,
            "{},{},{}",
            u8::from(cohort.treatment()[i]),
            u8::from(cohort.outcome()[i]),
            cohort.true_ps()[i].as_f64()
        )?;
    }
    out.flush()
}

/// Reads a file written by [`write_cohort_csv`]. Errors carry the line
/// number.
pub fn read_cohort_csv<T: Scalar, R: BufRead>(input: R) -> Result<Cohort<T>, String> {
    let mut lines = input.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == COHORT_CSV_HEADER => {}
        Some((_, Ok(h))) => return Err(format!("line 1: expected header `{COHORT_CSV_HEADER}`, got `{h}`")),
        Some((_, Err(e))) => return Err(e.to_string()),
        None => return Err("empty file".into()),
    }
    let (mut covariates, mut treatment, mut outcome, mut ps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| format!("line {lineno}: {e}"))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != NUM_COVARIATES + 3 {
            return Err(format!(
                "line {lineno}: expected {} fields, found {}",
                NUM_COVARIATES + 3,
                cells.len()
            ));
        }
        let num = |k: usize| -> Result<f64, String> {
            cells[k]
                .parse::<f64>()
                .map_err(|_| format!("line {lineno}: field {} (`{}`) is not a number", k + 1, cells[k]))
        };
        let flag = |k: usize| -> Result<bool, String> {
            match cells[k] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(format!("line {lineno}: field {} must be 0 or 1, got `{other}`", k + 1)),
            }
        };
        let mut row: CovariateRow<T> = [T::zero(); NUM_COVARIATES];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = T::lit(num(k)?);
        }
        covariates.push(row);
        treatment.push(flag(NUM_COVARIATES)?);
        outcome.push(flag(NUM_COVARIATES + 1)?);
        ps.push(T::lit(num(NUM_COVARIATES + 2)?));
    }
    Cohort::from_parts(covariates, treatment, outcome, ps).map_err(|e| e.to_string())
}
