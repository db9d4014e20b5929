//! Plain-text parameter files.
//!
//! ```text
//! # comment
//! beta0 = 0.0        # beta0..beta7: treatment model
//! alpha3 = -0.73     # alpha0..alpha7: outcome model
//! gamma1 = -0.4
//! corr =             # followed by 10 rows of 10 numbers,
//! 1.0 0.0 ...        # whitespace- or comma-separated
//! ```
//!
//! Keys may appear in any order and any subset; a coefficient file and a
//! correlation file can be the same file or two separate ones.

use std::fmt;
use std::path::Path;

use super::{CoefficientSet, CorrelationMatrix, NUM_COVARIATES};

/// Malformed parameter file. Always names the file, and the line and field
/// when the problem is local to one.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
        }
        if let Some(field) = &self.field {
            write!(f, ": field `{field}`")?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Raw values read from one file; absent keys stay `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterFile {
    pub source: String,
    pub beta: [Option<f64>; 8],
    pub alpha: [Option<f64>; 8],
    pub gamma1: Option<f64>,
    /// Row-major 10x10 block.
    pub corr: Option<Vec<f64>>,
}

/// Built-in defaults shipped with the crate.
pub const DEFAULT_PARAMETERS: &str = include_str!("../../data/default_scenario.cfg");

impl ParameterFile {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let source = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: source.clone(),
            line: None,
            field: None,
            message: e.to_string(),
        })?;
        Self::parse(&text, &source)
    }

    pub fn defaults() -> Self {
        Self::parse(DEFAULT_PARAMETERS, "<built-in defaults>").expect("built-in defaults parse")
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let err = |line: usize, field: Option<&str>, message: String| ConfigError {
            file: source.to_string(),
            line: Some(line),
            field: field.map(str::to_string),
            message,
        };
        let mut out = ParameterFile {
            source: source.to_string(),
            ..Default::default()
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, strip_comment(l).trim()))
            .filter(|(_, l)| !l.is_empty());

        while let Some((lineno, line)) = lines.next() {
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(lineno, None, format!("expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            let value = value.trim();
            if key == "corr" {
                if !value.is_empty() {
                    return Err(err(
                        lineno,
                        Some(key),
                        "matrix rows must start on the line after `corr =`".into(),
                    ));
                }
                if out.corr.is_some() {
                    return Err(err(lineno, Some(key), "duplicate key".into()));
                }
                let mut entries = Vec::with_capacity(NUM_COVARIATES * NUM_COVARIATES);
                for row in 0..NUM_COVARIATES {
                    let (rowline, text) = lines.next().ok_or_else(|| {
                        err(
                            lineno,
                            Some(key),
                            format!("expected {NUM_COVARIATES} rows, found {row}"),
                        )
                    })?;
                    let cells: Vec<&str> = text
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .collect();
                    if cells.len() != NUM_COVARIATES {
                        return Err(err(
                            rowline,
                            Some(key),
                            format!("row {} has {} entries, expected {NUM_COVARIATES}", row + 1, cells.len()),
                        ));
                    }
                    for cell in cells {
                        entries.push(parse_number(cell).map_err(|m| err(rowline, Some(key), m))?);
                    }
                }
                out.corr = Some(entries);
                continue;
            }
            let number = parse_number(value).map_err(|m| err(lineno, Some(key), m))?;
            let slot = match key {
                "gamma1" => &mut out.gamma1,
                _ => match indexed_key(key) {
                    Some(("beta", i)) => &mut out.beta[i],
                    Some(("alpha", i)) => &mut out.alpha[i],
                    _ => return Err(err(lineno, Some(key), "unknown key".into())),
                },
            };
            if slot.is_some() {
                return Err(err(lineno, Some(key), "duplicate key".into()));
            }
            *slot = Some(number);
        }
        Ok(out)
    }

    fn missing(&self, field: &str) -> ConfigError {
        ConfigError {
            file: self.source.clone(),
            line: None,
            field: Some(field.to_string()),
            message: "missing".into(),
        }
    }

    /// Keys present in `other` replace ours; the source becomes `other`'s so
    /// that later validation errors point at the file that was read.
    pub fn overlay(mut self, other: &ParameterFile) -> Self {
        for i in 0..8 {
            self.beta[i] = other.beta[i].or(self.beta[i]);
            self.alpha[i] = other.alpha[i].or(self.alpha[i]);
        }
        self.gamma1 = other.gamma1.or(self.gamma1);
        if other.corr.is_some() {
            self.corr = other.corr.clone();
        }
        self.source = other.source.clone();
        self
    }

    /// All of `beta0..beta7`, `alpha0..alpha7` and `gamma1` must be present.
    pub fn coefficients(&self) -> Result<CoefficientSet, ConfigError> {
        let mut beta = [0.0; 8];
        let mut alpha = [0.0; 8];
        for (i, (b, v)) in beta.iter_mut().zip(&self.beta).enumerate() {
            *b = v.ok_or_else(|| self.missing(&format!("beta{i}")))?;
        }
        for (i, (a, v)) in alpha.iter_mut().zip(&self.alpha).enumerate() {
            *a = v.ok_or_else(|| self.missing(&format!("alpha{i}")))?;
        }
        let gamma1 = self.gamma1.ok_or_else(|| self.missing("gamma1"))?;
        CoefficientSet::new(beta, alpha, gamma1).map_err(|e| ConfigError {
            file: self.source.clone(),
            line: None,
            field: None,
            message: e.to_string(),
        })
    }

    pub fn correlation(&self) -> Result<CorrelationMatrix, ConfigError> {
        let entries = self.corr.clone().ok_or_else(|| self.missing("corr"))?;
        CorrelationMatrix::new(entries).map_err(|e| ConfigError {
            file: self.source.clone(),
            line: None,
            field: Some("corr".into()),
            message: e.to_string(),
        })
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head)
}

fn indexed_key(key: &str) -> Option<(&'static str, usize)> {
    for prefix in ["beta", "alpha"] {
        if let Some(rest) = key.strip_prefix(prefix) {
            if let Ok(i) = rest.parse::<usize>() {
                if i < 8 && rest.len() == 1 {
                    return Some((prefix, i));
                }
            }
        }
    }
    None
}

fn parse_number(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a decimal number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}
