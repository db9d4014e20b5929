//! Summary writers: JSON, flat CSV, markdown table and plot data.

use std::fmt::Write;

use super::{CellSummary, ExperimentSummary};
use crate::cohort_gen::ScenarioLabel;
use crate::ps_methods::Method;

pub fn to_json(summary: &ExperimentSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per scenario and method.
pub fn to_csv(summary: &ExperimentSummary) -> String {
    let mut out = String::from(
        "scenario,method,mean,ci_low,ci_high,successes,failed,warning,oracle_ate,oracle_att,nominal_gamma1\n",
    );
    for s in &summary.scenarios {
        for c in &s.cells {
            let e = c.estimate;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                s.label,
                c.method,
                opt(e.map(|e| e.mean)),
                opt(e.map(|e| e.ci_low)),
                opt(e.map(|e| e.ci_high)),
                c.successes,
                c.failed,
                c.warning,
                opt(s.truth.as_ref().map(|t| t.marginal_ate)),
                opt(s.truth.as_ref().map(|t| t.marginal_att)),
                s.nominal_gamma1
            )
            .unwrap();
        }
    }
    out
}

/// Per-method mean and interval endpoints for plotting, one row per cell.
pub fn to_plot_csv(summary: &ExperimentSummary) -> String {
    let mut out = String::from("scenario,method,label,mean,ci_low,ci_high\n");
    for s in &summary.scenarios {
        for c in &s.cells {
            if let Some(e) = c.estimate {
                writeln!(
                    out,
                    "{},{},\"{}\",{},{},{}",
                    s.label,
                    c.method,
                    c.method.display_name(),
                    e.mean,
                    e.ci_low,
                    e.ci_high
                )
                .unwrap();
            }
        }
    }
    out
}

fn cell_text(c: Option<&CellSummary>) -> String {
    match c {
        None => "n/a".into(),
        Some(c) => match c.estimate {
            Some(e) => {
                let flag = if c.warning { " †" } else { "" };
                format!("{:.3} [{:.3}, {:.3}]{flag}", e.mean, e.ci_low, e.ci_high)
            }
            None => format!("failed ({}/{})", c.failed, c.failed + c.successes),
        },
    }
}

/// Methods as rows, scenarios as columns, `mean [low, high]` per cell.
pub fn to_markdown(summary: &ExperimentSummary) -> String {
    let labels: Vec<ScenarioLabel> = summary.scenarios.iter().map(|s| s.label).collect();
    let methods: Vec<Method> = summary.config.settings.methods.clone();
    let mut out = String::new();
    writeln!(
        out,
        "Treatment effect (log-odds ratio) over {} resamplings of {}% of {} {}-subject cohort{}: mean [2.5%, 97.5%].\n",
        summary.config.reps,
        summary.config.subsample_fraction * 100.0,
        if summary.config.regenerate_cohort {
            "a fresh"
        } else {
            "a"
        },
        summary.config.n,
        if summary.config.regenerate_cohort {
            " each time"
        } else {
            ""
        },
    )
    .unwrap();
    write!(out, "| Method |").unwrap();
    for l in &labels {
        write!(out, " {l} |").unwrap();
    }
    write!(out, "\n|---|").unwrap();
    for _ in &labels {
        write!(out, "---|").unwrap();
    }
    out.push('\n');
    for m in &methods {
        write!(out, "| {} |", m.display_name()).unwrap();
        for s in &summary.scenarios {
            write!(out, " {} |", cell_text(s.cell(*m))).unwrap();
        }
        out.push('\n');
    }

    if summary.scenarios.iter().any(|s| s.truth.is_some()) {
        write!(out, "\n| Reference |").unwrap();
        for l in &labels {
            write!(out, " {l} |").unwrap();
        }
        write!(out, "\n|---|").unwrap();
        for _ in &labels {
            write!(out, "---|").unwrap();
        }
        out.push('\n');
        let row = |name: &str, f: &dyn Fn(&super::ScenarioSummary) -> String| {
            let mut r = format!("| {name} |");
            for s in &summary.scenarios {
                write!(r, " {} |", f(s)).unwrap();
            }
            r.push('\n');
            r
        };
        out.push_str(&row("Conditional γ1", &|s| format!("{:.3}", s.nominal_gamma1)));
        out.push_str(&row("Marginal ATE (oracle)", &|s| {
            s.truth.as_ref().map_or("-".into(), |t| {
                format!("{:.3} ± {:.3}", t.marginal_ate, t.marginal_ate_se)
            })
        }));
        out.push_str(&row("Marginal ATT (oracle)", &|s| {
            s.truth.as_ref().map_or("-".into(), |t| {
                format!("{:.3} ± {:.3}", t.marginal_att, t.marginal_att_se)
            })
        }));
    }
    if !summary.warnings.is_empty() {
        out.push_str("\n† more than 5% of replicates failed:\n\n");
        for w in &summary.warnings {
            writeln!(out, "- {w}").unwrap();
        }
    }
    out
}
