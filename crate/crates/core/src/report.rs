//! Markdown and HTML reports of a resolved design.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::{Allocation, DesignReport};
use crate::error::{Error, Result};
use crate::opchar::OpChars;
use crate::scenario::{OutcomeSpec, Sigma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Md,
    Html,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Md => "md",
            ReportFormat::Html => "html",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(Self::Md),
            "html" => Ok(Self::Html),
            other => Err(Error::validation("format", format!("unknown report format `{other}`"))),
        }
    }
}

/// `x` rounded to four significant figures.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.000".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    let scale = 10f64.powi(mag - 3);
    let rounded = (x / scale).round() * scale;
    // rounding can carry into the next decade (9.9995 → 10.00)
    let mag2 = rounded.abs().log10().floor() as i32;
    let decimals = if mag2 > mag { decimals.saturating_sub(1) } else { decimals };
    format!("{rounded:.decimals$}")
}

enum Block {
    Heading(u8, String),
    Para(String),
    List(Vec<String>),
    Table(Vec<String>, Vec<Vec<String>>),
}

fn opchar_rows(oc: &OpChars) -> Vec<Vec<String>> {
    let mut rows = vec![
        vec!["Conjunctive power".into(), sig4(oc.p_con)],
        vec!["Disjunctive power".into(), sig4(oc.p_dis)],
    ];
    for (k, p) in oc.p_marginal.iter().enumerate() {
        rows.push(vec![format!("Marginal power P{}", k + 1), sig4(*p)]);
    }
    rows.push(vec!["PHER".into(), sig4(oc.pher)]);
    for (a, v) in oc.fwer_i.iter().enumerate() {
        rows.push(vec![format!("FWER I{}", a + 1), sig4(*v)]);
    }
    for (a, v) in oc.fwer_ii.iter().enumerate() {
        rows.push(vec![format!("FWER II{}", a + 1), sig4(*v)]);
    }
    rows.push(vec!["FDR".into(), sig4(oc.fdr)]);
    rows.push(vec!["FNDR".into(), sig4(oc.fndr)]);
    rows.push(vec![
        "pFDR".into(),
        oc.pfdr.map(sig4).unwrap_or_else(|| "undefined".into()),
    ]);
    let vacuous = |v: f64, flag: bool| if flag { format!("{} (vacuous)", sig4(v)) } else { sig4(v) };
    rows.push(vec!["Sensitivity".into(), vacuous(oc.sensitivity, oc.flags.sensitivity_vacuous)]);
    rows.push(vec!["Specificity".into(), vacuous(oc.specificity, oc.flags.specificity_vacuous)]);
    rows
}

fn blocks(report: &DesignReport, curve_file: Option<&str>) -> Vec<Block> {
    let d = &report.design;
    let s = &d.scenario;
    let mut out = vec![Block::Heading(1, "Multi-arm trial design".into())];
    if !report.warnings.is_empty() {
        out.push(Block::List(report.warnings.iter().map(|w| format!("Warning: {}", w.message)).collect()));
    }

    out.push(Block::Heading(2, "Inputs".into()));
    let outcome = match &s.outcome {
        OutcomeSpec::Normal { sigma: Sigma::Common(v) } => format!("normal, σ = {}", sig4(*v)),
        OutcomeSpec::Normal { sigma: Sigma::PerArm(v) } => {
            format!("normal, σ = ({})", v.iter().map(|x| sig4(*x)).collect::<Vec<_>>().join(", "))
        }
        OutcomeSpec::Bernoulli { pi0 } => format!("binary, π₀ = {}", sig4(*pi0)),
    };
    let allocation = match &s.allocation {
        Allocation::Fixed { ratios } => format!(
            "fixed ratios ({})",
            ratios.iter().map(|x| sig4(*x)).collect::<Vec<_>>().join(", ")
        ),
        other => format!("{:?}-optimal", other.criterion().expect("optimal allocation")),
    };
    out.push(Block::Table(
        vec!["Input".into(), "Value".into()],
        vec![
            vec!["Experimental arms K".into(), s.k.to_string()],
            vec!["Outcome".into(), outcome],
            vec!["α".into(), sig4(s.alpha)],
            vec!["β".into(), sig4(s.beta)],
            vec!["δ₁".into(), sig4(s.delta1)],
            vec!["δ₀".into(), sig4(s.delta0)],
            vec!["Correction".into(), s.mcc.display_name().into()],
            vec!["Power goal".into(), s.power_goal.display_name().into()],
            vec!["Allocation".into(), allocation],
            vec!["Whole-patient sample sizes".into(), if s.integer_n { "yes" } else { "no" }.into()],
        ],
    ));

    out.push(Block::Heading(2, "Design".into()));
    let mut rows = vec![vec![
        "Control".into(),
        sig4(d.sizes.n0),
        sig4(1.0),
        "".into(),
        "".into(),
    ]];
    for k in 0..s.k {
        rows.push(vec![
            format!("Arm {}", k + 1),
            sig4(d.sizes.n[k]),
            sig4(d.ratios[k]),
            sig4(d.thresholds.gammas[k]),
            sig4(d.critical_values[k]),
        ]);
    }
    out.push(Block::Table(
        vec![
            "Group / rank".into(),
            "Sample size".into(),
            "Ratio".into(),
            "Level γ".into(),
            "Critical z".into(),
        ],
        rows,
    ));
    out.push(Block::Para(format!(
        "Total sample size {}. Achieved {}: {}.",
        sig4(d.total_n),
        s.power_goal.display_name(),
        sig4(d.achieved_power)
    )));

    out.push(Block::Heading(2, "Operating characteristics".into()));
    for r in &report.opchars {
        let title = match r.label.to_string().as_str() {
            "HG" => "Global null H_G".to_string(),
            "HA" => "Global alternative H_A".to_string(),
            other => format!("Least favourable configuration {}", other.replace("LFC", "LFC_")),
        };
        out.push(Block::Heading(3, title));
        out.push(Block::Table(vec!["Quantity".into(), "Value".into()], opchar_rows(&r.opchars)));
    }
    if let (Some(c), Some(file)) = (&report.curves, curve_file) {
        out.push(Block::Heading(2, "Curves".into()));
        out.push(Block::Para(format!(
            "Plot data for {} values of θ from {} to {} are in `{file}`.",
            c.theta.len(),
            sig4(c.theta[0]),
            sig4(*c.theta.last().expect("non-empty grid"))
        )));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `report`; `curve_file` names the curve CSV when one was written.
pub fn render(report: &DesignReport, format: ReportFormat, curve_file: Option<&str>) -> String {
    let mut out = String::new();
    let blocks = blocks(report, curve_file);
    match format {
        ReportFormat::Md => {
            for b in blocks {
                match b {
                    Block::Heading(l, t) => writeln!(out, "{} {t}\n", "#".repeat(l as usize)),
                    Block::Para(t) => writeln!(out, "{t}\n"),
                    Block::List(items) => {
                        items.iter().for_each(|i| out.push_str(&format!("- {i}\n")));
                        writeln!(out)
                    }
                    Block::Table(head, rows) => {
                        writeln!(out, "| {} |", head.join(" | ")).unwrap();
                        writeln!(out, "|{}", "---|".repeat(head.len())).unwrap();
                        for r in rows {
                            writeln!(out, "| {} |", r.join(" | ")).unwrap();
                        }
                        writeln!(out)
                    }
                }
                .expect("writing to a string");
            }
        }
        ReportFormat::Html => {
            out.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Multi-arm trial design</title>\n");
            out.push_str("<style>table{border-collapse:collapse}td,th{border:1px solid #999;padding:2px 8px}td{text-align:right}td:first-child{text-align:left}</style>\n</head>\n<body>\n");
            for b in blocks {
                match b {
                    Block::Heading(l, t) => writeln!(out, "<h{l}>{}</h{l}>", escape(&t)),
                    Block::Para(t) => writeln!(out, "<p>{}</p>", escape(&t)),
                    Block::List(items) => {
                        out.push_str("<ul>\n");
                        items.iter().for_each(|i| out.push_str(&format!("<li>{}</li>\n", escape(i))));
                        writeln!(out, "</ul>")
                    }
                    Block::Table(head, rows) => {
                        out.push_str("<table>\n<tr>");
                        head.iter().for_each(|h| out.push_str(&format!("<th>{}</th>", escape(h))));
                        out.push_str("</tr>\n");
                        for r in rows {
                            out.push_str("<tr>");
                            r.iter().for_each(|c| out.push_str(&format!("<td>{}</td>", escape(c))));
                            out.push_str("</tr>\n");
                        }
                        writeln!(out, "</table>")
                    }
                }
                .expect("writing to a string");
            }
            out.push_str("</body>\n</html>\n");
        }
    }
    out
}
