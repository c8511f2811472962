//! Serializable reports and their JSON, CSV and text renderings.
//!
//! Non-finite numbers are stored as `None` (JSON `null`) so reports
//! round-trip exactly through JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use l3o_core::inference::{ConfidenceSet, FirstStageDiagnostics, Sided, TestReport, TestStatus};

use crate::args::Format;
use crate::{CliError, CliResult};

pub fn fin(v: f64) -> Option<f64> {
    if v.is_finite() {
        Some(v)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leverage {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Leverage {
    pub fn from_slice(l: &[f64]) -> Self {
        let n = l.len().max(1) as f64;
        Leverage {
            min: l.iter().copied().fold(f64::INFINITY, f64::min),
            max: l.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: l.iter().sum::<f64>() / n,
        }
    }
}

/// First-stage strength ratios; `None` means infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub t_fs: f64,
    pub fs_l3o: Option<f64>,
    pub fs_mo: Option<f64>,
    pub fs_cms: Option<f64>,
    pub fs_ms: Option<f64>,
}

impl FirstStage {
    pub fn new(t_fs: f64, d: &FirstStageDiagnostics) -> Self {
        FirstStage { t_fs, fs_l3o: fin(d.fs_l3o), fs_mo: fin(d.fs_mo), fs_cms: fin(d.fs_cms), fs_ms: fin(d.fs_ms) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    /// Number of instruments used for normalization.
    pub k: usize,
    pub rank_q: usize,
    pub weights: String,
    pub beta_hat: Option<f64>,
    pub beta_hat_tsls: Option<f64>,
    pub se_tsls: Option<f64>,
    pub leverage: Leverage,
    pub first_stage: FirstStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOut {
    pub procedure: String,
    pub beta0: f64,
    /// `z²` for two-sided tests, `z` for one-sided ones.
    pub statistic: Option<f64>,
    pub variance: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    pub status: String,
    pub sided: String,
}

pub fn status_name(s: TestStatus) -> &'static str {
    match s {
        TestStatus::Ok => "ok",
        TestStatus::NegativeVariance => "negative_variance",
        TestStatus::Degenerate => "undefined",
        TestStatus::Conservative => "conservative",
    }
}

impl From<&TestReport> for TestOut {
    fn from(r: &TestReport) -> Self {
        TestOut {
            procedure: r.procedure.name().to_string(),
            beta0: r.beta0,
            statistic: fin(r.statistic),
            variance: fin(r.variance),
            p_value: r.p_value,
            reject: r.reject(),
            status: status_name(r.status).to_string(),
            sided: match r.sided {
                Sided::Two => "two",
                Sided::Upper => "upper",
            }
            .to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDoc {
    pub n: usize,
    pub k: usize,
    pub weights: String,
    pub alpha: f64,
    pub beta0: f64,
    pub tests: Vec<TestOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsOut {
    pub procedure: String,
    /// `closed_form` or `grid`.
    pub method: String,
    /// `interval`, `two_rays`, `empty`, `whole_line` or `grid_too_coarse`.
    pub shape: String,
    /// Bounds of the interval, or of the excluded middle for two rays.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub length: Option<f64>,
    pub discriminant: Option<f64>,
    pub leading_coeff: Option<f64>,
}

impl CsOut {
    pub fn new(procedure: &str, method: &str, cs: &ConfidenceSet) -> Self {
        CsOut {
            procedure: procedure.to_string(),
            method: method.to_string(),
            shape: cs.shape.name().to_string(),
            lower: fin(cs.lower),
            upper: fin(cs.upper),
            length: fin(cs.length()),
            discriminant: fin(cs.discriminant),
            leading_coeff: fin(cs.leading_coeff),
        }
    }

    /// Human-readable set, with `∅` for the empty set.
    pub fn render(&self) -> String {
        let f = |v: Option<f64>, inf: &str| v.map_or_else(|| inf.to_string(), |x| format!("{x:.4}"));
        match self.shape.as_str() {
            "empty" => "∅".to_string(),
            "whole_line" => "(-∞, ∞)".to_string(),
            "interval" => format!("[{}, {}]", f(self.lower, "-∞"), f(self.upper, "∞")),
            "two_rays" => format!("(-∞, {}] ∪ [{}, ∞)", f(self.lower, "-∞"), f(self.upper, "∞")),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsDoc {
    pub n: usize,
    pub k: usize,
    pub weights: String,
    pub alpha: f64,
    pub estimate: Option<f64>,
    pub first_stage: FirstStage,
    pub sets: Vec<CsOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseDoc {
    pub n: usize,
    pub k: usize,
    pub k_eff: usize,
    pub rank_q: usize,
    pub weights: String,
    pub blocks: usize,
    pub largest_block: usize,
    pub leverage: Leverage,
    pub min_abs_d_triple: Option<f64>,
    pub invertible_all_triples: bool,
    pub n_offending: usize,
    /// First offending `(i, j, k)` sets; pairs are listed as `(i, j, j)`.
    pub offending_sample: Vec<[usize; 3]>,
    pub first_stage: Option<FirstStage>,
}

/// One procedure in one simulated design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub family: String,
    pub k: usize,
    pub c: usize,
    pub e_tfs: f64,
    pub e_tar: f64,
    pub beta: f64,
    pub beta0: f64,
    pub seed: u64,
    pub n_reps: u64,
    pub procedure: String,
    /// `None` when no replication produced a decision.
    pub rejection_rate: Option<f64>,
    pub valid_count: u64,
    pub undefined_count: u64,
    pub failed_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesignOut {
    pub label_e_tar: String,
    pub label_e_tfs: String,
    pub ms_nonpositive_fraction: Option<f64>,
    pub xtilde_mismatch: u64,
    pub rows: Vec<SimRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDoc {
    pub alpha: f64,
    pub designs: Vec<SimDesignOut>,
}

/// Any report produced by a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Report {
    Estimate(EstimateReport),
    Test(TestDoc),
    Cs(CsDoc),
    Diagnose(DiagnoseDoc),
    Simulate(SimDoc),
}

pub fn to_json(r: &Report) -> CliResult<String> {
    serde_json::to_string_pretty(r).map_err(|e| CliError::Other(e.to_string()))
}

pub fn from_json(s: &str) -> CliResult<Report> {
    serde_json::from_str(s).map_err(|e| CliError::Schema(format!("invalid report: {e}")))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| String::from("NaN"), |x| x.to_string())
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Other(e.to_string()))
}

fn first_stage_kv(fs: &FirstStage) -> Vec<(String, String)> {
    vec![
        ("t_fs".into(), fs.t_fs.to_string()),
        ("fs_l3o".into(), opt(fs.fs_l3o)),
        ("fs_mo".into(), opt(fs.fs_mo)),
        ("fs_cms".into(), opt(fs.fs_cms)),
        ("fs_ms".into(), opt(fs.fs_ms)),
    ]
}

fn key_values(r: &Report) -> Vec<(String, String)> {
    match r {
        Report::Estimate(e) => {
            let mut kv = vec![
                ("n".into(), e.n.to_string()),
                ("k".into(), e.k.to_string()),
                ("rank_q".into(), e.rank_q.to_string()),
                ("weights".into(), e.weights.clone()),
                ("beta_hat".into(), opt(e.beta_hat)),
                ("beta_hat_tsls".into(), opt(e.beta_hat_tsls)),
                ("se_tsls".into(), opt(e.se_tsls)),
                ("leverage_min".into(), e.leverage.min.to_string()),
                ("leverage_max".into(), e.leverage.max.to_string()),
                ("leverage_mean".into(), e.leverage.mean.to_string()),
            ];
            kv.extend(first_stage_kv(&e.first_stage));
            kv
        }
        Report::Diagnose(d) => {
            let mut kv = vec![
                ("n".into(), d.n.to_string()),
                ("k".into(), d.k.to_string()),
                ("k_eff".into(), d.k_eff.to_string()),
                ("rank_q".into(), d.rank_q.to_string()),
                ("weights".into(), d.weights.clone()),
                ("blocks".into(), d.blocks.to_string()),
                ("largest_block".into(), d.largest_block.to_string()),
                ("leverage_min".into(), d.leverage.min.to_string()),
                ("leverage_max".into(), d.leverage.max.to_string()),
                ("leverage_mean".into(), d.leverage.mean.to_string()),
                ("min_abs_d_triple".into(), opt(d.min_abs_d_triple)),
                ("invertible_all_triples".into(), d.invertible_all_triples.to_string()),
                ("n_offending".into(), d.n_offending.to_string()),
            ];
            if let Some(fs) = &d.first_stage {
                kv.extend(first_stage_kv(fs));
            }
            kv
        }
        _ => Vec::new(),
    }
}

pub fn sim_rows(doc: &SimDoc) -> Vec<&SimRow> {
    doc.designs.iter().flat_map(|d| d.rows.iter()).collect()
}

pub fn to_csv(r: &Report) -> CliResult<String> {
    match r {
        Report::Estimate(_) | Report::Diagnose(_) => {
            let rows = key_values(r).into_iter().map(|(k, v)| vec![k, v]).collect();
            csv_string(&["key", "value"], rows)
        }
        Report::Test(t) => {
            let rows = t
                .tests
                .iter()
                .map(|o| {
                    vec![
                        o.procedure.clone(),
                        o.beta0.to_string(),
                        opt(o.statistic),
                        opt(o.p_value),
                        o.reject.map_or_else(|| String::from("NA"), |b| b.to_string()),
                        o.status.clone(),
                    ]
                })
                .collect();
            csv_string(&["procedure", "beta0", "statistic", "p_value", "reject", "status"], rows)
        }
        Report::Cs(c) => {
            let rows = c
                .sets
                .iter()
                .map(|s| {
                    vec![
                        s.procedure.clone(),
                        s.method.clone(),
                        s.shape.clone(),
                        opt(s.lower),
                        opt(s.upper),
                        opt(s.length),
                        opt(c.estimate),
                    ]
                })
                .collect();
            csv_string(&["procedure", "method", "shape", "lower", "upper", "length", "estimate"], rows)
        }
        Report::Simulate(s) => {
            let rows = sim_rows(s)
                .into_iter()
                .map(|r| {
                    vec![
                        r.family.clone(),
                        r.k.to_string(),
                        r.c.to_string(),
                        r.e_tfs.to_string(),
                        r.e_tar.to_string(),
                        r.beta.to_string(),
                        r.beta0.to_string(),
                        r.seed.to_string(),
                        r.n_reps.to_string(),
                        r.procedure.clone(),
                        opt(r.rejection_rate),
                        r.valid_count.to_string(),
                        r.undefined_count.to_string(),
                        r.failed_count.to_string(),
                    ]
                })
                .collect();
            csv_string(
                &[
                    "family",
                    "K",
                    "c",
                    "e_tfs",
                    "e_tar",
                    "beta",
                    "beta0",
                    "seed",
                    "n_reps",
                    "procedure",
                    "rejection_rate",
                    "valid_count",
                    "undefined_count",
                    "failed_count",
                ],
                rows,
            )
        }
    }
}

pub fn to_text(r: &Report) -> String {
    let mut s = String::new();
    match r {
        Report::Estimate(_) | Report::Diagnose(_) => {
            for (k, v) in key_values(r) {
                let _ = writeln!(s, "{k:<24}{v}");
            }
            if let Report::Diagnose(d) = r {
                for t in &d.offending_sample {
                    let _ = writeln!(s, "offending               ({}, {}, {})", t[0], t[1], t[2]);
                }
            }
        }
        Report::Test(t) => {
            let _ = writeln!(s, "H0: beta = {}   alpha = {}   n = {}   K = {}   weights = {}", t.beta0, t.alpha, t.n, t.k, t.weights);
            let _ = writeln!(s, "{:<12}{:>14}{:>12}{:>8}  status", "procedure", "statistic", "p-value", "reject");
            for o in &t.tests {
                let _ = writeln!(
                    s,
                    "{:<12}{:>14}{:>12}{:>8}  {}",
                    o.procedure,
                    o.statistic.map_or_else(|| "NaN".into(), |v| format!("{v:.4}")),
                    o.p_value.map_or_else(|| "NaN".into(), |v| format!("{v:.4}")),
                    o.reject.map_or("NA", |b| if b { "yes" } else { "no" }),
                    o.status
                );
            }
        }
        Report::Cs(c) => {
            let _ = writeln!(s, "{}% confidence sets   n = {}   K = {}   weights = {}", (1.0 - c.alpha) * 100.0, c.n, c.k, c.weights);
            let _ = writeln!(s, "{:<12}{:>12}{:>12}{:>12}{:>12}  set", "procedure", "LB", "UB", "Estimate", "CIlength");
            let est = c.estimate.map_or_else(|| "NaN".into(), |v| format!("{v:.4}"));
            for set in &c.sets {
                let (lb, ub, len) = match set.shape.as_str() {
                    "empty" => ("∅".to_string(), "∅".to_string(), "0".to_string()),
                    "interval" => (
                        format!("{:.4}", set.lower.unwrap_or(f64::NAN)),
                        format!("{:.4}", set.upper.unwrap_or(f64::NAN)),
                        format!("{:.4}", set.length.unwrap_or(f64::NAN)),
                    ),
                    _ => ("-∞".to_string(), "∞".to_string(), "∞".to_string()),
                };
                let _ = writeln!(s, "{:<12}{:>12}{:>12}{:>12}{:>12}  {}", set.procedure, lb, ub, est, len, set.render());
            }
            let fs = &c.first_stage;
            let _ = writeln!(
                s,
                "first stage: T_FS = {:.4}, K·T_FS²/B₂ = {}, T_FS²/Ψ₂ = {}",
                fs.t_fs,
                fs.fs_l3o.map_or_else(|| "inf".into(), |v| format!("{v:.4}")),
                fs.fs_mo.map_or_else(|| "inf".into(), |v| format!("{v:.4}"))
            );
        }
        Report::Simulate(doc) => {
            let procs: Vec<String> = doc
                .designs
                .first()
                .map(|d| d.rows.iter().map(|r| r.procedure.clone()).collect())
                .unwrap_or_default();
            let _ = write!(s, "{:<10}{:<10}|", "E[T_AR]", "E[T_FS]");
            for p in &procs {
                let _ = write!(s, "{p:>10}");
            }
            let _ = writeln!(s);
            for d in &doc.designs {
                let _ = write!(s, "{:<10}{:<10}|", d.label_e_tar, d.label_e_tfs);
                for r in &d.rows {
                    let _ = write!(s, "{:>10}", r.rejection_rate.map_or_else(|| "NaN".into(), |v| format!("{v:.3}")));
                }
                let _ = writeln!(s);
            }
            if let Some(d) = doc.designs.first() {
                if let Some(r) = d.rows.first() {
                    let _ = writeln!(
                        s,
                        "family {}, K = {}, c = {}, beta = {}, beta0 = {}, reps = {}, seed = {}, alpha = {}",
                        r.family, r.k, r.c, r.beta, r.beta0, r.n_reps, r.seed, doc.alpha
                    );
                }
            }
        }
    }
    s
}

pub fn render(r: &Report, format: Format) -> CliResult<String> {
    match format {
        Format::Json => to_json(r).map(|mut s| {
            s.push('\n');
            s
        }),
        Format::Csv => to_csv(r),
        Format::Text => Ok(to_text(r)),
    }
}
