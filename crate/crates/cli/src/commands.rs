//! Command implementations. Each returns a [`Report`]; rendering and output
//! happen in the binary.

use l3o_core::alt_variance::{self as alt, ArQuartics, ProcedureId};
use l3o_core::design::{self, Dataset, HatMatrices, WeightKind, WeightScheme};
use l3o_core::inference::{self as inf, ConfidenceSet, GridSpec, TestReport, TestStatus, VarianceSource};
use l3o_core::l3o_variance::{self as lv, L3oOptions, QuadraticVariance, SingularPolicy};
use l3o_core::statistics::{self, RawMoments};

use crate::config::{CommandKind, RunConfig};
use crate::input;
use crate::mc;
use crate::report::{
    fin, CsDoc, CsOut, DiagnoseDoc, EstimateReport, FirstStage, Leverage, Report, SimDoc, TestDoc, TestOut,
};
use crate::{CliError, CliResult};

pub fn run(cfg: &RunConfig) -> CliResult<Report> {
    match cfg.command {
        CommandKind::Estimate => estimate(cfg, &load(cfg)?),
        CommandKind::Test => test(cfg, &load(cfg)?),
        CommandKind::Cs => cs(cfg, &load(cfg)?),
        CommandKind::Diagnose => diagnose(cfg, &load(cfg)?),
        CommandKind::Simulate => simulate(cfg),
    }
}

fn load(cfg: &RunConfig) -> CliResult<Dataset> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Schema(String::from("no input file given")))?;
    input::read_dataset_path(path)
}

/// Data, projections and weights shared by the data commands.
pub struct Prepared {
    pub hat: HatMatrices,
    pub ws: WeightScheme,
    pub raw: RawMoments,
    pub opts: L3oOptions,
}

pub fn prepare(cfg: &RunConfig, ds: &Dataset) -> CliResult<Prepared> {
    let kind = cfg.weights.unwrap_or(if ds.w.is_some() { WeightKind::Ujive } else { WeightKind::Jive });
    let hat = design::build_hat(ds)?;
    let ws = design::weights_from_hat(ds, &hat, kind)?;
    let raw = RawMoments::compute(ds, &ws);
    let policy = if cfg.conservative { SingularPolicy::Conservative } else { SingularPolicy::Strict };
    Ok(Prepared { hat, ws, raw, opts: L3oOptions { policy, ..L3oOptions::default() } })
}

fn first_stage(ds: &Dataset, p: &Prepared) -> CliResult<FirstStage> {
    let d = inf::first_stage_diagnostics_with(ds, &p.ws, p.opts)?;
    Ok(FirstStage::new(p.raw.t_xx, &d))
}

pub fn estimate(cfg: &RunConfig, ds: &Dataset) -> CliResult<Report> {
    let p = prepare(cfg, ds)?;
    let jive = statistics::jive_estimate(ds, &p.ws).ok().map(|e| e.beta_hat);
    let tsls = statistics::tsls_fit(ds, &p.hat).ok();
    Ok(Report::Estimate(EstimateReport {
        n: ds.n(),
        k: p.ws.k_eff,
        rank_q: p.hat.rank,
        weights: p.ws.kind.name().to_string(),
        beta_hat: jive.and_then(fin),
        beta_hat_tsls: tsls.as_ref().and_then(|t| fin(t.estimate.beta_hat)),
        se_tsls: tsls.as_ref().and_then(|t| t.estimate.se).and_then(fin),
        leverage: Leverage::from_slice(&p.hat.leverages),
        first_stage: first_stage(ds, &p)?,
    }))
}

/// L3O coefficients under the configured singular-set policy.
fn l3o(ds: &Dataset, p: &Prepared) -> CliResult<(QuadraticVariance, bool)> {
    let (q, out) = lv::l3o_quadratic_with(ds, &p.ws, p.opts)?;
    Ok((q, out.conservative_applied()))
}

/// One test at one β₀. `ar` and `l3o_q` are computed once by callers that
/// evaluate many β₀.
struct Tester<'a> {
    ds: &'a Dataset,
    p: &'a Prepared,
    alpha: f64,
    l3o_q: Option<(QuadraticVariance, bool)>,
    ar: Option<ArQuartics>,
}

impl<'a> Tester<'a> {
    fn new(ds: &'a Dataset, p: &'a Prepared, alpha: f64, procs: &[ProcedureId]) -> CliResult<Self> {
        if let Some(o) = procs.iter().find(|p| p.is_oracle()) {
            return Err(CliError::Schema(format!(
                "{} needs the population variance and is only available in `simulate`",
                o.name()
            )));
        }
        let l3o_q = if procs.contains(&ProcedureId::L3o) { Some(l3o(ds, p)?) } else { None };
        let ar = if procs.iter().any(|q| matches!(q, ProcedureId::Ms | ProcedureId::Cms)) {
            Some(ArQuartics::compute(ds, &p.ws))
        } else {
            None
        };
        Ok(Tester { ds, p, alpha, l3o_q, ar })
    }

    fn run(&self, proc_id: ProcedureId, b0: f64) -> CliResult<TestReport> {
        let (ds, ws, a) = (self.ds, &self.p.ws, self.alpha);
        Ok(match proc_id {
            ProcedureId::L3o => {
                let (q, dropped) = self.l3o_q.expect("computed in new");
                let mut r = inf::lm_report_from(&self.p.raw, &q, b0, a);
                if dropped && r.status == TestStatus::Ok {
                    r.status = TestStatus::Conservative;
                }
                r
            }
            ProcedureId::Mo => inf::lm_test(ds, ws, b0, a, VarianceSource::Mo)?,
            ProcedureId::Ms => self.ar.as_ref().expect("computed in new").ms_test(b0, a),
            ProcedureId::Cms => self.ar.as_ref().expect("computed in new").cms_test(b0, a),
            ProcedureId::Tsls => alt::tsls_test(ds, &self.p.hat, b0, a)?,
            ProcedureId::Ek => alt::ek_plugin_test(ds, ws, b0, a)?,
            ProcedureId::XtildeT => alt::constructed_t_test(ds, ws, b0, a)?,
            ProcedureId::XtildeAr => alt::constructed_ar_test(ds, ws, b0, a)?,
            ProcedureId::LmOracle | ProcedureId::ArOracle => unreachable!("rejected in new"),
        })
    }

    /// Rejection used for inversion: undefined tests exclude β₀.
    fn rejects(&self, proc_id: ProcedureId, b0: f64) -> bool {
        match self.run(proc_id, b0) {
            Ok(r) => match r.sided {
                l3o_core::inference::Sided::Two => r.reject_chi2().unwrap_or(true),
                l3o_core::inference::Sided::Upper => r.reject().unwrap_or(true),
            },
            Err(_) => true,
        }
    }
}

pub fn test(cfg: &RunConfig, ds: &Dataset) -> CliResult<Report> {
    let p = prepare(cfg, ds)?;
    let b0 = cfg.beta0.unwrap_or(0.0);
    let t = Tester::new(ds, &p, cfg.alpha, &cfg.procedures)?;
    let mut tests = Vec::with_capacity(cfg.procedures.len());
    for &proc_id in &cfg.procedures {
        tests.push(TestOut::from(&t.run(proc_id, b0)?));
    }
    Ok(Report::Test(TestDoc {
        n: ds.n(),
        k: p.ws.k_eff,
        weights: p.ws.kind.name().to_string(),
        alpha: cfg.alpha,
        beta0: b0,
        tests,
    }))
}

fn grid_set(t: &Tester, proc_id: ProcedureId, center: f64, alpha: f64) -> Option<ConfidenceSet> {
    let half = 2.0 * center.abs().max(1.0);
    let spec = GridSpec { max_expand: 512.0, tol: 1e-8, ..GridSpec::new(center, half) };
    inf::invert_grid_cs(|b| t.rejects(proc_id, b), alpha, spec).ok()
}

pub fn cs(cfg: &RunConfig, ds: &Dataset) -> CliResult<Report> {
    let p = prepare(cfg, ds)?;
    let t = Tester::new(ds, &p, cfg.alpha, &cfg.procedures)?;
    let estimate = statistics::jive_estimate(ds, &p.ws).ok().map(|e| e.beta_hat).and_then(fin);
    let center = estimate.unwrap_or(0.0);
    let mut sets = Vec::with_capacity(cfg.procedures.len());
    for &proc_id in &cfg.procedures {
        let name = proc_id.name();
        if proc_id == ProcedureId::L3o && !cfg.grid {
            let (q, _) = t.l3o_q.expect("computed");
            sets.push(CsOut::new(name, "closed_form", &inf::cs_from_quadratic(&p.raw, &q, cfg.alpha)));
            continue;
        }
        match grid_set(&t, proc_id, center, cfg.alpha) {
            Some(set) => sets.push(CsOut::new(name, "grid", &set)),
            None => sets.push(CsOut {
                procedure: name.to_string(),
                method: "grid".to_string(),
                shape: "grid_too_coarse".to_string(),
                lower: None,
                upper: None,
                length: None,
                discriminant: None,
                leading_coeff: None,
            }),
        }
    }
    Ok(Report::Cs(CsDoc {
        n: ds.n(),
        k: p.ws.k_eff,
        weights: p.ws.kind.name().to_string(),
        alpha: cfg.alpha,
        estimate,
        first_stage: first_stage(ds, &p)?,
        sets,
    }))
}

pub fn diagnose(cfg: &RunConfig, ds: &Dataset) -> CliResult<Report> {
    let p = prepare(cfg, ds)?;
    let f = lv::feasibility_for(&p.ws);
    // The scan itself never fails; first-stage ratios need the L3O
    // coefficients, so fall back to dropping singular terms for them.
    let fs = first_stage(ds, &p).ok().or_else(|| {
        let opts = L3oOptions { policy: SingularPolicy::Conservative, ..p.opts };
        inf::first_stage_diagnostics_with(ds, &p.ws, opts).ok().map(|d| FirstStage::new(p.raw.t_xx, &d))
    });
    Ok(Report::Diagnose(DiagnoseDoc {
        n: ds.n(),
        k: ds.k_instruments(),
        k_eff: p.ws.k_eff,
        rank_q: p.ws.rank_q,
        weights: p.ws.kind.name().to_string(),
        blocks: p.ws.part.blocks.len(),
        largest_block: p.ws.part.blocks.iter().map(Vec::len).max().unwrap_or(0),
        leverage: Leverage::from_slice(&p.hat.leverages),
        min_abs_d_triple: fin(f.min_abs_d_triple),
        invertible_all_triples: f.invertible_all_triples,
        n_offending: f.n_offending,
        offending_sample: f.offending_triples.iter().take(20).map(|&(i, j, k)| [i, j, k]).collect(),
        first_stage: fs,
    }))
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Report> {
    let specs = if cfg.table1 { mc::table1_specs() } else { vec![cfg.design.clone()] };
    let mut designs = Vec::with_capacity(specs.len());
    for spec in &specs {
        let d = mc::build_design(spec, cfg.seed)?;
        let res = mc::run_parallel(&d, &cfg.procedures, cfg.reps, cfg.alpha, cfg.beta0, cfg.threads)?;
        designs.push(mc::summarize(spec, &res));
    }
    Ok(Report::Simulate(SimDoc { alpha: cfg.alpha, designs }))
}
