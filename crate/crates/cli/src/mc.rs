//! Parallel Monte Carlo driver.
//!
//! Replications are evaluated on a rayon pool and folded in replication
//! order. Every replication draws from its own `(seed, replication)` stream,
//! so results do not depend on the number of workers.

use rayon::prelude::*;

use l3o_core::alt_variance::ProcedureId;
use l3o_core::simulate::{make_design, ErrorParams, Family, McResult, SimContext, SimDesign};

use crate::config::{DesignSpec, Target};
use crate::report::{fin, SimDesignOut, SimRow};
use crate::{CliError, CliResult};

/// Run `n_reps` replications with at most `threads` workers (all cores when `None`).
pub fn run_parallel(
    design: &SimDesign,
    procedures: &[ProcedureId],
    n_reps: u64,
    alpha: f64,
    beta0: Option<f64>,
    threads: Option<usize>,
) -> CliResult<McResult> {
    let ctx = SimContext::new(design.clone(), procedures, beta0, alpha)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| (0..n_reps).into_par_iter().map(|r| ctx.evaluate(r)).collect());
    let mut res = McResult::empty(&ctx);
    for o in &outcomes {
        res.push(o);
    }
    Ok(res)
}

/// The nine benchmark null designs: binary judges, K = 400, c = 5, β = 0,
/// `E[T_AR] ∈ {2√K, 2, 0}` crossed with `E[T_FS] ∈ {2√K, 2, 0}`.
pub fn table1_specs() -> Vec<DesignSpec> {
    let levels = [Target::SqrtK(2.0), Target::Value(2.0), Target::Value(0.0)];
    let mut out = Vec::with_capacity(9);
    for e_tar in levels {
        for e_tfs in levels {
            out.push(DesignSpec {
                family: Family::BinaryJudge,
                k: 400,
                c: 5,
                e_tfs,
                e_tar,
                beta: 0.0,
                params: ErrorParams::default_for(Family::BinaryJudge),
            });
        }
    }
    out
}

pub fn build_design(spec: &DesignSpec, seed: u64) -> CliResult<SimDesign> {
    Ok(make_design(
        spec.family,
        spec.k,
        spec.c,
        spec.e_tfs.resolve(spec.k, spec.c),
        spec.e_tar.resolve(spec.k, spec.c),
        spec.beta,
        spec.params,
        seed,
    )?)
}

/// Tabulate one design's result.
pub fn summarize(spec: &DesignSpec, res: &McResult) -> SimDesignOut {
    let d = &res.design;
    let rows = res
        .tallies
        .iter()
        .map(|(p, t)| SimRow {
            family: d.family.name().to_string(),
            k: d.k,
            c: d.c,
            e_tfs: d.e_tfs,
            e_tar: d.e_tar,
            beta: d.beta,
            beta0: res.beta0,
            seed: d.seed,
            n_reps: res.n_reps,
            procedure: p.name().to_string(),
            rejection_rate: fin(t.rejection_rate()),
            valid_count: t.valid_count,
            undefined_count: t.undefined_count,
            failed_count: t.failed_count,
        })
        .collect();
    let ms_run = res.tallies.iter().any(|(p, _)| *p == ProcedureId::Ms);
    SimDesignOut {
        label_e_tar: spec.e_tar.label(),
        label_e_tfs: spec.e_tfs.label(),
        ms_nonpositive_fraction: if ms_run { fin(res.ms_nonpositive_fraction()) } else { None },
        xtilde_mismatch: res.xtilde_mismatch,
        rows,
    }
}
