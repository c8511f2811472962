//! Rival variance estimators and tests: MO, MS cross-fit, CMS plug-in,
//! constructed-instrument t and AR, an EK-style plug-in, TSLS, and oracle
//! variances for simulated designs.

use alloc::vec;
use alloc::vec::Vec;

use crate::design::{self, Dataset, HatMatrices, WeightScheme};
use crate::inference::{Sided, TestReport};
use crate::l3o_variance::{QuadraticVariance, VarianceId};
use crate::numeric::{Lin, Neumaier, QuadAcc, Quartic, QuarticAcc};
use crate::simulate::SimDesign;
use crate::statistics::{self, RawMoments};
use crate::{Error, Result};

/// Procedures compared in the benchmark tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProcedureId {
    Tsls,
    Ek,
    Ms,
    Cms,
    Mo,
    XtildeT,
    XtildeAr,
    L3o,
    LmOracle,
    ArOracle,
}

impl ProcedureId {
    pub const ALL: [ProcedureId; 10] = [
        ProcedureId::Tsls,
        ProcedureId::Ek,
        ProcedureId::Ms,
        ProcedureId::Cms,
        ProcedureId::Mo,
        ProcedureId::XtildeT,
        ProcedureId::XtildeAr,
        ProcedureId::L3o,
        ProcedureId::LmOracle,
        ProcedureId::ArOracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProcedureId::Tsls => "TSLS",
            ProcedureId::Ek => "EK",
            ProcedureId::Ms => "MS",
            ProcedureId::Cms => "CMS",
            ProcedureId::Mo => "MO",
            ProcedureId::XtildeT => "XTILDE_T",
            ProcedureId::XtildeAr => "XTILDE_AR",
            ProcedureId::L3o => "L3O",
            ProcedureId::LmOracle => "LM_ORACLE",
            ProcedureId::ArOracle => "AR_ORACLE",
        }
    }

    /// Case-insensitive; also accepts `LMORC`, `ARORC`, `XT` and `XAR`.
    pub fn parse(s: &str) -> Option<Self> {
        let u = s.trim().to_ascii_uppercase().replace('-', "_");
        let id = match u.as_str() {
            "TSLS" | "2SLS" => ProcedureId::Tsls,
            "EK" => ProcedureId::Ek,
            "MS" => ProcedureId::Ms,
            "CMS" => ProcedureId::Cms,
            "MO" => ProcedureId::Mo,
            "XTILDE_T" | "XT" => ProcedureId::XtildeT,
            "XTILDE_AR" | "XAR" => ProcedureId::XtildeAr,
            "L3O" => ProcedureId::L3o,
            "LM_ORACLE" | "LMORC" => ProcedureId::LmOracle,
            "AR_ORACLE" | "ARORC" => ProcedureId::ArOracle,
            _ => return None,
        };
        Some(id)
    }

    /// Needs population moments, so only available in simulations.
    pub fn is_oracle(&self) -> bool {
        matches!(self, ProcedureId::LmOracle | ProcedureId::ArOracle)
    }
}

fn e_lin(ds: &Dataset) -> Vec<Lin> {
    ds.y.iter().zip(&ds.x).map(|(&y, &x)| Lin::new(y, -x)).collect()
}

fn sum_products(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = Neumaier::new();
    for (u, v) in a.iter().zip(b) {
        acc.add(u * v);
    }
    acc.value()
}

/// MO variance as a quadratic in β₀:
/// `(1/K)Σ_i x̃_i² e_i² + (1/K)Σ_iΣ_{j≠i} G_ij² x_i e_i x_j e_j`.
pub fn mo_quadratic(ds: &Dataset, ws: &WeightScheme) -> QuadraticVariance {
    let e = e_lin(ds);
    let xt = design::leave_out_predictor(ws, &ds.x);
    let mut acc = QuadAcc::new();
    for i in 0..ds.n() {
        acc.add((e[i] * e[i]).scale(xt[i] * xt[i]));
    }
    for (b, idx) in ws.part.blocks.iter().enumerate() {
        let g = &ws.blocks[b].g;
        let xe: Vec<Lin> = idx.iter().map(|&i| e[i].scale(ds.x[i])).collect();
        for p in 0..idx.len() {
            for q in 0..idx.len() {
                if p != q {
                    let w = g[(p, q)] * g[(p, q)];
                    if w != 0.0 {
                        acc.add((xe[p] * xe[q]).scale(w));
                    }
                }
            }
        }
    }
    QuadraticVariance::from_quad(acc.value().scale(1.0 / ws.k_eff as f64), VarianceId::Mo)
}

/// `(2/K) Σ_iΣ_{j≠i} w_ij a_i a_j` for block weights `w_ij = f(G_ij, M)`.
fn pair_quartic(
    ws: &WeightScheme,
    a: &[crate::numeric::Quad],
    weight: impl Fn(&crate::design::WBlock, usize, usize) -> f64,
) -> Quartic {
    let mut acc = QuarticAcc::new();
    for (b, idx) in ws.part.blocks.iter().enumerate() {
        let blk = &ws.blocks[b];
        for p in 0..idx.len() {
            for q in 0..idx.len() {
                if p == q {
                    continue;
                }
                let w = weight(blk, p, q);
                if w != 0.0 {
                    acc.add(a[idx[p]].mul_full(a[idx[q]]).scale(w));
                }
            }
        }
    }
    acc.value().scale(2.0 / ws.k_eff as f64)
}

fn ms_weight(blk: &crate::design::WBlock, p: usize, q: usize) -> f64 {
    let g = blk.g[(p, q)];
    if g == 0.0 {
        return 0.0;
    }
    let den = blk.m[(p, p)] * blk.m[(q, q)] + blk.m[(p, q)] * blk.m[(p, q)];
    if den > 0.0 {
        g * g / den
    } else {
        f64::NAN
    }
}

/// MS cross-fit variance as a quartic in β₀:
/// `(2/K)Σ_iΣ_{j≠i} [G_ij²/(M_iiM_jj+M_ij²)] e_i(Me)_i e_j(Me)_j`.
/// Coefficients are NaN if a used pair has a non-positive denominator.
pub fn ms_quartic(ds: &Dataset, ws: &WeightScheme) -> Quartic {
    let e = e_lin(ds);
    let my = ws.m_apply(&ds.y);
    let mx = ws.m_apply(&ds.x);
    let a: Vec<_> = (0..ds.n()).map(|i| e[i] * Lin::new(my[i], -mx[i])).collect();
    pair_quartic(ws, &a, ms_weight)
}

/// MS cross-fit variance at β₀ with its validity flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsVariance {
    pub value: f64,
    /// `value > 0`; the MS test is undefined otherwise.
    pub valid: bool,
}

pub fn ms_crossfit_variance(ds: &Dataset, ws: &WeightScheme, beta0: f64) -> MsVariance {
    let value = ms_quartic(ds, ws).eval(beta0);
    MsVariance { value, valid: value > 0.0 }
}

/// CMS plug-in variance as a quartic: `(2/K)Σ_iΣ_{j≠i} G_ij² e_i² e_j²`.
pub fn cms_quartic(ds: &Dataset, ws: &WeightScheme) -> Quartic {
    let e = e_lin(ds);
    let a: Vec<_> = e.iter().map(|&v| v * v).collect();
    pair_quartic(ws, &a, |blk, p, q| blk.g[(p, q)] * blk.g[(p, q)])
}

pub fn cms_plugin_variance(ds: &Dataset, ws: &WeightScheme, beta0: f64) -> f64 {
    cms_quartic(ds, ws).eval(beta0)
}

/// Denominators of the CMS and MS first-stage ratios:
/// `(2/K)ΣΣG_ij²x_i²x_j²` and `(2/K)ΣΣ[G_ij²/(M_iiM_jj+M_ij²)]x_i²x_j²`.
pub fn ar_first_stage_denominators(ds: &Dataset, ws: &WeightScheme) -> (f64, f64) {
    let a: Vec<_> = ds.x.iter().map(|&x| crate::numeric::Quad::constant(x * x)).collect();
    let cms = pair_quartic(ws, &a, |blk, p, q| blk.g[(p, q)] * blk.g[(p, q)]).c[0];
    let ms = pair_quartic(ws, &a, ms_weight).c[0];
    (cms, ms)
}

/// One-sided AR test `T_AR/√Φ̂` with a variance quartic.
fn ar_test(procedure: ProcedureId, raw: &RawMoments, phi: &Quartic, beta0: f64, alpha: f64) -> TestReport {
    let t_ar = raw.at(beta0).t_ar;
    TestReport::from_ratio(procedure, beta0, t_ar, phi.eval(beta0), alpha, Sided::Upper)
}

/// MS test: reject for large `T_AR/√Φ̂_MS`; undefined when `Φ̂_MS ≤ 0`.
pub fn ms_test(ds: &Dataset, ws: &WeightScheme, beta0: f64, alpha: f64) -> TestReport {
    let raw = RawMoments::compute(ds, ws);
    ar_test(ProcedureId::Ms, &raw, &ms_quartic(ds, ws), beta0, alpha)
}

/// CMS test: reject for large `T_AR/√Φ̂_CMS`.
pub fn cms_test(ds: &Dataset, ws: &WeightScheme, beta0: f64, alpha: f64) -> TestReport {
    let raw = RawMoments::compute(ds, ws);
    ar_test(ProcedureId::Cms, &raw, &cms_quartic(ds, ws), beta0, alpha)
}

/// Precomputed pieces for running the AR-type tests at many β₀.
#[derive(Debug, Clone, PartialEq)]
pub struct ArQuartics {
    pub raw: RawMoments,
    pub ms: Quartic,
    pub cms: Quartic,
}

impl ArQuartics {
    pub fn compute(ds: &Dataset, ws: &WeightScheme) -> Self {
        ArQuartics { raw: RawMoments::compute(ds, ws), ms: ms_quartic(ds, ws), cms: cms_quartic(ds, ws) }
    }

    pub fn ms_test(&self, beta0: f64, alpha: f64) -> TestReport {
        ar_test(ProcedureId::Ms, &self.raw, &self.ms, beta0, alpha)
    }

    pub fn cms_test(&self, beta0: f64, alpha: f64) -> TestReport {
        ar_test(ProcedureId::Cms, &self.raw, &self.cms, beta0, alpha)
    }
}

fn constructed_instrument(ds: &Dataset, ws: &WeightScheme) -> Result<(Vec<f64>, f64)> {
    let xt = design::leave_out_predictor(ws, &ds.x);
    let d = sum_products(&xt, &xt);
    if !(d > 0.0) {
        return Err(Error::DegenerateFirstStage);
    }
    Ok((xt, d))
}

/// Just-identified AR test with the constructed instrument `x̃`: regress
/// `e(β₀)` on `x̃` and t-test the slope with a robust standard error.
pub fn constructed_ar_test(ds: &Dataset, ws: &WeightScheme, beta0: f64, alpha: f64) -> Result<TestReport> {
    let (xt, d) = constructed_instrument(ds, ws)?;
    let e: Vec<f64> = ds.y.iter().zip(&ds.x).map(|(y, x)| y - x * beta0).collect();
    let slope = sum_products(&e, &xt) / d;
    let mut meat = Neumaier::new();
    for (ei, xi) in e.iter().zip(&xt) {
        let r = ei - xi * slope;
        meat.add(xi * xi * r * r);
    }
    let v = meat.value() / (d * d);
    Ok(TestReport::from_ratio(ProcedureId::XtildeAr, beta0, slope, v, alpha, Sided::Two))
}

/// 2SLS t-test treating `x̃` as an observed instrument. The point estimate
/// coincides with the jackknife estimate.
pub fn constructed_t_test(ds: &Dataset, ws: &WeightScheme, beta0: f64, alpha: f64) -> Result<TestReport> {
    let xt = design::leave_out_predictor(ws, &ds.x);
    let den = sum_products(&ds.x, &xt);
    if !(libm::fabs(den) >= 1e-12) {
        return Err(Error::DegenerateFirstStage);
    }
    let beta = sum_products(&ds.y, &xt) / den;
    let mut meat = Neumaier::new();
    for i in 0..ds.n() {
        let u = ds.y[i] - ds.x[i] * beta;
        meat.add(xt[i] * xt[i] * u * u);
    }
    let v = meat.value() / (den * den);
    Ok(TestReport::from_ratio(ProcedureId::XtildeT, beta0, beta - beta0, v, alpha, Sided::Two))
}

/// Point estimate of the constructed-instrument regression.
pub fn constructed_t_estimate(ds: &Dataset, ws: &WeightScheme) -> Result<f64> {
    let xt = design::leave_out_predictor(ws, &ds.x);
    let den = sum_products(&ds.x, &xt);
    if !(libm::fabs(den) >= 1e-12) {
        return Err(Error::DegenerateFirstStage);
    }
    Ok(sum_products(&ds.y, &xt) / den)
}

/// Conventional 2SLS t-test with a robust standard error.
pub fn tsls_test(ds: &Dataset, hat: &HatMatrices, beta0: f64, alpha: f64) -> Result<TestReport> {
    let fit = statistics::tsls_fit(ds, hat)?;
    let se = fit.estimate.se.unwrap_or(f64::NAN);
    Ok(TestReport::from_ratio(ProcedureId::Tsls, beta0, fit.estimate.beta_hat - beta0, se * se, alpha, Sided::Two))
}

/// Variance of `Σ_iΣ_{j≠i} G_ij e_i X_j` for `e = R_Δ + ν`, `X = R + η`
/// with independent units and per-unit moments `E[ν²]`, `E[η²]`, `E[νη]`.
pub fn null_lm_variance(ws: &WeightScheme, r: &[f64], r_delta: &[f64], s_vv: &[f64], s_hh: &[f64], s_vh: &[f64]) -> f64 {
    let a = design::leave_out_predictor(ws, r);
    let b = design::leave_out_predictor_t(ws, r_delta);
    let mut acc = Neumaier::new();
    for i in 0..a.len() {
        acc.add(s_vv[i] * a[i] * a[i] + 2.0 * s_vh[i] * a[i] * b[i] + s_hh[i] * b[i] * b[i]);
    }
    for (blk, idx) in ws.blocks.iter().zip(&ws.part.blocks) {
        for p in 0..idx.len() {
            for q in 0..idx.len() {
                if p != q {
                    let (i, j) = (idx[p], idx[q]);
                    let g = blk.g[(p, q)];
                    acc.add(g * g * s_vv[i] * s_hh[j] + g * blk.g[(q, p)] * s_vh[i] * s_vh[j]);
                }
            }
        }
    }
    acc.value()
}

/// Variance of `Σ_iΣ_{j≠i} G_ij e_i e_j` for `e = R_Δ + ν`.
pub fn null_ar_variance(ws: &WeightScheme, r_delta: &[f64], s_vv: &[f64]) -> f64 {
    let a = design::leave_out_predictor(ws, r_delta);
    let b = design::leave_out_predictor_t(ws, r_delta);
    let mut acc = Neumaier::new();
    for i in 0..a.len() {
        let c = a[i] + b[i];
        acc.add(s_vv[i] * c * c);
    }
    for (blk, idx) in ws.blocks.iter().zip(&ws.part.blocks) {
        for p in 0..idx.len() {
            for q in 0..idx.len() {
                if p != q {
                    let g = blk.g[(p, q)];
                    acc.add((g * g + g * blk.g[(q, p)]) * s_vv[idx[p]] * s_vv[idx[q]]);
                }
            }
        }
    }
    acc.value()
}

/// EK-style t-test of the jackknife estimate. The variance follows the shape
/// of `Var(ΣΣ G_ij e_i X_j)` with reduced-form fits `H_Q x`, `H_Q ê` and
/// per-unit moments replaced by residual cross products scaled by `1/M_ii`.
pub fn ek_plugin_test(ds: &Dataset, ws: &WeightScheme, beta0: f64, alpha: f64) -> Result<TestReport> {
    let est = statistics::jive_estimate(ds, ws)?;
    let n = ds.n();
    let e_hat: Vec<f64> = ds.y.iter().zip(&ds.x).map(|(y, x)| y - x * est.beta_hat).collect();
    let me = ws.m_apply(&e_hat);
    let mx = ws.m_apply(&ds.x);
    let r: Vec<f64> = (0..n).map(|i| ds.x[i] - mx[i]).collect();
    let rd: Vec<f64> = (0..n).map(|i| e_hat[i] - me[i]).collect();
    let mut s_vv = vec![0.0; n];
    let mut s_hh = vec![0.0; n];
    let mut s_vh = vec![0.0; n];
    for i in 0..n {
        let mii = ws.m_entry(i, i);
        if !(mii > 1e-12) {
            return Ok(TestReport::from_ratio(ProcedureId::Ek, beta0, f64::NAN, f64::NAN, alpha, Sided::Two));
        }
        s_vv[i] = e_hat[i] * me[i] / mii;
        s_hh[i] = ds.x[i] * mx[i] / mii;
        s_vh[i] = 0.5 * (e_hat[i] * mx[i] + ds.x[i] * me[i]) / mii;
    }
    let v = null_lm_variance(ws, &r, &rd, &s_vv, &s_hh, &s_vh);
    let s = (est.beta_hat - beta0) * libm::fabs(est.denominator);
    Ok(TestReport::from_ratio(ProcedureId::Ek, beta0, s, v, alpha, Sided::Two))
}

/// Population moments of a simulated design and the implied oracle variances.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMoments {
    /// `E[X_i]`.
    pub r: Vec<f64>,
    /// `E[e_i(β)]` at the true β.
    pub r_delta: Vec<f64>,
    /// `E[ν_i²]`, `E[η_i²]`, `E[ν_i η_i]`.
    pub s_vv: Vec<f64>,
    pub s_hh: Vec<f64>,
    pub s_vh: Vec<f64>,
    /// Variances used by the oracle tests.
    pub v_lm_oracle: f64,
    pub v_ar_oracle: f64,
    /// Closed-form values.
    pub v_lm_analytic: f64,
    pub v_ar_analytic: f64,
    /// Monte Carlo values with standard errors, when draws were requested.
    pub v_lm_mc: Option<(f64, f64)>,
    pub v_ar_mc: Option<(f64, f64)>,
}

impl OracleMoments {
    /// Whether the Monte Carlo and closed-form variances agree within
    /// `k` Monte Carlo standard errors. `None` without draws.
    pub fn agree_within(&self, k: f64) -> Option<bool> {
        let (lm, lm_se) = self.v_lm_mc?;
        let (ar, ar_se) = self.v_ar_mc?;
        Some(
            libm::fabs(lm - self.v_lm_analytic) <= k * lm_se
                && libm::fabs(ar - self.v_ar_analytic) <= k * ar_se,
        )
    }
}

/// Oracle variances of `ΣΣG_ij e_i X_j` and `ΣΣG_ij e_i e_j` under the null
/// at the design's instrument assignment. With `mc_draws > 0` they are
/// estimated from that many error draws (the closed form is kept for
/// comparison); otherwise the closed form is used.
pub fn oracle_variances(design: &SimDesign, ws: &WeightScheme, mc_draws: usize) -> Result<OracleMoments> {
    let pm = design.population_moments();
    let v_lm_analytic = null_lm_variance(ws, &pm.r, &pm.r_delta, &pm.s_vv, &pm.s_hh, &pm.s_vh);
    let v_ar_analytic = null_ar_variance(ws, &pm.r_delta, &pm.s_vv);
    let (mut v_lm_mc, mut v_ar_mc) = (None, None);
    if mc_draws > 1 {
        let (lm, ar) = design.mc_null_sums(ws, 0, mc_draws)?;
        v_lm_mc = Some(mean_var_se(&lm));
        v_ar_mc = Some(mean_var_se(&ar));
    }
    Ok(OracleMoments {
        v_lm_oracle: v_lm_mc.map_or(v_lm_analytic, |v| v.0),
        v_ar_oracle: v_ar_mc.map_or(v_ar_analytic, |v| v.0),
        r: pm.r,
        r_delta: pm.r_delta,
        s_vv: pm.s_vv,
        s_hh: pm.s_hh,
        s_vh: pm.s_vh,
        v_lm_analytic,
        v_ar_analytic,
        v_lm_mc,
        v_ar_mc,
    })
}

/// Sample variance and its standard error (from the fourth central moment).
pub fn mean_var_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = crate::numeric::sum(xs) / n;
    let mut m2 = Neumaier::new();
    let mut m4 = Neumaier::new();
    for &x in xs {
        let d = (x - mean) * (x - mean);
        m2.add(d);
        m4.add(d * d);
    }
    let var = m2.value() / (n - 1.0);
    let mu4 = m4.value() / n;
    let se = libm::sqrt(((mu4 - var * var * (n - 3.0) / (n - 1.0)) / n).max(0.0));
    (var, se)
}

/// Oracle LM test: `√K T_LM / √V_LM`, two-sided.
pub fn lm_oracle_test(raw: &RawMoments, v_lm: f64, beta0: f64, alpha: f64) -> TestReport {
    let s = raw.sqrt_k * raw.at(beta0).t_lm;
    TestReport::from_ratio(ProcedureId::LmOracle, beta0, s, v_lm, alpha, Sided::Two)
}

/// Oracle AR test: `√K T_AR / √V_AR`, one-sided upper.
pub fn ar_oracle_test(raw: &RawMoments, v_ar: f64, beta0: f64, alpha: f64) -> TestReport {
    let s = raw.sqrt_k * raw.at(beta0).t_ar;
    TestReport::from_ratio(ProcedureId::ArOracle, beta0, s, v_ar, alpha, Sided::Upper)
}
