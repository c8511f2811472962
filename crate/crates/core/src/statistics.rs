//! Point estimates and the leave-one-out statistics `(T_AR, T_LM, T_FS)`.

use alloc::vec::Vec;

use crate::design::{self, Dataset, HatMatrices, WeightKind, WeightScheme};
use crate::{Error, Result};

/// Leave-one-out statistics at a hypothesized β₀, with the raw cross moments
/// `(1/√K) Σ_i Σ_{j≠i} G_ij a_i b_j` for `(a, b) ∈ {Y, X}²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KStatistics {
    pub beta0: f64,
    pub t_ar: f64,
    pub t_lm: f64,
    pub t_fs: f64,
    pub t_yy: f64,
    pub t_yx: f64,
    pub t_xy: f64,
    pub t_xx: f64,
}

/// Raw cross moments, from which statistics at any β₀ follow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMoments {
    pub t_yy: f64,
    pub t_yx: f64,
    pub t_xy: f64,
    pub t_xx: f64,
    /// `√K` used for normalization.
    pub sqrt_k: f64,
}

impl RawMoments {
    pub fn compute(ds: &Dataset, ws: &WeightScheme) -> Self {
        let sk = ws.sqrt_k();
        let yt = design::leave_out_predictor(ws, &ds.y);
        let xt = design::leave_out_predictor(ws, &ds.x);
        RawMoments {
            t_yy: dot(&ds.y, &yt) / sk,
            t_yx: dot(&ds.y, &xt) / sk,
            t_xy: dot(&ds.x, &yt) / sk,
            t_xx: dot(&ds.x, &xt) / sk,
            sqrt_k: sk,
        }
    }

    /// Statistics at β₀ through the polynomial identities.
    pub fn at(&self, beta0: f64) -> KStatistics {
        KStatistics {
            beta0,
            t_ar: self.t_yy - beta0 * (self.t_yx + self.t_xy) + beta0 * beta0 * self.t_xx,
            t_lm: self.t_yx - beta0 * self.t_xx,
            t_fs: self.t_xx,
            t_yy: self.t_yy,
            t_yx: self.t_yx,
            t_xy: self.t_xy,
            t_xx: self.t_xx,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let v: Vec<f64> = a.iter().zip(b).map(|(u, w)| u * w).collect();
    crate::numeric::sum(&v)
}

/// `(T_AR, T_LM, T_FS)` at β₀, each computed directly from `e = y − xβ₀`.
pub fn k_statistics(ds: &Dataset, ws: &WeightScheme, beta0: f64) -> KStatistics {
    let raw = RawMoments::compute(ds, ws);
    let e: Vec<f64> = ds.y.iter().zip(&ds.x).map(|(y, x)| y - x * beta0).collect();
    let et = design::leave_out_predictor(ws, &e);
    let xt = design::leave_out_predictor(ws, &ds.x);
    let sk = raw.sqrt_k;
    KStatistics {
        beta0,
        t_ar: dot(&e, &et) / sk,
        t_lm: dot(&e, &xt) / sk,
        t_fs: raw.t_xx,
        t_yy: raw.t_yy,
        t_yx: raw.t_yx,
        t_xy: raw.t_xy,
        t_xx: raw.t_xx,
    }
}

/// Estimator label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Jive,
    Ujive,
    Sive,
    Tsls,
}

/// Ratio estimate `numerator / denominator`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub beta_hat: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub method: EstimatorKind,
    /// Heteroskedasticity-robust standard error, where one is defined.
    pub se: Option<f64>,
}

/// `Σ_iΣ_{j≠i} G_ij Y_i X_j / Σ_iΣ_{j≠i} G_ij X_i X_j`.
pub fn jive_estimate(ds: &Dataset, ws: &WeightScheme) -> Result<Estimate> {
    let xt = design::leave_out_predictor(ws, &ds.x);
    let num = dot(&ds.y, &xt);
    let den = dot(&ds.x, &xt);
    if !(libm::fabs(den) >= 1e-12) {
        return Err(Error::DegenerateFirstStage);
    }
    let method = match ws.kind {
        WeightKind::Jive => EstimatorKind::Jive,
        WeightKind::Ujive => EstimatorKind::Ujive,
        WeightKind::Sive => EstimatorKind::Sive,
    };
    Ok(Estimate { beta_hat: num / den, numerator: num, denominator: den, method, se: None })
}

/// Pieces of a two-stage least squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TslsFit {
    pub estimate: Estimate,
    /// First-stage fitted values `P x` with `P = H_Q − H_W` (or `H_Z`).
    pub xhat: Vec<f64>,
    /// Structural residuals with covariates partialled out.
    pub resid: Vec<f64>,
}

/// Two-stage least squares with an Eicker–Huber–White standard error.
pub fn tsls_estimate(ds: &Dataset) -> Result<Estimate> {
    let hat = design::build_hat(ds)?;
    tsls_fit(ds, &hat).map(|f| f.estimate)
}

/// 2SLS from precomputed projections.
pub fn tsls_fit(ds: &Dataset, hat: &HatMatrices) -> Result<TslsFit> {
    let n = ds.n();
    let mut xhat = alloc::vec![0.0; n];
    let mut mw_y = ds.y.clone();
    let mut mw_x = ds.x.clone();
    for (b, idx) in hat.part.blocks.iter().enumerate() {
        let xb = hat.part.gather(b, &ds.x);
        let yb = hat.part.gather(b, &ds.y);
        let pq = hat.hq[b].matvec(&xb);
        match &hat.hw {
            Some(hw) => {
                let pw = hw[b].matvec(&xb);
                let pwy = hw[b].matvec(&yb);
                for (p, &i) in idx.iter().enumerate() {
                    xhat[i] = pq[p] - pw[p];
                    mw_x[i] -= pw[p];
                    mw_y[i] -= pwy[p];
                }
            }
            None => {
                for (p, &i) in idx.iter().enumerate() {
                    xhat[i] = pq[p];
                }
            }
        }
    }
    let den = dot(&xhat, &ds.x);
    let num = dot(&xhat, &ds.y);
    if !(libm::fabs(den) >= 1e-12) || xhat.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateFirstStage);
    }
    let beta = num / den;
    let resid: Vec<f64> = mw_y.iter().zip(&mw_x).map(|(y, x)| y - x * beta).collect();
    let meat: Vec<f64> = xhat.iter().zip(&resid).map(|(a, u)| a * a * u * u).collect();
    let var = crate::numeric::sum(&meat) / (den * den);
    Ok(TslsFit {
        estimate: Estimate {
            beta_hat: beta,
            numerator: num,
            denominator: den,
            method: EstimatorKind::Tsls,
            se: Some(libm::sqrt(var)),
        },
        xhat,
        resid,
    })
}
