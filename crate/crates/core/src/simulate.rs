//! Simulation designs indexed by `(E[T_FS], E[T_AR])` and a deterministic
//! Monte Carlo harness for rejection rates.
//!
//! Randomness comes from ChaCha8 keyed by the design seed, with one stream per
//! (replication, purpose) pair. A replication therefore draws the same data no
//! matter which worker runs it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::alt_variance::{self, ArQuartics, OracleMoments, ProcedureId};
use crate::design::{self, Dataset, Encoding, HatMatrices, WeightKind, WeightScheme};
use crate::inference::{self, TestReport, TestStatus};
use crate::l3o_variance::{self, L3oOptions, SingularPolicy};
use crate::linalg::Mat;
use crate::statistics::RawMoments;
use crate::{Error, Result};

/// Data generating process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Judges with a binary treatment from a latent index, five judge groups.
    BinaryJudge,
    /// Judges with a continuous treatment and jointly normal errors.
    ContinuousX,
    /// States crossed with a binary instrument, state fixed effects as covariates.
    BinaryCovariates,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::BinaryJudge => "BINARY_JUDGE",
            Family::ContinuousX => "CONTINUOUS_X",
            Family::BinaryCovariates => "BINARY_COVARIATES",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BINARY_JUDGE" | "JUDGE" => Some(Family::BinaryJudge),
            "CONTINUOUS_X" | "CONTINUOUS" => Some(Family::ContinuousX),
            "BINARY_COVARIATES" | "COVARIATES" => Some(Family::BinaryCovariates),
            _ => None,
        }
    }
}

/// Family-specific error parameters. `sigma_ee` is a standard deviation in the
/// binary families and a variance in the continuous one, matching how each
/// family's defaults are stated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorParams {
    BinaryJudge { sigma_ev: f64, sigma_ee: f64 },
    ContinuousX { sigma_ee: f64, sigma_vv: f64, sigma_exi: f64, sigma_ev: f64, sigma_xixi: Option<f64> },
    BinaryCovariates { p: f64, sigma_ee: f64, sigma_ev: f64, g: f64 },
}

impl ErrorParams {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::BinaryJudge => ErrorParams::BinaryJudge { sigma_ev: 0.3, sigma_ee: 0.1 },
            Family::ContinuousX => ErrorParams::ContinuousX {
                sigma_ee: 1.0,
                sigma_vv: 1.0,
                sigma_exi: 0.0,
                sigma_ev: 0.8,
                sigma_xixi: None,
            },
            Family::BinaryCovariates => ErrorParams::BinaryCovariates { p: 7.0 / 8.0, sigma_ee: 0.5, sigma_ev: 0.1, g: 0.1 },
        }
    }

    fn family(&self) -> Family {
        match self {
            ErrorParams::BinaryJudge { .. } => Family::BinaryJudge,
            ErrorParams::ContinuousX { .. } => Family::ContinuousX,
            ErrorParams::BinaryCovariates { .. } => Family::BinaryCovariates,
        }
    }
}

/// Parameters of one instrument cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    /// First-stage coefficient on the regressor's scale.
    pub pi: f64,
    /// `π_Δ` for the binary judge family, `σ_ξv` otherwise.
    pub het: f64,
    /// Covariate shift (binary covariates family only).
    pub gamma: f64,
    /// Treatment probability where defined.
    pub lambda: f64,
}

/// A fully specified simulation design.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub family: Family,
    pub k: usize,
    pub c: usize,
    pub beta: f64,
    pub e_tfs: f64,
    pub e_tar: f64,
    pub s: f64,
    pub h: f64,
    pub params: ErrorParams,
    pub seed: u64,
    /// Parameters per instrument cell; cell 0 is the base.
    pub cells: Vec<CellParams>,
    /// Cell of each unit.
    pub cell_of: Vec<usize>,
    /// State of each unit (binary covariates family only).
    pub state_of: Option<Vec<usize>>,
    /// Cholesky factors of the error covariance per cell (continuous family).
    chol: Vec<Option<Mat>>,
}

fn invalid(msg: String) -> Error {
    Error::InvalidDesign(msg)
}

/// Build a design from its targets. `k` is the number of instruments.
#[allow(clippy::too_many_arguments)]
pub fn make_design(
    family: Family,
    k: usize,
    c: usize,
    e_tfs: f64,
    e_tar: f64,
    beta: f64,
    params: ErrorParams,
    seed: u64,
) -> Result<SimDesign> {
    if params.family() != family {
        return Err(invalid(format!("error parameters do not belong to {}", family.name())));
    }
    if c < 2 {
        return Err(invalid(format!("need at least two cases per cell, got c={c}")));
    }
    if k == 0 || k % 4 != 0 {
        return Err(invalid(format!("K must be a positive multiple of 4, got {k}")));
    }
    if !(e_tfs >= 0.0 && e_tfs.is_finite() && e_tar >= 0.0 && e_tar.is_finite() && beta.is_finite()) {
        return Err(invalid(String::from("targets must be finite and non-negative")));
    }
    let sk = libm::sqrt(k as f64);
    let c1 = (c - 1) as f64;
    let mut cells = Vec::with_capacity(k + 1);
    let (s, h);
    match params {
        ErrorParams::BinaryJudge { sigma_ev, sigma_ee } => {
            if !(sigma_ee >= 0.0) || !sigma_ev.is_finite() {
                return Err(invalid(String::from("sigma_ee must be non-negative")));
            }
            // Σπ_k² = (5/8)K s² and Σπ_Δk² = K h².
            s = libm::sqrt(8.0 * e_tfs / (5.0 * sk * c1));
            h = libm::sqrt(e_tar / (sk * c1));
            if !(s < 1.0) {
                return Err(invalid(format!(
                    "first-stage target {e_tfs} needs s = {s:.4}; treatment probabilities (1 ± s)/2 leave (0,1)"
                )));
            }
            let pis = [-s, -0.5 * s, 0.5 * s, s];
            let hets = [h, -h, -h, h];
            cells.push(CellParams { pi: 0.0, het: 0.0, gamma: 0.0, lambda: 0.5 });
            for j in 0..k {
                let g = j * 4 / k;
                cells.push(CellParams { pi: pis[g], het: hets[g], gamma: 0.0, lambda: 0.5 * (1.0 + pis[g]) });
            }
        }
        ErrorParams::ContinuousX { sigma_vv, .. } => {
            s = libm::sqrt(e_tfs / (sk * c1));
            h = libm::sqrt(e_tar / (sk * c1));
            if !(h * h < 1.0) {
                return Err(invalid(format!("heterogeneity target gives h = {h:.4}; need h² < 1")));
            }
            if !(sigma_vv > 0.0) {
                return Err(invalid(String::from("sigma_vv must be positive")));
            }
            cells.push(CellParams { pi: 0.0, het: 0.0, gamma: 0.0, lambda: f64::NAN });
            for j in 0..k {
                let (pi, het) = quarter_pattern(j, k, s, h);
                cells.push(CellParams { pi, het, gamma: 0.0, lambda: f64::NAN });
            }
        }
        ErrorParams::BinaryCovariates { p, sigma_ee, g, .. } => {
            s = libm::sqrt(e_tfs / (sk * c1));
            h = libm::sqrt(e_tar / (sk * c1));
            if !(0.0..=1.0).contains(&p) || !(sigma_ee >= 0.0) {
                return Err(invalid(String::from("need 0 ≤ p ≤ 1 and sigma_ee ≥ 0")));
            }
            if !(s + libm::fabs(g) < 1.0) {
                return Err(invalid(format!("s + |g| = {:.4} must be below 1", s + libm::fabs(g))));
            }
            // Cell 0 is the pooled base group; cells 1..=K are (state, B = 1).
            cells.push(CellParams { pi: 0.0, het: 0.0, gamma: 0.0, lambda: f64::NAN });
            for j in 0..k {
                let (pi, het) = quarter_pattern(j, k, s, h);
                let gamma = if pi > 0.0 { g } else if pi < 0.0 { -g } else { 0.0 };
                cells.push(CellParams { pi, het, gamma, lambda: 0.5 * (1.0 + pi + gamma) });
            }
        }
    }
    let (cell_of, state_of) = match family {
        Family::BinaryCovariates => {
            let mut cell_of = Vec::with_capacity(2 * k * c);
            let mut state_of = Vec::with_capacity(2 * k * c);
            for t in 0..k {
                for b in 0..2 {
                    for _ in 0..c {
                        cell_of.push(if b == 1 { t + 1 } else { 0 });
                        state_of.push(t);
                    }
                }
            }
            (cell_of, Some(state_of))
        }
        _ => ((0..(k + 1) * c).map(|i| i / c).collect(), None),
    };
    let mut chol = vec![None; cells.len()];
    if let ErrorParams::ContinuousX { sigma_ee, sigma_vv, sigma_exi, sigma_ev, sigma_xixi } = params {
        let xixi = if h == 0.0 { 0.0 } else { sigma_xixi.unwrap_or(1.0 + h) };
        let exi = if h == 0.0 { 0.0 } else { sigma_exi };
        let mut cache: BTreeMap<u64, Mat> = BTreeMap::new();
        for (ci, cell) in cells.iter().enumerate() {
            let key = cell.het.to_bits();
            if let Some(m) = cache.get(&key) {
                chol[ci] = Some(m.clone());
                continue;
            }
            let cov = Mat::from_vec(
                3,
                3,
                vec![sigma_ee, exi, sigma_ev, exi, xixi, cell.het, sigma_ev, cell.het, sigma_vv],
            );
            let l = psd_factor(&cov).ok_or_else(|| invalid(format!("error covariance not PSD for σ_ξv = {}", cell.het)))?;
            cache.insert(key, l.clone());
            chol[ci] = Some(l);
        }
    }
    Ok(SimDesign { family, k, c, beta, e_tfs, e_tar, s, h, params, seed, cells, cell_of, state_of, chol })
}

/// `(π, σ)` for instrument `j` of `k`: half the instruments at `−s`, half at
/// `s`, and within each half the heterogeneity alternates `h`, `−h`.
fn quarter_pattern(j: usize, k: usize, s: f64, h: f64) -> (f64, f64) {
    let q = j * 4 / k;
    let pi = if q < 2 { -s } else { s };
    let het = if q % 2 == 0 { h } else { -h };
    (pi, het)
}

/// Lower-triangular `L` with `L Lᵀ = A` for a PSD 3×3 matrix (zero pivots allowed).
fn psd_factor(a: &Mat) -> Option<Mat> {
    let n = a.rows();
    let scale = a.max_abs().max(1.0);
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for p in 0..j {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d < -1e-12 * scale {
            return None;
        }
        let d = if d < 1e-14 * scale { 0.0 } else { libm::sqrt(d) };
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for p in 0..j {
                v -= l[(i, p)] * l[(j, p)];
            }
            if d == 0.0 {
                if libm::fabs(v) > 1e-10 * scale {
                    return None;
                }
                l[(i, j)] = 0.0;
            } else {
                l[(i, j)] = v / d;
            }
        }
    }
    Some(l)
}

/// Random stream for `(replication, purpose)`.
pub fn stream_rng(seed: u64, replication: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication.wrapping_mul(16).wrapping_add(purpose));
    rng
}

const STREAM_DATA: u64 = 0;
const STREAM_ORACLE: u64 = 1;

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-unit population moments at a hypothesized β₀.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    pub r: Vec<f64>,
    pub r_delta: Vec<f64>,
    pub s_vv: Vec<f64>,
    pub s_hh: Vec<f64>,
    pub s_vh: Vec<f64>,
}

impl SimDesign {
    pub fn n(&self) -> usize {
        self.cell_of.len()
    }

    /// Instrument and covariate encodings for this design.
    pub fn encodings(&self) -> (Encoding, Option<Encoding>) {
        match &self.state_of {
            Some(states) => {
                // (state, B) cells span the same space as the pooled base group
                // plus (state, B = 1) indicators once state effects are included,
                // and they nest within states.
                let z: Vec<i64> = self
                    .cell_of
                    .iter()
                    .zip(states)
                    .map(|(&cell, &t)| (2 * t + usize::from(cell != 0)) as i64)
                    .collect();
                let w: Vec<i64> = states.iter().map(|&t| t as i64).collect();
                (Encoding::categorical(&z), Some(Encoding::categorical(&w)))
            }
            None => {
                let z: Vec<i64> = self.cell_of.iter().map(|&c| c as i64).collect();
                (Encoding::categorical(&z), None)
            }
        }
    }

    /// Weighting used for this family: UJIVE with covariates, JIVE otherwise.
    pub fn weight_kind(&self) -> WeightKind {
        if self.state_of.is_some() {
            WeightKind::Ujive
        } else {
            WeightKind::Jive
        }
    }

    /// `(1/√K) Σ_k (c−1) π_k²` over instrument cells.
    pub fn first_stage_moment(&self) -> f64 {
        let c1 = (self.c - 1) as f64;
        self.cells.iter().map(|p| c1 * p.pi * p.pi).sum::<f64>() / libm::sqrt(self.k as f64)
    }

    /// `(1/√K) Σ_k (c−1) π_Δk²` with `π_Δ = π_Y − βπ`.
    pub fn heterogeneity_moment(&self) -> f64 {
        let c1 = (self.c - 1) as f64;
        self.cells.iter().map(|p| c1 * p.het * p.het).sum::<f64>() / libm::sqrt(self.k as f64)
    }

    /// Draw `(y, x)` for a replication.
    pub fn draw_outcomes(&self, replication: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(self.seed, replication, STREAM_DATA);
        self.draw_with(&mut rng)
    }

    fn draw_with(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        match self.params {
            ErrorParams::BinaryJudge { sigma_ev, sigma_ee } => {
                for &ci in &self.cell_of {
                    let cell = &self.cells[ci];
                    let v: f64 = rng.random();
                    let z: f64 = rng.sample(StandardNormal);
                    let xb = if cell.lambda >= v { 1.0 } else { -1.0 };
                    let zeta = sigma_ev * (v - 0.5) + sigma_ee * z;
                    x.push(xb);
                    y.push(self.beta * cell.pi + cell.het + zeta);
                }
            }
            ErrorParams::ContinuousX { .. } => {
                for &ci in &self.cell_of {
                    let cell = &self.cells[ci];
                    let l = self.chol[ci].as_ref().expect("factor built with the design");
                    let u: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    let eps = l[(0, 0)] * u[0];
                    let xi = l[(1, 0)] * u[0] + l[(1, 1)] * u[1];
                    let v = l[(2, 0)] * u[0] + l[(2, 1)] * u[1] + l[(2, 2)] * u[2];
                    let xv = cell.pi + v;
                    x.push(xv);
                    y.push(xv * (self.beta + xi) + eps);
                }
            }
            ErrorParams::BinaryCovariates { p, sigma_ee, sigma_ev, .. } => {
                let states = self.state_of.as_ref().expect("covariate design has states");
                for (i, &ci) in self.cell_of.iter().enumerate() {
                    let cell = &self.cells[ci];
                    let gamma = self.cells[states[i] + 1].gamma;
                    let v: f64 = 2.0 * rng.random::<f64>() - 1.0;
                    let z: f64 = rng.sample(StandardNormal);
                    let u: f64 = rng.random();
                    let sg = sign(v);
                    let eps = sg * sigma_ev + sigma_ee * z;
                    let xi_sign = if u < p { sg } else { -sg };
                    let xi = xi_sign * cell.het;
                    let xv = if cell.pi + gamma - v >= 0.0 { 1.0 } else { 0.0 };
                    x.push(xv);
                    y.push(xv * (self.beta + xi) + gamma + eps);
                }
            }
        }
        (y, x)
    }

    /// Dataset for a replication.
    pub fn draw(&self, replication: u64) -> Dataset {
        let (y, x) = self.draw_outcomes(replication);
        let (z, w) = self.encodings();
        Dataset::new(y, x, z, w).expect("simulated designs are well formed")
    }

    /// Per-unit moments of `e(β₀) = Y − Xβ₀` and `X`.
    pub fn population_moments_at(&self, beta0: f64) -> PopulationMoments {
        let n = self.n();
        let mut pm = PopulationMoments {
            r: vec![0.0; n],
            r_delta: vec![0.0; n],
            s_vv: vec![0.0; n],
            s_hh: vec![0.0; n],
            s_vh: vec![0.0; n],
        };
        for (i, &ci) in self.cell_of.iter().enumerate() {
            let cell = &self.cells[ci];
            let (r, rd, vv, hh, vh) = match self.params {
                ErrorParams::BinaryJudge { sigma_ev, sigma_ee } => {
                    let lam = cell.lambda;
                    let hh = 1.0 - cell.pi * cell.pi;
                    let zz = sigma_ev * sigma_ev / 12.0 + sigma_ee * sigma_ee;
                    let zh = -sigma_ev * lam * (1.0 - lam);
                    let rd = self.beta * cell.pi + cell.het - beta0 * cell.pi;
                    (cell.pi, rd, zz - 2.0 * beta0 * zh + beta0 * beta0 * hh, hh, zh - beta0 * hh)
                }
                ErrorParams::ContinuousX { sigma_ee, sigma_vv, sigma_exi, sigma_ev, sigma_xixi } => {
                    let (xixi, exi) = if self.h == 0.0 { (0.0, 0.0) } else { (sigma_xixi.unwrap_or(1.0 + self.h), sigma_exi) };
                    let pi = cell.pi;
                    let sxv = cell.het;
                    let b = self.beta - beta0;
                    let rd = pi * b + sxv;
                    let vv = pi * pi * xixi + 2.0 * pi * b * sxv + 2.0 * pi * exi + sigma_ee + sxv * sxv
                        + sigma_vv * xixi
                        + b * b * sigma_vv
                        + 2.0 * b * sigma_ev;
                    let vh = pi * sxv + b * sigma_vv + sigma_ev;
                    (pi, rd, vv, sigma_vv, vh)
                }
                ErrorParams::BinaryCovariates { p, sigma_ee, sigma_ev, .. } => {
                    let states = self.state_of.as_ref().expect("covariate design has states");
                    let gamma = self.cells[states[i] + 1].gamma;
                    let a = cell.pi + gamma;
                    let q = 0.5 * (1.0 + a);
                    let sx = cell.het;
                    let kappa = 2.0 * p - 1.0;
                    let b = self.beta - beta0;
                    let e_xxi = sx * kappa * (libm::fabs(a) - 1.0) / 2.0;
                    let e_xeps = sigma_ev * (libm::fabs(a) - 1.0) / 2.0;
                    let e_xxieps = q * sx * kappa * sigma_ev;
                    let rd = q * b + e_xxi + gamma;
                    let e_x_bxi = q * b + e_xxi;
                    let e_x_bxi2 = q * b * b + 2.0 * b * e_xxi + sx * sx * q;
                    let e2 = e_x_bxi2 + gamma * gamma + sigma_ev * sigma_ev + sigma_ee * sigma_ee
                        + 2.0 * gamma * e_x_bxi
                        + 2.0 * (b * e_xeps + e_xxieps);
                    let exe = q * b + e_xxi + gamma * q + e_xeps;
                    (q, rd, e2 - rd * rd, q * (1.0 - q), exe - q * rd)
                }
            };
            pm.r[i] = r;
            pm.r_delta[i] = rd;
            pm.s_vv[i] = vv;
            pm.s_hh[i] = hh;
            pm.s_vh[i] = vh;
        }
        pm
    }

    /// Population moments at the true β.
    pub fn population_moments(&self) -> PopulationMoments {
        self.population_moments_at(self.beta)
    }

    /// `ΣΣG_ij e_i X_j` and `ΣΣG_ij e_i e_j` at the true β for oracle draws
    /// `start..end` (independent of the replication streams).
    pub fn mc_null_sums(&self, ws: &WeightScheme, start: usize, end: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lm = Vec::with_capacity(end.saturating_sub(start));
        let mut ar = Vec::with_capacity(end.saturating_sub(start));
        for d in start..end {
            let mut rng = stream_rng(self.seed, d as u64, STREAM_ORACLE);
            let (y, x) = self.draw_with(&mut rng);
            let e: Vec<f64> = y.iter().zip(&x).map(|(y, x)| y - x * self.beta).collect();
            lm.push(design::loo_bilinear(ws, &e, &x));
            ar.push(design::loo_bilinear(ws, &e, &e));
        }
        Ok((lm, ar))
    }
}

/// Treatment effect profile `f(v)` of the binary judge model on the latent
/// scale, for treatment probabilities `1/2 ± a`, `1/2 ± a/2`, structural mean
/// effect `b` and heterogeneity `h`. Integrates to `b` over `(0, 1)`.
pub fn judge_effect_profile(v: f64, a: f64, b: f64, h: f64) -> f64 {
    if v <= 0.5 - a {
        -a * b + h
    } else if v <= 0.5 - 0.5 * a {
        (1.0 - a) * (-0.5 * a * b - h) / a - (1.0 - 2.0 * a) * (-a * b + h) / a
    } else if v <= 0.5 {
        (1.0 - a) * (0.5 * a * b + h) / a
    } else if v <= 0.5 + 0.5 * a {
        (1.0 + a) * (0.5 * a * b - h) / a
    } else if v <= 0.5 + a {
        (1.0 + 2.0 * a) * (a * b + h) / a - (1.0 + a) * (0.5 * a * b - h) / a
    } else {
        (b - (0.5 + a) * (a * b + h)) / (0.5 - a)
    }
}

/// Decision of one procedure in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Reject,
    Accept,
    /// Variance not positive or statistic undefined.
    Undefined,
    /// The procedure raised an error.
    Failed,
}

impl Decision {
    fn from_report(r: &TestReport) -> Self {
        match r.reject() {
            Some(true) => Decision::Reject,
            Some(false) => Decision::Accept,
            None => Decision::Undefined,
        }
    }

    fn from_result(r: Result<TestReport>) -> Self {
        match r {
            Ok(rep) => Decision::from_report(&rep),
            Err(_) => Decision::Failed,
        }
    }
}

/// Tally for one procedure.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProcedureTally {
    pub rejection_count: u64,
    pub valid_count: u64,
    pub undefined_count: u64,
    pub failed_count: u64,
}

impl ProcedureTally {
    pub fn add(&mut self, d: Decision) {
        match d {
            Decision::Reject => {
                self.rejection_count += 1;
                self.valid_count += 1;
            }
            Decision::Accept => self.valid_count += 1,
            Decision::Undefined => self.undefined_count += 1,
            Decision::Failed => self.failed_count += 1,
        }
    }

    pub fn merge(&mut self, o: &ProcedureTally) {
        self.rejection_count += o.rejection_count;
        self.valid_count += o.valid_count;
        self.undefined_count += o.undefined_count;
        self.failed_count += o.failed_count;
    }

    /// `rejection_count / valid_count`; NaN when nothing was valid.
    pub fn rejection_rate(&self) -> f64 {
        if self.valid_count == 0 {
            f64::NAN
        } else {
            self.rejection_count as f64 / self.valid_count as f64
        }
    }
}

/// What one replication produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub replication: u64,
    pub decisions: Vec<(ProcedureId, Decision)>,
    /// `√K T_LM(β₀)/√V_LM` with the oracle variance.
    pub lm_oracle_z: f64,
    /// L3O variance `V̂_LM(β₀)`.
    pub l3o_variance: f64,
    /// MS cross-fit variance at β₀.
    pub ms_variance: f64,
    pub jive_beta: f64,
    pub xtilde_beta: f64,
}

/// Everything that stays fixed across replications of one design.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub design: SimDesign,
    pub hat: HatMatrices,
    pub ws: WeightScheme,
    pub oracle: OracleMoments,
    pub procedures: Vec<ProcedureId>,
    pub beta0: f64,
    pub alpha: f64,
    pub l3o: L3oOptions,
}

impl SimContext {
    /// Build projections, weights and oracle variances once. `beta0` defaults
    /// to the design's β (size); the oracle variances are taken at `beta0`.
    pub fn new(design: SimDesign, procedures: &[ProcedureId], beta0: Option<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0,1), got {alpha}")));
        }
        let ds = design.draw(0);
        let hat = design::build_hat(&ds)?;
        let ws = design::weights_from_hat(&ds, &hat, design.weight_kind())?;
        let beta0 = beta0.unwrap_or(design.beta);
        let pm = design.population_moments_at(beta0);
        let v_lm = alt_variance::null_lm_variance(&ws, &pm.r, &pm.r_delta, &pm.s_vv, &pm.s_hh, &pm.s_vh);
        let v_ar = alt_variance::null_ar_variance(&ws, &pm.r_delta, &pm.s_vv);
        let oracle = OracleMoments {
            r: pm.r,
            r_delta: pm.r_delta,
            s_vv: pm.s_vv,
            s_hh: pm.s_hh,
            s_vh: pm.s_vh,
            v_lm_oracle: v_lm,
            v_ar_oracle: v_ar,
            v_lm_analytic: v_lm,
            v_ar_analytic: v_ar,
            v_lm_mc: None,
            v_ar_mc: None,
        };
        let policy = if l3o_variance::feasibility_for(&ws).invertible_all_triples {
            SingularPolicy::Strict
        } else {
            SingularPolicy::Conservative
        };
        Ok(SimContext {
            design,
            hat,
            ws,
            oracle,
            procedures: procedures.to_vec(),
            beta0,
            alpha,
            l3o: L3oOptions { policy, ..L3oOptions::default() },
        })
    }

    /// Run every requested procedure on one replication.
    pub fn evaluate(&self, replication: u64) -> ReplicationOutcome {
        let (y, x) = self.design.draw_outcomes(replication);
        let (z, w) = self.design.encodings();
        let ds = Dataset { y, x, z, w };
        let (b0, alpha, ws) = (self.beta0, self.alpha, &self.ws);
        let raw = RawMoments::compute(&ds, ws);
        let lm_orc = alt_variance::lm_oracle_test(&raw, self.oracle.v_lm_oracle, b0, alpha);
        let wants_ar = self.procedures.iter().any(|p| matches!(p, ProcedureId::Ms | ProcedureId::Cms));
        let arq = if wants_ar { Some(ArQuartics::compute(&ds, ws)) } else { None };
        let l3o = l3o_variance::l3o_quadratic_with(&ds, ws, self.l3o);
        let mut out = ReplicationOutcome {
            replication,
            decisions: Vec::with_capacity(self.procedures.len()),
            lm_oracle_z: f64::NAN,
            l3o_variance: f64::NAN,
            ms_variance: f64::NAN,
            jive_beta: f64::NAN,
            xtilde_beta: f64::NAN,
        };
        if lm_orc.p_value.is_some() {
            let s = raw.sqrt_k * raw.at(b0).t_lm;
            out.lm_oracle_z = s / libm::sqrt(self.oracle.v_lm_oracle);
        }
        if let Ok((q, _)) = &l3o {
            out.l3o_variance = q.value(b0);
        }
        if let Some(a) = &arq {
            out.ms_variance = a.ms.eval(b0);
        }
        if let Ok(e) = crate::statistics::jive_estimate(&ds, ws) {
            out.jive_beta = e.beta_hat;
        }
        if let Ok(b) = alt_variance::constructed_t_estimate(&ds, ws) {
            out.xtilde_beta = b;
        }
        for &p in &self.procedures {
            let d = match p {
                ProcedureId::Tsls => Decision::from_result(alt_variance::tsls_test(&ds, &self.hat, b0, alpha)),
                ProcedureId::Ek => Decision::from_result(alt_variance::ek_plugin_test(&ds, ws, b0, alpha)),
                ProcedureId::Ms => Decision::from_report(&arq.as_ref().expect("computed").ms_test(b0, alpha)),
                ProcedureId::Cms => Decision::from_report(&arq.as_ref().expect("computed").cms_test(b0, alpha)),
                ProcedureId::Mo => Decision::from_result(inference::lm_test(&ds, ws, b0, alpha, inference::VarianceSource::Mo)),
                ProcedureId::XtildeT => Decision::from_result(alt_variance::constructed_t_test(&ds, ws, b0, alpha)),
                ProcedureId::XtildeAr => Decision::from_result(alt_variance::constructed_ar_test(&ds, ws, b0, alpha)),
                ProcedureId::L3o => match &l3o {
                    Ok((q, o)) => {
                        let mut r = inference::lm_report_from(&raw, q, b0, alpha);
                        if o.conservative_applied() && r.status == TestStatus::Ok {
                            r.status = TestStatus::Conservative;
                        }
                        Decision::from_report(&r)
                    }
                    Err(_) => Decision::Failed,
                },
                ProcedureId::LmOracle => Decision::from_report(&lm_orc),
                ProcedureId::ArOracle => {
                    Decision::from_report(&alt_variance::ar_oracle_test(&raw, self.oracle.v_ar_oracle, b0, alpha))
                }
            };
            out.decisions.push((p, d));
        }
        out
    }
}

/// Monte Carlo tallies for one design.
#[derive(Debug, Clone, PartialEq)]
pub struct McResult {
    pub design: SimDesign,
    pub beta0: f64,
    pub alpha: f64,
    pub n_reps: u64,
    pub tallies: Vec<(ProcedureId, ProcedureTally)>,
    /// Replications with a non-positive MS variance (NaN when MS was not run).
    pub ms_nonpositive: u64,
    /// Oracle-normalized LM statistics in replication order.
    pub lm_oracle_z: Vec<f64>,
    /// L3O variances in replication order.
    pub l3o_variance: Vec<f64>,
    /// Replications where the constructed-t and jackknife estimates differ by
    /// more than `1e−10` relative.
    pub xtilde_mismatch: u64,
    /// Filled in by callers that time the run.
    pub wall_time_secs: Option<f64>,
}

impl McResult {
    pub fn empty(ctx: &SimContext) -> Self {
        McResult {
            design: ctx.design.clone(),
            beta0: ctx.beta0,
            alpha: ctx.alpha,
            n_reps: 0,
            tallies: ctx.procedures.iter().map(|&p| (p, ProcedureTally::default())).collect(),
            ms_nonpositive: 0,
            lm_oracle_z: Vec::new(),
            l3o_variance: Vec::new(),
            xtilde_mismatch: 0,
            wall_time_secs: None,
        }
    }

    /// Fold in replication outcomes; call in replication order for
    /// reproducible sample vectors.
    pub fn push(&mut self, o: &ReplicationOutcome) {
        self.n_reps += 1;
        for (p, d) in &o.decisions {
            if let Some((_, t)) = self.tallies.iter_mut().find(|(q, _)| q == p) {
                t.add(*d);
            }
        }
        if !(o.ms_variance > 0.0) && !o.ms_variance.is_nan() {
            self.ms_nonpositive += 1;
        }
        self.lm_oracle_z.push(o.lm_oracle_z);
        self.l3o_variance.push(o.l3o_variance);
        let scale = libm::fabs(o.jive_beta).max(1e-300);
        if !(libm::fabs(o.jive_beta - o.xtilde_beta) <= 1e-10 * scale) && !(o.jive_beta.is_nan() && o.xtilde_beta.is_nan()) {
            self.xtilde_mismatch += 1;
        }
    }

    pub fn tally(&self, p: ProcedureId) -> Option<&ProcedureTally> {
        self.tallies.iter().find(|(q, _)| *q == p).map(|(_, t)| t)
    }

    pub fn rejection_rate(&self, p: ProcedureId) -> f64 {
        self.tally(p).map_or(f64::NAN, |t| t.rejection_rate())
    }

    /// Share of replications with `Φ̂_MS ≤ 0`.
    pub fn ms_nonpositive_fraction(&self) -> f64 {
        self.ms_nonpositive as f64 / self.n_reps as f64
    }
}

/// Sequential Monte Carlo over replications `0..n_reps`.
pub fn run_monte_carlo(
    design: &SimDesign,
    procedures: &[ProcedureId],
    n_reps: u64,
    alpha: f64,
    beta0: Option<f64>,
) -> Result<McResult> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument(String::from("n_reps must be at least 1")));
    }
    let ctx = SimContext::new(design.clone(), procedures, beta0, alpha)?;
    let mut res = McResult::empty(&ctx);
    for r in 0..n_reps {
        res.push(&ctx.evaluate(r));
    }
    Ok(res)
}
