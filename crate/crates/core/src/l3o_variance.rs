//! Leave-three-out variance estimator for `Σ_i Σ_{j≠i} G_ij e_i(β₀) X_j`.
//!
//! `V̂ = A₁ + A₂ + A₃ + A₄ + A₅` where the residual factors
//! `e_i − Q_i'τ̂_{Δ,−ijk}` and `X_i − Q_i'τ̂_{−ijk}` are leave-set-out
//! residuals. For a set `S` containing `i` they equal `[(M_SS)⁻¹ (M v)_S]_i`,
//! so the fast path needs only `Me`, `MX` and 3×3 cofactors.
//!
//! Every term carries exactly two factors that are affine in β₀, so one
//! kernel over [`Lin`] inputs gives both the scalar value and the
//! coefficients `(B₀, B₁, B₂)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::design::{self, Dataset, WeightScheme};
use crate::linalg::{self, Mat};
use crate::numeric::{Lin, Neumaier, Quad, QuadAcc};
use crate::{Error, Result};

/// Relative threshold below which a leave-out determinant counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-10;

/// Which variance estimator a quadratic belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceId {
    L3o,
    Mo,
    Cms,
    Ms,
}

/// `value(β₀) = b0 + b1·β₀ + b2·β₀²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticVariance {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub estimator: VarianceId,
}

impl QuadraticVariance {
    pub fn from_quad(q: Quad, estimator: VarianceId) -> Self {
        QuadraticVariance { b0: q.q0, b1: q.q1, b2: q.q2, estimator }
    }

    pub fn value(&self, beta0: f64) -> f64 {
        self.b0 + beta0 * (self.b1 + beta0 * self.b2)
    }
}

/// Handling of singular leave-out sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularPolicy {
    /// Fail with [`Error::TripleSingular`].
    #[default]
    Strict,
    /// Drop the offending terms and flag the result.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L3oOptions {
    pub policy: SingularPolicy,
    /// Use the closed-form path for blocks where `G` and `M` have constant
    /// diagonal and constant off-diagonal entries.
    pub exchangeable: bool,
}

impl Default for L3oOptions {
    fn default() -> Self {
        L3oOptions { policy: SingularPolicy::Strict, exchangeable: true }
    }
}

/// Kernel output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L3oOutput {
    /// `V̂` as a polynomial in β₀ (constant when evaluated at a fixed β₀).
    pub value: Quad,
    /// The five terms, signs and the factor 2 on `A₂` included.
    pub terms: [Quad; 5],
    /// Loop terms skipped under [`SingularPolicy::Conservative`].
    pub dropped: usize,
}

impl L3oOutput {
    pub fn conservative_applied(&self) -> bool {
        self.dropped > 0
    }
}

/// Naive reference: every `τ̂_{−ijk}` is obtained by refitting OLS without
/// rows `{i, j, k}`, and `M̌_{ik,−ij}` by its projection form.
pub fn l3o_variance_naive(ds: &Dataset, ws: &WeightScheme, beta0: f64) -> Result<f64> {
    let n = ds.n();
    let q = ds.q_matrix();
    let p = q.cols();
    let e: Vec<f64> = ds.y.iter().zip(&ds.x).map(|(y, x)| y - x * beta0).collect();
    let x = &ds.x;
    let s_full = q.gram();
    let qx = q.tr_matvec(x);
    let qe = q.tr_matvec(&e);
    let g = |i: usize, j: usize| ws.g_entry(i, j);

    // Residuals of x and e at row `at` after dropping `set` and refitting.
    let refit = |set: &[usize], at: usize| -> Result<(f64, f64)> {
        let mut s = s_full.clone();
        let mut rx = qx.clone();
        let mut re = qe.clone();
        for &l in set {
            let ql = q.row(l);
            for a in 0..p {
                rx[a] -= ql[a] * x[l];
                re[a] -= ql[a] * e[l];
                for b in 0..p {
                    s[(a, b)] -= ql[a] * ql[b];
                }
            }
        }
        let fail = || Error::TripleSingular { i: set[0], j: set[1], k: *set.last().unwrap() };
        let l = linalg::cholesky(&s).ok_or_else(fail)?;
        let tx = linalg::cholesky_solve(&l, &rx);
        let te = linalg::cholesky_solve(&l, &re);
        let qa = q.row(at);
        Ok((x[at] - linalg::dot(qa, &tx), e[at] - linalg::dot(qa, &te)))
    };

    let mut a = [Neumaier::new(), Neumaier::new(), Neumaier::new(), Neumaier::new(), Neumaier::new()];
    for i in 0..n {
        for j in 0..n {
            if j == i {
                continue;
            }
            let (gij, gji) = (g(i, j), g(j, i));
            for k in 0..n {
                if k == i {
                    continue;
                }
                let (gik, gki) = (g(i, k), g(k, i));
                let w1 = gij * x[j] * gik * x[k];
                let w2 = gij * x[j] * gki;
                let w3 = gji * gki;
                if w1 == 0.0 && w2 == 0.0 && w3 == 0.0 {
                    continue;
                }
                let set: Vec<usize> = if k == j { vec![i, j] } else { vec![i, j, k] };
                let (rx, re) = refit(&set, i)?;
                a[0].add(w1 * e[i] * re);
                a[1].add(2.0 * w2 * e[k] * e[i] * rx);
                a[2].add(w3 * e[j] * e[k] * x[i] * rx);
            }
            let c4 = gji * gji;
            let c5 = gij * gji;
            if c4 == 0.0 && c5 == 0.0 {
                continue;
            }
            // (Σ_{l≠i,j} Q_l Q_l')⁻¹ for M̌_{ik,−ij} = −Q_i'(·)⁻¹Q_k.
            let mut s2 = s_full.clone();
            for &l in &[i, j] {
                let ql = q.row(l);
                for u in 0..p {
                    for v in 0..p {
                        s2[(u, v)] -= ql[u] * ql[v];
                    }
                }
            }
            let l2 = linalg::cholesky(&s2).ok_or(Error::TripleSingular { i, j, k: j })?;
            let hi = linalg::cholesky_solve(&l2, q.row(i));
            for k in 0..n {
                if k == j {
                    continue;
                }
                let mcheck = if k == i { 1.0 } else { -linalg::dot(&hi, q.row(k)) };
                let set: Vec<usize> = if k == i { vec![j, i] } else { vec![j, i, k] };
                let (rx, re) = refit(&set, j)?;
                a[3].add(-c4 * x[i] * mcheck * x[k] * e[j] * re);
                a[4].add(-c5 * e[i] * mcheck * x[k] * e[j] * rx);
            }
        }
    }
    let mut total = Neumaier::new();
    for t in &a {
        total.add(t.value());
    }
    Ok(total.value())
}

/// Fast identity-based evaluation at β₀ (strict singularity policy).
pub fn l3o_variance_fast(ds: &Dataset, ws: &WeightScheme, beta0: f64) -> Result<f64> {
    let e: Vec<Lin> = ds.y.iter().zip(&ds.x).map(|(y, x)| Lin::constant(y - x * beta0)).collect();
    Ok(l3o_kernel(ws, &e, &ds.x, L3oOptions::default())?.value.q0)
}

/// Coefficients `(B₀, B₁, B₂)` of `V̂(β₀)`.
pub fn l3o_quadratic(ds: &Dataset, ws: &WeightScheme) -> Result<QuadraticVariance> {
    l3o_quadratic_with(ds, ws, L3oOptions::default()).map(|(q, _)| q)
}

/// Coefficients plus the kernel output (terms, dropped count).
pub fn l3o_quadratic_with(
    ds: &Dataset,
    ws: &WeightScheme,
    opts: L3oOptions,
) -> Result<(QuadraticVariance, L3oOutput)> {
    let e: Vec<Lin> = ds.y.iter().zip(&ds.x).map(|(y, x)| Lin::new(*y, -*x)).collect();
    let out = l3o_kernel(ws, &e, &ds.x, opts)?;
    Ok((QuadraticVariance::from_quad(out.value, VarianceId::L3o), out))
}

/// Evaluate the estimator for an arbitrary affine `e` and regressor `x`.
pub fn l3o_kernel(ws: &WeightScheme, e: &[Lin], x: &[f64], opts: L3oOptions) -> Result<L3oOutput> {
    assert_eq!(e.len(), ws.n());
    assert_eq!(x.len(), ws.n());
    let mut acc = [QuadAcc::new(), QuadAcc::new(), QuadAcc::new(), QuadAcc::new(), QuadAcc::new()];
    let mut dropped = 0usize;
    for (b, idx) in ws.part.blocks.iter().enumerate() {
        let blk = &ws.blocks[b];
        let eb = ws.part.gather(b, e);
        let xb = ws.part.gather(b, x);
        let parts = match exchangeable_params(&blk.g, &blk.m) {
            Some(p) if opts.exchangeable => exchangeable_block(&p, &eb, &xb, idx, opts.policy)?,
            _ => general_block(&blk.g, &blk.m, &eb, &xb, idx, opts.policy)?,
        };
        for (a, t) in acc.iter_mut().zip(parts.terms.iter()) {
            a.add(*t);
        }
        dropped += parts.dropped;
    }
    let terms = [acc[0].value(), acc[1].value(), acc[2].value(), acc[3].value(), acc[4].value()];
    let mut total = QuadAcc::new();
    for t in &terms {
        total.add(*t);
    }
    Ok(L3oOutput { value: total.value(), terms, dropped })
}

struct BlockTerms {
    terms: [Quad; 5],
    dropped: usize,
}

/// Cofactor weights giving the leave-set-out residual at `p` for the set
/// `{p, q, r}` (or `{p, q}` when `r == q`). `None` when the set is singular.
#[inline]
fn resid_weights(m: &Mat, p: usize, q: usize, r: usize) -> Option<(f64, f64, f64)> {
    let mpp = m[(p, p)];
    let mqq = m[(q, q)];
    let mpq = m[(p, q)];
    if r == q {
        let d = mpp * mqq - mpq * mpq;
        if !(d > SINGULAR_RTOL * mpp * mqq) || !(mpp > 0.0) {
            return None;
        }
        return Some((mqq / d, -mpq / d, 0.0));
    }
    let mrr = m[(r, r)];
    let mpr = m[(p, r)];
    let mqr = m[(q, r)];
    let dqr = mqq * mrr - mqr * mqr;
    let dpr = mpp * mrr - mpr * mpr;
    let dpq = mpp * mqq - mpq * mpq;
    let cp = dqr;
    let cq = mpr * mqr - mpq * mrr;
    let cr = mpq * mqr - mpr * mqq;
    let det = mpp * cp + mpq * cq + mpr * cr;
    let scale = (mpp * dqr).max(mqq * dpr).max(mrr * dpq);
    if !(libm::fabs(det) > SINGULAR_RTOL * scale) || !(scale > 0.0) {
        return None;
    }
    Some((cp / det, cq / det, cr / det))
}

/// Determinant check used by [`feasibility`]; mirrors [`resid_weights`].
fn set_is_singular(m: &Mat, p: usize, q: usize, r: usize) -> (bool, f64) {
    if r == q {
        let d = m[(p, p)] * m[(q, q)] - m[(p, q)] * m[(p, q)];
        let bad = !(d > SINGULAR_RTOL * m[(p, p)] * m[(q, q)]) || !(m[(p, p)] > 0.0);
        return (bad, d);
    }
    let d = det3(m, p, q, r);
    (resid_weights(m, p, q, r).is_none(), d)
}

fn det3(m: &Mat, i: usize, j: usize, k: usize) -> f64 {
    let (a, b, c) = (m[(i, i)], m[(j, j)], m[(k, k)]);
    let (d, e, f) = (m[(i, j)], m[(i, k)], m[(j, k)]);
    a * (b * c - f * f) - (b * e * e + c * d * d - 2.0 * f * d * e)
}

fn general_block(
    g: &Mat,
    m: &Mat,
    e: &[Lin],
    x: &[f64],
    idx: &[usize],
    policy: SingularPolicy,
) -> Result<BlockTerms> {
    let nb = e.len();
    let me: Vec<Lin> = (0..nb)
        .map(|i| {
            let mut s = Lin::ZERO;
            for l in 0..nb {
                s += e[l].scale(m[(i, l)]);
            }
            s
        })
        .collect();
    let mx = m.matvec(x);
    let mut a = [QuadAcc::new(), QuadAcc::new(), QuadAcc::new(), QuadAcc::new(), QuadAcc::new()];
    let mut dropped = 0usize;
    let singular = |i: usize, j: usize, k: usize| Error::TripleSingular { i: idx[i], j: idx[j], k: idx[k] };
    for i in 0..nb {
        for j in 0..nb {
            if j == i {
                continue;
            }
            let gij = g[(i, j)];
            let gji = g[(j, i)];
            if gij != 0.0 || gji != 0.0 {
                for k in 0..nb {
                    if k == i {
                        continue;
                    }
                    let gik = g[(i, k)];
                    let gki = g[(k, i)];
                    let w1 = gij * x[j] * gik * x[k];
                    let w2 = 2.0 * gij * x[j] * gki;
                    let w3 = gji * gki * x[i];
                    if w1 == 0.0 && w2 == 0.0 && w3 == 0.0 {
                        continue;
                    }
                    let (cp, cq, cr) = match resid_weights(m, i, j, k) {
                        Some(c) => c,
                        None => match policy {
                            SingularPolicy::Strict => return Err(singular(i, j, k)),
                            SingularPolicy::Conservative => {
                                dropped += 1;
                                continue;
                            }
                        },
                    };
                    let (re, rx) = if k == j {
                        (me[i].scale(cp) + me[j].scale(cq), cp * mx[i] + cq * mx[j])
                    } else {
                        (
                            me[i].scale(cp) + me[j].scale(cq) + me[k].scale(cr),
                            cp * mx[i] + cq * mx[j] + cr * mx[k],
                        )
                    };
                    a[0].add((e[i] * re).scale(w1));
                    a[1].add((e[k] * e[i]).scale(w2 * rx));
                    a[2].add((e[j] * e[k]).scale(w3 * rx));
                }
            }
            let c4 = gji * gji;
            let c5 = gij * gji;
            if c4 == 0.0 && c5 == 0.0 {
                continue;
            }
            let dij = m[(i, i)] * m[(j, j)] - m[(i, j)] * m[(i, j)];
            for k in 0..nb {
                if k == j {
                    continue;
                }
                let mcheck = if k == i {
                    1.0
                } else {
                    (m[(j, j)] * m[(i, k)] - m[(i, j)] * m[(j, k)]) / dij
                };
                if mcheck == 0.0 {
                    continue;
                }
                let (cp, cq, cr) = match resid_weights(m, j, i, k) {
                    Some(c) => c,
                    None => match policy {
                        SingularPolicy::Strict => return Err(singular(i, j, k)),
                        SingularPolicy::Conservative => {
                            dropped += 1;
                            continue;
                        }
                    },
                };
                let (re, rx) = if k == i {
                    (me[j].scale(cp) + me[i].scale(cq), cp * mx[j] + cq * mx[i])
                } else {
                    (
                        me[j].scale(cp) + me[i].scale(cq) + me[k].scale(cr),
                        cp * mx[j] + cq * mx[i] + cr * mx[k],
                    )
                };
                a[3].add((e[j] * re).scale(-c4 * x[i] * mcheck * x[k]));
                a[4].add((e[i] * e[j]).scale(-c5 * mcheck * x[k] * rx));
            }
        }
    }
    Ok(BlockTerms {
        terms: [a[0].value(), a[1].value(), a[2].value(), a[3].value(), a[4].value()],
        dropped,
    })
}

/// Constants of a block where `G` and `M` each have a constant diagonal and
/// a constant off-diagonal (one judge, no covariates).
struct Exchangeable {
    g_off: f64,
    m_diag: f64,
    m_off: f64,
}

fn exchangeable_params(g: &Mat, m: &Mat) -> Option<Exchangeable> {
    let nb = g.rows();
    if nb < 3 {
        return None;
    }
    let g_off = g[(0, 1)];
    let m_diag = m[(0, 0)];
    let m_off = m[(0, 1)];
    for i in 0..nb {
        if m[(i, i)] != m_diag {
            return None;
        }
        for j in 0..nb {
            if i != j && (g[(i, j)] != g_off || m[(i, j)] != m_off) {
                return None;
            }
        }
    }
    Some(Exchangeable { g_off, m_diag, m_off })
}

/// Power sums over distinct index tuples.
struct Sums;

impl Sums {
    fn s(a: &[Quad]) -> Quad {
        let mut acc = QuadAcc::new();
        for v in a {
            acc.add(*v);
        }
        acc.value()
    }

    fn prod(a: &[Quad], b: &[Quad]) -> Vec<Quad> {
        a.iter().zip(b).map(|(u, v)| u.mul_trunc(*v)).collect()
    }

    /// `Σ_{i≠j} a_i b_j`.
    fn d2(a: &[Quad], b: &[Quad]) -> Quad {
        Self::s(a).mul_trunc(Self::s(b)) - Self::s(&Self::prod(a, b))
    }

    /// `Σ_{i,j,k distinct} a_i b_j c_k`.
    fn d3(a: &[Quad], b: &[Quad], c: &[Quad]) -> Quad {
        let (sa, sb, sc) = (Self::s(a), Self::s(b), Self::s(c));
        let ab = Self::s(&Self::prod(a, b));
        let ac = Self::s(&Self::prod(a, c));
        let bc = Self::s(&Self::prod(b, c));
        let abc = Self::s(&Self::prod(&Self::prod(a, b), c));
        sa.mul_trunc(sb).mul_trunc(sc) - ab.mul_trunc(sc) - ac.mul_trunc(sb) - bc.mul_trunc(sa)
            + abc.scale(2.0)
    }
}

fn exchangeable_block(
    p: &Exchangeable,
    e: &[Lin],
    x: &[f64],
    idx: &[usize],
    policy: SingularPolicy,
) -> Result<BlockTerms> {
    let nb = e.len();
    let (m0, m1) = (p.m_diag, p.m_off);
    let g2 = p.g_off * p.g_off;
    if g2 == 0.0 {
        return Ok(BlockTerms { terms: [Quad::ZERO; 5], dropped: 0 });
    }
    // Pair residual at p: α2 v_p + β2 v_q; triple: α3 v_p + β3 (v_q + v_r).
    let d2 = m0 * m0 - m1 * m1;
    let pair_ok = d2 > SINGULAR_RTOL * m0 * m0 && m0 > 0.0;
    let cp = d2;
    let cq = m1 * m1 - m1 * m0;
    let d3 = m0 * cp + 2.0 * m1 * cq;
    let triple_ok = pair_ok && libm::fabs(d3) > SINGULAR_RTOL * m0 * d2;
    let n_pairs = nb * (nb - 1);
    let n_triples = nb * (nb - 1) * (nb - 2);
    let mut dropped = 0usize;
    if !pair_ok || !triple_ok {
        match policy {
            SingularPolicy::Strict => {
                return Err(Error::TripleSingular { i: idx[0], j: idx[1], k: idx[2] })
            }
            SingularPolicy::Conservative => {
                dropped += 2 * n_triples;
                if !pair_ok {
                    dropped += 2 * n_pairs;
                }
            }
        }
    }
    let mut me = vec![Quad::ZERO; nb];
    let mut mx = vec![Quad::ZERO; nb];
    let se: Lin = e.iter().fold(Lin::ZERO, |s, v| s + *v);
    let sx: f64 = x.iter().sum();
    for i in 0..nb {
        me[i] = Quad::from(e[i].scale(m0 - m1) + se.scale(m1));
        mx[i] = Quad::constant((m0 - m1) * x[i] + m1 * sx);
    }
    let ee: Vec<Quad> = e.iter().map(|v| Quad::from(*v)).collect();
    let xx: Vec<Quad> = x.iter().map(|v| Quad::constant(*v)).collect();
    let pr = Sums::prod;
    let (d2f, d3f) = (Sums::d2, Sums::d3);
    let ev = pr(&ee, &me);
    let eu = pr(&ee, &mx);
    let xv = pr(&xx, &me);
    let xu = pr(&xx, &mx);
    let x2 = pr(&xx, &xx);
    let e2 = pr(&ee, &ee);
    let ex = pr(&ee, &xx);

    let mut t = [Quad::ZERO; 5];
    if pair_ok {
        let a2 = m0 / d2;
        let b2 = -m1 / d2;
        let p1 = d2f(&ev, &x2).scale(a2) + d2f(&ee, &pr(&x2, &me)).scale(b2);
        let p2 = d2f(&eu, &ex).scale(a2) + d2f(&ee, &pr(&ex, &mx)).scale(b2);
        let p3 = d2f(&xu, &e2).scale(a2) + d2f(&xx, &pr(&e2, &mx)).scale(b2);
        let p4 = d2f(&x2, &ev).scale(a2) + d2f(&pr(&x2, &me), &ee).scale(b2);
        let p5 = d2f(&ex, &eu).scale(a2) + d2f(&pr(&ex, &mx), &ee).scale(b2);
        t[0] += p1;
        t[1] += p2.scale(2.0);
        t[2] += p3;
        t[3] += -p4;
        t[4] += -p5;
    }
    if triple_ok && nb >= 3 {
        let a3 = cp / d3;
        let b3 = cq / d3;
        let gamma = m1 * (m0 - m1) / d2;
        let q1 = d3f(&ev, &xx, &xx).scale(a3)
            + (d3f(&ee, &xv, &xx) + d3f(&ee, &xx, &xv)).scale(b3);
        let q2 = d3f(&eu, &xx, &ee).scale(a3)
            + (d3f(&ee, &xu, &ee) + d3f(&ee, &xx, &eu)).scale(b3);
        let q3 = d3f(&xu, &ee, &ee).scale(a3)
            + (d3f(&xx, &eu, &ee) + d3f(&xx, &ee, &eu)).scale(b3);
        let q4 = d3f(&xx, &ev, &xx).scale(a3)
            + (d3f(&xv, &ee, &xx) + d3f(&xx, &ee, &xv)).scale(b3);
        let q5 = d3f(&ee, &eu, &xx).scale(a3)
            + (d3f(&eu, &ee, &xx) + d3f(&ee, &ee, &xu)).scale(b3);
        t[0] += q1;
        t[1] += q2.scale(2.0);
        t[2] += q3;
        t[3] += -q4.scale(gamma);
        t[4] += -q5.scale(gamma);
    }
    for v in t.iter_mut() {
        *v = v.scale(g2);
    }
    Ok(BlockTerms { terms: t, dropped })
}

/// Report on the invertibility of leave-out Gram matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// Smallest `|D_ijk|` over scanned triples (`+∞` when there are none).
    pub min_abs_d_triple: f64,
    pub invertible_all_triples: bool,
    /// Offending sets `(i, j, k)` with `i < j < k`; pairs appear as `(i, j, j)`.
    /// At most [`MAX_LISTED`] are listed.
    pub offending_triples: Vec<(usize, usize, usize)>,
    /// Total number of offending sets.
    pub n_offending: usize,
    pub conservative_applied: bool,
}

/// Cap on the number of offending sets listed in a report.
pub const MAX_LISTED: usize = 10_000;

/// Scan the sets used by the estimator for the dataset's default weights.
pub fn feasibility(ds: &Dataset) -> Result<FeasibilityReport> {
    let hat = design::build_hat(ds)?;
    let ws = design::weights_from_hat(ds, &hat, design::WeightKind::Jive)?;
    Ok(feasibility_for(&ws))
}

/// Scan all within-block pairs and triples of `M`.
pub fn feasibility_for(ws: &WeightScheme) -> FeasibilityReport {
    let mut min_abs = f64::INFINITY;
    let mut listed = Vec::new();
    let mut count = 0usize;
    let push = |t: (usize, usize, usize), listed: &mut Vec<_>, count: &mut usize| {
        *count += 1;
        if listed.len() < MAX_LISTED {
            listed.push(t);
        }
    };
    for (b, idx) in ws.part.blocks.iter().enumerate() {
        let blk = &ws.blocks[b];
        let m = &blk.m;
        let nb = idx.len();
        if nb < 2 {
            continue;
        }
        if let Some(p) = exchangeable_params(&blk.g, m) {
            if p.g_off == 0.0 {
                continue;
            }
            let (pair_bad, _) = set_is_singular(m, 0, 1, 1);
            let (tri_bad, d) = set_is_singular(m, 0, 1, 2);
            min_abs = min_abs.min(libm::fabs(d));
            for i in 0..nb {
                for j in i + 1..nb {
                    if pair_bad {
                        push((idx[i], idx[j], idx[j]), &mut listed, &mut count);
                    }
                    if tri_bad {
                        for k in j + 1..nb {
                            push((idx[i], idx[j], idx[k]), &mut listed, &mut count);
                        }
                    }
                }
            }
            continue;
        }
        for i in 0..nb {
            for j in i + 1..nb {
                if set_is_singular(m, i, j, j).0 {
                    push((idx[i], idx[j], idx[j]), &mut listed, &mut count);
                }
                for k in j + 1..nb {
                    let (bad, d) = set_is_singular(m, i, j, k);
                    min_abs = min_abs.min(libm::fabs(d));
                    if bad {
                        push((idx[i], idx[j], idx[k]), &mut listed, &mut count);
                    }
                }
            }
        }
    }
    FeasibilityReport {
        min_abs_d_triple: min_abs,
        invertible_all_triples: count == 0,
        offending_triples: listed,
        n_offending: count,
        conservative_applied: false,
    }
}

/// Leave-out kernels of `M` for one weighting scheme.
pub struct LeaveOutKernel<'a> {
    ws: &'a WeightScheme,
}

impl<'a> LeaveOutKernel<'a> {
    pub fn new(ws: &'a WeightScheme) -> Self {
        LeaveOutKernel { ws }
    }

    fn m(&self, i: usize, j: usize) -> f64 {
        self.ws.m_entry(i, j)
    }

    /// `D_ij = M_ii M_jj − M_ij²`.
    pub fn d_pair(&self, i: usize, j: usize) -> f64 {
        self.m(i, i) * self.m(j, j) - self.m(i, j) * self.m(i, j)
    }

    /// `M̌_{ik,−ij}`, equal to one when `k == i`.
    pub fn m_pair(&self, i: usize, k: usize, j: usize) -> f64 {
        if k == i {
            return 1.0;
        }
        (self.m(j, j) * self.m(i, k) - self.m(i, j) * self.m(j, k)) / self.d_pair(i, j)
    }

    /// `D_ijk`, the determinant of `M` restricted to `{i, j, k}`.
    pub fn d_triple(&self, i: usize, j: usize, k: usize) -> f64 {
        self.m(i, i) * self.d_pair(j, k)
            - (self.m(j, j) * self.m(i, k) * self.m(i, k) + self.m(k, k) * self.m(i, j) * self.m(i, j)
                - 2.0 * self.m(j, k) * self.m(i, j) * self.m(i, k))
    }

    /// `M̌_{il,−ijk} = (M_il − M_ij M̌_{jl,−jk} − M_ik M̌_{kl,−jk}) / (D_ijk / D_jk)`,
    /// equal to one when `l == i`.
    pub fn m_triple(&self, i: usize, l: usize, j: usize, k: usize) -> f64 {
        if l == i {
            return 1.0;
        }
        let num = self.m(i, l) - self.m(i, j) * self.m_pair(j, l, k) - self.m(i, k) * self.m_pair(k, l, j);
        num / (self.d_triple(i, j, k) / self.d_pair(j, k))
    }
}
