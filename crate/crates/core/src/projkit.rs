//! Perturbation of almost-projections: repair, orthogonalize, connect.
//!
//! Every routine checks its hypotheses on the actual input and reports the
//! measured quantities next to the guaranteed bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
#[cfg(test)]
use crate::matfun::ONE;
use crate::matfun::{
    hermitian_eigen, spectrum, validate, AlgebraElement, Mat, Predicate, Tolerances, C64, ZERO,
};
use crate::sample;

/// Upper cap on `α` independent of any order parameter.
pub const ALPHA_CAP: f64 = 1.05;

/// Slack for comparing measured norms with exact thresholds.
const SLACK: f64 = 1e-12;

fn ensure_projection(x: &AlgebraElement, name: &str, tol: f64) -> Result<()> {
    let v = validate(x, Predicate::Projection, tol);
    if v.holds {
        Ok(())
    } else {
        Err(Error::precondition(format!(
            "{name} is not a projection (defect {:.3e})",
            v.defect
        )))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Repair {
    pub p: AlgebraElement,
    pub c: AlgebraElement,
    /// `‖h − h²‖` of the input.
    pub defect: f64,
    /// Half-width of the spectral gap around `1/2`.
    pub gap: f64,
    pub dist_p_h: f64,
    pub dist_p_c: f64,
}

/// Turns an almost-projection `h` into the spectral projection `p = g_{1/2}(h)`,
/// together with `c = (php)^{-1/2}` computed in `C*(h)`.
pub fn repair_almost_projection(h: &AlgebraElement, eps: f64, tol: Tolerances) -> Result<Repair> {
    if !(eps < 0.25) {
        return Err(Error::precondition(format!("ε = {eps} is not below 1/4")));
    }
    let spec = spectrum(h, tol.identity)?;
    let low = spec.merged.first().copied().unwrap_or(0.0);
    let high = spec.merged.last().copied().unwrap_or(0.0);
    if low < -tol.identity {
        return Err(Error::NotPositive { eigenvalue: low });
    }
    if high > 1.0 + tol.identity {
        return Err(Error::precondition(format!("‖h‖ = {high} exceeds 1")));
    }
    let defect = (h - &(h * h)).norm();
    if !(defect < eps) {
        return Err(Error::precondition(format!(
            "‖h − h²‖ = {defect:.6e} is not below ε = {eps}"
        )));
    }
    let gap = 0.5 * (1.0 - 4.0 * eps).sqrt();
    let p = h.map_spectrum(tol.identity, |t| if t >= 0.5 { 1.0 } else { 0.0 })?;
    let c = h.map_spectrum(
        tol.identity,
        |t| if t >= 0.5 { 1.0 / t.sqrt() } else { 0.0 },
    )?;
    let dist_p_h = p.dist(h);
    let dist_p_c = p.dist(&c);
    Ok(Repair {
        p,
        c,
        defect,
        gap,
        dist_p_h,
        dist_p_c,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthogonalizedPair {
    pub p_tilde: AlgebraElement,
    /// `‖pq‖` of the input.
    pub overlap: f64,
    pub dist: f64,
    /// `‖p̃ q‖`, zero up to rounding.
    pub residual: f64,
}

/// Moves `p` to a projection orthogonal to `q`, computed inside the corner `(1−q)A(1−q)`.
pub fn orthogonalize_pair(
    p: &AlgebraElement,
    q: &AlgebraElement,
    delta: f64,
    tol: Tolerances,
) -> Result<OrthogonalizedPair> {
    if !(delta < 1.0 / 24.0) || delta < 0.0 {
        return Err(Error::precondition(format!(
            "δ = {delta} is not in [0, 1/24)"
        )));
    }
    ensure_projection(p, "p", tol.identity)?;
    ensure_projection(q, "q", tol.identity)?;
    let overlap = (p * q).norm();
    if overlap > delta + SLACK {
        return Err(Error::precondition(format!(
            "‖pq‖ = {overlap:.6e} exceeds δ = {delta}"
        )));
    }
    let mut p_tilde = AlgebraElement::zeros(p.algebra());
    for i in 0..p.num_blocks() {
        let qe = hermitian_eigen(&q.block_matrix(i));
        let kernel: Vec<usize> = (0..qe.values.len())
            .filter(|&c| qe.values[c] < 0.5)
            .collect();
        if kernel.is_empty() {
            continue;
        }
        let basis = qe.vectors.select_columns(&kernel);
        let corner = basis.adjoint() * p.block_matrix(i) * &basis;
        let ce = hermitian_eigen(&corner);
        let keep: Vec<usize> = (0..ce.values.len())
            .filter(|&c| ce.values[c] >= 0.5)
            .collect();
        if keep.is_empty() {
            continue;
        }
        let range = &basis * ce.vectors.select_columns(&keep);
        let proj = &range * range.adjoint();
        p_tilde.block_mut(i).copy_from(&proj);
    }
    let dist = p_tilde.dist(p);
    let residual = (&p_tilde * q).norm();
    Ok(OrthogonalizedPair {
        p_tilde,
        overlap,
        dist,
        residual,
    })
}

/// The stage tolerances `δ_1 = 0`, `δ_i = 14 (Σ_{l<i} δ_l + δ)` with `δ = √(α(α−1))`.
pub fn schedule(alpha: f64, k: usize) -> Vec<f64> {
    let delta = (alpha * (alpha - 1.0)).max(0.0).sqrt();
    let mut out: Vec<f64> = Vec::with_capacity(k);
    let mut acc = 0.0;
    for i in 0..k {
        let d = if i == 0 { 0.0 } else { 14.0 * (acc + delta) };
        out.push(d);
        acc += d;
    }
    out
}

/// The overlap tolerance `Σ_{l<i} δ_l + δ` fed into stage `i` (0-based).
pub fn stage_overlaps(alpha: f64, k: usize) -> Vec<f64> {
    let delta = (alpha * (alpha - 1.0)).max(0.0).sqrt();
    let sched = schedule(alpha, k);
    let mut acc = 0.0;
    sched
        .iter()
        .map(|d| {
            let o = acc + delta;
            acc += d;
            o
        })
        .collect()
}

/// The cap on `α`: `min(1.05, (n+2)/n)` when an order parameter `n ≥ 1` is given.
pub fn alpha_cap(order: Option<usize>) -> f64 {
    match order {
        Some(n) if n >= 1 => ALPHA_CAP.min((n as f64 + 2.0) / n as f64),
        _ => ALPHA_CAP,
    }
}

/// The largest `α` whose schedule keeps every `δ_i ≤ β` for `i ≤ K`, capped by [`alpha_cap`].
pub fn alpha_for(k: usize, beta: f64, order: Option<usize>) -> f64 {
    assert!(k >= 1 && beta > 0.0, "alpha_for needs K ≥ 1 and β > 0");
    let cap = alpha_cap(order);
    if k == 1 {
        return cap;
    }
    let delta = beta / (14.0 * 15f64.powi(k as i32 - 2));
    let root = 0.5 * (1.0 + (1.0 + 4.0 * delta * delta).sqrt());
    root.min(cap)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyResult {
    pub projections: Vec<AlgebraElement>,
    /// `‖Σ q_i‖` of the input.
    pub sum_norm: f64,
    /// Stage bounds `δ_i`.
    pub schedule: Vec<f64>,
    /// Measured `‖p_i − q_i‖`.
    pub deviations: Vec<f64>,
    /// Largest `‖p_i p_j‖` over `i ≠ j`.
    pub max_product: f64,
    /// True when the input was already orthogonal and returned as is.
    pub unchanged: bool,
}

fn max_pairwise_product(ps: &[AlgebraElement]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..ps.len() {
        for j in 0..ps.len() {
            if i != j {
                worst = worst.max((&ps[i] * &ps[j]).norm());
            }
        }
    }
    worst
}

/// Replaces projections with `‖Σ q_i‖ ≤ α` by pairwise orthogonal ones, stage by stage.
pub fn orthogonalize_family(
    qs: &[AlgebraElement],
    alpha: f64,
    tol: Tolerances,
) -> Result<FamilyResult> {
    if qs.is_empty() {
        return Err(Error::precondition("empty projection family"));
    }
    if !(alpha >= 1.0) {
        return Err(Error::precondition(format!("α = {alpha} is below 1")));
    }
    for (i, q) in qs.iter().enumerate() {
        ensure_projection(q, &format!("q_{}", i + 1), tol.identity)?;
    }
    let mut sum = AlgebraElement::zeros(qs[0].algebra());
    for q in qs {
        sum = &sum + q;
    }
    let sum_norm = sum.norm();
    if sum_norm > alpha + tol.identity {
        return Err(Error::precondition(format!(
            "‖Σ q_i‖ = {sum_norm:.9} exceeds α = {alpha}"
        )));
    }
    let k = qs.len();
    let sched = schedule(alpha, k);
    // A sum of norm one means the family is already orthogonal; rounding
    // above SLACK still goes through the stages.
    let max_product = max_pairwise_product(qs);
    if k == 1 || (sum_norm <= 1.0 + tol.identity && max_product <= SLACK) {
        return Ok(FamilyResult {
            projections: qs.to_vec(),
            sum_norm,
            schedule: sched,
            deviations: vec![0.0; k],
            max_product,
            unchanged: true,
        });
    }
    let overlaps = stage_overlaps(alpha, k);
    let mut ps: Vec<AlgebraElement> = vec![qs[0].clone()];
    let mut acc = AlgebraElement::zeros(qs[0].algebra());
    acc = &acc + &qs[0];
    let mut deviations = vec![0.0];
    for i in 1..k {
        let stage = format!("orthogonalize stage {}", i + 1);
        let bound = overlaps[i];
        if !(bound < 1.0 / 24.0) {
            return Err(Error::step(
                stage,
                format!("stage overlap tolerance {bound:.6e} is not below 1/24"),
            ));
        }
        let measured = (&qs[i] * &acc).norm();
        if measured > bound + SLACK {
            return Err(Error::step(
                stage,
                format!("‖q_i Σ p_l‖ = {measured:.6e} exceeds {bound:.6e}"),
            ));
        }
        let out = orthogonalize_pair(&qs[i], &acc, bound, tol)
            .map_err(|e| Error::step(stage.clone(), e.to_string()))?;
        if out.dist > sched[i] + SLACK {
            return Err(Error::step(
                stage,
                format!(
                    "‖p_i − q_i‖ = {:.6e} exceeds δ_i = {:.6e}",
                    out.dist, sched[i]
                ),
            ));
        }
        deviations.push(out.dist);
        acc = &acc + &out.p_tilde;
        ps.push(out.p_tilde);
    }
    let max_product = max_pairwise_product(&ps);
    Ok(FamilyResult {
        projections: ps,
        sum_norm,
        schedule: sched,
        deviations,
        max_product,
        unchanged: false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Connection {
    /// Partial isometry with `s*s = p`, `ss* = q`.
    pub s: AlgebraElement,
    /// The unitary `e^{-ih/2}` with `s = up`.
    pub u: AlgebraElement,
    pub dist_p_q: f64,
    pub dist_s_p: f64,
    /// `max(‖s*s − p‖, ‖ss* − q‖)`.
    pub defect: f64,
}

/// Distance from `−1` below which the principal logarithm is refused.
const LOG_BRANCH_GUARD: f64 = 1e-8;

/// Connects close projections by the half-angle unitary of the symmetries `2p−1`, `2q−1`.
pub fn connect_projections(
    p: &AlgebraElement,
    q: &AlgebraElement,
    eta: f64,
    tol: Tolerances,
) -> Result<Connection> {
    if !(eta <= 0.25) || !(eta > 0.0) {
        return Err(Error::precondition(format!("η = {eta} is not in (0, 1/4]")));
    }
    ensure_projection(p, "p", tol.identity)?;
    ensure_projection(q, "q", tol.identity)?;
    let dist_p_q = p.dist(q);
    if !(dist_p_q < eta) {
        return Err(Error::precondition(format!(
            "‖p − q‖ = {dist_p_q:.6e} is not below η = {eta}"
        )));
    }
    let mut u = AlgebraElement::zeros(p.algebra());
    for i in 0..p.num_blocks() {
        let half = direct_rotation(&p.block_matrix(i), &q.block_matrix(i))?;
        u.block_mut(i).copy_from(&half);
    }
    let s = &u * p;
    let sa = s.adjoint();
    let defect = (&sa * &s).dist(p).max((&s * &sa).dist(q));
    let dist_s_p = s.dist(p);
    Ok(Connection {
        s,
        u,
        dist_p_q,
        dist_s_p,
        defect,
    })
}

/// `e^{-ih/2}` for `(2p−1)(2q−1) = e^{ih}`, computed as the unitary part of
/// `w = qp + (1−q)(1−p)`. Both are `((2q−1)(2p−1))^{1/2}`, but `|w|` commutes
/// with `p` and has spectrum in `[1 − ‖p−q‖², 1]`, so `u p u* = q` survives
/// rounding where a Schur-based logarithm loses about 1e-10.
fn direct_rotation(p: &Mat, q: &Mat) -> Result<Mat> {
    let r = p.nrows();
    let id = Mat::identity(r, r);
    let w = q * p + (&id - q) * (&id - p);
    let e = hermitian_eigen(&(w.adjoint() * &w));
    let floor = e.values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(floor > LOG_BRANCH_GUARD) {
        return Err(Error::Numerical("eigenvalue at −1 in the logarithm".into()));
    }
    let mut scaled = e.vectors.clone();
    for (c, &v) in e.values.iter().enumerate() {
        let mut col = scaled.column_mut(c);
        col *= C64::new(v.sqrt().recip(), 0.0);
    }
    Ok(w * (&scaled * e.vectors.adjoint()))
}

/// `e^{-ih/2}` for the principal logarithm `w = e^{ih}`, `σ(h) ⊂ (−π, π)`.
#[cfg(test)]
fn half_log_unitary(w: &Mat) -> Result<Mat> {
    let n = w.nrows();
    if n == 1 {
        let z = w[(0, 0)];
        let z = z / z.norm();
        if (z + ONE).norm() < LOG_BRANCH_GUARD {
            return Err(Error::Numerical("eigenvalue at −1 in the logarithm".into()));
        }
        return Ok(Mat::from_element(1, 1, C64::new(0.0, -z.arg() / 2.0).exp()));
    }
    let (qm, t) = nalgebra::Schur::new(w.clone()).unpack();
    let mut diag = Vec::with_capacity(n);
    for k in 0..n {
        let z = t[(k, k)];
        let z = if z.norm() > 0.0 { z / z.norm() } else { ONE };
        if (z + ONE).norm() < LOG_BRANCH_GUARD {
            return Err(Error::Numerical("eigenvalue at −1 in the logarithm".into()));
        }
        diag.push(C64::new(0.0, -z.arg() / 2.0).exp());
    }
    let mut scaled = qm.clone();
    for (c, d) in diag.iter().enumerate() {
        let mut colv = scaled.column_mut(c);
        colv *= *d;
    }
    Ok(&scaled * qm.adjoint())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlmostUnitCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Evaluates `‖(1−d)x‖ ≤ √‖(1−h)x‖` for `0 ≤ h ≤ d`, `‖d‖ ≤ 1`, `‖x‖ ≤ 1`.
pub fn check_almost_unit(
    h: &AlgebraElement,
    d: &AlgebraElement,
    x: &AlgebraElement,
    tol: Tolerances,
) -> Result<AlmostUnitCheck> {
    let hmin = spectrum(h, tol.identity)?
        .merged
        .first()
        .copied()
        .unwrap_or(0.0);
    if hmin < -tol.identity {
        return Err(Error::NotPositive { eigenvalue: hmin });
    }
    let gap = spectrum(&(d - h), tol.identity)?
        .merged
        .first()
        .copied()
        .unwrap_or(0.0);
    if gap < -tol.identity {
        return Err(Error::precondition(format!(
            "d ≥ h fails (smallest eigenvalue of d − h is {gap:.3e})"
        )));
    }
    if d.norm() > 1.0 + tol.identity {
        return Err(Error::precondition("‖d‖ exceeds 1"));
    }
    if x.norm() > 1.0 + tol.identity {
        return Err(Error::precondition("‖x‖ exceeds 1"));
    }
    let one = AlgebraElement::identity(h.algebra());
    let lhs = (&(&one - d) * x).norm();
    let rhs = (&(&one - h) * x).norm().sqrt();
    Ok(AlmostUnitCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + 1e-9,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvertibleSum {
    #[serde(skip)]
    pub unitaries: Vec<Mat>,
    /// `1 / λ_min(Σ u_i* p u_i)`.
    pub lambda: f64,
    pub min_eigenvalue: f64,
    /// Number of candidate families tried, the accepted one included.
    pub attempts: usize,
}

pub const DEFAULT_WITNESS_ATTEMPTS: usize = 64;

/// Finds `u_1..u_r` near `center` with `Σ u_i* p u_i` invertible.
///
/// The first candidate puts every `u_i` at the center; for `r ≥ 2` that sum
/// has rank one, so the search falls through to seeded samples.
pub fn invertible_sum_witness(
    p: &Mat,
    center: &Mat,
    radius: f64,
    seed: u64,
    max_attempts: usize,
    tol: Tolerances,
) -> Result<InvertibleSum> {
    let r = p.nrows();
    if !(radius > 0.0) {
        return Err(Error::precondition("radius must be positive"));
    }
    if center.nrows() != r || p.ncols() != r || center.ncols() != r {
        return Err(Error::ShapeMismatch("p and center must be r×r".into()));
    }
    let pe = AlgebraElement::from_matrix(p.clone());
    ensure_projection(&pe, "p", tol.identity)?;
    let rank = pe.trace().re.round() as usize;
    if rank != 1 {
        return Err(Error::precondition(format!(
            "p has rank {rank}, expected 1"
        )));
    }
    let unit_defect = (center.adjoint() * center - Mat::identity(r, r)).norm();
    if unit_defect > 1e-9 {
        return Err(Error::precondition("center is not unitary"));
    }
    let mut rng = sample::rng(seed);
    for attempt in 0..max_attempts.max(1) {
        let us: Vec<Mat> = if attempt == 0 {
            vec![center.clone(); r]
        } else {
            (0..r)
                .map(|_| sample::unitary_near(&mut rng, center, radius))
                .collect()
        };
        let mut sum = Mat::from_element(r, r, ZERO);
        for u in &us {
            sum += u.adjoint() * p * u;
        }
        let low = hermitian_eigen(&sum).values[0];
        if low > tol.rank_cut {
            return Ok(InvertibleSum {
                unitaries: us,
                lambda: 1.0 / low,
                min_eigenvalue: low,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::SamplingExhausted {
        attempts: max_attempts,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRankReport {
    pub k: usize,
    pub n: usize,
    /// `tr(Σ a_i) / n`, at most 1 when `Σ a_i ≤ 1`.
    pub normalized_trace: f64,
    pub min_norm: f64,
    /// Whether every `‖a_i‖ > n/(n+1)`.
    pub norms_large: bool,
    /// `k ≤ n` whenever the norm hypothesis holds.
    pub holds: bool,
}

/// Checks that positive `a_1..a_k ∈ M_n` with `Σ a_i ≤ 1` and `‖a_i‖ > n/(n+1)` number at most `n`.
pub fn check_trace_rank(a: &[Mat], tol: Tolerances) -> Result<TraceRankReport> {
    let n = a.first().map(|m| m.nrows()).unwrap_or(1);
    let mut sum = Mat::from_element(n, n, ZERO);
    let mut min_norm = f64::INFINITY;
    for (i, m) in a.iter().enumerate() {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "a_{} has the wrong size",
                i + 1
            )));
        }
        let e = AlgebraElement::from_matrix(m.clone());
        let low = e.min_eigenvalue(tol.identity)?;
        if low < -tol.identity {
            return Err(Error::NotPositive { eigenvalue: low });
        }
        min_norm = min_norm.min(e.norm());
        sum += m;
    }
    let top = AlgebraElement::from_matrix(sum.clone()).max_eigenvalue(tol.identity)?;
    if top > 1.0 + tol.identity {
        return Err(Error::precondition(format!(
            "Σ a_i has eigenvalue {top} above 1"
        )));
    }
    let threshold = n as f64 / (n as f64 + 1.0);
    let norms_large = a
        .iter()
        .all(|m| AlgebraElement::from_matrix(m.clone()).norm() > threshold);
    Ok(TraceRankReport {
        k: a.len(),
        n,
        normalized_trace: sum.trace().re / n as f64,
        min_norm: if a.is_empty() { 0.0 } else { min_norm },
        norms_large,
        holds: !norms_large || a.len() <= n,
    })
}
