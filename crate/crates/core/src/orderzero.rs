//! Structure of strict-order-zero maps: `φ = h·σ` with `σ` a *-homomorphism,
//! the snap of an almost-unital one onto a homomorphism, and the local step
//! that turns an order-zero approximation into a finite-dimensional subalgebra.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cpmap::{
    certify_order_zero, compress, is_contractive, support_compression, CPMap, Certification,
    OrderZeroCertificate, CHOI_TOL, SUPPORT_CUT,
};
use crate::error::{Error, Result};
use crate::matfun::{
    hermitian_eigen, validate, AlgebraElement, FiniteDimAlgebra, Mat, Predicate, C64, ONE, ZERO,
};
use crate::sample;

/// Random contractions used when measuring `‖φ′ − φ‖` from below.
pub const NORM_PROBES: usize = 50;
const PROBE_SEED: u64 = 0x5eed;

/// One block of `φ = ⊕ h_i σ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    /// Distinct eigenvalues of `h_i` on its support, ascending.
    pub support: Vec<f64>,
    pub h: AlgebraElement,
    /// `σ_i` as a map out of `M_{r_i}`.
    pub sigma: CPMap,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub support_projection: Option<AlgebraElement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderZeroDecomposition {
    pub blocks: Vec<BlockDecomposition>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub certificate: Option<OrderZeroCertificate>,
}

impl OrderZeroDecomposition {
    /// The map `x ↦ Σ_i h_i σ_i(x_i)`.
    pub fn recompose(&self) -> Result<CPMap> {
        let first = self
            .blocks
            .first()
            .ok_or_else(|| Error::InvalidAlgebra("decomposition without blocks".into()))?;
        let codomain = first.sigma.codomain().clone();
        let sizes: Vec<usize> = self
            .blocks
            .iter()
            .map(|b| b.sigma.domain().block_size(0))
            .collect();
        let domain = FiniteDimAlgebra::new(sizes)?;
        let mut images = Vec::with_capacity(domain.dimension());
        for b in &self.blocks {
            if b.sigma.codomain() != &codomain {
                return Err(Error::ShapeMismatch(
                    "blocks land in different codomains".into(),
                ));
            }
            images.extend(b.sigma.images().iter().map(|s| &b.h * s));
        }
        CPMap::new(domain, codomain, images)
    }

    /// Largest `‖φ(e) − h_i σ_i(e)‖` over matrix units.
    pub fn reconstruction_error(&self, phi: &CPMap) -> Result<f64> {
        let re = self.recompose()?;
        if re.domain() != phi.domain() || re.target() != phi.target() {
            return Err(Error::ShapeMismatch(
                "decomposition does not match the map".into(),
            ));
        }
        Ok(re
            .images()
            .iter()
            .zip(phi.images())
            .map(|(a, b)| a.dist(b))
            .fold(0.0, f64::max))
    }
}

fn require_order_zero(phi: &CPMap, tol: f64) -> Result<OrderZeroCertificate> {
    match certify_order_zero(phi, tol)? {
        Certification::OrderZero(c) => Ok(c),
        Certification::NotOrderZero(w) => Err(Error::NotOrderZero(Box::new(w))),
    }
}

fn distinct_support(h: &AlgebraElement, merge: f64) -> Result<Vec<f64>> {
    let spec = crate::matfun::spectrum(h, 1e-9)?;
    let mut out: Vec<(f64, usize)> = Vec::new();
    for t in spec.merged.into_iter().filter(|&t| t > SUPPORT_CUT) {
        match out.last_mut() {
            Some((sum, count)) if t - *sum / *count as f64 <= merge => {
                *sum += t;
                *count += 1;
            }
            _ => out.push((t, 1)),
        }
    }
    Ok(out.into_iter().map(|(s, c)| s / c as f64).collect())
}

/// Splits an order-zero contraction into its positive parts `h_i` and homomorphisms `σ_i`.
pub fn decompose_order_zero(phi: &CPMap, tol: f64) -> Result<OrderZeroDecomposition> {
    let cert = require_order_zero(phi, tol)?;
    let top = phi.unit_image().max_eigenvalue(1e-9)?;
    if top > 1.0 + 1e-9 {
        return Err(Error::precondition(format!("‖φ(1)‖ = {top} exceeds 1")));
    }
    let mut blocks = Vec::with_capacity(phi.domain().num_blocks());
    for i in 0..phi.domain().num_blocks() {
        let (h, _, sigma_images) = support_compression(phi, i, SUPPORT_CUT)?;
        let r = phi.domain().block_size(i);
        let sigma = CPMap::new(
            FiniteDimAlgebra::matrix(r),
            phi.codomain().clone(),
            sigma_images,
        )?;
        let defect = sigma.multiplicativity_defect_on_units();
        if defect > tol {
            return Err(Error::Numerical(format!(
                "σ_{i} has multiplicativity defect {defect:.3e} above tol {tol:.1e}"
            )));
        }
        let support_projection =
            h.map_spectrum(1e-9, |t| if t > SUPPORT_CUT { 1.0 } else { 0.0 })?;
        blocks.push(BlockDecomposition {
            support: distinct_support(&h, tol.max(1e-9))?,
            h,
            sigma,
            support_projection: Some(support_projection),
        });
    }
    let out = OrderZeroDecomposition {
        blocks,
        certificate: Some(cert),
    };
    let err = out.reconstruction_error(phi)?;
    if err > tol {
        return Err(Error::Numerical(format!(
            "reconstruction error {err:.3e} above tol {tol:.1e}"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ProjectionCase {
    Homomorphism {
        defect: f64,
    },
    NotHomomorphism {
        defect: f64,
    },
    /// `φ(1_F)` is not a projection, so nothing is claimed.
    Inapplicable {
        projection_defect: f64,
    },
}

/// An order-zero map with `φ(1_F)` a projection must be a *-homomorphism.
pub fn check_projection_case(phi: &CPMap, tol: f64) -> Result<ProjectionCase> {
    require_order_zero(phi, tol)?;
    let unit = validate(&phi.unit_image(), Predicate::Projection, tol);
    if !unit.holds {
        return Ok(ProjectionCase::Inapplicable {
            projection_defect: unit.defect,
        });
    }
    let defect = phi.multiplicativity_defect_on_units();
    Ok(if defect <= tol {
        ProjectionCase::Homomorphism { defect }
    } else {
        ProjectionCase::NotHomomorphism { defect }
    })
}

/// Bounds on `‖Δ‖` for a hermitian-preserving map `Δ`.
///
/// The lower bound evaluates `Δ` on `1_F`, a frame of hermitian contractions
/// built from matrix units and seeded random contractions. The upper bound
/// splits each Choi block into positive and negative parts, giving
/// `‖Δ‖ ≤ ‖Δ‖_cb ≤ ‖Δ⁺(1)‖ + ‖Δ⁻(1)‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapNormBounds {
    pub lower: f64,
    pub upper: f64,
}

pub fn map_norm_bounds(delta: &CPMap, seed: u64) -> MapNormBounds {
    let dom = delta.domain();
    let mut lower = delta.unit_image().norm();
    let mut probe = |x: &AlgebraElement| lower = lower.max(delta.apply(x).norm());
    for i in 0..dom.num_blocks() {
        let r = dom.block_size(i);
        for j in 0..r {
            probe(&AlgebraElement::matrix_unit(dom, i, j, j));
            for k in j + 1..r {
                let a = AlgebraElement::matrix_unit(dom, i, j, k);
                let b = AlgebraElement::matrix_unit(dom, i, k, j);
                probe(&(&a + &b));
                probe(&(&a.scale(C64::new(0.0, 1.0)) - &b.scale(C64::new(0.0, 1.0))));
            }
        }
    }
    let mut rng = sample::rng(seed);
    for _ in 0..NORM_PROBES {
        probe(&sample::random_contraction_element(&mut rng, dom));
    }

    let target = delta.target();
    let mut pos = AlgebraElement::zeros(target);
    let mut neg = AlgebraElement::zeros(target);
    for i in 0..dom.num_blocks() {
        let r = dom.block_size(i);
        for b in 0..target.num_blocks() {
            let s = target.block_size(b);
            let mut c = Mat::from_element(r * s, r * s, ZERO);
            for j in 0..r {
                for k in 0..r {
                    c.view_mut((j * s, k * s), (s, s))
                        .copy_from(&delta.image(i, j, k).block(b));
                }
            }
            let eig = hermitian_eigen(&c);
            let cp = eig.rebuild(|t| t.max(0.0));
            let cn = eig.rebuild(|t| (-t).max(0.0));
            for j in 0..r {
                let mut pb = pos.block_mut(b);
                pb += cp.view((j * s, j * s), (s, s));
                let mut nb = neg.block_mut(b);
                nb += cn.view((j * s, j * s), (s, s));
            }
        }
    }
    let upper = pos.norm() + neg.norm();
    MapNormBounds {
        lower,
        upper: upper.max(lower),
    }
}

/// Result of snapping an almost-unital order-zero map to a homomorphism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub phi_prime: CPMap,
    pub gamma: f64,
    /// `‖φ(1) − φ(1)²‖`.
    pub unit_defect: f64,
    /// Multiplicativity defect of `φ′` on matrix units.
    pub hom_defect: f64,
    /// Measured bounds on `‖φ′ − φ‖`.
    pub distance: MapNormBounds,
    /// `12γ + 2√γ`.
    pub bound: f64,
    pub within_bound: bool,
}

pub fn perturbation_bound(gamma: f64) -> f64 {
    12.0 * gamma + 2.0 * gamma.sqrt()
}

/// `φ′ = c φ(·) c` with `c = (p φ(1) p)^{-1/2}` and `p` the spectral projection of `φ(1)` above 1/2.
pub fn perturb_to_hom(phi: &CPMap, gamma: f64, tol: f64) -> Result<Perturbation> {
    if !(gamma > 0.0 && gamma < 0.25) {
        return Err(Error::precondition(format!(
            "γ = {gamma} must lie in (0, 1/4)"
        )));
    }
    require_order_zero(phi, tol)?;
    let unit = phi.unit_image();
    let unit_defect = (&unit - &(&unit * &unit)).norm();
    if unit_defect >= gamma {
        return Err(Error::precondition(format!(
            "‖φ(1) − φ(1)²‖ = {unit_defect:.3e} is not below γ = {gamma}"
        )));
    }
    let c = unit.map_spectrum(1e-9, |t| if t > 0.5 { 1.0 / t.sqrt() } else { 0.0 })?;
    let phi_prime = compress(phi, &c)?;
    let hom_defect = phi_prime.multiplicativity_defect_on_units();
    if hom_defect > tol {
        return Err(Error::Numerical(format!(
            "snapped map has multiplicativity defect {hom_defect:.3e}"
        )));
    }
    let distance = map_norm_bounds(&phi_prime.difference(phi)?, PROBE_SEED);
    let bound = perturbation_bound(gamma);
    Ok(Perturbation {
        phi_prime,
        gamma,
        unit_defect,
        hom_defect,
        within_bound: distance.upper <= bound,
        distance,
        bound,
    })
}

/// `‖a − b‖` with `b` the Frobenius-nearest point of the span of `φ′(F′)`.
///
/// An upper bound for the operator-norm distance from `a` to the image.
pub fn dist_to_hom_image(a: &AlgebraElement, phi_prime: &CPMap) -> Result<f64> {
    if a.algebra() != phi_prime.target() {
        return Err(Error::ShapeMismatch("element outside the codomain".into()));
    }
    let basis: Vec<&AlgebraElement> = phi_prime.images().iter().filter(|x| !x.is_zero()).collect();
    if basis.is_empty() {
        return Ok(a.norm());
    }
    let m = basis.len();
    let gram = Mat::from_fn(m, m, |j, k| basis[j].inner(basis[k]));
    let rhs = DVector::from_iterator(m, basis.iter().map(|b| b.inner(a)));
    let coeffs = gram
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let mut best = AlgebraElement::zeros(a.algebra());
    for (x, c) in basis.iter().zip(coeffs.iter()) {
        best.axpy(*c, x);
    }
    Ok(a.dist(&best))
}

/// One measured inequality of the local step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfStep {
    pub eps: f64,
    pub hypotheses: Vec<Hypothesis>,
    /// Eigenvalues `μ_k` of `ψ(u)` per block.
    pub mu: Vec<Vec<f64>>,
    /// Block sizes of `F′ = qFq`.
    pub compressed: FiniteDimAlgebra,
    /// `‖φ(q) − φ(q)²‖`.
    pub q_defect: f64,
    pub perturbation: Perturbation,
    /// `‖a_i − φ(qψ(a_i)q)‖`.
    pub chain_distances: Vec<f64>,
    /// `2√2 ε^{1/4} + ε + 2ε^{1/8}`.
    pub chain_bound: f64,
    /// Certified upper bounds on `dist(a_i, φ′(F′))`.
    pub distances: Vec<f64>,
}

fn check(hypotheses: &mut Vec<Hypothesis>, name: String, value: f64, bound: f64) -> Result<()> {
    let holds = value < bound;
    hypotheses.push(Hypothesis {
        name: name.clone(),
        value,
        bound,
        holds,
    });
    if holds {
        Ok(())
    } else {
        Err(Error::step(
            name,
            format!("measured {value:.6e}, needs < {bound:.6e}"),
        ))
    }
}

pub fn chain_bound(eps: f64) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * eps.powf(0.25) + eps + 2.0 * eps.powf(0.125)
}

/// From an order-zero approximation `(F, ψ, φ)` of `a_1, …, a_k` and an
/// almost-unit `u`, cuts `F` down to `F′ = qFq` with `q` the spectral
/// projection of `ψ(u)` at `√ε`, snaps `φ|F′` to a homomorphism `φ′` and
/// reports how far each `a_i` is from `φ′(F′)`.
pub fn af_local_step(
    a_list: &[AlgebraElement],
    psi: &CPMap,
    phi: &CPMap,
    u: &AlgebraElement,
    eps: f64,
    tol: f64,
) -> Result<AfStep> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::precondition(format!("ε = {eps} must lie in (0, 1)")));
    }
    if psi.target() != phi.domain() || phi.target() != psi.domain() {
        return Err(Error::ShapeMismatch(
            "ψ and φ do not compose to maps A → F → A".into(),
        ));
    }
    for (name, m) in [("ψ", psi), ("φ", phi)] {
        let c = is_contractive(m)?;
        if !c.contractive {
            return Err(Error::precondition(format!(
                "{name} has norm {} > 1",
                c.norm
            )));
        }
    }
    let positive_contraction = |x: &AlgebraElement, what: String| -> Result<()> {
        let p = validate(x, Predicate::Positive, CHOI_TOL);
        let c = validate(x, Predicate::Contraction, 1e-9);
        if p.holds && c.holds {
            Ok(())
        } else {
            Err(Error::precondition(format!(
                "{what} is not a positive contraction"
            )))
        }
    };
    positive_contraction(u, "u".into())?;
    for (i, a) in a_list.iter().enumerate() {
        positive_contraction(a, format!("a_{i}"))?;
    }

    let mut hypotheses = Vec::new();
    let approx = |x: &AlgebraElement| phi.apply(&psi.apply(x));
    let pu = approx(u);
    for (i, a) in a_list.iter().enumerate() {
        check(
            &mut hypotheses,
            format!("‖φψ(a_{i}) − a_{i}‖ < ε"),
            approx(a).dist(a),
            eps,
        )?;
    }
    check(&mut hypotheses, "‖φψ(u) − u‖ < ε".into(), pu.dist(u), eps)?;
    for (i, a) in a_list.iter().enumerate() {
        check(
            &mut hypotheses,
            format!("‖φψ(u)a_{i} − a_{i}‖ < ε"),
            (&pu * a).dist(a),
            eps,
        )?;
    }
    let h = phi.unit_image();
    check(
        &mut hypotheses,
        "‖u − hu‖ < ε".into(),
        u.dist(&(&h * u)),
        eps,
    )?;
    check(
        &mut hypotheses,
        "‖φψ(u) − hφψ(u)‖ < ε".into(),
        pu.dist(&(&h * &pu)),
        eps,
    )?;
    if let Certification::NotOrderZero(w) = certify_order_zero(phi, tol)? {
        return Err(Error::step(
            "φ(p) ⊥ φ(q) for orthogonal projections p, q",
            w.to_string(),
        ));
    }
    hypotheses.push(Hypothesis {
        name: "φ(p) ⊥ φ(q) for orthogonal projections p, q".into(),
        value: 0.0,
        bound: tol,
        holds: true,
    });

    // ψ(u) = Σ μ_k e_k; keep the eigenvectors with μ_k ≥ √ε
    let f = phi.domain();
    let psi_u = psi.apply(u);
    let cut = eps.sqrt();
    let mut mu = Vec::with_capacity(f.num_blocks());
    let mut kept: Vec<(usize, Mat)> = Vec::new();
    for i in 0..f.num_blocks() {
        let eig = hermitian_eigen(&psi_u.block_matrix(i));
        let cols: Vec<usize> = (0..eig.values.len())
            .filter(|&c| eig.values[c] >= cut)
            .collect();
        if !cols.is_empty() {
            let w = Mat::from_fn(eig.vectors.nrows(), cols.len(), |row, c| {
                eig.vectors[(row, cols[c])]
            });
            kept.push((i, w));
        }
        mu.push(eig.values);
    }
    if kept.is_empty() {
        return Err(Error::step(
            "q = Σ_{μ_k ≥ √ε} e_k",
            format!("no eigenvalue of ψ(u) reaches √ε = {cut:.6}"),
        ));
    }
    let compressed = FiniteDimAlgebra::new(kept.iter().map(|(_, w)| w.ncols()).collect())?;
    let lift = |b: usize, x: &Mat| -> AlgebraElement {
        let (i, w) = &kept[b];
        let mut e = AlgebraElement::zeros(f);
        e.block_mut(*i).copy_from(&(w * x * w.adjoint()));
        e
    };
    let restricted = CPMap::from_fn(compressed.clone(), phi.codomain().clone(), |b, j, k| {
        let r = kept[b].1.ncols();
        let mut e = Mat::from_element(r, r, ZERO);
        e[(j, k)] = ONE;
        phi.apply(&lift(b, &e))
    })?;
    let q_img = restricted.unit_image();
    let q_defect = (&q_img - &(&q_img * &q_img)).norm();
    let quarter = eps.powf(0.25);
    check(
        &mut hypotheses,
        "‖φ(q) − φ(q)²‖ < ε^{1/4}".into(),
        q_defect,
        quarter,
    )?;
    // the tightest admissible γ keeps 12γ + 2√γ meaningful
    let gamma = q_defect * (1.0 + 1e-6) + 1e-12;
    if gamma >= 0.25 {
        return Err(Error::step(
            "perturb φ|F′ to a homomorphism",
            format!("‖φ(q) − φ(q)²‖ = {q_defect:.6e} leaves no γ < 1/4"),
        ));
    }
    let perturbation = perturb_to_hom(&restricted, gamma, tol).map_err(|e| match e {
        Error::PipelineStep { .. } => e,
        other => Error::step("perturb φ|F′ to a homomorphism", other.to_string()),
    })?;

    // qψ(a)q, expressed in the coordinates of F′
    let compress_to_f_prime = |x: &AlgebraElement| -> AlgebraElement {
        let blocks: Vec<Mat> = kept
            .iter()
            .map(|(i, w)| w.adjoint() * x.block_matrix(*i) * w)
            .collect();
        AlgebraElement::from_blocks(&compressed, &blocks).expect("shapes match by construction")
    };
    let mut chain_distances = Vec::with_capacity(a_list.len());
    let mut distances = Vec::with_capacity(a_list.len());
    for a in a_list {
        let y = compress_to_f_prime(&psi.apply(a));
        chain_distances.push(a.dist(&restricted.apply(&y)));
        distances.push(dist_to_hom_image(a, &perturbation.phi_prime)?);
    }
    Ok(AfStep {
        eps,
        hypotheses,
        mu,
        compressed,
        q_defect,
        perturbation,
        chain_distances,
        chain_bound: chain_bound(eps),
        distances,
    })
}

/// `x ↦ x ⊗ d` on `M_n`, the basic order-zero example.
pub fn diagonal_amplification(n: usize, d: &[f64]) -> CPMap {
    let dm = Mat::from_diagonal(&DVector::from_iterator(
        d.len(),
        d.iter().map(|&t| C64::new(t, 0.0)),
    ));
    CPMap::amplification(n, &dm)
}
