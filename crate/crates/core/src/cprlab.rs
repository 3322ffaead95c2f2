//! Completely positive approximations of function systems on finite metric
//! spaces: building them from covers, combining them, and extracting covers of
//! small order back out of them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::covers::{
    cover_order, cover_strict_order, net_cover, partition_of_unity, refines, strict_refinement,
    Cover, FiniteMetricSpace, PartitionOfUnity, RefinementCheck,
};
use crate::cpmap::{
    choi_blocks, strict_order_bounds, tensor_with_identity, CPMap, Codomain, StrictOrderBounds,
    ORTHOGONALITY_TOL,
};
use crate::error::{Error, Result};
use crate::matfun::{apply_function, AlgebraElement, FiniteDimAlgebra, ScalarFunction, Tolerances};
use crate::projkit::{alpha_for, orthogonalize_family};
use crate::sample;

/// Points within this of a `> C` threshold count as above it.
pub const THRESHOLD_TIE: f64 = 1e-12;

/// Slack on `‖φ(1)‖ ≤ 1` and similar norm comparisons.
const NORM_SLACK: f64 = 1e-9;

/// Real functions on the points of a finite metric space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSystem {
    pub space: FiniteMetricSpace,
    pub functions: Vec<Vec<f64>>,
}

impl FunctionSystem {
    pub fn new(space: FiniteMetricSpace, functions: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(i) = functions.iter().position(|f| f.len() != space.len()) {
            return Err(Error::ShapeMismatch(format!(
                "function {i} has {} values on a space of {} points",
                functions[i].len(),
                space.len()
            )));
        }
        Ok(FunctionSystem { space, functions })
    }

    /// The coordinate functions of a space given by coordinates.
    pub fn coordinates(space: &FiniteMetricSpace) -> Vec<Vec<f64>> {
        let Some(coords) = space.coords() else {
            return Vec::new();
        };
        let dim = coords.first().map_or(0, Vec::len);
        (0..dim)
            .map(|k| coords.iter().map(|c| c[k]).collect())
            .collect()
    }

    /// `max(0, 1 − d(x, center)/radius)`.
    pub fn bump(space: &FiniteMetricSpace, center: usize, radius: f64) -> Vec<f64> {
        (0..space.len())
            .map(|x| (1.0 - space.dist(x, center) / radius).max(0.0))
            .collect()
    }

    pub fn elements(&self) -> Vec<AlgebraElement> {
        self.functions
            .iter()
            .map(|f| AlgebraElement::from_real_function(f))
            .collect()
    }

    pub fn sup_norm(f: &[f64]) -> f64 {
        f.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_{x,y ∈ set} |f(x) − f(y)|`.
    pub fn oscillation(f: &[f64], set: &[usize]) -> f64 {
        let (lo, hi) = set
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(f[p]), hi.max(f[p]))
            });
        if set.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

/// A triple `(F, ψ, φ)` with `ψ: C(X, M_r) → F` and `φ: F → C(X, M_r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ApproxRepr")]
pub struct CPApproximation {
    #[serde(rename = "F")]
    pub f: FiniteDimAlgebra,
    pub psi: CPMap,
    pub phi: CPMap,
    /// Evaluation points behind the generators of an abelian `F`, if any.
    pub points: Vec<usize>,
}

#[derive(Deserialize)]
struct ApproxRepr {
    #[serde(rename = "F")]
    f: FiniteDimAlgebra,
    psi: CPMap,
    phi: CPMap,
    #[serde(default)]
    points: Vec<usize>,
}

impl TryFrom<ApproxRepr> for CPApproximation {
    type Error = Error;

    fn try_from(r: ApproxRepr) -> Result<Self> {
        CPApproximation::new(r.f, r.psi, r.phi, r.points)
    }
}

impl CPApproximation {
    pub fn new(f: FiniteDimAlgebra, psi: CPMap, phi: CPMap, points: Vec<usize>) -> Result<Self> {
        let Codomain::Space { points: n, fiber } = *phi.codomain() else {
            return Err(Error::ShapeMismatch(
                "φ must land in functions on a space".into(),
            ));
        };
        if phi.domain() != &f {
            return Err(Error::ShapeMismatch("φ is not defined on F".into()));
        }
        if psi.target() != &f {
            return Err(Error::ShapeMismatch("ψ does not land in F".into()));
        }
        if psi.domain() != &FiniteDimAlgebra::functions(n, fiber) {
            return Err(Error::ShapeMismatch(format!(
                "ψ is not defined on functions on {n} points with fiber {fiber}"
            )));
        }
        if points.iter().any(|&p| p >= n) {
            return Err(Error::ShapeMismatch("evaluation point out of range".into()));
        }
        Ok(CPApproximation {
            f,
            psi,
            phi,
            points,
        })
    }

    /// `F = ℂ^N`, `ψ` and `φ` the identity.
    pub fn identity(n: usize) -> Self {
        let functions: Vec<Vec<f64>> = (0..n)
            .map(|l| (0..n).map(|x| if x == l { 1.0 } else { 0.0 }).collect())
            .collect();
        evaluation_approx(n, (0..n).collect(), &functions).expect("identity shapes agree")
    }

    pub fn space_points(&self) -> usize {
        match *self.phi.codomain() {
            Codomain::Space { points, .. } => points,
            _ => unreachable!("checked in new"),
        }
    }

    pub fn fiber(&self) -> usize {
        match *self.phi.codomain() {
            Codomain::Space { fiber, .. } => fiber,
            _ => unreachable!("checked in new"),
        }
    }

    /// `φψ(a)`.
    pub fn round_trip(&self, a: &AlgebraElement) -> AlgebraElement {
        self.phi.apply(&self.psi.apply(a))
    }

    /// `‖φψ(a) − a‖`.
    pub fn error(&self, a: &AlgebraElement) -> f64 {
        self.round_trip(a).dist(a)
    }

    pub fn error_on(&self, f: &[f64]) -> f64 {
        self.error(&AlgebraElement::from_real_function(f))
    }
}

/// `ψ(a) = (a(x_l))_l` and `φ(e_l) = h_l`.
pub fn evaluation_approx(
    n: usize,
    points: Vec<usize>,
    functions: &[Vec<f64>],
) -> Result<CPApproximation> {
    if points.len() != functions.len() {
        return Err(Error::ShapeMismatch(
            "one evaluation point per function".into(),
        ));
    }
    let s = points.len();
    let f = FiniteDimAlgebra::abelian(s);
    let psi = CPMap::from_fn(
        FiniteDimAlgebra::abelian(n),
        Codomain::Algebra(f.clone()),
        |x, _, _| {
            AlgebraElement::from_real_function(
                &points
                    .iter()
                    .map(|&p| if p == x { 1.0 } else { 0.0 })
                    .collect::<Vec<_>>(),
            )
        },
    )?;
    let phi = CPMap::from_functions(n, functions)?;
    CPApproximation::new(f, psi, phi, points)
}

/// The approximation through the partition of unity of a cover whose members
/// all have exclusive points.
pub fn approx_from_cover(
    space: &FiniteMetricSpace,
    cover: &Cover,
) -> Result<(CPApproximation, PartitionOfUnity)> {
    let pou = partition_of_unity(space, cover)?;
    let points: Vec<usize> = cover
        .exclusive_points()
        .into_iter()
        .enumerate()
        .map(|(l, p)| {
            p.ok_or_else(|| Error::precondition(format!("member {l} has no exclusive point")))
        })
        .collect::<Result<_>>()?;
    let approx = evaluation_approx(space.len(), points, &pou.weights)?;
    Ok((approx, pou))
}

/// An approximation from [`build_cp_approx`] with the data it was built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuiltApproximation {
    pub approx: CPApproximation,
    /// Supports of the `φ(e_l)`.
    pub cover: Cover,
    pub radius: f64,
    /// Order of the level-set refinement the cover was pruned from.
    pub refinement_order: usize,
    pub strict_order: usize,
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub eps: f64,
}

/// Builds `(ℂ^s, ψ, φ)` with `‖φψ(a) − a‖ < ε` for every given function.
///
/// The radius of a seeded net cover shrinks until every member of its pruned
/// level-set refinement has oscillation below `2ε/3` for all functions.
pub fn build_cp_approx(
    space: &FiniteMetricSpace,
    functions: &[Vec<f64>],
    eps: f64,
    seed: u64,
) -> Result<BuiltApproximation> {
    if !(eps > 0.0) {
        return Err(Error::precondition("ε must be positive"));
    }
    if let Some(i) = functions.iter().position(|f| f.len() != space.len()) {
        return Err(Error::ShapeMismatch(format!(
            "function {i} has the wrong length"
        )));
    }
    let floor = space.separation() / 4.0;
    let mut radius = space.diameter().max(floor);
    let (cover, refinement_order) = loop {
        let base = if radius < floor {
            Cover::singletons(space.len())
        } else {
            net_cover(space, radius, radius / 2.0, seed)?
        };
        let refinement = strict_refinement(space, &base)?;
        let pruned = refinement.cover.prune_to_exclusive();
        let fine = pruned.members().iter().all(|m| {
            functions
                .iter()
                .all(|f| FunctionSystem::oscillation(f, m) < 2.0 * eps / 3.0)
        });
        if fine || radius < floor {
            break (pruned, cover_order(&refinement.cover));
        }
        radius /= 2.0;
    };
    let (approx, _) = approx_from_cover(space, &cover)?;
    let errors: Vec<f64> = functions.iter().map(|f| approx.error_on(f)).collect();
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    if max_error > eps {
        return Err(Error::Numerical(format!(
            "builder error {max_error:.3e} exceeds ε = {eps}"
        )));
    }
    let strict_order = cover_strict_order(&cover).0;
    Ok(BuiltApproximation {
        approx,
        cover,
        radius,
        refinement_order,
        strict_order,
        errors,
        max_error,
        eps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapVerdict {
    pub completely_positive: bool,
    pub min_choi_eigenvalue: f64,
    /// `‖φ(1)‖`, the norm when the map is completely positive.
    pub unit_norm: f64,
    pub contractive: bool,
}

fn map_verdict(phi: &CPMap) -> MapVerdict {
    let unit_norm = phi.unit_image().norm();
    match choi_blocks(phi) {
        Ok(rep) => MapVerdict {
            completely_positive: rep.completely_positive,
            min_choi_eigenvalue: rep.min_eigenvalue,
            unit_norm,
            contractive: rep.completely_positive && unit_norm <= 1.0 + NORM_SLACK,
        },
        Err(_) => MapVerdict {
            completely_positive: false,
            min_choi_eigenvalue: f64::NEG_INFINITY,
            unit_norm,
            contractive: false,
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub eps: f64,
    pub within: bool,
    pub psi: MapVerdict,
    pub phi: MapVerdict,
    pub strict_order: Option<StrictOrderBounds>,
}

/// Errors `‖φψ(a) − a‖`, map verdicts and strict-order bounds of `φ`.
pub fn verify_cp_approx(
    approx: &CPApproximation,
    elements: &[AlgebraElement],
    eps: f64,
    seed: u64,
) -> Result<VerifyReport> {
    let domain = approx.psi.domain();
    if let Some(i) = elements.iter().position(|a| a.algebra() != domain) {
        return Err(Error::ShapeMismatch(format!(
            "element {i} is not a function on the space"
        )));
    }
    let errors: Vec<f64> = elements.iter().map(|a| approx.error(a)).collect();
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    let phi = map_verdict(&approx.phi);
    let strict_order = if phi.completely_positive {
        Some(strict_order_bounds(&approx.phi, ORTHOGONALITY_TOL, seed)?)
    } else {
        None
    };
    Ok(VerifyReport {
        within: max_error <= eps,
        errors,
        max_error,
        eps,
        psi: map_verdict(&approx.psi),
        phi,
        strict_order,
    })
}

/// `(F ⊗ M_r, ψ ⊗ id, φ ⊗ id)`, an approximation of `M_r`-valued functions.
pub fn tensor_approx(approx: &CPApproximation, r: usize) -> Result<CPApproximation> {
    CPApproximation::new(
        approx.f.tensor(r),
        tensor_with_identity(&approx.psi, r)?,
        tensor_with_identity(&approx.phi, r)?,
        approx.points.clone(),
    )
}

/// The block-diagonal sum of two maps with the given codomain.
fn sum_maps(a: &CPMap, b: &CPMap, codomain: Codomain) -> Result<CPMap> {
    let zero_a = AlgebraElement::zeros(a.target());
    let zero_b = AlgebraElement::zeros(b.target());
    let images = a
        .images()
        .iter()
        .map(|x| x.direct_sum(&zero_b))
        .chain(b.images().iter().map(|y| zero_a.direct_sum(y)))
        .collect();
    CPMap::new(a.domain().direct_sum(b.domain()), codomain, images)
}

/// `(⊕F_k, ⊕ψ_k, ⊕φ_k)` on the disjoint union of the underlying spaces.
pub fn direct_sum_approx(parts: &[CPApproximation]) -> Result<CPApproximation> {
    let (first, rest) = parts
        .split_first()
        .ok_or_else(|| Error::precondition("no approximations to sum"))?;
    let fiber = first.fiber();
    let mut acc = first.clone();
    for b in rest {
        if b.fiber() != fiber {
            return Err(Error::ShapeMismatch(
                "summands have different fibers".into(),
            ));
        }
        let n = acc.space_points() + b.space_points();
        let f = acc.f.direct_sum(&b.f);
        let psi = sum_maps(&acc.psi, &b.psi, Codomain::Algebra(f.clone()))?;
        let phi = sum_maps(&acc.phi, &b.phi, Codomain::Space { points: n, fiber })?;
        let shift = acc.space_points();
        let points = if acc.points.is_empty() == b.points.is_empty() {
            acc.points
                .iter()
                .copied()
                .chain(b.points.iter().map(|p| p + shift))
                .collect()
        } else {
            Vec::new()
        };
        acc = CPApproximation::new(f, psi, phi, points)?;
    }
    Ok(acc)
}

/// The identity of `C(X)` routed through `⊕_g M_{|g|}`.
///
/// Group `g` gets a Haar unitary `u`; `ψ(a)_g = u diag(a(g_1), …) u*` and
/// `φ(y)(g_k) = ⟨u e_k, y u e_k⟩`. The groups must partition the points.
pub fn block_identity_approx(
    n: usize,
    groups: &[Vec<usize>],
    seed: u64,
) -> Result<CPApproximation> {
    let mut owner = vec![None; n];
    for (g, group) in groups.iter().enumerate() {
        for (k, &p) in group.iter().enumerate() {
            if p >= n || owner[p].is_some() {
                return Err(Error::precondition("groups must partition the points"));
            }
            owner[p] = Some((g, k));
        }
    }
    if owner.iter().any(Option::is_none) {
        return Err(Error::precondition("groups must partition the points"));
    }
    let f = FiniteDimAlgebra::new(groups.iter().map(Vec::len).collect())?;
    let mut rng = sample::rng(seed);
    let unitaries: Vec<_> = groups
        .iter()
        .map(|g| sample::haar_unitary(&mut rng, g.len()))
        .collect();
    let psi = CPMap::from_fn(
        FiniteDimAlgebra::abelian(n),
        Codomain::Algebra(f.clone()),
        |x, _, _| {
            let (g, k) = owner[x].expect("checked above");
            let col = unitaries[g].column(k);
            let mut out = AlgebraElement::zeros(&f);
            out.block_mut(g).copy_from(&(col * col.adjoint()));
            out
        },
    )?;
    let target = FiniteDimAlgebra::abelian(n);
    let phi = CPMap::from_fn(
        f.clone(),
        Codomain::Space {
            points: n,
            fiber: 1,
        },
        |g, a, b| {
            let mut out = AlgebraElement::zeros(&target);
            for (k, &p) in groups[g].iter().enumerate() {
                let u = &unitaries[g];
                out.block_mut(p)[(0, 0)] = u[(a, k)].conj() * u[(b, k)];
            }
            out
        },
    )?;
    CPApproximation::new(f, psi, phi, Vec::new())
}

/// The constants of the extraction pipeline for order parameter `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConstants {
    pub n: usize,
    /// `1/(2(n+1))`.
    pub c: f64,
    /// `C/2`.
    pub beta: f64,
    pub alpha: f64,
    /// `1/α`.
    pub theta: f64,
    /// `(1 − θ) C/2`.
    pub eta: f64,
}

impl ExtractionConstants {
    pub fn new(n: usize) -> Self {
        let c = 1.0 / (2.0 * (n as f64 + 1.0));
        let beta = c / 2.0;
        let alpha = alpha_for(n + 1, beta, Some(n));
        let theta = 1.0 / alpha;
        let eta = (1.0 - theta) * c / 2.0;
        ExtractionConstants {
            n,
            c,
            beta,
            alpha,
            theta,
            eta,
        }
    }
}

/// The fine cover `(V_λ)` the pipeline works with, and its partition of unity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionPlan {
    pub constants: ExtractionConstants,
    /// `1/|Γ|`.
    pub eps_u: f64,
    /// Modulus of continuity of the partition of unity of `U` at level `1/|Γ|`;
    /// `None` when no pair of points is far enough apart in value.
    pub delta: Option<f64>,
    /// `δ/(3(n+1))`, the bound on member diameters.
    pub diameter_bound: Option<f64>,
    pub v: Cover,
    pub h: PartitionOfUnity,
}

/// Largest `δ` with `d(x,y) < δ ⇒ |f_γ(x) − f_γ(y)| < ε` for all `γ`.
fn modulus(space: &FiniteMetricSpace, pou: &PartitionOfUnity, eps: f64) -> Option<f64> {
    let mut delta: Option<f64> = None;
    for x in 0..space.len() {
        for y in x + 1..space.len() {
            let jump = pou
                .weights
                .iter()
                .map(|w| (w[x] - w[y]).abs())
                .fold(0.0, f64::max);
            if jump >= eps {
                let d = space.dist(x, y);
                delta = Some(delta.map_or(d, |m: f64| m.min(d)));
            }
        }
    }
    delta
}

/// Deterministic choice of `(V_λ)` with `diam V_λ < δ/(3(n+1))` and exclusive points.
pub fn extraction_plan(
    space: &FiniteMetricSpace,
    u: &Cover,
    n: usize,
    seed: u64,
) -> Result<ExtractionPlan> {
    u.check_covers(space)?;
    let constants = ExtractionConstants::new(n);
    let f = partition_of_unity(space, u)?;
    let eps_u = 1.0 / u.len() as f64;
    let delta = modulus(space, &f, eps_u);
    let diameter_bound = delta.map(|d| d / (3.0 * (n as f64 + 1.0)));
    let v = match diameter_bound {
        None => Cover::new(vec![(0..space.len()).collect()]),
        Some(bound) => {
            let floor = space.separation() / 4.0;
            let mut radius = bound.min(space.diameter());
            loop {
                if radius < floor {
                    break Cover::singletons(space.len());
                }
                let c = net_cover(space, radius, radius / 2.0, seed)?.prune_to_exclusive();
                if c.members().iter().all(|m| space.set_diameter(m) < bound) {
                    break c;
                }
                radius *= 0.8;
            }
        }
    };
    let h = partition_of_unity(space, &v)?;
    Ok(ExtractionPlan {
        constants,
        eps_u,
        delta,
        diameter_bound,
        v,
        h,
    })
}

/// One measured inequality of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `<` when true, `≤` otherwise.
    pub strict: bool,
    pub holds: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<String>,
}

#[derive(Default)]
struct Steps(Vec<StepCheck>);

impl Steps {
    fn check(
        &mut self,
        name: &str,
        value: f64,
        bound: f64,
        strict: bool,
        at: Option<String>,
    ) -> Result<()> {
        let holds = if strict {
            value < bound
        } else {
            value <= bound
        };
        let detail = format!(
            "measured {value:.6e}, bound {bound:.6e}{}",
            at.as_ref().map_or(String::new(), |a| format!(" at {a}"))
        );
        self.0.push(StepCheck {
            name: name.into(),
            value,
            bound,
            strict,
            holds,
            at,
        });
        if holds {
            Ok(())
        } else {
            Err(Error::step(name, detail))
        }
    }

    /// Keeps the worst measurement over a family under one name.
    fn worst(
        &mut self,
        name: &str,
        items: impl IntoIterator<Item = (f64, String)>,
        bound: f64,
        strict: bool,
    ) -> Result<()> {
        let mut value = f64::NEG_INFINITY;
        let mut at = None;
        for (v, a) in items {
            if v > value {
                value = v;
                at = Some(a);
            }
        }
        if at.is_none() {
            return Ok(());
        }
        self.check(name, value, bound, strict, at)
    }
}

/// Data of one block `F_j = M_{r_j}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockReport {
    pub block: usize,
    pub size: usize,
    /// `A_j = {x : φ(1_j)(x) > C}`.
    pub a: Vec<usize>,
    /// `Λ_j = {λ : V_λ ∩ A_j ≠ ∅}`.
    pub lambda: Vec<usize>,
    /// Equivalence classes `Λ_j^(i)`.
    pub classes: Vec<Vec<usize>>,
    /// `Ṽ_j^(i) = ⋃_{λ ∈ Λ_j^(i)} V_λ ∩ A_j`.
    pub v_tilde: Vec<Vec<usize>>,
    /// `q_j^(i) = g_θ(ψ_j(h_j^(i)))` as elements of `M_{r_j}`.
    pub q: Vec<AlgebraElement>,
    /// Pairwise orthogonal `p_j^(i)` near the `q_j^(i)`.
    pub p: Vec<AlgebraElement>,
    /// `W_j^(i) = {x : φ(p_j^(i))(x) > C}`.
    pub w: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub constants: ExtractionConstants,
    pub plan: ExtractionPlan,
    pub strict_order: StrictOrderBounds,
    pub steps: Vec<StepCheck>,
    pub blocks: Vec<BlockReport>,
    #[serde(rename = "W")]
    pub w: Cover,
    pub order: usize,
    pub refines: bool,
    /// Member of `U` containing each member of `W`.
    pub refinement: RefinementCheck,
}

fn on_block(f: &FiniteDimAlgebra, j: usize, m: &AlgebraElement) -> AlgebraElement {
    let mut out = AlgebraElement::zeros(f);
    out.block_mut(j).copy_from(&m.block(0));
    out
}

fn real_values(a: &AlgebraElement) -> Vec<f64> {
    a.as_slice().iter().map(|z| z.re).collect()
}

fn fmt_set(name: &str, j: usize, i: usize) -> String {
    format!("{name}_{}^({})", j + 1, i + 1)
}

/// Extracts a cover of order at most `n` refining `u` from an approximation of
/// strict order at most `n`.
///
/// The approximation must approximate the sums of the plan's partition of
/// unity within `η`; [`extraction_plan`] with the same seed gives the plan.
/// A failed inequality is reported as a pipeline step naming it.
pub fn extract_cover(
    space: &FiniteMetricSpace,
    u: &Cover,
    n: usize,
    approx: &CPApproximation,
    seed: u64,
) -> Result<ExtractionReport> {
    let big_n = space.len();
    if approx.space_points() != big_n || approx.fiber() != 1 {
        return Err(Error::ShapeMismatch(
            "the approximation is not one of scalar functions on this space".into(),
        ));
    }
    for (name, map) in [("ψ", &approx.psi), ("φ", &approx.phi)] {
        let v = map_verdict(map);
        if !v.contractive {
            return Err(Error::precondition(format!(
                "{name} is not a completely positive contraction (‖{name}(1)‖ = {:.6})",
                v.unit_norm
            )));
        }
    }
    let strict_order = strict_order_bounds(&approx.phi, ORTHOGONALITY_TOL, seed)?;
    if strict_order.upper > n {
        return Err(Error::precondition(format!(
            "strict order of φ is only bounded by {} > n = {n}",
            strict_order.upper
        )));
    }
    let plan = extraction_plan(space, u, n, seed)?;
    let k = plan.constants;
    let tol = Tolerances::default();
    let mut steps = Steps::default();

    steps.check(
        "η/C ≤ 1/(n+2)",
        k.eta / k.c,
        1.0 / (n as f64 + 2.0),
        false,
        None,
    )?;
    steps.check(
        "|β − 1/(4(n+1))| = 0",
        (k.beta - 1.0 / (4.0 * (n as f64 + 1.0))).abs(),
        0.0,
        false,
        None,
    )?;
    steps.check(
        "1 < α ≤ (n+2)/n",
        k.alpha,
        if n == 0 {
            f64::INFINITY
        } else {
            (n as f64 + 2.0) / n as f64
        },
        false,
        None,
    )?;

    let f = &approx.f;
    let membership = plan.v.membership(big_n);
    let unit = real_values(&approx.phi.unit_image());
    steps.worst(
        "|φ(1_F)(x) − 1| < η",
        unit.iter()
            .enumerate()
            .map(|(x, v)| ((v - 1.0).abs(), format!("x = {x}"))),
        k.eta,
        true,
    )?;

    let mut cache: BTreeMap<Vec<usize>, (Vec<f64>, AlgebraElement)> = BTreeMap::new();
    let mut psi_of = |set: &[usize]| {
        cache
            .entry(set.to_vec())
            .or_insert_with(|| {
                let h = plan.h.sum_over(set);
                let ph = approx.psi.apply(&AlgebraElement::from_real_function(&h));
                (h, ph)
            })
            .clone()
    };

    let mut blocks = Vec::new();
    for j in 0..f.num_blocks() {
        let r = f.block_size(j);
        let one_j = AlgebraElement::block_unit(f, j);
        let phi_one_j = real_values(&approx.phi.apply(&one_j));
        if r > n + 1 && phi_one_j.iter().any(|&v| v > THRESHOLD_TIE) {
            steps.check(
                "r_j ≤ n+1",
                r as f64,
                (n + 1) as f64,
                false,
                Some(format!("j = {}", j + 1)),
            )?;
        }
        let a: Vec<usize> = (0..big_n)
            .filter(|&x| phi_one_j[x] > k.c - THRESHOLD_TIE)
            .collect();
        if a.is_empty() {
            continue;
        }

        // Classes of the relation V_λ1 ∩ V_λ2 ∩ A_j ≠ ∅.
        let mut parent: Vec<usize> = (0..plan.v.len()).collect();
        fn root(parent: &mut [usize], mut l: usize) -> usize {
            while parent[l] != l {
                parent[l] = parent[parent[l]];
                l = parent[l];
            }
            l
        }
        let mut in_lambda = vec![false; plan.v.len()];
        for &x in &a {
            let ls = &membership[x];
            for &l in ls {
                in_lambda[l] = true;
            }
            for w in ls.windows(2) {
                let (ra, rb) = (root(&mut parent, w[0]), root(&mut parent, w[1]));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let lambda: Vec<usize> = (0..plan.v.len()).filter(|&l| in_lambda[l]).collect();
        let mut class_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &l in &lambda {
            class_of.entry(root(&mut parent, l)).or_default().push(l);
        }
        let classes: Vec<Vec<usize>> = class_of.into_values().collect();
        let v_tilde: Vec<Vec<usize>> = classes
            .iter()
            .map(|cls| {
                a.iter()
                    .copied()
                    .filter(|&x| membership[x].iter().any(|l| cls.contains(l)))
                    .collect()
            })
            .collect();

        let mut qs = Vec::new();
        for (i, cls) in classes.iter().enumerate() {
            let vt = &v_tilde[i];
            let (h, psi_h) = psi_of(cls);
            let err = approx
                .phi
                .apply(&psi_h)
                .dist(&AlgebraElement::from_real_function(&h));
            steps.check(
                "‖φψ(h_j^(i)) − h_j^(i)‖ < η",
                err,
                k.eta,
                true,
                Some(fmt_set("h", j, i)),
            )?;
            steps.worst(
                "h_j^(i)(x) = 1 on Ṽ_j^(i)",
                vt.iter().map(|&x| {
                    (
                        (h[x] - 1.0).abs(),
                        format!("x = {x}, {}", fmt_set("Ṽ", j, i)),
                    )
                }),
                1e-12,
                false,
            )?;
            let psi_j = AlgebraElement::from_matrix(psi_h.block_matrix(j));
            let gap = real_values(&approx.phi.apply(&on_block(
                f,
                j,
                &(&AlgebraElement::identity(psi_j.algebra()) - &psi_j),
            )));
            steps.worst(
                "φ(1_j − ψ_j(h_j^(i)))(x) < η on Ṽ_j^(i)",
                vt.iter()
                    .map(|&x| (gap[x], format!("x = {x}, {}", fmt_set("Ṽ", j, i)))),
                k.eta,
                true,
            )?;
            let q = apply_function(
                &psi_j,
                &ScalarFunction::Threshold { alpha: k.theta },
                tol.identity,
            )?;
            let rest = real_values(&approx.phi.apply(&on_block(
                f,
                j,
                &(&AlgebraElement::identity(q.algebra()) - &q),
            )));
            steps.worst(
                "φ(1_j − q_j^(i))(x) < C/2 on Ṽ_j^(i)",
                vt.iter()
                    .map(|&x| (rest[x], format!("x = {x}, {}", fmt_set("Ṽ", j, i)))),
                k.c / 2.0,
                true,
            )?;
            qs.push(q);
        }

        let mut sum = AlgebraElement::zeros(qs[0].algebra());
        for q in &qs {
            sum = &sum + q;
        }
        steps.check(
            "‖Σ_i q_j^(i)‖ ≤ α",
            sum.norm(),
            k.alpha + tol.identity,
            false,
            Some(format!("j = {}", j + 1)),
        )?;
        let family = orthogonalize_family(&qs, k.alpha, tol)
            .map_err(|e| Error::step("orthogonalize q_j^(i)", format!("j = {}: {e}", j + 1)))?;
        let ps = family.projections;
        steps.worst(
            "‖p_j^(i) − q_j^(i)‖ < β",
            ps.iter()
                .zip(&qs)
                .enumerate()
                .map(|(i, (p, q))| (p.dist(q), fmt_set("p", j, i))),
            k.beta,
            true,
        )?;

        let phi_p: Vec<Vec<f64>> = ps
            .iter()
            .map(|p| real_values(&approx.phi.apply(&on_block(f, j, p))))
            .collect();
        let mut star = Vec::new();
        for (i, vt) in v_tilde.iter().enumerate() {
            let comp = real_values(&approx.phi.apply(&on_block(
                f,
                j,
                &(&AlgebraElement::identity(ps[i].algebra()) - &ps[i]),
            )));
            star.extend(
                vt.iter()
                    .map(|&x| (comp[x], format!("x = {x}, {}", fmt_set("Ṽ", j, i)))),
            );
        }
        steps.worst(
            "φ(1_j − p_j^(i'))(x) < C/2 + β = C on Ṽ_j^(i')",
            star,
            k.c,
            true,
        )?;

        let w: Vec<Vec<usize>> = phi_p
            .iter()
            .map(|vals| {
                (0..big_n)
                    .filter(|&x| vals[x] > k.c - THRESHOLD_TIE)
                    .collect()
            })
            .collect();
        let mut outside: Vec<(f64, String)> = Vec::new();
        for (i, wi) in w.iter().enumerate() {
            for &x in wi.iter().filter(|x| !v_tilde[i].contains(x)) {
                outside.push((1.0, format!("x = {x}, {}", fmt_set("W", j, i))));
            }
        }
        steps.check(
            "W_j^(i) ⊂ Ṽ_j^(i)",
            outside.len() as f64,
            0.0,
            false,
            outside.first().map(|o| o.1.clone()),
        )?;
        if let Some(delta) = plan.delta {
            steps.worst(
                "diam Ṽ_j^(i) < δ",
                v_tilde
                    .iter()
                    .enumerate()
                    .map(|(i, vt)| (space.set_diameter(vt), fmt_set("Ṽ", j, i))),
                delta,
                true,
            )?;
        }
        let v_cover = Cover::new(v_tilde.clone());
        let fit = refines(&v_cover, u);
        steps.check(
            "Ṽ_j^(i) ⊂ U_γ for some γ",
            fit.assignment.iter().filter(|a| a.is_none()).count() as f64,
            0.0,
            false,
            fit.first_failure.map(|i| fmt_set("Ṽ", j, i)),
        )?;

        blocks.push(BlockReport {
            block: j,
            size: r,
            a,
            lambda,
            classes,
            v_tilde,
            q: qs,
            p: ps,
            w,
        });
    }

    let w = Cover::new(
        blocks
            .iter()
            .flat_map(|b| b.w.iter().filter(|m| !m.is_empty()).cloned())
            .collect(),
    );
    let uncovered = w.uncovered(big_n);
    steps.check(
        "W covers X",
        uncovered.len() as f64,
        0.0,
        false,
        uncovered.first().map(|x| format!("x = {x}")),
    )?;
    let order = cover_order(&w);
    steps.check("ord(W) ≤ n", order as f64, n as f64, false, None)?;
    let refinement = refines(&w, u);
    steps.check(
        "W refines U",
        refinement.assignment.iter().filter(|a| a.is_none()).count() as f64,
        0.0,
        false,
        refinement.first_failure.map(|i| format!("W member {i}")),
    )?;

    Ok(ExtractionReport {
        constants: k,
        plan,
        strict_order,
        steps: steps.0,
        blocks,
        w,
        order,
        refines: refinement.refines,
        refinement,
    })
}

/// Per-scale evidence of [`estimate_cpr_commutative`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleEvidence {
    pub scale: f64,
    pub members: usize,
    pub cover_order: usize,
    pub refinement_members: usize,
    pub refinement_strict_order: usize,
    /// Strict order of `φ` for the approximation through the pruned refinement.
    pub approx_strict_order: usize,
    /// Largest error of that approximation on the probe functions.
    pub probe_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimate {
    /// Smallest refinement strict order over the probed scales.
    pub value: usize,
    pub evidence: Vec<ScaleEvidence>,
}

/// Strict order achievable at the given scales.
///
/// At each scale a net cover with margin `scale/2` is refined by level sets;
/// the value is the least strict order of these refinements.
pub fn estimate_cpr_commutative(
    space: &FiniteMetricSpace,
    scales: &[f64],
    probes: &[Vec<f64>],
    seed: u64,
) -> Result<Estimate> {
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::precondition("scales must be positive and non-empty"));
    }
    let mut evidence = Vec::with_capacity(scales.len());
    for &scale in scales {
        let cover = net_cover(space, scale, scale / 2.0, seed)?;
        let refinement = strict_refinement(space, &cover)?;
        let (approx, _) = approx_from_cover(space, &refinement.cover.prune_to_exclusive())?;
        let approx_strict_order = strict_order_bounds(&approx.phi, ORTHOGONALITY_TOL, seed)?.upper;
        let probe_error = probes
            .iter()
            .map(|p| approx.error_on(p))
            .fold(0.0, f64::max);
        evidence.push(ScaleEvidence {
            scale,
            members: cover.len(),
            cover_order: cover_order(&cover),
            refinement_members: refinement.cover.len(),
            refinement_strict_order: cover_strict_order(&refinement.cover).0,
            approx_strict_order,
            probe_error,
        });
    }
    let value = evidence
        .iter()
        .map(|e| e.refinement_strict_order)
        .min()
        .unwrap_or(0);
    Ok(Estimate { value, evidence })
}
