//! Finite metric spaces, covers by point sets, nerves and barycentric
//! subdivision, and the level-set refinement that brings the strict order of
//! a cover down to its order.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::clique::{max_clique, Graph};
use crate::error::{Error, Result};
use crate::sample;

/// Weights closer than this count as one level.
pub const LEVEL_TIE: f64 = 1e-12;

/// A finite set of points with a metric, optionally given by euclidean coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMetricSpace {
    n: usize,
    metric: Vec<f64>,
    coords: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleViolation {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    /// `d(i,k) − d(i,j) − d(j,k)`.
    pub excess: f64,
}

impl FiniteMetricSpace {
    /// Checks symmetry, zero diagonal and positive off-diagonal entries exactly.
    pub fn from_metric(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidAlgebra("empty space".into()));
        }
        let mut metric = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "metric row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            metric.extend_from_slice(row);
        }
        for i in 0..n {
            if metric[i * n + i] != 0.0 {
                return Err(Error::precondition(format!("d({i},{i}) is not zero")));
            }
            for j in i + 1..n {
                let d = metric[i * n + j];
                if d != metric[j * n + i] {
                    return Err(Error::precondition(format!("d({i},{j}) ≠ d({j},{i})")));
                }
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::precondition(format!(
                        "d({i},{j}) = {d} is not a positive distance"
                    )));
                }
            }
        }
        Ok(FiniteMetricSpace {
            n,
            metric,
            coords: None,
        })
    }

    /// Euclidean metric on the given points.
    pub fn from_coords(coords: Vec<Vec<f64>>) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::InvalidAlgebra("empty space".into()));
        }
        let dim = coords[0].len();
        if coords.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch("points of different dimension".into()));
        }
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let d = coords[i]
                    .iter()
                    .zip(&coords[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                rows[i][j] = d;
                rows[j][i] = d;
            }
        }
        let mut space = FiniteMetricSpace::from_metric(rows)?;
        space.coords = Some(coords);
        Ok(space)
    }

    /// `n` equally spaced points of `[0, 1]`.
    pub fn interval_grid(n: usize) -> Result<Self> {
        let step = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
        FiniteMetricSpace::from_coords((0..n).map(|i| vec![i as f64 * step]).collect())
    }

    /// `n` equally spaced points of the unit circle in the plane.
    pub fn circle_grid(n: usize) -> Result<Self> {
        FiniteMetricSpace::from_coords(
            (0..n)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect(),
        )
    }

    /// `n × m` grid on the flat torus `S¹ × S¹ ⊂ ℝ⁴`.
    pub fn torus_grid(n: usize, m: usize) -> Result<Self> {
        let mut coords = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            for j in 0..m {
                let b = std::f64::consts::TAU * j as f64 / m as f64;
                coords.push(vec![a.cos(), a.sin(), b.cos(), b.sin()]);
            }
        }
        FiniteMetricSpace::from_coords(coords)
    }

    /// Disjoint union; points of different parts are `max(diam) + gap` apart.
    pub fn disjoint_union(&self, other: &Self, gap: f64) -> Result<Self> {
        if !(gap > 0.0) {
            return Err(Error::precondition("gap must be positive"));
        }
        let n = self.n + other.n;
        let cross = self.diameter().max(other.diameter()) + gap;
        let mut rows = vec![vec![cross; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i < self.n && j < self.n {
                    rows[i][j] = self.dist(i, j);
                } else if i >= self.n && j >= self.n {
                    rows[i][j] = other.dist(i - self.n, j - self.n);
                }
            }
        }
        FiniteMetricSpace::from_metric(rows)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.metric[i * self.n + j]
    }

    pub fn coords(&self) -> Option<&[Vec<f64>]> {
        self.coords.as_deref()
    }

    pub fn diameter(&self) -> f64 {
        self.metric.iter().copied().fold(0.0, f64::max)
    }

    /// Largest distance within a point set.
    pub fn set_diameter(&self, set: &[usize]) -> f64 {
        let mut d = 0.0f64;
        for (a, &i) in set.iter().enumerate() {
            for &j in &set[a + 1..] {
                d = d.max(self.dist(i, j));
            }
        }
        d
    }

    /// Smallest distance between distinct points.
    pub fn separation(&self) -> f64 {
        let mut d = f64::INFINITY;
        for i in 0..self.n {
            for j in i + 1..self.n {
                d = d.min(self.dist(i, j));
            }
        }
        d
    }

    /// The worst violation of the triangle inequality, if any exceeds `tol`.
    pub fn triangle_violation(&self, tol: f64) -> Option<TriangleViolation> {
        let mut worst: Option<TriangleViolation> = None;
        for i in 0..self.n {
            for k in i + 1..self.n {
                let dik = self.dist(i, k);
                for j in 0..self.n {
                    let excess = dik - self.dist(i, j) - self.dist(j, k);
                    if excess > tol && worst.is_none_or(|w| excess > w.excess) {
                        worst = Some(TriangleViolation { i, j, k, excess });
                    }
                }
            }
        }
        worst
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.metric.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpaceRepr {
    Coords {
        coords: Vec<Vec<f64>>,
        metric: String,
    },
    Metric {
        metric: Vec<Vec<f64>>,
    },
}

impl Serialize for FiniteMetricSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.coords {
            Some(c) => SpaceRepr::Coords {
                coords: c.clone(),
                metric: "euclidean".into(),
            },
            None => SpaceRepr::Metric {
                metric: self.rows(),
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FiniteMetricSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match SpaceRepr::deserialize(d)? {
            SpaceRepr::Coords { coords, metric } => {
                if metric != "euclidean" {
                    return Err(D::Error::custom(format!("unknown metric {metric:?}")));
                }
                FiniteMetricSpace::from_coords(coords)
            }
            SpaceRepr::Metric { metric } => FiniteMetricSpace::from_metric(metric),
        }
        .map_err(D::Error::custom)
    }
}

/// A family of point sets. Members are kept sorted and free of repeats.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cover {
    members: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct CoverRepr {
    members: Vec<Vec<usize>>,
}

impl<'de> Deserialize<'de> for Cover {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Cover::new(CoverRepr::deserialize(d)?.members))
    }
}

impl Cover {
    pub fn new(members: Vec<Vec<usize>>) -> Self {
        let members = members
            .into_iter()
            .map(|mut m| {
                m.sort_unstable();
                m.dedup();
                m
            })
            .collect();
        Cover { members }
    }

    /// One member per point.
    pub fn singletons(n: usize) -> Self {
        Cover::new((0..n).map(|i| vec![i]).collect())
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// One past the largest point index mentioned.
    pub fn point_bound(&self) -> usize {
        self.members
            .iter()
            .filter_map(|m| m.last())
            .max()
            .map_or(0, |&p| p + 1)
    }

    /// For each of the first `n` points, the members containing it.
    pub fn membership(&self, n: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n.max(self.point_bound())];
        for (l, m) in self.members.iter().enumerate() {
            for &p in m {
                out[p].push(l);
            }
        }
        out
    }

    pub fn uncovered(&self, n: usize) -> Vec<usize> {
        self.membership(n)
            .iter()
            .take(n)
            .enumerate()
            .filter(|(_, ls)| ls.is_empty())
            .map(|(p, _)| p)
            .collect()
    }

    pub fn is_covering(&self, n: usize) -> bool {
        self.point_bound() <= n && self.uncovered(n).is_empty()
    }

    /// Errors on indices outside the space or uncovered points.
    pub fn check_covers(&self, space: &FiniteMetricSpace) -> Result<()> {
        let n = space.len();
        if self.point_bound() > n {
            return Err(Error::ShapeMismatch(format!(
                "cover mentions point {} in a space of {n} points",
                self.point_bound() - 1
            )));
        }
        if let Some(&p) = self.uncovered(n).first() {
            return Err(Error::precondition(format!("point {p} is not covered")));
        }
        Ok(())
    }

    /// Drops repeated members, keeping first occurrences.
    pub fn dedup(&self) -> Cover {
        let mut seen = BTreeSet::new();
        Cover {
            members: self
                .members
                .iter()
                .filter(|m| seen.insert((*m).clone()))
                .cloned()
                .collect(),
        }
    }

    /// Removes members without a point of their own until every member has one.
    ///
    /// Smaller members are tried first. Removing a member never takes an
    /// exclusive point away from another, so one pass suffices.
    pub fn prune_to_exclusive(&self) -> Cover {
        let base = self.dedup();
        let mut count = vec![0usize; base.point_bound()];
        for m in &base.members {
            for &p in m {
                count[p] += 1;
            }
        }
        let mut order: Vec<usize> = (0..base.len()).collect();
        order.sort_by_key(|&l| (base.members[l].len(), l));
        let mut keep = vec![true; base.len()];
        for l in order {
            let m = &base.members[l];
            if m.iter().all(|&p| count[p] > 1) {
                keep[l] = false;
                for &p in m {
                    count[p] -= 1;
                }
            }
        }
        Cover {
            members: base
                .members
                .into_iter()
                .zip(keep)
                .filter_map(|(m, k)| k.then_some(m))
                .collect(),
        }
    }

    /// For each member, a point lying in no other member.
    pub fn exclusive_points(&self) -> Vec<Option<usize>> {
        let mut count = vec![0usize; self.point_bound()];
        for m in &self.members {
            for &p in m {
                count[p] += 1;
            }
        }
        self.members
            .iter()
            .map(|m| m.iter().copied().find(|&p| count[p] == 1))
            .collect()
    }

    /// Graph on members with an edge for every intersecting pair.
    pub fn intersection_graph(&self) -> Graph {
        let mut g = Graph::new(self.len());
        for ls in self.membership(0) {
            for (a, &l) in ls.iter().enumerate() {
                for &m in &ls[a + 1..] {
                    g.add_edge(l, m);
                }
            }
        }
        g
    }
}

/// Largest number of members through one point, minus one.
pub fn cover_order(cover: &Cover) -> usize {
    cover
        .membership(0)
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(0)
        .saturating_sub(1)
}

/// Clique number of the intersection graph minus one, with a maximum clique.
pub fn cover_strict_order(cover: &Cover) -> (usize, Vec<usize>) {
    let clique = max_clique(&cover.intersection_graph());
    (clique.len().saturating_sub(1), clique)
}

/// An abstract simplicial complex stored by its maximal faces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplicialComplex {
    facets: Vec<Vec<usize>>,
    vertex_count: usize,
    labels: Option<Vec<Vec<usize>>>,
}

#[derive(Serialize, Deserialize)]
struct ComplexRepr {
    faces: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Vec<usize>>>,
}

impl Serialize for SimplicialComplex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComplexRepr {
            faces: self.facets.clone(),
            labels: self.labels.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SimplicialComplex {
    /// Any list of faces is accepted; the complex is its downward closure.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ComplexRepr::deserialize(d)?;
        let n = repr
            .faces
            .iter()
            .flatten()
            .max()
            .map_or(0, |&v| v + 1)
            .max(repr.labels.as_ref().map_or(0, Vec::len));
        let mut k = SimplicialComplex::from_faces(repr.faces, n);
        k.labels = repr.labels;
        Ok(k)
    }
}

impl SimplicialComplex {
    /// The downward closure of `faces` on `vertex_count` vertices.
    pub fn from_faces(faces: Vec<Vec<usize>>, vertex_count: usize) -> Self {
        let mut faces: Vec<Vec<usize>> = faces
            .into_iter()
            .map(|mut f| {
                f.sort_unstable();
                f.dedup();
                f
            })
            .filter(|f| !f.is_empty())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        faces.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        let mut facets: Vec<Vec<usize>> = Vec::new();
        for f in faces {
            if !facets.iter().any(|g| is_subset(&f, g)) {
                facets.push(f);
            }
        }
        facets.sort();
        SimplicialComplex {
            facets,
            vertex_count,
            labels: None,
        }
    }

    pub fn facets(&self) -> &[Vec<usize>] {
        &self.facets
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    /// For a subdivision, the face of the original complex behind each vertex.
    pub fn labels(&self) -> Option<&[Vec<usize>]> {
        self.labels.as_deref()
    }

    /// `max |face| − 1`, and `−1` for the empty complex.
    pub fn dimension(&self) -> isize {
        self.facets
            .iter()
            .map(|f| f.len() as isize)
            .max()
            .unwrap_or(0)
            - 1
    }

    /// Every face, ordered by size then lexicographically.
    pub fn faces(&self) -> Vec<Vec<usize>> {
        let mut all = BTreeSet::new();
        for f in &self.facets {
            let k = f.len();
            for mask in 1u64..(1u64 << k) {
                all.insert(
                    (0..k)
                        .filter(|&b| mask >> b & 1 == 1)
                        .map(|b| f[b])
                        .collect::<Vec<_>>(),
                );
            }
        }
        let mut out: Vec<Vec<usize>> = all.into_iter().collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }

    /// Number of faces of each dimension.
    pub fn f_vector(&self) -> Vec<usize> {
        let mut counts = vec![0; (self.dimension() + 1).max(0) as usize];
        for f in self.faces() {
            counts[f.len() - 1] += 1;
        }
        counts
    }

    pub fn contains_face(&self, face: &[usize]) -> bool {
        let mut f = face.to_vec();
        f.sort_unstable();
        self.facets.iter().any(|g| is_subset(&f, g))
    }
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    let mut it = b.iter();
    a.iter().all(|x| it.any(|y| y == x))
}

/// Vertex per member, face per family of members with a common point.
pub fn nerve(cover: &Cover) -> SimplicialComplex {
    SimplicialComplex::from_faces(cover.membership(0), cover.len())
}

/// Largest facet accepted by [`barycentric_subdivision`]; each facet contributes `k!` chains.
pub const MAX_SUBDIVISION_FACET: usize = 8;

/// Vertices are the faces of `k`, faces are chains under strict inclusion.
pub fn barycentric_subdivision(k: &SimplicialComplex) -> Result<SimplicialComplex> {
    if let Some(f) = k.facets.iter().find(|f| f.len() > MAX_SUBDIVISION_FACET) {
        return Err(Error::precondition(format!(
            "facet with {} vertices is too large to subdivide",
            f.len()
        )));
    }
    let faces = k.faces();
    let index: BTreeMap<&[usize], usize> = faces
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_slice(), i))
        .collect();
    let mut chains = Vec::new();
    for facet in &k.facets {
        let mut perm = facet.clone();
        loop {
            let chain: Vec<usize> = (1..=perm.len())
                .map(|len| {
                    let mut prefix = perm[..len].to_vec();
                    prefix.sort_unstable();
                    index[prefix.as_slice()]
                })
                .collect();
            chains.push(chain);
            if !next_permutation(&mut perm) {
                break;
            }
        }
    }
    let mut sd = SimplicialComplex::from_faces(chains, faces.len());
    sd.labels = Some(faces);
    Ok(sd)
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// `weights[λ][x]`, rows indexed by members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionOfUnity {
    pub weights: Vec<Vec<f64>>,
}

impl PartitionOfUnity {
    /// Largest `|Σ_λ w_λ(x) − 1|`.
    pub fn normalization_defect(&self) -> f64 {
        let n = self.weights.first().map_or(0, Vec::len);
        (0..n)
            .map(|x| (self.weights.iter().map(|w| w[x]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `Σ_{λ ∈ set} w_λ`.
    pub fn sum_over(&self, set: &[usize]) -> Vec<f64> {
        let n = self.weights.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for &l in set {
            for (o, w) in out.iter_mut().zip(&self.weights[l]) {
                *o += w;
            }
        }
        out
    }
}

/// `w_λ(x) = d(x, X∖U_λ)` normalized over `λ`; the distance to an empty complement is 1.
pub fn partition_of_unity(space: &FiniteMetricSpace, cover: &Cover) -> Result<PartitionOfUnity> {
    cover.check_covers(space)?;
    let n = space.len();
    let mut weights = Vec::with_capacity(cover.len());
    for m in cover.members() {
        let mut inside = vec![false; n];
        for &p in m {
            inside[p] = true;
        }
        let outside: Vec<usize> = (0..n).filter(|&p| !inside[p]).collect();
        let row: Vec<f64> = (0..n)
            .map(|x| {
                if !inside[x] {
                    0.0
                } else if outside.is_empty() {
                    1.0
                } else {
                    outside
                        .iter()
                        .map(|&y| space.dist(x, y))
                        .fold(f64::INFINITY, f64::min)
                }
            })
            .collect();
        weights.push(row);
    }
    for x in 0..n {
        let total: f64 = weights.iter().map(|w| w[x]).sum();
        for w in weights.iter_mut() {
            w[x] /= total;
        }
    }
    Ok(PartitionOfUnity { weights })
}

/// Output of [`strict_refinement`]: member `i` is indexed by the nerve face `faces[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub cover: Cover,
    pub faces: Vec<Vec<usize>>,
}

/// Level sets `S_j = {λ : w_λ(x) ≥ v_j}` of the weight vector at each point.
pub fn level_sets(weights: &[f64]) -> Vec<Vec<usize>> {
    let mut values: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    let mut levels: Vec<f64> = Vec::new();
    for v in values {
        if levels.last().is_none_or(|&l| l - v > LEVEL_TIE) {
            levels.push(v);
        }
    }
    levels
        .iter()
        .map(|&v| {
            (0..weights.len())
                .filter(|&l| weights[l] > 0.0 && weights[l] >= v - LEVEL_TIE)
                .collect()
        })
        .collect()
}

/// Pulls back the open stars of the barycentric subdivision of the nerve.
///
/// Points whose level sets include `s` form the member `V_s`. Intersecting
/// members have nested faces, so cliques are chains and the strict order of
/// the output is at most the order of the input.
pub fn strict_refinement(space: &FiniteMetricSpace, cover: &Cover) -> Result<Refinement> {
    let pou = partition_of_unity(space, cover)?;
    let mut members: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    let mut w = vec![0.0; cover.len()];
    for x in 0..space.len() {
        for (l, row) in pou.weights.iter().enumerate() {
            w[l] = row[x];
        }
        for s in level_sets(&w) {
            members.entry(s).or_default().push(x);
        }
    }
    let (faces, sets): (Vec<_>, Vec<_>) = members.into_iter().unzip();
    Ok(Refinement {
        cover: Cover::new(sets),
        faces,
    })
}

/// Whether each member of `v` sits inside a member of `u`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementCheck {
    pub refines: bool,
    /// The first member of `u` containing each member of `v`.
    pub assignment: Vec<Option<usize>>,
    pub first_failure: Option<usize>,
}

pub fn refines(v: &Cover, u: &Cover) -> RefinementCheck {
    let n = v.point_bound().max(u.point_bound());
    let masks: Vec<Vec<bool>> = u
        .members()
        .iter()
        .map(|m| {
            let mut mask = vec![false; n];
            for &p in m {
                mask[p] = true;
            }
            mask
        })
        .collect();
    let assignment: Vec<Option<usize>> = v
        .members()
        .iter()
        .map(|m| masks.iter().position(|mask| m.iter().all(|&p| mask[p])))
        .collect();
    let first_failure = assignment.iter().position(Option::is_none);
    RefinementCheck {
        refines: first_failure.is_none(),
        assignment,
        first_failure,
    }
}

/// Closed balls `{y : d(x,y) ≤ radius}` around every point, repeats removed.
pub fn ball_cover(space: &FiniteMetricSpace, radius: f64) -> Result<Cover> {
    if !(radius > 0.0) {
        return Err(Error::precondition("radius must be positive"));
    }
    let n = space.len();
    Ok(Cover::new(
        (0..n)
            .map(|x| (0..n).filter(|&y| space.dist(x, y) <= radius).collect())
            .collect(),
    )
    .dedup())
}

/// Voronoi cells of a greedy `radius`-net, each widened by `margin`.
///
/// Centers are picked in a seeded random order: a point becomes a center when
/// it is farther than `radius` from all earlier ones. The cell of `c` holds the
/// points `x` with `d(x, c) ≤ d(x, centers) + margin`.
pub fn net_cover(space: &FiniteMetricSpace, radius: f64, margin: f64, seed: u64) -> Result<Cover> {
    if !(radius > 0.0) || !(margin >= 0.0) {
        return Err(Error::precondition(
            "radius must be positive and margin non-negative",
        ));
    }
    let n = space.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sample::rng(seed));
    let mut centers: Vec<usize> = Vec::new();
    for &x in &order {
        if centers.iter().all(|&c| space.dist(x, c) > radius) {
            centers.push(x);
        }
    }
    centers.sort_unstable();
    let nearest: Vec<f64> = (0..n)
        .map(|x| {
            centers
                .iter()
                .map(|&c| space.dist(x, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(Cover::new(
        centers
            .iter()
            .map(|&c| {
                (0..n)
                    .filter(|&x| space.dist(x, c) <= nearest[x] + margin)
                    .collect()
            })
            .collect(),
    )
    .dedup())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute_order(c: &Cover) -> usize {
        let k = c.len();
        let mut best = 0;
        for mask in 1u32..(1 << k) {
            let members: Vec<usize> = (0..k).filter(|&l| mask >> l & 1 == 1).collect();
            let common = c.members()[members[0]]
                .iter()
                .any(|p| members.iter().all(|&l| c.members()[l].contains(p)));
            if common {
                best = best.max(members.len() - 1);
            }
        }
        best
    }

    fn brute_strict(c: &Cover) -> usize {
        let k = c.len();
        let meets = |a: usize, b: usize| c.members()[a].iter().any(|p| c.members()[b].contains(p));
        let mut best = 0;
        for mask in 1u32..(1 << k) {
            let members: Vec<usize> = (0..k).filter(|&l| mask >> l & 1 == 1).collect();
            let ok = members
                .iter()
                .enumerate()
                .all(|(a, &l)| members[a + 1..].iter().all(|&m| meets(l, m)));
            if ok {
                best = best.max(members.len() - 1);
            }
        }
        best
    }

    fn three_arcs() -> (FiniteMetricSpace, Cover) {
        let space = FiniteMetricSpace::circle_grid(30).unwrap();
        let arc = |a: usize, b: usize| (a..b).map(|i| i % 30).collect::<Vec<_>>();
        (
            space,
            Cover::new(vec![arc(0, 12), arc(10, 22), arc(20, 32)]),
        )
    }

    #[test]
    fn interval_chain() {
        let space = FiniteMetricSpace::interval_grid(101).unwrap();
        let cover = Cover::new(vec![
            (0..=40).collect(),
            (30..=70).collect(),
            (60..=100).collect(),
        ]);
        assert!(cover.is_covering(space.len()));
        assert_eq!(cover_order(&cover), 1);
        assert_eq!(cover_strict_order(&cover).0, 1);
        let k = nerve(&cover);
        assert_eq!(k.dimension(), 1);
        assert_eq!(k.facets(), &[vec![0, 1], vec![1, 2]]);
    }

    #[test]
    fn three_arcs_order_vs_strict_order() {
        let (space, cover) = three_arcs();
        assert_eq!(cover_order(&cover), 1);
        assert_eq!(cover_strict_order(&cover).0, 2);
        assert_eq!(nerve(&cover).f_vector(), vec![3, 3]);
        let r = strict_refinement(&space, &cover).unwrap();
        assert!(r.cover.is_covering(space.len()));
        assert!(refines(&r.cover, &cover).refines);
        assert_eq!(cover_strict_order(&r.cover).0, 1);
    }

    #[test]
    fn disjoint_cover() {
        let space = FiniteMetricSpace::interval_grid(10).unwrap();
        let cover = Cover::new(vec![(0..5).collect(), (5..10).collect()]);
        assert_eq!(cover_order(&cover), 0);
        assert_eq!(cover_strict_order(&cover).0, 0);
        let r = strict_refinement(&space, &cover).unwrap();
        assert_eq!(r.cover, cover);
    }

    #[test]
    fn subdivision_counts() {
        let edge = SimplicialComplex::from_faces(vec![vec![0, 1]], 2);
        let sd = barycentric_subdivision(&edge).unwrap();
        assert_eq!(sd.f_vector(), vec![3, 2]);
        let tri = SimplicialComplex::from_faces(vec![vec![0, 1, 2]], 3);
        let sd = barycentric_subdivision(&tri).unwrap();
        assert_eq!(sd.f_vector(), vec![7, 12, 6]);
        assert_eq!(sd.dimension(), 2);
    }

    #[test]
    fn partition_symmetric_midpoint() {
        let space = FiniteMetricSpace::interval_grid(11).unwrap();
        let cover = Cover::new(vec![(0..=6).collect(), (4..=10).collect()]);
        let pou = partition_of_unity(&space, &cover).unwrap();
        assert!((pou.weights[0][5] - 0.5).abs() < 1e-15);
        assert!((pou.weights[1][5] - 0.5).abs() < 1e-15);
        assert!(pou.normalization_defect() < 1e-12);
        let single = partition_of_unity(&space, &Cover::new(vec![(0..11).collect()])).unwrap();
        assert!(single.weights[0].iter().all(|&w| w == 1.0));
    }

    #[test]
    fn uncovered_point_is_an_error() {
        let space = FiniteMetricSpace::interval_grid(5).unwrap();
        let cover = Cover::new(vec![vec![0, 1, 2]]);
        assert!(partition_of_unity(&space, &cover).is_err());
    }

    #[test]
    fn refines_reports_straddler() {
        let u = Cover::new(vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(refines(&u, &u).assignment, vec![Some(0), Some(1)]);
        let v = Cover::new(vec![vec![0, 1], vec![2, 3]]);
        let check = refines(&v, &u);
        assert!(!check.refines);
        assert_eq!(check.first_failure, Some(1));
    }

    #[test]
    fn ball_cover_extremes() {
        let space = FiniteMetricSpace::interval_grid(20).unwrap();
        assert_eq!(ball_cover(&space, 2.0).unwrap().len(), 1);
        let tiny = ball_cover(&space, 1e-3).unwrap();
        assert_eq!(tiny, Cover::singletons(20));
        let c = ball_cover(&space, 0.1).unwrap();
        assert!(c
            .members()
            .iter()
            .all(|m| space.set_diameter(m) <= 0.2 + 1e-12));
    }

    #[test]
    fn random_covers_match_brute_force() {
        let mut rng = sample::rng(21);
        for _ in 0..200 {
            let n = rng.random_range(1..=40);
            let k = rng.random_range(1..=10);
            let p: f64 = rng.random_range(0.05..0.5);
            let members: Vec<Vec<usize>> = (0..k)
                .map(|_| (0..n).filter(|_| rng.random_bool(p)).collect())
                .collect();
            let c = Cover::new(members);
            assert_eq!(cover_order(&c), brute_order(&c));
            assert_eq!(cover_strict_order(&c).0, brute_strict(&c));
            assert!(cover_order(&c) <= cover_strict_order(&c).0);
            assert_eq!(nerve(&c).dimension().max(0) as usize, cover_order(&c));
        }
    }

    #[test]
    fn refinement_on_random_grids() {
        let mut rng = sample::rng(22);
        for _ in 0..20 {
            let space = match rng.random_range(0..3) {
                0 => FiniteMetricSpace::interval_grid(rng.random_range(5..60)).unwrap(),
                1 => FiniteMetricSpace::circle_grid(rng.random_range(5..60)).unwrap(),
                _ => FiniteMetricSpace::torus_grid(rng.random_range(3..8), rng.random_range(3..8))
                    .unwrap(),
            };
            let radius = space.diameter() * rng.random_range(0.05..0.4);
            let cover = ball_cover(&space, radius).unwrap();
            let r = strict_refinement(&space, &cover).unwrap();
            assert!(r.cover.is_covering(space.len()));
            assert!(refines(&r.cover, &cover).refines);
            assert!(cover_strict_order(&r.cover).0 <= cover_order(&cover));
        }
    }

    #[test]
    fn prune_keeps_a_cover_with_exclusive_points() {
        let space = FiniteMetricSpace::interval_grid(50).unwrap();
        let cover = ball_cover(&space, 0.1).unwrap();
        let pruned = cover.prune_to_exclusive();
        assert!(pruned.is_covering(50));
        assert!(pruned.exclusive_points().iter().all(Option::is_some));
    }

    #[test]
    fn net_cover_interval_has_order_one() {
        let space = FiniteMetricSpace::interval_grid(101).unwrap();
        for seed in 0..5 {
            let c = net_cover(&space, 0.1, 0.05, seed).unwrap();
            assert!(c.is_covering(101));
            assert_eq!(cover_order(&c), 1);
        }
    }

    #[test]
    fn json_forms() {
        let space = FiniteMetricSpace::interval_grid(3).unwrap();
        let s = serde_json::to_string(&space).unwrap();
        assert!(s.contains("euclidean"));
        assert_eq!(
            serde_json::from_str::<FiniteMetricSpace>(&s).unwrap(),
            space
        );
        let m: FiniteMetricSpace = serde_json::from_str(r#"{"metric": [[0, 1], [1, 0]]}"#).unwrap();
        assert_eq!(m.dist(0, 1), 1.0);
        assert!(
            serde_json::from_str::<FiniteMetricSpace>(r#"{"metric": [[0, 1], [2, 0]]}"#).is_err()
        );
        let c: Cover = serde_json::from_str(r#"{"members": [[2, 0, 0], [1]]}"#).unwrap();
        assert_eq!(c.members(), &[vec![0, 2], vec![1]]);
        let k: SimplicialComplex =
            serde_json::from_str(r#"{"faces": [[0, 1], [1], [1, 2]]}"#).unwrap();
        assert_eq!(k.facets().len(), 2);
    }

    #[test]
    fn triangle_check() {
        let bad = FiniteMetricSpace::from_metric(vec![
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ])
        .unwrap();
        let v = bad.triangle_violation(0.0).unwrap();
        assert_eq!((v.i, v.j, v.k), (0, 1, 2));
        assert!(FiniteMetricSpace::interval_grid(10)
            .unwrap()
            .triangle_violation(1e-12)
            .is_none());
    }
}
