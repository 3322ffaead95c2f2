use cprank::covers::{
    barycentric_subdivision, cover_order as order_of, cover_strict_order as strict_order_of, nerve,
    refines, strict_refinement,
};
use cprank::cpmap::{
    certify_order_zero, choi_blocks, stinespring, strict_order_bounds, CHOI_TOL, ORTHOGONALITY_TOL,
};
use cprank::cprlab::{
    approx_from_cover, build_cp_approx, direct_sum_approx, estimate_cpr_commutative, extract_cover,
    extraction_plan, tensor_approx, verify_cp_approx,
};
use cprank::matfun::Mat;
use cprank::orderzero::{decompose_order_zero, perturb_to_hom};
use cprank::projkit::repair_almost_projection;
use cprank::{
    AlgebraElement, CPApproximation, CPMap, Cover, FiniteDimAlgebra, FiniteMetricSpace,
    FunctionSystem, Tolerances,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::input::{parse, CliError, Inputs, Result};
use crate::Io;

/// Default tolerance of order-zero certification and decomposition.
const ORDER_ZERO_TOL: f64 = 1e-9;

pub struct Options {
    pub seed: u64,
    pub tol: Option<f64>,
    pub max_block: usize,
}

impl Options {
    fn tol_or(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize to JSON")
}

/// Adds `key` to an object report unless the report already has it.
fn with(mut report: Value, key: &str, v: Value) -> Value {
    if let Value::Object(m) = &mut report {
        m.entry(key.to_string()).or_insert(v);
    }
    report
}

fn check_blocks(a: &FiniteDimAlgebra, what: &str, opts: &Options) -> Result<()> {
    match a.block_sizes().iter().max() {
        Some(&r) if r > opts.max_block => Err(CliError::Precondition(format!(
            "{what} has a block of size {r} above --max-block {}",
            opts.max_block
        ))),
        _ => Ok(()),
    }
}

fn load_map(inputs: &Inputs, opts: &Options) -> Result<CPMap> {
    let phi: CPMap = inputs.get("map")?;
    check_blocks(phi.domain(), "map domain", opts)?;
    check_blocks(phi.target(), "map codomain", opts)?;
    Ok(phi)
}

fn check_approx(a: &CPApproximation, opts: &Options) -> Result<()> {
    check_blocks(&a.f, "approximation algebra F", opts)?;
    check_blocks(a.phi.target(), "approximation target", opts)
}

fn load_approx(inputs: &Inputs, opts: &Options) -> Result<CPApproximation> {
    let a: CPApproximation = inputs.get("approximation")?;
    check_approx(&a, opts)?;
    Ok(a)
}

fn read(io: &Io) -> Result<Inputs> {
    Inputs::read(&io.inputs)
}

pub fn cover_order(io: &Io, _opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let cover: Cover = inputs.get("cover")?;
    let order = order_of(&cover);
    let membership = cover.membership(0);
    let point = membership.iter().position(|m| m.len() == order + 1);
    Ok(json!({
        "order": order,
        "point": point,
        "members": point.map(|p| membership[p].clone()),
    }))
}

pub fn cover_strict_order(io: &Io, _opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let cover: Cover = inputs.get("cover")?;
    let (strict_order, clique) = strict_order_of(&cover);
    Ok(json!({ "strict_order": strict_order, "clique": clique }))
}

pub fn cover_nerve(io: &Io, _opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let cover: Cover = inputs.get("cover")?;
    let subdivide = inputs.get_opt::<bool>("subdivide")?.unwrap_or(false);
    let k = nerve(&cover);
    let mut report = json!({
        "nerve": to_value(&k),
        "dimension": k.dimension(),
        "f_vector": k.f_vector(),
    });
    if subdivide {
        let sd = barycentric_subdivision(&k)?;
        report["subdivision"] = to_value(&sd);
        report["subdivision_f_vector"] = json!(sd.f_vector());
    }
    Ok(report)
}

pub fn cover_refine(io: &Io, _opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let space: FiniteMetricSpace = inputs.get("space")?;
    let cover: Cover = inputs.get("cover")?;
    let r = strict_refinement(&space, &cover)?;
    let (strict_order, clique) = strict_order_of(&r.cover);
    let check = refines(&r.cover, &cover);
    Ok(json!({
        "cover": to_value(&r.cover),
        "faces": r.faces,
        "strict_order": strict_order,
        "clique": clique,
        "input_order": order_of(&cover),
        "input_strict_order": strict_order_of(&cover).0,
        "refines": check.refines,
        "assignment": check.assignment,
    }))
}

pub fn cover_check_refines(io: &Io, _opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let fine: Cover = inputs.get("fine")?;
    let coarse: Cover = inputs.get("coarse")?;
    Ok(to_value(&refines(&fine, &coarse)))
}

pub fn approx_build(io: &Io, opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let space: FiniteMetricSpace = inputs.get("space")?;
    let functions: Vec<Vec<f64>> = inputs.get("functions")?;
    let eps: f64 = inputs.get("eps")?;
    let built = build_cp_approx(&space, &functions, eps, opts.seed)?;
    Ok(json!({
        "approximation": to_value(&built.approx),
        "error": built.max_error,
        "errors": built.errors,
        "eps": built.eps,
        "cover": to_value(&built.cover),
        "radius": built.radius,
        "refinement_order": built.refinement_order,
        "strict_order": built.strict_order,
        "seed": opts.seed,
    }))
}

/// Real functions on the points, lifted to `f ⊗ 1` in `C(X, M_r)`.
fn lift_functions(a: &CPApproximation, functions: &[Vec<f64>]) -> Result<Vec<AlgebraElement>> {
    let n = a.space_points();
    let unit = Mat::identity(a.fiber(), a.fiber());
    functions
        .iter()
        .enumerate()
        .map(|(k, f)| {
            if f.len() != n {
                return Err(CliError::Schema(format!(
                    "function {k} has {} values, the space has {n} points",
                    f.len()
                )));
            }
            Ok(AlgebraElement::from_real_function(f).kron(&unit))
        })
        .collect()
}

pub fn approx_verify(io: &Io, opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let approx = load_approx(&inputs, opts)?;
    let eps: f64 = inputs.get("eps")?;
    let functions: Vec<Vec<f64>> = inputs.get_opt("functions")?.unwrap_or_default();
    let mut elements = lift_functions(&approx, &functions)?;
    elements.extend(
        inputs
            .get_opt::<Vec<AlgebraElement>>("elements")?
            .unwrap_or_default(),
    );
    if elements.is_empty() {
        return Err(CliError::Schema("give `functions` or `elements`".into()));
    }
    let report = verify_cp_approx(&approx, &elements, eps, opts.seed)?;
    Ok(with(to_value(&report), "seed", json!(opts.seed)))
}

pub fn approx_tensor(io: &Io, opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let approx = load_approx(&inputs, opts)?;
    let r: usize = inputs.get("r")?;
    if r == 0 {
        return Err(CliError::Schema("`r` must be at least 1".into()));
    }
    let t = tensor_approx(&approx, r)?;
    check_approx(&t, opts)?;
    Ok(json!({ "approximation": to_value(&t) }))
}

/// Summands come from `approximations` arrays and `approximation` keys, in file order.
pub fn approx_sum(io: &Io, opts: &Options) -> Result<Value> {
    let mut parts = Vec::new();
    for doc in read_documents(io)? {
        if let Some(v) = doc.get("approximations") {
            parts.extend(parse::<Vec<CPApproximation>>("approximations", v)?);
        }
        if let Some(v) = doc.get("approximation") {
            parts.push(parse::<CPApproximation>("approximation", v)?);
        }
    }
    if parts.is_empty() {
        return Err(CliError::Schema("no approximations given".into()));
    }
    for p in &parts {
        check_approx(p, opts)?;
    }
    let sum = direct_sum_approx(&parts)?;
    Ok(json!({ "approximation": to_value(&sum), "summands": parts.len() }))
}

/// Documents are not merged for `sum`, so repeated keys across files are allowed.
fn read_documents(io: &Io) -> Result<Vec<Value>> {
    let mut docs = Vec::new();
    for path in &io.inputs {
        docs.extend(Inputs::read(std::slice::from_ref(path))?.documents);
    }
    Ok(docs)
}

pub fn approx_extract_cover(io: &Io, opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let space: FiniteMetricSpace = inputs.get("space")?;
    let cover: Cover = inputs.get("cover")?;
    let n: usize = inputs.get("n")?;
    let (approx, source) = match inputs.get_opt::<CPApproximation>("approximation")? {
        Some(a) => {
            check_approx(&a, opts)?;
            (a, "input")
        }
        None => {
            let plan = extraction_plan(&space, &cover, n, opts.seed)?;
            (approx_from_cover(&space, &plan.v)?.0, "plan")
        }
    };
    let report = extract_cover(&space, &cover, n, &approx, opts.seed)?;
    let out = with(to_value(&report), "approximation_source", json!(source));
    Ok(with(out, "seed", json!(opts.seed)))
}

pub fn approx_estimate(io: &Io, opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let space: FiniteMetricSpace = inputs.get("space")?;
    let scales: Vec<f64> = inputs.get("scales")?;
    let probes = match inputs.get_opt::<Vec<Vec<f64>>>("probes")? {
        Some(p) => p,
        None => FunctionSystem::coordinates(&space),
    };
    if let Some(k) = probes.iter().position(|p| p.len() != space.len()) {
        return Err(CliError::Schema(format!(
            "probe {k} does not match the space size"
        )));
    }
    let est = estimate_cpr_commutative(&space, &scales, &probes, opts.seed)?;
    Ok(with(to_value(&est), "seed", json!(opts.seed)))
}

pub fn cpmap_choi(io: &Io, opts: &Options) -> Result<Value> {
    let phi = load_map(&read(io)?, opts)?;
    let report = choi_blocks(&phi)?;
    Ok(with(to_value(&report), "tol", json!(CHOI_TOL)))
}

pub fn cpmap_stinespring(io: &Io, opts: &Options) -> Result<Value> {
    let phi = load_map(&read(io)?, opts)?;
    let dil = stinespring(&phi)?;
    Ok(with(to_value(&dil), "tol", json!(CHOI_TOL)))
}

pub fn cpmap_order_bounds(io: &Io, opts: &Options) -> Result<Value> {
    let phi = load_map(&read(io)?, opts)?;
    let b = strict_order_bounds(&phi, opts.tol_or(ORTHOGONALITY_TOL), opts.seed)?;
    Ok(with(to_value(&b), "seed", json!(opts.seed)))
}

pub fn cpmap_order_zero(io: &Io, opts: &Options) -> Result<Value> {
    let phi = load_map(&read(io)?, opts)?;
    let tol = opts.tol_or(ORDER_ZERO_TOL);
    let cert = certify_order_zero(&phi, tol)?;
    let out = with(to_value(&cert), "order_zero", json!(cert.is_order_zero()));
    Ok(with(out, "tol", json!(tol)))
}

pub fn cpmap_repair(io: &Io, opts: &Options) -> Result<Value> {
    let inputs = read(io)?;
    let kind: String = inputs.get("kind")?;
    match kind.as_str() {
        "almost_projection" => {
            let h: AlgebraElement = inputs.get("h")?;
            check_blocks(h.algebra(), "h", opts)?;
            let eps: f64 = inputs.get("eps")?;
            let mut tol = Tolerances::default();
            if let Some(t) = opts.tol {
                tol.identity = t;
            }
            let rep = repair_almost_projection(&h, eps, tol)?;
            let out = with(to_value(&rep), "kind", json!(kind));
            let out = with(out, "eps", json!(eps));
            Ok(with(out, "tol", json!(tol.identity)))
        }
        "order_zero" => {
            let phi = load_map(&inputs, opts)?;
            let gamma: f64 = inputs.get("gamma")?;
            let tol = opts.tol_or(ORDER_ZERO_TOL);
            let p = perturb_to_hom(&phi, gamma, tol)?;
            let out = with(to_value(&p), "kind", json!(kind));
            Ok(with(out, "tol", json!(tol)))
        }
        other => Err(CliError::Schema(format!(
            "unknown repair kind `{other}` (expected almost_projection or order_zero)"
        ))),
    }
}

pub fn cpmap_decompose(io: &Io, opts: &Options) -> Result<Value> {
    let phi = load_map(&read(io)?, opts)?;
    let tol = opts.tol_or(ORDER_ZERO_TOL);
    let dec = decompose_order_zero(&phi, tol)?;
    let err = dec.reconstruction_error(&phi)?;
    let out = with(to_value(&dec), "reconstruction_error", json!(err));
    Ok(with(out, "tol", json!(tol)))
}
