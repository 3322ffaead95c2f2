use cprank::covers::{
    ball_cover, barycentric_subdivision, cover_order, cover_strict_order, nerve, refines,
    strict_refinement,
};
use cprank::cprlab::{
    approx_from_cover, block_identity_approx, build_cp_approx, direct_sum_approx, extract_cover,
    extraction_plan, verify_cp_approx,
};
use cprank::sample;
use cprank::{AlgebraElement, Cover, FiniteMetricSpace, FunctionSystem, SimplicialComplex};
use rand::Rng;

fn arcs(n: usize, spans: &[(usize, usize)]) -> Cover {
    Cover::new(
        spans
            .iter()
            .map(|&(a, b)| (a..b).map(|i| i % n).collect())
            .collect(),
    )
}

#[test]
fn builder_error_within_eps_on_seeded_instances() {
    let mut rng = sample::rng(100);
    for seed in 0..100u64 {
        let space = match seed % 3 {
            0 => FiniteMetricSpace::interval_grid(rng.random_range(10..80)).unwrap(),
            1 => FiniteMetricSpace::circle_grid(rng.random_range(10..80)).unwrap(),
            _ => FiniteMetricSpace::torus_grid(rng.random_range(3..7), rng.random_range(3..7))
                .unwrap(),
        };
        let mut probes = FunctionSystem::coordinates(&space);
        let center = rng.random_range(0..space.len());
        probes.push(FunctionSystem::bump(&space, center, space.diameter() / 3.0));
        let eps = rng.random_range(0.05..0.6);
        let built = build_cp_approx(&space, &probes, eps, seed).unwrap();
        for p in &probes {
            assert!(built.approx.error_on(p) <= eps, "seed {seed}");
        }
        let unit = built.approx.phi.unit_image();
        for z in unit.as_slice() {
            assert!((z.re - 1.0).abs() < 1e-12 && z.im == 0.0, "seed {seed}");
        }
        assert!(built.strict_order <= built.refinement_order);
    }
}

#[test]
fn direct_sum_error_law() {
    let a = FiniteMetricSpace::interval_grid(30).unwrap();
    let b = FiniteMetricSpace::circle_grid(25).unwrap();
    let fa = FunctionSystem::coordinates(&a);
    let fb = FunctionSystem::coordinates(&b);
    let ba = build_cp_approx(&a, &fa, 0.25, 1).unwrap();
    let bb = build_cp_approx(&b, &fb, 0.4, 2).unwrap();
    let sum = direct_sum_approx(&[ba.approx.clone(), bb.approx.clone()]).unwrap();
    let probes: Vec<AlgebraElement> = (0..2)
        .map(|k| {
            let v: Vec<f64> = fa[0].iter().chain(&fb[k]).copied().collect();
            AlgebraElement::from_real_function(&v)
        })
        .collect();
    let rep = verify_cp_approx(&sum, &probes, 1.0, 0).unwrap();
    for (k, e) in rep.errors.iter().enumerate() {
        let expect = ba.approx.error_on(&fa[0]).max(bb.approx.error_on(&fb[k]));
        assert!((e - expect).abs() <= 1e-12);
    }
}

#[test]
fn three_arcs_refinement_and_subdivision() {
    let space = FiniteMetricSpace::circle_grid(60).unwrap();
    let u = arcs(60, &[(0, 24), (20, 44), (40, 64)]);
    assert_eq!(cover_strict_order(&u).0, 2);
    let r = strict_refinement(&space, &u).unwrap();
    assert_eq!(cover_strict_order(&r.cover).0, 1);
    assert!(refines(&r.cover, &u).refines);
    // Every refinement member sits in the open star of its face in Sd(nerve).
    let sd = barycentric_subdivision(&nerve(&u)).unwrap();
    let labels = sd.labels().unwrap();
    for face in &r.faces {
        assert!(labels.contains(face));
    }
}

#[test]
fn circle_round_trip() {
    let space = FiniteMetricSpace::circle_grid(200).unwrap();
    let u = arcs(200, &[(0, 110), (66, 176), (133, 243)]);
    let plan = extraction_plan(&space, &u, 1, 0).unwrap();
    let (approx, _) = approx_from_cover(&space, &plan.v).unwrap();
    let rep = extract_cover(&space, &u, 1, &approx, 0).unwrap();
    assert!(rep.w.is_covering(200));
    assert!(cover_order(&rep.w) <= 1);
    assert!(rep.refines);
    assert!(rep.steps.iter().all(|s| s.holds));
}

#[test]
fn matrix_path_on_separated_pairs() {
    let far =
        FiniteMetricSpace::from_coords((0..6).map(|i| vec![10.0 * i as f64]).collect()).unwrap();
    let u = Cover::new(vec![vec![0, 1, 2], vec![3, 4, 5]]);
    let approx = block_identity_approx(6, &[vec![0, 2], vec![1, 4], vec![3, 5]], 17).unwrap();
    let rep = extract_cover(&far, &u, 1, &approx, 0).unwrap();
    assert!(rep.w.is_covering(6));
    assert!(rep.refines);
    assert!(rep.blocks.iter().all(|b| b.size == 2));
}

#[test]
fn ball_covers_refine_on_random_grids() {
    let mut rng = sample::rng(6);
    for _ in 0..30 {
        let space = FiniteMetricSpace::circle_grid(rng.random_range(8..50)).unwrap();
        let c = ball_cover(&space, rng.random_range(0.2..1.0)).unwrap();
        let r = strict_refinement(&space, &c).unwrap();
        assert!(cover_strict_order(&r.cover).0 <= cover_order(&c));
    }
}

#[test]
fn json_round_trips() {
    let space = FiniteMetricSpace::torus_grid(3, 4).unwrap();
    let back: FiniteMetricSpace =
        serde_json::from_str(&serde_json::to_string(&space).unwrap()).unwrap();
    for i in 0..space.len() {
        for j in 0..space.len() {
            assert!((back.dist(i, j) - space.dist(i, j)).abs() <= 1e-15);
        }
    }
    let k = SimplicialComplex::from_faces(vec![vec![0, 1, 2], vec![2, 3]], 4);
    let back: SimplicialComplex =
        serde_json::from_str(&serde_json::to_string(&k).unwrap()).unwrap();
    assert_eq!(back, k);
    let sd = barycentric_subdivision(&k).unwrap();
    let back: SimplicialComplex =
        serde_json::from_str(&serde_json::to_string(&sd).unwrap()).unwrap();
    assert_eq!(back, sd);
}
