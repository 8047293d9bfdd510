use elastdg::convergence_lab::{error_norms, Reference};
use elastdg::dg_calculus::{
    dg_identity_terms, jump_vector, lifting, trace_identity_sides, EdgeField, LiftingKind, TraceSample,
};
use elastdg::elasticity_model::{ManufacturedCase, Material};
use elastdg::fe_spaces::{build_spaces, Alpha, BrokenField};
use elastdg::mesh::{BoundaryRule, EdgeTag, Mesh, Side};
use nalgebra::{Matrix2, Point2, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn sym(a: f64, b: f64, c: f64) -> Matrix2<f64> {
    Matrix2::new(a, c, c, b)
}

fn rule(neumann: bool) -> BoundaryRule {
    if neumann {
        BoundaryRule::neumann_on(&[Side::Right, Side::Top])
    } else {
        BoundaryRule::all_dirichlet()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dg_identity_holds_for_random_pairs(
        seed in any::<u64>(),
        dq in 0u32..=3,
        dv in 0u32..=3,
        level in 1u32..=3,
        neumann in any::<bool>(),
    ) {
        let mesh = Mesh::build_uniform(level, rule(neumann)).unwrap();
        let sp = build_spaces(&mesh, Alpha::new(dq, dv, 0, 0));
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let tc: Vec<f64> = (0..sp.q.total_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vc: Vec<f64> = (0..sp.v.total_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (tau, v) = (BrokenField::new(&sp.q, &tc), BrokenField::new(&sp.v, &vc));
        let t = dg_identity_terms(&mesh, &tau, &v);
        prop_assert!(t.residual() <= 1e-11 * t.scale(), "{} vs {}", t.residual(), t.scale());
        let (l, r) = trace_identity_sides(&mesh, &tau, &v);
        prop_assert!((l - r).abs() <= 1e-11 * (l.abs() + r.abs()).max(1.0));
    }

    #[test]
    fn jump_times_normal_is_the_difference(
        ang in 0.0f64..std::f64::consts::TAU,
        a in prop::array::uniform4(-10.0f64..10.0),
    ) {
        let n = Vector2::new(ang.cos(), ang.sin());
        let (p, m) = (Vector2::new(a[0], a[1]), Vector2::new(a[2], a[3]));
        let j = jump_vector(&TraceSample::interior(p, m), &n, EdgeTag::Interior);
        prop_assert!((j * n - (p - m)).amax() <= 1e-13 * (1.0 + p.amax() + m.amax()));
        prop_assert!((j - j.transpose()).amax() == 0.0);
        let b = jump_vector(&TraceSample::boundary(p), &n, EdgeTag::Dirichlet);
        prop_assert!((b * n - p).amax() <= 1e-13 * (1.0 + p.amax()));
    }

    #[test]
    fn compliance_inverts_stiffness(
        e in prop::array::uniform3(-5.0f64..5.0),
        nu in 0.01f64..0.45,
        young in 0.1f64..10.0,
    ) {
        let m = Material::new(young, nu).unwrap();
        let eps = sym(e[0], e[1], e[2]);
        let back = m.apply_compliance(&m.apply_stiffness(&eps));
        prop_assert!((back - eps).amax() <= 1e-13 * eps.amax().max(1.0));
    }

    #[test]
    fn forcing_matches_finite_differences(
        x in 0.05f64..0.95,
        y in 0.05f64..0.95,
        nu in 0.05f64..0.49,
    ) {
        let case = ManufacturedCase::new(Material::new(1.0, nu).unwrap());
        let p = Point2::new(x, y);
        let f = case.f(p);
        let d = (f - case.f_finite_difference(p, 1e-5)).amax();
        prop_assert!(d <= 1e-6 * f.amax().max(1.0), "{}", d);
    }
}

#[test]
fn compliance_inverts_stiffness_near_incompressibility() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(9);
    for nu in [0.49, 0.499, 0.4999] {
        let m = Material::new(1.0, nu).unwrap();
        for _ in 0..20 {
            let eps = sym(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let back = m.apply_compliance(&m.apply_stiffness(&eps));
            // Round-off grows with lambda / mu.
            assert!((back - eps).amax() <= 1e-13 * m.lambda() / m.mu());
        }
    }
}

/// `||r_Q(xi)||^2 / sum_e h_e^{-1} ||xi||_e^2` for piecewise constant random
/// edge data.
fn lifting_ratio(level: u32, degree: u32) -> f64 {
    let mesh = Mesh::build_uniform(level, BoundaryRule::all_dirichlet()).unwrap();
    let sp = build_spaces(&mesh, Alpha::new(degree, 0, 0, 0));
    let mut rng = rand::rngs::StdRng::seed_from_u64(17);
    let data: Vec<Matrix2<f64>> = (0..mesh.num_edges())
        .map(|_| sym(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let xi = |e: usize, _: f64| data[e];
    let r = lifting(&mesh, &sp.q, LiftingKind::RQ, &EdgeField::Tensor(&xi));
    let zero = vec![0.0; sp.v.total_dofs];
    let norm = error_norms(&mesh, &sp, &r, &zero, Reference::Zero, 2 * degree as usize + 2).sigma;
    // h_e^{-1} |e| is a fixed constant per edge direction on this family.
    let edge: f64 = data.iter().map(|d| d.norm_squared()).sum();
    norm * norm / edge
}

#[test]
fn lifting_ratio_is_level_independent() {
    for degree in [0, 1, 2] {
        let (a, b) = (lifting_ratio(3, degree), lifting_ratio(5, degree));
        let q = a.max(b) / a.min(b);
        assert!(q < 2.0, "degree {degree}: {a} vs {b}");
    }
}
