mod common;

use common::{material, rel_diff, Setup};
use elastdg::assembly::{assemble_limit, assemble_primal_oracle};
use elastdg::convergence_lab::{run_limit_study, LimitKind};
use elastdg::fe_spaces::Alpha;
use elastdg::hybrid_solver::{solve, solve_fields};
use nalgebra::Point2;

const RHOS: [f64; 3] = [1.0, 0.25, 0.0625];

#[test]
fn mixed_limit_distance_has_half_order() {
    let r = run_limit_study(LimitKind::Mixed, LimitKind::Mixed.default_alpha(), material(), 3, &RHOS).unwrap();
    for i in 1..RHOS.len() {
        assert!(r.order(i).unwrap() >= 0.4, "{:?}", r.order(i));
    }
}

#[test]
fn mixed_limit_distance_vanishes_for_tiny_rho() {
    let r = run_limit_study(LimitKind::Mixed, LimitKind::Mixed.default_alpha(), material(), 2, &[1.0, 1e-10]).unwrap();
    let (d0, d1) = (r.rows[0].distance().unwrap(), r.rows[1].distance().unwrap());
    assert!(d1 < 1e-7 * d0, "{d0:e} {d1:e}");
}

#[test]
fn primal_limit_distance_is_monotone() {
    let r = run_limit_study(LimitKind::Primal, LimitKind::Primal.default_alpha(), material(), 3, &RHOS).unwrap();
    assert!(r.is_monotone());
}

#[test]
fn primal_limit_matches_displacement_oracle() {
    let alpha = Alpha::new(0, 1, 1, 0);
    for level in [2, 3] {
        let s = Setup::new(level, alpha, material());
        let f = |p: Point2<f64>| s.case.f(p);
        let cfg = LimitKind::Primal.limit(alpha, material());
        let sys = assemble_limit(&s.mesh, &s.spaces, &cfg, &f).unwrap();
        let (lim, _) = solve_fields(&s.mesh, &s.spaces, &cfg, &sys).unwrap();
        let oracle = assemble_primal_oracle(&s.mesh, &s.spaces, &material(), &f).unwrap();
        let x = solve(&oracle).unwrap().x;
        let d = rel_diff(&lim.u, &x[..s.spaces.v.total_dofs]);
        assert!(d <= 1e-9, "level {level}: {d:e}");
    }
}

#[test]
fn limit_preconditions_are_enforced() {
    let s = Setup::new(1, Alpha::new(1, 1, 0, 0), material());
    let f = |p: Point2<f64>| s.case.f(p);
    let cfg = LimitKind::Primal.limit(Alpha::new(1, 1, 0, 0), material());
    assert!(assemble_limit(&s.mesh, &s.spaces, &cfg, &f).is_err());
}

/// The hard trace rows of the limit systems hold at the computed solution:
/// `<[sigma_h], v_check> = 0` (mixed) and `<[u_h], t_check> = 0` (primal).
#[test]
fn limit_constraints_hold() {
    for kind in [LimitKind::Mixed, LimitKind::Primal] {
        let alpha = kind.default_alpha();
        let s = Setup::new(3, alpha, material());
        let f = |p: Point2<f64>| s.case.f(p);
        let cfg = kind.limit(alpha, material());
        let sys = assemble_limit(&s.mesh, &s.spaces, &cfg, &f).unwrap();
        let x = solve(&sys).unwrap().x;
        let rows = match kind {
            LimitKind::Mixed => sys.layout.u_check.clone().unwrap(),
            LimitKind::Primal => sys.layout.sigma_check.clone().unwrap(),
        };
        let mx = sys.apply(&x);
        let worst = rows.map(|i| mx[i].abs()).fold(0.0, f64::max);
        let scale = sys.max_abs() * x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-11 * scale, "{kind:?}: {worst:e}");
    }
}
