mod common;

use common::{material, rel_diff};
use elastdg::assembly::{assemble_with_data, Formulation, MethodConfig};
use elastdg::fe_spaces::{build_spaces, project_tensor, project_vector, Alpha};
use elastdg::hybrid_solver::solve_fields;
use elastdg::mesh::{BoundaryRule, Mesh};
use nalgebra::{Matrix2, Point2, Vector2};

fn linear_u(p: Point2<f64>) -> Vector2<f64> {
    Vector2::new(0.3 + p.x - 2.0 * p.y, -0.5 + 0.5 * p.x + 0.7 * p.y)
}

fn grad_u() -> Matrix2<f64> {
    Matrix2::new(1.0, -2.0, 0.5, 0.7)
}

/// A linear displacement with its constant stress lies in every space with
/// displacement degree at least one, so it must be reproduced exactly.
#[test]
fn linear_displacement_is_reproduced() {
    let m = material();
    let eps = 0.5 * (grad_u() + grad_u().transpose());
    let sigma = m.apply_stiffness(&eps);
    let cases = [
        MethodConfig::h1(Formulation::FourFieldH1, Alpha::new(0, 1, 1, 0), 1.0, 1.0, 1.0, m),
        MethodConfig::h1(Formulation::FourFieldH1, Alpha::new(1, 1, 1, 1), 2.0, 0.5, 0.5, m),
        MethodConfig::hdiv(Formulation::FourFieldHdiv, Alpha::new(1, 1, 1, 1), 1.0, 1.0, 1.0, m),
        MethodConfig::hdiv(Formulation::FourFieldHdiv, Alpha::new(2, 1, 2, 2), 1.0, 1.0, 0.0, m),
    ];
    let zero = |_: Point2<f64>| Vector2::zeros();
    for level in [1, 3] {
        let mesh = Mesh::build_uniform(level, BoundaryRule::all_dirichlet()).unwrap();
        for cfg in &cases {
            let spaces = build_spaces(&mesh, cfg.alpha);
            let sys = assemble_with_data(&mesh, &spaces, cfg, &zero, Some(&linear_u)).unwrap();
            let (sol, _) = solve_fields(&mesh, &spaces, cfg, &sys).unwrap();
            let ue = project_vector(&mesh, &spaces.v, 6, linear_u);
            let se = project_tensor(&mesh, &spaces.q, 6, |_| sigma);
            let (du, ds) = (rel_diff(&sol.u, &ue), rel_diff(&sol.sigma, &se));
            assert!(du <= 1e-10 && ds <= 1e-10, "{} level {level}: u {du:e} sigma {ds:e}", cfg.alpha);
        }
    }
}

#[test]
fn dirichlet_data_needs_both_traces() {
    let mesh = Mesh::build_uniform(1, BoundaryRule::all_dirichlet()).unwrap();
    let cfg = MethodConfig::hdiv(Formulation::TwoField, Alpha::new(1, 1, 1, 1), 1.0, 1.0, 1.0, material());
    let spaces = build_spaces(&mesh, cfg.alpha);
    let zero = |_: Point2<f64>| Vector2::zeros();
    assert!(assemble_with_data(&mesh, &spaces, &cfg, &zero, Some(&linear_u)).is_err());
}
