#![allow(dead_code)]

use elastdg::assembly::{assemble, FieldSolution, Formulation, MethodConfig};
use elastdg::elasticity_model::{ManufacturedCase, Material};
use elastdg::fe_spaces::{build_spaces, Alpha, SpacePair};
use elastdg::hybrid_solver::solve_fields;
use elastdg::mesh::{BoundaryRule, Mesh};
use nalgebra::Point2;

pub fn material() -> Material {
    Material::new(1.0, 0.4).unwrap()
}

pub struct Setup {
    pub mesh: Mesh,
    pub spaces: SpacePair,
    pub case: ManufacturedCase,
}

impl Setup {
    pub fn new(level: u32, alpha: Alpha, material: Material) -> Self {
        let mesh = Mesh::build_uniform(level, BoundaryRule::all_dirichlet()).unwrap();
        let spaces = build_spaces(&mesh, alpha);
        Self {
            mesh,
            spaces,
            case: ManufacturedCase::new(material),
        }
    }

    pub fn solve(&self, cfg: &MethodConfig) -> FieldSolution {
        let f = |p: Point2<f64>| self.case.f(p);
        let sys = assemble(&self.mesh, &self.spaces, cfg, &f).unwrap();
        solve_fields(&self.mesh, &self.spaces, cfg, &sys).unwrap().0
    }

    pub fn solve_as(&self, cfg: &MethodConfig, form: Formulation) -> FieldSolution {
        let mut c = cfg.clone();
        c.formulation = form;
        self.solve(&c)
    }
}

/// `max |a - b| / max |b|`.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        d / scale
    } else {
        d
    }
}

/// Largest relative difference over the four fields.
pub fn field_diff(a: &FieldSolution, b: &FieldSolution) -> f64 {
    [
        rel_diff(&a.sigma, &b.sigma),
        rel_diff(&a.sigma_check, &b.sigma_check),
        rel_diff(&a.u, &b.u),
        rel_diff(&a.u_check, &b.u_check),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}
