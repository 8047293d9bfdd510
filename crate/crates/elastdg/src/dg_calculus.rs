//! Edge operators: averages, jumps with the boundary conventions, L2 trace
//! projections, lifting operators and the DG integration-by-parts identity.
//!
//! Every edge term is evaluated once per edge with the fixed plus/minus
//! orientation of the mesh.

use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector, Matrix2, Point2, Vector2};

use crate::error::CalculusError;
use crate::fe_spaces::{
    quadrature, BrokenField, BrokenSpace, Domain, ScalarBasis, TraceShape, TraceSpace, ValueShape,
};
use crate::mesh::{EdgeTag, Mesh};

/// Values of a field on the two sides of an edge. Boundary edges carry
/// only the plus side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSample<T> {
    pub plus: T,
    pub minus: Option<T>,
}

impl<T> TraceSample<T> {
    pub fn interior(plus: T, minus: T) -> Self {
        Self {
            plus,
            minus: Some(minus),
        }
    }

    pub fn boundary(plus: T) -> Self {
        Self { plus, minus: None }
    }
}

/// `{w}`: mean on interior edges, the one-sided value on the boundary.
pub fn average<T>(s: &TraceSample<T>) -> T
where
    T: Copy + Add<Output = T> + Mul<f64, Output = T>,
{
    match s.minus {
        Some(m) => (s.plus + m) * 0.5,
        None => s.plus,
    }
}

/// `v ⊙ n = v n^T + n v^T`.
pub fn odot(v: &Vector2<f64>, n: &Vector2<f64>) -> Matrix2<f64> {
    v * n.transpose() + n * v.transpose()
}

/// `[tau] = tau+ n+ + tau- n-`; zero on Dirichlet edges, `tau n` on Neumann
/// edges. `n` is the plus-side normal.
pub fn jump_tensor(s: &TraceSample<Matrix2<f64>>, n: &Vector2<f64>, tag: EdgeTag) -> Vector2<f64> {
    match tag {
        EdgeTag::Interior => {
            let m = s.minus.unwrap_or_else(Matrix2::zeros);
            (s.plus - m) * n
        }
        EdgeTag::Dirichlet => Vector2::zeros(),
        EdgeTag::Neumann => s.plus * n,
    }
}

/// `[v] = v+ ⊙ n+ + v- ⊙ n- - (v+·n+ + v-·n-) I`; on Dirichlet edges
/// `v ⊙ n - (v·n) I`, zero on Neumann edges.
pub fn jump_vector(s: &TraceSample<Vector2<f64>>, n: &Vector2<f64>, tag: EdgeTag) -> Matrix2<f64> {
    let one_sided = |w: Vector2<f64>| odot(&w, n) - Matrix2::identity() * w.dot(n);
    match tag {
        EdgeTag::Interior => {
            let m = s.minus.unwrap_or_else(Vector2::zeros);
            one_sided(s.plus - m)
        }
        EdgeTag::Dirichlet => one_sided(s.plus),
        EdgeTag::Neumann => Matrix2::zeros(),
    }
}

/// Quadrature data on one edge: parameter, physical weight, physical point
/// and reference coordinates inside the adjacent elements.
#[derive(Clone, Debug)]
pub struct EdgePoint {
    pub s: f64,
    pub weight: f64,
    pub x: Point2<f64>,
    pub xi_plus: [f64; 2],
    pub xi_minus: Option<[f64; 2]>,
}

pub fn edge_points(mesh: &Mesh, e: usize, exactness: usize) -> Vec<EdgePoint> {
    let rule = quadrature(exactness, Domain::Edge).expect("table");
    let edge = &mesh.edges[e];
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| {
            let x = mesh.edge_point(e, p[0]);
            let xp = mesh.geometry[edge.plus].pullback(&x);
            let xm = edge.minus.map(|m| {
                let r = mesh.geometry[m].pullback(&x);
                [r.x, r.y]
            });
            EdgePoint {
                s: p[0],
                weight: w * edge.h,
                x,
                xi_plus: [xp.x, xp.y],
                xi_minus: xm,
            }
        })
        .collect()
}

/// A field restricted to the skeleton, given per edge and parameter.
pub enum EdgeField<'a> {
    Vector(&'a dyn Fn(usize, f64) -> Vector2<f64>),
    Tensor(&'a dyn Fn(usize, f64) -> Matrix2<f64>),
}

/// Values of trace basis function `j` on an edge.
fn trace_basis(space: &TraceSpace, s: f64) -> Vec<Matrix2<f64>> {
    match space.shape {
        TraceShape::Vector => space
            .eval_vector(s)
            .into_iter()
            .map(|v| Matrix2::from_columns(&[v, Vector2::zeros()]))
            .collect(),
        TraceShape::TraceFreeTensor => space.eval_tensor(s),
    }
}

/// Edge-by-edge L2 projection onto a trace space (Frobenius pairing for
/// tensors). Vector fields are passed as `EdgeField::Vector`.
pub fn trace_project(
    mesh: &Mesh,
    target: &TraceSpace,
    field: &EdgeField<'_>,
) -> Result<Vec<f64>, CalculusError> {
    let mut out = vec![0.0; target.total_dofs];
    let exactness = 2 * target.degree.unwrap_or(0) as usize + 8;
    for e in 0..mesh.num_edges() {
        let n = target.counts[e];
        if n == 0 {
            continue;
        }
        let coeffs = project_on_edge(mesh, target, e, field, exactness)?;
        out[target.offsets[e]..target.offsets[e] + n].copy_from_slice(&coeffs);
    }
    Ok(out)
}

/// Projection coefficients on a single edge.
pub fn project_on_edge(
    mesh: &Mesh,
    target: &TraceSpace,
    e: usize,
    field: &EdgeField<'_>,
    exactness: usize,
) -> Result<Vec<f64>, CalculusError> {
    let n = target.counts[e];
    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for p in edge_points(mesh, e, exactness) {
        let basis = trace_basis(target, p.s);
        let value = match field {
            EdgeField::Vector(f) => Matrix2::from_columns(&[f(e, p.s), Vector2::zeros()]),
            EdgeField::Tensor(f) => f(e, p.s),
        };
        for i in 0..n {
            rhs[i] += p.weight * basis[i].dot(&value);
            for j in 0..n {
                gram[(i, j)] += p.weight * basis[i].dot(&basis[j]);
            }
        }
    }
    let chol = gram.cholesky().ok_or(CalculusError::SingularEdgeMass(e))?;
    Ok(chol.solve(&rhs).iter().cloned().collect())
}

/// Value of a trace-space function on edge `e`.
pub fn eval_trace_vector(space: &TraceSpace, coeffs: &[f64], e: usize, s: f64) -> Vector2<f64> {
    let n = space.counts[e];
    if n == 0 {
        return Vector2::zeros();
    }
    let off = space.offsets[e];
    space
        .eval_vector(s)
        .iter()
        .enumerate()
        .fold(Vector2::zeros(), |acc, (j, b)| acc + b * coeffs[off + j])
}

pub fn eval_trace_tensor(space: &TraceSpace, coeffs: &[f64], e: usize, s: f64) -> Matrix2<f64> {
    let n = space.counts[e];
    if n == 0 {
        return Matrix2::zeros();
    }
    let off = space.offsets[e];
    space
        .eval_tensor(s)
        .iter()
        .enumerate()
        .fold(Matrix2::zeros(), |acc, (j, b)| acc + b * coeffs[off + j])
}

/// Which lifting of the edge data to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiftingKind {
    /// `(r_Q(xi), tau) = -<{tau} n, xi n>`
    RQ,
    /// `(l_Q(w), tau) = -<[tau], w>`
    LQ,
    /// `(r_V(w), v) = -<{v}, w>`
    RV,
    /// `(l_V(xi), v) = -<[v] n, xi n>`
    LV,
}

impl LiftingKind {
    pub fn target_shape(self) -> ValueShape {
        match self {
            LiftingKind::RQ | LiftingKind::LQ => ValueShape::SymTensor,
            LiftingKind::RV | LiftingKind::LV => ValueShape::Vector,
        }
    }
}

fn basis_value(shape: ValueShape, ns: usize, j: usize, scalars: &[f64]) -> Result<Vector2<f64>, Matrix2<f64>> {
    let (c, i) = (j / ns, j % ns);
    match shape {
        ValueShape::Vector => Ok(crate::fe_spaces::vec_generator(c) * scalars[i]),
        ValueShape::SymTensor => Err(crate::fe_spaces::sym_generator(c) * scalars[i]),
    }
}

/// Right-hand side of the lifting identity for every basis function of the
/// target space: entry `j` is the edge pairing with basis function `j`.
pub fn lifting_functional(
    mesh: &Mesh,
    space: &BrokenSpace,
    kind: LiftingKind,
    data: &EdgeField<'_>,
) -> Vec<f64> {
    assert_eq!(space.shape, kind.target_shape());
    let basis = ScalarBasis::new(space.degree);
    let ns = basis.dim();
    let exactness = 2 * space.degree as usize + 8;
    let mut out = vec![0.0; space.total_dofs];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let n = edge.normal;
        for p in edge_points(mesh, e, exactness) {
            let sides = [(edge.plus, Some(p.xi_plus), true), (edge.minus.unwrap_or(0), p.xi_minus, false)];
            for (k, xi, is_plus) in sides {
                let Some(xi) = xi else { continue };
                let scalars = basis.values(xi);
                let off = space.offset(k);
                for j in 0..space.per_element {
                    let val = match (basis_value(space.shape, ns, j, &scalars), data) {
                        (Err(t), EdgeField::Tensor(xi_f)) => {
                            let sample = one_sided_tensor(t, is_plus, edge.minus.is_some());
                            let xi_v = xi_f(e, p.s);
                            match kind {
                                LiftingKind::RQ => -(average(&sample) * n).dot(&(xi_v * n)),
                                _ => unreachable!(),
                            }
                        }
                        (Err(t), EdgeField::Vector(w_f)) => {
                            let sample = one_sided_tensor(t, is_plus, edge.minus.is_some());
                            -jump_tensor(&sample, &n, edge.tag).dot(&w_f(e, p.s))
                        }
                        (Ok(v), EdgeField::Vector(w_f)) => {
                            let sample = one_sided_vector(v, is_plus, edge.minus.is_some());
                            -average(&sample).dot(&w_f(e, p.s))
                        }
                        (Ok(v), EdgeField::Tensor(xi_f)) => {
                            let sample = one_sided_vector(v, is_plus, edge.minus.is_some());
                            let jv = jump_vector(&sample, &n, edge.tag);
                            -(jv * n).dot(&(xi_f(e, p.s) * n))
                        }
                    };
                    out[off + j] += p.weight * val;
                }
            }
        }
    }
    out
}

pub fn one_sided_tensor(t: Matrix2<f64>, is_plus: bool, interior: bool) -> TraceSample<Matrix2<f64>> {
    match (interior, is_plus) {
        (false, _) => TraceSample::boundary(t),
        (true, true) => TraceSample::interior(t, Matrix2::zeros()),
        (true, false) => TraceSample::interior(Matrix2::zeros(), t),
    }
}

pub fn one_sided_vector(v: Vector2<f64>, is_plus: bool, interior: bool) -> TraceSample<Vector2<f64>> {
    match (interior, is_plus) {
        (false, _) => TraceSample::boundary(v),
        (true, true) => TraceSample::interior(v, Vector2::zeros()),
        (true, false) => TraceSample::interior(Vector2::zeros(), v),
    }
}

/// Lifting of edge data into the broken space `space` (tensor space for
/// `RQ`/`LQ`, vector space for `RV`/`LV`).
pub fn lifting(mesh: &Mesh, space: &BrokenSpace, kind: LiftingKind, data: &EdgeField<'_>) -> Vec<f64> {
    let rhs = lifting_functional(mesh, space, kind, data);
    // Orthonormal scalar basis: the element mass is |det| times the
    // generator Gram matrix, diagonal (1, 1, 2) for tensors.
    let ns = crate::fe_spaces::dim_pk(space.degree);
    let mut out = rhs;
    for (k, geo) in mesh.geometry.iter().enumerate() {
        let off = space.offset(k);
        let det = geo.det.abs();
        for j in 0..space.per_element {
            let gen_norm = match space.shape {
                ValueShape::SymTensor if j / ns == 2 => 2.0,
                _ => 1.0,
            };
            out[off + j] /= det * gen_norm;
        }
    }
    out
}

/// Terms of the DG identity for a tensor field and a vector field.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityTerms {
    pub strain_pairing: f64,
    pub div_pairing: f64,
    pub jump_avg: f64,
    pub avg_jump: f64,
}

impl IdentityTerms {
    /// `(tau, eps_h v) + (div_h tau, v) - <[tau], {v}> - <{tau} n, [v] n>`
    pub fn residual(&self) -> f64 {
        (self.strain_pairing + self.div_pairing - self.jump_avg - self.avg_jump).abs()
    }

    pub fn scale(&self) -> f64 {
        self.strain_pairing.abs() + self.div_pairing.abs() + self.jump_avg.abs() + self.avg_jump.abs()
    }
}

pub fn dg_identity_terms(
    mesh: &Mesh,
    tau: &BrokenField<'_>,
    v: &BrokenField<'_>,
) -> IdentityTerms {
    let deg = (tau.space.degree + v.space.degree) as usize;
    let rule = quadrature(deg, Domain::Triangle).expect("table");
    let mut t = IdentityTerms::default();
    for (k, geo) in mesh.geometry.iter().enumerate() {
        let det = geo.det.abs();
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let tk = tau.tensor(k, *p);
            let vk = v.vector(k, *p);
            t.strain_pairing += w * det * tk.dot(&v.strain(k, *p, &geo.jac_inv));
            t.div_pairing += w * det * tau.div(k, *p, &geo.jac_inv).dot(&vk);
        }
    }
    for (e, edge) in mesh.edges.iter().enumerate() {
        for p in edge_points(mesh, e, deg) {
            let (ts, vs) = samples_at(edge.plus, edge.minus, &p, tau, v);
            let n = edge.normal;
            t.jump_avg += p.weight * jump_tensor(&ts, &n, edge.tag).dot(&average(&vs));
            t.avg_jump += p.weight * (average(&ts) * n).dot(&(jump_vector(&vs, &n, edge.tag) * n));
        }
    }
    t
}

fn samples_at(
    plus: usize,
    minus: Option<usize>,
    p: &EdgePoint,
    tau: &BrokenField<'_>,
    v: &BrokenField<'_>,
) -> (TraceSample<Matrix2<f64>>, TraceSample<Vector2<f64>>) {
    let tp = tau.tensor(plus, p.xi_plus);
    let vp = v.vector(plus, p.xi_plus);
    match (minus, p.xi_minus) {
        (Some(m), Some(xm)) => (
            TraceSample::interior(tp, tau.tensor(m, xm)),
            TraceSample::interior(vp, v.vector(m, xm)),
        ),
        _ => (TraceSample::boundary(tp), TraceSample::boundary(vp)),
    }
}

/// Residual of the DG identity, `|(tau, eps_h v) + (div_h tau, v) - <[tau],{v}> - <{tau}n,[v]n>|`.
pub fn dg_identity_residual(mesh: &Mesh, tau: &BrokenField<'_>, v: &BrokenField<'_>) -> f64 {
    dg_identity_terms(mesh, tau, v).residual()
}

/// Both sides of `<tau n, v>_{dT} = <{tau} n, [v] n> + <[tau], {v}>`.
pub fn trace_identity_sides(mesh: &Mesh, tau: &BrokenField<'_>, v: &BrokenField<'_>) -> (f64, f64) {
    let deg = (tau.space.degree + v.space.degree) as usize;
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (e, edge) in mesh.edges.iter().enumerate() {
        let n = edge.normal;
        for p in edge_points(mesh, e, deg) {
            let (ts, vs) = samples_at(edge.plus, edge.minus, &p, tau, v);
            lhs += p.weight * (ts.plus * n).dot(&vs.plus);
            if let (Some(tm), Some(vm)) = (ts.minus, vs.minus) {
                lhs += p.weight * (tm * (-n)).dot(&vm);
            }
            rhs += p.weight
                * ((average(&ts) * n).dot(&(jump_vector(&vs, &n, edge.tag) * n))
                    + jump_tensor(&ts, &n, edge.tag).dot(&average(&vs)));
        }
    }
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe_spaces::{build_spaces, Alpha};
    use crate::mesh::{BoundaryRule, Side};
    use rand::{Rng, SeedableRng};

    fn rand_vec(rng: &mut impl Rng) -> Vector2<f64> {
        Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn averages() {
        let c = Vector2::new(1.0, 2.0);
        assert_eq!(average(&TraceSample::interior(c, c)), c);
        assert_eq!(average(&TraceSample::interior(1.0, 0.0)), 0.5);
        assert_eq!(average(&TraceSample::boundary(3.0)), 3.0);
    }

    #[test]
    fn tensor_jumps() {
        let n = Vector2::new(0.0, 1.0);
        let i = Matrix2::identity();
        let cont = TraceSample::interior(i, i);
        assert_eq!(jump_tensor(&cont, &n, EdgeTag::Interior), Vector2::zeros());
        let s = TraceSample::interior(i, Matrix2::zeros());
        assert_eq!(jump_tensor(&s, &n, EdgeTag::Interior), Vector2::new(0.0, 1.0));
        assert_eq!(jump_tensor(&TraceSample::boundary(i), &n, EdgeTag::Dirichlet), Vector2::zeros());
        assert_eq!(jump_tensor(&TraceSample::boundary(i), &n, EdgeTag::Neumann), n);
    }

    #[test]
    fn vector_jumps() {
        let n = Vector2::new(1.0, 0.0);
        let s = TraceSample::interior(Vector2::new(1.0, 0.0), Vector2::zeros());
        let j = jump_vector(&s, &n, EdgeTag::Interior);
        assert_eq!(j, Matrix2::new(1.0, 0.0, 0.0, -1.0));
        assert_eq!(j * n, Vector2::new(1.0, 0.0));
        let c = Vector2::new(0.3, -0.2);
        assert_eq!(jump_vector(&TraceSample::interior(c, c), &n, EdgeTag::Interior), Matrix2::zeros());
        assert_eq!(jump_vector(&TraceSample::boundary(c), &n, EdgeTag::Neumann), Matrix2::zeros());
    }

    #[test]
    fn jump_normal_identity_random() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let n = Vector2::new(ang.cos(), ang.sin());
            let s = TraceSample::interior(rand_vec(&mut rng), rand_vec(&mut rng));
            let j = jump_vector(&s, &n, EdgeTag::Interior);
            assert_eq!(j, j.transpose());
            assert!((j * n - (s.plus - s.minus.unwrap())).amax() < 1e-13);
            assert!(j.trace().abs() < 1e-14);
            let b = jump_vector(&TraceSample::boundary(s.plus), &n, EdgeTag::Dirichlet);
            assert!((b * n - s.plus).amax() < 1e-13);
            // |[v]| <= 2 |[v] n|
            assert!(j.norm() <= 2.0 * (j * n).norm() + 1e-14);
        }
    }

    #[test]
    fn projection_examples() {
        let mesh = Mesh::build_uniform(2, BoundaryRule::default()).unwrap();
        let sp = build_spaces(&mesh, Alpha::new(1, 1, 0, 0));
        let c = Matrix2::new(2.0, 0.5, 0.5, -2.0);
        let f = |_: usize, _: f64| c;
        let coeffs = trace_project(&mesh, &sp.q_check, &EdgeField::Tensor(&f)).unwrap();
        for e in 0..mesh.num_edges() {
            let v = eval_trace_tensor(&sp.q_check, &coeffs, e, 0.3);
            assert!((v - c).amax() < 1e-13);
        }
        // Linear in s onto P0: the midpoint value.
        let g = |_: usize, s: f64| Vector2::new(1.0 + 2.0 * s, -s);
        let coeffs = trace_project(&mesh, &sp.v_check, &EdgeField::Vector(&g)).unwrap();
        for e in 0..mesh.num_edges() {
            if sp.v_check.counts[e] > 0 {
                let v = eval_trace_vector(&sp.v_check, &coeffs, e, 0.9);
                assert!((v - Vector2::new(2.0, -0.5)).amax() < 1e-13);
            }
        }
        // Idempotence on a member of the target.
        let sp1 = build_spaces(&mesh, Alpha::new(1, 1, 2, 2));
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let c0: Vec<f64> = (0..sp1.v_check.total_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = |e: usize, s: f64| eval_trace_vector(&sp1.v_check, &c0, e, s);
        let c1 = trace_project(&mesh, &sp1.v_check, &EdgeField::Vector(&h)).unwrap();
        let d = c0.iter().zip(&c1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-12);
    }

    fn random_field(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dg_identity_random_pairs() {
        for rule in [BoundaryRule::default(), BoundaryRule::neumann_on(&[Side::Right, Side::Top])] {
            let mesh = Mesh::build_uniform(3, rule).unwrap();
            let sp = build_spaces(&mesh, Alpha::new(1, 1, 0, 0));
            let mut rng = rand::rngs::StdRng::seed_from_u64(42);
            for _ in 0..20 {
                let tc = random_field(&mut rng, sp.q.total_dofs);
                let vc = random_field(&mut rng, sp.v.total_dofs);
                let tau = BrokenField::new(&sp.q, &tc);
                let v = BrokenField::new(&sp.v, &vc);
                let terms = dg_identity_terms(&mesh, &tau, &v);
                assert!(terms.residual() <= 1e-11 * terms.scale());
                let (l, r) = trace_identity_sides(&mesh, &tau, &v);
                assert!((l - r).abs() <= 1e-11 * (l.abs() + r.abs() + 1.0));
            }
        }
    }

    #[test]
    fn constant_pair_identity() {
        let mesh = Mesh::build_uniform(2, BoundaryRule::default()).unwrap();
        let sp = build_spaces(&mesh, Alpha::new(0, 0, 0, 0));
        let tc: Vec<f64> = (0..sp.q.total_dofs).map(|j| [1.0, 2.0, 0.5][j % 3]).collect();
        let vc: Vec<f64> = (0..sp.v.total_dofs).map(|j| [1.0, -1.0][j % 2]).collect();
        let terms = dg_identity_terms(
            &mesh,
            &BrokenField::new(&sp.q, &tc),
            &BrokenField::new(&sp.v, &vc),
        );
        assert!(terms.strain_pairing.abs() < 1e-14 && terms.div_pairing.abs() < 1e-14);
        assert!(terms.residual() < 1e-13);
    }

    #[test]
    fn liftings_satisfy_their_identities() {
        let mesh = Mesh::build_uniform(2, BoundaryRule::default()).unwrap();
        let q = BrokenSpace::new(&mesh, ValueShape::SymTensor, 1);
        let v = BrokenSpace::new(&mesh, ValueShape::Vector, 1);
        let xi = |e: usize, s: f64| Matrix2::new(1.0 + s, e as f64 * 0.1, e as f64 * 0.1, s * s);
        let w = |e: usize, s: f64| Vector2::new(s - 0.5, (e % 3) as f64);
        let cases: [(LiftingKind, &BrokenSpace, EdgeField<'_>); 4] = [
            (LiftingKind::RQ, &q, EdgeField::Tensor(&xi)),
            (LiftingKind::LQ, &q, EdgeField::Vector(&w)),
            (LiftingKind::RV, &v, EdgeField::Vector(&w)),
            (LiftingKind::LV, &v, EdgeField::Tensor(&xi)),
        ];
        for (kind, space, data) in cases.iter() {
            let lift = lifting(&mesh, space, *kind, data);
            let rhs = lifting_functional(&mesh, space, *kind, data);
            for k in [0usize, 3, 7] {
                let m = crate::fe_spaces::element_mass(&mesh, space, k);
                let off = space.offset(k);
                let local = DVector::from_column_slice(&lift[off..off + space.per_element]);
                let lhs = &m * local;
                for j in 0..space.per_element {
                    assert!((lhs[j] - rhs[off + j]).abs() < 1e-12, "{kind:?}");
                }
            }
        }
        let zero = |_: usize, _: f64| Matrix2::zeros();
        let l0 = lifting(&mesh, &q, LiftingKind::RQ, &EdgeField::Tensor(&zero));
        assert!(l0.iter().all(|x| *x == 0.0));
    }
}
