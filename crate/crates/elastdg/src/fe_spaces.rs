//! Polynomial bases, quadrature rules and DOF maps for the broken element
//! spaces and the edge trace spaces.

use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, Matrix2, Point2, Vector2};

use crate::error::QuadratureError;
use crate::mesh::{EdgeTag, Mesh};

/// Largest polynomial degree the quadrature tables are built for.
pub const MAX_EXACTNESS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Triangle,
    Edge,
}

/// Points and weights. Triangle rules live on the reference triangle
/// `{x, y >= 0, x + y <= 1}`; edge rules on `[0, 1]` with the second
/// coordinate unused.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub domain: Domain,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn gauss_01(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("n > 0"));
    let mut pairs: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Quadrature exact for polynomials of degree `exactness` on the requested
/// domain. Edge rules are Gauss; triangle rules are collapsed Gauss products.
pub fn quadrature(exactness: usize, domain: Domain) -> Result<QuadratureRule, QuadratureError> {
    if exactness > MAX_EXACTNESS {
        return Err(QuadratureError::Unsupported(exactness, MAX_EXACTNESS));
    }
    match domain {
        Domain::Edge => {
            let n = exactness / 2 + 1;
            let pairs = gauss_01(n);
            Ok(QuadratureRule {
                domain,
                points: pairs.iter().map(|p| [p.0, 0.0]).collect(),
                weights: pairs.iter().map(|p| p.1).collect(),
                exactness,
            })
        }
        Domain::Triangle => {
            // x = a, y = b (1 - a): a monomial of degree d becomes degree d + 1
            // in a, so n points with 2n - 1 >= d + 1 suffice.
            let n = (exactness + 2).div_ceil(2);
            let pairs = gauss_01(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for &(a, wa) in &pairs {
                for &(b, wb) in &pairs {
                    points.push([a, b * (1.0 - a)]);
                    weights.push(wa * wb * (1.0 - a));
                }
            }
            Ok(QuadratureRule {
                domain,
                points,
                weights,
                exactness,
            })
        }
    }
}

/// Number of scalar polynomials of total degree `k` in two variables.
pub fn dim_pk(k: u32) -> usize {
    ((k + 1) * (k + 2) / 2) as usize
}

fn monomial_exponents(k: u32) -> Vec<(i32, i32)> {
    let mut out = Vec::with_capacity(dim_pk(k));
    for t in 0..=k as i32 {
        for b in 0..=t {
            out.push((t - b, b));
        }
    }
    out
}

fn powi(x: f64, p: i32) -> f64 {
    if p <= 0 {
        1.0
    } else {
        x.powi(p)
    }
}

/// Scalar P_k basis on the reference triangle, orthonormal in L2 of the
/// reference element.
#[derive(Clone, Debug)]
pub struct ScalarBasis {
    pub degree: u32,
    exps: Vec<(i32, i32)>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coeffs: DMatrix<f64>,
}

impl ScalarBasis {
    pub fn new(degree: u32) -> Self {
        let exps = monomial_exponents(degree);
        let n = exps.len();
        let rule = quadrature(2 * degree as usize, Domain::Triangle).expect("table");
        let mono: Vec<Vec<f64>> = rule
            .points
            .iter()
            .map(|p| exps.iter().map(|&(a, b)| powi(p[0], a) * powi(p[1], b)).collect())
            .collect();
        let mut coeffs = DMatrix::<f64>::identity(n, n);
        let inner = |c: &DMatrix<f64>, i: usize, j: usize| -> f64 {
            let mut s = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                let mut vi = 0.0;
                let mut vj = 0.0;
                for m in 0..n {
                    vi += c[(i, m)] * mono[q][m];
                    vj += c[(j, m)] * mono[q][m];
                }
                s += w * vi * vj;
            }
            s
        };
        // Gram-Schmidt, run twice for round-off.
        for _ in 0..2 {
            for i in 0..n {
                for j in 0..i {
                    let r = inner(&coeffs, i, j);
                    for m in 0..n {
                        coeffs[(i, m)] -= r * coeffs[(j, m)];
                    }
                }
                let nrm = inner(&coeffs, i, i).sqrt();
                for m in 0..n {
                    coeffs[(i, m)] /= nrm;
                }
            }
        }
        Self {
            degree,
            exps,
            coeffs,
        }
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    pub fn eval(&self, xi: [f64; 2], values: &mut [f64], grads: &mut [Vector2<f64>]) {
        let n = self.dim();
        let mut mv = vec![0.0; n];
        let mut mg = vec![Vector2::zeros(); n];
        for (m, &(a, b)) in self.exps.iter().enumerate() {
            let xa = powi(xi[0], a);
            let yb = powi(xi[1], b);
            mv[m] = xa * yb;
            let dx = if a > 0 { a as f64 * powi(xi[0], a - 1) * yb } else { 0.0 };
            let dy = if b > 0 { b as f64 * xa * powi(xi[1], b - 1) } else { 0.0 };
            mg[m] = Vector2::new(dx, dy);
        }
        for i in 0..n {
            let mut v = 0.0;
            let mut g = Vector2::zeros();
            for m in 0..n {
                let c = self.coeffs[(i, m)];
                v += c * mv[m];
                g += mg[m] * c;
            }
            values[i] = v;
            grads[i] = g;
        }
    }

    pub fn values(&self, xi: [f64; 2]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        let mut g = vec![Vector2::zeros(); self.dim()];
        self.eval(xi, &mut v, &mut g);
        v
    }
}

/// Orthonormal Legendre polynomials on [0, 1], degree `0..=degree`.
pub fn legendre_01(degree: u32, s: f64) -> Vec<f64> {
    let n = degree as usize + 1;
    let x = 2.0 * s - 1.0;
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    if n > 1 {
        p[1] = x;
    }
    for m in 2..n {
        let mf = m as f64;
        p[m] = ((2.0 * mf - 1.0) * x * p[m - 1] - (mf - 1.0) * p[m - 2]) / mf;
    }
    for (m, v) in p.iter_mut().enumerate() {
        *v *= (2.0 * m as f64 + 1.0).sqrt();
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueShape {
    Vector,
    SymTensor,
}

impl ValueShape {
    pub fn components(self) -> usize {
        match self {
            ValueShape::Vector => 2,
            ValueShape::SymTensor => 3,
        }
    }
}

/// Symmetric generators E1 = [[1,0],[0,0]], E2 = [[0,0],[0,1]],
/// E3 = [[0,1],[1,0]].
pub fn sym_generator(g: usize) -> Matrix2<f64> {
    match g {
        0 => Matrix2::new(1.0, 0.0, 0.0, 0.0),
        1 => Matrix2::new(0.0, 0.0, 0.0, 1.0),
        2 => Matrix2::new(0.0, 1.0, 1.0, 0.0),
        _ => panic!("generator index {g}"),
    }
}

pub fn vec_generator(c: usize) -> Vector2<f64> {
    match c {
        0 => Vector2::new(1.0, 0.0),
        1 => Vector2::new(0.0, 1.0),
        _ => panic!("component index {c}"),
    }
}

/// Trace-free symmetric generators E1 - E2 and E3.
pub fn trace_free_generator(g: usize) -> Matrix2<f64> {
    match g {
        0 => Matrix2::new(1.0, 0.0, 0.0, -1.0),
        1 => Matrix2::new(0.0, 1.0, 1.0, 0.0),
        _ => panic!("generator index {g}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeValue {
    Vector(Vector2<f64>),
    Tensor(Matrix2<f64>),
}

/// One basis function sampled at a point: value and reference partial
/// derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisSample {
    pub value: ShapeValue,
    pub d_dx: ShapeValue,
    pub d_dy: ShapeValue,
}

/// Vector- or tensor-valued P_k basis on the reference triangle. Basis
/// function `c * dim(P_k) + i` is scalar function `i` times generator `c`.
#[derive(Clone, Debug)]
pub struct ReferenceBasis {
    pub shape: ValueShape,
    pub scalar: ScalarBasis,
}

pub fn reference_basis(degree: u32, shape: ValueShape) -> ReferenceBasis {
    ReferenceBasis {
        shape,
        scalar: ScalarBasis::new(degree),
    }
}

impl ReferenceBasis {
    pub fn dim(&self) -> usize {
        self.shape.components() * self.scalar.dim()
    }

    pub fn evaluate(&self, xi: [f64; 2]) -> Vec<BasisSample> {
        let ns = self.scalar.dim();
        let mut v = vec![0.0; ns];
        let mut g = vec![Vector2::zeros(); ns];
        self.scalar.eval(xi, &mut v, &mut g);
        let mut out = Vec::with_capacity(self.dim());
        for c in 0..self.shape.components() {
            for i in 0..ns {
                let wrap = |s: f64| match self.shape {
                    ValueShape::Vector => ShapeValue::Vector(vec_generator(c) * s),
                    ValueShape::SymTensor => ShapeValue::Tensor(sym_generator(c) * s),
                };
                out.push(BasisSample {
                    value: wrap(v[i]),
                    d_dx: wrap(g[i].x),
                    d_dy: wrap(g[i].y),
                });
            }
        }
        out
    }
}

/// Degree tuple (a1, a2, a3, a4) for (Q, V, Q-check, V-check); `None` marks
/// an empty trace space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alpha {
    pub sigma: u32,
    pub u: u32,
    pub sigma_check: Option<u32>,
    pub u_check: Option<u32>,
}

impl Alpha {
    pub fn new(a1: u32, a2: u32, a3: u32, a4: u32) -> Self {
        Self {
            sigma: a1,
            u: a2,
            sigma_check: Some(a3),
            u_check: Some(a4),
        }
    }

    pub fn as_array(&self) -> [Option<u32>; 4] {
        [Some(self.sigma), Some(self.u), self.sigma_check, self.u_check]
    }

    pub fn max_degree(&self) -> u32 {
        self.as_array().iter().flatten().cloned().max().unwrap_or(0)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |d: Option<u32>| d.map(|d| d.to_string()).unwrap_or_else(|| "-".into());
        write!(
            f,
            "{},{},{},{}",
            self.sigma,
            self.u,
            show(self.sigma_check),
            show(self.u_check)
        )
    }
}

impl FromStr for Alpha {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(format!("expected four comma-separated degrees, got {s:?}"));
        }
        let req = |p: &str| p.parse::<u32>().map_err(|e| format!("degree {p:?}: {e}"));
        let opt = |p: &str| -> Result<Option<u32>, String> {
            match p {
                "-" | "none" | "empty" => Ok(None),
                _ => req(p).map(Some),
            }
        };
        Ok(Alpha {
            sigma: req(parts[0])?,
            u: req(parts[1])?,
            sigma_check: opt(parts[2])?,
            u_check: opt(parts[3])?,
        })
    }
}

/// Fully discontinuous space of P_k fields.
#[derive(Clone, Debug)]
pub struct BrokenSpace {
    pub shape: ValueShape,
    pub degree: u32,
    pub per_element: usize,
    pub total_dofs: usize,
}

impl BrokenSpace {
    pub fn new(mesh: &Mesh, shape: ValueShape, degree: u32) -> Self {
        let per_element = shape.components() * dim_pk(degree);
        Self {
            shape,
            degree,
            per_element,
            total_dofs: per_element * mesh.num_elements(),
        }
    }

    pub fn offset(&self, element: usize) -> usize {
        element * self.per_element
    }

    pub fn scalar_dim(&self) -> usize {
        dim_pk(self.degree)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceShape {
    Vector,
    /// Trace-free symmetric tensors spanned by E1 - E2 and E3.
    TraceFreeTensor,
}

impl TraceShape {
    pub fn components(self) -> usize {
        2
    }
}

/// Edgewise P_k space on the skeleton with boundary constraints applied by
/// dropping DOFs.
#[derive(Clone, Debug)]
pub struct TraceSpace {
    pub shape: TraceShape,
    pub degree: Option<u32>,
    pub offsets: Vec<usize>,
    pub counts: Vec<usize>,
    pub total_dofs: usize,
}

impl TraceSpace {
    pub fn new(mesh: &Mesh, shape: TraceShape, degree: Option<u32>) -> Self {
        let mut offsets = Vec::with_capacity(mesh.num_edges());
        let mut counts = Vec::with_capacity(mesh.num_edges());
        let mut total = 0;
        for e in &mesh.edges {
            let full = degree.map(|k| shape.components() * (k as usize + 1)).unwrap_or(0);
            let n = match (shape, e.tag) {
                (_, EdgeTag::Interior) => full,
                // V-check vanishes on the Dirichlet part.
                (TraceShape::Vector, EdgeTag::Dirichlet) => 0,
                (TraceShape::Vector, EdgeTag::Neumann) => full,
                (TraceShape::TraceFreeTensor, EdgeTag::Dirichlet) => full,
                // Both trace-free generators have a nonzero normal trace.
                (TraceShape::TraceFreeTensor, EdgeTag::Neumann) => 0,
            };
            offsets.push(total);
            counts.push(n);
            total += n;
        }
        Self {
            shape,
            degree,
            offsets,
            counts,
            total_dofs: total,
        }
    }

    pub fn modes(&self) -> usize {
        self.degree.map(|k| k as usize + 1).unwrap_or(0)
    }

    /// Values of the local basis on `edge` at parameter `s`, as matrices for
    /// tensor traces (vectors are stored in the first column).
    pub fn eval_vector(&self, s: f64) -> Vec<Vector2<f64>> {
        let Some(k) = self.degree else { return Vec::new() };
        let leg = legendre_01(k, s);
        let mut out = Vec::with_capacity(2 * leg.len());
        for c in 0..2 {
            for p in &leg {
                out.push(vec_generator(c) * *p);
            }
        }
        out
    }

    pub fn eval_tensor(&self, s: f64) -> Vec<Matrix2<f64>> {
        let Some(k) = self.degree else { return Vec::new() };
        let leg = legendre_01(k, s);
        let mut out = Vec::with_capacity(2 * leg.len());
        for g in 0..2 {
            for p in &leg {
                out.push(trace_free_generator(g) * *p);
            }
        }
        out
    }
}

/// The four discrete spaces of one discretization.
#[derive(Clone, Debug)]
pub struct SpacePair {
    pub alpha: Alpha,
    pub q: BrokenSpace,
    pub v: BrokenSpace,
    pub q_check: TraceSpace,
    pub v_check: TraceSpace,
}

pub fn build_spaces(mesh: &Mesh, alpha: Alpha) -> SpacePair {
    SpacePair {
        alpha,
        q: BrokenSpace::new(mesh, ValueShape::SymTensor, alpha.sigma),
        v: BrokenSpace::new(mesh, ValueShape::Vector, alpha.u),
        q_check: TraceSpace::new(mesh, TraceShape::TraceFreeTensor, alpha.sigma_check),
        v_check: TraceSpace::new(mesh, TraceShape::Vector, alpha.u_check),
    }
}

/// Reference-element tabulation of a scalar basis at the points of a rule.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<Vector2<f64>>>,
}

impl Tabulation {
    pub fn new(basis: &ScalarBasis, points: &[[f64; 2]]) -> Self {
        let n = basis.dim();
        let mut values = Vec::with_capacity(points.len());
        let mut grads = Vec::with_capacity(points.len());
        for p in points {
            let mut v = vec![0.0; n];
            let mut g = vec![Vector2::zeros(); n];
            basis.eval(*p, &mut v, &mut g);
            values.push(v);
            grads.push(g);
        }
        Self { values, grads }
    }
}

/// Coefficient vector of a broken space paired with its basis, evaluable
/// per element.
pub struct BrokenField<'a> {
    pub space: &'a BrokenSpace,
    pub coeffs: &'a [f64],
    pub basis: ScalarBasis,
}

impl<'a> BrokenField<'a> {
    pub fn new(space: &'a BrokenSpace, coeffs: &'a [f64]) -> Self {
        assert_eq!(coeffs.len(), space.total_dofs);
        Self {
            space,
            coeffs,
            basis: ScalarBasis::new(space.degree),
        }
    }

    fn local(&self, k: usize) -> &[f64] {
        let off = self.space.offset(k);
        &self.coeffs[off..off + self.space.per_element]
    }

    fn scalars(&self, xi: [f64; 2]) -> (Vec<f64>, Vec<Vector2<f64>>) {
        let n = self.basis.dim();
        let mut v = vec![0.0; n];
        let mut g = vec![Vector2::zeros(); n];
        self.basis.eval(xi, &mut v, &mut g);
        (v, g)
    }

    pub fn tensor(&self, k: usize, xi: [f64; 2]) -> Matrix2<f64> {
        let (v, _) = self.scalars(xi);
        tensor_from(self.local(k), &v)
    }

    pub fn vector(&self, k: usize, xi: [f64; 2]) -> Vector2<f64> {
        let (v, _) = self.scalars(xi);
        vector_from(self.local(k), &v)
    }

    /// Divergence of a tensor field; `jac_inv` from the element geometry.
    pub fn div(&self, k: usize, xi: [f64; 2], jac_inv: &Matrix2<f64>) -> Vector2<f64> {
        let (_, g) = self.scalars(xi);
        let ns = self.basis.dim();
        let c = self.local(k);
        let mut out = Vector2::zeros();
        for i in 0..ns {
            let gp = jac_inv.transpose() * g[i];
            for gen in 0..3 {
                out += sym_generator(gen) * gp * c[gen * ns + i];
            }
        }
        out
    }

    /// Symmetric gradient of a vector field.
    pub fn strain(&self, k: usize, xi: [f64; 2], jac_inv: &Matrix2<f64>) -> Matrix2<f64> {
        let (_, g) = self.scalars(xi);
        let ns = self.basis.dim();
        let c = self.local(k);
        let mut grad = Matrix2::zeros();
        for i in 0..ns {
            let gp = jac_inv.transpose() * g[i];
            for comp in 0..2 {
                grad += vec_generator(comp) * gp.transpose() * c[comp * ns + i];
            }
        }
        (grad + grad.transpose()) * 0.5
    }
}

/// Tensor value from local coefficients and scalar basis values.
pub fn tensor_from(local: &[f64], scalars: &[f64]) -> Matrix2<f64> {
    let ns = scalars.len();
    let mut comps = [0.0; 3];
    for (g, c) in comps.iter_mut().enumerate() {
        *c = (0..ns).map(|i| local[g * ns + i] * scalars[i]).sum();
    }
    Matrix2::new(comps[0], comps[2], comps[2], comps[1])
}

pub fn vector_from(local: &[f64], scalars: &[f64]) -> Vector2<f64> {
    let ns = scalars.len();
    let mut comps = [0.0; 2];
    for (c, out) in comps.iter_mut().enumerate() {
        *out = (0..ns).map(|i| local[c * ns + i] * scalars[i]).sum();
    }
    Vector2::new(comps[0], comps[1])
}

/// L2 projection of `f` onto a broken vector space.
pub fn project_vector<F>(mesh: &Mesh, space: &BrokenSpace, exactness: usize, f: F) -> Vec<f64>
where
    F: Fn(Point2<f64>) -> Vector2<f64>,
{
    let basis = ScalarBasis::new(space.degree);
    let rule = quadrature(exactness, Domain::Triangle).expect("table");
    let tab = Tabulation::new(&basis, &rule.points);
    let ns = basis.dim();
    let mut out = vec![0.0; space.total_dofs];
    for (k, geo) in mesh.geometry.iter().enumerate() {
        let off = space.offset(k);
        for (q, p) in rule.points.iter().enumerate() {
            let x = geo.map(&Point2::new(p[0], p[1]));
            let val = f(x);
            for c in 0..2 {
                for i in 0..ns {
                    // Orthonormal on the reference element: mass = |det| I.
                    out[off + c * ns + i] += rule.weights[q] * val[c] * tab.values[q][i];
                }
            }
        }
    }
    out
}

/// L2 projection (Frobenius inner product) onto a broken tensor space.
pub fn project_tensor<F>(mesh: &Mesh, space: &BrokenSpace, exactness: usize, f: F) -> Vec<f64>
where
    F: Fn(Point2<f64>) -> Matrix2<f64>,
{
    let basis = ScalarBasis::new(space.degree);
    let rule = quadrature(exactness, Domain::Triangle).expect("table");
    let tab = Tabulation::new(&basis, &rule.points);
    let ns = basis.dim();
    let mut out = vec![0.0; space.total_dofs];
    for (k, geo) in mesh.geometry.iter().enumerate() {
        let off = space.offset(k);
        for (q, p) in rule.points.iter().enumerate() {
            let x = geo.map(&Point2::new(p[0], p[1]));
            let val = f(x);
            let comps = [val[(0, 0)], val[(1, 1)], 0.5 * (val[(0, 1)] + val[(1, 0)])];
            for g in 0..3 {
                for i in 0..ns {
                    out[off + g * ns + i] += rule.weights[q] * comps[g] * tab.values[q][i];
                }
            }
        }
    }
    out
}

/// Element mass matrix of a broken space on element `k` (Frobenius pairing
/// for tensors).
pub fn element_mass(mesh: &Mesh, space: &BrokenSpace, k: usize) -> DMatrix<f64> {
    let basis = reference_basis(space.degree, space.shape);
    let rule = quadrature(2 * space.degree as usize, Domain::Triangle).expect("table");
    let det = mesh.geometry[k].det.abs();
    let n = basis.dim();
    let mut m = DMatrix::zeros(n, n);
    for (q, p) in rule.points.iter().enumerate() {
        let samples = basis.evaluate(*p);
        for i in 0..n {
            for j in 0..n {
                let v = match (samples[i].value, samples[j].value) {
                    (ShapeValue::Vector(a), ShapeValue::Vector(b)) => a.dot(&b),
                    (ShapeValue::Tensor(a), ShapeValue::Tensor(b)) => a.dot(&b),
                    _ => unreachable!(),
                };
                m[(i, j)] += rule.weights[q] * det * v;
            }
        }
    }
    m
}
