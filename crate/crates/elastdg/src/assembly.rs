//! Sparse block systems for the four-field discretization and its
//! reductions. Unknowns are ordered `[sigma | sigma_check | u | u_check]`,
//! element-major inside broken fields and edge-major inside trace fields.
//!
//! The system is written in symmetric saddle form:
//!
//! ```text
//! (A s, t) + B(t, u) - <[t], u_check>                       = 0
//! 1/(2 tau) <s_check, t_check> + 1/2 <[u], t_check>         = 0
//! B(s, v) + 1/2 <s_check, [v]>                              = (f, v)
//! -<[s], v_check> - 1/eta <u_check, v_check>                = 0
//! ```
//!
//! with `B` either in gradient form
//! `-(t, eps_h v) + <{t} n, [v] n> + <(g.n) [t], [v] n>` or in divergence
//! form `(div_h t, v) - <[t], {v}> + <(g.n) [t], [v] n>`.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;
use std::str::FromStr;

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::{DMatrix, DVector, Matrix2, Point2, Vector2};
use rayon::prelude::*;

use crate::dg_calculus::{
    average, edge_points, jump_tensor, jump_vector, one_sided_tensor, one_sided_vector, EdgePoint,
};
use crate::elasticity_model::Material;
use crate::error::{AssemblyError, CalculusError};
use crate::fe_spaces::{
    quadrature, sym_generator, tensor_from, vec_generator, vector_from, Alpha, BrokenSpace, Domain,
    ScalarBasis, SpacePair, Tabulation, TraceSpace,
};
use crate::mesh::{EdgeTag, Mesh};

/// Forcing term `f` of the momentum equation.
pub type Forcing<'a> = &'a (dyn Fn(Point2<f64>) -> Vector2<f64> + Sync);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Formulation {
    FourFieldH1,
    FourFieldHdiv,
    ThreeFieldH,
    ThreeFieldW,
    TwoField,
    MixedLimit,
    PrimalLimit,
}

impl Formulation {
    pub const ALL: [Formulation; 7] = [
        Formulation::FourFieldH1,
        Formulation::FourFieldHdiv,
        Formulation::ThreeFieldH,
        Formulation::ThreeFieldW,
        Formulation::TwoField,
        Formulation::MixedLimit,
        Formulation::PrimalLimit,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Formulation::FourFieldH1 => "four_field_h1",
            Formulation::FourFieldHdiv => "four_field_hdiv",
            Formulation::ThreeFieldH => "three_field_H",
            Formulation::ThreeFieldW => "three_field_W",
            Formulation::TwoField => "two_field",
            Formulation::MixedLimit => "mixed_limit",
            Formulation::PrimalLimit => "primal_limit",
        }
    }

    /// Whether `sigma_check` / `u_check` are unknowns of the system.
    pub fn keeps_checks(self) -> (bool, bool) {
        match self {
            Formulation::FourFieldH1 | Formulation::FourFieldHdiv => (true, true),
            Formulation::ThreeFieldH | Formulation::MixedLimit => (false, true),
            Formulation::ThreeFieldW | Formulation::PrimalLimit => (true, false),
            Formulation::TwoField => (false, false),
        }
    }

    pub fn default_pairing(self) -> Pairing {
        match self {
            Formulation::FourFieldH1 | Formulation::ThreeFieldW | Formulation::PrimalLimit => {
                Pairing::Grad
            }
            _ => Pairing::Div,
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Formulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Formulation::ALL
            .into_iter()
            .find(|f| f.tag().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let tags: Vec<&str> = Formulation::ALL.iter().map(|f| f.tag()).collect();
                format!("unknown formulation {s:?}, expected one of {}", tags.join(", "))
            })
    }
}

/// Which side of the DG identity is used for the stress/displacement
/// coupling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    Grad,
    Div,
}

/// Edge parameter `rho * h_e^power`. `rho` may be 0 or infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Param {
    pub rho: f64,
    pub power: i32,
}

impl Param {
    pub fn new(rho: f64, power: i32) -> Self {
        Self { rho, power }
    }

    pub fn value(&self, h: f64) -> f64 {
        if self.rho == 0.0 || self.rho.is_infinite() {
            self.rho
        } else {
            self.rho * h.powi(self.power)
        }
    }

    /// The reciprocal parameter `1 / (rho h^p) = (1/rho) h^-p`.
    pub fn inverse(&self) -> Self {
        Self {
            rho: 1.0 / self.rho,
            power: -self.power,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.rho, self.power)
    }
}

impl FromStr for Param {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (rho, p) = s
            .split_once(',')
            .ok_or_else(|| format!("expected rho,p, got {s:?}"))?;
        let rho: f64 = match rho.trim() {
            "inf" | "infinity" => f64::INFINITY,
            r => r.parse().map_err(|e| format!("coefficient {r:?}: {e}"))?,
        };
        if rho < 0.0 || rho.is_nan() {
            return Err(format!("coefficient must be nonnegative, got {rho}"));
        }
        let power = p.trim().parse().map_err(|e| format!("exponent {p:?}: {e}"))?;
        Ok(Self { rho, power })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodConfig {
    pub formulation: Formulation,
    pub alpha: Alpha,
    /// Closure parameter of the `u_check` row.
    pub eta: Param,
    /// Closure parameter of the `sigma_check` row.
    pub tau: Param,
    pub gamma: f64,
    pub material: Material,
    /// Multiplies `tau` on Dirichlet edges.
    pub boundary_tau_scale: f64,
    pub pairing: Option<Pairing>,
}

impl MethodConfig {
    pub fn new(
        formulation: Formulation,
        alpha: Alpha,
        eta: Param,
        tau: Param,
        gamma: f64,
        material: Material,
    ) -> Self {
        Self {
            formulation,
            alpha,
            eta,
            tau,
            gamma,
            material,
            boundary_tau_scale: 1.0,
            pairing: None,
        }
    }

    /// H1 regime: `tau = rho1 / h`, `eta = rho2 h`.
    pub fn h1(formulation: Formulation, alpha: Alpha, rho1: f64, rho2: f64, gamma: f64, material: Material) -> Self {
        Self::new(formulation, alpha, Param::new(rho2, 1), Param::new(rho1, -1), gamma, material)
    }

    /// H(div) regime: `tau = rho1 h`, `1 / eta = rho2 h`.
    pub fn hdiv(formulation: Formulation, alpha: Alpha, rho1: f64, rho2: f64, gamma: f64, material: Material) -> Self {
        Self::new(
            formulation,
            alpha,
            Param::new(1.0 / rho2, -1),
            Param::new(rho1, 1),
            gamma,
            material,
        )
    }

    pub fn pairing(&self) -> Pairing {
        self.pairing.unwrap_or(self.formulation.default_pairing())
    }

    pub fn tau_on(&self, h: f64, tag: EdgeTag) -> f64 {
        let t = self.tau.value(h);
        if tag == EdgeTag::Dirichlet {
            t * self.boundary_tau_scale
        } else {
            t
        }
    }

    pub fn eta_on(&self, h: f64) -> f64 {
        self.eta.value(h)
    }

    /// Parameter regime violations. These are reported, not rejected.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let h1 = self.tau.power == -1 && self.eta.power == 1;
        let hdiv = self.tau.power == 1 && self.eta.power == -1;
        if !h1 && !hdiv {
            out.push(format!(
                "tau exponent {} and eta exponent {} match neither the H1 nor the H(div) regime",
                self.tau.power, self.eta.power
            ));
        }
        if self.gamma < 0.0 {
            out.push(format!("gamma = {} is negative", self.gamma));
        }
        out
    }

    /// The configuration actually assembled for a limit formulation.
    pub fn effective(&self) -> MethodConfig {
        let mut c = self.clone();
        match self.formulation {
            Formulation::MixedLimit => {
                c.gamma = 0.0;
                c.tau = Param::new(0.0, 1);
                c.eta = Param::new(f64::INFINITY, -1);
            }
            Formulation::PrimalLimit => {
                c.gamma = 0.0;
                c.eta = Param::new(0.0, 1);
                c.tau = Param::new(f64::INFINITY, -1);
            }
            _ => {}
        }
        c
    }
}

/// Index ranges of the unknowns present in a system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldLayout {
    pub sigma: Range<usize>,
    pub sigma_check: Option<Range<usize>>,
    pub u: Range<usize>,
    pub u_check: Option<Range<usize>>,
}

impl FieldLayout {
    pub fn new(spaces: &SpacePair, keeps: (bool, bool)) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let sigma = take(spaces.q.total_dofs);
        let sigma_check = keeps.0.then(|| take(spaces.q_check.total_dofs));
        let u = take(spaces.v.total_dofs);
        let u_check = keeps.1.then(|| take(spaces.v_check.total_dofs));
        Self {
            sigma,
            sigma_check,
            u,
            u_check,
        }
    }

    pub fn dim(&self) -> usize {
        let mut n = self.sigma.len() + self.u.len();
        n += self.sigma_check.as_ref().map_or(0, |r| r.len());
        n += self.u_check.as_ref().map_or(0, |r| r.len());
        n
    }
}

/// Assembled saddle-point system.
pub struct BlockSystem {
    pub matrix: SparseColMat<usize, f64>,
    pub rhs: Vec<f64>,
    pub layout: FieldLayout,
    /// Trace mass entries of rows whose closure parameter is infinite; the
    /// diagonal block there is zero.
    pub hard_mass: Vec<Triplet<usize, usize, f64>>,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn has_hard_constraints(&self) -> bool {
        !self.hard_mass.is_empty()
    }

    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let m = self.matrix.as_ref();
        let mut out = Vec::with_capacity(m.compute_nnz());
        for j in 0..m.ncols() {
            for (i, v) in m.row_idx_of_col(j).zip(m.val_of_col(j)) {
                out.push((i, j, *v));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut d = DMatrix::zeros(n, n);
        for (i, j, v) in self.entries() {
            d[(i, j)] += v;
        }
        d
    }

    pub fn max_abs(&self) -> f64 {
        self.matrix.as_ref().val().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |M - M^T| / max |M|`.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.matrix.as_ref().transpose().to_col_major().expect("transpose");
        let diff = &self.matrix - &t;
        let d = diff.val().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        d / self.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = self.matrix.as_ref();
        let mut y = vec![0.0; m.nrows()];
        for j in 0..m.ncols() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (i, v) in m.row_idx_of_col(j).zip(m.val_of_col(j)) {
                y[i] += v * xj;
            }
        }
        y
    }

    /// Coordinate dump, one `row col value` line per stored entry, 0-based.
    pub fn write_matrix_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (i, j, v) in self.entries() {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Coefficients of all four fields after a solve. Eliminated trace fields
/// are filled in by [`recover_eliminated`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSolution {
    pub sigma: Vec<f64>,
    pub sigma_check: Vec<f64>,
    pub u: Vec<f64>,
    pub u_check: Vec<f64>,
}

impl FieldSolution {
    pub fn from_vector(layout: &FieldLayout, spaces: &SpacePair, x: &[f64]) -> Self {
        let take = |r: &Option<Range<usize>>, n: usize| match r {
            Some(r) => x[r.clone()].to_vec(),
            None => vec![0.0; n],
        };
        Self {
            sigma: x[layout.sigma.clone()].to_vec(),
            sigma_check: take(&layout.sigma_check, spaces.q_check.total_dofs),
            u: x[layout.u.clone()].to_vec(),
            u_check: take(&layout.u_check, spaces.v_check.total_dofs),
        }
    }

    /// Numerical traces `(sigma_hat, u_hat)` on edge `e` at parameter `s`.
    /// `u_hat` is zero on Dirichlet edges.
    pub fn numerical_traces(
        &self,
        mesh: &Mesh,
        spaces: &SpacePair,
        config: &MethodConfig,
        e: usize,
        s: f64,
    ) -> (Matrix2<f64>, Vector2<f64>) {
        let cfg = config.effective();
        let edge = &mesh.edges[e];
        let n = edge.normal;
        let x = mesh.edge_point(e, s);
        let qb = ScalarBasis::new(spaces.q.degree);
        let vb = ScalarBasis::new(spaces.v.degree);
        let at = |k: usize| {
            let xi = mesh.geometry[k].pullback(&x);
            let xi = [xi.x, xi.y];
            let ts = tensor_from(&self.sigma[spaces.q.offset(k)..][..spaces.q.per_element], &qb.values(xi));
            let vs = vector_from(&self.u[spaces.v.offset(k)..][..spaces.v.per_element], &vb.values(xi));
            (ts, vs)
        };
        let (tp, vp) = at(edge.plus);
        let (ts, vs) = match edge.minus {
            Some(m) => {
                let (tm, vm) = at(m);
                (
                    crate::dg_calculus::TraceSample::interior(tp, tm),
                    crate::dg_calculus::TraceSample::interior(vp, vm),
                )
            }
            None => (
                crate::dg_calculus::TraceSample::boundary(tp),
                crate::dg_calculus::TraceSample::boundary(vp),
            ),
        };
        // The gamma correction acts on interior edges only.
        let g = if edge.minus.is_some() { cfg.gamma } else { 0.0 };
        let gamma = Vector2::new(g, g);
        let gn = gamma.dot(&n);
        let sig_check = crate::dg_calculus::eval_trace_tensor(&spaces.q_check, &self.sigma_check, e, s);
        let u_check = crate::dg_calculus::eval_trace_vector(&spaces.v_check, &self.u_check, e, s);
        let sigma_hat = average(&ts) + jump_tensor(&ts, &n, edge.tag) * gamma.transpose() + sig_check;
        let u_hat = if edge.tag == EdgeTag::Dirichlet {
            Vector2::zeros()
        } else {
            average(&vs) - jump_vector(&vs, &n, edge.tag) * n * gn + u_check
        };
        (sigma_hat, u_hat)
    }
}

/// Optional nonzero Dirichlet data, supported by the four-field
/// formulations only (used for patch tests).
pub type DirichletData<'a> = Option<&'a (dyn Fn(Point2<f64>) -> Vector2<f64> + Sync)>;

/// Default quadrature exactness for bilinear forms.
pub fn assembly_exactness(alpha: &Alpha) -> usize {
    2 * alpha.max_degree() as usize + 2
}

/// Local matrices of one edge.
struct EdgeLocal {
    sigma_dofs: Vec<usize>,
    u_dofs: Vec<usize>,
    qc_dofs: Range<usize>,
    vc_dofs: Range<usize>,
    /// `b[i][j]`: edge part of `B(t_i, v_j)`.
    b: DMatrix<f64>,
    /// `<[v_j], t_check_m>`, rows `m`.
    jq: DMatrix<f64>,
    /// `<[t_i], v_check_m>`, rows `m`.
    lv: DMatrix<f64>,
    mq: DMatrix<f64>,
    mv: DMatrix<f64>,
    /// Dirichlet data terms: `<g, t_i n>` and `<T(g), t_check_m>`.
    g_sigma: DVector<f64>,
    g_qc: DVector<f64>,
}

struct Bases {
    q: ScalarBasis,
    v: ScalarBasis,
}

fn edge_sides(mesh: &Mesh, e: usize, p: &EdgePoint) -> Vec<(usize, bool, [f64; 2])> {
    let edge = &mesh.edges[e];
    let mut out = vec![(edge.plus, true, p.xi_plus)];
    if let (Some(m), Some(xm)) = (edge.minus, p.xi_minus) {
        out.push((m, false, xm));
    }
    out
}

fn trace_values_tensor(space: &TraceSpace, e: usize, s: f64) -> Vec<Matrix2<f64>> {
    if space.counts[e] == 0 {
        Vec::new()
    } else {
        space.eval_tensor(s)
    }
}

fn trace_values_vector(space: &TraceSpace, e: usize, s: f64) -> Vec<Vector2<f64>> {
    if space.counts[e] == 0 {
        Vec::new()
    } else {
        space.eval_vector(s)
    }
}

fn edge_local(
    mesh: &Mesh,
    spaces: &SpacePair,
    bases: &Bases,
    cfg: &MethodConfig,
    e: usize,
    exactness: usize,
    dirichlet: DirichletData<'_>,
) -> EdgeLocal {
    let edge = &mesh.edges[e];
    let n = edge.normal;
    let interior = edge.minus.is_some();
    let nq = bases.q.dim();
    let nv = bases.v.dim();
    let per_q = spaces.q.per_element;
    let per_v = spaces.v.per_element;
    let elems: Vec<usize> = std::iter::once(edge.plus).chain(edge.minus).collect();
    let sigma_dofs: Vec<usize> = elems
        .iter()
        .flat_map(|&k| spaces.q.offset(k)..spaces.q.offset(k) + per_q)
        .collect();
    let u_dofs: Vec<usize> = elems
        .iter()
        .flat_map(|&k| spaces.v.offset(k)..spaces.v.offset(k) + per_v)
        .collect();
    let nqc = spaces.q_check.counts[e];
    let nvc = spaces.v_check.counts[e];
    let mut b = DMatrix::zeros(sigma_dofs.len(), u_dofs.len());
    let mut jq = DMatrix::zeros(nqc, u_dofs.len());
    let mut lv = DMatrix::zeros(nvc, sigma_dofs.len());
    let mut mq = DMatrix::zeros(nqc, nqc);
    let mut mv = DMatrix::zeros(nvc, nvc);
    let mut g_sigma = DVector::zeros(sigma_dofs.len());
    let mut g_qc = DVector::zeros(nqc);
    let gn = if interior { cfg.gamma * (n.x + n.y) } else { 0.0 };
    let pairing = cfg.pairing();

    let mut sig_jump = vec![Vector2::zeros(); sigma_dofs.len()];
    let mut sig_avgn = vec![Vector2::zeros(); sigma_dofs.len()];
    let mut u_jump = vec![Matrix2::zeros(); u_dofs.len()];
    let mut u_jumpn = vec![Vector2::zeros(); u_dofs.len()];
    let mut u_avg = vec![Vector2::zeros(); u_dofs.len()];

    for p in edge_points(mesh, e, exactness) {
        for (side, (_k, is_plus, xi)) in edge_sides(mesh, e, &p).into_iter().enumerate() {
            let qs = bases.q.values(xi);
            for j in 0..per_q {
                let t = sym_generator(j / nq) * qs[j % nq];
                let sample = one_sided_tensor(t, is_plus, interior);
                sig_jump[side * per_q + j] = jump_tensor(&sample, &n, edge.tag);
                sig_avgn[side * per_q + j] = average(&sample) * n;
            }
            let vs = bases.v.values(xi);
            for j in 0..per_v {
                let v = vec_generator(j / nv) * vs[j % nv];
                let sample = one_sided_vector(v, is_plus, interior);
                let jv = jump_vector(&sample, &n, edge.tag);
                u_jump[side * per_v + j] = jv;
                u_jumpn[side * per_v + j] = jv * n;
                u_avg[side * per_v + j] = average(&sample);
            }
        }
        let w = p.weight;
        for i in 0..sigma_dofs.len() {
            for j in 0..u_dofs.len() {
                let core = match pairing {
                    Pairing::Grad => sig_avgn[i].dot(&u_jumpn[j]),
                    Pairing::Div => -sig_jump[i].dot(&u_avg[j]),
                };
                b[(i, j)] += w * (core + gn * sig_jump[i].dot(&u_jumpn[j]));
            }
        }
        let qc = trace_values_tensor(&spaces.q_check, e, p.s);
        for m in 0..nqc {
            for j in 0..u_dofs.len() {
                jq[(m, j)] += w * qc[m].dot(&u_jump[j]);
            }
            for m2 in 0..nqc {
                mq[(m, m2)] += w * qc[m].dot(&qc[m2]);
            }
        }
        let vc = trace_values_vector(&spaces.v_check, e, p.s);
        for m in 0..nvc {
            for i in 0..sigma_dofs.len() {
                lv[(m, i)] += w * vc[m].dot(&sig_jump[i]);
            }
            for m2 in 0..nvc {
                mv[(m, m2)] += w * vc[m].dot(&vc[m2]);
            }
        }
        if let (Some(g), EdgeTag::Dirichlet) = (dirichlet, edge.tag) {
            let gv = g(p.x);
            for i in 0..per_q {
                // On a Dirichlet edge the average is the one-sided value.
                g_sigma[i] += w * sig_avgn[i].dot(&gv);
            }
            let tg = jump_vector(&crate::dg_calculus::TraceSample::boundary(gv), &n, edge.tag);
            for m in 0..nqc {
                g_qc[m] += w * qc[m].dot(&tg);
            }
        }
    }
    EdgeLocal {
        sigma_dofs,
        u_dofs,
        qc_dofs: spaces.q_check.offsets[e]..spaces.q_check.offsets[e] + nqc,
        vc_dofs: spaces.v_check.offsets[e]..spaces.v_check.offsets[e] + nvc,
        b,
        jq,
        lv,
        mq,
        mv,
        g_sigma,
        g_qc,
    }
}

pub(crate) struct ElementLocal {
    pub(crate) a: DMatrix<f64>,
    pub(crate) b: DMatrix<f64>,
}

pub(crate) fn element_local(
    mesh: &Mesh,
    spaces: &SpacePair,
    tab_q: &Tabulation,
    tab_v: &Tabulation,
    weights: &[f64],
    material: &Material,
    pairing: Pairing,
    k: usize,
) -> ElementLocal {
    let geo = &mesh.geometry[k];
    let det = geo.det.abs();
    let nq = tab_q.values[0].len();
    let nv = tab_v.values[0].len();
    let per_q = spaces.q.per_element;
    let per_v = spaces.v.per_element;
    // Orthonormal scalar basis: (A E_g phi_p, E_h phi_q) = |det| delta_pq
    // (a E_g:E_h + b tr E_g tr E_h).
    let gram = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
    let tr = [1.0, 1.0, 0.0];
    let (ca, cb) = (material.a(), material.b());
    let mut a = DMatrix::zeros(per_q, per_q);
    for g in 0..3 {
        for h in 0..3 {
            let c = det * (ca * gram[g][h] + cb * tr[g] * tr[h]);
            if c == 0.0 {
                continue;
            }
            for p in 0..nq {
                a[(g * nq + p, h * nq + p)] = c;
            }
        }
    }
    let mut b = DMatrix::zeros(per_q, per_v);
    let jt = geo.jac_inv.transpose();
    for (qi, w) in weights.iter().enumerate() {
        let wd = w * det;
        match pairing {
            Pairing::Grad => {
                // -(E_g phi_p, eps(e_c psi_s)) = -phi_p (E_g grad psi_s)_c
                for s in 0..nv {
                    let gs = jt * tab_v.grads[qi][s];
                    for g in 0..3 {
                        let eg = sym_generator(g) * gs;
                        for p in 0..nq {
                            let ph = tab_q.values[qi][p];
                            for c in 0..2 {
                                b[(g * nq + p, c * nv + s)] -= wd * ph * eg[c];
                            }
                        }
                    }
                }
            }
            Pairing::Div => {
                // (div(E_g phi_p), e_c psi_s) = (E_g grad phi_p)_c psi_s
                for p in 0..nq {
                    let gp = jt * tab_q.grads[qi][p];
                    for g in 0..3 {
                        let eg = sym_generator(g) * gp;
                        for s in 0..nv {
                            let ps = tab_v.values[qi][s];
                            for c in 0..2 {
                                b[(g * nq + p, c * nv + s)] += wd * eg[c] * ps;
                            }
                        }
                    }
                }
            }
        }
    }
    ElementLocal { a, b }
}

/// `(f, v)` for every basis function of the displacement space.
pub fn assemble_rhs(mesh: &Mesh, space: &BrokenSpace, exactness: usize, f: Forcing<'_>) -> Vec<f64> {
    let basis = ScalarBasis::new(space.degree);
    let rule = quadrature(exactness, Domain::Triangle).expect("quadrature table");
    let tab = Tabulation::new(&basis, &rule.points);
    let ns = basis.dim();
    let mut out = vec![0.0; space.total_dofs];
    out.par_chunks_mut(space.per_element)
        .enumerate()
        .for_each(|(k, local)| {
            let geo = &mesh.geometry[k];
            let det = geo.det.abs();
            for (q, p) in rule.points.iter().enumerate() {
                let fx = f(geo.map(&Point2::new(p[0], p[1])));
                for c in 0..2 {
                    for i in 0..ns {
                        local[c * ns + i] += rule.weights[q] * det * fx[c] * tab.values[q][i];
                    }
                }
            }
        });
    out
}

fn check_degrees(spaces: &SpacePair, config: &MethodConfig) -> Result<(), AssemblyError> {
    if spaces.alpha != config.alpha {
        return Err(AssemblyError::DegreeMismatch {
            spaces: spaces.alpha.as_array(),
            config: config.alpha.as_array(),
        });
    }
    Ok(())
}

/// Checks the space inclusions a limit formulation needs.
pub fn check_limit_preconditions(config: &MethodConfig) -> Result<(), AssemblyError> {
    let a = config.alpha;
    match config.formulation {
        Formulation::MixedLimit => match a.u_check {
            Some(a4) if a4 >= a.u => Ok(()),
            _ => Err(AssemblyError::Inclusion(format!(
                "mixed limit needs V|_E in V_check (a4 >= a2), got alpha = ({a})"
            ))),
        },
        Formulation::PrimalLimit => match a.sigma_check {
            Some(a3) if a3 >= a.u && a3 >= a.sigma => Ok(()),
            _ => Err(AssemblyError::Inclusion(format!(
                "primal limit needs Q n in Q_check and V|_E in Q_check n (a3 >= a1, a3 >= a2), got alpha = ({a})"
            ))),
        },
        _ => Ok(()),
    }
}

fn inv_spd(m: &DMatrix<f64>, e: usize) -> Result<DMatrix<f64>, AssemblyError> {
    let chol = m.clone().cholesky().ok_or(CalculusError::SingularEdgeMass(e))?;
    Ok(chol.inverse())
}

/// Assembles the system of `config.formulation` (limits use their effective
/// parameters).
pub fn assemble(
    mesh: &Mesh,
    spaces: &SpacePair,
    config: &MethodConfig,
    f: Forcing<'_>,
) -> Result<BlockSystem, AssemblyError> {
    assemble_with_data(mesh, spaces, config, f, None)
}

pub fn assemble_with_data(
    mesh: &Mesh,
    spaces: &SpacePair,
    config: &MethodConfig,
    f: Forcing<'_>,
    dirichlet: DirichletData<'_>,
) -> Result<BlockSystem, AssemblyError> {
    check_degrees(spaces, config)?;
    check_limit_preconditions(config)?;
    let cfg = config.effective();
    let (keep_qc, keep_vc) = cfg.formulation.keeps_checks();
    if dirichlet.is_some() && !(keep_qc && keep_vc) {
        return Err(AssemblyError::WrongFormulation(cfg.formulation.tag()));
    }
    let layout = FieldLayout::new(spaces, (keep_qc, keep_vc));
    // Eliminating a field whose closure row is a hard constraint is
    // impossible.
    for edge in &mesh.edges {
        if !keep_qc && spaces.q_check.degree.is_some() && cfg.tau_on(edge.h, edge.tag).is_infinite() {
            return Err(AssemblyError::HardConstraint { field: "sigma_check" });
        }
        if !keep_vc && spaces.v_check.degree.is_some() && cfg.eta_on(edge.h).is_infinite() {
            return Err(AssemblyError::HardConstraint { field: "u_check" });
        }
    }
    let exactness = assembly_exactness(&cfg.alpha);
    if exactness > crate::fe_spaces::MAX_EXACTNESS {
        return Err(crate::error::QuadratureError::Unsupported(exactness, crate::fe_spaces::MAX_EXACTNESS).into());
    }
    let bases = Bases {
        q: ScalarBasis::new(spaces.q.degree),
        v: ScalarBasis::new(spaces.v.degree),
    };
    let rule = quadrature(exactness, Domain::Triangle)?;
    let tab_q = Tabulation::new(&bases.q, &rule.points);
    let tab_v = Tabulation::new(&bases.v, &rule.points);
    let pairing = cfg.pairing();
    let s0 = layout.sigma.start;
    let u0 = layout.u.start;

    let mut rhs = vec![0.0; layout.dim()];
    let element_trips: Vec<Vec<Triplet<usize, usize, f64>>> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let loc = element_local(
                mesh,
                spaces,
                &tab_q,
                &tab_v,
                &rule.weights,
                &cfg.material,
                pairing,
                k,
            );
            let so = s0 + spaces.q.offset(k);
            let uo = u0 + spaces.v.offset(k);
            let mut t = Vec::with_capacity(loc.a.len() + 2 * loc.b.len());
            for j in 0..loc.a.ncols() {
                for i in 0..loc.a.nrows() {
                    if loc.a[(i, j)] != 0.0 {
                        t.push(Triplet::new(so + i, so + j, loc.a[(i, j)]));
                    }
                }
            }
            push_coupling(&mut t, &loc.b, |i| so + i, |j| uo + j);
            t
        })
        .collect();
    // Right-hand side in the displacement block.
    let frhs = assemble_rhs(mesh, &spaces.v, exactness, f);
    rhs[layout.u.clone()].copy_from_slice(&frhs);

    let edge_out: Vec<Result<EdgeOut, AssemblyError>> = (0..mesh.num_edges())
        .into_par_iter()
        .map(|e| edge_contributions(mesh, spaces, &bases, &cfg, &layout, e, exactness, dirichlet))
        .collect();

    let mut trips: Vec<Triplet<usize, usize, f64>> = element_trips.into_iter().flatten().collect();
    let mut hard_mass = Vec::new();
    for out in edge_out {
        let out = out?;
        trips.extend(out.trips);
        hard_mass.extend(out.hard_mass);
        for (i, v) in out.rhs {
            rhs[i] += v;
        }
    }
    let n = layout.dim();
    let matrix = SparseColMat::try_new_from_triplets(n, n, &trips)
        .map_err(|e| AssemblyError::Inclusion(format!("sparse matrix construction failed: {e:?}")))?;
    Ok(BlockSystem {
        matrix,
        rhs,
        layout,
        hard_mass,
    })
}

struct EdgeOut {
    trips: Vec<Triplet<usize, usize, f64>>,
    hard_mass: Vec<Triplet<usize, usize, f64>>,
    rhs: Vec<(usize, f64)>,
}

/// Pushes `m` at (row(i), col(j)) and its transpose.
fn push_coupling(
    t: &mut Vec<Triplet<usize, usize, f64>>,
    m: &DMatrix<f64>,
    row: impl Fn(usize) -> usize,
    col: impl Fn(usize) -> usize,
) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                t.push(Triplet::new(row(i), col(j), v));
                t.push(Triplet::new(col(j), row(i), v));
            }
        }
    }
}

fn push_block(
    t: &mut Vec<Triplet<usize, usize, f64>>,
    m: &DMatrix<f64>,
    row: impl Fn(usize) -> usize,
    col: impl Fn(usize) -> usize,
) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                t.push(Triplet::new(row(i), col(j), v));
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn edge_contributions(
    mesh: &Mesh,
    spaces: &SpacePair,
    bases: &Bases,
    cfg: &MethodConfig,
    layout: &FieldLayout,
    e: usize,
    exactness: usize,
    dirichlet: DirichletData<'_>,
) -> Result<EdgeOut, AssemblyError> {
    let edge = &mesh.edges[e];
    let loc = edge_local(mesh, spaces, bases, cfg, e, exactness, dirichlet);
    let s0 = layout.sigma.start;
    let u0 = layout.u.start;
    let sd = |i: usize| s0 + loc.sigma_dofs[i];
    let ud = |j: usize| u0 + loc.u_dofs[j];
    let mut out = EdgeOut {
        trips: Vec::new(),
        hard_mass: Vec::new(),
        rhs: Vec::new(),
    };
    push_coupling(&mut out.trips, &loc.b, sd, ud);

    let tau = cfg.tau_on(edge.h, edge.tag);
    let eta = cfg.eta_on(edge.h);

    // sigma_check closure.
    if loc.qc_dofs.len() > 0 {
        match &layout.sigma_check {
            Some(r) => {
                let qd = |m: usize| r.start + loc.qc_dofs.start + m;
                if tau == 0.0 {
                    push_block(&mut out.trips, &loc.mq, qd, qd);
                } else {
                    if tau.is_infinite() {
                        for j in 0..loc.mq.ncols() {
                            for i in 0..loc.mq.nrows() {
                                out.hard_mass.push(Triplet::new(qd(i), qd(j), 0.5 * loc.mq[(i, j)]));
                            }
                        }
                    } else {
                        push_block(&mut out.trips, &(&loc.mq * (0.5 / tau)), qd, qd);
                    }
                    push_coupling(&mut out.trips, &(&loc.jq * 0.5), qd, ud);
                    for m in 0..loc.g_qc.len() {
                        if loc.g_qc[m] != 0.0 {
                            out.rhs.push((qd(m), 0.5 * loc.g_qc[m]));
                        }
                    }
                }
            }
            None => {
                if tau != 0.0 {
                    // c_D = tau/2 J^T Mq^-1 J enters the uu block with a minus.
                    let c = loc.jq.transpose() * inv_spd(&loc.mq, e)? * &loc.jq * (0.5 * tau);
                    push_block(&mut out.trips, &(-c), ud, ud);
                }
            }
        }
    }
    // u_check closure.
    if loc.vc_dofs.len() > 0 {
        match &layout.u_check {
            Some(r) => {
                let vd = |m: usize| r.start + loc.vc_dofs.start + m;
                if eta == 0.0 {
                    push_block(&mut out.trips, &(-&loc.mv), vd, vd);
                } else {
                    if eta.is_infinite() {
                        for j in 0..loc.mv.ncols() {
                            for i in 0..loc.mv.nrows() {
                                out.hard_mass.push(Triplet::new(vd(i), vd(j), -loc.mv[(i, j)]));
                            }
                        }
                    } else {
                        push_block(&mut out.trips, &(&loc.mv * (-1.0 / eta)), vd, vd);
                    }
                    push_coupling(&mut out.trips, &(-&loc.lv), vd, sd);
                }
            }
            None => {
                if eta != 0.0 {
                    let a = loc.lv.transpose() * inv_spd(&loc.mv, e)? * &loc.lv * eta;
                    push_block(&mut out.trips, &a, sd, sd);
                }
            }
        }
    }
    // Dirichlet data in the stress row.
    for i in 0..loc.g_sigma.len() {
        if loc.g_sigma[i] != 0.0 {
            out.rhs.push((sd(i), loc.g_sigma[i]));
        }
    }
    Ok(out)
}

/// Fills the trace fields a reduced formulation eliminated:
/// `sigma_check = -tau P[u]` and `u_check = -eta P[sigma]`.
pub fn recover_eliminated(
    mesh: &Mesh,
    spaces: &SpacePair,
    config: &MethodConfig,
    sol: &mut FieldSolution,
) -> Result<(), AssemblyError> {
    let cfg = config.effective();
    let (keep_qc, keep_vc) = cfg.formulation.keeps_checks();
    if keep_qc && keep_vc {
        return Ok(());
    }
    let bases = Bases {
        q: ScalarBasis::new(spaces.q.degree),
        v: ScalarBasis::new(spaces.v.degree),
    };
    let exactness = assembly_exactness(&cfg.alpha);
    let results: Vec<Result<(Vec<(usize, f64)>, Vec<(usize, f64)>), AssemblyError>> = (0..mesh.num_edges())
        .into_par_iter()
        .map(|e| {
            let edge = &mesh.edges[e];
            let loc = edge_local(mesh, spaces, &bases, &cfg, e, exactness, None);
            let mut qc = Vec::new();
            let mut vc = Vec::new();
            let tau = cfg.tau_on(edge.h, edge.tag);
            let eta = cfg.eta_on(edge.h);
            if !keep_qc && loc.qc_dofs.len() > 0 && tau != 0.0 {
                let u = DVector::from_iterator(loc.u_dofs.len(), loc.u_dofs.iter().map(|&d| sol.u[d]));
                let c = inv_spd(&loc.mq, e)? * (&loc.jq * u) * (-tau);
                qc.extend(loc.qc_dofs.clone().zip(c.iter().cloned()));
            }
            if !keep_vc && loc.vc_dofs.len() > 0 && eta != 0.0 {
                let s = DVector::from_iterator(loc.sigma_dofs.len(), loc.sigma_dofs.iter().map(|&d| sol.sigma[d]));
                let c = inv_spd(&loc.mv, e)? * (&loc.lv * s) * (-eta);
                vc.extend(loc.vc_dofs.clone().zip(c.iter().cloned()));
            }
            Ok((qc, vc))
        })
        .collect();
    if !keep_qc {
        sol.sigma_check = vec![0.0; spaces.q_check.total_dofs];
    }
    if !keep_vc {
        sol.u_check = vec![0.0; spaces.v_check.total_dofs];
    }
    for r in results {
        let (qc, vc) = r?;
        for (i, v) in qc {
            sol.sigma_check[i] = v;
        }
        for (i, v) in vc {
            sol.u_check[i] = v;
        }
    }
    Ok(())
}

/// Checks `formulation` before assembling; used by the named entry points.
fn assemble_as(
    allowed: &[Formulation],
    mesh: &Mesh,
    spaces: &SpacePair,
    config: &MethodConfig,
    f: Forcing<'_>,
) -> Result<BlockSystem, AssemblyError> {
    if !allowed.contains(&config.formulation) {
        return Err(AssemblyError::WrongFormulation(config.formulation.tag()));
    }
    assemble(mesh, spaces, config, f)
}

pub fn assemble_four_field(mesh: &Mesh, spaces: &SpacePair, config: &MethodConfig, f: Forcing<'_>) -> Result<BlockSystem, AssemblyError> {
    assemble_as(&[Formulation::FourFieldH1, Formulation::FourFieldHdiv], mesh, spaces, config, f)
}

/// Eliminates `sigma_check`; the configuration's other settings are kept.
pub fn reduce_to_three_field_h(mesh: &Mesh, spaces: &SpacePair, config: &MethodConfig, f: Forcing<'_>) -> Result<BlockSystem, AssemblyError> {
    let mut c = config.clone();
    c.formulation = Formulation::ThreeFieldH;
    assemble(mesh, spaces, &c, f)
}

/// Eliminates `u_check`.
pub fn reduce_to_three_field_w(mesh: &Mesh, spaces: &SpacePair, config: &MethodConfig, f: Forcing<'_>) -> Result<BlockSystem, AssemblyError> {
    let mut c = config.clone();
    c.formulation = Formulation::ThreeFieldW;
    assemble(mesh, spaces, &c, f)
}

pub fn reduce_to_two_field(mesh: &Mesh, spaces: &SpacePair, config: &MethodConfig, f: Forcing<'_>) -> Result<BlockSystem, AssemblyError> {
    let mut c = config.clone();
    c.formulation = Formulation::TwoField;
    assemble(mesh, spaces, &c, f)
}

pub fn assemble_limit(mesh: &Mesh, spaces: &SpacePair, config: &MethodConfig, f: Forcing<'_>) -> Result<BlockSystem, AssemblyError> {
    assemble_as(&[Formulation::MixedLimit, Formulation::PrimalLimit], mesh, spaces, config, f)
}

/// One-field system `(C eps_h u, eps_h v) = -(f, v)` with the multiplier
/// rows `<[u], t_check> = 0`, unknowns `[u | sigma_check]`. Oracle for the
/// primal limit.
pub fn assemble_primal_oracle(
    mesh: &Mesh,
    spaces: &SpacePair,
    material: &Material,
    f: Forcing<'_>,
) -> Result<BlockSystem, AssemblyError> {
    let exactness = assembly_exactness(&spaces.alpha);
    let vb = ScalarBasis::new(spaces.v.degree);
    let rule = quadrature(exactness, Domain::Triangle)?;
    let tab = Tabulation::new(&vb, &rule.points);
    let nv = vb.dim();
    let per_v = spaces.v.per_element;
    let nu = spaces.v.total_dofs;
    let mut trips: Vec<Triplet<usize, usize, f64>> = (0..mesh.num_elements())
        .into_par_iter()
        .flat_map_iter(|k| {
            let geo = &mesh.geometry[k];
            let det = geo.det.abs();
            let jt = geo.jac_inv.transpose();
            let mut kk = DMatrix::<f64>::zeros(per_v, per_v);
            for (q, w) in rule.weights.iter().enumerate() {
                let strains: Vec<Matrix2<f64>> = (0..per_v)
                    .map(|j| {
                        let g = jt * tab.grads[q][j % nv];
                        let grad = vec_generator(j / nv) * g.transpose();
                        (grad + grad.transpose()) * 0.5
                    })
                    .collect();
                for i in 0..per_v {
                    let ci = material.apply_stiffness(&strains[i]);
                    for j in 0..per_v {
                        kk[(i, j)] += w * det * ci.dot(&strains[j]);
                    }
                }
            }
            let off = spaces.v.offset(k);
            let mut t = Vec::new();
            push_block(&mut t, &kk, |i| off + i, |j| off + j);
            t
        })
        .collect();
    let dummy = MethodConfig::new(
        Formulation::PrimalLimit,
        spaces.alpha,
        Param::new(0.0, 1),
        Param::new(f64::INFINITY, -1),
        0.0,
        *material,
    );
    let bases = Bases {
        q: ScalarBasis::new(spaces.q.degree),
        v: vb.clone(),
    };
    for e in 0..mesh.num_edges() {
        let loc = edge_local(mesh, spaces, &bases, &dummy, e, exactness, None);
        let qd = |m: usize| nu + spaces.q_check.offsets[e] + m;
        push_coupling(&mut trips, &(&loc.jq * 0.5), qd, |j| loc.u_dofs[j]);
    }
    let n = nu + spaces.q_check.total_dofs;
    let mut rhs = vec![0.0; n];
    let frhs = assemble_rhs(mesh, &spaces.v, exactness, f);
    for (r, v) in rhs.iter_mut().zip(frhs) {
        *r = -v;
    }
    let mut hard_mass = Vec::new();
    for e in 0..mesh.num_edges() {
        for m in 0..spaces.q_check.counts[e] {
            let i = nu + spaces.q_check.offsets[e] + m;
            hard_mass.push(Triplet::new(i, i, mesh.edges[e].h));
        }
    }
    let matrix = SparseColMat::try_new_from_triplets(n, n, &trips)
        .map_err(|e| AssemblyError::Inclusion(format!("sparse matrix construction failed: {e:?}")))?;
    Ok(BlockSystem {
        matrix,
        rhs,
        layout: FieldLayout {
            sigma: 0..0,
            sigma_check: Some(nu..n),
            u: 0..nu,
            u_check: None,
        },
        hard_mass,
    })
}
