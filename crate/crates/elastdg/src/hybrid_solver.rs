//! Direct solution of the assembled saddle-point systems, and the
//! hybridized HDG solver that condenses everything onto the displacement
//! trace.

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::solvers::Solve;
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::supernodal::SupernodalLltRef;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LltRef, SymbolicCholesky,
    SymbolicCholeskyRaw, SymmetricOrdering,
};
use faer::sparse::linalg::{colamd, SupernodalThreshold};
use faer::sparse::linalg::lu::simplicial::{
    factorize_simplicial_numeric_lu, factorize_simplicial_numeric_lu_scratch, solve_in_place_scratch,
    SimplicialLu,
};
use faer::linalg::cholesky::llt::factor::{LltError, LltRegularization};
use faer::sparse::{SparseColMat, SparseColMatRef, Triplet};
use faer::{Conj, MatMut, Par, Side};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{
    assemble_rhs, assembly_exactness, element_local, BlockSystem, FieldSolution, Formulation, Forcing,
    MethodConfig, Pairing, Param,
};
use crate::dg_calculus::edge_points;
use crate::elasticity_model::Material;
use crate::error::SolveError;
use crate::fe_spaces::{quadrature, vec_generator, Alpha, Domain, ScalarBasis, SpacePair, Tabulation};
use crate::mesh::{EdgeTag, Mesh};

/// Pivots below this fraction of the largest pivot mark the system singular.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Sparse LU with partial pivoting and a fill-reducing column order.
pub struct Factorization {
    lu: SimplicialLu<usize, f64>,
    row_perm: Vec<usize>,
    row_perm_inv: Vec<usize>,
    col_perm: Vec<usize>,
    col_perm_inv: Vec<usize>,
    pub min_pivot: f64,
    pub max_pivot: f64,
    /// Original column indices whose pivot fell below the floor.
    pub weak_columns: Vec<usize>,
}

impl Factorization {
    pub fn new(a: SparseColMatRef<'_, usize, f64>) -> Result<Self, SolveError> {
        let n = a.nrows();
        let mut col_perm = vec![0usize; n];
        let mut col_perm_inv = vec![0usize; n];
        {
            let req = colamd::order_scratch::<usize>(n, n, a.compute_nnz());
            let mut buf = MemBuffer::new(req);
            colamd::order(
                &mut col_perm,
                &mut col_perm_inv,
                a.symbolic(),
                colamd::Control::default(),
                MemStack::new(&mut buf),
            )
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        }
        let mut row_perm = vec![0usize; n];
        let mut row_perm_inv = vec![0usize; n];
        let mut lu = SimplicialLu::new();
        let req = factorize_simplicial_numeric_lu_scratch::<usize, f64>(n, n);
        let mut buf = MemBuffer::new(req);
        let cp = PermRef::new_checked(&col_perm, &col_perm_inv, n);
        if let Err(e) = factorize_simplicial_numeric_lu(
            &mut row_perm,
            &mut row_perm_inv,
            &mut lu,
            a,
            cp,
            MemStack::new(&mut buf),
        ) {
            // A structurally empty pivot column.
            return Err(match e {
                faer::sparse::linalg::LuError::SymbolicSingular { index } => SolveError::Singular {
                    min_pivot: 0.0,
                    floor: 0.0,
                    rows: vec![col_perm[index]],
                },
                other => SolveError::Factorization(format!("{other:?}")),
            });
        }
        let u = lu.u_factor_unsorted();
        let pivots: Vec<f64> = (0..n)
            .map(|j| u.val_of_col(j).last().map_or(0.0, |v| v.abs()))
            .collect();
        let max_pivot = pivots.iter().cloned().fold(0.0, f64::max);
        let min_pivot = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
        let floor = PIVOT_FLOOR * max_pivot;
        let weak_columns = pivots
            .iter()
            .enumerate()
            .filter(|(_, p)| !(**p > floor))
            .map(|(j, _)| col_perm[j])
            .collect();
        Ok(Self {
            lu,
            row_perm,
            row_perm_inv,
            col_perm,
            col_perm_inv,
            min_pivot: if n == 0 { 0.0 } else { min_pivot },
            max_pivot,
            weak_columns,
        })
    }

    pub fn dim(&self) -> usize {
        self.row_perm.len()
    }

    pub fn is_singular(&self) -> bool {
        !self.weak_columns.is_empty()
    }

    pub fn singular_error(&self) -> SolveError {
        SolveError::Singular {
            min_pivot: self.min_pivot,
            floor: PIVOT_FLOOR * self.max_pivot,
            rows: self.weak_columns.iter().take(16).cloned().collect(),
        }
    }

    /// Ratio of extreme pivots, a cheap conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        self.max_pivot / self.min_pivot
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        let req = StackReq::any_of(&[solve_in_place_scratch::<usize, f64>(n, 1, Par::Seq)]);
        let mut buf = MemBuffer::new(req);
        let rp = PermRef::new_checked(&self.row_perm, &self.row_perm_inv, n);
        let cp = PermRef::new_checked(&self.col_perm, &self.col_perm_inv, n);
        let rhs = MatMut::from_column_major_slice_mut(x, n, 1);
        self.lu
            .solve_in_place_with_conj(rp, cp, Conj::No, rhs, Par::Seq, MemStack::new(&mut buf));
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x: Vec<f64>,
    /// `|b - M x| / |b|` (or absolute when `b = 0`).
    pub residual: f64,
    pub min_pivot: f64,
    pub max_pivot: f64,
    /// Iterations of the regularized scheme used for redundant hard
    /// constraints; zero for a plain direct solve.
    pub penalty_iterations: usize,
}

/// Residual tolerance accepted from the regularized iteration.
const PENALTY_TOL: f64 = 1e-11;
const PENALTY_DELTA: f64 = 1e-10;
const PENALTY_MAX_ITERS: usize = 60;

fn residual(sys: &BlockSystem, x: &[f64]) -> Vec<f64> {
    let mx = sys.apply(x);
    sys.rhs.iter().zip(mx).map(|(b, m)| b - m).collect()
}

fn relative(r: &[f64], b: &[f64]) -> f64 {
    let nb = norm(b);
    if nb > 0.0 {
        norm(r) / nb
    } else {
        norm(r)
    }
}

/// Direct solve with two steps of iterative refinement.
///
/// Systems whose hard constraint rows are linearly dependent (for example
/// the primal limit, where the continuity constraints are redundant around
/// interior vertices) are singular only in the multiplier. For those the
/// constraint block is regularized by a tiny multiple of its trace mass and
/// the regularized factorization drives an iterated correction until the
/// original residual vanishes.
///
/// Systems whose stress unknowns couple only within elements go through
/// [`Condensed`] first; the LU path handles everything else.
pub fn solve(sys: &BlockSystem) -> Result<SolveReport, SolveError> {
    match Condensed::new(sys)? {
        Some(c) => Ok(c.solve(sys)),
        None => solve_lu(sys),
    }
}

/// [`solve`] without the condensed path.
pub fn solve_lu(sys: &BlockSystem) -> Result<SolveReport, SolveError> {
    let fact = Factorization::new(sys.matrix.as_ref());
    match fact {
        Ok(f) if !f.is_singular() => {
            let mut x = sys.rhs.clone();
            f.solve_in_place(&mut x);
            for _ in 0..2 {
                let mut r = residual(sys, &x);
                f.solve_in_place(&mut r);
                x.iter_mut().zip(&r).for_each(|(a, d)| *a += d);
            }
            let res = relative(&residual(sys, &x), &sys.rhs);
            Ok(SolveReport {
                x,
                residual: res,
                min_pivot: f.min_pivot,
                max_pivot: f.max_pivot,
                penalty_iterations: 0,
            })
        }
        Ok(f) if !sys.has_hard_constraints() => Err(f.singular_error()),
        Err(e) if !sys.has_hard_constraints() => Err(e),
        first => solve_regularized(sys, first.err()),
    }
}

fn solve_regularized(sys: &BlockSystem, direct_err: Option<SolveError>) -> Result<SolveReport, SolveError> {
    let n = sys.dim();
    let scale = sys.max_abs();
    let mut trips: Vec<Triplet<usize, usize, f64>> = sys
        .entries()
        .into_iter()
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .collect();
    trips.extend(
        sys.hard_mass
            .iter()
            .map(|t| Triplet::new(t.row, t.col, PENALTY_DELTA * scale * t.val)),
    );
    let reg = SparseColMat::try_new_from_triplets(n, n, &trips)
        .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
    let f = Factorization::new(reg.as_ref())?;
    if f.is_singular() {
        return Err(direct_err.unwrap_or_else(|| f.singular_error()));
    }
    let mut x = vec![0.0; n];
    let mut res = f64::INFINITY;
    for it in 1..=PENALTY_MAX_ITERS {
        let mut r = residual(sys, &x);
        f.solve_in_place(&mut r);
        x.iter_mut().zip(&r).for_each(|(a, d)| *a += d);
        res = relative(&residual(sys, &x), &sys.rhs);
        if res <= PENALTY_TOL {
            return Ok(SolveReport {
                x,
                residual: res,
                min_pivot: f.min_pivot,
                max_pivot: f.max_pivot,
                penalty_iterations: it,
            });
        }
    }
    Err(direct_err.unwrap_or(SolveError::Singular {
        min_pivot: f.min_pivot,
        floor: PIVOT_FLOOR * f.max_pivot,
        rows: vec![],
    }))
    .map_err(|e| match e {
        SolveError::Singular { min_pivot, floor, rows } if rows.is_empty() => SolveError::Factorization(format!(
            "regularized iteration stalled at residual {res:e} (pivot {min_pivot:e}, floor {floor:e})"
        )),
        e => e,
    })
}

/// Largest group of mutually coupled stress unknowns eliminated locally.
const MAX_LOCAL_BLOCK: usize = 256;

struct LocalBlock {
    idx: Vec<usize>,
    /// Kept unknowns coupled to the block, as positions in the kept list.
    keep: Vec<usize>,
    minv: DMatrix<f64>,
    /// `M_bb^{-1} C^T` with `C = M[keep, idx]`.
    w: DMatrix<f64>,
}

/// Static condensation of the stress and stress trace unknowns.
///
/// When `sigma` couples only inside elements and the `sigma_check` block is
/// a positive definite per-edge mass, both are eliminated locally. What is
/// left on `(u, u_check)` is the negated Schur complement
/// `C M_bb^{-1} C^T - M_kk`, positive semidefinite because the kept
/// diagonal blocks are negative semidefinite; it is positive definite
/// exactly when the full system is nonsingular, so a sparse Cholesky
/// factorization both solves and detects singularity.
pub struct Condensed {
    blocks: Vec<LocalBlock>,
    kept: Vec<usize>,
    symbolic: SymbolicCholesky<usize>,
    l_values: Vec<f64>,
    /// Extreme squared diagonal entries of the Cholesky factor.
    pub min_pivot: f64,
    pub max_pivot: f64,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl Condensed {
    /// `Ok(None)` when the structure does not allow the condensation, or
    /// the factorization is inconclusive and the LU path should decide.
    pub fn new(sys: &BlockSystem) -> Result<Option<Self>, SolveError> {
        let l = &sys.layout;
        let n = sys.dim();
        let m = sys.matrix.as_ref();
        let mut elim = vec![false; n];
        let mut kept = Vec::new();
        for i in l.sigma.clone().chain(l.sigma_check.clone().unwrap_or(0..0)) {
            elim[i] = true;
        }
        let mut pos = vec![usize::MAX; n];
        for i in l.u.clone().chain(l.u_check.clone().unwrap_or(0..0)) {
            pos[i] = kept.len();
            kept.push(i);
        }
        if kept.is_empty() || l.sigma.is_empty() || kept.len() + elim.iter().filter(|e| **e).count() != n {
            return Ok(None);
        }
        // u and u_check never couple directly; anything else breaks the sign argument.
        if let Some(uc) = &l.u_check {
            for j in l.u.clone() {
                if m.row_idx_of_col_raw(j).iter().any(|i| uc.contains(i)) {
                    return Ok(None);
                }
            }
        }

        let mut parent: Vec<usize> = (0..n).collect();
        for j in (0..n).filter(|&j| elim[j]) {
            for &i in m.row_idx_of_col_raw(j) {
                if elim[i] && i != j {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a] = b;
                    }
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for j in (0..n).filter(|&j| elim[j]) {
            let r = find(&mut parent, j);
            if slot[r] == usize::MAX {
                slot[r] = groups.len();
                groups.push(Vec::new());
            }
            groups[slot[r]].push(j);
        }
        if groups.iter().any(|g| g.len() > MAX_LOCAL_BLOCK) {
            return Ok(None);
        }

        let blocks: Option<Vec<(LocalBlock, DMatrix<f64>)>> = groups
            .into_par_iter()
            .map(|idx| {
                let nb = idx.len();
                let mut keep: Vec<usize> = idx
                    .iter()
                    .flat_map(|&j| m.row_idx_of_col_raw(j).iter().filter(|&&i| !elim[i]).map(|&i| pos[i]))
                    .collect();
                keep.sort_unstable();
                keep.dedup();
                let mut mbb = DMatrix::zeros(nb, nb);
                let mut c = DMatrix::zeros(keep.len(), nb);
                for (b, &j) in idx.iter().enumerate() {
                    for (&i, &v) in m.row_idx_of_col_raw(j).iter().zip(m.val_of_col(j)) {
                        if elim[i] {
                            mbb[(idx.binary_search(&i).ok()?, b)] += v;
                        } else {
                            c[(keep.binary_search(&pos[i]).ok()?, b)] += v;
                        }
                    }
                }
                let minv = mbb.cholesky()?.inverse();
                let w = &minv * c.transpose();
                let s = &c * &w;
                Some((LocalBlock { idx, keep, minv, w }, s))
            })
            .collect();
        let Some(blocks) = blocks else {
            return Ok(None);
        };

        let nk = kept.len();
        let mut trips: Vec<Triplet<usize, usize, f64>> = blocks
            .par_iter()
            .flat_map_iter(|(b, s)| {
                let k = &b.keep;
                // Lower triangle only, symmetrized against round-off.
                (0..k.len()).flat_map(move |q| {
                    (q..k.len()).map(move |p| Triplet::new(k[p], k[q], 0.5 * (s[(p, q)] + s[(q, p)])))
                })
            })
            .collect();
        let blocks: Vec<LocalBlock> = blocks.into_iter().map(|(b, _)| b).collect();
        for (k, &j) in kept.iter().enumerate() {
            for (&i, &v) in m.row_idx_of_col_raw(j).iter().zip(m.val_of_col(j)) {
                if !elim[i] && pos[i] >= k {
                    trips.push(Triplet::new(pos[i], k, -v));
                }
            }
        }
        // Magnitude of the terms summed into the complement; cancellation
        // against it is what a singular system looks like.
        let term_scale = trips.iter().fold(0.0f64, |m, t| m.max(t.val.abs()));
        let p = SparseColMat::try_new_from_triplets(nk, nk, &trips)
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        drop(trips);

        let symbolic = factorize_symbolic_cholesky(
            p.symbolic(),
            Side::Lower,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams {
                supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
                ..Default::default()
            },
        )
        .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        let mut l_values = vec![0.0; symbolic.len_val()];
        let par = Par::Seq;
        let mut buf = MemBuffer::new(symbolic.factorize_numeric_llt_scratch::<f64>(par, Default::default()));
        let status = symbolic.factorize_numeric_llt(
            &mut l_values,
            p.as_ref(),
            Side::Lower,
            LltRegularization::default(),
            par,
            MemStack::new(&mut buf),
            Default::default(),
        );
        let pivots = match status {
            Ok(_) => diagonal_of_factor(&symbolic, &l_values),
            // The complement is semidefinite, so this is a singular system.
            Err(_) if sys.has_hard_constraints() => return Ok(None),
            Err(LltError::NonPositivePivot { index }) => {
                let row = symbolic.perm().map_or(index, |p| p.arrays().0[index]);
                return Err(SolveError::Singular {
                    min_pivot: 0.0,
                    floor: 0.0,
                    rows: vec![kept[row]],
                });
            }
        };
        let max_pivot = pivots.iter().cloned().fold(term_scale, f64::max);
        let min_pivot = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min_pivot > PIVOT_FLOOR * max_pivot) {
            if sys.has_hard_constraints() {
                return Ok(None);
            }
            let perm = symbolic.perm().map(|p| p.arrays().0.to_vec());
            let rows = pivots
                .iter()
                .enumerate()
                .filter(|(_, d)| !(**d > PIVOT_FLOOR * max_pivot))
                .take(16)
                .map(|(i, _)| kept[perm.as_ref().map_or(i, |p| p[i])])
                .collect();
            return Err(SolveError::Singular {
                min_pivot,
                floor: PIVOT_FLOOR * max_pivot,
                rows,
            });
        }
        Ok(Some(Self {
            blocks,
            kept,
            symbolic,
            l_values,
            min_pivot,
            max_pivot,
        }))
    }

    pub fn condensed_dim(&self) -> usize {
        self.kept.len()
    }

    /// One exact solve `x = M^{-1} b`.
    pub fn apply_inverse(&self, b: &[f64]) -> Vec<f64> {
        let nk = self.kept.len();
        let mut rk: Vec<f64> = self.kept.iter().map(|&i| -b[i]).collect();
        for blk in &self.blocks {
            let bb = DVector::from_iterator(blk.idx.len(), blk.idx.iter().map(|&i| b[i]));
            let t = blk.w.transpose() * bb;
            for (k, &q) in blk.keep.iter().enumerate() {
                rk[q] += t[k];
            }
        }
        let par = Par::Seq;
        let mut buf = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, par));
        LltRef::new(&self.symbolic, &self.l_values).solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut rk, nk, 1),
            par,
            MemStack::new(&mut buf),
        );
        let mut x = vec![0.0; b.len()];
        for (k, &i) in self.kept.iter().enumerate() {
            x[i] = rk[k];
        }
        let parts: Vec<Vec<f64>> = self
            .blocks
            .par_iter()
            .map(|blk| {
                let bb = DVector::from_iterator(blk.idx.len(), blk.idx.iter().map(|&i| b[i]));
                let xk = DVector::from_iterator(blk.keep.len(), blk.keep.iter().map(|&q| rk[q]));
                (&blk.minv * bb - &blk.w * xk).as_slice().to_vec()
            })
            .collect();
        for (blk, v) in self.blocks.iter().zip(parts) {
            for (&i, x_i) in blk.idx.iter().zip(v) {
                x[i] = x_i;
            }
        }
        x
    }

    /// Solve with two steps of iterative refinement.
    pub fn solve(&self, sys: &BlockSystem) -> SolveReport {
        let mut x = self.apply_inverse(&sys.rhs);
        for _ in 0..2 {
            let d = self.apply_inverse(&residual(sys, &x));
            x.iter_mut().zip(&d).for_each(|(a, d)| *a += d);
        }
        let res = relative(&residual(sys, &x), &sys.rhs);
        SolveReport {
            x,
            residual: res,
            min_pivot: self.min_pivot,
            max_pivot: self.max_pivot,
            penalty_iterations: 0,
        }
    }
}

fn diagonal_of_factor(symbolic: &SymbolicCholesky<usize>, values: &[f64]) -> Vec<f64> {
    match symbolic.raw() {
        SymbolicCholeskyRaw::Supernodal(s) => {
            let llt = SupernodalLltRef::new(s, values);
            (0..s.n_supernodes())
                .flat_map(|k| {
                    let v = llt.supernode(k).val();
                    (0..v.ncols()).map(move |j| v[(j, j)] * v[(j, j)])
                })
                .collect()
        }
        SymbolicCholeskyRaw::Simplicial(s) => s.col_ptr()[..s.ncols()].iter().map(|&p| values[p] * values[p]).collect(),
    }
}

/// Solves the system and splits the solution into fields, recovering
/// eliminated traces.
pub fn solve_fields(
    mesh: &Mesh,
    spaces: &SpacePair,
    config: &MethodConfig,
    sys: &BlockSystem,
) -> Result<(FieldSolution, SolveReport), SolveError> {
    let report = solve(sys)?;
    let mut sol = FieldSolution::from_vector(&sys.layout, spaces, &report.x);
    crate::assembly::recover_eliminated(mesh, spaces, config, &mut sol)?;
    Ok((sol, report))
}

/// HDG method data: degrees and the stabilization `tau1 = rho h^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct HdgConfig {
    pub alpha: Alpha,
    pub tau: Param,
    pub material: Material,
}

impl HdgConfig {
    /// The three-field (sigma, u, u_check) configuration whose monolithic
    /// solution coincides with the HDG solution: `tau = 2 tau1` on Dirichlet
    /// edges and `eta = 1 / (4 tau1)`.
    pub fn monolithic(&self) -> MethodConfig {
        let mut c = MethodConfig::new(
            Formulation::ThreeFieldH,
            self.alpha,
            Param::new(1.0 / (4.0 * self.tau.rho), -self.tau.power),
            self.tau,
            0.0,
            self.material,
        );
        c.boundary_tau_scale = 2.0;
        c.pairing = Some(Pairing::Div);
        c
    }

    fn check(&self, mesh: &Mesh) -> Result<(), SolveError> {
        let a = self.alpha;
        let a4 = a
            .u_check
            .ok_or_else(|| SolveError::Precondition("the displacement trace space is empty".into()))?;
        if a4 < a.u {
            return Err(SolveError::Precondition(format!(
                "trace degree {a4} below displacement degree {}",
                a.u
            )));
        }
        if a.sigma_check.is_some_and(|a3| a3 < a.u) {
            return Err(SolveError::Precondition(format!(
                "stress trace degree below displacement degree {}",
                a.u
            )));
        }
        if mesh.edges.iter().any(|e| e.tag == EdgeTag::Neumann) {
            return Err(SolveError::Precondition("hybridization is implemented for all-Dirichlet boundaries".into()));
        }
        // tau1 = 0 is the hybridized mixed method.
        if !(self.tau.rho >= 0.0 && self.tau.rho.is_finite()) {
            return Err(SolveError::Precondition(format!("tau coefficient {} must be nonnegative", self.tau.rho)));
        }
        Ok(())
    }
}

/// Static condensation data of one element.
struct LocalHdg {
    /// Global trace DOFs touched, in local order.
    dofs: Vec<usize>,
    /// `K^-1 C`, `(n_sigma + n_u) x n_hat`.
    kinv_c: DMatrix<f64>,
    /// `K^-1 F`.
    kinv_f: DVector<f64>,
    /// Condensed contributions `W + C^T K^-1 C` and `C^T K^-1 F`.
    h: DMatrix<f64>,
    g: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct HdgSolution {
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    /// Displacement trace on interior edges, V-check layout.
    pub u_hat: Vec<f64>,
    pub condensed_dim: usize,
    pub condensed: SparseColMat<usize, f64>,
}

/// Element-by-element elimination of `(sigma, u)` followed by a global SPD
/// solve for the trace. Each element carries
///
/// ```text
/// [ A   D^T  -G^T ] [sigma]   [0]
/// [ D   -S    R   ] [u    ] = [f]
/// [-G   R^T  -W   ] [u_hat]   [0]
/// ```
///
/// with `D = (div t, v)`, `S = <2 tau1 u, v>` over the element boundary,
/// `G = <u_hat, t n>`, `R = <2 tau1 u_hat, v>`, `W = <2 tau1 u_hat, v_hat>`.
pub fn hdg_solve(mesh: &Mesh, spaces: &SpacePair, config: &HdgConfig, f: Forcing<'_>) -> Result<HdgSolution, SolveError> {
    config.check(mesh)?;
    if spaces.alpha != config.alpha {
        return Err(crate::error::AssemblyError::DegreeMismatch {
            spaces: spaces.alpha.as_array(),
            config: config.alpha.as_array(),
        }
        .into());
    }
    let exactness = assembly_exactness(&config.alpha);
    let qb = ScalarBasis::new(spaces.q.degree);
    let vb = ScalarBasis::new(spaces.v.degree);
    let rule = quadrature(exactness, Domain::Triangle).map_err(crate::error::AssemblyError::from)?;
    let tab_q = Tabulation::new(&qb, &rule.points);
    let tab_v = Tabulation::new(&vb, &rule.points);
    let frhs = assemble_rhs(mesh, &spaces.v, exactness, f);
    let nq = spaces.q.per_element;
    let nu = spaces.v.per_element;
    let nvs = vb.dim();
    let nqs = qb.dim();

    let locals: Vec<Result<LocalHdg, SolveError>> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let el = element_local(mesh, spaces, &tab_q, &tab_v, &rule.weights, &config.material, Pairing::Div, k);
            let mut dofs = Vec::new();
            let mut edge_slots = Vec::new();
            for &e in &mesh.element_edges[k] {
                let c = spaces.v_check.counts[e];
                edge_slots.push((e, dofs.len(), c));
                dofs.extend(spaces.v_check.offsets[e]..spaces.v_check.offsets[e] + c);
            }
            let nh = dofs.len();
            let mut s = DMatrix::zeros(nu, nu);
            let mut g = DMatrix::zeros(nh, nq);
            let mut r = DMatrix::zeros(nu, nh);
            let mut w = DMatrix::zeros(nh, nh);
            for &(e, slot, count) in &edge_slots {
                let edge = &mesh.edges[e];
                let is_plus = edge.plus == k;
                let nk = if is_plus { edge.normal } else { -edge.normal };
                let t2 = 2.0 * config.tau.value(edge.h);
                for p in edge_points(mesh, e, exactness) {
                    let xi = if is_plus { p.xi_plus } else { p.xi_minus.expect("interior edge") };
                    let qs = qb.values(xi);
                    let vs = vb.values(xi);
                    let vvals: Vec<_> = (0..nu).map(|j| vec_generator(j / nvs) * vs[j % nvs]).collect();
                    let tn: Vec<_> = (0..nq)
                        .map(|i| crate::fe_spaces::sym_generator(i / nqs) * nk * qs[i % nqs])
                        .collect();
                    let mu = if count > 0 { spaces.v_check.eval_vector(p.s) } else { Vec::new() };
                    let wt = p.weight;
                    for i in 0..nu {
                        for j in 0..nu {
                            s[(i, j)] += wt * t2 * vvals[i].dot(&vvals[j]);
                        }
                    }
                    for m in 0..count {
                        for i in 0..nq {
                            g[(slot + m, i)] += wt * mu[m].dot(&tn[i]);
                        }
                        for j in 0..nu {
                            r[(j, slot + m)] += wt * t2 * mu[m].dot(&vvals[j]);
                        }
                        for m2 in 0..count {
                            w[(slot + m, slot + m2)] += wt * t2 * mu[m].dot(&mu[m2]);
                        }
                    }
                }
            }
            let n = nq + nu;
            let mut kk = DMatrix::zeros(n, n);
            kk.view_mut((0, 0), (nq, nq)).copy_from(&el.a);
            kk.view_mut((0, nq), (nq, nu)).copy_from(&el.b);
            kk.view_mut((nq, 0), (nu, nq)).copy_from(&el.b.transpose());
            kk.view_mut((nq, nq), (nu, nu)).copy_from(&(-&s));
            let mut c = DMatrix::zeros(n, nh);
            c.view_mut((0, 0), (nq, nh)).copy_from(&(-g.transpose()));
            c.view_mut((nq, 0), (nu, nh)).copy_from(&r);
            let mut fl = DVector::zeros(n);
            let off = spaces.v.offset(k);
            fl.rows_mut(nq, nu).copy_from_slice(&frhs[off..off + nu]);
            let lu = kk.lu();
            let kinv_c = lu.solve(&c).ok_or(SolveError::SingularLocal(k))?;
            let kinv_f = lu.solve(&fl).ok_or(SolveError::SingularLocal(k))?;
            if !kinv_c.iter().chain(kinv_f.iter()).all(|v| v.is_finite()) {
                return Err(SolveError::SingularLocal(k));
            }
            let h = &w + c.transpose() * &kinv_c;
            let gv = c.transpose() * &kinv_f;
            Ok(LocalHdg {
                dofs,
                kinv_c,
                kinv_f,
                h,
                g: gv,
            })
        })
        .collect();
    let locals: Vec<LocalHdg> = locals.into_iter().collect::<Result<_, _>>()?;

    let nhat = spaces.v_check.total_dofs;
    let mut trips = Vec::new();
    let mut rhs = vec![0.0; nhat];
    for l in &locals {
        for (a, &ga) in l.dofs.iter().enumerate() {
            rhs[ga] += l.g[a];
            for (b, &gb) in l.dofs.iter().enumerate() {
                // Symmetrize against round-off in the local solves.
                let v = 0.5 * (l.h[(a, b)] + l.h[(b, a)]);
                trips.push(Triplet::new(ga, gb, v));
            }
        }
    }
    let condensed = SparseColMat::try_new_from_triplets(nhat, nhat, &trips)
        .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
    let llt = condensed
        .sp_cholesky(faer::Side::Lower)
        .map_err(|_| SolveError::NotPositiveDefinite)?;
    let mut u_hat = rhs.clone();
    llt.solve_in_place(MatMut::from_column_major_slice_mut(&mut u_hat, nhat, 1));

    let mut sigma = vec![0.0; spaces.q.total_dofs];
    let mut u = vec![0.0; spaces.v.total_dofs];
    sigma
        .par_chunks_mut(nq)
        .zip(u.par_chunks_mut(nu))
        .zip(locals.par_iter())
        .for_each(|((sk, uk), l)| {
            let uh = DVector::from_iterator(l.dofs.len(), l.dofs.iter().map(|&d| u_hat[d]));
            let x = &l.kinv_f - &l.kinv_c * uh;
            sk.copy_from_slice(&x.as_slice()[..nq]);
            uk.copy_from_slice(&x.as_slice()[nq..]);
        });
    Ok(HdgSolution {
        sigma,
        u,
        u_hat,
        condensed_dim: nhat,
        condensed,
    })
}

/// Displacement trace `{u} + u_check` of a three-field solution on
/// interior edges, in V-check coordinates.
pub fn trace_of_three_field(mesh: &Mesh, spaces: &SpacePair, sol: &FieldSolution) -> Vec<f64> {
    let vb = ScalarBasis::new(spaces.v.degree);
    let nu = spaces.v.per_element;
    let exactness = 2 * spaces.v_check.degree.unwrap_or(0) as usize + 2 * spaces.v.degree as usize + 2;
    let mut out = sol.u_check.clone();
    for e in 0..mesh.num_edges() {
        let count = spaces.v_check.counts[e];
        if count == 0 {
            continue;
        }
        let edge = &mesh.edges[e];
        let minus = edge.minus.expect("trace DOFs live on interior edges");
        // Project {u} with the edge mass h I of the orthonormal modes.
        let mut proj = vec![0.0; count];
        for p in edge_points(mesh, e, exactness) {
            let vp = crate::fe_spaces::vector_from(&sol.u[spaces.v.offset(edge.plus)..][..nu], &vb.values(p.xi_plus));
            let vm = crate::fe_spaces::vector_from(
                &sol.u[spaces.v.offset(minus)..][..nu],
                &vb.values(p.xi_minus.expect("interior")),
            );
            let avg = (vp + vm) * 0.5;
            for (m, mu) in spaces.v_check.eval_vector(p.s).iter().enumerate() {
                proj[m] += p.weight * mu.dot(&avg) / edge.h;
            }
        }
        for m in 0..count {
            out[spaces.v_check.offsets[e] + m] += proj[m];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble;
    use crate::elasticity_model::ManufacturedCase;
    use crate::fe_spaces::build_spaces;
    use crate::mesh::BoundaryRule;
    use nalgebra::{Point2, Vector2};

    fn material() -> Material {
        Material::new(1.0, 0.4).unwrap()
    }

    fn small(entries: &[(usize, usize, f64)], n: usize) -> BlockSystem {
        let t: Vec<_> = entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        BlockSystem {
            matrix: SparseColMat::try_new_from_triplets(n, n, &t).unwrap(),
            rhs: vec![1.0; n],
            layout: crate::assembly::FieldLayout {
                sigma: 0..n,
                sigma_check: None,
                u: n..n,
                u_check: None,
            },
            hard_mass: Vec::new(),
        }
    }

    #[test]
    fn solves_small_indefinite_system() {
        let sys = small(&[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -3.0), (2, 2, 0.0), (2, 0, 1.0), (0, 2, 1.0)], 3);
        let rep = solve(&sys).unwrap();
        assert!(rep.residual < 1e-14);
    }

    #[test]
    fn flags_numerically_singular_matrix() {
        let sys = small(&[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)], 2);
        assert!(matches!(solve(&sys), Err(SolveError::Singular { .. })));
        let empty = small(&[(0, 0, 1.0)], 2);
        assert!(matches!(solve(&empty), Err(SolveError::Singular { .. })));
    }

    #[test]
    fn redundant_constraint_recovers_primal_part() {
        // x0 = 1 imposed twice through multipliers 1 and 2.
        let mut sys = small(&[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0), (2, 0, 1.0)], 3);
        sys.rhs = vec![0.0, 1.0, 1.0];
        assert!(solve(&small(&[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0), (2, 0, 1.0)], 3)).is_err());
        sys.hard_mass = vec![Triplet::new(1, 1, 1.0), Triplet::new(2, 2, 1.0)];
        let rep = solve(&sys).unwrap();
        assert!((rep.x[0] - 1.0).abs() < 1e-10);
        assert!(rep.penalty_iterations > 0);
    }

    fn hdg_case(alpha: Alpha, level: u32) -> (Mesh, SpacePair, HdgConfig, ManufacturedCase) {
        let mesh = Mesh::build_uniform(level, BoundaryRule::all_dirichlet()).unwrap();
        let spaces = build_spaces(&mesh, alpha);
        let cfg = HdgConfig {
            alpha,
            tau: Param::new(1.0, 1),
            material: material(),
        };
        (mesh, spaces, cfg, ManufacturedCase::new(material()))
    }

    #[test]
    fn condensed_path_matches_lu() {
        let mesh = Mesh::build_uniform(3, BoundaryRule::all_dirichlet()).unwrap();
        let case = ManufacturedCase::new(material());
        let f = |p: Point2<f64>| case.f(p);
        let cases = [
            (Formulation::FourFieldH1, Alpha::new(0, 1, 1, 0), true),
            (Formulation::FourFieldHdiv, Alpha::new(1, 0, 0, 1), true),
            (Formulation::ThreeFieldH, Alpha::new(2, 1, 2, 2), true),
            (Formulation::TwoField, Alpha::new(1, 0, 0, 1), false),
        ];
        for (form, alpha, condensable) in cases {
            let spaces = build_spaces(&mesh, alpha);
            let cfg = MethodConfig::hdiv(form, alpha, 1.0, 1.0, 1.0, material());
            let sys = assemble(&mesh, &spaces, &cfg, &f).unwrap();
            let c = Condensed::new(&sys).unwrap();
            assert_eq!(c.is_some(), condensable, "{form}");
            let Some(c) = c else { continue };
            assert_eq!(c.condensed_dim(), sys.layout.u.len() + sys.layout.u_check.as_ref().map_or(0, |r| r.len()));
            let a = c.solve(&sys);
            let b = solve_lu(&sys).unwrap();
            let scale = b.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let d = a.x.iter().zip(&b.x).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            assert!(d / scale < 1e-11, "{form}: {d:e}");
            assert!(a.residual < 1e-12);
        }
    }

    #[test]
    fn condensed_path_flags_singular() {
        // One stress unknown feeding two displacements with diagonal -d; the
        // condensed complement [[1 + d, 1], [1, 1 + d]] is singular at d = 0.
        let sys = |d: f64| {
            let mut s = small(
                &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0), (2, 0, 1.0), (1, 1, -d), (2, 2, -d)],
                3,
            );
            s.layout.sigma = 0..1;
            s.layout.u = 1..3;
            s
        };
        let ok = sys(1.0);
        let c = Condensed::new(&ok).unwrap().unwrap();
        let (a, b) = (c.solve(&ok), solve_lu(&ok).unwrap());
        assert!(a.x.iter().zip(&b.x).all(|(x, y)| (x - y).abs() < 1e-14));
        assert!(matches!(Condensed::new(&sys(0.0)), Err(SolveError::Singular { .. })));
        assert!(matches!(solve(&sys(0.0)), Err(SolveError::Singular { .. })));
        assert!(matches!(solve_lu(&sys(0.0)), Err(SolveError::Singular { .. })));
    }

    #[test]
    fn hdg_matches_monolithic_three_field() {
        for alpha in [Alpha::new(1, 0, 0, 1), Alpha::new(1, 0, 1, 1)] {
            let (mesh, spaces, cfg, case) = hdg_case(alpha, 2);
            let f = |p: Point2<f64>| case.f(p);
            let hdg = hdg_solve(&mesh, &spaces, &cfg, &f).unwrap();
            assert_eq!(hdg.condensed_dim, spaces.v_check.total_dofs);
            let mono = cfg.monolithic();
            let sys = assemble(&mesh, &spaces, &mono, &f).unwrap();
            let (sol, _) = solve_fields(&mesh, &spaces, &mono, &sys).unwrap();
            let d = |a: &[f64], b: &[f64]| {
                let s = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / s
            };
            assert!(d(&hdg.sigma, &sol.sigma) < 1e-9, "{}", d(&hdg.sigma, &sol.sigma));
            assert!(d(&hdg.u, &sol.u) < 1e-9);
            let trace = trace_of_three_field(&mesh, &spaces, &sol);
            assert!(d(&hdg.u_hat, &trace) < 1e-9, "{}", d(&hdg.u_hat, &trace));
        }
    }

    #[test]
    fn hdg_zero_data_and_linearity() {
        let (mesh, spaces, cfg, case) = hdg_case(Alpha::new(1, 0, 0, 1), 2);
        let zero = |_: Point2<f64>| Vector2::zeros();
        let z = hdg_solve(&mesh, &spaces, &cfg, &zero).unwrap();
        assert!(z.u_hat.iter().chain(&z.sigma).all(|v| *v == 0.0));
        let f1 = |p: Point2<f64>| case.f(p);
        let f2 = |p: Point2<f64>| Vector2::new(p.x, 1.0 - p.y * p.y);
        let f3 = |p: Point2<f64>| case.f(p) * 2.0 - Vector2::new(p.x, 1.0 - p.y * p.y) * 3.0;
        let s1 = hdg_solve(&mesh, &spaces, &cfg, &f1).unwrap();
        let s2 = hdg_solve(&mesh, &spaces, &cfg, &f2).unwrap();
        let s3 = hdg_solve(&mesh, &spaces, &cfg, &f3).unwrap();
        for i in 0..s3.u.len() {
            let comb = 2.0 * s1.u[i] - 3.0 * s2.u[i];
            assert!((s3.u[i] - comb).abs() < 1e-10 * (1.0 + comb.abs()));
        }
    }

    #[test]
    fn hdg_preconditions() {
        let (mesh, spaces, mut cfg, _) = hdg_case(Alpha::new(1, 1, 1, 0), 1);
        let zero = |_: Point2<f64>| Vector2::zeros();
        cfg.alpha = spaces.alpha;
        assert!(matches!(hdg_solve(&mesh, &spaces, &cfg, &zero), Err(SolveError::Precondition(_))));
        let mesh = Mesh::build_uniform(1, BoundaryRule::neumann_on(&[crate::mesh::Side::Right])).unwrap();
        let alpha = Alpha::new(1, 0, 0, 1);
        let spaces = build_spaces(&mesh, alpha);
        cfg.alpha = alpha;
        assert!(matches!(hdg_solve(&mesh, &spaces, &cfg, &zero), Err(SolveError::Precondition(_))));
    }
}
