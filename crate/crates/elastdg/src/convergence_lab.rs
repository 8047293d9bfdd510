//! Error norms against the manufactured solution, observed rates, parameter
//! sweeps and CSV reports.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::ops::RangeInclusive;

use nalgebra::{Matrix2, Point2, Vector2};
use rayon::prelude::*;

use crate::assembly::{assemble, assembly_exactness, FieldSolution, Formulation, MethodConfig, Param};
use crate::elasticity_model::{ManufacturedCase, Material};
use crate::error::{SolveError, StudyError};
use crate::fe_spaces::{build_spaces, quadrature, Alpha, BrokenField, Domain, SpacePair};
use crate::hybrid_solver::solve_fields;
use crate::mesh::{BoundaryRule, Mesh};

pub const CSV_HEADER: &str = "level,h,ndof_sigma,ndof_sigmacheck,ndof_u,ndof_ucheck,e_sigma_L2,e_divsigma_L2,e_u_L2,e_strain_L2,rate_sigma,rate_divsigma,rate_u,rate_strain,status";

/// Extra quadrature degrees for error integrals beyond assembly exactness.
pub const QUADRATURE_BOOST: usize = 4;

/// Errors below this are treated as zero when forming rates.
pub const RATE_FLOOR: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Errors {
    pub sigma: f64,
    pub divsigma: f64,
    pub u: f64,
    pub strain: f64,
}

impl Errors {
    pub fn as_array(&self) -> [f64; 4] {
        [self.sigma, self.divsigma, self.u, self.strain]
    }
}

/// What the discrete fields are measured against.
#[derive(Clone, Copy)]
pub enum Reference<'a> {
    Manufactured(&'a ManufacturedCase),
    Zero,
}

/// Broken L2 norms of `sigma - sigma_h`, `div_h(sigma - sigma_h)`,
/// `u - u_h` and `eps_h(u - u_h)`.
pub fn error_norms(
    mesh: &Mesh,
    spaces: &SpacePair,
    sigma: &[f64],
    u: &[f64],
    reference: Reference<'_>,
    exactness: usize,
) -> Errors {
    let rule = quadrature(exactness.min(crate::fe_spaces::MAX_EXACTNESS), Domain::Triangle).expect("table");
    let sf = BrokenField::new(&spaces.q, sigma);
    let uf = BrokenField::new(&spaces.v, u);
    let sums = (0..mesh.num_elements())
        .into_par_iter()
        .map(|k| {
            let geo = &mesh.geometry[k];
            let det = geo.det.abs();
            let mut acc = [0.0; 4];
            for (p, w) in rule.points.iter().zip(&rule.weights) {
                let (s, d, v, e) = match reference {
                    Reference::Manufactured(case) => {
                        let ex = case.eval(geo.map(&Point2::new(p[0], p[1])));
                        (ex.sigma, ex.f, ex.u, ex.strain)
                    }
                    Reference::Zero => (Matrix2::zeros(), Vector2::zeros(), Vector2::zeros(), Matrix2::zeros()),
                };
                let ds = s - sf.tensor(k, *p);
                let dd = d - sf.div(k, *p, &geo.jac_inv);
                let du = v - uf.vector(k, *p);
                let de = e - uf.strain(k, *p, &geo.jac_inv);
                let wd = w * det;
                acc[0] += wd * ds.norm_squared();
                acc[1] += wd * dd.norm_squared();
                acc[2] += wd * du.norm_squared();
                acc[3] += wd * de.norm_squared();
            }
            acc
        })
        .reduce(
            || [0.0; 4],
            |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]],
        );
    Errors {
        sigma: sums[0].sqrt(),
        divsigma: sums[1].sqrt(),
        u: sums[2].sqrt(),
        strain: sums[3].sqrt(),
    }
}

pub fn compute_errors(mesh: &Mesh, spaces: &SpacePair, sol: &FieldSolution, case: &ManufacturedCase) -> Errors {
    let ex = assembly_exactness(&spaces.alpha) + QUADRATURE_BOOST;
    error_norms(mesh, spaces, &sol.sigma, &sol.u, Reference::Manufactured(case), ex)
}

/// Skeleton L2 norms of the trace unknowns, read off the orthonormal
/// coefficients (edge masses `2h` and `h`).
pub fn trace_norms(mesh: &Mesh, spaces: &SpacePair, sol: &FieldSolution) -> (f64, f64) {
    let mut q = 0.0;
    let mut v = 0.0;
    for (e, edge) in mesh.edges.iter().enumerate() {
        let qo = spaces.q_check.offsets[e];
        for c in &sol.sigma_check[qo..qo + spaces.q_check.counts[e]] {
            q += 2.0 * edge.h * c * c;
        }
        let vo = spaces.v_check.offsets[e];
        for c in &sol.u_check[vo..vo + spaces.v_check.counts[e]] {
            v += edge.h * c * c;
        }
    }
    (q.sqrt(), v.sqrt())
}

/// `log2(e_coarse / e_fine)`, undefined when either error is negligible.
pub fn observed_rate(coarse: f64, fine: f64) -> Option<f64> {
    (coarse > RATE_FLOOR && fine > RATE_FLOOR && coarse.is_finite() && fine.is_finite())
        .then(|| (coarse / fine).log2())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Singular,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Singular => "singular",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LevelRow {
    pub level: u32,
    pub h: f64,
    /// Unknowns per field in the solved system; eliminated fields count 0.
    pub ndof: [usize; 4],
    pub errors: Option<Errors>,
    /// `(||sigma_h||_0, ||u_h||_0, ||sigma_check||, ||u_check||)`.
    pub norms: Option<[f64; 4]>,
    /// The same four quantities as `errors` for the exact solution alone.
    pub exact: Option<Errors>,
    pub status: Status,
}

#[derive(Clone, Debug, Default)]
pub struct ErrorReport {
    pub rows: Vec<LevelRow>,
}

impl ErrorReport {
    /// Rates of row `i` against row `i - 1`, per error column.
    pub fn rates(&self, i: usize) -> [Option<f64>; 4] {
        if i == 0 {
            return [None; 4];
        }
        match (&self.rows[i - 1].errors, &self.rows[i].errors) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.as_array(), b.as_array());
                std::array::from_fn(|c| observed_rate(a[c], b[c]))
            }
            _ => [None; 4],
        }
    }

    pub fn final_rates(&self) -> [Option<f64>; 4] {
        if self.rows.is_empty() {
            [None; 4]
        } else {
            self.rates(self.rows.len() - 1)
        }
    }

    pub fn any_singular(&self) -> bool {
        self.rows.iter().any(|r| r.status == Status::Singular)
    }

    /// CSV body lines (without header) for row `i`.
    pub fn csv_row(&self, i: usize) -> String {
        let r = &self.rows[i];
        let mut s = String::new();
        write!(s, "{},{}", r.level, num(r.h)).unwrap();
        for n in r.ndof {
            write!(s, ",{n}").unwrap();
        }
        match &r.errors {
            Some(e) => e.as_array().iter().for_each(|v| write!(s, ",{}", num(*v)).unwrap()),
            None => s.push_str(",,,,"),
        }
        for rate in self.rates(i) {
            s.push(',');
            if let Some(v) = rate {
                s.push_str(&num(v));
            }
        }
        write!(s, ",{}", r.status.as_str()).unwrap();
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for i in 0..self.rows.len() {
            writeln!(w, "{}", self.csv_row(i))?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }
}

/// Fixed scientific format with 15 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.14e}")
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub method: MethodConfig,
    pub levels: RangeInclusive<u32>,
    pub boundary: BoundaryRule,
}

impl StudyConfig {
    pub fn new(method: MethodConfig, levels: RangeInclusive<u32>) -> Self {
        Self {
            method,
            levels,
            boundary: BoundaryRule::all_dirichlet(),
        }
    }

    fn check(&self) -> Result<(), StudyError> {
        let (a, b) = (*self.levels.start(), *self.levels.end());
        if a == 0 || a > b {
            return Err(StudyError::LevelRange(a, b));
        }
        Ok(())
    }
}

/// Outcome of one level: solution (when not singular) and its row.
pub struct LevelRun {
    pub mesh: Mesh,
    pub spaces: SpacePair,
    pub solution: Option<FieldSolution>,
    pub row: LevelRow,
}

pub fn run_level(method: &MethodConfig, level: u32, boundary: BoundaryRule) -> Result<LevelRun, StudyError> {
    let mesh = Mesh::build_uniform(level, boundary)?;
    let spaces = build_spaces(&mesh, method.alpha);
    let case = ManufacturedCase::new(method.material);
    let f = |p: Point2<f64>| case.f(p);
    let sys = assemble(&mesh, &spaces, method, &f)?;
    let l = &sys.layout;
    let ndof = [
        l.sigma.len(),
        l.sigma_check.as_ref().map_or(0, |r| r.len()),
        l.u.len(),
        l.u_check.as_ref().map_or(0, |r| r.len()),
    ];
    let mut row = LevelRow {
        level,
        h: mesh.h(),
        ndof,
        errors: None,
        norms: None,
        exact: None,
        status: Status::Ok,
    };
    let ex = assembly_exactness(&spaces.alpha) + QUADRATURE_BOOST;
    let (zq, zv) = (vec![0.0; spaces.q.total_dofs], vec![0.0; spaces.v.total_dofs]);
    row.exact = Some(error_norms(&mesh, &spaces, &zq, &zv, Reference::Manufactured(&case), ex));
    match solve_fields(&mesh, &spaces, method, &sys) {
        Ok((sol, _)) => {
            row.errors = Some(compute_errors(&mesh, &spaces, &sol, &case));
            let own = error_norms(&mesh, &spaces, &sol.sigma, &sol.u, Reference::Zero, ex);
            let (qn, vn) = trace_norms(&mesh, &spaces, &sol);
            row.norms = Some([own.sigma, own.u, qn, vn]);
            Ok(LevelRun {
                mesh,
                spaces,
                solution: Some(sol),
                row,
            })
        }
        Err(SolveError::Singular { .. }) => {
            row.status = Status::Singular;
            Ok(LevelRun {
                mesh,
                spaces,
                solution: None,
                row,
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Runs all levels (concurrently) and collects the rows in level order.
pub fn run_study(config: &StudyConfig) -> Result<ErrorReport, StudyError> {
    config.check()?;
    let levels: Vec<u32> = config.levels.clone().collect();
    let rows: Vec<Result<LevelRow, StudyError>> = levels
        .par_iter()
        .map(|&l| run_level(&config.method, l, config.boundary).map(|r| r.row))
        .collect();
    Ok(ErrorReport {
        rows: rows.into_iter().collect::<Result<_, _>>()?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitKind {
    Mixed,
    Primal,
}

impl std::str::FromStr for LimitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mixed" => Ok(LimitKind::Mixed),
            "primal" => Ok(LimitKind::Primal),
            _ => Err(format!("unknown limit kind {s:?}, expected mixed or primal")),
        }
    }
}

impl LimitKind {
    pub fn default_alpha(self) -> Alpha {
        match self {
            LimitKind::Mixed => Alpha::new(1, 0, 0, 1),
            LimitKind::Primal => Alpha::new(0, 1, 1, 0),
        }
    }

    /// Member of the family that tends to the limit as `rho -> 0`.
    pub fn family(self, alpha: Alpha, rho: f64, material: Material) -> MethodConfig {
        match self {
            // tau = rho h, eta = 1 / (rho h)
            LimitKind::Mixed => MethodConfig::new(
                Formulation::FourFieldHdiv,
                alpha,
                Param::new(1.0 / rho, -1),
                Param::new(rho, 1),
                0.0,
                material,
            ),
            // tau = 1 / (rho h), eta = rho h
            LimitKind::Primal => MethodConfig::new(
                Formulation::FourFieldH1,
                alpha,
                Param::new(rho, 1),
                Param::new(1.0 / rho, -1),
                0.0,
                material,
            ),
        }
    }

    pub fn limit(self, alpha: Alpha, material: Material) -> MethodConfig {
        let formulation = match self {
            LimitKind::Mixed => Formulation::MixedLimit,
            LimitKind::Primal => Formulation::PrimalLimit,
        };
        let mut c = self.family(alpha, 1.0, material);
        c.formulation = formulation;
        c
    }
}

#[derive(Clone, Debug)]
pub struct LimitRow {
    pub rho: f64,
    /// `(||d sigma||_0, ||div_h d sigma||_0, ||d u||_0)`; `None` if singular.
    pub parts: Option<[f64; 3]>,
}

impl LimitRow {
    pub fn distance(&self) -> Option<f64> {
        self.parts.map(|p| p[0] + p[1] + p[2])
    }
}

#[derive(Clone, Debug)]
pub struct LimitReport {
    pub kind: LimitKind,
    pub level: u32,
    pub rows: Vec<LimitRow>,
}

impl LimitReport {
    /// `log(d_{i-1} / d_i) / log(rho_{i-1} / rho_i)`.
    pub fn order(&self, i: usize) -> Option<f64> {
        if i == 0 {
            return None;
        }
        let (a, b) = (&self.rows[i - 1], &self.rows[i]);
        let (da, db) = (a.distance()?, b.distance()?);
        (da > RATE_FLOOR && db > RATE_FLOOR).then(|| (da / db).ln() / (a.rho / b.rho).ln())
    }

    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| matches!((w[0].distance(), w[1].distance()), (Some(a), Some(b)) if b < a))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "rho,d_sigma_L2,d_divsigma_L2,d_u_L2,distance,order,status")?;
        for (i, r) in self.rows.iter().enumerate() {
            match r.parts {
                Some(p) => {
                    let order = self.order(i).map(num).unwrap_or_default();
                    writeln!(
                        w,
                        "{},{},{},{},{},{},ok",
                        num(r.rho),
                        num(p[0]),
                        num(p[1]),
                        num(p[2]),
                        num(p[0] + p[1] + p[2]),
                        order
                    )?;
                }
                None => writeln!(w, "{},,,,,,singular", num(r.rho))?,
            }
        }
        Ok(())
    }
}

/// Distance between the family member at each `rho` and the limit
/// solution, on one fixed mesh with `gamma = 0`.
pub fn run_limit_study(
    kind: LimitKind,
    alpha: Alpha,
    material: Material,
    level: u32,
    rhos: &[f64],
) -> Result<LimitReport, StudyError> {
    if rhos.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(StudyError::Invalid("rho values must be positive and finite".into()));
    }
    let mesh = Mesh::build_uniform(level, BoundaryRule::all_dirichlet())?;
    let spaces = build_spaces(&mesh, alpha);
    let case = ManufacturedCase::new(material);
    let f = |p: Point2<f64>| case.f(p);
    let limit_cfg = kind.limit(alpha, material);
    let sys = assemble(&mesh, &spaces, &limit_cfg, &f)?;
    let (limit, _) = solve_fields(&mesh, &spaces, &limit_cfg, &sys)?;
    let ex = assembly_exactness(&alpha) + QUADRATURE_BOOST;
    let rows = rhos
        .par_iter()
        .map(|&rho| {
            let cfg = kind.family(alpha, rho, material);
            let sys = assemble(&mesh, &spaces, &cfg, &f)?;
            match solve_fields(&mesh, &spaces, &cfg, &sys) {
                Ok((sol, _)) => {
                    let ds: Vec<f64> = sol.sigma.iter().zip(&limit.sigma).map(|(a, b)| a - b).collect();
                    let du: Vec<f64> = sol.u.iter().zip(&limit.u).map(|(a, b)| a - b).collect();
                    let e = error_norms(&mesh, &spaces, &ds, &du, Reference::Zero, ex);
                    Ok(LimitRow {
                        rho,
                        parts: Some([e.sigma, e.divsigma, e.u]),
                    })
                }
                Err(SolveError::Singular { .. }) => Ok(LimitRow { rho, parts: None }),
                Err(e) => Err(e.into()),
            }
        })
        .collect::<Result<Vec<_>, StudyError>>()?;
    Ok(LimitReport { kind, level, rows })
}

#[derive(Clone, Debug)]
pub struct LockingReport {
    pub nus: Vec<f64>,
    pub reports: Vec<ErrorReport>,
}

impl LockingReport {
    /// Spread `(max - min) / min` of the relative errors `e_sigma / ||sigma||`
    /// and `e_divsigma / ||div sigma||` across the Poisson ratios at row `i`.
    /// The exact stress grows like the Lame constant as `nu -> 1/2`, so the
    /// absolute errors are not comparable across ratios.
    pub fn spread(&self, i: usize) -> Option<(f64, f64)> {
        let mut s = Vec::new();
        let mut d = Vec::new();
        for r in &self.reports {
            let row = r.rows.get(i)?;
            let (e, x) = (row.errors?, row.exact?);
            s.push(e.sigma / x.sigma);
            d.push(e.divsigma / x.divsigma);
        }
        let spread = |v: &[f64]| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(0.0, f64::max);
            (hi - lo) / lo
        };
        Some((spread(&s), spread(&d)))
    }

    /// One table per Poisson ratio, prefixed by a `nu` column; the last two
    /// columns carry the spread across all ratios at that level.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "nu,{CSV_HEADER},spread_sigma,spread_divsigma")?;
        for (nu, rep) in self.nus.iter().zip(&self.reports) {
            for i in 0..rep.rows.len() {
                let (a, b) = self
                    .spread(i)
                    .map(|(a, b)| (num(a), num(b)))
                    .unwrap_or_default();
                writeln!(w, "{},{},{},{}", nu, rep.csv_row(i), a, b)?;
            }
        }
        Ok(())
    }
}

pub fn run_locking_study(base: &StudyConfig, nus: &[f64]) -> Result<LockingReport, StudyError> {
    let mut reports = Vec::new();
    for &nu in nus {
        let mut cfg = base.clone();
        cfg.method.material = Material::new(base.method.material.young, nu)?;
        reports.push(run_study(&cfg)?);
    }
    Ok(LockingReport {
        nus: nus.to_vec(),
        reports,
    })
}

/// Named method settings from the tables of proposed and classical
/// methods. `k` is the degree index of the table row.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: String,
    pub method: MethodConfig,
}

pub const PRESET_FAMILIES: [&str; 12] = [
    "new-h1", "new-hdiv", "new-hdiv-q0", "new-hdg", "hdg-1", "hdg-2", "hdg-3", "hdg-4", "ldg1-1", "ldg1-2",
    "ldg2-1", "ldg2-2",
];

pub fn preset_names() -> Vec<String> {
    PRESET_FAMILIES
        .iter()
        .chain(std::iter::once(&"ldg2-3"))
        .map(|f| format!("{f}-k<k>"))
        .collect()
}

/// Parses `<family>-k<k>`, e.g. `new-hdiv-k0`.
pub fn preset(name: &str, material: Material) -> Result<Preset, StudyError> {
    let unknown = || StudyError::UnknownPreset(name.to_string());
    let (family, k) = name.rsplit_once("-k").ok_or_else(unknown)?;
    let k: u32 = k.parse().map_err(|_| unknown())?;
    if k > 4 {
        return Err(StudyError::Invalid(format!("preset degree k = {k} is above the supported 4")));
    }
    let h1 = |a: Alpha, eta: Param, tau: Param, gamma: f64| {
        MethodConfig::new(Formulation::FourFieldH1, a, eta, tau, gamma, material)
    };
    let hdiv = |a: Alpha, eta: Param, tau: Param, gamma: f64| {
        MethodConfig::new(Formulation::FourFieldHdiv, a, eta, tau, gamma, material)
    };
    let (small, large) = (Param::new(1.0, 1), Param::new(1.0, -1));
    let zero = Param::new(0.0, 1);
    let method = match family {
        "new-h1" => h1(Alpha::new(k, k + 1, k.max(1), k), small, large, 1.0),
        "new-hdiv" => hdiv(Alpha::new(k + 1, k, k, k + 1), large, small, 1.0),
        "new-hdiv-q0" => {
            let mut a = Alpha::new(k + 1, k, 0, k + 1);
            a.sigma_check = None;
            hdiv(a, large, small, 1.0)
        }
        "new-hdg" => hdiv(Alpha::new(k + 1, k, k, k + 1), large, small, 0.0),
        "hdg-1" => hdiv(Alpha::new(k, k, k, k), large, small, 0.0),
        "hdg-2" => h1(Alpha::new(k, k, k, k), small, large, 0.0),
        "hdg-3" => h1(Alpha::new(k, k + 1, k, k), small, large, 0.0),
        "hdg-4" => hdiv(Alpha::new(k + 1, k, k + 1, k + 1), large, small, 0.0),
        "ldg1-1" => h1(Alpha::new(k, k + 1, k, k + 1), zero, large, 0.0),
        "ldg1-2" => h1(Alpha::new(k, k + 1, k, k), small, large, 1.0),
        "ldg2-1" => hdiv(Alpha::new(k + 1, k, k, k + 1), large, zero, 0.0),
        "ldg2-2" => hdiv(Alpha::new(k + 1, k, k + 1, k + 1), large, small, 1.0),
        "ldg2-3" => hdiv(Alpha::new(k + 1, k, k + 1, k + 1), large, small, 0.0),
        _ => return Err(unknown()),
    };
    Ok(Preset {
        name: name.to_string(),
        method,
    })
}
