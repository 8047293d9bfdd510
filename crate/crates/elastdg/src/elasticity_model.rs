//! Isotropic material law in two dimensions and the manufactured solution
//! `u = (sin(pi x) sin(pi y), sin(pi x) sin(pi y))`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Point2, Vector2};

use crate::error::MaterialError;

/// Compliance `A s = a s + b tr(s) I` with `a = (1+nu)/E` and
/// `b = -(1+nu) nu / E` (n = 2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub young: f64,
    pub poisson: f64,
}

impl Material {
    pub fn new(young: f64, poisson: f64) -> Result<Self, MaterialError> {
        if !(young > 0.0) || !young.is_finite() {
            return Err(MaterialError::YoungsModulus(young));
        }
        if !(poisson > 0.0 && poisson < 0.5) {
            return Err(MaterialError::PoissonRatio(poisson));
        }
        Ok(Self { young, poisson })
    }

    pub fn a(&self) -> f64 {
        (1.0 + self.poisson) / self.young
    }

    pub fn b(&self) -> f64 {
        -(1.0 + self.poisson) * self.poisson / self.young
    }

    pub fn mu(&self) -> f64 {
        self.young / (2.0 * (1.0 + self.poisson))
    }

    pub fn lambda(&self) -> f64 {
        self.poisson * self.young / ((1.0 + self.poisson) * (1.0 - 2.0 * self.poisson))
    }

    /// Smallest eigenvalue of A on symmetric tensors.
    pub fn a_min(&self) -> f64 {
        self.a().min(self.a() + 2.0 * self.b())
    }

    pub fn apply_compliance(&self, s: &Matrix2<f64>) -> Matrix2<f64> {
        s * self.a() + Matrix2::identity() * (self.b() * s.trace())
    }

    pub fn apply_stiffness(&self, e: &Matrix2<f64>) -> Matrix2<f64> {
        e * (2.0 * self.mu()) + Matrix2::identity() * (self.lambda() * e.trace())
    }
}

/// Exact fields at one point.
#[derive(Clone, Copy, Debug)]
pub struct ManufacturedValues {
    pub u: Vector2<f64>,
    pub strain: Matrix2<f64>,
    pub sigma: Matrix2<f64>,
    pub f: Vector2<f64>,
}

/// The smooth test case on the unit square; `u` vanishes on the boundary.
#[derive(Clone, Copy, Debug)]
pub struct ManufacturedCase {
    pub material: Material,
}

impl ManufacturedCase {
    pub fn new(material: Material) -> Self {
        Self { material }
    }

    pub fn u(&self, p: Point2<f64>) -> Vector2<f64> {
        let s = (PI * p.x).sin() * (PI * p.y).sin();
        Vector2::new(s, s)
    }

    pub fn strain(&self, p: Point2<f64>) -> Matrix2<f64> {
        let (sx, cx) = (PI * p.x).sin_cos();
        let (sy, cy) = (PI * p.y).sin_cos();
        // u1 = u2 = sx sy
        let dx = PI * cx * sy;
        let dy = PI * sx * cy;
        let off = 0.5 * (dy + dx);
        Matrix2::new(dx, off, off, dy)
    }

    pub fn sigma(&self, p: Point2<f64>) -> Matrix2<f64> {
        self.material.apply_stiffness(&self.strain(p))
    }

    /// `div sigma`, from the second derivatives of `u`.
    pub fn f(&self, p: Point2<f64>) -> Vector2<f64> {
        let (sx, cx) = (PI * p.x).sin_cos();
        let (sy, cy) = (PI * p.y).sin_cos();
        let pi2 = PI * PI;
        let uxx = -pi2 * sx * sy;
        let uyy = -pi2 * sx * sy;
        let uxy = pi2 * cx * cy;
        let mu = self.material.mu();
        let lam = self.material.lambda();
        // div(2 mu eps + lam tr(eps) I) = mu lap u + (mu + lam) grad div u,
        // with u1 = u2 = w: div u = wx + wy.
        let lap = uxx + uyy;
        let gdx = uxx + uxy;
        let gdy = uxy + uyy;
        Vector2::new(mu * lap + (mu + lam) * gdx, mu * lap + (mu + lam) * gdy)
    }

    pub fn eval(&self, p: Point2<f64>) -> ManufacturedValues {
        ManufacturedValues {
            u: self.u(p),
            strain: self.strain(p),
            sigma: self.sigma(p),
            f: self.f(p),
        }
    }

    /// Central-difference divergence of the exact stress.
    pub fn f_finite_difference(&self, p: Point2<f64>, step: f64) -> Vector2<f64> {
        let ex = Vector2::new(step, 0.0);
        let ey = Vector2::new(0.0, step);
        let dsx = (self.sigma(p + ex) - self.sigma(p - ex)) / (2.0 * step);
        let dsy = (self.sigma(p + ey) - self.sigma(p - ey)) / (2.0 * step);
        Vector2::new(dsx[(0, 0)] + dsy[(0, 1)], dsx[(1, 0)] + dsy[(1, 1)])
    }
}
