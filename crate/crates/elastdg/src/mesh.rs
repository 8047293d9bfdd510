//! Structured north-east-cut triangulations of the unit square and their
//! edge skeleton.

use std::collections::HashMap;
use std::io::{self, Write};

use nalgebra::{Matrix2, Point2, Vector2};

use crate::error::MeshError;

/// Boundary condition attached to an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeTag {
    Interior,
    Dirichlet,
    Neumann,
}

impl EdgeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeTag::Interior => "interior",
            EdgeTag::Dirichlet => "dirichlet",
            EdgeTag::Neumann => "neumann",
        }
    }

    pub fn is_boundary(self) -> bool {
        self != EdgeTag::Interior
    }
}

/// Sides of the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Assigns Dirichlet or Neumann to each side of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryRule {
    pub left: EdgeTag,
    pub right: EdgeTag,
    pub bottom: EdgeTag,
    pub top: EdgeTag,
}

impl Default for BoundaryRule {
    fn default() -> Self {
        Self::all_dirichlet()
    }
}

impl BoundaryRule {
    pub fn all_dirichlet() -> Self {
        Self {
            left: EdgeTag::Dirichlet,
            right: EdgeTag::Dirichlet,
            bottom: EdgeTag::Dirichlet,
            top: EdgeTag::Dirichlet,
        }
    }

    /// Dirichlet everywhere except the listed sides.
    pub fn neumann_on(sides: &[Side]) -> Self {
        let mut rule = Self::all_dirichlet();
        for side in sides {
            match side {
                Side::Left => rule.left = EdgeTag::Neumann,
                Side::Right => rule.right = EdgeTag::Neumann,
                Side::Bottom => rule.bottom = EdgeTag::Neumann,
                Side::Top => rule.top = EdgeTag::Neumann,
            }
        }
        rule
    }

    fn tag_for(&self, a: Point2<f64>, b: Point2<f64>) -> EdgeTag {
        let mid = nalgebra::center(&a, &b);
        let eps = 1e-12;
        if mid.x < eps {
            self.left
        } else if mid.x > 1.0 - eps {
            self.right
        } else if mid.y < eps {
            self.bottom
        } else {
            self.top
        }
    }

    fn validate(&self) -> Result<(), MeshError> {
        for tag in [self.left, self.right, self.bottom, self.top] {
            if tag == EdgeTag::Interior {
                return Err(MeshError::InteriorBoundaryTag);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Edge {
    /// Endpoints with `endpoints.0 < endpoints.1`.
    pub endpoints: (usize, usize),
    pub plus: usize,
    pub minus: Option<usize>,
    /// Unit normal pointing out of the plus element.
    pub normal: Vector2<f64>,
    pub tag: EdgeTag,
    pub h: f64,
}

/// Affine geometry of one triangle: `x = origin + jac * xi`.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub origin: Point2<f64>,
    pub jac: Matrix2<f64>,
    pub jac_inv: Matrix2<f64>,
    pub det: f64,
}

impl ElementGeometry {
    pub fn map(&self, xi: &Point2<f64>) -> Point2<f64> {
        self.origin + self.jac * xi.coords
    }

    pub fn pullback(&self, x: &Point2<f64>) -> Point2<f64> {
        Point2::from(self.jac_inv * (x - self.origin))
    }

    pub fn area(&self) -> f64 {
        0.5 * self.det.abs()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub level: u32,
    pub vertices: Vec<Point2<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge indices of each triangle, edge `i` opposite local vertex `i`.
    pub element_edges: Vec<[usize; 3]>,
    pub element_diameters: Vec<f64>,
    pub geometry: Vec<ElementGeometry>,
}

/// Result of [`Mesh::skeleton_query`].
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeInfo {
    pub plus: usize,
    pub minus: Option<usize>,
    pub normal: Vector2<f64>,
    pub h: f64,
    pub tag: EdgeTag,
}

impl Mesh {
    /// Level `level` uniform mesh: `2^(level-1)` squares per side, each cut
    /// along its north-east diagonal.
    pub fn build_uniform(level: u32, rule: BoundaryRule) -> Result<Mesh, MeshError> {
        if level < 1 {
            return Err(MeshError::InvalidLevel(level));
        }
        if level > 12 {
            return Err(MeshError::LevelTooLarge(level));
        }
        rule.validate()?;
        let n = 1usize << (level - 1);
        let stride = n + 1;
        let mut vertices = Vec::with_capacity(stride * stride);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push(Point2::new(i as f64 / n as f64, j as f64 / n as f64));
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = j * stride + i;
                let v10 = v00 + 1;
                let v01 = v00 + stride;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }

        let geometry: Vec<ElementGeometry> = triangles
            .iter()
            .map(|t| {
                let p0 = vertices[t[0]];
                let jac = Matrix2::from_columns(&[vertices[t[1]] - p0, vertices[t[2]] - p0]);
                let det = jac.determinant();
                ElementGeometry {
                    origin: p0,
                    jac,
                    jac_inv: jac.try_inverse().expect("degenerate triangle"),
                    det,
                }
            })
            .collect();

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut element_edges = vec![[0usize; 3]; triangles.len()];
        for (k, t) in triangles.iter().enumerate() {
            for loc in 0..3 {
                let a = t[(loc + 1) % 3];
                let b = t[(loc + 2) % 3];
                let key = (a.min(b), a.max(b));
                let idx = match lookup.get(&key) {
                    Some(&idx) => {
                        edges[idx].minus = Some(k);
                        edges[idx].tag = EdgeTag::Interior;
                        idx
                    }
                    None => {
                        let pa = vertices[key.0];
                        let pb = vertices[key.1];
                        let d = pb - pa;
                        let h = d.norm();
                        let mut normal = Vector2::new(d.y, -d.x) / h;
                        let opposite = vertices[t[loc]];
                        if normal.dot(&(opposite - pa)) > 0.0 {
                            normal = -normal;
                        }
                        let idx = edges.len();
                        edges.push(Edge {
                            endpoints: key,
                            plus: k,
                            minus: None,
                            normal,
                            tag: rule.tag_for(pa, pb),
                            h,
                        });
                        lookup.insert(key, idx);
                        idx
                    }
                };
                element_edges[k][loc] = idx;
            }
        }

        let element_diameters = triangles
            .iter()
            .map(|t| {
                let mut d: f64 = 0.0;
                for a in 0..3 {
                    for b in (a + 1)..3 {
                        d = d.max((vertices[t[a]] - vertices[t[b]]).norm());
                    }
                }
                d
            })
            .collect();

        Ok(Mesh {
            level,
            vertices,
            triangles,
            edges,
            element_edges,
            element_diameters,
            geometry,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Largest element diameter.
    pub fn h(&self) -> f64 {
        self.element_diameters.iter().cloned().fold(0.0, f64::max)
    }

    pub fn skeleton_query(&self, edge: usize) -> Result<EdgeInfo, MeshError> {
        let e = self.edges.get(edge).ok_or(MeshError::EdgeOutOfRange {
            index: edge,
            count: self.edges.len(),
        })?;
        Ok(EdgeInfo {
            plus: e.plus,
            minus: e.minus,
            normal: e.normal,
            h: e.h,
            tag: e.tag,
        })
    }

    /// Point on edge `e` at parameter `s` in [0, 1], measured from the lower
    /// vertex index.
    pub fn edge_point(&self, e: usize, s: f64) -> Point2<f64> {
        let (a, b) = self.edges[e].endpoints;
        self.vertices[a] + (self.vertices[b] - self.vertices[a]) * s
    }

    /// Inradius of triangle `k`.
    pub fn inradius(&self, k: usize) -> f64 {
        let t = self.triangles[k];
        let p = |i: usize| self.vertices[t[i]];
        let l0 = (p(1) - p(2)).norm();
        let l1 = (p(0) - p(2)).norm();
        let l2 = (p(0) - p(1)).norm();
        2.0 * self.geometry[k].area() / (l0 + l1 + l2)
    }

    /// Plain-text dump: `v x y`, `t i j k`, `e i j tag`.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        for v in &self.vertices {
            writeln!(w, "v {} {}", v.x, v.y)?;
        }
        for t in &self.triangles {
            writeln!(w, "t {} {} {}", t[0], t[1], t[2])?;
        }
        for e in &self.edges {
            writeln!(w, "e {} {} {}", e.endpoints.0, e.endpoints.1, e.tag.as_str())?;
        }
        Ok(())
    }
}
