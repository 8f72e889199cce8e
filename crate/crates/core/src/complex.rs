//! Polygonal parameter domains and mean value interpolation of vertex features.
//!
//! Every n-sided face gets a convex polygon inscribed in the unit circle,
//! counter-clockwise, first vertex at angle 0, with the arc between
//! consecutive vertices proportional to the target boundary length of that
//! edge. A point `u` of the polygon maps into feature space through mean
//! value coordinates, `z(u) = sum_j lambda_j(u) z_j`. On an edge the
//! coordinates reduce to linear interpolation of the two endpoint features, so
//! faces sharing an arc agree on it exactly.

use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Sub};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NpsError, Result};
use crate::geom::{cross2, dot2, lerp2, norm2, sub2, Vec2};
use crate::layout::PatchLayout;

/// Distance below which a point is treated as lying on an edge or vertex.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PolygonDomain {
    pub face_id: u32,
    /// Counter-clockwise vertices on the unit circle.
    pub vertices: Vec<Vec2>,
    /// Feature row of each vertex.
    pub corners: Vec<usize>,
    /// Layout corner id of each vertex.
    pub corner_ids: Vec<u32>,
}

/// Where a query point sits relative to a domain polygon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Location {
    Interior,
    Vertex(usize),
    /// On edge `j -> j + 1` at parameter `t` measured from vertex `j`.
    Edge(usize, f64),
    Outside,
}

impl PolygonDomain {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        let n = self.len();
        0.5 * (0..n)
            .map(|j| cross2(self.vertices[j], self.vertices[(j + 1) % n]))
            .sum::<f64>()
    }

    /// Unit inward normal of edge `j -> j + 1`.
    pub fn inward_normal(&self, j: usize) -> Vec2 {
        let e = sub2(self.vertices[(j + 1) % self.len()], self.vertices[j]);
        let l = norm2(e);
        [-e[1] / l, e[0] / l]
    }

    /// Signed distance from `u` to the line through edge `j` (positive inside).
    pub fn edge_distance(&self, j: usize, u: Vec2) -> f64 {
        let a = self.vertices[j];
        let b = self.vertices[(j + 1) % self.len()];
        let e = sub2(b, a);
        cross2(e, sub2(u, a)) / norm2(e)
    }

    /// Smallest signed edge distance; the inset depth of an interior point.
    pub fn inset_depth(&self, u: Vec2) -> f64 {
        (0..self.len())
            .map(|j| self.edge_distance(j, u))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn locate(&self, u: Vec2) -> Location {
        let n = self.len();
        for j in 0..n {
            if norm2(sub2(u, self.vertices[j])) <= BOUNDARY_TOL {
                return Location::Vertex(j);
            }
        }
        let mut outside = false;
        for j in 0..n {
            let d = self.edge_distance(j, u);
            if d < -BOUNDARY_TOL {
                outside = true;
            }
        }
        if outside {
            return Location::Outside;
        }
        for j in 0..n {
            if self.edge_distance(j, u).abs() <= BOUNDARY_TOL {
                let a = self.vertices[j];
                let e = sub2(self.vertices[(j + 1) % n], a);
                let t = (dot2(sub2(u, a), e) / dot2(e, e)).clamp(0.0, 1.0);
                return Location::Edge(j, t);
            }
        }
        Location::Interior
    }

    /// Index of the domain edge joining corners `a` and `b` (either order).
    pub fn edge_of_arc(&self, a: u32, b: u32) -> Option<usize> {
        let n = self.len();
        (0..n).find(|&j| {
            let (p, q) = (self.corner_ids[j], self.corner_ids[(j + 1) % n]);
            (p, q) == (a, b) || (p, q) == (b, a)
        })
    }

    /// Point on edge `j` at canonical parameter `t`, measured from whichever
    /// endpoint has the smaller corner id.
    pub fn canonical_edge_point(&self, j: usize, t: f64) -> Vec2 {
        let n = self.len();
        let (p, q) = (self.corner_ids[j], self.corner_ids[(j + 1) % n]);
        let (va, vb) = (self.vertices[j], self.vertices[(j + 1) % n]);
        if p <= q {
            lerp2(va, vb, t)
        } else {
            lerp2(vb, va, t)
        }
    }

    /// Canonical edge point moved `eps` along the inward edge normal.
    pub fn inset_edge_point(&self, j: usize, t: f64, eps: f64) -> Vec2 {
        let p = self.canonical_edge_point(j, t);
        let m = self.inward_normal(j);
        [p[0] + eps * m[0], p[1] + eps * m[1]]
    }
}

/// Builds one domain per layout face.
pub fn build_domains(layout: &PatchLayout) -> Result<Vec<PolygonDomain>> {
    layout
        .faces
        .iter()
        .enumerate()
        .map(|(fi, face)| {
            let lengths = &layout.boundary_lengths[fi];
            for (j, &l) in lengths.iter().enumerate() {
                if !(l > 0.0) || !l.is_finite() {
                    return Err(NpsError::ZeroLengthEdge { face: face.id, edge: j });
                }
            }
            let total: f64 = lengths.iter().sum();
            let mut vertices = Vec::with_capacity(lengths.len());
            let mut acc = 0.0;
            for &l in lengths {
                let angle = 2.0 * PI * acc / total;
                vertices.push([angle.cos(), angle.sin()]);
                acc += l;
            }
            Ok(PolygonDomain {
                face_id: face.id,
                vertices,
                corners: layout.face_corner_indices(fi),
                corner_ids: face.corners.clone(),
            })
        })
        .collect()
}

/// Value plus derivatives with respect to the two domain coordinates.
#[derive(Clone, Copy, Debug)]
struct Dual2 {
    v: f64,
    d: [f64; 2],
}

impl Dual2 {
    fn constant(v: f64) -> Self {
        Dual2 { v, d: [0.0; 2] }
    }

    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        let k = 0.5 / s;
        Dual2 {
            v: s,
            d: [self.d[0] * k, self.d[1] * k],
        }
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1]],
        }
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1]],
        }
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, o: Dual2) -> Dual2 {
        Dual2 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
            ],
        }
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    fn div(self, o: Dual2) -> Dual2 {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        Dual2 {
            v,
            d: [(self.d[0] - v * o.d[0]) * inv, (self.d[1] - v * o.d[1]) * inv],
        }
    }
}

/// Mean value coordinates at a strictly interior point, with derivatives.
///
/// `w_j = (tan(a_{j-1}/2) + tan(a_j/2)) / r_j`, where `a_j` is the angle at `u`
/// subtended by edge `j -> j + 1` and `tan(a/2) = (r_j r_{j+1} - d_j.d_{j+1}) / (d_j x d_{j+1})`.
fn mvc_interior(domain: &PolygonDomain, u: Vec2) -> (Vec<f64>, Vec<Vec2>) {
    let n = domain.len();
    let ux = Dual2 { v: u[0], d: [1.0, 0.0] };
    let uy = Dual2 { v: u[1], d: [0.0, 1.0] };
    let dx: Vec<Dual2> = domain
        .vertices
        .iter()
        .map(|v| Dual2::constant(v[0]) - ux)
        .collect();
    let dy: Vec<Dual2> = domain
        .vertices
        .iter()
        .map(|v| Dual2::constant(v[1]) - uy)
        .collect();
    let r: Vec<Dual2> = (0..n).map(|j| (dx[j] * dx[j] + dy[j] * dy[j]).sqrt()).collect();
    let tan_half: Vec<Dual2> = (0..n)
        .map(|j| {
            let k = (j + 1) % n;
            let dot = dx[j] * dx[k] + dy[j] * dy[k];
            let cross = dx[j] * dy[k] - dy[j] * dx[k];
            (r[j] * r[k] - dot) / cross
        })
        .collect();
    let w: Vec<Dual2> = (0..n)
        .map(|j| (tan_half[(j + n - 1) % n] + tan_half[j]) / r[j])
        .collect();
    let mut sum = Dual2::constant(0.0);
    for &wj in &w {
        sum = sum + wj;
    }
    let mut lambda = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n);
    for &wj in &w {
        let l = wj / sum;
        lambda.push(l.v);
        grad.push(l.d);
    }
    (lambda, grad)
}

/// Mean value coordinates of `u` with respect to the domain polygon.
///
/// On a vertex the result is the indicator of that vertex; on an edge it is the
/// linear interpolation weight pair of the edge endpoints.
pub fn mvc_weights(domain: &PolygonDomain, u: Vec2) -> Result<Vec<f64>> {
    let n = domain.len();
    match domain.locate(u) {
        Location::Outside => Err(NpsError::OutsideDomain(u[0], u[1])),
        Location::Vertex(j) => {
            let mut l = vec![0.0; n];
            l[j] = 1.0;
            Ok(l)
        }
        Location::Edge(j, t) => {
            let mut l = vec![0.0; n];
            l[j] = 1.0 - t;
            l[(j + 1) % n] = t;
            Ok(l)
        }
        Location::Interior => Ok(mvc_interior(domain, u).0),
    }
}

/// Coordinates together with their gradient in `u`. Only defined in the interior.
#[derive(Clone, Debug)]
pub struct MvcGrad {
    pub weights: Vec<f64>,
    /// `d lambda_j / d(u, v)`.
    pub gradients: Vec<Vec2>,
}

pub fn mvc_weights_grad(domain: &PolygonDomain, u: Vec2) -> Result<MvcGrad> {
    match domain.locate(u) {
        Location::Outside => Err(NpsError::OutsideDomain(u[0], u[1])),
        Location::Vertex(_) | Location::Edge(..) => Err(NpsError::OnBoundary(u[0], u[1])),
        Location::Interior => {
            let (weights, gradients) = mvc_interior(domain, u);
            Ok(MvcGrad { weights, gradients })
        }
    }
}

/// Vertex features plus the per-face parameter domains.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureComplex {
    /// `K x D`, one row per layout corner in layout order.
    pub features: Array2<f64>,
    pub domains: Vec<PolygonDomain>,
}

impl FeatureComplex {
    /// Gaussian initialization with the given standard deviation.
    pub fn random(layout: &PatchLayout, dim: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        if dim < 2 {
            return Err(NpsError::Config(format!("feature dimension {dim} < 2")));
        }
        let domains = build_domains(layout)?;
        let normal = Normal::new(0.0, std).map_err(|e| NpsError::Config(e.to_string()))?;
        let features = Array2::from_shape_fn((layout.num_corners(), dim), |_| normal.sample(rng));
        Ok(FeatureComplex { features, domains })
    }

    pub fn new(domains: Vec<PolygonDomain>, features: Array2<f64>) -> Self {
        FeatureComplex { features, domains }
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_vertices(&self) -> usize {
        self.features.nrows()
    }

    /// `z(u) = sum_j lambda_j(u) z_j` on face `face`.
    pub fn interpolate_feature(&self, face: usize, u: Vec2) -> Result<Array1<f64>> {
        let domain = &self.domains[face];
        let weights = mvc_weights(domain, u)?;
        let mut z = Array1::zeros(self.dim());
        for (j, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                z.scaled_add(w, &self.features.row(domain.corners[j]));
            }
        }
        Ok(z)
    }

    /// `(1 - t) z_a + t z_b` for feature rows `a`, `b`.
    pub fn edge_feature(&self, a: usize, b: usize, t: f64) -> Array1<f64> {
        let za = self.features.row(a);
        let zb = self.features.row(b);
        let mut z = za.to_owned();
        z.zip_mut_with(&zb, |x, &y| *x = (1.0 - t) * *x + t * y);
        z
    }
}

pub fn interpolate_feature(complex: &FeatureComplex, face: usize, u: Vec2) -> Result<Array1<f64>> {
    complex.interpolate_feature(face, u)
}

pub fn edge_feature(complex: &FeatureComplex, a: usize, b: usize, t: f64) -> Array1<f64> {
    complex.edge_feature(a, b, t)
}
