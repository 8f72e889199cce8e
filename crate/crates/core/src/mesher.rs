//! Tessellation of the fitted patches into one welded triangle mesh.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::complex::{mvc_weights, FeatureComplex, PolygonDomain};
use crate::diffnet::Mlp;
use crate::error::{NpsError, Result};
use crate::fit::Checkpoint;
use crate::geom::{dist3, norm2, sub2, triangle_area3, Vec2, Vec3};

/// Identity of a tessellation vertex across faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VertexKey {
    Corner(u32),
    /// Sample `k` of `density` along the arc between corners `a < b`, counted from `a`.
    Edge { a: u32, b: u32, k: usize },
    Interior { face: u32, index: usize },
}

/// How the feature of a tessellation vertex is formed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Source {
    Corner(usize),
    /// `(1 - t) z_lower + t z_upper` with rows ordered by corner id.
    Edge { lower: usize, upper: usize, t: f64 },
    Interior(Vec2),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchTessellation {
    pub points: Vec<Vec2>,
    pub keys: Vec<VertexKey>,
    pub sources: Vec<Source>,
    /// Counter-clockwise in the domain.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_points: usize,
}

/// Constrained Delaunay tessellation of one domain: every edge subdivided at
/// `t = k / density` from its lower-id corner, plus a jittered grid of about
/// `interior` points clipped to the polygon.
pub fn tessellate_face(
    domain: &PolygonDomain,
    density: usize,
    interior: usize,
    rng: &mut impl Rng,
) -> PatchTessellation {
    let density = density.max(1);
    let n = domain.len();
    let mut points = Vec::new();
    let mut keys = Vec::new();
    let mut sources = Vec::new();
    // edge membership of boundary points, for dropping degenerate hull slivers
    let mut on_edges: Vec<[Option<usize>; 2]> = Vec::new();
    for j in 0..n {
        points.push(domain.vertices[j]);
        keys.push(VertexKey::Corner(domain.corner_ids[j]));
        sources.push(Source::Corner(domain.corners[j]));
        on_edges.push([Some((j + n - 1) % n), Some(j)]);
        let (p, q) = (domain.corner_ids[j], domain.corner_ids[(j + 1) % n]);
        let (lo_row, hi_row) = if p <= q {
            (domain.corners[j], domain.corners[(j + 1) % n])
        } else {
            (domain.corners[(j + 1) % n], domain.corners[j])
        };
        // walk from vertex j towards j + 1
        for s in 1..density {
            let k = if p <= q { s } else { density - s };
            let t = k as f64 / density as f64;
            points.push(domain.canonical_edge_point(j, t));
            keys.push(VertexKey::Edge {
                a: p.min(q),
                b: p.max(q),
                k,
            });
            sources.push(Source::Edge {
                lower: lo_row,
                upper: hi_row,
                t,
            });
            on_edges.push([Some(j), None]);
        }
    }
    let boundary_points = points.len();

    if interior > 0 {
        let h = (domain.area() / interior as f64).sqrt();
        let cells = (2.0 / h).ceil() as usize;
        let mut index = 0;
        for iy in 0..cells {
            for ix in 0..cells {
                let u = [
                    -1.0 + (ix as f64 + rng.gen::<f64>()) * h,
                    -1.0 + (iy as f64 + rng.gen::<f64>()) * h,
                ];
                if domain.inset_depth(u) > 0.3 * h {
                    points.push(u);
                    keys.push(VertexKey::Interior {
                        face: domain.face_id,
                        index,
                    });
                    sources.push(Source::Interior(u));
                    on_edges.push([None, None]);
                    index += 1;
                }
            }
        }
    }

    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    let mut handle_to_point = HashMap::new();
    let mut handles = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let h = cdt
            .insert(Point2::new(p[0], p[1]))
            .expect("finite domain point");
        handle_to_point.entry(h.index()).or_insert(i);
        handles.push(h);
    }
    for i in 0..boundary_points {
        let (a, b) = (handles[i], handles[(i + 1) % boundary_points]);
        if a != b && cdt.can_add_constraint(a, b) {
            cdt.add_constraint(a, b);
        }
    }
    let shares_edge = |a: usize, b: usize, c: usize| {
        on_edges[a].iter().flatten().any(|e| {
            on_edges[b].iter().flatten().any(|x| x == e)
                && on_edges[c].iter().flatten().any(|x| x == e)
        })
    };
    let mut triangles = Vec::new();
    for face in cdt.inner_faces() {
        let [a, b, c] = face.vertices().map(|v| handle_to_point[&v.fix().index()]);
        if shares_edge(a, b, c) {
            continue;
        }
        triangles.push([a, b, c]);
    }
    PatchTessellation {
        points,
        keys,
        sources,
        triangles,
        boundary_points,
    }
}

/// Indexed triangle mesh of the whole surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Layout face index of every triangle.
    pub triangle_face: Vec<usize>,
    /// Domain parameters of the three corners of every triangle.
    pub triangle_params: Vec<[Vec2; 3]>,
    /// Layout face ids, for group names.
    pub face_ids: Vec<u32>,
    /// Largest distance between copies of one welded vertex before welding.
    pub weld_gap: f64,
    /// Triangles whose mapped area vanishes.
    pub degenerate: Vec<usize>,
}

impl SurfaceMesh {
    /// Undirected edges with their triangle counts.
    pub fn edge_counts(&self) -> BTreeMap<(usize, usize), usize> {
        let mut edges = BTreeMap::new();
        for t in &self.triangles {
            for j in 0..3 {
                let (a, b) = (t[j], t[(j + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        self.edge_counts().values().all(|&c| c == 2)
    }

    /// Connected components of the triangle adjacency.
    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.triangles {
            for j in 1..3 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[j]));
                parent[a] = b;
            }
        }
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v] = true;
            }
        }
        let mut roots: Vec<usize> = (0..self.vertices.len())
            .filter(|&v| used[v])
            .map(|v| find(&mut parent, v))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        triangle_area3(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn has_nan(&self) -> bool {
        self.vertices.iter().flatten().any(|v| !v.is_finite())
    }

    /// OBJ text; with `groups`, one `g patch_<id>` section per face.
    pub fn to_obj_string(&self, groups: bool) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v[0], v[1], v[2]).expect("string write");
        }
        let mut current = None;
        for (t, tri) in self.triangles.iter().enumerate() {
            let f = self.triangle_face[t];
            if groups && current != Some(f) {
                writeln!(out, "g patch_{}", self.face_ids[f]).expect("string write");
                current = Some(f);
            }
            writeln!(out, "f {} {} {}", tri[0] + 1, tri[1] + 1, tri[2] + 1).expect("string write");
        }
        out
    }
}

pub fn export_obj(mesh: &SurfaceMesh, path: impl AsRef<Path>, groups: bool) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mesh.to_obj_string(groups)).map_err(|e| NpsError::io(path, e))
}

/// Interior sample count giving roughly the boundary spacing inside the domain.
fn interior_count(domain: &PolygonDomain, density: usize) -> usize {
    let n = domain.len();
    let perimeter: f64 = (0..n)
        .map(|j| norm2(sub2(domain.vertices[(j + 1) % n], domain.vertices[j])))
        .sum();
    let h = perimeter / (n * density.max(1)) as f64;
    (domain.area() / (h * h)).round() as usize
}

/// Tessellates every face, maps the samples through the network and welds
/// shared boundary vertices by key. Faces with a negative orientation sign
/// get reversed triangles.
pub fn mesh_surface(
    complex: &FeatureComplex,
    mlp: &Mlp,
    orientation: &[f64],
    density: usize,
    seed: u64,
) -> Result<SurfaceMesh> {
    let per_face: Vec<(PatchTessellation, Vec<Vec3>)> = complex
        .domains
        .par_iter()
        .enumerate()
        .map(|(f, d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(f as u64));
            let tess = tessellate_face(d, density, interior_count(d, density), &mut rng);
            let x = map_points(complex, mlp, f, &tess)?;
            Ok((tess, x))
        })
        .collect::<Result<_>>()?;

    let mut index: BTreeMap<VertexKey, usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut triangle_face = Vec::new();
    let mut triangle_params = Vec::new();
    let mut weld_gap: f64 = 0.0;
    for (f, (tess, x)) in per_face.iter().enumerate() {
        let ids: Vec<usize> = tess
            .keys
            .iter()
            .zip(x)
            .map(|(key, &p)| {
                *index
                    .entry(*key)
                    .and_modify(|&mut v| weld_gap = weld_gap.max(dist3(vertices[v], p)))
                    .or_insert_with(|| {
                        vertices.push(p);
                        vertices.len() - 1
                    })
            })
            .collect();
        let flip = orientation.get(f).copied().unwrap_or(1.0) < 0.0;
        for t in &tess.triangles {
            let t = if flip { [t[0], t[2], t[1]] } else { *t };
            triangles.push(t.map(|i| ids[i]));
            triangle_params.push(t.map(|i| tess.points[i]));
            triangle_face.push(f);
        }
    }
    let mut mesh = SurfaceMesh {
        vertices,
        triangles,
        triangle_face,
        triangle_params,
        face_ids: complex.domains.iter().map(|d| d.face_id).collect(),
        weld_gap,
        degenerate: Vec::new(),
    };
    mesh.degenerate = (0..mesh.triangles.len())
        .filter(|&t| !(mesh.triangle_area(t) > 1e-14))
        .collect();
    Ok(mesh)
}

fn map_points(complex: &FeatureComplex, mlp: &Mlp, face: usize, tess: &PatchTessellation) -> Result<Vec<Vec3>> {
    let domain = &complex.domains[face];
    let mut z = Array2::zeros((tess.points.len(), complex.dim()));
    for (i, s) in tess.sources.iter().enumerate() {
        let row = match *s {
            Source::Corner(r) => complex.features.row(r).to_owned(),
            Source::Edge { lower, upper, t } => complex.edge_feature(lower, upper, t),
            Source::Interior(u) => {
                let w = mvc_weights(domain, u)?;
                let mut acc = ndarray::Array1::zeros(complex.dim());
                for (j, &r) in domain.corners.iter().enumerate() {
                    acc.scaled_add(w[j], &complex.features.row(r));
                }
                acc
            }
        };
        z.row_mut(i).assign(&row);
    }
    let x = mlp.forward(z.view());
    Ok(x.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
}

/// Mesh of a checkpoint; `shape` selects a training shape of a shape space.
pub fn mesh_checkpoint(ckpt: &Checkpoint, shape: Option<usize>, density: usize, seed: u64) -> Result<SurfaceMesh> {
    let complex = ckpt.complex_for_shape(shape)?;
    mesh_surface(&complex, &ckpt.mlp, &ckpt.orientation, density, seed)
}
