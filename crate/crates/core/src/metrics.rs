//! Reconstruction metrics (P2S, HD, NAE) and cross-patch continuity audits.
//!
//! The distance from a query to an oriented sample set treats every sample
//! `p` with normal `n` as a tangent disk of radius `r`: with `h = |n . (q - p)|`
//! and `s` the in-plane offset, the disk distance is `sqrt(h^2 + max(s - r, 0)^2)`.
//! The query distance is the smallest disk distance over the nearest samples,
//! and `r` is a fixed multiple of the set's median nearest-neighbour spacing.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{mvc_weights, mvc_weights_grad, FeatureComplex};
use crate::diffnet::{surface_jacobian, surface_point, Mlp};
use crate::error::{NpsError, Result};
use crate::fit::Checkpoint;
use crate::geom::{angle_deg, cross3, dist3, dot3, normalize3, sub3, Vec2, Vec3};
use crate::kdtree::KdTree;
use crate::layout::{LabeledSamples, PatchLayout};
use crate::mesher::{mesh_surface, SurfaceMesh};

pub const DEFAULT_SAMPLES: usize = 30000;
/// Boundary subdivision of the tessellation that reconstruction samples are drawn from.
pub const EVAL_DENSITY: usize = 24;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// Largest distance between the two faces' evaluations of a shared arc.
    pub max_gap: f64,
    pub smooth_arcs: usize,
    pub sharp_arcs: usize,
    /// Normal deviation across smooth arcs, in degrees.
    pub smooth_mean_deg: f64,
    pub smooth_max_deg: f64,
    pub sharp_mean_deg: f64,
    pub sharp_max_deg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub p2s: f64,
    pub hd: f64,
    pub nae_degrees: f64,
    pub reconstruction_samples: usize,
    pub target_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub continuity: Option<ContinuityReport>,
}

/// Oriented point samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OrientedPoints {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl OrientedPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Tangent disk radius in units of the median sample spacing.
pub const DISK_RADIUS_SPACINGS: f64 = 4.0;
const DISK_NEIGHBOURS: usize = 4;

/// Median distance from a point to its nearest other point, over at most 2000 points.
fn spacing(tree: &KdTree) -> f64 {
    let n = tree.len();
    if n < 2 {
        return 0.0;
    }
    let step = (n / 2000).max(1);
    let mut d: Vec<f64> = (0..n)
        .step_by(step)
        .map(|i| {
            let nn = tree.k_nearest(tree.point(i), 2);
            nn.get(1).map_or(0.0, |&(_, d2)| d2.sqrt())
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Per query: proxy distance to `other` and the folded normal angle in degrees.
fn one_side(queries: &OrientedPoints, other: &OrientedPoints) -> Vec<(f64, f64)> {
    let tree = KdTree::new(other.points.clone());
    let r = DISK_RADIUS_SPACINGS * spacing(&tree);
    queries
        .points
        .par_iter()
        .zip(&queries.normals)
        .map(|(&q, &nq)| {
            let near = tree.k_nearest(q, DISK_NEIGHBOURS);
            let (j, _) = near[0];
            let d = near
                .iter()
                .map(|&(i, d2)| {
                    let h = dot3(other.normals[i], sub3(q, other.points[i]));
                    let s = (d2 - h * h).max(0.0).sqrt();
                    (h * h + (s - r).max(0.0).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            let theta = angle_deg(nq, other.normals[j]);
            (d, theta.min(180.0 - theta))
        })
        .collect()
}

/// Two-sided P2S, HD and NAE between two oriented sample sets.
pub fn compare(recon: &OrientedPoints, target: &OrientedPoints) -> Result<MetricsReport> {
    if recon.is_empty() || target.is_empty() {
        return Err(NpsError::Empty("metric sample set".into()));
    }
    let a = one_side(recon, target);
    let b = one_side(target, recon);
    let mean = |v: &[(f64, f64)], k: usize| {
        v.iter().map(|p| if k == 0 { p.0 } else { p.1 }).sum::<f64>() / v.len() as f64
    };
    let max = |v: &[(f64, f64)]| v.iter().map(|p| p.0).fold(0.0, f64::max);
    Ok(MetricsReport {
        p2s: 0.5 * (mean(&a, 0) + mean(&b, 0)),
        hd: max(&a).max(max(&b)),
        nae_degrees: 0.5 * (mean(&a, 1) + mean(&b, 1)),
        reconstruction_samples: recon.len(),
        target_samples: target.len(),
        continuity: None,
    })
}

/// Area-uniform samples of the parametric surface, drawn through a
/// tessellation: a triangle by mapped area, then a uniform point of its
/// domain triangle evaluated exactly.
pub fn sample_reconstruction(
    complex: &FeatureComplex,
    mlp: &Mlp,
    orientation: &[f64],
    mesh: &SurfaceMesh,
    n: usize,
    rng: &mut impl Rng,
) -> Result<OrientedPoints> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(NpsError::Empty("reconstruction has zero area".into()));
    }
    let dim = complex.dim();
    let mut faces = Vec::with_capacity(n);
    let mut z = Array2::zeros((n, dim));
    let mut zu = Array2::zeros((n, dim));
    let mut zv = Array2::zeros((n, dim));
    let mut fallback = Vec::new();
    for i in 0..n {
        let x = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&c| c < x).min(cumulative.len() - 1);
        let f = mesh.triangle_face[t];
        let [a, b, c] = mesh.triangle_params[t];
        let (mut s1, mut s2): (f64, f64) = (rng.gen(), rng.gen());
        if s1 + s2 > 1.0 {
            s1 = 1.0 - s1;
            s2 = 1.0 - s2;
        }
        let u: Vec2 = [
            a[0] + s1 * (b[0] - a[0]) + s2 * (c[0] - a[0]),
            a[1] + s1 * (b[1] - a[1]) + s2 * (c[1] - a[1]),
        ];
        let domain = &complex.domains[f];
        match mvc_weights_grad(domain, u) {
            Ok(g) => {
                for (j, &row) in domain.corners.iter().enumerate() {
                    let zr = complex.features.row(row);
                    z.row_mut(i).scaled_add(g.weights[j], &zr);
                    zu.row_mut(i).scaled_add(g.gradients[j][0], &zr);
                    zv.row_mut(i).scaled_add(g.gradients[j][1], &zr);
                }
            }
            Err(_) => {
                let w = mvc_weights(domain, u)?;
                for (j, &row) in domain.corners.iter().enumerate() {
                    z.row_mut(i).scaled_add(w[j], &complex.features.row(row));
                }
                fallback.push((i, t));
            }
        }
        faces.push(f);
    }
    let trace = mlp.forward_trace(z, vec![zu, zv]);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let row = |a: &Array2<f64>| [a[[i, 0]], a[[i, 1]], a[[i, 2]]];
        points.push(row(&trace.output));
        let c = cross3(row(&trace.output_tangents[0]), row(&trace.output_tangents[1]));
        let s = orientation.get(faces[i]).copied().unwrap_or(1.0);
        normals.push(normalize3(c).map(|v| v.map(|x| x * s)));
    }
    for (i, t) in fallback {
        let [a, b, c] = mesh.triangles[t].map(|v| mesh.vertices[v]);
        normals[i] = normalize3(cross3(sub3(b, a), sub3(c, a)));
    }
    let mut out = OrientedPoints::default();
    for (p, n) in points.into_iter().zip(normals) {
        // points with a vanishing Jacobian carry no normal and are skipped
        if let Some(n) = n {
            out.points.push(p);
            out.normals.push(n);
        }
    }
    Ok(out)
}

/// At most `n` target samples, chosen at random when there are more.
pub fn subsample_target(target: &LabeledSamples, n: usize, rng: &mut impl Rng) -> OrientedPoints {
    if target.len() <= n {
        return OrientedPoints {
            points: target.points.clone(),
            normals: target.normals.clone(),
        };
    }
    let idx = index::sample(rng, target.len(), n);
    OrientedPoints {
        points: idx.iter().map(|i| target.points[i]).collect(),
        normals: idx.iter().map(|i| target.normals[i]).collect(),
    }
}

/// Metrics of a complex against a target in the same frame.
pub fn evaluate_complex(
    complex: &FeatureComplex,
    mlp: &Mlp,
    orientation: &[f64],
    target: &LabeledSamples,
    n_samples: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = mesh_surface(complex, mlp, orientation, EVAL_DENSITY, seed)?;
    let recon = sample_reconstruction(complex, mlp, orientation, &mesh, n_samples, &mut rng)?;
    let tgt = subsample_target(target, n_samples, &mut rng);
    compare(&recon, &tgt)
}

/// Metrics of a checkpoint (or one training shape of a shape space).
pub fn evaluate(
    ckpt: &Checkpoint,
    shape: Option<usize>,
    target: &LabeledSamples,
    n_samples: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let complex = ckpt.complex_for_shape(shape)?;
    evaluate_complex(&complex, &ckpt.mlp, &ckpt.orientation, target, n_samples, seed)
}

/// Positional gaps and normal deviations along every shared arc, at
/// `samples_per_arc` evenly spaced parameters. Normals are taken `eps`
/// inside both faces.
pub fn continuity_report(
    complex: &FeatureComplex,
    mlp: &Mlp,
    layout: &PatchLayout,
    orientation: &[f64],
    smooth: &[bool],
    samples_per_arc: usize,
    eps: f64,
) -> Result<ContinuityReport> {
    let m = samples_per_arc.max(1);
    let mut report = ContinuityReport::default();
    let (mut smooth_dev, mut sharp_dev) = (Vec::new(), Vec::new());
    for (i, arc) in layout.arcs.iter().enumerate() {
        if !arc.is_shared() {
            continue;
        }
        let (f0, f1) = (arc.faces[0], arc.faces[1]);
        let (d0, d1) = (&complex.domains[f0], &complex.domains[f1]);
        let j0 = d0.edge_of_arc(arc.a, arc.b).expect("arc edge");
        let j1 = d1.edge_of_arc(arc.a, arc.b).expect("arc edge");
        let is_smooth = smooth.get(i).copied().unwrap_or(true);
        if is_smooth {
            report.smooth_arcs += 1;
        } else {
            report.sharp_arcs += 1;
        }
        for k in 0..=m {
            let t = k as f64 / m as f64;
            let p0 = surface_point(complex, mlp, f0, d0.canonical_edge_point(j0, t))?;
            let p1 = surface_point(complex, mlp, f1, d1.canonical_edge_point(j1, t))?;
            report.max_gap = report.max_gap.max(dist3(p0, p1));
            if k == m {
                continue;
            }
            let t = (k as f64 + 0.5) / m as f64;
            let n0 = oriented_normal(complex, mlp, f0, d0.inset_edge_point(j0, t, eps), orientation);
            let n1 = oriented_normal(complex, mlp, f1, d1.inset_edge_point(j1, t, eps), orientation);
            if let (Some(a), Some(b)) = (n0, n1) {
                let dev = angle_deg(a, b);
                if is_smooth {
                    smooth_dev.push(dev);
                } else {
                    sharp_dev.push(dev);
                }
            }
        }
    }
    let stats = |v: &[f64]| {
        if v.is_empty() {
            (0.0, 0.0)
        } else {
            (v.iter().sum::<f64>() / v.len() as f64, v.iter().cloned().fold(0.0, f64::max))
        }
    };
    (report.smooth_mean_deg, report.smooth_max_deg) = stats(&smooth_dev);
    (report.sharp_mean_deg, report.sharp_max_deg) = stats(&sharp_dev);
    Ok(report)
}

fn oriented_normal(complex: &FeatureComplex, mlp: &Mlp, face: usize, u: Vec2, orientation: &[f64]) -> Option<Vec3> {
    let [ju, jv] = surface_jacobian(complex, mlp, face, u).ok()?;
    let s = orientation.get(face).copied().unwrap_or(1.0);
    normalize3(cross3(ju, jv)).map(|n| n.map(|x| x * s))
}

/// Continuity audit of a checkpoint.
pub fn checkpoint_continuity(ckpt: &Checkpoint, shape: Option<usize>, samples_per_arc: usize) -> Result<ContinuityReport> {
    let complex = ckpt.complex_for_shape(shape)?;
    continuity_report(
        &complex,
        &ckpt.mlp,
        &ckpt.layout,
        &ckpt.orientation,
        &ckpt.smooth,
        samples_per_arc,
        1e-4,
    )
}
