//! Parameter-space sampling, per-face budgets, closest-point pairing and
//! collocated boundary samples.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use crate::complex::PolygonDomain;
use crate::error::{NpsError, Result};
use crate::geom::{angle_deg, cross2, dot3, scale3, sub2, Vec2, Vec3};
use crate::kdtree::KdTree;
use crate::layout::{LabeledSamples, PatchLayout};

/// Margin below which domain samples are rejected as touching the boundary.
pub const INTERIOR_MARGIN: f64 = 1e-6;

/// Dihedral deviation above which an arc is treated as a sharp crease.
pub const SHARP_THRESHOLD: f64 = PI / 4.0;

/// Uniform samples over the polygon: fan triangulation, area-weighted
/// triangle choice, uniform barycentric draw, rejection near the boundary.
pub fn sample_domain(domain: &PolygonDomain, count: usize, rng: &mut impl Rng) -> Vec<Vec2> {
    let v = &domain.vertices;
    let n = v.len();
    let mut cumulative = Vec::with_capacity(n - 2);
    let mut acc = 0.0;
    for k in 1..n - 1 {
        acc += 0.5 * cross2(sub2(v[k], v[0]), sub2(v[k + 1], v[0]));
        cumulative.push(acc);
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pick = rng.gen::<f64>() * acc;
        let k = cumulative.partition_point(|&c| c < pick).min(n - 3) + 1;
        let (a, b, c) = (v[0], v[k], v[k + 1]);
        let r1: f64 = rng.gen::<f64>().sqrt();
        let r2: f64 = rng.gen();
        let u = [
            (1.0 - r1) * a[0] + r1 * (1.0 - r2) * b[0] + r1 * r2 * c[0],
            (1.0 - r1) * a[1] + r1 * (1.0 - r2) * b[1] + r1 * r2 * c[1],
        ];
        if domain.inset_depth(u) > INTERIOR_MARGIN {
            out.push(u);
        }
    }
    out
}

/// Splits `total` samples across faces proportionally to `areas`, every
/// face getting at least one. Rounding uses the largest-remainder rule with
/// ties broken by face order.
pub fn allocate_per_face(total: usize, areas: &[f64]) -> Vec<usize> {
    let n = areas.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = areas.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        areas.iter().map(|a| total as f64 * a / sum).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    // every face gets at least one sample, taken from the largest budgets
    for i in 0..n {
        if counts[i] == 0 {
            let donor = (0..n).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            if counts[donor] > 1 {
                counts[donor] -= 1;
            }
            counts[i] = 1;
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Surface sample to its closest target point.
    SurfaceToTarget,
    /// Target point to its closest surface sample.
    TargetToSurface,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    /// Index into the surface sample set.
    pub surface: usize,
    /// Index into the target samples.
    pub target: usize,
    pub direction: Direction,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairedSamples {
    pub pairs: Vec<Pair>,
}

impl PairedSamples {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Per-label spatial index over target points, built once per fit.
pub struct TargetIndex {
    trees: Vec<KdTree>,
    members: Vec<Vec<usize>>,
}

impl TargetIndex {
    pub fn new(points: &[Vec3], labels: &[usize], num_labels: usize) -> Self {
        let mut members = vec![Vec::new(); num_labels];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        let trees = members
            .iter()
            .map(|m| KdTree::new(m.iter().map(|&i| points[i]).collect()))
            .collect();
        TargetIndex { trees, members }
    }

    pub fn from_samples(samples: &LabeledSamples, num_labels: usize) -> Self {
        Self::new(&samples.points, &samples.patch, num_labels)
    }

    pub fn members(&self, label: usize) -> &[usize] {
        &self.members[label]
    }

    /// Closest target of the given label: (target index, squared distance).
    pub fn nearest(&self, label: usize, q: Vec3) -> Option<(usize, f64)> {
        self.trees[label]
            .nearest(q)
            .map(|(i, d)| (self.members[label][i], d))
    }
}

/// Two-sided closest-point pairing restricted to matching labels.
///
/// Every surface sample is paired with its nearest target of the same label,
/// and every target listed in `target_queries` with its nearest surface sample
/// of the same label.
pub fn pair_closest_indexed(
    surface: &[Vec3],
    surface_labels: &[usize],
    target_points: &[Vec3],
    target_labels: &[usize],
    index: &TargetIndex,
    target_queries: &[usize],
) -> Result<PairedSamples> {
    let num_labels = index.trees.len();
    let surface_index = TargetIndex::new(surface, surface_labels, num_labels);
    for l in 0..num_labels {
        let has_surface = !surface_index.members[l].is_empty();
        let has_target = !index.members[l].is_empty();
        let queried = target_queries.iter().any(|&t| target_labels[t] == l);
        if (has_surface && !has_target) || (queried && !has_surface) {
            return Err(NpsError::EmptyPatch(l as u32));
        }
    }
    let forward: Vec<Pair> = (0..surface.len())
        .into_par_iter()
        .map(|i| {
            let (t, _) = index.nearest(surface_labels[i], surface[i]).expect("checked above");
            Pair {
                surface: i,
                target: t,
                direction: Direction::SurfaceToTarget,
            }
        })
        .collect();
    let backward: Vec<Pair> = target_queries
        .par_iter()
        .map(|&t| {
            let (s, _) = surface_index
                .nearest(target_labels[t], target_points[t])
                .expect("checked above");
            Pair {
                surface: s,
                target: t,
                direction: Direction::TargetToSurface,
            }
        })
        .collect();
    let mut pairs = forward;
    pairs.extend(backward);
    Ok(PairedSamples { pairs })
}

/// [`pair_closest_indexed`] with a fresh index and every target as a query.
pub fn pair_closest(
    surface: &[Vec3],
    surface_labels: &[usize],
    target_points: &[Vec3],
    target_labels: &[usize],
) -> Result<PairedSamples> {
    if surface.is_empty() || target_points.is_empty() {
        return Err(NpsError::Empty("pairing input".into()));
    }
    let num_labels = surface_labels
        .iter()
        .chain(target_labels)
        .max()
        .map_or(0, |m| m + 1);
    let index = TargetIndex::new(target_points, target_labels, num_labels);
    let queries: Vec<usize> = (0..target_points.len()).collect();
    pair_closest_indexed(
        surface,
        surface_labels,
        target_points,
        target_labels,
        &index,
        &queries,
    )
}

/// One collocated pair straddling a shared arc.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySample {
    pub arc: usize,
    /// Canonical edge parameter, measured from the lower corner id.
    pub t: f64,
    pub faces: [usize; 2],
    /// The inset parameter points, one per face.
    pub params: [Vec2; 2],
    pub smooth: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryPairs {
    pub samples: Vec<BoundarySample>,
}

impl BoundaryPairs {
    pub fn smooth(&self) -> impl Iterator<Item = &BoundarySample> {
        self.samples.iter().filter(|s| s.smooth)
    }
}

/// Smooth/sharp label per arc.
///
/// Per-arc overrides win. Otherwise, with a target mesh, an arc is sharp when
/// the mean angle between the target normals on its two sides exceeds
/// [`SHARP_THRESHOLD`]; without a mesh every arc is smooth.
pub fn classify_arcs(layout: &PatchLayout, target: &LabeledSamples) -> Vec<bool> {
    let mesh_index = target.mesh.as_ref().map(|mesh| {
        let centroids: Vec<Vec3> = mesh
            .triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
                [
                    (a[0] + b[0] + c[0]) / 3.0,
                    (a[1] + b[1] + c[1]) / 3.0,
                    (a[2] + b[2] + c[2]) / 3.0,
                ]
            })
            .collect();
        TargetIndex::new(&centroids, &mesh.patch, layout.num_faces())
    });
    let sample_index = TargetIndex::from_samples(target, layout.num_faces());

    layout
        .arcs
        .iter()
        .map(|arc| {
            if let Some(s) = arc.smooth {
                return s;
            }
            let (Some(mesh), Some(index)) = (&target.mesh, &mesh_index) else {
                return true;
            };
            if arc.faces.len() != 2 {
                return true;
            }
            let pa = layout.corner_position(arc.a);
            let pb = layout.corner_position(arc.b);
            let probes: Vec<Vec3> = match &arc.polyline {
                Some(poly) if poly.len() >= 2 => poly.clone(),
                _ => (1..8)
                    .map(|k| {
                        let t = k as f64 / 8.0;
                        [
                            (1.0 - t) * pa[0] + t * pb[0],
                            (1.0 - t) * pa[1] + t * pb[1],
                            (1.0 - t) * pa[2] + t * pb[2],
                        ]
                    })
                    .collect(),
            };
            let mut total = 0.0;
            let mut count = 0usize;
            for q in probes {
                let mut normals = [[0.0; 3]; 2];
                let mut ok = true;
                for (side, &face) in arc.faces.iter().enumerate() {
                    let Some((tri, _)) = index.nearest(face, q) else {
                        ok = false;
                        break;
                    };
                    let Some(mut n) = mesh.triangle_normal(tri) else {
                        ok = false;
                        break;
                    };
                    // orient against the nearest labeled sample of the same patch
                    if let Some((s, _)) = sample_index.nearest(face, q) {
                        if dot3(n, target.normals[s]) < 0.0 {
                            n = scale3(n, -1.0);
                        }
                    }
                    normals[side] = n;
                }
                if ok {
                    total += angle_deg(normals[0], normals[1]).to_radians();
                    count += 1;
                }
            }
            count == 0 || total / count as f64 <= SHARP_THRESHOLD
        })
        .collect()
}

/// Collocated boundary samples on every arc shared by two faces.
///
/// Each sample draws `t` uniformly in (0, 1) and moves the edge point `eps`
/// inward in both adjacent domains.
pub fn boundary_pairs(
    layout: &PatchLayout,
    domains: &[PolygonDomain],
    smooth: &[bool],
    per_arc: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> BoundaryPairs {
    let mut samples = Vec::new();
    for (ai, arc) in layout.arcs.iter().enumerate() {
        if arc.faces.len() != 2 {
            continue;
        }
        let f0 = arc.faces[0];
        let f1 = arc.faces[1];
        let (Some(j0), Some(j1)) = (
            domains[f0].edge_of_arc(arc.a, arc.b),
            domains[f1].edge_of_arc(arc.a, arc.b),
        ) else {
            continue;
        };
        for _ in 0..per_arc {
            let t = loop {
                let t: f64 = rng.gen();
                if t > 0.0 {
                    break t;
                }
            };
            samples.push(BoundarySample {
                arc: ai,
                t,
                faces: [f0, f1],
                params: [
                    domains[f0].inset_edge_point(j0, t, eps),
                    domains[f1].inset_edge_point(j1, t, eps),
                ],
                smooth: smooth[ai],
            });
        }
    }
    BoundaryPairs { samples }
}

/// Evenly spaced canonical parameters along an arc, in order, for the
/// fairness term.
pub fn arc_polyline_params(count: usize) -> Vec<f64> {
    (0..count).map(|k| k as f64 / (count - 1) as f64).collect()
}
