//! Synthetic targets with analytically known geometry: spheres, ellipsoids,
//! an axis-aligned cube and a flat two-patch sheet.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geom::{dot3, newell_normal, normalize3, Vec3};
use crate::layout::{Corner, Face, LabeledSamples, PatchLayout};

/// Corner `i` of the cube `[-1, 1]^3`, with bit `k` of `i` selecting the sign of axis `k`.
fn cube_corner(i: u32) -> Vec3 {
    [0, 1, 2].map(|k| if i >> k & 1 == 1 { 1.0 } else { -1.0 })
}

/// Face id of the cube face with outward axis `k` and sign `s`: `2k + (s > 0)`.
fn cube_face_id(axis: usize, positive: bool) -> u32 {
    2 * axis as u32 + positive as u32
}

/// Six outward-oriented quads over the eight corners given by `position`.
fn cube_layout_with(position: impl Fn(u32) -> Vec3) -> PatchLayout {
    let corners: Vec<Corner> = (0..8)
        .map(|id| Corner {
            id,
            position: position(id),
        })
        .collect();
    let mut faces = Vec::new();
    for axis in 0..3 {
        for positive in [false, true] {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            let bit = |k: usize, on: bool| if on { 1u32 << k } else { 0 };
            let base = bit(axis, positive);
            let mut cycle: Vec<u32> = [(false, false), (true, false), (true, true), (false, true)]
                .iter()
                .map(|&(x, y)| base | bit(a, x) | bit(b, y))
                .collect();
            let pts: Vec<Vec3> = cycle.iter().map(|&c| cube_corner(c)).collect();
            let mut dir = [0.0; 3];
            dir[axis] = if positive { 1.0 } else { -1.0 };
            if dot3(newell_normal(&pts), dir) < 0.0 {
                cycle[1..].reverse();
            }
            faces.push(Face {
                id: cube_face_id(axis, positive),
                corners: cycle,
                holes: Vec::new(),
            });
        }
    }
    PatchLayout::new(corners, faces, Vec::new()).expect("cube layout")
}

/// Face of the cube layout containing direction `d` (largest absolute axis).
fn cube_face_of(d: Vec3) -> u32 {
    let axis = (0..3)
        .max_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()))
        .unwrap();
    cube_face_id(axis, d[axis] > 0.0)
}

/// Cube layout whose corners sit on the unit sphere, plus those corners.
pub fn cube_layout_unit_sphere() -> (PatchLayout, Vec<Vec3>) {
    ellipsoid_layout([1.0; 3])
}

/// Cube layout on the ellipsoid with semi-axes `axes`.
pub fn ellipsoid_layout(axes: Vec3) -> (PatchLayout, Vec<Vec3>) {
    let s = 1.0 / 3f64.sqrt();
    let pos = |i: u32| {
        let c = cube_corner(i);
        [0, 1, 2].map(|k| c[k] * s * axes[k])
    };
    let layout = cube_layout_with(pos);
    let corners = (0..8).map(pos).collect();
    (layout, corners)
}

fn unit_direction(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if let Some(u) = normalize3(v) {
            return u;
        }
    }
}

/// Area-uniform oriented samples of the ellipsoid with semi-axes `axes`,
/// labeled by the cube face of the underlying sphere direction.
pub fn ellipsoid_samples(axes: Vec3, n: usize, rng: &mut impl Rng) -> Vec<(Vec3, Vec3, u32)> {
    let inv_max = 1.0 / axes.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u = unit_direction(rng);
        // surface element of x = A u relative to the sphere is proportional to |A^-1 u|
        let g = [u[0] / axes[0], u[1] / axes[1], u[2] / axes[2]];
        let w = dot3(g, g).sqrt();
        if rng.gen::<f64>() * inv_max > w {
            continue;
        }
        let p = [u[0] * axes[0], u[1] * axes[1], u[2] * axes[2]];
        out.push((p, normalize3(g).unwrap(), cube_face_of(u)));
    }
    out
}

/// Ellipsoid target with the cube layout. Panics if a face receives no sample.
pub fn ellipsoid_target(axes: Vec3, n: usize, seed: u64) -> (PatchLayout, LabeledSamples) {
    let (layout, _) = ellipsoid_layout(axes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = ellipsoid_samples(axes, n, &mut rng);
    let samples = LabeledSamples::from_records(&layout, &records).expect("every face sampled");
    (layout, samples)
}

/// Unit sphere with the cube layout.
pub fn sphere_target(n: usize, seed: u64) -> (PatchLayout, LabeledSamples) {
    ellipsoid_target([1.0; 3], n, seed)
}

/// A family of `count` ellipsoids with semi-axes drawn uniformly in
/// `[lo, hi]`. The first two members are the extremes `lo^3` and `hi^3`.
pub fn ellipsoid_family(
    count: usize,
    lo: f64,
    hi: f64,
    points: usize,
    seed: u64,
) -> Vec<(Vec3, PatchLayout, LabeledSamples)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|m| {
            let axes = match m {
                0 => [lo; 3],
                1 => [hi; 3],
                _ => [0; 3].map(|_| rng.gen_range(lo..=hi)),
            };
            let (layout, samples) = ellipsoid_target(axes, points, rng.gen());
            (axes, layout, samples)
        })
        .collect()
}

/// Axis-aligned cube `[-1, 1]^3` with area-uniform samples and a labeled
/// two-triangles-per-face mesh.
pub fn cube_target(n: usize, seed: u64) -> (PatchLayout, LabeledSamples) {
    let layout = cube_layout_with(cube_corner);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let face = if i < 6 { i } else { rng.gen_range(0..6) };
        let axis = face / 2;
        let sign = if face % 2 == 1 { 1.0 } else { -1.0 };
        let mut p = [0.0; 3];
        p[(axis + 1) % 3] = rng.gen_range(-1.0..1.0);
        p[(axis + 2) % 3] = rng.gen_range(-1.0..1.0);
        p[axis] = sign;
        let mut n = [0.0; 3];
        n[axis] = sign;
        records.push((p, n, face as u32));
    }
    let mut samples = LabeledSamples::from_records(&layout, &records).expect("every face sampled");
    let vertices: Vec<Vec3> = (0..8).map(cube_corner).collect();
    let mut triangles = Vec::new();
    let mut labels = Vec::new();
    for f in &layout.faces {
        let c: Vec<usize> = f.corners.iter().map(|&id| id as usize).collect();
        triangles.push([c[0], c[1], c[2]]);
        triangles.push([c[0], c[2], c[3]]);
        labels.extend([f.id, f.id]);
    }
    samples
        .attach_mesh(&layout, vertices, triangles, &labels)
        .expect("cube mesh");
    (layout, samples)
}

/// Flat square `[-1, 1]^2` in the `z = 0` plane split into two quads along
/// `x = 0`, with a labeled mesh.
pub fn two_patch_flat(n: usize, seed: u64) -> (PatchLayout, LabeledSamples) {
    let pos = [
        [-1.0, -1.0, 0.0],
        [0.0, -1.0, 0.0],
        [1.0, -1.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [-1.0, 1.0, 0.0],
    ];
    let corners = (0..6)
        .map(|i| Corner {
            id: i as u32,
            position: pos[i],
        })
        .collect();
    let faces = vec![
        Face {
            id: 0,
            corners: vec![0, 1, 4, 5],
            holes: Vec::new(),
        },
        Face {
            id: 1,
            corners: vec![1, 2, 3, 4],
            holes: Vec::new(),
        },
    ];
    let layout = PatchLayout::new(corners, faces, Vec::new()).expect("two-patch layout");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<_> = (0..n)
        .map(|i| {
            let x: f64 = if i < 2 {
                0.5 * (2 * i) as f64 - 0.5
            } else {
                rng.gen_range(-1.0..1.0)
            };
            let y: f64 = rng.gen_range(-1.0..1.0);
            ([x, y, 0.0], [0.0, 0.0, 1.0], (x > 0.0) as u32)
        })
        .collect();
    let mut samples = LabeledSamples::from_records(&layout, &records).expect("both faces sampled");
    samples
        .attach_mesh(
            &layout,
            pos.to_vec(),
            vec![[0, 1, 4], [0, 4, 5], [1, 2, 3], [1, 3, 4]],
            &[0, 0, 1, 1],
        )
        .expect("flat mesh");
    (layout, samples)
}
