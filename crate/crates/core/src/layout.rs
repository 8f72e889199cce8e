//! Patch layouts and labeled target samples.
//!
//! A [`PatchLayout`] is the combinatorial skeleton of the target segmentation:
//! corner points, n-sided faces given as corner cycles, and the arcs between
//! consecutive corners. [`LabeledSamples`] carries the oriented points of the
//! target surface, each tagged with the face it belongs to.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NpsError, Result};
use crate::geom::{dist3, dot3, newell_normal, normalize3, scale3, sub3, Vec3};
use crate::obj;

#[derive(Clone, Debug, PartialEq)]
pub struct Corner {
    pub id: u32,
    pub position: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Face {
    pub id: u32,
    /// Ordered corner-id cycle.
    pub corners: Vec<u32>,
    /// Inner boundary cycles. Any entry makes the layout invalid.
    pub holes: Vec<Vec<u32>>,
}

/// An undirected arc between two corners, stored with `a <= b` by corner id.
#[derive(Clone, Debug, PartialEq)]
pub struct Arc {
    pub a: u32,
    pub b: u32,
    /// Indices (into `PatchLayout::faces`) of the faces using this arc.
    pub faces: Vec<usize>,
    /// Optional target curve from corner `a` to corner `b`.
    pub polyline: Option<Vec<Vec3>>,
    /// Per-arc smooth/sharp override.
    pub smooth: Option<bool>,
}

impl Arc {
    pub fn is_shared(&self) -> bool {
        self.faces.len() == 2
    }
}

#[derive(Clone, Debug)]
pub struct PatchLayout {
    pub corners: Vec<Corner>,
    pub faces: Vec<Face>,
    pub arcs: Vec<Arc>,
    /// Per face, per edge `corners[j] -> corners[j + 1]`, the target boundary length.
    pub boundary_lengths: Vec<Vec<f64>>,
    corner_lookup: BTreeMap<u32, usize>,
    face_lookup: BTreeMap<u32, usize>,
    /// Arc declarations as they appeared in the source, used for multi-edge detection.
    declared_arcs: Vec<(u32, u32)>,
}

impl PartialEq for PatchLayout {
    fn eq(&self, other: &Self) -> bool {
        self.corners == other.corners
            && self.faces == other.faces
            && self.arcs == other.arcs
            && self.boundary_lengths == other.boundary_lengths
    }
}

/// Explicit arc record as it appears in the layout file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArcSpec {
    pub from: u32,
    pub to: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub polyline: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smooth: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CornerRecord {
    id: u32,
    position: Vec3,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaceRecord {
    id: u32,
    corners: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    holes: Vec<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayoutFile {
    corners: Vec<CornerRecord>,
    faces: Vec<FaceRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    arcs: Vec<ArcSpec>,
}

#[inline]
fn arc_key(a: u32, b: u32) -> (u32, u32) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn polyline_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| dist3(w[0], w[1])).sum()
}

impl PatchLayout {
    /// Builds a layout, deriving arcs from the face cycles.
    ///
    /// Fails only on referential problems (duplicate ids, unknown corners);
    /// structural defects are left for [`PatchLayout::validate`].
    pub fn new(corners: Vec<Corner>, faces: Vec<Face>, arc_specs: Vec<ArcSpec>) -> Result<Self> {
        let mut corner_lookup = BTreeMap::new();
        for (i, c) in corners.iter().enumerate() {
            if corner_lookup.insert(c.id, i).is_some() {
                return Err(NpsError::Parse(format!("duplicate corner id {}", c.id)));
            }
            if !c.position.iter().all(|v| v.is_finite()) {
                return Err(NpsError::Parse(format!("corner {} has a non-finite position", c.id)));
            }
        }
        let mut face_lookup = BTreeMap::new();
        for (i, f) in faces.iter().enumerate() {
            if face_lookup.insert(f.id, i).is_some() {
                return Err(NpsError::Parse(format!("duplicate face id {}", f.id)));
            }
            for &c in f.corners.iter().chain(f.holes.iter().flatten()) {
                if !corner_lookup.contains_key(&c) {
                    return Err(NpsError::UnknownCorner { face: f.id, corner: c });
                }
            }
        }

        let mut arc_lookup: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        let mut arcs: Vec<Arc> = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            let n = f.corners.len();
            for j in 0..n {
                let (a, b) = arc_key(f.corners[j], f.corners[(j + 1) % n]);
                let idx = *arc_lookup.entry((a, b)).or_insert_with(|| {
                    arcs.push(Arc {
                        a,
                        b,
                        faces: Vec::new(),
                        polyline: None,
                        smooth: None,
                    });
                    arcs.len() - 1
                });
                arcs[idx].faces.push(fi);
            }
        }

        let mut declared_arcs = Vec::with_capacity(arc_specs.len());
        for spec in arc_specs {
            for c in [spec.from, spec.to] {
                if !corner_lookup.contains_key(&c) {
                    return Err(NpsError::UnknownCorner { face: u32::MAX, corner: c });
                }
            }
            let key = arc_key(spec.from, spec.to);
            declared_arcs.push(key);
            let idx = match arc_lookup.get(&key) {
                Some(&i) => i,
                None => {
                    arcs.push(Arc {
                        a: key.0,
                        b: key.1,
                        faces: Vec::new(),
                        polyline: None,
                        smooth: None,
                    });
                    arc_lookup.insert(key, arcs.len() - 1);
                    arcs.len() - 1
                }
            };
            if !spec.polyline.is_empty() {
                let mut poly = spec.polyline;
                // stored from corner `a` to corner `b`
                if spec.from != key.0 {
                    poly.reverse();
                }
                arcs[idx].polyline = Some(poly);
            }
            if spec.smooth.is_some() {
                arcs[idx].smooth = spec.smooth;
            }
        }

        let mut layout = PatchLayout {
            corners,
            faces,
            arcs,
            boundary_lengths: Vec::new(),
            corner_lookup,
            face_lookup,
            declared_arcs,
        };
        layout.recompute_lengths();
        Ok(layout)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: LayoutFile =
            serde_json::from_str(text).map_err(|e| NpsError::Parse(e.to_string()))?;
        let corners = file
            .corners
            .into_iter()
            .map(|c| Corner {
                id: c.id,
                position: c.position,
            })
            .collect();
        let faces = file
            .faces
            .into_iter()
            .map(|f| Face {
                id: f.id,
                corners: f.corners,
                holes: f.holes,
            })
            .collect();
        PatchLayout::new(corners, faces, file.arcs)
    }

    /// Serializes to the layout file format. Arcs are written only when they
    /// carry a polyline or a smooth/sharp override.
    pub fn to_json_string(&self) -> String {
        let file = LayoutFile {
            corners: self
                .corners
                .iter()
                .map(|c| CornerRecord {
                    id: c.id,
                    position: c.position,
                })
                .collect(),
            faces: self
                .faces
                .iter()
                .map(|f| FaceRecord {
                    id: f.id,
                    corners: f.corners.clone(),
                    holes: f.holes.clone(),
                })
                .collect(),
            arcs: self
                .arcs
                .iter()
                .filter(|a| a.polyline.is_some() || a.smooth.is_some())
                .map(|a| ArcSpec {
                    from: a.a,
                    to: a.b,
                    polyline: a.polyline.clone().unwrap_or_default(),
                    smooth: a.smooth,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("layout serialization")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| NpsError::io(path, e))
    }

    pub fn num_corners(&self) -> usize {
        self.corners.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn corner_index(&self, id: u32) -> Option<usize> {
        self.corner_lookup.get(&id).copied()
    }

    pub fn face_index(&self, id: u32) -> Option<usize> {
        self.face_lookup.get(&id).copied()
    }

    /// Row indices (into the corner list) of a face's cycle.
    pub fn face_corner_indices(&self, face: usize) -> Vec<usize> {
        self.faces[face]
            .corners
            .iter()
            .map(|id| self.corner_lookup[id])
            .collect()
    }

    pub fn arc_index(&self, a: u32, b: u32) -> Option<usize> {
        let key = arc_key(a, b);
        self.arcs.iter().position(|arc| (arc.a, arc.b) == key)
    }

    /// For every face, the arc index of each edge `j -> j + 1`.
    pub fn face_arcs(&self) -> Vec<Vec<usize>> {
        let lookup: BTreeMap<(u32, u32), usize> = self
            .arcs
            .iter()
            .enumerate()
            .map(|(i, a)| ((a.a, a.b), i))
            .collect();
        self.faces
            .iter()
            .map(|f| {
                let n = f.corners.len();
                (0..n)
                    .map(|j| lookup[&arc_key(f.corners[j], f.corners[(j + 1) % n])])
                    .collect()
            })
            .collect()
    }

    pub fn corner_position(&self, id: u32) -> Vec3 {
        self.corners[self.corner_lookup[&id]].position
    }

    /// Recomputes per-edge target boundary lengths from arc polylines, falling
    /// back to the corner chord.
    pub fn recompute_lengths(&mut self) {
        let lookup: BTreeMap<(u32, u32), usize> = self
            .arcs
            .iter()
            .enumerate()
            .map(|(i, a)| ((a.a, a.b), i))
            .collect();
        self.boundary_lengths = self
            .faces
            .iter()
            .map(|f| {
                let n = f.corners.len();
                (0..n)
                    .map(|j| {
                        let (a, b) = (f.corners[j], f.corners[(j + 1) % n]);
                        let arc = &self.arcs[lookup[&arc_key(a, b)]];
                        match &arc.polyline {
                            Some(poly) if poly.len() >= 2 => polyline_length(poly),
                            _ => dist3(
                                self.corners[self.corner_lookup[&a]].position,
                                self.corners[self.corner_lookup[&b]].position,
                            ),
                        }
                    })
                    .collect()
            })
            .collect();
    }

    /// Applies `x -> (x - center) * scale` to every corner and arc polyline.
    pub fn apply_similarity(&mut self, sim: &Similarity) {
        for c in &mut self.corners {
            c.position = sim.apply(c.position);
        }
        for arc in &mut self.arcs {
            if let Some(poly) = &mut arc.polyline {
                for p in poly.iter_mut() {
                    *p = sim.apply(*p);
                }
            }
        }
        self.recompute_lengths();
    }

    /// Reverses face cycles whose corner polygon faces away from the mean
    /// sample normal of the patch. The first corner stays in place.
    pub fn orient_faces(&mut self, samples: &LabeledSamples) {
        for fi in 0..self.faces.len() {
            let pts: Vec<Vec3> = self.faces[fi]
                .corners
                .iter()
                .map(|id| self.corner_position(*id))
                .collect();
            let poly_n = newell_normal(&pts);
            let mut mean_n = [0.0; 3];
            for &s in &samples.buckets[fi] {
                for k in 0..3 {
                    mean_n[k] += samples.normals[s][k];
                }
            }
            if dot3(poly_n, mean_n) < 0.0 {
                let cyc = &mut self.faces[fi].corners;
                cyc[1..].reverse();
            }
        }
        self.recompute_lengths();
    }

    /// Lists every structural defect. An empty report means the layout is usable.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for f in &self.faces {
            let n = f.corners.len();
            let mut distinct = f.corners.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 3 {
                violations.push(Violation::TooFewCorners {
                    face: f.id,
                    count: distinct.len(),
                });
            }
            for j in 0..n {
                if f.corners[j] == f.corners[(j + 1) % n] {
                    violations.push(Violation::SelfLoop {
                        face: f.id,
                        corner: f.corners[j],
                    });
                }
            }
            // repeated corners after collapsing consecutive runs (those are self-loops)
            let collapsed: Vec<u32> = (0..n)
                .filter(|&j| n == 1 || f.corners[j] != f.corners[(j + n - 1) % n])
                .map(|j| f.corners[j])
                .collect();
            let mut seen = BTreeMap::new();
            for &c in &collapsed {
                *seen.entry(c).or_insert(0usize) += 1;
            }
            for (c, count) in seen {
                if count >= 2 {
                    violations.push(Violation::DuplicateCorner { face: f.id, corner: c });
                }
            }
            if !f.holes.is_empty() {
                violations.push(Violation::PatchWithHole { face: f.id });
            }
        }

        let mut declared: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for &key in &self.declared_arcs {
            *declared.entry(key).or_insert(0) += 1;
        }
        for ((a, b), count) in declared {
            if count > 1 {
                violations.push(Violation::MultiEdge { a, b, count });
            }
        }

        for arc in &self.arcs {
            if arc.a == arc.b {
                // already reported per face as a self-loop
                continue;
            }
            if arc.faces.len() > 2 {
                violations.push(Violation::ArcOverShared {
                    a: arc.a,
                    b: arc.b,
                    faces: arc.faces.len(),
                });
            }
            if arc.faces.is_empty() {
                violations.push(Violation::UnusedArc { a: arc.a, b: arc.b });
            }
        }

        for (fi, lengths) in self.boundary_lengths.iter().enumerate() {
            for (j, &l) in lengths.iter().enumerate() {
                let f = &self.faces[fi];
                let n = f.corners.len();
                if f.corners[j] != f.corners[(j + 1) % n] && !(l > 0.0) {
                    violations.push(Violation::ZeroLengthEdge { face: f.id, edge: j });
                }
            }
        }
        ValidationReport { violations }
    }

    /// True when `other` has the same corner ids and face cycles.
    pub fn same_topology(&self, other: &PatchLayout) -> bool {
        self.corners.len() == other.corners.len()
            && self
                .corners
                .iter()
                .zip(&other.corners)
                .all(|(a, b)| a.id == b.id)
            && self.faces.len() == other.faces.len()
            && self
                .faces
                .iter()
                .zip(&other.faces)
                .all(|(a, b)| a.id == b.id && a.corners == b.corners)
    }
}

pub fn load_layout(path: impl AsRef<Path>) -> Result<PatchLayout> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| NpsError::io(path, e))?;
    PatchLayout::from_json_str(&text)
}

pub fn validate_layout(layout: &PatchLayout) -> ValidationReport {
    layout.validate()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    SelfLoop { face: u32, corner: u32 },
    DuplicateCorner { face: u32, corner: u32 },
    MultiEdge { a: u32, b: u32, count: usize },
    TooFewCorners { face: u32, count: usize },
    ArcOverShared { a: u32, b: u32, faces: usize },
    PatchWithHole { face: u32 },
    UnusedArc { a: u32, b: u32 },
    ZeroLengthEdge { face: u32, edge: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { face, corner } => {
                write!(f, "face {face}: self-loop at corner {corner}")
            }
            Violation::DuplicateCorner { face, corner } => {
                write!(f, "face {face}: duplicate corner {corner} in cycle")
            }
            Violation::MultiEdge { a, b, count } => {
                write!(f, "multi-edge: {count} arcs between corners {a} and {b}")
            }
            Violation::TooFewCorners { face, count } => {
                write!(f, "face {face}: only {count} distinct corners")
            }
            Violation::ArcOverShared { a, b, faces } => {
                write!(f, "arc ({a},{b}) shared by {faces} faces")
            }
            Violation::PatchWithHole { face } => write!(f, "face {face}: patch with holes"),
            Violation::UnusedArc { a, b } => write!(f, "arc ({a},{b}) belongs to no face"),
            Violation::ZeroLengthEdge { face, edge } => {
                write!(f, "face {face}: zero-length boundary edge {edge}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "layout valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `x -> (x - center) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub center: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        center: [0.0; 3],
        scale: 1.0,
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        scale3(sub3(p, self.center), self.scale)
    }
}

/// Target triangle mesh with a patch label per triangle.
#[derive(Clone, Debug, Default)]
pub struct LabeledMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    /// Face index (into the layout) per triangle.
    pub patch: Vec<usize>,
}

impl LabeledMesh {
    pub fn triangle_normal(&self, t: usize) -> Option<Vec3> {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        normalize3(crate::geom::cross3(sub3(b, a), sub3(c, a)))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        crate::geom::triangle_area3(self.vertices[a], self.vertices[b], self.vertices[c])
    }
}

#[derive(Clone, Debug)]
pub struct LabeledSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Face index (into the layout) per sample.
    pub patch: Vec<usize>,
    /// Sample indices per face.
    pub buckets: Vec<Vec<usize>>,
    pub mesh: Option<LabeledMesh>,
}

impl LabeledSamples {
    /// Builds samples from `(position, normal, patch_id)` records. Normals are
    /// re-normalized; patch ids must name layout faces and every face needs a sample.
    pub fn from_records(layout: &PatchLayout, records: &[(Vec3, Vec3, u32)]) -> Result<Self> {
        let mut points = Vec::with_capacity(records.len());
        let mut normals = Vec::with_capacity(records.len());
        let mut patch = Vec::with_capacity(records.len());
        let mut buckets = vec![Vec::new(); layout.num_faces()];
        for (i, &(p, n, id)) in records.iter().enumerate() {
            if !p.iter().chain(n.iter()).all(|v| v.is_finite()) {
                return Err(NpsError::NonFinite(format!("sample {i}")));
            }
            let fi = layout.face_index(id).ok_or(NpsError::UnknownPatch(id))?;
            let n = normalize3(n).ok_or(NpsError::DegenerateNormal(i))?;
            points.push(p);
            normals.push(n);
            patch.push(fi);
            buckets[fi].push(i);
        }
        for (fi, b) in buckets.iter().enumerate() {
            if b.is_empty() {
                return Err(NpsError::EmptyPatch(layout.faces[fi].id));
            }
        }
        Ok(LabeledSamples {
            points,
            normals,
            patch,
            buckets,
            mesh: None,
        })
    }

    /// Label-free samples (for point-cloud fitting); every point lands in bucket 0.
    pub fn unlabeled(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(NpsError::Empty("point cloud".into()));
        }
        let mut unit = Vec::with_capacity(normals.len());
        for (i, n) in normals.into_iter().enumerate() {
            unit.push(normalize3(n).ok_or(NpsError::DegenerateNormal(i))?);
        }
        let n = points.len();
        Ok(LabeledSamples {
            points,
            normals: unit,
            patch: vec![0; n],
            buckets: vec![(0..n).collect()],
            mesh: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Transform that centers the sample centroid at the origin and scales
    /// the maximal axis extent to 2.
    pub fn normalization(&self) -> Similarity {
        let n = self.points.len() as f64;
        let mut center = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                center[k] += p[k];
            }
        }
        for c in &mut center {
            *c /= n;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let scale = if extent > 0.0 { 2.0 / extent } else { 1.0 };
        Similarity { center, scale }
    }

    pub fn apply_similarity(&mut self, sim: &Similarity) {
        for p in &mut self.points {
            *p = sim.apply(*p);
        }
        if let Some(mesh) = &mut self.mesh {
            for v in &mut mesh.vertices {
                *v = sim.apply(*v);
            }
        }
    }

    /// Per-face area estimates: summed mesh triangle areas when a mesh is
    /// attached, otherwise the bucket sizes.
    pub fn patch_areas(&self, num_faces: usize) -> Vec<f64> {
        match &self.mesh {
            Some(mesh) => {
                let mut areas = vec![0.0; num_faces];
                for t in 0..mesh.triangles.len() {
                    areas[mesh.patch[t]] += mesh.triangle_area(t);
                }
                areas
            }
            None => {
                let mut areas: Vec<f64> = self.buckets.iter().map(|b| b.len() as f64).collect();
                areas.resize(num_faces, 0.0);
                areas
            }
        }
    }

    /// Attaches a labeled mesh given per-triangle patch ids.
    pub fn attach_mesh(
        &mut self,
        layout: &PatchLayout,
        vertices: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        patch_ids: &[u32],
    ) -> Result<()> {
        if patch_ids.len() != triangles.len() {
            return Err(NpsError::Parse(format!(
                "{} patch labels for {} mesh faces",
                patch_ids.len(),
                triangles.len()
            )));
        }
        let patch = patch_ids
            .iter()
            .map(|&id| layout.face_index(id).ok_or(NpsError::UnknownPatch(id)))
            .collect::<Result<Vec<_>>>()?;
        self.mesh = Some(LabeledMesh {
            vertices,
            triangles,
            patch,
        });
        Ok(())
    }

    pub fn to_text(&self, layout: &PatchLayout) -> String {
        let mut out = String::with_capacity(self.points.len() * 64);
        for i in 0..self.points.len() {
            let p = self.points[i];
            let n = self.normals[i];
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                p[0], p[1], p[2], n[0], n[1], n[2], layout.faces[self.patch[i]].id
            ));
        }
        out
    }

    pub fn write(&self, layout: &PatchLayout, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text(layout)).map_err(|e| NpsError::io(path, e))
    }
}

/// Parses `x y z nx ny nz patch_id` records. Blank lines and `#` comments are skipped.
pub fn parse_sample_records(text: &str) -> Result<Vec<(Vec3, Vec3, u32)>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(NpsError::Parse(format!(
                "line {}: expected 7 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut v = [0.0; 6];
        for k in 0..6 {
            v[k] = fields[k]
                .parse()
                .map_err(|_| NpsError::Parse(format!("line {}: bad number", lineno + 1)))?;
        }
        let id: u32 = fields[6]
            .parse()
            .map_err(|_| NpsError::Parse(format!("line {}: bad patch id", lineno + 1)))?;
        records.push(([v[0], v[1], v[2]], [v[3], v[4], v[5]], id));
    }
    Ok(records)
}

/// Parses `x y z nx ny nz [patch_id]` records, dropping any label.
pub fn parse_cloud_records(text: &str) -> Result<Vec<(Vec3, Vec3)>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 && fields.len() != 7 {
            return Err(NpsError::Parse(format!(
                "line {}: expected 6 or 7 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let mut v = [0.0; 6];
        for k in 0..6 {
            v[k] = fields[k]
                .parse()
                .map_err(|_| NpsError::Parse(format!("line {}: bad number", lineno + 1)))?;
        }
        records.push(([v[0], v[1], v[2]], [v[3], v[4], v[5]]));
    }
    Ok(records)
}

/// Loads an oriented point cloud; patch labels, if present, are ignored.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<LabeledSamples> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| NpsError::io(path, e))?;
    let (points, normals) = parse_cloud_records(&text)?.into_iter().unzip();
    LabeledSamples::unlabeled(points, normals)
}

/// Loads labeled samples without normalizing them.
pub fn load_samples_raw(path: impl AsRef<Path>, layout: &PatchLayout) -> Result<LabeledSamples> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| NpsError::io(path, e))?;
    LabeledSamples::from_records(layout, &parse_sample_records(&text)?)
}

/// Loads labeled samples, moves shape and layout into the normalized frame
/// (centroid at the origin, maximal extent 2) and orients the face cycles
/// against the sample normals.
pub fn load_samples(path: impl AsRef<Path>, layout: &mut PatchLayout) -> Result<LabeledSamples> {
    let mut samples = load_samples_raw(path, layout)?;
    prepare_target(layout, &mut samples);
    Ok(samples)
}

/// Normalization plus face orientation, for in-memory targets.
pub fn prepare_target(layout: &mut PatchLayout, samples: &mut LabeledSamples) -> Similarity {
    let sim = samples.normalization();
    samples.apply_similarity(&sim);
    layout.apply_similarity(&sim);
    layout.orient_faces(samples);
    sim
}

/// Reads an OBJ mesh plus a sidecar with one patch id per face line.
pub fn load_labeled_mesh(
    obj_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(Vec<Vec3>, Vec<[usize; 3]>, Vec<u32>)> {
    let obj_path = obj_path.as_ref();
    let labels_path = labels_path.as_ref();
    let text = fs::read_to_string(obj_path).map_err(|e| NpsError::io(obj_path, e))?;
    let parsed = obj::parse_obj(&text)?;
    let label_text = fs::read_to_string(labels_path).map_err(|e| NpsError::io(labels_path, e))?;
    let face_labels: Vec<u32> = label_text
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| NpsError::Parse(format!("bad patch id {s:?}"))))
        .collect::<Result<_>>()?;
    if face_labels.len() != parsed.polygon_count {
        return Err(NpsError::Parse(format!(
            "{} labels for {} OBJ faces",
            face_labels.len(),
            parsed.polygon_count
        )));
    }
    let labels = parsed
        .triangle_source
        .iter()
        .map(|&poly| face_labels[poly])
        .collect();
    Ok((parsed.vertices, parsed.triangles, labels))
}
