//! One evaluation of the reconstruction objective and its gradient.
//!
//! An evaluation runs in four steps so that tests can freeze the random
//! parts: [`Objective::sample`] draws parameter points, [`Objective::forward`]
//! pushes them through the complex and the mapping network,
//! [`Objective::pair`] builds closest-point correspondences, and
//! [`Objective::evaluate`] records the loss on a tape and returns the
//! gradients with respect to the network and the vertex features.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;

use crate::complex::{mvc_weights_grad, PolygonDomain};
use crate::diffnet::tape::{cross, normalize, Tape, Var};
use crate::diffnet::{Mlp, MlpGrad, MlpTrace};
use crate::error::Result;
use crate::geom::{cross3, dot3, Vec2, Vec3};
use crate::layout::{LabeledSamples, PatchLayout};
use crate::losses::{self, LossReport, LossWeights, Terms};
use crate::sampling::{
    allocate_per_face, boundary_pairs, pair_closest_indexed, sample_domain,
    TargetIndex,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSettings {
    /// Collocated boundary samples per shared arc.
    pub boundary_samples: usize,
    /// Inset distance of boundary samples in domain units.
    pub boundary_eps: f64,
    /// Ordered samples per arc for the fairness term.
    pub fair_samples: usize,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        ObjectiveSettings {
            boundary_samples: 128,
            boundary_eps: 1e-4,
            fair_samples: 16,
        }
    }
}

/// How surface samples are matched to target points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pairing {
    /// Only within the same patch label.
    PerPatch,
    /// Across the whole target, keeping pairs whose normals agree beyond
    /// the given cosine.
    Global { min_cosine: Option<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    /// Anchor and uniformity terms only.
    pub warmup: bool,
    pub anchor: bool,
    pub fair_scale: f64,
}

impl Stage {
    pub const WARMUP: Stage = Stage {
        warmup: true,
        anchor: true,
        fair_scale: 1.0,
    };
    pub const FULL: Stage = Stage {
        warmup: false,
        anchor: true,
        fair_scale: 1.0,
    };
}

/// Sparse interpolation recipe of one evaluation row: feature row, weight,
/// and the weight's derivatives along `u` and `v`.
type Recipe = Vec<(usize, f64, f64, f64)>;

/// Parameter points of one evaluation.
pub struct Batch {
    recipes: Vec<Recipe>,
    /// Face of every domain row, in row order starting at `domain_start`.
    domain_faces: Vec<usize>,
    /// Domain parameter of every domain row.
    pub domain_params: Vec<Vec2>,
    domain_start: usize,
    /// Row pairs straddling smooth arcs, with the faces of both rows.
    boundary: Vec<([usize; 2], [usize; 2])>,
    /// Ordered rows along every arc.
    fair: Vec<Vec<usize>>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.recipes.len()
    }

    pub fn domain_rows(&self) -> std::ops::Range<usize> {
        self.domain_start..self.domain_start + self.domain_faces.len()
    }

    pub fn domain_face(&self, row: usize) -> usize {
        self.domain_faces[row - self.domain_start]
    }
}

/// Network outputs and tangents for every row of a batch.
pub struct Forward {
    trace: MlpTrace,
}

impl Forward {
    pub fn x(&self, row: usize) -> Vec3 {
        let r = self.trace.output.row(row);
        [r[0], r[1], r[2]]
    }

    /// `(dx/du, dx/dv)` of a row.
    pub fn jacobian(&self, row: usize) -> [Vec3; 2] {
        let u = self.trace.output_tangents[0].row(row);
        let v = self.trace.output_tangents[1].row(row);
        [[u[0], u[1], u[2]], [v[0], v[1], v[2]]]
    }
}

/// Closest-point pairs, as (row, target sample) tuples.
pub struct Pairs {
    pub items: Vec<(usize, usize)>,
}

pub struct Evaluation {
    pub report: LossReport,
    pub grad_mlp: MlpGrad,
    /// Gradient with respect to the vertex feature matrix.
    pub grad_z: Array2<f64>,
}

/// Static data of one target shape.
pub struct Objective {
    layout: PatchLayout,
    pub domains: Vec<PolygonDomain>,
    pub smooth: Vec<bool>,
    target: LabeledSamples,
    index: TargetIndex,
    pairing: Pairing,
    areas: Vec<f64>,
    corner_targets: Vec<Vec3>,
    /// Per face, the feature rows at both ends of every edge.
    face_edges: Vec<Vec<(usize, usize)>>,
    pub settings: ObjectiveSettings,
}

impl Objective {
    /// `areas` sets the per-face share of every batch.
    pub fn new(
        layout: &PatchLayout,
        domains: Vec<PolygonDomain>,
        target: LabeledSamples,
        smooth: Vec<bool>,
        areas: Vec<f64>,
        pairing: Pairing,
        settings: ObjectiveSettings,
    ) -> Self {
        let labels = match pairing {
            Pairing::PerPatch => layout.num_faces(),
            Pairing::Global { .. } => 1,
        };
        let index = match pairing {
            Pairing::PerPatch => TargetIndex::from_samples(&target, labels),
            Pairing::Global { .. } => {
                TargetIndex::new(&target.points, &vec![0; target.len()], 1)
            }
        };
        let corner_targets = layout.corners.iter().map(|c| c.position).collect();
        let face_edges = (0..layout.num_faces())
            .map(|f| {
                let rows = layout.face_corner_indices(f);
                let n = rows.len();
                (0..n).map(|j| (rows[j], rows[(j + 1) % n])).collect()
            })
            .collect();
        Objective {
            layout: layout.clone(),
            domains,
            smooth,
            target,
            index,
            pairing,
            areas,
            corner_targets,
            face_edges,
            settings,
        }
    }

    pub fn num_faces(&self) -> usize {
        self.domains.len()
    }

    pub fn target(&self) -> &LabeledSamples {
        &self.target
    }

    pub fn allocation(&self, total: usize) -> Vec<usize> {
        allocate_per_face(total.max(self.num_faces()), &self.areas)
    }

    /// Orientation votes per face: the vector area of the anchored corner
    /// polygon against every target normal in the face's bucket.
    pub fn corner_votes(&self) -> Vec<i64> {
        (0..self.num_faces())
            .map(|f| {
                let rows = self.layout.face_corner_indices(f);
                let n = rows.len();
                let mut area = [0.0; 3];
                for j in 0..n {
                    let c = cross3(self.corner_targets[rows[j]], self.corner_targets[rows[(j + 1) % n]]);
                    for (a, c) in area.iter_mut().zip(c) {
                        *a += c;
                    }
                }
                self.target.buckets[f]
                    .iter()
                    .map(|&i| match dot3(area, self.target.normals[i]) {
                        d if d > 0.0 => 1,
                        d if d < 0.0 => -1,
                        _ => 0,
                    })
                    .sum()
            })
            .collect()
    }

    /// Draws the parameter points of one evaluation.
    pub fn sample(
        &self,
        rng: &mut impl Rng,
        points: usize,
        weights: &LossWeights,
        stage: &Stage,
    ) -> Result<Batch> {
        let k = self.corner_targets.len();
        let mut recipes: Vec<Recipe> = (0..k).map(|r| vec![(r, 1.0, 0.0, 0.0)]).collect();
        let domain_start = recipes.len();
        let mut domain_faces = Vec::with_capacity(points);
        let mut domain_params = Vec::with_capacity(points);
        for (f, &count) in self.allocation(points).iter().enumerate() {
            for u in sample_domain(&self.domains[f], count, rng) {
                recipes.push(self.interior_recipe(f, u)?);
                domain_faces.push(f);
                domain_params.push(u);
            }
        }

        let mut boundary = Vec::new();
        let mut fair = Vec::new();
        if !stage.warmup {
            if weights.smooth > 0.0 {
                let pairs = boundary_pairs(
                    &self.layout,
                    &self.domains,
                    &self.smooth,
                    self.settings.boundary_samples,
                    self.settings.boundary_eps,
                    rng,
                );
                for s in pairs.smooth() {
                    let r0 = recipes.len();
                    recipes.push(self.interior_recipe(s.faces[0], s.params[0])?);
                    recipes.push(self.interior_recipe(s.faces[1], s.params[1])?);
                    boundary.push(([r0, r0 + 1], s.faces));
                }
            }
            if weights.fair * stage.fair_scale > 0.0 && self.settings.fair_samples >= 3 {
                let m = self.settings.fair_samples;
                for arc in &self.layout.arcs {
                    let a = self.layout.corner_index(arc.a).expect("arc corner");
                    let b = self.layout.corner_index(arc.b).expect("arc corner");
                    let mut line = Vec::with_capacity(m);
                    for j in 0..m {
                        let t = j as f64 / (m - 1) as f64;
                        line.push(recipes.len());
                        recipes.push(vec![(a, 1.0 - t, 0.0, 0.0), (b, t, 0.0, 0.0)]);
                    }
                    fair.push(line);
                }
            }
        }
        Ok(Batch {
            recipes,
            domain_faces,
            domain_params,
            domain_start,
            boundary,
            fair,
        })
    }

    fn interior_recipe(&self, face: usize, u: Vec2) -> Result<Recipe> {
        let domain = &self.domains[face];
        let mvc = mvc_weights_grad(domain, u)?;
        Ok(domain
            .corners
            .iter()
            .enumerate()
            .map(|(j, &row)| (row, mvc.weights[j], mvc.gradients[j][0], mvc.gradients[j][1]))
            .collect())
    }

    /// Traced network pass over every row of the batch.
    pub fn forward(&self, mlp: &Mlp, z: &Array2<f64>, batch: &Batch) -> Forward {
        let rows = batch.rows();
        let d = z.ncols();
        let mut input = Array2::zeros((rows, d));
        let mut du = Array2::zeros((rows, d));
        let mut dv = Array2::zeros((rows, d));
        for (r, recipe) in batch.recipes.iter().enumerate() {
            for &(k, w, wu, wv) in recipe {
                let zk = z.row(k);
                input.row_mut(r).scaled_add(w, &zk);
                if wu != 0.0 || wv != 0.0 {
                    du.row_mut(r).scaled_add(wu, &zk);
                    dv.row_mut(r).scaled_add(wv, &zk);
                }
            }
        }
        Forward {
            trace: mlp.forward_trace(input, vec![du, dv]),
        }
    }

    /// Two-sided closest-point pairs between the domain rows and the target.
    ///
    /// Target-side queries are a random subset of each target bucket sized like
    /// the face's share of the batch. `signs` orients the computed normals
    /// for the global pairing filter.
    pub fn pair(
        &self,
        batch: &Batch,
        fwd: &Forward,
        signs: &[f64],
        rng: &mut impl Rng,
    ) -> Result<Pairs> {
        let rows = batch.domain_rows();
        let surface: Vec<Vec3> = rows.clone().map(|r| fwd.x(r)).collect();
        let labels: Vec<usize> = match self.pairing {
            Pairing::PerPatch => batch.domain_faces.clone(),
            Pairing::Global { .. } => vec![0; surface.len()],
        };
        let target_labels: Vec<usize> = match self.pairing {
            Pairing::PerPatch => self.target.patch.clone(),
            Pairing::Global { .. } => vec![0; self.target.len()],
        };
        let mut queries = Vec::new();
        match self.pairing {
            Pairing::PerPatch => {
                let mut per_face = vec![0usize; self.num_faces()];
                for &f in &batch.domain_faces {
                    per_face[f] += 1;
                }
                for (f, &want) in per_face.iter().enumerate() {
                    let bucket = &self.target.buckets[f];
                    take_subset(bucket, want, rng, &mut queries);
                }
            }
            Pairing::Global { .. } => {
                let all: Vec<usize> = (0..self.target.len()).collect();
                take_subset(&all, surface.len(), rng, &mut queries);
            }
        }
        let paired = pair_closest_indexed(
            &surface,
            &labels,
            &self.target.points,
            &target_labels,
            &self.index,
            &queries,
        )?;

        let mut items = Vec::with_capacity(paired.len());
        for p in &paired.pairs {
            let row = rows.start + p.surface;
            let face = batch.domain_face(row);
            let [ju, jv] = fwd.jacobian(row);
            let raw = cross3(ju, jv);
            let agree = dot3(raw, self.target.normals[p.target]);
            if let Pairing::Global {
                min_cosine: Some(min),
            } = self.pairing
            {
                let len = dot3(raw, raw).sqrt();
                if !(len > 0.0 && signs[face] * agree / len > min) {
                    continue;
                }
            }
            items.push((row, p.target));
        }
        Ok(Pairs { items })
    }

    /// Records the loss of one batch and differentiates it.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &self,
        mlp: &Mlp,
        z: &Array2<f64>,
        batch: &Batch,
        fwd: &Forward,
        pairs: Option<&Pairs>,
        weights: &LossWeights,
        stage: &Stage,
        signs: &[f64],
    ) -> Result<Evaluation> {
        let rows = batch.rows();
        let out = &fwd.trace.output;
        let tu = &fwd.trace.output_tangents[0];
        let tv = &fwd.trace.output_tangents[1];
        let tape = Tape::with_capacity(64 * rows);
        let mut xl: Vec<Option<[Var<'_>; 3]>> = vec![None; rows];
        let mut ul: Vec<Option<[Var<'_>; 3]>> = vec![None; rows];
        let mut vl: Vec<Option<[Var<'_>; 3]>> = vec![None; rows];
        let mut normals: Vec<Option<[Var<'_>; 3]>> = vec![None; rows];

        #[allow(clippy::too_many_arguments)]
        fn normal_at<'t>(
            tape: &'t Tape,
            cache: &mut [Option<[Var<'t>; 3]>],
            ul: &mut [Option<[Var<'t>; 3]>],
            vl: &mut [Option<[Var<'t>; 3]>],
            tu: &Array2<f64>,
            tv: &Array2<f64>,
            row: usize,
            sign: f64,
        ) -> [Var<'t>; 3] {
            if let Some(n) = cache[row] {
                return n;
            }
            let ju = leaf(tape, ul, tu, row);
            let jv = leaf(tape, vl, tv, row);
            let n = normalize(cross(ju, jv)).map(|c| c * sign);
            cache[row] = Some(n);
            n
        }

        fn leaf<'t>(
            tape: &'t Tape,
            slots: &mut [Option<[Var<'t>; 3]>],
            a: &Array2<f64>,
            row: usize,
        ) -> [Var<'t>; 3] {
            *slots[row].get_or_insert_with(|| tape.vars([a[[row, 0]], a[[row, 1]], a[[row, 2]]]))
        }

        let mut terms = Terms::default();
        if stage.anchor {
            let x: Vec<[Var<'_>; 3]> = (0..self.corner_targets.len())
                .map(|r| leaf(&tape, &mut xl, out, r))
                .collect();
            terms.anchor = Some(losses::anchor_loss(&tape, &x, &self.corner_targets));
        }
        if weights.uniform > 0.0 {
            let mut groups: Vec<Vec<(Var<'_>, Var<'_>)>> = vec![Vec::new(); self.num_faces()];
            for r in batch.domain_rows() {
                let ju = leaf(&tape, &mut ul, tu, r);
                let jv = leaf(&tape, &mut vl, tv, r);
                groups[batch.domain_face(r)].push((tape.dot(&ju, &ju), tape.dot(&jv, &jv)));
            }
            terms.uniform = Some(losses::uniform_loss(&tape, &groups));
        }
        let mut z_leaves: Vec<Vec<Var<'_>>> = Vec::new();
        if !stage.warmup {
            if let Some(pairs) = pairs {
                if weights.surface > 0.0 {
                    let x: Vec<[Var<'_>; 3]> = pairs
                        .items
                        .iter()
                        .map(|&(r, _)| leaf(&tape, &mut xl, out, r))
                        .collect();
                    let p: Vec<Vec3> =
                        pairs.items.iter().map(|&(_, t)| self.target.points[t]).collect();
                    let n: Vec<Vec3> =
                        pairs.items.iter().map(|&(_, t)| self.target.normals[t]).collect();
                    terms.surface = Some(losses::surface_loss(&tape, &x, &p, &n, weights.beta));
                }
                if weights.normal > 0.0 {
                    let computed: Vec<[Var<'_>; 3]> = pairs
                        .items
                        .iter()
                        .map(|&(r, _)| {
                            let f = batch.domain_face(r);
                            normal_at(&tape, &mut normals, &mut ul, &mut vl, tu, tv, r, signs[f])
                        })
                        .collect();
                    let target: Vec<Vec3> =
                        pairs.items.iter().map(|&(_, t)| self.target.normals[t]).collect();
                    terms.normal = Some(losses::normal_loss(&tape, &computed, &target));
                }
            }
            if weights.smooth > 0.0 {
                let mut a = Vec::with_capacity(batch.boundary.len());
                let mut b = Vec::with_capacity(batch.boundary.len());
                for &([r0, r1], [f0, f1]) in &batch.boundary {
                    a.push(normal_at(&tape, &mut normals, &mut ul, &mut vl, tu, tv, r0, signs[f0]));
                    b.push(normal_at(&tape, &mut normals, &mut ul, &mut vl, tu, tv, r1, signs[f1]));
                }
                terms.smooth = Some(losses::smooth_loss(&tape, &a, &b));
            }
            if !batch.fair.is_empty() {
                let lines: Vec<Vec<[Var<'_>; 3]>> = batch
                    .fair
                    .iter()
                    .map(|line| line.iter().map(|&r| leaf(&tape, &mut xl, out, r)).collect())
                    .collect();
                terms.fair = Some(losses::fair_loss(&tape, &lines));
            }
            if weights.aspect > 0.0 {
                z_leaves = z
                    .rows()
                    .into_iter()
                    .map(|row| row.iter().map(|&v| tape.var(v)).collect())
                    .collect();
                let faces: Vec<(Vec<Var<'_>>, Vec<f64>)> = self
                    .face_edges
                    .iter()
                    .enumerate()
                    .map(|(f, edges)| {
                        let lengths = edges
                            .iter()
                            .map(|&(a, b)| {
                                let diff: Vec<Var<'_>> = z_leaves[a]
                                    .iter()
                                    .zip(&z_leaves[b])
                                    .map(|(&p, &q)| p - q)
                                    .collect();
                                tape.norm(&diff)
                            })
                            .collect();
                        (lengths, self.layout.boundary_lengths[f].clone())
                    })
                    .collect();
                terms.aspect = Some(losses::aspect_loss(&tape, &faces));
            }
        }

        let effective = if stage.warmup {
            LossWeights {
                surface: 0.0,
                normal: 0.0,
                smooth: 0.0,
                fair: 0.0,
                aspect: 0.0,
                ..*weights
            }
        } else {
            *weights
        };
        let (total, report) = losses::total_loss(&tape, &effective, stage.fair_scale, &terms)?;
        let adj = tape.gradient(total)?;

        let collect = |slots: &[Option<[Var<'_>; 3]>]| {
            let mut g = Array2::zeros((rows, 3));
            for (r, s) in slots.iter().enumerate() {
                if let Some(v) = s {
                    for k in 0..3 {
                        g[[r, k]] = adj.get(v[k]);
                    }
                }
            }
            g
        };
        let g_out = collect(&xl);
        let g_u = collect(&ul);
        let g_v = collect(&vl);
        let (grad_mlp, g_in, g_tan) = mlp.backward(&fwd.trace, g_out, vec![g_u, g_v]);

        let mut grad_z = Array2::zeros(z.raw_dim());
        for (r, recipe) in batch.recipes.iter().enumerate() {
            for &(k, w, wu, wv) in recipe {
                let mut gk = grad_z.row_mut(k);
                gk.scaled_add(w, &g_in.row(r));
                if wu != 0.0 || wv != 0.0 {
                    gk.scaled_add(wu, &g_tan[0].row(r));
                    gk.scaled_add(wv, &g_tan[1].row(r));
                }
            }
        }
        for (k, row) in z_leaves.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                grad_z[[k, j]] += adj.get(*v);
            }
        }
        Ok(Evaluation {
            report,
            grad_mlp,
            grad_z,
        })
    }
}

/// Appends `want` distinct members of `pool` (all of them if it is smaller).
fn take_subset(pool: &[usize], want: usize, rng: &mut impl Rng, out: &mut Vec<usize>) {
    if want >= pool.len() {
        out.extend_from_slice(pool);
    } else {
        out.extend(index::sample(rng, pool.len(), want).into_iter().map(|i| pool[i]));
    }
}

/// Per-face signs from accumulated orientation votes; ties keep `+1`.
pub fn signs_from_votes(votes: &[i64]) -> Vec<f64> {
    votes.iter().map(|&v| if v < 0 { -1.0 } else { 1.0 }).collect()
}
