//! Optimization drivers: single-shape fitting, shape-space training by
//! auto-decoding, and test-time latent optimization.

pub mod adam;
pub mod checkpoint;
pub mod objective;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::complex::{build_domains, mvc_weights_grad, FeatureComplex, PolygonDomain};
use crate::diffnet::{broadcast_inputs, decoder, LatentCodebook, Mlp, MlpGrad, MlpTrace};
use crate::error::{NpsError, Result};
use crate::geom::{cross3, norm3, Vec2, Vec3};
use crate::kdtree::KdTree;
use crate::layout::{LabeledSamples, PatchLayout};
use crate::losses::{LossReport, LossWeights};
use crate::sampling::{classify_arcs, sample_domain};

pub use adam::{cosine_lr, fair_scale, Adam};
pub use checkpoint::{Checkpoint, Model};
pub use objective::{
    signs_from_votes, Batch, Evaluation, Forward, Objective, ObjectiveSettings, Pairing, Pairs,
    Stage,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub batch_points: usize,
    pub warmup_iters: usize,
    pub fair_decay_start: usize,
    pub fair_decay_iters: usize,
    pub fair_floor: f64,
    pub lr_init: f64,
    pub lr_final: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Feature dimension `D`.
    pub dim: usize,
    /// Linear layers `L` of the mapping network.
    pub layers: usize,
    /// Hidden width `N` of the mapping network.
    pub hidden: usize,
    pub feature_std: f64,
    /// Echoed into the checkpoint. Parallel work is order-preserving, so
    /// results never depend on the thread count.
    pub deterministic: bool,
    pub boundary_samples: usize,
    pub boundary_eps: f64,
    pub fair_samples: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            batch_points: 10000,
            warmup_iters: 100,
            fair_decay_start: 300,
            fair_decay_iters: 300,
            fair_floor: 0.01,
            lr_init: 1e-3,
            lr_final: 1e-5,
            seed: 0,
            weights: LossWeights::default(),
            dim: 128,
            layers: 12,
            hidden: 256,
            feature_std: 1.0,
            deterministic: false,
            boundary_samples: 128,
            boundary_eps: 1e-4,
            fair_samples: 16,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: String| Err(NpsError::Config(m));
        if self.warmup_iters > self.fair_decay_start {
            return bad(format!(
                "warmup_iters {} exceeds fair_decay_start {}",
                self.warmup_iters, self.fair_decay_start
            ));
        }
        if !(self.lr_final <= self.lr_init && self.lr_final > 0.0) {
            return bad("learning rates must satisfy 0 < lr_final <= lr_init".into());
        }
        if !(self.fair_floor > 0.0 && self.fair_floor <= 1.0) {
            return bad("fair_floor must lie in (0, 1]".into());
        }
        if self.dim < 2 || self.layers < 1 || self.hidden < 1 {
            return bad("network dimensions must be positive and dim >= 2".into());
        }
        if self.batch_points == 0 {
            return bad("batch_points must be positive".into());
        }
        if !(self.boundary_eps > 0.0 && self.feature_std > 0.0) {
            return bad("boundary_eps and feature_std must be positive".into());
        }
        Ok(())
    }

    fn settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            boundary_samples: self.boundary_samples,
            boundary_eps: self.boundary_eps,
            fair_samples: self.fair_samples,
        }
    }

    fn stage(&self, iteration: usize) -> Stage {
        Stage {
            warmup: iteration < self.warmup_iters,
            anchor: true,
            fair_scale: fair_scale(
                iteration,
                self.fair_decay_start,
                self.fair_decay_iters,
                self.fair_floor,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub epochs: usize,
    pub batch_shapes: usize,
    pub points_per_shape: usize,
    /// Optimizer steps per epoch; 0 means one pass over the collection.
    pub steps_per_epoch: usize,
    pub warmup_steps: usize,
    pub lr: f64,
    pub lr_late: f64,
    /// Trailing epochs that use `lr_late`.
    pub lr_drop_epochs: usize,
    /// Latent code dimension `C`.
    pub code_dim: usize,
    pub code_std: f64,
    pub decoder_hidden: usize,
    pub freeze_codes: bool,
    pub seed: u64,
    pub weights: LossWeights,
    pub dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub deterministic: bool,
    pub boundary_samples: usize,
    pub boundary_eps: f64,
    pub fair_samples: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            epochs: 100,
            batch_shapes: 24,
            points_per_shape: 5000,
            steps_per_epoch: 0,
            warmup_steps: 100,
            lr: 1e-3,
            lr_late: 5e-4,
            lr_drop_epochs: 20,
            code_dim: 64,
            code_std: 0.1,
            decoder_hidden: 256,
            freeze_codes: false,
            seed: 0,
            weights: LossWeights::default(),
            dim: 128,
            layers: 12,
            hidden: 256,
            deterministic: false,
            boundary_samples: 128,
            boundary_eps: 1e-4,
            fair_samples: 16,
        }
    }
}

impl SpaceConfig {
    pub fn validate(&self, shapes: usize) -> Result<()> {
        self.weights.validate()?;
        let bad = |m: String| Err(NpsError::Config(m));
        if self.batch_shapes == 0 || self.batch_shapes > shapes {
            return bad(format!(
                "batch_shapes {} must lie in 1..={shapes}",
                self.batch_shapes
            ));
        }
        if !(self.lr_late <= self.lr && self.lr_late > 0.0) {
            return bad("learning rates must satisfy 0 < lr_late <= lr".into());
        }
        if self.dim < 2 || self.layers < 1 || self.hidden < 1 {
            return bad("network dimensions must be positive and dim >= 2".into());
        }
        if self.code_dim == 0 || self.decoder_hidden == 0 || self.points_per_shape == 0 {
            return bad("code_dim, decoder_hidden and points_per_shape must be positive".into());
        }
        if !(self.boundary_eps > 0.0 && self.code_std > 0.0) {
            return bad("boundary_eps and code_std must be positive".into());
        }
        Ok(())
    }

    fn settings(&self) -> ObjectiveSettings {
        ObjectiveSettings {
            boundary_samples: self.boundary_samples,
            boundary_eps: self.boundary_eps,
            fair_samples: self.fair_samples,
        }
    }

    fn steps(&self, shapes: usize) -> usize {
        if self.steps_per_epoch > 0 {
            self.steps_per_epoch
        } else {
            shapes.div_ceil(self.batch_shapes)
        }
    }
}

/// The random and forward parts of one evaluation, before the loss.
struct Prepared {
    batch: Batch,
    fwd: Forward,
    pairs: Option<Pairs>,
}

fn prepare(
    obj: &Objective,
    mlp: &Mlp,
    z: &Array2<f64>,
    points: usize,
    weights: &LossWeights,
    stage: &Stage,
    signs: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<Prepared> {
    let batch = obj.sample(rng, points, weights, stage)?;
    let fwd = obj.forward(mlp, z, &batch);
    let needs_pairs = !stage.warmup && (weights.surface > 0.0 || weights.normal > 0.0);
    let pairs = if needs_pairs {
        Some(obj.pair(&batch, &fwd, signs, rng)?)
    } else {
        None
    };
    Ok(Prepared { batch, fwd, pairs })
}

fn finish(
    obj: &Objective,
    mlp: &Mlp,
    z: &Array2<f64>,
    prep: &Prepared,
    weights: &LossWeights,
    stage: &Stage,
    signs: &[f64],
) -> Result<Evaluation> {
    obj.evaluate(
        mlp,
        z,
        &prep.batch,
        &prep.fwd,
        prep.pairs.as_ref(),
        weights,
        stage,
        signs,
    )
}

fn non_finite_term(err: &NpsError) -> Option<String> {
    match err {
        NpsError::NonFinite(what) => Some(what.trim_start_matches("loss term ").to_string()),
        _ => None,
    }
}

fn check_layout(layout: &PatchLayout) -> Result<()> {
    let report = layout.validate();
    if !report.is_valid() {
        return Err(NpsError::InvalidLayout(report.to_string().trim_end().to_string()));
    }
    Ok(())
}

fn concat_params(mlp: &Mlp, rest: &[&Array2<f64>]) -> Vec<f64> {
    let mut flat = mlp.to_flat();
    for a in rest {
        flat.extend(a.iter());
    }
    flat
}

fn split_params(flat: &[f64], mlp: &mut Mlp, rest: &mut [&mut Array2<f64>]) {
    let n = mlp.num_params();
    mlp.load_flat(&flat[..n]);
    let mut at = n;
    for a in rest.iter_mut() {
        let len = a.len();
        for (dst, &src) in a.iter_mut().zip(&flat[at..at + len]) {
            *dst = src;
        }
        at += len;
    }
}

fn flat_grad(grad: &MlpGrad, rest: &[&Array2<f64>]) -> Vec<f64> {
    let mut flat = grad.to_flat();
    for a in rest {
        flat.extend(a.iter());
    }
    flat
}

/// Fits one shape. See [`fit_shape_with`] for per-iteration reports.
pub fn fit_shape(config: &FitConfig, layout: &PatchLayout, samples: &LabeledSamples) -> Result<Checkpoint> {
    fit_shape_with(config, layout, samples, |_| {})
}

/// Fits the vertex features and the mapping network to one labeled target.
///
/// `on_iteration` receives the report of every iteration, including a final
/// evaluation at `iteration == config.iterations` without a step.
pub fn fit_shape_with(
    config: &FitConfig,
    layout: &PatchLayout,
    samples: &LabeledSamples,
    mut on_iteration: impl FnMut(&LossReport),
) -> Result<Checkpoint> {
    config.validate()?;
    check_layout(layout)?;
    if samples.is_empty() {
        return Err(NpsError::Empty("target samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let domains = build_domains(layout)?;
    let mut mlp = Mlp::mapping(config.dim, config.layers, config.hidden, &mut rng);
    let mut z = FeatureComplex::random(layout, config.dim, config.feature_std, &mut rng)?.features;
    let smooth = classify_arcs(layout, samples);
    let faces = layout.num_faces();
    let obj = Objective::new(
        layout,
        domains,
        samples.clone(),
        smooth.clone(),
        samples.patch_areas(faces),
        Pairing::PerPatch,
        config.settings(),
    );
    let config_echo = serde_json::to_value(config).expect("config json");
    let snapshot = |mlp: &Mlp, z: &Array2<f64>, signs: &Vec<f64>, report| Checkpoint {
        mlp: mlp.clone(),
        model: Model::Single { features: z.clone() },
        layout: layout.clone(),
        orientation: signs.clone(),
        smooth: smooth.clone(),
        config: config_echo.clone(),
        seed: config.seed,
        report,
    };

    let signs = signs_from_votes(&obj.corner_votes());
    let mut params = concat_params(&mlp, &[&z]);
    let mut last_good = params.clone();
    let mut adam = Adam::new(params.len());
    let mut report = None;
    for it in 0..=config.iterations {
        let stage = config.stage(it);
        let lr = cosine_lr(it, config.iterations, config.lr_init, config.lr_final);
        let step = (|| {
            let prep = prepare(&obj, &mlp, &z, config.batch_points, &config.weights, &stage, &signs, &mut rng)?;
            finish(&obj, &mlp, &z, &prep, &config.weights, &stage, &signs)
        })();
        let eval = match step {
            Ok(e) => e,
            Err(e) => {
                if let Some(term) = non_finite_term(&e) {
                    let mut good_mlp = mlp.clone();
                    let mut good_z = z.clone();
                    split_params(&last_good, &mut good_mlp, &mut [&mut good_z]);
                    return Err(NpsError::Diverged {
                        iteration: it,
                        term,
                        last_good: Box::new(snapshot(&good_mlp, &good_z, &signs, report)),
                    });
                }
                return Err(e);
            }
        };
        let mut r = eval.report;
        r.iteration = it;
        r.lr = lr;
        on_iteration(&r);
        report = Some(r);
        if it == config.iterations {
            break;
        }
        last_good.copy_from_slice(&params);
        let grad = flat_grad(&eval.grad_mlp, &[&eval.grad_z]);
        adam.step(&mut params, &grad, lr);
        split_params(&params, &mut mlp, &mut [&mut z]);
    }
    Ok(snapshot(&mlp, &z, &signs, report))
}

/// Vertex features of one code through the decoder, with the trace needed
/// to push feature gradients back to the decoder and the code.
fn decode_traced(dec: &Mlp, code: ArrayView1<f64>, count: usize) -> MlpTrace {
    dec.forward_trace(broadcast_inputs(code, count), Vec::new())
}

/// Decoder gradient and code gradient from a feature-matrix gradient.
fn decode_backward(dec: &Mlp, trace: &MlpTrace, grad_z: Array2<f64>) -> (MlpGrad, Array1<f64>) {
    let (g, g_in, _) = dec.backward(trace, grad_z, Vec::new());
    let c = dec.input_dim() - 1;
    let g_code = g_in.slice(s![.., ..c]).sum_axis(ndarray::Axis(0));
    (g, g_code)
}

fn norm_grad(c: ArrayView1<f64>) -> Array1<f64> {
    let n = c.dot(&c).sqrt();
    if n > 0.0 {
        c.mapv(|v| v / n)
    } else {
        Array1::zeros(c.len())
    }
}

/// Layout with per-face boundary lengths averaged over the collection.
pub fn shared_layout(layouts: &[&PatchLayout]) -> Result<PatchLayout> {
    let first = layouts
        .first()
        .ok_or_else(|| NpsError::Empty("shape collection".into()))?;
    for (m, l) in layouts.iter().enumerate().skip(1) {
        if !l.same_topology(first) {
            return Err(NpsError::LayoutMismatch(format!("shape {m} differs from shape 0")));
        }
    }
    let mut shared = (*first).clone();
    for (f, lengths) in shared.boundary_lengths.iter_mut().enumerate() {
        for (j, len) in lengths.iter_mut().enumerate() {
            *len = layouts.iter().map(|l| l.boundary_lengths[f][j]).sum::<f64>()
                / layouts.len() as f64;
        }
    }
    Ok(shared)
}

/// Trains a shape space. See [`train_space_with`].
pub fn train_space(config: &SpaceConfig, shapes: &[(PatchLayout, LabeledSamples)]) -> Result<Checkpoint> {
    train_space_with(config, shapes, None, |_| {})
}

/// Jointly trains latent codes, the broadcast decoder and the mapping
/// network on a collection sharing one layout topology.
///
/// `initial_codes` replaces the random code initialization (one row per
/// shape); with `config.freeze_codes` they stay fixed.
pub fn train_space_with(
    config: &SpaceConfig,
    shapes: &[(PatchLayout, LabeledSamples)],
    initial_codes: Option<Array2<f64>>,
    mut on_step: impl FnMut(&LossReport),
) -> Result<Checkpoint> {
    if shapes.is_empty() {
        return Err(NpsError::Empty("shape collection".into()));
    }
    config.validate(shapes.len())?;
    for (layout, samples) in shapes {
        check_layout(layout)?;
        if samples.is_empty() {
            return Err(NpsError::Empty("target samples".into()));
        }
    }
    let layouts: Vec<&PatchLayout> = shapes.iter().map(|(l, _)| l).collect();
    let shared = shared_layout(&layouts)?;
    let domains = build_domains(&shared)?;
    let faces = shared.num_faces();
    let k = shared.num_corners();

    // an arc is smooth when most shapes say so
    let mut smooth_votes = vec![0i64; shared.arcs.len()];
    let objectives: Vec<Objective> = shapes
        .iter()
        .map(|(layout, samples)| {
            let smooth = classify_arcs(layout, samples);
            for (v, s) in smooth_votes.iter_mut().zip(&smooth) {
                *v += if *s { 1 } else { -1 };
            }
            Objective::new(
                layout,
                domains.clone(),
                samples.clone(),
                Vec::new(),
                samples.patch_areas(faces),
                Pairing::PerPatch,
                config.settings(),
            )
        })
        .collect();
    let smooth: Vec<bool> = smooth_votes.iter().map(|&v| v >= 0).collect();
    let objectives: Vec<Objective> = objectives
        .into_iter()
        .map(|mut o| {
            o.smooth = smooth.clone();
            o
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = Mlp::mapping(config.dim, config.layers, config.hidden, &mut rng);
    let mut dec = decoder(config.code_dim, config.decoder_hidden, config.dim, &mut rng);
    let mut codes = match initial_codes {
        Some(c) => {
            if c.dim() != (shapes.len(), config.code_dim) {
                return Err(NpsError::Dimension(format!(
                    "initial codes are {:?}, expected ({}, {})",
                    c.dim(),
                    shapes.len(),
                    config.code_dim
                )));
            }
            c
        }
        None => LatentCodebook::random(shapes.len(), config.code_dim, config.code_std, &mut rng)?.codes,
    };

    let mut votes = vec![0i64; faces];
    for obj in &objectives {
        for (v, w) in votes.iter_mut().zip(obj.corner_votes()) {
            *v += w;
        }
    }
    let signs = signs_from_votes(&votes);
    let mut params = concat_params(&mlp, &[]);
    params.extend(dec.to_flat());
    params.extend(codes.iter());
    let mut adam = Adam::new(params.len());
    let n_mlp = mlp.num_params();
    let n_dec = dec.num_params();
    let steps_per_epoch = config.steps(shapes.len());
    let mut order: Vec<usize> = (0..shapes.len()).collect();
    let mut cursor = order.len();
    let mut step = 0usize;
    let mut report = None;
    for epoch in 0..config.epochs {
        let lr = if epoch + config.lr_drop_epochs >= config.epochs {
            config.lr_late
        } else {
            config.lr
        };
        for _ in 0..steps_per_epoch {
            let stage = Stage {
                warmup: step < config.warmup_steps,
                anchor: true,
                fair_scale: 1.0,
            };
            let mut batch = Vec::with_capacity(config.batch_shapes);
            while batch.len() < config.batch_shapes {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }

            let mut prepared = Vec::with_capacity(batch.len());
            for &m in &batch {
                let trace = decode_traced(&dec, codes.row(m), k);
                let z = trace.output.clone();
                let prep = prepare(
                    &objectives[m],
                    &mlp,
                    &z,
                    config.points_per_shape,
                    &config.weights,
                    &stage,
                    &signs,
                    &mut rng,
                )?;
                prepared.push((m, trace, z, prep));
            }
            let s = &signs;

            let scale = 1.0 / batch.len() as f64;
            let mut g_mlp = MlpGrad::zeros_like(&mlp);
            let mut g_dec = MlpGrad::zeros_like(&dec);
            let mut g_codes = Array2::<f64>::zeros(codes.raw_dim());
            let mut mean = LossReport::default();
            for (m, trace, z, prep) in &prepared {
                let eval = finish(&objectives[*m], &mlp, z, prep, &config.weights, &stage, s)
                    .map_err(|e| match non_finite_term(&e) {
                        Some(term) => NpsError::NonFinite(format!("shape {m}: loss term {term}")),
                        None => e,
                    })?;
                g_mlp.add_scaled(&eval.grad_mlp, scale);
                let (gd, gc) = decode_backward(&dec, trace, eval.grad_z);
                g_dec.add_scaled(&gd, scale);
                g_codes.row_mut(*m).scaled_add(scale, &gc);
                accumulate(&mut mean, &eval.report, scale);
            }
            let mut reg = 0.0;
            let mut seen = vec![false; shapes.len()];
            for &m in &batch {
                if !std::mem::replace(&mut seen[m], true) {
                    let c = codes.row(m);
                    reg += c.dot(&c).sqrt();
                    let g = norm_grad(c);
                    g_codes.row_mut(m).scaled_add(config.weights.reg, &g);
                }
            }
            mean.reg = reg;
            mean.total += config.weights.reg * reg;
            mean.iteration = step;
            mean.lr = lr;
            if !mean.total.is_finite() {
                return Err(NpsError::NonFinite(format!("shape-space loss at step {step}")));
            }
            on_step(&mean);
            report = Some(mean);

            let mut grad = g_mlp.to_flat();
            grad.extend(g_dec.to_flat());
            if config.freeze_codes {
                grad.extend(std::iter::repeat(0.0).take(codes.len()));
            } else {
                grad.extend(g_codes.iter());
            }
            adam.step(&mut params, &grad, lr);
            mlp.load_flat(&params[..n_mlp]);
            dec.load_flat(&params[n_mlp..n_mlp + n_dec]);
            for (dst, &src) in codes.iter_mut().zip(&params[n_mlp + n_dec..]) {
                *dst = src;
            }
            step += 1;
        }
    }
    Ok(Checkpoint {
        mlp,
        model: Model::Space {
            decoder: dec,
            codes: LatentCodebook { codes },
        },
        layout: shared,
        orientation: signs,
        smooth,
        config: serde_json::to_value(config).expect("config json"),
        seed: config.seed,
        report,
    })
}

fn accumulate(into: &mut LossReport, r: &LossReport, s: f64) {
    into.anchor += s * r.anchor;
    into.surface += s * r.surface;
    into.normal += s * r.normal;
    into.smooth += s * r.smooth;
    into.fair += s * r.fair;
    into.uniform += s * r.uniform;
    into.aspect += s * r.aspect;
    into.fair_scale = r.fair_scale;
    into.total += s * r.total;
}

/// Complexes decoded along the straight line between two training codes,
/// at `t = k / (steps - 1)`.
pub fn interpolate_codes(ckpt: &Checkpoint, id_a: usize, id_b: usize, steps: usize) -> Result<Vec<FeatureComplex>> {
    let codes = ckpt.codes()?;
    let a = codes.code(id_a)?;
    let b = codes.code(id_b)?;
    (0..steps)
        .map(|i| {
            let t = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
            let c = if t == 0.0 {
                a.clone()
            } else if t == 1.0 {
                b.clone()
            } else {
                &a * (1.0 - t) + &b * t
            };
            ckpt.complex_for_code(c.view())
        })
        .collect()
}

/// Parameter samples of every face, `per_face[f]` of them on face `f`.
fn domain_samples(domains: &[PolygonDomain], per_face: &[usize], rng: &mut impl Rng) -> Vec<(usize, Vec2)> {
    let mut out = Vec::new();
    for (f, d) in domains.iter().enumerate() {
        out.extend(sample_domain(d, per_face[f], rng).into_iter().map(|u| (f, u)));
    }
    out
}

/// Interpolated feature rows for a set of interior parameter samples, as a
/// dense `samples x K` weight matrix.
fn weight_matrix(domains: &[PolygonDomain], samples: &[(usize, Vec2)], k: usize) -> Result<Array2<f64>> {
    let mut w = Array2::zeros((samples.len(), k));
    for (i, &(f, u)) in samples.iter().enumerate() {
        let mvc = mvc_weights_grad(&domains[f], u)?;
        for (j, &row) in domains[f].corners.iter().enumerate() {
            w[[i, row]] += mvc.weights[j];
        }
    }
    Ok(w)
}

/// Per-face surface area estimates from `per_face` random samples each:
/// domain area times the mean Jacobian area element.
pub fn estimate_patch_areas(complex: &FeatureComplex, mlp: &Mlp, per_face: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mut areas = Vec::with_capacity(complex.domains.len());
    for (f, d) in complex.domains.iter().enumerate() {
        let us = sample_domain(d, per_face, rng);
        let mut sum = 0.0;
        for &u in &us {
            let [ju, jv] = crate::diffnet::surface_jacobian(complex, mlp, f, u)?;
            sum += norm3(cross3(ju, jv));
        }
        areas.push(d.area() * sum / us.len().max(1) as f64);
    }
    Ok(areas)
}

/// Surface points spread over the faces in proportion to `areas`.
pub fn sample_surface(complex: &FeatureComplex, mlp: &Mlp, total: usize, areas: &[f64], rng: &mut impl Rng) -> Result<Vec<(usize, Vec2, Vec3)>> {
    let per_face = crate::sampling::allocate_per_face(total.max(areas.len()), areas);
    let samples = domain_samples(&complex.domains, &per_face, rng);
    let w = weight_matrix(&complex.domains, &samples, complex.num_vertices())?;
    let x = mlp.forward(w.dot(&complex.features).view());
    Ok(samples
        .into_iter()
        .enumerate()
        .map(|(i, (f, u))| (f, u, [x[[i, 0]], x[[i, 1]], x[[i, 2]]]))
        .collect())
}

/// A handle constraint: the centre of gravity of the listed faces should move to `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct HandleConstraint {
    pub faces: Vec<u32>,
    pub target: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentSettings {
    pub iterations: usize,
    pub lr: f64,
    /// Weight of the code norm penalty.
    pub reg: f64,
    pub points: usize,
    pub seed: u64,
}

impl Default for LatentSettings {
    fn default() -> Self {
        LatentSettings {
            iterations: 200,
            lr: 0.005,
            reg: 1e-3,
            points: 2000,
            seed: 0,
        }
    }
}

/// Moves a latent code so that face groups reach target centres of gravity.
///
/// The mapping network and decoder are untouched. Patch points are drawn
/// once and held fixed across iterations.
pub fn optimize_code_handles(
    ckpt: &Checkpoint,
    constraints: &[HandleConstraint],
    init: ArrayView1<f64>,
    settings: &LatentSettings,
) -> Result<Array1<f64>> {
    optimize_code_handles_with(ckpt, constraints, init, settings, |_, _| {})
}

/// As [`optimize_code_handles`], reporting `(iteration, loss)` before each step.
pub fn optimize_code_handles_with(
    ckpt: &Checkpoint,
    constraints: &[HandleConstraint],
    init: ArrayView1<f64>,
    settings: &LatentSettings,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Array1<f64>> {
    let dec = ckpt.decoder()?;
    let domains = build_domains(&ckpt.layout)?;
    let k = ckpt.num_vertices();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut groups = Vec::with_capacity(constraints.len());
    let mut samples = Vec::new();
    for c in constraints {
        let faces = c
            .faces
            .iter()
            .map(|&id| ckpt.layout.face_index(id).ok_or(NpsError::UnknownPatch(id)))
            .collect::<Result<Vec<_>>>()?;
        if faces.is_empty() {
            return Err(NpsError::Config("handle constraint without faces".into()));
        }
        let per = (settings.points / faces.len().max(1)).max(1);
        let start = samples.len();
        for &f in &faces {
            samples.extend(sample_domain(&domains[f], per, &mut rng).into_iter().map(|u| (f, u)));
        }
        groups.push((start, samples.len()));
    }
    let w = weight_matrix(&domains, &samples, k)?;

    let mut code = init.to_owned();
    let mut adam = Adam::new(code.len());
    for it in 0..settings.iterations {
        let trace = decode_traced(dec, code.view(), k);
        let zin = w.dot(&trace.output);
        let mtrace = ckpt.mlp.forward_trace(zin, Vec::new());
        let x = &mtrace.output;
        let mut g_x = Array2::zeros(x.raw_dim());
        let mut loss = 0.0;
        for (c, &(a, b)) in constraints.iter().zip(&groups) {
            let n = (b - a) as f64;
            let cog = x.slice(s![a..b, ..]).sum_axis(ndarray::Axis(0)) / n;
            let d = [cog[0] - c.target[0], cog[1] - c.target[1], cog[2] - c.target[2]];
            let len = norm3(d);
            loss += len;
            if len > 0.0 {
                for r in a..b {
                    for j in 0..3 {
                        g_x[[r, j]] = d[j] / (len * n);
                    }
                }
            }
        }
        loss += settings.reg * code.dot(&code).sqrt();
        if !loss.is_finite() {
            return Err(NpsError::NonFinite(format!("handle loss at iteration {it}")));
        }
        on_step(it, loss);
        let (_, g_zin, _) = ckpt.mlp.backward(&mtrace, g_x, Vec::new());
        let g_z = w.t().dot(&g_zin);
        let (_, mut g_code) = decode_backward(dec, &trace, g_z);
        g_code.scaled_add(settings.reg, &norm_grad(code.view()));
        adam.step(code.as_slice_mut().expect("contiguous"), g_code.as_slice().expect("contiguous"), settings.lr);
    }
    Ok(code)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSettings {
    pub latent: LatentSettings,
    /// Cloud points used to pick the starting code.
    pub chamfer_points: usize,
    pub min_cosine: f64,
}

impl Default for CloudSettings {
    fn default() -> Self {
        CloudSettings {
            latent: LatentSettings {
                iterations: 300,
                ..LatentSettings::default()
            },
            chamfer_points: 2048,
            min_cosine: 0.7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloudFit {
    pub code: Array1<f64>,
    /// Training shape whose code started the optimization.
    pub init_index: usize,
    pub init_chamfer: f64,
    pub report: Option<LossReport>,
}

/// Mean distance from the points to their nearest neighbours in `tree`.
fn one_sided_chamfer(points: &[Vec3], tree: &KdTree) -> f64 {
    let sum: f64 = points
        .iter()
        .map(|&p| tree.nearest(p).map_or(f64::INFINITY, |(_, d2)| d2.sqrt()))
        .sum();
    sum / points.len() as f64
}

/// Recovers a latent code from an unlabeled oriented point cloud.
///
/// Starts from the training code with the smallest one-sided chamfer
/// distance from the cloud, then minimizes the surface and normal terms
/// over label-free pairs whose normals agree, plus the code norm penalty.
pub fn fit_cloud(ckpt: &Checkpoint, cloud: &LabeledSamples, settings: &CloudSettings) -> Result<CloudFit> {
    fit_cloud_with(ckpt, cloud, settings, |_| {})
}

pub fn fit_cloud_with(
    ckpt: &Checkpoint,
    cloud: &LabeledSamples,
    settings: &CloudSettings,
    mut on_step: impl FnMut(&LossReport),
) -> Result<CloudFit> {
    if cloud.is_empty() {
        return Err(NpsError::Empty("point cloud".into()));
    }
    let dec = ckpt.decoder()?;
    let codes = ckpt.codes()?;
    let k = ckpt.num_vertices();
    let latent = &settings.latent;
    let mut rng = ChaCha8Rng::seed_from_u64(latent.seed);

    let probe: Vec<Vec3> = if cloud.len() > settings.chamfer_points {
        rand::seq::index::sample(&mut rng, cloud.len(), settings.chamfer_points)
            .into_iter()
            .map(|i| cloud.points[i])
            .collect()
    } else {
        cloud.points.clone()
    };
    let mut best = (0usize, f64::INFINITY, Vec::new());
    for m in 0..codes.len() {
        let complex = ckpt.complex_for_code(codes.codes.row(m))?;
        let areas = estimate_patch_areas(&complex, &ckpt.mlp, 16, &mut rng)?;
        let surface = sample_surface(&complex, &ckpt.mlp, settings.chamfer_points, &areas, &mut rng)?;
        let tree = KdTree::new(surface.iter().map(|s| s.2).collect());
        let d = one_sided_chamfer(&probe, &tree);
        if d < best.1 {
            best = (m, d, areas);
        }
    }
    let (init_index, init_chamfer, areas) = best;

    let weights = LossWeights {
        surface: 1.0,
        normal: 1.0,
        smooth: 0.0,
        fair: 0.0,
        uniform: 0.0,
        aspect: 0.0,
        reg: latent.reg,
        beta: LossWeights::default().beta,
    };
    let stage = Stage {
        warmup: false,
        anchor: false,
        fair_scale: 1.0,
    };
    let obj = Objective::new(
        &ckpt.layout,
        build_domains(&ckpt.layout)?,
        cloud.clone(),
        ckpt.smooth.clone(),
        areas,
        Pairing::Global {
            min_cosine: Some(settings.min_cosine),
        },
        ObjectiveSettings::default(),
    );
    let mut code = codes.codes.row(init_index).to_owned();
    let mut adam = Adam::new(code.len());
    let mut report = None;
    for it in 0..=latent.iterations {
        let trace = decode_traced(dec, code.view(), k);
        let z = trace.output.clone();
        let prep = prepare(&obj, &ckpt.mlp, &z, latent.points, &weights, &stage, &ckpt.orientation, &mut rng)?;
        let eval = finish(&obj, &ckpt.mlp, &z, &prep, &weights, &stage, &ckpt.orientation)?;
        let mut r = eval.report;
        let norm = code.dot(&code).sqrt();
        r.reg = norm;
        r.total += latent.reg * norm;
        r.iteration = it;
        r.lr = latent.lr;
        on_step(&r);
        report = Some(r);
        if it == latent.iterations {
            break;
        }
        let (_, mut g_code) = decode_backward(dec, &trace, eval.grad_z);
        g_code.scaled_add(latent.reg, &norm_grad(code.view()));
        adam.step(code.as_slice_mut().expect("contiguous"), g_code.as_slice().expect("contiguous"), latent.lr);
    }
    Ok(CloudFit {
        code,
        init_index,
        init_chamfer,
        report,
    })
}
