//! Loss terms recorded on the scalar tape.
//!
//! Every term is a plain sum over its samples. Inputs that depend on the
//! parameters are tape variables; targets are plain numbers.

use serde::{Deserialize, Serialize};

use crate::diffnet::tape::{sub3, Tape, Var};
use crate::error::{NpsError, Result};
use crate::geom::Vec3;

/// Edge length used in place of a vanishing feature-space edge.
pub const MIN_EDGE_LENGTH: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub surface: f64,
    pub normal: f64,
    pub smooth: f64,
    pub fair: f64,
    pub uniform: f64,
    pub aspect: f64,
    pub reg: f64,
    /// Weight of the point-to-plane part of the surface term.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            surface: 1.0,
            normal: 0.1,
            smooth: 0.05,
            fair: 0.1,
            uniform: 0.05,
            aspect: 0.01,
            reg: 1e-4,
            beta: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("surface", self.surface),
            ("normal", self.normal),
            ("smooth", self.smooth),
            ("fair", self.fair),
            ("uniform", self.uniform),
            ("aspect", self.aspect),
            ("reg", self.reg),
            ("beta", self.beta),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(NpsError::Config(format!("weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Per-term values of one evaluation and their weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub lr: f64,
    pub anchor: f64,
    pub surface: f64,
    pub normal: f64,
    pub smooth: f64,
    pub fair: f64,
    pub uniform: f64,
    pub aspect: f64,
    pub reg: f64,
    /// Multiplier applied to the fairness weight at this iteration.
    pub fair_scale: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("anchor", self.anchor),
            ("surface", self.surface),
            ("normal", self.normal),
            ("smooth", self.smooth),
            ("fair", self.fair),
            ("uniform", self.uniform),
            ("aspect", self.aspect),
            ("reg", self.reg),
        ]
    }

    /// Weighted sum; the anchor term carries no weight.
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.anchor
            + w.surface * self.surface
            + w.normal * self.normal
            + w.smooth * self.smooth
            + w.fair * self.fair_scale * self.fair
            + w.uniform * self.uniform
            + w.aspect * self.aspect
            + w.reg * self.reg
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
            .or((!self.total.is_finite()).then_some("total"))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serialization")
    }
}

/// Tape handles of the individual terms, any of which may be absent.
#[derive(Clone, Copy, Default)]
pub struct Terms<'t> {
    pub anchor: Option<Var<'t>>,
    pub surface: Option<Var<'t>>,
    pub normal: Option<Var<'t>>,
    pub smooth: Option<Var<'t>>,
    pub fair: Option<Var<'t>>,
    pub uniform: Option<Var<'t>>,
    pub aspect: Option<Var<'t>>,
    pub reg: Option<Var<'t>>,
}

/// Weighted sum of the present terms. Fails on the first non-finite term.
pub fn total_loss<'t>(
    tape: &'t Tape,
    w: &LossWeights,
    fair_scale: f64,
    terms: &Terms<'t>,
) -> Result<(Var<'t>, LossReport)> {
    let value = |v: Option<Var<'t>>| v.map_or(0.0, |v| v.value());
    let report = LossReport {
        anchor: value(terms.anchor),
        surface: value(terms.surface),
        normal: value(terms.normal),
        smooth: value(terms.smooth),
        fair: value(terms.fair),
        uniform: value(terms.uniform),
        aspect: value(terms.aspect),
        reg: value(terms.reg),
        fair_scale,
        ..Default::default()
    };
    if let Some(name) = report.first_non_finite() {
        return Err(NpsError::NonFinite(format!("loss term {name}")));
    }
    let weighted = [
        (terms.anchor, 1.0),
        (terms.surface, w.surface),
        (terms.normal, w.normal),
        (terms.smooth, w.smooth),
        (terms.fair, w.fair * fair_scale),
        (terms.uniform, w.uniform),
        (terms.aspect, w.aspect),
        (terms.reg, w.reg),
    ];
    let parts: Vec<Var<'t>> = weighted
        .iter()
        .filter_map(|&(v, lambda)| v.filter(|_| lambda != 0.0).map(|v| v * lambda))
        .collect();
    let total = tape.sum(&parts);
    let report = LossReport {
        total: total.value(),
        ..report
    };
    Ok((total, report))
}

fn offset<'t>(x: [Var<'t>; 3], p: Vec3) -> [Var<'t>; 3] {
    [x[0] - p[0], x[1] - p[1], x[2] - p[2]]
}

/// `sum_k |x_k - p_k|`.
pub fn anchor_loss<'t>(tape: &'t Tape, x: &[[Var<'t>; 3]], p: &[Vec3]) -> Var<'t> {
    let parts: Vec<Var<'t>> = x
        .iter()
        .zip(p)
        .map(|(&x, &p)| tape.norm(&offset(x, p)))
        .collect();
    tape.sum(&parts)
}

/// `sum_j |x_j - p_j| + beta |n_j . (x_j - p_j)|`.
pub fn surface_loss<'t>(
    tape: &'t Tape,
    x: &[[Var<'t>; 3]],
    p: &[Vec3],
    n: &[Vec3],
    beta: f64,
) -> Var<'t> {
    let mut parts = Vec::with_capacity(2 * x.len());
    for ((&x, &p), &n) in x.iter().zip(p).zip(n) {
        let d = offset(x, p);
        parts.push(tape.norm(&d));
        if beta != 0.0 {
            let along = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
            parts.push(along.abs() * beta);
        }
    }
    tape.sum(&parts)
}

/// `sum_j (1 - n_j . n(x_j))` for unit normals.
pub fn normal_loss<'t>(tape: &'t Tape, computed: &[[Var<'t>; 3]], target: &[Vec3]) -> Var<'t> {
    let parts: Vec<Var<'t>> = computed
        .iter()
        .zip(target)
        .map(|(&c, &t)| 1.0 - (c[0] * t[0] + c[1] * t[1] + c[2] * t[2]))
        .collect();
    tape.sum(&parts)
}

/// `sum_b |n_a(b) - n_b(b)|` over the smooth boundary samples.
pub fn smooth_loss<'t>(tape: &'t Tape, side_a: &[[Var<'t>; 3]], side_b: &[[Var<'t>; 3]]) -> Var<'t> {
    let parts: Vec<Var<'t>> = side_a
        .iter()
        .zip(side_b)
        .map(|(&a, &b)| tape.norm(&sub3(a, b)))
        .collect();
    tape.sum(&parts)
}

/// Curve Laplacian `sum_e sum_j |x_j - (x_{j+1} + x_{j-1}) / 2|` over the
/// interior samples of every ordered polyline.
pub fn fair_loss<'t>(tape: &'t Tape, polylines: &[Vec<[Var<'t>; 3]>]) -> Var<'t> {
    let mut parts = Vec::new();
    for line in polylines {
        for w in line.windows(3) {
            let lap = [0, 1, 2].map(|k| w[1][k] - (w[0][k] + w[2][k]) * 0.5);
            parts.push(tape.norm(&lap));
        }
    }
    tape.sum(&parts)
}

/// `sum_j |E_j - mean(E)| + |G_j - mean(G)|` with the means taken per face.
/// Each group holds the `(E, G)` pairs of one face.
pub fn uniform_loss<'t>(tape: &'t Tape, groups: &[Vec<(Var<'t>, Var<'t>)>]) -> Var<'t> {
    let mut parts = Vec::new();
    for g in groups {
        if g.is_empty() {
            continue;
        }
        let inv = 1.0 / g.len() as f64;
        let es: Vec<Var<'t>> = g.iter().map(|p| p.0).collect();
        let gs: Vec<Var<'t>> = g.iter().map(|p| p.1).collect();
        let e_mean = tape.sum(&es) * inv;
        let g_mean = tape.sum(&gs) * inv;
        for &(e, gv) in g {
            parts.push((e - e_mean).abs());
            parts.push((gv - g_mean).abs());
        }
    }
    tape.sum(&parts)
}

/// Per face `sqrt(max(0, 1 - d_hat(C) . d_hat(M)))`, summed, where `d` are
/// boundary-length fraction vectors and the hat denotes L2 normalization.
/// Each entry pairs the feature-space edge lengths of a face with its target
/// boundary lengths.
pub fn aspect_loss<'t>(tape: &'t Tape, faces: &[(Vec<Var<'t>>, Vec<f64>)]) -> Var<'t> {
    let mut parts = Vec::with_capacity(faces.len());
    for (lengths, target) in faces {
        let lengths: Vec<Var<'t>> = lengths
            .iter()
            .map(|&l| {
                if l.value() < MIN_EDGE_LENGTH {
                    tape.constant(MIN_EDGE_LENGTH)
                } else {
                    l
                }
            })
            .collect();
        // L2 normalization cancels the fraction denominator
        let norm_c = tape.norm(&lengths);
        let norm_m = target.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dots: Vec<Var<'t>> = lengths
            .iter()
            .zip(target)
            .map(|(&l, &t)| l * (t / norm_m))
            .collect();
        let cosine = tape.sum(&dots) / norm_c;
        let gap = 1.0 - cosine;
        parts.push(if gap.value() > 0.0 {
            gap.sqrt()
        } else {
            tape.constant(0.0)
        });
    }
    tape.sum(&parts)
}

/// `sum_m |c_m|`.
pub fn code_regularizer<'t>(tape: &'t Tape, codes: &[Vec<Var<'t>>]) -> Var<'t> {
    let parts: Vec<Var<'t>> = codes.iter().map(|c| tape.norm(c)).collect();
    tape.sum(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pts<'t>(t: &'t Tape, v: &[Vec3]) -> Vec<[Var<'t>; 3]> {
        v.iter().map(|&p| t.vars(p)).collect()
    }

    #[test]
    fn anchor_examples() {
        let t = Tape::new();
        let p = [[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
        assert_eq!(anchor_loss(&t, &pts(&t, &p), &p).value(), 0.0);
        assert_eq!(anchor_loss(&t, &pts(&t, &[[3.0, 4.0, 0.0]]), &[[0.0; 3]]).value(), 5.0);
        let x = pts(&t, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(anchor_loss(&t, &x, &[[0.0; 3], [0.0; 3]]).value(), 2.0);
    }

    #[test]
    fn surface_examples() {
        let t = Tape::new();
        let x = pts(&t, &[[1.0, 0.0, 0.0]]);
        assert_eq!(surface_loss(&t, &x, &[[0.0; 3]], &[[0.0; 3]], 0.1).value(), 1.0);
        assert_abs_diff_eq!(
            surface_loss(&t, &x, &[[0.0; 3]], &[[1.0, 0.0, 0.0]], 0.1).value(),
            1.1,
            epsilon = 1e-15
        );
        assert_eq!(surface_loss(&t, &x, &[[0.0; 3]], &[[0.0, 1.0, 0.0]], 0.1).value(), 1.0);
        assert_eq!(surface_loss(&t, &x, &[[1.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]], 0.1).value(), 0.0);
    }

    #[test]
    fn normal_examples() {
        let t = Tape::new();
        let n = pts(&t, &[[0.0, 0.0, 1.0]]);
        assert_eq!(normal_loss(&t, &n, &[[0.0, 0.0, 1.0]]).value(), 0.0);
        assert_eq!(normal_loss(&t, &n, &[[1.0, 0.0, 0.0]]).value(), 1.0);
        assert_eq!(normal_loss(&t, &n, &[[0.0, 0.0, -1.0]]).value(), 2.0);
    }

    #[test]
    fn smooth_examples() {
        let t = Tape::new();
        let a = pts(&t, &[[0.0, 0.0, 1.0]]);
        let b = pts(&t, &[[1.0, 0.0, 0.0]]);
        assert_eq!(smooth_loss(&t, &a, &a).value(), 0.0);
        assert_abs_diff_eq!(smooth_loss(&t, &a, &b).value(), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(smooth_loss(&t, &[], &[]).value(), 0.0);
    }

    #[test]
    fn fair_examples() {
        let t = Tape::new();
        let line = pts(&t, &[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(fair_loss(&t, &[line]).value(), 0.0);
        let bent = pts(&t, &[[0.0; 3], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(fair_loss(&t, &[bent]).value(), 1.0);
        let r = 2.5;
        let circle: Vec<Vec3> = (0..64)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 64.0;
                [r * a.cos(), r * a.sin(), 0.0]
            })
            .collect();
        let expect = 62.0 * r * (1.0 - (2.0 * PI / 64.0).cos());
        assert_abs_diff_eq!(fair_loss(&t, &[pts(&t, &circle)]).value(), expect, epsilon = 1e-12);
    }

    #[test]
    fn uniform_examples() {
        let t = Tape::new();
        let c = |e: f64, g: f64| (t.var(e), t.var(g));
        assert_eq!(uniform_loss(&t, &[vec![c(2.0, 2.0), c(2.0, 2.0)]]).value(), 0.0);
        assert_eq!(uniform_loss(&t, &[vec![c(1.0, 5.0), c(3.0, 5.0)]]).value(), 2.0);
        assert_eq!(uniform_loss(&t, &[vec![c(11.0, 5.0), c(13.0, 5.0)]]).value(), 2.0);
        // means are per face
        assert_eq!(
            uniform_loss(&t, &[vec![c(1.0, 1.0)], vec![c(9.0, 9.0)]]).value(),
            0.0
        );
    }

    #[test]
    fn aspect_examples() {
        let t = Tape::new();
        let l = |v: &[f64]| v.iter().map(|&x| t.var(x)).collect::<Vec<_>>();
        assert_abs_diff_eq!(
            aspect_loss(&t, &[(l(&[1.0, 2.0, 3.0]), vec![2.0, 4.0, 6.0])]).value(),
            0.0,
            epsilon = 1e-7
        );
        assert_abs_diff_eq!(
            aspect_loss(&t, &[(l(&[1.0, 0.0, 0.0]), vec![0.0, 1.0, 0.0])]).value(),
            1.0,
            epsilon = 1e-12
        );
        // (0.5, 0.5) against (0.8, 0.2)
        let v = aspect_loss(&t, &[(l(&[0.5, 0.5]), vec![0.8, 0.2])]).value();
        assert_abs_diff_eq!(v, 0.377_501_091_769_886, epsilon = 1e-12);
    }

    #[test]
    fn regularizer_examples() {
        let t = Tape::new();
        let c = |v: &[f64]| v.iter().map(|&x| t.var(x)).collect::<Vec<_>>();
        assert_eq!(code_regularizer(&t, &[c(&[0.0, 0.0])]).value(), 0.0);
        assert_eq!(code_regularizer(&t, &[c(&[3.0, 4.0])]).value(), 5.0);
        assert_eq!(code_regularizer(&t, &[c(&[1.0, 0.0]), c(&[0.0, 1.0])]).value(), 2.0);
    }

    #[test]
    fn total_examples() {
        let t = Tape::new();
        let w0 = LossWeights {
            surface: 0.0,
            normal: 0.0,
            smooth: 0.0,
            fair: 0.0,
            uniform: 0.0,
            aspect: 0.0,
            reg: 0.0,
            beta: 0.1,
        };
        let (total, _) = total_loss(&t, &w0, 1.0, &Terms::default()).unwrap();
        assert_eq!(total.value(), 0.0);
        let terms = Terms {
            anchor: Some(t.var(5.0)),
            surface: Some(t.var(3.0)),
            ..Default::default()
        };
        assert_eq!(total_loss(&t, &w0, 1.0, &terms).unwrap().0.value(), 5.0);
        let terms = Terms {
            surface: Some(t.var(3.0)),
            ..Default::default()
        };
        let w = LossWeights { surface: 2.0, ..w0 };
        let (total, report) = total_loss(&t, &w, 1.0, &terms).unwrap();
        assert_eq!(total.value(), 6.0);
        assert!((report.weighted_total(&w) - report.total).abs() < 1e-12);
    }

    #[test]
    fn nan_term_is_named() {
        let t = Tape::new();
        let terms = Terms {
            normal: Some(t.var(f64::NAN)),
            ..Default::default()
        };
        let err = total_loss(&t, &LossWeights::default(), 1.0, &terms).unwrap_err();
        assert!(err.to_string().contains("normal"));
    }

    #[test]
    fn report_is_one_json_line() {
        let line = LossReport::default().to_json_line();
        assert!(!line.contains('\n'));
        let back: LossReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back, LossReport::default());
    }

    proptest! {
        #[test]
        fn aspect_is_scale_invariant(
            lengths in prop::collection::vec(0.1f64..5.0, 3..8),
            s in 0.01f64..100.0,
        ) {
            let n = lengths.len();
            let target: Vec<f64> = (0..n).map(|k| 1.0 + k as f64 * 0.3).collect();
            let scaled: Vec<f64> = target.iter().map(|v| v * s).collect();
            let t = Tape::new();
            let vars = |v: &[f64]| v.iter().map(|&x| t.var(x)).collect::<Vec<_>>();
            let a = aspect_loss(&t, &[(vars(&lengths), target)]).value();
            let b = aspect_loss(&t, &[(vars(&lengths), scaled)]).value();
            prop_assert!((a - b).abs() < 1e-6);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn sums_are_permutation_invariant_and_non_negative(
            points in prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 2..20),
            rot in 0usize..20,
        ) {
            let n = points.len();
            let targets: Vec<Vec3> = points.iter().map(|p| [p[1], p[2], p[0]]).collect();
            let normals: Vec<Vec3> = vec![[0.0, 0.0, 1.0]; n];
            let t = Tape::new();
            let a = surface_loss(&t, &pts(&t, &points), &targets, &normals, 0.1).value();
            let mut rp = points.clone();
            let mut rt = targets.clone();
            rp.rotate_left(rot % n);
            rt.rotate_left(rot % n);
            let b = surface_loss(&t, &pts(&t, &rp), &rt, &normals, 0.1).value();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!(a >= 0.0);
            prop_assert!(anchor_loss(&t, &pts(&t, &points), &targets).value() >= 0.0);
            prop_assert!(fair_loss(&t, &[pts(&t, &points)]).value() >= 0.0);
        }
    }
}
