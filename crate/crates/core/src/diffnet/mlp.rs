//! Fully connected networks with softplus activations, evaluated in batches.
//!
//! Besides plain values, a forward pass can push any number of tangent
//! streams through the network (forward-mode directional derivatives), and
//! the backward pass differentiates a loss that depends on both the outputs
//! and their tangents. This is what lets surface normals appear inside the
//! training objective.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{NpsError, Result};

/// Sharpness of the softplus activation.
pub const SOFTPLUS_BETA: f64 = 100.0;

/// `softplus_beta(x) = ln(1 + exp(beta x)) / beta`.
#[inline]
pub fn softplus(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    if bx > 30.0 {
        x
    } else {
        (bx.max(0.0) + (-bx.abs()).exp().ln_1p()) / beta
    }
}

/// Softplus and its slope `sigmoid(beta x)`, sharing one exponential.
#[inline]
fn softplus_slope(x: f64, beta: f64) -> (f64, f64) {
    let bx = beta * x;
    if bx > 40.0 {
        return (x, 1.0);
    }
    let e = (-bx.abs()).exp();
    let value = if bx > 30.0 { x } else { (bx.max(0.0) + e.ln_1p()) / beta };
    let slope = if bx >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (value, slope)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// Weights uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`, zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        Dense {
            weight: Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub beta: f64,
}

/// Activations recorded by [`Mlp::forward_trace`].
pub struct MlpTrace {
    /// Input of every layer (`inputs[0]` is the network input).
    inputs: Vec<Array2<f64>>,
    /// Input tangents of every layer, one entry per stream.
    input_tangents: Vec<Vec<Array2<f64>>>,
    /// Activation slopes of the hidden layers.
    slopes: Vec<Array2<f64>>,
    pre_tangents: Vec<Vec<Array2<f64>>>,
    pub output: Array2<f64>,
    pub output_tangents: Vec<Array2<f64>>,
}

/// Gradient with the same shapes as an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrad {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrad {
            weights: mlp.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: mlp.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrad, s: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(s, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(s, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.biases {
            *b *= s;
        }
    }

    /// Flattened in the order of [`Mlp::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            beta: SOFTPLUS_BETA,
        }
    }

    /// The mapping network `R^D -> R^3`: `layers` linear layers, `hidden` units wide.
    pub fn mapping(dim: usize, layers: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut widths = vec![dim];
        widths.extend(std::iter::repeat(hidden).take(layers.saturating_sub(1)));
        widths.push(3);
        Mlp::new(&widths, rng)
    }

    pub fn zeros(widths: &[usize]) -> Self {
        Mlp {
            layers: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            beta: SOFTPLUS_BETA,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(|l| l.weight.nrows()));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Per layer: weights row-major, then the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = flat[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = flat[k];
                k += 1;
            }
        }
        debug_assert_eq!(k, flat.len());
    }

    fn affine(&self, l: usize, a: &ArrayView2<f64>) -> Array2<f64> {
        let layer = &self.layers[l];
        let mut h = a.dot(&layer.weight.t());
        h += &layer.bias;
        h
    }

    /// Batched forward pass, one sample per row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = self.affine(0, &x);
        for l in 1..=last {
            let beta = self.beta;
            a.mapv_inplace(|h| softplus(h, beta));
            a = self.affine(l, &a.view());
        }
        a
    }

    /// Single-sample forward pass.
    pub fn forward_one(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(NpsError::Dimension(format!(
                "input has {} entries, network expects {}",
                z.len(),
                self.input_dim()
            )));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(NpsError::NonFinite("network input".into()));
        }
        let x = ArrayView2::from_shape((1, z.len()), z).expect("row view");
        Ok(self.forward(x).row(0).to_vec())
    }

    /// Forward pass that also propagates tangent streams and records the
    /// activations needed by [`Mlp::backward`].
    pub fn forward_trace(&self, x: Array2<f64>, tangents: Vec<Array2<f64>>) -> MlpTrace {
        let last = self.layers.len() - 1;
        let beta = self.beta;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut input_tangents = Vec::with_capacity(self.layers.len());
        let mut slopes = Vec::with_capacity(last);
        let mut pre_tangents = Vec::with_capacity(last);
        let mut a = x;
        let mut da = tangents;
        for l in 0..=last {
            let w_t = self.layers[l].weight.t();
            let h = self.affine(l, &a.view());
            let dh: Vec<Array2<f64>> = da.iter().map(|t| t.dot(&w_t)).collect();
            inputs.push(a);
            input_tangents.push(da);
            if l == last {
                return MlpTrace {
                    inputs,
                    input_tangents,
                    slopes,
                    pre_tangents,
                    output: h,
                    output_tangents: dh,
                };
            }
            let mut next = h;
            let mut slope = Array2::zeros(next.raw_dim());
            Zip::from(&mut next).and(&mut slope).for_each(|v, s| {
                let (a, d) = softplus_slope(*v, beta);
                *v = a;
                *s = d;
            });
            let next_t: Vec<Array2<f64>> = dh.iter().map(|t| t * &slope).collect();
            slopes.push(slope);
            pre_tangents.push(dh);
            a = next;
            da = next_t;
        }
        unreachable!()
    }

    /// Reverse pass through a recorded trace.
    ///
    /// `g_out` and `g_tangents` are the loss gradients with respect to the
    /// outputs and output tangents. Returns the parameter gradient and the
    /// gradients with respect to the inputs and input tangents.
    pub fn backward(
        &self,
        trace: &MlpTrace,
        g_out: Array2<f64>,
        g_tangents: Vec<Array2<f64>>,
    ) -> (MlpGrad, Array2<f64>, Vec<Array2<f64>>) {
        let last = self.layers.len() - 1;
        let beta = self.beta;
        let mut grad = MlpGrad::zeros_like(self);
        let mut ga = g_out;
        let mut gda = g_tangents;
        for l in (0..=last).rev() {
            let (gh, gdh) = if l == last {
                (ga, gda)
            } else {
                let slope = &trace.slopes[l];
                let dh = &trace.pre_tangents[l];
                let mut gh = &ga * slope;
                let mut gdh: Vec<Array2<f64>> = Vec::with_capacity(gda.len());
                for (t, gt) in gda.iter().enumerate() {
                    let mut out = Array2::zeros(slope.raw_dim());
                    Zip::from(&mut gh)
                        .and(&mut out)
                        .and(slope)
                        .and(&dh[t])
                        .and(gt)
                        .for_each(|g, o, &s, &dhv, &gtv| {
                            *g += gtv * beta * s * (1.0 - s) * dhv;
                            *o = gtv * s;
                        });
                    gdh.push(out);
                }
                (gh, gdh)
            };
            let a = &trace.inputs[l];
            let da = &trace.input_tangents[l];
            let mut gw = gh.t().dot(a);
            for (gt, at) in gdh.iter().zip(da) {
                gw += &gt.t().dot(at);
            }
            grad.weights[l] = gw;
            grad.biases[l] = gh.sum_axis(Axis(0));
            let w = &self.layers[l].weight;
            ga = gh.dot(w);
            gda = gdh.iter().map(|g| g.dot(w)).collect();
        }
        (grad, ga, gda)
    }
}
