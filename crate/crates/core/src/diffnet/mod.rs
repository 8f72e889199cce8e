//! Differentiation engine and the two networks: the mapping `f` from feature
//! space to R^3 and the broadcast decoder from latent codes to vertex features.

pub mod mlp;
pub mod tape;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::complex::{mvc_weights_grad, FeatureComplex};
use crate::error::{NpsError, Result};
use crate::geom::{cross3, norm3, scale3, Vec2, Vec3};

pub use mlp::{softplus, Dense, Mlp, MlpGrad, MlpTrace, SOFTPLUS_BETA};
pub use tape::{Adjoints, Tape, Var};

/// Latent codes of a shape collection, one row per shape.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodebook {
    pub codes: Array2<f64>,
}

impl LatentCodebook {
    pub fn random(count: usize, dim: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| NpsError::Config(e.to_string()))?;
        Ok(LatentCodebook {
            codes: Array2::from_shape_fn((count, dim), |_| normal.sample(rng)),
        })
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.codes.ncols()
    }

    pub fn code(&self, id: usize) -> Result<Array1<f64>> {
        if id >= self.len() {
            return Err(NpsError::UnknownCode(id));
        }
        Ok(self.codes.row(id).to_owned())
    }
}

/// Broadcast decoder: three linear layers from `(code, token)` to a vertex feature.
pub fn decoder(code_dim: usize, hidden: usize, feature_dim: usize, rng: &mut impl Rng) -> Mlp {
    Mlp::new(&[code_dim + 1, hidden, hidden, feature_dim], rng)
}

/// Positional token of vertex row `k` (0-based) among `count` vertices: `(k + 1) / K`.
pub fn positional_token(k: usize, count: usize) -> f64 {
    (k + 1) as f64 / count as f64
}

/// Decoder inputs `cat(c, P_k)` for all `count` vertices.
pub fn broadcast_inputs(code: ArrayView1<f64>, count: usize) -> Array2<f64> {
    let c = code.len();
    Array2::from_shape_fn((count, c + 1), |(k, j)| {
        if j < c {
            code[j]
        } else {
            positional_token(k, count)
        }
    })
}

/// `Z` with row `k = h(cat(c, P_k))`.
pub fn broadcast_decode(decoder: &Mlp, code: ArrayView1<f64>, count: usize) -> Array2<f64> {
    decoder.forward(broadcast_inputs(code, count).view())
}

/// Surface point `f(g(u))` on face `face`.
pub fn surface_point(complex: &FeatureComplex, mlp: &Mlp, face: usize, u: Vec2) -> Result<Vec3> {
    let z = complex.interpolate_feature(face, u)?;
    let x = mlp.forward_one(z.as_slice().expect("contiguous feature"))?;
    Ok([x[0], x[1], x[2]])
}

/// Columns `dx/du` and `dx/dv` of the composite map at an interior point.
pub fn surface_jacobian(
    complex: &FeatureComplex,
    mlp: &Mlp,
    face: usize,
    u: Vec2,
) -> Result<[Vec3; 2]> {
    let domain = &complex.domains[face];
    let mvc = mvc_weights_grad(domain, u)?;
    let dim = complex.dim();
    let mut z = Array2::zeros((1, dim));
    let mut zu = Array2::zeros((1, dim));
    let mut zv = Array2::zeros((1, dim));
    for (j, &row) in domain.corners.iter().enumerate() {
        let f = complex.features.row(row);
        z.row_mut(0).scaled_add(mvc.weights[j], &f);
        zu.row_mut(0).scaled_add(mvc.gradients[j][0], &f);
        zv.row_mut(0).scaled_add(mvc.gradients[j][1], &f);
    }
    let trace = mlp.forward_trace(z, vec![zu, zv]);
    let ju = trace.output_tangents[0].row(0);
    let jv = trace.output_tangents[1].row(0);
    Ok([[ju[0], ju[1], ju[2]], [jv[0], jv[1], jv[2]]])
}

/// Unit normal `(x_u x x_v) / |x_u x x_v|`.
pub fn surface_normal(complex: &FeatureComplex, mlp: &Mlp, face: usize, u: Vec2) -> Result<Vec3> {
    let [ju, jv] = surface_jacobian(complex, mlp, face, u)?;
    normal_from_jacobian(ju, jv)
}

pub fn normal_from_jacobian(ju: Vec3, jv: Vec3) -> Result<Vec3> {
    let c = cross3(ju, jv);
    let n = norm3(c);
    if !(n >= 1e-12) {
        return Err(NpsError::DegenerateJacobian(n));
    }
    Ok(scale3(c, 1.0 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::PatchLayout;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle_complex(dim: usize) -> FeatureComplex {
        let l = PatchLayout::from_json_str(
            r#"{"corners":[{"id":0,"position":[0,0,0]},{"id":1,"position":[1,0,0]},
                {"id":2,"position":[0,1,0]}],
                "faces":[{"id":0,"corners":[0,1,2]}]}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        FeatureComplex::random(&l, dim, 1.0, &mut rng).unwrap()
    }

    /// Mapping network computing `x = A z` exactly: one linear layer.
    fn linear_net(a: Array2<f64>) -> Mlp {
        let (out, inp) = a.dim();
        let mut net = Mlp::zeros(&[inp, out]);
        net.layers[0].weight = a;
        net
    }

    #[test]
    fn affine_case_has_constant_analytic_jacobian() {
        let c = triangle_complex(4);
        let a = array![[1.0, 0.5, 0.0, -1.0], [0.0, 2.0, 1.0, 0.0], [0.3, 0.0, 0.0, 1.0]];
        let net = linear_net(a.clone());
        // MVC on a triangle is barycentric, so z(u) is affine with
        // dz/du = Z^T dlambda/du and dlambda/du constant.
        let d = &c.domains[0];
        let verts = &d.vertices;
        let det = crate::geom::cross2(
            crate::geom::sub2(verts[1], verts[0]),
            crate::geom::sub2(verts[2], verts[0]),
        );
        // gradients of barycentric coordinates
        let grads: Vec<[f64; 2]> = (0..3)
            .map(|j| {
                let p = verts[(j + 1) % 3];
                let q = verts[(j + 2) % 3];
                [(p[1] - q[1]) / det, (q[0] - p[0]) / det]
            })
            .collect();
        let mut expect = [[0.0; 3]; 2];
        for axis in 0..2 {
            let mut dz = Array1::<f64>::zeros(4);
            for j in 0..3 {
                dz.scaled_add(grads[j][axis], &c.features.row(d.corners[j]));
            }
            let dx = a.dot(&dz);
            expect[axis] = [dx[0], dx[1], dx[2]];
        }
        for u in [[0.1, 0.1], [-0.2, 0.3], [0.0, -0.4]] {
            let j = surface_jacobian(&c, &net, 0, u).unwrap();
            for axis in 0..2 {
                for k in 0..3 {
                    assert!((j[axis][k] - expect[axis][k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_at_random_points() {
        let l = PatchLayout::from_json_str(
            r#"{"corners":[{"id":0,"position":[0,0,0]},{"id":1,"position":[1,0,0]},
                {"id":2,"position":[1.3,0.8,0]},{"id":3,"position":[0.5,1.4,0]},
                {"id":4,"position":[-0.3,0.8,0]}],
                "faces":[{"id":0,"corners":[0,1,2,3,4]}]}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = FeatureComplex::random(&l, 4, 1.0, &mut rng).unwrap();
        let net = Mlp::mapping(4, 3, 16, &mut rng);
        let pts = crate::sampling::sample_domain(&c.domains[0], 100, &mut rng);
        let h = 1e-5;
        for u in pts {
            let j = surface_jacobian(&c, &net, 0, u).unwrap();
            for axis in 0..2 {
                let mut up = u;
                let mut down = u;
                up[axis] += h;
                down[axis] -= h;
                let a = surface_point(&c, &net, 0, up).unwrap();
                let b = surface_point(&c, &net, 0, down).unwrap();
                for k in 0..3 {
                    let fd = (a[k] - b[k]) / (2.0 * h);
                    let scale = norm3(j[axis]).max(1e-3);
                    assert!(
                        (fd - j[axis][k]).abs() <= 1e-4 * scale,
                        "u={u:?} axis {axis}: {} vs {fd}",
                        j[axis][k]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_net_has_zero_jacobian_and_degenerate_normal() {
        let c = triangle_complex(4);
        let mut net = Mlp::zeros(&[4, 8, 3]);
        net.layers[1].bias = array![1.0, 1.0, 1.0];
        let j = surface_jacobian(&c, &net, 0, [0.1, 0.0]).unwrap();
        assert!(j.iter().flatten().all(|&v| v == 0.0));
        assert!(matches!(
            surface_normal(&c, &net, 0, [0.1, 0.0]),
            Err(NpsError::DegenerateJacobian(_))
        ));
    }

    #[test]
    fn planar_embedding_normal_is_z_axis() {
        // features = domain coordinates, map = embed into the xy plane
        let mut c = triangle_complex(2);
        let d = c.domains[0].clone();
        for (j, &row) in d.corners.iter().enumerate() {
            c.features[[row, 0]] = d.vertices[j][0];
            c.features[[row, 1]] = d.vertices[j][1];
        }
        let net = linear_net(array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]);
        let n = surface_normal(&c, &net, 0, [0.05, 0.1]).unwrap();
        assert!((n[2].abs() - 1.0).abs() < 1e-12);
        // swapping the two columns flips the normal
        let [ju, jv] = surface_jacobian(&c, &net, 0, [0.05, 0.1]).unwrap();
        let m = normal_from_jacobian(jv, ju).unwrap();
        for k in 0..3 {
            assert!((m[k] + n[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_jacobian_is_an_error() {
        let c = triangle_complex(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::mapping(4, 2, 8, &mut rng);
        let v = c.domains[0].vertices[1];
        assert!(matches!(
            surface_jacobian(&c, &net, 0, v),
            Err(NpsError::OnBoundary(..))
        ));
    }

    #[test]
    fn zero_decoder_broadcasts_bias() {
        let mut dec = Mlp::zeros(&[5, 8, 8, 6]);
        dec.layers[2].bias = Array1::from(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let z = broadcast_decode(&dec, array![1.0, -1.0, 2.0, 0.0].view(), 7);
        for row in z.rows() {
            assert_eq!(row, dec.layers[2].bias);
        }
    }

    #[test]
    fn single_vertex_token_is_one() {
        let inputs = broadcast_inputs(array![0.3, 0.4].view(), 1);
        assert_eq!(inputs, array![[0.3, 0.4, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dec = decoder(2, 16, 8, &mut rng);
        let z = broadcast_decode(&dec, array![0.3, 0.4].view(), 1);
        assert_eq!(z.row(0).to_vec(), dec.forward_one(&[0.3, 0.4, 1.0]).unwrap());
    }

    #[test]
    fn distinct_codes_decode_to_distinct_complexes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dec = decoder(3, 16, 8, &mut rng);
        let c1 = array![0.5, -0.2, 0.1];
        let c2 = array![-0.4, 0.3, 0.9];
        let z1 = broadcast_decode(&dec, c1.view(), 8);
        let z2 = broadcast_decode(&dec, c2.view(), 8);
        // direct row evaluation agrees with the batched decode
        for k in 0..8 {
            let mut input = c1.to_vec();
            input.push(positional_token(k, 8));
            let row = dec.forward_one(&input).unwrap();
            for j in 0..8 {
                assert!((row[j] - z1[[k, j]]).abs() < 1e-14);
            }
        }
        assert!((&z1 - &z2).iter().any(|v| v.abs() > 1e-6));
        // rows differ across vertices for a fixed code
        assert!((&z1.row(0) - &z1.row(5)).iter().any(|v| v.abs() > 1e-9));
    }
}
