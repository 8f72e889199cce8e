//! Trained models on disk: a JSON header, a `#BIN` sentinel line, then the
//! parameter arrays as raw little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::complex::{build_domains, FeatureComplex};
use crate::diffnet::{broadcast_decode, Dense, LatentCodebook, Mlp};
use crate::error::{NpsError, Result};
use crate::layout::PatchLayout;
use crate::losses::LossReport;

pub const FORMAT: &str = "nps-checkpoint";
pub const VERSION: u32 = 1;
const SENTINEL: &[u8] = b"\n#BIN\n";

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    /// One fitted shape: the vertex feature matrix `Z`.
    Single { features: Array2<f64> },
    /// A shape space: broadcast decoder and one latent code per shape.
    Space { decoder: Mlp, codes: LatentCodebook },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub mlp: Mlp,
    pub model: Model,
    /// Layout whose boundary lengths define the parameter domains.
    pub layout: PatchLayout,
    /// Per-face normal sign.
    pub orientation: Vec<f64>,
    /// Per-arc smooth flag.
    pub smooth: Vec<bool>,
    pub config: Value,
    pub seed: u64,
    pub report: Option<LossReport>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetHeader {
    widths: Vec<usize>,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    mapping: NetHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decoder: Option<NetHeader>,
    arrays: Vec<ArrayEntry>,
    layout: Value,
    boundary_lengths: Vec<Vec<f64>>,
    orientation: Vec<f64>,
    smooth: Vec<bool>,
    seed: u64,
    config: Value,
    report: Option<LossReport>,
}

impl Checkpoint {
    pub fn is_space(&self) -> bool {
        matches!(self.model, Model::Space { .. })
    }

    pub fn num_vertices(&self) -> usize {
        self.layout.num_corners()
    }

    /// The fitted complex of a single-shape checkpoint.
    pub fn complex(&self) -> Result<FeatureComplex> {
        match &self.model {
            Model::Single { features } => {
                Ok(FeatureComplex::new(build_domains(&self.layout)?, features.clone()))
            }
            Model::Space { .. } => Err(NpsError::Config(
                "shape-space checkpoint needs a code id".into(),
            )),
        }
    }

    pub fn codes(&self) -> Result<&LatentCodebook> {
        match &self.model {
            Model::Space { codes, .. } => Ok(codes),
            Model::Single { .. } => Err(NpsError::Config(
                "single-shape checkpoint has no latent codes".into(),
            )),
        }
    }

    pub fn decoder(&self) -> Result<&Mlp> {
        match &self.model {
            Model::Space { decoder, .. } => Ok(decoder),
            Model::Single { .. } => Err(NpsError::Config(
                "single-shape checkpoint has no decoder".into(),
            )),
        }
    }

    /// Complex decoded from an arbitrary latent code.
    pub fn complex_for_code(&self, code: ArrayView1<f64>) -> Result<FeatureComplex> {
        let decoder = self.decoder()?;
        if code.len() + 1 != decoder.input_dim() {
            return Err(NpsError::Dimension(format!(
                "code has {} entries, decoder expects {}",
                code.len(),
                decoder.input_dim() - 1
            )));
        }
        let z = broadcast_decode(decoder, code, self.num_vertices());
        Ok(FeatureComplex::new(build_domains(&self.layout)?, z))
    }

    /// Complex of training shape `id`, or the single fitted complex when `id` is `None`.
    pub fn complex_for_shape(&self, id: Option<usize>) -> Result<FeatureComplex> {
        match (id, &self.model) {
            (_, Model::Single { .. }) => self.complex(),
            (Some(id), Model::Space { codes, .. }) => self.complex_for_code(codes.code(id)?.view()),
            (None, Model::Space { .. }) => self.complex(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        push_net("mapping", &self.mlp, &mut arrays, &mut data);
        let (kind, decoder) = match &self.model {
            Model::Single { features } => {
                arrays.push(ArrayEntry {
                    name: "features".into(),
                    shape: features.shape().to_vec(),
                });
                data.extend(features.iter());
                ("single", None)
            }
            Model::Space { decoder, codes } => {
                push_net("decoder", decoder, &mut arrays, &mut data);
                arrays.push(ArrayEntry {
                    name: "codes".into(),
                    shape: codes.codes.shape().to_vec(),
                });
                data.extend(codes.codes.iter());
                (
                    "space",
                    Some(NetHeader {
                        widths: decoder.widths(),
                        beta: decoder.beta,
                    }),
                )
            }
        };
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            mapping: NetHeader {
                widths: self.mlp.widths(),
                beta: self.mlp.beta,
            },
            decoder,
            arrays,
            layout: serde_json::from_str(&self.layout.to_json_string()).expect("layout json"),
            boundary_lengths: self.layout.boundary_lengths.clone(),
            orientation: self.orientation.clone(),
            smooth: self.smooth.clone(),
            seed: self.seed,
            config: self.config.clone(),
            report: self.report.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header json");
        out.extend_from_slice(SENTINEL);
        out.reserve(8 * data.len());
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NpsError::Checkpoint(m.to_string());
        let split = bytes
            .windows(SENTINEL.len())
            .position(|w| w == SENTINEL)
            .ok_or_else(|| bad("missing #BIN sentinel"))?;
        let header: Header = serde_json::from_slice(&bytes[..split])
            .map_err(|e| NpsError::Checkpoint(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(bad("not a checkpoint file"));
        }
        if header.version != VERSION {
            return Err(NpsError::Checkpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let body = &bytes[split + SENTINEL.len()..];
        if body.len() % 8 != 0 {
            return Err(bad("truncated array data"));
        }
        let mut values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |entry: &ArrayEntry| -> Result<Vec<f64>> {
            let n: usize = entry.shape.iter().product();
            let v: Vec<f64> = values.by_ref().take(n).collect();
            if v.len() != n {
                return Err(NpsError::Checkpoint(format!("array {} truncated", entry.name)));
            }
            Ok(v)
        };
        let mut entries = header.arrays.iter();
        let mlp = read_net(&header.mapping, &mut entries, &mut take)?;
        let model = match (header.kind.as_str(), &header.decoder) {
            ("single", None) => {
                let e = entries.next().ok_or_else(|| bad("missing features"))?;
                Model::Single {
                    features: to_matrix(e, take(e)?)?,
                }
            }
            ("space", Some(dec)) => {
                let decoder = read_net(dec, &mut entries, &mut take)?;
                let e = entries.next().ok_or_else(|| bad("missing codes"))?;
                Model::Space {
                    decoder,
                    codes: LatentCodebook {
                        codes: to_matrix(e, take(e)?)?,
                    },
                }
            }
            _ => return Err(bad("unknown checkpoint kind")),
        };
        if values.next().is_some() {
            return Err(bad("trailing array data"));
        }
        let mut layout = PatchLayout::from_json_str(&header.layout.to_string())?;
        if header.boundary_lengths.len() != layout.num_faces() {
            return Err(bad("boundary lengths do not match the layout"));
        }
        layout.boundary_lengths = header.boundary_lengths;
        Ok(Checkpoint {
            mlp,
            model,
            layout,
            orientation: header.orientation,
            smooth: header.smooth,
            config: header.config,
            seed: header.seed,
            report: header.report,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| NpsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| NpsError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn push_net(prefix: &str, net: &Mlp, arrays: &mut Vec<ArrayEntry>, data: &mut Vec<f64>) {
    for (i, layer) in net.layers.iter().enumerate() {
        arrays.push(ArrayEntry {
            name: format!("{prefix}.w{i}"),
            shape: layer.weight.shape().to_vec(),
        });
        data.extend(layer.weight.iter());
    }
    for (i, layer) in net.layers.iter().enumerate() {
        arrays.push(ArrayEntry {
            name: format!("{prefix}.b{i}"),
            shape: vec![layer.bias.len()],
        });
        data.extend(layer.bias.iter());
    }
}

fn read_net<'a>(
    head: &NetHeader,
    entries: &mut impl Iterator<Item = &'a ArrayEntry>,
    take: &mut impl FnMut(&ArrayEntry) -> Result<Vec<f64>>,
) -> Result<Mlp> {
    let n = head.widths.len().saturating_sub(1);
    if n == 0 {
        return Err(NpsError::Checkpoint("network without layers".into()));
    }
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let e = entries
            .next()
            .ok_or_else(|| NpsError::Checkpoint("missing weight array".into()))?;
        if e.shape != [head.widths[i + 1], head.widths[i]] {
            return Err(NpsError::Checkpoint(format!("array {} has wrong shape", e.name)));
        }
        weights.push(to_matrix(e, take(e)?)?);
    }
    let mut layers = Vec::with_capacity(n);
    for (i, weight) in weights.into_iter().enumerate() {
        let e = entries
            .next()
            .ok_or_else(|| NpsError::Checkpoint("missing bias array".into()))?;
        if e.shape != [head.widths[i + 1]] {
            return Err(NpsError::Checkpoint(format!("array {} has wrong shape", e.name)));
        }
        layers.push(Dense {
            weight,
            bias: Array1::from(take(e)?),
        });
    }
    Ok(Mlp {
        layers,
        beta: head.beta,
    })
}

fn to_matrix(entry: &ArrayEntry, data: Vec<f64>) -> Result<Array2<f64>> {
    match entry.shape[..] {
        [r, c] => Array2::from_shape_vec((r, c), data)
            .map_err(|e| NpsError::Checkpoint(format!("array {}: {e}", entry.name))),
        _ => Err(NpsError::Checkpoint(format!("array {} is not a matrix", entry.name))),
    }
}
