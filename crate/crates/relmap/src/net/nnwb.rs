//! NNWB weight file format, little-endian throughout.
//!
//! Layout: magic `NNWB`; u32 version (=1); u32 layer count; per layer: name
//! (u32 byte length + UTF-8), u8 kind tag, kind-specific u32 header fields,
//! then for Conv2d/Dense a weights tensor (u32 rank, u32 dims, raw f32
//! payload) followed by a bias tensor in the same encoding. A trailer carries
//! the model input shape (3 x u32) and the class labels (u32 count, then
//! length-prefixed UTF-8 each); the layer records themselves do not pin the
//! spatial input size, so the trailer is what makes a file self-contained.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{LayerKind, LayerSpec, NetworkModel, Padding};
use crate::Tensor;

const MAGIC: &[u8; 4] = b"NNWB";
const VERSION: u32 = 1;

const TAG_CONV2D: u8 = 0;
const TAG_MAXPOOL: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_FLATTEN: u8 = 3;
const TAG_DENSE: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return self.fail(format!(
                "truncated: needed {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let start = self.pos;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: start,
            msg: "invalid UTF-8 in string".into(),
        })
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return self.fail(format!("tensor rank {rank} out of range 1..=8"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = self.u32()? as usize;
            if d == 0 {
                return self.fail("zero tensor dimension");
            }
            shape.push(d);
        }
        let n: usize = shape.iter().product();
        let payload_start = self.pos;
        let payload = self.take(n * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: payload_start,
            msg: e.to_string(),
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode(model: &NetworkModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, model.layers.len() as u32);
    for layer in &model.layers {
        put_string(&mut out, &layer.name);
        match &layer.kind {
            LayerKind::Conv2d {
                kernel_h,
                kernel_w,
                in_channels,
                out_channels,
                stride,
                padding,
            } => {
                out.push(TAG_CONV2D);
                for v in [kernel_h, kernel_w, in_channels, out_channels, stride] {
                    put_u32(&mut out, *v as u32);
                }
                put_u32(&mut out, matches!(padding, Padding::Same) as u32);
            }
            LayerKind::MaxPool2x2 => out.push(TAG_MAXPOOL),
            LayerKind::Relu => out.push(TAG_RELU),
            LayerKind::Flatten => out.push(TAG_FLATTEN),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                out.push(TAG_DENSE);
                put_u32(&mut out, *in_features as u32);
                put_u32(&mut out, *out_features as u32);
            }
            LayerKind::Softmax => out.push(TAG_SOFTMAX),
        }
        if layer.kind.has_params() {
            let (w, b) = model
                .params
                .get(&layer.name)
                .expect("validated model has params for parameterized layers");
            put_tensor(&mut out, w);
            put_tensor(&mut out, b);
        }
    }
    put_u32(&mut out, model.input_shape.0 as u32);
    put_u32(&mut out, model.input_shape.1 as u32);
    put_u32(&mut out, model.input_shape.2 as u32);
    put_u32(&mut out, model.class_labels.len() as u32);
    for label in &model.class_labels {
        put_string(&mut out, label);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected \"NNWB\""),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    let mut params = BTreeMap::new();
    for _ in 0..layer_count {
        let name = r.string()?;
        let tag = r.u8()?;
        let kind = match tag {
            TAG_CONV2D => {
                let kernel_h = r.u32()? as usize;
                let kernel_w = r.u32()? as usize;
                let in_channels = r.u32()? as usize;
                let out_channels = r.u32()? as usize;
                let stride = r.u32()? as usize;
                let padding = match r.u32()? {
                    0 => Padding::Valid,
                    1 => Padding::Same,
                    other => return r.fail(format!("unknown padding code {other}")),
                };
                LayerKind::Conv2d {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    stride,
                    padding,
                }
            }
            TAG_MAXPOOL => LayerKind::MaxPool2x2,
            TAG_RELU => LayerKind::Relu,
            TAG_FLATTEN => LayerKind::Flatten,
            TAG_DENSE => LayerKind::Dense {
                in_features: r.u32()? as usize,
                out_features: r.u32()? as usize,
            },
            TAG_SOFTMAX => LayerKind::Softmax,
            other => return r.fail(format!("unknown layer kind tag {other}")),
        };
        if kind.has_params() {
            let tensors_start = r.pos;
            let w = r.tensor()?;
            let b = r.tensor()?;
            let declared_ok = match &kind {
                LayerKind::Conv2d {
                    kernel_h,
                    kernel_w,
                    in_channels,
                    out_channels,
                    ..
                } => {
                    w.shape() == [*kernel_h, *kernel_w, *in_channels, *out_channels]
                        && b.shape() == [*out_channels]
                }
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => w.shape() == [*out_features, *in_features] && b.shape() == [*out_features],
                _ => unreachable!(),
            };
            if !declared_ok {
                return Err(Error::Format {
                    offset: tensors_start,
                    msg: format!(
                        "layer '{name}': tensor shapes {:?}/{:?} disagree with declared header",
                        w.shape(),
                        b.shape()
                    ),
                });
            }
            params.insert(name.clone(), (w, b));
        }
        layers.push(LayerSpec { name, kind });
    }
    let input_shape = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let label_count = r.u32()? as usize;
    let mut class_labels = Vec::with_capacity(label_count);
    for _ in 0..label_count {
        class_labels.push(r.string()?);
    }
    let model = NetworkModel {
        layers,
        params,
        input_shape,
        class_labels,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_weights(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NetworkModel> {
    decode(&fs::read(path)?)
}

/// JSON sidecar describing a model topology, referencing an NNWB file for
/// parameters. Loading through the sidecar validates exactly like
/// [`load_weights`]: the declared layers must match the NNWB layer records.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct TopologySidecar {
    pub weights_path: String,
    pub input_shape: (usize, usize, usize),
    pub class_labels: Vec<String>,
    pub layers: Vec<LayerSpec>,
}

pub fn load_topology_json(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let sidecar: TopologySidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
    let weights_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&sidecar.weights_path);
    let from_nnwb = load_weights(&weights_path)?;
    if sidecar.layers != from_nnwb.layers {
        return Err(Error::InvalidInput(format!(
            "sidecar layers disagree with NNWB file {}",
            weights_path.display()
        )));
    }
    let model = NetworkModel {
        layers: sidecar.layers,
        params: from_nnwb.params,
        input_shape: sidecar.input_shape,
        class_labels: sidecar.class_labels,
    };
    model.validate()?;
    Ok(model)
}

/// Serializes a rank-2 tensor with the NNWB tensor encoding (used for
/// relevance map files).
pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::new();
    put_tensor(&mut out, t);
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    r.tensor()
}
