//! `BLNR` container: magic, `u32` LE version, `u64` LE metadata length, a
//! JSON metadata document, then the tensors as row-major LE `f64`s in
//! metadata order.

use std::path::Path;

use bilinear_core::model::{BilinearLayer, BilinearModel};
use bilinear_core::train::TrainConfig;
use bilinear_core::Matrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{read_file, write_file, Error, Result};

pub const MAGIC: [u8; 4] = *b"BLNR";
pub const VERSION: u32 = 1;
const PREFIX_LEN: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// Byte offset from the start of the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyMeta {
    pub d_input: usize,
    pub d_model: usize,
    pub d_hidden: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub projection: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    tensors: Vec<TensorInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topology: Option<TopologyMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<Value>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    attributes: Map<String, Value>,
}

/// Named matrices plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub tensors: Vec<(String, Matrix)>,
    pub topology: Option<TopologyMeta>,
    pub config: Option<Value>,
    pub attributes: Map<String, Value>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_owned(),
            tensors: Vec::new(),
            topology: None,
            config: None,
            attributes: Map::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.tensors.push((name.into(), m));
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::MissingTensor(name.to_owned()))
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn attribute_usize(&self, key: &str) -> Result<usize> {
        self.attributes
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Metadata(format!("missing integer attribute {key:?}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Metadata(format!(
                "expected a {kind:?} container, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, m)| {
                let info = TensorInfo {
                    name: name.clone(),
                    shape: [m.rows(), m.cols()],
                    dtype: "f64".into(),
                    offset,
                };
                offset += 8 * m.as_slice().len() as u64;
                info
            })
            .collect();
        let header = Header {
            kind: self.kind.clone(),
            tensors,
            topology: self.topology,
            config: self.config.clone(),
            attributes: self.attributes.clone(),
        };
        let meta = serde_json::to_vec(&header).expect("metadata serializes");
        let mut out = Vec::with_capacity(PREFIX_LEN as usize + meta.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, m) in &self.tensors {
            for x in m.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let actual = bytes.len() as u64;
        if actual < PREFIX_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic {
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(Error::Truncated {
                expected: PREFIX_LEN,
                actual,
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version {
                expected: VERSION,
                found: version,
            });
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let meta_end = PREFIX_LEN.saturating_add(meta_len);
        if actual < meta_end {
            return Err(Error::Truncated {
                expected: meta_end,
                actual,
            });
        }
        let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN as usize..meta_end as usize])
            .map_err(|e| Error::Metadata(e.to_string()))?;

        let mut expected_offset = 0u64;
        for t in &header.tensors {
            if t.dtype != "f64" {
                return Err(Error::Metadata(format!(
                    "tensor {:?} has dtype {:?}, expected \"f64\"",
                    t.name, t.dtype
                )));
            }
            if t.offset != expected_offset {
                return Err(Error::Metadata(format!(
                    "tensor {:?} declared at offset {}, expected {}",
                    t.name, t.offset, expected_offset
                )));
            }
            let count = (t.shape[0] as u64)
                .checked_mul(t.shape[1] as u64)
                .and_then(|c| c.checked_mul(8))
                .ok_or_else(|| Error::Metadata(format!("tensor {:?} is too large", t.name)))?;
            expected_offset += count;
        }
        let expected = meta_end + expected_offset;
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::TrailingBytes {
                extra: actual - expected,
            });
        }

        let payload = &bytes[meta_end as usize..];
        let tensors = header
            .tensors
            .iter()
            .map(|t| {
                let start = t.offset as usize;
                let data = payload[start..start + 8 * t.shape[0] * t.shape[1]]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok((t.name.clone(), Matrix::new(t.shape[0], t.shape[1], data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind: header.kind,
            tensors,
            topology: header.topology,
            config: header.config,
            attributes: header.attributes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub fn topology_of(model: &BilinearModel) -> TopologyMeta {
    let first = &model.layers()[0];
    TopologyMeta {
        d_input: model.d_input(),
        d_model: model.d_model(),
        d_hidden: first.d_hidden(),
        n_layers: model.layers().len(),
        n_classes: model.n_classes(),
        projection: first.proj().is_some(),
    }
}

pub fn config_to_json(config: &TrainConfig) -> Value {
    serde_json::json!({
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "weight_decay": config.weight_decay,
        "latent_noise": config.latent_noise,
        "lr_decay": config.lr_decay,
        "seed": config.seed,
        "chunks": config.chunks,
    })
}

pub fn model_to_container(model: &BilinearModel, config: Option<&TrainConfig>) -> Container {
    let mut c = Container::new("model");
    c.topology = Some(topology_of(model));
    c.config = config.map(config_to_json);
    c.push("embed", model.embed().clone());
    for (i, layer) in model.layers().iter().enumerate() {
        c.push(format!("layers.{i}.w"), layer.w().clone());
        c.push(format!("layers.{i}.v"), layer.v().clone());
        if let Some(p) = layer.proj() {
            c.push(format!("layers.{i}.p"), p.clone());
        }
    }
    c.push("unembed", model.unembed().clone());
    c
}

pub fn model_from_container(c: &Container) -> Result<BilinearModel> {
    c.expect_kind("model")?;
    let topo = c
        .topology
        .ok_or_else(|| Error::Metadata("model container lacks a topology".into()))?;
    let mut layers = Vec::with_capacity(topo.n_layers);
    for i in 0..topo.n_layers {
        let w = c.tensor(&format!("layers.{i}.w"))?.clone();
        let v = c.tensor(&format!("layers.{i}.v"))?.clone();
        let p_name = format!("layers.{i}.p");
        let p = c
            .has_tensor(&p_name)
            .then(|| c.tensor(&p_name).cloned())
            .transpose()?;
        layers.push(
            BilinearLayer::new(w, v, p).map_err(|e| Error::Shape(format!("layer {i}: {e}")))?,
        );
    }
    let model = BilinearModel::new(
        c.tensor("embed")?.clone(),
        layers,
        c.tensor("unembed")?.clone(),
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    if topology_of(&model) != topo {
        return Err(Error::Shape(format!(
            "tensors imply {:?}, metadata declares {:?}",
            topology_of(&model),
            topo
        )));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &BilinearModel, config: Option<&TrainConfig>) -> Result<()> {
    model_to_container(model, config).save(path)
}

pub fn load_model(path: &Path) -> Result<BilinearModel> {
    model_from_container(&Container::load(path)?)
}
