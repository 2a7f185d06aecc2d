//! Checkpoint archives.
//!
//! A checkpoint is a single safetensors file. Every tensor is little-endian
//! `F64` and keyed by its canonical name (`encoder.block1.conv.weight`,
//! `disc.fc3.bias`, `encoder.block2.bn.running_mean`, ...). Optimizer state,
//! when present, lives under `optim.<net>.<slot>.<param name>`. String
//! metadata carries `format`, `format_version`, `model_config` (JSON), `seed`
//! and whatever training state the writer adds.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::param::ParamStore;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "cxr-anomaly-checkpoint";
pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    pub metadata: BTreeMap<String, String>,
}

impl Archive {
    pub fn new() -> Self {
        let mut a = Archive::default();
        a.metadata.insert("format".into(), FORMAT_NAME.into());
        a.metadata.insert("format_version".into(), FORMAT_VERSION.into());
        a
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.insert(name.into(), (shape, data));
    }

    pub fn put_meta(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Stores all parameters and buffers of a network under their canonical
    /// names.
    pub fn put_module<M: ParamStore>(&mut self, module: &M) {
        for (name, p) in module.params() {
            self.insert(name, p.shape().to_vec(), p.value.clone());
        }
        for (name, b) in module.buffers() {
            self.insert(name, vec![b.len()], b.clone());
        }
    }

    /// Overwrites a network's parameters and buffers from the archive. Every
    /// expected name must be present with a matching shape.
    pub fn load_module<M: ParamStore>(&self, module: &mut M) -> std::result::Result<(), String> {
        for (name, p) in module.params_mut() {
            let (shape, data) = self
                .tensors
                .get(&name)
                .ok_or_else(|| format!("missing tensor {name}"))?;
            if shape.as_slice() != p.shape() {
                return Err(format!("tensor {name} has shape {shape:?}, expected {:?}", p.shape()));
            }
            p.value.copy_from_slice(data);
            p.zero_grad();
        }
        for (name, b) in module.buffers_mut() {
            let (shape, data) = self
                .tensors
                .get(&name)
                .ok_or_else(|| format!("missing buffer {name}"))?;
            if shape.as_slice() != [b.len()] {
                return Err(format!("buffer {name} has shape {shape:?}, expected [{}]", b.len()));
            }
            b.copy_from_slice(data);
        }
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Writes the archive atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, (shape, data))| {
                let raw = data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (k.clone(), shape.clone(), raw)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(k, shape, raw)| {
                TensorView::new(Dtype::F64, shape.clone(), raw)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Data(format!("building tensor {k}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let serialized = safetensors::serialize(views, &Some(meta))
            .map_err(|e| Error::Data(format!("serializing checkpoint: {e}")))?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serialized).map_err(|e| Error::io(format!("writing {}", tmp.display()), e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |detail: String| Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            detail,
        };
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| corrupt(e.to_string()))?;
        let metadata: BTreeMap<String, String> = header.metadata().clone().unwrap_or_default().into_iter().collect();
        if metadata.get("format").map(String::as_str) != Some(FORMAT_NAME) {
            return Err(corrupt("not a cxr-anomaly checkpoint".into()));
        }
        if metadata.get("format_version").map(String::as_str) != Some(FORMAT_VERSION) {
            return Err(corrupt(format!(
                "unsupported format_version {:?}",
                metadata.get("format_version")
            )));
        }
        let st = SafeTensors::deserialize(&bytes).map_err(|e| corrupt(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F64 {
                return Err(corrupt(format!("tensor {name} is {:?}, expected F64", view.dtype())));
            }
            let data = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, (view.shape().to_vec(), data));
        }
        Ok(Archive { tensors, metadata })
    }
}
