use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::{Model, ModelConfig, ParamStore};
use crate::autograd::Tensor;
use crate::{Error, Result};

const CONFIG_KEY: &str = "model_config";

/// Writes weights as safetensors with the model config in the metadata.
pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = model
        .params
        .iter()
        .map(|(name, t)| {
            let b = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.to_string(), b, t.shape().to_vec())
        })
        .collect();
    let views: Vec<(String, TensorView<'_>)> = bytes
        .iter()
        .map(|(n, b, s)| Ok((n.clone(), TensorView::new(Dtype::F32, s.clone(), b).map_err(fmt_err)?)))
        .collect::<Result<_>>()?;
    let mut meta = HashMap::new();
    meta.insert(CONFIG_KEY.to_string(), serde_json::to_string(&model.config)?);
    let data = safetensors::serialize(views, &Some(meta)).map_err(fmt_err)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, data).map_err(|e| Error::io(path, e))
}

fn fmt_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: e.to_string(),
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(fmt_err)?;
    let config: ModelConfig = match meta.metadata().as_ref().and_then(|m| m.get(CONFIG_KEY)) {
        Some(s) => serde_json::from_str(s)?,
        None => return Err(fmt_err("no embedded model config")),
    };
    let st = SafeTensors::deserialize(&bytes).map_err(fmt_err)?;
    let mut params = ParamStore::default();
    // declaration order, so optimizer state and iteration order are stable
    for (name, _) in super::declare(&config)? {
        let view = st.tensor(&name).map_err(|e| fmt_err(format!("{name}: {e}")))?;
        if view.dtype() != Dtype::F32 {
            return Err(fmt_err(format!("{name}: dtype {:?}", view.dtype())));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.insert(name, Tensor::new(view.shape().to_vec(), data)?);
    }
    if st.len() != params.len() {
        return Err(fmt_err(format!("{} tensors stored, {} expected", st.len(), params.len())));
    }
    Model::from_params(config, params)
}
