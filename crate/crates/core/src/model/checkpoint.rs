use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::nnet::{Container, Parameterized, Tensor};
use crate::rng;

pub const CHECKPOINT_FORMAT: &str = "outfit-rank-checkpoint";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    topology: String,
    model: ModelConfig,
    /// Opaque trainer state (epoch counter, RNG position, history).
    state: Option<serde_json::Value>,
}

/// Parameters plus whatever state the trainer stored alongside them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub state: Option<serde_json::Value>,
}

/// Hex SHA-256 of checkpoint bytes, as recorded in manifests and reports.
pub fn checkpoint_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checkpoint_bytes(params: &ModelParams, state: Option<&serde_json::Value>) -> Result<Vec<u8>> {
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        topology: params.config.topology(),
        model: params.config.clone(),
        state: state.cloned(),
    };
    let header = serde_json::to_string(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut tensors = Vec::new();
    params.visit_params(&mut |name, v, _| tensors.push((name.to_string(), v.clone())));
    Ok(Container { header, tensors }.to_bytes())
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, state: Option<&serde_json::Value>) -> Result<()> {
    let bytes = checkpoint_bytes(params, state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let container = Container::load(path)?;
    let header: Header = serde_json::from_str(&container.header)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown checkpoint format {:?}", header.format)));
    }
    if header.topology != header.model.topology() {
        return Err(Error::Checkpoint("header topology disagrees with its config".into()));
    }
    // Initial values are overwritten below; the seed only fixes allocation.
    let mut params = ModelParams::new(header.model, &mut rng::seeded(0))?;
    let mut expected = Vec::new();
    params.visit_params(&mut |name, v, _| expected.push((name.to_string(), v.shape().to_vec())));
    if expected.len() != container.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, model needs {}",
            container.tensors.len(),
            expected.len()
        )));
    }
    for ((name, shape), (got_name, t)) in expected.iter().zip(&container.tensors) {
        if name != got_name || shape.as_slice() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {got_name} {:?} does not match expected {name} {shape:?}",
                t.shape()
            )));
        }
        t.check_finite(name)?;
    }
    let mut loaded: Vec<Tensor> = container.tensors.into_iter().map(|(_, t)| t).collect();
    let mut i = 0;
    params.visit_params_mut(&mut |_, v, _| {
        *v = std::mem::replace(&mut loaded[i], Tensor::zeros(&[0]));
        i += 1;
    });
    Ok(Checkpoint {
        params,
        state: header.state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, sample_quadruplets, SynthSpec};
    use crate::eval::Scorer;
    use crate::model::{Architecture, FrozenModel, ModalityMask};

    #[test]
    fn save_load_preserves_scores() {
        let spec = SynthSpec {
            users: 3,
            tops: 5,
            bottoms: 6,
            outfits_per_user: 2,
            ..SynthSpec::default()
        };
        let (data, _) = generate_synthetic(&spec, 2).unwrap();
        let config = ModelConfig {
            attr_dim: data.schema().total_dim(),
            n_users: 3,
            n_bottoms: 6,
            latent_dim: 4,
            mu: 0.3,
            lambda_reg: 1e-4,
            modality_mask: ModalityMask::FULL,
            architecture: Architecture {
                hidden: vec![5],
                maps_per_width: 2,
                text_dim: 3,
                embed_dim: 8,
                ..Architecture::default()
            },
        };
        let params = ModelParams::new(config, &mut rng::seeded(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let state = serde_json::json!({"epoch": 3});
        save_checkpoint(&path, &params, Some(&state)).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.state, Some(state.clone()));
        let probe = sample_quadruplets(&data, 2, 1).unwrap();
        let (a, b) = (FrozenModel::new(&params, &data).unwrap(), FrozenModel::new(&back.params, &data).unwrap());
        for q in &probe {
            assert_eq!(a.score(q.user, q.top, q.pos).to_bits(), b.score(q.user, q.top, q.pos).to_bits());
        }
        assert_eq!(
            checkpoint_bytes(&params, Some(&state)).unwrap(),
            checkpoint_bytes(&back.params, Some(&state)).unwrap()
        );
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }
}
