//! On-disk network checkpoints.
//!
//! A checkpoint is a directory with `meta.json` (configuration,
//! representations, parameter index) and `params.bin`, the coefficients as
//! little-endian `f64` in index order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::group::RepresentationDoc;

use super::{MpnConfig, MpnError, MpnPolicy, ParamSlot};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub config: MpnConfig,
    pub edge_rep: RepresentationDoc,
    pub action_rep: RepresentationDoc,
    pub params: Vec<ParamSlot>,
    pub num_params: usize,
    pub params_sha256: String,
}

pub fn save_checkpoint(policy: &MpnPolicy, dir: &Path) -> Result<(), MpnError> {
    fs::create_dir_all(dir)?;
    let params = policy.params();
    let mut blob = Vec::with_capacity(params.len() * 8);
    for p in &params {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT,
        config: policy.config().clone(),
        edge_rep: policy.edge_rep().to_doc(),
        action_rep: policy.action_rep().to_doc(),
        params: policy.param_index(),
        num_params: params.len(),
        params_sha256: hex::encode(Sha256::digest(&blob)),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| MpnError::Format(e.to_string()))?;
    fs::write(dir.join("meta.json"), json)?;
    fs::write(dir.join("params.bin"), blob)?;
    Ok(())
}

/// Rebuilds the network from its configuration and loads the coefficients,
/// rejecting checkpoints whose layout or contents do not match.
pub fn load_checkpoint(dir: &Path) -> Result<MpnPolicy, MpnError> {
    let text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| MpnError::Format(e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(MpnError::Format(format!("unsupported checkpoint format {}", meta.format)));
    }
    let blob = fs::read(dir.join("params.bin"))?;
    if hex::encode(Sha256::digest(&blob)) != meta.params_sha256 {
        return Err(MpnError::Format("parameter blob checksum mismatch".into()));
    }
    if blob.len() != meta.num_params * 8 {
        return Err(MpnError::Format(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            meta.num_params * 8
        )));
    }
    let mut policy = MpnPolicy::new(meta.config.clone(), 0)?;
    if policy.param_index() != meta.params {
        return Err(MpnError::Format("parameter index does not match the configuration".into()));
    }
    if policy.edge_rep().to_doc() != meta.edge_rep || policy.action_rep().to_doc() != meta.action_rep {
        return Err(MpnError::Format("representations do not match the configuration".into()));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight bytes")))
        .collect();
    policy.set_params(&params)?;
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpn::policy::tests::small_config;
    use crate::mpn::NetworkKind;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = MpnPolicy::new(small_config(NetworkKind::Equivariant), 5).unwrap();
        save_checkpoint(&p, dir.path()).unwrap();
        let q = load_checkpoint(dir.path()).unwrap();
        assert_eq!(p.params(), q.params());
        let path = dir.path().join("params.bin");
        let mut blob = fs::read(&path).unwrap();
        blob[3] ^= 1;
        fs::write(&path, blob).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(MpnError::Format(_))));
    }
}
