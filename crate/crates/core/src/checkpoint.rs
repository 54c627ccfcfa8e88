//! JSON checkpoint archives and parameter fingerprints.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    format: u32,
    payload: T,
}

const FORMAT: u32 = 1;

pub fn save<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let env = Envelope {
        kind: kind.to_string(),
        format: FORMAT,
        payload,
    };
    let text = serde_json::to_string(&env).expect("checkpoint serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<T> =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if env.kind != kind {
        return Err(Error::Compatibility(format!(
            "{} holds a `{}` checkpoint, expected `{kind}`",
            path.display(),
            env.kind
        )));
    }
    if env.format != FORMAT {
        return Err(Error::Compatibility(format!(
            "{}: unsupported checkpoint format {}",
            path.display(),
            env.format
        )));
    }
    Ok(env.payload)
}

/// SHA-256 over the canonical JSON encoding, hex encoded.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}
