//! Model checkpoints stored as an `EDUC` archive of named entries.
//!
//! ```text
//! "EDUC" | version u8 | entry count u32 LE | entries
//! entry: name length u32 LE | UTF-8 name | data length u64 LE | data
//! ```
//!
//! Entries: `config.json`, `config.sha256` (hex digest of the config bytes),
//! `params/<name>.edut`, and optionally `state.json` plus
//! `adam/m/<name>.edut` / `adam/v/<name>.edut`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::edut;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::ParamStore;

pub const MAGIC: &[u8; 4] = b"EDUC";
pub const VERSION: u8 = 1;

/// Optimizer moments and progress counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub adam_m: ParamStore,
    pub adam_v: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub train_state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct StateCounters {
    epoch: usize,
    step: u64,
}

pub fn config_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn pack(entries: &BTreeMap<String, Vec<u8>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, data) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        out.extend_from_slice(data);
    }
    out
}

fn unpack(bytes: &[u8], origin: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let format = |detail: String| Error::Format {
        path: origin.to_path_buf(),
        detail,
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Truncated {
                path: origin.to_path_buf(),
                expected: pos.saturating_add(n),
                actual: bytes.len(),
            })?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(format("bad checkpoint magic".into()));
    }
    let version = take(1)?[0];
    if version != VERSION {
        return Err(format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| format("entry name is not UTF-8".into()))?;
        let data_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let data_len = usize::try_from(data_len).map_err(|_| format(format!("entry `{name}` is too large")))?;
        let data = take(data_len)?.to_vec();
        if entries.insert(name.clone(), data).is_some() {
            return Err(format(format!("duplicate entry `{name}`")));
        }
    }
    if pos != bytes.len() {
        return Err(format(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(entries)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = BTreeMap::new();
        let config = serde_json::to_vec_pretty(&self.config)?;
        entries.insert("config.sha256".to_string(), config_digest(&config).into_bytes());
        entries.insert("config.json".to_string(), config);
        let mut put = |dir: &str, store: &ParamStore| -> Result<()> {
            for (name, t) in store {
                entries.insert(format!("{dir}/{name}.edut"), edut::encode(t)?);
            }
            Ok(())
        };
        put("params", &self.params)?;
        if let Some(state) = &self.train_state {
            put("adam/m", &state.adam_m)?;
            put("adam/v", &state.adam_v)?;
            let counters = StateCounters {
                epoch: state.epoch,
                step: state.step,
            };
            entries.insert("state.json".to_string(), serde_json::to_vec(&counters)?);
        }
        Ok(pack(&entries))
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let entries = unpack(bytes, origin)?;
        let format = |detail: String| Error::Format {
            path: origin.to_path_buf(),
            detail,
        };
        let config_bytes = entries
            .get("config.json")
            .ok_or_else(|| format("missing config.json".into()))?;
        let digest = entries
            .get("config.sha256")
            .ok_or_else(|| format("missing config.sha256".into()))?;
        if digest.as_slice() != config_digest(config_bytes).as_bytes() {
            return Err(format("config hash does not match config.json".into()));
        }
        let config: ModelConfig = serde_json::from_slice(config_bytes)?;
        let collect = |dir: &str| -> Result<ParamStore> {
            let prefix = format!("{dir}/");
            let mut store = ParamStore::new();
            for (key, data) in &entries {
                if let Some(rest) = key.strip_prefix(&prefix) {
                    let name = rest.strip_suffix(".edut").unwrap_or(rest);
                    store.insert(name.to_string(), edut::decode(data, &origin.join(key))?);
                }
            }
            Ok(store)
        };
        let params = collect("params")?;
        let train_state = match entries.get("state.json") {
            Some(s) => {
                let counters: StateCounters = serde_json::from_slice(s)?;
                Some(TrainState {
                    epoch: counters.epoch,
                    step: counters.step,
                    adam_m: collect("adam/m")?,
                    adam_v: collect("adam/v")?,
                })
            }
            None => None,
        };
        Ok(Checkpoint {
            config,
            params,
            train_state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}
