use std::fs;
use std::io::Write;
use std::path::Path;

use ndcore::{Adam, ParamStore, Parameter};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::Model;
use crate::data::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &str = "CROSSVERIFY-CKPT";
pub const VERSION: u32 = 1;

/// Everything needed to resume training or to predict.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    magic: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct File {
    magic: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    step: u64,
    params: Vec<Parameter>,
    optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = File {
            magic: MAGIC.into(),
            version: VERSION,
            config: self.model.config.clone(),
            vocab: self.model.vocab.clone(),
            step: self.step,
            params: self.model.store.parameters().to_vec(),
            optimizer: self.optimizer.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("not a checkpoint: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic `{}`", header.magic)));
        }
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} is not supported (expected {VERSION})",
                header.version
            )));
        }
        let file: File = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("corrupt file: {e}")))?;
        let store = ParamStore::from_parameters(file.params)?;
        let model = Model::from_store(file.config, file.vocab, store)?;
        if let Some(opt) = &file.optimizer {
            let aligned = opt.first_moment.len() == model.store.len()
                && opt.second_moment.len() == model.store.len()
                && model.store.parameters().iter().enumerate().all(|(i, p)| {
                    opt.first_moment[i].shape() == p.value.shape() && opt.second_moment[i].shape() == p.value.shape()
                });
            if !aligned {
                return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
            }
        }
        Ok(Self {
            model,
            optimizer: file.optimizer,
            step: file.step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
