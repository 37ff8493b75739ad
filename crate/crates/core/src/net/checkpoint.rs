use std::fs;
use std::path::Path;

use cuedepth_autodiff::{io, Tensor};
use serde::{Deserialize, Serialize};

use super::config::NetConfig;
use super::model::Predictor;
use crate::cues::CueConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const HEADER_FILE: &str = "model.json";
pub const PAYLOAD_FILE: &str = "model.cdt";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    cues: CueConfig,
    params: Vec<Entry>,
}

/// Writes `model.json` (configuration and parameter manifest) and
/// `model.cdt` (all parameters concatenated) into `dir`.
pub fn save_checkpoint(predictor: &Predictor, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    let mut flat = Vec::with_capacity(predictor.params().count());
    for (name, t) in predictor.params().iter() {
        entries.push(Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: flat.len(),
        });
        flat.extend_from_slice(t.data());
    }
    let header = Header {
        net: *predictor.net_config(),
        cues: *predictor.cue_config(),
        params: entries,
    };
    let path = dir.join(HEADER_FILE);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(PAYLOAD_FILE);
    io::save(&path, &Tensor::vector(flat)).map_err(|e| Error::file(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Predictor> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::file(&path, e))?;
    let payload_path = dir.join(PAYLOAD_FILE);
    let payload = io::load(&payload_path).map_err(|e| Error::file(&payload_path, e))?;
    let data = payload.data();
    let mut params = ParamSet::new();
    for e in header.params {
        let n: usize = e.shape.iter().product();
        let slice = data.get(e.offset..e.offset + n).ok_or_else(|| {
            Error::file(
                &payload_path,
                format!("parameter `{}` runs past the payload", e.name),
            )
        })?;
        params.push(e.name, Tensor::new(e.shape, slice.to_vec())?);
    }
    if params.count() != data.len() {
        return Err(Error::file(
            &payload_path,
            "payload has unreferenced values",
        ));
    }
    if !params.all_finite() {
        return Err(Error::file(&payload_path, "non-finite parameter values"));
    }
    Predictor::from_parts(header.net, header.cues, params)
}
