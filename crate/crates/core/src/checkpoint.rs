//! Checkpoint archives: a zip holding `checkpoint.toml` (configuration,
//! balance factors, translation scaling, provenance) and one
//! `params/<name>.npy` array per parameter tensor.

use std::fs::{self, File};
use std::io::{Cursor, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use ndarray_npy::{ReadNpyExt, WriteNpyExt};
use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;

use crate::error::{Error, Result};
use crate::losses::LossBalance;
use crate::network::{Model, TranslationScale};
use crate::train::TrainConfig;

const META: &str = "checkpoint.toml";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Flat network parameters in layout order.
    pub params: Vec<f64>,
    pub balance: LossBalance,
    pub relative_balance: Option<LossBalance>,
    pub translation_scale: TranslationScale,
    pub epoch: usize,
    /// SHA-256 of the training data.
    pub data_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u32,
    epoch: usize,
    data_hash: String,
    balance: LossBalance,
    relative_balance: Option<LossBalance>,
    translation_scale: TranslationScale,
    config: TrainConfig,
}

impl Checkpoint {
    /// The model with its translation scaling restored.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(&self.config.model)?;
        if model.num_params() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters but the configured model has {}",
                self.params.len(),
                model.num_params()
            )));
        }
        model.translation_scale = self.translation_scale;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let model = self.model()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let meta = Meta {
            format_version: FORMAT_VERSION,
            epoch: self.epoch,
            data_hash: self.data_hash.clone(),
            balance: self.balance,
            relative_balance: self.relative_balance,
            translation_scale: self.translation_scale,
            config: self.config.clone(),
        };
        let meta_text = toml::to_string_pretty(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut buf = Cursor::new(Vec::new());
        {
            let mut zip = zip::ZipWriter::new(&mut buf);
            let opts = SimpleFileOptions::default()
                .compression_method(zip::CompressionMethod::Deflated)
                .last_modified_time(zip::DateTime::default());
            let zerr = |e: zip::result::ZipError| Error::Checkpoint(e.to_string());
            zip.start_file(META, opts).map_err(zerr)?;
            zip.write_all(meta_text.as_bytes()).map_err(|e| Error::io(path, e))?;
            for spec in model.layout().specs() {
                let arr = ArrayD::from_shape_vec(IxDyn(&spec.shape), self.params[spec.range()].to_vec())
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let mut bytes = Vec::new();
                arr.write_npy(&mut bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
                zip.start_file(format!("params/{}.npy", spec.name), opts).map_err(zerr)?;
                zip.write_all(&bytes).map_err(|e| Error::io(path, e))?;
            }
            zip.finish().map_err(zerr)?;
        }
        // Write-then-rename keeps an existing checkpoint intact on failure.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, buf.into_inner()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let cerr = |e: &dyn std::fmt::Display| Error::Checkpoint(format!("{}: {e}", path.display()));
        let mut zip = zip::ZipArchive::new(file).map_err(|e| cerr(&e))?;
        let mut text = String::new();
        zip.by_name(META)
            .map_err(|e| cerr(&e))?
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        let meta: Meta = toml::from_str(&text).map_err(|e| cerr(&e))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(cerr(&format!("unsupported format version {}", meta.format_version)));
        }
        meta.config.validate()?;
        let model = Model::new(&meta.config.model)?;
        let mut params = vec![0.0; model.num_params()];
        for spec in model.layout().specs() {
            let mut bytes = Vec::new();
            zip.by_name(&format!("params/{}.npy", spec.name))
                .map_err(|e| cerr(&format!("parameter {}: {e}", spec.name)))?
                .read_to_end(&mut bytes)
                .map_err(|e| Error::io(path, e))?;
            let arr = ArrayD::<f64>::read_npy(&bytes[..]).map_err(|e| cerr(&e))?;
            if arr.shape() != spec.shape.as_slice() {
                return Err(cerr(&format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    arr.shape(),
                    spec.shape
                )));
            }
            params[spec.range()].copy_from_slice(&arr.iter().copied().collect::<Vec<_>>());
        }
        Ok(Self {
            config: meta.config,
            params,
            balance: meta.balance,
            relative_balance: meta.relative_balance,
            translation_scale: meta.translation_scale,
            epoch: meta.epoch,
            data_hash: meta.data_hash,
        })
    }
}
