use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::model::{Forecaster, ForecasterConfig, PARAM_NAMES};
use crate::nn::store::{self, WEIGHTS_FILE};

const KIND: &str = "forecaster";

#[derive(Serialize, Deserialize)]
struct Snapshot {
    feature_dim: usize,
    #[serde(flatten)]
    config: ForecasterConfig,
}

impl Forecaster {
    pub fn save(&self, dir: &Path) -> Result<()> {
        if !self.is_trained() {
            return Err(Error::NotReady);
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let snap = Snapshot { feature_dim: self.feature_dim(), config: self.config.clone() };
        store::write_manifest(dir, KIND, &snap)?;
        store::write_tensors(&dir.join(WEIGHTS_FILE), &self.named_params())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let snap: Snapshot = store::read_manifest(dir, KIND)?;
        let mut model = Forecaster::new(snap.config, snap.feature_dim)?;
        let names: Vec<String> = PARAM_NAMES.iter().map(|s| s.to_string()).collect();
        store::assign(
            &names,
            model.params.iter_mut().collect(),
            store::read_tensors(&dir.join(WEIGHTS_FILE))?,
        )?;
        model.mark_trained();
        Ok(model)
    }
}
