use std::path::Path;

use crate::detection::{Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::nn::store::{self, WEIGHTS_FILE};

const KIND: &str = "detector";

impl Detector {
    /// Writes `manifest.toml` and `weights.bin` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if !self.is_trained() {
            return Err(Error::NotReady);
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        store::write_manifest(dir, KIND, &self.config)?;
        store::write_tensors(&dir.join(WEIGHTS_FILE), &self.named_params())
    }

    /// Restores a trained detector written by [`Detector::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let config: DetectorConfig = store::read_manifest(dir, KIND)?;
        let mut det = Detector::new(config)?;
        let names: Vec<String> = det.named_params().into_iter().map(|(n, _)| n).collect();
        let stored = store::read_tensors(&dir.join(WEIGHTS_FILE))?;
        store::assign(&names, det.params_mut(), stored)?;
        det.mark_trained();
        Ok(det)
    }
}
