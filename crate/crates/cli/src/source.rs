use vcnet_core::data::{
    class_count, generate_synthetic, load_idx, load_lightfield, split_train_val, LabeledImage, SyntheticSpec,
};
use vcnet_core::graph::ModelConfig;
use vcnet_core::{Error, Result};

use crate::{DataArgs, ModelArgs};

/// A dataset resolved into its training and held-out splits.
pub struct Dataset {
    pub description: String,
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    pub classes: usize,
}

impl Dataset {
    pub fn model_config(&self, model: &ModelArgs) -> Result<ModelConfig> {
        let shape = self
            .train
            .first()
            .or(self.val.first())
            .ok_or(Error::EmptyDataset)?
            .pixels
            .shape();
        let config = ModelConfig::new(model.variant, shape[0], shape[1], shape[2], self.classes);
        config.validate()?;
        Ok(config)
    }
}

/// Loads the selected source. Synthetic data uses its own index split;
/// file sources get a seeded 90/10 split.
pub fn load(data: &DataArgs, model: &ModelArgs) -> Result<Dataset> {
    if let Some(n) = data.data_synthetic {
        let spec = SyntheticSpec::new(n, model.seed);
        let (train, val) = generate_synthetic(&spec)?;
        return Ok(Dataset {
            description: format!("synthetic:{n}"),
            train,
            val,
            classes: spec.classes(),
        });
    }
    let (description, samples) = if let Some(paths) = &data.data_idx {
        let samples = load_idx(&paths[0], &paths[1])?;
        (format!("idx:{},{}", paths[0].display(), paths[1].display()), samples)
    } else if let Some(dir) = &data.data_lf {
        let grid = model
            .grid
            .as_deref()
            .ok_or_else(|| Error::Config("--data-lf needs --grid U V".into()))?;
        let samples = load_lightfield(dir, grid[0], grid[1])?
            .into_iter()
            .map(|s| s.into_labeled())
            .collect();
        (format!("lightfield:{}:{}x{}", dir.display(), grid[0], grid[1]), samples)
    } else {
        return Err(Error::Config("no dataset source given".into()));
    };
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = class_count(&samples).max(2);
    let (train, val) = split_train_val(samples, model.seed);
    if val.is_empty() {
        return Err(Error::Config("dataset too small for a held-out split".into()));
    }
    Ok(Dataset {
        description,
        train,
        val,
        classes,
    })
}
