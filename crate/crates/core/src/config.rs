//! Experiment configuration: every knob of a training run.
//!
//! Optional fields are filled by [`ExperimentConfig::resolve`], so the
//! resolved form lists every value the run actually used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentationPipeline, PairMode};
use crate::data::{self, Dataset, Geometry};
use crate::error::{Error, Result};
use crate::loss::{ClusterLossConfig, InstanceLossConfig};
use crate::model::ModelConfig;
use crate::train::AdamConfig;

/// Which parts of the method are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    /// Instance head only; clusters come from k-means on the instance space.
    IchOnly,
    /// Cluster head only.
    CchOnly,
    /// Second view is the raw input.
    RawSecondView,
    /// Both views are the raw input.
    RawBothViews,
}

impl AblationMode {
    pub fn pair_mode(self) -> PairMode {
        match self {
            AblationMode::RawSecondView => PairMode::RawSecond,
            AblationMode::RawBothViews => PairMode::RawBoth,
            _ => PairMode::AugmentBoth,
        }
    }

    pub fn uses_instance_loss(self) -> bool {
        self != AblationMode::CchOnly
    }

    pub fn uses_cluster_loss(self) -> bool {
        self != AblationMode::IchOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        k: usize,
        n_per: usize,
        dim: usize,
        separation: f64,
        sigma: f64,
        /// Defaults to the experiment seed.
        seed: Option<u64>,
    },
    Moons {
        n: usize,
        noise: f64,
        seed: Option<u64>,
    },
    Csv {
        path: PathBuf,
        label_column: Option<usize>,
    },
    Idx {
        images: PathBuf,
        labels: Option<PathBuf>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Blobs {
            k: 4,
            n_per: 128,
            dim: 16,
            separation: 10.0,
            sigma: 1.0,
            seed: None,
        }
    }
}

impl DatasetSpec {
    /// Loads or generates the raw dataset. Relative paths resolve against
    /// `base`.
    pub fn load(&self, base: &Path) -> Result<Dataset> {
        match self {
            DatasetSpec::Blobs {
                k,
                n_per,
                dim,
                separation,
                sigma,
                seed,
            } => data::gaussian_blobs(*k, *n_per, *dim, *separation, *sigma, seed.unwrap_or(0)),
            DatasetSpec::Moons { n, noise, seed } => data::two_moons(*n, *noise, seed.unwrap_or(0)),
            DatasetSpec::Csv { path, label_column } => {
                data::load_csv(&base.join(path), *label_column)
            }
            DatasetSpec::Idx { images, labels } => data::load_idx(
                &base.join(images),
                labels.as_ref().map(|l| base.join(l)).as_deref(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub encoder_widths: Vec<usize>,
    pub instance_dim: usize,
    pub head_hidden: Option<usize>,
    /// Defaults to the number of distinct labels.
    pub cluster_count: Option<usize>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            encoder_widths: vec![64, 64],
            instance_dim: 128,
            head_hidden: None,
            cluster_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ablation: AblationMode,
    /// Per-column standardization; defaults to on for vector data, off for
    /// images.
    pub standardize: Option<bool>,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub model: ModelSettings,
    /// Defaults to [`AugmentationPipeline::default_for`] the dataset geometry.
    pub augmentation: Option<AugmentationPipeline>,
    pub instance_loss: InstanceLossConfig,
    pub cluster_loss: ClusterLossConfig,
    pub adam: AdamConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 200,
            batch_size: 64,
            learning_rate: 3e-4,
            ablation: AblationMode::Full,
            standardize: None,
            out_dir: None,
            dataset: DatasetSpec::default(),
            model: ModelSettings::default(),
            augmentation: None,
            instance_loss: InstanceLossConfig::default(),
            cluster_loss: ClusterLossConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Copy with every optional field filled in for `dataset`.
    pub fn resolve(&self, dataset: &Dataset) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        match &mut out.dataset {
            DatasetSpec::Blobs { seed, .. } | DatasetSpec::Moons { seed, .. } => {
                seed.get_or_insert(self.seed);
            }
            _ => {}
        }
        out.standardize
            .get_or_insert(matches!(dataset.geometry, Geometry::Vector(_)));
        if out.model.cluster_count.is_none() {
            out.model.cluster_count = Some(dataset.class_count().ok_or_else(|| {
                Error::invalid(
                    "model.cluster_count",
                    "is required when the dataset has no labels",
                )
            })?);
        }
        if out.model.head_hidden.is_none() {
            out.model.head_hidden =
                Some(*out.model.encoder_widths.last().unwrap_or(&dataset.dim()));
        }
        out.augmentation
            .get_or_insert_with(|| AugmentationPipeline::default_for(dataset.geometry));
        out.validate(dataset)?;
        Ok(out)
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid(
                "batch_size",
                format!("must be at least 2, got {}", self.batch_size),
            ));
        }
        if dataset.is_empty() {
            return Err(Error::invalid("dataset", "dataset is empty"));
        }
        if self.batch_size > dataset.len() {
            return Err(Error::invalid(
                "batch_size",
                format!("{} exceeds dataset size {}", self.batch_size, dataset.len()),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        self.adam.validate()?;
        self.instance_loss.validate()?;
        self.cluster_loss.validate()?;
        if let Some(p) = &self.augmentation {
            p.validate(dataset.geometry)?;
        }
        if let Some(m) = self.model.cluster_count {
            if m < 2 {
                return Err(Error::invalid(
                    "model.cluster_count",
                    format!("must be at least 2, got {m}"),
                ));
            }
        }
        Ok(())
    }

    /// Network dimensions for a dataset with `input_dim` features. Requires
    /// a resolved config.
    pub fn model_config(&self, input_dim: usize) -> Result<ModelConfig> {
        let cluster_count = self
            .model
            .cluster_count
            .ok_or_else(|| Error::config("model.cluster_count unresolved"))?;
        let cfg = ModelConfig {
            input_dim,
            encoder_widths: self.model.encoder_widths.clone(),
            instance_dim: self.model.instance_dim,
            head_hidden: self.model.head_hidden,
            cluster_count,
            init_seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the dataset and applies standardization as configured.
    pub fn prepare_dataset(&self, base: &Path) -> Result<Dataset> {
        let mut spec = self.dataset.clone();
        if let DatasetSpec::Blobs { seed, .. } | DatasetSpec::Moons { seed, .. } = &mut spec {
            seed.get_or_insert(self.seed);
        }
        let mut d = spec.load(base)?;
        let standardize = self
            .standardize
            .unwrap_or(matches!(d.geometry, Geometry::Vector(_)));
        if standardize {
            d.standardize();
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_rejects_unknown_keys() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"epochz": 3}"#).unwrap_err();
        assert!(err.to_string().contains("epochz"));
        let err = serde_json::from_str::<ExperimentConfig>(
            r#"{"dataset": {"kind": "moons", "n": 10, "noise": 0.1, "colour": 1}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn resolve_fills_every_default() {
        let cfg = ExperimentConfig::default();
        let d = cfg.prepare_dataset(Path::new(".")).unwrap();
        let r = cfg.resolve(&d).unwrap();
        assert_eq!(r.model.cluster_count, Some(4));
        assert_eq!(r.standardize, Some(true));
        assert!(r.augmentation.is_some());
        assert!(matches!(
            r.dataset,
            DatasetSpec::Blobs { seed: Some(0), .. }
        ));
        assert_eq!(r.resolve(&d).unwrap(), r);
    }

    #[test]
    fn invalid_values_rejected() {
        let d = ExperimentConfig::default()
            .prepare_dataset(Path::new("."))
            .unwrap();
        let cfg = ExperimentConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(
            matches!(cfg.resolve(&d), Err(Error::InvalidField { field, .. }) if field == "batch_size")
        );
        let mut cfg = ExperimentConfig::default();
        cfg.instance_loss.temperature = -1.0;
        assert!(matches!(
            cfg.resolve(&d),
            Err(Error::InvalidField { field, .. }) if field == "instance_loss.temperature"
        ));
    }
}
