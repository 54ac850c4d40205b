use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fewshot_core::data::{AugmentationConfig, SplitSpec};
use fewshot_core::maml::MamlConfig;
use fewshot_core::nn::InitScheme;
use fewshot_core::transfer::{BackboneSpec, PretrainConfig, TransferConfig};
use serde::{Deserialize, Serialize};

/// Where images come from. Exactly one source per experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Class-per-directory image tree.
    Dir { path: PathBuf },
    /// The built-in five-class synthetic flower generator.
    Synthetic { image_size: usize, per_class: usize },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            image_size: 84,
            per_class: 100,
        }
    }
}

/// Episode-classifier architecture and meta-training bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MamlModelConfig {
    pub width: usize,
    pub blocks: usize,
    pub batch_norm: bool,
    pub init: InitScheme,
    /// Episodes scored by periodic meta-tests and by `eval`.
    pub eval_episodes: usize,
    /// Write a resumable checkpoint every this many iterations; 0 writes
    /// only at the end.
    pub checkpoint_every: usize,
}

impl Default for MamlModelConfig {
    fn default() -> Self {
        Self {
            width: 32,
            blocks: 4,
            batch_norm: true,
            init: InitScheme::LecunUniform,
            eval_episodes: 200,
            checkpoint_every: 100,
        }
    }
}

/// Pretext data for backbone pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretextConfig {
    pub per_class: usize,
    /// Load this backbone checkpoint instead of pretraining.
    pub backbone: Option<PathBuf>,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self {
            per_class: 100,
            backbone: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
    pub augmentation: AugmentationConfig,
    pub maml: MamlConfig,
    pub maml_model: MamlModelConfig,
    pub transfer: TransferConfig,
    pub backbone: BackboneSpec,
    pub pretrain: PretrainConfig,
    pub pretext: PretextConfig,
    /// Configurations swept by `grid`; each entry starts from the
    /// transfer defaults.
    pub grid: Vec<TransferConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            dataset: DatasetSource::default(),
            split: SplitSpec::default(),
            augmentation: AugmentationConfig::default(),
            maml: MamlConfig::default(),
            maml_model: MamlModelConfig::default(),
            transfer: TransferConfig::default(),
            backbone: BackboneSpec::default(),
            pretrain: PretrainConfig::default(),
            pretext: PretextConfig::default(),
            grid: Vec::new(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Some(s) = over.seed {
            cfg.seed = s;
        }
        if let Some(o) = &over.out {
            cfg.out = o.clone();
        }
        if let Some(d) = &over.data {
            cfg.dataset = DatasetSource::Dir { path: d.clone() };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSource::Synthetic { image_size, per_class } => {
                if *image_size < 8 || *per_class == 0 {
                    bail!("synthetic dataset needs image_size >= 8 and per_class >= 1");
                }
            }
            DatasetSource::Dir { path } if path.as_os_str().is_empty() => bail!("dataset path is empty"),
            DatasetSource::Dir { .. } => {}
        }
        self.split.validate()?;
        self.augmentation.validate()?;
        self.maml.validate()?;
        if self.maml_model.width == 0 {
            bail!("maml_model.width must be positive");
        }
        self.transfer.validate()?;
        for (i, g) in self.grid.iter().enumerate() {
            g.validate().with_context(|| format!("grid entry {i}"))?;
        }
        self.backbone.model()?;
        Ok(())
    }

    /// Grid entries, or the two defaults: lr 1e-4 with dropout 0.7 and lr 1e-3
    /// with dropout 0.5.
    pub fn grid_configs(&self) -> Vec<TransferConfig> {
        if !self.grid.is_empty() {
            return self.grid.clone();
        }
        let base = TransferConfig {
            max_epochs: self.transfer.max_epochs,
            batch_size: self.transfer.batch_size,
            head_hidden: self.transfer.head_hidden.clone(),
            ..TransferConfig::default()
        };
        vec![
            base.clone(),
            TransferConfig {
                lr: 1e-3,
                dropout: 0.5,
                ..base
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn sections_parse() {
        let cfg = ExperimentConfig::parse(
            r#"
            seed = 7
            [dataset]
            source = "dir"
            path = "flowers"
            [maml]
            meta_iterations = 50
            inner_steps_train = 1
            [maml.episode]
            n_way = 3
            [split]
            mode = "per_class"
            train = 25
            test = 5
            val = 25
            [[grid]]
            lr = 0.001
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.dataset, DatasetSource::Dir { path: "flowers".into() });
        assert_eq!(cfg.maml.meta_iterations, 50);
        assert_eq!(cfg.maml.episode.n_way, 3);
        assert_eq!(cfg.maml.inner_steps_test, 10);
        assert_eq!(cfg.split, SplitSpec::subset());
        assert_eq!(cfg.grid_configs().len(), 1);
    }

    #[test]
    fn bad_files_are_rejected() {
        assert!(ExperimentConfig::parse("[maml]\nmeta_lr_typo = 1").is_err());
        assert!(ExperimentConfig::parse("[dataset]\nsource = \"dir\"\npath = \"a\"\nimage_size = 3").is_err());
        assert!(ExperimentConfig::parse("[dataset]\nsource = \"ftp\"").is_err());
        let cfg = ExperimentConfig::parse("[transfer]\nfreeze_backbone = false").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn shipped_configs_validate() {
        for text in [
            include_str!("../../../configs/quick.toml"),
            include_str!("../../../configs/full.toml"),
            include_str!("../../../configs/subset.toml"),
        ] {
            let cfg = ExperimentConfig::parse(text).unwrap();
            cfg.validate().unwrap();
        }
        let full = ExperimentConfig::parse(include_str!("../../../configs/full.toml")).unwrap();
        assert_eq!(
            full.maml,
            MamlConfig {
                eval_every: 500,
                ..MamlConfig::default()
            }
        );
        assert_eq!(full.augmentation, AugmentationConfig::default());
        assert_eq!(full.grid_configs(), ExperimentConfig::default().grid_configs());
    }

    #[test]
    fn overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 1\nout = \"a\"").unwrap();
        let over = Overrides {
            seed: Some(9),
            out: Some("b".into()),
            data: Some("imgs".into()),
        };
        let cfg = ExperimentConfig::load(Some(&p), &over).unwrap();
        assert_eq!((cfg.seed, cfg.out.to_str().unwrap()), (9, "b"));
        assert_eq!(cfg.dataset, DatasetSource::Dir { path: "imgs".into() });
    }
}
