//! Experiment config files: TOML, unknown keys rejected, every error tied to
//! a line of the file where one exists.

use std::fmt;
use std::path::{Path, PathBuf};

use cc_core::{Dataset, DatasetSpec, Error, ExperimentConfig};
use toml::de::{DeTable, DeValue};
use toml::Spanned;

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    /// 1-based line and column.
    pub position: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => {
                write!(f, "{}:{line}:{col}: {}", self.path.display(), self.message)
            }
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A parsed config together with the text it came from.
pub struct ConfigFile {
    pub path: PathBuf,
    pub source: String,
    pub config: ExperimentConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_owned(),
            position: None,
            message: e.to_string(),
        })?;
        Self::parse(path, source)
    }

    pub fn parse(path: &Path, source: String) -> Result<Self, ConfigError> {
        let mut config: ExperimentConfig = toml::from_str(&source).map_err(|e| ConfigError {
            path: path.to_owned(),
            position: e.span().map(|s| line_col(&source, s.start)),
            message: e.message().trim().to_owned(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        absolutize(&mut config.dataset, base);
        Ok(ConfigFile {
            path: path.to_owned(),
            source,
            config,
        })
    }

    /// Config built from defaults, for commands run without `--config`.
    pub fn defaults() -> Self {
        ConfigFile {
            path: PathBuf::from("<defaults>"),
            source: String::new(),
            config: ExperimentConfig::default(),
        }
    }

    /// Converts a library error raised while loading or validating this
    /// config into one that points at the offending key.
    pub fn locate(&self, err: Error) -> ConfigError {
        let field = match &err {
            Error::InvalidField { field, .. } => Some(field.clone()),
            Error::Generation(_) | Error::Io(_) | Error::Format { .. } | Error::Parse { .. } => {
                Some("dataset".to_owned())
            }
            _ => None,
        };
        let position = field
            .as_deref()
            .and_then(|f| find_key(&self.source, f))
            .map(|offset| line_col(&self.source, offset));
        ConfigError {
            path: self.path.clone(),
            position,
            message: err.to_string(),
        }
    }

    /// Loads the dataset and resolves every default against it.
    pub fn resolve(&self) -> Result<(ExperimentConfig, Dataset), ConfigError> {
        let dataset = self
            .config
            .prepare_dataset(Path::new("."))
            .map_err(|e| self.locate(e))?;
        let resolved = self.config.resolve(&dataset).map_err(|e| self.locate(e))?;
        Ok((resolved, dataset))
    }
}

fn absolutize(spec: &mut DatasetSpec, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            let joined = base.join(&*p);
            *p = std::path::absolute(&joined).unwrap_or(joined);
        }
    };
    match spec {
        DatasetSpec::Csv { path, .. } => fix(path),
        DatasetSpec::Idx { images, labels } => {
            fix(images);
            if let Some(l) = labels {
                fix(l);
            }
        }
        DatasetSpec::Blobs { .. } | DatasetSpec::Moons { .. } => {}
    }
}

fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Byte offset of the deepest key along a dotted path such as
/// `augmentation[1].sigma`. Falls back to the closest ancestor that is
/// present in the file.
fn find_key(source: &str, field: &str) -> Option<usize> {
    let root = DeTable::parse(source).ok()?;
    let mut table: &DeTable = root.get_ref();
    let mut found = None;
    for segment in field.split('.') {
        let (key, index) = match segment.split_once('[') {
            Some((k, rest)) => (k, rest.trim_end_matches(']').parse::<usize>().ok()),
            None => (segment, None),
        };
        let Some((k, v)) = table.iter().find(|(k, _)| k.get_ref().as_ref() == key) else {
            break;
        };
        found = Some(k.span().start);
        let mut value: &Spanned<DeValue> = v;
        if let Some(i) = index {
            match value.get_ref().as_array().and_then(|a| a.get(i)) {
                Some(item) => {
                    found = Some(item.span().start);
                    value = item;
                }
                None => break,
            }
        }
        match value.get_ref().as_table() {
            Some(t) => table = t,
            None => break,
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    fn located(src: &str, field: &str) -> Option<(usize, usize)> {
        find_key(src, field).map(|o| line_col(src, o))
    }

    #[test]
    fn finds_nested_and_indexed_keys() {
        let src = "seed = 1\n\n[instance_loss]\ntemperature = -1\n\n[[augmentation]]\nkind = \"identity\"\nprobability = 1.0\n\n[[augmentation]]\nkind = \"gaussian_jitter\"\nsigma = 0.0\nprobability = 1.0\n";
        assert_eq!(located(src, "seed"), Some((1, 1)));
        assert_eq!(located(src, "instance_loss.temperature"), Some((4, 1)));
        assert_eq!(located(src, "augmentation[1].sigma"), Some((12, 1)));
        assert_eq!(located(src, "augmentation[0].kind"), Some((7, 1)));
    }

    #[test]
    fn missing_key_falls_back_to_parent() {
        let src = "[model]\ninstance_dim = 8\n";
        assert_eq!(located(src, "model.cluster_count"), Some((1, 2)));
        assert_eq!(located(src, "batch_size"), None);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let err = ConfigFile::parse(Path::new("x.toml"), "seed = 1\nbatch_size = \n".into())
            .err()
            .unwrap();
        assert_eq!(err.position.map(|p| p.0), Some(2));
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = ConfigFile::parse(Path::new("x.toml"), "seed = 1\n[model]\nwidth = 3\n".into())
            .err()
            .unwrap();
        assert_eq!(err.position.map(|p| p.0), Some(3), "{err}");
        assert!(err.message.contains("width"), "{err}");
    }
}
