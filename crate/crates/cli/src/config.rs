use std::path::{Path, PathBuf};

use hydro_ssm::eval::FhvImprovement;
use hydro_ssm::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DATA_DIR_ENV: &str = "HYDRO_SSM_DATA_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Reference-model prediction CSVs for skill scores.
    pub reference: Vec<PathBuf>,
    pub fhv_improvement: FhvImprovement,
}

/// Everything a training run needs, read from one TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    /// Defaults to `basins.txt` inside the data directory.
    pub basin_list: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Feed static attributes to the model alongside the forcings.
    pub use_attributes: bool,
    pub jobs: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            basin_list: None,
            output_dir: PathBuf::from("runs/default"),
            use_attributes: true,
            jobs: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))
    }

    /// Read a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(v) => CliError::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            e => e,
        })?;
        let abs = std::path::absolute(path).map_err(|e| CliError::io(path, e))?;
        let base = abs.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(d) = cfg.data_dir.as_mut() {
            absolutize(&base, d);
        }
        if let Some(b) = cfg.basin_list.as_mut() {
            absolutize(&base, b);
        }
        absolutize(&base, &mut cfg.output_dir);
        for r in &mut cfg.eval.reference {
            absolutize(&base, r);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Data directory from the config or, failing that, the environment.
    pub fn resolved_data_dir(&self) -> Result<PathBuf, CliError> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| CliError::Config(vec![format!("no data_dir in config and {DATA_DIR_ENV} is not set")]))
    }

    /// Every problem with the model and training sections.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if let Err(hydro_ssm::ModelError::InvalidConfig(v)) = self.model.validate() {
            problems.extend(v.into_iter().map(|m| format!("model: {m}")));
        }
        if let Err(hydro_ssm::TrainError::InvalidConfig(v)) = self.train.validate() {
            problems.extend(v.into_iter().map(|m| format!("train: {m}")));
        }
        if self.jobs == 0 {
            problems.push("jobs must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }
}
