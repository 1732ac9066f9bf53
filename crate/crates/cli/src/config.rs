//! Experiment configuration: a single JSON document that drives every
//! subcommand, so a run is reproducible from the config plus its seeds.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hawk_core::model::TrainConfig;
use hawk_core::pipeline::PipelineConfig;
use hawk_core::schedule::ScheduleParams;
use hawk_core::simulate::{default_catalog, Catalog, GridSpec};
use hawk_core::{HawkError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schedule: ScheduleParams,
    /// Appliance catalog JSON; omit to use the built-in catalog.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    pub grid: GridSpec,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    /// Master seed for simulation and resampling.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schedule: ScheduleParams::default(),
            catalog: None,
            grid: GridSpec::default(),
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            seed: 1,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        let config: ExperimentConfig = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| HawkError::Format(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| HawkError::Format(format!("config encode: {e}")))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.grid.validate()?;
        self.pipeline.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// The catalog this experiment runs against, loading the referenced
    /// file when one is configured.
    pub fn catalog(&self) -> Result<Catalog> {
        match &self.catalog {
            Some(path) => {
                if !path.exists() {
                    return Err(HawkError::Parameter(format!(
                        "catalog file {} does not exist",
                        path.display()
                    )));
                }
                Catalog::load(path)
            }
            None => Ok(default_catalog(&self.grid)),
        }
    }
}
