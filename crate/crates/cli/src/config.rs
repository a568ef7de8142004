use std::fs;
use std::path::{Path, PathBuf};

use darsa_core::darsa::DarsaConfig;
use darsa_core::synthdata::{make_figure1_task, make_shifted_gmm, ShiftedGmmSpec};
use darsa_core::{ClassWeights, Dataset};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the source and target data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskSpec {
    Figure1 {
        sigma: f64,
        n_per_domain: usize,
    },
    Gmm(ShiftedGmmSpec),
    Csv {
        source: PathBuf,
        target: PathBuf,
        /// Class count; inferred from the source labels when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskKind {
    Figure1,
    Gmm,
    Csv,
}

impl TaskSpec {
    pub fn default_figure1() -> Self {
        TaskSpec::Figure1 {
            sigma: 0.05,
            n_per_domain: 2000,
        }
    }

    /// Three classes in the plane, source-heavy on class 0 and target-heavy
    /// on class 2.
    pub fn default_gmm() -> Self {
        TaskSpec::Gmm(ShiftedGmmSpec {
            k: 3,
            d: 2,
            mean_separation: 1.5,
            target_mean_shift: 0.5,
            source_props: ClassWeights::new(vec![0.6, 0.2, 0.2]).expect("valid proportions"),
            target_props: ClassWeights::new(vec![0.2, 0.2, 0.6]).expect("valid proportions"),
            n_per_domain: 1000,
            sigma: 0.3,
        })
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::Figure1 { .. } => TaskKind::Figure1,
            TaskSpec::Gmm(_) => TaskKind::Gmm,
            TaskSpec::Csv { .. } => TaskKind::Csv,
        }
    }

    /// Builds the source and target sets. Synthetic tasks draw from `seed`.
    pub fn materialize(&self, seed: u64) -> CliResult<(Dataset, Dataset)> {
        match self {
            TaskSpec::Figure1 { sigma, n_per_domain } => {
                Ok(make_figure1_task(*sigma, *n_per_domain, seed)?)
            }
            TaskSpec::Gmm(spec) => Ok(make_shifted_gmm(spec, seed)?),
            TaskSpec::Csv { source, target, k } => {
                let src = Dataset::load_csv(source, *k)?;
                src.require_labels()
                    .map_err(|_| CliError::input(format!("{} has no label column", source.display())))?;
                let tgt = Dataset::load_csv(target, Some(src.k()))?;
                Ok((src, tgt))
            }
        }
    }
}

fn default_log_every() -> usize {
    1
}

/// A full training run: data, hyperparameters and logging cadence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub darsa: DarsaConfig,
    /// Write a metrics line every this many epochs; the last epoch is always
    /// written.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::default_gmm(),
            darsa: DarsaConfig::default(),
            log_every: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_input(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.log_every == 0 {
            return Err(CliError::input("log_every must be positive"));
        }
        if let TaskSpec::Csv { source, target, .. } = &self.task {
            for p in [source, target] {
                if !p.is_file() {
                    return Err(CliError::input(format!("no such file: {}", p.display())));
                }
            }
        }
        self.darsa.validate()?;
        Ok(())
    }
}

/// Reads a whole file, naming the path on failure.
pub fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Creates `dir` if needed and checks that it is a directory.
pub fn prepare_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    Ok(())
}
