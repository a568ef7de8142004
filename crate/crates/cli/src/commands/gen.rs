use darsa_core::synthdata::DatasetManifest;
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::config::{prepare_out_dir, read_input, TaskKind, TaskSpec};
use crate::error::{CliError, CliResult};
use crate::GenArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub source: DatasetManifest,
    pub target: DatasetManifest,
}

pub fn run(args: &GenArgs) -> CliResult<()> {
    let task = match &args.config {
        Some(p) => serde_json::from_str::<TaskSpec>(&read_input(p)?)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?,
        None => match args.task {
            TaskKind::Figure1 => TaskSpec::default_figure1(),
            TaskKind::Gmm => TaskSpec::default_gmm(),
            TaskKind::Csv => return Err(CliError::input("gen needs a synthetic task")),
        },
    };
    if task.kind() == TaskKind::Csv {
        return Err(CliError::input("gen needs a synthetic task"));
    }
    let (source, target) = task.materialize(args.seed)?;
    prepare_out_dir(&args.out)?;
    source.save_csv(&args.out.join("source.csv"))?;
    target.save_csv(&args.out.join("target.csv"))?;
    let params = serde_json::to_value(&task)?;
    let generator = match task.kind() {
        TaskKind::Figure1 => "figure1",
        _ => "shifted-gmm",
    };
    let manifest = GenManifest {
        source: DatasetManifest::describe(&source, args.seed, generator, params.clone()),
        target: DatasetManifest::describe(&target, args.seed, generator, params),
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(())
}
