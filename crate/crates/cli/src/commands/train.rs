use std::fs::File;
use std::io::{BufWriter, Write};

use darsa_core::darsa::{fit_with, EpochRecord};
use serde::{Deserialize, Serialize};

use super::{csv_writer, write_json};
use crate::config::{prepare_out_dir, ExperimentConfig, TaskKind, TaskSpec};
use crate::error::{CliError, CliResult};
use crate::TrainArgs;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BOUNDS_FILE: &str = "bounds_per_epoch.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// `None` when the target carries no labels.
    pub target_accuracy: Option<f64>,
    pub source_accuracy: f64,
    pub epochs: usize,
    pub seed: u64,
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve_config(args: &TrainArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(kind) = args.task {
        if kind != cfg.task.kind() {
            cfg.task = match kind {
                TaskKind::Figure1 => TaskSpec::default_figure1(),
                TaskKind::Gmm => TaskSpec::default_gmm(),
                TaskKind::Csv => match (&args.source, &args.target) {
                    (Some(s), Some(t)) => TaskSpec::Csv {
                        source: s.clone(),
                        target: t.clone(),
                        k: None,
                    },
                    _ => return Err(CliError::input("--task csv needs --source and --target")),
                },
            };
        }
    }
    if let TaskSpec::Csv { source, target, .. } = &mut cfg.task {
        if let Some(s) = &args.source {
            *source = s.clone();
        }
        if let Some(t) = &args.target {
            *target = t.clone();
        }
    }
    if let Some(seed) = args.seed {
        cfg.darsa.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.darsa.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bounds_header() -> [&'static str; 10] {
    [
        "epoch",
        "gamma_s",
        "gamma_s_weighted",
        "disc_overall",
        "disc_weighted",
        "delta_c",
        "eps_g_partial",
        "eps_c_partial",
        "skipped_subdomains",
        "ordering_holds",
    ]
}

fn bounds_row(r: &EpochRecord) -> Option<Vec<String>> {
    let b = r.bounds.as_ref()?;
    Some(vec![
        r.epoch.to_string(),
        b.gamma_s.to_string(),
        b.gamma_s_weighted.to_string(),
        b.disc_overall.to_string(),
        b.disc_weighted.to_string(),
        b.delta_c.to_string(),
        b.eps_g_partial.to_string(),
        b.eps_c_partial.to_string(),
        b.skipped_subdomains.to_string(),
        b.ordering_holds(0.0).to_string(),
    ])
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let cfg = resolve_config(args)?;
    prepare_out_dir(&args.out)?;
    write_json(&args.out.join(CONFIG_FILE), &cfg)?;

    let seed = cfg.darsa.seed;
    let (source, target) = cfg.task.materialize(seed)?;
    let eval_labels = target.labels().map(<[usize]>::to_vec);
    let unlabeled = target.without_labels();

    let metrics_path = args.out.join(METRICS_FILE);
    let mut metrics = BufWriter::new(
        File::create(&metrics_path)
            .map_err(|e| CliError::input(format!("{}: {e}", metrics_path.display())))?,
    );
    let mut bounds = csv_writer(&args.out.join(BOUNDS_FILE))?;
    bounds.write_record(bounds_header())?;

    let last = cfg.darsa.epochs;
    let log_every = cfg.log_every;
    let io_err = |e: std::io::Error| darsa_core::Error::Io(e);
    let (model, history) = fit_with(&source, &unlabeled, &cfg.darsa, eval_labels.as_deref(), |r| {
        if (r.epoch + 1) % log_every == 0 || r.epoch + 1 == last {
            let line = serde_json::to_string(r)?;
            writeln!(metrics, "{line}").map_err(io_err)?;
        }
        if let Some(row) = bounds_row(r) {
            bounds
                .write_record(&row)
                .map_err(|e| darsa_core::Error::Format(e.to_string()))?;
        }
        Ok(())
    })
    .map_err(|e| match e {
        e @ darsa_core::Error::Training { .. } => CliError::Training(e.to_string()),
        e @ (darsa_core::Error::Io(_) | darsa_core::Error::Json(_)) => CliError::input(e.to_string()),
        other => CliError::from(other),
    })?;
    metrics.flush()?;
    bounds.flush()?;

    write_json(&args.out.join(CHECKPOINT_FILE), &model.to_checkpoint())?;
    let summary = Summary {
        target_accuracy: history.final_target_accuracy(),
        source_accuracy: history.final_source_accuracy(),
        epochs: history.epochs.len(),
        seed,
    };
    write_json(&args.out.join(SUMMARY_FILE), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}
