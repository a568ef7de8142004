use darsa_core::bounds::delta_c;
use darsa_core::ot::w1_exact_1d;
use darsa_core::synthdata::make_figure1_task;
use darsa_core::{ClassWeights, Dataset};
use serde::{Deserialize, Serialize};

use super::{csv_writer, write_json};
use crate::config::prepare_out_dir;
use crate::error::{CliError, CliResult};
use crate::Figure1Args;

pub const CSV_FILE: &str = "figure1.csv";
pub const JSON_FILE: &str = "figure1.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub w_t: f64,
    pub w1_paired: f64,
    pub w1_overall: f64,
    pub delta_c: f64,
    pub bound_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Figure1Output {
    pub sigma: f64,
    pub n_per_domain: usize,
    pub seed: u64,
    pub clusters: Vec<ClusterRow>,
    pub weighted: f64,
    pub w1_overall: f64,
    pub delta_c: f64,
    /// `weighted <= w1_overall + delta_c`.
    pub bound_holds: bool,
}

fn column(data: &Dataset, class: Option<usize>) -> Vec<f64> {
    let labels = data.labels().expect("generated data is labelled");
    data.features()
        .column(0)
        .iter()
        .zip(labels)
        .filter(|(_, &y)| class.is_none_or(|c| c == y))
        .map(|(&v, _)| v)
        .collect()
}

/// Exact 1-D distances per cluster and overall; target weights are the
/// target's empirical class proportions.
pub fn compute(sigma: f64, n: usize, seed: u64) -> CliResult<Figure1Output> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CliError::input(format!("sigma must be positive, got {sigma}")));
    }
    let (source, target) = make_figure1_task(sigma, n, seed)?;
    let w_t = ClassWeights::from_labels(target.labels().expect("labelled"), 2)?;
    let overall = w1_exact_1d(&column(&source, None), &column(&target, None))?;
    let mut parts = Vec::with_capacity(4);
    for data in [&source, &target] {
        for c in 0..2 {
            parts.push(data.class_features(c)?);
        }
    }
    let dc = delta_c(&parts)?;

    let mut weighted = 0.0;
    let mut paired = Vec::with_capacity(2);
    for c in 0..2 {
        let d = w1_exact_1d(&column(&source, Some(c)), &column(&target, Some(c)))?;
        weighted += w_t[c] * d;
        paired.push(d);
    }
    let holds = weighted <= overall + dc;
    let clusters = paired
        .into_iter()
        .enumerate()
        .map(|(c, d)| ClusterRow {
            cluster: c,
            w_t: w_t[c],
            w1_paired: d,
            w1_overall: overall,
            delta_c: dc,
            bound_holds: holds,
        })
        .collect();
    Ok(Figure1Output {
        sigma,
        n_per_domain: n,
        seed,
        clusters,
        weighted,
        w1_overall: overall,
        delta_c: dc,
        bound_holds: holds,
    })
}

pub fn run(args: &Figure1Args) -> CliResult<()> {
    let out = compute(args.sigma, args.n, args.seed)?;
    prepare_out_dir(&args.out)?;
    let mut w = csv_writer(&args.out.join(CSV_FILE))?;
    for row in &out.clusters {
        w.serialize(row)?;
    }
    w.flush()?;
    write_json(&args.out.join(JSON_FILE), &out)?;
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}
