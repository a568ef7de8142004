use darsa_core::bounds::{bound_report, BoundInputs};
use darsa_core::darsa::{estimate_target_weights, DarsaModel, ModelCheckpoint};
use darsa_core::nn::{argmax_rows, infer};
use darsa_core::{BoundReport, ClassWeights, Dataset, SinkhornParams};
use ndarray::{s, Array2, ArrayView2, Axis};

use super::{csv_writer, write_json};
use crate::config::{prepare_out_dir, read_input};
use crate::error::{CliError, CliResult};
use crate::BoundsArgs;

const WEIGHT_FLOOR: f64 = 1e-3;

/// Label of the closest source class mean for every row of `x`.
fn nearest_centroid(centroids: &[Option<ndarray::Array1<f64>>], x: ArrayView2<f64>) -> Vec<usize> {
    x.rows()
        .into_iter()
        .map(|row| {
            let mut best = (f64::INFINITY, 0);
            for (c, m) in centroids.iter().enumerate() {
                if let Some(m) = m {
                    let d = (&row - m).mapv(|v| v * v).sum();
                    if d < best.0 {
                        best = (d, c);
                    }
                }
            }
            best.1
        })
        .collect()
}

fn head(x: &Array2<f64>, n: usize) -> Array2<f64> {
    x.slice(s![..x.nrows().min(n), ..]).to_owned()
}

pub fn compute(args: &BoundsArgs) -> CliResult<BoundReport> {
    if args.max_rows == 0 {
        return Err(CliError::input("--max-rows must be positive"));
    }
    let source = Dataset::load_csv(&args.source, None)?;
    let ys = source
        .require_labels()
        .map_err(|_| CliError::input(format!("{} has no label column", args.source.display())))?;
    let k = source.k();
    let target = Dataset::load_csv(&args.target, Some(k))?;
    if source.dim() != target.dim() {
        return Err(CliError::input(format!(
            "source has {} features, target has {}",
            source.dim(),
            target.dim()
        )));
    }
    let xs = head(source.features(), args.max_rows);
    let xt = head(target.features(), args.max_rows);
    let ys = &ys[..xs.nrows()];

    let (fs, ft, pred_s, pseudo_t, w_t) = match &args.checkpoint {
        Some(path) => {
            let ck: ModelCheckpoint = serde_json::from_str(&read_input(path)?)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let model = DarsaModel::from_checkpoint(&ck)?;
            if model.classifier.output_dim() != k || model.encoder_s.input_dim() != source.dim() {
                return Err(CliError::input("checkpoint does not match the data shape"));
            }
            let fs = infer(&model.encoder_s, xs.view())?;
            let ft = infer(&model.encoder_t, xt.view())?;
            let pred_s = argmax_rows(infer(&model.classifier, fs.view())?.view());
            let pseudo_t = argmax_rows(infer(&model.classifier, ft.view())?.view());
            let w_t = estimate_target_weights(&model.encoder_t, &model.classifier, xt.view(), WEIGHT_FLOOR)?;
            (fs, ft, pred_s, pseudo_t, w_t)
        }
        None => {
            let centroids: Vec<_> = (0..k)
                .map(|c| {
                    let rows: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] == c).collect();
                    (!rows.is_empty())
                        .then(|| xs.select(Axis(0), &rows).mean_axis(Axis(0)).expect("nonempty"))
                })
                .collect();
            let pred_s = nearest_centroid(&centroids, xs.view());
            let pseudo_t = nearest_centroid(&centroids, xt.view());
            let w_t = ClassWeights::from_labels(&pseudo_t, k)?;
            (xs.clone(), xt.clone(), pred_s, pseudo_t, w_t)
        }
    };

    let params = SinkhornParams {
        reg: args.reg,
        max_iter: 20_000,
        tol: 1e-6,
    };
    Ok(bound_report(
        BoundInputs {
            source_features: fs.view(),
            source_predictions: &pred_s,
            source_labels: ys,
            target_features: ft.view(),
            target_pseudo_labels: &pseudo_t,
            w_t: &w_t,
        },
        &params,
    )?)
}

pub fn run(args: &BoundsArgs) -> CliResult<()> {
    let report = compute(args)?;
    prepare_out_dir(&args.out)?;
    write_json(&args.out.join("boundreport.json"), &report)?;
    let mut w = csv_writer(&args.out.join("bounds.csv"))?;
    w.write_record(["quantity", "subdomain", "overall"])?;
    for (name, sub, all) in [
        ("discrepancy", report.disc_weighted, report.disc_overall),
        ("source_risk", report.gamma_s_weighted, report.gamma_s),
        ("partial_bound", report.eps_c_partial, report.eps_g_partial),
    ] {
        w.write_record([name.to_string(), sub.to_string(), all.to_string()])?;
    }
    w.flush()?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
