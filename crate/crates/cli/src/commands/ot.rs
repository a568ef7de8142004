use darsa_core::ot::{
    euclidean_cost, mw1_gmm, ot_exact_discrete, w1_empirical_plan, w1_exact_1d, GaussianMixture,
    PairwiseMode, TransportPlan,
};
use darsa_core::{Dataset, SinkhornParams};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::config::{prepare_out_dir, read_input};
use crate::error::{CliError, CliResult};
use crate::{Method, OtArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OtOutput {
    pub method: String,
    pub value: f64,
    pub iterations: usize,
    pub marginal_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<Vec<f64>>>,
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Exact1d => "exact1d",
        Method::Exact => "exact",
        Method::Sinkhorn => "sinkhorn",
        Method::Mw1 => "mw1",
    }
}

fn rows(plan: &TransportPlan) -> Vec<Vec<f64>> {
    plan.coupling.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn compute(args: &OtArgs) -> CliResult<OtOutput> {
    let out = |value: f64, plan: Option<&TransportPlan>| OtOutput {
        method: method_name(args.method).into(),
        value,
        iterations: plan.map_or(0, |p| p.iterations),
        marginal_residual: plan.map_or(0.0, |p| p.marginal_residual),
        plan: plan.filter(|_| args.plan).map(rows),
    };

    if args.method == Method::Mw1 {
        let load = |p: &std::path::Path| -> CliResult<GaussianMixture> {
            serde_json::from_str(&read_input(p)?)
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        };
        let (value, plan) = mw1_gmm(&load(&args.source)?, &load(&args.target)?, PairwiseMode::AnalyticW2)?;
        return Ok(out(value, Some(&plan)));
    }

    let src = Dataset::load_csv(&args.source, None)?;
    let tgt = Dataset::load_csv(&args.target, None)?;
    let (x, y) = (src.features(), tgt.features());
    match args.method {
        Method::Exact1d => {
            if x.ncols() != 1 || y.ncols() != 1 {
                return Err(CliError::input("exact1d needs one feature column"));
            }
            let a = x.column(0).to_vec();
            let b = y.column(0).to_vec();
            Ok(out(w1_exact_1d(&a, &b)?, None))
        }
        Method::Exact => {
            if x.ncols() != y.ncols() {
                return Err(CliError::input("clouds have different dimensions"));
            }
            let cost = euclidean_cost(x.view(), y.view());
            let a = Array1::from_elem(x.nrows(), 1.0 / x.nrows() as f64);
            let b = Array1::from_elem(y.nrows(), 1.0 / y.nrows() as f64);
            let plan = ot_exact_discrete(cost.view(), a.view(), b.view())?;
            Ok(out(plan.cost, Some(&plan)))
        }
        Method::Sinkhorn => {
            let params = SinkhornParams {
                reg: args.reg,
                max_iter: args.max_iter,
                tol: args.tol,
            };
            let plan = w1_empirical_plan(x.view(), y.view(), &params)?;
            Ok(out(plan.cost, Some(&plan)))
        }
        Method::Mw1 => unreachable!("handled above"),
    }
}

pub fn run(args: &OtArgs) -> CliResult<()> {
    let result = compute(args)?;
    println!("{}", serde_json::to_string(&result)?);
    if let Some(dir) = &args.out {
        prepare_out_dir(dir)?;
        write_json(&dir.join("ot.json"), &result)?;
    }
    Ok(())
}
