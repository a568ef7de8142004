use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use super::{check_cost_shape, validate_marginal, SinkhornParams, TransportPlan};
use crate::{Error, Result};

/// Problems with at least this many cost entries run their half-sweeps on the
/// rayon pool. Each output entry is reduced sequentially, so results do not
/// depend on the thread count.
const PARALLEL_MIN_ENTRIES: usize = 1 << 16;

/// Sweep budget and exit residual for each intermediate regularization level.
const STAGE_SWEEPS: usize = 25;
const STAGE_TOL: f64 = 1e-4;

/// Entropy-regularized optimal transport in the log domain.
///
/// Alternates exact updates of the dual potentials `f` and `g`. The
/// regularization is annealed from the cost scale down to `params.reg`
/// with warm-started potentials; every sweep counts toward `max_iter`.
/// Stops when the L1 row-marginal violation drops to `tol` at the target
/// regularization (column marginals are exact after each sweep).
///
/// The returned `cost` is the transport cost `<P, C>` of the entropic plan,
/// without the entropy term.
pub fn sinkhorn(
    cost: ArrayView2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    if !(params.reg > 0.0 && params.reg.is_finite()) {
        return Err(Error::InvalidRegularization(params.reg));
    }
    if !(params.tol > 0.0) || params.max_iter == 0 {
        return Err(Error::InvalidArgument(
            "sinkhorn needs tol > 0 and max_iter > 0".into(),
        ));
    }
    validate_marginal("row marginal", a)?;
    validate_marginal("column marginal", b)?;
    check_cost_shape(cost, a.len(), b.len())?;

    let state = LogSinkhorn::new(cost, a, b);
    let (f, g, iterations, residual, converged) = state.run(params);
    if !converged && residual > 100.0 * params.tol {
        return Err(Error::SinkhornDiverged {
            residual,
            iterations,
        });
    }
    let coupling = plan_from_potentials(cost, &f, &g, params.reg);
    Ok(TransportPlan::new(coupling, a, b, cost, iterations))
}

struct LogSinkhorn<'a> {
    cost: ArrayView2<'a, f64>,
    cost_t: Array2<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    a: Vec<f64>,
    parallel: bool,
}

impl<'a> LogSinkhorn<'a> {
    fn new(cost: ArrayView2<'a, f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) -> Self {
        let ln = |x: &f64| if *x > 0.0 { x.ln() } else { f64::NEG_INFINITY };
        Self {
            cost,
            cost_t: cost.t().as_standard_layout().into_owned(),
            log_a: a.iter().map(ln).collect(),
            log_b: b.iter().map(ln).collect(),
            a: a.to_vec(),
            parallel: cost.len() >= PARALLEL_MIN_ENTRIES,
        }
    }

    fn run(&self, params: &SinkhornParams) -> (Vec<f64>, Vec<f64>, usize, f64, bool) {
        let (n, m) = self.cost.dim();
        let mut f = vec![0.0; n];
        let mut g = vec![0.0; m];
        let mut iterations = 0;
        let mut residual = f64::INFINITY;

        let c_max = self.cost.iter().fold(0.0f64, |acc, &c| acc.max(c));
        let mut schedule = Vec::new();
        let mut eps = c_max;
        while eps > params.reg {
            schedule.push(eps);
            eps *= 0.5;
        }
        schedule.push(params.reg);
        let last = schedule.len() - 1;

        for (stage, &eps) in schedule.iter().enumerate() {
            let final_stage = stage == last;
            let mut sweeps = 0;
            loop {
                let lse = self.row_lse(&g, eps);
                residual = self.row_residual(&f, &lse, eps);
                if final_stage && iterations > 0 && residual <= params.tol {
                    return (f, g, iterations, residual, true);
                }
                if iterations >= params.max_iter {
                    return (f, g, iterations, residual, false);
                }
                if !final_stage && (sweeps >= STAGE_SWEEPS || residual <= STAGE_TOL) {
                    break;
                }
                for (fi, (&la, &l)) in f.iter_mut().zip(self.log_a.iter().zip(&lse)) {
                    *fi = eps * (la - l);
                }
                let lse_cols = self.col_lse(&f, eps);
                for (gj, (&lb, &l)) in g.iter_mut().zip(self.log_b.iter().zip(&lse_cols)) {
                    *gj = eps * (lb - l);
                }
                iterations += 1;
                sweeps += 1;
            }
        }
        (f, g, iterations, residual, false)
    }

    /// `LSE_j((g_j − C_ij)/eps)` for every row.
    fn row_lse(&self, g: &[f64], eps: f64) -> Vec<f64> {
        let row = |i: usize| log_sum_exp(self.cost.row(i), g, eps);
        if self.parallel {
            (0..self.cost.nrows()).into_par_iter().map(row).collect()
        } else {
            (0..self.cost.nrows()).map(row).collect()
        }
    }

    fn col_lse(&self, f: &[f64], eps: f64) -> Vec<f64> {
        let col = |j: usize| log_sum_exp(self.cost_t.row(j), f, eps);
        if self.parallel {
            (0..self.cost_t.nrows()).into_par_iter().map(col).collect()
        } else {
            (0..self.cost_t.nrows()).map(col).collect()
        }
    }

    /// L1 gap between the current row sums and `a`.
    fn row_residual(&self, f: &[f64], lse: &[f64], eps: f64) -> f64 {
        f.iter()
            .zip(lse)
            .zip(&self.a)
            .map(|((&fi, &l), &ai)| {
                let log_row = fi / eps + l;
                let row = if log_row.is_finite() { log_row.exp() } else { 0.0 };
                (row - ai).abs()
            })
            .sum()
    }
}

fn log_sum_exp(cost_row: ArrayView1<f64>, potential: &[f64], eps: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (&c, &p) in cost_row.iter().zip(potential) {
        let z = (p - c) / eps;
        if z > max {
            max = z;
        }
    }
    if !max.is_finite() {
        return max;
    }
    let s: f64 = cost_row
        .iter()
        .zip(potential)
        .map(|(&c, &p)| ((p - c) / eps - max).exp())
        .sum();
    max + s.ln()
}

fn plan_from_potentials(cost: ArrayView2<f64>, f: &[f64], g: &[f64], eps: f64) -> Array2<f64> {
    let mut p = Array2::zeros(cost.dim());
    for ((i, j), v) in p.indexed_iter_mut() {
        let z = (f[i] + g[j] - cost[[i, j]]) / eps;
        *v = if z.is_finite() { z.exp() } else { 0.0 };
    }
    p
}

/// Entropic objective `<P, C> + reg · Σ P (ln P − 1)` of a plan.
///
/// Its gradient with respect to the cost matrix is the optimal entropic plan
/// itself, which is what makes the fixed-coupling gradient exact for it.
pub fn entropic_objective(plan: &TransportPlan, reg: f64) -> f64 {
    let ent: f64 = plan
        .coupling
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p.ln() - 1.0))
        .sum();
    plan.cost + reg * ent
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn params(reg: f64) -> SinkhornParams {
        SinkhornParams {
            reg,
            max_iter: 20_000,
            tol: 1e-9,
        }
    }

    #[test]
    fn forced_single_cell() {
        for reg in [1e-3, 0.1, 10.0] {
            let p = sinkhorn(
                array![[1.7]].view(),
                array![1.0].view(),
                array![1.0].view(),
                &params(reg),
            )
            .unwrap();
            assert!((p.coupling[[0, 0]] - 1.0).abs() < 1e-12);
            assert!((p.cost - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn marginals_hold() {
        let c = array![[0.0, 2.0, 1.0], [1.0, 0.5, 3.0]];
        let a = array![0.3, 0.7];
        let b = array![0.2, 0.5, 0.3];
        let p = sinkhorn(c.view(), a.view(), b.view(), &params(0.2)).unwrap();
        assert!(p.marginal_residual <= 1e-6);
        assert!(p.coupling.iter().all(|&x| x >= 0.0));
        let frob = (&p.coupling * &c).sum();
        assert!((frob - p.cost).abs() < 1e-9);
    }

    #[test]
    fn zero_mass_rows_are_empty() {
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let a = array![1.0, 0.0];
        let b = array![0.5, 0.5];
        let p = sinkhorn(c.view(), a.view(), b.view(), &params(0.01)).unwrap();
        assert_eq!(p.coupling.row(1).sum(), 0.0);
        assert!((p.cost - 0.5).abs() < 1e-6);
    }

    #[test]
    fn divergence_reports_residual() {
        let c = array![[0.0, 1.0, 2.0], [1.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        let w = array![0.2, 0.3, 0.5];
        let v = array![0.5, 0.3, 0.2];
        let p = SinkhornParams {
            reg: 1e-3,
            max_iter: 1,
            tol: 1e-12,
        };
        match sinkhorn(c.view(), w.view(), v.view(), &p) {
            Err(Error::SinkhornDiverged { residual, iterations }) => {
                assert!(residual > 1e-10);
                assert_eq!(iterations, 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_reg() {
        let err = sinkhorn(
            array![[1.0]].view(),
            array![1.0].view(),
            array![1.0].view(),
            &params(0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidRegularization(_)));
    }
}
