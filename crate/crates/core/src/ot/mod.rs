//! Optimal-transport distances.
//!
//! Exact solvers ([`w1_exact_1d`], [`ot_exact_discrete`]) act as ground truth
//! for small problems. [`sinkhorn`] is the entropic solver used everywhere
//! sample clouds are compared, with the Euclidean norm as ground cost.
//! Gaussian components get the Bures–Wasserstein closed form
//! ([`gaussian_w2`]), and [`mw1_gmm`] transports mixture weights with
//! component-to-component distances as the cost.

mod exact;
mod gaussian;
mod sinkhorn;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bounds::ClassWeights;
use crate::{Error, Result};

pub use exact::{ot_exact_discrete, w1_exact_1d};
pub use gaussian::{
    gaussian_w2, mw1_gmm, sample_gmm, GaussianComponent, GaussianMixture, PairwiseMode,
};
pub use sinkhorn::{entropic_objective, sinkhorn};

/// Tolerance on marginal sums accepted by the solvers.
pub const MARGINAL_SUM_TOL: f64 = 1e-9;

/// A coupling between two discrete probability vectors.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
    /// `<coupling, cost>` for the cost matrix the plan was solved against.
    pub cost: f64,
    /// Solver sweeps (Sinkhorn) or pivots (exact).
    pub iterations: usize,
    /// L1 violation of the row and column marginals, whichever is larger.
    pub marginal_residual: f64,
}

impl TransportPlan {
    pub(crate) fn new(
        coupling: Array2<f64>,
        row_marginal: ArrayView1<f64>,
        col_marginal: ArrayView1<f64>,
        cost_matrix: ArrayView2<f64>,
        iterations: usize,
    ) -> Self {
        let cost = (&coupling * &cost_matrix).sum();
        let marginal_residual = marginal_violation(&coupling, row_marginal, col_marginal);
        Self {
            coupling,
            row_marginal: row_marginal.to_owned(),
            col_marginal: col_marginal.to_owned(),
            cost,
            iterations,
            marginal_residual,
        }
    }
}

pub(crate) fn marginal_violation(
    coupling: &Array2<f64>,
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
) -> f64 {
    let rows: f64 = coupling
        .rows()
        .into_iter()
        .zip(a.iter())
        .map(|(r, &ai)| (r.sum() - ai).abs())
        .sum();
    let cols: f64 = coupling
        .columns()
        .into_iter()
        .zip(b.iter())
        .map(|(c, &bj)| (c.sum() - bj).abs())
        .sum();
    rows.max(cols)
}

/// Parameters of the entropic solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    pub reg: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            reg: 0.01,
            max_iter: 5000,
            tol: 1e-7,
        }
    }
}

pub(crate) fn validate_marginal(name: &str, w: ArrayView1<f64>) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidMarginals(format!("{name} is empty")));
    }
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidMarginals(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let s = w.sum();
    if (s - 1.0).abs() > MARGINAL_SUM_TOL {
        return Err(Error::InvalidMarginals(format!("{name} sums to {s}")));
    }
    Ok(())
}

pub(crate) fn check_cost_shape(cost: ArrayView2<f64>, n: usize, m: usize) -> Result<()> {
    if cost.dim() != (n, m) {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix is {:?}, marginals are ({n}, {m})",
            cost.dim()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Pairwise Euclidean distances between the rows of `x` and `y`.
pub fn euclidean_cost(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = (x.nrows(), y.nrows());
    let mut c = Array2::zeros((n, m));
    for (i, xi) in x.rows().into_iter().enumerate() {
        for (j, yj) in y.rows().into_iter().enumerate() {
            let d2: f64 = xi.iter().zip(yj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            c[[i, j]] = d2.sqrt();
        }
    }
    c
}

pub(crate) fn uniform(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

/// Entropic W1 plan between two uniformly weighted point clouds.
pub fn w1_empirical_plan(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::EmptySamples);
    }
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "clouds have dimensions {} and {}",
            x.ncols(),
            y.ncols()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let cost = euclidean_cost(x, y);
    sinkhorn(
        cost.view(),
        uniform(x.nrows()).view(),
        uniform(y.nrows()).view(),
        params,
    )
}

/// Wasserstein-1 distance between two point clouds, estimated with the
/// entropic solver under Euclidean ground cost and uniform weights.
///
/// The result is symmetric to the bit: the solve is always run with the
/// lexicographically smaller cloud on the row side.
pub fn w1_empirical(x: ArrayView2<f64>, y: ArrayView2<f64>, params: &SinkhornParams) -> Result<f64> {
    let (first, second) = if cloud_order(x, y) == std::cmp::Ordering::Greater {
        (y, x)
    } else {
        (x, y)
    };
    Ok(w1_empirical_plan(first, second, params)?.cost)
}

fn cloud_order(x: ArrayView2<f64>, y: ArrayView2<f64>) -> std::cmp::Ordering {
    x.nrows()
        .cmp(&y.nrows())
        .then_with(|| {
            x.iter()
                .zip(y.iter())
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

/// Target-reweighted sum of paired sub-domain distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubdomainDiscrepancy {
    pub value: f64,
    /// Per-pair W1, `None` where either side was empty.
    pub per_pair: Vec<Option<f64>>,
    pub skipped: usize,
}

/// `Σ_k w_T[k] · W1(source_parts[k], target_parts[k])`.
///
/// Pairs with an empty side contribute zero and are counted in `skipped`.
pub fn weighted_subdomain_w1(
    source_parts: &[Array2<f64>],
    target_parts: &[Array2<f64>],
    w_t: &ClassWeights,
    params: &SinkhornParams,
) -> Result<SubdomainDiscrepancy> {
    if source_parts.len() != target_parts.len() || source_parts.len() != w_t.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} source parts, {} target parts, {} weights",
            source_parts.len(),
            target_parts.len(),
            w_t.len()
        )));
    }
    let mut value = 0.0;
    let mut per_pair = Vec::with_capacity(source_parts.len());
    let mut skipped = 0;
    for (k, (s, t)) in source_parts.iter().zip(target_parts).enumerate() {
        if s.nrows() == 0 || t.nrows() == 0 {
            skipped += 1;
            per_pair.push(None);
            continue;
        }
        let d = w1_empirical(s.view(), t.view(), params)?;
        value += w_t[k] * d;
        per_pair.push(Some(d));
    }
    if skipped == source_parts.len() {
        return Err(Error::NoAlignedSubdomains);
    }
    Ok(SubdomainDiscrepancy {
        value,
        per_pair,
        skipped,
    })
}

/// Splits the rows of `x` by class id into `k` matrices.
pub fn split_by_class(x: ArrayView2<f64>, labels: &[usize], k: usize) -> Vec<Array2<f64>> {
    let mut idx: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        if l < k {
            idx[l].push(i);
        }
    }
    idx.into_iter()
        .map(|rows| x.select(ndarray::Axis(0), &rows))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn translated_clouds_are_one_apart() {
        let x = Array2::<f64>::zeros((200, 3));
        let mut y = Array2::<f64>::zeros((200, 3));
        y.column_mut(0).fill(1.0);
        let d = w1_empirical(x.view(), y.view(), &SinkhornParams::default()).unwrap();
        assert!((d - 1.0).abs() < 0.05, "{d}");
    }

    #[test]
    fn identical_cloud_within_entropic_bias() {
        let x = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5], [3.0, 3.0]];
        let p = SinkhornParams {
            reg: 0.01,
            ..Default::default()
        };
        let d = w1_empirical(x.view(), x.view(), &p).unwrap();
        assert!(d <= p.reg * (4f64).ln() + 1e-6, "{d}");
    }

    #[test]
    fn w1_empirical_is_exactly_symmetric() {
        let x = array![[0.0], [0.3], [1.7]];
        let y = array![[0.2], [2.0]];
        let p = SinkhornParams::default();
        let a = w1_empirical(x.view(), y.view(), &p).unwrap();
        let b = w1_empirical(y.view(), x.view(), &p).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn w1_empirical_rejects_dimension_mismatch() {
        let x = Array2::<f64>::zeros((2, 2));
        let y = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            w1_empirical(x.view(), y.view(), &SinkhornParams::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn weighted_subdomain_skips_empty_pairs() {
        let s = vec![array![[0.0], [0.1]], Array2::zeros((0, 1))];
        let t = vec![array![[1.0], [1.1]], array![[4.0]]];
        let w = ClassWeights::new(vec![0.5, 0.5]).unwrap();
        let r = weighted_subdomain_w1(&s, &t, &w, &SinkhornParams::default()).unwrap();
        assert_eq!(r.skipped, 1);
        assert!(r.per_pair[1].is_none());
        assert!((r.value - 0.5).abs() < 0.02, "{}", r.value);
    }

    #[test]
    fn weighted_subdomain_all_empty_is_an_error() {
        let s = vec![Array2::<f64>::zeros((0, 1))];
        let t = vec![array![[1.0]]];
        let w = ClassWeights::new(vec![1.0]).unwrap();
        let err = weighted_subdomain_w1(&s, &t, &w, &SinkhornParams::default()).unwrap_err();
        assert_eq!(err.to_string(), "no aligned sub-domains");
    }

    #[test]
    fn weighted_subdomain_single_pair_matches_w1() {
        let s = array![[0.0, 0.0], [1.0, 0.5], [0.3, 0.2]];
        let t = array![[0.5, 0.1], [1.2, 0.9]];
        let p = SinkhornParams::default();
        let w = ClassWeights::new(vec![1.0]).unwrap();
        let r = weighted_subdomain_w1(&[s.clone()], &[t.clone()], &w, &p).unwrap();
        let d = w1_empirical(s.view(), t.view(), &p).unwrap();
        assert_eq!(r.value, d);
    }
}
