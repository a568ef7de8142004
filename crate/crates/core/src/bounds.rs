//! Empirical estimators for the generalization-bound terms.
//!
//! The overall bound pairs the source risk with the W1 distance between the
//! pooled source and target features. The sub-domain bound reweights the
//! per-class source risks by the target class weights and replaces the pooled
//! distance with the target-weighted sum of per-class distances. Neither
//! bound's ideal joint-risk term is computable, so [`BoundReport`] carries the
//! partial bounds only.

use std::ops::Index;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ot::{split_by_class, w1_empirical, weighted_subdomain_w1, SinkhornParams};
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("no classes".into()));
        }
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "entries must be finite and non-negative: {w:?}"
            )));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidWeights(format!("entries sum to {s}")));
        }
        Ok(Self(w))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Normalises non-negative masses onto the simplex.
    pub fn normalized(masses: Vec<f64>) -> Result<Self> {
        let s: f64 = masses.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidWeights(format!("total mass {s}")));
        }
        Self::new(masses.into_iter().map(|m| m / s).collect())
    }

    /// Empirical class proportions of `labels` over `k` classes.
    pub fn from_labels(labels: &[usize], k: usize) -> Result<Self> {
        let mut counts = vec![0.0; k];
        for &l in labels {
            if l >= k {
                return Err(Error::InvalidPartition(format!("label {l} >= K = {k}")));
            }
            counts[l] += 1.0;
        }
        Self::normalized(counts)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_array(&self) -> Array1<f64> {
        Array1::from(self.0.clone())
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl Index<usize> for ClassWeights {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

impl TryFrom<Vec<f64>> for ClassWeights {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<ClassWeights> for Vec<f64> {
    fn from(w: ClassWeights) -> Self {
        w.0
    }
}

/// Assignment of samples to `K` sub-domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubdomainPartition {
    assignments: Vec<usize>,
    k: usize,
}

impl SubdomainPartition {
    pub fn new(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPartition("K must be positive".into()));
        }
        if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
            return Err(Error::InvalidPartition(format!(
                "assignment {bad} out of range for K = {k}"
            )));
        }
        Ok(Self { assignments, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &a in &self.assignments {
            c[a] += 1;
        }
        c
    }
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(())
}

/// Empirical 0–1 risk.
pub fn source_risk(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Per-sub-domain 0–1 risks.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainRisks {
    pub risks: Vec<f64>,
    /// `true` where the sub-domain had no samples (its risk is reported as 0).
    pub empty: Vec<bool>,
}

pub fn subdomain_risks(
    predictions: &[usize],
    labels: &[usize],
    partition: &SubdomainPartition,
) -> Result<SubdomainRisks> {
    check_lengths(predictions, labels)?;
    if partition.len() != labels.len() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} of {} samples",
            partition.len(),
            labels.len()
        )));
    }
    let k = partition.k();
    let mut wrong = vec![0usize; k];
    let mut total = vec![0usize; k];
    for ((p, l), &a) in predictions.iter().zip(labels).zip(partition.assignments()) {
        total[a] += 1;
        if p != l {
            wrong[a] += 1;
        }
    }
    let risks = wrong
        .iter()
        .zip(&total)
        .map(|(&w, &t)| if t == 0 { 0.0 } else { w as f64 / t as f64 })
        .collect();
    Ok(SubdomainRisks {
        risks,
        empty: total.iter().map(|&t| t == 0).collect(),
    })
}

/// `|γ_S − Σ_k w_S[k] γ_S[k]|` with `w_S` the empirical partition proportions.
/// The identity is exact for empirical measures, so this is rounding error.
pub fn check_decomposition(
    predictions: &[usize],
    labels: &[usize],
    partition: &SubdomainPartition,
) -> Result<f64> {
    let overall = source_risk(predictions, labels)?;
    let per = subdomain_risks(predictions, labels, partition)?;
    let n = labels.len() as f64;
    let recomposed: f64 = partition
        .counts()
        .iter()
        .zip(&per.risks)
        .map(|(&c, &r)| (c as f64 / n) * r)
        .sum();
    Ok((overall - recomposed).abs())
}

/// Trace of the unbiased sample covariance of the rows of `x`.
pub fn covariance_trace(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 0.0;
    }
    x.columns()
        .into_iter()
        .map(|c| {
            let mean = c.sum() / n as f64;
            c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        })
        .sum()
}

/// `4 √ε` with `ε` the largest per-part covariance trace.
///
/// Parts with fewer than two samples have zero trace.
pub fn delta_c(parts: &[Array2<f64>]) -> Result<f64> {
    if parts.iter().all(|p| p.nrows() == 0) {
        return Err(Error::EmptySamples);
    }
    let eps = parts
        .iter()
        .map(|p| covariance_trace(p.view()))
        .fold(0.0, f64::max);
    Ok(4.0 * eps.sqrt())
}

/// Partial overall and sub-domain bounds on one feature snapshot.
///
/// `eps_g_partial = gamma_s + disc_overall` and
/// `eps_c_partial = gamma_s_weighted + disc_weighted`; the ideal joint-risk
/// terms are not estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub gamma_s: f64,
    pub gamma_s_weighted: f64,
    pub disc_overall: f64,
    pub disc_weighted: f64,
    pub delta_c: f64,
    pub eps_g_partial: f64,
    pub eps_c_partial: f64,
    pub skipped_subdomains: usize,
}

impl BoundReport {
    pub fn new(
        gamma_s: f64,
        gamma_s_weighted: f64,
        disc_overall: f64,
        disc_weighted: f64,
        delta_c: f64,
        skipped_subdomains: usize,
    ) -> Self {
        Self {
            gamma_s,
            gamma_s_weighted,
            disc_overall,
            disc_weighted,
            delta_c,
            eps_g_partial: gamma_s + disc_overall,
            eps_c_partial: gamma_s_weighted + disc_weighted,
            skipped_subdomains,
        }
    }

    /// Whether `eps_c_partial ≤ eps_g_partial + delta_c + slack`.
    pub fn ordering_holds(&self, slack: f64) -> bool {
        self.eps_c_partial <= self.eps_g_partial + self.delta_c + slack
    }
}

/// Features and labels in a shared representation space.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs<'a> {
    pub source_features: ArrayView2<'a, f64>,
    pub source_predictions: &'a [usize],
    pub source_labels: &'a [usize],
    pub target_features: ArrayView2<'a, f64>,
    /// Target sub-domains come from predicted labels, never from ground truth.
    pub target_pseudo_labels: &'a [usize],
    pub w_t: &'a ClassWeights,
}

pub fn bound_report(inputs: BoundInputs<'_>, params: &SinkhornParams) -> Result<BoundReport> {
    let k = inputs.w_t.len();
    let BoundInputs {
        source_features,
        source_predictions,
        source_labels,
        target_features,
        target_pseudo_labels,
        w_t,
    } = inputs;
    if source_features.nrows() != source_labels.len()
        || target_features.nrows() != target_pseudo_labels.len()
    {
        return Err(Error::DimensionMismatch(
            "feature rows and label counts differ".into(),
        ));
    }

    let gamma_s = source_risk(source_predictions, source_labels)?;
    let partition = SubdomainPartition::new(source_labels.to_vec(), k)?;
    let per = subdomain_risks(source_predictions, source_labels, &partition)?;
    let gamma_s_weighted: f64 = per.risks.iter().enumerate().map(|(c, r)| w_t[c] * r).sum();

    SubdomainPartition::new(target_pseudo_labels.to_vec(), k)?;
    let source_parts = split_by_class(source_features, source_labels, k);
    let target_parts = split_by_class(target_features, target_pseudo_labels, k);

    let disc_overall = w1_empirical(source_features, target_features, params)?;
    let weighted = weighted_subdomain_w1(&source_parts, &target_parts, w_t, params)?;
    let all_parts: Vec<Array2<f64>> = source_parts.into_iter().chain(target_parts).collect();
    let dc = delta_c(&all_parts)?;

    Ok(BoundReport::new(
        gamma_s,
        gamma_s_weighted,
        disc_overall,
        weighted.value,
        dc,
        weighted.skipped,
    ))
}
