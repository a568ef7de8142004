use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::ot::{entropic_objective, w1_empirical_plan, SinkhornParams};
use crate::{ClassWeights, Error, Result};

/// Scalar loss with its gradient with respect to one input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Scalar loss over a source/target pair of feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyLoss {
    /// `Σ_k w_T[k] · <π_k, C_k>`, the transport cost of each entropic plan.
    pub value: f64,
    /// Same sum with the entropy term included. The returned gradients are
    /// exact for this quantity.
    pub entropic_value: f64,
    pub grad_s: Array2<f64>,
    pub grad_t: Array2<f64>,
    pub skipped: usize,
}

/// Per-class loss with gradients laid out like its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub value: f64,
    pub grad_s: Vec<Array2<f64>>,
    pub grad_t: Vec<Array2<f64>>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_y: f64,
    pub lambda_d: f64,
    pub lambda_c: f64,
    pub lambda_a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_y: f64,
    pub l_d: f64,
    pub l_intra: f64,
    pub l_inter: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(l_y: f64, l_d: f64, l_intra: f64, l_inter: f64, w: &LossWeights) -> Self {
        Self {
            l_y,
            l_d,
            l_intra,
            l_inter,
            total: w.lambda_y * l_y + w.lambda_d * l_d + w.lambda_c * l_intra + w.lambda_a * l_inter,
        }
    }
}

fn check_labels(n: usize, labels: &[usize], k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} rows but {} labels",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

fn class_rows(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        rows[l].push(i);
    }
    rows
}

/// Row-wise softmax cross-entropy against integer labels.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits.nrows(), labels, logits.ncols())?;
    Ok(logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(r, &y)| {
            let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + r.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            lse - r[y]
        })
        .collect())
}

/// `(1/n) Σ_i r(y_i) · CE(logits_i, y_i)` with `r(k) = min(w_T[k] / w_S[k], ratio_cap)`.
///
/// Every source weight must be at least `floor`.
pub fn loss_classification_weighted(
    logits: ArrayView2<f64>,
    labels: &[usize],
    w_t: &ClassWeights,
    w_s: &ClassWeights,
    floor: f64,
    ratio_cap: f64,
) -> Result<LossGrad> {
    let (n, k) = logits.dim();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    if w_t.len() != k || w_s.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{k} logits per row, weights of length {} and {}",
            w_t.len(),
            w_s.len()
        )));
    }
    if let Some((class, &weight)) = w_s.as_slice().iter().enumerate().find(|(_, &w)| w < floor) {
        return Err(Error::DegenerateSourceWeight { class, weight });
    }
    let ce = cross_entropy(logits, labels)?;
    let ratio: Vec<f64> = (0..k).map(|c| (w_t[c] / w_s[c]).min(ratio_cap)).collect();
    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, k));
    let mut value = 0.0;
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let r = ratio[y];
        value += r * ce[i];
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exp: Array1<f64> = row.mapv(|v| (v - max).exp());
        let z = exp.sum();
        for c in 0..k {
            let onehot = if c == y { 1.0 } else { 0.0 };
            grad[[i, c]] = r * inv_n * (exp[c] / z - onehot);
        }
    }
    Ok(LossGrad {
        value: value * inv_n,
        grad,
    })
}

/// `Σ_k w_T[k] · W1(source class k, target pseudo-class k)` with entropic
/// plans and Euclidean ground cost.
///
/// Gradients hold each converged plan fixed:
/// `∂/∂x_i = w_T[k] Σ_j π_ij (x_i − y_j) / ‖x_i − y_j‖`.
/// Classes with an empty side are skipped and counted; if every class is
/// skipped the loss is zero.
pub fn loss_discrepancy_weighted(
    feat_s: ArrayView2<f64>,
    labels_s: &[usize],
    feat_t: ArrayView2<f64>,
    labels_t: &[usize],
    w_t: &ClassWeights,
    params: &SinkhornParams,
) -> Result<DiscrepancyLoss> {
    let k = w_t.len();
    if feat_s.ncols() != feat_t.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "feature widths {} and {}",
            feat_s.ncols(),
            feat_t.ncols()
        )));
    }
    check_labels(feat_s.nrows(), labels_s, k)?;
    check_labels(feat_t.nrows(), labels_t, k)?;
    let rows_s = class_rows(labels_s, k);
    let rows_t = class_rows(labels_t, k);
    let mut out = DiscrepancyLoss {
        value: 0.0,
        entropic_value: 0.0,
        grad_s: Array2::zeros(feat_s.dim()),
        grad_t: Array2::zeros(feat_t.dim()),
        skipped: 0,
    };
    for c in 0..k {
        let (is, jt) = (&rows_s[c], &rows_t[c]);
        if is.is_empty() || jt.is_empty() {
            out.skipped += 1;
            continue;
        }
        let w = w_t[c];
        if w == 0.0 {
            continue;
        }
        let xs = feat_s.select(Axis(0), is);
        let xt = feat_t.select(Axis(0), jt);
        let plan = w1_empirical_plan(xs.view(), xt.view(), params)?;
        out.value += w * plan.cost;
        out.entropic_value += w * entropic_objective(&plan, params.reg);
        for (a, &i) in is.iter().enumerate() {
            for (b, &j) in jt.iter().enumerate() {
                let p = plan.coupling[[a, b]];
                if p == 0.0 {
                    continue;
                }
                let diff = &xs.row(a) - &xt.row(b);
                let dist = diff.dot(&diff).sqrt();
                if dist == 0.0 {
                    continue;
                }
                let step = diff * (w * p / dist);
                let mut gs = out.grad_s.row_mut(i);
                gs += &step;
                let mut gt = out.grad_t.row_mut(j);
                gt -= &step;
            }
        }
    }
    Ok(out)
}

/// `(1/n²) Σ_{i,j} [same_ij ‖x_i − x_j‖² + (1 − same_ij) max(0, m − ‖x_i − x_j‖²)]`
/// over all ordered pairs of the batch.
pub fn loss_intra(features: ArrayView2<f64>, labels: &[usize], margin: f64) -> Result<LossGrad> {
    let n = features.nrows();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("margin must be positive, got {margin}")));
    }
    check_labels(n, labels, usize::MAX)?;
    let mut grad = Array2::zeros(features.dim());
    let mut value = 0.0;
    // Each unordered pair appears twice among the ordered pairs.
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &features.row(i) - &features.row(j);
            let sq = diff.dot(&diff);
            let sign = if labels[i] == labels[j] {
                value += 2.0 * sq;
                1.0
            } else if sq < margin {
                value += 2.0 * (margin - sq);
                -1.0
            } else {
                continue;
            };
            let step = diff * (4.0 * sign);
            let mut gi = grad.row_mut(i);
            gi += &step;
            let mut gj = grad.row_mut(j);
            gj -= &step;
        }
    }
    let scale = 1.0 / (n * n) as f64;
    grad *= scale;
    Ok(LossGrad {
        value: value * scale,
        grad,
    })
}

/// Mean squared distance between source and target class centroids, over
/// classes that are non-empty on both sides.
pub fn loss_inter(source: &[Array2<f64>], target: &[Array2<f64>]) -> Result<PairLoss> {
    if source.len() != target.len() {
        return Err(Error::ClassCardinalityMismatch {
            source_classes: source.len(),
            target_classes: target.len(),
        });
    }
    if source.is_empty() {
        return Err(Error::InvalidArgument("no classes".into()));
    }
    let width = source[0].ncols();
    if source.iter().chain(target).any(|p| p.ncols() != width) {
        return Err(Error::DimensionMismatch("class parts differ in width".into()));
    }
    let mut out = PairLoss {
        value: 0.0,
        grad_s: source.iter().map(|p| Array2::zeros(p.dim())).collect(),
        grad_t: target.iter().map(|p| Array2::zeros(p.dim())).collect(),
        skipped: 0,
    };
    let active: Vec<usize> = (0..source.len())
        .filter(|&c| source[c].nrows() > 0 && target[c].nrows() > 0)
        .collect();
    out.skipped = source.len() - active.len();
    if active.is_empty() {
        return Ok(out);
    }
    let inv_k = 1.0 / active.len() as f64;
    for &c in &active {
        let (s, t) = (&source[c], &target[c]);
        let diff = s.mean_axis(Axis(0)).expect("non-empty") - t.mean_axis(Axis(0)).expect("non-empty");
        out.value += inv_k * diff.dot(&diff);
        let gs = &diff * (2.0 * inv_k / s.nrows() as f64);
        let gt = &diff * (-2.0 * inv_k / t.nrows() as f64);
        for mut r in out.grad_s[c].rows_mut() {
            r.assign(&gs);
        }
        for mut r in out.grad_t[c].rows_mut() {
            r.assign(&gt);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sk() -> SinkhornParams {
        SinkhornParams {
            reg: 0.01,
            max_iter: 20_000,
            tol: 1e-8,
        }
    }

    #[test]
    fn matching_weights_give_plain_cross_entropy() {
        let logits = array![[1.0, -0.5, 0.2], [0.0, 2.0, -1.0], [0.3, 0.3, 0.3]];
        let labels = [0, 1, 2];
        let w = ClassWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let l = loss_classification_weighted(logits.view(), &labels, &w, &w, 1e-3, 10.0).unwrap();
        let ce = cross_entropy(logits.view(), &labels).unwrap();
        let mean = ce.iter().sum::<f64>() / 3.0;
        assert!((l.value - mean).abs() < 1e-12);
    }

    #[test]
    fn ratio_scales_single_sample() {
        let logits = array![[0.4, -0.1]];
        let w_s = ClassWeights::new(vec![0.2, 0.8]).unwrap();
        let w_t = ClassWeights::new(vec![0.6, 0.4]).unwrap();
        let l = loss_classification_weighted(logits.view(), &[0], &w_t, &w_s, 1e-3, 10.0).unwrap();
        let ce = cross_entropy(logits.view(), &[0]).unwrap()[0];
        assert!((l.value - 3.0 * ce).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_cost_nothing() {
        let logits = array![[40.0, 0.0], [0.0, 40.0]];
        let w = ClassWeights::uniform(2);
        let l = loss_classification_weighted(logits.view(), &[0, 1], &w, &w, 1e-3, 10.0).unwrap();
        assert!(l.value <= 1e-6);
    }

    #[test]
    fn degenerate_source_weight_is_reported() {
        let w_s = ClassWeights::new(vec![0.9995, 0.0005]).unwrap();
        let w_t = ClassWeights::uniform(2);
        let err = loss_classification_weighted(array![[0.0, 0.0]].view(), &[0], &w_t, &w_s, 1e-3, 10.0)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateSourceWeight { class: 1, .. }));
    }

    #[test]
    fn ratio_is_capped() {
        let w_s = ClassWeights::new(vec![0.99, 0.01]).unwrap();
        let w_t = ClassWeights::new(vec![0.5, 0.5]).unwrap();
        let logits = array![[0.0, 0.0]];
        let l = loss_classification_weighted(logits.view(), &[1], &w_t, &w_s, 1e-3, 10.0).unwrap();
        assert!((l.value - 10.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_class_clouds_stay_within_entropic_bias() {
        let x = array![[0.0, 0.0], [1.0, 0.5], [-0.3, 2.0], [0.7, -1.0]];
        let labels = [0, 0, 1, 1];
        for w in [vec![0.5, 0.5], vec![1.0, 0.0], vec![0.1, 0.9]] {
            let w_t = ClassWeights::new(w).unwrap();
            let l = loss_discrepancy_weighted(x.view(), &labels, x.view(), &labels, &w_t, &sk())
                .unwrap();
            assert!(l.value <= 0.01 * 4f64.ln());
        }
    }

    #[test]
    fn translated_pair_costs_half_its_shift() {
        let src = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [6.0, 5.0]];
        let labels = [0, 0, 0, 1, 1];
        let mut tgt = src.clone();
        for i in 0..3 {
            tgt[[i, 0]] += 0.6;
            tgt[[i, 1]] -= 0.8;
        }
        let w_t = ClassWeights::uniform(2);
        let l = loss_discrepancy_weighted(src.view(), &labels, tgt.view(), &labels, &w_t, &sk())
            .unwrap();
        assert!((l.value - 0.5).abs() < 0.02, "{}", l.value);
    }

    #[test]
    fn discrepancy_skips_absent_classes() {
        let x = array![[0.0], [1.0]];
        let w_t = ClassWeights::uniform(2);
        let l = loss_discrepancy_weighted(x.view(), &[0, 0], x.view(), &[1, 1], &w_t, &sk()).unwrap();
        assert_eq!(l.skipped, 2);
        assert_eq!(l.value, 0.0);
        assert!(l.grad_s.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn intra_examples() {
        let same = loss_intra(array![[1.0, 2.0], [1.0, 2.0]].view(), &[0, 0], 5.0).unwrap();
        assert_eq!(same.value, 0.0);
        let apart = loss_intra(array![[0.0, 0.0], [1.0, 1.0]].view(), &[0, 1], 30.0).unwrap();
        assert!((apart.value - 14.0).abs() < 1e-12);
        let far = loss_intra(array![[0.0, 0.0], [3.0, 0.0]].view(), &[0, 1], 9.0).unwrap();
        assert_eq!(far.value, 0.0);
    }

    #[test]
    fn inter_examples() {
        let s = vec![array![[0.0, 0.0], [2.0, 0.0]], array![[1.0, 1.0]]];
        let same = loss_inter(&s, &s).unwrap();
        assert_eq!(same.value, 0.0);
        let one = loss_inter(&[array![[0.0, 0.0], [2.0, 2.0]]], &[array![[4.0, -2.0]]]).unwrap();
        assert!((one.value - (9.0 + 9.0)).abs() < 1e-12);
    }

    #[test]
    fn inter_skips_one_sided_classes() {
        let s = vec![array![[0.0]], Array2::zeros((0, 1))];
        let t = vec![array![[2.0]], array![[5.0]]];
        let l = loss_inter(&s, &t).unwrap();
        assert_eq!(l.skipped, 1);
        assert!((l.value - 4.0).abs() < 1e-12);
        let none = loss_inter(&[Array2::zeros((0, 1))], &[array![[1.0]]]).unwrap();
        assert_eq!((none.value, none.skipped), (0.0, 1));
    }

    #[test]
    fn bundle_total_reconstructs() {
        let w = LossWeights {
            lambda_y: 1.0,
            lambda_d: 0.3,
            lambda_c: 0.05,
            lambda_a: 2.0,
        };
        let b = LossBundle::new(0.7, 0.2, 3.1, 0.01, &w);
        assert!((b.total - (0.7 + 0.06 + 0.155 + 0.02)).abs() < 1e-12);
    }
}
