use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{ot_exact_discrete, w1_empirical, SinkhornParams, TransportPlan};
use crate::bounds::ClassWeights;
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-9;
const EIGEN_TOL: f64 = 1e-9;

/// A multivariate normal component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawComponent", into = "RawComponent")]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawComponent {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl TryFrom<RawComponent> for GaussianComponent {
    type Error = Error;

    fn try_from(raw: RawComponent) -> Result<Self> {
        GaussianComponent::new(raw.mean, raw.covariance)
    }
}

impl From<GaussianComponent> for RawComponent {
    fn from(c: GaussianComponent) -> Self {
        let d = c.dim();
        RawComponent {
            mean: c.mean.iter().copied().collect(),
            covariance: (0..d)
                .map(|i| (0..d).map(|j| c.covariance[(i, j)]).collect())
                .collect(),
        }
    }
}

impl GaussianComponent {
    /// Builds a component from a mean and a row-major covariance.
    pub fn new(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("component has zero dimension".into()));
        }
        if covariance.len() != d || covariance.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "mean has dimension {d}, covariance is not {d}x{d}"
            )));
        }
        let flat: Vec<f64> = covariance.into_iter().flatten().collect();
        let cov = DMatrix::from_row_slice(d, d, &flat);
        Self::from_parts(DVector::from_vec(mean), cov)
    }

    /// Isotropic component `N(mean, σ² I)`.
    pub fn isotropic(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        let d = mean.len();
        let cov = DMatrix::from_diagonal_element(d, d, sigma * sigma);
        Self::from_parts(DVector::from_vec(mean), cov)
    }

    fn from_parts(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.iter().chain(covariance.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let d = mean.len();
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        let eig = covariance.clone().symmetric_eigenvalues();
        if eig.iter().any(|&l| l < -EIGEN_TOL) {
            return Err(Error::NotPositiveSemidefinite(0));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }
}

/// Weighted mixture of Gaussian components sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct GaussianMixture {
    weights: ClassWeights,
    components: Vec<GaussianComponent>,
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    weights: ClassWeights,
    components: Vec<GaussianComponent>,
}

impl TryFrom<RawMixture> for GaussianMixture {
    type Error = Error;

    fn try_from(raw: RawMixture) -> Result<Self> {
        GaussianMixture::new(raw.weights, raw.components)
    }
}

impl From<GaussianMixture> for RawMixture {
    fn from(m: GaussianMixture) -> Self {
        RawMixture {
            weights: m.weights,
            components: m.components,
        }
    }
}

impl GaussianMixture {
    pub fn new(weights: ClassWeights, components: Vec<GaussianComponent>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let Some(d) = components.first().map(GaussianComponent::dim) else {
            return Err(Error::InvalidArgument("mixture has no components".into()));
        };
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch(
                "mixture components differ in dimension".into(),
            ));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &ClassWeights {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Largest component covariance trace.
    pub fn max_trace(&self) -> f64 {
        self.components
            .iter()
            .map(GaussianComponent::trace)
            .fold(0.0, f64::max)
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), 1e-14, 10_000).ok_or(Error::SpdSqrtFailure)?;
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Bures–Wasserstein distance between two Gaussians:
/// `W2² = ‖m₁ − m₂‖² + tr(Σ₁ + Σ₂ − 2 (Σ₁^½ Σ₂ Σ₁^½)^½)`.
///
/// By Jensen this upper-bounds the Wasserstein-1 distance.
pub fn gaussian_w2(p: &GaussianComponent, q: &GaussianComponent) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch(format!(
            "components have dimensions {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let mean_sq = (&p.mean - &q.mean).norm_squared();
    let root_p = psd_sqrt(&p.covariance)?;
    let mut cross = &root_p * &q.covariance * &root_p;
    cross = (&cross + cross.transpose()) * 0.5;
    let cross_root = psd_sqrt(&cross)?;
    let bures = p.covariance.trace() + q.covariance.trace() - 2.0 * cross_root.trace();
    Ok((mean_sq + bures.max(0.0)).sqrt())
}

/// How component-to-component distances are obtained inside [`mw1_gmm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairwiseMode {
    /// Closed-form Bures–Wasserstein distances, an upper bound on W1.
    AnalyticW2,
    /// Entropic W1 between `n` samples drawn from each component.
    SampledSinkhorn {
        n: usize,
        params: SinkhornParams,
        seed: u64,
    },
}

/// Mixture distance: the cheapest coupling of the two weight vectors when
/// moving mass from component `k` to component `k'` costs their distance.
pub fn mw1_gmm(
    mix_s: &GaussianMixture,
    mix_t: &GaussianMixture,
    mode: PairwiseMode,
) -> Result<(f64, TransportPlan)> {
    if mix_s.dim() != mix_t.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mixtures have dimensions {} and {}",
            mix_s.dim(),
            mix_t.dim()
        )));
    }
    let (ks, kt) = (mix_s.len(), mix_t.len());
    let mut cost = Array2::zeros((ks, kt));
    match mode {
        PairwiseMode::AnalyticW2 => {
            for (i, p) in mix_s.components.iter().enumerate() {
                for (j, q) in mix_t.components.iter().enumerate() {
                    cost[[i, j]] = gaussian_w2(p, q)?;
                }
            }
        }
        PairwiseMode::SampledSinkhorn { n, params, seed } => {
            let draw = |c: &GaussianComponent, s: u64| -> Result<Array2<f64>> {
                let single = GaussianMixture::new(ClassWeights::uniform(1), vec![c.clone()])?;
                Ok(sample_gmm(&single, n, s)?.0)
            };
            let src: Vec<_> = mix_s
                .components
                .iter()
                .enumerate()
                .map(|(i, c)| draw(c, seed.wrapping_add(i as u64)))
                .collect::<Result<_>>()?;
            let tgt: Vec<_> = mix_t
                .components
                .iter()
                .enumerate()
                .map(|(j, c)| draw(c, seed.wrapping_add((ks + j) as u64)))
                .collect::<Result<_>>()?;
            for (i, x) in src.iter().enumerate() {
                for (j, y) in tgt.iter().enumerate() {
                    cost[[i, j]] = w1_empirical(x.view(), y.view(), &params)?;
                }
            }
        }
    }
    let plan = ot_exact_discrete(
        cost.view(),
        mix_s.weights.as_array().view(),
        mix_t.weights.as_array().view(),
    )?;
    Ok((plan.cost, plan))
}

/// Factor `L` with `L Lᵀ = Σ`: Cholesky when positive definite, otherwise the
/// symmetric square root of the (clamped) eigendecomposition.
fn covariance_factor(c: &GaussianComponent, index: usize) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.covariance.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = SymmetricEigen::new(c.covariance.clone());
    if eig.eigenvalues.iter().any(|&l| l < -EIGEN_TOL) {
        return Err(Error::NotPositiveSemidefinite(index));
    }
    psd_sqrt(&c.covariance)
}

/// Ancestral sampling: a categorical draw over the weights, then a normal
/// draw from the chosen component. Returns the samples and component labels.
pub fn sample_gmm(mix: &GaussianMixture, n: usize, seed: u64) -> Result<(Array2<f64>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let d = mix.dim();
    let factors: Vec<_> = mix
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| covariance_factor(c, i))
        .collect::<Result<_>>()?;
    let picker = WeightedIndex::new(mix.weights.as_slice())
        .map_err(|e| Error::InvalidWeights(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    let mut z = DVector::zeros(d);
    for mut row in x.rows_mut() {
        let k = picker.sample(&mut rng);
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let v = &mix.components[k].mean + &factors[k] * &z;
        for (r, val) in row.iter_mut().zip(v.iter()) {
            *r = *val;
        }
        labels.push(k);
    }
    Ok((x, labels))
}
