//! Seeded generators for label-shifted classification tasks, dataset I/O and
//! class-proportion resampling.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ot::{sample_gmm, w1_empirical, GaussianComponent, GaussianMixture, SinkhornParams};
use crate::{ClassWeights, Error, Result};

/// A feature matrix with optional class labels in `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    k: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Option<Vec<usize>>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("class count must be positive".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(l) = &labels {
            if l.len() != features.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} rows but {} labels",
                    features.nrows(),
                    l.len()
                )));
            }
            if let Some(&bad) = l.iter().find(|&&y| y >= k) {
                return Err(Error::InvalidArgument(format!(
                    "label {bad} out of range for {k} classes"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            k,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an error when the dataset is unlabeled.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::InvalidArgument("dataset has no labels".into()))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn class_counts(&self) -> Option<Vec<usize>> {
        self.labels().map(|l| {
            let mut c = vec![0; self.k];
            for &y in l {
                c[y] += 1;
            }
            c
        })
    }

    /// Rows of class `c`.
    pub fn class_features(&self, c: usize) -> Result<Array2<f64>> {
        let l = self.require_labels()?;
        let rows: Vec<usize> = (0..l.len()).filter(|&i| l[i] == c).collect();
        Ok(self.features.select(Axis(0), &rows))
    }

    /// Writes `f0,…,f{d-1}[,label]` with a header row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        out.write_record(&header).map_err(csv_err)?;
        for (i, row) in self.features.rows().into_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_csv`].
    ///
    /// `k` defaults to one more than the largest label, or 1 when unlabeled.
    pub fn read_csv<R: Read>(r: R, k: Option<usize>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        let labeled = names.last() == Some(&"label");
        let d = names.len() - usize::from(labeled);
        if d == 0 {
            return Err(Error::Format("no feature columns".into()));
        }
        for (j, name) in names.iter().take(d).enumerate() {
            if *name != format!("f{j}") {
                return Err(Error::Format(format!(
                    "column {j} is named {name:?}, expected \"f{j}\""
                )));
            }
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != names.len() {
                return Err(Error::Format(format!(
                    "row {} has {} fields, expected {}",
                    line + 1,
                    rec.len(),
                    names.len()
                )));
            }
            for field in rec.iter().take(d) {
                values.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("row {}: {field:?}: {e}", line + 1))
                })?);
            }
            if labeled {
                let field = rec[d].trim();
                labels.push(field.parse::<usize>().map_err(|e| {
                    Error::Format(format!("row {} label {field:?}: {e}", line + 1))
                })?);
            }
        }
        let n = values.len() / d;
        let features =
            Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(e.to_string()))?;
        let k = k.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        Self::new(features, labeled.then_some(labels), k)
    }

    pub fn load_csv(path: &Path, k: Option<usize>) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(file), k)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Sidecar description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub generator: String,
    pub params: serde_json::Value,
}

impl DatasetManifest {
    pub fn describe(data: &Dataset, seed: u64, generator: &str, params: serde_json::Value) -> Self {
        Self {
            k: data.k(),
            d: data.dim(),
            n: data.len(),
            seed,
            generator: generator.into(),
            params,
        }
    }
}

/// Independent sub-seeds for the source and target draws.
fn split_seed(rng: &mut ChaCha8Rng) -> (u64, u64) {
    (rng.random(), rng.random())
}

fn draw(mix: &GaussianMixture, n: usize, seed: u64) -> Result<Dataset> {
    let (x, labels) = sample_gmm(mix, n, seed)?;
    Dataset::new(x, Some(labels), mix.len())
}

/// Source and target mixtures of the two-cluster 1-D task.
pub fn figure1_mixtures(sigma: f64) -> Result<(GaussianMixture, GaussianMixture)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let mix = |w: [f64; 2], m: [f64; 2]| {
        GaussianMixture::new(
            ClassWeights::new(w.to_vec())?,
            vec![
                GaussianComponent::isotropic(vec![m[0]], sigma)?,
                GaussianComponent::isotropic(vec![m[1]], sigma)?,
            ],
        )
    };
    Ok((mix([0.7, 0.3], [-1.5, 1.5])?, mix([0.3, 0.7], [-1.4, 1.6])?))
}

/// Two 1-D Gaussian clusters per domain with opposite class proportions and
/// slightly shifted centres. Labels are the generating component.
pub fn make_figure1_task(sigma: f64, n_per_domain: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_per_domain < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples per domain".into()));
    }
    let (mix_s, mix_t) = figure1_mixtures(sigma)?;
    let (seed_s, seed_t) = split_seed(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((draw(&mix_s, n_per_domain, seed_s)?, draw(&mix_t, n_per_domain, seed_t)?))
}

/// Parameters of [`make_shifted_gmm`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGmmSpec {
    pub k: usize,
    pub d: usize,
    pub mean_separation: f64,
    pub target_mean_shift: f64,
    pub source_props: ClassWeights,
    pub target_props: ClassWeights,
    pub n_per_domain: usize,
    pub sigma: f64,
}

/// Number of regeneration attempts before the paired-distance audit gives up.
pub const AUDIT_RETRIES: usize = 10;
const AUDIT_SAMPLES: usize = 200;

impl ShiftedGmmSpec {
    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("K and d must be positive".into()));
        }
        if self.source_props.len() != self.k || self.target_props.len() != self.k {
            return Err(Error::InvalidWeights(format!(
                "proportions must have {} entries",
                self.k
            )));
        }
        if !(self.mean_separation > 0.0 && self.mean_separation.is_finite()) {
            return Err(Error::InvalidArgument("mean_separation must be positive".into()));
        }
        if !(self.target_mean_shift >= 0.0 && self.target_mean_shift.is_finite()) {
            return Err(Error::InvalidArgument("target_mean_shift must be nonnegative".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
        }
        if self.n_per_domain == 0 {
            return Err(Error::InvalidArgument("n_per_domain must be positive".into()));
        }
        Ok(())
    }

    /// Class means on an integer grid of side `ceil(K^(1/d))`, scaled by the
    /// separation. Class `c` sits at the base-`side` digits of `c`.
    pub fn source_means(&self) -> Vec<Array1<f64>> {
        let mut side = 1;
        while side_pow(side, self.d) < self.k {
            side += 1;
        }
        (0..self.k)
            .map(|c| {
                let mut rest = c;
                Array1::from_shape_fn(self.d, |_| {
                    let digit = rest % side;
                    rest /= side;
                    digit as f64 * self.mean_separation
                })
            })
            .collect()
    }

    /// Common offset applied to every target mean: length
    /// `target_mean_shift`, pointing from the last class mean toward class 0
    /// (along the first axis when `K = 1`).
    pub fn target_offset(&self) -> Array1<f64> {
        let means = self.source_means();
        let mut dir = &means[0] - &means[self.k - 1];
        let norm = dir.dot(&dir).sqrt();
        if norm > 0.0 {
            dir /= norm;
        } else {
            dir.fill(0.0);
            dir[0] = 1.0;
        }
        dir * self.target_mean_shift
    }

    pub fn mixtures(&self) -> Result<(GaussianMixture, GaussianMixture)> {
        self.validate()?;
        let offset = self.target_offset();
        let means = self.source_means();
        let comps = |shift: Option<&Array1<f64>>| {
            means
                .iter()
                .map(|m| {
                    let m = shift.map_or_else(|| m.clone(), |s| m + s);
                    GaussianComponent::isotropic(m.to_vec(), self.sigma)
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok((
            GaussianMixture::new(self.source_props.clone(), comps(None)?)?,
            GaussianMixture::new(self.target_props.clone(), comps(Some(&offset))?)?,
        ))
    }
}

fn side_pow(side: usize, d: usize) -> usize {
    (0..d).try_fold(1usize, |acc, _| acc.checked_mul(side)).unwrap_or(usize::MAX)
}

/// K isotropic Gaussian classes in d dimensions, with a common mean offset
/// on the target and independent class proportions per domain.
///
/// Each draw is audited: for every class present on both sides, the
/// cross-domain W1 to its own class must be below the W1 to every other
/// target class. A failing draw is regenerated, up to [`AUDIT_RETRIES`]
/// attempts.
pub fn make_shifted_gmm(spec: &ShiftedGmmSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    let (mix_s, mix_t) = spec.mixtures()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..AUDIT_RETRIES {
        let (seed_s, seed_t) = split_seed(&mut rng);
        let source = draw(&mix_s, spec.n_per_domain, seed_s)?;
        let target = draw(&mix_t, spec.n_per_domain, seed_t)?;
        if paired_distance_audit(&source, &target)? {
            return Ok((source, target));
        }
    }
    Err(Error::AuditFailed(AUDIT_RETRIES))
}

/// True when every class's own cross-domain W1 is strictly the smallest
/// among its distances to the target classes.
pub fn paired_distance_audit(source: &Dataset, target: &Dataset) -> Result<bool> {
    let params = SinkhornParams {
        reg: 0.05,
        max_iter: 20_000,
        tol: 1e-5,
    };
    let k = source.k();
    let head = |x: Array2<f64>| {
        let n = x.nrows().min(AUDIT_SAMPLES);
        x.slice(ndarray::s![..n, ..]).to_owned()
    };
    let src: Vec<_> = (0..k).map(|c| source.class_features(c).map(head)).collect::<Result<_>>()?;
    let tgt: Vec<_> = (0..k).map(|c| target.class_features(c).map(head)).collect::<Result<_>>()?;
    for c in 0..k {
        if src[c].nrows() == 0 || tgt[c].nrows() == 0 {
            continue;
        }
        let paired = w1_empirical(src[c].view(), tgt[c].view(), &params)?;
        for (c2, t) in tgt.iter().enumerate() {
            if c2 != c && t.nrows() > 0 && w1_empirical(src[c].view(), t.view(), &params)? <= paired {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Resamples with replacement within each class so that class `c` has
/// `round(n · props[c])` rows, then shuffles.
pub fn resample_with_props(data: &Dataset, props: &ClassWeights, n: usize, seed: u64) -> Result<Dataset> {
    let labels = data.require_labels()?;
    if props.len() != data.k() {
        return Err(Error::InvalidWeights(format!(
            "{} proportions for {} classes",
            props.len(),
            data.k()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mut by_class = vec![Vec::new(); data.k()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (c, pool) in by_class.iter().enumerate() {
        let want = (n as f64 * props[c]).round() as usize;
        if want == 0 {
            continue;
        }
        if pool.is_empty() {
            return Err(Error::ClassAbsent(c));
        }
        rows.extend((0..want).map(|_| pool[rng.random_range(0..pool.len())]));
    }
    rows.shuffle(&mut rng);
    let new_labels = rows.iter().map(|&i| labels[i]).collect();
    Dataset::new(data.features.select(Axis(0), &rows), Some(new_labels), data.k())
}
