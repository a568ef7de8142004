//! Training driver: source pretraining, target class-weight estimation and
//! the three-group update loop.
//!
//! Three networks take part: a source encoder, a target encoder and a shared
//! classifier over encoder features. The source encoder and the classifier
//! descend the full objective; the target encoder descends everything except
//! the classification term.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, BoundInputs};
use crate::nn::{
    argmax_rows, backward, forward, infer, loss_classification_weighted,
    loss_discrepancy_weighted, loss_inter, loss_intra, sgd_momentum_step, softmax_rows,
    Activation, LossBundle, LossWeights, NetworkCheckpoint, NetworkParams, Velocity,
    CHECKPOINT_VERSION,
};
use crate::ot::{split_by_class, SinkhornParams};
use crate::{BoundReport, ClassWeights, Dataset, Error, Result};

/// How the target class weights are obtained during adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetWeightMode {
    /// Mean softmax of the target predictions, once per epoch.
    Estimated,
    /// Pinned to the source label distribution.
    MatchSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarsaConfig {
    pub lambda_y: f64,
    pub lambda_d: f64,
    pub lambda_c: f64,
    pub lambda_a: f64,
    pub margin: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub sinkhorn_reg: f64,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    pub weight_floor: f64,
    pub seed: u64,
    /// Hidden widths of each encoder.
    pub hidden: Vec<usize>,
    /// Width of the encoder output.
    pub feature_dim: usize,
    /// Upper limit on `w_T[k] / w_S[k]` inside the classification loss.
    pub ratio_cap: f64,
    pub target_weights: TargetWeightMode,
    /// Rows per domain used for the per-epoch bound snapshot; 0 disables it.
    pub bound_samples: usize,
}

impl Default for DarsaConfig {
    fn default() -> Self {
        Self {
            lambda_y: 1.0,
            lambda_d: 0.5,
            lambda_c: 0.05,
            lambda_a: 0.5,
            margin: 4.0,
            lr: 0.01,
            momentum: 0.5,
            batch_size: 128,
            pretrain_epochs: 10,
            epochs: 30,
            sinkhorn_reg: 0.05,
            sinkhorn_tol: 1e-3,
            sinkhorn_max_iter: 2000,
            weight_floor: 1e-3,
            seed: 0,
            hidden: vec![16],
            feature_dim: 8,
            ratio_cap: 10.0,
            target_weights: TargetWeightMode::Estimated,
            bound_samples: 300,
        }
    }
}

impl DarsaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.into()));
        let lambdas = [self.lambda_y, self.lambda_d, self.lambda_c, self.lambda_a];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("loss weights must be finite and nonnegative");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.sinkhorn_reg > 0.0 && self.sinkhorn_tol > 0.0) || self.sinkhorn_max_iter == 0 {
            return bad("sinkhorn settings must be positive");
        }
        if !(self.weight_floor > 0.0 && self.weight_floor < 1.0) {
            return bad("weight_floor must lie in (0, 1)");
        }
        if !(self.ratio_cap > 0.0) {
            return bad("ratio_cap must be positive");
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_y: self.lambda_y,
            lambda_d: self.lambda_d,
            lambda_c: self.lambda_c,
            lambda_a: self.lambda_a,
        }
    }

    pub fn sinkhorn(&self) -> SinkhornParams {
        SinkhornParams {
            reg: self.sinkhorn_reg,
            max_iter: self.sinkhorn_max_iter,
            tol: self.sinkhorn_tol,
        }
    }

    /// The same run with every alignment term off and target weights pinned
    /// to the source distribution.
    pub fn source_only(&self) -> Self {
        Self {
            lambda_d: 0.0,
            lambda_c: 0.0,
            lambda_a: 0.0,
            target_weights: TargetWeightMode::MatchSource,
            ..self.clone()
        }
    }
}

/// Source encoder, target encoder and the shared classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct DarsaModel {
    pub encoder_s: NetworkParams,
    pub encoder_t: NetworkParams,
    pub classifier: NetworkParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub encoder_s: NetworkCheckpoint,
    pub encoder_t: NetworkCheckpoint,
    pub classifier: NetworkCheckpoint,
}

impl DarsaModel {
    /// Fresh networks for `d` inputs and `k` classes. Both encoders start
    /// identical.
    pub fn init(d: usize, k: usize, config: &DarsaConfig) -> Result<Self> {
        let mut rng = rng_stream(config.seed, Stream::Init);
        let mut dims = vec![d];
        dims.extend(&config.hidden);
        dims.push(config.feature_dim);
        let encoder = NetworkParams::mlp(&dims, Activation::LeakyRelu, Activation::Identity, &mut rng)?;
        let classifier = NetworkParams::mlp(
            &[config.feature_dim, k],
            Activation::Identity,
            Activation::Identity,
            &mut rng,
        )?;
        Ok(Self {
            encoder_t: encoder.clone(),
            encoder_s: encoder,
            classifier,
        })
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            format_version: CHECKPOINT_VERSION,
            encoder_s: self.encoder_s.to_checkpoint(),
            encoder_t: self.encoder_t.to_checkpoint(),
            classifier: self.classifier.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &ModelCheckpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ck.format_version
            )));
        }
        Ok(Self {
            encoder_s: NetworkParams::from_checkpoint(&ck.encoder_s)?,
            encoder_t: NetworkParams::from_checkpoint(&ck.encoder_t)?,
            classifier: NetworkParams::from_checkpoint(&ck.classifier)?,
        })
    }

    pub fn predict_target(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        predict(&self.encoder_t, &self.classifier, x)
    }

    pub fn predict_source(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        predict(&self.encoder_s, &self.classifier, x)
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Init = 0,
    SourceBatches = 1,
    TargetBatches = 2,
    BoundSample = 3,
}

fn rng_stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Argmax of the classifier over encoder features; ties go to the lower id.
pub fn predict(
    encoder: &NetworkParams,
    classifier: &NetworkParams,
    x: ArrayView2<f64>,
) -> Result<Vec<usize>> {
    let z = infer(encoder, x)?;
    Ok(argmax_rows(infer(classifier, z.view())?.view()))
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Mean predicted class probability over the target, clamped below at
/// `floor` and renormalised.
pub fn estimate_target_weights(
    encoder_t: &NetworkParams,
    classifier: &NetworkParams,
    x_t: ArrayView2<f64>,
    floor: f64,
) -> Result<ClassWeights> {
    if x_t.nrows() == 0 {
        return Err(Error::EmptySamples);
    }
    let k = classifier.output_dim();
    if !(floor > 0.0 && floor * (k as f64) < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "floor {floor} is incompatible with {k} classes"
        )));
    }
    let z = infer(encoder_t, x_t)?;
    let probs = softmax_rows(infer(classifier, z.view())?.view());
    let mean = probs.mean_axis(Axis(0)).expect("non-empty");
    ClassWeights::normalized(mean.iter().map(|&p| p.max(floor)).collect())
}

/// One pass over the data in shuffled minibatches.
fn batches(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let b = batch.min(n);
    (0..n.div_ceil(b))
        .map(|_| index::sample(rng, n, b).into_vec())
        .collect()
}

struct GroupState {
    velocity_s: Velocity,
    velocity_c: Velocity,
    source_rng: ChaCha8Rng,
}

fn wrap(epoch: usize, batch: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Training {
        epoch,
        batch,
        cause: Box::new(e),
    }
}

/// One source minibatch epoch of plain cross-entropy on encoder and
/// classifier.
fn source_epoch(
    model: &mut DarsaModel,
    state: &mut GroupState,
    x: ArrayView2<f64>,
    y: &[usize],
    w_s: &ClassWeights,
    config: &DarsaConfig,
    epoch: usize,
) -> Result<()> {
    for (b, rows) in batches(&mut state.source_rng, x.nrows(), config.batch_size)
        .into_iter()
        .enumerate()
    {
        let mut step = || -> Result<()> {
            let xb = x.select(Axis(0), &rows);
            let yb: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
            let (z, enc_cache) = forward(&model.encoder_s, xb.view())?;
            let (logits, cls_cache) = forward(&model.classifier, z.view())?;
            let ly = loss_classification_weighted(
                logits.view(),
                &yb,
                w_s,
                w_s,
                config.weight_floor,
                config.ratio_cap,
            )?;
            let gc = backward(&model.classifier, &cls_cache, ly.grad.view())?;
            let ge = backward(&model.encoder_s, &enc_cache, gc.input.view())?;
            sgd_momentum_step(&mut model.classifier, &gc, &mut state.velocity_c, config.lr, config.momentum)?;
            sgd_momentum_step(&mut model.encoder_s, &ge, &mut state.velocity_s, config.lr, config.momentum)?;
            Ok(())
        };
        step().map_err(wrap(epoch, b))?;
    }
    Ok(())
}

/// Runs `pretrain_epochs` of cross-entropy SGD on the labeled source and
/// copies the source encoder into the target encoder.
pub fn pretrain(model: &mut DarsaModel, source: &Dataset, config: &DarsaConfig) -> Result<()> {
    config.validate()?;
    let y = source.require_labels()?;
    let w_s = ClassWeights::from_labels(y, source.k())?;
    let mut state = GroupState {
        velocity_s: Velocity::zeros(&model.encoder_s),
        velocity_c: Velocity::zeros(&model.classifier),
        source_rng: rng_stream(config.seed, Stream::SourceBatches),
    };
    pretrain_with(model, &mut state, source, y, &w_s, config)
}

fn pretrain_with(
    model: &mut DarsaModel,
    state: &mut GroupState,
    source: &Dataset,
    y: &[usize],
    w_s: &ClassWeights,
    config: &DarsaConfig,
) -> Result<()> {
    for epoch in 0..config.pretrain_epochs {
        source_epoch(model, state, source.features().view(), y, w_s, config, epoch)?;
    }
    model.encoder_t = model.encoder_s.clone();
    Ok(())
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Minibatch means of each loss term.
    pub losses: LossBundle,
    pub w_t: Vec<f64>,
    pub source_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bounds: Option<BoundReport>,
    pub skipped_discrepancy: usize,
    pub skipped_inter: usize,
    /// Not serialized, so that metric streams of identical runs compare equal.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub pretrain_source_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pretrain_target_accuracy: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainMetrics {
    /// Target accuracy of the final model, falling back to the pretrained one.
    pub fn final_target_accuracy(&self) -> Option<f64> {
        match self.epochs.last() {
            Some(r) => r.target_accuracy,
            None => self.pretrain_target_accuracy,
        }
    }

    pub fn final_source_accuracy(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.pretrain_source_accuracy, |r| r.source_accuracy)
    }
}

pub fn fit(
    source: &Dataset,
    target: &Dataset,
    config: &DarsaConfig,
    eval_labels: Option<&[usize]>,
) -> Result<(DarsaModel, TrainMetrics)> {
    fit_with(source, target, config, eval_labels, |_| Ok(()))
}

/// [`fit`] with a callback invoked after every adaptation epoch.
pub fn fit_with<F>(
    source: &Dataset,
    target: &Dataset,
    config: &DarsaConfig,
    eval_labels: Option<&[usize]>,
    mut on_epoch: F,
) -> Result<(DarsaModel, TrainMetrics)>
where
    F: FnMut(&EpochRecord) -> Result<()>,
{
    config.validate()?;
    let k = source.k();
    if target.k() != k {
        return Err(Error::ClassCardinalityMismatch {
            source_classes: k,
            target_classes: target.k(),
        });
    }
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} features, target has {}",
            source.dim(),
            target.dim()
        )));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptySamples);
    }
    if let Some(l) = eval_labels {
        if l.len() != target.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} evaluation labels for {} target rows",
                l.len(),
                target.len()
            )));
        }
    }
    let ys = source.require_labels()?;
    let xs = source.features().view();
    let xt = target.features().view();
    let w_s = ClassWeights::from_labels(ys, k)?;

    let mut model = DarsaModel::init(source.dim(), k, config)?;
    let mut state = GroupState {
        velocity_s: Velocity::zeros(&model.encoder_s),
        velocity_c: Velocity::zeros(&model.classifier),
        source_rng: rng_stream(config.seed, Stream::SourceBatches),
    };
    pretrain_with(&mut model, &mut state, source, ys, &w_s, config)?;

    let evaluate = |model: &DarsaModel| -> Result<(f64, Option<f64>)> {
        let src = accuracy(&model.predict_source(xs)?, ys);
        let tgt = match eval_labels {
            Some(l) => Some(accuracy(&model.predict_target(xt)?, l)),
            None => None,
        };
        Ok((src, tgt))
    };
    let (pre_src, pre_tgt) = evaluate(&model)?;
    let mut metrics = TrainMetrics {
        pretrain_source_accuracy: pre_src,
        pretrain_target_accuracy: pre_tgt,
        epochs: Vec::with_capacity(config.epochs),
    };

    let bound_rows = {
        let mut rng = rng_stream(config.seed, Stream::BoundSample);
        let pick = |rng: &mut ChaCha8Rng, n: usize| {
            let mut v = index::sample(rng, n, config.bound_samples.min(n)).into_vec();
            v.sort_unstable();
            v
        };
        (pick(&mut rng, xs.nrows()), pick(&mut rng, xt.nrows()))
    };

    let mut velocity_t = Velocity::zeros(&model.encoder_t);
    let mut target_rng = rng_stream(config.seed, Stream::TargetBatches);
    let weights = config.loss_weights();
    let sk = config.sinkhorn();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let w_t = match config.target_weights {
            TargetWeightMode::Estimated => {
                estimate_target_weights(&model.encoder_t, &model.classifier, xt, config.weight_floor)
                    .map_err(wrap(epoch, 0))?
            }
            TargetWeightMode::MatchSource => w_s.clone(),
        };
        let src_batches = batches(&mut state.source_rng, xs.nrows(), config.batch_size);
        let mut sums = [0.0; 4];
        let mut skipped = (0, 0);
        let steps = src_batches.len();
        for (b, rows_s) in src_batches.into_iter().enumerate() {
            let rows_t = index::sample(&mut target_rng, xt.nrows(), config.batch_size.min(xt.nrows()))
                .into_vec();
            let parts = adaptation_step(
                &mut model,
                &mut state,
                &mut velocity_t,
                StepBatch {
                    xs: xs.select(Axis(0), &rows_s),
                    ys: rows_s.iter().map(|&i| ys[i]).collect(),
                    xt: xt.select(Axis(0), &rows_t),
                },
                &w_t,
                &w_s,
                config,
                &sk,
            )
            .map_err(wrap(epoch, b))?;
            for (s, v) in sums.iter_mut().zip(parts.values) {
                *s += v;
            }
            skipped.0 += parts.skipped_d;
            skipped.1 += parts.skipped_inter;
        }
        let inv = 1.0 / steps as f64;
        let losses = LossBundle::new(sums[0] * inv, sums[1] * inv, sums[2] * inv, sums[3] * inv, &weights);
        let (src_acc, tgt_acc) = evaluate(&model).map_err(wrap(epoch, steps))?;
        let bounds = if config.bound_samples > 0 {
            Some(
                snapshot_bounds(&model, xs, ys, xt, &bound_rows, &w_t, &sk)
                    .map_err(wrap(epoch, steps))?,
            )
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            losses,
            w_t: w_t.as_slice().to_vec(),
            source_accuracy: src_acc,
            target_accuracy: tgt_acc,
            bounds,
            skipped_discrepancy: skipped.0,
            skipped_inter: skipped.1,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record)?;
        metrics.epochs.push(record);
    }
    Ok((model, metrics))
}

struct StepBatch {
    xs: Array2<f64>,
    ys: Vec<usize>,
    xt: Array2<f64>,
}

struct StepParts {
    values: [f64; 4],
    skipped_d: usize,
    skipped_inter: usize,
}

fn scatter(parts: &[Array2<f64>], labels: &[usize], n: usize, width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, width));
    let mut next = vec![0; parts.len()];
    for (i, &y) in labels.iter().enumerate() {
        out.row_mut(i).assign(&parts[y].row(next[y]));
        next[y] += 1;
    }
    out
}

/// One minibatch of the three-group update. Every gradient is taken at the
/// parameters the step started from, with target pseudo-labels frozen.
#[allow(clippy::too_many_arguments)]
fn adaptation_step(
    model: &mut DarsaModel,
    state: &mut GroupState,
    velocity_t: &mut Velocity,
    batch: StepBatch,
    w_t: &ClassWeights,
    w_s: &ClassWeights,
    config: &DarsaConfig,
    sk: &SinkhornParams,
) -> Result<StepParts> {
    let k = w_s.len();
    let (zs, cache_s) = forward(&model.encoder_s, batch.xs.view())?;
    let (logits_s, cache_c) = forward(&model.classifier, zs.view())?;
    let (zt, cache_t) = forward(&model.encoder_t, batch.xt.view())?;
    let pseudo = argmax_rows(infer(&model.classifier, zt.view())?.view());
    let h = zs.ncols();

    let ly = loss_classification_weighted(
        logits_s.view(),
        &batch.ys,
        w_t,
        w_s,
        config.weight_floor,
        config.ratio_cap,
    )?;
    let ld = loss_discrepancy_weighted(zs.view(), &batch.ys, zt.view(), &pseudo, w_t, sk)?;
    let intra_s = loss_intra(zs.view(), &batch.ys, config.margin)?;
    let intra_t = loss_intra(zt.view(), &pseudo, config.margin)?;
    let inter = loss_inter(
        &split_by_class(zs.view(), &batch.ys, k),
        &split_by_class(zt.view(), &pseudo, k),
    )?;

    let gc = backward(&model.classifier, &cache_c, (&ly.grad * config.lambda_y).view())?;
    let mut dzs = gc.input.clone();
    dzs.scaled_add(config.lambda_d, &ld.grad_s);
    dzs.scaled_add(config.lambda_c, &intra_s.grad);
    dzs.scaled_add(config.lambda_a, &scatter(&inter.grad_s, &batch.ys, zs.nrows(), h));
    let mut dzt = ld.grad_t * config.lambda_d;
    dzt.scaled_add(config.lambda_c, &intra_t.grad);
    dzt.scaled_add(config.lambda_a, &scatter(&inter.grad_t, &pseudo, zt.nrows(), h));
    let ges = backward(&model.encoder_s, &cache_s, dzs.view())?;
    let get = backward(&model.encoder_t, &cache_t, dzt.view())?;

    sgd_momentum_step(&mut model.classifier, &gc, &mut state.velocity_c, config.lr, config.momentum)?;
    sgd_momentum_step(&mut model.encoder_s, &ges, &mut state.velocity_s, config.lr, config.momentum)?;
    sgd_momentum_step(&mut model.encoder_t, &get, velocity_t, config.lr, config.momentum)?;

    Ok(StepParts {
        values: [ly.value, ld.value, intra_s.value + intra_t.value, inter.value],
        skipped_d: ld.skipped,
        skipped_inter: inter.skipped,
    })
}

fn snapshot_bounds(
    model: &DarsaModel,
    xs: ArrayView2<f64>,
    ys: &[usize],
    xt: ArrayView2<f64>,
    rows: &(Vec<usize>, Vec<usize>),
    w_t: &ClassWeights,
    sk: &SinkhornParams,
) -> Result<BoundReport> {
    let xs = xs.select(Axis(0), &rows.0);
    let ys: Vec<usize> = rows.0.iter().map(|&i| ys[i]).collect();
    let xt = xt.select(Axis(0), &rows.1);
    let zs = infer(&model.encoder_s, xs.view())?;
    let zt = infer(&model.encoder_t, xt.view())?;
    let pred_s = argmax_rows(infer(&model.classifier, zs.view())?.view());
    let pseudo = argmax_rows(infer(&model.classifier, zt.view())?.view());
    bound_report(
        BoundInputs {
            source_features: zs.view(),
            source_predictions: &pred_s,
            source_labels: &ys,
            target_features: zt.view(),
            target_pseudo_labels: &pseudo,
            w_t,
        },
        sk,
    )
}
