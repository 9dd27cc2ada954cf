//! Stream training, score fusion, evaluation and the CSV reports.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DecayPolicy, TrainConfig};
use crate::data::{GestureBatch, PrepareOptions, PreparedSample, SkeletonSequence};
use crate::model::StreamModel;
use crate::skeleton::SkeletonTopology;
use crate::tensor::{Adam, ForwardCtx, Graph, Mode};
use crate::{Error, Result};

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Inference-mode accuracy on the training set after the epoch.
    pub train_acc: f64,
    /// `None` when there is no validation set.
    pub val_acc: Option<f64>,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: StreamModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn prepare_all(
    seqs: &[SkeletonSequence],
    topology: &SkeletonTopology,
    opts: PrepareOptions,
) -> Result<Vec<PreparedSample>> {
    seqs.iter()
        .map(|s| PreparedSample::new(s, topology, opts))
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class of the elementwise product of two probability vectors.
pub fn fuse_and_classify(v1: &[f64], v2: &[f64]) -> Result<usize> {
    Ok(argmax(&fuse_scores(v1, v2)?))
}

pub fn fuse_scores(v1: &[f64], v2: &[f64]) -> Result<Vec<f64>> {
    if v1.len() != v2.len() || v1.is_empty() {
        return Err(Error::shape(
            "fuse",
            format!("score lengths {} and {}", v1.len(), v2.len()),
        ));
    }
    Ok(v1.iter().zip(v2).map(|(a, b)| a * b).collect())
}

/// Per-sample class probabilities in input order.
pub fn predict_scores(model: &StreamModel, samples: &[PreparedSample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let probs = model.predict(&GestureBatch::from_samples(&refs)?)?;
        let k = probs.shape()[1];
        out.extend(probs.data().chunks(k).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn accuracy(model: &StreamModel, samples: &[PreparedSample]) -> Result<f64> {
    let scores = predict_scores(model, samples)?;
    let hits = scores
        .iter()
        .zip(samples)
        .filter(|(s, x)| argmax(s) == x.label)
        .count();
    Ok(hits as f64 / samples.len().max(1) as f64)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Trains one stream with Adam on softmax cross-entropy. Keeps the
/// parameters of the epoch with the best validation accuracy (training
/// accuracy breaks ties; without a validation set training accuracy alone).
pub fn train_stream(
    mut model: StreamModel,
    train: &[PreparedSample],
    val: &[PreparedSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let k = model.num_classes();
    if let Some(s) = train.iter().chain(val).find(|s| s.label >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {} but the model has {k} classes",
            s.label
        )));
    }
    model.set_dropout(config.dropout);
    let mut adam = Adam::new(config.lr);
    let mut history = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut since_improved = 0;
    let mut since_decay = 0;
    let mut step = 0;

    for epoch in 1..=config.max_epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let lr = adam.lr;
        let (mut loss_sum, mut seen) = (0.0, 0);
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&PreparedSample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = GestureBatch::from_samples(&refs)?;
            let diverged = |e: Error| match e {
                Error::NonFinite(op) => Error::Diverged {
                    step,
                    msg: format!("non-finite value in {op}"),
                },
                other => other,
            };
            let mut g = Graph::new();
            let pv = model.store().bind(&mut g)?;
            let mut ctx = ForwardCtx::new(
                Mode::Train,
                config.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let z = model
                .logits(&mut g, &pv, &batch, &mut ctx)
                .map_err(diverged)?;
            let loss = g
                .softmax_cross_entropy(z, &batch.labels)
                .map_err(diverged)?;
            let grads = g.backward(loss).map_err(diverged)?;
            let grads = model.store().gradients(&pv, &grads);
            adam.step_store(model.store_mut(), &grads)
                .map_err(diverged)?;
            ctx.apply_running_stats(model.store_mut());
            model.after_step();
            loss_sum += g.value(loss).data()[0] * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }

        let train_acc = accuracy(&model, train)?;
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(accuracy(&model, val)?)
        };
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / seen as f64,
            train_acc,
            val_acc,
            lr,
        });
        log::info!(
            "{} epoch {epoch}: loss {:.4} train {:.3} val {} lr {lr:e}",
            model.kind().as_str(),
            loss_sum / seen as f64,
            train_acc,
            val_acc.map_or("-".into(), |v| format!("{v:.3}"))
        );

        let key = (val_acc.unwrap_or(train_acc), train_acc);
        if best.is_none_or(|b| key > b) {
            best = Some(key);
            best_model = model.clone();
            best_epoch = epoch;
        }
        let improved = key.0 > best_val;
        if improved {
            best_val = key.0;
            since_improved = 0;
            since_decay = 0;
        } else {
            since_improved += 1;
            since_decay += 1;
        }
        match config.decay_policy {
            DecayPolicy::Literal if improved && epoch > 1 => adam.lr *= config.lr_decay,
            DecayPolicy::Plateau if since_decay >= config.patience => {
                adam.lr *= config.lr_decay;
                since_decay = 0;
            }
            _ => {}
        }
        if config.stop_train_acc.is_some_and(|t| train_acc >= t)
            || since_improved >= config.early_stop
        {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// NaN for classes absent from the evaluated set.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Per-sequence scores (fused products in two-stream mode).
    pub scores: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Scores the per-sequence outputs of one stream, or fuses two.
pub fn evaluate_scores(
    streams: &[Vec<Vec<f64>>],
    labels: &[usize],
    num_classes: usize,
) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let scores: Vec<Vec<f64>> = match streams {
        [one] => one.clone(),
        [a, b] => a
            .iter()
            .zip(b)
            .map(|(x, y)| fuse_scores(x, y))
            .collect::<Result<_>>()?,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{} streams given, expected 1 or 2",
                streams.len()
            )))
        }
    };
    if streams.iter().any(|s| s.len() != labels.len()) {
        return Err(Error::shape(
            "evaluate",
            "score and label counts differ".to_string(),
        ));
    }
    if let Some(s) = scores.iter().find(|s| s.len() != num_classes) {
        return Err(Error::InvalidArgument(format!(
            "model scores {} classes, dataset has {num_classes}",
            s.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} outside {num_classes} classes"
        )));
    }
    let predictions: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    let mut confusion = vec![vec![0; num_classes]; num_classes];
    for (&l, &p) in labels.iter().zip(&predictions) {
        confusion[l][p] += 1;
    }
    let trace: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                row[c] as f64 / n as f64
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: trace as f64 / labels.len() as f64,
        per_class_accuracy,
        confusion,
        scores,
        predictions,
        labels: labels.to_vec(),
    })
}

/// Infer-mode evaluation of one stream, or fused evaluation of two.
pub fn evaluate(
    models: &[&StreamModel],
    samples: &[PreparedSample],
    num_classes: usize,
) -> Result<EvalReport> {
    if let Some(m) = models.iter().find(|m| m.num_classes() != num_classes) {
        return Err(Error::InvalidArgument(format!(
            "model has {} classes, dataset has {num_classes}",
            m.num_classes()
        )));
    }
    let streams = models
        .iter()
        .map(|m| predict_scores(m, samples))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    evaluate_scores(&streams, &labels, num_classes)
}

/// Header row of class names, then one row of counts per true class.
pub fn confusion_csv(report: &EvalReport, class_names: &[String]) -> String {
    let mut s = String::from("class");
    for n in class_names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (name, row) in class_names.iter().zip(&report.confusion) {
        s.push_str(name);
        for c in row {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    s
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,train_acc,val_acc,lr\n");
    for r in history {
        let val = r.val_acc.map_or(String::new(), |v| format!("{v:?}"));
        let _ = writeln!(
            s,
            "{},{:?},{:?},{},{:?}",
            r.epoch, r.loss, r.train_acc, val, r.lr
        );
    }
    s
}

/// Label, prediction and score vector per sequence.
pub fn scores_csv(report: &EvalReport) -> String {
    let k = report.confusion.len();
    let mut s = String::from("index,label,prediction");
    for c in 0..k {
        let _ = write!(s, ",score_{c}");
    }
    s.push('\n');
    for (i, ((l, p), sc)) in report
        .labels
        .iter()
        .zip(&report.predictions)
        .zip(&report.scores)
        .enumerate()
    {
        let _ = write!(s, "{i},{l},{p}");
        for v in sc {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    }
    s
}
