use std::io::Write;

use cuedepth_autodiff::{
    optimizer_step, Graph, OptimizerConfig, OptimizerState, Tensor, TensorError, Var,
};
use rand::seq::SliceRandom;
use rand::RngCore;

use super::loss::silog_items;
use super::model::{split_predictions, CueBatch, NetOutput, Prediction, Predictor};
use crate::cues::CueInputs;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::params::{Bound, ParamSet};
use crate::rng::{stream_rng, Stream};

/// Random access to training samples. Cue inputs are produced on demand so a
/// dataset never has to hold every channel stack in memory at once.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn inputs(&self, index: usize) -> Result<CueInputs>;

    /// Ground-truth depth `[H, W]`.
    fn depth(&self, index: usize) -> &Tensor;
}

/// Deterministic train/validation split: indices are ordered by a hash of
/// (seed, index) and the first `round(n * val_fraction)` become validation.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut keyed: Vec<(u64, usize)> = (0..n)
        .map(|i| (stream_rng(seed, Stream::Split, i as u64).next_u64(), i))
        .collect();
    keyed.sort_unstable();
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let mut val: Vec<usize> = keyed[..n_val].iter().map(|&(_, i)| i).collect();
    let mut train: Vec<usize> = keyed[n_val..].iter().map(|&(_, i)| i).collect();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_silog: f64,
    pub val_abs_rel: f64,
    pub val_rmse: f64,
    pub val_d1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_abs_rel,val_rmse,val_d1";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.val_abs_rel, r.val_rmse, r.val_d1
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Evaluated composite loss of one batch.
struct BatchGraph {
    g: Graph,
    bound: Bound,
    out: NetOutput,
    loss: Var,
    /// Per-item silog and total loss values.
    silog: Vec<f64>,
    total: Vec<f64>,
}

impl BatchGraph {
    fn loss_value(&self) -> f64 {
        self.g.value(self.loss).item()
    }

    /// Gradients in parameter order; parameters the loss does not reach get
    /// zeros.
    fn gradients(&self, params: &ParamSet) -> Result<Vec<Tensor>> {
        let mut grads = self.g.backward(self.loss)?;
        Ok(self
            .bound
            .vars()
            .iter()
            .zip(params.iter())
            .map(|(&v, (_, p))| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect())
    }
}

fn batch_graph(predictor: &Predictor, batch: &CueBatch, depths: &[&Tensor]) -> Result<BatchGraph> {
    let cfg = predictor.net_config();
    let mut g = Graph::new();
    let bound = predictor.params().bind(&mut g);
    let out = predictor.forward(&mut g, &bound, batch)?;
    let shape = g.shape(out.depth).to_vec();
    let mut log_gt = Vec::with_capacity(shape.iter().product());
    let mut mask = Vec::with_capacity(log_gt.capacity());
    let mut targets = Vec::with_capacity(depths.len());
    for d in depths {
        let mut t = Vec::with_capacity(d.len());
        for &v in d.data() {
            let ok = v > 0.0 && v.is_finite();
            mask.push(ok);
            log_gt.push(if ok { v.ln() } else { 0.0 });
            if ok {
                t.push(v);
            }
        }
        targets.push(t);
    }
    let log_gt = Tensor::new(shape, log_gt)?;
    let silog = silog_items(
        &mut g,
        out.depth,
        &log_gt,
        &mask,
        cfg.loss.silog_lambda,
        cfg.loss.silog_alpha,
    )?;
    let beta = cfg.bin_weight();
    let items = match out.bins {
        Some(bins) if beta > 0.0 => {
            let ch = g.chamfer(bins.centers, &targets)?;
            let ch = g.scale(ch, beta);
            g.add(silog, ch)?
        }
        _ => silog,
    };
    let loss = g.mean(items)?;
    Ok(BatchGraph {
        silog: g.value(silog).data().to_vec(),
        total: g.value(items).data().to_vec(),
        g,
        bound,
        out,
        loss,
    })
}

/// Loss and gradients (in parameter order) for one batch.
pub fn loss_and_gradients(
    predictor: &Predictor,
    inputs: &[&CueInputs],
    depths: &[&Tensor],
) -> Result<(f64, Vec<Tensor>)> {
    let batch = CueBatch::new(inputs)?;
    let bg = batch_graph(predictor, &batch, depths)?;
    Ok((bg.loss_value(), bg.gradients(predictor.params())?))
}

/// Validation losses and pooled pixel metrics.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub silog: f64,
    pub metrics: MetricsReport,
    pub predictions: Vec<Prediction>,
}

/// Evaluates `indices` in fixed batches without updating anything.
pub fn evaluate_indices(
    predictor: &Predictor,
    source: &dyn SampleSource,
    indices: &[usize],
) -> Result<Evaluation> {
    let batch_size = predictor.net_config().train.batch;
    let (mut loss, mut silog) = (0.0, 0.0);
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    let mut predictions = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size) {
        let inputs = chunk
            .iter()
            .map(|&i| source.inputs(i))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&CueInputs> = inputs.iter().collect();
        let depths: Vec<&Tensor> = chunk.iter().map(|&i| source.depth(i)).collect();
        let batch = CueBatch::new(&refs)?;
        let bg = batch_graph(predictor, &batch, &depths)?;
        loss += bg.total.iter().sum::<f64>();
        silog += bg.silog.iter().sum::<f64>();
        for (p, d) in split_predictions(&bg.g, &bg.out).into_iter().zip(&depths) {
            pred.extend_from_slice(p.depth.data());
            gt.extend_from_slice(d.data());
            predictions.push(p);
        }
    }
    let n = indices.len() as f64;
    let valid: Vec<bool> = gt.iter().map(|&v: &f64| v > 0.0 && v.is_finite()).collect();
    Ok(Evaluation {
        loss: loss / n,
        silog: silog / n,
        metrics: evaluate(&pred, &gt, Some(&valid))?,
        predictions,
    })
}

/// Trains in place and returns the per-epoch history. Fully determined by
/// the configuration (including its seed) and the sample source.
pub fn train(predictor: &mut Predictor, source: &dyn SampleSource) -> Result<History> {
    let cfg = *predictor.net_config();
    let tc = cfg.train;
    let (train_idx, val_idx) = split_indices(source.len(), tc.val_fraction, tc.seed);
    if train_idx.is_empty() {
        return Err(Error::Degenerate {
            op: "train",
            msg: "no training samples".into(),
        });
    }
    let opt = OptimizerConfig {
        kind: tc.optimizer.into(),
        lr: tc.lr,
        weight_decay: tc.weight_decay,
        ..OptimizerConfig::default()
    };
    let mut state = OptimizerState::new(&predictor.params().tensors());
    let mut history = History::default();
    let mut item_loss = vec![0.0; source.len()];
    for epoch in 1..=tc.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut stream_rng(tc.seed, Stream::Shuffle, epoch as u64));
        for (b, chunk) in order.chunks(tc.batch).enumerate() {
            let inputs = chunk
                .iter()
                .map(|&i| source.inputs(i))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&CueInputs> = inputs.iter().collect();
            let depths: Vec<&Tensor> = chunk.iter().map(|&i| source.depth(i)).collect();
            let batch = CueBatch::new(&refs)?;
            let bg = batch_graph(predictor, &batch, &depths)?;
            if !bg.loss_value().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            for (&i, &l) in chunk.iter().zip(&bg.total) {
                item_loss[i] = l;
            }
            let grads = bg.gradients(predictor.params())?;
            drop(bg);
            let mut params = predictor.params().tensors();
            optimizer_step(&mut params, &grads, &mut state, &opt).map_err(|e| match e {
                TensorError::NumericFault { .. } => Error::NonFiniteLoss { epoch, batch: b },
                other => other.into(),
            })?;
            predictor.params_mut().set_tensors(params);
        }
        // Summed in index order so the value does not depend on the shuffle.
        let train_loss =
            train_idx.iter().map(|&i| item_loss[i]).sum::<f64>() / train_idx.len() as f64;
        let record = if val_idx.is_empty() {
            EpochRecord {
                epoch,
                train_loss,
                val_loss: f64::NAN,
                val_silog: f64::NAN,
                val_abs_rel: f64::NAN,
                val_rmse: f64::NAN,
                val_d1: f64::NAN,
            }
        } else {
            let ev = evaluate_indices(predictor, source, &val_idx)?;
            EpochRecord {
                epoch,
                train_loss,
                val_loss: ev.loss,
                val_silog: ev.silog,
                val_abs_rel: ev.metrics.abs_rel,
                val_rmse: ev.metrics.rms,
                val_d1: ev.metrics.delta1,
            }
        };
        log::debug!(
            "epoch {epoch}: train {:.4} val {:.4} rmse {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_rmse
        );
        history.epochs.push(record);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (t, v) = split_indices(100, 0.1, 5);
        assert_eq!(v.len(), 10);
        assert_eq!(t.len(), 90);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_indices(100, 0.1, 5), (t, v));
        assert_ne!(split_indices(100, 0.1, 6).1, split_indices(100, 0.1, 5).1);
    }

    #[test]
    fn tiny_sets_keep_a_training_sample() {
        assert_eq!(split_indices(4, 0.1, 0).1.len(), 0);
        assert_eq!(split_indices(1, 0.5, 0).0.len(), 1);
    }
}
