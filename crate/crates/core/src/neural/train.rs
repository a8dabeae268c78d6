//! Training loops, batched inference and evaluation.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::Graph;
use super::nets::{DenoiseAE, SteeringNet};
use super::optim::{Optimizer, OptimizerKind, WeightAverage};
use super::tensor::Tensor;
use super::{NeuralError, Precision, Scalar};
use crate::augment::DriveSample;
use crate::rng::{self, Stream};

pub const REPORT_HEADER: &str = "epoch,train_mse,val_mse,val_percent";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub schedule: Schedule,
    pub seed: u64,
    pub precision: Precision,
    /// Per-step decay of an exponential weight average in `[0, 1)`; 0 disables
    /// it. When enabled, validation and the returned model use the average.
    pub weight_average: f64,
}

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate at epoch 1 toward zero after the last epoch.
    Cosine,
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!("unknown schedule '{other}' (constant | cosine)")),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            schedule: Schedule::Constant,
            seed: 0,
            precision: Precision::F32,
            weight_average: 0.0,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.weight_average) {
            v.push(format!("weight_average must be in [0, 1), got {}", self.weight_average));
        }
        v
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Cosine => {
                let t = (epoch - 1) as f64 / self.epochs as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(NeuralError::Config(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_percent: f64,
    /// Wall-clock seconds; kept out of the CSV so reports stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_mse, r.val_mse, r.val_percent);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_HEADER => {}
            other => return Err(format!("expected header '{REPORT_HEADER}', found {other:?}")),
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || format!("line {}: malformed row '{line}'", i + 2);
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            rows.push(EpochRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_mse: num(f[1])?,
                val_mse: num(f[2])?,
                val_percent: num(f[3])?,
                seconds: 0.0,
            });
        }
        Ok(Self { rows })
    }

    pub fn val_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.val_mse).collect()
    }

    pub fn final_val_mse(&self) -> Option<f64> {
        self.rows.last().map(|r| r.val_mse)
    }

    pub fn total_seconds(&self) -> f64 {
        self.rows.iter().map(|r| r.seconds).sum()
    }
}

/// What predictions are compared against in [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    /// The stored steering labels.
    Labels,
    /// The network's own predictions on these clean counterparts, aligned by index.
    CleanPredictions(&'a [DriveSample]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mse: f64,
    pub percent: f64,
    pub count: usize,
}

/// Clean and perturbed versions of the same samples, aligned by index.
#[derive(Debug, Clone, Copy)]
pub struct Pairs<'a> {
    pub clean: &'a [DriveSample],
    pub perturbed: &'a [DriveSample],
}

impl Pairs<'_> {
    fn check(&self) -> Result<(), NeuralError> {
        if self.clean.is_empty() || self.perturbed.is_empty() {
            return Err(NeuralError::EmptyDataset);
        }
        if self.clean.len() != self.perturbed.len() {
            let i = self.clean.len().min(self.perturbed.len());
            let id = |d: &[DriveSample]| d.get(i).map_or("<missing>".to_string(), |s| s.id.clone());
            return Err(NeuralError::Misaligned {
                index: i,
                clean: id(self.clean),
                perturbed: id(self.perturbed),
            });
        }
        for (i, (c, p)) in self.clean.iter().zip(self.perturbed).enumerate() {
            if c.id != p.id {
                return Err(NeuralError::Misaligned {
                    index: i,
                    clean: c.id.clone(),
                    perturbed: p.id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Mean squared difference, accumulated in f64 in index order.
pub fn mse(predictions: &[f64], references: &[f64]) -> f64 {
    assert_eq!(predictions.len(), references.len());
    let s: f64 = predictions.iter().zip(references).map(|(p, r)| (p - r) * (p - r)).sum();
    s / predictions.len() as f64
}

/// Planar `[C, H, W]` values of each sample, checked against the expected shape.
fn planar_inputs<T: Scalar>(
    data: &[DriveSample],
    shape: [usize; 3],
) -> Result<Vec<Vec<T>>, NeuralError> {
    data.par_iter()
        .map(|s| {
            let got = [s.image.channels, s.image.height, s.image.width];
            if got != shape {
                return Err(NeuralError::Shape {
                    expected: shape.to_vec(),
                    got: got.to_vec(),
                });
            }
            Ok(s.image.to_planar().into_iter().map(|v| T::of(v as f64)).collect())
        })
        .collect()
}

/// Stacks samples into an `[N, C, H, W]` tensor.
pub fn batch_tensor<T: Scalar>(data: &[DriveSample]) -> Result<Tensor<T>, NeuralError> {
    let first = data.first().ok_or(NeuralError::EmptyDataset)?;
    let shape = [first.image.channels, first.image.height, first.image.width];
    let planes = planar_inputs::<T>(data, shape)?;
    Tensor::from_vec(
        &[data.len(), shape[0], shape[1], shape[2]],
        planes.into_iter().flatten().collect(),
    )
}

fn net_input_shape<T>(net: &SteeringNet<T>) -> [usize; 3] {
    [net.arch.channels, net.arch.height, net.arch.width]
}

fn check_pair<T>(net: &SteeringNet<T>, ae: &DenoiseAE<T>) -> Result<(), NeuralError> {
    let a = [ae.arch.channels, ae.arch.height, ae.arch.width];
    if a != net_input_shape(net) {
        return Err(NeuralError::Shape {
            expected: net_input_shape(net).to_vec(),
            got: a.to_vec(),
        });
    }
    Ok(())
}

fn predict_one<T: Scalar>(
    net: &SteeringNet<T>,
    ae: Option<&DenoiseAE<T>>,
    x: &[T],
) -> Result<T, NeuralError> {
    let mut g = Graph::new();
    let hn = g.bind(&net.params, false);
    let mut v = g.input_ref(&net_input_shape(net), x)?;
    if let Some(ae) = ae {
        let ha = g.bind(&ae.params, false);
        v = ae.arch.build(&mut g, ha, v)?;
    }
    let out = net.arch.build(&mut g, hn, v)?;
    Ok(g.value(out)[0])
}

fn check_batch<T: Scalar>(batch: &Tensor<T>, shape: [usize; 3]) -> Result<(), NeuralError> {
    if batch.shape.len() != 4 || batch.shape[1..] != shape {
        let mut expected = vec![batch.shape.first().copied().unwrap_or(0)];
        expected.extend(shape);
        return Err(NeuralError::Shape {
            expected,
            got: batch.shape.clone(),
        });
    }
    Ok(())
}

/// Steering angles for an `[N, C, H, W]` batch; returns `[N]`.
pub fn forward_steering<T: Scalar>(
    net: &SteeringNet<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>, NeuralError> {
    check_batch(batch, net_input_shape(net))?;
    let out = (0..batch.shape[0])
        .into_par_iter()
        .map(|i| predict_one(net, None, batch.outer(i)))
        .collect::<Result<Vec<T>, _>>()?;
    Tensor::from_vec(&[batch.shape[0]], out)
}

/// Reconstructions for an `[N, C, H, W]` batch.
pub fn forward_dae<T: Scalar>(
    ae: &DenoiseAE<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>, NeuralError> {
    check_batch(batch, [ae.arch.channels, ae.arch.height, ae.arch.width])?;
    let shape = [ae.arch.channels, ae.arch.height, ae.arch.width];
    let out = (0..batch.shape[0])
        .into_par_iter()
        .map(|i| {
            let mut g = Graph::new();
            let h = g.bind(&ae.params, false);
            let x = g.input_ref(&shape, batch.outer(i))?;
            let y = ae.arch.build(&mut g, h, x)?;
            Ok(g.value(y).to_vec())
        })
        .collect::<Result<Vec<Vec<T>>, NeuralError>>()?;
    Tensor::from_vec(&batch.shape, out.into_iter().flatten().collect())
}

/// Per-sample predictions as f64, optionally passing inputs through `ae` first.
pub fn predict<T: Scalar>(
    net: &SteeringNet<T>,
    ae: Option<&DenoiseAE<T>>,
    data: &[DriveSample],
) -> Result<Vec<f64>, NeuralError> {
    if let Some(ae) = ae {
        check_pair(net, ae)?;
    }
    let inputs = planar_inputs::<T>(data, net_input_shape(net))?;
    inputs
        .par_iter()
        .map(|x| predict_one(net, ae, x).map(Scalar::f64))
        .collect()
}

/// MSE between predictions and the chosen reference; `percent = 100 * mse`.
pub fn evaluate<T: Scalar>(
    net: &SteeringNet<T>,
    ae: Option<&DenoiseAE<T>>,
    data: &[DriveSample],
    reference: Reference<'_>,
) -> Result<Evaluation, NeuralError> {
    if data.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let refs = match reference {
        Reference::Labels => data.iter().map(|s| s.steering).collect(),
        Reference::CleanPredictions(clean) => {
            Pairs {
                clean,
                perturbed: data,
            }
            .check()?;
            predict(net, None, clean)?
        }
    };
    let m = mse(&predict(net, ae, data)?, &refs);
    Ok(Evaluation {
        mse: m,
        percent: 100.0 * m,
        count: data.len(),
    })
}

fn diverged(epoch: usize, batch: usize, loss: f64) -> NeuralError {
    NeuralError::Diverged { epoch, batch, loss }
}

/// Runs `per_sample` over a batch in parallel and reduces in index order.
/// Returns the summed loss and the summed (already scaled) gradients.
fn reduce_batch<T, F>(idx: &[usize], per_sample: F) -> Result<(f64, Vec<Vec<T>>), NeuralError>
where
    T: Scalar,
    F: Fn(usize) -> Result<(T, Vec<Vec<T>>), NeuralError> + Sync,
{
    let parts = idx
        .par_iter()
        .map(|&i| per_sample(i))
        .collect::<Vec<Result<_, _>>>();
    let mut loss = 0.0;
    let mut acc: Option<Vec<Vec<T>>> = None;
    for part in parts {
        let (l, g) = part?;
        loss += l.f64();
        match &mut acc {
            None => acc = Some(g),
            Some(a) => {
                for (at, gt) in a.iter_mut().zip(g) {
                    at.iter_mut().zip(gt).for_each(|(x, y)| *x = *x + y);
                }
            }
        }
    }
    Ok((loss, acc.unwrap_or_default()))
}

fn epoch_order(seed: u64, stage: &str, epoch: usize, n: usize) -> Vec<usize> {
    Stream::new(rng::derive_seed(seed, stage), &format!("epoch{epoch}")).permutation(n)
}

/// Fits `net` to the labels of `train`; `val` is scored against labels after every epoch.
pub fn pretrain_steering<T: Scalar>(
    net: &mut SteeringNet<T>,
    train: &[DriveSample],
    val: &[DriveSample],
    cfg: &TrainConfig,
) -> Result<TrainReport, NeuralError> {
    cfg.validate()?;
    if net.is_frozen() {
        return Err(NeuralError::Frozen);
    }
    if train.is_empty() || val.is_empty() {
        return Err(NeuralError::EmptyDataset);
    }
    let shape = net_input_shape(net);
    let inputs = planar_inputs::<T>(train, shape)?;
    let labels: Vec<T> = train.iter().map(|s| T::of(s.steering)).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &net.params);
    let mut avg = (cfg.weight_average > 0.0).then(|| WeightAverage::new(cfg.weight_average, &net.params));
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        opt.learning_rate = cfg.learning_rate_at(epoch);
        let order = epoch_order(cfg.seed, "pretrain/shuffle", epoch, train.len());
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let scale = T::of(1.0 / idx.len() as f64);
            let params = &net.params;
            let (loss, grads) = reduce_batch(idx, |i| {
                let mut g = Graph::new();
                let h = g.bind(params, true);
                let x = g.input_ref(&shape, &inputs[i])?;
                let y = net.arch.build(&mut g, h, x)?;
                let l = g.squared_error(y, labels[i])?;
                let loss = g.value(l)[0];
                Ok((loss, g.backward(l, scale)?.into_set(h)))
            })
            .map_err(|e| match e {
                NeuralError::NonFinite { .. } => diverged(epoch, b, f64::NAN),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(diverged(epoch, b, loss));
            }
            total += loss;
            opt.step(&mut net.params, &grads);
            if let Some(a) = avg.as_mut() {
                a.update(&net.params);
            }
        }
        let v = match &avg {
            Some(a) => {
                let mut scored = net.clone();
                scored.params = a.params().clone();
                evaluate(&scored, None, val, Reference::Labels)?
            }
            None => evaluate(net, None, val, Reference::Labels)?,
        };
        report.rows.push(EpochRow {
            epoch,
            train_mse: total / train.len() as f64,
            val_mse: v.mse,
            val_percent: v.percent,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    if let Some(a) = avg {
        net.params = a.params().clone();
    }
    Ok(report)
}

/// Trains `ae` so that the frozen `net` sees the same angle on
/// `ae(perturbed)` as on the clean image. The loss is steering error only.
pub fn train_dae<T: Scalar>(
    net: &SteeringNet<T>,
    ae: &mut DenoiseAE<T>,
    train: Pairs<'_>,
    val: Pairs<'_>,
    cfg: &TrainConfig,
) -> Result<TrainReport, NeuralError> {
    cfg.validate()?;
    if !net.is_frozen() {
        return Err(NeuralError::NotFrozen);
    }
    check_pair(net, ae)?;
    train.check()?;
    val.check()?;
    let shape = net_input_shape(net);
    let inputs = planar_inputs::<T>(train.perturbed, shape)?;
    let targets: Vec<T> = predict(net, None, train.clean)?.into_iter().map(T::of).collect();
    let val_targets = predict(net, None, val.clean)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &ae.params);
    let mut avg = (cfg.weight_average > 0.0).then(|| WeightAverage::new(cfg.weight_average, &ae.params));
    let mut report = TrainReport::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        opt.learning_rate = cfg.learning_rate_at(epoch);
        let order = epoch_order(cfg.seed, "dae/shuffle", epoch, inputs.len());
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let scale = T::of(1.0 / idx.len() as f64);
            let params = &ae.params;
            let arch = ae.arch;
            let (loss, grads) = reduce_batch(idx, |i| {
                let mut g = Graph::new();
                let ha = g.bind(params, true);
                let hn = g.bind(&net.params, false);
                let x = g.input_ref(&shape, &inputs[i])?;
                let r = arch.build(&mut g, ha, x)?;
                let y = net.arch.build(&mut g, hn, r)?;
                let l = g.squared_error(y, targets[i])?;
                let loss = g.value(l)[0];
                Ok((loss, g.backward(l, scale)?.into_set(ha)))
            })
            .map_err(|e| match e {
                NeuralError::NonFinite { .. } => diverged(epoch, b, f64::NAN),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(diverged(epoch, b, loss));
            }
            total += loss;
            opt.step(&mut ae.params, &grads);
            if let Some(a) = avg.as_mut() {
                a.update(&ae.params);
            }
        }
        let predictions = match &avg {
            Some(a) => predict(net, Some(&DenoiseAE::from_params(ae.arch, a.params().clone())?), val.perturbed)?,
            None => predict(net, Some(ae), val.perturbed)?,
        };
        let m = mse(&predictions, &val_targets);
        report.rows.push(EpochRow {
            epoch,
            train_mse: total / inputs.len() as f64,
            val_mse: m,
            val_percent: 100.0 * m,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    if let Some(a) = avg {
        ae.params = a.params().clone();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::nets::SteeringArch;
    use crate::raster::Image;

    fn sample(id: &str, steering: f64) -> DriveSample {
        DriveSample {
            id: id.into(),
            image: Image::zeros(8, 8, 1),
            steering,
        }
    }

    #[test]
    fn zero_net_mse_matches_hand_arithmetic() {
        let net = SteeringNet::<f64>::zeros(SteeringArch::new(1, 8, 8)).unwrap();
        let data = [sample("a", 0.1), sample("b", -0.3)];
        let e = evaluate(&net, None, &data, Reference::Labels).unwrap();
        assert!((e.mse - 0.05).abs() < 1e-15);
        assert!((e.percent - 5.0).abs() < 1e-12);
    }

    #[test]
    fn report_csv_round_trip() {
        let r = TrainReport {
            rows: vec![EpochRow {
                epoch: 1,
                train_mse: 0.25,
                val_mse: 0.125,
                val_percent: 12.5,
                seconds: 3.0,
            }],
        };
        let csv = r.to_csv();
        assert_eq!(csv, "epoch,train_mse,val_mse,val_percent\n1,0.25,0.125,12.5\n");
        let back = TrainReport::from_csv(&csv).unwrap();
        assert_eq!(back.rows[0].val_mse, 0.125);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 4,
            learning_rate: 1.0,
            schedule: Schedule::Cosine,
            ..Default::default()
        };
        assert_eq!(cfg.learning_rate_at(1), 1.0);
        assert!((cfg.learning_rate_at(3) - 0.5).abs() < 1e-15);
        assert!(cfg.learning_rate_at(4) > 0.0);
        assert_eq!(TrainConfig::default().learning_rate_at(7), 1e-3);
    }

    #[test]
    fn config_violations_are_enumerated() {
        let cfg = TrainConfig {
            epochs: 0,
            learning_rate: -1.0,
            ..Default::default()
        };
        assert_eq!(cfg.violations().len(), 2);
    }

    #[test]
    fn misaligned_pairs_are_rejected() {
        let a = [sample("a", 0.0)];
        let b = [sample("b", 0.0)];
        let err = Pairs { clean: &a, perturbed: &b }.check().unwrap_err();
        assert!(matches!(err, NeuralError::Misaligned { index: 0, .. }));
    }
}
