use serde::{Deserialize, Serialize};

use super::nets::ParamSet;
use super::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    MomentumSgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Self::Adam),
            "momentum-sgd" | "sgd" => Ok(Self::MomentumSgd),
            other => Err(format!("unknown optimizer '{other}' (adam | momentum-sgd)")),
        }
    }
}

/// Optimizer state for one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors.iter().map(|t| vec![T::zero(); t.numel()]).collect();
        Self {
            kind,
            learning_rate,
            step: 0,
            first: zeros(),
            second: if kind == OptimizerKind::Adam { zeros() } else { Vec::new() },
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with per-tensor gradients `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Vec<T>]) {
        assert_eq!(grads.len(), params.tensors.len(), "one gradient per tensor");
        self.step += 1;
        let lr = T::of(self.learning_rate);
        match self.kind {
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
                let c1 = T::one() - T::of(ADAM_BETA1.powi(self.step as i32));
                let c2 = T::one() - T::of(ADAM_BETA2.powi(self.step as i32));
                let eps = T::of(ADAM_EPS);
                for (((t, g), m), v) in params
                    .tensors
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((p, &gi), mi), vi) in t.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *p = *p - lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::MomentumSgd => {
                let mu = T::of(MOMENTUM);
                for ((t, g), m) in params.tensors.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((p, &gi), mi) in t.data.iter_mut().zip(g).zip(m.iter_mut()) {
                        *mi = mu * *mi + gi;
                        *p = *p - lr * *mi;
                    }
                }
            }
        }
    }
}

/// Exponential moving average of a parameter set, updated after every step.
/// Early steps use the smaller decay `(1 + t) / (10 + t)` so the average is
/// not dominated by the initialization.
#[derive(Debug, Clone)]
pub struct WeightAverage<T> {
    pub decay: f64,
    steps: u64,
    params: ParamSet<T>,
}

impl<T: Scalar> WeightAverage<T> {
    pub fn new(decay: f64, params: &ParamSet<T>) -> Self {
        Self {
            decay,
            steps: 0,
            params: params.clone(),
        }
    }

    pub fn update(&mut self, params: &ParamSet<T>) {
        self.steps += 1;
        let t = self.steps as f64;
        let d = T::of(self.decay.min((1.0 + t) / (10.0 + t)));
        for (a, p) in self.params.tensors.iter_mut().zip(&params.tensors) {
            for (ai, &pi) in a.data.iter_mut().zip(&p.data) {
                *ai = d * *ai + (T::one() - d) * pi;
            }
        }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn single(v: f64) -> ParamSet<f64> {
        ParamSet::from_tensors(vec!["p".into()], vec![Tensor::from_vec(&[1], vec![v]).unwrap()])
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = single(1.0);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, &p);
        opt.step(&mut p, &[vec![3.0]]);
        assert!((p.tensors[0].data[0] - 0.99).abs() < 1e-8);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = single(0.0);
        let mut opt = Optimizer::new(OptimizerKind::MomentumSgd, 0.1, &p);
        opt.step(&mut p, &[vec![1.0]]);
        opt.step(&mut p, &[vec![1.0]]);
        // -0.1 * 1 - 0.1 * 1.9
        assert!((p.tensors[0].data[0] + 0.29).abs() < 1e-12);
    }

    #[test]
    fn both_minimize_a_quadratic() {
        for kind in [OptimizerKind::Adam, OptimizerKind::MomentumSgd] {
            let mut p = single(5.0);
            let mut opt = Optimizer::new(kind, 0.05, &p);
            for _ in 0..2000 {
                let x = p.tensors[0].data[0];
                opt.step(&mut p, &[vec![2.0 * (x - 1.0)]]);
            }
            assert!((p.tensors[0].data[0] - 1.0).abs() < 1e-3, "{kind:?}");
        }
    }

    #[test]
    fn weight_average_follows_warmup_then_decay() {
        let mut avg = WeightAverage::new(0.5, &single(0.0));
        // step 1: min(0.5, 2/11) = 2/11
        avg.update(&single(11.0));
        assert!((avg.params().tensors[0].data[0] - 9.0).abs() < 1e-12);
        for _ in 0..200 {
            avg.update(&single(3.0));
        }
        assert!((avg.params().tensors[0].data[0] - 3.0).abs() < 1e-12);
    }
}
