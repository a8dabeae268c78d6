//! Steering regressor, denoising autoencoder and the small reverse-mode
//! engine that trains them.
//!
//! The engine records one sample at a time on a [`graph::Graph`] tape.
//! Batches are processed by running samples in parallel and summing their
//! gradients in index order, so results do not depend on thread count.

pub mod checkpoint;
pub mod graph;
pub mod nets;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{Gradients, Graph, SetHandle, Var};
pub use nets::{DaeArch, DenoiseAE, ParamSet, SteeringArch, SteeringNet};
pub use optim::{Optimizer, OptimizerKind, WeightAverage};
pub use tensor::Tensor;
pub use train::{
    evaluate, forward_dae, forward_steering, predict, pretrain_steering, train_dae, EpochRow,
    Evaluation, Pairs, Reference, Schedule, TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("the steering network must be frozen before training the denoiser")]
    NotFrozen,
    #[error("the steering network is frozen and cannot be trained")]
    Frozen,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("paired datasets are misaligned at index {index}: '{clean}' vs '{perturbed}'")]
    Misaligned {
        index: usize,
        clean: String,
        perturbed: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("architecture: {0}")]
    Architecture(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Floating-point element type for tensors, with a matching GEMM kernel.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// `C = alpha * A B + beta * C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices; `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Element precision selected at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "32" => Ok(Self::F32),
            "f64" | "64" => Ok(Self::F64),
            other => Err(format!("unknown precision '{other}' (f32 | f64)")),
        }
    }
}
