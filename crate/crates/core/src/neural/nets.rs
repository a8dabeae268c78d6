//! The two fixed architectures and their parameter containers.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{Activation, Graph, SetHandle, Var};
use super::ops::ConvGeom;
use super::tensor::Tensor;
use super::{NeuralError, Scalar};
use crate::rng::{self, Stream};

/// Named, ordered list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn from_tensors(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        assert_eq!(names.len(), tensors.len(), "one name per tensor");
        Self { names, tensors }
    }

    fn from_shapes(shapes: &[(String, Vec<usize>)]) -> Self {
        Self {
            names: shapes.iter().map(|(n, _)| n.clone()).collect(),
            tensors: shapes.iter().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// SHA-256 over names, shapes and the f64 little-endian value of every parameter.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.f64().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Flattened copy of all values, in tensor order.
    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    fn check_shapes(&self, expected: &[(String, Vec<usize>)]) -> Result<(), NeuralError> {
        if self.tensors.len() != expected.len() {
            return Err(NeuralError::Architecture(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for (t, (name, shape)) in self.tensors.iter().zip(expected) {
            if &t.shape != shape {
                return Err(NeuralError::Architecture(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape
                )));
            }
        }
        Ok(())
    }

    /// Fan-in scaled uniform init, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`; biases zero.
    fn he_uniform(&mut self, fan_ins: &[usize], seed: u64) {
        for (i, t) in self.tensors.iter_mut().enumerate() {
            if t.shape.len() == 1 {
                continue;
            }
            let bound = (6.0 / fan_ins[i] as f64).sqrt();
            let s = Stream::new(rng::derive_seed(seed, "init"), &self.names[i]);
            for (j, v) in t.data.iter_mut().enumerate() {
                *v = T::of(s.uniform_in(j as u64, -bound, bound));
            }
        }
    }
}

fn check_input(
    x: &[usize],
    channels: usize,
    height: usize,
    width: usize,
) -> Result<(), NeuralError> {
    if x != [channels, height, width] {
        return Err(NeuralError::Shape {
            expected: vec![channels, height, width],
            got: x.to_vec(),
        });
    }
    Ok(())
}

/// Steering regressor layout: a fixed input normalization, three strided
/// convolutions, then three dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteeringArch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv: [usize; 3],
    pub dense: [usize; 2],
}

impl Default for SteeringArch {
    fn default() -> Self {
        Self::new(1, 64, 64)
    }
}

// (kernel, stride, pad) of the three convolutions
const STEER_CONV: [(usize, usize, usize); 3] = [(5, 2, 2), (5, 2, 2), (3, 2, 1)];

impl SteeringArch {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            conv: [8, 16, 32],
            dense: [64, 16],
        }
    }

    /// Spatial size after the convolution stack.
    fn feature_dims(&self) -> Result<(usize, usize), NeuralError> {
        let (mut c, mut h, mut w) = (self.channels, self.height, self.width);
        for (i, &(k, s, p)) in STEER_CONV.iter().enumerate() {
            let g = ConvGeom::new(c, h, w, k, s, p).ok_or_else(|| {
                NeuralError::Architecture(format!("input {}x{} too small for the convolution stack", self.height, self.width))
            })?;
            (c, h, w) = (self.conv[i], g.out_height, g.out_width);
        }
        Ok((h, w))
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.channels == 0 || self.conv.contains(&0) || self.dense.contains(&0) {
            return Err(NeuralError::Architecture("layer widths must be positive".into()));
        }
        self.feature_dims().map(|_| ())
    }

    pub fn shapes(&self) -> Result<Vec<(String, Vec<usize>)>, NeuralError> {
        let (fh, fw) = self.feature_dims()?;
        let c3 = self.conv[2];
        let [d1, d2] = self.dense;
        let mut v = Vec::new();
        let mut cin = self.channels;
        for (i, (&cout, &(k, _, _))) in self.conv.iter().zip(&STEER_CONV).enumerate() {
            v.push((format!("conv{}.weight", i + 1), vec![cout, cin, k, k]));
            v.push((format!("conv{}.bias", i + 1), vec![cout]));
            cin = cout;
        }
        let flat = c3 * fh * fw;
        for (i, (nin, nout)) in [(flat, d1), (d1, d2), (d2, 1)].into_iter().enumerate() {
            v.push((format!("dense{}.weight", i + 1), vec![nout, nin]));
            v.push((format!("dense{}.bias", i + 1), vec![nout]));
        }
        Ok(v)
    }

    fn fan_ins(&self) -> Result<Vec<usize>, NeuralError> {
        Ok(self
            .shapes()?
            .iter()
            .map(|(_, s)| s[1..].iter().product())
            .collect())
    }

    /// Records the forward pass of one `[C, H, W]` sample; returns the `[1]` output.
    pub fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, h: SetHandle, x: Var) -> Result<Var, NeuralError> {
        check_input(g.shape(x), self.channels, self.height, self.width)?;
        // fixed normalization layer: [0, 1] -> [-1, 1]
        let mut y = g.affine(x, T::of(2.0), T::of(-1.0))?;
        for (i, &(_, s, p)) in STEER_CONV.iter().enumerate() {
            let (w, b) = (g.param(h, 2 * i), g.param(h, 2 * i + 1));
            y = g.conv2d(y, w, b, s, p)?;
            y = g.activation(y, Activation::Elu)?;
        }
        for i in 0..3 {
            let (w, b) = (g.param(h, 6 + 2 * i), g.param(h, 7 + 2 * i));
            y = g.dense(y, w, b)?;
            let act = if i < 2 { Activation::Elu } else { Activation::Tanh };
            y = g.activation(y, act)?;
        }
        Ok(y)
    }
}

/// Denoising autoencoder layout: two strided encoder convolutions, a 1x1
/// bottleneck and two transposed-convolution upsamplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaeArch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: [usize; 2],
    pub bottleneck: usize,
}

impl Default for DaeArch {
    fn default() -> Self {
        Self::new(1, 64, 64)
    }
}

impl DaeArch {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            hidden: [16, 32],
            bottleneck: 8,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.channels == 0 || self.hidden.contains(&0) || self.bottleneck == 0 {
            return Err(NeuralError::Architecture("layer widths must be positive".into()));
        }
        if self.height < 4 || self.width < 4 || self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(NeuralError::Architecture(format!(
                "input {}x{} must have sides divisible by 4",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (c, [h1, h2], z) = (self.channels, self.hidden, self.bottleneck);
        vec![
            ("enc1.weight".into(), vec![h1, c, 3, 3]),
            ("enc1.bias".into(), vec![h1]),
            ("enc2.weight".into(), vec![h2, h1, 3, 3]),
            ("enc2.bias".into(), vec![h2]),
            ("code.weight".into(), vec![z, h2, 1, 1]),
            ("code.bias".into(), vec![z]),
            // transposed layers store [in, out, k, k]
            ("dec1.weight".into(), vec![z, h1, 4, 4]),
            ("dec1.bias".into(), vec![h1]),
            ("dec2.weight".into(), vec![h1, c, 4, 4]),
            ("dec2.bias".into(), vec![c]),
        ]
    }

    fn fan_ins(&self) -> Vec<usize> {
        self.shapes()
            .iter()
            .map(|(name, s)| match (name.starts_with("dec"), s.len()) {
                // each output pixel of a stride-2 transposed conv sees k^2/4 taps per input channel
                (true, 4) => s[0] * s[2] * s[3] / 4,
                (_, 4) => s[1] * s[2] * s[3],
                _ => 1,
            })
            .collect()
    }

    /// Records the forward pass of one `[C, H, W]` sample; returns the same-shaped output.
    pub fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, h: SetHandle, x: Var) -> Result<Var, NeuralError> {
        check_input(g.shape(x), self.channels, self.height, self.width)?;
        let mut y = x;
        for (i, (s, p)) in [(2, 1), (2, 1), (1, 0)].into_iter().enumerate() {
            let (w, b) = (g.param(h, 2 * i), g.param(h, 2 * i + 1));
            y = g.conv2d(y, w, b, s, p)?;
            y = g.activation(y, Activation::Elu)?;
        }
        for i in 0..2 {
            let (w, b) = (g.param(h, 6 + 2 * i), g.param(h, 7 + 2 * i));
            y = g.conv_transpose2d(y, w, b, 2, 1)?;
            let act = if i == 0 { Activation::Elu } else { Activation::Sigmoid };
            y = g.activation(y, act)?;
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringNet<T> {
    pub arch: SteeringArch,
    pub params: ParamSet<T>,
    frozen: bool,
}

impl<T: Scalar> SteeringNet<T> {
    /// Seeded fan-in scaled initialization.
    pub fn new(arch: SteeringArch, seed: u64) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(arch)?;
        net.params.he_uniform(&arch.fan_ins()?, rng::derive_seed(seed, "steering"));
        Ok(net)
    }

    pub fn zeros(arch: SteeringArch) -> Result<Self, NeuralError> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: ParamSet::from_shapes(&arch.shapes()?),
            frozen: false,
        })
    }

    pub fn from_params(arch: SteeringArch, params: ParamSet<T>) -> Result<Self, NeuralError> {
        arch.validate()?;
        params.check_shapes(&arch.shapes()?)?;
        Ok(Self {
            arch,
            params,
            frozen: false,
        })
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    pub fn cast<U: Scalar>(&self) -> SteeringNet<U> {
        SteeringNet {
            arch: self.arch,
            params: self.params.cast(),
            frozen: self.frozen,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseAE<T> {
    pub arch: DaeArch,
    pub params: ParamSet<T>,
}

impl<T: Scalar> DenoiseAE<T> {
    pub fn new(arch: DaeArch, seed: u64) -> Result<Self, NeuralError> {
        let mut ae = Self::zeros(arch)?;
        ae.params.he_uniform(&arch.fan_ins(), rng::derive_seed(seed, "dae"));
        Ok(ae)
    }

    pub fn zeros(arch: DaeArch) -> Result<Self, NeuralError> {
        arch.validate()?;
        Ok(Self {
            arch,
            params: ParamSet::from_shapes(&arch.shapes()),
        })
    }

    pub fn from_params(arch: DaeArch, params: ParamSet<T>) -> Result<Self, NeuralError> {
        arch.validate()?;
        params.check_shapes(&arch.shapes())?;
        Ok(Self { arch, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    pub fn cast<U: Scalar>(&self) -> DenoiseAE<U> {
        DenoiseAE {
            arch: self.arch,
            params: self.params.cast(),
        }
    }
}
