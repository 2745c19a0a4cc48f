use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{conv2d, conv_transpose2d, Parameter, Real, Tensor};

/// Per-parameter RNG stream: the bundle seed mixed with the parameter name,
/// so one layer's initialization does not depend on which other layers exist.
pub(crate) fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    crate::seed::stream(seed, name)
}

pub(crate) fn he_normal<T: Real>(seed: u64, name: &str, len: usize, fan_in: usize) -> Vec<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = param_rng(seed, name);
    (0..len).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    He,
    Zero,
}

/// Correlation layer with bias.
pub struct Conv2d<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        seed: u64,
        init: Init,
    ) -> Result<Self> {
        let wname = format!("{name}.weight");
        let len = out_ch * in_ch * kernel * kernel;
        let w = match init {
            Init::He => he_normal(seed, &wname, len, in_ch * kernel * kernel),
            Init::Zero => vec![T::ZERO; len],
        };
        Ok(Conv2d {
            weight: Parameter::new(wname, &[out_ch, in_ch, kernel, kernel], w)?,
            bias: Parameter::new(format!("{name}.bias"), &[out_ch], vec![T::ZERO; out_ch])?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            self.weight.tensor(),
            Some(self.bias.tensor()),
            self.stride,
            self.padding,
        )
    }

    pub(crate) fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Transposed-convolution layer (`Cin×Cout×K×K` weight) with bias.
pub struct ConvTranspose2d<T: Real> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    pub(crate) fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        seed: u64,
    ) -> Result<Self> {
        let wname = format!("{name}.weight");
        let len = in_ch * out_ch * kernel * kernel;
        // Each output sample sees in_ch·(K/stride)² weights.
        let fan_in = (in_ch * kernel * kernel / (stride * stride)).max(1);
        Ok(ConvTranspose2d {
            weight: Parameter::new(
                wname.clone(),
                &[in_ch, out_ch, kernel, kernel],
                he_normal(seed, &wname, len, fan_in),
            )?,
            bias: Parameter::new(format!("{name}.bias"), &[out_ch], vec![T::ZERO; out_ch])?,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv_transpose2d(x, self.weight.tensor(), Some(self.bias.tensor()), self.stride, 0)
    }

    pub(crate) fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
