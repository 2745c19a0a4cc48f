//! Wasserstein critic: strided 4×4 convolutions with leaky ReLU, a 1×1
//! projection to one channel, and a global average to one score per image.

use super::layers::{Conv2d, Init};
use super::CriticConfig;
use crate::error::{Error, Result};
use crate::tensor::{clamp_params, Parameter, Real, Tensor};

pub struct Critic<T: Real> {
    config: CriticConfig,
    layers: Vec<Conv2d<T>>,
    project: Conv2d<T>,
}

impl<T: Real> Critic<T> {
    pub fn new(config: &CriticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        let mut in_ch = 3;
        for i in 0..config.layers {
            let out_ch = config.base_channels << i;
            layers.push(Conv2d::new(&format!("critic.conv{i}"), in_ch, out_ch, 4, 2, 1, seed, Init::He)?);
            in_ch = out_ch;
        }
        let project = Conv2d::new("critic.project", in_ch, 1, 1, 1, 0, seed, Init::He)?;
        let mut critic = Critic {
            config: config.clone(),
            layers,
            project,
        };
        critic.clip()?;
        Ok(critic)
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    /// Smallest square input that survives every stride-2 layer.
    pub fn min_input_size(&self) -> usize {
        1 << self.config.layers
    }

    /// Scores for an `N×3×H×W` batch, shape `[N]`. No output nonlinearity.
    pub fn forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        if let &[_, _, h, w] = images.shape() {
            let m = self.min_input_size();
            if h < m || w < m {
                return Err(Error::Dimension(format!(
                    "critic needs inputs of at least {m}x{m}, got {h}x{w}"
                )));
            }
        }
        let mut x = images.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?.leaky_relu(self.config.leaky_slope);
        }
        self.project.forward(&x)?.mean_trailing(1)
    }

    /// Clips every weight into `±clip`.
    pub fn clip(&mut self) -> Result<()> {
        let c = self.config.clip;
        clamp_params(self.params_mut(), -c, c)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = self.layers.iter().flat_map(|l| l.params()).collect();
        v.extend(self.project.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> =
            self.layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        v.extend(self.project.params_mut());
        v
    }
}
