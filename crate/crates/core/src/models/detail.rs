//! Detail enhancement network: ten 3×3 convolutions, 64 wide, shared by
//! the three high-frequency bands.

use super::layers::{Conv2d, Init};
use super::DetailNetConfig;
use crate::error::{Error, Result};
use crate::tensor::{concat, Parameter, Real, Tensor};

pub struct DetailNet<T: Real> {
    config: DetailNetConfig,
    layers: Vec<Conv2d<T>>,
}

impl<T: Real> DetailNet<T> {
    pub fn new(config: &DetailNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.layers;
        let k = config.kernel;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let in_ch = if i == 0 { config.channels } else { config.width };
            let out_ch = if i + 1 == n { config.channels } else { config.width };
            let init = if i + 1 == n && config.residual {
                Init::Zero
            } else {
                Init::He
            };
            layers.push(Conv2d::new(&format!("fd.conv{i}"), in_ch, out_ch, k, 1, k / 2, seed, init)?);
        }
        Ok(DetailNet {
            config: config.clone(),
            layers,
        })
    }

    pub fn config(&self) -> &DetailNetConfig {
        &self.config
    }

    /// ReLU after every layer but the last, so details can be negative.
    pub fn forward(&self, band: &Tensor<T>) -> Result<Tensor<T>> {
        if band.ndim() != 4 || band.shape()[1] != self.config.channels {
            return Err(Error::Dimension(format!(
                "detail network expects N×{}×h×w, got {:?}",
                self.config.channels,
                band.shape()
            )));
        }
        let last = self.layers.len() - 1;
        let mut x = band.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x)?;
            if i < last {
                x = x.relu();
            }
        }
        if self.config.residual {
            x = x.add(band)?;
        }
        Ok(x)
    }

    /// Runs the three detail bands through the same weights in one batched
    /// pass and splits the result back in input order.
    pub fn forward_bands(&self, bands: [&Tensor<T>; 3]) -> Result<[Tensor<T>; 3]> {
        let n = bands[0].shape().first().copied().unwrap_or(0);
        let stacked = concat(&[bands[0].clone(), bands[1].clone(), bands[2].clone()], 0)?;
        let out = self.forward(&stacked)?;
        Ok([out.narrow(0, 0, n)?, out.narrow(0, n, n)?, out.narrow(0, 2 * n, n)?])
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
