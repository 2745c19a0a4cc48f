//! Multi-color-space fusion network: a U-net over the 9-channel
//! RGB/HSV/Lab stack of the half-resolution structure band.

use super::layers::{Conv2d, ConvTranspose2d, Init};
use super::StructureNetConfig;
use crate::colorspace::multi_color_stack;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{concat_channels, Parameter, Real, Tensor};

struct Level<T: Real> {
    /// Stride-2 downsampling conv (absent at the top level).
    down: Option<Conv2d<T>>,
    conv: Conv2d<T>,
}

struct UpLevel<T: Real> {
    up: ConvTranspose2d<T>,
    conv: Conv2d<T>,
}

pub struct StructureNet<T: Real> {
    config: StructureNetConfig,
    stem: Conv2d<T>,
    encoder: Vec<Level<T>>,
    decoder: Vec<UpLevel<T>>,
    head: Conv2d<T>,
}

impl<T: Real> StructureNet<T> {
    pub fn new(config: &StructureNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let in_ch = config.in_channels();
        let width = |l: usize| config.base_channels << l;
        let stem = Conv2d::new("fs.stem", in_ch, width(0), 3, 1, 1, seed, Init::He)?;
        let mut encoder = Vec::with_capacity(config.levels + 1);
        encoder.push(Level {
            down: None,
            conv: Conv2d::new("fs.enc0.conv", width(0), width(0), 3, 1, 1, seed, Init::He)?,
        });
        for l in 1..=config.levels {
            encoder.push(Level {
                down: Some(Conv2d::new(
                    &format!("fs.enc{l}.down"),
                    width(l - 1),
                    width(l),
                    3,
                    2,
                    1,
                    seed,
                    Init::He,
                )?),
                conv: Conv2d::new(&format!("fs.enc{l}.conv"), width(l), width(l), 3, 1, 1, seed, Init::He)?,
            });
        }
        let mut decoder = Vec::with_capacity(config.levels);
        for l in (1..=config.levels).rev() {
            decoder.push(UpLevel {
                up: ConvTranspose2d::new(&format!("fs.dec{l}.up"), width(l), width(l - 1), 2, 2, seed)?,
                conv: Conv2d::new(
                    &format!("fs.dec{l}.conv"),
                    2 * width(l - 1),
                    width(l - 1),
                    3,
                    1,
                    1,
                    seed,
                    Init::He,
                )?,
            });
        }
        let head = Conv2d::new("fs.head", width(0), 3, 1, 1, 0, seed, Init::He)?;
        Ok(StructureNet {
            config: config.clone(),
            stem,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &StructureNetConfig {
        &self.config
    }

    /// Builds the network input from an `N×3×h×w` structure band in
    /// `[0, 2]`: halve, then stack RGB/HSV/Lab (or RGB only).
    pub fn prepare_input(&self, ll: &Tensor<T>) -> Result<Tensor<T>> {
        let &[n, c, h, w] = ll.shape() else {
            return Err(Error::Dimension(format!("expected NCHW, got {:?}", ll.shape())));
        };
        if c != 3 {
            return Err(Error::Dimension(format!("structure input has {c} channels, expected 3")));
        }
        let half = ll.scale(0.5);
        if !self.config.multi_color {
            return Ok(half.detach());
        }
        let mut data = Vec::with_capacity(n * 9 * h * w);
        for i in 0..n {
            let img = Image::from_tensor(&half, i)?;
            let stack = multi_color_stack(&img);
            data.extend(stack.data().iter().map(|&v| T::from_f64(v as f64)));
        }
        Tensor::from_vec(&[n, 9, h, w], data)
    }

    /// Maps a prepared input to the corrected structure band in `[0, 2]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let &[_, c, h, w] = input.shape() else {
            return Err(Error::Dimension(format!("expected NCHW, got {:?}", input.shape())));
        };
        let m = self.config.divisor();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Dimension(format!(
                "structure network input {h}x{w} must be divisible by {m}; pad by {}x{}",
                (m - h % m) % m,
                (m - w % m) % m
            )));
        }
        if c != self.config.in_channels() {
            return Err(Error::Dimension(format!(
                "structure network expects {} input channels, got {c}",
                self.config.in_channels()
            )));
        }
        let mut x = self.stem.forward(input)?.relu();
        let mut skips = Vec::with_capacity(self.config.levels);
        for (l, level) in self.encoder.iter().enumerate() {
            if let Some(down) = &level.down {
                x = down.forward(&x)?.relu();
            }
            x = level.conv.forward(&x)?.relu();
            if l < self.config.levels {
                skips.push(x.clone());
            }
        }
        for level in &self.decoder {
            let skip = skips.pop().expect("one skip per level");
            let up = level.up.forward(&x)?.relu();
            x = level.conv.forward(&concat_channels(&[up, skip])?)?.relu();
        }
        Ok(self.head.forward(&x)?.sigmoid().scale(2.0))
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v: Vec<&Parameter<T>> = self.stem.params().into();
        for l in &self.encoder {
            if let Some(d) = &l.down {
                v.extend(d.params());
            }
            v.extend(l.conv.params());
        }
        for l in &self.decoder {
            v.extend(l.up.params());
            v.extend(l.conv.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v: Vec<&mut Parameter<T>> = self.stem.params_mut().into();
        for l in &mut self.encoder {
            if let Some(d) = &mut l.down {
                v.extend(d.params_mut());
            }
            v.extend(l.conv.params_mut());
        }
        for l in &mut self.decoder {
            v.extend(l.up.params_mut());
            v.extend(l.conv.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}
