//! The enhancement model: structure network f_S on the LL band, detail
//! network f_D on LH/HL/HH, an optional Wasserstein critic, and the full
//! DWT → networks → IDWT pipeline.

mod critic;
mod detail;
mod layers;
mod structure;

pub use critic::Critic;
pub use detail::DetailNet;
pub use structure::StructureNet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{no_grad, Parameter, Real, Tensor};
use crate::wavelet::{dwt2_tensor, idwt2_tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructureNetConfig {
    /// Encoder/decoder depth (number of stride-2 downsamplings).
    pub levels: usize,
    /// Width of the top level; doubles per level.
    pub base_channels: usize,
    /// Feed the RGB/HSV/Lab stack (9 channels) rather than RGB alone.
    pub multi_color: bool,
}

impl Default for StructureNetConfig {
    fn default() -> Self {
        StructureNetConfig {
            levels: 3,
            base_channels: 32,
            multi_color: true,
        }
    }
}

impl StructureNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.levels > 8 {
            return Err(Error::Config(format!("structure levels must be in 1..=8, got {}", self.levels)));
        }
        if self.base_channels < 8 {
            return Err(Error::Config(format!(
                "structure base_channels must be at least 8, got {}",
                self.base_channels
            )));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        if self.multi_color {
            9
        } else {
            3
        }
    }

    pub fn out_channels(&self) -> usize {
        3
    }

    /// Spatial extents of the network input must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetailNetConfig {
    pub layers: usize,
    pub kernel: usize,
    pub width: usize,
    /// Input/output channels.
    pub channels: usize,
    /// Add the input band to the network output. The last layer is then
    /// zero-initialized so training starts from the unmodified details.
    pub residual: bool,
}

impl Default for DetailNetConfig {
    fn default() -> Self {
        DetailNetConfig {
            layers: 10,
            kernel: 3,
            width: 64,
            channels: 3,
            residual: true,
        }
    }
}

impl DetailNetConfig {
    pub fn validate(&self) -> Result<()> {
        let fixed = DetailNetConfig::default();
        if (self.layers, self.kernel, self.width, self.channels)
            != (fixed.layers, fixed.kernel, fixed.width, fixed.channels)
        {
            return Err(Error::Config(format!(
                "detail network shape is fixed at {} layers of {}x{} convs, {} wide, {} channels",
                fixed.layers, fixed.kernel, fixed.kernel, fixed.width, fixed.channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    /// Number of stride-2 4×4 conv layers.
    pub layers: usize,
    pub base_channels: usize,
    /// Weights are clipped into `±clip` after every critic update.
    pub clip: f64,
    pub leaky_slope: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            layers: 4,
            base_channels: 32,
            clip: 0.01,
            leaky_slope: 0.2,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_channels == 0 {
            return Err(Error::Config("critic needs at least one layer and channel".into()));
        }
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(Error::Config(format!("critic clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }

    pub fn clip_range(&self) -> (f64, f64) {
        (-self.clip, self.clip)
    }
}

/// Architecture plus the ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Decompose with the Haar DWT. When off, both networks see the
    /// full-resolution image and their outputs are summed.
    pub dwt: bool,
    /// Use f_D; when off the detail bands pass through unchanged.
    pub detail_net: bool,
    /// Build the critic and run adversarial fine-tuning.
    pub gan: bool,
    pub structure: StructureNetConfig,
    pub detail: DetailNetConfig,
    pub critic: CriticConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dwt: true,
            detail_net: true,
            gan: true,
            structure: StructureNetConfig::default(),
            detail: DetailNetConfig::default(),
            critic: CriticConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        self.detail.validate()?;
        self.critic.validate()
    }

    /// Input extents are padded to multiples of this before processing.
    pub fn size_multiple(&self) -> usize {
        let m = self.structure.divisor();
        if self.dwt {
            2 * m
        } else {
            m
        }
    }
}

/// Diagnostic overrides, not persisted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Hooks {
    /// Replace f_S with the identity on the structure band.
    pub structure_passthrough: bool,
}

/// Tensors produced by one generator pass.
pub struct GeneratorOutput<T: Real> {
    /// Estimated structure band (DWT mode) or f_S output (no-DWT mode).
    pub structure: Tensor<T>,
    /// Estimated LH, HL, HH bands (DWT mode only).
    pub details: Option<[Tensor<T>; 3]>,
    /// Reconstructed image, unclamped.
    pub image: Tensor<T>,
}

/// All networks of one model plus the configuration they were built from.
pub struct ModelBundle<T: Real = f32> {
    pub config: ModelConfig,
    pub seed: u64,
    pub structure: StructureNet<T>,
    pub detail: Option<DetailNet<T>>,
    pub critic: Option<Critic<T>>,
    pub hooks: Hooks,
}

impl<T: Real> ModelBundle<T> {
    /// Builds and initializes every network enabled by `config`.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle {
            config: config.clone(),
            seed,
            structure: StructureNet::new(&config.structure, seed)?,
            detail: if config.detail_net {
                Some(DetailNet::new(&config.detail, seed)?)
            } else {
                None
            },
            critic: if config.gan {
                Some(Critic::new(&config.critic, seed)?)
            } else {
                None
            },
            hooks: Hooks::default(),
        };
        let mut names = std::collections::HashSet::new();
        for p in bundle.params() {
            if !names.insert(p.name().to_string()) {
                return Err(Error::Usage(format!("duplicate parameter name {}", p.name())));
            }
        }
        Ok(bundle)
    }

    /// Re-draws every parameter from `seed` (He-normal weights, zero biases)
    /// and resets optimizer state.
    pub fn init_params(&mut self, seed: u64) -> Result<()> {
        let fresh = ModelBundle::<T>::new(&self.config, seed)?;
        let values: std::collections::HashMap<String, Vec<T>> = fresh
            .params()
            .into_iter()
            .map(|p| (p.name().to_string(), p.values()))
            .collect();
        for p in self.params_mut() {
            let v = &values[p.name()];
            p.set_values(v)?;
            p.set_optimizer_state(&vec![T::ZERO; v.len()])?;
            p.zero_grad();
        }
        self.seed = seed;
        Ok(())
    }

    /// Every parameter in a fixed order: structure, detail, critic.
    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.structure.params();
        if let Some(d) = &self.detail {
            v.extend(d.params());
        }
        if let Some(c) = &self.critic {
            v.extend(c.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut v = self.structure.params_mut();
        if let Some(d) = &mut self.detail {
            v.extend(d.params_mut());
        }
        if let Some(c) = &mut self.critic {
            v.extend(c.params_mut());
        }
        v
    }

    /// Parameters of f_S and f_D.
    pub fn generator_params(&self) -> Vec<&Parameter<T>> {
        let mut v = self.structure.params();
        if let Some(d) = &self.detail {
            v.extend(d.params());
        }
        v
    }

    /// Corrects an `N×3×h×w` structure band in `[0, 2]`.
    pub fn structure_forward(&self, ll: &Tensor<T>) -> Result<Tensor<T>> {
        if self.hooks.structure_passthrough {
            return Ok(ll.clone());
        }
        let input = self.structure.prepare_input(ll)?;
        self.structure.forward(&input)
    }

    /// Applies f_D to one detail band. Without a detail network the band is
    /// returned unchanged.
    pub fn detail_forward(&self, band: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.detail {
            Some(d) => d.forward(band),
            None => Ok(band.clone()),
        }
    }

    pub fn critic_forward(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.critic
            .as_ref()
            .ok_or_else(|| Error::Usage("model was built without a critic".into()))?
            .forward(images)
    }

    /// Differentiable generator pass on an `N×3×H×W` batch whose extents are
    /// multiples of [`ModelConfig::size_multiple`].
    pub fn generate(&self, images: &Tensor<T>) -> Result<GeneratorOutput<T>> {
        let &[_, _, h, w] = images.shape() else {
            return Err(Error::Dimension(format!("expected NCHW, got {:?}", images.shape())));
        };
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Dimension(format!(
                "generator input {h}x{w} must be divisible by {m}"
            )));
        }
        if !self.config.dwt {
            let structure = self.structure_forward(&images.scale(2.0))?.scale(0.5);
            let image = match &self.detail {
                Some(d) => structure.add(&d.forward(images)?)?,
                None => structure.clone(),
            };
            return Ok(GeneratorOutput {
                structure,
                details: None,
                image,
            });
        }
        let [ll, lh, hl, hh] = dwt2_tensor(images)?;
        let structure = self.structure_forward(&ll)?;
        let details = match &self.detail {
            Some(d) => d.forward_bands([&lh, &hl, &hh])?,
            None => [lh, hl, hh],
        };
        let [d0, d1, d2] = &details;
        let image = idwt2_tensor(&[structure.clone(), d0.clone(), d1.clone(), d2.clone()])?;
        Ok(GeneratorOutput {
            structure,
            details: Some(details),
            image,
        })
    }

    /// Enhances one image of any size: reflect-pads to the required
    /// multiple, runs the generator without recording gradients, crops back
    /// and clamps into `[0, 1]`.
    pub fn enhance(&self, image: &Image) -> Result<Image> {
        if image.channels() != 3 {
            return Err(Error::Dimension(format!(
                "enhance expects an RGB image, got {} channels",
                image.channels()
            )));
        }
        if image.is_empty() {
            return Err(Error::Domain("cannot enhance an empty image".into()));
        }
        let m = self.config.size_multiple();
        let (h, w) = (image.height(), image.width());
        let padded = image.pad_reflect((m - h % m) % m, (m - w % m) % m);
        let out = no_grad(|| -> Result<Image> {
            let t = padded.to_tensor::<T>();
            let g = self.generate(&t)?;
            Image::from_tensor(&g.image, 0)
        })?;
        Ok(out.crop(0, 0, h, w)?.clamp01())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rmsprop_step;
    use crate::wavelet::{dwt2, idwt2, SubBands};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            structure: StructureNetConfig {
                levels: 2,
                base_channels: 8,
                multi_color: true,
            },
            critic: CriticConfig {
                base_channels: 8,
                ..CriticConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(3, h, w, |_, _, _| rng.random::<f32>())
    }

    #[test]
    fn detail_parameter_count() {
        let net = DetailNet::<f32>::new(&DetailNetConfig::default(), 0).unwrap();
        let expect = 3 * 64 * 9 + 64 + 8 * (64 * 64 * 9 + 64) + 64 * 3 * 9 + 3;
        assert_eq!(expect, 298_947);
        assert_eq!(net.num_params(), expect);
    }

    #[test]
    fn detail_shape_and_zero_output() {
        let cfg = DetailNetConfig {
            residual: false,
            ..DetailNetConfig::default()
        };
        let mut net = DetailNet::<f32>::new(&cfg, 1).unwrap();
        let last = net.params_mut().into_iter().rev().take(2).collect::<Vec<_>>();
        for p in last {
            let n = p.numel();
            p.set_values(&vec![0.0; n]).unwrap();
        }
        let x = random_image(2, 6, 5).to_tensor::<f32>();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_detail_weights_are_order_independent() {
        let net = DetailNet::<f32>::new(
            &DetailNetConfig {
                residual: false,
                ..DetailNetConfig::default()
            },
            3,
        )
        .unwrap();
        let bands: Vec<_> = (0..3).map(|i| random_image(10 + i, 4, 4).to_tensor::<f32>()).collect();
        let a = net.forward_bands([&bands[0], &bands[1], &bands[2]]).unwrap();
        let b = net.forward_bands([&bands[2], &bands[0], &bands[1]]).unwrap();
        assert_eq!(a[0].to_vec(), b[1].to_vec());
        assert_eq!(a[1].to_vec(), b[2].to_vec());
        assert_eq!(a[2].to_vec(), b[0].to_vec());
        assert_eq!(a[0].to_vec(), net.forward(&bands[0]).unwrap().to_vec());
    }

    #[test]
    fn structure_output_range_and_shape() {
        let bundle = ModelBundle::<f32>::new(&ModelConfig::default(), 4).unwrap();
        let ll = random_image(5, 16, 8).map(|v| 2.0 * v).to_tensor::<f32>();
        let out = bundle.structure_forward(&ll).unwrap();
        assert_eq!(out.shape(), ll.shape());
        assert!(out.to_vec().iter().all(|&v| (0.0..=2.0).contains(&v)));
    }

    #[test]
    fn structure_divisibility_error_hints_padding() {
        let bundle = ModelBundle::<f32>::new(&ModelConfig::default(), 4).unwrap();
        let ll = random_image(5, 12, 8).to_tensor::<f32>();
        let err = bundle.structure_forward(&ll).err().unwrap();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("pad by 4x0")), "{err}");
    }

    #[test]
    fn structure_is_deterministic() {
        let a = ModelBundle::<f32>::new(&small_config(), 9).unwrap();
        let b = ModelBundle::<f32>::new(&small_config(), 9).unwrap();
        let ll = random_image(6, 8, 8).to_tensor::<f32>();
        let ya = a.structure_forward(&ll).unwrap().to_vec();
        let yb = b.structure_forward(&ll).unwrap().to_vec();
        assert_eq!(ya.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), yb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn critic_scores_and_clipping() {
        let mut bundle = ModelBundle::<f32>::new(&small_config(), 7).unwrap();
        let x = random_image(8, 32, 32).to_tensor::<f32>();
        let s1 = bundle.critic_forward(&x).unwrap();
        assert_eq!(s1.shape(), &[1]);
        let y = random_image(9, 32, 32).to_tensor::<f32>();
        assert_ne!(s1.item(), bundle.critic_forward(&y).unwrap().item());
        let min = bundle.critic.as_ref().unwrap().min_input_size();
        let tiny = random_image(1, min, min).to_tensor::<f32>();
        assert_eq!(bundle.critic_forward(&tiny).unwrap().shape(), &[1]);

        // Push weights out of range, then clip.
        let critic = bundle.critic.as_mut().unwrap();
        for p in critic.params_mut() {
            let v: Vec<f32> = p.values().iter().map(|v| v * 100.0).collect();
            p.set_values(&v).unwrap();
        }
        critic.clip().unwrap();
        for p in critic.params() {
            assert!(p.values().iter().all(|v| v.abs() <= 0.01));
        }
    }

    #[test]
    fn init_statistics_and_seeding() {
        let a = ModelBundle::<f32>::new(&ModelConfig::default(), 1).unwrap();
        let b = ModelBundle::<f32>::new(&ModelConfig::default(), 1).unwrap();
        let c = ModelBundle::<f32>::new(&ModelConfig::default(), 2).unwrap();
        let pa: Vec<_> = a.params().iter().flat_map(|p| p.values()).collect();
        let pb: Vec<_> = b.params().iter().flat_map(|p| p.values()).collect();
        let pc: Vec<_> = c.params().iter().flat_map(|p| p.values()).collect();
        assert_eq!(pa, pb);
        assert_ne!(pa, pc);

        let w = a
            .params()
            .into_iter()
            .find(|p| p.name() == "fd.conv3.weight")
            .unwrap()
            .values();
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let std = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (2.0f64 / (64.0 * 9.0)).sqrt();
        assert!((std - target).abs() / target < 0.2, "std {std} vs {target}");
        assert!(a
            .params()
            .iter()
            .filter(|p| p.name().ends_with(".bias"))
            .all(|p| p.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn init_params_reseeds() {
        let mut a = ModelBundle::<f32>::new(&small_config(), 1).unwrap();
        let b = ModelBundle::<f32>::new(&small_config(), 5).unwrap();
        a.init_params(5).unwrap();
        let pa: Vec<_> = a.params().iter().flat_map(|p| p.values()).collect();
        let pb: Vec<_> = b.params().iter().flat_map(|p| p.values()).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn enhance_preserves_shape_and_range() {
        let bundle = ModelBundle::<f32>::new(&small_config(), 3).unwrap();
        for (h, w) in [(16, 16), (17, 23), (9, 31)] {
            let img = random_image(h as u64, h, w);
            let out = bundle.enhance(&img).unwrap();
            assert_eq!((out.channels(), out.height(), out.width()), (3, h, w));
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn identity_nets_give_half_band_blur() {
        let mut cfg = small_config();
        cfg.detail.residual = false;
        let mut bundle = ModelBundle::<f32>::new(&cfg, 3).unwrap();
        bundle.hooks.structure_passthrough = true;
        let detail = bundle.detail.as_mut().unwrap();
        for p in detail.params_mut().into_iter().rev().take(2) {
            let n = p.numel();
            p.set_values(&vec![0.0; n]).unwrap();
        }
        let img = random_image(4, 16, 24);
        let bands = dwt2(&img).unwrap();
        let blur = idwt2(&SubBands {
            ll: bands.ll.clone(),
            lh: Image::new(3, 8, 12),
            hl: Image::new(3, 8, 12),
            hh: Image::new(3, 8, 12),
            parent_shape: (16, 24),
        })
        .unwrap();
        let out = bundle.enhance(&img).unwrap();
        for (a, b) in out.data().iter().zip(blur.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn enhance_is_deterministic() {
        let a = ModelBundle::<f32>::new(&small_config(), 12).unwrap();
        let b = ModelBundle::<f32>::new(&small_config(), 12).unwrap();
        let img = random_image(1, 20, 20);
        assert_eq!(a.enhance(&img).unwrap(), b.enhance(&img).unwrap());
    }

    #[test]
    fn ablation_variants_run() {
        for (dwt, detail_net, multi_color, gan) in [
            (true, false, false, false),
            (false, true, false, false),
            (true, true, false, false),
            (true, true, true, false),
            (true, true, true, true),
            (false, false, true, false),
        ] {
            let mut cfg = small_config();
            cfg.dwt = dwt;
            cfg.detail_net = detail_net;
            cfg.structure.multi_color = multi_color;
            cfg.gan = gan;
            let bundle = ModelBundle::<f32>::new(&cfg, 0).unwrap();
            let img = random_image(2, 19, 18);
            let out = bundle.enhance(&img).unwrap();
            assert_eq!((out.height(), out.width()), (19, 18));
            assert_eq!(bundle.critic.is_some(), gan);
        }
    }

    #[test]
    fn generator_trains_one_step() {
        let mut bundle = ModelBundle::<f32>::new(&small_config(), 0).unwrap();
        let x = random_image(1, 16, 16).to_tensor::<f32>();
        let out = bundle.generate(&x).unwrap();
        out.image.sub(&x).unwrap().square().mean().backward().unwrap();
        let before: Vec<f32> = bundle.structure.params()[0].values();
        rmsprop_step(bundle.structure.params_mut(), 1e-3, 0.9, 1e-8).unwrap();
        assert_ne!(before, bundle.structure.params()[0].values());
    }
}
