//! Training objectives: the L1 + MS-SSIM structure loss on the LL band, the
//! RMS detail loss on LH/HL/HH, the Wasserstein critic/generator pair, and
//! their weighted sum.
//!
//! Norms are mean-normalized per element so magnitudes do not depend on
//! resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Real, Tensor};

/// Weights of the total objective and of the structure loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Structure loss weight.
    pub lambda1: f64,
    /// Detail loss weight.
    pub lambda2: f64,
    /// Adversarial loss weight.
    pub lambda3: f64,
    /// MS-SSIM share of the structure loss; `1 − alpha` goes to L1.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.5,
            lambda2: 1.0,
            lambda3: 1.0,
            alpha: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.alpha];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        if self.alpha > 1.0 {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Canonical per-scale exponents of five-scale MS-SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: prediction {:?} vs target {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(pred, target, "l1_loss")?;
    Ok(pred.sub(target)?.abs().mean())
}

/// Root of the mean squared difference for one detail band.
pub fn detail_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(pred, target, "detail_loss")?;
    Ok(pred.sub(target)?.square().mean().sqrt())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / s).collect()
}

fn gaussian_window<T: Real>() -> Tensor<T> {
    let g = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let data = g
        .iter()
        .flat_map(|&a| g.iter().map(move |&b| T::from_f64(a * b)))
        .collect();
    Tensor::from_vec(&[1, 1, SSIM_WINDOW, SSIM_WINDOW], data).expect("window shape")
}

fn avg_pool2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let k = Tensor::from_vec(&[1, 1, 2, 2], vec![T::from_f64(0.25); 4])?;
    conv2d(x, &k, None, 2, 0)
}

/// Number of scales usable for an `h×w` image: the coarsest level must
/// still fit the 11×11 window.
pub fn feasible_scales(h: usize, w: usize) -> usize {
    let mut side = h.min(w);
    let mut s = 0;
    while side >= SSIM_WINDOW {
        s += 1;
        side /= 2;
    }
    s
}

/// Per-channel SSIM statistics at one scale on `(N·C)×1×H×W` planes.
struct ScaleStats<T: Real> {
    /// Mean contrast-structure term, shape `[N·C]`.
    cs: Tensor<T>,
    /// Mean full SSIM, shape `[N·C]`.
    ssim: Tensor<T>,
}

fn scale_stats<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    window: &Tensor<T>,
    c1: f64,
    c2: f64,
) -> Result<ScaleStats<T>> {
    let blur = |t: &Tensor<T>| conv2d(t, window, None, 1, 0);
    let mu_x = blur(x)?;
    let mu_y = blur(y)?;
    let mu_xx = mu_x.square();
    let mu_yy = mu_y.square();
    let mu_xy = mu_x.mul(&mu_y)?;
    let s_xx = blur(&x.square())?.sub(&mu_xx)?;
    let s_yy = blur(&y.square())?.sub(&mu_yy)?;
    let s_xy = blur(&x.mul(y)?)?.sub(&mu_xy)?;
    let cs_map = s_xy
        .scale(2.0)
        .add_scalar(c2)
        .div(&s_xx.add(&s_yy)?.add_scalar(c2))?;
    let l_map = mu_xy
        .scale(2.0)
        .add_scalar(c1)
        .div(&mu_xx.add(&mu_yy)?.add_scalar(c1))?;
    let rows = x.shape()[0];
    let flat = |t: Tensor<T>| -> Result<Tensor<T>> {
        let n = t.numel() / rows;
        t.reshape(&[rows, n])?.mean_trailing(1)
    };
    Ok(ScaleStats {
        ssim: flat(l_map.mul(&cs_map)?)?,
        cs: flat(cs_map)?,
    })
}

/// Output of [`ms_ssim`].
#[derive(Debug)]
pub struct MsSsim<T: Real> {
    /// Scalar similarity averaged over batch and channels.
    pub value: Tensor<T>,
    /// Scales actually used (may be fewer than requested for small inputs).
    pub scales: usize,
}

/// Multi-scale SSIM of two `N×C×H×W` tensors.
///
/// Uses an 11×11 Gaussian window (σ = 1.5) without padding and 2×2 average
/// pooling between scales. `C1 = (0.01·range)²`, `C2 = (0.03·range)²`.
/// When the image is too small for `scales` levels, the count drops to the
/// largest feasible one and the leading weights are renormalized to sum to
/// the original total. Per-scale terms are clipped at zero before the
/// fractional power.
pub fn ms_ssim<T: Real>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    scales: usize,
    weights: &[f64],
    data_range: f64,
) -> Result<MsSsim<T>> {
    same_shape(x, y, "ms_ssim")?;
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::Dimension(format!("ms_ssim expects NCHW, got {:?}", x.shape())));
    };
    if scales == 0 || weights.len() < scales {
        return Err(Error::Usage(format!(
            "ms_ssim: {scales} scales with {} weights",
            weights.len()
        )));
    }
    let feasible = feasible_scales(h, w);
    if feasible == 0 {
        return Err(Error::Domain(format!(
            "ms_ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} inputs, got {h}x{w}"
        )));
    }
    let used = scales.min(feasible);
    let total: f64 = weights[..scales].iter().sum();
    let part: f64 = weights[..used].iter().sum();
    let wts: Vec<f64> = weights[..used].iter().map(|v| v * total / part).collect();

    let (c1, c2) = ((K1 * data_range).powi(2), (K2 * data_range).powi(2));
    let window = gaussian_window::<T>();
    let mut xs = x.reshape(&[n * c, 1, h, w])?;
    let mut ys = y.reshape(&[n * c, 1, h, w])?;
    let mut product: Option<Tensor<T>> = None;
    for (j, &wj) in wts.iter().enumerate() {
        let stats = scale_stats(&xs, &ys, &window, c1, c2)?;
        let term = if j + 1 == used { stats.ssim } else { stats.cs };
        let term = term.powf_floored(wj, 0.0);
        product = Some(match product {
            None => term,
            Some(p) => p.mul(&term)?,
        });
        if j + 1 < used {
            xs = avg_pool2(&xs)?;
            ys = avg_pool2(&ys)?;
        }
    }
    Ok(MsSsim {
        value: product.expect("at least one scale").mean(),
        scales: used,
    })
}

/// `1 − MS-SSIM` with the canonical five-scale weights.
pub fn ms_ssim_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    data_range: f64,
) -> Result<Tensor<T>> {
    let m = ms_ssim(pred, target, MS_SSIM_WEIGHTS.len(), &MS_SSIM_WEIGHTS, data_range)?;
    Ok(m.value.neg().add_scalar(1.0))
}

/// `α·(1 − MS-SSIM) + (1 − α)·L1`. Terms with zero weight are skipped, so
/// `α = 0` is exactly L1 and `α = 1` exactly the MS-SSIM loss.
pub fn structure_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    alpha: f64,
    data_range: f64,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Usage(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if alpha == 0.0 {
        return l1_loss(pred, target);
    }
    if alpha == 1.0 {
        return ms_ssim_loss(pred, target, data_range);
    }
    let ms = ms_ssim_loss(pred, target, data_range)?;
    let l1 = l1_loss(pred, target)?;
    ms.scale(alpha).add(&l1.scale(1.0 - alpha))
}

/// Wasserstein objectives from per-sample critic scores:
/// `critic = mean(fake) − mean(real)`, `generator = −mean(fake)`.
pub fn wgan_losses<T: Real>(
    critic_real: &Tensor<T>,
    critic_fake: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let fake = critic_fake.mean();
    let critic = fake.sub(&critic_real.mean())?;
    Ok((critic, fake.neg()))
}

/// `λ₁·L_S + λ₂·L_D + λ₃·L_adv`; the adversarial term is omitted when absent
/// (pre-training phase).
pub fn total_loss<T: Real>(
    l_s: &Tensor<T>,
    l_d: &Tensor<T>,
    l_adv: Option<&Tensor<T>>,
    weights: &LossWeights,
) -> Result<Tensor<T>> {
    let mut total = l_s.scale(weights.lambda1).add(&l_d.scale(weights.lambda2))?;
    if let Some(adv) = l_adv {
        total = total.add(&adv.scale(weights.lambda3))?;
    }
    Ok(total)
}
