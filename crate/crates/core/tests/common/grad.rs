use rand_chacha::ChaCha8Rng;
use uwdual::losses::{detail_loss, l1_loss, ms_ssim_loss, structure_loss, total_loss, wgan_losses, LossWeights};
use uwdual::models::{CriticConfig, ModelBundle, ModelConfig, StructureNetConfig};
use uwdual::tensor::{concat_channels, conv2d, conv_transpose2d, Tensor};
use uwdual::wavelet::{dwt2_tensor, idwt2_tensor};
use uwdual::Result;

use super::{gradcheck, gradcheck_step, random_leaf, rng};

const SAMPLES: usize = 24;

/// Reduces a tensor to a scalar through fixed random weights, so every
/// output element reaches the gradient with a distinct factor.
fn project(t: &Tensor<f64>, rng: &mut ChaCha8Rng) -> impl Fn(&Tensor<f64>) -> Result<Tensor<f64>> {
    let w = random_leaf(rng, t.shape(), -1.0, 1.0).detach();
    move |t: &Tensor<f64>| t.mul(&w).map(|p| p.sum())
}

pub fn conv2d_case() -> f64 {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for (k, stride, pad) in [(3, 1, 1), (4, 2, 1), (3, 2, 0), (1, 1, 0)] {
        let x = random_leaf(&mut r, &[2, 3, 7, 6], -1.0, 1.0);
        let w = random_leaf(&mut r, &[4, 3, k, k], -0.5, 0.5);
        let b = random_leaf(&mut r, &[4], -0.5, 0.5);
        let p = project(&conv2d(&x, &w, Some(&b), stride, pad).unwrap(), &mut r);
        worst = worst.max(gradcheck(&[&x, &w, &b], || p(&conv2d(&x, &w, Some(&b), stride, pad)?), SAMPLES, 1));
    }
    worst
}

pub fn conv_transpose2d_case() -> f64 {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for (k, stride, pad) in [(2, 2, 0), (4, 2, 1), (3, 1, 1)] {
        let x = random_leaf(&mut r, &[2, 4, 4, 5], -1.0, 1.0);
        let w = random_leaf(&mut r, &[4, 3, k, k], -0.5, 0.5);
        let b = random_leaf(&mut r, &[3], -0.5, 0.5);
        let f = |x: &Tensor<f64>| conv_transpose2d(x, &w, Some(&b), stride, pad);
        let p = project(&f(&x).unwrap(), &mut r);
        worst = worst.max(gradcheck(&[&x, &w, &b], || p(&f(&x)?), SAMPLES, 2));
    }
    worst
}

pub fn relu_case() -> f64 {
    let mut r = rng(3);
    // Values kept away from the kink.
    let x = Tensor::leaf(
        &[64],
        (0..64).map(|i| if i % 2 == 0 { 0.1 + i as f64 * 0.01 } else { -0.1 - i as f64 * 0.01 }).collect(),
    )
    .unwrap();
    let p = project(&x.relu(), &mut r);
    let a = gradcheck(&[&x], || p(&x.relu()), 64, 3);
    let p = project(&x.leaky_relu(0.2), &mut r);
    a.max(gradcheck(&[&x], || p(&x.leaky_relu(0.2)), 64, 3))
}

pub fn concat_case() -> f64 {
    let mut r = rng(4);
    let a = random_leaf(&mut r, &[2, 2, 3, 3], -1.0, 1.0);
    let b = random_leaf(&mut r, &[2, 3, 3, 3], -1.0, 1.0);
    let p = project(&concat_channels(&[a.clone(), b.clone()]).unwrap(), &mut r);
    gradcheck(&[&a, &b], || p(&concat_channels(&[a.clone(), b.clone()])?), SAMPLES, 4)
}

/// L1, RMS detail loss, MS-SSIM loss (both data ranges), the mixed
/// structure loss, WGAN losses and the weighted total.
pub fn losses_case() -> f64 {
    let mut r = rng(5);
    let x = random_leaf(&mut r, &[2, 3, 24, 24], 0.0, 1.0);
    let y = random_leaf(&mut r, &[2, 3, 24, 24], 0.0, 1.0).detach();
    let mut worst: f64 = 0.0;
    worst = worst.max(gradcheck(&[&x], || l1_loss(&x, &y), SAMPLES, 5));
    worst = worst.max(gradcheck(&[&x], || detail_loss(&x, &y), SAMPLES, 5));
    worst = worst.max(gradcheck(&[&x], || ms_ssim_loss(&x, &y, 1.0), SAMPLES, 5));
    worst = worst.max(gradcheck(&[&x], || ms_ssim_loss(&x.scale(2.0), &y.scale(2.0), 2.0), SAMPLES, 5));
    worst = worst.max(gradcheck(&[&x], || structure_loss(&x, &y, 0.5, 1.0), SAMPLES, 5));
    let real = random_leaf(&mut r, &[4, 1], -1.0, 1.0);
    let fake = random_leaf(&mut r, &[4, 1], -1.0, 1.0);
    worst = worst.max(gradcheck(&[&real, &fake], || Ok(wgan_losses(&real, &fake)?.0), 8, 5));
    worst = worst.max(gradcheck(&[&fake], || Ok(wgan_losses(&real, &fake)?.1), 8, 5));
    let [a, b, c] = [0; 3].map(|_| random_leaf(&mut r, &[1], 0.0, 1.0));
    let w = LossWeights::default();
    worst.max(gradcheck(&[&a, &b, &c], || total_loss(&a.sum(), &b.sum(), Some(&c.sum()), &w), 3, 5))
}

/// Small model in f64 with every parameter perturbed away from its
/// initialization (the detail network's last layer starts at zero).
fn pipeline_bundle() -> ModelBundle<f64> {
    let config = ModelConfig {
        structure: StructureNetConfig {
            levels: 2,
            base_channels: 8,
            multi_color: true,
        },
        critic: CriticConfig {
            layers: 3,
            base_channels: 4,
            ..CriticConfig::default()
        },
        ..ModelConfig::default()
    };
    let mut bundle = ModelBundle::<f64>::new(&config, 9).unwrap();
    let mut r = rng(6);
    for p in bundle.params_mut() {
        let noise = random_leaf(&mut r, p.shape(), -0.05, 0.05).to_vec();
        let v: Vec<f64> = p.values().iter().zip(noise).map(|(a, b)| a + b).collect();
        p.set_values(&v).unwrap();
    }
    bundle
}

/// Full generator on an 8×8 batch: DWT, f_S on the LL band with its color
/// conversions, f_D on the detail bands, inverse DWT, critic score, and the
/// three-term objective, differentiated with respect to every parameter
/// tensor. The structure term uses α = 0 because a 4×4 LL
/// band is below the MS-SSIM window; MS-SSIM is covered by the loss case.
pub fn pipeline_case() -> f64 {
    let bundle = pipeline_bundle();
    let mut r = rng(7);
    let x = random_leaf(&mut r, &[2, 3, 8, 8], 0.05, 0.95).detach();
    let clean = random_leaf(&mut r, &[2, 3, 8, 8], 0.0, 1.0).detach();
    let w = LossWeights::default();
    let objective = || -> Result<Tensor<f64>> {
        let out = bundle.generate(&x)?;
        let [gll, glh, ghl, ghh] = dwt2_tensor(&clean)?;
        let d = out.details.as_ref().expect("dwt model");
        let l_s = structure_loss(&out.structure, &gll, 0.0, 2.0)?;
        let l_d = detail_loss(&d[0], &glh)?.add(&detail_loss(&d[1], &ghl)?)?.add(&detail_loss(&d[2], &ghh)?)?;
        let adv = wgan_losses(&bundle.critic_forward(&out.image)?, &bundle.critic_forward(&clean)?)?.1;
        total_loss(&l_s, &l_d, Some(&adv), &w)
    };
    let params: Vec<&Tensor<f64>> = bundle.params().into_iter().map(|p| p.tensor()).collect();
    // Hundreds of ReLUs: a small step keeps the differences off their kinks.
    gradcheck_step(&params, objective, 6, 7, 1e-6)
}

/// Through the analysis and synthesis transforms with a nonlinearity in
/// between, so the composite is not the identity.
pub fn wavelet_case() -> f64 {
    let mut r = rng(8);
    let x = random_leaf(&mut r, &[2, 3, 6, 8], -1.0, 1.0);
    let f = || -> Result<Tensor<f64>> {
        let [ll, lh, hl, hh] = dwt2_tensor(&x)?;
        idwt2_tensor(&[ll.square(), lh, hl.scale(3.0), hh.exp()])
    };
    let p = project(&f().unwrap(), &mut r);
    gradcheck(&[&x], || p(&f()?), 48, 8)
}

pub const TOLERANCE: f64 = 1e-3;

pub fn all_cases() -> Vec<(&'static str, fn() -> f64)> {
    vec![
        ("conv2d", conv2d_case as fn() -> f64),
        ("conv_transpose2d", conv_transpose2d_case),
        ("relu", relu_case),
        ("concat", concat_case),
        ("dwt2_idwt2", wavelet_case),
        ("losses", losses_case),
        ("pipeline_8x8", pipeline_case),
    ]
}
