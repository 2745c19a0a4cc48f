#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uwdual::synth::{jerlov_types, synthesize, toy_scene, Pair};
use uwdual::tensor::Tensor;
use uwdual::{Image, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Image {
    Image::from_fn(c, h, w, |_, _, _| rng.random::<f32>())
}

pub fn random_leaf(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::leaf(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Largest relative error between analytic and central-difference
/// gradients of the scalar `f` with respect to `leaves`. At most `samples`
/// entries per leaf are probed (all when the leaf is smaller). Evaluations
/// keep the graph on so the same convolution path is differenced.
pub fn gradcheck(leaves: &[&Tensor<f64>], f: impl Fn() -> Result<Tensor<f64>>, samples: usize, seed: u64) -> f64 {
    gradcheck_step(leaves, f, samples, seed, 1e-3)
}

/// [`gradcheck`] with an explicit difference step.
pub fn gradcheck_step(
    leaves: &[&Tensor<f64>],
    f: impl Fn() -> Result<Tensor<f64>>,
    samples: usize,
    seed: u64,
    h: f64,
) -> f64 {
    const FLOOR: f64 = 1e-6;
    for l in leaves {
        l.zero_grad();
    }
    f().unwrap().backward().unwrap();
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for leaf in leaves {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let picks: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            (0..samples).map(|_| rng.random_range(0..n)).collect()
        };
        for i in picks {
            let base = leaf.to_vec();
            let eval = |delta: f64| {
                let mut v = base.clone();
                v[i] += delta;
                leaf.set_data(&v).unwrap();
                f().unwrap().item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            leaf.set_data(&base).unwrap();
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

/// Eight degraded/clean toy pairs at `size`², turbid water types at
/// varying light.
pub fn toy_pairs(size: usize) -> Vec<Pair> {
    let types = jerlov_types();
    (0..8)
        .map(|i| {
            let (clean, depth) = toy_scene(100 + i as u64, size, size);
            let water = &types[4 + i % 2];
            let degraded = synthesize(&clean, &depth, water, 0.5 + 0.1 * (i % 6) as f64).unwrap();
            Pair {
                variant: format!("toy{i}"),
                degraded,
                clean,
            }
        })
        .collect()
}
pub mod grad;
