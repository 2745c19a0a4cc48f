use super::{Real, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor plus its RMSProp accumulator.
pub struct Parameter<T: Real = f32> {
    name: String,
    value: Tensor<T>,
    mean_square: Vec<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Self> {
        let value = Tensor::leaf(shape, data)?;
        let mean_square = vec![T::ZERO; value.numel()];
        Ok(Parameter {
            name: name.into(),
            value,
            mean_square,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The gradient-tracking leaf to use in forward passes.
    pub fn tensor(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn values(&self) -> Vec<T> {
        self.value.to_vec()
    }

    pub fn set_values(&mut self, values: &[T]) -> Result<()> {
        self.value.set_data(values)
    }

    pub fn optimizer_state(&self) -> &[T] {
        &self.mean_square
    }

    pub fn set_optimizer_state(&mut self, state: &[T]) -> Result<()> {
        if state.len() != self.mean_square.len() {
            return Err(Error::Dimension(format!(
                "optimizer state for {} has {} values, expected {}",
                self.name,
                state.len(),
                self.mean_square.len()
            )));
        }
        self.mean_square.copy_from_slice(state);
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.value.grad()
    }

    pub fn zero_grad(&self) {
        self.value.zero_grad();
    }
}

impl<T: Real> std::fmt::Debug for Parameter<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parameter")
            .field("name", &self.name)
            .field("shape", &self.shape())
            .finish()
    }
}

/// One RMSProp update, then zero the gradients:
/// `s ← ρ·s + (1−ρ)·g²`, `p ← p − lr·g/(√s + ε)`.
///
/// All parameters must carry a gradient; nothing is modified otherwise.
pub fn rmsprop_step<'a, T: Real>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    lr: f64,
    smoothing: f64,
    eps: f64,
) -> Result<()> {
    let params: Vec<&mut Parameter<T>> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| p.value.grad().is_none()) {
        return Err(Error::Usage(format!(
            "parameter {} has no gradient; run backward first",
            p.name
        )));
    }
    for p in params {
        let g = p.value.grad().expect("checked above");
        {
            let mut data = p.value.data_mut();
            for ((v, s), &gi) in data.iter_mut().zip(p.mean_square.iter_mut()).zip(&g) {
                let gi = gi.to_f64();
                let si = smoothing * s.to_f64() + (1.0 - smoothing) * gi * gi;
                *s = T::from_f64(si);
                *v = T::from_f64(v.to_f64() - lr * gi / (si.sqrt() + eps));
            }
        }
        p.value.zero_grad();
    }
    Ok(())
}

/// Clips every element into `[lo, hi]`.
pub fn clamp_params<'a, T: Real>(
    params: impl IntoIterator<Item = &'a mut Parameter<T>>,
    lo: f64,
    hi: f64,
) -> Result<()> {
    if lo > hi || lo.is_nan() || hi.is_nan() {
        return Err(Error::Usage(format!("clamp range [{lo}, {hi}] is empty")));
    }
    let (l, h) = (T::from_f64(lo), T::from_f64(hi));
    for p in params {
        for v in p.value.data_mut().iter_mut() {
            if *v < l {
                *v = l;
            } else if *v > h {
                *v = h;
            }
        }
    }
    Ok(())
}
