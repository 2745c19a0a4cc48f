use super::{numel, Real, Tensor};
use crate::error::{Error, Result};

fn unary<T: Real>(
    x: &Tensor<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Tensor<T> {
    let out: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
    let xs = x.clone();
    let saved = if x.requires_grad() { out.clone() } else { Vec::new() };
    Tensor::from_op(x.shape().to_vec(), out, &[x], move |g| {
        let xd = xs.data();
        let gx = g
            .iter()
            .zip(xd.iter())
            .zip(saved.iter())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(gx)]
    })
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

fn binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: Bin) -> Result<Tensor<T>> {
    let (na, nb) = (a.numel(), b.numel());
    let same = a.shape() == b.shape();
    if !same && na != 1 && nb != 1 {
        return Err(Error::Dimension(format!(
            "elementwise op on shapes {:?} and {:?} (only scalar broadcasting is supported)",
            a.shape(),
            b.shape()
        )));
    }
    let shape = if same || nb == 1 { a.shape().to_vec() } else { b.shape().to_vec() };
    let n = numel(&shape);
    let ia = move |i: usize| if na == 1 { 0 } else { i };
    let ib = move |i: usize| if nb == 1 { 0 } else { i };
    let out: Vec<T> = {
        let (ad, bd) = (a.data(), b.data());
        (0..n)
            .map(|i| {
                let (x, y) = (ad[ia(i)], bd[ib(i)]);
                match op {
                    Bin::Add => x + y,
                    Bin::Sub => x - y,
                    Bin::Mul => x * y,
                    Bin::Div => x / y,
                }
            })
            .collect()
    };
    let (at, bt) = (a.clone(), b.clone());
    Ok(Tensor::from_op(shape, out, &[a, b], move |g| {
        let (ad, bd) = (at.data(), bt.data());
        let reduce = |full: Vec<T>, len: usize| -> Vec<T> {
            if len == 1 && full.len() != 1 {
                let s: f64 = full.iter().map(|v| v.to_f64()).sum();
                vec![T::from_f64(s)]
            } else {
                full
            }
        };
        let ga = at.requires_grad().then(|| {
            let full: Vec<T> = (0..n)
                .map(|i| match op {
                    Bin::Add | Bin::Sub => g[i],
                    Bin::Mul => g[i] * bd[ib(i)],
                    Bin::Div => g[i] / bd[ib(i)],
                })
                .collect();
            reduce(full, na)
        });
        let gb = bt.requires_grad().then(|| {
            let full: Vec<T> = (0..n)
                .map(|i| match op {
                    Bin::Add => g[i],
                    Bin::Sub => -g[i],
                    Bin::Mul => g[i] * ad[ia(i)],
                    Bin::Div => {
                        let y = bd[ib(i)];
                        -g[i] * ad[ia(i)] / (y * y)
                    }
                })
                .collect();
            reduce(full, nb)
        });
        vec![ga, gb]
    }))
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, Bin::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, Bin::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, Bin::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary(self, other, Bin::Div)
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        unary(self, move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::from_f64(s);
        unary(self, move |v| v + s, |_, _| T::ONE)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(
            self,
            |v| if v > T::ZERO { v } else { T::ZERO },
            |x, _| if x > T::ZERO { T::ONE } else { T::ZERO },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s = T::from_f64(slope);
        unary(
            self,
            move |v| if v > T::ZERO { v } else { s * v },
            move |x, _| if x > T::ZERO { T::ONE } else { s },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            self,
            |v| T::ONE / (T::ONE + (-v).exp()),
            |_, y| y * (T::ONE - y),
        )
    }

    /// Subgradient 0 at 0.
    pub fn abs(&self) -> Tensor<T> {
        unary(self, |v| v.abs(), |x, _| {
            if x > T::ZERO {
                T::ONE
            } else if x < T::ZERO {
                -T::ONE
            } else {
                T::ZERO
            }
        })
    }

    pub fn square(&self) -> Tensor<T> {
        unary(self, |v| v * v, |x, _| T::from_f64(2.0) * x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary(self, |v| v.sqrt(), |_, y| {
            if y > T::ZERO {
                T::from_f64(0.5) / y
            } else {
                T::ZERO
            }
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        unary(self, |v| v.exp(), |_, y| y)
    }

    /// `max(x, floor)^p`; the floor keeps fractional powers of non-positive
    /// values finite. Gradient is zero where the floor is active.
    pub fn powf_floored(&self, p: f64, floor: f64) -> Tensor<T> {
        let (pt, fl) = (T::from_f64(p), T::from_f64(floor));
        unary(
            self,
            move |v| if v > fl { v.powf(pt) } else { fl.powf(pt) },
            move |x, y| if x > fl { pt * y / x } else { T::ZERO },
        )
    }

    /// Clamps into `[lo, hi]`, passing gradients only inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        unary(
            self,
            move |v| if v < l { l } else if v > h { h } else { v },
            move |x, _| if x < l || x > h { T::ZERO } else { T::ONE },
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let s: f64 = self.data().iter().map(|v| v.to_f64()).sum();
        let n = self.numel();
        Tensor::from_op(vec![], vec![T::from_f64(s)], &[self], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        let s: f64 = self.data().iter().map(|v| v.to_f64()).sum();
        let len = self.numel();
        Tensor::from_op(vec![], vec![T::from_f64(s / n as f64)], &[self], move |g| {
            let v = g[0] / T::from_f64(n as f64);
            vec![Some(vec![v; len])]
        })
    }

    /// Mean over every axis from `keep` onward; the result has shape
    /// `shape[..keep]`.
    pub fn mean_trailing(&self, keep: usize) -> Result<Tensor<T>> {
        if keep > self.ndim() {
            return Err(Error::Dimension(format!(
                "mean_trailing keeps {keep} axes of a {}-d tensor",
                self.ndim()
            )));
        }
        let out_shape = self.shape()[..keep].to_vec();
        let rows = numel(&out_shape);
        let cols = numel(&self.shape()[keep..]);
        if cols == 0 {
            return Err(Error::Domain("mean over an empty extent".into()));
        }
        let out: Vec<T> = {
            let d = self.data();
            d.chunks(cols)
                .map(|c| T::from_f64(c.iter().map(|v| v.to_f64()).sum::<f64>() / cols as f64))
                .collect()
        };
        debug_assert_eq!(out.len(), rows);
        Ok(Tensor::from_op(out_shape, out, &[self], move |g| {
            let inv = T::from_f64(1.0 / cols as f64);
            let gx = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, cols)).collect();
            vec![Some(gx)]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), &[self], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "narrow axis {axis} range {start}..{} of shape {:?}",
                start + len,
                shape
            )));
        }
        let outer = numel(&shape[..axis]);
        let inner = numel(&shape[axis + 1..]);
        let extent = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        {
            let d = self.data();
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                out.extend_from_slice(&d[base..base + len * inner]);
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(out_shape, out, &[self], move |g| {
            let mut gx = vec![T::ZERO; total];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                gx[base..base + len * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<T: Real>(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Usage("concat of an empty list".into()))?;
    let ndim = first.ndim();
    if axis >= ndim {
        return Err(Error::Dimension(format!("concat axis {axis} of a {ndim}-d tensor")));
    }
    for t in tensors {
        let ok = t.ndim() == ndim
            && t.shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return Err(Error::Dimension(format!(
                "concat along axis {axis}: shape {:?} does not match {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let outer = numel(&first.shape()[..axis]);
    let inner = numel(&first.shape()[axis + 1..]);
    let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
    let total_extent: usize = extents.iter().sum();
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total_extent;
    let mut out = Vec::with_capacity(outer * total_extent * inner);
    {
        let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (d, &e) in datas.iter().zip(&extents) {
                out.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
            }
        }
    }
    let parents: Vec<&Tensor<T>> = tensors.iter().collect();
    let needs: Vec<bool> = tensors.iter().map(|t| t.requires_grad()).collect();
    Ok(Tensor::from_op(out_shape, out, &parents, move |g| {
        let mut grads: Vec<Vec<T>> = extents
            .iter()
            .zip(&needs)
            .map(|(&e, &need)| if need { Vec::with_capacity(outer * e * inner) } else { Vec::new() })
            .collect();
        let mut offset = 0;
        for _ in 0..outer {
            for (i, &e) in extents.iter().enumerate() {
                let len = e * inner;
                if needs[i] {
                    grads[i].extend_from_slice(&g[offset..offset + len]);
                }
                offset += len;
            }
        }
        grads
            .into_iter()
            .zip(&needs)
            .map(|(g, &need)| need.then_some(g))
            .collect()
    }))
}

/// Channel concatenation of NCHW tensors.
pub fn concat_channels<T: Real>(tensors: &[Tensor<T>]) -> Result<Tensor<T>> {
    if let Some(t) = tensors.iter().find(|t| t.ndim() != 4) {
        return Err(Error::Dimension(format!(
            "concat_channels expects NCHW tensors, got shape {:?}",
            t.shape()
        )));
    }
    concat(tensors, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_idempotence() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = x.relu();
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 2.0]);
        assert_eq!(y.relu().to_vec(), y.to_vec());
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::<f32>::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.leaky_relu(0.2).to_vec(), vec![-0.2, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero() {
        let x = Tensor::<f64>::leaf(&[1], vec![0.0]).unwrap();
        x.relu().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0]);
    }

    #[test]
    fn mean_of_three() {
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x.mean().item(), 2.0);
    }

    #[test]
    fn abs_gradient_positive() {
        let x = Tensor::<f64>::leaf(&[1], vec![0.7]).unwrap();
        x.abs().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn broadcasting_only_for_scalars() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(matches!(a.add(&b), Err(Error::Dimension(_))));
        let s = Tensor::scalar(2.0f32);
        assert_eq!(a.add(&s).unwrap().to_vec(), vec![2.0; 6]);
        assert_eq!(s.sub(&a).unwrap().shape(), &[2, 3]);
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let s = Tensor::<f64>::leaf(&[], vec![2.0]).unwrap();
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        x.mul(&s).unwrap().sum().backward().unwrap();
        assert_eq!(s.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn concat_three_rgb_to_nine_channels() {
        let parts: Vec<_> = (0..3)
            .map(|i| Tensor::<f32>::from_vec(&[1, 3, 4, 4], vec![i as f32; 48]).unwrap())
            .collect();
        let c = concat_channels(&parts).unwrap();
        assert_eq!(c.shape(), &[1, 9, 4, 4]);
        let d = c.to_vec();
        assert_eq!(d[0], 0.0);
        assert_eq!(d[48], 1.0);
        assert_eq!(d[96], 2.0);
    }

    #[test]
    fn concat_single_is_identity() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(concat_channels(&[x.clone()]).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn concat_spatial_mismatch_errors() {
        let a = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let b = Tensor::<f32>::zeros(&[1, 3, 4, 5]);
        assert!(matches!(concat_channels(&[a, b]), Err(Error::Dimension(_))));
    }

    #[test]
    fn concat_gradient_slices_back() {
        let a = Tensor::<f64>::leaf(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::leaf(&[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::from_vec(&[1, 3, 1, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        concat_channels(&[a.clone(), b.clone()])
            .unwrap()
            .mul(&w)
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn narrow_then_concat_round_trips() {
        let x = Tensor::<f32>::from_vec(&[2, 4, 3], (0..24).map(|v| v as f32).collect()).unwrap();
        let a = x.narrow(1, 0, 1).unwrap();
        let b = x.narrow(1, 1, 3).unwrap();
        assert_eq!(concat(&[a, b], 1).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn mean_trailing_per_row() {
        let x = Tensor::<f64>::from_vec(&[2, 2, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        assert_eq!(x.mean_trailing(1).unwrap().to_vec(), vec![2.5, 6.5]);
        assert_eq!(x.mean_trailing(2).unwrap().shape(), &[2, 2]);
    }
}
