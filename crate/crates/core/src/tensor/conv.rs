//! 2-D convolution (cross-correlation) and its adjoint via im2col + GEMM.

use super::{winograd, Real, Tensor};
use crate::error::{Error, Result};

/// Geometry of a correlation between an image and a square kernel.
#[derive(Clone, Copy, Debug)]
struct Geom {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geom {
    fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Usage("convolution stride must be positive".into()));
        }
        let (ph, pw) = (height + 2 * padding, width + 2 * padding);
        if kernel == 0 || ph < kernel || pw < kernel {
            return Err(Error::Domain(format!(
                "kernel {kernel}x{kernel} does not fit padded input {ph}x{pw}"
            )));
        }
        let out_h = (ph - kernel) / stride + 1;
        let out_w = (pw - kernel) / stride + 1;
        Ok(Geom {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn im2col<T: Real>(img: &[T], g: &Geom, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let ncol = g.cols();
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back into an image (adjoint of [`im2col`]).
fn col2im<T: Real>(cols: &[T], g: &Geom, img: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let ncol = g.cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check4(t: &Tensor<impl Real>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::Dimension(format!("{what} must be 4-d, got shape {s:?}"))),
    }
}

fn check_bias<T: Real>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match {channels} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (o, &b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Real>(g: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    (0..channels)
        .map(|o| {
            let s: f64 = (0..batch)
                .flat_map(|n| {
                    let base = (n * channels + o) * plane;
                    g[base..base + plane].iter()
                })
                .map(|v| v.to_f64())
                .sum();
            T::from_f64(s)
        })
        .collect()
}

/// Cross-correlation of `input` (N×C×H×W) with `weight` (O×C×K×K).
///
/// Output extent is `(H + 2·padding − K)/stride + 1` per spatial axis.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = check4(input, "conv2d input")?;
    let [o, wc, kh, kw] = check4(weight, "conv2d weight")?;
    if wc != c {
        return Err(Error::Dimension(format!(
            "conv2d: input channel axis (1) has {c} but weight axis 1 expects {wc}"
        )));
    }
    if kh != kw {
        return Err(Error::Dimension(format!(
            "conv2d: kernel axes 2 and 3 differ ({kh} vs {kw})"
        )));
    }
    check_bias(bias, o)?;
    let g = Geom::new(c, h, w, kh, stride, padding)?;
    if g.out_h == 0 || g.out_w == 0 || n == 0 || o == 0 {
        return Err(Error::Domain("conv2d produces an empty output".into()));
    }
    let records = crate::tensor::grad_enabled()
        && (input.requires_grad() || weight.requires_grad() || bias.is_some_and(|b| b.requires_grad()));
    if !records && kh == 3 && stride == 1 {
        let bias_data = bias.map(|b| b.to_vec());
        let (out, oh, ow) =
            winograd::conv3x3(&input.data(), [n, c, h, w], &weight.data(), o, bias_data.as_deref(), padding);
        return Tensor::from_vec(&[n, o, oh, ow], out);
    }
    let (rows, ncol) = (g.rows(), g.cols());
    let keep_cols = crate::tensor::grad_enabled() && weight.requires_grad();
    let mut saved_cols: Vec<Vec<T>> = Vec::new();
    let mut out = vec![T::ZERO; n * o * ncol];
    {
        let x = input.data();
        let wd = weight.data();
        let mut cols = vec![T::ZERO; rows * ncol];
        for b in 0..n {
            im2col(&x[b * g.image_len()..(b + 1) * g.image_len()], &g, &mut cols);
            let dst = &mut out[b * o * ncol..(b + 1) * o * ncol];
            T::gemm(
                o,
                rows,
                ncol,
                T::ONE,
                &wd,
                (rows as isize, 1),
                &cols,
                (ncol as isize, 1),
                T::ZERO,
                dst,
                ncol,
            );
            if let Some(bias) = bias {
                add_bias(dst, &bias.data(), ncol);
            }
            if keep_cols {
                saved_cols.push(cols.clone());
            }
        }
    }

    let (xt, wt) = (input.clone(), weight.clone());
    let has_bias = bias.is_some();
    let mut parents = vec![input, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(Tensor::from_op(vec![n, o, g.out_h, g.out_w], out, &parents, move |gout| {
        let wd = wt.data();
        let gx = xt.requires_grad().then(|| {
            let mut gx = vec![T::ZERO; n * g.image_len()];
            let mut gcols = vec![T::ZERO; rows * ncol];
            for b in 0..n {
                T::gemm(
                    rows,
                    o,
                    ncol,
                    T::ONE,
                    &wd,
                    (1, rows as isize),
                    &gout[b * o * ncol..(b + 1) * o * ncol],
                    (ncol as isize, 1),
                    T::ZERO,
                    &mut gcols,
                    ncol,
                );
                col2im(&gcols, &g, &mut gx[b * g.image_len()..(b + 1) * g.image_len()]);
            }
            gx
        });
        let gw = wt.requires_grad().then(|| {
            let mut gw = vec![T::ZERO; o * rows];
            let x = xt.data();
            let mut scratch = Vec::new();
            for b in 0..n {
                let cols = match saved_cols.get(b) {
                    Some(c) => c,
                    None => {
                        scratch.resize(rows * ncol, T::ZERO);
                        im2col(&x[b * g.image_len()..(b + 1) * g.image_len()], &g, &mut scratch);
                        &scratch
                    }
                };
                T::gemm(
                    o,
                    ncol,
                    rows,
                    T::ONE,
                    &gout[b * o * ncol..(b + 1) * o * ncol],
                    (ncol as isize, 1),
                    cols,
                    (1, ncol as isize),
                    T::ONE,
                    &mut gw,
                    rows,
                );
            }
            gw
        });
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(Some(bias_grad(gout, n, o, ncol)));
        }
        grads
    }))
}

/// Transposed convolution: the exact adjoint of [`conv2d`] for the same
/// weight, stride and padding. `weight` is laid out `Cin×Cout×K×K`, so a
/// conv2d weight `O×I×K×K` maps an `O`-channel input back to `I` channels.
///
/// Output extent is `(H − 1)·stride − 2·padding + K` per spatial axis.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [n, ci, h, w] = check4(input, "conv_transpose2d input")?;
    let [wci, co, kh, kw] = check4(weight, "conv_transpose2d weight")?;
    if wci != ci {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: input channel axis (1) has {ci} but weight axis 0 expects {wci}"
        )));
    }
    if kh != kw {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: kernel axes 2 and 3 differ ({kh} vs {kw})"
        )));
    }
    if stride == 0 {
        return Err(Error::Usage("convolution stride must be positive".into()));
    }
    check_bias(bias, co)?;
    let span = |len: usize| ((len.max(1) - 1) * stride + kh).checked_sub(2 * padding);
    let (oh, ow) = match (span(h), span(w)) {
        (Some(a), Some(b)) if a > 0 && b > 0 && h > 0 && w > 0 && n > 0 && co > 0 => (a, b),
        _ => return Err(Error::Domain("conv_transpose2d produces an empty output".into())),
    };
    // Geometry of the forward correlation whose adjoint this is.
    let g = Geom::new(co, oh, ow, kh, stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (h, w));
    let (rows, ncol) = (g.rows(), g.cols());
    let mut out = vec![T::ZERO; n * g.image_len()];
    {
        let y = input.data();
        let wd = weight.data();
        let mut cols = vec![T::ZERO; rows * ncol];
        for b in 0..n {
            T::gemm(
                rows,
                ci,
                ncol,
                T::ONE,
                &wd,
                (1, rows as isize),
                &y[b * ci * ncol..(b + 1) * ci * ncol],
                (ncol as isize, 1),
                T::ZERO,
                &mut cols,
                ncol,
            );
            let dst = &mut out[b * g.image_len()..(b + 1) * g.image_len()];
            col2im(&cols, &g, dst);
            if let Some(bias) = bias {
                add_bias(dst, &bias.data(), oh * ow);
            }
        }
    }

    let (yt, wt) = (input.clone(), weight.clone());
    let has_bias = bias.is_some();
    let mut parents = vec![input, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    Ok(Tensor::from_op(vec![n, co, oh, ow], out, &parents, move |gout| {
        let wd = wt.data();
        let mut gy = yt.requires_grad().then(|| vec![T::ZERO; n * ci * ncol]);
        let mut gw = wt.requires_grad().then(|| vec![T::ZERO; ci * rows]);
        let y = yt.data();
        let mut gcols = vec![T::ZERO; rows * ncol];
        for b in 0..n {
            im2col(&gout[b * g.image_len()..(b + 1) * g.image_len()], &g, &mut gcols);
            if let Some(gy) = gy.as_mut() {
                T::gemm(
                    ci,
                    rows,
                    ncol,
                    T::ONE,
                    &wd,
                    (rows as isize, 1),
                    &gcols,
                    (ncol as isize, 1),
                    T::ZERO,
                    &mut gy[b * ci * ncol..(b + 1) * ci * ncol],
                    ncol,
                );
            }
            if let Some(gw) = gw.as_mut() {
                T::gemm(
                    ci,
                    ncol,
                    rows,
                    T::ONE,
                    &y[b * ci * ncol..(b + 1) * ci * ncol],
                    (ncol as isize, 1),
                    &gcols,
                    (1, ncol as isize),
                    T::ONE,
                    gw,
                    rows,
                );
            }
        }
        let mut grads = vec![gy, gw];
        if has_bias {
            grads.push(Some(bias_grad(gout, n, co, oh * ow)));
        }
        grads
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::no_grad;

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    fn fast_vs_direct<T: Real>(shape: [usize; 4], o: usize, padding: usize) -> (Vec<T>, Vec<T>) {
        let [n, c, h, w] = shape;
        let xd: Vec<T> = lcg(n * c * h * w, 1).into_iter().map(T::from_f64).collect();
        let wd: Vec<T> = lcg(o * c * 9, 2).into_iter().map(T::from_f64).collect();
        let bd: Vec<T> = lcg(o, 3).into_iter().map(T::from_f64).collect();
        let x = Tensor::from_vec(&shape, xd).unwrap();
        let b = Tensor::from_vec(&[o], bd).unwrap();
        let fast = no_grad(|| {
            let wt = Tensor::leaf(&[o, c, 3, 3], wd.clone()).unwrap();
            conv2d(&x, &wt, Some(&b), 1, padding).unwrap().to_vec()
        });
        let wt = Tensor::leaf(&[o, c, 3, 3], wd).unwrap();
        let direct = conv2d(&x, &wt, Some(&b), 1, padding).unwrap();
        assert!(direct.requires_grad());
        (fast, direct.to_vec())
    }

    #[test]
    fn inference_path_matches_direct() {
        for (shape, o, pad) in [
            ([1, 1, 3, 3], 1, 0),
            ([2, 3, 7, 5], 4, 1),
            ([1, 5, 9, 13], 2, 0),
            ([3, 2, 16, 16], 3, 1),
            ([1, 4, 1, 1], 2, 1),
        ] {
            let (fast, direct) = fast_vs_direct::<f64>(shape, o, pad);
            assert_eq!(fast.len(), direct.len());
            for (a, b) in fast.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "{shape:?}: {a} vs {b}");
            }
            let (fast, direct) = fast_vs_direct::<f32>(shape, o, pad);
            for (a, b) in fast.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-5, "{shape:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn haar_ll_response() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![0.5; 4]).unwrap();
        let y = conv2d(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.to_vec(), vec![5.0]);
    }

    #[test]
    fn identity_kernel() {
        let data: Vec<f32> = (0..2 * 3 * 4 * 5).map(|v| v as f32 * 0.1 - 3.0).collect();
        let x = Tensor::from_vec(&[2, 3, 4, 5], data.clone()).unwrap();
        let mut eye = vec![0.0f32; 9];
        for c in 0..3 {
            eye[c * 3 + c] = 1.0;
        }
        let w = Tensor::from_vec(&[3, 3, 1, 1], eye).unwrap();
        let b = Tensor::zeros(&[3]);
        let y = conv2d(&x, &w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.to_vec(), data);
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::<f32>::zeros(&[1, 2, 7, 9]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let y = conv2d(&x, &w, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, (7 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1]);
    }

    #[test]
    fn single_pixel_transpose_spreads_kernel() {
        let y = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let k = vec![1.0, -2.0, 0.5, 4.0];
        let w = Tensor::from_vec(&[1, 1, 2, 2], k.clone()).unwrap();
        let out = conv_transpose2d(&y, &w, None, 2, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        let expect: Vec<f64> = k.iter().map(|v| 3.0 * v).collect();
        assert_eq!(out.to_vec(), expect);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
        let err = conv2d(&x, &w, None, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Dimension(ref m) if m.contains("axis")));
    }

    #[test]
    fn kernel_larger_than_input_is_domain_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        assert!(matches!(conv2d(&x, &w, None, 1, 0), Err(Error::Domain(_))));
    }
}
