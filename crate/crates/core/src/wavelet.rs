//! One-level 2-D Haar wavelet transform.
//!
//! With `L = [1, 1]ᵀ/√2` and `H = [1, −1]ᵀ/√2`, each sub-band is the
//! correlation of the image with the outer product `f_row · f_colᵀ` at
//! stride 2:
//!
//! ```text
//! LL = ½ [[1,  1], [ 1,  1]]     LH = ½ [[1, -1], [ 1, -1]]
//! HL = ½ [[1,  1], [-1, -1]]     HH = ½ [[1, -1], [-1,  1]]
//! ```
//!
//! Band names follow the filter-product order literally: `LH` applies `L`
//! along rows (vertical direction) and `H` along columns, so it responds to
//! horizontal intensity changes. The basis is orthonormal, hence the
//! inverse is the transposed convolution with the same four kernels.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{concat, conv2d, conv_transpose2d, Real, Tensor};

/// Haar kernel signs in band order LL, LH, HL, HH, row-major 2×2.
const SIGNS: [[f32; 4]; 4] = [
    [1.0, 1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
];

/// The four half-resolution sub-bands of a one-level decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBands {
    pub ll: Image,
    pub lh: Image,
    pub hl: Image,
    pub hh: Image,
    /// `(height, width)` of the decomposed image before any odd-size padding.
    pub parent_shape: (usize, usize),
}

impl SubBands {
    pub fn bands(&self) -> [&Image; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    /// The three detail bands in LH, HL, HH order.
    pub fn details(&self) -> [&Image; 3] {
        [&self.lh, &self.hl, &self.hh]
    }
}

/// Forward transform. Odd heights/widths are reflect-padded by one
/// row/column first; `parent_shape` keeps the original extent.
pub fn dwt2(image: &Image) -> Result<SubBands> {
    let (h, w) = (image.height(), image.width());
    if image.is_empty() {
        return Err(Error::Domain("cannot decompose an empty image".into()));
    }
    let padded;
    let src = if h % 2 == 1 || w % 2 == 1 {
        padded = image.pad_reflect(h % 2, w % 2);
        &padded
    } else {
        image
    };
    let (hh_, hw) = (src.height() / 2, src.width() / 2);
    let c = src.channels();
    let mut bands = [
        Image::new(c, hh_, hw),
        Image::new(c, hh_, hw),
        Image::new(c, hh_, hw),
        Image::new(c, hh_, hw),
    ];
    for ch in 0..c {
        for y in 0..hh_ {
            for x in 0..hw {
                let a = src.get(ch, 2 * y, 2 * x);
                let b = src.get(ch, 2 * y, 2 * x + 1);
                let cc = src.get(ch, 2 * y + 1, 2 * x);
                let d = src.get(ch, 2 * y + 1, 2 * x + 1);
                bands[0].set(ch, y, x, 0.5 * (a + b + cc + d));
                bands[1].set(ch, y, x, 0.5 * (a - b + cc - d));
                bands[2].set(ch, y, x, 0.5 * (a + b - cc - d));
                bands[3].set(ch, y, x, 0.5 * (a - b - cc + d));
            }
        }
    }
    let [ll, lh, hl, hh] = bands;
    Ok(SubBands {
        ll,
        lh,
        hl,
        hh,
        parent_shape: (h, w),
    })
}

/// Inverse transform; crops any padding added by [`dwt2`].
pub fn idwt2(bands: &SubBands) -> Result<Image> {
    let ll = &bands.ll;
    for (name, b) in [("LH", &bands.lh), ("HL", &bands.hl), ("HH", &bands.hh)] {
        if !b.same_shape(ll) {
            return Err(Error::Dimension(format!(
                "{name} band is {}x{}x{} but LL is {}x{}x{}",
                b.channels(),
                b.height(),
                b.width(),
                ll.channels(),
                ll.height(),
                ll.width()
            )));
        }
    }
    let (ph, pw) = bands.parent_shape;
    let (h2, w2) = (ll.height() * 2, ll.width() * 2);
    if ph > h2 || pw > w2 || ph + 1 < h2 || pw + 1 < w2 {
        return Err(Error::Dimension(format!(
            "parent shape {ph}x{pw} is inconsistent with {}x{} bands",
            ll.height(),
            ll.width()
        )));
    }
    let c = ll.channels();
    let mut out = Image::new(c, h2, w2);
    for ch in 0..c {
        for y in 0..ll.height() {
            for x in 0..ll.width() {
                let (s, lh, hl, hh) = (
                    ll.get(ch, y, x),
                    bands.lh.get(ch, y, x),
                    bands.hl.get(ch, y, x),
                    bands.hh.get(ch, y, x),
                );
                out.set(ch, 2 * y, 2 * x, 0.5 * (s + lh + hl + hh));
                out.set(ch, 2 * y, 2 * x + 1, 0.5 * (s - lh + hl - hh));
                out.set(ch, 2 * y + 1, 2 * x, 0.5 * (s + lh - hl - hh));
                out.set(ch, 2 * y + 1, 2 * x + 1, 0.5 * (s - lh - hl + hh));
            }
        }
    }
    if (ph, pw) == (h2, w2) {
        Ok(out)
    } else {
        out.crop(0, 0, ph, pw)
    }
}

/// The four fixed Haar kernels as a `4×1×2×2` conv weight.
pub fn haar_kernels<T: Real>() -> Tensor<T> {
    let data = SIGNS
        .iter()
        .flat_map(|k| k.iter().map(|&s| T::from_f64(0.5 * s as f64)))
        .collect();
    Tensor::from_vec(&[4, 1, 2, 2], data).expect("fixed kernel shape")
}

/// Differentiable forward transform of an `N×C×H×W` tensor with even `H`,
/// `W`, returning `[LL, LH, HL, HH]`, each `N×C×H/2×W/2`.
pub fn dwt2_tensor<T: Real>(x: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::Dimension(format!(
            "dwt2_tensor expects NCHW, got {:?}",
            x.shape()
        )));
    };
    if h % 2 == 1 || w % 2 == 1 {
        return Err(Error::Dimension(format!(
            "dwt2_tensor needs even spatial extents, got {h}x{w}"
        )));
    }
    let planes = x.reshape(&[n * c, 1, h, w])?;
    let coeffs = conv2d(&planes, &haar_kernels(), None, 2, 0)?;
    let band = |i: usize| -> Result<Tensor<T>> {
        coeffs.narrow(1, i, 1)?.reshape(&[n, c, h / 2, w / 2])
    };
    Ok([band(0)?, band(1)?, band(2)?, band(3)?])
}

/// Differentiable inverse of [`dwt2_tensor`].
pub fn idwt2_tensor<T: Real>(bands: &[Tensor<T>; 4]) -> Result<Tensor<T>> {
    let shape = bands[0].shape().to_vec();
    let &[n, c, h, w] = shape.as_slice() else {
        return Err(Error::Dimension(format!(
            "idwt2_tensor expects NCHW bands, got {shape:?}"
        )));
    };
    if let Some(b) = bands.iter().find(|b| b.shape() != shape.as_slice()) {
        return Err(Error::Dimension(format!(
            "band shapes disagree: {:?} vs {shape:?}",
            b.shape()
        )));
    }
    let stacked: Vec<Tensor<T>> = bands
        .iter()
        .map(|b| b.reshape(&[n * c, 1, h, w]))
        .collect::<Result<_>>()?;
    let coeffs = concat(&stacked, 1)?;
    conv_transpose2d(&coeffs, &haar_kernels(), None, 2, 0)?.reshape(&[n, c, 2 * h, 2 * w])
}

/// Color-codes the magnitude of a detail band: mean `|coeff|` over channels,
/// divided by the band maximum, mapped black → red → yellow.
pub fn visualize_band(band: &Image) -> Image {
    let (c, h, w) = (band.channels(), band.height(), band.width());
    let mag: Vec<f32> = (0..h * w)
        .map(|i| (0..c).map(|ch| band.plane(ch)[i].abs()).sum::<f32>() / c.max(1) as f32)
        .collect();
    let max = mag.iter().copied().fold(0.0f32, f32::max);
    let mut out = Image::new(3, h, w);
    if max <= 0.0 || !max.is_finite() {
        return out;
    }
    for (i, &m) in mag.iter().enumerate() {
        let (r, g) = heat(m / max);
        out.data_mut()[i] = r;
        out.data_mut()[h * w + i] = g;
    }
    out
}

fn heat(v: f32) -> (f32, f32) {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        (2.0 * v, 0.0)
    } else {
        (1.0, 2.0 * v - 1.0)
    }
}
