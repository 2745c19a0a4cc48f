//! sRGB ↔ HSV and sRGB ↔ CIE L*a*b* (D65), plus the 9-channel stack fed to
//! the structure network.
//!
//! Pixel routines work in `f64`. Image routines report how many samples had
//! to be clamped into range.

use std::sync::LazyLock;

use crate::image::Image;

/// Linear sRGB → XYZ (D65), IEC 61966-2-1.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white: the XYZ of linear (1, 1, 1), so sRGB white lands on
/// L*=100, a*=b*=0 exactly.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

const DELTA: f64 = 6.0 / 29.0;

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(l: f64) -> f64 {
    if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    if f > DELTA {
        f * f * f
    } else {
        3.0 * DELTA * DELTA * (f - 4.0 / 29.0)
    }
}

/// Overshoot attributable to floating-point roundoff, not counted as clipping.
const ROUNDOFF: f64 = 1e-9;

fn clamp_unit(rgb: [f64; 3]) -> ([f64; 3], bool) {
    let mut clamped = false;
    let out = rgb.map(|v| {
        if (0.0..=1.0).contains(&v) {
            v
        } else if (-ROUNDOFF..=1.0 + ROUNDOFF).contains(&v) {
            v.clamp(0.0, 1.0)
        } else {
            clamped = true;
            if v.is_nan() {
                0.0
            } else {
                v.clamp(0.0, 1.0)
            }
        }
    });
    (out, clamped)
}

/// Hexcone HSV with hue as a fraction of a turn in `[0, 1)`.
pub fn rgb_to_hsv_px(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, max];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let h = (sector / 6.0).rem_euclid(1.0);
    [if h >= 1.0 { 0.0 } else { h }, s, max]
}

pub fn hsv_to_rgb_px(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i64).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// sRGB in `[0, 1]` → (L* ∈ [0, 100], a*, b*).
pub fn rgb_to_lab_px(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz: [f64; 3] = std::array::from_fn(|i| {
        (RGB_TO_XYZ[i][0] * lin[0] + RGB_TO_XYZ[i][1] * lin[1] + RGB_TO_XYZ[i][2] * lin[2]) / WHITE[i]
    });
    let [fx, fy, fz] = xyz.map(lab_f);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn lab_to_linear(lab: [f64; 3]) -> [f64; 3] {
    let [l, a, b] = lab;
    let fy = (l + 16.0) / 116.0;
    let f = [fy + a / 500.0, fy, fy - b / 200.0];
    let xyz: [f64; 3] = std::array::from_fn(|i| lab_f_inv(f[i]) * WHITE[i]);
    let m = &*XYZ_TO_RGB;
    std::array::from_fn(|i| m[i][0] * xyz[0] + m[i][1] * xyz[1] + m[i][2] * xyz[2])
}

/// Lab → sRGB, clipped to the gamut. The flag reports whether clipping
/// happened.
pub fn lab_to_rgb_px(lab: [f64; 3]) -> ([f64; 3], bool) {
    let (lin, clamped) = clamp_unit(lab_to_linear(lab));
    (lin.map(linear_to_srgb), clamped)
}

/// Result of an image-level conversion.
#[derive(Clone, Debug)]
pub struct Converted {
    pub image: Image,
    /// Number of pixels whose input or output had to be clamped into range.
    pub clamped: usize,
}

fn convert(
    rgb: &Image,
    mut f: impl FnMut([f64; 3]) -> ([f64; 3], bool),
) -> Converted {
    assert_eq!(rgb.channels(), 3, "color conversion needs a 3-channel image");
    let n = rgb.height() * rgb.width();
    let mut out = Image::new(3, rgb.height(), rgb.width());
    let mut clamped = 0;
    let src = rgb.data();
    let dst = out.data_mut();
    for i in 0..n {
        let px = [src[i] as f64, src[n + i] as f64, src[2 * n + i] as f64];
        let (v, c) = f(px);
        clamped += c as usize;
        for ch in 0..3 {
            dst[ch * n + i] = v[ch] as f32;
        }
    }
    Converted {
        image: out,
        clamped,
    }
}

/// RGB → HSV (hue as degrees/360). Inputs outside `[0, 1]` are clamped.
pub fn rgb_to_hsv(rgb: &Image) -> Converted {
    convert(rgb, |px| {
        let (px, c) = clamp_unit(px);
        (rgb_to_hsv_px(px), c)
    })
}

pub fn hsv_to_rgb(hsv: &Image) -> Converted {
    convert(hsv, |px| {
        let (px, c) = clamp_unit(px);
        (hsv_to_rgb_px(px), c)
    })
}

/// RGB → CIE Lab (D65). Inputs outside `[0, 1]` are clamped.
pub fn rgb_to_lab(rgb: &Image) -> Converted {
    convert(rgb, |px| {
        let (px, c) = clamp_unit(px);
        (rgb_to_lab_px(px), c)
    })
}

/// Lab → RGB, clipping out-of-gamut colors.
pub fn lab_to_rgb(lab: &Image) -> Converted {
    convert(lab, lab_to_rgb_px)
}

/// Channel order of [`multi_color_stack`].
pub const STACK_CHANNELS: [&str; 9] = ["R", "G", "B", "H", "S", "V", "L", "a", "b"];

/// `[R, G, B, H, S, V, L/100, (a+128)/255, (b+128)/255]`, a `9×h×w` image.
/// The RGB channels are copied bit-for-bit.
pub fn multi_color_stack(rgb: &Image) -> Image {
    assert_eq!(rgb.channels(), 3, "multi-color stack needs a 3-channel image");
    let n = rgb.height() * rgb.width();
    let mut data = Vec::with_capacity(9 * n);
    data.extend_from_slice(rgb.data());
    let hsv = rgb_to_hsv(rgb).image;
    data.extend_from_slice(hsv.data());
    let lab = rgb_to_lab(rgb).image;
    data.extend(lab.plane(0).iter().map(|&l| l / 100.0));
    data.extend(lab.plane(1).iter().map(|&a| (a + 128.0) / 255.0));
    data.extend(lab.plane(2).iter().map(|&b| (b + 128.0) / 255.0));
    Image::from_vec(9, rgb.height(), rgb.width(), data).expect("9 planes of equal size")
}

/// Rec. 601 luma.
pub fn luma(rgb: &Image) -> Image {
    assert_eq!(rgb.channels(), 3, "luma needs a 3-channel image");
    let (r, g, b) = (rgb.plane(0), rgb.plane(1), rgb.plane(2));
    let data = (0..r.len())
        .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
        .collect();
    Image::from_vec(1, rgb.height(), rgb.width(), data).expect("single plane")
}
