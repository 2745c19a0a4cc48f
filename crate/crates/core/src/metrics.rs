//! Image quality metrics: SSIM, UIQM, UCIQE, CIEDE2000 and a color-checker
//! score.
//!
//! UIQM and UCIQE follow their usual published definitions on 8-bit scale
//! inputs; absolute values differ between implementations, so they are
//! meant for comparing images under this implementation.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::colorspace::{luma, rgb_to_hsv_px, rgb_to_lab_px};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::gaussian_taps;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

/// Valid-mode separable Gaussian filtering of a `h×w` plane.
fn gaussian_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM between two single-channel planes, data range 1.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < WINDOW || w < WINDOW {
        return Err(Error::Domain(format!("SSIM needs at least {WINDOW}x{WINDOW}, got {h}x{w}")));
    }
    let taps = gaussian_taps(WINDOW, SIGMA);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let filt = |p: &[f64]| gaussian_valid(p, h, w, &taps).0;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (filt(x), filt(y));
    let (sxx, syy, sxy) = (filt(&xx), filt(&yy), filt(&xy));
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (mx[i], my[i]);
        let vx = sxx[i] - a * a;
        let vy = syy[i] - b * b;
        let cov = sxy[i] - a * b;
        total += ((2.0 * a * b + c1) * (2.0 * cov + c2)) / ((a * a + b * b + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

/// Single-scale SSIM on Rec.601 luma (11×11 Gaussian window, σ = 1.5).
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::Dimension(format!(
            "SSIM inputs differ: {}x{}x{} vs {}x{}x{}",
            x.channels(),
            x.height(),
            x.width(),
            y.channels(),
            y.height(),
            y.width()
        )));
    }
    let gray = |img: &Image| -> Vec<f64> {
        let g = if img.channels() == 3 { luma(img) } else { img.clone() };
        g.plane(0).iter().map(|&v| v as f64).collect()
    };
    ssim_plane(&gray(x), &gray(y), x.height(), x.width())
}

pub const UIQM_COEFFS: [f64; 3] = [0.0282, 0.2953, 3.5753];
pub const UCIQE_COEFFS: [f64; 3] = [0.4680, 0.2745, 0.2576];
const BLOCK: usize = 8;
const EME_EPS: f64 = 1.0;

fn planes255(img: &Image) -> Result<[Vec<f64>; 3]> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!("expected RGB, got {} channels", img.channels())));
    }
    Ok(std::array::from_fn(|c| img.plane(c).iter().map(|&v| v as f64 * 255.0).collect()))
}

fn is_constant(img: &Image) -> bool {
    let n = img.height() * img.width();
    (0..img.channels()).all(|c| {
        let p = &img.data()[c * n..(c + 1) * n];
        p.iter().all(|&v| v == p[0])
    })
}

/// Mean over the samples left after dropping the lowest `ceil(αL·K)` and
/// highest `floor(αR·K)`.
fn trimmed_mean(values: &mut [f64], alpha_low: f64, alpha_high: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    let lo = (alpha_low * k as f64).ceil() as usize;
    let hi = (alpha_high * k as f64).floor() as usize;
    let kept = &values[lo.min(k)..k - hi.min(k - lo.min(k))];
    if kept.is_empty() {
        return 0.0;
    }
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Colorfulness component of UIQM.
pub fn uicm(img: &Image) -> Result<f64> {
    let [r, g, b] = planes255(img)?;
    let mut rg: Vec<f64> = r.iter().zip(&g).map(|(r, g)| r - g).collect();
    let mut yb: Vec<f64> = (0..r.len()).map(|i| (r[i] + g[i]) / 2.0 - b[i]).collect();
    let stats = |v: &mut Vec<f64>| {
        let mu = trimmed_mean(v, 0.1, 0.1);
        let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
        (mu, var)
    };
    let (mrg, vrg) = stats(&mut rg);
    let (myb, vyb) = stats(&mut yb);
    Ok(-0.0268 * (mrg * mrg + myb * myb).sqrt() + 0.1586 * (vrg + vyb).sqrt())
}

/// Sobel gradient magnitude with replicated borders.
fn sobel(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| plane[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            out[(y * w as isize + x) as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Averages `f` over block grids of `BLOCK×BLOCK` tiles. When the image is
/// not a multiple of the block size the leftover margin is split around the
/// grid both ways (rounding down and up), so the result does not depend on
/// image orientation. `f` receives the grid origin and block counts.
fn over_centered_grids(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> f64 {
    let (ky, kx) = (h / BLOCK, w / BLOCK);
    if ky == 0 || kx == 0 {
        return 0.0;
    }
    let (ry, rx) = (h - ky * BLOCK, w - kx * BLOCK);
    let ys = if ry % 2 == 0 { vec![ry / 2] } else { vec![ry / 2, ry / 2 + 1] };
    let xs = if rx % 2 == 0 { vec![rx / 2] } else { vec![rx / 2, rx / 2 + 1] };
    let mut total = 0.0;
    for &oy in &ys {
        for &ox in &xs {
            total += f(oy, ox, ky, kx);
        }
    }
    total / (ys.len() * xs.len()) as f64
}

fn block_extrema(planes: &[&[f64]], w: usize, top: usize, left: usize) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in planes {
        for y in top..top + BLOCK {
            for &v in &p[y * w + left..y * w + left + BLOCK] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    (lo, hi)
}

/// Measure of enhancement: `2/(k1·k2) Σ ln((max + ε)/(min + ε))` over
/// blocks, with ε one 8-bit gray level.
fn eme(plane: &[f64], h: usize, w: usize) -> f64 {
    over_centered_grids(h, w, |oy, ox, ky, kx| {
        let mut sum = 0.0;
        for by in 0..ky {
            for bx in 0..kx {
                let (lo, hi) = block_extrema(&[plane], w, oy + by * BLOCK, ox + bx * BLOCK);
                sum += ((hi + EME_EPS) / (lo + EME_EPS)).ln();
            }
        }
        2.0 * sum / (ky * kx) as f64
    })
}

/// Sharpness component of UIQM: EME of each channel weighted by its Sobel
/// edge map, combined with luma weights.
pub fn uism(img: &Image) -> Result<f64> {
    let planes = planes255(img)?;
    let (h, w) = (img.height(), img.width());
    let weights = [0.299, 0.587, 0.114];
    Ok(planes
        .iter()
        .zip(weights)
        .map(|(p, lam)| {
            let edges: Vec<f64> = sobel(p, h, w).iter().zip(p).map(|(e, v)| e * v / 255.0).collect();
            lam * eme(&edges, h, w)
        })
        .sum())
}

/// Contrast component of UIQM: logAMEE over blocks spanning all channels,
/// `−1/(k1·k2) Σ r·ln r` with `r = (max − min)/(max + min)`; constant
/// blocks contribute 0.
pub fn uiconm(img: &Image) -> Result<f64> {
    let planes = planes255(img)?;
    let (h, w) = (img.height(), img.width());
    let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
    Ok(over_centered_grids(h, w, |oy, ox, ky, kx| {
        let mut sum = 0.0;
        for by in 0..ky {
            for bx in 0..kx {
                let (lo, hi) = block_extrema(&refs, w, oy + by * BLOCK, ox + bx * BLOCK);
                let (top, bot) = (hi - lo, hi + lo);
                if top > 1e-12 && bot > 1e-12 {
                    let r = top / bot;
                    sum += r * r.ln();
                }
            }
        }
        -sum / (ky * kx) as f64
    }))
}

/// Underwater image quality measure. A constant image scores 0.
pub fn uiqm(img: &Image) -> Result<f64> {
    uiqm_with(img, UIQM_COEFFS)
}

/// [`uiqm`] with explicit component weights.
pub fn uiqm_with(img: &Image, [c1, c2, c3]: [f64; 3]) -> Result<f64> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!("expected RGB, got {} channels", img.channels())));
    }
    if img.is_empty() || is_constant(img) {
        return Ok(0.0);
    }
    Ok(c1 * uicm(img)? + c2 * uism(img)? + c3 * uiconm(img)?)
}

/// Components of [`uciqe`]: chroma standard deviation, luminance contrast
/// and mean saturation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UciqeParts {
    /// Standard deviation of Lab chroma, in units of 100.
    pub chroma_std: f64,
    /// Mean of the brightest 1% of L*/100 minus mean of the darkest 1%.
    pub luminance_contrast: f64,
    /// Mean HSV saturation.
    pub saturation_mean: f64,
}

pub fn uciqe_parts(img: &Image) -> Result<UciqeParts> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!("expected RGB, got {} channels", img.channels())));
    }
    let n = img.height() * img.width();
    if n == 0 {
        return Err(Error::Domain("UCIQE of an empty image".into()));
    }
    let d = img.data();
    let mut lum = Vec::with_capacity(n);
    let mut chroma = Vec::with_capacity(n);
    let mut sat = 0.0;
    for i in 0..n {
        let px = [d[i] as f64, d[n + i] as f64, d[2 * n + i] as f64].map(|v| v.clamp(0.0, 1.0));
        let [l, a, b] = rgb_to_lab_px(px);
        lum.push(l / 100.0);
        chroma.push((a * a + b * b).sqrt() / 100.0);
        sat += rgb_to_hsv_px(px)[1];
    }
    let mc = chroma.iter().sum::<f64>() / n as f64;
    let chroma_std = (chroma.iter().map(|c| (c - mc).powi(2)).sum::<f64>() / n as f64).sqrt();
    lum.sort_by(f64::total_cmp);
    let k = ((0.01 * n as f64).round() as usize).max(1);
    let bottom = lum[..k].iter().sum::<f64>() / k as f64;
    let top = lum[n - k..].iter().sum::<f64>() / k as f64;
    Ok(UciqeParts {
        chroma_std,
        luminance_contrast: top - bottom,
        saturation_mean: sat / n as f64,
    })
}

/// Underwater color image quality evaluation.
pub fn uciqe(img: &Image) -> Result<f64> {
    uciqe_with(img, UCIQE_COEFFS)
}

/// [`uciqe`] with explicit component weights.
pub fn uciqe_with(img: &Image, [c1, c2, c3]: [f64; 3]) -> Result<f64> {
    let p = uciqe_parts(img)?;
    Ok(c1 * p.chroma_std + c2 * p.luminance_contrast + c3 * p.saturation_mean)
}

/// CIEDE2000 color difference between two Lab colors (kL = kC = kH = 1).
pub fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;
    let c_mean = ((a1.hypot(b1)) + (a2.hypot(b2))) / 2.0;
    let c7 = c_mean.powi(7);
    let g = 0.5 * (1.0 - (c7 / (c7 + 25f64.powi(7))).sqrt());
    let (a1p, a2p) = ((1.0 + g) * a1, (1.0 + g) * a2);
    let (c1p, c2p) = (a1p.hypot(b1), a2p.hypot(b2));
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            b.atan2(a).to_degrees().rem_euclid(360.0)
        }
    };
    let (h1p, h2p) = (hue(b1, a1p), hue(b2, a2p));

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dh = if c1p * c2p == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let d_hue = 2.0 * (c1p * c2p).sqrt() * (dh.to_radians() / 2.0).sin();

    let l_mean = (l1 + l2) / 2.0;
    let cp_mean = (c1p + c2p) / 2.0;
    let h_mean = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * (h_mean - 30.0).to_radians().cos()
        + 0.24 * (2.0 * h_mean).to_radians().cos()
        + 0.32 * (3.0 * h_mean + 6.0).to_radians().cos()
        - 0.20 * (4.0 * h_mean - 63.0).to_radians().cos();
    let d_theta = 30.0 * (-((h_mean - 275.0) / 25.0).powi(2)).exp();
    let cp7 = cp_mean.powi(7);
    let rc = 2.0 * (cp7 / (cp7 + 25f64.powi(7))).sqrt();
    let sl = 1.0 + 0.015 * (l_mean - 50.0).powi(2) / (20.0 + (l_mean - 50.0).powi(2)).sqrt();
    let sc = 1.0 + 0.045 * cp_mean;
    let sh = 1.0 + 0.015 * cp_mean * t;
    let rt = -(2.0 * d_theta).to_radians().sin() * rc;
    let (x, y, z) = (dl / sl, dc / sc, d_hue / sh);
    (x * x + y * y + z * z + rt * y * z).sqrt()
}

/// Mean per-pixel CIEDE2000 between two RGB images.
pub fn ciede2000_image(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_shape(y) || x.channels() != 3 {
        return Err(Error::Dimension("CIEDE2000 needs two RGB images of equal size".into()));
    }
    let n = x.height() * x.width();
    if n == 0 {
        return Err(Error::Domain("CIEDE2000 of an empty image".into()));
    }
    let px = |img: &Image, i: usize| {
        let d = img.data();
        [d[i], d[n + i], d[2 * n + i]].map(|v| (v as f64).clamp(0.0, 1.0))
    };
    let total: f64 = (0..n)
        .map(|i| ciede2000(rgb_to_lab_px(px(x, i)), rgb_to_lab_px(px(y, i))))
        .sum();
    Ok(total / n as f64)
}

/// Rectangle of one checker patch, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// Reference color, CIE L*a*b*.
    pub lab: [f64; 3],
}

/// Mean CIEDE2000 between each patch's mean color and its reference.
pub fn colorchecker_score(img: &Image, patches: &[Patch]) -> Result<f64> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!("expected RGB, got {} channels", img.channels())));
    }
    if patches.is_empty() {
        return Err(Error::Usage("color checker layout has no patches".into()));
    }
    let mut total = 0.0;
    for (i, p) in patches.iter().enumerate() {
        if p.height == 0 || p.width == 0 || p.top + p.height > img.height() || p.left + p.width > img.width() {
            return Err(Error::Domain(format!(
                "patch {i} ({}x{} at {},{}) lies outside the {}x{} image",
                p.height,
                p.width,
                p.top,
                p.left,
                img.height(),
                img.width()
            )));
        }
        let mut mean = [0.0f64; 3];
        for (c, m) in mean.iter_mut().enumerate() {
            for y in p.top..p.top + p.height {
                for x in p.left..p.left + p.width {
                    *m += img.get(c, y, x) as f64;
                }
            }
            *m /= (p.height * p.width) as f64;
        }
        total += ciede2000(rgb_to_lab_px(mean), p.lab);
    }
    Ok(total / patches.len() as f64)
}

/// Adopted metric constants and the color-checker layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// UICM, UISM, UIConM weights.
    pub uiqm: [f64; 3],
    /// Chroma std, luminance contrast, mean saturation weights.
    pub uciqe: [f64; 3],
    pub colorchecker: Vec<Patch>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            uiqm: UIQM_COEFFS,
            uciqe: UCIQE_COEFFS,
            colorchecker: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ssim,
    Uiqm,
    Uciqe,
    Ciede2000,
    /// Mean CIEDE2000 over the configured color-checker patches.
    Colorchecker,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Ssim,
        Metric::Uiqm,
        Metric::Uciqe,
        Metric::Ciede2000,
        Metric::Colorchecker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Uiqm => "uiqm",
            Metric::Uciqe => "uciqe",
            Metric::Ciede2000 => "ciede2000",
            Metric::Colorchecker => "colorchecker",
        }
    }

    /// Full-reference metrics compare against a ground-truth image.
    pub fn needs_reference(self) -> bool {
        matches!(self, Metric::Ssim | Metric::Ciede2000)
    }

    /// Scores `img`, against `reference` for full-reference metrics.
    pub fn score(self, img: &Image, reference: Option<&Image>) -> Result<f64> {
        self.score_with(img, reference, &MetricsConfig::default())
    }

    pub fn score_with(self, img: &Image, reference: Option<&Image>, config: &MetricsConfig) -> Result<f64> {
        let need = || {
            reference.ok_or_else(|| Error::Usage(format!("metric {} needs a reference image", self.name())))
        };
        match self {
            Metric::Ssim => ssim(img, need()?),
            Metric::Ciede2000 => ciede2000_image(img, need()?),
            Metric::Uiqm => uiqm_with(img, config.uiqm),
            Metric::Uciqe => uciqe_with(img, config.uciqe),
            Metric::Colorchecker => colorchecker_score(img, &config.colorchecker),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Usage(format!("unknown metric {s:?} (expected ssim, uiqm, uciqe, ciede2000 or colorchecker)")))
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scores of one image, aligned with [`MetricReport::metrics`].
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScores {
    pub name: String,
    pub values: Vec<f64>,
    /// Wall-clock enhancement time, when the image was enhanced.
    pub seconds: Option<f64>,
}

/// Per-image scores plus aggregates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
    pub rows: Vec<ImageScores>,
    /// `(image, reason)` for every image that could not be scored.
    pub skipped: Vec<(String, String)>,
}

/// Arithmetic mean and population standard deviation; `None` when empty.
fn mean_std(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl MetricReport {
    pub fn new(metrics: Vec<Metric>) -> Self {
        MetricReport {
            metrics,
            ..Default::default()
        }
    }

    /// Mean and standard deviation of one metric column.
    pub fn aggregate(&self, metric: Metric) -> Option<(f64, f64)> {
        let i = self.metrics.iter().position(|&m| m == metric)?;
        mean_std(self.rows.iter().map(|r| r.values[i]))
    }

    pub fn mean_seconds(&self) -> Option<f64> {
        mean_std(self.rows.iter().filter_map(|r| r.seconds)).map(|(m, _)| m)
    }

    fn timed(&self) -> bool {
        self.rows.iter().any(|r| r.seconds.is_some())
    }

    /// Tab-separated report: a header, one row per image, then `#mean` and
    /// `#std` rows. Skipped images follow as `#skipped` comment lines.
    pub fn to_tsv(&self) -> String {
        let timed = self.timed();
        let mut s = String::from("image");
        for m in &self.metrics {
            let _ = write!(s, "\t{m}");
        }
        if timed {
            s.push_str("\tseconds");
        }
        s.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            s.push_str(&r.name);
            for v in &r.values {
                let _ = write!(s, "\t{}", fmt(Some(*v)));
            }
            if timed {
                let _ = write!(s, "\t{}", fmt(r.seconds));
            }
            s.push('\n');
        }
        for (label, pick) in [("#mean", 0usize), ("#std", 1)] {
            s.push_str(label);
            for m in &self.metrics {
                let agg = self.aggregate(*m).map(|(a, b)| if pick == 0 { a } else { b });
                let _ = write!(s, "\t{}", fmt(agg));
            }
            if timed {
                let agg = mean_std(self.rows.iter().filter_map(|r| r.seconds)).map(|(a, b)| if pick == 0 { a } else { b });
                let _ = write!(s, "\t{}", fmt(agg));
            }
            s.push('\n');
        }
        for (name, reason) in &self.skipped {
            let _ = writeln!(s, "#skipped\t{name}\t{}", reason.replace(['\t', '\n'], " "));
        }
        s
    }
}
