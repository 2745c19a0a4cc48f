//! Planar float images and PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A `C×H×W` planar array of samples. Color images are sRGB-encoded in
/// `[0, 1]` with channel order R, G, B.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{channels}x{height}x{width} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an image from a per-sample function `f(c, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Dimension(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    /// Extends the bottom and right edges by mirror reflection (edge sample
    /// not repeated), folding repeatedly when the pad exceeds the extent.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Image {
        let (h, w) = (self.height, self.width);
        Image::from_fn(self.channels, h + bottom, w + right, |c, y, x| {
            self.get(c, reflect_index(y, h), reflect_index(x, w))
        })
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.channels, self.height, self.width, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.channels, self.height, self.width, |c, y, x| {
            self.get(c, self.height - 1 - y, x)
        })
    }

    /// The image as a `1×C×H×W` constant tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(v as f64)).collect();
        Tensor::from_vec(&[1, self.channels, self.height, self.width], data)
            .expect("image extents are consistent")
    }

    /// Stacks equally-shaped images into an `N×C×H×W` tensor.
    pub fn batch_tensor<T: Real>(images: &[&Image]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Usage("empty image batch".into()))?;
        if let Some(bad) = images.iter().find(|i| !i.same_shape(first)) {
            return Err(Error::Dimension(format!(
                "batch mixes {}x{}x{} and {}x{}x{} images",
                first.channels, first.height, first.width, bad.channels, bad.height, bad.width
            )));
        }
        let data = images
            .iter()
            .flat_map(|i| i.data.iter().map(|&v| T::from_f64(v as f64)))
            .collect();
        Tensor::from_vec(
            &[images.len(), first.channels, first.height, first.width],
            data,
        )
    }

    /// Extracts batch entry `index` of an `N×C×H×W` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Image> {
        let &[n, c, h, w] = t.shape() else {
            return Err(Error::Dimension(format!(
                "expected an NCHW tensor, got shape {:?}",
                t.shape()
            )));
        };
        if index >= n {
            return Err(Error::Dimension(format!("batch index {index} of {n}")));
        }
        let len = c * h * w;
        let data = t.data()[index * len..(index + 1) * len]
            .iter()
            .map(|v| v.to_f64() as f32)
            .collect();
        Image::from_vec(c, h, w, data)
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
pub(crate) fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Loads a PNG as an RGB image in `[0, 1]` (8- and 16-bit, gray or color).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = open_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        image::DynamicImage::ImageRgb8(_)
        | image::DynamicImage::ImageRgba8(_)
        | image::DynamicImage::ImageLuma8(_)
        | image::DynamicImage::ImageLumaA8(_) => {
            let rgb = img.to_rgb8();
            planar(&rgb.into_raw(), w, h, |v| v as f32 / 255.0)
        }
        _ => {
            let rgb = img.to_rgb16();
            planar(&rgb.into_raw(), w, h, |v| v as f32 / 65535.0)
        }
    };
    Image::from_vec(3, h, w, data)
}

/// Loads a single-channel PNG as raw integer units (16-bit depth maps keep
/// their full `0..=65535` range).
pub fn load_gray_raw(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = open_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f32::from).collect(),
        other => other.to_luma16().into_raw().into_iter().map(f32::from).collect(),
    };
    Image::from_vec(1, h, w, data)
}

fn open_png(path: &Path) -> Result<image::DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = reader;
    reader.set_format(image::ImageFormat::Png);
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn planar<S: Copy>(interleaved: &[S], w: usize, h: usize, f: impl Fn(S) -> f32) -> Vec<f32> {
    let mut out = vec![0.0; 3 * w * h];
    for (i, px) in interleaved.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = f(px[c]);
        }
    }
    out
}

fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a 1- or 3-channel image as 8-bit PNG, quantizing by
/// `round(255·clamp(x, 0, 1))`.
pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width, img.height);
    let result = match img.channels {
        1 => image::GrayImage::from_raw(w as u32, h as u32, img.data.iter().map(|&v| quantize8(v)).collect())
            .expect("buffer sized from image")
            .save_with_format(path, image::ImageFormat::Png),
        3 => {
            let mut buf = Vec::with_capacity(3 * w * h);
            for i in 0..w * h {
                for c in 0..3 {
                    buf.push(quantize8(img.data[c * w * h + i]));
                }
            }
            image::RgbImage::from_raw(w as u32, h as u32, buf)
                .expect("buffer sized from image")
                .save_with_format(path, image::ImageFormat::Png)
        }
        c => {
            return Err(Error::Dimension(format!(
                "PNG output supports 1 or 3 channels, got {c}"
            )))
        }
    };
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Saves a single-channel image of raw units as 16-bit grayscale PNG.
pub fn save_gray16(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    if img.channels != 1 {
        return Err(Error::Dimension(format!(
            "16-bit grayscale output needs 1 channel, got {}",
            img.channels
        )));
    }
    let buf: Vec<u16> = img.data.iter().map(|&v| v.round().clamp(0.0, 65535.0) as u16).collect();
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width as u32, img.height as u32, buf)
        .expect("buffer sized from image")
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bit_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::from_fn(3, 5, 7, |c, y, x| ((c * 31 + y * 7 + x * 13) % 256) as f32 / 255.0);
        save_image(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back, img);
        save_image(&p, &back).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn sixteen_bit_depth_keeps_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let depth = Image::from_vec(1, 1, 4, vec![0.0, 1.0, 40000.0, 65535.0]).unwrap();
        save_gray16(&p, &depth).unwrap();
        assert_eq!(load_gray_raw(&p).unwrap(), depth);
    }

    #[test]
    fn out_of_range_values_clamp_on_save() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let img = Image::from_vec(3, 1, 1, vec![1.2, -0.3, 0.5]).unwrap();
        save_image(&p, &img).unwrap();
        let raw = image::open(&p).unwrap().to_rgb8().into_raw();
        assert_eq!(raw, vec![255, 0, 128]);
    }

    #[test]
    fn corrupt_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"definitely not a png").unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(err.to_string().contains("bad.png"));
    }

    #[test]
    fn reflect_index_folds() {
        let seq: Vec<_> = (0..9).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(seq, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
    }
}
