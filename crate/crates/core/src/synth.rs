//! Paired training data from RGB-D images.
//!
//! Each clean image `J` with depth `d` (meters) is degraded per channel as
//! `I = J·t + B·(1 − t)` with transmission `t = exp(−β·d)`, for every
//! combination of water type and background-light level.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_gray_raw, load_image, save_gray16, save_image, Image};
use crate::seed;

/// Attenuation profile of one water type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterType {
    pub name: String,
    /// Attenuation coefficients per meter, (R, G, B).
    pub beta: [f64; 3],
    /// Background-light chromaticity, largest component 1.
    pub background: [f64; 3],
}

impl WaterType {
    /// Builds a type from its normalized residual energy ratio per meter
    /// (the fraction of light surviving one meter): `β = −ln(ratio)`, and a
    /// background chromaticity proportional to `ratio⁵`.
    pub fn from_residual_ratio(name: &str, ratio: [f64; 3]) -> Self {
        let beta = ratio.map(|r| -r.ln());
        let tint = ratio.map(|r| r.powi(5));
        let max = tint.iter().cloned().fold(f64::MIN, f64::max);
        WaterType {
            name: name.to_string(),
            beta,
            background: tint.map(|v| v / max),
        }
    }

    /// Hard errors for unusable coefficients; returns soft warnings for
    /// unrealistic channel ordering.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.name.is_empty() || self.name.contains(['\t', '\n', '/', '\\']) || self.name.contains("__") {
            return Err(Error::Config(format!("invalid water type name {:?}", self.name)));
        }
        if self.beta.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::Config(format!(
                "water type {}: attenuation must be positive, got {:?}",
                self.name, self.beta
            )));
        }
        if self.background.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config(format!(
                "water type {}: background chromaticity must lie in [0, 1], got {:?}",
                self.name, self.background
            )));
        }
        let [r, g, b] = self.beta;
        let mut warnings = Vec::new();
        if !(r >= g && g >= b) {
            warnings.push(format!(
                "water type {}: expected beta_R >= beta_G >= beta_B, got ({r:.4}, {g:.4}, {b:.4})",
                self.name
            ));
        }
        Ok(warnings)
    }
}

/// Default table: open-ocean types I, IA, IB, II, III and coastal type 3C.
pub fn jerlov_types() -> Vec<WaterType> {
    [
        ("I", [0.85, 0.961, 0.982]),
        ("IA", [0.84, 0.955, 0.975]),
        ("IB", [0.83, 0.95, 0.968]),
        ("II", [0.80, 0.925, 0.94]),
        ("III", [0.75, 0.885, 0.89]),
        ("3C", [0.71, 0.82, 0.80]),
    ]
    .into_iter()
    .map(|(name, ratio)| WaterType::from_residual_ratio(name, ratio))
    .collect()
}

/// Grid of degradations applied to every source image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub water_types: Vec<WaterType>,
    /// Background-light scale factors in `(0, 1]`.
    pub light_levels: Vec<f64>,
    /// Meters per unit of the 16-bit depth maps.
    pub depth_scale: f64,
    /// Relative per-variant perturbation of each background-light channel.
    pub jitter: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            water_types: jerlov_types(),
            light_levels: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            depth_scale: 0.001,
            jitter: 0.05,
        }
    }
}

pub const WATER_TYPE_COUNT: usize = 6;
pub const LIGHT_LEVEL_COUNT: usize = 6;

impl SynthSpec {
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.water_types.len() != WATER_TYPE_COUNT || self.light_levels.len() != LIGHT_LEVEL_COUNT {
            return Err(Error::Config(format!(
                "synthesis grid must be {WATER_TYPE_COUNT} water types x {LIGHT_LEVEL_COUNT} light levels, got {} x {}",
                self.water_types.len(),
                self.light_levels.len()
            )));
        }
        let mut warnings = Vec::new();
        for (i, w) in self.water_types.iter().enumerate() {
            warnings.extend(w.validate()?);
            if self.water_types[..i].iter().any(|o| o.name == w.name) {
                return Err(Error::Config(format!("duplicate water type {}", w.name)));
            }
        }
        for (i, &l) in self.light_levels.iter().enumerate() {
            if !(l > 0.0 && l <= 1.0) {
                return Err(Error::Config(format!("light level {l} outside (0, 1]")));
            }
            if self.light_levels[..i].iter().any(|&o| format!("{o:.2}") == format!("{l:.2}")) {
                return Err(Error::Config(format!("light levels collide at two decimals: {l}")));
            }
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::Config(format!("depth_scale must be positive, got {}", self.depth_scale)));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::Config(format!("jitter must lie in [0, 1), got {}", self.jitter)));
        }
        Ok(warnings)
    }

    pub fn variants_per_image(&self) -> usize {
        self.water_types.len() * self.light_levels.len()
    }
}

/// `light · chromaticity` for one water type.
pub fn background_light(water: &WaterType, light: f64) -> [f64; 3] {
    water.background.map(|c| light * c)
}

/// Degrades `clean` (3×H×W in `[0, 1]`) given `depth` (1×H×W, meters).
pub fn synthesize(clean: &Image, depth: &Image, water: &WaterType, light: f64) -> Result<Image> {
    synthesize_with(clean, depth, water.beta, background_light(water, light))
}

/// Formation model with explicit attenuation and background light.
pub fn synthesize_with(clean: &Image, depth: &Image, beta: [f64; 3], background: [f64; 3]) -> Result<Image> {
    if clean.channels() != 3 || depth.channels() != 1 {
        return Err(Error::Dimension(format!(
            "expected 3-channel color and 1-channel depth, got {} and {}",
            clean.channels(),
            depth.channels()
        )));
    }
    if (clean.height(), clean.width()) != (depth.height(), depth.width()) {
        return Err(Error::Dimension(format!(
            "color is {}x{} but depth is {}x{}",
            clean.height(),
            clean.width(),
            depth.height(),
            depth.width()
        )));
    }
    let d = depth.data();
    let nan = d.iter().filter(|v| v.is_nan()).count();
    if nan > 0 {
        return Err(Error::Domain(format!("depth map has {nan} NaN pixels")));
    }
    let negative = d.iter().filter(|&&v| v < 0.0).count();
    if negative > 0 {
        return Err(Error::Domain(format!("depth map has {negative} negative pixels")));
    }
    let n = d.len();
    let mut out = clean.clone();
    for (c, plane) in out.data_mut().chunks_exact_mut(n).enumerate() {
        for (v, &z) in plane.iter_mut().zip(d) {
            let t = (-beta[c] * z as f64).exp();
            *v = (*v as f64 * t + background[c] * (1.0 - t)).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// One line of `manifest.tsv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    /// File name of the degraded image.
    pub variant: String,
    /// Source stem; the clean target is [`clean_name`]`(source)`.
    pub source: String,
    pub water_name: String,
    pub light_level: f64,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const MANIFEST_HEADER: [&str; 4] = ["variant", "source", "water_name", "light_level"];

pub fn clean_name(stem: &str) -> String {
    format!("{stem}__clean.png")
}

pub fn variant_name(stem: &str, water: &str, light: f64) -> String {
    format!("{stem}__{water}__{light:.2}.png")
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut s = MANIFEST_HEADER.join("\t");
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.variant, r.source, r.water_name, r.light_level);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    if header != MANIFEST_HEADER {
        return Err(Error::Domain(format!(
            "{}: expected header {:?}, got {:?}",
            path.display(),
            MANIFEST_HEADER.join("\t"),
            header.join("\t")
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Domain(format!("{}:{}: malformed row {line:?}", path.display(), i + 2));
        if f.len() != 4 {
            return Err(bad());
        }
        rows.push(ManifestRow {
            variant: f[0].to_string(),
            source: f[1].to_string(),
            water_name: f[2].to_string(),
            light_level: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Outcome of [`generate_dataset`].
#[derive(Clone, Debug, Default)]
pub struct SynthReport {
    pub rows: Vec<ManifestRow>,
    /// `(stem, reason)` for every source that was not processed.
    pub skipped: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Source stems in `dir`: every `<stem>.png` that is not itself a depth map,
/// sorted.
fn source_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".png") {
            if !stem.ends_with("_depth") && !stem.is_empty() {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

fn check_writable(path: &Path, overwrite: bool) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::Usage(format!(
            "{} already exists (pass --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

/// Writes every degraded variant plus the clean target for each RGB-D pair
/// in `rgbd_dir` (`<stem>.png` + `<stem>_depth.png`), and `manifest.tsv`.
///
/// Sources without a depth map, or with unreadable/mismatched files, are
/// skipped and reported. Output is a deterministic function of the inputs
/// and `seed`.
pub fn generate_dataset(
    rgbd_dir: &Path,
    spec: &SynthSpec,
    out_dir: &Path,
    seed: u64,
    overwrite: bool,
) -> Result<SynthReport> {
    let mut report = SynthReport {
        warnings: spec.validate()?,
        ..SynthReport::default()
    };
    let stems = source_stems(rgbd_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = out_dir.join(MANIFEST_FILE);
    check_writable(&manifest, overwrite)?;
    for stem in stems {
        let depth_path = rgbd_dir.join(format!("{stem}_depth.png"));
        if !depth_path.exists() {
            report.skipped.push((stem, "missing depth map".into()));
            continue;
        }
        let loaded = load_image(rgbd_dir.join(format!("{stem}.png")))
            .and_then(|c| Ok((c, load_gray_raw(&depth_path)?)));
        let (clean, raw_depth) = match loaded {
            Ok(v) => v,
            Err(e) => {
                report.skipped.push((stem, e.to_string()));
                continue;
            }
        };
        let depth = raw_depth.map(|v| v * spec.depth_scale as f32);
        let mut outputs = Vec::with_capacity(spec.variants_per_image());
        let mut failed = None;
        'grid: for water in &spec.water_types {
            for &light in &spec.light_levels {
                let name = variant_name(&stem, &water.name, light);
                let mut rng = seed::stream(seed, &name);
                let b = background_light(water, light).map(|v| {
                    let u: f64 = rng.random_range(-1.0..=1.0);
                    (v * (1.0 + spec.jitter * u)).clamp(0.0, 1.0)
                });
                match synthesize_with(&clean, &depth, water.beta, b) {
                    Ok(img) => outputs.push((name, water.name.clone(), light, img)),
                    Err(e) => {
                        failed = Some(e.to_string());
                        break 'grid;
                    }
                }
            }
        }
        if let Some(reason) = failed {
            report.skipped.push((stem, reason));
            continue;
        }
        let clean_path = out_dir.join(clean_name(&stem));
        check_writable(&clean_path, overwrite)?;
        for (name, ..) in &outputs {
            check_writable(&out_dir.join(name), overwrite)?;
        }
        save_image(&clean_path, &clean)?;
        for (name, water_name, light, img) in outputs {
            save_image(out_dir.join(&name), &img)?;
            report.rows.push(ManifestRow {
                variant: name,
                source: stem.clone(),
                water_name,
                light_level: light,
            });
        }
    }
    if report.rows.is_empty() {
        return Err(Error::Domain(format!(
            "no usable <stem>.png + <stem>_depth.png pairs in {}",
            rgbd_dir.display()
        )));
    }
    write_manifest(&manifest, &report.rows)?;
    Ok(report)
}

/// A degraded image and its clean target.
#[derive(Clone, Debug)]
pub struct Pair {
    pub variant: String,
    pub degraded: Image,
    pub clean: Image,
}

/// Loads every manifest row of a synthesized dataset directory.
pub fn load_pairs(dir: &Path) -> Result<Vec<Pair>> {
    let manifest = dir.join(MANIFEST_FILE);
    let rows = read_manifest(&manifest)?;
    if rows.is_empty() {
        return Err(Error::Domain(format!("{} lists no pairs", manifest.display())));
    }
    let mut cleans: std::collections::HashMap<String, Image> = Default::default();
    let mut pairs = Vec::with_capacity(rows.len());
    for row in rows {
        if !cleans.contains_key(&row.source) {
            let img = load_image(dir.join(clean_name(&row.source)))?;
            cleans.insert(row.source.clone(), img);
        }
        let clean = cleans[&row.source].clone();
        let degraded = load_image(dir.join(&row.variant))?;
        if !degraded.same_shape(&clean) {
            return Err(Error::Domain(format!(
                "{}: size differs from its clean target",
                row.variant
            )));
        }
        pairs.push(Pair {
            variant: row.variant,
            degraded,
            clean,
        });
    }
    Ok(pairs)
}

/// Cuts the same random `size×size` window out of both images.
pub fn random_crop_pair(clean: &Image, degraded: &Image, size: usize, seed: u64) -> Result<(Image, Image)> {
    if !clean.same_shape(degraded) {
        return Err(Error::Dimension("crop pair images differ in shape".into()));
    }
    let (h, w) = (clean.height(), clean.width());
    if size == 0 || size > h || size > w {
        return Err(Error::Domain(format!("crop size {size} does not fit {h}x{w}")));
    }
    let mut rng = seed::stream(seed, "crop");
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    Ok((clean.crop(top, left, size, size)?, degraded.crop(top, left, size, size)?))
}

/// A procedural RGB-D scene: a graded backdrop receding into the distance
/// with textured shapes in front. Returns color in `[0, 1]` and depth in
/// meters.
pub fn toy_scene(seed: u64, height: usize, width: usize) -> (Image, Image) {
    let mut rng = seed::stream(seed, "toy-scene");
    let hsv = |rng: &mut rand_chacha::ChaCha8Rng, s: (f64, f64), v: (f64, f64)| {
        crate::colorspace::hsv_to_rgb_px([
            rng.random::<f64>(),
            rng.random_range(s.0..s.1),
            rng.random_range(v.0..v.1),
        ])
    };
    let top = hsv(&mut rng, (0.1, 0.5), (0.6, 1.0));
    let bottom = hsv(&mut rng, (0.2, 0.7), (0.3, 0.8));
    let far = rng.random_range(6.0..10.0);
    let near = rng.random_range(1.5..3.0);
    let mut color = Image::new(3, height, width);
    let mut depth = Image::new(1, height, width);
    let hf = (height.max(2) - 1) as f64;
    for y in 0..height {
        let s = y as f64 / hf;
        for x in 0..width {
            for c in 0..3 {
                color.set(c, y, x, (top[c] * (1.0 - s) + bottom[c] * s) as f32);
            }
            depth.set(0, y, x, (far * (1.0 - s) + near * s) as f32);
        }
    }
    let shapes = rng.random_range(4..=7);
    for _ in 0..shapes {
        let base = hsv(&mut rng, (0.5, 1.0), (0.4, 1.0));
        let z = rng.random_range(0.8..4.0);
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(0.1..0.35) * height as f64;
        let rx = rng.random_range(0.1..0.35) * width as f64;
        let disc = rng.random::<bool>();
        let period = rng.random_range(2..=6) as f64;
        let amp = rng.random_range(0.08..0.2);
        let stripes = rng.random::<bool>();
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if !inside {
                    continue;
                }
                let phase = if stripes {
                    ((x as f64 + y as f64) / period).floor()
                } else {
                    (x as f64 / period).floor() + (y as f64 / period).floor()
                };
                let tex = if phase as i64 % 2 == 0 { amp } else { -amp };
                for c in 0..3 {
                    color.set(c, y, x, (base[c] + tex).clamp(0.0, 1.0) as f32);
                }
                depth.set(0, y, x, (z + 0.3 * dy) as f32);
            }
        }
    }
    (color, depth)
}

/// Writes `count` toy scenes as `toy{i}.png` + `toy{i}_depth.png` (16-bit,
/// `depth_scale` meters per unit). Returns the stems.
pub fn write_toy_rgbd(dir: &Path, count: usize, size: usize, seed: u64, depth_scale: f64) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let stem = format!("toy{i:03}");
        let (color, depth) = toy_scene(seed.wrapping_add(i as u64), size, size);
        let units = depth.map(|m| (m as f64 / depth_scale) as f32);
        save_image(dir.join(format!("{stem}.png")), &color)?;
        save_gray16(dir.join(format!("{stem}_depth.png")), &units)?;
        stems.push(stem);
    }
    Ok(stems)
}

/// Directory entries of `dir` with a `.png` extension, sorted by name.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
