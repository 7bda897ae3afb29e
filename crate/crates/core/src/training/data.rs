use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Named data-split seeds.
pub const SPLIT_SEEDS: [u64; 3] = [2981, 6142, 1187];

/// Images `[batch, C, H, W]` in `[0, 1]` with binary masks `[batch, 1, H, W]`.
#[derive(Debug, Clone)]
pub struct SampleBatch<T: Element> {
    pub images: Tensor<T>,
    pub masks: Tensor<T>,
}

/// Images `[C, H, W]` paired with masks `[1, H, W]`.
#[derive(Debug, Clone, Default)]
pub struct Dataset<T: Element> {
    pub images: Vec<Tensor<T>>,
    pub masks: Vec<Tensor<T>>,
    /// Source name of each sample.
    pub names: Vec<String>,
}

impl<T: Element> Dataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            masks: idx.iter().map(|&i| self.masks[i].clone()).collect(),
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
        }
    }

    /// Seeded random split into `(train, validation)`; the training share is
    /// `round(len·train_fraction)`, kept within `1..len` when `len >= 2`.
    pub fn split(&self, seed: u64, train_fraction: f64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!(
                "train fraction {train_fraction} outside [0, 1]"
            )));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut n_train = (n as f64 * train_fraction).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        }
        Ok((self.subset(&idx[..n_train]), self.subset(&idx[n_train..])))
    }

    /// Stacks the selected samples into one batch.
    pub fn batch(&self, idx: &[usize]) -> Result<SampleBatch<T>> {
        let first = idx
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        if let Some(bad) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Contract(format!("sample index {bad} out of range")));
        }
        let stack = |items: &[Tensor<T>]| -> Result<Tensor<T>> {
            let shape = items[*first].shape().to_vec();
            let mut data = Vec::with_capacity(idx.len() * items[*first].numel());
            for &i in idx {
                let t = &items[i];
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("batch", &shape, t.shape()));
                }
                data.extend_from_slice(t.data());
            }
            let mut full = vec![idx.len()];
            full.extend(shape);
            Tensor::new(full, data)
        };
        Ok(SampleBatch {
            images: stack(&self.images)?,
            masks: stack(&self.masks)?,
        })
    }
}

/// Generator settings for images of random ellipses over a flat background.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub samples: usize,
    pub resolution: (usize, usize),
    pub channels: usize,
    pub seed: u64,
    pub background: f64,
    pub foreground: f64,
    /// Half-width of the uniform per-sample intensity offset.
    pub jitter: f64,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples: 200,
            resolution: (32, 32),
            channels: 1,
            seed: 2981,
            background: 0.2,
            foreground: 0.7,
            jitter: 0.1,
            noise_std: 0.05,
        }
    }
}

impl SynthConfig {
    /// Intensity separating clean foreground from clean background.
    pub fn threshold(&self) -> f64 {
        0.5 * (self.background + self.foreground)
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Self {
        let side = h.min(w) as f64;
        let a = rng.random_range(0.1..0.22) * side;
        let b = rng.random_range(0.1..0.22) * side;
        let r = a.max(b);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        Ellipse {
            cy: rng.random_range(r..h as f64 - r),
            cx: rng.random_range(r..w as f64 - r),
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (dy * self.cos - dx * self.sin) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Reproducible images of 1 to 3 ellipses with intensity jitter and Gaussian
/// noise, with their exact masks.
pub fn synth_dataset<T: Element>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    let (h, w) = cfg.resolution;
    if cfg.samples == 0 || cfg.channels == 0 || h < 8 || w < 8 {
        return Err(Error::Config(
            "synthetic data needs at least 1 sample, 1 channel and 8x8 pixels".into(),
        ));
    }
    if !(cfg.noise_std >= 0.0 && cfg.jitter >= 0.0) {
        return Err(Error::Config(
            "noise and jitter must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Dataset::default();
    for s in 0..cfg.samples {
        let shapes: Vec<Ellipse> = (0..rng.random_range(1..=3))
            .map(|_| Ellipse::random(&mut rng, h, w))
            .collect();
        let mut offset = || {
            if cfg.jitter > 0.0 {
                rng.random_range(-cfg.jitter..=cfg.jitter)
            } else {
                0.0
            }
        };
        let (bg, fg) = (cfg.background + offset(), cfg.foreground + offset());
        let mask: Vec<bool> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
                shapes.iter().any(|e| e.contains(y, x))
            })
            .collect();
        let mut image = Vec::with_capacity(cfg.channels * h * w);
        for _ in 0..cfg.channels {
            for &m in &mask {
                let base = if m { fg } else { bg };
                let n = if cfg.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                image.push(T::from_f64_lossy((base + n).clamp(0.0, 1.0)));
            }
        }
        let mask = mask
            .iter()
            .map(|&m| if m { T::one() } else { T::zero() })
            .collect();
        out.images.push(Tensor::new([cfg.channels, h, w], image)?);
        out.masks.push(Tensor::new([1, h, w], mask)?);
        out.names.push(format!("synth_{s:04}"));
    }
    Ok(out)
}

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads image/mask pairs matched by file stem; a mask may carry a `_mask`
/// suffix. Images are scaled to `[0, 1]` with `channels` of 1 (luma) or 3
/// (RGB); masks are binarized at half intensity. With `resize`, images use
/// bilinear and masks nearest-neighbour resampling to `(H, W)`.
pub fn load_image_folder<T: Element>(
    images_dir: &Path,
    masks_dir: &Path,
    resize: Option<(u32, u32)>,
    channels: usize,
) -> Result<Dataset<T>> {
    if channels != 1 && channels != 3 {
        return Err(Error::Config(format!(
            "image channels must be 1 or 3, got {channels}"
        )));
    }
    let images = list_rasters(images_dir)?;
    let mut masks: BTreeMap<String, PathBuf> = BTreeMap::new();
    for m in list_rasters(masks_dir)? {
        let s = stem(&m);
        let key = s.strip_suffix("_mask").map(str::to_string).unwrap_or(s);
        masks.insert(key, m);
    }
    let mut pairs = Vec::new();
    let mut lonely_images = Vec::new();
    for img in images {
        match masks.remove(&stem(&img)) {
            Some(m) => pairs.push((img, m)),
            None => lonely_images.push(file_name(&img)),
        }
    }
    let lonely_masks: Vec<String> = masks.values().map(|p| file_name(p)).collect();
    if !lonely_images.is_empty() || !lonely_masks.is_empty() {
        return Err(Error::Ingest(format!(
            "unpaired files; images without masks: [{}]; masks without images: [{}]",
            lonely_images.join(", "),
            lonely_masks.join(", ")
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Ingest(format!(
            "no images found in {}",
            images_dir.display()
        )));
    }
    let mut out = Dataset::default();
    let mut size = None;
    for (img_path, mask_path) in pairs {
        let mut img = open(&img_path)?;
        let mut mask = open(&mask_path)?;
        if let Some((h, w)) = resize {
            img = img.resize_exact(w, h, FilterType::Triangle);
            mask = mask.resize_exact(w, h, FilterType::Nearest);
        }
        if (img.height(), img.width()) != (mask.height(), mask.width()) {
            return Err(Error::Ingest(format!(
                "{} is {}x{} but its mask {} is {}x{}",
                file_name(&img_path),
                img.height(),
                img.width(),
                file_name(&mask_path),
                mask.height(),
                mask.width()
            )));
        }
        let (h, w) = (img.height() as usize, img.width() as usize);
        if *size.get_or_insert((h, w)) != (h, w) {
            return Err(Error::Ingest(format!(
                "{} is {h}x{w}, unlike earlier images; pass a resize",
                file_name(&img_path)
            )));
        }
        let scale = |v: u8| T::from_f64_lossy(v as f64 / 255.0);
        let data: Vec<T> = if channels == 1 {
            img.to_luma8().into_raw().into_iter().map(scale).collect()
        } else {
            let rgb = img.to_rgb8().into_raw();
            (0..3)
                .flat_map(|c| {
                    rgb.iter()
                        .skip(c)
                        .step_by(3)
                        .map(|&v| scale(v))
                        .collect::<Vec<_>>()
                })
                .collect()
        };
        let mask_data = mask
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| if v >= 128 { T::one() } else { T::zero() })
            .collect();
        out.images.push(Tensor::new([channels, h, w], data)?);
        out.masks.push(Tensor::new([1, h, w], mask_data)?);
        out.names.push(stem(&img_path));
    }
    Ok(out)
}
