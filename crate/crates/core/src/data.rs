//! Synthetic segmentation data.
//!
//! Each sample is drawn at ground-truth resolution: a few smooth shapes whose
//! outlines carry small high-frequency perturbations, so the full-resolution
//! mask holds detail that the down-scaled input image cannot resolve. The
//! image is then area-averaged to the input resolution and corrupted with
//! Gaussian noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::resample::{downscale_image, power_of_two_ratio};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};
use crate::tensor_file::{self, Record, TensorData};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    /// Rotated ellipses with perturbed outlines.
    Ellipses,
    /// Thresholded sums of Gaussian bumps.
    Blobs,
}

impl std::str::FromStr for ShapeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ellipses" => Ok(ShapeFamily::Ellipses),
            "blobs" => Ok(ShapeFamily::Blobs),
            other => Err(Error::Config(format!("unknown shape family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub num_samples: usize,
    pub input_res: usize,
    pub gt_res: usize,
    /// Logit channels of the model the data is for; 1 means binary masks.
    pub num_classes: usize,
    pub shape_family: ShapeFamily,
    pub noise_level: f64,
    /// Upper bound on shapes per image; each image draws `1..=max_shapes`.
    /// Zero produces empty masks.
    pub max_shapes: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_samples: 64,
            input_res: 16,
            gt_res: 256,
            num_classes: 1,
            shape_family: ShapeFamily::Ellipses,
            noise_level: 0.05,
            max_shapes: 3,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        if self.num_classes == 0 || self.num_classes > 255 {
            return Err(Error::Config(format!(
                "num_classes must be in 1..=255, got {}",
                self.num_classes
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(format!(
                "noise_level must be finite and non-negative, got {}",
                self.noise_level
            )));
        }
        power_of_two_ratio(self.gt_res, self.input_res)?;
        Ok(())
    }

    /// Number of ×2 stages between input and ground-truth resolution.
    pub fn num_stages(&self) -> usize {
        power_of_two_ratio(self.gt_res, self.input_res).expect("validated") as usize
    }
}

/// One low-resolution image with its high-resolution label mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `1×1×H_in×W_in`, values in `[0, 1]`.
    pub image: Tensor<T>,
    /// `1×H_gt×W_gt`.
    pub mask: Mask,
}

/// A batch of samples stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub masks: Mask,
    pub num_classes: usize,
}

struct Canvas {
    res: usize,
    image: Vec<f64>,
    mask: Vec<u8>,
}

impl Canvas {
    fn paint(&mut self, label: u8, intensity: f64, inside: impl Fn(f64, f64) -> bool, bbox: (f64, f64, f64, f64)) {
        let r = self.res as f64;
        let clamp = |v: f64| (v.max(0.0) as usize).min(self.res);
        let (x0, x1) = (clamp(bbox.0 * r), clamp(bbox.1 * r + 1.0));
        let (y0, y1) = (clamp(bbox.2 * r), clamp(bbox.3 * r + 1.0));
        for y in y0..y1 {
            let py = (y as f64 + 0.5) / r;
            for x in x0..x1 {
                let px = (x as f64 + 0.5) / r;
                if inside(px, py) {
                    let i = y * self.res + x;
                    self.mask[i] = label;
                    self.image[i] = intensity;
                }
            }
        }
    }
}

fn label_for(shape: usize, num_classes: usize) -> u8 {
    if num_classes <= 2 {
        1
    } else {
        (1 + shape % (num_classes - 1)) as u8
    }
}

/// Mean intensity band for a label, separated per class so classes are
/// distinguishable from the image.
fn intensity_for(label: u8, num_labels: usize, rng: &mut ChaCha8Rng) -> f64 {
    let bands = (num_labels - 1).max(1) as f64;
    let lo = 0.5 + 0.45 * (label as f64 - 1.0) / bands;
    let hi = 0.5 + 0.45 * label as f64 / bands;
    rng.random_range(lo..hi)
}

fn draw_ellipse(canvas: &mut Canvas, rng: &mut ChaCha8Rng, label: u8, intensity: f64) {
    let cx = rng.random_range(0.28..0.72);
    let cy = rng.random_range(0.28..0.72);
    let a: f64 = rng.random_range(0.1..0.2);
    let b = rng.random_range(0.1..0.2);
    let theta = rng.random_range(0.0..PI);
    // outline wobble: r(φ) = 1 + Σ amp_k cos(k φ + phase_k)
    let harmonics: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(5..12) as f64,
                rng.random_range(0.03..0.07),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let (s, c) = theta.sin_cos();
    let reach = a.max(b) * 1.25;
    canvas.paint(
        label,
        intensity,
        |px, py| {
            let (dx, dy) = (px - cx, py - cy);
            let u = (c * dx + s * dy) / a;
            let v = (-s * dx + c * dy) / b;
            let phi = v.atan2(u);
            let wobble: f64 = 1.0 + harmonics.iter().map(|&(k, amp, ph)| amp * (k * phi + ph).cos()).sum::<f64>();
            (u * u + v * v).sqrt() <= wobble
        },
        (cx - reach, cx + reach, cy - reach, cy + reach),
    );
}

fn draw_blob(canvas: &mut Canvas, rng: &mut ChaCha8Rng, label: u8, intensity: f64) {
    let cx = rng.random_range(0.3..0.7);
    let cy = rng.random_range(0.3..0.7);
    let bumps: Vec<(f64, f64, f64)> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                cx + rng.random_range(-0.1..0.1),
                cy + rng.random_range(-0.1..0.1),
                rng.random_range(0.05..0.1),
            )
        })
        .collect();
    let ripple = rng.random_range(0.0..2.0 * PI);
    canvas.paint(
        label,
        intensity,
        |px, py| {
            let field: f64 = bumps
                .iter()
                .map(|&(bx, by, sd)| (-((px - bx).powi(2) + (py - by).powi(2)) / (2.0 * sd * sd)).exp())
                .sum();
            field * (1.0 + 0.08 * (40.0 * px + ripple).sin() * (40.0 * py).cos()) > 0.6
        },
        (cx - 0.3, cx + 0.3, cy - 0.3, cy + 0.3),
    );
}

fn generate_one<T: Scalar>(spec: &DatasetSpec, index: usize) -> Result<Sample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let res = spec.gt_res;
    let background = rng.random_range(0.05..0.3);
    let mut canvas = Canvas {
        res,
        image: vec![background; res * res],
        mask: vec![0; res * res],
    };
    let num_labels = spec.num_classes.max(2);
    let shapes = if spec.max_shapes == 0 {
        0
    } else {
        rng.random_range(1..=spec.max_shapes)
    };
    for k in 0..shapes {
        let label = label_for(k, spec.num_classes);
        let intensity = intensity_for(label, num_labels, &mut rng);
        match spec.shape_family {
            ShapeFamily::Ellipses => draw_ellipse(&mut canvas, &mut rng, label, intensity),
            ShapeFamily::Blobs => draw_blob(&mut canvas, &mut rng, label, intensity),
        }
    }
    let hi = Tensor::new(
        vec![1, 1, res, res],
        canvas.image.into_iter().map(T::from_f64_lossy).collect(),
    )?;
    let mut image = downscale_image(&hi, res / spec.input_res)?;
    if spec.noise_level > 0.0 {
        let normal = Normal::new(0.0, spec.noise_level).map_err(|e| Error::Config(e.to_string()))?;
        for v in image.data_mut() {
            let noisy = v.to_f64_lossy() + normal.sample(&mut rng);
            *v = T::from_f64_lossy(noisy.clamp(0.0, 1.0));
        }
    }
    Ok(Sample {
        image,
        mask: Mask::new(1, res, res, canvas.mask)?,
    })
}

/// Draws `spec.num_samples` samples. Sample `i` depends only on `spec` and `i`.
pub fn generate<T: Scalar>(spec: &DatasetSpec) -> Result<Vec<Sample<T>>> {
    spec.validate()?;
    (0..spec.num_samples).map(|i| generate_one(spec, i)).collect()
}

impl<T: Scalar> Dataset<T> {
    pub fn from_samples(samples: &[Sample<T>], num_classes: usize) -> Result<Self> {
        let images: Vec<&Tensor<T>> = samples.iter().map(|s| &s.image).collect();
        let masks: Vec<&Mask> = samples.iter().map(|s| &s.mask).collect();
        Ok(Dataset {
            images: Tensor::stack_batch(&images)?,
            masks: Mask::stack_batch(&masks)?,
            num_classes,
        })
    }

    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        Self::from_samples(&generate(spec)?, spec.num_classes)
    }

    pub fn len(&self) -> usize {
        self.masks.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_res(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn gt_res(&self) -> usize {
        self.masks.height()
    }

    pub fn sample(&self, i: usize) -> Result<Sample<T>> {
        Ok(Sample {
            image: self.images.batch_item(i)?,
            mask: self.masks.batch_item(i)?,
        })
    }

    /// Samples at the given indices, stacked.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let samples: Vec<Sample<T>> = indices.iter().map(|&i| self.sample(i)).collect::<Result<_>>()?;
        Self::from_samples(&samples, self.num_classes)
    }

    /// Leading `⌊len·fraction⌋` samples for training, the rest for validation.
    pub fn split(&self, train_fraction: f64) -> Result<(Self, Self)> {
        let n_train = ((self.len() as f64) * train_fraction).floor() as usize;
        if n_train == 0 || n_train >= self.len() {
            return Err(Error::Config(format!(
                "train fraction {train_fraction} leaves an empty split of {} samples",
                self.len()
            )));
        }
        let train: Vec<usize> = (0..n_train).collect();
        let val: Vec<usize> = (n_train..self.len()).collect();
        Ok((self.select(&train)?, self.select(&val)?))
    }

    pub fn to_records(&self) -> Vec<Record> {
        vec![
            Record::from_tensor("images", &self.images),
            Record::from_mask("masks", &self.masks),
            Record::new("num_classes", vec![1], TensorData::U8(vec![self.num_classes as u8]))
                .expect("one value"),
        ]
    }

    pub fn from_records(records: &[Record]) -> Result<Self> {
        let images = tensor_file::find(records, "images")?.to_tensor()?;
        let masks = tensor_file::find(records, "masks")?.to_mask()?;
        let num_classes = match &tensor_file::find(records, "num_classes")?.data {
            TensorData::U8(v) if v.len() == 1 => v[0] as usize,
            _ => return Err(Error::format_in("num_classes", "expected one u8 value")),
        };
        if images.shape()[0] != masks.batch() {
            return Err(Error::format_in(
                "masks",
                format!("{} masks for {} images", masks.batch(), images.shape()[0]),
            ));
        }
        Ok(Dataset {
            images,
            masks,
            num_classes,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        tensor_file::write_tensor_file(path, &self.to_records())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(&tensor_file::read_tensor_file(path)?)
    }
}
