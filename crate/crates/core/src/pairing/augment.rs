use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-width of the per-channel jitter factor range at strength 1.
pub const JITTER_AMPLITUDE: f32 = 0.8;
/// Crop area fraction removed at strength 1 (minimum crop is 8% of the image).
pub const CROP_AREA_SPAN: f32 = 0.92;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "strength", rename_all = "snake_case")]
pub enum Augmentation {
    ColorJitter(f32),
    RandomResizedCrop(f32),
}

impl Augmentation {
    pub fn strength(&self) -> f32 {
        match *self {
            Augmentation::ColorJitter(s) | Augmentation::RandomResizedCrop(s) => s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.strength();
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!(
                "augmentation strength {s} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn apply<R: Rng>(&self, image: &Tensor<f32>, rng: &mut R) -> Result<Tensor<f32>> {
        match *self {
            Augmentation::ColorJitter(s) => color_jitter(image, s, rng),
            Augmentation::RandomResizedCrop(s) => random_resized_crop(image, s, rng),
        }
    }
}

fn check_image(image: &Tensor<f32>) -> Result<(usize, usize)> {
    match image.shape() {
        &[3, h, w] => Ok((h, w)),
        other => Err(Error::Shape(format!("expected a [3, H, W] image, got {other:?}"))),
    }
}

fn check_strength(s: f32) -> Result<()> {
    Augmentation::ColorJitter(s).validate()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterParams {
    pub factors: [f32; 3],
    /// Hue rotation in radians about the gray axis.
    pub angle: f64,
}

impl JitterParams {
    pub fn draw<R: Rng>(s: f32, rng: &mut R) -> Self {
        let mut factors = [1.0f32; 3];
        for f in &mut factors {
            *f = 1.0 + JITTER_AMPLITUDE * s * (2.0 * rng.gen::<f32>() - 1.0);
        }
        let angle = s as f64 * std::f64::consts::FRAC_PI_2 * (2.0 * rng.gen::<f64>() - 1.0);
        Self { factors, angle }
    }

    /// Rotation matrix about (1,1,1)/sqrt(3); it preserves the channel mean.
    pub fn rotation(&self) -> [[f32; 3]; 3] {
        let (sin, cos) = self.angle.sin_cos();
        let k = 1.0 / 3f64.sqrt();
        let t = 1.0 - cos;
        let kk = k * k * t;
        let ks = k * sin;
        [
            [(cos + kk) as f32, (kk - ks) as f32, (kk + ks) as f32],
            [(kk + ks) as f32, (cos + kk) as f32, (kk - ks) as f32],
            [(kk - ks) as f32, (kk + ks) as f32, (cos + kk) as f32],
        ]
    }

    pub fn apply(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (h, w) = check_image(image)?;
        let px = h * w;
        let r = self.rotation();
        let d = image.data();
        let mut out = vec![0.0f32; 3 * px];
        for p in 0..px {
            let v = [
                d[p] * self.factors[0],
                d[px + p] * self.factors[1],
                d[2 * px + p] * self.factors[2],
            ];
            for (c, row) in r.iter().enumerate() {
                let y = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
                out[c * px + p] = y.clamp(0.0, 1.0);
            }
        }
        Tensor::new(vec![3, h, w], out)
    }
}

/// Per-channel scaling in `[1 - 0.8 s, 1 + 0.8 s]` then a hue rotation of up
/// to `s * pi / 2`; clamped to [0, 1].
pub fn color_jitter<R: Rng>(image: &Tensor<f32>, s: f32, rng: &mut R) -> Result<Tensor<f32>> {
    check_strength(s)?;
    JitterParams::draw(s, rng).apply(image)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropParams {
    pub top: f32,
    pub left: f32,
    pub height: f32,
    pub width: f32,
}

impl CropParams {
    pub fn draw<R: Rng>(s: f32, h: usize, w: usize, rng: &mut R) -> Self {
        let area = 1.0 - CROP_AREA_SPAN * s * rng.gen::<f32>();
        let log_r = (1.0 + s).ln() * (2.0 * rng.gen::<f32>() - 1.0);
        let ratio = log_r.exp();
        let width = ((area * ratio).sqrt() * w as f32).min(w as f32);
        let height = ((area / ratio).sqrt() * h as f32).min(h as f32);
        let top = (h as f32 - height) * rng.gen::<f32>();
        let left = (w as f32 - width) * rng.gen::<f32>();
        Self {
            top,
            left,
            height,
            width,
        }
    }

    /// Bilinear resample of the crop back to the full canvas.
    pub fn apply(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (h, w) = check_image(image)?;
        let d = image.data();
        let sy = self.height / h as f32;
        let sx = self.width / w as f32;
        let mut out = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            let fy = (self.top + (y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f32;
            for x in 0..w {
                let fx = (self.left + (x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f32;
                for c in 0..3 {
                    let at = |yy: usize, xx: usize| d[c * h * w + yy * w + xx];
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                    let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                    out[c * h * w + y * w + x] = top * (1.0 - ty) + bot * ty;
                }
            }
        }
        Tensor::new(vec![3, h, w], out)
    }
}

/// Crop with area fraction in `[1 - 0.92 s, 1]` and aspect ratio in
/// `[1/(1+s), 1+s]`, resized back with bilinear interpolation.
pub fn random_resized_crop<R: Rng>(image: &Tensor<f32>, s: f32, rng: &mut R) -> Result<Tensor<f32>> {
    check_strength(s)?;
    let (h, w) = check_image(image)?;
    CropParams::draw(s, h, w, rng).apply(image)
}
