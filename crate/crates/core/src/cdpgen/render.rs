use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CdpAttributes, Color, Digit, Position};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SUPPORTED_SIZES: [usize; 3] = [16, 32, 64];

const GLYPH_FILL: f64 = 0.7;
const NOISE_OCTAVES: u32 = 4;

// 5x7 bitmaps, bit 4 is the leftmost column.
const FONT: [[u8; 7]; 4] = [
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
];

fn check_size(size: usize) -> Result<()> {
    if !SUPPORTED_SIZES.contains(&size) {
        return Err(Error::InvalidArgument(format!(
            "unsupported image size {size}; expected one of {SUPPORTED_SIZES:?}"
        )));
    }
    Ok(())
}

/// Glyph box `(height, width)` inside one quadrant.
pub fn glyph_box(size: usize) -> (usize, usize) {
    let q = (size / 2) as f64;
    let h = (GLYPH_FILL * q).round() as usize;
    let w = (h as f64 * 5.0 / 7.0).round() as usize;
    (h, w)
}

/// Nearest-neighbor scaled glyph mask, `h * w` row-major.
pub fn glyph_bitmap(digit: Digit, size: usize) -> Vec<bool> {
    let (h, w) = glyph_box(size);
    let rows = &FONT[digit as usize];
    let mut out = vec![false; h * w];
    for r in 0..h {
        let fr = r * 7 / h;
        for c in 0..w {
            let fc = c * 5 / w;
            out[r * w + c] = rows[fr] >> (4 - fc) & 1 == 1;
        }
    }
    out
}

fn glyph_origin(position: Position, size: usize) -> (usize, usize) {
    let q = size / 2;
    let (h, w) = glyph_box(size);
    let (qr, qc) = position.quadrant();
    (qr * q + (q - h) / 2, qc * q + (q - w) / 2)
}

fn glyph_mask(digit: Digit, position: Position, size: usize) -> Vec<bool> {
    let (h, w) = glyph_box(size);
    let (top, left) = glyph_origin(position, size);
    let bitmap = glyph_bitmap(digit, size);
    let mut mask = vec![false; size * size];
    for r in 0..h {
        for c in 0..w {
            mask[(top + r) * size + left + c] = bitmap[r * w + c];
        }
    }
    mask
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Multi-octave value noise, `[3, size, size]` in [0, 1].
pub fn background(bg_seed: u64, size: usize) -> Result<Tensor<f32>> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(bg_seed);
    let mut data = vec![0.0f32; 3 * size * size];
    let total: f32 = (0..NOISE_OCTAVES).map(|o| 0.5f32.powi(o as i32)).sum();
    for ch in 0..3 {
        let plane = &mut data[ch * size * size..(ch + 1) * size * size];
        for o in 0..NOISE_OCTAVES {
            let cells = 2usize << o;
            let amp = 0.5f32.powi(o as i32) / total;
            let lattice: Vec<f32> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f32>()).collect();
            for y in 0..size {
                let fy = (y as f32 + 0.5) / size as f32 * cells as f32;
                let iy = (fy as usize).min(cells - 1);
                let ty = smoothstep(fy - iy as f32);
                for x in 0..size {
                    let fx = (x as f32 + 0.5) / size as f32 * cells as f32;
                    let ix = (fx as usize).min(cells - 1);
                    let tx = smoothstep(fx - ix as f32);
                    let at = |r: usize, c: usize| lattice[r * (cells + 1) + c];
                    let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                    let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                    plane[y * size + x] += amp * (top * (1.0 - ty) + bot * ty);
                }
            }
        }
        for v in plane.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Tensor::new(vec![3, size, size], data)
}

/// `(1 - mix) * glyph + mix * background`, with a dark one-pixel outline.
///
/// The outline composites black at opacity `1 - mix` over the mixed
/// background, so `mix = 1` reproduces the background exactly.
pub fn render(attrs: &CdpAttributes, bg_seed: u64, size: usize, mix: f32) -> Result<Tensor<f32>> {
    check_size(size)?;
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidArgument(format!("mix {mix} outside [0, 1]")));
    }
    let mask = glyph_mask(attrs.digit, attrs.position, size);
    let outline: Vec<bool> = (0..size * size)
        .map(|p| {
            if mask[p] {
                return false;
            }
            let (y, x) = ((p / size) as isize, (p % size) as isize);
            (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (ny, nx) = (y + dy, x + dx);
                    ny >= 0
                        && nx >= 0
                        && (ny as usize) < size
                        && (nx as usize) < size
                        && mask[ny as usize * size + nx as usize]
                })
            })
        })
        .collect();
    let bg = background(bg_seed, size)?;
    let rgb = attrs.color.rgb();
    let mut data = bg.into_data();
    for (ch, &c) in rgb.iter().enumerate() {
        for p in 0..size * size {
            let v = &mut data[ch * size * size + p];
            let glyph = if mask[p] { c } else { 0.0 };
            *v = (1.0 - mix) * glyph + mix * *v;
            if outline[p] {
                *v *= mix;
            }
        }
    }
    Tensor::new(vec![3, size, size], data)
}

/// Rule-based decoder: thresholded glyph pixels give the quadrant, the lit
/// channels give the color and template matching gives the digit.
///
/// Exact for every `mix < 0.5`; returns `None` when no pixel is lit.
pub fn classify_pixels(image: &Tensor<f32>) -> Option<CdpAttributes> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 || shape[1] != shape[2] || check_size(shape[1]).is_err() {
        return None;
    }
    let size = shape[1];
    let px = size * size;
    let d = image.data();
    let lit: Vec<bool> = (0..px).map(|p| d[p].max(d[px + p]).max(d[2 * px + p]) > 0.5).collect();
    let count = lit.iter().filter(|&&b| b).count();
    if count == 0 {
        return None;
    }

    let mut per_quadrant = [0usize; 4];
    for (p, _) in lit.iter().enumerate().filter(|(_, &b)| b) {
        let (y, x) = (p / size, p % size);
        per_quadrant[(y >= size / 2) as usize * 2 + (x >= size / 2) as usize] += 1;
    }
    let qi = (0..4).max_by_key(|&i| (per_quadrant[i], std::cmp::Reverse(i)))?;
    let position = Position::ALL[qi];

    let mut means = [0.0f64; 3];
    for (ch, m) in means.iter_mut().enumerate() {
        let s: f64 = (0..px).filter(|&p| lit[p]).map(|p| d[ch * px + p] as f64).sum();
        *m = s / count as f64;
    }
    let on: Vec<bool> = means.iter().map(|&m| m > 0.5).collect();
    let color = match (on[0], on[1], on[2]) {
        (true, true, true) => Color::White,
        (true, false, false) => Color::Red,
        (false, true, false) => Color::Green,
        (false, false, true) => Color::Blue,
        _ => return None,
    };

    let digit = Digit::ALL.into_iter().min_by_key(|&dg| {
        let tmpl = glyph_mask(dg, position, size);
        tmpl.iter().zip(&lit).filter(|(a, b)| a != b).count()
    })?;
    Some(CdpAttributes { color, digit, position })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyph_fits_inside_quadrant_with_outline_margin() {
        for size in SUPPORTED_SIZES {
            let (h, w) = glyph_box(size);
            let q = size / 2;
            assert!(h + 2 <= q && w + 2 <= q, "size {size}: box {h}x{w}");
        }
    }

    #[test]
    fn digits_have_distinct_bitmaps() {
        for size in SUPPORTED_SIZES {
            let maps: Vec<_> = Digit::ALL.iter().map(|&d| glyph_bitmap(d, size)).collect();
            for i in 0..4 {
                for j in i + 1..4 {
                    assert_ne!(maps[i], maps[j], "size {size}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let a = CdpAttributes::from_indices(0, 0, 0).unwrap();
        assert!(render(&a, 1, 24, 0.3).is_err());
        assert!(render(&a, 1, 32, 1.5).is_err());
    }
}
