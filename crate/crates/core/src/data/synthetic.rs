use std::f64::consts::TAU;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nnkernel::{Matrix, Rng};

/// `classes` isotropic Gaussians centred on the unit circle at angles
/// `2*pi*c/classes`, `per_class` samples each in class order, clipped to
/// `[-1, 1]`.
pub fn make_gaussian_mixture(
    classes: usize,
    per_class: usize,
    spread: f32,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::config("a mixture needs at least two classes"));
    }
    let mut samples = Matrix::zeros(classes * per_class, 2);
    let mut labels = Vec::with_capacity(classes * per_class);
    let mut noise = [0.0f32; 2];
    for c in 0..classes {
        let angle = TAU * c as f64 / classes as f64;
        let center = [angle.cos() as f32, angle.sin() as f32];
        for _ in 0..per_class {
            rng.fill_normal(&mut noise);
            let r = labels.len();
            for k in 0..2 {
                samples.set(r, k, (center[k] + spread * noise[k]).clamp(-1.0, 1.0));
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(samples, labels, classes)
}

pub const GLYPH_SIDE: usize = 8;

// 5x7 bitmaps of the digits 0-9.
const DIGITS: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

/// Procedural 8x8 digit images, `per_class` per class for the first `classes`
/// digits, in class order.
///
/// Each sample places the 5x7 digit at a column offset in {1, 2} and a row
/// offset in {0, 1}, scales the stroke intensity uniformly in [0.75, 1], adds
/// N(0, 0.05^2) pixel noise, clips to [0, 1] and maps to [-1, 1]. Rows are
/// flattened row-major.
pub fn make_glyphs(classes: usize, per_class: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    if !(2..=10).contains(&classes) {
        return Err(Error::config("glyph datasets have between 2 and 10 classes"));
    }
    let dim = GLYPH_SIDE * GLYPH_SIDE;
    let mut samples = Matrix::zeros(classes * per_class, dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    let mut noise = vec![0.0f32; dim];
    for (c, glyph) in DIGITS.iter().enumerate().take(classes) {
        for _ in 0..per_class {
            let dx = 1 + rng.below(2);
            let dy = rng.below(2);
            let stroke = rng.uniform_range(0.75, 1.0);
            rng.fill_normal(&mut noise);
            let r = labels.len();
            let row = samples.row_mut(r);
            for y in 0..GLYPH_SIDE {
                for x in 0..GLYPH_SIDE {
                    let on = y >= dy
                        && y - dy < 7
                        && x >= dx
                        && x - dx < 5
                        && glyph[y - dy].as_bytes()[x - dx] == b'#';
                    let base = if on { stroke } else { 0.0 };
                    let k = y * GLYPH_SIDE + x;
                    let v = (base + 0.05 * noise[k]).clamp(0.0, 1.0);
                    row[k] = 2.0 * v - 1.0;
                }
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(samples, labels, classes)
}
