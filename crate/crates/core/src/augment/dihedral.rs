//! Exact symmetries of the square: quarter-turn rotations and mirror flips.
//! All of them are pixel permutations, so values are moved, never mixed.

use rand::Rng;

use crate::image::{Image, CHANNELS};

/// Rotates counter-clockwise by `k` quarter turns (`k` taken mod 4).
///
/// For one quarter turn a pixel at `(row, col)` of an `R x C` image lands at
/// `(C - 1 - col, row)` of the `C x R` result.
pub fn rot90(image: &Image, k: i64) -> Image {
    let k = k.rem_euclid(4);
    let (w, h) = (image.width(), image.height());
    let (ow, oh) = if k % 2 == 1 { (h, w) } else { (w, h) };
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    for r in 0..h {
        for c in 0..w {
            let (orow, ocol) = match k {
                0 => (r, c),
                1 => (w - 1 - c, r),
                2 => (h - 1 - r, w - 1 - c),
                _ => (c, h - 1 - r),
            };
            let s = (r * w + c) * CHANNELS;
            let d = (orow * ow + ocol) * CHANNELS;
            out[d..d + CHANNELS].copy_from_slice(&src[s..s + CHANNELS]);
        }
    }
    Image::new(ow, oh, out).expect("permutation preserves size")
}

pub fn hflip(image: &Image) -> Image {
    let (w, h) = (image.width(), image.height());
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    for r in 0..h {
        for c in 0..w {
            let s = (r * w + c) * CHANNELS;
            let d = (r * w + (w - 1 - c)) * CHANNELS;
            out[d..d + CHANNELS].copy_from_slice(&src[s..s + CHANNELS]);
        }
    }
    Image::new(w, h, out).expect("permutation preserves size")
}

/// Element `e` (mod 8) of the dihedral group: an optional horizontal flip
/// (`e >= 4`) followed by `e % 4` quarter turns.
pub fn dihedral_element(image: &Image, e: usize) -> Image {
    let e = e % 8;
    if e >= 4 {
        rot90(&hflip(image), (e % 4) as i64)
    } else {
        rot90(image, e as i64)
    }
}

/// Applies a uniformly drawn dihedral element, returning it with the image.
pub fn random_dihedral_with_element<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> (Image, usize) {
    let e = rng.random_range(0..8);
    (dihedral_element(image, e), e)
}

pub fn random_dihedral<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    random_dihedral_with_element(image, rng).0
}
