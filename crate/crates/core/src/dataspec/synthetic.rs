//! Synthetic temporal scenes.
//!
//! Every location shows one class glyph (a 5x5 letter bitmap whose dihedral
//! orbit differs from every other class) at a location-specific scale and
//! position, over a faintly textured background. Structure persists across
//! the views of a location; `nuisance_strength` scales what changes between
//! acquisitions: foreground and background colors (blended towards a fresh
//! random color), global brightness, translation of the whole scene,
//! background clutter and sensor noise.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{save_manifest, ImageRecord, Manifest};
use crate::image::{Image, MemoryImages};
use crate::rng::{derive_indexed, seeded};
use crate::{Error, Result};

/// Class glyphs, top row first; `#` is foreground.
pub const GLYPHS: [(&str, [&str; 5]); 8] = [
    ("F", ["#####", "#....", "####.", "#....", "#...."]),
    ("L", ["#....", "#....", "#....", "#....", "#####"]),
    ("P", ["####.", "#...#", "####.", "#....", "#...."]),
    ("T", ["#####", "..#..", "..#..", "..#..", "..#.."]),
    ("E", ["#####", "#....", "####.", "#....", "#####"]),
    ("U", ["#...#", "#...#", "#...#", "#...#", "#####"]),
    ("Z", ["#####", "...#.", "..#..", ".#...", "#####"]),
    ("A", [".###.", "#...#", "#####", "#...#", "#...#"]),
];

const EPOCH_BASE: i64 = 1_500_000_000;
const DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub groups_per_class: usize,
    pub views_per_group: usize,
    pub image_size: usize,
    pub nuisance_strength: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            groups_per_class: 30,
            views_per_group: 4,
            image_size: 32,
            nuisance_strength: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.groups_per_class == 0 || self.views_per_group == 0 {
            return Err(Error::Validation(
                "synthetic spec counts must be positive".into(),
            ));
        }
        if self.num_classes > GLYPHS.len() {
            return Err(Error::Validation(format!(
                "at most {} synthetic classes are available",
                GLYPHS.len()
            )));
        }
        if self.image_size < 16 {
            return Err(Error::Validation("synthetic image_size must be >= 16".into()));
        }
        if !(0.0..=1.0).contains(&self.nuisance_strength) {
            return Err(Error::Validation(
                "nuisance_strength must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn location_id(class: usize, group: usize) -> String {
        format!("loc_c{class:02}_g{group:03}")
    }

    pub fn image_id(class: usize, group: usize, view: usize) -> String {
        format!("c{class:02}_g{group:03}_v{view:02}")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: Manifest,
    pub images: MemoryImages,
}

impl SyntheticDataset {
    /// Writes every image as PNG under `dir` and the manifest as
    /// `dir/manifest.jsonl`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for (_, r) in self.manifest.records() {
            let img = self.images.get(&r.image_id).expect("generated together");
            img.save_png(&dir.join(&r.path))?;
        }
        save_manifest(&self.manifest, dir.join("manifest.jsonl"))
    }
}

/// `size x size` boolean mask of a glyph scaled to fill the square.
pub fn glyph_mask(glyph: usize, size: usize) -> Vec<bool> {
    let rows = GLYPHS[glyph].1;
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let gy = y * 5 / size;
            let gx = x * 5 / size;
            mask[y * size + x] = rows[gy].as_bytes()[gx] == b'#';
        }
    }
    mask
}

/// Paints `glyph` as a `size x size` square whose top-left corner is at
/// `(x0, y0)` (may be partly outside the image).
pub fn render_glyph(image: &mut Image, glyph: usize, x0: i64, y0: i64, size: usize, rgb: [f32; 3]) {
    let mask = glyph_mask(glyph, size);
    for gy in 0..size {
        for gx in 0..size {
            if !mask[gy * size + gx] {
                continue;
            }
            let (x, y) = (x0 + gx as i64, y0 + gy as i64);
            if x >= 0 && y >= 0 && (x as usize) < image.width() && (y as usize) < image.height() {
                image.set_pixel(x as usize, y as usize, rgb);
            }
        }
    }
}

struct Location {
    class: usize,
    /// Glyph side as a fraction of the image side.
    glyph_scale: f32,
    /// Glyph center offset from the image center, as a fraction of the side.
    glyph_offset: (f32, f32),
    fg: [f32; 3],
    bg: [f32; 3],
    /// Coarse texture lattice, bilinearly upsampled over the image.
    texture: Vec<[f32; 3]>,
    day_offset: i64,
}

const TEXTURE_CELLS: usize = 5;
const GLYPH_SCALE: (f32, f32) = (0.4, 0.6);
const GLYPH_OFFSET: f32 = 0.1;

fn fg_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [0; 3].map(|_| rng.random_range(0.6f32..1.0))
}

fn bg_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    [0; 3].map(|_| rng.random_range(0.05f32..0.35))
}

fn blend(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [0, 1, 2].map(|c| a[c] * (1.0 - t) + b[c] * t)
}
const TEXTURE_AMPLITUDE: f32 = 0.08;

impl Location {
    fn new<R: Rng>(class: usize, rng: &mut R) -> Self {
        let glyph_scale = rng.random_range(GLYPH_SCALE.0..GLYPH_SCALE.1);
        let glyph_offset = (
            rng.random_range(-GLYPH_OFFSET..GLYPH_OFFSET),
            rng.random_range(-GLYPH_OFFSET..GLYPH_OFFSET),
        );
        let fg = fg_color(rng);
        let bg = bg_color(rng);
        let texture = (0..TEXTURE_CELLS * TEXTURE_CELLS)
            .map(|_| {
                [
                    rng.random_range(-TEXTURE_AMPLITUDE..TEXTURE_AMPLITUDE),
                    rng.random_range(-TEXTURE_AMPLITUDE..TEXTURE_AMPLITUDE),
                    rng.random_range(-TEXTURE_AMPLITUDE..TEXTURE_AMPLITUDE),
                ]
            })
            .collect();
        Self {
            class,
            glyph_scale,
            glyph_offset,
            fg,
            bg,
            texture,
            day_offset: rng.random_range(0..20),
        }
    }

    fn texture_at(&self, u: f32, v: f32) -> [f32; 3] {
        // u, v in [0, 1] over the scene.
        let n = (TEXTURE_CELLS - 1) as f32;
        let (fx, fy) = (u.clamp(0.0, 1.0) * n, v.clamp(0.0, 1.0) * n);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(TEXTURE_CELLS - 1), (y0 + 1).min(TEXTURE_CELLS - 1));
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        let at = |x: usize, y: usize| self.texture[y * TEXTURE_CELLS + x];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0)[c] * (1.0 - tx) + at(x1, y0)[c] * tx;
            let bot = at(x0, y1)[c] * (1.0 - tx) + at(x1, y1)[c] * tx;
            *o = top * (1.0 - ty) + bot * ty;
        }
        out
    }

    fn render<R: Rng>(&self, size: usize, nuisance: f32, rng: &mut R) -> Image {
        let max_shift = (size / 8) as f32;
        let shift = (nuisance * max_shift).round() as i64;
        let dx = if shift > 0 { rng.random_range(-shift..=shift) } else { 0 };
        let dy = if shift > 0 { rng.random_range(-shift..=shift) } else { 0 };
        let gain = 1.0 + nuisance * 0.6 * rng.random_range(-1.0f32..1.0);
        let offset = nuisance * 0.1 * rng.random_range(-1.0f32..1.0);
        let fg = blend(self.fg, fg_color(rng), nuisance);
        let bg = blend(self.bg, bg_color(rng), nuisance);

        // Background and texture move with the scene.
        let mut img = Image::from_fn(size, size, |x, y| {
            let u = (x as i64 - dx) as f32 / (size - 1) as f32;
            let v = (y as i64 - dy) as f32 / (size - 1) as f32;
            let t = self.texture_at(u, v);
            [bg[0] + t[0], bg[1] + t[1], bg[2] + t[2]]
        });

        let clutter = (nuisance * 8.0).round() as usize;
        for _ in 0..clutter {
            let w = rng.random_range(size / 16..=size / 6).max(1);
            let h = rng.random_range(size / 16..=size / 6).max(1);
            let x0 = rng.random_range(0..=size - w);
            let y0 = rng.random_range(0..=size - h);
            let rgb = [
                rng.random_range(0.0f32..0.8),
                rng.random_range(0.0f32..0.8),
                rng.random_range(0.0f32..0.8),
            ];
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    img.set_pixel(x, y, rgb);
                }
            }
        }

        let glyph_size = ((self.glyph_scale * size as f32).round() as usize).max(5);
        let cx = size as f32 * (0.5 + self.glyph_offset.0);
        let cy = size as f32 * (0.5 + self.glyph_offset.1);
        let x0 = (cx - glyph_size as f32 / 2.0).round() as i64;
        let y0 = (cy - glyph_size as f32 / 2.0).round() as i64;
        render_glyph(&mut img, self.class, x0 + dx, y0 + dy, glyph_size, fg);

        let noise = Normal::new(0.0f32, 0.03 * nuisance.max(f32::MIN_POSITIVE)).expect("valid sigma");
        for v in img.data_mut() {
            let mut p = *v * gain + offset;
            if nuisance > 0.0 {
                p += noise.sample(rng);
            }
            *v = p.clamp(0.0, 1.0);
        }
        img.quantized()
    }
}

/// Renders the dataset described by `spec`; fully determined by `spec.seed`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.num_classes * spec.groups_per_class * spec.views_per_group);
    let mut images = MemoryImages::new();
    for class in 0..spec.num_classes {
        for group in 0..spec.groups_per_class {
            let mut loc_rng = seeded(derive_indexed(spec.seed, &[class as u64, group as u64]));
            let location = Location::new(class, &mut loc_rng);
            let location_id = SyntheticSpec::location_id(class, group);
            for view in 0..spec.views_per_group {
                let mut view_rng = seeded(derive_indexed(
                    spec.seed,
                    &[class as u64, group as u64, view as u64 + 1],
                ));
                let img = location.render(spec.image_size, spec.nuisance_strength, &mut view_rng);
                let image_id = SyntheticSpec::image_id(class, group, view);
                records.push(ImageRecord {
                    path: format!("images/{image_id}.png"),
                    image_id: image_id.clone(),
                    location_id: location_id.clone(),
                    timestamp: EPOCH_BASE + (view as i64 * 30 + location.day_offset) * DAY,
                    class_label: Some(class),
                    width: spec.image_size as u32,
                    height: spec.image_size as u32,
                });
                images.insert(image_id, img);
            }
        }
    }
    let vocab = GLYPHS[..spec.num_classes]
        .iter()
        .map(|(name, _)| format!("glyph_{name}"))
        .collect();
    Ok(SyntheticDataset {
        manifest: Manifest::from_records(records, vocab)?,
        images,
    })
}
