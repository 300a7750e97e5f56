use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BBox, DetectionDataset, DetectionImage};
use crate::{Error, Result};

/// A clipped copy whose area is below this fraction of the original box is
/// not labelled in the tile. Tile positivity ignores this rule.
pub const MIN_KEPT_AREA_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileSpec {
    pub tile_size: u32,
    /// `0 <= overlap < tile_size`.
    pub overlap: u32,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            tile_size: 512,
            overlap: 128,
        }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 || self.overlap >= self.tile_size {
            return Err(Error::Validation(format!(
                "tile spec needs 0 <= overlap ({}) < tile_size ({})",
                self.overlap, self.tile_size
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.tile_size - self.overlap
    }
}

/// Pixel window `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileWindow {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl TileWindow {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        let (x, y) = (f64::from(self.x), f64::from(self.y));
        (x, y, x + f64::from(self.width), y + f64::from(self.height))
    }
}

fn axis_origins(len: u32, tile: u32, stride: u32) -> Vec<u32> {
    if len <= tile {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0;
    loop {
        if o + tile >= len {
            origins.push(len - tile);
            break;
        }
        origins.push(o);
        o += stride;
    }
    origins
}

/// Row-major windows at `spec.stride()`; the last window of each axis is
/// snapped to end on the border. An axis shorter than the tile gets one
/// window spanning it.
pub fn tile_image(width: u32, height: u32, spec: &TileSpec) -> Result<Vec<TileWindow>> {
    spec.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Precondition(format!("cannot tile a {width}x{height} image")));
    }
    let xs = axis_origins(width, spec.tile_size, spec.stride());
    let ys = axis_origins(height, spec.tile_size, spec.stride());
    let (tw, th) = (spec.tile_size.min(width), spec.tile_size.min(height));
    Ok(ys
        .iter()
        .flat_map(|&y| {
            xs.iter().map(move |&x| TileWindow {
                x,
                y,
                width: tw,
                height: th,
            })
        })
        .collect())
}

/// An object in tile-local coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileObject {
    pub bbox: BBox,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub image_id: String,
    pub window: TileWindow,
    /// Clipped copies of the intersecting objects, minus slivers.
    pub objects: Vec<TileObject>,
}

impl Tile {
    /// `<image_id>_<x>_<y>`.
    pub fn tile_id(&self) -> String {
        format!("{}_{}_{}", self.image_id, self.window.x, self.window.y)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TileSplit {
    pub positive: Vec<Tile>,
    pub negative: Vec<Tile>,
}

/// A tile is positive iff some box of the image overlaps it with positive
/// area. Intersecting objects are clipped and re-expressed in the tile frame;
/// a positive tile may therefore hold no labels when all its overlaps are
/// slivers.
pub fn classify_tiles(image: &DetectionImage, windows: &[TileWindow]) -> TileSplit {
    let mut split = TileSplit::default();
    for w in windows {
        let (x0, y0, x1, y1) = w.bounds();
        let mut positive = false;
        let mut objects = Vec::new();
        for o in &image.objects {
            if let Some(c) = o.bbox.clip(x0, y0, x1, y1) {
                positive = true;
                if c.area() >= MIN_KEPT_AREA_FRACTION * o.bbox.area() {
                    objects.push(TileObject {
                        bbox: c.translate(-x0, -y0),
                        class_id: o.class_id,
                    });
                }
            }
        }
        let tile = Tile {
            image_id: image.image_id.clone(),
            window: *w,
            objects,
        };
        if positive {
            split.positive.push(tile);
        } else {
            split.negative.push(tile);
        }
    }
    split
}

/// Tiles and classifies every image of the dataset.
pub fn tile_dataset(dataset: &DetectionDataset, spec: &TileSpec) -> Result<TileSplit> {
    let mut all = TileSplit::default();
    for img in dataset.images() {
        let windows = tile_image(img.width, img.height, spec)?;
        let split = classify_tiles(img, &windows);
        all.positive.extend(split.positive);
        all.negative.extend(split.negative);
    }
    Ok(all)
}

/// Uniform sample without replacement of `round(keep_ratio * n)` tiles,
/// returned in input order.
pub fn subsample_negative_tiles<T: Clone>(negatives: &[T], keep_ratio: f64, rng: &mut impl Rng) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&keep_ratio) {
        return Err(Error::Validation(format!("keep ratio {keep_ratio} outside [0, 1]")));
    }
    let n = negatives.len();
    let k = ((keep_ratio * n as f64).round() as usize).min(n);
    let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| negatives[i].clone()).collect())
}
