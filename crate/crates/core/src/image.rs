//! Three-channel float raster used throughout the pipeline, plus PNG I/O and
//! the image sources the training loops read from.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::dataspec::ImageRecord;
use crate::{Error, Result};

pub const CHANNELS: usize = 3;

/// Row-major, channel-interleaved (HWC) RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Contract(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::Contract(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * CHANNELS
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            })
    }

    /// Copies the `w x h` window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + w * CHANNELS]);
        }
        Image {
            width: w,
            height: h,
            data,
        }
    }

    /// Bilinear resize with half-pixel centers. Output values are convex
    /// combinations of input values, so the value range never grows.
    pub fn resize(&self, out_w: usize, out_h: usize) -> Image {
        if out_w == self.width && out_h == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / out_w as f32;
        let sy = self.height as f32 / out_h as f32;
        let axis = |o: usize, scale: f32, len: usize| -> (usize, usize, f32) {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f32)
        };
        let xs: Vec<_> = (0..out_w).map(|x| axis(x, sx, self.width)).collect();
        let mut data = Vec::with_capacity(out_w * out_h * CHANNELS);
        for y in 0..out_h {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for &(x0, x1, fx) in &xs {
                let p00 = self.pixel(x0, y0);
                let p01 = self.pixel(x1, y0);
                let p10 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                for c in 0..CHANNELS {
                    let top = p00[c] + (p01[c] - p00[c]) * fx;
                    let bot = p10[c] + (p11[c] - p10[c]) * fx;
                    data.push(top + (bot - top) * fy);
                }
            }
        }
        Image {
            width: out_w,
            height: out_h,
            data,
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(
            width,
            height,
            bytes.iter().map(|b| f32::from(*b) / 255.0).collect(),
        )
    }

    /// Quantizes to 8 bits, the precision of the on-disk format.
    pub fn quantized(&self) -> Image {
        Image::from_rgb8(self.width, self.height, &self.to_rgb8()).expect("same shape")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::Validation(format!("writing {}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path)
            .map_err(|e| Error::Validation(format!("reading {}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Image::from_rgb8(w as usize, h as usize, img.as_raw())
    }
}

/// Where training loops get pixels for a manifest record.
pub trait ImageSource {
    fn load(&self, record: &ImageRecord) -> Result<Image>;
}

/// Images held in memory, keyed by `image_id`.
#[derive(Debug, Default, Clone)]
pub struct MemoryImages {
    images: HashMap<String, Image>,
}

impl MemoryImages {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: impl Into<String>, image: Image) {
        self.images.insert(image_id.into(), image);
    }

    pub fn get(&self, image_id: &str) -> Option<&Image> {
        self.images.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Image)> {
        self.images.iter()
    }
}

impl FromIterator<(String, Image)> for MemoryImages {
    fn from_iter<T: IntoIterator<Item = (String, Image)>>(iter: T) -> Self {
        Self {
            images: iter.into_iter().collect(),
        }
    }
}

impl ImageSource for MemoryImages {
    fn load(&self, record: &ImageRecord) -> Result<Image> {
        self.images
            .get(&record.image_id)
            .cloned()
            .ok_or_else(|| Error::ImageLoad {
                image_id: record.image_id.clone(),
                message: "not present in memory store".into(),
            })
    }
}

/// PNG files resolved relative to a root directory, cached after first read.
#[derive(Debug)]
pub struct DiskImages {
    root: PathBuf,
    cache: Mutex<HashMap<String, Image>>,
}

impl DiskImages {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl ImageSource for DiskImages {
    fn load(&self, record: &ImageRecord) -> Result<Image> {
        if let Some(img) = self.cache.lock().expect("poisoned").get(&record.image_id) {
            return Ok(img.clone());
        }
        let path = self.root.join(&record.path);
        let img = Image::load_png(&path).map_err(|e| Error::ImageLoad {
            image_id: record.image_id.clone(),
            message: e.to_string(),
        })?;
        self.cache
            .lock()
            .expect("poisoned")
            .insert(record.image_id.clone(), img.clone());
        Ok(img)
    }
}
