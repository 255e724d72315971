//! Float image buffers and 8-bit PNG import/export.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("png codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("image shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 3]>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![[0.0; 3]; width as usize * height as usize] }
    }

    pub fn filled(width: u32, height: u32, value: [f32; 3]) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: [f32; 3]) {
        let i = self.index(x, y);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::ShapeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }

    /// Round trip through 8-bit storage.
    pub fn quantized(&self) -> Self {
        let q = |v: f32| to_u8(v) as f32 / 255.0;
        Self { width: self.width, height: self.height, data: self.data.iter().map(|p| p.map(q)).collect() }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let mut buf = image::RgbImage::new(self.width, self.height);
        for (dst, src) in buf.pixels_mut().zip(&self.data) {
            *dst = image::Rgb(src.map(to_u8));
        }
        ensure_parent(path)?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path)?.to_rgb8();
        let data = img.pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect();
        Ok(Self { width: img.width(), height: img.height(), data })
    }
}

/// Row-major single-channel image in `[0, 1]` (masks, opacity).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![0.0; width as usize * height as usize] }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        let i = self.index(x, y);
        self.data[i] = v;
    }

    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| to_u8(v) as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let mut buf = image::GrayImage::new(self.width, self.height);
        for (dst, &src) in buf.pixels_mut().zip(&self.data) {
            *dst = image::Luma([to_u8(src)]);
        }
        ensure_parent(path)?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path)?.to_luma8();
        let data = img.pixels().map(|p| p.0[0] as f32 / 255.0).collect();
        Ok(Self { width: img.width(), height: img.height(), data })
    }
}

#[inline]
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir),
        _ => Ok(()),
    }
}
