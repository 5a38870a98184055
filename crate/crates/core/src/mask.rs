//! Single-channel class-index masks.

use std::path::Path;

use image::{GrayImage, Luma};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl IndexMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!("{height}×{width} mask with {} values", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, id: u8) -> Self {
        Self {
            height,
            width,
            data: vec![id; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, id: u8) {
        self.data[y * self.width + x] = id;
    }

    /// Nearest-neighbour resampling: destination `(y, x)` reads source
    /// `(⌊y·H/H'⌋, ⌊x·W/W'⌋)`. Ids are never interpolated.
    pub fn resize_nearest(&self, height: usize, width: usize) -> IndexMask {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let xs: Vec<usize> = (0..width).map(|x| x * self.width / width).collect();
        IndexMask::from_fn(height, width, |y, x| self.get(y * self.height / height, xs[x]))
    }

    pub fn flip_horizontal(&self) -> IndexMask {
        IndexMask::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    /// Ids present in the mask, ascending.
    pub fn present_ids(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8).filter(|&i| seen[i as usize]).collect()
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::new(h as usize, w as usize, gray.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| Luma([self.get(y as usize, x as usize)]));
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }
}
