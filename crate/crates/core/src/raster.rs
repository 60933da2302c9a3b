//! Bitmaps shared by every stage: binary masks plus PNG helpers for RGB images.

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

/// Per-pixel boolean bitmap. Stored row-major, one byte per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity((width as usize) * (height as usize));
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != (width as usize) * (height as usize) {
            return Err(Error::InvalidParam(format!(
                "mask buffer has {} entries, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Threshold an 8-bit grayscale bitmap: values >= 128 are set.
    pub fn from_luma(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            bits: img.as_raw().iter().map(|&v| v >= 128).collect(),
        }
    }

    pub fn to_luma(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y as usize) * (self.width as usize) + x as usize]
    }

    /// Like [`get`](Self::get) but out-of-range coordinates read as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[(y as usize) * w + x as usize] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn coverage(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    /// Coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn and_not(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn not(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| !b).collect(),
        }
    }

    pub fn intersects(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a & b)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a | b)
    }

    /// Morphological dilation by a disk of the given radius (`dx² + dy² <= r²`).
    pub fn dilate_disk(&self, radius: u32) -> Self {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let offsets: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        let mut out = Self::new(self.width, self.height);
        for (x, y) in self.iter_set() {
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                    out.set(nx as u32, ny as u32, true);
                }
            }
        }
        out
    }

    /// Erosion by the 3x3 square; pixels outside the image count as unset.
    pub fn erode3(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            (-1..=1).all(|dy| {
                (-1..=1).all(|dx| self.get_signed(x as i64 + dx, y as i64 + dy))
            })
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_luma(&img.to_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma().save(path).map_err(|e| Error::image(path, e))
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    Ok(img.to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::image(path, e))
}

pub fn encode_png_rgb(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn encode_png_luma(img: &GrayImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub(crate) fn check_dims(what: &str, expected: (u32, u32), actual: (u32, u32)) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimensions {
            what: what.to_owned(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Copy `src` into `dst` wherever `mask` is set.
pub fn paste_masked(dst: &mut RgbImage, src: &RgbImage, mask: &BinaryMask) {
    for (x, y) in mask.iter_set() {
        dst.put_pixel(x, y, *src.get_pixel(x, y));
    }
}
