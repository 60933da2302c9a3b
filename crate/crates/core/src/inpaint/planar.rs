use image::{Rgb, RgbImage};

use crate::raster::BinaryMask;

/// Float RGB working buffer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Planar {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[f32; 3]>,
}

impl Planar {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; (width * height) as usize],
        }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img
                .pixels()
                .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
                .collect(),
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let p = self.at(x, y);
            Rgb(p.map(|v| v.round().clamp(0.0, 255.0) as u8))
        })
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> [f32; 3] {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: [f32; 3]) {
        let w = self.width;
        self.data[(y * w + x) as usize] = v;
    }

    /// Bilinear sample at continuous pixel-center coordinates, edge-clamped.
    pub fn sample(&self, x: f32, y: f32) -> [f32; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let (x0, y0) = (x.floor() as u32, y.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (tx, ty) = (x - x0 as f32, y - y0 as f32);
        let (a, b, c, d) = (self.at(x0, y0), self.at(x1, y0), self.at(x0, y1), self.at(x1, y1));
        std::array::from_fn(|k| {
            (a[k] * (1.0 - tx) + b[k] * tx) * (1.0 - ty) + (c[k] * (1.0 - tx) + d[k] * tx) * ty
        })
    }
}

/// Fill `hole` layer by layer from its boundary: each peel takes the mean of
/// its already-known 8-neighbors.
pub(crate) fn onion_peel(img: &mut Planar, hole: &BinaryMask) {
    let (w, h) = (img.width, img.height);
    let mut pending = hole.clone();
    let mut remaining = pending.count();
    while remaining > 0 {
        let mut layer = Vec::new();
        for (x, y) in pending.iter_set() {
            let mut sum = [0.0f32; 3];
            let mut n = 0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    if pending.get(nx as u32, ny as u32) {
                        continue;
                    }
                    let v = img.at(nx as u32, ny as u32);
                    for k in 0..3 {
                        sum[k] += v[k];
                    }
                    n += 1;
                }
            }
            if n > 0 {
                layer.push((x, y, sum.map(|s| s / n as f32)));
            }
        }
        if layer.is_empty() {
            // nothing known to grow from
            break;
        }
        for (x, y, v) in layer {
            img.set(x, y, v);
            pending.set(x, y, false);
            remaining -= 1;
        }
    }
}
