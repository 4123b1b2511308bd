//! Small float image containers and PNG export.
//!
//! Images are square RGB buffers in row-major order with three f64
//! channels per pixel. Depth maps are single-channel in [-1, 1] with
//! +1 meaning nearest.

use std::path::Path;

use crate::error::{Error, Result};

/// Square RGB image, channel values nominally in [0, 1] for renders
/// (noise predictions reuse the container with unbounded values).
#[derive(Debug, Clone, PartialEq)]
pub struct Img {
    pub res: usize,
    pub data: Vec<f64>, // res * res * 3
}

impl Img {
    pub fn new(res: usize) -> Self {
        Img {
            res,
            data: vec![0.0; res * res * 3],
        }
    }

    pub fn splat(res: usize, rgb: [f64; 3]) -> Self {
        let mut im = Img::new(res);
        for p in 0..res * res {
            im.data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
        }
        im
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.res + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.res + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Mean absolute difference over the given pixel mask (all pixels when
    /// mask is None).
    pub fn mae(&self, other: &Img, mask: Option<&[bool]>) -> f64 {
        assert_eq!(self.res, other.res);
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in 0..self.res * self.res {
            if let Some(m) = mask {
                if !m[p] {
                    continue;
                }
            }
            for c in 0..3 {
                sum += (self.data[p * 3 + c] - other.data[p * 3 + c]).abs();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// L2 distance over masked pixels.
    pub fn l2(&self, other: &Img, mask: Option<&[bool]>) -> f64 {
        assert_eq!(self.res, other.res);
        let mut sum = 0.0;
        for p in 0..self.res * self.res {
            if let Some(m) = mask {
                if !m[p] {
                    continue;
                }
            }
            for c in 0..3 {
                let d = self.data[p * 3 + c] - other.data[p * 3 + c];
                sum += d * d;
            }
        }
        sum.sqrt()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.res as u32, self.res as u32);
        for y in 0..self.res {
            for x in 0..self.res {
                let p = self.pixel(x, y);
                let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                buf.put_pixel(x as u32, y as u32, image::Rgb([to8(p[0]), to8(p[1]), to8(p[2])]));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Img> {
        let dynimg = image::open(path)?;
        let rgb = dynimg.to_rgb8();
        let (w, h) = rgb.dimensions();
        if w != h {
            return Err(Error::ShapeMismatch(format!(
                "target PNG {} is {}x{}, square images required",
                path.display(),
                w,
                h
            )));
        }
        let res = w as usize;
        let mut im = Img::new(res);
        for y in 0..res {
            for x in 0..res {
                let px = rgb.get_pixel(x as u32, y as u32);
                im.set_pixel(
                    x,
                    y,
                    [
                        px[0] as f64 / 255.0,
                        px[1] as f64 / 255.0,
                        px[2] as f64 / 255.0,
                    ],
                );
            }
        }
        Ok(im)
    }
}

/// Normalized depth map, [-1, 1], +1 = nearest hit, -1 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub res: usize,
    pub data: Vec<f64>, // res * res
}

impl DepthMap {
    pub fn new(res: usize) -> Self {
        DepthMap {
            res,
            data: vec![-1.0; res * res],
        }
    }

    /// Export mapping [-1, 1] -> [0, 255]; near surfaces render brightest.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::GrayImage::new(self.res as u32, self.res as u32);
        for y in 0..self.res {
            for x in 0..self.res {
                let v = self.data[y * self.res + x];
                let g = ((v + 1.0) * 0.5 * 255.0).clamp(0.0, 255.0).round() as u8;
                buf.put_pixel(x as u32, y as u32, image::Luma([g]));
            }
        }
        buf.save(path)?;
        Ok(())
    }
}
