//! In-memory RGB images plus the file I/O and resizing the pipeline needs.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("failed to read image {path}: {source}")]
    Decode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Encode {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("image {0} has zero width or height")]
    EmptyImage(PathBuf),
}

/// An 8-bit RGB image, interleaved row-major (`data[(y * width + x) * 3 + c]`).
///
/// Channel order is fixed as red, green, blue. Every transform in the
/// pipeline clamps back into `[0, 255]`, which the `u8` representation
/// enforces at the type level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Image {
    /// Builds an image from raw interleaved RGB bytes.
    ///
    /// Panics if `data.len() != width * height * 3` or either dimension is 0.
    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        assert_eq!(
            data.len(),
            width as usize * height as usize * 3,
            "raw buffer does not match dimensions"
        );
        Self {
            width,
            height,
            data,
        }
    }

    /// A solid-color image.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..(width as usize * height as usize) {
            data.extend_from_slice(&rgb);
        }
        Self::from_raw(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Decodes an image file (PNG or JPEG) into RGB.
    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path)
            .map_err(|source| RasterError::Decode {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (width, height) = img.dimensions();
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyImage(path.to_path_buf()));
        }
        Ok(Self::from_raw(width, height, img.into_raw()))
    }

    /// Encodes the image to `path`; the format follows the file extension.
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        image::save_buffer(
            path,
            &self.data,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| RasterError::Encode {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads only the header of an image file to get its dimensions.
    pub fn dimensions_of(path: &Path) -> Result<(u32, u32), RasterError> {
        image::image_dimensions(path).map_err(|source| RasterError::Decode {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Extracts the rectangle `[x, x + w) x [y, y + h)`, which must lie
    /// within bounds.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Self {
        assert!(w >= 1 && h >= 1, "crop extent must be >= 1");
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * 3;
            data.extend_from_slice(&self.data[start..start + w as usize * 3]);
        }
        Self::from_raw(w, h, data)
    }

    /// Bilinear resize. Resizing to the current size returns a bit-exact copy.
    pub fn resize(&self, new_width: u32, new_height: u32) -> Self {
        assert!(new_width >= 1 && new_height >= 1, "resize target must be >= 1");
        if new_width == self.width && new_height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / new_width as f32;
        let sy = self.height as f32 / new_height as f32;
        let mut data = vec![0u8; new_width as usize * new_height as usize * 3];
        for oy in 0..new_height {
            // Pixel centers map to pixel centers.
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for ox in 0..new_width {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                let p00 = self.pixel(x0, y0);
                let p10 = self.pixel(x1, y0);
                let p01 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                let o = (oy as usize * new_width as usize + ox as usize) * 3;
                for c in 0..3 {
                    let top = p00[c] as f32 * (1.0 - wx) + p10[c] as f32 * wx;
                    let bot = p01[c] as f32 * (1.0 - wx) + p11[c] as f32 * wx;
                    let v = top * (1.0 - wy) + bot * wy;
                    data[o + c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
        Self::from_raw(new_width, new_height, data)
    }
}
