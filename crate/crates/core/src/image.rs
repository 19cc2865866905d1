//! Planar RGB images and PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use posepyr_tensor::{kernels, Element, Tensor};

use crate::error::{io_err, Error, Result};

/// Per-channel normalization applied when feeding images to the network.
pub const PIXEL_MEAN: f32 = 0.5;
pub const PIXEL_STD: f32 = 0.25;

/// RGB image with planar `f32` channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
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

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Blends `color` over pixel `(x, y)` with opacity `alpha`.
    pub fn blend(&mut self, y: usize, x: usize, color: [f32; 3], alpha: f32) {
        for (c, &col) in color.iter().enumerate() {
            let idx = (c * self.height + y) * self.width + x;
            self.data[idx] = self.data[idx] * (1.0 - alpha) + col * alpha;
        }
    }

    /// Bilinear sample with the half-pixel convention; `None` outside the image.
    pub fn sample(&self, c: usize, y: f64, x: f64) -> Option<f32> {
        if x < -0.5 || y < -0.5 || x > self.width as f64 - 0.5 || y > self.height as f64 - 0.5 {
            return None;
        }
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = ((xc - x0 as f64) as f32, (yc - y0 as f64) as f32);
        let top = self.get(c, y0, x0) + (self.get(c, y0, x1) - self.get(c, y0, x0)) * fx;
        let bot = self.get(c, y1, x0) + (self.get(c, y1, x1) - self.get(c, y1, x0)) * fx;
        Some(top + (bot - top) * fy)
    }

    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let data = kernels::bilinear_resize(&self.data, 3, self.height, self.width, height, width);
        Image {
            width,
            height,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, self.width - 1 - x, self.get(c, y, x));
                }
            }
        }
        out
    }

    /// Normalized `3 x H x W` tensor for the network.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self
            .data
            .iter()
            .map(|&v| T::lit(((v - PIXEL_MEAN) / PIXEL_STD) as f64))
            .collect();
        Tensor::from_vec(&[3, self.height, self.width], data).expect("planar RGB")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut rgb = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    rgb.push(to_u8(self.get(c, y, x)));
                }
            }
        }
        write_png(path, self.width, self.height, png::ColorType::Rgb, &rgb)
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let png_err = |e: png::DecodingError| Error::Png {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let file = File::open(path).map_err(io_err(path))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(png_err)?;
        let size = reader.output_buffer_size().ok_or_else(|| Error::Png {
            path: path.to_path_buf(),
            message: "image too large".into(),
        })?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => {
                return Err(Error::Png {
                    path: path.to_path_buf(),
                    message: "unexpanded palette image".into(),
                })
            }
        };
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let px = &buf[(y * w + x) * channels..(y * w + x + 1) * channels];
                for c in 0..3 {
                    let v = if channels < 3 { px[0] } else { px[c] };
                    img.set(c, y, x, v as f32 / 255.0);
                }
            }
        }
        Ok(img)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes a single-channel map; values are clamped to `[0, 1]`.
pub fn save_gray_png(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&v| to_u8(v)).collect();
    write_png(path, width, height, png::ColorType::Grayscale, &bytes)
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
) -> Result<()> {
    let png_err = |e: png::EncodingError| Error::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_quantizes_to_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = Image::new(4, 3);
        img.set(0, 1, 2, 1.0);
        img.set(2, 2, 3, 0.5);
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.width(), 4);
        assert_eq!(back.get(0, 1, 2), 1.0);
        assert!((back.get(2, 2, 3) - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn flip_mirrors_columns() {
        let mut img = Image::new(3, 1);
        img.set(1, 0, 0, 0.7);
        let f = img.flip_horizontal();
        assert_eq!(f.get(1, 0, 2), 0.7);
        assert_eq!(f.flip_horizontal(), img);
    }

    #[test]
    fn sampling_at_pixel_centers_is_exact() {
        let mut img = Image::new(2, 2);
        img.set(0, 1, 0, 0.25);
        assert_eq!(img.sample(0, 1.0, 0.0), Some(0.25));
        assert_eq!(img.sample(0, 0.5, 0.0), Some(0.125));
        assert_eq!(img.sample(0, 3.0, 0.0), None);
    }
}
