//! 8-bit PNG encode/decode for [0,1] float images.
//!
//! RGBA inputs are alpha-premultiplied against black on load, matching the
//! dataset convention that masked pixels compose over a black background.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::image_buf::Image;

pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let mut buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::new(img.width as u32, img.height as u32);
    for y in 0..img.height {
        for x in 0..img.width {
            let px = img.pixel(x, y);
            let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            buf.put_pixel(x as u32, y as u32, Rgb([q(px[0]), q(px[1]), q(px[2])]));
        }
    }
    buf.save(path)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
}

pub fn load_png(path: &Path) -> Result<Image> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let decoded = reader.decode().map_err(|e| Error::Image {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut img = Image::zeros(w, h);
    match decoded {
        DynamicImage::ImageRgba8(buf) => {
            for (x, y, px) in buf.enumerate_pixels() {
                let a = px.0[3] as f32 / 255.0;
                img.set_pixel(
                    x as usize,
                    y as usize,
                    [
                        px.0[0] as f32 / 255.0 * a,
                        px.0[1] as f32 / 255.0 * a,
                        px.0[2] as f32 / 255.0 * a,
                    ],
                );
            }
        }
        other => {
            let buf = other.to_rgb8();
            for (x, y, px) in buf.enumerate_pixels() {
                img.set_pixel(
                    x as usize,
                    y as usize,
                    [
                        px.0[0] as f32 / 255.0,
                        px.0[1] as f32 / 255.0,
                        px.0[2] as f32 / 255.0,
                    ],
                );
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_quantizes_within_half_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Image::zeros(9, 7);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 * 0.013) % 1.0;
        }
        save_png(&path, &img).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.width, 9);
        assert_eq!(back.height, 7);
        assert!(img.max_abs_diff(&back) <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn write_read_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let mut img = Image::zeros(16, 16);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as f32 / 255.0;
        }
        save_png(&a, &img).unwrap();
        let back = load_png(&a).unwrap();
        save_png(&b, &back).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rgba_premultiplies_against_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let mut buf = image::RgbaImage::new(2, 1);
        buf.put_pixel(0, 0, image::Rgba([255, 128, 0, 128]));
        buf.put_pixel(1, 0, image::Rgba([255, 255, 255, 0]));
        buf.save(&path).unwrap();
        let img = load_png(&path).unwrap();
        let px = img.pixel(0, 0);
        assert!((px[0] - 128.0 / 255.0).abs() < 1e-6);
        assert_eq!(img.pixel(1, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_file_is_io_error_naming_path() {
        let err = load_png(Path::new("/nonexistent/file.png")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("/nonexistent/file.png"), "{msg}");
    }
}
