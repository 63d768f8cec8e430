//! Image loading and the resize applied before dispatch.

use std::io::Cursor;
use std::path::Path;

use base64::Engine;
use image::imageops::FilterType;
use image::{GenericImageView, ImageFormat};
use optdialog_core::ImageAttachment;
use thiserror::Error;

pub const DEFAULT_RESIZE_LONGEST: u32 = 640;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Decode { path: String, source: image::ImageError },
    #[error("{path}: image has zero width or height")]
    Empty { path: String },
}

/// A decoded image ready to attach to requests.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub attachment: ImageAttachment,
    /// Dimensions of the file on disk; detections are in these pixel units.
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct ImageLoader {
    /// Scale so the longest side equals this many pixels, keeping aspect.
    /// `None` sends the image at its original size.
    pub resize_longest: Option<u32>,
}

impl Default for ImageLoader {
    fn default() -> Self {
        Self { resize_longest: Some(DEFAULT_RESIZE_LONGEST) }
    }
}

impl ImageLoader {
    pub fn load(&self, path: &Path) -> Result<LoadedImage, ImageError> {
        let display = path.display().to_string();
        let img = image::open(path).map_err(|source| ImageError::Decode { path: display.clone(), source })?;
        let (width, height) = img.dimensions();
        if width == 0 || height == 0 {
            return Err(ImageError::Empty { path: display });
        }
        let img = match self.resize_longest {
            Some(longest) if longest > 0 && width.max(height) != longest => {
                let scale = f64::from(longest) / f64::from(width.max(height));
                let nw = ((f64::from(width) * scale).round() as u32).max(1);
                let nh = ((f64::from(height) * scale).round() as u32).max(1);
                img.resize_exact(nw, nh, FilterType::Triangle)
            }
            _ => img,
        };
        let mut png = Vec::new();
        img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
            .map_err(|source| ImageError::Decode { path: display, source })?;
        let data_base64 = base64::engine::general_purpose::STANDARD.encode(&png);
        Ok(LoadedImage { attachment: ImageAttachment::Inline { media_type: "image/png".into(), data_base64 }, width, height })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, w: u32, h: u32) -> std::path::PathBuf {
        let path = dir.join("x.png");
        image::RgbImage::from_pixel(w, h, image::Rgb([200, 30, 30])).save(&path).unwrap();
        path
    }

    fn decoded_dims(a: &ImageAttachment) -> (u32, u32) {
        let ImageAttachment::Inline { data_base64, .. } = a else { panic!("expected inline") };
        let bytes = base64::engine::general_purpose::STANDARD.decode(data_base64).unwrap();
        image::load_from_memory(&bytes).unwrap().dimensions()
    }

    #[test]
    fn resizes_longest_side_keeping_aspect() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_png(dir.path(), 100, 50);
        let img = ImageLoader { resize_longest: Some(640) }.load(&path).unwrap();
        assert_eq!((img.width, img.height), (100, 50));
        assert_eq!(decoded_dims(&img.attachment), (640, 320));
    }

    #[test]
    fn no_resize() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_png(dir.path(), 30, 20);
        let img = ImageLoader { resize_longest: None }.load(&path).unwrap();
        assert_eq!(decoded_dims(&img.attachment), (30, 20));
        assert!(img.attachment.url().starts_with("data:image/png;base64,"));
    }

    #[test]
    fn unreadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(ImageLoader::default().load(&path).is_err());
    }
}
