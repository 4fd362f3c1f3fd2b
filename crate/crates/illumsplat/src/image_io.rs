//! 8-bit PNG decode/encode to and from `[0, 1]` float RGB.

use std::path::Path;

use illumsplat_core::raster::ImageBuffer;

use crate::error::IoError;

/// Decodes an 8-bit RGB or RGBA image and composites alpha over
/// `background`.
pub fn load_rgb(path: &Path, background: [f32; 3]) -> Result<ImageBuffer<f32>, IoError> {
    let bytes = std::fs::read(path).map_err(IoError::io(path))?;
    let img =
        image::load_from_memory(&bytes).map_err(|e| IoError::Image { path: path.to_path_buf(), msg: e.to_string() })?;
    Ok(composite_rgba(&img.to_rgba8(), background))
}

pub fn composite_rgba(img: &image::RgbaImage, background: [f32; 3]) -> ImageBuffer<f32> {
    let (w, h) = img.dimensions();
    let mut out = ImageBuffer::new(w as usize, h as usize);
    for (i, px) in img.pixels().enumerate() {
        let a = px[3] as f32 / 255.0;
        for c in 0..3 {
            out.data[i * 3 + c] = px[c] as f32 / 255.0 * a + background[c] * (1.0 - a);
        }
    }
    out
}

pub fn to_rgb8(img: &ImageBuffer<f32>) -> image::RgbImage {
    let bytes = img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("buffer matches dimensions")
}

pub fn save_png(path: &Path, img: &ImageBuffer<f32>) -> Result<(), IoError> {
    to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::Image { path: path.to_path_buf(), msg: e.to_string() })
}
