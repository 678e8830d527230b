use std::collections::HashMap;
use std::path::Path;

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb, RgbImage};

use crate::data::{Catalog, Side};
use crate::error::{NorError, Result};
use crate::numerics::Tensor;

/// Decode an image file to a `[3, size, size]` tensor with channels scaled to
/// `[0, 1]`, resizing bilinearly when the stored size differs.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| NorError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut rgb = img.to_rgb8();
    if rgb.width() as usize != size || rgb.height() as usize != size {
        rgb = image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle);
    }
    Ok(rgb_to_tensor(&rgb))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("non-empty image")
}

/// Inverse of [`rgb_to_tensor`], rounding to the nearest 8-bit level.
pub fn tensor_to_rgb(t: &Tensor) -> RgbImage {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| {
            let v = t.data()[c * h * w + y as usize * w + x as usize];
            (v.clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([at(0), at(1), at(2)])
    })
}

/// Decoded item images keyed by side and id.
#[derive(Clone, Debug, Default)]
pub struct ImageStore {
    images: HashMap<(Side, String), Tensor>,
}

impl ImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, side: Side, id: impl Into<String>, image: Tensor) {
        self.images.insert((side, id.into()), image);
    }

    pub fn get(&self, side: Side, id: &str) -> Result<&Tensor> {
        self.images
            .get(&(side, id.to_owned()))
            .ok_or_else(|| NorError::UnknownId {
                table: side.table(),
                id: id.to_owned(),
            })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Load every catalog image at `size`.
    pub fn load_catalog(catalog: &Catalog, size: usize) -> Result<Self> {
        use rayon::prelude::*;
        let jobs: Vec<(Side, &String, &std::path::PathBuf)> = [Side::Top, Side::Bottom]
            .into_iter()
            .flat_map(|s| catalog.side(s).iter().map(move |(id, p)| (s, id, p)))
            .collect();
        let loaded = jobs
            .par_iter()
            .map(|(side, id, path)| Ok(((*side, (*id).clone()), load_image(path, size)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ImageStore {
            images: loaded.into_iter().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_and_resize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut img = RgbImage::new(8, 8);
        for (x, y, px) in img.enumerate_pixels_mut() {
            *px = Rgb([(x * 30) as u8, (y * 30) as u8, 255]);
        }
        img.save(&path).unwrap();
        let t = load_image(&path, 8).unwrap();
        assert_eq!(t.shape(), &[3, 8, 8]);
        assert_eq!(tensor_to_rgb(&t), img);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        let small = load_image(&path, 4).unwrap();
        assert_eq!(small.shape(), &[3, 4, 4]);
        // blue channel is constant, so bilinear resampling keeps it at 1
        assert!(small.data()[32..].iter().all(|&v| v == 1.0));
    }
}
