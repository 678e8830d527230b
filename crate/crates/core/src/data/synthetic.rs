//! Procedural desk-scale dataset: colored-shape garment images and templated
//! comments. Top `i` is paired with bottom `i`.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::images::rgb_to_tensor;
use crate::data::{load_dataset, Dataset, ImageStore, OutfitRecord, Side, OUTFITS_FILE};
use crate::error::{NorError, Result};

const COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [220, 30, 40]),
    ("blue", [30, 60, 210]),
    ("green", [30, 170, 60]),
    ("yellow", [240, 220, 40]),
    ("purple", [130, 40, 170]),
    ("orange", [250, 140, 20]),
    ("pink", [250, 150, 200]),
    ("black", [20, 20, 20]),
];

const TOP_NOUNS: [&str; 4] = ["top", "blouse", "shirt", "sweater"];
const BOTTOM_NOUNS: [&str; 4] = ["skirt", "jeans", "pants", "shorts"];

#[derive(Clone, Copy, Debug)]
enum Shape {
    Block,
    Disc,
    Wedge,
    Stripes,
}

const SHAPES: [Shape; 4] = [Shape::Block, Shape::Disc, Shape::Wedge, Shape::Stripes];

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub records: Vec<OutfitRecord>,
    pub images: ImageStore,
    pub tops: Vec<String>,
    pub bottoms: Vec<String>,
    rendered: Vec<(Side, String, RgbImage)>,
}

fn render(size: usize, color: [u8; 3], shape: Shape, variant: usize) -> RgbImage {
    let s = size as i64;
    let bg = Rgb([235, 235, 235]);
    let fg = Rgb(color);
    RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (x, y) = (x as i64, y as i64);
        let inside = match shape {
            Shape::Block => x >= s / 4 && x < 3 * s / 4 && y >= s / 8 && y < 7 * s / 8,
            Shape::Disc => {
                let (cx, cy, r) = (s / 2, s / 2, 3 * s / 8);
                (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r
            }
            Shape::Wedge => y >= s / 8 && (x - s / 2).abs() <= (y - s / 8) / 2 + 1,
            Shape::Stripes => ((y + variant as i64) / (s / 8).max(1)) % 2 == 0 && x >= s / 8 && x < 7 * s / 8,
        };
        if inside {
            fg
        } else {
            bg
        }
    })
}

fn comment(i: usize, top_color: &str, bottom_color: &str) -> String {
    let top = TOP_NOUNS[i % TOP_NOUNS.len()];
    let bottom = BOTTOM_NOUNS[(i / 2) % BOTTOM_NOUNS.len()];
    match i % 4 {
        0 => format!("love the {top_color} {top} with the {bottom_color} {bottom} !"),
        1 => format!("{top_color} and {bottom_color} look so good together"),
        2 => format!("this {top_color} {top} goes well with {bottom_color} {bottom}"),
        _ => format!("wow ! the {bottom_color} {bottom} match the {top_color} {top}"),
    }
}

/// Generate `n` outfits with `size`×`size` images.
pub fn generate(n: usize, size: usize) -> SyntheticDataset {
    let mut images = ImageStore::new();
    let mut rendered = Vec::new();
    let mut records = Vec::new();
    let mut tops = Vec::new();
    let mut bottoms = Vec::new();
    for i in 0..n {
        let (top_name, top_rgb) = COLORS[i % COLORS.len()];
        let (bottom_name, bottom_rgb) = COLORS[(i + 3) % COLORS.len()];
        let top_id = format!("t{i:03}");
        let bottom_id = format!("b{i:03}");
        let top_img = render(size, top_rgb, SHAPES[i % 4], i);
        let bottom_img = render(size, bottom_rgb, SHAPES[(i + 1) % 4], i + 1);
        images.insert(Side::Top, top_id.clone(), rgb_to_tensor(&top_img));
        images.insert(Side::Bottom, bottom_id.clone(), rgb_to_tensor(&bottom_img));
        rendered.push((Side::Top, top_id.clone(), top_img));
        rendered.push((Side::Bottom, bottom_id.clone(), bottom_img));
        records.push(OutfitRecord {
            outfit_id: format!("o{i:03}"),
            top: top_id.clone(),
            bottom: bottom_id.clone(),
            comments: vec![comment(i, top_name, bottom_name)],
        });
        tops.push(top_id);
        bottoms.push(bottom_id);
    }
    SyntheticDataset {
        records,
        images,
        tops,
        bottoms,
        rendered,
    }
}

impl SyntheticDataset {
    /// Write `outfits.jsonl` and the PNG images under `root`, then load it
    /// back through the regular dataset reader.
    pub fn write(&self, root: &Path) -> Result<Dataset> {
        for side in [Side::Top, Side::Bottom] {
            let dir = root.join("images").join(side.table());
            fs::create_dir_all(&dir).map_err(|e| NorError::io(&dir, e))?;
        }
        for (side, id, img) in &self.rendered {
            let path = root.join("images").join(side.table()).join(format!("{id}.png"));
            img.save(&path).map_err(|e| NorError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        let mut text = String::new();
        for r in &self.records {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        let path = root.join(OUTFITS_FILE);
        fs::write(&path, text).map_err(|e| NorError::io(&path, e))?;
        load_dataset(root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn eight_distinct_outfits() {
        let d = generate(8, 32);
        assert_eq!(d.records.len(), 8);
        assert_eq!(d.images.len(), 16);
        let comments: BTreeSet<_> = d.records.iter().map(|r| r.comments[0].clone()).collect();
        assert_eq!(comments.len(), 8);
        assert!(d.records.iter().all(|r| r.comments[0].split_whitespace().count() > 3));
        let img = d.images.get(Side::Top, "t000").unwrap();
        assert_eq!(img.shape(), &[3, 32, 32]);
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(4, 16);
        let loaded = d.write(dir.path()).unwrap();
        assert_eq!(loaded.records, d.records);
        assert_eq!(loaded.catalog.tops.len(), 4);
        let img = crate::data::load_image(&loaded.catalog.tops["t002"], 16).unwrap();
        assert_eq!(&img, d.images.get(Side::Top, "t002").unwrap());
    }
}
