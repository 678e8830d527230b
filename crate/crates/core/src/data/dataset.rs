use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{tokenize, Side};
use crate::error::{NorError, Result};

pub const OUTFITS_FILE: &str = "outfits.jsonl";

/// Image paths of every known top and bottom.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    pub tops: BTreeMap<String, PathBuf>,
    pub bottoms: BTreeMap<String, PathBuf>,
}

impl Catalog {
    pub fn side(&self, side: Side) -> &BTreeMap<String, PathBuf> {
        match side {
            Side::Top => &self.tops,
            Side::Bottom => &self.bottoms,
        }
    }

    pub fn contains(&self, side: Side, id: &str) -> bool {
        self.side(side).contains_key(id)
    }

    pub fn path(&self, side: Side, id: &str) -> Result<&Path> {
        self.side(side)
            .get(id)
            .map(PathBuf::as_path)
            .ok_or_else(|| NorError::UnknownId {
                table: side.table(),
                id: id.to_owned(),
            })
    }

    pub fn image_dir(root: &Path, side: Side) -> PathBuf {
        root.join("images").join(side.table())
    }

    /// Scan `images/tops/*.png` and `images/bottoms/*.png` under `root`.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut catalog = Catalog::default();
        for side in [Side::Top, Side::Bottom] {
            let dir = Self::image_dir(root, side);
            let entries = match fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(NorError::io(&dir, e)),
            };
            let map = match side {
                Side::Top => &mut catalog.tops,
                Side::Bottom => &mut catalog.bottoms,
            };
            for entry in entries {
                let path = entry.map_err(|e| NorError::io(&dir, e))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("png") {
                    continue;
                }
                if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                    map.insert(id.to_owned(), path.clone());
                }
            }
        }
        Ok(catalog)
    }
}

/// One positive top–bottom combination and its user comments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutfitRecord {
    pub outfit_id: String,
    pub top: String,
    pub bottom: String,
    pub comments: Vec<String>,
}

impl OutfitRecord {
    pub fn pair(&self) -> (&str, &str) {
        (&self.top, &self.bottom)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Comments with at most this many whitespace-separated words are dropped.
    pub max_dropped_words: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            max_dropped_words: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub catalog: Catalog,
    pub records: Vec<OutfitRecord>,
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    load_dataset_with(root, LoadOptions::default())
}

pub fn load_dataset_with(root: &Path, options: LoadOptions) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(NorError::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    let catalog = Catalog::scan(root)?;
    let path = root.join(OUTFITS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| NorError::io(&path, e))?;
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: OutfitRecord = serde_json::from_str(line).map_err(|e| NorError::Parse {
            path: path.clone(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        for (side, id) in [(Side::Top, &record.top), (Side::Bottom, &record.bottom)] {
            if !catalog.contains(side, id) {
                return Err(NorError::Parse {
                    path: path.clone(),
                    line: lineno + 1,
                    message: format!(
                        "unknown {} id `{id}` (no image at {})",
                        side.table(),
                        Catalog::image_dir(root, side).join(format!("{id}.png")).display()
                    ),
                });
            }
        }
        raw.push(record);
    }
    let records = merge_records(raw, options);
    Ok(Dataset {
        root: root.to_path_buf(),
        catalog,
        records,
    })
}

/// Merge records sharing a (top, bottom) pair and apply the comment filter.
pub fn merge_records(raw: Vec<OutfitRecord>, options: LoadOptions) -> Vec<OutfitRecord> {
    let mut merged: Vec<OutfitRecord> = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for mut rec in raw {
        rec.comments
            .retain(|c| c.split_whitespace().count() > options.max_dropped_words);
        let key = (rec.top.clone(), rec.bottom.clone());
        match seen.get(&key) {
            Some(&i) => merged[i].comments.extend(rec.comments),
            None => {
                seen.insert(key, merged.len());
                merged.push(rec);
            }
        }
    }
    merged
}

impl Dataset {
    /// Tokenized comments of every record, in record order.
    pub fn tokenized_comments(records: &[OutfitRecord]) -> Vec<Vec<String>> {
        records
            .iter()
            .flat_map(|r| r.comments.iter().map(|c| tokenize(c)))
            .collect()
    }

    /// SHA-256 over `outfits.jsonl` and every catalog image, in a fixed order.
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        let mut feed = |label: &str, path: &Path| -> Result<()> {
            let bytes = fs::read(path).map_err(|e| NorError::io(path, e))?;
            hasher.update(label.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
            Ok(())
        };
        feed(OUTFITS_FILE, &self.root.join(OUTFITS_FILE))?;
        for side in [Side::Top, Side::Bottom] {
            for (id, path) in self.catalog.side(side) {
                feed(&format!("{}/{id}", side.table()), path)?;
            }
        }
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, top: &str, bottom: &str, comments: &[&str]) -> OutfitRecord {
        OutfitRecord {
            outfit_id: id.into(),
            top: top.into(),
            bottom: bottom.into(),
            comments: comments.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn duplicates_merge_comment_lists() {
        let merged = merge_records(
            vec![
                rec("o1", "t", "b", &["one two three four", "five six seven eight"]),
                rec("o2", "t", "b", &["a b c d", "e f g h", "i j k l"]),
                rec("o3", "t", "c", &[]),
            ],
            LoadOptions::default(),
        );
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].comments.len(), 5);
        assert_eq!(merged[0].outfit_id, "o1");
    }

    #[test]
    fn short_comments_are_filtered() {
        let merged = merge_records(
            vec![rec("o", "t", "b", &["too short !", "this one is long enough"])],
            LoadOptions::default(),
        );
        assert_eq!(merged[0].comments, vec!["this one is long enough"]);
        let kept = merge_records(
            vec![rec("o", "t", "b", &["too short !"])],
            LoadOptions {
                max_dropped_words: 0,
            },
        );
        assert_eq!(kept[0].comments.len(), 1);
    }
}
