use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Direction, OutfitRecord, Side};
use crate::error::{NorError, Result};

/// Number of held-out items per side for each evaluation split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// Held-out sizes used on the full crawl.
    pub const PAPER: SplitSizes = SplitSizes {
        validation: 1000,
        test: 2000,
    };
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOut {
    pub tops: BTreeSet<String>,
    pub bottoms: BTreeSet<String>,
}

impl HeldOut {
    pub fn side(&self, side: Side) -> &BTreeSet<String> {
        match side {
            Side::Top => &self.tops,
            Side::Bottom => &self.bottoms,
        }
    }

    pub fn touches(&self, r: &OutfitRecord) -> bool {
        self.tops.contains(&r.top) || self.bottoms.contains(&r.bottom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<OutfitRecord>,
    pub validation: HeldOut,
    pub test: HeldOut,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = NorError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(NorError::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

impl Split {
    pub fn held_out(&self, name: SplitName) -> Option<&HeldOut> {
        match name {
            SplitName::Train => None,
            SplitName::Validation => Some(&self.validation),
            SplitName::Test => Some(&self.test),
        }
    }
}

fn items(records: &[OutfitRecord], side: Side) -> Vec<String> {
    let set: BTreeSet<&str> = records
        .iter()
        .map(|r| match side {
            Side::Top => r.top.as_str(),
            Side::Bottom => r.bottom.as_str(),
        })
        .collect();
    set.into_iter().map(str::to_owned).collect()
}

/// Hold out `sizes.validation` and `sizes.test` tops and bottoms each.
///
/// Outfits touching any held-out item are removed from training.
pub fn split_dataset(records: &[OutfitRecord], sizes: SplitSizes, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut validation = HeldOut::default();
    let mut test = HeldOut::default();
    for side in [Side::Top, Side::Bottom] {
        let mut pool = items(records, side);
        let need = sizes.validation + sizes.test;
        if need > pool.len() {
            return Err(NorError::InvalidArgument(format!(
                "cannot hold out {need} {} from {} available",
                side.table(),
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        let (v, rest) = pool.split_at(sizes.validation);
        let t = &rest[..sizes.test];
        let (vs, ts) = match side {
            Side::Top => (&mut validation.tops, &mut test.tops),
            Side::Bottom => (&mut validation.bottoms, &mut test.bottoms),
        };
        vs.extend(v.iter().cloned());
        ts.extend(t.iter().cloned());
    }
    let train = records
        .iter()
        .filter(|r| !validation.touches(r) && !test.touches(r))
        .cloned()
        .collect();
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// Positive partners of every item on the query side of `direction`.
pub fn positives_by_query(records: &[OutfitRecord], direction: Direction) -> BTreeMap<String, BTreeSet<String>> {
    let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in records {
        let (q, c) = match direction {
            Direction::TopToBottom => (&r.top, &r.bottom),
            Direction::BottomToTop => (&r.bottom, &r.top),
        };
        map.entry(q.clone()).or_default().insert(c.clone());
    }
    map
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub query: String,
    pub direction: Direction,
    pub positives: Vec<String>,
    pub candidates: Vec<String>,
}

/// Frozen per-query candidate lists for ranking evaluation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidatePool {
    pub entries: Vec<CandidateEntry>,
}

impl CandidatePool {
    pub fn for_direction(&self, direction: Direction) -> impl Iterator<Item = &CandidateEntry> {
        self.entries.iter().filter(move |e| e.direction == direction)
    }

    pub fn find(&self, query: &str, direction: Direction) -> Option<&CandidateEntry> {
        self.entries
            .iter()
            .find(|e| e.query == query && e.direction == direction)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| NorError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(CandidatePool { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::util::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NorError::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    pub fn file_name(split: SplitName) -> String {
        format!("candidates_{}.jsonl", split.as_str())
    }
}

/// For each query: its positives plus `k` negatives drawn uniformly without
/// replacement from `pool` minus the positives.
pub fn build_candidates(
    queries: &[String],
    direction: Direction,
    pool: &[String],
    positives: &BTreeMap<String, BTreeSet<String>>,
    seed: u64,
    k: usize,
) -> Result<CandidatePool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sorted_pool: Vec<&String> = pool.iter().collect();
    sorted_pool.sort();
    sorted_pool.dedup();
    let mut entries = Vec::with_capacity(queries.len());
    for q in queries {
        let pos = positives.get(q).ok_or_else(|| {
            NorError::InvalidArgument(format!("query `{q}` has no positive items"))
        })?;
        let negatives: Vec<&String> = sorted_pool
            .iter()
            .copied()
            .filter(|c| !pos.contains(*c))
            .collect();
        if negatives.len() < k {
            return Err(NorError::InvalidArgument(format!(
                "query `{q}` has only {} negative candidates, {k} requested",
                negatives.len()
            )));
        }
        let sampled: Vec<String> = negatives
            .choose_multiple(&mut rng, k)
            .map(|s| (*s).clone())
            .collect();
        let positives: Vec<String> = pos.iter().cloned().collect();
        let candidates = positives.iter().cloned().chain(sampled).collect();
        entries.push(CandidateEntry {
            query: q.clone(),
            direction,
            positives,
            candidates,
        });
    }
    Ok(CandidatePool { entries })
}
