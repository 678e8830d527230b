//! Dataset ingestion, tokenization, splits and frozen candidate pools.

mod dataset;
pub mod images;
mod split;
pub mod synthetic;
mod vocab;

use serde::{Deserialize, Serialize};

pub use dataset::{
    load_dataset, load_dataset_with, merge_records, Catalog, Dataset, LoadOptions, OutfitRecord,
    OUTFITS_FILE,
};
pub use images::{load_image, ImageStore};
pub use split::{
    build_candidates, positives_by_query, split_dataset, CandidateEntry, CandidatePool, HeldOut,
    Split, SplitName, SplitSizes,
};
pub use vocab::{tokenize, Vocabulary, BOS, EOS, PAD, UNK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Top,
    Bottom,
}

impl Side {
    pub fn table(self) -> &'static str {
        match self {
            Side::Top => "tops",
            Side::Bottom => "bottoms",
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Top => Side::Bottom,
            Side::Bottom => Side::Top,
        }
    }
}

/// Which side is the query and which side is ranked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Query a top, rank bottoms ("bottom item" recommendation).
    TopToBottom,
    /// Query a bottom, rank tops ("top item" recommendation).
    BottomToTop,
}

impl Direction {
    pub fn query_side(self) -> Side {
        match self {
            Direction::TopToBottom => Side::Top,
            Direction::BottomToTop => Side::Bottom,
        }
    }

    pub fn candidate_side(self) -> Side {
        self.query_side().other()
    }

    /// `(top, bottom)` for a query item and one of its candidates.
    pub fn pair<'a>(self, query: &'a str, candidate: &'a str) -> (&'a str, &'a str) {
        match self {
            Direction::TopToBottom => (query, candidate),
            Direction::BottomToTop => (candidate, query),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TopToBottom => "top_to_bottom",
            Direction::BottomToTop => "bottom_to_top",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = crate::NorError;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "top_to_bottom" | "bottoms" => Ok(Direction::TopToBottom),
            "bottom_to_top" | "tops" => Ok(Direction::BottomToTop),
            other => Err(crate::NorError::InvalidArgument(format!(
                "unknown direction `{other}` (expected top_to_bottom or bottom_to_top)"
            ))),
        }
    }
}
