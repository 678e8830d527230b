//! Evaluation over frozen candidate pools: ranking in both directions and
//! comment generation for the outfits around the query items.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{
    build_candidates, positives_by_query, tokenize, CandidatePool, Catalog, Direction, HeldOut, ImageStore,
    OutfitRecord, Side,
};
use crate::encoder::FeatureMap;
use crate::error::{NorError, Result};
use crate::matcher::RankedList;
use crate::metrics::{generation_report, ranking_report, GenerationReport, QueryResult, RankingReport, TextPair};
use crate::model::{GeneratedComment, NorModel};

/// Where evaluation queries come from.
#[derive(Clone, Copy, Debug)]
pub enum PoolQueries<'a> {
    /// Held-out items of a split.
    HeldOut(&'a HeldOut),
    /// Every item appearing in these outfits.
    Records(&'a [OutfitRecord]),
}

/// Frozen candidates for each query on `direction`'s query side: every known
/// positive plus `k` sampled negatives from the whole catalog.
pub fn candidate_pool(
    all_records: &[OutfitRecord],
    catalog: &Catalog,
    queries: PoolQueries<'_>,
    direction: Direction,
    seed: u64,
    k: usize,
) -> Result<CandidatePool> {
    let side = direction.query_side();
    let query_ids: Vec<String> = match queries {
        PoolQueries::HeldOut(h) => h.side(side).iter().cloned().collect(),
        PoolQueries::Records(rs) => rs
            .iter()
            .map(|r| if side == Side::Top { &r.top } else { &r.bottom })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .cloned()
            .collect(),
    };
    let positives = positives_by_query(all_records, direction);
    let pool: Vec<String> = catalog.side(direction.candidate_side()).keys().cloned().collect();
    let stream = match direction {
        Direction::TopToBottom => 0,
        Direction::BottomToTop => 1,
    };
    build_candidates(&query_ids, direction, &pool, &positives, seed.wrapping_mul(2).wrapping_add(stream), k)
}

/// Pools for both directions in one file's worth of entries.
pub fn candidate_pools(
    all_records: &[OutfitRecord],
    catalog: &Catalog,
    queries: PoolQueries<'_>,
    seed: u64,
    k: usize,
) -> Result<CandidatePool> {
    let mut pool = candidate_pool(all_records, catalog, queries, Direction::TopToBottom, seed, k)?;
    let other = candidate_pool(all_records, catalog, queries, Direction::BottomToTop, seed, k)?;
    pool.entries.extend(other.entries);
    Ok(pool)
}

fn feature_table(
    model: &NorModel,
    images: &ImageStore,
    items: BTreeSet<(Side, String)>,
) -> Result<HashMap<(Side, String), FeatureMap>> {
    let items: Vec<(Side, String)> = items.into_iter().collect();
    let feats = items
        .par_iter()
        .map(|(side, id)| model.features(images.get(*side, id)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(items.into_iter().zip(feats).collect())
}

/// Rank every query of `pool` on `direction` and summarize.
pub fn rank_pool(
    model: &NorModel,
    images: &ImageStore,
    pool: &CandidatePool,
    direction: Direction,
) -> Result<(RankingReport, Vec<RankedList>)> {
    let entries: Vec<_> = pool.for_direction(direction).collect();
    if entries.is_empty() {
        return Err(NorError::InvalidArgument(format!(
            "candidate pool has no {} queries",
            direction.as_str()
        )));
    }
    let qside = direction.query_side();
    let mut needed = BTreeSet::new();
    for e in &entries {
        needed.insert((qside, e.query.clone()));
        needed.extend(e.candidates.iter().map(|c| (qside.other(), c.clone())));
    }
    let table = feature_table(model, images, needed)?;
    let lookup = |side: Side, id: &str| {
        table.get(&(side, id.to_owned())).cloned().ok_or_else(|| NorError::UnknownId {
            table: side.table(),
            id: id.to_owned(),
        })
    };
    let ranked = entries
        .par_iter()
        .map(|e| model.rank(&e.query, direction, &e.candidates, lookup))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<QueryResult> = ranked
        .iter()
        .zip(&entries)
        .map(|(r, e)| QueryResult::from_ranking(r, &e.positives.iter().cloned().collect()))
        .collect();
    Ok((ranking_report(&results)?, ranked))
}

/// Outfits that involve a query item of `pool` and have comments.
pub fn pool_outfits<'a>(records: &'a [OutfitRecord], pool: &CandidatePool) -> Vec<&'a OutfitRecord> {
    let tops: BTreeSet<&str> = pool
        .for_direction(Direction::TopToBottom)
        .map(|e| e.query.as_str())
        .collect();
    let bottoms: BTreeSet<&str> = pool
        .for_direction(Direction::BottomToTop)
        .map(|e| e.query.as_str())
        .collect();
    records
        .iter()
        .filter(|r| !r.comments.is_empty() && (tops.contains(r.top.as_str()) || bottoms.contains(r.bottom.as_str())))
        .collect()
}

/// Generate a comment for each outfit and score it against its references.
pub fn generate_for(
    model: &NorModel,
    images: &ImageStore,
    outfits: &[&OutfitRecord],
    beam: usize,
    max_len: usize,
) -> Result<(GenerationReport, Vec<GeneratedComment>)> {
    let mut needed = BTreeSet::new();
    for r in outfits {
        needed.insert((Side::Top, r.top.clone()));
        needed.insert((Side::Bottom, r.bottom.clone()));
    }
    let table = feature_table(model, images, needed)?;
    let generated = outfits
        .par_iter()
        .map(|r| {
            model.generate(
                &table[&(Side::Top, r.top.clone())],
                &table[&(Side::Bottom, r.bottom.clone())],
                &r.top,
                &r.bottom,
                beam,
                max_len,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<TextPair> = generated
        .iter()
        .zip(outfits)
        .map(|(g, r)| TextPair {
            candidate: tokenize(&g.comment),
            references: r.comments.iter().map(|c| tokenize(c)).collect(),
        })
        .collect();
    Ok((generation_report(&pairs)?, generated))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SplitReport {
    pub split: String,
    /// Query a top, rank bottoms.
    pub bottom_item: RankingReport,
    /// Query a bottom, rank tops.
    pub top_item: RankingReport,
    /// Absent when no outfit around the queries has comments.
    pub generation: Option<GenerationReport>,
}

pub fn evaluate_split(
    model: &NorModel,
    images: &ImageStore,
    records: &[OutfitRecord],
    pool: &CandidatePool,
    split: &str,
    beam: usize,
    max_len: usize,
) -> Result<SplitReport> {
    let (bottom_item, _) = rank_pool(model, images, pool, Direction::TopToBottom)?;
    let (top_item, _) = rank_pool(model, images, pool, Direction::BottomToTop)?;
    let outfits = pool_outfits(records, pool);
    let generation = if outfits.is_empty() {
        None
    } else {
        Some(generate_for(model, images, &outfits, beam, max_len)?.0)
    };
    Ok(SplitReport {
        split: split.to_owned(),
        bottom_item,
        top_item,
        generation,
    })
}
